//! Planar geometry for the anchor/agent/scatterer setup.
//!
//! Positions are in meters, delays in seconds, angles in radians. All angles
//! returned from this module are wrapped to `(-π, π]` and measured
//! counter-clockwise from a frame heading.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("direction undefined: point ({x}, {y}) coincides with the frame origin")]
    CoincidentPoints { x: f64, y: f64 },
    #[error("invalid anchor circle: radius {radius} m, {count} anchors")]
    InvalidCircle { radius: f64, count: usize },
    #[error("anchor set needs at least one anchor and matching angle list ({positions} positions, {aoas} angles)")]
    InvalidAnchorSet { positions: usize, aoas: usize },
    #[error("non-finite coordinate ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
}

/// A point (or displacement) in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at angle `theta` scaled by `radius`.
    pub fn polar(radius: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(radius * c, radius * s)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (*self - other).norm()
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    PI - (PI - theta).rem_euclid(TAU)
}

/// Body-fixed reference frame at the agent: `heading` is the direction of zero AOA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub origin: Point2,
    pub heading: f64,
}

impl FrameSpec {
    pub fn new(origin: Point2, heading: f64) -> Self {
        Self {
            origin,
            heading: wrap_angle(heading),
        }
    }

    /// Maps a displacement expressed in frame coordinates (x along the heading,
    /// y 90° counter-clockwise from it) into world coordinates.
    pub fn to_world(&self, local: Point2) -> Point2 {
        self.origin + local.rotated(self.heading)
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::new(Point2::ORIGIN, 0.0)
    }
}

/// Ordered anchor positions with their angles of arrival in the agent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    positions: Vec<Point2>,
    aoas: Vec<f64>,
}

impl AnchorSet {
    pub fn new(positions: Vec<Point2>, aoas: Vec<f64>) -> Result<Self, GeometryError> {
        if positions.is_empty() || positions.len() != aoas.len() {
            return Err(GeometryError::InvalidAnchorSet {
                positions: positions.len(),
                aoas: aoas.len(),
            });
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { x: p.x, y: p.y });
        }
        let aoas = aoas.into_iter().map(wrap_angle).collect();
        Ok(Self { positions, aoas })
    }

    /// Builds the set from positions, computing each AOA in `frame`.
    pub fn from_positions(frame: &FrameSpec, positions: Vec<Point2>) -> Result<Self, GeometryError> {
        let aoas = positions
            .iter()
            .map(|&a| aoa(frame, a))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(positions, aoas)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn aoas(&self) -> &[f64] {
        &self.aoas
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point2, f64)> + '_ {
        self.positions.iter().copied().zip(self.aoas.iter().copied())
    }
}

/// LOS propagation delay `‖p − a‖ / c`.
pub fn los_delay(p: Point2, a: Point2) -> f64 {
    p.distance(a) / SPEED_OF_LIGHT
}

/// Two-hop delay anchor → scatterer → agent, `(‖q − a‖ + ‖p − q‖) / c`.
pub fn scatter_delay(a: Point2, q: Point2, p: Point2) -> f64 {
    (q.distance(a) + p.distance(q)) / SPEED_OF_LIGHT
}

/// Angle of arrival of anchor `a` seen from the frame origin, counter-clockwise
/// from the heading, in `(-π, π]`.
pub fn aoa(frame: &FrameSpec, a: Point2) -> Result<f64, GeometryError> {
    let d = a - frame.origin;
    if d.x == 0.0 && d.y == 0.0 {
        return Err(GeometryError::CoincidentPoints { x: a.x, y: a.y });
    }
    Ok(wrap_angle(d.angle() - frame.heading))
}

/// `count` anchors evenly spaced counter-clockwise on a circle around the
/// agent, the first one in the heading direction.
pub fn synthetic_circle_anchors(
    frame: &FrameSpec,
    radius: f64,
    count: usize,
) -> Result<AnchorSet, GeometryError> {
    if !(radius > 0.0 && radius.is_finite()) || count == 0 {
        return Err(GeometryError::InvalidCircle { radius, count });
    }
    let positions = (0..count)
        .map(|m| {
            let theta = frame.heading + TAU * m as f64 / count as f64;
            frame.origin + Point2::polar(radius, theta)
        })
        .collect();
    AnchorSet::from_positions(frame, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn los_delay_examples() {
        assert_eq!(los_delay(Point2::ORIGIN, Point2::ORIGIN), 0.0);
        let d = los_delay(Point2::ORIGIN, Point2::new(3.0, 0.0));
        assert_relative_eq!(d, 3.0 / SPEED_OF_LIGHT, max_relative = 1e-15);
        assert_relative_eq!(d, 1.00069e-8, max_relative = 1e-5);
        assert_relative_eq!(
            los_delay(Point2::new(1.0, 1.0), Point2::new(4.0, 5.0)),
            5.0 / SPEED_OF_LIGHT,
            max_relative = 1e-15
        );
    }

    #[test]
    fn scatter_delay_examples() {
        let p = Point2::new(0.7, -1.3);
        let a = Point2::new(2.0, 4.0);
        assert_eq!(scatter_delay(a, p, p), los_delay(p, a));
        assert_relative_eq!(
            scatter_delay(Point2::ORIGIN, Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)),
            2.0 / SPEED_OF_LIGHT,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            scatter_delay(Point2::ORIGIN, Point2::new(0.0, 1.0), Point2::new(2.0, 0.0)),
            (1.0 + 5f64.sqrt()) / SPEED_OF_LIGHT,
            max_relative = 1e-15
        );
    }

    #[test]
    fn aoa_examples() {
        let f = FrameSpec::default();
        assert_eq!(aoa(&f, Point2::new(2.0, 0.0)).unwrap(), 0.0);
        assert_relative_eq!(aoa(&f, Point2::new(0.0, 2.0)).unwrap(), FRAC_PI_2);
        let north = FrameSpec::new(Point2::ORIGIN, FRAC_PI_2);
        assert_eq!(aoa(&north, Point2::new(0.0, 2.0)).unwrap(), 0.0);
        assert_eq!(aoa(&f, Point2::new(-1.0, 0.0)).unwrap(), PI);
        assert!(matches!(
            aoa(&f, Point2::ORIGIN),
            Err(GeometryError::CoincidentPoints { .. })
        ));
    }

    #[test]
    fn wrap_is_half_open_at_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(-5.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-14);
    }

    #[test]
    fn four_anchor_circle() {
        let set = synthetic_circle_anchors(&FrameSpec::default(), 1.0, 4).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, (x, y)) in set.positions().iter().zip(expected) {
            assert!((p.x - x).abs() < 1e-15 && (p.y - y).abs() < 1e-15, "{p:?}");
        }
        let expected_aoa = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];
        for (a, e) in set.aoas().iter().zip(expected_aoa) {
            assert_relative_eq!(*a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_anchor_sits_on_heading() {
        let frame = FrameSpec::new(Point2::new(1.0, 2.0), 0.4);
        let set = synthetic_circle_anchors(&frame, 3.0, 1).unwrap();
        assert_eq!(set.aoas(), &[0.0]);
        let d = set.positions()[0] - frame.origin;
        assert_relative_eq!(d.angle(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn two_hundred_anchor_spacing() {
        let frame = FrameSpec::new(Point2::new(-0.3, 0.8), 1.1);
        let set = synthetic_circle_anchors(&frame, 2.5, 200).unwrap();
        let mut sorted = set.aoas().to_vec();
        sorted.sort_by(f64::total_cmp);
        for w in sorted.windows(2) {
            assert_relative_eq!(w[1] - w[0], TAU / 200.0, epsilon = 1e-12);
        }
        // the wrap-around gap closes the circle
        assert_relative_eq!(sorted[0] + TAU - sorted[199], TAU / 200.0, epsilon = 1e-12);
        for p in set.positions() {
            assert!((p.distance(frame.origin) - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_circle() {
        let f = FrameSpec::default();
        assert!(synthetic_circle_anchors(&f, 0.0, 4).is_err());
        assert!(synthetic_circle_anchors(&f, 1.0, 0).is_err());
        assert!(AnchorSet::new(vec![Point2::ORIGIN], vec![]).is_err());
    }

    fn coord() -> impl Strategy<Value = f64> {
        -10.0..10.0f64
    }

    proptest! {
        #[test]
        fn scatter_never_beats_los(ax in coord(), ay in coord(), qx in coord(), qy in coord(),
                                   px in coord(), py in coord()) {
            let (a, q, p) = (Point2::new(ax, ay), Point2::new(qx, qy), Point2::new(px, py));
            prop_assert!(scatter_delay(a, q, p) >= los_delay(p, a) * (1.0 - 1e-15));
        }

        #[test]
        fn scatter_equals_los_on_segment(ax in coord(), ay in coord(), px in coord(), py in coord(),
                                         t in 0.0..1.0f64) {
            let (a, p) = (Point2::new(ax, ay), Point2::new(px, py));
            let q = a + (p - a) * t;
            let diff = (scatter_delay(a, q, p) - los_delay(p, a)).abs();
            prop_assert!(diff <= 1e-13 * (1.0 + los_delay(p, a) * SPEED_OF_LIGHT) / SPEED_OF_LIGHT);
        }

        #[test]
        fn aoa_rotation_equivariant(ox in coord(), oy in coord(), r in 0.1..5.0f64,
                                    theta in -4.0..4.0f64, heading in -4.0..4.0f64, delta in -7.0..7.0f64) {
            let origin = Point2::new(ox, oy);
            let a = origin + Point2::polar(r, theta);
            let base = aoa(&FrameSpec::new(origin, heading), a).unwrap();
            let a_rot = origin + Point2::polar(r, theta + delta);
            let rotated = aoa(&FrameSpec::new(origin, heading + delta), a_rot).unwrap();
            let d = wrap_angle(base - rotated).abs();
            prop_assert!(d < 1e-9, "{base} vs {rotated}");
        }

        #[test]
        fn circle_radius_holds(ox in coord(), oy in coord(), r in 0.01..20.0f64, m in 1usize..300,
                               heading in -4.0..4.0f64) {
            let frame = FrameSpec::new(Point2::new(ox, oy), heading);
            let set = synthetic_circle_anchors(&frame, r, m).unwrap();
            prop_assert_eq!(set.len(), m);
            for p in set.positions() {
                prop_assert!((p.distance(frame.origin) - r).abs() < 1e-9);
            }
            for a in set.aoas() {
                prop_assert!(*a > -PI && *a <= PI);
            }
        }
    }
}
