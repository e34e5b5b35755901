//! Generative extended-antenna model.
//!
//! The agent antenna and the body next to it are described jointly by a mean
//! position, a shape covariance and a marked Poisson point process of
//! scattering points. Points are drawn from a Gaussian intensity; marks get a
//! direction-dependent magnitude and a random phase per snapshot. A separate
//! gain pattern models body shadowing of the LOS path.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, FrameSpec, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape estimate needs at least one point")]
    EmptyPointSet,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Symmetric 2×2 matrix stored by its three distinct entries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Self::new(xx, 0.0, yy)
    }

    /// Covariance with standard deviations `(sx, sy)` along axes rotated by `theta`.
    pub fn from_axes(sx: f64, sy: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let m = rot * Matrix2::new(sx * sx, 0.0, 0.0, sy * sy) * rot.transpose();
        Self::from_matrix(&m)
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Symmetrized copy of `m`.
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }

    /// Eigenvalues (ascending) and the matching unit eigenvectors as columns.
    pub fn eigen(&self) -> (Vector2<f64>, Matrix2<f64>) {
        let eig = SymmetricEigen::new(self.to_matrix());
        let (mut vals, mut vecs) = (eig.eigenvalues, eig.eigenvectors);
        if vals[0] > vals[1] {
            vals.swap_rows(0, 1);
            vecs.swap_columns(0, 1);
        }
        (vals, vecs)
    }

    /// `R Σ Rᵀ` for a counter-clockwise rotation by `theta`.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        Self::from_matrix(&(rot * self.to_matrix() * rot.transpose()))
    }
}

/// Where a scatterer is most visible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "angle", rename_all = "snake_case")]
pub enum PeakDirection {
    /// Direction from the model mean to the scatterer.
    #[default]
    FromMean,
    /// The same AOA for every scatterer.
    Fixed(f64),
}

/// Generative law of scattering-coefficient magnitudes and phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkSpec {
    pub base_magnitude: f64,
    /// Standard deviation of the Gaussian magnitude falloff over AOA, radians.
    pub angular_width: f64,
    pub random_phase: bool,
    pub peak: PeakDirection,
}

impl Default for MarkSpec {
    fn default() -> Self {
        Self {
            base_magnitude: 0.3,
            angular_width: 1.0,
            random_phase: true,
            peak: PeakDirection::FromMean,
        }
    }
}

impl MarkSpec {
    pub fn peaks(&self, frame: &FrameSpec, mu: Point2, points: &[Point2]) -> Vec<f64> {
        match self.peak {
            PeakDirection::FromMean => peak_directions(frame, mu, points),
            PeakDirection::Fixed(angle) => vec![wrap_angle(angle); points.len()],
        }
    }
}

/// LOS gain pattern with a raised-cosine shadowing notch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSpec {
    pub max_gain: f64,
    pub notch_direction: f64,
    pub notch_depth_db: f64,
    /// Full angular support of the notch.
    pub notch_width: f64,
}

impl Default for GainSpec {
    fn default() -> Self {
        Self {
            max_gain: 1.0,
            notch_direction: PI,
            notch_depth_db: 0.0,
            notch_width: PI / 2.0,
        }
    }
}

impl GainSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.max_gain > 0.0 && self.max_gain.is_finite()) {
            return Err(ModelError::Invalid(format!("max_gain must be positive, got {}", self.max_gain)));
        }
        if !(self.notch_depth_db >= 0.0) {
            return Err(ModelError::Invalid(format!(
                "notch_depth_db must be non-negative, got {}",
                self.notch_depth_db
            )));
        }
        if !(self.notch_width > 0.0) {
            return Err(ModelError::Invalid(format!("notch_width must be positive, got {}", self.notch_width)));
        }
        Ok(())
    }
}

/// Ground-truth extended antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedAntennaModel {
    pub mu: Point2,
    pub sigma: SymMat2,
    /// Mean number of scattering points.
    pub mean_count: f64,
    pub marks: MarkSpec,
    pub los_gain: GainSpec,
}

impl ExtendedAntennaModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.mu.is_finite() {
            return Err(ModelError::Invalid("mu must be finite".into()));
        }
        let (vals, _) = self.sigma.eigen();
        let scale = self.sigma.frobenius().max(f64::MIN_POSITIVE);
        if !vals.iter().all(|v| v.is_finite()) || vals[0] < -1e-12 * scale {
            return Err(ModelError::Invalid(format!("sigma is not positive semi-definite: {:?}", self.sigma)));
        }
        if !(self.mean_count >= 0.0 && self.mean_count.is_finite()) {
            return Err(ModelError::Invalid(format!("mean_count must be non-negative, got {}", self.mean_count)));
        }
        if !(self.marks.base_magnitude >= 0.0) || !(self.marks.angular_width > 0.0) {
            return Err(ModelError::Invalid(format!("invalid mark spec {:?}", self.marks)));
        }
        self.los_gain.validate()
    }
}

/// A scatterer placed deliberately instead of drawn from the point process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedScatterer {
    pub position: Point2,
    pub base_magnitude: f64,
}

/// Dense row-major complex matrix; rows are snapshots, columns scatterers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<Complex64>]) -> Result<Self, ModelError> {
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(ModelError::DimensionMismatch(format!(
                    "column {j} has {} entries, expected {rows}",
                    col.len()
                )));
            }
            for (i, v) in col.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Appends a column; an empty matrix adopts the column's length as row count.
    pub fn push_column(&mut self, col: &[Complex64]) {
        if self.cols == 0 {
            self.rows = col.len();
        }
        assert_eq!(col.len(), self.rows, "column length mismatch");
        let mut data = Vec::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.push(col[i]);
        }
        self.data = data;
        self.cols += 1;
    }
}

/// Scattering points with their per-snapshot marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererSet {
    pub points: Vec<Point2>,
    pub marks: ComplexMatrix,
}

impl ScattererSet {
    pub fn new(points: Vec<Point2>, marks: ComplexMatrix) -> Result<Self, ModelError> {
        if marks.cols() != points.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} points but {} mark columns",
                points.len(),
                marks.cols()
            )));
        }
        Ok(Self { points, marks })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Scatterers paired with their marks for snapshot `m`.
    pub fn snapshot(&self, m: usize) -> Vec<(Point2, Complex64)> {
        self.points.iter().copied().zip(self.marks.row(m).iter().copied()).collect()
    }
}

/// Draws the scattering points: a Poisson count, then i.i.d. Gaussian positions.
pub fn sample_mppp(model: &ExtendedAntennaModel, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if model.mean_count > 0.0 {
        Poisson::new(model.mean_count)
            .expect("positive finite mean")
            .sample(&mut rng) as usize
    } else {
        0
    };
    let (vals, vecs) = model.sigma.eigen();
    // zero eigenvalues collapse the draw onto the remaining subspace
    let root = vecs * Matrix2::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    (0..count)
        .map(|_| {
            let z = Vector2::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let d = root * z;
            Point2::new(model.mu.x + d.x, model.mu.y + d.y)
        })
        .collect()
}

/// Direction of maximal visibility for each point: the AOA, in `frame`, of
/// the direction from the model mean to the point. Points at the mean get 0.
pub fn peak_directions(frame: &FrameSpec, mu: Point2, points: &[Point2]) -> Vec<f64> {
    points
        .iter()
        .map(|&q| {
            let d = q - mu;
            if d.x == 0.0 && d.y == 0.0 {
                0.0
            } else {
                wrap_angle(d.angle() - frame.heading)
            }
        })
        .collect()
}

/// Mark matrix (snapshots × scatterers) with a common base magnitude.
pub fn generate_marks(spec: &MarkSpec, peaks: &[f64], aoas: &[f64], seed: u64) -> ComplexMatrix {
    let bases = vec![spec.base_magnitude; peaks.len()];
    generate_marks_with_bases(spec, &bases, peaks, aoas, seed)
}

/// Like [`generate_marks`], with an individual base magnitude per scatterer.
pub fn generate_marks_with_bases(
    spec: &MarkSpec,
    bases: &[f64],
    peaks: &[f64],
    aoas: &[f64],
    seed: u64,
) -> ComplexMatrix {
    assert_eq!(bases.len(), peaks.len(), "one base magnitude per scatterer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marks = ComplexMatrix::zeros(aoas.len(), peaks.len());
    let two_w2 = 2.0 * spec.angular_width * spec.angular_width;
    for (m, &phi) in aoas.iter().enumerate() {
        for (j, (&peak, &base)) in peaks.iter().zip(bases).enumerate() {
            let d = wrap_angle(phi - peak);
            let magnitude = base * (-(d * d) / two_w2).exp();
            let phase = if spec.random_phase {
                rng.gen_range(0.0..TAU)
            } else {
                0.0
            };
            marks.set(m, j, Complex64::from_polar(magnitude, phase));
        }
    }
    marks
}

/// LOS amplitude for a snapshot arriving from AOA `phi`.
pub fn los_gain(spec: &GainSpec, phi: f64) -> Complex64 {
    let d = wrap_angle(phi - spec.notch_direction).abs();
    let half = 0.5 * spec.notch_width;
    let bump = if d < half {
        0.5 * (1.0 + (PI * d / half).cos())
    } else {
        0.0
    };
    Complex64::new(spec.max_gain * 10f64.powf(-spec.notch_depth_db * bump / 20.0), 0.0)
}

/// Sample mean and `1/J`-normalized scatter matrix of a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub mu: Point2,
    pub sigma: SymMat2,
}

impl ShapeEstimate {
    /// Closed polyline of the covariance ellipse `μ + scale · Σ^{1/2} u`, `u` on
    /// the unit circle; the first vertex is repeated at the end.
    pub fn ellipse(&self, scale: f64, segments: usize) -> Vec<Point2> {
        let (vals, vecs) = self.sigma.eigen();
        let root = vecs * Matrix2::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
        (0..=segments)
            .map(|i| {
                let t = TAU * (i % segments.max(1)) as f64 / segments.max(1) as f64;
                let d = root * Vector2::new(t.cos(), t.sin()) * scale;
                Point2::new(self.mu.x + d.x, self.mu.y + d.y)
            })
            .collect()
    }
}

pub fn shape_estimate(points: &[Point2]) -> Result<ShapeEstimate, ModelError> {
    if points.is_empty() {
        return Err(ModelError::EmptyPointSet);
    }
    let n = points.len() as f64;
    let mu = Point2::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let mut sigma = SymMat2::ZERO;
    for p in points {
        let d = *p - mu;
        sigma.xx += d.x * d.x;
        sigma.xy += d.x * d.y;
        sigma.yy += d.y * d.y;
    }
    sigma.xx /= n;
    sigma.xy /= n;
    sigma.yy /= n;
    Ok(ShapeEstimate { mu, sigma })
}
