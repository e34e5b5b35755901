//! Greedy maximum-likelihood calibration of scattering points.
//!
//! LOS amplitudes are fitted once per snapshot by least squares against the
//! known agent position. Scattering points are then added one at a time: the
//! grid node whose templates explain most residual energy across all
//! snapshots is accepted, its per-snapshot marks are fitted by least
//! squares, and its contribution is subtracted. Points already accepted are
//! never revisited. The loop ends when the best remaining candidate no longer
//! raises the joint log-likelihood by more than the stopping threshold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ea_model::ComplexMatrix;
use crate::geometry::{los_delay, scatter_delay, Point2};
use crate::waveform::{
    delayed_template, envelope_into, los_vector, PulseSpec, SignalVector, WaveformError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("template has zero energy")]
    ZeroTemplate,
    #[error("noise variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("candidate ({x}, {y}) has a path delay outside the observation window")]
    OutOfWindow { x: f64, y: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("snapshot set is empty")]
    NoSnapshots,
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One received snapshot with the anchor it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub signal: SignalVector,
    pub anchor: Point2,
    pub aoa: f64,
}

/// All snapshots of one static extended-antenna realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSet {
    pub snapshots: Vec<Snapshot>,
    /// Known agent position.
    pub agent: Point2,
    pub spec: PulseSpec,
}

impl SnapshotSet {
    pub fn new(snapshots: Vec<Snapshot>, agent: Point2, spec: PulseSpec) -> Result<Self, EstimatorError> {
        spec.validate()?;
        if snapshots.is_empty() {
            return Err(EstimatorError::NoSnapshots);
        }
        if let Some((m, s)) = snapshots
            .iter()
            .enumerate()
            .find(|(_, s)| s.signal.len() != spec.n_samples)
        {
            return Err(EstimatorError::DimensionMismatch(format!(
                "snapshot {m} has {} samples, expected {}",
                s.signal.len(),
                spec.n_samples
            )));
        }
        Ok(Self { snapshots, agent, spec })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn aoas(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.aoa).collect()
    }

    /// LOS templates `s(p_t)` for every anchor.
    pub fn los_templates(&self) -> Result<Vec<SignalVector>, EstimatorError> {
        self.snapshots
            .iter()
            .map(|s| los_vector(&self.spec, self.agent, s.anchor).map_err(Into::into))
            .collect()
    }

    /// Scatter templates `s(p_t, q)` for every anchor.
    pub fn scatter_templates(&self, q: Point2) -> Result<Vec<SignalVector>, EstimatorError> {
        self.snapshots
            .iter()
            .map(|s| {
                delayed_template(&self.spec, scatter_delay(s.anchor, q, self.agent)).map_err(|e| match e {
                    WaveformError::DelayOverflow { .. } => EstimatorError::OutOfWindow { x: q.x, y: q.y },
                    e => e.into(),
                })
            })
            .collect()
    }
}

/// Rectangular candidate grid `{x_min + i·step} × {y_min + k·step}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl GridSpec {
    /// Square window of side `width` centered on `center`.
    pub fn centered(center: Point2, width: f64, step: f64) -> Self {
        Self {
            x_min: center.x - 0.5 * width,
            x_max: center.x + 0.5 * width,
            y_min: center.y - 0.5 * width,
            y_max: center.y + 0.5 * width,
            step,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.step]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.step > 0.0) {
            return Err(EstimatorError::InvalidGrid(format!("step must be positive and finite: {self:?}")));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(EstimatorError::EmptyGrid);
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| lo + i as f64 * step).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.step)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.step)
    }

    /// Nodes ordered by ascending y, then ascending x.
    pub fn nodes(&self) -> Vec<Point2> {
        let xs = self.xs();
        self.ys()
            .into_iter()
            .flat_map(|y| xs.iter().map(move |&x| Point2::new(x, y)))
            .collect()
    }

    pub fn translated(&self, d: Point2) -> Self {
        Self {
            x_min: self.x_min + d.x,
            x_max: self.x_max + d.x,
            y_min: self.y_min + d.y,
            y_max: self.y_max + d.y,
            step: self.step,
        }
    }
}

/// Acceptance threshold for greedy additions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    /// A candidate is accepted when its residual-energy gain exceeds
    /// `gamma · σ_w²` per snapshot, summed over all snapshots.
    pub gamma: f64,
    pub max_scatterers: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            max_scatterers: 16,
        }
    }
}

impl StoppingRule {
    pub fn threshold(&self, snapshots: usize, noise_variance: f64) -> f64 {
        self.gamma * snapshots as f64 * noise_variance
    }
}

/// Output of [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub q_hat: Vec<Point2>,
    pub alpha_hat: Vec<Complex64>,
    /// Snapshots × scatterers.
    pub beta_hat: ComplexMatrix,
    /// Joint log-likelihood after initialization and after every accepted point.
    pub loglik_trace: Vec<f64>,
    /// Residual-energy gain of each accepted point.
    pub scores: Vec<f64>,
    pub noise_variance: f64,
    /// Grid nodes dropped because a path left the window or collapsed onto the LOS.
    pub skipped_candidates: usize,
    /// Log-likelihood after the optional joint mark refit.
    pub refined_loglik: Option<f64>,
}

impl CalibrationResult {
    pub fn n_scatterers(&self) -> usize {
        self.q_hat.len()
    }
}

fn ls_projection(r: &SignalVector, s: &SignalVector) -> Result<Complex64, EstimatorError> {
    if r.len() != s.len() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "signal has {} samples, template {}",
            r.len(),
            s.len()
        )));
    }
    let energy = s.norm_sqr();
    if energy == 0.0 {
        return Err(EstimatorError::ZeroTemplate);
    }
    Ok(s.inner(r) / energy)
}

/// Least-squares LOS amplitude `s_pᴴ r / s_pᴴ s_p`.
pub fn ls_amplitude(r: &SignalVector, s_p: &SignalVector) -> Result<Complex64, EstimatorError> {
    ls_projection(r, s_p)
}

/// Least-squares mark of one scatter template against the current residual.
pub fn ls_mark(residual: &SignalVector, s_pq: &SignalVector) -> Result<Complex64, EstimatorError> {
    ls_projection(residual, s_pq)
}

/// `r − α s_p − Σ_l β_l s_l`
pub fn residual(
    r: &SignalVector,
    s_p: &SignalVector,
    alpha: Complex64,
    scatter_templates: &[SignalVector],
    marks: &[Complex64],
) -> Result<SignalVector, EstimatorError> {
    if scatter_templates.len() != marks.len() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "{} templates but {} marks",
            scatter_templates.len(),
            marks.len()
        )));
    }
    let n = r.len();
    if s_p.len() != n || scatter_templates.iter().any(|t| t.len() != n) {
        return Err(EstimatorError::DimensionMismatch("template length differs from signal".into()));
    }
    let mut out = r.clone();
    out.add_scaled(-alpha, s_p);
    for (t, b) in scatter_templates.iter().zip(marks) {
        out.add_scaled(-b, t);
    }
    Ok(out)
}

/// Joint log-likelihood `−(1/σ_w²) Σ_m ‖r_m − α̂_m s(p_t) − S(p_t, Q̂) β̂_m‖²`,
/// additive constants dropped.
pub fn joint_loglik(
    snapshots: &SnapshotSet,
    alpha_hat: &[Complex64],
    q_hat: &[Point2],
    beta_hat: &ComplexMatrix,
    noise_variance: f64,
) -> Result<f64, EstimatorError> {
    if !(noise_variance > 0.0) {
        return Err(EstimatorError::NonPositiveVariance(noise_variance));
    }
    let m_count = snapshots.len();
    if alpha_hat.len() != m_count
        || beta_hat.cols() != q_hat.len()
        || (!q_hat.is_empty() && beta_hat.rows() != m_count)
    {
        return Err(EstimatorError::DimensionMismatch(format!(
            "{m_count} snapshots, {} amplitudes, {} points, marks {}×{}",
            alpha_hat.len(),
            q_hat.len(),
            beta_hat.rows(),
            beta_hat.cols()
        )));
    }
    let los = snapshots.los_templates()?;
    let scatter: Vec<Vec<SignalVector>> = q_hat
        .iter()
        .map(|&q| snapshots.scatter_templates(q))
        .collect::<Result<_, _>>()?;
    let mut total = 0.0;
    for (m, snap) in snapshots.snapshots.iter().enumerate() {
        let templates: Vec<SignalVector> = scatter.iter().map(|t| t[m].clone()).collect();
        let marks = if q_hat.is_empty() { &[][..] } else { beta_hat.row(m) };
        total += residual(&snap.signal, &los[m], alpha_hat[m], &templates, marks)?.norm_sqr();
    }
    Ok(-total / noise_variance)
}

/// Per-candidate delay bookkeeping against one snapshot set.
struct CandidateScorer<'a> {
    set: &'a SnapshotSet,
}

impl CandidateScorer<'_> {
    fn delays(&self, q: Point2) -> Option<Vec<f64>> {
        let window = self.set.spec.obs_window();
        self.set
            .snapshots
            .iter()
            .map(|s| {
                let d = scatter_delay(s.anchor, q, self.set.agent);
                (d >= 0.0 && d <= window).then_some(d)
            })
            .collect()
    }

    /// `Σ_m |s_mᴴ r_m|² / ‖s_m‖²`; the carrier rotation drops out of the modulus.
    fn score(&self, delays: &[f64], residuals: &[SignalVector], env: &mut [f64]) -> f64 {
        let spec = &self.set.spec;
        let mut total = 0.0;
        for (r, &delay) in residuals.iter().zip(delays) {
            envelope_into(spec, delay, env);
            let mut corr = Complex64::new(0.0, 0.0);
            let mut energy = 0.0;
            for (e, v) in env.iter().zip(r.iter()) {
                corr += v * *e;
                energy += e * e;
            }
            if energy > 0.0 {
                total += corr.norm_sqr() / energy;
            }
        }
        total
    }
}

/// Residual-energy gain from adding a scatterer at `q` with per-snapshot
/// least-squares marks. Multiplied by `1/σ_w²` it is the exact joint
/// log-likelihood increase.
pub fn score_candidate(
    q: Point2,
    residuals: &[SignalVector],
    snapshots: &SnapshotSet,
) -> Result<f64, EstimatorError> {
    if residuals.len() != snapshots.len() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "{} residuals for {} snapshots",
            residuals.len(),
            snapshots.len()
        )));
    }
    let scorer = CandidateScorer { set: snapshots };
    let delays = scorer.delays(q).ok_or(EstimatorError::OutOfWindow { x: q.x, y: q.y })?;
    let mut env = vec![0.0; snapshots.spec.n_samples];
    Ok(scorer.score(&delays, residuals, &mut env))
}

/// True when the scattered path is within a quarter sample of the LOS for
/// more than 90 % of the anchors; such candidates are collinear with the LOS
/// template.
fn collapses_onto_los(set: &SnapshotSet, delays: &[f64]) -> bool {
    let quarter = 0.25 * set.spec.sample_period();
    let close = set
        .snapshots
        .iter()
        .zip(delays)
        .filter(|(s, &d)| (d - los_delay(set.agent, s.anchor)).abs() < quarter)
        .count();
    close as f64 > 0.9 * set.len() as f64
}

fn loglik_of(residuals: &[SignalVector], noise_variance: f64) -> f64 {
    -residuals.iter().map(|r| r.norm_sqr()).sum::<f64>() / noise_variance
}

/// Greedy iterative calibration.
pub fn calibrate(
    snapshots: &SnapshotSet,
    grid: &GridSpec,
    stop: &StoppingRule,
    noise_variance: f64,
) -> Result<CalibrationResult, EstimatorError> {
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(EstimatorError::NonPositiveVariance(noise_variance));
    }
    grid.validate()?;
    let nodes = grid.nodes();
    if nodes.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }

    let los = snapshots.los_templates()?;
    let alpha_hat = snapshots
        .snapshots
        .iter()
        .zip(&los)
        .map(|(s, t)| ls_amplitude(&s.signal, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut residuals: Vec<SignalVector> = snapshots
        .snapshots
        .iter()
        .zip(&los)
        .zip(&alpha_hat)
        .map(|((s, t), &a)| residual(&s.signal, t, a, &[], &[]))
        .collect::<Result<_, _>>()?;

    let scorer = CandidateScorer { set: snapshots };
    let candidates: Vec<(Point2, Vec<f64>)> = nodes
        .iter()
        .filter_map(|&q| scorer.delays(q).map(|d| (q, d)))
        .filter(|(_, d)| !collapses_onto_los(snapshots, d))
        .collect();
    let skipped = nodes.len() - candidates.len();

    let threshold = stop.threshold(snapshots.len(), noise_variance);
    let mut q_hat = Vec::new();
    let mut beta_hat = ComplexMatrix::zeros(snapshots.len(), 0);
    let mut scores = Vec::new();
    let mut loglik_trace = vec![loglik_of(&residuals, noise_variance)];
    let n = snapshots.spec.n_samples;

    while q_hat.len() < stop.max_scatterers && !candidates.is_empty() {
        let candidate_scores: Vec<f64> = candidates
            .par_iter()
            .map_init(
                || vec![0.0; n],
                |env, (_, delays)| scorer.score(delays, &residuals, env),
            )
            .collect();
        // candidates are in (y, x) order, so the first maximum wins ties
        let mut best = 0;
        for (i, &s) in candidate_scores.iter().enumerate() {
            if s > candidate_scores[best] {
                best = i;
            }
        }
        let best_score = candidate_scores[best];
        if !best_score.is_finite() {
            return Err(EstimatorError::Numerical(format!("candidate score is {best_score}")));
        }
        if !(best_score > threshold && best_score > 0.0) {
            break;
        }
        let (q, delays) = &candidates[best];
        let mut marks = Vec::with_capacity(snapshots.len());
        for (r, &delay) in residuals.iter_mut().zip(delays) {
            let template = delayed_template(&snapshots.spec, delay)?;
            let b = ls_mark(r, &template)?;
            r.add_scaled(-b, &template);
            marks.push(b);
        }
        beta_hat.push_column(&marks);
        q_hat.push(*q);
        scores.push(best_score);
        loglik_trace.push(loglik_of(&residuals, noise_variance));
    }

    Ok(CalibrationResult {
        q_hat,
        alpha_hat,
        beta_hat,
        loglik_trace,
        scores,
        noise_variance,
        skipped_candidates: skipped,
        refined_loglik: None,
    })
}

/// Joint least-squares refit of all marks for the fixed point set `Q̂`,
/// keeping the LOS amplitudes. Opt-in; the greedy result is left untouched
/// except for `beta_hat` and `refined_loglik`.
pub fn refine_marks(
    snapshots: &SnapshotSet,
    result: &CalibrationResult,
) -> Result<CalibrationResult, EstimatorError> {
    let mut out = result.clone();
    if result.q_hat.is_empty() {
        out.refined_loglik = result.loglik_trace.last().copied();
        return Ok(out);
    }
    let los = snapshots.los_templates()?;
    let scatter: Vec<Vec<SignalVector>> = result
        .q_hat
        .iter()
        .map(|&q| snapshots.scatter_templates(q))
        .collect::<Result<_, _>>()?;
    let n = snapshots.spec.n_samples;
    let j_count = result.q_hat.len();
    let mut beta = ComplexMatrix::zeros(snapshots.len(), j_count);
    for (m, snap) in snapshots.snapshots.iter().enumerate() {
        let target = residual(&snap.signal, &los[m], result.alpha_hat[m], &[], &[])?;
        let a = DMatrix::from_fn(n, j_count, |k, j| scatter[j][m][k]);
        let b = DVector::from_column_slice(target.as_slice());
        let x = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| EstimatorError::Numerical(e.to_string()))?;
        for j in 0..j_count {
            beta.set(m, j, x[j]);
        }
    }
    out.refined_loglik = Some(joint_loglik(
        snapshots,
        &result.alpha_hat,
        &result.q_hat,
        &beta,
        result.noise_variance,
    )?);
    out.beta_hat = beta;
    Ok(out)
}

/// Noise variance from the late part of the LOS-removed residuals.
///
/// Uses the last quarter of every snapshot, pools real and imaginary parts,
/// and converts their median absolute deviation to a per-sample complex
/// variance.
pub fn estimate_noise_variance(snapshots: &SnapshotSet) -> Result<f64, EstimatorError> {
    let los = snapshots.los_templates()?;
    let n = snapshots.spec.n_samples;
    let start = n - (n / 4).max(1);
    let mut parts = Vec::with_capacity(snapshots.len() * (n - start) * 2);
    for (snap, t) in snapshots.snapshots.iter().zip(&los) {
        let a = ls_amplitude(&snap.signal, t)?;
        let r = residual(&snap.signal, t, a, &[], &[])?;
        for v in &r.as_slice()[start..] {
            parts.push(v.re);
            parts.push(v.im);
        }
    }
    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    };
    let center = median(&mut parts);
    let mut dev: Vec<f64> = parts.iter().map(|v| (v - center).abs()).collect();
    let mad = median(&mut dev);
    // real and imaginary parts each carry σ²/2; 1.4826 turns a MAD into a standard deviation
    let sd = 1.482_602_218_505_602 * mad;
    Ok(2.0 * sd * sd)
}

/// `s(p_t, q)` restricted to one snapshot, convenient for tests and diagnostics.
pub fn scatter_template_for(
    snapshots: &SnapshotSet,
    m: usize,
    q: Point2,
) -> Result<SignalVector, EstimatorError> {
    let snap = &snapshots.snapshots[m];
    let delay = scatter_delay(snap.anchor, q, snapshots.agent);
    delayed_template(&snapshots.spec, delay).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{synthetic_circle_anchors, FrameSpec};
    use crate::waveform::{synthesize, NoiseSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_spec() -> PulseSpec {
        PulseSpec {
            n_samples: 256,
            ..PulseSpec::default()
        }
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> SignalVector {
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect::<Vec<_>>()
            .into()
    }

    /// Snapshot set with a planted LOS gain per snapshot and fixed scatterers.
    fn planted_set(
        m_count: usize,
        alpha: impl Fn(usize) -> Complex64,
        scatterers: &[(Point2, Complex64)],
        noise: NoiseSpec,
        agent: Point2,
    ) -> SnapshotSet {
        let spec = small_spec();
        let frame = FrameSpec::new(agent, 0.0);
        let anchors = synthetic_circle_anchors(&frame, 2.5, m_count).unwrap();
        let snaps = anchors
            .iter()
            .enumerate()
            .map(|(m, (a, phi))| Snapshot {
                signal: synthesize(&spec, agent, a, alpha(m), scatterers, &noise, m as u64).unwrap(),
                anchor: a,
                aoa: phi,
            })
            .collect();
        SnapshotSet::new(snaps, agent, spec).unwrap()
    }

    /// Minimizes `‖r − x s‖` over complex `x` by repeated grid refinement.
    fn brute_force_ls(r: &SignalVector, s: &SignalVector) -> Complex64 {
        let cost = |x: Complex64| {
            r.iter().zip(s.iter()).map(|(a, b)| (a - x * b).norm_sqr()).sum::<f64>()
        };
        let mut center = c(0.0, 0.0);
        let mut half = 2.0 * r.norm() / s.norm();
        for _ in 0..80 {
            let mut best = (f64::INFINITY, center);
            for i in -10..=10 {
                for k in -10..=10 {
                    let x = center + c(i as f64, k as f64) * (half / 10.0);
                    let v = cost(x);
                    if v < best.0 {
                        best = (v, x);
                    }
                }
            }
            center = best.1;
            half *= 0.3;
        }
        center
    }

    #[test]
    fn ls_amplitude_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_vector(&mut rng, 64);
        let alpha = Complex64::from_polar(2.0, std::f64::consts::FRAC_PI_4);
        let est = ls_amplitude(&s.scaled(alpha), &s).unwrap();
        assert!((est - alpha).norm() < 1e-14);

        let e0: SignalVector = vec![c(1.0, 0.0), c(0.0, 0.0)].into();
        let e1: SignalVector = vec![c(0.0, 0.0), c(3.0, -1.0)].into();
        assert_eq!(ls_amplitude(&e1, &e0).unwrap(), c(0.0, 0.0));
        assert_eq!(
            ls_amplitude(&e1, &SignalVector::zeros(2)),
            Err(EstimatorError::ZeroTemplate)
        );
    }

    #[test]
    fn ls_amplitude_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let s = random_vector(&mut rng, 32);
            let mut r = s.scaled(c(0.7, -1.3));
            r.add_scaled(c(0.4, 0.0), &random_vector(&mut rng, 32));
            let est = ls_amplitude(&r, &s).unwrap();
            let oracle = brute_force_ls(&r, &s);
            assert!((est - oracle).norm() / est.norm() < 1e-6, "{est} vs {oracle}");
        }
    }

    #[test]
    fn ls_mark_ignores_orthogonal_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_vector(&mut rng, 48);
        let w = random_vector(&mut rng, 48);
        // Gram–Schmidt: strip the s-component from w
        let coeff = s.inner(&w) / s.norm_sqr();
        let mut orth = w.clone();
        orth.add_scaled(-coeff, &s);
        assert!(s.inner(&orth).norm() < 1e-12 * s.norm() * orth.norm());
        let beta = c(-0.25, 1.75);
        let mut r = s.scaled(beta);
        r.add_scaled(c(1.0, 0.0), &orth);
        let est = ls_mark(&r, &s).unwrap();
        assert!((est - beta).norm() < 1e-12);
        assert!(ls_mark(&orth, &s).unwrap().norm() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_vector(&mut rng, 16);
        let t = random_vector(&mut rng, 16);
        let alpha = c(0.3, 0.2);
        let beta = c(-1.0, 0.5);
        let r0 = residual(&s.scaled(alpha), &s, alpha, &[], &[]).unwrap();
        assert!(r0.norm() < 1e-15);
        let mut r = s.scaled(alpha);
        r.add_scaled(beta, &t);
        let only_los = residual(&r, &s, alpha, &[], &[]).unwrap();
        let expected = t.scaled(beta);
        for (a, b) in only_los.iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(residual(&r, &s, alpha, &[t.clone()], &[beta]).unwrap().norm() < 1e-14);
        assert!(residual(&r, &s, alpha, &[t], &[]).is_err());
    }

    #[test]
    fn synthetic_snapshot_cancels_exactly() {
        let agent = Point2::new(0.2, -0.1);
        let scat = [(Point2::new(0.35, 0.0), c(0.3, -0.1)), (Point2::new(0.0, -0.3), c(-0.2, 0.25))];
        let set = planted_set(8, |m| c(1.0 - 0.05 * m as f64, 0.1), &scat, NoiseSpec::silent(), agent);
        let los = set.los_templates().unwrap();
        for (m, snap) in set.snapshots.iter().enumerate() {
            let templates: Vec<SignalVector> =
                scat.iter().map(|(q, _)| scatter_template_for(&set, m, *q).unwrap()).collect();
            let marks: Vec<Complex64> = scat.iter().map(|s| s.1).collect();
            let alpha = c(1.0 - 0.05 * m as f64, 0.1);
            let r = residual(&snap.signal, &los[m], alpha, &templates, &marks).unwrap();
            assert!(r.norm() <= 1e-9 * snap.signal.norm());
        }
    }

    #[test]
    fn joint_loglik_examples() {
        let agent = Point2::ORIGIN;
        let q = Point2::new(-0.2, 0.1);
        let set = planted_set(6, |_| c(1.0, 0.0), &[(q, c(0.5, 0.0))], NoiseSpec::new(1e-3, 5).unwrap(), agent);
        let m_count = set.len();
        let sigma2 = 0.01;
        let zeros = vec![c(0.0, 0.0); m_count];
        let zero_marks = ComplexMatrix::zeros(m_count, 1);
        let all_zero = joint_loglik(&set, &zeros, &[q], &zero_marks, sigma2).unwrap();
        let energy: f64 = set.snapshots.iter().map(|s| s.signal.norm_sqr()).sum();
        assert_relative_eq!(all_zero, -energy / sigma2, max_relative = 1e-12);

        // separability over snapshots
        let alphas: Vec<Complex64> = (0..m_count).map(|m| c(0.9, 0.01 * m as f64)).collect();
        let mut marks = ComplexMatrix::zeros(m_count, 1);
        for m in 0..m_count {
            marks.set(m, 0, c(0.4, -0.1));
        }
        let joint = joint_loglik(&set, &alphas, &[q], &marks, sigma2).unwrap();
        let mut sum = 0.0;
        for m in 0..m_count {
            let single = SnapshotSet::new(vec![set.snapshots[m].clone()], agent, set.spec).unwrap();
            let mut mk = ComplexMatrix::zeros(1, 1);
            mk.set(0, 0, marks.get(m, 0));
            sum += joint_loglik(&single, &alphas[m..=m], &[q], &mk, sigma2).unwrap();
        }
        assert_relative_eq!(joint, sum, max_relative = 1e-12);
        assert!(matches!(
            joint_loglik(&set, &alphas, &[q], &marks, 0.0),
            Err(EstimatorError::NonPositiveVariance(_))
        ));
    }

    #[test]
    fn perfect_fit_has_zero_loglik() {
        let q = Point2::new(0.1, 0.25);
        let set = planted_set(5, |_| c(0.8, 0.0), &[(q, c(0.0, 0.3))], NoiseSpec::silent(), Point2::ORIGIN);
        let alphas = vec![c(0.8, 0.0); 5];
        let mut marks = ComplexMatrix::zeros(5, 1);
        for m in 0..5 {
            marks.set(m, 0, c(0.0, 0.3));
        }
        let ll = joint_loglik(&set, &alphas, &[q], &marks, 1.0).unwrap();
        assert!(ll.abs() < 1e-20);
    }

    #[test]
    fn score_examples() {
        let agent = Point2::ORIGIN;
        let set = planted_set(12, |_| c(0.0, 0.0), &[], NoiseSpec::silent(), agent);
        let zeros: Vec<SignalVector> = (0..set.len()).map(|_| SignalVector::zeros(256)).collect();
        assert_eq!(score_candidate(Point2::new(0.1, 0.1), &zeros, &set).unwrap(), 0.0);

        // residuals made of exactly one template at q0, mark magnitudes varying per snapshot
        let grid = GridSpec::centered(agent, 0.4, 0.04);
        let q0 = grid.nodes()[37];
        let marks: Vec<Complex64> = (0..set.len()).map(|m| Complex64::from_polar(0.2 + 0.01 * m as f64, m as f64)).collect();
        let residuals: Vec<SignalVector> = (0..set.len())
            .map(|m| scatter_template_for(&set, m, q0).unwrap().scaled(marks[m]))
            .collect();
        let expected: f64 = (0..set.len())
            .map(|m| scatter_template_for(&set, m, q0).unwrap().norm_sqr() * marks[m].norm_sqr())
            .sum();
        let at_q0 = score_candidate(q0, &residuals, &set).unwrap();
        assert_relative_eq!(at_q0, expected, max_relative = 1e-10);
        // exhaustive grid evaluation: q0 is the unique maximizer
        for q in grid.nodes() {
            if q != q0 {
                assert!(score_candidate(q, &residuals, &set).unwrap() < at_q0);
            }
        }
        // global phase rotation
        let rotated: Vec<SignalVector> = residuals.iter().map(|r| r.scaled(Complex64::from_polar(1.0, 1.234))).collect();
        assert_relative_eq!(score_candidate(q0, &rotated, &set).unwrap(), at_q0, max_relative = 1e-12);

        let far = Point2::new(50.0, 0.0);
        assert!(matches!(
            score_candidate(far, &residuals, &set),
            Err(EstimatorError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn grid_nodes_are_y_major() {
        let g = GridSpec { x_min: 0.0, x_max: 0.1, y_min: -0.1, y_max: 0.0, step: 0.05 };
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 9);
        assert_eq!(nodes[0], Point2::new(0.0, -0.1));
        assert_eq!(nodes[1], Point2::new(0.05, -0.1));
        assert_eq!(nodes[3].y, -0.05);
        let bad = GridSpec { step: 0.0, ..g };
        assert!(bad.validate().is_err());
        let empty = GridSpec { x_max: -1.0, ..g };
        assert_eq!(empty.validate(), Err(EstimatorError::EmptyGrid));
    }

    #[test]
    fn los_only_noise_free_stops_immediately() {
        let gains: Vec<Complex64> = (0..16).map(|m| Complex64::from_polar(1.0 - 0.03 * m as f64, 0.2 * m as f64)).collect();
        let set = planted_set(16, |m| gains[m], &[], NoiseSpec::silent(), Point2::ORIGIN);
        let grid = GridSpec::centered(Point2::ORIGIN, 0.4, 0.04);
        let res = calibrate(&set, &grid, &StoppingRule::default(), 1e-12).unwrap();
        assert_eq!(res.n_scatterers(), 0);
        assert_eq!(res.beta_hat.cols(), 0);
        assert_eq!(res.loglik_trace.len(), 1);
        assert!(res.loglik_trace[0].abs() < 1e-6);
        for (a, g) in res.alpha_hat.iter().zip(&gains) {
            assert!((a - g).norm() <= 1e-9 * g.norm());
        }
    }

    #[test]
    fn single_node_scatterer_recovered() {
        let agent = Point2::ORIGIN;
        let grid = GridSpec::centered(agent, 0.8, 0.04);
        let q0 = *grid.nodes().iter().find(|q| q.distance(Point2::new(-0.16, 0.2)) < 1e-9).unwrap();
        let set = planted_set(32, |_| c(1.0, 0.0), &[(q0, c(0.3, 0.2))], NoiseSpec::silent(), agent);
        let res = calibrate(&set, &grid, &StoppingRule { max_scatterers: 1, ..StoppingRule::default() }, 1e-9).unwrap();
        assert_eq!(res.q_hat[0], q0);

        // exhaustive single-point oracle on the LOS-removed residuals
        let los = set.los_templates().unwrap();
        let residuals: Vec<SignalVector> = set
            .snapshots
            .iter()
            .zip(&los)
            .map(|(s, t)| {
                let mut r = s.signal.clone();
                r.add_scaled(-(t.inner(&s.signal) / t.norm_sqr()), t);
                r
            })
            .collect();
        let mut best = (f64::NEG_INFINITY, Point2::ORIGIN);
        for q in grid.nodes() {
            let s: f64 = (0..set.len())
                .map(|m| {
                    let t = scatter_template_for(&set, m, q).unwrap();
                    t.inner(&residuals[m]).norm_sqr() / t.norm_sqr()
                })
                .sum();
            if s > best.0 && q.distance(agent) > 1e-9 {
                best = (s, q);
            }
        }
        assert_eq!(best.1, q0);
        for m in 0..set.len() {
            let t = scatter_template_for(&set, m, q0).unwrap();
            let oracle = t.inner(&residuals[m]) / t.norm_sqr();
            let got = res.beta_hat.get(m, 0);
            assert!((got - oracle).norm() <= 1e-6 * oracle.norm().max(1e-12));
        }
    }

    #[test]
    fn greedy_invariants_hold() {
        let agent = Point2::new(0.05, 0.02);
        let scat = [
            (Point2::new(-0.13, 0.11), c(0.35, 0.0)),
            (Point2::new(0.08, -0.21), c(0.0, 0.25)),
        ];
        let noise = NoiseSpec::from_snr_db(1.0, 20.0, 8).unwrap();
        let set = planted_set(24, |m| c(1.0, 0.02 * m as f64), &scat, noise, agent);
        let grid = GridSpec::centered(agent, 0.6, 0.04);
        let res = calibrate(&set, &grid, &StoppingRule::default(), noise.variance).unwrap();
        assert!(res.n_scatterers() >= 2);
        for (k, w) in res.loglik_trace.windows(2).enumerate() {
            assert!(w[1] > w[0]);
            let gain = res.scores[k] / noise.variance;
            assert_relative_eq!(w[1] - w[0], gain, max_relative = 1e-9);
        }
        // the trace agrees with the from-scratch joint likelihood
        let last = joint_loglik(&set, &res.alpha_hat, &res.q_hat, &res.beta_hat, noise.variance).unwrap();
        assert_relative_eq!(last, *res.loglik_trace.last().unwrap(), max_relative = 1e-12);

        // LOS orthogonality and idempotent mark re-fit
        let los = set.los_templates().unwrap();
        for (m, snap) in set.snapshots.iter().enumerate() {
            let r = residual(&snap.signal, &los[m], res.alpha_hat[m], &[], &[]).unwrap();
            assert!(los[m].inner(&r).norm() < 1e-9 * snap.signal.norm() * los[m].norm());
            let templates: Vec<SignalVector> =
                res.q_hat.iter().map(|&q| scatter_template_for(&set, m, q).unwrap()).collect();
            let full = residual(&snap.signal, &los[m], res.alpha_hat[m], &templates, res.beta_hat.row(m)).unwrap();
            let last_t = templates.last().unwrap();
            assert!(ls_mark(&full, last_t).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn translation_equivariance() {
        let agent = Point2::new(0.0, 0.0);
        let scat = [(Point2::new(-0.12, 0.16), c(0.3, 0.1))];
        let noise = NoiseSpec::from_snr_db(1.0, 25.0, 4).unwrap();
        let grid = GridSpec::centered(agent, 0.48, 0.04);
        let set = planted_set(16, |_| c(1.0, 0.0), &scat, noise, agent);
        let base = calibrate(&set, &grid, &StoppingRule::default(), noise.variance).unwrap();

        let d = Point2::new(1.5, -0.75);
        let shifted_scat = [(scat[0].0 + d, scat[0].1)];
        let moved = planted_set(16, |_| c(1.0, 0.0), &shifted_scat, noise, agent + d);
        let res = calibrate(&moved, &grid.translated(d), &StoppingRule::default(), noise.variance).unwrap();
        assert_eq!(res.n_scatterers(), base.n_scatterers());
        for (a, b) in res.q_hat.iter().zip(&base.q_hat) {
            assert!((*a - *b - d).norm() < 1e-9);
        }
        for (a, b) in res.alpha_hat.iter().zip(&base.alpha_hat) {
            assert!((a - b).norm() < 1e-7 * b.norm());
        }
        for m in 0..set.len() {
            for (a, b) in res.beta_hat.row(m).iter().zip(base.beta_hat.row(m)) {
                assert!((a - b).norm() < 1e-6 * b.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn refinement_never_lowers_likelihood() {
        let agent = Point2::ORIGIN;
        let scat = [
            (Point2::new(-0.1, 0.14), c(0.3, 0.0)),
            (Point2::new(-0.14, 0.06), c(0.2, 0.1)),
        ];
        let noise = NoiseSpec::from_snr_db(1.0, 25.0, 2).unwrap();
        let set = planted_set(16, |_| c(1.0, 0.0), &scat, noise, agent);
        let grid = GridSpec::centered(agent, 0.48, 0.04);
        let res = calibrate(&set, &grid, &StoppingRule::default(), noise.variance).unwrap();
        let refined = refine_marks(&set, &res).unwrap();
        assert!(refined.refined_loglik.unwrap() >= res.loglik_trace.last().unwrap() - 1e-9);
        assert_eq!(refined.q_hat, res.q_hat);
    }

    #[test]
    fn noise_variance_estimate() {
        let noise = NoiseSpec::new(2e-3, 21).unwrap();
        let set = planted_set(32, |_| c(1.0, 0.0), &[(Point2::new(0.1, 0.1), c(0.2, 0.0))], noise, Point2::ORIGIN);
        let est = estimate_noise_variance(&set).unwrap();
        assert!((est / 2e-3 - 1.0).abs() < 0.1, "{est}");
    }

    #[test]
    fn calibrate_rejects_bad_inputs() {
        let set = planted_set(4, |_| c(1.0, 0.0), &[], NoiseSpec::silent(), Point2::ORIGIN);
        let grid = GridSpec::centered(Point2::ORIGIN, 0.2, 0.05);
        assert!(matches!(
            calibrate(&set, &grid, &StoppingRule::default(), 0.0),
            Err(EstimatorError::NonPositiveVariance(_))
        ));
        let empty = GridSpec { x_max: -1.0, ..grid };
        assert_eq!(calibrate(&set, &empty, &StoppingRule::default(), 1.0).unwrap_err(), EstimatorError::EmptyGrid);
        let mut short = set.clone();
        short.snapshots[1].signal = SignalVector::zeros(3);
        assert!(SnapshotSet::new(short.snapshots, short.agent, short.spec).is_err());
    }
}
