//! Band-limited baseband pulses, delayed templates and snapshot synthesis.
//!
//! A received snapshot is the sampled complex baseband signal
//! `r = α s(p) + Σ_j β_j s(p, q_j) + n`, where every template is the pulse
//! delayed by its propagation time and rotated by the carrier phase of that
//! delay. Fractional delays are realized by evaluating the closed-form pulse
//! at the shifted sampling instants.

use std::f64::consts::{PI, TAU};
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{los_delay, scatter_delay, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveformError {
    #[error("invalid pulse spec: {0}")]
    InvalidSpec(String),
    #[error("delay {delay:e} s lies outside the observation window [0, {window:e}] s")]
    DelayOverflow { delay: f64, window: f64 },
    #[error("invalid noise spec: variance {0}")]
    InvalidNoise(f64),
    #[error("signal length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Pulse shape plus carrier and sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub carrier_hz: f64,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    /// Two-sided occupied bandwidth of the baseband pulse.
    pub bandwidth_hz: f64,
    pub rolloff: f64,
}

impl Default for PulseSpec {
    /// 3.8–10.2 GHz sounding band around 6.95 GHz, sampled at 12.8 GHz.
    fn default() -> Self {
        Self {
            carrier_hz: 6.95e9,
            sample_rate_hz: 12.8e9,
            n_samples: 512,
            bandwidth_hz: 6.4e9,
            rolloff: 0.6,
        }
    }
}

impl PulseSpec {
    pub fn validate(&self) -> Result<(), WaveformError> {
        let bad = |msg: String| Err(WaveformError::InvalidSpec(msg));
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return bad(format!("carrier_hz must be positive, got {}", self.carrier_hz));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad(format!("bandwidth_hz must be positive, got {}", self.bandwidth_hz));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz >= self.bandwidth_hz) {
            return bad(format!(
                "sample_rate_hz {} must be at least the bandwidth {}",
                self.sample_rate_hz, self.bandwidth_hz
            ));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return bad(format!("rolloff must lie in [0, 1], got {}", self.rolloff));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn obs_window(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    /// Symbol period of the root-raised-cosine whose occupied two-sided
    /// bandwidth is `(1 + rolloff) / T`.
    pub fn symbol_period(&self) -> f64 {
        (1.0 + self.rolloff) / self.bandwidth_hz
    }

    fn check_delay(&self, delay: f64) -> Result<(), WaveformError> {
        let window = self.obs_window();
        if !(delay >= 0.0 && delay <= window) {
            return Err(WaveformError::DelayOverflow { delay, window });
        }
        Ok(())
    }
}

/// Unit-peak root-raised-cosine value at `t` seconds.
pub fn rrc(spec: &PulseSpec, t: f64) -> f64 {
    let beta = spec.rolloff;
    let x = t / spec.symbol_period();
    let peak = 1.0 + beta * (4.0 / PI - 1.0);
    if x.abs() < 1e-12 {
        return 1.0;
    }
    let fx = 4.0 * beta * x;
    let den = PI * x * (1.0 - fx * fx);
    if beta > 0.0 && (1.0 - fx.abs()).abs() < 1e-10 {
        let arg = PI / (4.0 * beta);
        let v = beta / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
        return v / peak;
    }
    let num = (PI * x * (1.0 - beta)).sin() + fx * (PI * x * (1.0 + beta)).cos();
    num / den / peak
}

/// Baseband pulse value; real-valued, even, with unit peak at `t = 0`.
pub fn baseband_pulse(spec: &PulseSpec, t: f64) -> Complex64 {
    Complex64::new(rrc(spec, t), 0.0)
}

/// Fills `out[k] = s(k T_s − delay)` for the real pulse envelope.
pub fn envelope_into(spec: &PulseSpec, delay: f64, out: &mut [f64]) {
    const RESYNC: usize = 32;
    let ts = spec.sample_period();
    let sym = spec.symbol_period();
    let beta = spec.rolloff;
    let peak = 1.0 + beta * (4.0 / PI - 1.0);
    // sin(π x (1−β)) and cos(π x (1+β)) advance by fixed rotations per sample
    let wa = PI * (1.0 - beta) / sym;
    let wb = PI * (1.0 + beta) / sym;
    let (step_a, step_b) = (Complex64::cis(wa * ts), Complex64::cis(wb * ts));
    let (mut za, mut zb) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
    for (k, v) in out.iter_mut().enumerate() {
        let t = k as f64 * ts - delay;
        if k % RESYNC == 0 {
            za = Complex64::cis(wa * t);
            zb = Complex64::cis(wb * t);
        }
        let x = t / sym;
        let fx = 4.0 * beta * x;
        // direct evaluation near the peak and the removable singularities, where
        // the quotient amplifies the rounding of the recurrence
        if x.abs() < 1.0 || (beta > 0.0 && (1.0 - fx.abs()).abs() < 2e-2) {
            *v = rrc(spec, t);
        } else {
            *v = (za.im + fx * zb.re) / (PI * x * (1.0 - fx * fx)) / peak;
        }
        za *= step_a;
        zb *= step_b;
    }
}

/// Carrier rotation `e^{-i 2π f_c τ}` for a path of delay `τ`.
pub fn carrier_phase(spec: &PulseSpec, delay: f64) -> Complex64 {
    // reduce the cycle count first; f_c τ is O(100) and the fractional part carries the phase
    let cycles = spec.carrier_hz * delay;
    Complex64::from_polar(1.0, -TAU * (cycles - cycles.floor()))
}

/// A length-N vector of complex baseband samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalVector(Vec<Complex64>);

impl SignalVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// Hermitian inner product `selfᴴ other`.
    pub fn inner(&self, other: &SignalVector) -> Complex64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `self += coeff · other`
    pub fn add_scaled(&mut self, coeff: Complex64, other: &SignalVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += coeff * b;
        }
    }

    pub fn scaled(&self, coeff: Complex64) -> SignalVector {
        SignalVector(self.0.iter().map(|v| v * coeff).collect())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }
}

impl From<Vec<Complex64>> for SignalVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for SignalVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for SignalVector {
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.0[i]
    }
}

/// White circularly-symmetric complex Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-sample variance `σ_w² = E|n_k|²`.
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Result<Self, WaveformError> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(WaveformError::InvalidNoise(variance));
        }
        Ok(Self { variance, seed })
    }

    pub fn silent() -> Self {
        Self {
            variance: 0.0,
            seed: 0,
        }
    }

    /// Variance giving `snr_db` relative to a sample of power `peak_power`.
    pub fn from_snr_db(peak_power: f64, snr_db: f64, seed: u64) -> Result<Self, WaveformError> {
        Self::new(peak_power * 10f64.powf(-snr_db / 10.0), seed)
    }

    /// Adds the noise realization of stream `index` to `signal`.
    ///
    /// Each `(seed, index)` pair selects an independent ChaCha stream, so
    /// snapshots can be generated in any order.
    pub fn add_to(&self, signal: &mut SignalVector, index: u64) {
        if self.variance == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let scale = (self.variance / 2.0).sqrt();
        for v in signal.as_mut_slice() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * scale;
        }
    }
}

/// Template for a path of total delay `delay`.
pub fn delayed_template(spec: &PulseSpec, delay: f64) -> Result<SignalVector, WaveformError> {
    spec.check_delay(delay)?;
    let mut env = vec![0.0; spec.n_samples];
    envelope_into(spec, delay, &mut env);
    let rot = carrier_phase(spec, delay);
    Ok(SignalVector(env.into_iter().map(|e| rot * e).collect()))
}

/// LOS template `s(p)` for anchor `a`.
pub fn los_vector(spec: &PulseSpec, p: Point2, a: Point2) -> Result<SignalVector, WaveformError> {
    delayed_template(spec, los_delay(p, a))
}

/// Scattered-path template `s(p, q)` for anchor `a`.
pub fn scatter_vector(
    spec: &PulseSpec,
    p: Point2,
    q: Point2,
    a: Point2,
) -> Result<SignalVector, WaveformError> {
    delayed_template(spec, scatter_delay(a, q, p))
}

/// One noisy snapshot `α s(p) + Σ β_j s(p, q_j) + n`; `index` keys the noise stream.
pub fn synthesize(
    spec: &PulseSpec,
    p: Point2,
    a: Point2,
    alpha: Complex64,
    scatterers: &[(Point2, Complex64)],
    noise: &NoiseSpec,
    index: u64,
) -> Result<SignalVector, WaveformError> {
    let mut r = los_vector(spec, p, a)?.scaled(alpha);
    for &(q, beta) in scatterers {
        r.add_scaled(beta, &scatter_vector(spec, p, q, a)?);
    }
    noise.add_to(&mut r, index);
    Ok(r)
}
