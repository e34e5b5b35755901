//! Angular magnitude metrics: average magnitude, average magnitude ratio
//! (AMR), peak-to-average ratio (PAR) and uniform angular-sector averages.
//!
//! Ratios are reported in dB as `20·log10` of magnitude ratios, which is the
//! same number as `10·log10` of the corresponding squared magnitudes.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("magnitude series is empty")]
    EmptySeries,
    #[error("all magnitudes are zero")]
    AllZero,
    #[error("reference magnitude must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("sector count must be at least 1")]
    NoSectors,
}

/// Magnitudes `|α̂_m|` or `|β̂_{m,j}|` against the snapshot AOAs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeSeries {
    values: Vec<f64>,
    aoas: Vec<f64>,
}

impl MagnitudeSeries {
    pub fn new(values: Vec<f64>, aoas: Vec<f64>) -> Result<Self, MetricsError> {
        if values.len() != aoas.len() {
            return Err(MetricsError::InvalidSeries(format!(
                "{} values but {} angles",
                values.len(),
                aoas.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(MetricsError::InvalidSeries(format!("magnitude {v} is not a finite non-negative value")));
        }
        Ok(Self { values, aoas })
    }

    /// Series of moduli of complex amplitudes.
    pub fn from_complex(amplitudes: &[num_complex::Complex64], aoas: &[f64]) -> Result<Self, MetricsError> {
        Self::new(amplitudes.iter().map(|a| a.norm()).collect(), aoas.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn aoas(&self) -> &[f64] {
        &self.aoas
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            aoas: self.aoas.clone(),
        }
    }
}

/// Arithmetic mean of the magnitudes.
pub fn avg_magnitude(series: &MagnitudeSeries) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    Ok(series.values.iter().sum::<f64>() / series.len() as f64)
}

/// `20·log10(avg / ref_max)`; an average of zero maps to `-inf`.
pub fn amr(avg: f64, ref_max: f64) -> Result<f64, MetricsError> {
    if !(ref_max > 0.0 && ref_max.is_finite()) {
        return Err(MetricsError::NonPositiveReference(ref_max));
    }
    if !(avg >= 0.0 && avg.is_finite()) {
        return Err(MetricsError::InvalidSeries(format!("average magnitude {avg}")));
    }
    if avg == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (avg / ref_max).log10())
}

/// `20·log10(max / mean)`, never negative.
pub fn par(series: &MagnitudeSeries) -> Result<f64, MetricsError> {
    let mean = avg_magnitude(series)?;
    if mean == 0.0 {
        return Err(MetricsError::AllZero);
    }
    let max = series.max().unwrap_or(0.0);
    if series.values.iter().all(|&v| v == max) {
        return Ok(0.0);
    }
    // max ≥ mean holds exactly; rounding of the mean may not
    Ok((20.0 * (max / mean).log10()).max(0.0))
}

/// Whether sectors average the magnitudes themselves or their squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectorQuantity {
    Linear,
    #[default]
    Squared,
}

/// Per-sector averages over `n_sectors` half-open sectors `[lo, hi)` starting at −π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorStats {
    pub n_sectors: usize,
    pub quantity: SectorQuantity,
    pub centers: Vec<f64>,
    /// `None` marks a sector without samples.
    pub means: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl SectorStats {
    /// Index of the non-empty sector with the smallest mean.
    pub fn argmin(&self) -> Option<usize> {
        self.means
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|v| (i, v)))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    /// Mean of sector `k` in dB (`10·log10` of squared magnitudes).
    pub fn mean_db(&self, k: usize) -> Option<f64> {
        self.means[k].map(|v| match self.quantity {
            SectorQuantity::Squared => 10.0 * v.log10(),
            SectorQuantity::Linear => 20.0 * v.log10(),
        })
    }
}

/// Sector index of an angle; `π` shares the sector of `−π`.
pub fn sector_index(aoa: f64, n_sectors: usize) -> usize {
    let width = TAU / n_sectors as f64;
    // boundaries computed as −π + k·width land in sector k despite rounding
    let k = ((aoa + PI) / width + 1e-9).floor();
    (k.max(0.0) as usize) % n_sectors
}

pub fn sector_average(
    series: &MagnitudeSeries,
    n_sectors: usize,
    quantity: SectorQuantity,
) -> Result<SectorStats, MetricsError> {
    if n_sectors == 0 {
        return Err(MetricsError::NoSectors);
    }
    let width = TAU / n_sectors as f64;
    let mut sums = vec![0.0; n_sectors];
    let mut counts = vec![0usize; n_sectors];
    for (&v, &phi) in series.values.iter().zip(&series.aoas) {
        let k = sector_index(phi, n_sectors);
        sums[k] += match quantity {
            SectorQuantity::Linear => v,
            SectorQuantity::Squared => v * v,
        };
        counts[k] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let centers = (0..n_sectors).map(|k| -PI + (k as f64 + 0.5) * width).collect();
    Ok(SectorStats {
        n_sectors,
        quantity,
        centers,
        means,
        counts,
    })
}
