//! Calibration report: estimated points, shape, amplitudes and angular metrics.

use serde::{Deserialize, Serialize};

use super::{CampaignConfig, CampaignError, GroundTruth, OnBodyLabel};
use crate::ea_model::{shape_estimate, ShapeEstimate};
use crate::estimator::{calibrate, refine_marks, CalibrationResult, SnapshotSet};
use crate::geometry::Point2;
use crate::metrics::{amr, avg_magnitude, par, sector_average, MagnitudeSeries, SectorStats};

/// Average magnitudes relative to the reference campaign's strongest LOS, in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmrTable {
    pub reference_label: OnBodyLabel,
    pub reference_max: f64,
    #[serde(with = "nonfinite")]
    pub los_db: f64,
    #[serde(with = "nonfinite::vec")]
    pub scatterers_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParTable {
    pub los_db: f64,
    pub scatterers_db: Vec<f64>,
}

/// Sector curve of one magnitude series; `scatterer` is `None` for the LOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSeries {
    pub name: String,
    pub scatterer: Option<usize>,
    pub stats: SectorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub label: OnBodyLabel,
    pub agent: Point2,
    pub anchors: Vec<Point2>,
    pub aoas: Vec<f64>,
    pub calibration: CalibrationResult,
    /// `None` when no scatterer was accepted.
    pub shape: Option<ShapeEstimate>,
    pub alpha_bar: f64,
    pub beta_bar: Vec<f64>,
    pub par: ParTable,
    pub amr: Option<AmrTable>,
    /// Up to two scatterer indices by descending `beta_bar`.
    pub strongest: Vec<usize>,
    pub sectors: Vec<SectorSeries>,
    pub ground_truth: Option<GroundTruth>,
}

impl CampaignReport {
    pub fn n_scatterers(&self) -> usize {
        self.calibration.n_scatterers()
    }

    pub fn los_series(&self) -> Result<MagnitudeSeries, CampaignError> {
        Ok(MagnitudeSeries::from_complex(&self.calibration.alpha_hat, &self.aoas)?)
    }

    pub fn scatterer_series(&self, j: usize) -> Result<MagnitudeSeries, CampaignError> {
        Ok(MagnitudeSeries::from_complex(&self.calibration.beta_hat.column(j), &self.aoas)?)
    }

    pub fn los_sectors(&self) -> &SectorStats {
        &self.sectors[0].stats
    }
}

/// Noise variance used by the calibration: the configured one, or a floor far
/// below the signal level when the configuration is noise-free.
fn calibration_variance(snapshots: &SnapshotSet, config: &CampaignConfig) -> f64 {
    if config.noise.variance > 0.0 {
        return config.noise.variance;
    }
    let samples = (snapshots.len() * snapshots.spec.n_samples) as f64;
    let power = snapshots.snapshots.iter().map(|s| s.signal.norm_sqr()).sum::<f64>() / samples;
    if power > 0.0 {
        1e-15 * power
    } else {
        f64::MIN_POSITIVE
    }
}

/// Calibration, shape estimate and metrics for one snapshot set.
///
/// AMR is computed against `reference`, which must be a label-0 report; a
/// label-0 campaign without a reference is normalized by itself.
pub fn run_calibration(
    snapshots: &SnapshotSet,
    config: &CampaignConfig,
    reference: Option<&CampaignReport>,
) -> Result<CampaignReport, CampaignError> {
    if let Some(r) = reference {
        if r.label != OnBodyLabel::Reference {
            return Err(CampaignError::MissingReference(format!(
                "reference report has label {}, expected 0",
                r.label
            )));
        }
    }
    let variance = calibration_variance(snapshots, config);
    let mut calibration = calibrate(snapshots, &config.grid, &config.stopping, variance)?;
    if config.refine_marks {
        calibration = refine_marks(snapshots, &calibration)?;
    }
    let shape = if calibration.q_hat.is_empty() {
        None
    } else {
        Some(shape_estimate(&calibration.q_hat)?)
    };

    let aoas = snapshots.aoas();
    let los = MagnitudeSeries::from_complex(&calibration.alpha_hat, &aoas)?;
    let scatterers = (0..calibration.n_scatterers())
        .map(|j| MagnitudeSeries::from_complex(&calibration.beta_hat.column(j), &aoas))
        .collect::<Result<Vec<_>, _>>()?;
    let alpha_bar = avg_magnitude(&los)?;
    let beta_bar = scatterers.iter().map(avg_magnitude).collect::<Result<Vec<_>, _>>()?;
    let par_table = ParTable {
        los_db: par(&los)?,
        scatterers_db: scatterers.iter().map(par).collect::<Result<Vec<_>, _>>()?,
    };

    let mut order: Vec<usize> = (0..beta_bar.len()).collect();
    // stable sort keeps the lower index first on ties
    order.sort_by(|&a, &b| beta_bar[b].total_cmp(&beta_bar[a]));
    let strongest: Vec<usize> = order.into_iter().take(2).collect();

    let mut sectors = vec![SectorSeries {
        name: "los".into(),
        scatterer: None,
        stats: sector_average(&los, config.n_sectors, config.sector_quantity)?,
    }];
    for &j in &strongest {
        sectors.push(SectorSeries {
            name: format!("scatterer_{j}"),
            scatterer: Some(j),
            stats: sector_average(&scatterers[j], config.n_sectors, config.sector_quantity)?,
        });
    }

    let mut report = CampaignReport {
        label: config.label,
        agent: snapshots.agent,
        anchors: snapshots.snapshots.iter().map(|s| s.anchor).collect(),
        aoas,
        calibration,
        shape,
        alpha_bar,
        beta_bar,
        par: par_table,
        amr: None,
        strongest,
        sectors,
        ground_truth: None,
    };
    if reference.is_some() || config.label == OnBodyLabel::Reference {
        report.amr = Some(compute_amr(&report, reference)?);
    }
    Ok(report)
}

/// AMR of the LOS and every scatterer, normalized by the reference's largest `|α̂|`.
///
/// Without an explicit reference the report must itself be the label-0 campaign.
pub fn compute_amr(report: &CampaignReport, reference: Option<&CampaignReport>) -> Result<AmrTable, CampaignError> {
    let reference = match reference {
        Some(r) => r,
        None if report.label == OnBodyLabel::Reference => report,
        None => {
            return Err(CampaignError::MissingReference(format!(
                "AMR of a label-{} campaign needs a label-0 reference report",
                report.label
            )))
        }
    };
    if reference.label != OnBodyLabel::Reference {
        return Err(CampaignError::MissingReference(format!(
            "reference report has label {}, expected 0",
            reference.label
        )));
    }
    let reference_max = reference.los_series()?.max().unwrap_or(0.0);
    Ok(AmrTable {
        reference_label: reference.label,
        reference_max,
        los_db: amr(report.alpha_bar, reference_max)?,
        scatterers_db: report
            .beta_bar
            .iter()
            .map(|&b| amr(b, reference_max))
            .collect::<Result<Vec<_>, _>>()?,
    })
}

/// JSON has no infinities; non-finite values travel as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Number(v)
        } else {
            Repr::Text(v.to_string())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Number(v) => Ok(v),
            Repr::Text(s) => s.parse().map_err(E::custom),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| to_repr(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
