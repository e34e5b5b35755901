//! End-to-end campaigns: synthetic snapshot generation on a circle of
//! anchors around the agent, calibration, metrics, and file export.

mod config;
mod io;
mod report;

pub use config::{CampaignConfig, ConfigFile, OnBodyLabel, PeakSetting, SCHEMA_VERSION};
pub use io::{
    export_ground_truth, export_report, export_snapshots, import_snapshots, load_report, SnapshotFormat,
    ELLIPSE_SCALE,
};
pub use report::{compute_amr, run_calibration, AmrTable, CampaignReport, ParTable, SectorSeries};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ea_model::{generate_marks_with_bases, los_gain, sample_mppp, ComplexMatrix, ModelError};
use crate::estimator::{EstimatorError, Snapshot, SnapshotSet};
use crate::geometry::{synthetic_circle_anchors, GeometryError, Point2};
use crate::metrics::MetricsError;
use crate::waveform::{synthesize, WaveformError};
use config::{sub_seed, MARKS_STREAM, POINTS_STREAM};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing reference: {0}")]
    MissingReference(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CampaignError {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::Estimator(EstimatorError::Numerical(_) | EstimatorError::NonPositiveVariance(_))
                | Self::Metrics(MetricsError::AllZero)
        )
    }
}

/// What the simulator actually drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub points: Vec<Point2>,
    pub base_magnitudes: Vec<f64>,
    /// Snapshots × scatterers.
    pub marks: ComplexMatrix,
    pub los_gains: Vec<Complex64>,
}

/// Builds the anchor circle, draws the extended antenna and synthesizes all snapshots.
pub fn run_simulation(config: &CampaignConfig) -> Result<(SnapshotSet, GroundTruth), CampaignError> {
    config.validate()?;
    let anchors = synthetic_circle_anchors(&config.frame, config.anchor_radius, config.n_snapshots)?;
    let (points, bases): (Vec<Point2>, Vec<f64>) = if config.planted.is_empty() {
        let points = sample_mppp(&config.ea, sub_seed(config.seed, POINTS_STREAM));
        let bases = vec![config.ea.marks.base_magnitude; points.len()];
        (points, bases)
    } else {
        config.planted.iter().map(|s| (s.position, s.base_magnitude)).unzip()
    };
    let peaks = config.ea.marks.peaks(&config.frame, config.ea.mu, &points);
    let marks = generate_marks_with_bases(
        &config.ea.marks,
        &bases,
        &peaks,
        anchors.aoas(),
        sub_seed(config.seed, MARKS_STREAM),
    );
    let los_gains: Vec<Complex64> = anchors.aoas().iter().map(|&phi| los_gain(&config.ea.los_gain, phi)).collect();

    let snapshots = anchors
        .iter()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m, (a, phi))| {
            let scatterers: Vec<(Point2, Complex64)> = points.iter().copied().zip(marks.row(m).iter().copied()).collect();
            let signal = synthesize(
                &config.pulse,
                config.frame.origin,
                a,
                los_gains[m],
                &scatterers,
                &config.noise,
                m as u64,
            )?;
            Ok(Snapshot { signal, anchor: a, aoa: phi })
        })
        .collect::<Result<Vec<_>, CampaignError>>()?;

    let set = SnapshotSet::new(snapshots, config.frame.origin, config.pulse)?;
    Ok((
        set,
        GroundTruth {
            points,
            base_magnitudes: bases,
            marks,
            los_gains,
        },
    ))
}

/// Simulation followed by calibration; the report carries the ground truth.
pub fn run_campaign(
    config: &CampaignConfig,
    reference: Option<&CampaignReport>,
) -> Result<(SnapshotSet, CampaignReport), CampaignError> {
    let (set, truth) = run_simulation(config)?;
    let mut report = run_calibration(&set, config, reference)?;
    report.ground_truth = Some(truth);
    Ok((set, report))
}
