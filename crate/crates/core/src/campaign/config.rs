//! Campaign configuration, its flat key-value file form, and the on-body presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::ea_model::{ExtendedAntennaModel, GainSpec, MarkSpec, PeakDirection, PlantedScatterer, SymMat2};
use crate::estimator::{GridSpec, StoppingRule};
use crate::geometry::{FrameSpec, Point2};
use crate::metrics::SectorQuantity;
use crate::waveform::{NoiseSpec, PulseSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the agent antenna sits on the body; `0` is the body-free reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum OnBodyLabel {
    #[default]
    #[serde(rename = "0")]
    Reference,
    #[serde(rename = "C")]
    Center,
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl OnBodyLabel {
    pub const ALL: [OnBodyLabel; 4] = [Self::Reference, Self::Center, Self::Left, Self::Right];

    pub fn token(self) -> &'static str {
        match self {
            Self::Reference => "0",
            Self::Center => "C",
            Self::Left => "L",
            Self::Right => "R",
        }
    }
}

impl fmt::Display for OnBodyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for OnBodyLabel {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Self::Reference),
            "C" | "c" => Ok(Self::Center),
            "L" | "l" => Ok(Self::Left),
            "R" | "r" => Ok(Self::Right),
            other => Err(CampaignError::Config(format!("unknown on-body label {other:?}, expected 0, C, L or R"))),
        }
    }
}

/// Everything needed to simulate and calibrate one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub label: OnBodyLabel,
    pub seed: u64,
    pub pulse: PulseSpec,
    pub frame: FrameSpec,
    pub anchor_radius: f64,
    pub n_snapshots: usize,
    pub ea: ExtendedAntennaModel,
    /// Replaces the point-process draw when non-empty.
    pub planted: Vec<PlantedScatterer>,
    pub noise: NoiseSpec,
    pub grid: GridSpec,
    pub stopping: StoppingRule,
    pub refine_marks: bool,
    pub n_sectors: usize,
    pub sector_quantity: SectorQuantity,
}

/// Derives independent sub-seeds from the master seed.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const NOISE_STREAM: u64 = 1;
pub(crate) const POINTS_STREAM: u64 = 2;
pub(crate) const MARKS_STREAM: u64 = 3;

impl CampaignConfig {
    /// Canned configuration for an on-body position at paper scale.
    pub fn preset(label: OnBodyLabel) -> Self {
        let frame = FrameSpec::default();
        let local = |x: f64, y: f64| frame.to_world(Point2::new(x, y));
        let body_marks = MarkSpec {
            base_magnitude: 0.25,
            angular_width: 0.9,
            random_phase: true,
            peak: PeakDirection::Fixed(0.0),
        };
        let (mu, sigma, mean_count, marks, los_gain) = match label {
            OnBodyLabel::Reference => (
                local(-0.03, 0.0),
                SymMat2::from_axes(0.02, 0.015, frame.heading),
                5.0,
                MarkSpec {
                    base_magnitude: 0.25,
                    angular_width: 1.5,
                    ..body_marks
                },
                GainSpec::default(),
            ),
            OnBodyLabel::Center => (
                local(-0.12, 0.0),
                SymMat2::from_axes(0.06, 0.12, frame.heading),
                9.0,
                body_marks,
                GainSpec {
                    notch_direction: PI,
                    notch_depth_db: 25.0,
                    notch_width: 2.2,
                    ..GainSpec::default()
                },
            ),
            OnBodyLabel::Left | OnBodyLabel::Right => {
                // the body lies to the agent's right when it is worn on the left
                let side = if label == OnBodyLabel::Left { -1.0 } else { 1.0 };
                (
                    local(-0.10, 0.10 * side),
                    SymMat2::from_axes(0.06, 0.13, frame.heading + 0.3 * side),
                    7.0,
                    body_marks,
                    GainSpec {
                        notch_direction: -side * (PI - 0.3),
                        notch_depth_db: 25.0,
                        notch_width: 2.2,
                        ..GainSpec::default()
                    },
                )
            }
        };
        let seed = 1;
        Self {
            label,
            seed,
            pulse: PulseSpec::default(),
            frame,
            anchor_radius: 2.5,
            n_snapshots: 200,
            ea: ExtendedAntennaModel {
                mu,
                sigma,
                mean_count,
                marks,
                los_gain,
            },
            planted: Vec::new(),
            noise: NoiseSpec::from_snr_db(1.0, 30.0, sub_seed(seed, NOISE_STREAM)).expect("valid preset noise"),
            grid: GridSpec::centered(frame.origin, 1.0, 0.02),
            stopping: StoppingRule::default(),
            refine_marks: false,
            n_sectors: 36,
            sector_quantity: SectorQuantity::Squared,
        }
    }

    /// The preset shrunk to the test scale: 32 snapshots, 256 samples, 0.8 m grid at 4 cm.
    pub fn scaled_down(label: OnBodyLabel) -> Self {
        let mut c = Self::preset(label);
        c.n_snapshots = 32;
        c.pulse.n_samples = 256;
        c.grid = GridSpec::centered(c.frame.origin, 0.8, 0.04);
        c
    }

    /// Sets the master seed and re-derives the noise seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.noise.seed = sub_seed(seed, NOISE_STREAM);
        self
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let invalid = |e: &dyn fmt::Display| CampaignError::Config(e.to_string());
        self.pulse.validate().map_err(|e| invalid(&e))?;
        self.ea.validate().map_err(|e| invalid(&e))?;
        self.grid.validate().map_err(|e| invalid(&e))?;
        if !self.frame.origin.is_finite() || !self.frame.heading.is_finite() {
            return Err(CampaignError::Config("frame must be finite".into()));
        }
        if !(self.anchor_radius > 0.0 && self.anchor_radius.is_finite()) {
            return Err(CampaignError::Config(format!("anchor_radius must be positive, got {}", self.anchor_radius)));
        }
        if self.n_snapshots == 0 {
            return Err(CampaignError::Config("n_snapshots must be at least 1".into()));
        }
        NoiseSpec::new(self.noise.variance, self.noise.seed).map_err(|e| invalid(&e))?;
        if !(self.stopping.gamma >= 0.0 && self.stopping.gamma.is_finite()) {
            return Err(CampaignError::Config(format!("gamma must be non-negative, got {}", self.stopping.gamma)));
        }
        if self.n_sectors == 0 {
            return Err(CampaignError::Config("sectors must be at least 1".into()));
        }
        for s in &self.planted {
            if !s.position.is_finite() || !(s.base_magnitude >= 0.0 && s.base_magnitude.is_finite()) {
                return Err(CampaignError::Config(format!("invalid planted scatterer {s:?}")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CampaignError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))?;
        file.into_config()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile::from_config(self)).expect("config file is plain data")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

/// On-disk configuration: flat keys, every key optional except the schema
/// version. Missing keys take the value of the preset named by `label`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub label: Option<String>,
    pub seed: Option<u64>,
    pub n_snapshots: Option<usize>,
    pub anchor_radius: Option<f64>,
    pub agent_x: Option<f64>,
    pub agent_y: Option<f64>,
    pub heading: Option<f64>,
    pub carrier_hz: Option<f64>,
    pub sample_rate_hz: Option<f64>,
    pub n_samples: Option<usize>,
    pub bandwidth_hz: Option<f64>,
    pub rolloff: Option<f64>,
    pub noise_variance: Option<f64>,
    pub mu_x: Option<f64>,
    pub mu_y: Option<f64>,
    pub sigma_xx: Option<f64>,
    pub sigma_xy: Option<f64>,
    pub sigma_yy: Option<f64>,
    pub mean_count: Option<f64>,
    pub mark_base_magnitude: Option<f64>,
    pub mark_angular_width: Option<f64>,
    pub mark_random_phase: Option<bool>,
    /// `"from_mean"` or an angle in radians.
    pub mark_peak: Option<PeakSetting>,
    pub los_max_gain: Option<f64>,
    pub notch_direction: Option<f64>,
    pub notch_depth_db: Option<f64>,
    pub notch_width: Option<f64>,
    /// `[[x, y, base_magnitude], ...]`
    pub planted: Option<Vec<[f64; 3]>>,
    pub grid_x_min: Option<f64>,
    pub grid_x_max: Option<f64>,
    pub grid_y_min: Option<f64>,
    pub grid_y_max: Option<f64>,
    pub grid_step: Option<f64>,
    pub gamma: Option<f64>,
    pub max_scatterers: Option<usize>,
    pub refine_marks: Option<bool>,
    pub sectors: Option<usize>,
    pub sector_quantity: Option<SectorQuantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeakSetting {
    Angle(f64),
    Mode(String),
}

impl ConfigFile {
    pub fn from_config(c: &CampaignConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: Some(c.label.token().to_string()),
            seed: Some(c.seed),
            n_snapshots: Some(c.n_snapshots),
            anchor_radius: Some(c.anchor_radius),
            agent_x: Some(c.frame.origin.x),
            agent_y: Some(c.frame.origin.y),
            heading: Some(c.frame.heading),
            carrier_hz: Some(c.pulse.carrier_hz),
            sample_rate_hz: Some(c.pulse.sample_rate_hz),
            n_samples: Some(c.pulse.n_samples),
            bandwidth_hz: Some(c.pulse.bandwidth_hz),
            rolloff: Some(c.pulse.rolloff),
            noise_variance: Some(c.noise.variance),
            mu_x: Some(c.ea.mu.x),
            mu_y: Some(c.ea.mu.y),
            sigma_xx: Some(c.ea.sigma.xx),
            sigma_xy: Some(c.ea.sigma.xy),
            sigma_yy: Some(c.ea.sigma.yy),
            mean_count: Some(c.ea.mean_count),
            mark_base_magnitude: Some(c.ea.marks.base_magnitude),
            mark_angular_width: Some(c.ea.marks.angular_width),
            mark_random_phase: Some(c.ea.marks.random_phase),
            mark_peak: Some(match c.ea.marks.peak {
                PeakDirection::FromMean => PeakSetting::Mode("from_mean".into()),
                PeakDirection::Fixed(a) => PeakSetting::Angle(a),
            }),
            los_max_gain: Some(c.ea.los_gain.max_gain),
            notch_direction: Some(c.ea.los_gain.notch_direction),
            notch_depth_db: Some(c.ea.los_gain.notch_depth_db),
            notch_width: Some(c.ea.los_gain.notch_width),
            planted: (!c.planted.is_empty()).then(|| {
                c.planted
                    .iter()
                    .map(|s| [s.position.x, s.position.y, s.base_magnitude])
                    .collect()
            }),
            grid_x_min: Some(c.grid.x_min),
            grid_x_max: Some(c.grid.x_max),
            grid_y_min: Some(c.grid.y_min),
            grid_y_max: Some(c.grid.y_max),
            grid_step: Some(c.grid.step),
            gamma: Some(c.stopping.gamma),
            max_scatterers: Some(c.stopping.max_scatterers),
            refine_marks: Some(c.refine_marks),
            sectors: Some(c.n_sectors),
            sector_quantity: Some(c.sector_quantity),
        }
    }

    pub fn into_config(self) -> Result<CampaignConfig, CampaignError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CampaignError::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let label = match &self.label {
            Some(l) => l.parse()?,
            None => OnBodyLabel::Reference,
        };
        let mut c = CampaignConfig::preset(label).with_seed(self.seed.unwrap_or(1));
        macro_rules! set {
            ($($key:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$key { $target = v; })*
            };
        }
        set! {
            n_snapshots => c.n_snapshots,
            anchor_radius => c.anchor_radius,
            agent_x => c.frame.origin.x,
            agent_y => c.frame.origin.y,
            heading => c.frame.heading,
            carrier_hz => c.pulse.carrier_hz,
            sample_rate_hz => c.pulse.sample_rate_hz,
            n_samples => c.pulse.n_samples,
            bandwidth_hz => c.pulse.bandwidth_hz,
            rolloff => c.pulse.rolloff,
            noise_variance => c.noise.variance,
            mu_x => c.ea.mu.x,
            mu_y => c.ea.mu.y,
            sigma_xx => c.ea.sigma.xx,
            sigma_xy => c.ea.sigma.xy,
            sigma_yy => c.ea.sigma.yy,
            mean_count => c.ea.mean_count,
            mark_base_magnitude => c.ea.marks.base_magnitude,
            mark_angular_width => c.ea.marks.angular_width,
            mark_random_phase => c.ea.marks.random_phase,
            los_max_gain => c.ea.los_gain.max_gain,
            notch_direction => c.ea.los_gain.notch_direction,
            notch_depth_db => c.ea.los_gain.notch_depth_db,
            notch_width => c.ea.los_gain.notch_width,
            grid_x_min => c.grid.x_min,
            grid_x_max => c.grid.x_max,
            grid_y_min => c.grid.y_min,
            grid_y_max => c.grid.y_max,
            grid_step => c.grid.step,
            gamma => c.stopping.gamma,
            max_scatterers => c.stopping.max_scatterers,
            refine_marks => c.refine_marks,
            sectors => c.n_sectors,
            sector_quantity => c.sector_quantity,
        }
        if let Some(peak) = self.mark_peak {
            c.ea.marks.peak = match peak {
                PeakSetting::Angle(a) => PeakDirection::Fixed(a),
                PeakSetting::Mode(m) if m == "from_mean" => PeakDirection::FromMean,
                PeakSetting::Mode(m) => {
                    return Err(CampaignError::Config(format!("mark_peak must be \"from_mean\" or an angle, got {m:?}")))
                }
            };
        }
        if let Some(planted) = self.planted {
            c.planted = planted
                .iter()
                .map(|&[x, y, b]| PlantedScatterer {
                    position: Point2::new(x, y),
                    base_magnitude: b,
                })
                .collect();
        }
        c.validate()?;
        Ok(c)
    }
}
