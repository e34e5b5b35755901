//! Extended-antenna channel model: simulation of UWB snapshots for an agent
//! antenna next to a human body, and greedy maximum-likelihood calibration
//! of the scattering points that model the body and antenna together.

pub mod campaign;
pub mod ea_model;
pub mod estimator;
pub mod geometry;
pub mod metrics;
pub mod waveform;
