//! Joint-angle kinematics, repetition segmentation and crossed random-effects
//! meta-regression for resistance-training range-of-motion studies.
//!
//! Every numeric routine is generic over [`Real`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod config;
pub mod error;
pub mod inference;
pub mod kinematics;
pub mod landmark_io;
pub mod linalg;
pub mod meta;
pub mod model;
pub mod num;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod segmentation;
pub mod set_metrics;
pub mod signal;
pub mod stats;
pub mod synth;
pub mod tables;

pub use error::{Error, Result};
pub use num::Real;

pub type LandmarkSeries = model::LandmarkSeries<f64>;
pub type LandmarkFrame = model::LandmarkFrame<f64>;
pub type AngleSeries = kinematics::AngleSeries<f64>;
pub type SmoothingConfig = signal::SmoothingConfig<f64>;
pub type DetectionConfig = segmentation::DetectionConfig<f64>;
pub type Repetition = segmentation::Repetition<f64>;
pub type Detection = segmentation::Detection<f64>;
pub type SetSummary = set_metrics::SetSummary<f64>;
pub type MetaDataset = meta::MetaDataset<f64>;
pub type ModelFit = meta::ModelFit<f64>;
pub type ModelReport = meta::ModelReport<f64>;
pub type LrtResult = inference::LrtResult<f64>;
pub type ContrastResult = inference::ContrastResult<f64>;
pub type PercentRomResult = inference::PercentRomResult<f64>;
pub type InferenceReport = inference::InferenceReport<f64>;
pub type SignalSpec = synth::SignalSpec<f64>;
pub type MetaSimParams = synth::MetaSimParams<f64>;
pub type DesignShape = synth::DesignShape<f64>;
