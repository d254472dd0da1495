//! G-softmax: a softmax head augmented with learned per-class Gaussian
//! feature distributions, its multi-label variants, and the tooling to train
//! and analyse small models with it.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod multilabel;
pub mod predictor;
pub mod schedule;
pub mod special;
pub mod train;

pub use analysis::{EmpiricalGaussian, FeatureRow, ImpostorMode, SeparabilityReport, StdDivisor};
pub use error::{Error, ErrorKind, Result};
pub use experiment::{ExperimentConfig, ExperimentSummary};
pub use metrics::{ConfusionCounts, PrfMetrics, RankedPredictions, ZeroPolicy};
pub use multilabel::{DualFeatureVector, DualPredictorParams};
pub use predictor::{
    gsoftmax_backward, gsoftmax_forward, softmax, Backward, ClassGaussian, GradBundle, Prediction,
    PredictorParams,
};
pub use schedule::{Schedule, ScheduleSpec};
pub use special::GaussianParams;
pub use train::{Dataset, LossMode, Model};
