//! Study-session dropout prediction for mobile learning logs.
//!
//! The pipeline: [`ingest`] parses activity logs, [`sessionizer`] splits each
//! user's stream into study sessions at an inactivity threshold and labels the
//! last interaction of every session, [`featureizer`] encodes interactions into
//! question-side and response-side features and fixed-length windows, [`model`]
//! is the masked encoder-decoder attention network, [`trainer`] fits it and
//! [`eval`] scores it by ROC-AUC. [`synthgen`] produces logs with a planted
//! dropout hazard for end-to-end checks.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod featureizer;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod sessionizer;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use featureizer::{Dataset, Feature, FeatureFrame, FeatureSet, TimeLimits, TrainingWindow, Vocab};
pub use ingest::{InteractionRecord, Split, SplitRatio, UserPartition};
pub use model::{Model, ModelConfig, ModelParams, ModelSpec};
pub use numerics::{Graph, Tensor};
pub use sessionizer::{SessionizedInteraction, SessionizedSequence};
pub use trainer::TrainConfig;
