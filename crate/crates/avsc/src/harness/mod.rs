//! Training loop, optimizer, metrics, checkpointing, experiment runners, and
//! weight projection export.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod projection;
pub mod report;
pub mod runners;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{AccuracyMode, Modality, RunConfig};
pub use metrics::Metrics;
pub use optimizer::{AdamW, AdamWConfig};
pub use train::{train, EpochRecord, TrainOutput};
