//! Preparation, training, checkpoints and inference.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod predict;
pub mod prepare;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{MaskSource, Preset, TrainConfig, TranslatedSupervision};
pub use predict::{predict, Predictor};
pub use prepare::{prepare, CacheLayout, PrepareSummary};
pub use trainer::{read_loss_log, train, LossRow, Trainer};
