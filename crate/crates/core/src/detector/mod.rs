//! A compact anchor-free detector assembling the attention and upsampling
//! blocks, with its loss, optimizer, training loop and evaluation.

pub mod config;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use config::{AdamConfig, BoxLossKind, DeepBlock, DetectorConfig, EvalConfig, LossWeights, Upsampler};
pub use eval::{decode_head, evaluate, ground_truths, predict};
pub use loss::{assign_targets, compute_loss, decode_box, encode_box, LossBreakdown, LossConfig, Target};
pub use model::{detector_macs, DeepStage, Detector, ForwardCache, NeckUpsample, Section};
pub use optim::Adam;
pub use train::{batch_input, describe, train, train_step, EpochMetrics, Sample, TrainOutcome};
