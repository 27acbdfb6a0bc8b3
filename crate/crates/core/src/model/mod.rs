//! The asymmetric siamese network, its loss, refinement stage, prediction
//! rules, test-time augmentation, the intuitive baseline and training.

mod asn;
mod baseline;
mod config;
mod gradcheck;
mod layers;
mod predict;
mod train;

pub use asn::{Asn, BranchWeights, ForwardOutputs, ATL_PREFIX};
pub use baseline::Baseline;
pub use config::ModelConfig;
pub use gradcheck::check_model;
pub use predict::{
    compose_prediction, intuitive_baseline, loss, ClassWeights, GroundTruth, SemanticChangePrediction,
};
pub use train::{
    evaluate, evaluate_baseline, refinement_weights, train_base, train_baseline, train_refinement, EpochHook,
    EpochLog, Stage, TrainOptions,
};

/// The six test-time scales.
pub const TTA_SCALES: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];
