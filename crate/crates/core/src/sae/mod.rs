//! Siamese convolutional auto-encoder trained from scratch.
//!
//! Two weight-sharing replicas encode patches from the same location in
//! different subjects; the loss adds both squared reconstruction errors and
//! subtracts `alpha` times the cosine similarity of the two latent codes.

pub mod adam;
pub mod layers;
pub mod model;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use layers::{LayerKind, LayerSpec, Mode, Tensor};
pub use model::{Architecture, BlockSpec, Gradients, Layer, LossOutput, SaeModel};
pub use train::{
    evaluate_loss, format_loss_trace, train_from, train_sae, EpochLoss, LazyPairs, PairSource, TrainConfig, TrainOutcome,
};
