//! The detector: per-point feature MLP, channel gating, superpoint pooling,
//! self-attention encoder, box/class heads, matched loss, and training.

pub mod boxes;
pub mod encoder;
pub mod linear;
pub mod matching;
pub mod params;
pub mod pipeline;
pub mod train;

pub use boxes::{diou_loss, diou_loss_grad, iou_3d};
pub use encoder::{encoder_forward, softmax_rows, EncoderBlock};
pub use linear::{Linear, Mlp};
pub use matching::{match_predictions, min_cost_assignment, pairing_costs};
pub use params::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
pub use pipeline::{
    detect, forward, loss_and_grads, loss_only, match_scene, ForwardPass, LossBreakdown, ScenePrep,
};
pub use train::{train_toy, TrainOptions, TrainReport};
