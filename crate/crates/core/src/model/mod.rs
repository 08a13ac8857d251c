//! Stacked LSTM classifier with optional additive attention pooling.

pub mod checkpoint;
pub mod network;
pub mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use network::{backward, backward_into, forward, forward_with_masks, predict, ForwardTrace, Mode, Prediction, SequenceInstance};
pub use params::{AttentionParams, LstmLayerParams, ModelConfig, ModelParams, Variant};
