//! Sequence assembly, loss, Adam and the early-stopping training loop.

pub mod adam;
pub mod loss;
pub mod sequences;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use loss::{cross_entropy_loss, mean_cross_entropy};
pub use sequences::{make_sequences, SequenceBuild, DEFAULT_SEQUENCE_LEN};
pub use trainer::{
    evaluate_loss, train, train_with_progress, validation_split, EarlyStopping, EpochRecord, StopReason, TrainConfig,
    TrainLog, TrainOutcome,
};
