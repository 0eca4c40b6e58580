//! Losses, class balancing, Adam, learning-rate schedules and the epoch loop.

mod adam;
mod balance;
mod loss;
mod schedule;
mod trainer;

pub use adam::AdamState;
pub use balance::{compute_class_weights, oversample};
pub use loss::{bce_loss, focal_loss, loss_on_tape, weighted_bce_loss, LossKind, LossSpec, PROB_CLAMP};
pub use schedule::{Decision, EarlyStopping, EarlyStoppingConfig, Plateau, PlateauConfig};
pub use trainer::{
    history_jsonl, predict_scores, stratified_split, train, train_with_progress, EpochLog, TrainConfig,
    TrainOutcome, TrainSummary,
};
