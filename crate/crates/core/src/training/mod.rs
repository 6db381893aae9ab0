//! Loss, optimizer, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::model_gradcheck;
pub use checkpoint::{Checkpoint, RngState, MAGIC, VERSION};
pub use loss::{bce_iou_loss, total_loss, TotalLoss, IOU_SMOOTH};
pub use trainer::{
    collate, evaluate_samples, read_log, train, train_step, EpochLog, TrainConfig, TrainOutcome, Trainer,
    BEST_CHECKPOINT, LAST_CHECKPOINT,
};
