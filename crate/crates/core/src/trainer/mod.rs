//! Losses, the optimiser, early stopping, checkpoints and the training loops.

mod adam;
mod checkpoint;
mod hyper;
mod losses;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{metadata_path, Checkpoint, CHECKPOINT_VERSION};
pub use hyper::{early_stop_check, Hyperparams};
pub use losses::{bce_with_logits, bce_with_logits_grad, dice_loss, dice_loss_grad, dice_loss_logits, sigmoid};
pub use train::{
    epoch_order, evaluate_stage1, evaluate_stage2, frozen_embeddings, predict_stage2, train_stage1, train_stage2,
    EpochRecord, Stage1Eval, Stage2Eval, TrainLog, TrainRun,
};
