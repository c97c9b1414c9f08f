//! Trajectory-level contrastive training: center bank, losses, optimizer and the epoch loop.

mod adam;
mod bank;
mod baseline;
mod eval;
mod loss;
mod train;

pub use adam::Adam;
pub use bank::{select_update_sample, TrajectoryCenterBank, UpdateStrategy};
pub use baseline::{cross_entropy, train_baseline, BaselineOutput};
pub use eval::{dump_embeddings, model_separation, separation_ratio, DumpRow};
pub use loss::{
    info_nce, tcl_loss, total_loss, ConstantDetectionLoss, DetectionLoss, InfoNce, LabeledView,
    TclOutput, TotalLoss, UncertaintyWeights,
};
pub use train::{
    batch_windows, initial_model, refresh_centers, train, train_with, FrameSet, FrameSource,
    LossRecord, TrainConfig, TrainOutput, TrainingFrame,
};
