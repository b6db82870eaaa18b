//! Self-distillation: a momentum teacher plus the robust solver label each
//! pair, and the student learns from those labels on rotated views.

mod loss;
mod schedule;
mod train;

pub use loss::{hardest_contrastive_loss, LossConfig, LossOutput};
pub use schedule::{cosine_alpha, ema_update, DistillSchedule, TeacherMode};
pub(crate) use train::{prepare, run_training, LabelSource};
pub use train::{
    augment_pair, describe, fpfh_bootstrap_labels, fpfh_radii, generate_pseudo_labels, train_loop, train_step,
    unsupervised_fmr, write_history, AugmentedPair, Bootstrap, EpochStats, LabelOutcome, PseudoLabel, Sgd,
    SkipReason, StepOutcome, TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests;
