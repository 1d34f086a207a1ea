//! Ground-truth data: a GRU controller trained to make planar reaches with a
//! muscle-driven arm, whose hidden states become the "recorded" population.

mod arm;
mod controller;
mod dataset;
mod task;

pub use arm::{ArmAdjoint, ArmParams, ArmState, ArmTrace, StepFlags, N_JOINTS, N_MUSCLES};
pub use controller::{
    batch_loss_and_grad, final_errors, observation, rollout, train_controller, validation_trials, ControllerConfig,
    ControllerLog, ControllerPolicy, Rollout, OBS_DIM,
};
pub use dataset::{
    build_dataset, is_heldout_target, split_heldout, ChannelScaler, DatasetConfig, Split, TrialDataset, TrialMeta,
    N_BEHAVIOR,
};
pub use task::{make_trial, task_loss, Grid, GridIndex, TaskLoss, TimingRule, TrialSpec};
