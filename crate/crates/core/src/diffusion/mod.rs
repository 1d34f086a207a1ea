mod mmd;
mod model;
mod schedule;
mod train;

pub use mmd::{mmd, mmd_with_grad, rbf_kernel};
pub use model::{
    bandwidth_sq, evaluate_loss, infer_code, infer_codes, loss_and_grad, sample, sample_shared_noise, training_step, AuxEncoder,
    GnocchiLosses, GnocchiParams, LossWeights, NoisePredictor, StepDraws,
};
pub use schedule::DiffusionSchedule;
pub use train::{train_gnocchi, GnocchiConfig, GnocchiModel, TrainLog};
