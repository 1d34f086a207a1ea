mod model;
mod train;

pub use model::{
    coordinated_dropout_mask, evaluate_loss, kl_to_prior, loss_and_grad, mean_code_norm, reconstruct, IcPrior,
    LfadsDraws, LfadsLosses, LfadsParams,
};
pub use train::{train_lfads, LfadsConfig, LfadsLog, LfadsModel};
