//! End-to-end recipes shared by the command line and the acceptance suite.

mod evaluate;
mod world;

pub use evaluate::{
    code_snr_report, compare_models, conditional_generation, cv_orthogonality, evaluate_model, heldout_errors, model_snr,
    navigation_sweeps, recon_quality, unconditional_span, CodeModel, Evaluation, GenerationCheck,
};
pub use world::{build_world, fit_decoder, heldout_split, train_pair, World};
