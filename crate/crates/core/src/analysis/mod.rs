mod metrics;
mod regression;
mod report;
mod stats;

pub use metrics::{
    axis_orthogonality, code_snr, finite_mean, random_orthogonality_reference, recon_r2, trajectory_features,
    unintended_movement, ENDPOINT_BINS,
};
pub use regression::{ridge_fit, NavigationMap, PositionDecoder, START_X, START_Y, TARGET_X, TARGET_Y};
pub use report::MetricReport;
pub use stats::{gaussian_smooth, paired_t_test, pca_project, Pca, PairedTTest};
