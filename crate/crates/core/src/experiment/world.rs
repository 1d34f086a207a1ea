use log::info;

use crate::analysis::PositionDecoder;
use crate::diffusion::{train_gnocchi, GnocchiModel};
use crate::lfads::{train_lfads, LfadsModel};
use crate::error::Result;
use crate::io::ExperimentConfig;
use crate::synth::{
    build_dataset, split_heldout, train_controller, ArmParams, ControllerLog, ControllerPolicy, Split, TrialDataset,
};

/// A trained controller and the dataset recorded from it.
#[derive(Debug, Clone)]
pub struct World {
    pub arm: ArmParams,
    pub policy: ControllerPolicy,
    pub controller_log: ControllerLog,
    pub dataset: TrialDataset,
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    let arm = ArmParams::default();
    let (policy, controller_log) = train_controller(&arm, &cfg.grid, &cfg.timing, &cfg.controller)?;
    info!(
        "controller: validation final error {:.2} cm",
        100.0 * controller_log.validation_final_error
    );
    let dataset = build_dataset(&policy, &arm, &cfg.grid, &cfg.timing, &cfg.dataset)?;
    info!("dataset: {} trials", dataset.len());
    Ok(World {
        arm,
        policy,
        controller_log,
        dataset,
    })
}

/// Returns `(heldin, heldout)` datasets; `heldin` carries train/valid tags.
pub fn heldout_split(ds: &TrialDataset, cfg: &ExperimentConfig) -> (TrialDataset, TrialDataset) {
    split_heldout(ds, cfg.dataset.train_fraction, cfg.dataset.seed ^ 0x4e1d)
}

/// Ridge decoder from ground-truth activity to hand position, fit on the
/// training split.
pub fn fit_decoder(ds: &TrialDataset, alpha: f64) -> Result<PositionDecoder> {
    let train = ds.split(Split::Train);
    PositionDecoder::fit(train.activity_rows().view(), train.endpoint_rows().view(), alpha)
}

/// Trains one GNOCCHI and one LFADS-lite model on the train/valid tags of
/// `heldin`, both seeded with `offset` added to their configured seeds.
pub fn train_pair(heldin: &TrialDataset, cfg: &ExperimentConfig, offset: u64) -> Result<(GnocchiModel, LfadsModel)> {
    let (train, valid) = (heldin.split(Split::Train), heldin.split(Split::Valid));
    let mut g = cfg.gnocchi.clone();
    g.seed = g.seed.wrapping_add(offset);
    let (gm, glog) = train_gnocchi(&train, &valid, &g)?;
    info!("gnocchi seed {}: best epoch {} valid {:.4}", g.seed, glog.best_epoch, glog.valid[glog.best_epoch].total);
    let mut l = cfg.lfads.clone();
    l.seed = l.seed.wrapping_add(offset);
    let (lm, llog) = train_lfads(&train, &valid, &l)?;
    info!("lfads seed {}: best epoch {}", l.seed, llog.best_epoch);
    Ok((gm, lm))
}
