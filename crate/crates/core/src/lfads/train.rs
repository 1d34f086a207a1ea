use log::{debug, info};
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfads::model::{evaluate_loss, loss_and_grad, IcPrior, LfadsDraws, LfadsLosses, LfadsParams};
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::synth::{ChannelScaler, TrialDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfadsConfig {
    pub ic_encoder_dim: usize,
    pub ic_dim: usize,
    pub generator_dim: usize,
    pub factor_dim: usize,
    pub coordinated_dropout_rate: f64,
    pub ic_prior_mean: f64,
    pub ic_prior_variance: f64,
    pub dropout: f64,
    pub cell_clip: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub kl_ic_weight: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for LfadsConfig {
    fn default() -> Self {
        Self {
            ic_encoder_dim: 100,
            ic_dim: 5,
            generator_dim: 100,
            factor_dim: 40,
            coordinated_dropout_rate: 0.3,
            ic_prior_mean: 0.0,
            ic_prior_variance: 0.1,
            dropout: 0.02,
            cell_clip: 5.0,
            learning_rate: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weight_decay: 0.0,
            kl_ic_weight: 1e-5,
            batch_size: 64,
            max_epochs: 2000,
            patience: 100,
            grad_clip: 200.0,
            seed: 0,
        }
    }
}

impl LfadsConfig {
    pub fn prior(&self) -> IcPrior {
        IcPrior {
            mean: self.ic_prior_mean,
            variance: self.ic_prior_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("train_lfads", reason.to_string()));
        if self.ic_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("ic_dim, batch_size and max_epochs must be positive");
        }
        if self.ic_prior_variance <= 0.0 {
            return bad("prior variance must be positive");
        }
        if !(0.0..1.0).contains(&self.coordinated_dropout_rate) || !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout rates must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LfadsLog {
    pub train: Vec<LfadsLosses>,
    /// Full-input, posterior-mean losses on the validation split.
    pub valid: Vec<LfadsLosses>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfadsModel {
    pub config: LfadsConfig,
    pub params: LfadsParams,
    pub scaler: ChannelScaler,
    pub n_bins: usize,
}

const CHUNK: usize = 256;

impl LfadsModel {
    pub fn channels(&self) -> usize {
        self.params.channels()
    }

    pub fn latent_dim(&self) -> usize {
        self.params.ic_dim()
    }

    fn normalised(&self, ds: &TrialDataset, idx: &[usize]) -> Array3<f64> {
        let mut x = ds.batch(idx);
        self.scaler.apply(&mut x);
        x
    }

    /// Posterior means `(trials, L)`; these are the model's codes.
    pub fn codes(&self, ds: &TrialDataset) -> Result<Array2<f64>> {
        if ds.n_channels() != self.channels() {
            return Err(Error::shape("encode_ic", self.channels(), ds.n_channels()));
        }
        let mut out = Array2::zeros((ds.len(), self.latent_dim()));
        let idx: Vec<usize> = (0..ds.len()).collect();
        for (k, chunk) in idx.chunks(CHUNK).enumerate() {
            let (mu, _) = self.params.encode_ic(self.normalised(ds, chunk).view())?;
            out.slice_mut(s![k * CHUNK..k * CHUNK + chunk.len(), ..]).assign(&mu);
        }
        Ok(out)
    }

    /// Generator output per initial condition, trial-major `(B, bins, N)` in
    /// data units.
    pub fn generate(&self, z0: ArrayView2<f64>) -> Result<Array3<f64>> {
        let (_, mut y) = self.params.generate(z0, self.n_bins)?;
        self.scaler.invert(&mut y);
        Ok(y.permuted_axes([1, 0, 2]).as_standard_layout().into_owned())
    }
}

pub fn train_lfads(train: &TrialDataset, valid: &TrialDataset, cfg: &LfadsConfig) -> Result<(LfadsModel, LfadsLog)> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::invalid("train_lfads", "empty train or validation split"));
    }
    let prior = cfg.prior();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = LfadsParams::new(
        train.n_channels(),
        cfg.ic_encoder_dim,
        cfg.ic_dim,
        cfg.generator_dim,
        cfg.factor_dim,
        cfg.cell_clip,
        &mut rng,
    );
    let mut model = LfadsModel {
        config: cfg.clone(),
        params,
        scaler: ChannelScaler::fit(train),
        n_bins: train.n_bins(),
    };
    let train_all: Vec<usize> = (0..train.len()).collect();
    let x_train = model.normalised(train, &train_all);
    let valid_all: Vec<usize> = (0..valid.len()).collect();
    let x_valid = model.normalised(valid, &valid_all);
    let valid_draws = LfadsDraws::deterministic(&model.params, (valid.n_bins(), valid.len()));

    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut log = LfadsLog::default();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut order = train_all.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = LfadsLosses::default();
        let mut n_batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let x = x_train.select(Axis(1), idx);
            let draws = LfadsDraws::sample(
                &model.params,
                (x.dim().0, idx.len()),
                cfg.coordinated_dropout_rate,
                cfg.dropout,
                &mut rng,
            );
            let (losses, mut grads) =
                loss_and_grad(&model.params, x.view(), &draws, cfg.kl_ic_weight, &prior).map_err(|e| {
                    Error::Diverged {
                        seed: cfg.seed,
                        epoch,
                        reason: e.to_string(),
                    }
                })?;
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            opt.step(&mut model.params, &grads)?;
            acc.mse += losses.mse;
            acc.kl += losses.kl;
            acc.total += losses.total;
            n_batches += 1;
        }
        let k = n_batches as f64;
        log.train.push(LfadsLosses {
            mse: acc.mse / k,
            kl: acc.kl / k,
            total: acc.total / k,
        });
        let v = evaluate_loss(&model.params, x_valid.view(), &valid_draws, cfg.kl_ic_weight, &prior)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged {
                seed: cfg.seed,
                epoch,
                reason: format!("validation loss {v:?}"),
            });
        }
        log.valid.push(v);
        debug!("lfads epoch {epoch}: train {:.4} valid {:.4}", acc.total / k, v.total);
        if v.total < best.0 {
            best = (v.total, model.params.clone());
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    info!(
        "lfads: {} epochs, best valid total {:.4} at epoch {}",
        log.valid.len(),
        best.0,
        log.best_epoch
    );
    model.params = best.1;
    Ok((model, log))
}
