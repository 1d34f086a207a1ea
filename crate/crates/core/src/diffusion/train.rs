use log::{debug, info};
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{
    evaluate_loss, infer_codes, loss_and_grad, sample, sample_shared_noise, GnocchiLosses, GnocchiParams, LossWeights, StepDraws,
};
use crate::diffusion::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::synth::{ChannelScaler, TrialDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnocchiConfig {
    pub latent_dim: usize,
    pub mmd_alpha: f64,
    pub mmd_lambda: f64,
    pub score_loss_weight: f64,
    pub recon_loss_weight: f64,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub aux_encoder_hidden_size: usize,
    pub aux_encoder_dropout: f64,
    pub aux_encoder_learning_rate: f64,
    pub aux_encoder_weight_decay: f64,
    pub noise_predictor_hidden_size: usize,
    pub noise_predictor_dropout: f64,
    pub noise_predictor_learning_rate: f64,
    pub noise_predictor_weight_decay: f64,
    pub positional_embedding_size: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for GnocchiConfig {
    fn default() -> Self {
        Self {
            latent_dim: 5,
            mmd_alpha: -0.5,
            mmd_lambda: 100.0,
            score_loss_weight: 0.7,
            recon_loss_weight: 0.3,
            diffusion_steps: 200,
            beta_min: 0.001,
            beta_max: 0.01,
            aux_encoder_hidden_size: 64,
            aux_encoder_dropout: 0.09,
            aux_encoder_learning_rate: 5e-4,
            aux_encoder_weight_decay: 1e-6,
            noise_predictor_hidden_size: 256,
            noise_predictor_dropout: 0.03,
            noise_predictor_learning_rate: 5e-4,
            noise_predictor_weight_decay: 0.0,
            positional_embedding_size: 5,
            batch_size: 64,
            max_epochs: 2000,
            patience: 100,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl GnocchiConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            score: self.score_loss_weight,
            recon: self.recon_loss_weight,
            mmd_alpha: self.mmd_alpha,
            mmd_lambda: self.mmd_lambda,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_min, self.beta_max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("train_gnocchi", reason.to_string()));
        if self.latent_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("latent_dim, batch_size and max_epochs must be positive");
        }
        if !(self.score_loss_weight > 0.0 && self.recon_loss_weight > 0.0) {
            return bad("score and recon weights must be positive");
        }
        for p in [self.aux_encoder_dropout, self.noise_predictor_dropout] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must be in [0, 1)");
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn init_params<R: Rng + ?Sized>(&self, channels: usize, rng: &mut R) -> GnocchiParams {
        GnocchiParams::new(
            channels,
            self.latent_dim,
            self.aux_encoder_hidden_size,
            self.noise_predictor_hidden_size,
            self.positional_embedding_size,
            rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean minibatch losses per epoch.
    pub train: Vec<GnocchiLosses>,
    /// Validation losses per epoch, under fixed draws.
    pub valid: Vec<GnocchiLosses>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// A trained model together with its input normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnocchiModel {
    pub config: GnocchiConfig,
    pub params: GnocchiParams,
    pub scaler: ChannelScaler,
    pub schedule: DiffusionSchedule,
    pub n_bins: usize,
}

const CHUNK: usize = 256;

impl GnocchiModel {
    pub fn channels(&self) -> usize {
        self.params.channels()
    }

    pub fn latent_dim(&self) -> usize {
        self.params.latent_dim()
    }

    fn normalised(&self, ds: &TrialDataset, idx: &[usize]) -> Array3<f64> {
        let mut x = ds.batch(idx);
        self.scaler.apply(&mut x);
        x
    }

    /// Codes `(trials, L)` for every trial of a dataset.
    pub fn codes(&self, ds: &TrialDataset) -> Result<Array2<f64>> {
        if ds.n_channels() != self.channels() {
            return Err(Error::shape("infer_code", self.channels(), ds.n_channels()));
        }
        let mut out = Array2::zeros((ds.len(), self.latent_dim()));
        let idx: Vec<usize> = (0..ds.len()).collect();
        for (k, chunk) in idx.chunks(CHUNK).enumerate() {
            let c = infer_codes(&self.params, self.normalised(ds, chunk).view())?;
            out.slice_mut(s![k * CHUNK..k * CHUNK + chunk.len(), ..]).assign(&c);
        }
        Ok(out)
    }

    /// Code for one raw `(bins, channels)` window.
    pub fn code(&self, window: ArrayView2<f64>) -> Result<ndarray::Array1<f64>> {
        let (t_len, n) = window.dim();
        if n != self.channels() {
            return Err(Error::shape("infer_code", self.channels(), n));
        }
        let mut x = window.to_owned().into_shape_with_order((t_len, 1, n)).expect("contiguous");
        self.scaler.apply(&mut x);
        Ok(infer_codes(&self.params, x.view())?.row(0).to_owned())
    }

    /// Generate one window per code row. Returns trial-major `(B, bins, N)` in
    /// the units of the training data.
    pub fn generate<R: Rng + ?Sized>(&self, codes: ArrayView2<f64>, rng: &mut R) -> Result<Array3<f64>> {
        let x = sample(&self.params, &self.schedule, codes, self.n_bins, rng)?;
        Ok(self.to_trials(x))
    }

    /// [`GnocchiModel::generate`] with the same sampler noise for every row.
    pub fn generate_shared_noise<R: Rng + ?Sized>(&self, codes: ArrayView2<f64>, rng: &mut R) -> Result<Array3<f64>> {
        let x = sample_shared_noise(&self.params, &self.schedule, codes, self.n_bins, rng)?;
        Ok(self.to_trials(x))
    }

    fn to_trials(&self, mut x: Array3<f64>) -> Array3<f64> {
        self.scaler.invert(&mut x);
        x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
    }
}

/// Train on `train`, early-stopping on the validation total loss.
pub fn train_gnocchi(train: &TrialDataset, valid: &TrialDataset, cfg: &GnocchiConfig) -> Result<(GnocchiModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::invalid("train_gnocchi", "empty train or validation split"));
    }
    let sched = cfg.schedule()?;
    let weights = cfg.weights();
    let scaler = ChannelScaler::fit(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = cfg.init_params(train.n_channels(), &mut rng);
    let mut model = GnocchiModel {
        config: cfg.clone(),
        params,
        scaler,
        schedule: sched,
        n_bins: train.n_bins(),
    };
    let train_all: Vec<usize> = (0..train.len()).collect();
    let x_train = model.normalised(train, &train_all);
    let valid_all: Vec<usize> = (0..valid.len()).collect();
    let x_valid = model.normalised(valid, &valid_all);
    let valid_draws = StepDraws::sample(
        &model.params,
        &model.schedule,
        (valid.n_bins(), valid.len()),
        (0.0, 0.0),
        &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11d),
    );

    let enc_cfg = AdamConfig {
        lr: cfg.aux_encoder_learning_rate,
        weight_decay: cfg.aux_encoder_weight_decay,
        ..AdamConfig::default()
    };
    let pred_cfg = AdamConfig {
        lr: cfg.noise_predictor_learning_rate,
        weight_decay: cfg.noise_predictor_weight_decay,
        ..AdamConfig::default()
    };
    let mut enc_opt = Adam::new(&model.params.encoder, enc_cfg);
    let mut pred_opt = Adam::new(&model.params.predictor, pred_cfg);
    let dropout = (cfg.aux_encoder_dropout, cfg.noise_predictor_dropout);

    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut order = train_all.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = GnocchiLosses::default();
        let mut n_batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let x0 = x_train.select(Axis(1), idx);
            let draws = StepDraws::sample(&model.params, &model.schedule, (x0.dim().0, idx.len()), dropout, &mut rng);
            let (losses, mut grads) = loss_and_grad(&model.params, &model.schedule, &weights, x0.view(), &draws)
                .map_err(|e| Error::Diverged {
                    seed: cfg.seed,
                    epoch,
                    reason: e.to_string(),
                })?;
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            enc_opt.step(&mut model.params.encoder, &grads.encoder)?;
            pred_opt.step(&mut model.params.predictor, &grads.predictor)?;
            acc.score += losses.score;
            acc.recon += losses.recon;
            acc.mmd += losses.mmd;
            acc.total += losses.total;
            n_batches += 1;
        }
        let k = n_batches as f64;
        log.train.push(GnocchiLosses {
            score: acc.score / k,
            recon: acc.recon / k,
            mmd: acc.mmd / k,
            total: acc.total / k,
        });
        let v = evaluate_loss(&model.params, &model.schedule, &weights, x_valid.view(), &valid_draws)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged {
                seed: cfg.seed,
                epoch,
                reason: format!("validation loss {v:?}"),
            });
        }
        log.valid.push(v);
        debug!("gnocchi epoch {epoch}: train {:.4} valid {:.4}", acc.total / k, v.total);
        if v.total < best.0 {
            best = (v.total, model.params.clone());
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    info!(
        "gnocchi: {} epochs, best valid total {:.4} at epoch {}",
        log.valid.len(),
        best.0,
        log.best_epoch
    );
    model.params = best.1;
    Ok((model, log))
}
