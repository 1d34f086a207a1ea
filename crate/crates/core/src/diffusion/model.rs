use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::mmd::{mmd, mmd_with_grad};
use crate::diffusion::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::nn::params::impl_params;
use crate::nn::{dropout_mask, sinusoidal_embedding, BiGru, BiGruCache, Linear};

/// Bidirectional GRU read out from its final states to the code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxEncoder {
    pub rnn: BiGru,
    pub readout: Linear,
}

impl_params!(AuxEncoder { rnn, readout });

pub struct EncoderCache {
    rnn: BiGruCache,
    features: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl AuxEncoder {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        Self {
            rnn: BiGru::new(channels, hidden, rng),
            readout: Linear::new(2 * hidden, latent, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.readout.output_size()
    }

    /// Codes `(B, L)` for a time-major batch `(T, B, N)`. `mask` is an
    /// optional dropout mask on the `(B, 2H)` final-state features.
    pub fn forward(&self, x: ArrayView3<f64>, mask: Option<Array2<f64>>) -> Result<(Array2<f64>, EncoderCache)> {
        if x.dim().2 != self.rnn.input_size() {
            return Err(Error::shape("infer_code", self.rnn.input_size(), x.dim().2));
        }
        let (mut features, rnn) = self.rnn.encode_final(x)?;
        if let Some(m) = &mask {
            features *= m;
        }
        let codes = self.readout.forward(features.view());
        Ok((codes, EncoderCache { rnn, features, mask }))
    }

    pub fn backward(&self, cache: &EncoderCache, d_codes: ArrayView2<f64>, grads: &mut AuxEncoder) {
        let mut d_feat = self.readout.backward(cache.features.view(), d_codes, &mut grads.readout);
        if let Some(m) = &cache.mask {
            d_feat *= m;
        }
        self.rnn.backward_final(&cache.rnn, d_feat.view(), &mut grads.rnn, false);
    }
}

/// Bidirectional GRU over `[x_t; c; posemb(i)]` with a per-bin readout to the
/// noise estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePredictor {
    pub rnn: BiGru,
    pub readout: Linear,
    pub channels: usize,
    pub latent: usize,
    pub embedding_size: usize,
}

impl_params!(NoisePredictor { rnn, readout });

pub struct PredictorCache {
    rnn: BiGruCache,
    /// `(T * B, 2H)` after dropout.
    features: Array2<f64>,
    mask: Option<Array3<f64>>,
    dims: (usize, usize),
}

impl NoisePredictor {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        latent: usize,
        embedding_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            rnn: BiGru::new(channels + latent + embedding_size, hidden, rng),
            readout: Linear::new(2 * hidden, channels, rng),
            channels,
            latent,
            embedding_size,
        }
    }

    fn inputs(&self, x_noisy: ArrayView3<f64>, steps: &[usize], codes: ArrayView2<f64>) -> Result<Array3<f64>> {
        let (t_len, batch, n) = x_noisy.dim();
        if n != self.channels {
            return Err(Error::shape("predict_noise", self.channels, n));
        }
        if codes.dim() != (batch, self.latent) {
            return Err(Error::shape(
                "predict_noise",
                format!("codes ({batch}, {})", self.latent),
                format!("{:?}", codes.dim()),
            ));
        }
        if steps.len() != batch {
            return Err(Error::shape("predict_noise", batch, steps.len()));
        }
        let d = n + self.latent + self.embedding_size;
        let mut inp = Array3::zeros((t_len, batch, d));
        inp.slice_mut(s![.., .., ..n]).assign(&x_noisy);
        for (b, &i) in steps.iter().enumerate() {
            let emb = sinusoidal_embedding(i, self.embedding_size);
            let mut tail = inp.slice_mut(s![.., b, n..]);
            for mut row in tail.rows_mut() {
                row.slice_mut(s![..self.latent]).assign(&codes.row(b));
                row.slice_mut(s![self.latent..]).assign(&emb);
            }
        }
        Ok(inp)
    }

    /// Noise estimate `(T, B, N)` for noisy windows at per-trial steps.
    pub fn forward(
        &self,
        x_noisy: ArrayView3<f64>,
        steps: &[usize],
        codes: ArrayView2<f64>,
        mask: Option<Array3<f64>>,
    ) -> Result<(Array3<f64>, PredictorCache)> {
        let (t_len, batch, n) = x_noisy.dim();
        let inp = self.inputs(x_noisy, steps, codes)?;
        let (hf, hb, rnn) = self.rnn.forward(inp.view())?;
        let mut feat = concatenate(Axis(2), &[hf.view(), hb.view()]).expect("same leading dims");
        if let Some(m) = &mask {
            feat *= m;
        }
        let features = feat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_len * batch, 2 * self.rnn.hidden_size()))
            .expect("contiguous");
        let eps = self
            .readout
            .forward(features.view())
            .into_shape_with_order((t_len, batch, n))
            .expect("contiguous");
        let cache = PredictorCache {
            rnn,
            features,
            mask,
            dims: (t_len, batch),
        };
        Ok((eps, cache))
    }

    /// Backpropagate `dL/d eps_hat`; returns `dL/dc`.
    pub fn backward(&self, cache: &PredictorCache, d_eps: ArrayView3<f64>, grads: &mut NoisePredictor) -> Array2<f64> {
        let (t_len, batch) = cache.dims;
        let hid = self.rnn.hidden_size();
        let d_flat = d_eps.to_shape((t_len * batch, self.channels)).expect("reshape");
        let mut d_feat = self
            .readout
            .backward(cache.features.view(), d_flat.view(), &mut grads.readout)
            .into_shape_with_order((t_len, batch, 2 * hid))
            .expect("contiguous");
        if let Some(m) = &cache.mask {
            d_feat *= m;
        }
        let dhf = d_feat.slice(s![.., .., ..hid]);
        let dhb = d_feat.slice(s![.., .., hid..]);
        let dx = self
            .rnn
            .backward(&cache.rnn, dhf, dhb, &mut grads.rnn, true)
            .expect("input gradient requested");
        dx.slice(s![.., .., self.channels..self.channels + self.latent])
            .sum_axis(Axis(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnocchiParams {
    pub encoder: AuxEncoder,
    pub predictor: NoisePredictor,
}

impl_params!(GnocchiParams { encoder, predictor });

impl GnocchiParams {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        latent: usize,
        encoder_hidden: usize,
        predictor_hidden: usize,
        embedding_size: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder: AuxEncoder::new(channels, encoder_hidden, latent, rng),
            predictor: NoisePredictor::new(channels, latent, embedding_size, predictor_hidden, rng),
        }
    }

    /// Same architecture, every parameter zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        crate::nn::Params::fill(&mut z, 0.0);
        z
    }

    pub fn channels(&self) -> usize {
        self.predictor.channels
    }

    pub fn latent_dim(&self) -> usize {
        self.predictor.latent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub score: f64,
    pub recon: f64,
    pub mmd_alpha: f64,
    pub mmd_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            score: 0.7,
            recon: 0.3,
            mmd_alpha: -0.5,
            mmd_lambda: 100.0,
        }
    }
}

impl LossWeights {
    /// Coefficient on the MMD term for a batch of `batch` codes, InfoVAE
    /// style: `(alpha + lambda - 1) / (batch (batch - 1))`.
    pub fn mmd_weight(&self, batch: usize) -> f64 {
        (self.mmd_alpha + self.mmd_lambda - 1.0) / (batch * batch.saturating_sub(1)).max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GnocchiLosses {
    pub score: f64,
    pub recon: f64,
    pub mmd: f64,
    pub total: f64,
}

/// Everything random in one training step, drawn up front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct StepDraws {
    /// Diffusion step per trial, 1-based.
    pub steps: Vec<usize>,
    /// `(T, B, N)`
    pub eps: Array3<f64>,
    /// Prior draws compared with the codes, `(B, L)`.
    pub prior: Array2<f64>,
    pub encoder_mask: Option<Array2<f64>>,
    pub predictor_mask: Option<Array3<f64>>,
}

impl StepDraws {
    pub fn sample<R: Rng + ?Sized>(
        params: &GnocchiParams,
        sched: &DiffusionSchedule,
        dims: (usize, usize),
        dropout: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let (t_len, batch) = dims;
        let n = params.channels();
        let steps = (0..batch).map(|_| rng.random_range(1..=sched.n_steps())).collect();
        let eps = Array3::from_shape_simple_fn((t_len, batch, n), || StandardNormal.sample(rng));
        let prior = Array2::from_shape_simple_fn((batch, params.latent_dim()), || StandardNormal.sample(rng));
        let he = params.encoder.rnn.hidden_size();
        let hp = params.predictor.rnn.hidden_size();
        let encoder_mask = (dropout.0 > 0.0).then(|| dropout_mask((batch, 2 * he), dropout.0, rng));
        let predictor_mask = (dropout.1 > 0.0).then(|| dropout_mask((t_len, batch, 2 * hp), dropout.1, rng));
        Self {
            steps,
            eps,
            prior,
            encoder_mask,
            predictor_mask,
        }
    }
}

fn noisy_batch(sched: &DiffusionSchedule, x0: ArrayView3<f64>, draws: &StepDraws) -> Array3<f64> {
    let mut xt = x0.to_owned();
    for (b, &i) in draws.steps.iter().enumerate() {
        let (a, s) = sched.coefficients(i);
        let mut lane = xt.slice_mut(s![.., b, ..]);
        lane *= a;
        lane.scaled_add(s, &draws.eps.slice(s![.., b, ..]));
    }
    xt
}

struct Forward {
    losses: GnocchiLosses,
    codes: Array2<f64>,
    enc: EncoderCache,
    eps_hat: Array3<f64>,
    pred: PredictorCache,
    x_noisy: Array3<f64>,
}

fn forward(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    weights: &LossWeights,
    x0: ArrayView3<f64>,
    draws: &StepDraws,
) -> Result<Forward> {
    let (t_len, batch, n) = x0.dim();
    if draws.eps.dim() != (t_len, batch, n) || draws.steps.len() != batch {
        return Err(Error::shape("training_step", format!("{:?}", x0.dim()), format!("{:?}", draws.eps.dim())));
    }
    let (codes, enc) = params.encoder.forward(x0, draws.encoder_mask.clone())?;
    let x_noisy = noisy_batch(sched, x0, draws);
    let (eps_hat, pred) =
        params
            .predictor
            .forward(x_noisy.view(), &draws.steps, codes.view(), draws.predictor_mask.clone())?;
    let m = (t_len * batch * n) as f64;
    let mut score = 0.0;
    let mut recon = 0.0;
    for (b, &i) in draws.steps.iter().enumerate() {
        let (a, s) = sched.coefficients(i);
        for t in 0..t_len {
            for c in 0..n {
                let e = eps_hat[[t, b, c]];
                score += (draws.eps[[t, b, c]] - e).powi(2);
                let x_hat = (x_noisy[[t, b, c]] - s * e) / a;
                recon += (x0[[t, b, c]] - x_hat).powi(2);
            }
        }
    }
    score /= m;
    recon /= m;
    let mmd_val = mmd(codes.view(), draws.prior.view(), bandwidth_sq(params.latent_dim()));
    let total = weights.score * score + weights.recon * recon + weights.mmd_weight(codes.nrows()) * mmd_val;
    Ok(Forward {
        losses: GnocchiLosses {
            score,
            recon,
            mmd: mmd_val,
            total,
        },
        codes,
        enc,
        eps_hat,
        pred,
        x_noisy,
    })
}

/// RBF bandwidth used for the code regulariser: `sigma^2 = 2 L`.
pub fn bandwidth_sq(latent: usize) -> f64 {
    2.0 * latent as f64
}

/// Losses only, no gradients.
pub fn evaluate_loss(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    weights: &LossWeights,
    x0: ArrayView3<f64>,
    draws: &StepDraws,
) -> Result<GnocchiLosses> {
    Ok(forward(params, sched, weights, x0, draws)?.losses)
}

/// Weighted score + reconstruction + MMD loss and its gradient.
pub fn loss_and_grad(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    weights: &LossWeights,
    x0: ArrayView3<f64>,
    draws: &StepDraws,
) -> Result<(GnocchiLosses, GnocchiParams)> {
    let f = forward(params, sched, weights, x0, draws)?;
    if !f.losses.total.is_finite() {
        return Err(Error::NonFinite {
            context: format!("training loss {:?}", f.losses),
        });
    }
    let (t_len, batch, n) = x0.dim();
    let m = (t_len * batch * n) as f64;
    let mut d_eps = Array3::zeros((t_len, batch, n));
    for (b, &i) in draws.steps.iter().enumerate() {
        let (a, s) = sched.coefficients(i);
        for t in 0..t_len {
            for c in 0..n {
                let e = f.eps_hat[[t, b, c]];
                let x_hat = (f.x_noisy[[t, b, c]] - s * e) / a;
                d_eps[[t, b, c]] = 2.0 / m
                    * (weights.score * (e - draws.eps[[t, b, c]]) + weights.recon * (x0[[t, b, c]] - x_hat) * s / a);
            }
        }
    }
    let mut grads = params.zeros_like();
    let mut d_codes = params.predictor.backward(&f.pred, d_eps.view(), &mut grads.predictor);
    let (_, g_mmd) = mmd_with_grad(f.codes.view(), draws.prior.view(), bandwidth_sq(params.latent_dim()));
    d_codes.scaled_add(weights.mmd_weight(f.codes.nrows()), &g_mmd);
    params.encoder.backward(&f.enc, d_codes.view(), &mut grads.encoder);
    Ok((f.losses, grads))
}

/// Draw a training step's randomness from `rng`, then return losses and
/// gradients.
pub fn training_step<R: Rng + ?Sized>(
    x0: ArrayView3<f64>,
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    weights: &LossWeights,
    dropout: (f64, f64),
    rng: &mut R,
) -> Result<(GnocchiLosses, GnocchiParams)> {
    let (t_len, batch, _) = x0.dim();
    let draws = StepDraws::sample(params, sched, (t_len, batch), dropout, rng);
    loss_and_grad(params, sched, weights, x0, &draws)
}

/// Deterministic codes `(B, L)` for a time-major batch.
pub fn infer_codes(params: &GnocchiParams, x: ArrayView3<f64>) -> Result<Array2<f64>> {
    Ok(params.encoder.forward(x, None)?.0)
}

/// Ancestral reverse diffusion from white noise, conditioned on `codes (B, L)`.
/// Returns `(T, B, N)` in the model's (normalised) units.
pub fn sample<R: Rng + ?Sized>(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    codes: ArrayView2<f64>,
    n_bins: usize,
    rng: &mut R,
) -> Result<Array3<f64>> {
    reverse_process(params, sched, codes, n_bins, rng, false)
}

/// Like [`sample`], but every row sees the same noise, so rows differ only
/// through their codes.
pub fn sample_shared_noise<R: Rng + ?Sized>(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    codes: ArrayView2<f64>,
    n_bins: usize,
    rng: &mut R,
) -> Result<Array3<f64>> {
    reverse_process(params, sched, codes, n_bins, rng, true)
}

fn reverse_process<R: Rng + ?Sized>(
    params: &GnocchiParams,
    sched: &DiffusionSchedule,
    codes: ArrayView2<f64>,
    n_bins: usize,
    rng: &mut R,
    shared: bool,
) -> Result<Array3<f64>> {
    let batch = codes.nrows();
    let n = params.channels();
    if codes.ncols() != params.latent_dim() {
        return Err(Error::shape("sample", params.latent_dim(), codes.ncols()));
    }
    let noise = |rng: &mut R| -> Array3<f64> {
        let lanes = if shared { 1 } else { batch };
        let z = Array3::from_shape_simple_fn((n_bins, lanes, n), || StandardNormal.sample(rng));
        z.broadcast((n_bins, batch, n)).expect("broadcast").to_owned()
    };
    let mut x = noise(rng);
    for i in (1..=sched.n_steps()).rev() {
        let steps = vec![i; batch];
        let (eps_hat, _) = params.predictor.forward(x.view(), &steps, codes, None)?;
        let beta = sched.beta(i);
        let coef = beta / (1.0 - sched.alpha_bar(i)).sqrt();
        let inv_sqrt_alpha = 1.0 / sched.alpha(i).sqrt();
        x.scaled_add(-coef, &eps_hat);
        x *= inv_sqrt_alpha;
        if i > 1 {
            x.scaled_add(beta.sqrt(), &noise(rng));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("reverse diffusion at step {i}"),
            });
        }
    }
    Ok(x)
}

/// Single-window convenience wrappers over `(T, N)` arrays.
pub fn infer_code(params: &GnocchiParams, window: ArrayView2<f64>) -> Result<Array1<f64>> {
    let (t_len, n) = window.dim();
    let x = window.to_shape((t_len, 1, n)).expect("reshape");
    Ok(infer_codes(params, x.view())?.row(0).to_owned())
}
