use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::impl_params;
use crate::nn::{BiGru, BiGruCache, Gru, GruCache, Linear, Params};

/// Sequential autoencoder with an initial-condition posterior and an
/// input-free generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfadsParams {
    pub encoder: BiGru,
    pub ic_mean: Linear,
    pub ic_logvar: Linear,
    /// Initial condition to generator state.
    pub ic_to_gen: Linear,
    /// Fed a constant zero input; only its biases matter.
    pub generator: Gru,
    pub factors: Linear,
    pub output: Linear,
    /// Generator initial state is clamped to `[-cell_clip, cell_clip]`. GRU
    /// updates are convex combinations with `tanh` candidates, so later states
    /// stay inside the same box.
    pub cell_clip: f64,
}

impl_params!(LfadsParams {
    encoder,
    ic_mean,
    ic_logvar,
    ic_to_gen,
    generator,
    factors,
    output
});

/// Diagonal Gaussian prior on the initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcPrior {
    pub mean: f64,
    pub variance: f64,
}

impl Default for IcPrior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 0.1,
        }
    }
}

/// `KL(N(mu, var) || prior)` summed over dimensions.
pub fn kl_to_prior(mu: &[f64], var: &[f64], prior: &IcPrior) -> f64 {
    assert_eq!(mu.len(), var.len(), "kl_to_prior: dims differ");
    let v = prior.variance;
    mu.iter()
        .zip(var)
        .map(|(&m, &s)| 0.5 * ((s + (m - prior.mean).powi(2)) / v - 1.0 - (s / v).ln()))
        .sum()
}

impl LfadsParams {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        encoder_dim: usize,
        ic_dim: usize,
        generator_dim: usize,
        factor_dim: usize,
        cell_clip: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder: BiGru::new(channels, encoder_dim, rng),
            ic_mean: Linear::new(2 * encoder_dim, ic_dim, rng),
            ic_logvar: Linear::new(2 * encoder_dim, ic_dim, rng),
            ic_to_gen: Linear::new(ic_dim, generator_dim, rng),
            generator: Gru::new(1, generator_dim, rng),
            factors: Linear::new(generator_dim, factor_dim, rng),
            output: Linear::new(factor_dim, channels, rng),
            cell_clip,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn channels(&self) -> usize {
        self.output.output_size()
    }

    pub fn ic_dim(&self) -> usize {
        self.ic_mean.output_size()
    }

    /// Posterior mean and variance `(B, L)` for a time-major batch.
    pub fn encode_ic(&self, x: ArrayView3<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.dim().2 != self.channels() {
            return Err(Error::shape("encode_ic", self.channels(), x.dim().2));
        }
        let (feat, _) = self.encoder.encode_final(x)?;
        let mu = self.ic_mean.forward(feat.view());
        let var = self.ic_logvar.forward(feat.view()).mapv(f64::exp);
        Ok((mu, var))
    }

    /// Unroll the generator from `z0 (B, L)`. Returns `(factors, output)`,
    /// time-major `(T, B, F)` and `(T, B, N)`.
    pub fn generate(&self, z0: ArrayView2<f64>, n_bins: usize) -> Result<(Array3<f64>, Array3<f64>)> {
        if z0.ncols() != self.ic_dim() {
            return Err(Error::shape("generate", self.ic_dim(), z0.ncols()));
        }
        let g = self.unroll(z0, n_bins, None)?;
        Ok((g.factors, g.output))
    }

    fn unroll(&self, z: ArrayView2<f64>, n_bins: usize, mask: Option<&Array3<f64>>) -> Result<Unrolled> {
        let batch = z.nrows();
        let clip = self.cell_clip;
        let h0_pre = self.ic_to_gen.forward(z);
        let h0 = h0_pre.mapv(|v| v.clamp(-clip, clip));
        let zeros = Array3::zeros((n_bins, batch, 1));
        let (mut states, gen_cache) = self.generator.forward(zeros.view(), h0.view())?;
        if let Some(m) = mask {
            states *= m;
        }
        let gdim = self.generator.hidden_size();
        let states = states.into_shape_with_order((n_bins * batch, gdim)).expect("contiguous");
        let f = self.factors.forward(states.view());
        let y = self.output.forward(f.view());
        let nf = self.factors.output_size();
        let n = self.channels();
        Ok(Unrolled {
            h0_pre,
            gen_cache,
            states,
            factors_flat: f.clone(),
            factors: f.into_shape_with_order((n_bins, batch, nf)).expect("contiguous"),
            output: y.into_shape_with_order((n_bins, batch, n)).expect("contiguous"),
        })
    }
}

struct Unrolled {
    h0_pre: Array2<f64>,
    gen_cache: GruCache,
    /// `(T * B, G)` after dropout.
    states: Array2<f64>,
    factors_flat: Array2<f64>,
    factors: Array3<f64>,
    output: Array3<f64>,
}

/// Input mask (survivors scaled by `1 / (1 - rate)`) and the complementary
/// loss mask. With `rate == 0` the loss covers every entry.
pub fn coordinated_dropout_mask<R: Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize, usize),
    rate: f64,
) -> (Array3<f64>, Array3<f64>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return (Array3::ones(shape), Array3::ones(shape));
    }
    let keep = 1.0 / (1.0 - rate);
    let dropped = Array3::from_shape_simple_fn(shape, || rng.random::<f64>() < rate);
    (
        dropped.mapv(|d| if d { 0.0 } else { keep }),
        dropped.mapv(|d| if d { 1.0 } else { 0.0 }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LfadsLosses {
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
}

/// Randomness of one training step.
#[derive(Debug, Clone)]
pub struct LfadsDraws {
    pub input_mask: Array3<f64>,
    pub loss_mask: Array3<f64>,
    /// Reparameterisation noise `(B, L)`; `None` uses the posterior mean.
    pub ic_noise: Option<Array2<f64>>,
    /// Dropout on generator states, `(T, B, G)`.
    pub gen_mask: Option<Array3<f64>>,
}

impl LfadsDraws {
    pub fn sample<R: Rng + ?Sized>(
        params: &LfadsParams,
        dims: (usize, usize),
        cd_rate: f64,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let (t_len, batch) = dims;
        let (input_mask, loss_mask) = coordinated_dropout_mask(rng, (t_len, batch, params.channels()), cd_rate);
        let ic_noise = Some(Array2::from_shape_simple_fn((batch, params.ic_dim()), || {
            StandardNormal.sample(rng)
        }));
        let gdim = params.generator.hidden_size();
        let gen_mask = (dropout > 0.0).then(|| crate::nn::dropout_mask((t_len, batch, gdim), dropout, rng));
        Self {
            input_mask,
            loss_mask,
            ic_noise,
            gen_mask,
        }
    }

    /// No masking, no sampling: full reconstruction from the posterior mean.
    pub fn deterministic(params: &LfadsParams, dims: (usize, usize)) -> Self {
        let shape = (dims.0, dims.1, params.channels());
        Self {
            input_mask: Array3::ones(shape),
            loss_mask: Array3::ones(shape),
            ic_noise: None,
            gen_mask: None,
        }
    }
}

struct Forward {
    losses: LfadsLosses,
    enc_cache: BiGruCache,
    feat: Array2<f64>,
    mu: Array2<f64>,
    logvar: Array2<f64>,
    z: Array2<f64>,
    gen: Unrolled,
}

fn forward(params: &LfadsParams, x: ArrayView3<f64>, draws: &LfadsDraws, kl_weight: f64, prior: &IcPrior) -> Result<Forward> {
    let (t_len, batch, n) = x.dim();
    if n != params.channels() || draws.input_mask.dim() != x.dim() {
        return Err(Error::shape("lfads_loss", format!("{:?}", draws.input_mask.dim()), format!("{:?}", x.dim())));
    }
    let x_in = &x * &draws.input_mask;
    let (feat, enc_cache) = params.encoder.encode_final(x_in.view())?;
    let mu = params.ic_mean.forward(feat.view());
    let logvar = params.ic_logvar.forward(feat.view());
    let z = match &draws.ic_noise {
        Some(e) => Zip::from(&mu).and(&logvar).and(e).map_collect(|&m, &lv, &e| m + (0.5 * lv).exp() * e),
        None => mu.clone(),
    };
    let gen = params.unroll(z.view(), t_len, draws.gen_mask.as_ref())?;
    let count = draws.loss_mask.sum().max(1.0);
    let mse = Zip::from(&gen.output)
        .and(&x)
        .and(&draws.loss_mask)
        .fold(0.0, |acc, &y, &t, &m| acc + m * (y - t).powi(2))
        / count;
    let var = logvar.mapv(f64::exp);
    let kl = (0..batch)
        .map(|b| {
            kl_to_prior(
                mu.row(b).as_slice().expect("contiguous"),
                var.row(b).as_slice().expect("contiguous"),
                prior,
            )
        })
        .sum::<f64>()
        / batch as f64;
    Ok(Forward {
        losses: LfadsLosses {
            mse,
            kl,
            total: mse + kl_weight * kl,
        },
        enc_cache,
        feat,
        mu,
        logvar,
        z,
        gen,
    })
}

pub fn evaluate_loss(
    params: &LfadsParams,
    x: ArrayView3<f64>,
    draws: &LfadsDraws,
    kl_weight: f64,
    prior: &IcPrior,
) -> Result<LfadsLosses> {
    Ok(forward(params, x, draws, kl_weight, prior)?.losses)
}

/// Masked reconstruction error plus weighted KL, and its gradient.
pub fn loss_and_grad(
    params: &LfadsParams,
    x: ArrayView3<f64>,
    draws: &LfadsDraws,
    kl_weight: f64,
    prior: &IcPrior,
) -> Result<(LfadsLosses, LfadsParams)> {
    let f = forward(params, x, draws, kl_weight, prior)?;
    if !f.losses.total.is_finite() {
        return Err(Error::NonFinite {
            context: format!("lfads loss {:?}", f.losses),
        });
    }
    let (t_len, batch, n) = x.dim();
    let count = draws.loss_mask.sum().max(1.0);
    let mut grads = params.zeros_like();

    let dy = Zip::from(&f.gen.output)
        .and(&x)
        .and(&draws.loss_mask)
        .map_collect(|&y, &t, &m| 2.0 * m * (y - t) / count)
        .into_shape_with_order((t_len * batch, n))
        .expect("contiguous");
    let d_factors = params.output.backward(f.gen.factors_flat.view(), dy.view(), &mut grads.output);
    let d_states = params.factors.backward(f.gen.states.view(), d_factors.view(), &mut grads.factors);
    let mut d_states = d_states
        .into_shape_with_order((t_len, batch, params.generator.hidden_size()))
        .expect("contiguous");
    if let Some(m) = &draws.gen_mask {
        d_states *= m;
    }
    let (_, dh0) = params
        .generator
        .backward(&f.gen.gen_cache, d_states.view(), &mut grads.generator, false);
    let clip = params.cell_clip;
    let dh0_pre = Zip::from(&dh0)
        .and(&f.gen.h0_pre)
        .map_collect(|&g, &h| if h.abs() < clip { g } else { 0.0 });
    let dz = params.ic_to_gen.backward(f.z.view(), dh0_pre.view(), &mut grads.ic_to_gen);

    let scale = kl_weight / batch as f64;
    let v = prior.variance;
    let mut d_mu = dz.clone();
    Zip::from(&mut d_mu)
        .and(&f.mu)
        .for_each(|g, &m| *g += scale * (m - prior.mean) / v);
    let mut d_lv = Array2::zeros(f.logvar.dim());
    Zip::from(&mut d_lv)
        .and(&f.logvar)
        .for_each(|g, &lv| *g = scale * 0.5 * (lv.exp() / v - 1.0));
    if let Some(e) = &draws.ic_noise {
        Zip::from(&mut d_lv)
            .and(&f.logvar)
            .and(&dz)
            .and(e)
            .for_each(|g, &lv, &gz, &e| *g += gz * e * 0.5 * (0.5 * lv).exp());
    }
    let mut d_feat = params.ic_mean.backward(f.feat.view(), d_mu.view(), &mut grads.ic_mean);
    d_feat += &params.ic_logvar.backward(f.feat.view(), d_lv.view(), &mut grads.ic_logvar);
    params
        .encoder
        .backward_final(&f.enc_cache, d_feat.view(), &mut grads.encoder, false);
    Ok((f.losses, grads))
}

/// Posterior-mean reconstruction `(T, B, N)`.
pub fn reconstruct(params: &LfadsParams, x: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (mu, _) = params.encode_ic(x)?;
    Ok(params.generate(mu.view(), x.dim().0)?.1)
}

/// Per-trial squared posterior-mean norms, a quick collapse diagnostic.
pub fn mean_code_norm(mu: ArrayView2<f64>) -> f64 {
    mu.map_axis(Axis(1), |r| r.dot(&r).sqrt()).mean().unwrap_or(0.0)
}
