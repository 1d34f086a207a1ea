use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    axis_orthogonality, code_snr, finite_mean, paired_t_test, recon_r2, trajectory_features, unintended_movement,
    MetricReport, NavigationMap, PositionDecoder, TARGET_X, TARGET_Y,
};
use crate::diffusion::GnocchiModel;
use crate::error::{Error, Result};
use crate::lfads::LfadsModel;
use crate::synth::{Split, TrialDataset};

/// Anything that maps trials to codes and codes back to activity.
pub trait CodeModel {
    fn name(&self) -> &'static str;
    fn latent_dim(&self) -> usize;
    /// Codes `(trials, L)`.
    fn codes(&self, ds: &TrialDataset) -> Result<Array2<f64>>;
    /// Activity `(B, bins, N)` for each code row.
    fn generate(&self, codes: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Result<Array3<f64>>;
    /// Like `generate`, but any sampling noise is shared across rows.
    fn generate_shared_noise(&self, codes: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
        self.generate(codes, rng)
    }
}

impl CodeModel for GnocchiModel {
    fn name(&self) -> &'static str {
        "gnocchi"
    }
    fn latent_dim(&self) -> usize {
        GnocchiModel::latent_dim(self)
    }
    fn codes(&self, ds: &TrialDataset) -> Result<Array2<f64>> {
        GnocchiModel::codes(self, ds)
    }
    fn generate(&self, codes: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
        GnocchiModel::generate(self, codes, rng)
    }
    fn generate_shared_noise(&self, codes: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
        GnocchiModel::generate_shared_noise(self, codes, rng)
    }
}

impl CodeModel for LfadsModel {
    fn name(&self) -> &'static str {
        "lfads"
    }
    fn latent_dim(&self) -> usize {
        LfadsModel::latent_dim(self)
    }
    fn codes(&self, ds: &TrialDataset) -> Result<Array2<f64>> {
        LfadsModel::codes(self, ds)
    }
    fn generate(&self, codes: ArrayView2<f64>, _rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
        LfadsModel::generate(self, codes)
    }
}

fn decode_all(decoder: &PositionDecoder, activity: &Array3<f64>) -> Result<Vec<Array2<f64>>> {
    activity
        .outer_iter()
        .map(|w| decoder.decode(w))
        .collect()
}

/// Code SNR with target-location conditions.
pub fn model_snr(model: &dyn CodeModel, ds: &TrialDataset) -> Result<f64> {
    code_snr(model.codes(ds)?.view(), &ds.target_conditions())
}

/// Target-axis orthogonality of the navigation map, refit on each of `folds`
/// complementary training sets.
pub fn cv_orthogonality(codes: ArrayView2<f64>, behavior: ArrayView2<f64>, folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = codes.nrows();
    if folds < 2 || n < folds {
        return Err(Error::invalid("cv_orthogonality", format!("{folds} folds over {n} trials")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|f| {
            let keep: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(k, _)| k % folds != f)
                .map(|(_, &i)| i)
                .collect();
            let map = NavigationMap::fit(codes.select(Axis(0), &keep).view(), behavior.select(Axis(0), &keep).view())?;
            axis_orthogonality(map.w.select(Axis(0), &[TARGET_X, TARGET_Y]).view())
        })
        .collect()
}

/// Unintended movement for `n_sweeps` traversals, alternating target x and
/// target y, each anchored at the code of a random held-in trial. The step is
/// scaled so a full sweep moves the predicted target across the grid span.
pub fn navigation_sweeps(
    model: &dyn CodeModel,
    heldin: &TrialDataset,
    decoder: &PositionDecoder,
    n_sweeps: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let codes = model.codes(heldin)?;
    let mut map = NavigationMap::fit(codes.view(), heldin.behavior_f64().view())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<usize> = (0..n_sweeps).map(|_| rng.random_range(0..heldin.len())).collect();
    let half = (steps / 2) as isize;
    let mut out = Vec::with_capacity(n_sweeps);
    for (k, &a) in anchors.iter().enumerate() {
        let feature = if k % 2 == 0 { TARGET_X } else { TARGET_Y };
        let w = map.w.row(feature);
        map.anchor = codes.row(a).to_owned();
        map.step = heldin.grid.span / (2 * half).max(1) as f64 / w.dot(&w).max(1e-12);
        let mut sweep_codes = Array2::zeros((2 * half as usize + 1, codes.ncols()));
        for (r, i) in (-half..=half).enumerate() {
            sweep_codes.row_mut(r).assign(&map.navigate(feature, i as f64, 1.0)?);
        }
        // Same sampler noise at every step, so only the code varies.
        let mut sweep_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let stacked = model.generate_shared_noise(sweep_codes.view(), &mut sweep_rng)?;
        let trajs = decode_all(decoder, &stacked)?;
        out.push(unintended_movement(&trajs, trajs[half as usize].view(), feature)?);
    }
    Ok(out)
}

/// Distance from code-predicted target to the true target for each held-out
/// trial, using a map fit on held-in codes.
pub fn heldout_errors(model: &dyn CodeModel, heldin: &TrialDataset, heldout: &TrialDataset) -> Result<Vec<f64>> {
    let map = NavigationMap::fit(model.codes(heldin)?.view(), heldin.behavior_f64().view())?;
    let targets = heldout.behavior_f64().slice(s![.., 2..]).to_owned();
    Ok(map.target_error(model.codes(heldout)?.view(), targets.view()))
}

/// Per-channel R^2 of activity generated from each trial's own code.
pub fn recon_quality(model: &dyn CodeModel, ds: &TrialDataset, seed: u64) -> Result<Vec<f64>> {
    let codes = model.codes(ds)?;
    let pred = model.generate(codes.view(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let truth = ds.activity.mapv(f64::from);
    recon_r2(truth.view(), pred.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationCheck {
    /// Fraction of conditional samples whose decoded end lands within one
    /// grid spacing of the condition's target.
    pub conditional_hit_rate: f64,
    /// Decoded end-x range of unconditional samples over the held-in
    /// target-x range.
    pub unconditional_span: f64,
}

/// Conditional samples from the mean code of each held-in target condition.
/// Returns the hit rate.
pub fn conditional_generation(
    model: &dyn CodeModel,
    heldin: &TrialDataset,
    decoder: &PositionDecoder,
    samples_per_condition: usize,
    seed: u64,
) -> Result<f64> {
    let codes = model.codes(heldin)?;
    let labels = heldin.target_conditions();
    let mut conds: Vec<usize> = labels.clone();
    conds.sort_unstable();
    conds.dedup();
    let mut all_codes = Vec::new();
    let mut targets = Vec::new();
    for &c in &conds {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mean = codes.select(Axis(0), &idx).mean_axis(Axis(0)).expect("non-empty");
        let t = heldin.grid.point(heldin.grid.index(c));
        for _ in 0..samples_per_condition {
            all_codes.push(mean.clone());
            targets.push(t);
        }
    }
    let views: Vec<_> = all_codes.iter().map(|c| c.view()).collect();
    let batch = ndarray::stack(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
    let acts = model.generate(batch.view(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let trajs = decode_all(decoder, &acts)?;
    let spacing = heldin.grid.spacing();
    let hits = trajs
        .iter()
        .zip(&targets)
        .filter(|(tr, t)| {
            let f = trajectory_features(tr.view());
            (f[2] - t[0]).hypot(f[3] - t[1]) <= spacing
        })
        .count();
    Ok(hits as f64 / trajs.len() as f64)
}

/// Decoded end-x range of `n` samples with prior codes, relative to the
/// held-in target-x range.
pub fn unconditional_span(
    model: &dyn CodeModel,
    heldin: &TrialDataset,
    decoder: &PositionDecoder,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = Array2::from_shape_simple_fn((n, model.latent_dim()), || StandardNormal.sample(&mut rng));
    let acts = model.generate(codes.view(), &mut rng)?;
    let ends: Vec<f64> = decode_all(decoder, &acts)?
        .iter()
        .map(|t| trajectory_features(t.view())[2])
        .collect();
    let tx = heldin.behavior_f64().column(TARGET_X).to_owned();
    let range = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        hi - lo
    };
    Ok(range(&mut ends.iter().copied()) / range(&mut tx.iter().copied()))
}

/// Everything measured for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub snr: f64,
    pub orthogonality: Vec<f64>,
    pub unintended: Vec<f64>,
    pub heldout_errors: Vec<f64>,
    pub recon_r2: Vec<f64>,
}

impl Evaluation {
    pub fn report(&self) -> MetricReport {
        let mean = |v: &[f64]| finite_mean(v);
        let mut r = MetricReport::new();
        r.set("code_snr", self.snr);
        r.set("orthogonality_mean", mean(&self.orthogonality));
        r.set("unintended_movement_mean", mean(&self.unintended));
        r.set("heldout_error_mean", mean(&self.heldout_errors));
        r.set("recon_r2_mean", mean(&self.recon_r2));
        r
    }
}

/// Full metric suite. `heldin` carries train/valid tags; SNR and R^2 use the
/// validation trials.
pub fn evaluate_model(
    model: &dyn CodeModel,
    heldin: &TrialDataset,
    heldout: &TrialDataset,
    decoder: &PositionDecoder,
    folds: usize,
    n_sweeps: usize,
    sweep_steps: usize,
    seed: u64,
) -> Result<Evaluation> {
    let valid = heldin.split(Split::Valid);
    let codes = model.codes(heldin)?;
    Ok(Evaluation {
        model: model.name().to_string(),
        snr: model_snr(model, &valid)?,
        orthogonality: cv_orthogonality(codes.view(), heldin.behavior_f64().view(), folds, seed)?,
        unintended: navigation_sweeps(model, heldin, decoder, n_sweeps, sweep_steps, seed)?,
        heldout_errors: heldout_errors(model, heldin, heldout)?,
        recon_r2: recon_quality(model, &valid, seed)?,
    })
}

/// Side-by-side report with paired tests (`a` vs `b`).
pub fn compare_models(a: &Evaluation, b: &Evaluation) -> Result<MetricReport> {
    let mut r = MetricReport::new();
    r.merge_prefixed(&a.model, &a.report());
    r.merge_prefixed(&b.model, &b.report());
    r.set("snr_ratio", a.snr / b.snr);
    let t = paired_t_test(&a.orthogonality, &b.orthogonality)?;
    r.set("orthogonality_t", t.t);
    r.set("orthogonality_p", t.p_value);
    let t = paired_t_test(&a.unintended, &b.unintended)?;
    r.set("unintended_t", t.t);
    r.set("unintended_p", t.p_value);
    if a.heldout_errors.len() != b.heldout_errors.len() {
        return Err(Error::shape("compare_models", a.heldout_errors.len(), b.heldout_errors.len()));
    }
    let wins = a
        .heldout_errors
        .iter()
        .zip(&b.heldout_errors)
        .filter(|(x, y)| x < y)
        .count();
    r.set("heldout_win_fraction", wins as f64 / a.heldout_errors.len().max(1) as f64);
    Ok(r)
}

/// Code SNR of two models on the same trials and their ratio.
pub fn code_snr_report(a: &dyn CodeModel, b: &dyn CodeModel, ds: &TrialDataset) -> Result<MetricReport> {
    let (sa, sb) = (model_snr(a, ds)?, model_snr(b, ds)?);
    let mut r = MetricReport::new();
    r.set(format!("{}_code_snr", a.name()), sa);
    r.set(format!("{}_code_snr", b.name()), sb);
    r.set("snr_ratio", sa / sb);
    Ok(r)
}
