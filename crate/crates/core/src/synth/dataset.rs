use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::arm::ArmParams;
use crate::synth::controller::{rollout, ControllerPolicy};
use crate::synth::task::{make_trial, Grid, GridIndex, TimingRule};

/// Number of behavioural features per trial: start x/y, target x/y.
pub const N_BEHAVIOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub start: GridIndex,
    pub target: GridIndex,
    pub target_onset: usize,
    pub go_cue: usize,
    pub split: Split,
    /// Seed that reproduces this trial's spec and motor noise.
    pub seed: u64,
}

impl TrialMeta {
    /// (start, target) pair id.
    pub fn condition(&self, grid_size: usize) -> usize {
        self.start.flat(grid_size) * grid_size * grid_size + self.target.flat(grid_size)
    }

    pub fn target_condition(&self, grid_size: usize) -> usize {
        self.target.flat(grid_size)
    }
}

/// Go-cue-aligned trial windows with behaviour and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub grid: Grid,
    /// `(trials, bins, channels)`
    pub activity: Array3<f32>,
    /// `(trials, 4)`: start x, start y, target x, target y (m).
    pub behavior: Array2<f32>,
    /// Hand position per bin, `(trials, bins, 2)`.
    pub endpoints: Array3<f32>,
    pub trials: Vec<TrialMeta>,
}

impl TrialDataset {
    pub fn empty(grid: Grid, bins: usize, channels: usize) -> Self {
        Self {
            grid,
            activity: Array3::zeros((0, bins, channels)),
            behavior: Array2::zeros((0, N_BEHAVIOR)),
            endpoints: Array3::zeros((0, bins, 2)),
            trials: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_bins(&self) -> usize {
        self.activity.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.activity.dim().2
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.trials[i].split == split).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            activity: self.activity.select(Axis(0), idx),
            behavior: self.behavior.select(Axis(0), idx),
            endpoints: self.endpoints.select(Axis(0), idx),
            trials: idx.iter().map(|&i| self.trials[i].clone()).collect(),
        }
    }

    pub fn split(&self, split: Split) -> Self {
        self.subset(&self.indices(split))
    }

    /// Time-major `(bins, batch, channels)` batch in double precision.
    pub fn batch(&self, idx: &[usize]) -> Array3<f64> {
        let (_, bins, ch) = self.activity.dim();
        Array3::from_shape_fn((bins, idx.len(), ch), |(t, b, c)| self.activity[[idx[b], t, c]] as f64)
    }

    pub fn behavior_f64(&self) -> Array2<f64> {
        self.behavior.mapv(f64::from)
    }

    pub fn target_conditions(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.target_condition(self.grid.size)).collect()
    }

    /// Stack trial-major activity `(trials * bins, channels)`.
    pub fn activity_rows(&self) -> Array2<f64> {
        let (n, bins, ch) = self.activity.dim();
        self.activity
            .mapv(f64::from)
            .into_shape_with_order((n * bins, ch))
            .expect("contiguous")
    }

    pub fn endpoint_rows(&self) -> Array2<f64> {
        let (n, bins, _) = self.endpoints.dim();
        self.endpoints
            .mapv(f64::from)
            .into_shape_with_order((n * bins, 2))
            .expect("contiguous")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_trials: usize,
    pub train_fraction: f64,
    pub motor_noise: f64,
    pub dt: f64,
    pub min_trials: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_trials: 1000,
            train_fraction: 0.8,
            motor_noise: 1e-3,
            dt: 0.01,
            min_trials: 500,
            seed: 0,
        }
    }
}

fn assign_splits<R: Rng + ?Sized>(trials: &mut [TrialMeta], idx: &[usize], train_fraction: f64, rng: &mut R) {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    let n_train = (order.len() as f64 * train_fraction).round() as usize;
    for (k, &i) in order.iter().enumerate() {
        trials[i].split = if k < n_train { Split::Train } else { Split::Valid };
    }
}

/// Roll out the controller on fresh trials and export go-cue-aligned windows of
/// its hidden state.
pub fn build_dataset(
    policy: &ControllerPolicy,
    arm: &ArmParams,
    grid: &Grid,
    timing: &TimingRule,
    cfg: &DatasetConfig,
) -> Result<TrialDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bins = timing.window_len();
    let ch = policy.hidden_size();
    let mut activity = Vec::new();
    let mut behavior = Vec::new();
    let mut endpoints = Vec::new();
    let mut trials = Vec::new();
    for _ in 0..cfg.n_trials {
        let seed: u64 = rng.random();
        let mut trial_rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = make_trial(&mut trial_rng, grid, timing);
        let Some(w0) = timing.window_start(spec.go_cue) else {
            continue;
        };
        let Ok(roll) = rollout(policy, arm, &spec, cfg.dt, cfg.motor_noise, &mut trial_rng) else {
            continue;
        };
        activity.extend(roll.hidden.slice(s![w0..w0 + bins, ..]).iter().map(|&v| v as f32));
        endpoints.extend((w0..w0 + bins).flat_map(|t| roll.endpoint(t).map(|v| v as f32)));
        behavior.extend([spec.start[0], spec.start[1], spec.target[0], spec.target[1]].map(|v| v as f32));
        trials.push(TrialMeta {
            start: spec.start_index,
            target: spec.target_index,
            target_onset: spec.target_onset,
            go_cue: spec.go_cue,
            split: Split::Train,
            seed,
        });
    }
    let n = trials.len();
    if n < cfg.min_trials {
        return Err(Error::TooFewTrials {
            got: n,
            min: cfg.min_trials,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    assign_splits(&mut trials, &all, cfg.train_fraction, &mut rng);
    Ok(TrialDataset {
        grid: grid.clone(),
        activity: Array3::from_shape_vec((n, bins, ch), activity).expect("consistent sizes"),
        behavior: Array2::from_shape_vec((n, 4), behavior).expect("consistent sizes"),
        endpoints: Array3::from_shape_vec((n, bins, 2), endpoints).expect("consistent sizes"),
        trials,
    })
}

/// Targets on the ring just inside the outer edge: the perimeter of the
/// interior `(size-2) x (size-2)` block.
pub fn is_heldout_target(idx: GridIndex, size: usize) -> bool {
    let (lo, hi) = (1, size - 2);
    let inside = (lo..=hi).contains(&idx.ix) && (lo..=hi).contains(&idx.iy);
    inside && (idx.ix == lo || idx.ix == hi || idx.iy == lo || idx.iy == hi)
}

/// Split off held-out target conditions; the remainder is re-split into
/// train/valid with the same fraction.
pub fn split_heldout(dataset: &TrialDataset, train_fraction: f64, seed: u64) -> (TrialDataset, TrialDataset) {
    let size = dataset.grid.size;
    let (out_idx, in_idx): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| is_heldout_target(dataset.trials[i].target, size));
    let mut heldin = dataset.subset(&in_idx);
    let all: Vec<usize> = (0..heldin.len()).collect();
    assign_splits(&mut heldin.trials, &all, train_fraction, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut heldout = dataset.subset(&out_idx);
    heldout.trials.iter_mut().for_each(|t| t.split = Split::Heldout);
    (heldin, heldout)
}

/// Per-channel affine normalisation fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ChannelScaler {
    pub fn fit(dataset: &TrialDataset) -> Self {
        let rows = dataset.activity_rows();
        let mean = rows.mean_axis(Axis(0)).expect("non-empty dataset");
        let std = rows.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: Array1::zeros(channels),
            std: Array1::ones(channels),
        }
    }

    /// Normalise a `(..., channels)` array in place.
    pub fn apply(&self, x: &mut Array3<f64>) {
        for mut lane in x.lanes_mut(Axis(2)) {
            lane -= &self.mean;
            lane /= &self.std;
        }
    }

    pub fn invert(&self, x: &mut Array3<f64>) {
        for mut lane in x.lanes_mut(Axis(2)) {
            lane *= &self.std;
            lane += &self.mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heldout_ring_has_twelve_points() {
        let held: Vec<_> = (0..36)
            .map(|k| GridIndex { ix: k % 6, iy: k / 6 })
            .filter(|&g| is_heldout_target(g, 6))
            .collect();
        assert_eq!(held.len(), 12);
        assert!(is_heldout_target(GridIndex { ix: 1, iy: 1 }, 6));
        assert!(!is_heldout_target(GridIndex { ix: 0, iy: 0 }, 6));
        assert!(!is_heldout_target(GridIndex { ix: 5, iy: 0 }, 6));
        assert!(!is_heldout_target(GridIndex { ix: 2, iy: 2 }, 6));
        assert!(!is_heldout_target(GridIndex { ix: 3, iy: 3 }, 6));
    }

    fn toy_dataset(n: usize) -> TrialDataset {
        let grid = Grid::default();
        let trials = (0..n)
            .map(|k| TrialMeta {
                start: grid.index((k * 7) % 36),
                target: grid.index(k % 36),
                target_onset: 10,
                go_cue: 50,
                split: Split::Train,
                seed: k as u64,
            })
            .collect();
        TrialDataset {
            activity: Array3::from_shape_fn((n, 40, 3), |(i, t, c)| (i + t + c) as f32),
            behavior: Array2::zeros((n, 4)),
            endpoints: Array3::zeros((n, 40, 2)),
            trials,
            grid,
        }
    }

    #[test]
    fn heldout_split_partitions_trials() {
        let ds = toy_dataset(360);
        let (heldin, heldout) = split_heldout(&ds, 0.8, 1);
        assert_eq!(heldin.len() + heldout.len(), 360);
        assert_eq!(heldout.len(), 120);
        assert!(heldout.trials.iter().all(|t| t.split == Split::Heldout));
        let n_train = heldin.indices(Split::Train).len();
        assert_eq!(n_train, 192);
        assert_eq!(heldin.indices(Split::Valid).len(), 48);
    }

    #[test]
    fn scaler_round_trip() {
        let ds = toy_dataset(10);
        let scaler = ChannelScaler::fit(&ds);
        let x = ds.batch(&[0, 3, 7]);
        let mut y = x.clone();
        scaler.apply(&mut y);
        scaler.invert(&mut y);
        assert!((&x - &y).mapv(f64::abs).sum() < 1e-9);
    }

    #[test]
    fn batch_is_time_major() {
        let ds = toy_dataset(5);
        let b = ds.batch(&[4, 1]);
        assert_eq!(b.dim(), (40, 2, 3));
        assert_eq!(b[[7, 0, 2]], ds.activity[[4, 7, 2]] as f64);
        assert_eq!(b[[7, 1, 2]], ds.activity[[1, 7, 2]] as f64);
    }
}
