use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::synth::arm::N_MUSCLES;

/// Square grid of start/target locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Points per side.
    pub size: usize,
    /// Workspace centre (m).
    pub center: [f64; 2],
    /// Side length of the square spanned by the outermost points (m).
    pub span: f64,
}

impl Default for Grid {
    fn default() -> Self {
        // Centred on the endpoint at shoulder 45 deg / elbow 90 deg.
        let arm = crate::synth::ArmParams::default();
        Self {
            size: 6,
            center: arm.forward_kinematics(arm.reference_posture),
            span: 0.2,
        }
    }
}

/// Column/row index of a grid point, `(ix, iy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub ix: usize,
    pub iy: usize,
}

impl GridIndex {
    pub fn flat(self, size: usize) -> usize {
        self.iy * size + self.ix
    }
}

impl Grid {
    pub fn spacing(&self) -> f64 {
        self.span / (self.size - 1) as f64
    }

    pub fn num_points(&self) -> usize {
        self.size * self.size
    }

    pub fn point(&self, idx: GridIndex) -> [f64; 2] {
        let half = 0.5 * self.span;
        [
            self.center[0] - half + idx.ix as f64 * self.spacing(),
            self.center[1] - half + idx.iy as f64 * self.spacing(),
        ]
    }

    pub fn index(&self, flat: usize) -> GridIndex {
        GridIndex {
            ix: flat % self.size,
            iy: flat / self.size,
        }
    }

    pub fn random_index<R: Rng + ?Sized>(&self, rng: &mut R) -> GridIndex {
        self.index(rng.random_range(0..self.num_points()))
    }
}

/// Event timing for one trial, in bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRule {
    pub trial_len: usize,
    pub go_cue_min: usize,
    pub go_cue_max: usize,
    pub target_onset_min: usize,
    /// Minimum delay between target onset and go cue.
    pub min_delay: usize,
    /// Alignment window `[go - before, go + after)`.
    pub window_before: usize,
    pub window_after: usize,
}

impl Default for TimingRule {
    fn default() -> Self {
        Self {
            trial_len: 200,
            go_cue_min: 20,
            go_cue_max: 160,
            target_onset_min: 10,
            min_delay: 5,
            window_before: 10,
            window_after: 30,
        }
    }
}

impl TimingRule {
    pub fn window_len(&self) -> usize {
        self.window_before + self.window_after
    }

    /// First bin of the alignment window, if the window fits inside the trial.
    pub fn window_start(&self, go_cue: usize) -> Option<usize> {
        let start = go_cue.checked_sub(self.window_before)?;
        (go_cue + self.window_after <= self.trial_len).then_some(start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub start_index: GridIndex,
    pub target_index: GridIndex,
    pub start: [f64; 2],
    pub target: [f64; 2],
    pub target_onset: usize,
    pub go_cue: usize,
    pub trial_len: usize,
}

impl TrialSpec {
    /// Where the hand should be at bin `t`: the start before the go cue, the
    /// target from the go cue on.
    pub fn desired_position(&self, t: usize) -> [f64; 2] {
        if t < self.go_cue {
            self.start
        } else {
            self.target
        }
    }

    /// Target input as seen by the controller (zeros until onset).
    pub fn target_input(&self, t: usize) -> [f64; 2] {
        if t < self.target_onset {
            [0.0; 2]
        } else {
            self.target
        }
    }

    pub fn go_input(&self, t: usize) -> f64 {
        if t < self.go_cue {
            0.0
        } else {
            1.0
        }
    }
}

pub fn make_trial<R: Rng + ?Sized>(rng: &mut R, grid: &Grid, timing: &TimingRule) -> TrialSpec {
    let start_index = grid.random_index(rng);
    let target_index = grid.random_index(rng);
    let go_cue = rng.random_range(timing.go_cue_min..=timing.go_cue_max);
    let onset_max = go_cue.saturating_sub(timing.min_delay).max(timing.target_onset_min);
    let target_onset = rng.random_range(timing.target_onset_min..=onset_max);
    TrialSpec {
        start_index,
        target_index,
        start: grid.point(start_index),
        target: grid.point(target_index),
        target_onset,
        go_cue,
        trial_len: timing.trial_len,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    pub position: f64,
    pub effort: f64,
}

impl TaskLoss {
    pub fn total(&self) -> f64 {
        self.position + self.effort
    }
}

/// `1/2 sum_i |x_i - x*_i|_1 + 1/2 sum_i |a_i|_2^2`.
pub fn task_loss(endpoints: &[[f64; 2]], desired: &[[f64; 2]], activations: &[[f64; N_MUSCLES]]) -> TaskLoss {
    debug_assert_eq!(endpoints.len(), desired.len());
    let position = 0.5
        * endpoints
            .iter()
            .zip(desired)
            .map(|(x, d)| (x[0] - d[0]).abs() + (x[1] - d[1]).abs())
            .sum::<f64>();
    let effort = 0.5 * activations.iter().flatten().map(|a| a * a).sum::<f64>();
    TaskLoss { position, effort }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn replay_is_deterministic() {
        let (grid, timing) = (Grid::default(), TimingRule::default());
        let a = make_trial(&mut ChaCha8Rng::seed_from_u64(42), &grid, &timing);
        let b = make_trial(&mut ChaCha8Rng::seed_from_u64(42), &grid, &timing);
        assert_eq!(a, b);
    }

    #[test]
    fn target_frequencies_are_uniform() {
        let (grid, timing) = (Grid::default(), TimingRule::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000usize;
        let mut counts = vec![0usize; 36];
        for _ in 0..n {
            counts[make_trial(&mut rng, &grid, &timing).target_index.flat(6)] += 1;
        }
        let p = 1.0 / 36.0;
        let expected = n as f64 * p;
        let sigma = (expected * (1.0 - p)).sqrt();
        // 3 sigma per point, Bonferroni-widened to 3.5 for 36 simultaneous checks.
        for (k, &c) in counts.iter().enumerate() {
            assert!((c as f64 - expected).abs() < 3.5 * sigma, "point {k}: {c}");
        }
        // Pearson chi-square, 35 dof; 99.9th percentile is 66.6.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 66.6, "chi2 {chi2}");
    }

    #[test]
    fn window_always_fits() {
        let (grid, timing) = (Grid::default(), TimingRule::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let t = make_trial(&mut rng, &grid, &timing);
            assert!((10..=170).contains(&t.go_cue));
            assert!(t.target_onset >= 10 && t.target_onset + 5 <= t.go_cue);
            assert!(timing.window_start(t.go_cue).is_some());
        }
    }

    #[test]
    fn inputs_follow_events() {
        let grid = Grid::default();
        let spec = TrialSpec {
            start_index: GridIndex { ix: 0, iy: 0 },
            target_index: GridIndex { ix: 5, iy: 5 },
            start: grid.point(GridIndex { ix: 0, iy: 0 }),
            target: grid.point(GridIndex { ix: 5, iy: 5 }),
            target_onset: 30,
            go_cue: 80,
            trial_len: 200,
        };
        assert_eq!(spec.go_input(79), 0.0);
        assert_eq!(spec.go_input(80), 1.0);
        assert_eq!(spec.target_input(29), [0.0; 2]);
        assert_eq!(spec.target_input(30), spec.target);
        assert_eq!(spec.desired_position(0), spec.start);
        assert_eq!(spec.desired_position(150), spec.target);
    }

    #[test]
    fn grid_geometry() {
        let grid = Grid::default();
        assert!((grid.spacing() - 0.04).abs() < 1e-15);
        let a = grid.point(GridIndex { ix: 0, iy: 0 });
        let b = grid.point(GridIndex { ix: 5, iy: 5 });
        assert!((b[0] - a[0] - 0.2).abs() < 1e-12 && (b[1] - a[1] - 0.2).abs() < 1e-12);
        assert_eq!(grid.index(GridIndex { ix: 2, iy: 3 }.flat(6)), GridIndex { ix: 2, iy: 3 });
    }

    #[test]
    fn loss_zero_on_target() {
        let x = vec![[0.1, 0.2]; 200];
        let l = task_loss(&x, &x, &vec![[0.0; 6]; 200]);
        assert_eq!(l.total(), 0.0);
    }

    #[test]
    fn loss_constant_offset() {
        let d = vec![[0.0, 0.4]; 200];
        let x = vec![[0.1, 0.4]; 200];
        let l = task_loss(&x, &d, &vec![[0.0; 6]; 200]);
        assert!((l.total() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn loss_constant_effort() {
        let d = vec![[0.0, 0.4]; 200];
        let l = task_loss(&d, &d, &vec![[0.1; 6]; 200]);
        assert!((l.total() - 6.0).abs() < 1e-9);
        assert_eq!(l.position, 0.0);
    }
}
