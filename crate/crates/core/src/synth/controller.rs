use log::{debug, info};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, sigmoid, Adam, AdamConfig, Gru, GruStepCache, Linear, Params};
use crate::nn::params::impl_params;
use crate::synth::arm::{ArmAdjoint, ArmParams, ArmState, ArmTrace, N_MUSCLES};
use crate::synth::task::{make_trial, Grid, TimingRule, TrialSpec};

/// Endpoint (2), muscle lengths (6), muscle velocities (6), target (2), go cue (1).
pub const OBS_DIM: usize = 17;

/// GRU controller mapping sensory feedback and task cues to muscle excitations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerPolicy {
    pub gru: Gru,
    pub readout: Linear,
}

impl_params!(ControllerPolicy { gru, readout });

impl ControllerPolicy {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let gru = Gru::new(OBS_DIM, hidden, rng);
        let mut readout = Linear::new(hidden, N_MUSCLES, rng);
        // Start near-silent so the untrained arm barely moves.
        readout.b.fill(-3.0);
        Self { gru, readout }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            gru: Gru::zeros(OBS_DIM, hidden),
            readout: Linear::zeros(hidden, N_MUSCLES),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.gru.hidden_size()
    }
}

pub fn observation(state: &ArmState, trial: &TrialSpec, t: usize) -> [f64; OBS_DIM] {
    let mut obs = [0.0; OBS_DIM];
    obs[..2].copy_from_slice(&state.endpoint);
    obs[2..8].copy_from_slice(&state.muscle_lengths);
    obs[8..14].copy_from_slice(&state.muscle_velocities);
    obs[14..16].copy_from_slice(&trial.target_input(t));
    obs[16] = trial.go_input(t);
    obs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Standard deviation of the Gaussian noise added to excitations.
    pub motor_noise: f64,
    /// Bin width (s).
    pub dt: f64,
    pub validation_trials: usize,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            epochs: 2000,
            batch_size: 32,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            grad_clip: 1.0,
            motor_noise: 1e-3,
            dt: 0.01,
            validation_trials: 200,
            seed: 0,
        }
    }
}

/// Closed-loop trajectory of one trial.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Controller state after each bin, `(T, H)`.
    pub hidden: Array2<f64>,
    /// Arm states; `states[t + 1]` results from the excitation at bin `t`.
    pub states: Vec<ArmState>,
    pub excitations: Vec<[f64; N_MUSCLES]>,
}

impl Rollout {
    /// Endpoint after bin `t`.
    pub fn endpoint(&self, t: usize) -> [f64; 2] {
        self.states[t + 1].endpoint
    }

    pub fn final_error(&self, trial: &TrialSpec) -> f64 {
        let p = self.states.last().expect("non-empty rollout").endpoint;
        (p[0] - trial.target[0]).hypot(p[1] - trial.target[1])
    }
}

/// Batched closed-loop simulation with everything needed for BPTT.
struct BatchTape {
    gru: Vec<GruStepCache>,
    hidden: Vec<Array2<f64>>,
    squashed: Vec<Array2<f64>>,
    excitation: Vec<Array2<f64>>,
    unclamped: Vec<Array2<bool>>,
    states: Vec<Vec<ArmState>>,
    traces: Vec<Vec<ArmTrace>>,
}

fn simulate(
    policy: &ControllerPolicy,
    arm: &ArmParams,
    trials: &[TrialSpec],
    noise: &Array3<f64>,
    dt: f64,
) -> Result<(BatchTape, f64)> {
    let batch = trials.len();
    let t_len = trials[0].trial_len;
    let hid = policy.hidden_size();
    let mut states: Vec<ArmState> = trials
        .iter()
        .map(|tr| arm.rest_at(tr.start))
        .collect::<Result<_>>()?;
    let mut tape = BatchTape {
        gru: Vec::with_capacity(t_len),
        hidden: Vec::with_capacity(t_len),
        squashed: Vec::with_capacity(t_len),
        excitation: Vec::with_capacity(t_len),
        unclamped: Vec::with_capacity(t_len),
        states: vec![states.clone()],
        traces: Vec::with_capacity(t_len),
    };
    let mut h = Array2::zeros((batch, hid));
    let mut loss = 0.0;
    for t in 0..t_len {
        let obs = Array2::from_shape_fn((batch, OBS_DIM), |(b, k)| observation(&states[b], &trials[b], t)[k]);
        let (h_next, cache) = policy.gru.step(obs.view(), h.view())?;
        let squashed = policy.readout.forward(h_next.view()).mapv(sigmoid);
        let raw = &squashed + &noise.index_axis(Axis(0), t);
        let unclamped = raw.mapv(|v| (0.0..=1.0).contains(&v));
        let u = raw.mapv(|v| v.clamp(0.0, 1.0));
        let mut traces = Vec::with_capacity(batch);
        for b in 0..batch {
            let ub: [f64; N_MUSCLES] = std::array::from_fn(|m| u[[b, m]]);
            let (next, trace) = arm.step_traced(&states[b], &ub, dt);
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("arm state at bin {t} of trial {b}"),
                });
            }
            let d = trials[b].desired_position(t);
            loss += 0.5 * ((next.endpoint[0] - d[0]).abs() + (next.endpoint[1] - d[1]).abs());
            loss += 0.5 * ub.iter().map(|v| v * v).sum::<f64>();
            states[b] = next;
            traces.push(trace);
        }
        tape.gru.push(cache);
        tape.hidden.push(h_next.clone());
        tape.squashed.push(squashed);
        tape.excitation.push(u);
        tape.unclamped.push(unclamped);
        tape.states.push(states.clone());
        tape.traces.push(traces);
        h = h_next;
    }
    Ok((tape, loss / batch as f64))
}

/// Mean per-trial task loss over the batch and its gradient.
pub fn batch_loss_and_grad(
    policy: &ControllerPolicy,
    arm: &ArmParams,
    trials: &[TrialSpec],
    noise: &Array3<f64>,
    dt: f64,
) -> Result<(f64, ControllerPolicy)> {
    let (tape, loss) = simulate(policy, arm, trials, noise, dt)?;
    let batch = trials.len();
    let t_len = tape.hidden.len();
    let hid = policy.hidden_size();
    let scale = 1.0 / batch as f64;
    let mut grads = ControllerPolicy::zeros(hid);
    let mut g_h = Array2::<f64>::zeros((batch, hid));
    let mut g_arm = vec![ArmAdjoint::default(); batch];
    for t in (0..t_len).rev() {
        let mut g_pre = Array2::<f64>::zeros((batch, N_MUSCLES));
        for b in 0..batch {
            let next = &tape.states[t + 1][b];
            let d = trials[b].desired_position(t);
            let g_end = [
                0.5 * scale * (next.endpoint[0] - d[0]).signum_or_zero(),
                0.5 * scale * (next.endpoint[1] - d[1]).signum_or_zero(),
            ];
            let (gq, _) = arm.observe_vjp(next.joint_angles, g_end, &[0.0; N_MUSCLES], &[0.0; N_MUSCLES]);
            g_arm[b].q[0] += gq[0];
            g_arm[b].q[1] += gq[1];
            let (prev, g_u) = arm.step_vjp(&tape.traces[t][b], &g_arm[b]);
            g_arm[b] = prev;
            for m in 0..N_MUSCLES {
                let mut g = g_u[m] + scale * tape.excitation[t][[b, m]];
                if !tape.unclamped[t][[b, m]] {
                    g = 0.0;
                }
                let s = tape.squashed[t][[b, m]];
                g_pre[[b, m]] = g * s * (1.0 - s);
            }
        }
        g_h += &policy
            .readout
            .backward(tape.hidden[t].view(), g_pre.view(), &mut grads.readout);
        let (g_obs, g_h_prev) = policy.gru.step_backward(&tape.gru[t], g_h.view(), &mut grads.gru);
        g_h = g_h_prev;
        // Observation at bin t was read from the state before the step.
        for b in 0..batch {
            let s = &tape.states[t][b];
            let g_end = [g_obs[[b, 0]], g_obs[[b, 1]]];
            let g_len: [f64; N_MUSCLES] = std::array::from_fn(|m| g_obs[[b, 2 + m]]);
            let g_vel: [f64; N_MUSCLES] = std::array::from_fn(|m| g_obs[[b, 8 + m]]);
            let (gq, gqd) = arm.observe_vjp(s.joint_angles, g_end, &g_len, &g_vel);
            for j in 0..2 {
                g_arm[b].q[j] += gq[j];
                g_arm[b].qd[j] += gqd[j];
            }
        }
    }
    Ok((loss, grads))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

fn draw_noise<R: Rng + ?Sized>(shape: (usize, usize, usize), std: f64, rng: &mut R) -> Array3<f64> {
    if std == 0.0 {
        return Array3::zeros(shape);
    }
    let normal = Normal::new(0.0, std).expect("positive std");
    Array3::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// Closed-loop rollout of a single trial with motor noise of the given std.
pub fn rollout<R: Rng + ?Sized>(
    policy: &ControllerPolicy,
    arm: &ArmParams,
    trial: &TrialSpec,
    dt: f64,
    motor_noise: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let noise = draw_noise((trial.trial_len, 1, N_MUSCLES), motor_noise, rng);
    let (tape, _) = simulate(policy, arm, std::slice::from_ref(trial), &noise, dt)?;
    let hid = policy.hidden_size();
    let mut hidden = Array2::zeros((tape.hidden.len(), hid));
    for (t, h) in tape.hidden.iter().enumerate() {
        hidden.row_mut(t).assign(&h.row(0));
    }
    let excitations = tape
        .excitation
        .iter()
        .map(|u| std::array::from_fn(|m| u[[0, m]]))
        .collect();
    let states = tape.states.into_iter().map(|mut s| s.remove(0)).collect();
    Ok(Rollout {
        hidden,
        states,
        excitations,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ControllerLog {
    pub losses: Vec<f64>,
    pub validation_final_error: f64,
}

/// Final endpoint errors (m) over a set of trials.
pub fn final_errors(
    policy: &ControllerPolicy,
    arm: &ArmParams,
    trials: &[TrialSpec],
    dt: f64,
    motor_noise: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials.len());
    for chunk in trials.chunks(64) {
        let noise = draw_noise((chunk[0].trial_len, chunk.len(), N_MUSCLES), motor_noise, &mut rng);
        let (tape, _) = simulate(policy, arm, chunk, &noise, dt)?;
        let last = tape.states.last().expect("non-empty");
        out.extend(chunk.iter().zip(last).map(|(tr, s)| {
            (s.endpoint[0] - tr.target[0]).hypot(s.endpoint[1] - tr.target[1])
        }));
    }
    Ok(out)
}

pub fn validation_trials(grid: &Grid, timing: &TimingRule, n: usize, seed: u64) -> Vec<TrialSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba11);
    (0..n).map(|_| make_trial(&mut rng, grid, timing)).collect()
}

/// Train the controller by backpropagation through the full closed loop,
/// drawing a fresh batch of trials every epoch.
pub fn train_controller(
    arm: &ArmParams,
    grid: &Grid,
    timing: &TimingRule,
    cfg: &ControllerConfig,
) -> Result<(ControllerPolicy, ControllerLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = ControllerPolicy::new(cfg.hidden_size, &mut rng);
    let mut opt = Adam::new(
        &policy,
        AdamConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut log = ControllerLog::default();
    for epoch in 0..cfg.epochs {
        let trials: Vec<_> = (0..cfg.batch_size).map(|_| make_trial(&mut rng, grid, timing)).collect();
        let noise = draw_noise((timing.trial_len, cfg.batch_size, N_MUSCLES), cfg.motor_noise, &mut rng);
        let diverged = |reason: String| Error::Diverged {
            seed: cfg.seed,
            epoch,
            reason,
        };
        let (loss, mut grads) =
            batch_loss_and_grad(&policy, arm, &trials, &noise, cfg.dt).map_err(|e| diverged(e.to_string()))?;
        if !loss.is_finite() {
            return Err(diverged("loss is not finite".into()));
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        opt.step(&mut policy, &grads).map_err(|e| diverged(e.to_string()))?;
        log.losses.push(loss);
        if epoch % 50 == 0 {
            debug!("controller epoch {epoch}: loss {loss:.4}");
        }
    }
    let val = validation_trials(grid, timing, cfg.validation_trials, cfg.seed);
    let errors = final_errors(&policy, arm, &val, cfg.dt, cfg.motor_noise, cfg.seed)?;
    log.validation_final_error = errors.iter().sum::<f64>() / errors.len() as f64;
    info!(
        "controller trained: final loss {:.4}, mean validation endpoint error {:.2} cm",
        log.losses.last().copied().unwrap_or(f64::NAN),
        100.0 * log.validation_final_error
    );
    Ok((policy, log))
}
