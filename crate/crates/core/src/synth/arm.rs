//! Planar two-link arm driven by six lumped muscles.
//!
//! Point masses sit at the link midpoints. Muscles act through a constant
//! moment-arm matrix (shoulder flexor/extensor, elbow flexor/extensor, and a
//! biarticular flexor/extensor pair), activations follow first-order dynamics,
//! and both joints carry viscous damping. Integration is semi-implicit Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_MUSCLES: usize = 6;
pub const N_JOINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    /// Upper-arm and forearm lengths (m).
    pub link_lengths: [f64; 2],
    /// Point masses at each link midpoint (kg).
    pub masses: [f64; 2],
    /// Viscous joint damping (N m s / rad).
    pub damping: f64,
    /// Activation time constant (s).
    pub activation_tau: f64,
    /// Peak isometric force per muscle (N).
    pub max_force: [f64; N_MUSCLES],
    /// Moment arms (m); row = joint, column = muscle. Positive flexes.
    pub moment_arms: [[f64; N_MUSCLES]; N_JOINTS],
    /// Length scale used to normalise muscle lengths and velocities (m).
    pub optimal_length: f64,
    /// Joint configuration at which every muscle has normalised length 1.
    pub reference_posture: [f64; 2],
    pub joint_min: [f64; 2],
    pub joint_max: [f64; 2],
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            link_lengths: [0.30, 0.33],
            masses: [1.82, 1.43],
            damping: 0.5,
            activation_tau: 0.05,
            max_force: [600.0, 600.0, 500.0, 500.0, 400.0, 400.0],
            moment_arms: [
                [0.04, -0.04, 0.0, 0.0, 0.03, -0.03],
                [0.0, 0.0, 0.03, -0.03, 0.03, -0.03],
            ],
            optimal_length: 0.1,
            reference_posture: [std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2],
            joint_min: [-std::f64::consts::FRAC_PI_2, 0.0],
            joint_max: [std::f64::consts::PI, 2.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub joint_angles: [f64; 2],
    pub joint_velocities: [f64; 2],
    pub activations: [f64; N_MUSCLES],
    pub muscle_lengths: [f64; N_MUSCLES],
    pub muscle_velocities: [f64; N_MUSCLES],
    pub endpoint: [f64; 2],
}

impl ArmState {
    pub fn is_finite(&self) -> bool {
        self.joint_angles
            .iter()
            .chain(&self.joint_velocities)
            .chain(&self.activations)
            .all(|v| v.is_finite())
    }
}

/// Everything the backward pass needs from one [`ArmParams::step_traced`].
#[derive(Debug, Clone)]
pub struct ArmTrace {
    q: [f64; 2],
    qd: [f64; 2],
    qdd: [f64; 2],
    k: f64,
    dt: f64,
    clamped: [bool; 2],
}

/// Adjoint of the dynamic state `(q, qd, activations)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmAdjoint {
    pub q: [f64; 2],
    pub qd: [f64; 2],
    pub act: [f64; N_MUSCLES],
}

/// Result flags of a single integration step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub joint_limited: bool,
}

impl ArmParams {
    fn inertia_terms(&self) -> (f64, f64, f64) {
        let [l1, _] = self.link_lengths;
        let [m1, m2] = self.masses;
        let r1 = 0.5 * self.link_lengths[0];
        let r2 = 0.5 * self.link_lengths[1];
        let a = m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2);
        let b = m2 * l1 * r2;
        let c = m2 * r2 * r2;
        (a, b, c)
    }

    fn mass_matrix(&self, q2: f64) -> [[f64; 2]; 2] {
        let (a, b, c) = self.inertia_terms();
        let cos = q2.cos();
        [[a + 2.0 * b * cos, c + b * cos], [c + b * cos, c]]
    }

    /// Coriolis and centripetal torques.
    fn velocity_torques(&self, q2: f64, qd: [f64; 2]) -> [f64; 2] {
        let (_, b, _) = self.inertia_terms();
        let s = b * q2.sin();
        [-s * qd[1] * (2.0 * qd[0] + qd[1]), s * qd[0] * qd[0]]
    }

    pub fn forward_kinematics(&self, q: [f64; 2]) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let q12 = q[0] + q[1];
        [l1 * q[0].cos() + l2 * q12.cos(), l1 * q[0].sin() + l2 * q12.sin()]
    }

    fn kinematic_jacobian(&self, q: [f64; 2]) -> [[f64; 2]; 2] {
        let [l1, l2] = self.link_lengths;
        let q12 = q[0] + q[1];
        [
            [-l1 * q[0].sin() - l2 * q12.sin(), -l2 * q12.sin()],
            [l1 * q[0].cos() + l2 * q12.cos(), l2 * q12.cos()],
        ]
    }

    /// Elbow-flexed inverse kinematics.
    pub fn inverse_kinematics(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let [l1, l2] = self.link_lengths;
        let d2 = p[0] * p[0] + p[1] * p[1];
        let cos_q2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&cos_q2) {
            return Err(Error::invalid("inverse_kinematics", format!("point {p:?} is out of reach")));
        }
        let q2 = cos_q2.acos();
        let q1 = p[1].atan2(p[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        Ok([q1, q2])
    }

    pub fn muscle_lengths(&self, q: [f64; 2]) -> [f64; N_MUSCLES] {
        let dq = [q[0] - self.reference_posture[0], q[1] - self.reference_posture[1]];
        std::array::from_fn(|m| {
            1.0 - (self.moment_arms[0][m] * dq[0] + self.moment_arms[1][m] * dq[1]) / self.optimal_length
        })
    }

    pub fn muscle_velocities(&self, qd: [f64; 2]) -> [f64; N_MUSCLES] {
        std::array::from_fn(|m| {
            -(self.moment_arms[0][m] * qd[0] + self.moment_arms[1][m] * qd[1]) / self.optimal_length
        })
    }

    /// Fill in the derived fields for a dynamic state.
    pub fn state(&self, q: [f64; 2], qd: [f64; 2], act: [f64; N_MUSCLES]) -> ArmState {
        ArmState {
            joint_angles: q,
            joint_velocities: qd,
            activations: act,
            muscle_lengths: self.muscle_lengths(q),
            muscle_velocities: self.muscle_velocities(qd),
            endpoint: self.forward_kinematics(q),
        }
    }

    /// Arm at rest with its endpoint at `p` and all muscles silent.
    pub fn rest_at(&self, p: [f64; 2]) -> Result<ArmState> {
        Ok(self.state(self.inverse_kinematics(p)?, [0.0; 2], [0.0; N_MUSCLES]))
    }

    /// Advance by `dt` seconds under muscle excitations in `[0, 1]`.
    pub fn step(&self, state: &ArmState, excitation: &[f64; N_MUSCLES], dt: f64) -> Result<(ArmState, StepFlags)> {
        if !(dt > 0.0) {
            return Err(Error::invalid("arm_step", format!("dt must be positive, got {dt}")));
        }
        if let Some(u) = excitation.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::invalid("arm_step", format!("excitation {u} outside [0, 1]")));
        }
        let (next, trace) = self.step_traced(state, excitation, dt);
        Ok((
            next,
            StepFlags {
                joint_limited: trace.clamped.iter().any(|&c| c),
            },
        ))
    }

    /// Unchecked step that also records what the adjoint pass needs.
    pub fn step_traced(&self, state: &ArmState, excitation: &[f64; N_MUSCLES], dt: f64) -> (ArmState, ArmTrace) {
        let q = state.joint_angles;
        let qd = state.joint_velocities;
        let k = (dt / self.activation_tau).min(1.0);
        let act: [f64; N_MUSCLES] = std::array::from_fn(|m| state.activations[m] + k * (excitation[m] - state.activations[m]));
        let h = self.velocity_torques(q[1], qd);
        let v: [f64; 2] = std::array::from_fn(|j| {
            let muscle: f64 = (0..N_MUSCLES).map(|m| self.moment_arms[j][m] * self.max_force[m] * act[m]).sum();
            muscle - h[j] - self.damping * qd[j]
        });
        let qdd = solve2(self.mass_matrix(q[1]), v);
        let mut qd_next = [qd[0] + dt * qdd[0], qd[1] + dt * qdd[1]];
        let mut q_next = [q[0] + dt * qd_next[0], q[1] + dt * qd_next[1]];
        let mut clamped = [false; 2];
        for j in 0..2 {
            if q_next[j] < self.joint_min[j] || q_next[j] > self.joint_max[j] {
                q_next[j] = q_next[j].clamp(self.joint_min[j], self.joint_max[j]);
                qd_next[j] = 0.0;
                clamped[j] = true;
            }
        }
        let trace = ArmTrace {
            q,
            qd,
            qdd,
            k,
            dt,
            clamped,
        };
        (self.state(q_next, qd_next, act), trace)
    }

    /// Pull the adjoint of the next dynamic state back through one step.
    /// Returns the adjoint of the previous state and of the excitation.
    pub fn step_vjp(&self, trace: &ArmTrace, next: &ArmAdjoint) -> (ArmAdjoint, [f64; N_MUSCLES]) {
        let mut g_q_next = next.q;
        let mut g_qd_next = next.qd;
        for j in 0..2 {
            if trace.clamped[j] {
                g_q_next[j] = 0.0;
                g_qd_next[j] = 0.0;
            }
        }
        let dt = trace.dt;
        // q' = q + dt qd', qd' = qd + dt qdd
        let g_qdp = [g_qd_next[0] + dt * g_q_next[0], g_qd_next[1] + dt * g_q_next[1]];
        let mut g_q = g_q_next;
        let mut g_qd = g_qdp;
        let g_qdd = [dt * g_qdp[0], dt * g_qdp[1]];
        // qdd = M^-1 v with M symmetric
        let mass = self.mass_matrix(trace.q[1]);
        let g_v = solve2(mass, g_qdd);
        let (_, b, _) = self.inertia_terms();
        let (sin2, cos2) = trace.q[1].sin_cos();
        // dM/dq2 = -b sin q2 [[2, 1], [1, 0]]
        let dm_qdd = [
            -b * sin2 * (2.0 * trace.qdd[0] + trace.qdd[1]),
            -b * sin2 * trace.qdd[0],
        ];
        g_q[1] -= g_v[0] * dm_qdd[0] + g_v[1] * dm_qdd[1];
        // v = R F(act) - h(q2, qd) - B qd
        let qd = trace.qd;
        let g_h = [-g_v[0], -g_v[1]];
        g_q[1] += b * cos2 * (g_h[0] * (-qd[1] * (2.0 * qd[0] + qd[1])) + g_h[1] * qd[0] * qd[0]);
        let s = b * sin2;
        g_qd[0] += g_h[0] * (-2.0 * s * qd[1]) + g_h[1] * (2.0 * s * qd[0]);
        g_qd[1] += g_h[0] * (-2.0 * s * (qd[0] + qd[1]));
        g_qd[0] -= self.damping * g_v[0];
        g_qd[1] -= self.damping * g_v[1];
        let mut g_act = [0.0; N_MUSCLES];
        let mut g_u = [0.0; N_MUSCLES];
        for m in 0..N_MUSCLES {
            let g_f = self.moment_arms[0][m] * g_v[0] + self.moment_arms[1][m] * g_v[1];
            let total = next.act[m] + self.max_force[m] * g_f;
            g_act[m] = (1.0 - trace.k) * total;
            g_u[m] = trace.k * total;
        }
        (
            ArmAdjoint {
                q: g_q,
                qd: g_qd,
                act: g_act,
            },
            g_u,
        )
    }

    /// Adjoint of `(q, qd)` given adjoints of the observed endpoint, muscle
    /// lengths and muscle velocities.
    pub fn observe_vjp(
        &self,
        q: [f64; 2],
        g_endpoint: [f64; 2],
        g_lengths: &[f64; N_MUSCLES],
        g_velocities: &[f64; N_MUSCLES],
    ) -> ([f64; 2], [f64; 2]) {
        let jac = self.kinematic_jacobian(q);
        let mut g_q = [
            jac[0][0] * g_endpoint[0] + jac[1][0] * g_endpoint[1],
            jac[0][1] * g_endpoint[0] + jac[1][1] * g_endpoint[1],
        ];
        let mut g_qd = [0.0; 2];
        for m in 0..N_MUSCLES {
            for j in 0..2 {
                let r = self.moment_arms[j][m] / self.optimal_length;
                g_q[j] -= r * g_lengths[m];
                g_qd[j] -= r * g_velocities[m];
            }
        }
        (g_q, g_qd)
    }
}

fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ]
}
