//! Closed-loop quantization laboratory: a double-precision plant driven by
//! either a real-arithmetic or a fixed-point controller path, from identical
//! initial conditions, so every divergence between the two runs is
//! attributable to quantization.

use crate::control::{control_step, ControlError, ControllerConfig, ControllerState};
use crate::kernels::{forward_dynamics_s, Binding, JointState, KernelError};
use crate::model::RobotModel;
use crate::FxpFormat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod analyze;
mod comp;
mod order;

pub use analyze::{analyze_errors, spearman, ErrorStats};
pub use comp::{evaluate_compensation, fit_compensation, CompensationParams};
pub use order::{heuristic_sample_order, joint_priority};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plant diverged at step {step} (state norm {norm:.3e})")]
    PlantBlowUp { step: usize, norm: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
}

/// Where evaluation states come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSource {
    /// Deterministically generated around the target posture.
    Seed { seed: u64 },
    /// Rows of `q..., qd...` loaded from a CSV file.
    Dataset { path: String },
}

impl Default for SampleSource {
    fn default() -> Self {
        SampleSource::Seed { seed: 0 }
    }
}

/// Which precision metrics gate a format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSelection {
    pub ee_max: bool,
    pub ee_rms: bool,
    pub torque_rms: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self { ee_max: true, ee_rms: false, torque_rms: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Plant integration step (s).
    pub dt: f64,
    /// Plant steps per rollout.
    pub steps: usize,
    /// Plant steps between control updates.
    pub control_every: usize,
    pub source: SampleSource,
    pub metrics: MetricSelection,
    /// End-effector trajectory-error tolerance (m).
    pub tolerance_m: f64,
    /// Torque-difference tolerance (N·m RMS), when that metric is selected.
    pub torque_tolerance: f64,
    /// Regulation target posture; defaults to a mid-range pose.
    pub target: Option<Vec<f64>>,
    /// Initial joint-position perturbation around the target (rad).
    pub init_pos_offset: f64,
    /// Initial joint-velocity magnitude (rad/s).
    pub init_vel: f64,
    pub blowup_norm: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            steps: 2000,
            control_every: 1,
            source: SampleSource::default(),
            metrics: MetricSelection::default(),
            tolerance_m: 5e-4,
            torque_tolerance: 1.0,
            target: None,
            init_pos_offset: 0.25,
            init_vel: 0.3,
            blowup_norm: 1e6,
        }
    }
}

impl SimConfig {
    /// Slightly off-center pose within limits, away from stretched
    /// singularities.
    pub fn default_target(model: &RobotModel) -> Vec<f64> {
        (0..model.n_bodies())
            .map(|i| {
                let l = &model.joint(i).limits;
                l.lower + 0.55 * (l.upper - l.lower)
            })
            .collect()
    }

    pub fn resolve_target(&self, model: &RobotModel) -> Vec<f64> {
        self.target.clone().unwrap_or_else(|| Self::default_target(model))
    }

    /// Deterministic initial state for rollout `run_index`.
    pub fn initial_state(
        &self,
        model: &RobotModel,
        run_index: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        match &self.source {
            SampleSource::Seed { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(run_index as u64 + 1)),
                );
                let target = self.resolve_target(model);
                let n = model.n_bodies();
                let mut q = vec![0.0; n];
                let mut qd = vec![0.0; n];
                for i in 0..n {
                    let l = &model.joint(i).limits;
                    q[i] = (target[i] + rng.random_range(-self.init_pos_offset..=self.init_pos_offset))
                        .clamp(l.lower, l.upper);
                    qd[i] = rng.random_range(-self.init_vel..=self.init_vel);
                }
                Ok((q, qd))
            }
            SampleSource::Dataset { path } => {
                let rows = load_dataset(path, model.n_bodies())?;
                if rows.is_empty() {
                    return Err(SimError::Dataset(format!("{path}: empty dataset")));
                }
                Ok(rows[run_index % rows.len()].clone())
            }
        }
    }
}

fn load_dataset(path: &str, n: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>, SimError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SimError::Dataset(format!("{path}: {e}")))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("q0") {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Dataset(format!("{path}:{}: {e}", ln + 1)))?;
        if vals.len() != 2 * n {
            return Err(SimError::Dataset(format!(
                "{path}:{}: expected {} values, got {}",
                ln + 1,
                2 * n,
                vals.len()
            )));
        }
        rows.push((vals[..n].to_vec(), vals[n..].to_vec()));
    }
    Ok(rows)
}

/// Ground-truth plant step, always in double precision: semi-implicit Euler
/// on `q̈ = FD(q, q̇, τ)`.
pub fn step_plant(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    tau: &[f64],
    dt: f64,
    blowup_norm: f64,
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let qdd = forward_dynamics_s::<f64>(model, q, qd, tau, None, None)?;
    let n = q.len();
    let mut q2 = vec![0.0; n];
    let mut qd2 = vec![0.0; n];
    let mut norm_sq = 0.0;
    for i in 0..n {
        qd2[i] = qd[i] + qdd[i] * dt;
        q2[i] = q[i] + qd2[i] * dt;
        norm_sq += q2[i] * q2[i] + qd2[i] * qd2[i];
    }
    if !norm_sq.is_finite() || norm_sq.sqrt() > blowup_norm {
        return Err(SimError::PlantBlowUp { step: 0, norm: norm_sq.sqrt() });
    }
    Ok((q2, qd2))
}

/// Everything recorded about one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub ee: Vec<[f64; 3]>,
}

/// Paired rollouts: run A with the real controller path, run B with the
/// quantized one, identical plant and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub dt: f64,
    pub target: Vec<f64>,
    pub fmt: Option<FxpFormat>,
    pub reference: RunTrace,
    pub quantized: RunTrace,
}

/// Scalar metrics extracted from a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub ee_max: f64,
    pub ee_rms: f64,
    pub torque_rms: f64,
    pub posture_max: f64,
}

impl TrajectoryPair {
    pub fn metrics(&self) -> RolloutMetrics {
        let steps = self.reference.ee.len();
        let mut ee_max = 0.0f64;
        let mut ee_sq = 0.0f64;
        let mut tau_sq = 0.0f64;
        let mut posture_max = 0.0f64;
        for k in 0..steps {
            let a = &self.reference.ee[k];
            let b = &self.quantized.ee[k];
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            ee_max = ee_max.max(d);
            ee_sq += d * d;
            let mut t = 0.0;
            for (x, y) in self.reference.tau[k].iter().zip(&self.quantized.tau[k]) {
                t += (x - y) * (x - y);
            }
            tau_sq += t;
            for (x, y) in self.reference.q[k].iter().zip(&self.quantized.q[k]) {
                posture_max = posture_max.max((x - y).abs());
            }
        }
        RolloutMetrics {
            ee_max,
            ee_rms: (ee_sq / steps as f64).sqrt(),
            torque_rms: (tau_sq / steps as f64).sqrt(),
            posture_max,
        }
    }
}

fn run_closed_loop(
    model: &RobotModel,
    ctrl: &ControllerConfig,
    binding: &Binding,
    sim: &SimConfig,
    q0: &[f64],
    qd0: &[f64],
    target: &[f64],
) -> Result<RunTrace, SimError> {
    let n = model.n_bodies();
    let reference = JointState::new(target.to_vec(), vec![0.0; n], vec![0.0; n]);
    let mut state = ControllerState::default();
    let mut q = q0.to_vec();
    let mut qd = qd0.to_vec();
    let mut tau = vec![0.0; n];
    let mut trace = RunTrace {
        q: Vec::with_capacity(sim.steps),
        qd: Vec::with_capacity(sim.steps),
        tau: Vec::with_capacity(sim.steps),
        ee: Vec::with_capacity(sim.steps),
    };
    for step in 0..sim.steps {
        if step % sim.control_every == 0 {
            let out = control_step(model, binding, ctrl, &mut state, &q, &qd, &reference)?;
            tau = out.tau;
        }
        trace.q.push(q.clone());
        trace.qd.push(qd.clone());
        trace.tau.push(tau.clone());
        let ee = model.ee_position(&q);
        trace.ee.push([ee.x, ee.y, ee.z]);
        let (q2, qd2) = step_plant(model, &q, &qd, &tau, sim.dt, sim.blowup_norm)
            .map_err(|e| match e {
                SimError::PlantBlowUp { norm, .. } => SimError::PlantBlowUp { step, norm },
                other => other,
            })?;
        q = q2;
        qd = qd2;
    }
    Ok(trace)
}

/// Run the pair. `quantized` is the controller binding for run B; run A
/// always uses the real binding. With `Binding::Real` for B the runs are
/// bit-identical (the degenerate-format check).
pub fn rollout_pair(
    model: &RobotModel,
    ctrl: &ControllerConfig,
    quantized: &Binding,
    sim: &SimConfig,
    run_index: usize,
) -> Result<TrajectoryPair, SimError> {
    let (q0, qd0) = sim.initial_state(model, run_index)?;
    let target = sim.resolve_target(model);
    let reference = run_closed_loop(model, ctrl, &Binding::real(), sim, &q0, &qd0, &target)?;
    let quant_trace = run_closed_loop(model, ctrl, quantized, sim, &q0, &qd0, &target)?;
    let fmt = match quantized {
        Binding::Real => None,
        Binding::Fxp { fmt, .. } => Some(*fmt),
    };
    Ok(TrajectoryPair { dt: sim.dt, target, fmt, reference, quantized: quant_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::PidConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let model = crate::fixtures::iiwa();
        let n = model.n_bodies();
        let q = vec![0.4; n];
        let comp = Binding::real()
            .rnea(&model, &JointState::new(q.clone(), vec![0.0; n], vec![0.0; n]), None)
            .unwrap();
        let (q2, qd2) = step_plant(&model, &q, &vec![0.0; n], &comp, 1e-3, 1e6).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(q2[i], q[i], epsilon = 1e-12);
            assert_abs_diff_eq!(qd2[i], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn small_amplitude_pendulum_period() {
        let model = crate::fixtures::pendulum();
        // effective small-angle period: 2π sqrt((m l² + I)/(m g l))
        let expect = 2.0 * std::f64::consts::PI * (1.001f64 / 9.81).sqrt();
        let mut q = vec![0.05];
        let mut qd = vec![0.0];
        let dt = 1e-3;
        let mut crossings = Vec::new();
        let mut prev = q[0];
        for step in 1..20_000 {
            let (q2, qd2) = step_plant(&model, &q, &qd, &[0.0], dt, 1e6).unwrap();
            q = q2;
            qd = qd2;
            if prev <= 0.0 && q[0] > 0.0 {
                crossings.push(step as f64 * dt);
            }
            prev = q[0];
        }
        assert!(crossings.len() >= 3);
        let period = (crossings[crossings.len() - 1] - crossings[0])
            / (crossings.len() - 1) as f64;
        assert!(
            (period - expect).abs() / expect < 0.02,
            "period {period} vs {expect}"
        );
    }

    #[test]
    fn unforced_pendulum_energy_drift_is_small() {
        let model = crate::fixtures::pendulum();
        let energy = |q: f64, qd: f64| {
            // KE about pivot + PE of the COM
            0.5 * 1.001 * qd * qd - 9.81 * q.cos()
        };
        let mut q = vec![0.6];
        let mut qd = vec![0.0];
        let e0 = energy(q[0], qd[0]);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let (q2, qd2) = step_plant(&model, &q, &qd, &[0.0], 1e-3, 1e6).unwrap();
            q = q2;
            qd = qd2;
            let drift = (energy(q[0], qd[0]) - e0).abs() / e0.abs();
            worst = worst.max(drift);
        }
        assert!(worst < 0.005, "energy drift {worst}");
    }

    #[test]
    fn degenerate_format_gives_identical_runs() {
        let model = crate::fixtures::pendulum();
        let sim = SimConfig { steps: 200, ..SimConfig::default() };
        let ctrl = ControllerConfig::Pid(PidConfig::default_for(1));
        let pair = rollout_pair(&model, &ctrl, &Binding::real(), &sim, 0).unwrap();
        assert_eq!(pair.reference, pair.quantized);
        let m = pair.metrics();
        assert_eq!(m.ee_max, 0.0);
        assert_eq!(m.torque_rms, 0.0);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let model = crate::fixtures::pendulum();
        let sim = SimConfig { steps: 150, ..SimConfig::default() };
        let ctrl = ControllerConfig::Pid(PidConfig::default_for(1));
        let fmt: FxpFormat = "Q10.8".parse().unwrap();
        let a = rollout_pair(&model, &ctrl, &Binding::fxp(fmt), &sim, 3).unwrap();
        let b = rollout_pair(&model, &ctrl, &Binding::fxp(fmt), &sim, 3).unwrap();
        assert_eq!(a, b);
        // different run index, different initial state
        let c = rollout_pair(&model, &ctrl, &Binding::fxp(fmt), &sim, 4).unwrap();
        assert_ne!(a.reference.q[0], c.reference.q[0]);
    }

    #[test]
    fn plant_trace_is_independent_of_format() {
        let model = crate::fixtures::pendulum();
        let sim = SimConfig { steps: 100, ..SimConfig::default() };
        let ctrl = ControllerConfig::Pid(PidConfig::default_for(1));
        let a = rollout_pair(&model, &ctrl, &Binding::fxp("Q10.8".parse().unwrap()), &sim, 1)
            .unwrap();
        let b = rollout_pair(&model, &ctrl, &Binding::fxp("Q16.16".parse().unwrap()), &sim, 1)
            .unwrap();
        assert_eq!(a.reference, b.reference, "run A must not see the format");
    }
}
