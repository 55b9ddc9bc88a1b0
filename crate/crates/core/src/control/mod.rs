//! Controller templates consuming the dynamics kernels through the scalar
//! binding, so real-precision and quantized control paths are directly
//! comparable. Gains are deliberately mild and conventional; quantization
//! sensitivity is the measurand, not tracking performance.

use crate::kernels::{Binding, JointState, KernelError};
use crate::model::RobotModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod lqr;
mod mpc;
mod pid;

pub use lqr::{lqr_gain, LqrConfig};
pub use mpc::{mpc_step, MpcConfig, MpcState};
pub use pid::{pid_computed_torque, PidConfig, PidState};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("Riccati recursion did not converge within {iters} iterations (residual {residual:.3e})")]
    RiccatiDiverged { iters: usize, residual: f64 },
    #[error("closed-loop spectral radius {radius:.6} is not < 1")]
    UnstableGain { radius: f64 },
    #[error("rollout diverged at step {step} (state norm {norm:.3e})")]
    RolloutDiverged { step: usize, norm: f64 },
}

/// Torque command plus diagnostics.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub tau: Vec<f64>,
    /// Joint-space tracking error norm at the time of the command.
    pub tracking_error: f64,
    /// Final optimization cost, for optimizing controllers.
    pub cost: Option<f64>,
}

/// Controller selection plus parameters, as read from run configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    Pid(PidConfig),
    Lqr(LqrConfig),
    Mpc(MpcConfig),
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::Pid(_) => "pid",
            ControllerConfig::Lqr(_) => "lqr",
            ControllerConfig::Mpc(_) => "mpc",
        }
    }
}

/// Per-episode mutable controller state (integral term, cached gain,
/// warm-start trajectory). One instance per closed-loop run.
#[derive(Debug, Clone, Default)]
pub struct ControllerState {
    pid: Option<PidState>,
    lqr_gain: Option<DMatrix<f64>>,
    lqr_feedforward: Option<Vec<f64>>,
    mpc: Option<MpcState>,
}

/// One control update: measured state in, torque command out. Deterministic
/// for a given binding and state.
pub fn control_step(
    model: &RobotModel,
    binding: &Binding,
    cfg: &ControllerConfig,
    state: &mut ControllerState,
    q: &[f64],
    qd: &[f64],
    reference: &JointState,
) -> Result<ControlOutput, ControlError> {
    match cfg {
        ControllerConfig::Pid(pid) => {
            let st = state
                .pid
                .get_or_insert_with(|| PidState::new(model.n_bodies()));
            pid_computed_torque(model, binding, q, qd, reference, pid, st)
        }
        ControllerConfig::Lqr(lqr) => {
            if state.lqr_gain.is_none() {
                let k = lqr_gain(model, binding, &reference.q, lqr)?;
                let rest = JointState::new(
                    reference.q.clone(),
                    vec![0.0; model.n_bodies()],
                    vec![0.0; model.n_bodies()],
                );
                let tau_ff = binding.rnea(model, &rest, None)?;
                state.lqr_gain = Some(k);
                state.lqr_feedforward = Some(tau_ff);
            }
            let k = state.lqr_gain.as_ref().unwrap();
            let tau_ff = state.lqr_feedforward.as_ref().unwrap();
            let n = model.n_bodies();
            let mut tau = tau_ff.clone();
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut u = 0.0;
                for j in 0..n {
                    u += k[(i, j)] * (reference.q[j] - q[j]);
                    u += k[(i, n + j)] * (reference.qd[j] - qd[j]);
                }
                tau[i] += u;
                let e = reference.q[i] - q[i];
                err_sq += e * e;
            }
            Ok(ControlOutput { tau, tracking_error: err_sq.sqrt(), cost: None })
        }
        ControllerConfig::Mpc(mpc) => {
            let st = state.mpc.get_or_insert_with(MpcState::default);
            mpc_step(model, binding, q, qd, reference, mpc, st)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn controllers_are_deterministic() {
        let model = fixtures::iiwa();
        let n = model.n_bodies();
        let reference = JointState::new(vec![0.3; n], vec![0.0; n], vec![0.0; n]);
        let q = vec![0.25; n];
        let qd = vec![0.05; n];
        for cfg in [
            ControllerConfig::Pid(PidConfig::default_for(n)),
            ControllerConfig::Lqr(LqrConfig::default_for(n)),
            ControllerConfig::Mpc(MpcConfig::quick()),
        ] {
            let run = || {
                let mut st = ControllerState::default();
                control_step(&model, &Binding::real(), &cfg, &mut st, &q, &qd, &reference)
                    .unwrap()
                    .tau
            };
            let a = run();
            let b = run();
            assert_eq!(a, b, "{} not deterministic", cfg.name());
        }
    }
}
