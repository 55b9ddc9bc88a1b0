//! Computed-torque control with PID on the tracking error:
//! `τ = ID(q, q̇, q̈_ref + Kp e + Kd ė + Ki ∫e)`.

use super::{ControlError, ControlOutput};
use crate::kernels::{Binding, JointState};
use crate::model::RobotModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    /// Per-joint bound on the accumulated integral (rad·s).
    pub integral_clamp: f64,
    /// Control period (s).
    pub dt: f64,
}

impl PidConfig {
    /// Mild conventional gains.
    pub fn default_for(n: usize) -> Self {
        Self {
            kp: vec![60.0; n],
            ki: vec![5.0; n],
            kd: vec![14.0; n],
            integral_clamp: 1.0,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PidState {
    integral: Vec<f64>,
}

impl PidState {
    pub fn new(n: usize) -> Self {
        Self { integral: vec![0.0; n] }
    }
}

pub fn pid_computed_torque(
    model: &RobotModel,
    binding: &Binding,
    q: &[f64],
    qd: &[f64],
    reference: &JointState,
    cfg: &PidConfig,
    state: &mut PidState,
) -> Result<ControlOutput, ControlError> {
    let n = model.n_bodies();
    let mut qdd_cmd = vec![0.0; n];
    let mut err_sq = 0.0;
    for i in 0..n {
        let e = reference.q[i] - q[i];
        let ed = reference.qd[i] - qd[i];
        state.integral[i] =
            (state.integral[i] + e * cfg.dt).clamp(-cfg.integral_clamp, cfg.integral_clamp);
        qdd_cmd[i] = reference.qdd[i]
            + cfg.kp[i] * e
            + cfg.kd[i] * ed
            + cfg.ki[i] * state.integral[i];
        err_sq += e * e;
    }
    let s = JointState::new(q.to_vec(), qd.to_vec(), qdd_cmd);
    let tau = binding.rnea(model, &s, None)?;
    Ok(ControlOutput { tau, tracking_error: err_sq.sqrt(), cost: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn at_rest_on_target_outputs_gravity_compensation() {
        let model = fixtures::iiwa();
        let n = model.n_bodies();
        let q = vec![0.4; n];
        let reference = JointState::new(q.clone(), vec![0.0; n], vec![0.0; n]);
        let cfg = PidConfig::default_for(n);
        let mut st = PidState::new(n);
        let out = pid_computed_torque(
            &model,
            &Binding::real(),
            &q,
            &vec![0.0; n],
            &reference,
            &cfg,
            &mut st,
        )
        .unwrap();
        let comp = Binding::real()
            .rnea(&model, &JointState::new(q, vec![0.0; n], vec![0.0; n]), None)
            .unwrap();
        // one dt of integral action is negligible but not exactly zero
        for i in 0..n {
            assert_abs_diff_eq!(out.tau[i], comp[i], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(out.tracking_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pendulum_closed_loop_is_locally_stable() {
        // Linearized closed loop about the target: with computed torque the
        // error dynamics are ë = -Kd ė - Kp e, stable for Kp, Kd > 0.
        let model = fixtures::pendulum();
        let cfg = PidConfig { kp: vec![40.0], ki: vec![0.0], kd: vec![9.0], integral_clamp: 1.0, dt: 1e-3 };
        let target = 0.7f64;
        let reference = JointState::new(vec![target], vec![0.0], vec![0.0]);

        // analytic linearization of the closed loop at the target
        let a = nalgebra::Matrix2::new(0.0, 1.0, -cfg.kp[0], -cfg.kd[0]);
        let eig = a.complex_eigenvalues();
        for e in eig.iter() {
            assert!(e.re < 0.0, "closed-loop eigenvalue {e} not in left half-plane");
        }

        // and the nonlinear loop actually converges from a perturbation
        let mut q = vec![target + 0.1];
        let mut qd = vec![0.0];
        let mut st = PidState::new(1);
        let dt = 1e-3;
        for _ in 0..4000 {
            let out = pid_computed_torque(
                &model,
                &Binding::real(),
                &q,
                &qd,
                &reference,
                &cfg,
                &mut st,
            )
            .unwrap();
            let qdd =
                crate::kernels::forward_dynamics_s::<f64>(&model, &q, &qd, &out.tau, None, None)
                    .unwrap();
            qd[0] += qdd[0] * dt;
            q[0] += qd[0] * dt;
        }
        assert!((q[0] - target).abs() < 1e-4, "did not converge: q = {}", q[0]);
    }
}
