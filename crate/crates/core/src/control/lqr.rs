//! Discrete LQR gain from the linearized dynamics at an operating point.

use super::ControlError;
use crate::kernels::Binding;
use crate::model::RobotModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrConfig {
    /// Diagonal of the state cost (length 2 N_B: positions then velocities).
    pub q_diag: Vec<f64>,
    /// Diagonal of the input cost (length N_B).
    pub r_diag: Vec<f64>,
    /// Discretization step (s).
    pub dt: f64,
    pub riccati_max_iters: usize,
    pub riccati_tol: f64,
}

impl LqrConfig {
    pub fn default_for(n: usize) -> Self {
        let mut q_diag = vec![400.0; 2 * n];
        for v in q_diag.iter_mut().skip(n) {
            *v = 4.0;
        }
        Self { q_diag, r_diag: vec![0.01; n], dt: 1e-3, riccati_max_iters: 20_000, riccati_tol: 1e-10 }
    }
}

/// Build (A, B) by Euler discretization of the linearized dynamics at a rest
/// operating point held by gravity-compensation torque.
pub fn linearize(
    model: &RobotModel,
    binding: &Binding,
    operating_q: &[f64],
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ControlError> {
    let n = model.n_bodies();
    let qd0 = vec![0.0; n];
    let rest = crate::kernels::JointState::new(operating_q.to_vec(), qd0.clone(), qd0.clone());
    let tau0 = binding.rnea(model, &rest, None)?;
    let d = binding.fd_derivatives(model, operating_q, &qd0, &tau0)?;
    let minv = d.wrt_tau.as_ref().expect("fd derivatives carry ∂FD/∂τ");

    let mut a = DMatrix::identity(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        a[(i, n + i)] += dt;
        for j in 0..n {
            a[(n + i, j)] += dt * d.wrt_q[(i, j)];
            a[(n + i, n + j)] += dt * d.wrt_qd[(i, j)];
            b[(n + i, j)] = dt * minv[(i, j)];
        }
    }
    Ok((a, b))
}

/// Iterate the discrete Riccati recursion to its fixed point and return the
/// feedback gain K (τ = K (x_ref − x) about the operating point).
pub fn lqr_gain(
    model: &RobotModel,
    binding: &Binding,
    operating_q: &[f64],
    cfg: &LqrConfig,
) -> Result<DMatrix<f64>, ControlError> {
    let (a, b) = linearize(model, binding, operating_q, cfg.dt)?;
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&cfg.q_diag));
    let r = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&cfg.r_diag));

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.riccati_max_iters {
        let btp = &bt * &p;
        let gram = &r + &btp * &b;
        let gain_rhs = &btp * &a;
        let k = gram
            .clone()
            .lu()
            .solve(&gain_rhs)
            .ok_or(ControlError::RiccatiDiverged { iters: 0, residual: f64::NAN })?;
        let p_next = &q + &at * &p * &a - (&at * &p * &b) * &k;
        // symmetrize against drift
        let p_next = (&p_next + p_next.transpose()) * 0.5;
        residual = (&p_next - &p).abs().max();
        p = p_next;
        if residual < cfg.riccati_tol {
            break;
        }
    }
    if residual >= cfg.riccati_tol {
        return Err(ControlError::RiccatiDiverged { iters: cfg.riccati_max_iters, residual });
    }
    let btp = &bt * &p;
    let gram = &r + &btp * &b;
    let k = gram
        .lu()
        .solve(&(&btp * &a))
        .ok_or(ControlError::RiccatiDiverged { iters: cfg.riccati_max_iters, residual })?;

    let closed = &a - &b * &k;
    let radius = closed
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0f64, f64::max);
    if radius >= 1.0 {
        return Err(ControlError::UnstableGain { radius });
    }
    Ok(k)
}
