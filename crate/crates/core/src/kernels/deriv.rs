//! First-order dynamics derivatives by forward-mode differentiation of the
//! recursive kernels. Running the duals over the fixed-point binding yields
//! device-model derivative arithmetic; over f64 they are exact to roundoff,
//! which satisfies the finite-difference accuracy contract.

use super::fd::forward_dynamics_s;
use super::minv::minv_deferred_s;
use super::rnea::rnea_s;
use super::KernelError;
use crate::model::RobotModel;
use crate::scalar::{Dual, Scalar};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynTarget {
    InverseDynamics,
    ForwardDynamics,
}

/// Jacobians of inverse or forward dynamics with respect to q and q̇.
#[derive(Debug, Clone)]
pub struct DynDerivatives {
    pub target: DynTarget,
    pub wrt_q: DMatrix<f64>,
    pub wrt_qd: DMatrix<f64>,
    /// ∂FD/∂τ = M⁻¹; only present for the forward-dynamics target.
    pub wrt_tau: Option<DMatrix<f64>>,
}

fn seed_vec<S: Scalar>(vals: &[f64], seeded: Option<usize>) -> Vec<Dual<S>> {
    vals.iter()
        .enumerate()
        .map(|(k, &v)| {
            let base = S::from_f64(v);
            if Some(k) == seeded {
                Dual::seeded(base)
            } else {
                Dual::constant(base)
            }
        })
        .collect()
}

/// ∂τ/∂q and ∂τ/∂q̇ of the inverse-dynamics map at (q, q̇, q̈).
pub fn id_derivatives_s<S: Scalar>(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
) -> DynDerivatives {
    let n = model.n_bodies();
    let mut wrt_q = DMatrix::zeros(n, n);
    let mut wrt_qd = DMatrix::zeros(n, n);
    for j in 0..n {
        let qs = seed_vec::<S>(q, Some(j));
        let qds = seed_vec::<S>(qd, None);
        let qdds = seed_vec::<S>(qdd, None);
        let tau = rnea_s::<Dual<S>>(model, &qs, &qds, &qdds, None, true);
        for i in 0..n {
            wrt_q[(i, j)] = tau[i].dx.to_f64();
        }
    }
    for j in 0..n {
        let qs = seed_vec::<S>(q, None);
        let qds = seed_vec::<S>(qd, Some(j));
        let qdds = seed_vec::<S>(qdd, None);
        let tau = rnea_s::<Dual<S>>(model, &qs, &qds, &qdds, None, true);
        for i in 0..n {
            wrt_qd[(i, j)] = tau[i].dx.to_f64();
        }
    }
    DynDerivatives { target: DynTarget::InverseDynamics, wrt_q, wrt_qd, wrt_tau: None }
}

/// True Jacobian of forward dynamics at (q, q̇, τ):
/// `∂FD/∂x = −M⁻¹ ∂ID/∂x` evaluated at q̈ = FD(q, q̇, τ), and `∂FD/∂τ = M⁻¹`.
pub fn fd_derivatives_s<S: Scalar>(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    tau: &[f64],
    comp: Option<&[f64]>,
) -> Result<DynDerivatives, KernelError> {
    let n = model.n_bodies();
    let qs: Vec<S> = q.iter().map(|&v| S::from_f64(v)).collect();
    let qds: Vec<S> = qd.iter().map(|&v| S::from_f64(v)).collect();
    let taus: Vec<S> = tau.iter().map(|&v| S::from_f64(v)).collect();
    let qdd0 = forward_dynamics_s::<S>(model, &qs, &qds, &taus, None, comp)?;
    let qdd0_f: Vec<f64> = qdd0.iter().map(|v| v.to_f64()).collect();

    let id = id_derivatives_s::<S>(model, q, qd, &qdd0_f);
    let (mut minv, _) = minv_deferred_s::<S>(model, &qs)?;
    if let Some(off) = comp {
        for k in 0..n * n {
            minv[k] = minv[k] + S::from_f64(off[k]);
        }
    }

    // The products run in the kernel scalar so the quantized binding models
    // the device MAC arrays end to end.
    let neg_product = |did: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let pairs: Vec<(S, S)> = (0..n)
                    .map(|k| (minv[i * n + k], S::from_f64(did[(k, j)])))
                    .collect();
                out[(i, j)] = -S::dot_dyn(&pairs).to_f64();
            }
        }
        out
    };
    let wrt_q = neg_product(&id.wrt_q);
    let wrt_qd = neg_product(&id.wrt_qd);
    let wrt_tau = DMatrix::from_fn(n, n, |i, j| minv[i * n + j].to_f64());
    Ok(DynDerivatives {
        target: DynTarget::ForwardDynamics,
        wrt_q,
        wrt_qd,
        wrt_tau: Some(wrt_tau),
    })
}
