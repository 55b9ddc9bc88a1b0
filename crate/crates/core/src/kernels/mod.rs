//! Scalar-generic dynamics kernels and the binding layer that selects the
//! arithmetic they run in.

use crate::fxp::FxpFormat;
use crate::model::RobotModel;
use crate::scalar::{with_fxp_format, Scalar};
use crate::spatial::SpatialVec;
use crate::FxpValue;
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

pub mod deriv;
pub mod fd;
pub mod minv;
pub mod rnea;

pub use deriv::{fd_derivatives_s, id_derivatives_s, DynDerivatives, DynTarget};
pub use fd::forward_dynamics_s;
pub use minv::{minv_deferred_s, minv_original_s, MinvWorkspace};
pub use rnea::{link_velocities_s, mass_matrix_s, rnea_s};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-positive articulated pivot D at joint {joint} (bad inertia data)")]
    NonPositivePivot { joint: usize },
}

/// Joint-space state (q, q̇, q̈).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl JointState {
    pub fn new(q: Vec<f64>, qd: Vec<f64>, qdd: Vec<f64>) -> Self {
        Self { q, qd, qdd }
    }

    pub fn zeros(n: usize) -> Self {
        Self { q: vec![0.0; n], qd: vec![0.0; n], qdd: vec![0.0; n] }
    }

    pub fn check(&self, n: usize) -> Result<(), KernelError> {
        for v in [&self.q, &self.qd, &self.qdd] {
            if v.len() != n {
                return Err(KernelError::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        Ok(())
    }
}

/// Arithmetic binding a kernel call runs under. The same recursions serve as
/// the double-precision reference and the fixed-point device model.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Real,
    Fxp {
        fmt: FxpFormat,
        /// Wide-accumulator MAC chains (one rounding per dot) when true;
        /// per-operation rounding otherwise.
        wide_dot: bool,
        /// Optional n×n row-major offset added to every computed M⁻¹.
        comp: Option<Vec<f64>>,
    },
}

impl Binding {
    pub fn real() -> Self {
        Binding::Real
    }

    pub fn fxp(fmt: FxpFormat) -> Self {
        Binding::Fxp { fmt, wide_dot: true, comp: None }
    }

    pub fn with_compensation(self, offset: Vec<f64>) -> Self {
        match self {
            Binding::Real => Binding::Real,
            Binding::Fxp { fmt, wide_dot, .. } => {
                Binding::Fxp { fmt, wide_dot, comp: Some(offset) }
            }
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Binding::Fxp { .. })
    }

    fn comp_matrix(&self) -> Option<&[f64]> {
        match self {
            Binding::Real => None,
            Binding::Fxp { comp, .. } => comp.as_deref(),
        }
    }

    /// Inverse dynamics torque.
    pub fn rnea(
        &self,
        model: &RobotModel,
        s: &JointState,
        fext: Option<&[[f64; 6]]>,
    ) -> Result<Vec<f64>, KernelError> {
        let n = model.n_bodies();
        s.check(n)?;
        if let Some(f) = fext {
            if f.len() != n {
                return Err(KernelError::DimensionMismatch { expected: n, got: f.len() });
            }
        }
        Ok(match self {
            Binding::Real => {
                let fext = fext.map(|f| f.iter().map(|&v| SpatialVec::from_f64(v)).collect::<Vec<_>>());
                rnea_s::<f64>(model, &s.q, &s.qd, &s.qdd, fext.as_deref(), true)
            }
            Binding::Fxp { fmt, wide_dot, .. } => with_fxp_format(*fmt, *wide_dot, || {
                let q = quantized(&s.q);
                let qd = quantized(&s.qd);
                let qdd = quantized(&s.qdd);
                let fext =
                    fext.map(|f| f.iter().map(|&v| SpatialVec::from_f64(v)).collect::<Vec<_>>());
                to_f64(&rnea_s::<FxpValue>(model, &q, &qd, &qdd, fext.as_deref(), true))
            }),
        })
    }

    /// Joint-space mass matrix.
    pub fn mass_matrix(&self, model: &RobotModel, q: &[f64]) -> Result<DMatrix<f64>, KernelError> {
        let n = model.n_bodies();
        if q.len() != n {
            return Err(KernelError::DimensionMismatch { expected: n, got: q.len() });
        }
        let flat = match self {
            Binding::Real => mass_matrix_s::<f64>(model, q),
            Binding::Fxp { fmt, wide_dot, .. } => with_fxp_format(*fmt, *wide_dot, || {
                to_f64(&mass_matrix_s::<FxpValue>(model, &quantized(q)))
            }),
        };
        Ok(DMatrix::from_fn(n, n, |i, j| flat[i * n + j]))
    }

    /// Analytical M⁻¹ (division-deferring variant), compensation applied.
    pub fn minv(&self, model: &RobotModel, q: &[f64]) -> Result<DMatrix<f64>, KernelError> {
        let n = model.n_bodies();
        if q.len() != n {
            return Err(KernelError::DimensionMismatch { expected: n, got: q.len() });
        }
        let mut flat = match self {
            Binding::Real => minv_deferred_s::<f64>(model, q)?.0,
            Binding::Fxp { fmt, wide_dot, .. } => with_fxp_format(*fmt, *wide_dot, || {
                minv_deferred_s::<FxpValue>(model, &quantized(q)).map(|(m, _)| to_f64(&m))
            })?,
        };
        if let Some(off) = self.comp_matrix() {
            if off.len() == flat.len() {
                for k in 0..flat.len() {
                    flat[k] += off[k];
                }
            }
        }
        Ok(DMatrix::from_fn(n, n, |i, j| flat[i * n + j]))
    }

    /// Forward dynamics q̈ = M⁻¹ (τ − C).
    pub fn forward_dynamics(
        &self,
        model: &RobotModel,
        q: &[f64],
        qd: &[f64],
        tau: &[f64],
    ) -> Result<Vec<f64>, KernelError> {
        let n = model.n_bodies();
        for v in [q, qd, tau] {
            if v.len() != n {
                return Err(KernelError::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        match self {
            Binding::Real => {
                forward_dynamics_s::<f64>(model, q, qd, tau, None, None)
            }
            Binding::Fxp { fmt, wide_dot, comp } => with_fxp_format(*fmt, *wide_dot, || {
                let out = forward_dynamics_s::<FxpValue>(
                    model,
                    &quantized(q),
                    &quantized(qd),
                    &quantized(tau),
                    None,
                    comp.as_deref(),
                )?;
                Ok(to_f64(&out))
            }),
        }
    }

    /// ∂τ/∂(q, q̇) at the state's acceleration.
    pub fn id_derivatives(
        &self,
        model: &RobotModel,
        s: &JointState,
    ) -> Result<DynDerivatives, KernelError> {
        s.check(model.n_bodies())?;
        Ok(match self {
            Binding::Real => id_derivatives_s::<f64>(model, &s.q, &s.qd, &s.qdd),
            Binding::Fxp { fmt, wide_dot, .. } => with_fxp_format(*fmt, *wide_dot, || {
                id_derivatives_s::<FxpValue>(model, &s.q, &s.qd, &s.qdd)
            }),
        })
    }

    /// True Jacobian of forward dynamics, plus ∂FD/∂τ = M⁻¹.
    pub fn fd_derivatives(
        &self,
        model: &RobotModel,
        q: &[f64],
        qd: &[f64],
        tau: &[f64],
    ) -> Result<DynDerivatives, KernelError> {
        let n = model.n_bodies();
        for v in [q, qd, tau] {
            if v.len() != n {
                return Err(KernelError::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        match self {
            Binding::Real => fd_derivatives_s::<f64>(model, q, qd, tau, None),
            Binding::Fxp { fmt, wide_dot, comp } => with_fxp_format(*fmt, *wide_dot, || {
                fd_derivatives_s::<FxpValue>(model, q, qd, tau, comp.as_deref())
            }),
        }
    }
}

fn quantized(v: &[f64]) -> Vec<FxpValue> {
    v.iter().map(|&x| FxpValue::from_f64(x)).collect()
}

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Batch inverse dynamics: deterministic output ordering, data-parallel.
pub fn batch_rnea(
    model: &RobotModel,
    binding: &Binding,
    states: &[JointState],
) -> Result<Vec<Vec<f64>>, KernelError> {
    states
        .par_iter()
        .map(|s| binding.rnea(model, s, None))
        .collect()
}

/// Batch forward dynamics over (state, torque) pairs.
pub fn batch_forward_dynamics(
    model: &RobotModel,
    binding: &Binding,
    states: &[JointState],
    taus: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, KernelError> {
    if states.len() != taus.len() {
        return Err(KernelError::DimensionMismatch { expected: states.len(), got: taus.len() });
    }
    states
        .par_iter()
        .zip(taus.par_iter())
        .map(|(s, tau)| binding.forward_dynamics(model, &s.q, &s.qd, tau))
        .collect()
}
