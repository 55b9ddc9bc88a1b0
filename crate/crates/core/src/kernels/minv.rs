//! Analytical inverse of the joint-space mass matrix.
//!
//! Two variants with identical outputs:
//!
//! - [`minv_original_s`]: the articulated-inertia recursion with the
//!   reciprocal of each pivot D_i taken inline in the backward pass.
//! - [`minv_deferred_s`]: a division-free backward pass that propagates
//!   α-scaled intermediates (α kept in [1,2) by exact power-of-two shifts),
//!   a batch of exactly N_B reciprocals between the passes, and a resolve
//!   phase that folds the reciprocals back in. Outputs match the original
//!   to floating-point roundoff while keeping every intermediate in the
//!   same dynamic range, so the fixed-point binding behaves comparably.

use super::KernelError;
use crate::model::RobotModel;
use crate::scalar::{KernelModule, PassDir, Scalar, UnitId};
use crate::spatial::{Mat6, SpatialVec, Xform};

/// Per-joint scalars and holding terms produced by the backward pass.
#[derive(Debug, Clone)]
pub struct MinvWorkspace<S> {
    /// Divider inputs: the true pivot D_i for the original algorithm, the
    /// α-scaled pivot α_i·D_i for the deferred one.
    pub d: Vec<S>,
    /// True reciprocals 1/D_i after resolution.
    pub d_inv: Vec<S>,
    /// Transfer coefficients α_i (identically one in the original).
    pub alpha: Vec<S>,
    /// Held articulated projections: U_i, or the α-scaled Û_i.
    pub holding: Vec<SpatialVec<S>>,
    /// Reciprocals evaluated inside the backward recursion body.
    pub divisions_in_backward: usize,
    /// Reciprocals evaluated in total.
    pub reciprocals_total: usize,
}

impl<S: Scalar> MinvWorkspace<S> {
    fn with_capacity(n: usize) -> Self {
        Self {
            d: Vec::with_capacity(n),
            d_inv: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            holding: Vec::with_capacity(n),
            divisions_in_backward: 0,
            reciprocals_total: 0,
        }
    }
}

struct Constants<S> {
    xforms: Vec<Xform<S>>,
    s_axes: Vec<SpatialVec<S>>,
    inertias: Vec<Mat6<S>>,
}

fn constants<S: Scalar>(model: &RobotModel, q: &[S]) -> Constants<S> {
    let n = model.n_bodies();
    let mut xforms = Vec::with_capacity(n);
    let mut s_axes = Vec::with_capacity(n);
    let mut inertias = Vec::with_capacity(n);
    for i in 0..n {
        xforms.push(model.joint_xform(i, q[i]));
        s_axes.push(SpatialVec::from_f64(model.joint(i).motion_subspace()));
        inertias.push(Mat6::from_f64(model.link(i).inertia.spatial_array()));
    }
    Constants { xforms, s_axes, inertias }
}

/// The unit-torque response sweeps shared by both variants: a leaf-to-base
/// row/force sweep followed by the base-to-leaf acceleration sweep. Only the
/// combinations D_i⁻¹ and U_i D_i⁻¹ enter, so scaled inputs resolve here.
fn output_phase<S: Scalar>(
    model: &RobotModel,
    consts: &Constants<S>,
    d_inv: &[S],
    u_dinv: &[SpatialVec<S>],
    row_pass: PassDir,
) -> Vec<S> {
    let n = model.n_bodies();
    let mut f: Vec<Vec<SpatialVec<S>>> = vec![vec![SpatialVec::zero(); n]; n];
    let mut minv = vec![S::zero(); n * n];

    for i in (0..n).rev() {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, row_pass, i)));
        for j in 0..n {
            let delta = if i == j { S::one() } else { S::zero() };
            let u = delta - consts.s_axes[i].dot(&f[i][j]);
            minv[i * n + j] = d_inv[i] * u;
            if let Some(p) = model.parent(i) {
                let fa = f[i][j].add(&u_dinv[i].scale(u));
                let lifted = consts.xforms[i].transpose_apply_force(&fa);
                f[p][j] = f[p][j].add(&lifted);
            }
        }
    }

    let mut acc: Vec<Vec<SpatialVec<S>>> = vec![vec![SpatialVec::zero(); n]; n];
    for i in 0..n {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Forward, i)));
        match model.parent(i) {
            None => {
                for j in 0..n {
                    acc[i][j] = consts.s_axes[i].scale(minv[i * n + j]);
                }
            }
            Some(p) => {
                for j in 0..n {
                    let tmp = consts.xforms[i].apply_motion(&acc[p][j]);
                    minv[i * n + j] = minv[i * n + j] - u_dinv[i].dot(&tmp);
                    acc[i][j] = tmp.add(&consts.s_axes[i].scale(minv[i * n + j]));
                }
            }
        }
    }
    S::enter_unit(None);
    minv
}

/// Original recursion: reciprocal taken inside each backward unit.
pub fn minv_original_s<S: Scalar>(
    model: &RobotModel,
    q: &[S],
) -> Result<(Vec<S>, MinvWorkspace<S>), KernelError> {
    let n = model.n_bodies();
    let consts = constants(model, q);
    let mut ia = consts.inertias.clone();
    let mut ws = MinvWorkspace::with_capacity(n);
    let mut d_inv = vec![S::zero(); n];
    let mut u_dinv = vec![SpatialVec::<S>::zero(); n];
    ws.d = vec![S::zero(); n];
    ws.d_inv = vec![S::zero(); n];
    ws.alpha = vec![S::one(); n];
    ws.holding = vec![SpatialVec::zero(); n];

    for i in (0..n).rev() {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Backward, i)));
        let u = ia[i].mul_vec(&consts.s_axes[i]);
        let d = consts.s_axes[i].dot(&u);
        if !d.is_strictly_positive() {
            S::enter_unit(None);
            return Err(KernelError::NonPositivePivot { joint: i });
        }
        let dinv = d.recip();
        ws.divisions_in_backward += 1;
        ws.reciprocals_total += 1;
        let udinv = u.scale(dinv);
        if let Some(p) = model.parent(i) {
            let downdated = ia[i].sub(&Mat6::outer(&udinv, &u));
            ia[p] = ia[p].add(&downdated.congruence(&consts.xforms[i]));
        }
        ws.d[i] = d;
        ws.d_inv[i] = dinv;
        ws.holding[i] = u;
        d_inv[i] = dinv;
        u_dinv[i] = udinv;
    }

    let minv = output_phase(model, &consts, &d_inv, &u_dinv, PassDir::Backward);
    Ok((minv, ws))
}

/// Division-deferring variant: the backward pass is reciprocal-free.
pub fn minv_deferred_s<S: Scalar>(
    model: &RobotModel,
    q: &[S],
) -> Result<(Vec<S>, MinvWorkspace<S>), KernelError> {
    let n = model.n_bodies();
    let consts = constants(model, q);
    let mut ws = MinvWorkspace::with_capacity(n);
    ws.d = vec![S::zero(); n];
    ws.d_inv = vec![S::zero(); n];
    ws.alpha = vec![S::one(); n];
    ws.holding = vec![SpatialVec::zero(); n];

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        if let Some(p) = model.parent(i) {
            children[p].push(i);
        }
    }

    // Backward pass: multiplies and shifts only. Invariant per joint:
    // p_mat = α IA, u_hat = α U, d_hat = α D with α in [1,2).
    let mut p_mat: Vec<Mat6<S>> = vec![Mat6::zero(); n];
    let mut u_hat: Vec<SpatialVec<S>> = vec![SpatialVec::zero(); n];
    for i in (0..n).rev() {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Backward, i)));
        let mut p_acc = consts.inertias[i];
        let mut gamma = S::one();
        for &c in &children[i] {
            // Child contribution ĉ·XᵀT X, normalized so ĉ = α_c D̂_c 2^(-w)
            // stays in [1,2) and every entry keeps the articulated-inertia
            // dynamic range.
            let sigma = ws.alpha[c] * ws.d[c];
            let w = sigma.floor_log2_abs().unwrap_or(0);
            let c_hat = sigma.scale_pow2(-w);
            let dn = ws.d[c].scale_pow2(-w);
            let u2 = SpatialVec { c: u_hat[c].c.map(|x| x.scale_pow2(-w)) };
            let inner = p_mat[c].scale(dn).sub(&Mat6::outer(&u_hat[c], &u2));
            let contrib = inner.congruence(&consts.xforms[c]);
            p_acc = p_acc.scale(c_hat).add(&contrib.scale(gamma));
            gamma = gamma * c_hat;
            if let Some(e) = gamma.floor_log2_abs() {
                if e != 0 {
                    gamma = gamma.scale_pow2(-e);
                    p_acc = p_acc.scale_pow2(-e);
                }
            }
        }
        let u = p_acc.mul_vec(&consts.s_axes[i]);
        let d = consts.s_axes[i].dot(&u);
        if !d.is_strictly_positive() {
            S::enter_unit(None);
            return Err(KernelError::NonPositivePivot { joint: i });
        }
        p_mat[i] = p_acc;
        u_hat[i] = u;
        ws.d[i] = d;
        ws.alpha[i] = gamma;
        ws.holding[i] = u;
    }
    S::enter_unit(None);

    // Division batch between the passes: one reciprocal per joint, consumed
    // by the resolve sweeps below.
    let mut recips = vec![S::zero(); n];
    for i in 0..n {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Forward, i)));
        recips[i] = ws.d[i].recip();
        ws.reciprocals_total += 1;
    }

    // Resolve: the α factors cancel multiplicatively, no further division.
    let mut d_inv = vec![S::zero(); n];
    let mut u_dinv = vec![SpatialVec::<S>::zero(); n];
    for i in 0..n {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Forward, i)));
        d_inv[i] = ws.alpha[i] * recips[i];
        u_dinv[i] = u_hat[i].scale(recips[i]);
        ws.d_inv[i] = d_inv[i];
    }
    S::enter_unit(None);

    let minv = output_phase(model, &consts, &d_inv, &u_dinv, PassDir::Forward);
    Ok((minv, ws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kernels::rnea::mass_matrix_s;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_q(model: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
        model.sample_state(rng).0
    }

    #[test]
    fn pendulum_inverse_is_reciprocal_inertia() {
        let model = fixtures::pendulum();
        let (minv, ws) = minv_original_s::<f64>(&model, &[0.4]).unwrap();
        assert_abs_diff_eq!(minv[0], 1.0 / 1.001, epsilon = 1e-12);
        assert_eq!(ws.divisions_in_backward, 1);

        let (minv_d, ws_d) = minv_deferred_s::<f64>(&model, &[0.4]).unwrap();
        // single joint: deferring degenerates, results identical
        assert_eq!(minv[0], minv_d[0]);
        assert_eq!(ws_d.divisions_in_backward, 0);
        assert_eq!(ws_d.reciprocals_total, 1);
    }

    #[test]
    fn inverse_times_mass_matrix_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for model in [fixtures::iiwa(), fixtures::hyq_tree()] {
            let n = model.n_bodies();
            for _ in 0..20 {
                let q = random_q(&model, &mut rng);
                let m = mass_matrix_s::<f64>(&model, &q);
                let (minv, _) = minv_original_s::<f64>(&model, &q).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += minv[i * n + k] * m[k * n + j];
                        }
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(acc, expect, epsilon = 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn deferred_matches_original_everywhere() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for model in [fixtures::iiwa(), fixtures::hyq_tree(), fixtures::atlas_tree()] {
            let n = model.n_bodies();
            for _ in 0..50 {
                let q = random_q(&model, &mut rng);
                let (a, wa) = minv_original_s::<f64>(&model, &q).unwrap();
                let (b, wb) = minv_deferred_s::<f64>(&model, &q).unwrap();
                for k in 0..n * n {
                    assert!(
                        (a[k] - b[k]).abs() <= 1e-10,
                        "{} entry {k}: {} vs {}",
                        model.name,
                        a[k],
                        b[k]
                    );
                }
                assert_eq!(wa.divisions_in_backward, n);
                assert_eq!(wb.divisions_in_backward, 0);
                assert_eq!(wb.reciprocals_total, n);
            }
        }
    }

    #[test]
    fn output_is_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let model = fixtures::iiwa();
        let n = model.n_bodies();
        for _ in 0..100 {
            let q = random_q(&model, &mut rng);
            let (minv, _) = minv_original_s::<f64>(&model, &q).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_abs_diff_eq!(minv[i * n + j], minv[j * n + i], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn bad_inertia_reports_nonpositive_pivot() {
        let mut model = fixtures::pendulum();
        // A pivot can only go nonpositive with corrupt data; force it by
        // zeroing the inertia through the canonical form.
        let mut canon = model.to_canonical();
        canon.links[0].mass = 1e-12;
        canon.links[0].com = [0.0; 3];
        canon.links[0].inertia_com = [[0.0; 3]; 3];
        model = canon.to_model().unwrap();
        match minv_original_s::<f64>(&model, &[0.1]) {
            Err(KernelError::NonPositivePivot { joint: 0 }) => {}
            other => panic!("expected nonpositive pivot, got {other:?}"),
        }
    }
}
