//! Forward dynamics via the analytical mass-matrix inverse:
//! `q̈ = M⁻¹ (τ − C(q, q̇, f_ext))`.

use super::minv::minv_deferred_s;
use super::rnea::rnea_s;
use super::KernelError;
use crate::model::RobotModel;
use crate::scalar::{KernelModule, PassDir, Scalar, UnitId};
use crate::spatial::SpatialVec;

/// `comp` is an optional n×n row-major offset added to the computed M⁻¹
/// before the solve (the error-compensation hook).
pub fn forward_dynamics_s<S: Scalar>(
    model: &RobotModel,
    q: &[S],
    qd: &[S],
    tau: &[S],
    fext: Option<&[SpatialVec<S>]>,
    comp: Option<&[f64]>,
) -> Result<Vec<S>, KernelError> {
    let n = model.n_bodies();
    let zero = vec![S::zero(); n];
    let bias = rnea_s(model, q, qd, &zero, fext, true);
    let (mut minv, _ws) = minv_deferred_s(model, q)?;
    if let Some(off) = comp {
        for k in 0..n * n {
            minv[k] = minv[k] + S::from_f64(off[k]);
        }
    }
    let rhs: Vec<S> = (0..n).map(|j| tau[j] - bias[j]).collect();
    let mut qdd = vec![S::zero(); n];
    for i in 0..n {
        S::enter_unit(Some(UnitId::new(KernelModule::Minv, PassDir::Forward, i)));
        let pairs: Vec<(S, S)> = (0..n).map(|j| (minv[i * n + j], rhs[j])).collect();
        qdd[i] = S::dot_dyn(&pairs);
    }
    S::enter_unit(None);
    Ok(qdd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn id_fd_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = fixtures::iiwa();
        let n = model.n_bodies();
        for _ in 0..50 {
            let (q, qd) = model.sample_state(&mut rng);
            let qdd_star: Vec<f64> =
                (0..n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let tau = rnea_s::<f64>(&model, &q, &qd, &qdd_star, None, true);
            let qdd = forward_dynamics_s::<f64>(&model, &q, &qd, &tau, None, None).unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(qdd[i], qdd_star[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn free_fall_pendulum_acceleration() {
        let model = fixtures::pendulum();
        let q = std::f64::consts::FRAC_PI_2;
        let qdd = forward_dynamics_s::<f64>(&model, &[q], &[0.0], &[0.0], None, None).unwrap();
        // q̈ = -(m g l sin q)/(m l² + I_rot)
        let expect = -(9.81 * q.sin()) / 1.001;
        assert_abs_diff_eq!(qdd[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn matches_dense_solve() {
        use nalgebra::{DMatrix, DVector};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let model = fixtures::hyq_tree();
        let n = model.n_bodies();
        for _ in 0..20 {
            let (q, qd) = model.sample_state(&mut rng);
            let tau: Vec<f64> =
                (0..n).map(|_| rand::Rng::random_range(&mut rng, -30.0..30.0)).collect();
            let qdd = forward_dynamics_s::<f64>(&model, &q, &qd, &tau, None, None).unwrap();

            let m_flat = crate::kernels::rnea::mass_matrix_s::<f64>(&model, &q);
            let m = DMatrix::from_fn(n, n, |i, j| m_flat[i * n + j]);
            let zero = vec![0.0; n];
            let bias = rnea_s::<f64>(&model, &q, &qd, &zero, None, true);
            let rhs = DVector::from_fn(n, |j, _| tau[j] - bias[j]);
            let solved = m.lu().solve(&rhs).expect("mass matrix invertible");
            for i in 0..n {
                assert_abs_diff_eq!(qdd[i], solved[i], epsilon = 1e-7);
            }
        }
    }
}
