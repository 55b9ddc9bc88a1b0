//! Inverse dynamics: forward kinematic pass (base to leaves) followed by a
//! backward force pass (leaves to base), generic over the kernel scalar.

use crate::model::RobotModel;
use crate::scalar::{KernelModule, PassDir, Scalar, UnitId};
use crate::spatial::{Mat6, SpatialVec, Xform};

/// Joint torques for the given motion, `τ = M(q) q̈ + C(q, q̇, f_ext)`.
///
/// `fext` holds per-link external forces in link coordinates. Gravity enters
/// through the base-acceleration convention (`a_base = -g`) when enabled.
pub fn rnea_s<S: Scalar>(
    model: &RobotModel,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    fext: Option<&[SpatialVec<S>]>,
    with_gravity: bool,
) -> Vec<S> {
    let n = model.n_bodies();
    let mut xforms: Vec<Xform<S>> = Vec::with_capacity(n);
    let mut vel: Vec<SpatialVec<S>> = Vec::with_capacity(n);
    let mut acc: Vec<SpatialVec<S>> = Vec::with_capacity(n);
    let mut force: Vec<SpatialVec<S>> = Vec::with_capacity(n);

    let a_base = if with_gravity {
        let g = model.gravity;
        SpatialVec::from_f64([0.0, 0.0, 0.0, -g.x, -g.y, -g.z])
    } else {
        SpatialVec::zero()
    };

    for i in 0..n {
        S::enter_unit(Some(UnitId::new(KernelModule::Rnea, PassDir::Forward, i)));
        let x = model.joint_xform(i, q[i]);
        let s_axis = SpatialVec::from_f64(model.joint(i).motion_subspace());
        let v_joint = s_axis.scale(qd[i]);
        let a_joint = s_axis.scale(qdd[i]);

        let (v, a) = match model.parent(i) {
            None => {
                let a_parent = x.apply_motion(&a_base);
                (v_joint, a_parent.add(&a_joint))
            }
            Some(p) => {
                let v_parent = x.apply_motion(&vel[p]);
                let v = v_parent.add(&v_joint);
                let a_parent = x.apply_motion(&acc[p]);
                let a = a_parent.add(&a_joint).add(&v.cross_motion(&v_joint));
                (v, a)
            }
        };

        let inertia = Mat6::<S>::from_f64(model.link(i).inertia.spatial_array());
        let momentum = inertia.mul_vec(&v);
        let mut f = inertia.mul_vec(&a).add(&v.cross_force(&momentum));
        if let Some(ext) = fext {
            f = f.sub(&ext[i]);
        }

        for k in 0..6 {
            S::track("v", v.c[k]);
            S::track("a", a.c[k]);
            S::track("f", f.c[k]);
        }

        xforms.push(x);
        vel.push(v);
        acc.push(a);
        force.push(f);
    }

    let mut tau = vec![S::zero(); n];
    for i in (0..n).rev() {
        S::enter_unit(Some(UnitId::new(KernelModule::Rnea, PassDir::Backward, i)));
        let s_axis = SpatialVec::from_f64(model.joint(i).motion_subspace());
        tau[i] = s_axis.dot(&force[i]);
        S::track("tau", tau[i]);
        if let Some(p) = model.parent(i) {
            let lifted = xforms[i].transpose_apply_force(&force[i]);
            force[p] = force[p].add(&lifted);
        }
    }
    S::enter_unit(None);
    tau
}

/// Spatial velocities of every link at (q, q̇): the forward-pass kinematic
/// state, exposed for per-joint quantization-error analysis.
pub fn link_velocities_s<S: Scalar>(model: &RobotModel, q: &[S], qd: &[S]) -> Vec<SpatialVec<S>> {
    let n = model.n_bodies();
    let mut vel: Vec<SpatialVec<S>> = Vec::with_capacity(n);
    for i in 0..n {
        let x = model.joint_xform(i, q[i]);
        let s_axis = SpatialVec::from_f64(model.joint(i).motion_subspace());
        let v_joint = s_axis.scale(qd[i]);
        let v = match model.parent(i) {
            None => v_joint,
            Some(p) => x.apply_motion(&vel[p]).add(&v_joint),
        };
        vel.push(v);
    }
    vel
}

/// Joint-space mass matrix, column by column: `M e_j` is the torque for a
/// unit acceleration of joint j with gravity, velocity, and external forces
/// all zero.
pub fn mass_matrix_s<S: Scalar>(model: &RobotModel, q: &[S]) -> Vec<S> {
    let n = model.n_bodies();
    let zero = vec![S::zero(); n];
    let bias = rnea_s(model, q, &zero, &zero, None, false);
    let mut m = vec![S::zero(); n * n];
    for j in 0..n {
        let mut qdd = vec![S::zero(); n];
        qdd[j] = S::one();
        let col = rnea_s(model, q, &zero, &qdd, None, false);
        for i in 0..n {
            m[i * n + j] = col[i] - bias[i];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_state_zero_gravity_gives_zero_torque() {
        let model = fixtures::iiwa();
        let z = vec![0.0f64; 7];
        let tau = rnea_s::<f64>(&model, &z, &z, &z, None, false);
        for t in tau {
            assert_abs_diff_eq!(t, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pendulum_statics_match_textbook() {
        let model = fixtures::pendulum();
        for &q in &[0.0, 0.4, -1.1, std::f64::consts::FRAC_PI_2] {
            let tau = rnea_s::<f64>(&model, &[q], &[0.0], &[0.0], None, true);
            // m g l sin(q), with m = l = 1
            assert_abs_diff_eq!(tau[0], 9.81 * q.sin(), epsilon = 1e-10);
        }
    }

    #[test]
    fn pendulum_mass_matrix_is_ml2_plus_rot() {
        let model = fixtures::pendulum();
        let m = mass_matrix_s::<f64>(&model, &[0.7]);
        // m l^2 + I_yy about the COM
        assert_abs_diff_eq!(m[0], 1.0 + 0.001, epsilon = 1e-12);
    }

    #[test]
    fn external_force_cancels_gravity_on_pendulum() {
        // Supporting the bob with an upward force at the COM removes the
        // gravity torque.
        let model = fixtures::pendulum();
        let q = 0.9f64;
        // force on link, in link coordinates: gravity pull is R^T (0,0,-mg)
        let r = crate::model::rodrigues(&nalgebra::Vector3::y(), q);
        let f_world = nalgebra::Vector3::new(0.0, 0.0, 9.81);
        let f_link = r.transpose() * f_world;
        let com = model.link(0).inertia.com;
        let n_link = com.cross(&f_link);
        let fext = [SpatialVec::<f64>::from_f64([
            n_link.x, n_link.y, n_link.z, f_link.x, f_link.y, f_link.z,
        ])];
        let tau = rnea_s::<f64>(&model, &[q], &[0.0], &[0.0], Some(&fext), true);
        assert_abs_diff_eq!(tau[0], 0.0, epsilon = 1e-10);
    }
}
