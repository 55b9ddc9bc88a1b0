//! Canonical kinematic-tree robot model and its spatial-algebra glue.

use crate::scalar::Scalar;
use crate::spatial::Xform;
use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod canonical;
mod urdf;

pub use canonical::CanonicalModel;
pub use urdf::parse_urdf;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("unsupported joint type `{0}` on joint `{1}`")]
    UnsupportedJoint(String, String),
    #[error("joint `{0}` references unknown link `{1}`")]
    UnknownLink(String, String),
    #[error("link `{0}` has more than one parent joint")]
    DuplicateParent(String),
    #[error("robot has no unique root link (found {0})")]
    NoUniqueRoot(usize),
    #[error("links unreachable from the root: {0}")]
    Unreachable(String),
    #[error("non-positive mass ({1}) on link `{0}`")]
    NonPositiveMass(String, f64),
    #[error("joint `{0}` axis norm {1} is not within 1e-6 of unit")]
    BadAxis(String, f64),
    #[error("missing required element `{0}`")]
    Missing(String),
    #[error("bad number in attribute `{0}`: {1}")]
    BadNumber(String, String),
    #[error("link index {0} out of range (N_B = {1})")]
    IndexOutOfRange(usize, usize),
    #[error("canonical form error: {0}")]
    Canonical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        // Position span of a full turn and the conventional speed cap used
        // when a description omits limits.
        Self { lower: -std::f64::consts::PI, upper: std::f64::consts::PI, velocity: 2.0 }
    }
}

/// One-DOF joint: kind, unit axis, and the fixed parent-to-joint transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Unit axis in the child/joint frame.
    pub axis: Vector3<f64>,
    /// Child joint frame orientation in the parent frame at q = 0.
    pub origin_rot: Matrix3<f64>,
    /// Child joint frame origin in the parent frame.
    pub origin_pos: Vector3<f64>,
    pub limits: JointLimits,
}

impl Joint {
    /// One-hot (for aligned axes) motion subspace vector S_i.
    pub fn motion_subspace(&self) -> [f64; 6] {
        match self.kind {
            JointKind::Revolute => [self.axis.x, self.axis.y, self.axis.z, 0.0, 0.0, 0.0],
            JointKind::Prismatic => [0.0, 0.0, 0.0, self.axis.x, self.axis.y, self.axis.z],
        }
    }
}

/// Mass, center of mass, and rotational inertia about the COM, all in the
/// link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia_com: Matrix3<f64>,
}

impl LinkInertia {
    /// 6×6 spatial inertia at the link frame origin:
    /// `[I_com + m ĉ ĉᵀ, m ĉ; m ĉᵀ, m 1]`.
    pub fn spatial(&self) -> Matrix6<f64> {
        let m = self.mass;
        let cx = skew(&self.com);
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.inertia_com + cx * cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * m));
        out
    }

    pub fn spatial_array(&self) -> [[f64; 6]; 6] {
        let m = self.spatial();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub inertia: LinkInertia,
}

/// End-effector frame: a link plus a fixed offset in that link's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub link: usize,
    pub offset: [f64; 3],
}

/// Kinematic tree with links topologically ordered parent-before-child.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    parent: Vec<Option<usize>>,
    pub gravity: Vector3<f64>,
    pub ee: Option<EndEffector>,
}

impl RobotModel {
    pub fn assemble(
        name: String,
        links: Vec<Link>,
        joints: Vec<Joint>,
        parent: Vec<Option<usize>>,
        gravity: Vector3<f64>,
        ee: Option<EndEffector>,
    ) -> Result<Self, ModelError> {
        assert_eq!(links.len(), joints.len());
        assert_eq!(links.len(), parent.len());
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                assert!(*p < i, "links must be topologically ordered");
            }
        }
        for link in &links {
            if link.inertia.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass(link.name.clone(), link.inertia.mass));
            }
        }
        let mut joints = joints;
        for j in &mut joints {
            let n = j.axis.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(ModelError::BadAxis(j.name.clone(), n));
            }
            j.axis /= n;
        }
        Ok(Self { name, links, joints, parent, gravity, ee })
    }

    pub fn n_bodies(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, i: usize) -> &Link {
        &self.links[i]
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Number of joints on the path from the base to link `i`, inclusive.
    pub fn depth(&self, i: usize) -> usize {
        match self.parent[i] {
            None => 1,
            Some(p) => 1 + self.depth(p),
        }
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// End-effector link index; defaults to the deepest link.
    pub fn ee_link(&self) -> usize {
        if let Some(ee) = &self.ee {
            return ee.link;
        }
        (0..self.n_bodies())
            .max_by_key(|&i| (self.depth(i), std::cmp::Reverse(i)))
            .unwrap_or(0)
    }

    /// Joint motion transform `^iX_λ(q_i)` composed with the calibrated
    /// fixed transform, over any scalar binding.
    pub fn joint_xform<S: Scalar>(&self, i: usize, q: S) -> Xform<S> {
        let j = &self.joints[i];
        joint_xform_generic(j, q)
    }

    /// f64 convenience entry with index checking.
    pub fn joint_transform(&self, i: usize, q: f64) -> Result<Xform<f64>, ModelError> {
        if i >= self.n_bodies() {
            return Err(ModelError::IndexOutOfRange(i, self.n_bodies()));
        }
        if !q.is_finite() {
            return Err(ModelError::BadNumber("q".into(), format!("{q}")));
        }
        Ok(self.joint_xform(i, q))
    }

    /// World pose (rotation, origin) of link `i` at configuration `q`.
    pub fn link_pose(&self, q: &[f64], i: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let j = &self.joints[i];
        let (rot_pc, pos_pc) = match j.kind {
            JointKind::Revolute => (j.origin_rot * rodrigues(&j.axis, q[i]), j.origin_pos),
            JointKind::Prismatic => (j.origin_rot, j.origin_pos + j.origin_rot * (j.axis * q[i])),
        };
        match self.parent[i] {
            None => (rot_pc, pos_pc),
            Some(p) => {
                let (rp, pp) = self.link_pose(q, p);
                (rp * rot_pc, pp + rp * pos_pc)
            }
        }
    }

    /// World position of the end-effector frame.
    pub fn ee_position(&self, q: &[f64]) -> Vector3<f64> {
        let link = self.ee_link();
        let offset = self
            .ee
            .as_ref()
            .map(|e| Vector3::new(e.offset[0], e.offset[1], e.offset[2]))
            .unwrap_or_else(Vector3::zeros);
        let (r, p) = self.link_pose(q, link);
        p + r * offset
    }

    /// Draw a state uniformly within position and velocity limits.
    pub fn sample_state(&self, rng: &mut impl rand::Rng) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bodies();
        let mut q = Vec::with_capacity(n);
        let mut qd = Vec::with_capacity(n);
        for j in &self.joints {
            let l = &j.limits;
            q.push(rng.random_range(l.lower..=l.upper));
            qd.push(rng.random_range(-l.velocity..=l.velocity));
        }
        (q, qd)
    }

    pub fn to_canonical(&self) -> CanonicalModel {
        CanonicalModel::from_model(self)
    }
}

/// Rotation of angle `q` about unit axis `a` (Rodrigues).
pub fn rodrigues(a: &Vector3<f64>, q: f64) -> Matrix3<f64> {
    let k = skew(a);
    let (s, c) = q.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Generic joint transform used by the kernels: trigonometry happens in the
/// target scalar so quantized runs model the device datapath.
pub fn joint_xform_generic<S: Scalar>(j: &Joint, q: S) -> Xform<S> {
    let ro = j.origin_rot;
    let po = [j.origin_pos.x, j.origin_pos.y, j.origin_pos.z];
    match j.kind {
        JointKind::Revolute => {
            let (s, c) = q.sin_cos();
            let one_minus_c = S::one() - c;
            let k = skew(&j.axis);
            let k2 = k * k;
            // R_total = R_o (I + s K + (1-c) K²); E = R_totalᵀ
            let mut rot = [[S::zero(); 3]; 3];
            for i in 0..3 {
                for jj in 0..3 {
                    // entry of R_j in S
                    let ident = if i == jj { S::one() } else { S::zero() };
                    let rj = ident
                        + S::from_f64(k[(i, jj)]) * s
                        + S::from_f64(k2[(i, jj)]) * one_minus_c;
                    rot[i][jj] = rj;
                }
            }
            // E = (R_o R_j)ᵀ = R_jᵀ R_oᵀ  -> E[i][j] = Σ_k R_j[k][i] R_o[j][k]
            let mut e = [[S::zero(); 3]; 3];
            for i in 0..3 {
                for jj in 0..3 {
                    e[i][jj] = S::dot([
                        (rot[0][i], S::from_f64(ro[(jj, 0)])),
                        (rot[1][i], S::from_f64(ro[(jj, 1)])),
                        (rot[2][i], S::from_f64(ro[(jj, 2)])),
                    ]);
                }
            }
            Xform { rot: e, trans: po.map(S::from_f64) }
        }
        JointKind::Prismatic => {
            // E constant; translation slides along R_o a.
            let dir = ro * j.axis;
            let mut e = [[S::zero(); 3]; 3];
            for i in 0..3 {
                for jj in 0..3 {
                    e[i][jj] = S::from_f64(ro[(jj, i)]);
                }
            }
            let trans = [
                S::from_f64(po[0]) + S::from_f64(dir.x) * q,
                S::from_f64(po[1]) + S::from_f64(dir.y) * q,
                S::from_f64(po[2]) + S::from_f64(dir.z) * q,
            ];
            Xform { rot: e, trans }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn revolute_transform_at_zero_is_fixed_origin() {
        let model = fixtures::pendulum();
        let x = model.joint_transform(0, 0.0).unwrap();
        // pendulum joint has identity origin
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(x.rot[i][j], expect, epsilon = 1e-15);
            }
        }
        assert_eq!(x.trans, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn revolute_quarter_turn_matches_axis_rotation() {
        // iiwa joint 1 rotates about z with an identity origin rotation:
        // E = R_z(q)ᵀ.
        let model = fixtures::iiwa();
        let x = model.joint_transform(0, std::f64::consts::FRAC_PI_2).unwrap();
        let expect = rodrigues(&Vector3::z(), std::f64::consts::FRAC_PI_2).transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(x.rot[i][j], expect[(i, j)], epsilon = 1e-12);
            }
        }
        // pendulum pivots about y
        let model = fixtures::pendulum();
        let x = model.joint_transform(0, std::f64::consts::FRAC_PI_2).unwrap();
        let expect = rodrigues(&Vector3::y(), std::f64::consts::FRAC_PI_2).transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(x.rot[i][j], expect[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn prismatic_translation_composes_with_origin() {
        let model = fixtures::slider();
        // joint 0 is prismatic along x with identity origin
        let x = model.joint_transform(0, 0.3).unwrap();
        assert_abs_diff_eq!(x.trans[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(x.trans[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x.trans[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transform_round_trip_composes_to_identity() {
        let model = fixtures::pendulum();
        for &q in &[0.3, -1.2, 2.9] {
            let a = model.joint_xform::<f64>(0, q);
            let b = model.joint_xform::<f64>(0, -q);
            let c = crate::spatial::Xform::compose(&b, &a);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(c.rot[i][j], expect, epsilon = 1e-9);
                }
                assert_abs_diff_eq!(c.trans[i], 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn index_out_of_range_is_an_error() {
        let model = fixtures::pendulum();
        assert!(matches!(
            model.joint_transform(5, 0.0),
            Err(ModelError::IndexOutOfRange(5, 1))
        ));
    }

    #[test]
    fn spatial_inertia_is_symmetric_and_massive() {
        let model = fixtures::iiwa();
        for i in 0..model.n_bodies() {
            let m = model.link(i).inertia.spatial();
            assert!(model.link(i).inertia.mass > 0.0);
            for r in 0..6 {
                for c in 0..6 {
                    assert_abs_diff_eq!(m[(r, c)], m[(c, r)], epsilon = 1e-12);
                }
            }
            // rotational block PSD: eigenvalues of top-left 3x3 >= 0
            let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
            let eig = rot.symmetric_eigenvalues();
            for e in eig.iter() {
                assert!(*e >= -1e-12, "rotational inertia not PSD: {e}");
            }
        }
    }
}
