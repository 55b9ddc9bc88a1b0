//! Canonical JSON form of a parsed model, for debugging dumps and
//! round-trip checks.

use super::{
    EndEffector, Joint, JointKind, JointLimits, Link, LinkInertia, ModelError, RobotModel,
};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalLink {
    pub name: String,
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia_com: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalJoint {
    pub name: String,
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub origin_rot: [[f64; 3]; 3],
    pub origin_pos: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalModel {
    pub name: String,
    pub gravity: [f64; 3],
    /// -1 marks the base.
    pub parent: Vec<i64>,
    pub links: Vec<CanonicalLink>,
    pub joints: Vec<CanonicalJoint>,
    pub ee: Option<EndEffector>,
}

impl CanonicalModel {
    pub fn from_model(m: &RobotModel) -> Self {
        Self {
            name: m.name.clone(),
            gravity: [m.gravity.x, m.gravity.y, m.gravity.z],
            parent: m
                .parents()
                .iter()
                .map(|p| p.map(|i| i as i64).unwrap_or(-1))
                .collect(),
            links: m
                .links()
                .iter()
                .map(|l| CanonicalLink {
                    name: l.name.clone(),
                    mass: l.inertia.mass,
                    com: [l.inertia.com.x, l.inertia.com.y, l.inertia.com.z],
                    inertia_com: mat3(&l.inertia.inertia_com),
                })
                .collect(),
            joints: m
                .joints()
                .iter()
                .map(|j| CanonicalJoint {
                    name: j.name.clone(),
                    kind: j.kind,
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    origin_rot: mat3(&j.origin_rot),
                    origin_pos: [j.origin_pos.x, j.origin_pos.y, j.origin_pos.z],
                    lower: j.limits.lower,
                    upper: j.limits.upper,
                    velocity: j.limits.velocity,
                })
                .collect(),
            ee: m.ee.clone(),
        }
    }

    pub fn to_model(&self) -> Result<RobotModel, ModelError> {
        let links = self
            .links
            .iter()
            .map(|l| Link {
                name: l.name.clone(),
                inertia: LinkInertia {
                    mass: l.mass,
                    com: Vector3::new(l.com[0], l.com[1], l.com[2]),
                    inertia_com: Matrix3::from_fn(|i, j| l.inertia_com[i][j]),
                },
            })
            .collect();
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                kind: j.kind,
                axis: Vector3::new(j.axis[0], j.axis[1], j.axis[2]),
                origin_rot: Matrix3::from_fn(|r, c| j.origin_rot[r][c]),
                origin_pos: Vector3::new(j.origin_pos[0], j.origin_pos[1], j.origin_pos[2]),
                limits: JointLimits { lower: j.lower, upper: j.upper, velocity: j.velocity },
            })
            .collect();
        let parent = self
            .parent
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        RobotModel::assemble(
            self.name.clone(),
            links,
            joints,
            parent,
            Vector3::new(self.gravity[0], self.gravity[1], self.gravity[2]),
            self.ee.clone(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("canonical model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Canonical(e.to_string()))
    }
}

fn mat3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

#[cfg(test)]
mod tests {
    use crate::fixtures;
    use super::CanonicalModel;

    #[test]
    fn canonical_round_trip_is_idempotent() {
        for model in [fixtures::pendulum(), fixtures::iiwa(), fixtures::hyq_tree()] {
            let first = model.to_canonical().to_json();
            let reparsed = CanonicalModel::from_json(&first).unwrap().to_model().unwrap();
            let second = reparsed.to_canonical().to_json();
            assert_eq!(first, second);
            assert_eq!(model, reparsed);
        }
    }
}
