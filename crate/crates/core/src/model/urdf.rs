//! URDF ingestion: a subset parser covering link/joint/inertial/origin/axis/
//! limit elements, with fixed-joint merging and topological ordering.

use super::{
    skew, EndEffector, Joint, JointKind, JointLimits, Link, LinkInertia, ModelError, RobotModel,
};
use nalgebra::{Matrix3, Matrix6, Vector3};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone)]
struct RawJoint {
    name: String,
    kind: String,
    parent: String,
    child: String,
    origin_rot: Matrix3<f64>,
    origin_pos: Vector3<f64>,
    axis: Vector3<f64>,
    limits: JointLimits,
}

#[derive(Debug, Clone, Default)]
struct RawInertia {
    mass: f64,
    com: Vector3<f64>,
    inertia_com: Matrix3<f64>,
}

/// Parse a URDF document into the canonical model.
///
/// Fixed joints are merged into their parent body (inertia composited,
/// downstream joint origins re-expressed); the root link is the anchor and
/// contributes no body. Joints other than revolute/continuous/prismatic/
/// fixed are rejected.
pub fn parse_urdf(text: &str) -> Result<RobotModel, ModelError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| ModelError::Xml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(ModelError::Xml("root element is not <robot>".into()));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut link_inertia: HashMap<String, Option<RawInertia>> = HashMap::new();
    let mut link_order: Vec<String> = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("link")) {
        let lname = node
            .attribute("name")
            .ok_or_else(|| ModelError::Missing("link name".into()))?
            .to_string();
        let inertial = node
            .children()
            .find(|n| n.has_tag_name("inertial"))
            .map(|n| parse_inertial(&n))
            .transpose()?;
        link_order.push(lname.clone());
        link_inertia.insert(lname, inertial);
    }

    let mut joints: Vec<RawJoint> = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("joint")) {
        joints.push(parse_joint(&node)?);
    }

    // Wire up the tree.
    let mut children: HashMap<String, Vec<usize>> = HashMap::new();
    let mut has_parent: HashMap<&str, &str> = HashMap::new();
    for (k, j) in joints.iter().enumerate() {
        if !link_inertia.contains_key(&j.parent) {
            return Err(ModelError::UnknownLink(j.name.clone(), j.parent.clone()));
        }
        if !link_inertia.contains_key(&j.child) {
            return Err(ModelError::UnknownLink(j.name.clone(), j.child.clone()));
        }
        if has_parent.insert(j.child.as_str(), j.name.as_str()).is_some() {
            return Err(ModelError::DuplicateParent(j.child.clone()));
        }
        children.entry(j.parent.clone()).or_default().push(k);
    }
    let roots: Vec<&String> = link_order
        .iter()
        .filter(|l| !has_parent.contains_key(l.as_str()))
        .collect();
    if roots.len() != 1 {
        return Err(ModelError::NoUniqueRoot(roots.len()));
    }
    let root = roots[0].clone();

    let mut builder = Builder {
        joints: &joints,
        children: &children,
        link_inertia: &link_inertia,
        out_links: Vec::new(),
        out_joints: Vec::new(),
        out_parent: Vec::new(),
        spatial_acc: Vec::new(),
        ee: None,
        reached: HashSet::new(),
    };
    builder.absorb(&root, None, Matrix3::identity(), Vector3::zeros())?;

    if builder.reached.len() != link_order.len() {
        let missing: Vec<&str> = link_order
            .iter()
            .filter(|l| !builder.reached.contains(l.as_str()))
            .map(|s| s.as_str())
            .collect();
        return Err(ModelError::Unreachable(missing.join(", ")));
    }

    // Decompose accumulated spatial inertias back into link parameters.
    let mut links = Vec::with_capacity(builder.out_links.len());
    for (stub, spatial) in builder.out_links.iter().zip(&builder.spatial_acc) {
        links.push(Link { name: stub.clone(), inertia: decompose_spatial(stub, spatial)? });
    }

    RobotModel::assemble(
        name,
        links,
        builder.out_joints,
        builder.out_parent,
        Vector3::new(0.0, 0.0, -9.81),
        builder.ee,
    )
}

struct Builder<'a> {
    joints: &'a [RawJoint],
    children: &'a HashMap<String, Vec<usize>>,
    link_inertia: &'a HashMap<String, Option<RawInertia>>,
    out_links: Vec<String>,
    out_joints: Vec<Joint>,
    out_parent: Vec<Option<usize>>,
    spatial_acc: Vec<Matrix6<f64>>,
    ee: Option<EndEffector>,
    reached: HashSet<String>,
}

impl Builder<'_> {
    /// Fold `link` (and its fixed-joint subtree) into body `owner`, placed at
    /// (`rot`, `pos`) within the owner frame, then descend movable joints.
    fn absorb(
        &mut self,
        link: &str,
        owner: Option<usize>,
        rot: Matrix3<f64>,
        pos: Vector3<f64>,
    ) -> Result<(), ModelError> {
        self.reached.insert(link.to_string());
        if let (Some(ob), Some(Some(inertia))) = (owner, self.link_inertia.get(link)) {
            // X maps owner-frame motion into this link's frame.
            let x = crate::spatial::Xform::<f64> {
                rot: mat3_to_array(&rot.transpose()),
                trans: [pos.x, pos.y, pos.z],
            };
            let spatial = raw_spatial(inertia);
            let transformed = crate::spatial::Mat6 { m: mat6_to_array(&spatial) }.congruence(&x);
            for i in 0..6 {
                for j in 0..6 {
                    self.spatial_acc[ob][(i, j)] += transformed.m[i][j];
                }
            }
        }
        if let Some(ob) = owner {
            if self.ee.is_none() && looks_like_ee(link) {
                self.ee = Some(EndEffector { link: ob, offset: [pos.x, pos.y, pos.z] });
            }
        }
        let child_joints = self.children.get(link).cloned().unwrap_or_default();
        for k in child_joints {
            let j = &self.joints[k];
            match j.kind.as_str() {
                "fixed" => {
                    let r = rot * j.origin_rot;
                    let p = pos + rot * j.origin_pos;
                    let child = j.child.clone();
                    self.absorb(&child, owner, r, p)?;
                }
                "revolute" | "continuous" | "prismatic" => {
                    let kind = if j.kind == "prismatic" {
                        JointKind::Prismatic
                    } else {
                        JointKind::Revolute
                    };
                    let idx = self.out_links.len();
                    self.out_links.push(j.child.clone());
                    self.out_joints.push(Joint {
                        name: j.name.clone(),
                        kind,
                        axis: j.axis,
                        origin_rot: rot * j.origin_rot,
                        origin_pos: pos + rot * j.origin_pos,
                        limits: j.limits,
                    });
                    self.out_parent.push(owner);
                    self.spatial_acc.push(Matrix6::zeros());
                    let child = j.child.clone();
                    self.absorb(&child, Some(idx), Matrix3::identity(), Vector3::zeros())?;
                }
                other => {
                    return Err(ModelError::UnsupportedJoint(other.into(), j.name.clone()));
                }
            }
        }
        Ok(())
    }
}

// Names that mark a massless end-effector/tool frame when merged.
fn looks_like_ee(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.split(['_', '-']).any(|t| matches!(t, "ee" | "tool" | "tool0" | "tcp" | "flange"))
        || lower.contains("end_effector")
}

fn raw_spatial(r: &RawInertia) -> Matrix6<f64> {
    LinkInertia { mass: r.mass, com: r.com, inertia_com: r.inertia_com }.spatial()
}

fn decompose_spatial(name: &str, m: &Matrix6<f64>) -> Result<LinkInertia, ModelError> {
    let mass = m[(3, 3)];
    if mass <= 0.0 {
        return Err(ModelError::NonPositiveMass(name.to_string(), mass));
    }
    let com = Vector3::new(m[(2, 4)], m[(0, 5)], m[(1, 3)]) / mass;
    let cx = skew(&com);
    let inertia_com = m.fixed_view::<3, 3>(0, 0).into_owned() - cx * cx.transpose() * mass;
    Ok(LinkInertia { mass, com, inertia_com })
}

fn mat3_to_array(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn mat6_to_array(m: &Matrix6<f64>) -> [[f64; 6]; 6] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn parse_vec3(s: &str, what: &str) -> Result<Vector3<f64>, ModelError> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ModelError::BadNumber(what.into(), e.to_string()))?;
    if parts.len() != 3 {
        return Err(ModelError::BadNumber(what.into(), format!("expected 3 numbers, got {s:?}")));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn parse_origin(node: &roxmltree::Node) -> Result<(Matrix3<f64>, Vector3<f64>), ModelError> {
    let Some(origin) = node.children().find(|n| n.has_tag_name("origin")) else {
        return Ok((Matrix3::identity(), Vector3::zeros()));
    };
    let xyz = origin
        .attribute("xyz")
        .map(|s| parse_vec3(s, "origin xyz"))
        .transpose()?
        .unwrap_or_else(Vector3::zeros);
    let rpy = origin
        .attribute("rpy")
        .map(|s| parse_vec3(s, "origin rpy"))
        .transpose()?
        .unwrap_or_else(Vector3::zeros);
    Ok((rpy_to_rot(&rpy), xyz))
}

/// URDF rpy is fixed-axis roll/pitch/yaw: R = Rz(y) Ry(p) Rx(r).
fn rpy_to_rot(rpy: &Vector3<f64>) -> Matrix3<f64> {
    let rx = super::rodrigues(&Vector3::x(), rpy.x);
    let ry = super::rodrigues(&Vector3::y(), rpy.y);
    let rz = super::rodrigues(&Vector3::z(), rpy.z);
    rz * ry * rx
}

fn attr_f64(node: &roxmltree::Node, name: &str) -> Result<f64, ModelError> {
    node.attribute(name)
        .ok_or_else(|| {
            ModelError::Missing(format!("{} attribute `{name}`", node.tag_name().name()))
        })?
        .parse::<f64>()
        .map_err(|e| ModelError::BadNumber(name.into(), e.to_string()))
}

fn parse_inertial(node: &roxmltree::Node) -> Result<RawInertia, ModelError> {
    let (rot, com) = parse_origin(node)?;
    let mass = node
        .children()
        .find(|n| n.has_tag_name("mass"))
        .map(|n| attr_f64(&n, "value"))
        .transpose()?
        .ok_or_else(|| ModelError::Missing("inertial mass".into()))?;
    let it = node
        .children()
        .find(|n| n.has_tag_name("inertia"))
        .ok_or_else(|| ModelError::Missing("inertial inertia".into()))?;
    let ixx = attr_f64(&it, "ixx")?;
    let ixy = attr_f64(&it, "ixy")?;
    let ixz = attr_f64(&it, "ixz")?;
    let iyy = attr_f64(&it, "iyy")?;
    let iyz = attr_f64(&it, "iyz")?;
    let izz = attr_f64(&it, "izz")?;
    let tensor = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
    // Tensor is given in the inertial frame; rotate into link axes.
    Ok(RawInertia { mass, com, inertia_com: rot * tensor * rot.transpose() })
}

fn parse_joint(node: &roxmltree::Node) -> Result<RawJoint, ModelError> {
    let name = node
        .attribute("name")
        .ok_or_else(|| ModelError::Missing("joint name".into()))?
        .to_string();
    let kind = node
        .attribute("type")
        .ok_or_else(|| ModelError::Missing(format!("joint `{name}` type")))?
        .to_string();
    let parent = node
        .children()
        .find(|n| n.has_tag_name("parent"))
        .and_then(|n| n.attribute("link"))
        .ok_or_else(|| ModelError::Missing(format!("joint `{name}` parent")))?
        .to_string();
    let child = node
        .children()
        .find(|n| n.has_tag_name("child"))
        .and_then(|n| n.attribute("link"))
        .ok_or_else(|| ModelError::Missing(format!("joint `{name}` child")))?
        .to_string();
    let (origin_rot, origin_pos) = parse_origin(node)?;
    let axis = node
        .children()
        .find(|n| n.has_tag_name("axis"))
        .and_then(|n| n.attribute("xyz"))
        .map(|s| parse_vec3(s, "axis xyz"))
        .transpose()?
        .unwrap_or_else(Vector3::x);

    let mut limits = JointLimits::default();
    if let Some(limit) = node.children().find(|n| n.has_tag_name("limit")) {
        if let Some(l) = limit.attribute("lower") {
            limits.lower = l.parse().map_err(|e: std::num::ParseFloatError| {
                ModelError::BadNumber("lower".into(), e.to_string())
            })?;
        }
        if let Some(u) = limit.attribute("upper") {
            limits.upper = u.parse().map_err(|e: std::num::ParseFloatError| {
                ModelError::BadNumber("upper".into(), e.to_string())
            })?;
        }
        if let Some(v) = limit.attribute("velocity") {
            limits.velocity = v.parse().map_err(|e: std::num::ParseFloatError| {
                ModelError::BadNumber("velocity".into(), e.to_string())
            })?;
        }
    }
    Ok(RawJoint { name, kind, parent, child, origin_rot, origin_pos, axis, limits })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
<robot name="mini">
  <link name="base"/>
  <link name="arm">
    <inertial>
      <origin xyz="0 0 -1.0"/>
      <mass value="1.0"/>
      <inertia ixx="0.01" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.001"/>
    </inertial>
  </link>
  <joint name="shoulder" type="revolute">
    <parent link="base"/>
    <child link="arm"/>
    <axis xyz="0 1 0"/>
    <limit lower="-3.0" upper="3.0" velocity="2.0"/>
  </joint>
</robot>
"#;

    #[test]
    fn minimal_pendulum_parses() {
        let m = parse_urdf(MINIMAL).unwrap();
        assert_eq!(m.n_bodies(), 1);
        assert_eq!(m.parent(0), None);
        assert_eq!(m.joint(0).kind, JointKind::Revolute);
        assert!((m.link(0).inertia.mass - 1.0).abs() < 1e-12);
        assert!((m.link(0).inertia.com.z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn floating_joint_rejected() {
        let text = MINIMAL.replace("type=\"revolute\"", "type=\"floating\"");
        match parse_urdf(&text) {
            Err(ModelError::UnsupportedJoint(kind, _)) => assert_eq!(kind, "floating"),
            other => panic!("expected unsupported joint, got {other:?}"),
        }
    }

    #[test]
    fn negative_mass_rejected() {
        let text = MINIMAL.replace("value=\"1.0\"", "value=\"-2.0\"");
        assert!(matches!(parse_urdf(&text), Err(ModelError::NonPositiveMass(_, _))));
    }

    #[test]
    fn malformed_xml_rejected() {
        assert!(matches!(parse_urdf("<robot><link"), Err(ModelError::Xml(_))));
    }

    #[test]
    fn fixed_joint_merges_inertia_and_ee() {
        let text = r#"
<robot name="merge">
  <link name="base"/>
  <link name="upper">
    <inertial>
      <origin xyz="0 0 0"/>
      <mass value="2.0"/>
      <inertia ixx="0.02" ixy="0" ixz="0" iyy="0.02" iyz="0" izz="0.02"/>
    </inertial>
  </link>
  <link name="cap">
    <inertial>
      <origin xyz="0 0 0"/>
      <mass value="1.0"/>
      <inertia ixx="0.01" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.01"/>
    </inertial>
  </link>
  <link name="ee_marker"/>
  <joint name="j1" type="revolute">
    <parent link="base"/>
    <child link="upper"/>
    <axis xyz="0 0 1"/>
  </joint>
  <joint name="weld" type="fixed">
    <origin xyz="0 0 0.5"/>
    <parent link="upper"/>
    <child link="cap"/>
  </joint>
  <joint name="mark" type="fixed">
    <origin xyz="0 0 0.6"/>
    <parent link="upper"/>
    <child link="ee_marker"/>
  </joint>
</robot>
"#;
        let m = parse_urdf(text).unwrap();
        assert_eq!(m.n_bodies(), 1);
        let li = &m.link(0).inertia;
        assert!((li.mass - 3.0).abs() < 1e-12);
        // combined COM: (2*0 + 1*0.5)/3 along z
        assert!((li.com.z - 0.5 / 3.0).abs() < 1e-12);
        let ee = m.ee.as_ref().expect("ee frame detected");
        assert_eq!(ee.link, 0);
        assert!((ee.offset[2] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cycle_is_rejected() {
        let text = r#"
<robot name="loop">
  <link name="a"/>
  <link name="b"/>
  <joint name="j1" type="revolute"><parent link="a"/><child link="b"/></joint>
  <joint name="j2" type="revolute"><parent link="b"/><child link="a"/></joint>
</robot>
"#;
        // every link has a parent, so no root exists
        assert!(matches!(parse_urdf(text), Err(ModelError::NoUniqueRoot(0))));
    }

    #[test]
    fn bad_axis_norm_rejected() {
        let text = MINIMAL.replace("xyz=\"0 1 0\"", "xyz=\"0 0.5 0\"");
        assert!(matches!(parse_urdf(&text), Err(ModelError::BadAxis(_, _))));
    }

    #[test]
    fn near_unit_axis_normalized() {
        let text = MINIMAL.replace("xyz=\"0 1 0\"", "xyz=\"0 1.0000004 0\"");
        let m = parse_urdf(&text).unwrap();
        assert!((m.joint(0).axis.norm() - 1.0).abs() < 1e-12);
    }
}
