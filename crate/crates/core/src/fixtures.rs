//! Embedded robot descriptions used by tests, benches, and example configs.

use crate::model::{parse_urdf, RobotModel};
use std::sync::OnceLock;

pub const PENDULUM_URDF: &str = include_str!("../assets/pendulum.urdf");
pub const SLIDER_URDF: &str = include_str!("../assets/slider.urdf");
pub const IIWA_URDF: &str = include_str!("../assets/iiwa14.urdf");
pub const HYQ_TREE_URDF: &str = include_str!("../assets/hyq_tree.urdf");
pub const ATLAS_TREE_URDF: &str = include_str!("../assets/atlas_tree.urdf");

fn cached(cell: &'static OnceLock<RobotModel>, text: &str) -> RobotModel {
    cell.get_or_init(|| parse_urdf(text).expect("embedded URDF parses"))
        .clone()
}

/// Single revolute joint about y, unit point mass one meter below the pivot.
pub fn pendulum() -> RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    cached(&M, PENDULUM_URDF)
}

/// Single prismatic joint along x; a double integrator under zero gravity
/// component.
pub fn slider() -> RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    cached(&M, SLIDER_URDF)
}

/// 7-DOF serial manipulator.
pub fn iiwa() -> RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    cached(&M, IIWA_URDF)
}

/// Quadruped modeled as a fixed-trunk tree: four 3-DOF legs.
pub fn hyq_tree() -> RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    cached(&M, HYQ_TREE_URDF)
}

/// Humanoid modeled as a fixed-pelvis tree: torso, neck, two 7-DOF arms,
/// two 6-DOF legs (30 joints).
pub fn atlas_tree() -> RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    cached(&M, ATLAS_TREE_URDF)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        assert_eq!(pendulum().n_bodies(), 1);
        assert_eq!(slider().n_bodies(), 1);
        let iiwa = iiwa();
        assert_eq!(iiwa.n_bodies(), 7);
        // serial chain
        for i in 0..7 {
            let expect = if i == 0 { None } else { Some(i - 1) };
            assert_eq!(iiwa.parent(i), expect);
        }
        assert!(iiwa.ee.is_some(), "iiwa fixture carries an ee frame");
        assert_eq!(hyq_tree().n_bodies(), 12);
        assert_eq!(atlas_tree().n_bodies(), 30);
    }

    #[test]
    fn tree_depths() {
        let hyq = hyq_tree();
        let max_depth = (0..hyq.n_bodies()).map(|i| hyq.depth(i)).max().unwrap();
        assert_eq!(max_depth, 3);
        let atlas = atlas_tree();
        let max_depth = (0..atlas.n_bodies()).map(|i| atlas.depth(i)).max().unwrap();
        assert_eq!(max_depth, 10); // torso chain + arm
    }
}
