//! Heuristic evaluation ordering: error-amplifying cases first, so failing
//! formats are rejected after a fraction of the evaluation budget.

use crate::kernels::JointState;
use crate::model::RobotModel;

/// Order sample indices so high-speed states come first (velocity-dependent
/// terms amplify quantization noise). Stable: ties keep input order.
pub fn heuristic_sample_order(samples: &[JointState], _model: &RobotModel) -> Vec<usize> {
    let speed = |s: &JointState| s.qd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        speed(&samples[b])
            .partial_cmp(&speed(&samples[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Joint evaluation priority: deeper joints first (errors accumulate toward
/// the leaves), larger-inertia joints first within a depth.
pub fn joint_priority(model: &RobotModel) -> Vec<usize> {
    let inertia_magnitude = |i: usize| {
        let m = model.link(i).inertia.spatial();
        let mut s = 0.0;
        for r in 0..6 {
            for c in 0..6 {
                s += m[(r, c)] * m[(r, c)];
            }
        }
        s.sqrt()
    };
    let mut idx: Vec<usize> = (0..model.n_bodies()).collect();
    idx.sort_by(|&a, &b| {
        model
            .depth(b)
            .cmp(&model.depth(a))
            .then_with(|| inertia_magnitude(b).partial_cmp(&inertia_magnitude(a)).unwrap())
            .then_with(|| a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn state(qd: f64, n: usize) -> JointState {
        JointState::new(vec![0.0; n], vec![qd; n], vec![0.0; n])
    }

    #[test]
    fn identical_samples_keep_input_order() {
        let model = fixtures::pendulum();
        let samples = vec![state(0.5, 1), state(0.5, 1), state(0.5, 1)];
        assert_eq!(heuristic_sample_order(&samples, &model), vec![0, 1, 2]);
    }

    #[test]
    fn higher_speed_comes_first() {
        let model = fixtures::pendulum();
        let samples = vec![state(0.1, 1), state(2.0, 1)];
        assert_eq!(heuristic_sample_order(&samples, &model), vec![1, 0]);
    }

    #[test]
    fn deep_joints_lead_the_priority() {
        let model = fixtures::iiwa();
        let prio = joint_priority(&model);
        assert_eq!(prio[0], 6, "deepest joint first on a serial chain");
        assert_eq!(*prio.last().unwrap(), 0);
    }
}
