//! Structural operation counting: the kernels run once under the counting
//! scalar, so one-hot motion subspaces, identity blocks, and structural
//! zeros cost nothing, mirroring a topology-specialized datapath.

use super::UnitProfile;
use crate::kernels::{
    fd_derivatives_s, forward_dynamics_s, id_derivatives_s, minv_deferred_s, minv_original_s,
    rnea_s,
};
use crate::model::RobotModel;
use crate::scalar::{collect_counts, KernelModule, OpCounts, Sym, UnitId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Functions the accelerator serves; complex ones activate several modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbdFunction {
    Id,
    Minv,
    Fd,
    DeltaId,
    DeltaFd,
}

impl RbdFunction {
    pub const ALL: [RbdFunction; 5] = [
        RbdFunction::Id,
        RbdFunction::Minv,
        RbdFunction::Fd,
        RbdFunction::DeltaId,
        RbdFunction::DeltaFd,
    ];

    /// Modules active while serving this function.
    pub fn active_modules(&self) -> &'static [KernelModule] {
        match self {
            RbdFunction::Id => &[KernelModule::Rnea],
            RbdFunction::Minv => &[KernelModule::Minv],
            RbdFunction::Fd => &[KernelModule::Rnea, KernelModule::Minv],
            RbdFunction::DeltaId => &[KernelModule::Rnea, KernelModule::DeltaRnea],
            RbdFunction::DeltaFd => {
                &[KernelModule::Rnea, KernelModule::DeltaRnea, KernelModule::Minv]
            }
        }
    }
}

/// Which mass-matrix-inverse variant the Minv module implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinvAlgo {
    Original,
    Deferred,
}

fn generic_state(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    // Any values other than 0 and ±1 count as generic operands.
    let q: Vec<f64> = (0..n).map(|i| 0.37 + 0.11 * i as f64).collect();
    let qd: Vec<f64> = (0..n).map(|i| 0.23 - 0.07 * i as f64).collect();
    let qdd: Vec<f64> = (0..n).map(|i| 0.41 + 0.05 * i as f64).collect();
    let tau: Vec<f64> = (0..n).map(|i| 1.3 + 0.17 * i as f64).collect();
    (q, qd, qdd, tau)
}

fn sym_vec(v: &[f64]) -> Vec<Sym> {
    use crate::scalar::Scalar;
    v.iter().map(|&x| Sym::from_f64(x)).collect()
}

fn merge(into: &mut BTreeMap<UnitId, OpCounts>, from: BTreeMap<UnitId, OpCounts>) {
    for (k, v) in from {
        into.entry(k).or_default().merge(v);
    }
}

fn drop_module(map: &mut BTreeMap<UnitId, OpCounts>, module: KernelModule) {
    map.retain(|u, _| u.module != module);
}

/// Per-joint, per-pass MAC and division counts for the units active in
/// `function`, deterministic for a given model.
pub fn count_macs(model: &RobotModel, function: RbdFunction, algo: MinvAlgo) -> Vec<UnitProfile> {
    let n = model.n_bodies();
    let (q, qd, qdd, tau) = generic_state(n);
    let (sq, sqd, sqdd, stau) = (sym_vec(&q), sym_vec(&qd), sym_vec(&qdd), sym_vec(&tau));

    let minv_counts = |algo: MinvAlgo| -> BTreeMap<UnitId, OpCounts> {
        let (_, counts) = collect_counts(None, || match algo {
            MinvAlgo::Deferred => minv_deferred_s::<Sym>(model, &sq).map(|_| ()),
            MinvAlgo::Original => minv_original_s::<Sym>(model, &sq).map(|_| ()),
        });
        counts
    };

    let mut counts: BTreeMap<UnitId, OpCounts> = match function {
        RbdFunction::Id => {
            collect_counts(None, || rnea_s::<Sym>(model, &sq, &sqd, &sqdd, None, true)).1
        }
        RbdFunction::Minv => minv_counts(algo),
        RbdFunction::Fd => {
            let mut c = collect_counts(None, || {
                forward_dynamics_s::<Sym>(model, &sq, &sqd, &stau, None, None).map(|_| ())
            })
            .1;
            if algo == MinvAlgo::Original {
                // swap the deferred Minv units used inside FD for the
                // original variant's
                let def = minv_counts(MinvAlgo::Deferred);
                let orig = minv_counts(MinvAlgo::Original);
                for (u, d) in def {
                    if let Some(c) = c.get_mut(&u) {
                        c.mul = c.mul.saturating_sub(d.mul);
                        c.div = c.div.saturating_sub(d.div);
                    }
                }
                merge(&mut c, orig);
            }
            c
        }
        RbdFunction::DeltaId => {
            // RNEA supplies the base kinematic/force chain, the derivative
            // module runs the dual recursions.
            let mut c =
                collect_counts(None, || rnea_s::<Sym>(model, &sq, &sqd, &sqdd, None, true)).1;
            let dual = collect_counts(None, || {
                id_derivatives_s::<Sym>(model, &q, &qd, &qdd);
            })
            .1;
            merge(&mut c, dual);
            c
        }
        RbdFunction::DeltaFd => {
            let mut c = collect_counts(None, || {
                fd_derivatives_s::<Sym>(model, &q, &qd, &tau, None).map(|_| ())
            })
            .1;
            if algo == MinvAlgo::Original {
                let def = minv_counts(MinvAlgo::Deferred);
                let orig = minv_counts(MinvAlgo::Original);
                // fd_derivatives evaluates the deferred Minv twice (once in
                // FD, once for the product); replace both.
                for (u, d) in def {
                    if let Some(cc) = c.get_mut(&u) {
                        cc.mul = cc.mul.saturating_sub(2 * d.mul);
                        cc.div = cc.div.saturating_sub(2 * d.div);
                    }
                }
                let mut orig2 = orig.clone();
                for v in orig2.values_mut() {
                    v.mul *= 2;
                    v.div *= 2;
                }
                merge(&mut c, orig2);
            }
            c
        }
    };

    // Restrict to this function's active modules.
    let active = function.active_modules();
    for m in [KernelModule::Rnea, KernelModule::DeltaRnea, KernelModule::Minv] {
        if !active.contains(&m) {
            drop_module(&mut counts, m);
        }
    }

    counts
        .into_iter()
        .map(|(unit, c)| UnitProfile { unit, macs: c.mul, divs: c.div })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scalar::PassDir;

    #[test]
    fn dense_matvec_counts_thirty_six() {
        use crate::scalar::Scalar;
        use crate::spatial::{Mat6, SpatialVec};
        let unit = UnitId::new(KernelModule::Rnea, PassDir::Forward, 0);
        let ((), counts) = collect_counts(None, || {
            Sym::enter_unit(Some(unit));
            let m = Mat6::<Sym>::from_f64([[0.5; 6]; 6]);
            let v = SpatialVec::<Sym>::from_f64([0.3; 6]);
            let _ = m.mul_vec(&v);
            Sym::enter_unit(None);
        });
        assert_eq!(counts[&unit].mul, 36);
    }

    #[test]
    fn division_placement_per_algorithm() {
        let model = fixtures::iiwa();
        let n = model.n_bodies() as u64;
        let deferred = count_macs(&model, RbdFunction::Minv, MinvAlgo::Deferred);
        let backward_divs: u64 = deferred
            .iter()
            .filter(|p| p.unit.pass == PassDir::Backward)
            .map(|p| p.divs)
            .sum();
        assert_eq!(backward_divs, 0, "deferred backward units must not divide");
        let total_divs: u64 = deferred.iter().map(|p| p.divs).sum();
        assert_eq!(total_divs, n);

        let original = count_macs(&model, RbdFunction::Minv, MinvAlgo::Original);
        for p in original.iter().filter(|p| p.unit.pass == PassDir::Backward) {
            assert_eq!(p.divs, 1, "original backward unit {:?}", p.unit);
        }
    }

    fn per_joint_drnea_load(model: &RobotModel) -> Vec<u64> {
        let profiles = count_macs(model, RbdFunction::DeltaId, MinvAlgo::Deferred);
        let mut per_joint = vec![0u64; model.n_bodies()];
        for p in &profiles {
            if p.unit.module == KernelModule::DeltaRnea {
                per_joint[p.unit.joint as usize] += p.macs;
            }
        }
        per_joint
    }

    #[test]
    fn derivative_units_grow_toward_the_end_effector() {
        // On a fully uniform chain (identical links, identical generic
        // origins) the load is governed purely by depth; on the real arm,
        // per-joint sparsity ripples the counts, so the claim is a rank
        // trend there.
        let mut urdf = String::from("<robot name=\"uniform7\">\n<link name=\"base\"/>\n");
        for i in 0..7 {
            urdf.push_str(&format!(
                "<link name=\"l{i}\"><inertial><origin xyz=\"0.03 0.02 0.11\"/>\
                 <mass value=\"2.5\"/><inertia ixx=\"0.02\" ixy=\"0.001\" ixz=\"0.002\" \
                 iyy=\"0.021\" iyz=\"0.0015\" izz=\"0.008\"/></inertial></link>\n"
            ));
            let parent = if i == 0 { "base".to_string() } else { format!("l{}", i - 1) };
            urdf.push_str(&format!(
                "<joint name=\"j{i}\" type=\"revolute\"><parent link=\"{parent}\"/>\
                 <child link=\"l{i}\"/><origin xyz=\"0.05 0.04 0.3\" rpy=\"0.4 0.3 0.2\"/>\
                 <axis xyz=\"0 0 1\"/><limit lower=\"-2.9\" upper=\"2.9\" velocity=\"2\"/></joint>\n"
            ));
        }
        urdf.push_str("</robot>\n");
        let uniform = crate::model::parse_urdf(&urdf).unwrap();
        let loads = per_joint_drnea_load(&uniform);
        for i in 1..loads.len() {
            assert!(
                loads[i] >= loads[i - 1],
                "uniform-chain ΔRNEA load not non-decreasing: {loads:?}"
            );
        }

        let model = fixtures::iiwa();
        let loads = per_joint_drnea_load(&model);
        let depths: Vec<f64> = (0..loads.len()).map(|i| i as f64).collect();
        let as_f: Vec<f64> = loads.iter().map(|&v| v as f64).collect();
        let rho = crate::sim::spearman(&depths, &as_f);
        assert!(rho >= 0.8, "depth/load rank correlation {rho}: {loads:?}");

        // and the derivative module outweighs the base module
        let profiles = count_macs(&model, RbdFunction::DeltaId, MinvAlgo::Deferred);
        let rnea: u64 = profiles
            .iter()
            .filter(|p| p.unit.module == KernelModule::Rnea)
            .map(|p| p.macs)
            .sum();
        let drnea: u64 = loads.iter().sum();
        assert!(drnea > rnea);
    }

    #[test]
    fn function_profiles_cover_expected_modules() {
        let model = fixtures::pendulum();
        for f in RbdFunction::ALL {
            let profiles = count_macs(&model, f, MinvAlgo::Deferred);
            let mods: std::collections::BTreeSet<_> =
                profiles.iter().map(|p| p.unit.module).collect();
            for m in f.active_modules() {
                assert!(mods.contains(m), "{f:?} missing {m:?}");
            }
        }
    }
}
