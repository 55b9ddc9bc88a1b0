//! DSP allocation and inter-module reuse planning.
//!
//! The collaborative interval T_C is the fastest rate at which all three
//! modules fit the budget together; collaborating modes run there. The ID
//! module additionally serves a high-rate solo mode, sized from a
//! proportional share of the machine. With reuse ON, that solo boost lives
//! in shared groups carved out of the partners' allocations: the partners
//! own them in collaborative modes, the ID module owns them in solo mode,
//! and the budget is charged once. The reuse-OFF plan is the unshared
//! design with identical per-mode intervals, so the group size is exactly
//! the saving — and it grows with the II mismatch between the light ID
//! module and its heavy partners.

use super::count::{count_macs, MinvAlgo, RbdFunction};
use super::{divider_count, DspCostTable, DspFamily, HwError, UnitProfile};
use crate::model::RobotModel;
use crate::scalar::{KernelModule, PassDir};
use crate::FxpFormat;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub function: RbdFunction,
    pub active: Vec<KernelModule>,
    /// Owner of the shared group between the derivative and ID modules.
    pub dr_owner: KernelModule,
    /// Owner of the shared group between the inverse-mass and ID modules.
    pub mr_owner: KernelModule,
    pub ii: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub reuse: bool,
    pub minv_algo: MinvAlgo,
    pub family: DspFamily,
    pub fmt: FxpFormat,
    pub n_joints: usize,
    pub cost_per_mac: u32,
    /// Dedicated DSPs per module.
    pub base: BTreeMap<KernelModule, u64>,
    pub shared_dr: u64,
    pub shared_mr: u64,
    pub total_dsps: u64,
    /// Per-unit allocation at each module's target interval (dedicated
    /// DSPs; shared groups sit on top of these).
    pub unit_alloc: Vec<(crate::scalar::UnitId, u64)>,
    pub modes: Vec<ModeEntry>,
    pub divider_count: u64,
}

struct ModuleCosts {
    units: Vec<(crate::scalar::UnitId, u64)>, // DSP-cycles per unit
}

impl ModuleCosts {
    /// DSPs needed to reach initiation interval `t`.
    fn need(&self, t: u64) -> u64 {
        self.units.iter().map(|(_, c)| c.div_ceil(t)).sum()
    }

    fn max_cost(&self) -> u64 {
        self.units.iter().map(|(_, c)| *c).max().unwrap_or(1)
    }

    fn unit_alloc(&self, t: u64) -> Vec<(crate::scalar::UnitId, u64)> {
        self.units.iter().map(|&(u, c)| (u, c.div_ceil(t))).collect()
    }

    /// Best interval achievable with `dsps` available.
    fn achievable_ii(&self, dsps: u64) -> u64 {
        let mut t = 1;
        while self.need(t) > dsps {
            t += 1;
        }
        t
    }
}

fn module_costs(
    profiles: &[UnitProfile],
    module: KernelModule,
    cost_per_mac: u32,
) -> ModuleCosts {
    let units = profiles
        .iter()
        .filter(|p| p.unit.module == module)
        .map(|p| (p.unit, p.macs.max(1) * cost_per_mac as u64))
        .collect();
    ModuleCosts { units }
}

/// Reusable-fraction knob: only MACs with matched operand shapes can share
/// datapaths without prohibitive muxing; this caps the shared group size.
pub const DEFAULT_REUSABLE_FRAC: f64 = 0.25;

/// Budget share sizing the ID module's solo-mode service.
pub const DEFAULT_ID_SHARE: f64 = 0.25;

/// Build the allocation plan for the full function set.
#[allow(clippy::too_many_arguments)]
pub fn plan_pipeline(
    model: &RobotModel,
    fmt: FxpFormat,
    family: DspFamily,
    table: &DspCostTable,
    dsp_budget: u64,
    reuse: bool,
    minv_algo: MinvAlgo,
    reusable_frac: f64,
) -> Result<PipelinePlan, HwError> {
    table.validate()?;
    let cost_per_mac = table.cost_covering(fmt.total_width(), family)?;

    // Union profile: ΔFD activates all three modules.
    let profiles = count_macs(model, RbdFunction::DeltaFd, minv_algo);
    let rnea = module_costs(&profiles, KernelModule::Rnea, cost_per_mac);
    let drnea = module_costs(&profiles, KernelModule::DeltaRnea, cost_per_mac);
    let minv = module_costs(&profiles, KernelModule::Minv, cost_per_mac);

    let min_budget = (rnea.units.len() + drnea.units.len() + minv.units.len()) as u64;
    if dsp_budget < min_budget {
        return Err(HwError::InfeasibleBudget { budget: dsp_budget, minimum: min_budget });
    }

    // Collaborative interval: fastest T at which all three modules fit.
    let t_max = rnea.max_cost().max(drnea.max_cost()).max(minv.max_cost());
    let mut t0 = 1;
    while t0 < t_max && rnea.need(t0) + drnea.need(t0) + minv.need(t0) > dsp_budget {
        t0 += 1;
    }
    let need_r = rnea.need(t0);
    let need_d = drnea.need(t0);
    let need_m = minv.need(t0);

    // Solo target for the ID module: a proportional slice of the machine,
    // never below its collaborative allocation. The shared groups may not
    // exceed the operand-compatible fraction of the partners' datapaths.
    let pool_r = need_r.max((dsp_budget as f64 * DEFAULT_ID_SHARE).floor() as u64);
    let boost = rnea.need(rnea.achievable_ii(pool_r)).saturating_sub(need_r);
    let reuse_cap = ((need_d + need_m) as f64 * reusable_frac).floor() as u64;
    let delta_used = boost.min(reuse_cap);
    let t_id = rnea.achievable_ii(need_r + delta_used);
    // exact group size at the achieved solo interval
    let delta_used = rnea.need(t_id).saturating_sub(need_r).min(reuse_cap);

    // Split the shared pool between the two groups.
    let (dr, mr) = split_shared(delta_used, need_d, need_m, min_budget);

    let (base, shared_dr, shared_mr, unit_alloc, total) = if reuse {
        let mut base = BTreeMap::new();
        base.insert(KernelModule::Rnea, need_r);
        base.insert(KernelModule::DeltaRnea, need_d - dr);
        base.insert(KernelModule::Minv, need_m - mr);
        let mut ua = rnea.unit_alloc(t0);
        ua.extend(drnea.unit_alloc(t0));
        ua.extend(minv.unit_alloc(t0));
        (base, dr, mr, ua, need_r + need_d + need_m)
    } else {
        // Unshared design with identical per-mode intervals; it may exceed
        // the nominal budget — the comparison assumes abundant resources.
        let mut base = BTreeMap::new();
        base.insert(KernelModule::Rnea, rnea.need(t_id));
        base.insert(KernelModule::DeltaRnea, need_d);
        base.insert(KernelModule::Minv, need_m);
        let mut ua = rnea.unit_alloc(t_id);
        ua.extend(drnea.unit_alloc(t0));
        ua.extend(minv.unit_alloc(t0));
        (base, 0, 0, ua, rnea.need(t_id) + need_d + need_m)
    };

    // Per-mode intervals and shared-group ownership. In both plans the ID
    // module reaches t_id in its solo mode (owning the groups when reuse is
    // on); collaborative modes run at the partners' interval.
    let id_solo_ii = if reuse {
        rnea.achievable_ii(need_r + dr + mr)
    } else {
        rnea.achievable_ii(rnea.need(t_id))
    };
    let ii_of = |modules: &[KernelModule]| -> u64 {
        modules
            .iter()
            .map(|m| match m {
                KernelModule::Rnea => {
                    if modules.len() == 1 {
                        id_solo_ii
                    } else {
                        rnea.achievable_ii(*base.get(&KernelModule::Rnea).unwrap())
                    }
                }
                KernelModule::DeltaRnea => drnea.achievable_ii(base[&KernelModule::DeltaRnea] + shared_dr),
                KernelModule::Minv => minv.achievable_ii(base[&KernelModule::Minv] + shared_mr),
            })
            .max()
            .unwrap_or(1)
    };

    let modes = RbdFunction::ALL
        .iter()
        .map(|&f| {
            let active = f.active_modules().to_vec();
            let (dr_owner, mr_owner) = match f {
                RbdFunction::Id => (KernelModule::Rnea, KernelModule::Rnea),
                RbdFunction::Minv => (KernelModule::Rnea, KernelModule::Minv),
                RbdFunction::Fd => (KernelModule::DeltaRnea, KernelModule::Minv),
                RbdFunction::DeltaId => (KernelModule::DeltaRnea, KernelModule::Minv),
                RbdFunction::DeltaFd => (KernelModule::DeltaRnea, KernelModule::Minv),
            };
            ModeEntry { function: f, active: active.clone(), dr_owner, mr_owner, ii: ii_of(&active) }
        })
        .collect::<Vec<_>>();

    let minv_mode_ii = modes
        .iter()
        .find(|m| m.function == RbdFunction::Minv)
        .map(|m| m.ii)
        .unwrap_or(1);
    let n = model.n_bodies() as u64;
    let dividers = match minv_algo {
        MinvAlgo::Original => n,
        MinvAlgo::Deferred => divider_count(n, minv_mode_ii),
    };

    Ok(PipelinePlan {
        reuse,
        minv_algo,
        family,
        fmt,
        n_joints: model.n_bodies(),
        cost_per_mac,
        base,
        shared_dr,
        shared_mr,
        total_dsps: total,
        unit_alloc,
        modes,
        divider_count: dividers,
    })
}

/// Greedy largest-remaining-need-first split, with an exhaustive scan when
/// the machine is small enough to enumerate.
fn split_shared(delta: u64, need_d: u64, need_m: u64, total_units: u64) -> (u64, u64) {
    let delta = delta.min(need_d + need_m);
    if total_units <= 12 {
        // exhaustive: balance the remaining dedicated sizes
        let mut best = (0u64, delta.min(need_m));
        let mut best_gap = u64::MAX;
        for dr in 0..=delta.min(need_d) {
            let mr = delta - dr;
            if mr > need_m {
                continue;
            }
            let gap = (need_d - dr).abs_diff(need_m - mr);
            if gap < best_gap {
                best_gap = gap;
                best = (dr, mr);
            }
        }
        return best;
    }
    let (mut dr, mut mr) = (0u64, 0u64);
    for _ in 0..delta {
        if need_d - dr >= need_m - mr && dr < need_d {
            dr += 1;
        } else if mr < need_m {
            mr += 1;
        } else {
            break;
        }
    }
    (dr, mr)
}

impl PipelinePlan {
    pub fn mode(&self, f: RbdFunction) -> &ModeEntry {
        self.modes.iter().find(|m| m.function == f).expect("all modes planned")
    }

    /// Every shared DSP has exactly one owner per mode, and the owner is an
    /// always-valid module for that group.
    pub fn ownership_is_exclusive(&self) -> bool {
        self.modes.iter().all(|m| {
            let dr_ok = matches!(m.dr_owner, KernelModule::Rnea | KernelModule::DeltaRnea);
            let mr_ok = matches!(m.mr_owner, KernelModule::Rnea | KernelModule::Minv);
            dr_ok && mr_ok
        })
    }

    /// Backward-unit count of the Minv module (for divider sizing checks).
    pub fn minv_backward_units(&self) -> u64 {
        self.unit_alloc
            .iter()
            .filter(|(u, _)| u.module == KernelModule::Minv && u.pass == PassDir::Backward)
            .count() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn plan(model: &RobotModel, budget: u64, reuse: bool) -> PipelinePlan {
        plan_pipeline(
            model,
            "Q12.12".parse().unwrap(),
            DspFamily::Dsp58,
            &DspCostTable::default(),
            budget,
            reuse,
            MinvAlgo::Deferred,
            DEFAULT_REUSABLE_FRAC,
        )
        .unwrap()
    }

    #[test]
    fn infeasible_budget_reports_minimum() {
        let model = fixtures::iiwa();
        match plan_pipeline(
            &model,
            "Q12.12".parse().unwrap(),
            DspFamily::Dsp58,
            &DspCostTable::default(),
            3,
            true,
            MinvAlgo::Deferred,
            DEFAULT_REUSABLE_FRAC,
        ) {
            Err(HwError::InfeasibleBudget { minimum, .. }) => assert!(minimum > 3),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn reuse_never_hurts() {
        for model in [fixtures::iiwa(), fixtures::atlas_tree()] {
            for budget in [2000u64, 5073, 6301] {
                let on = plan(&model, budget, true);
                let off = plan(&model, budget, false);
                assert!(on.total_dsps <= off.total_dsps, "{}: ON > OFF", model.name);
                for f in RbdFunction::ALL {
                    assert!(
                        on.mode(f).ii <= off.mode(f).ii,
                        "{}: mode {f:?} slower with reuse",
                        model.name
                    );
                }
                assert!(on.ownership_is_exclusive());
                // only the shared design must respect the nominal budget
                assert!(on.total_dsps <= budget);
            }
        }
    }

    #[test]
    fn solo_id_mode_is_fastest_mode() {
        let model = fixtures::iiwa();
        let on = plan(&model, 5073, true);
        let id = on.mode(RbdFunction::Id).ii;
        for f in RbdFunction::ALL {
            assert!(id <= on.mode(f).ii);
        }
    }

    #[test]
    fn single_module_function_gains_nothing_from_reuse() {
        // ID-only view: the ID module owns the groups either way; its solo
        // interval matches between plans.
        let model = fixtures::hyq_tree();
        let on = plan(&model, 3000, true);
        let off = plan(&model, 3000, false);
        assert_eq!(on.mode(RbdFunction::Id).ii, off.mode(RbdFunction::Id).ii);
    }

    #[test]
    fn wider_macs_never_shrink_the_plan() {
        let model = fixtures::iiwa();
        let narrow = plan_pipeline(
            &model,
            "Q12.12".parse().unwrap(),
            DspFamily::Dsp58,
            &DspCostTable::default(),
            8000,
            false,
            MinvAlgo::Deferred,
            DEFAULT_REUSABLE_FRAC,
        )
        .unwrap();
        let wide = plan_pipeline(
            &model,
            "Q16.16".parse().unwrap(),
            DspFamily::Dsp58,
            &DspCostTable::default(),
            8000,
            false,
            MinvAlgo::Deferred,
            DEFAULT_REUSABLE_FRAC,
        )
        .unwrap();
        assert!(wide.total_dsps >= narrow.total_dsps);
    }
}
