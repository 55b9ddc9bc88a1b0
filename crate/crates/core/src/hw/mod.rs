//! Analytical model of the accelerator: DSP cost tables, per-unit operation
//! counts, initiation intervals, divider sharing, inter-module DSP reuse,
//! and latency/throughput/control-rate estimates.
//!
//! This is not a cycle-accurate RTL model. Initiation intervals derive from
//! MAC counts and DSP allocations; latencies from configured stage, FIFO,
//! and divider pipeline depths. Trends and orderings are the product.

use crate::scalar::UnitId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

mod count;
mod plan;

pub use count::{count_macs, MinvAlgo, RbdFunction};
pub use plan::{plan_pipeline, ModeEntry, PipelinePlan, DEFAULT_REUSABLE_FRAC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("MAC width {width} absent from the {family:?} cost table")]
    WidthAbsent { family: DspFamily, width: u32 },
    #[error("cost table invalid: {0}")]
    BadTable(String),
    #[error("DSP budget {budget} infeasible; minimum is {minimum} (one per unit)")]
    InfeasibleBudget { budget: u64, minimum: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DspFamily {
    Dsp48,
    Dsp58,
}

/// DSP primitives consumed by one MAC, per operand width and family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspCostTable {
    entries: BTreeMap<DspFamily, BTreeMap<u32, u32>>,
}

impl Default for DspCostTable {
    fn default() -> Self {
        let mut entries: BTreeMap<DspFamily, BTreeMap<u32, u32>> = BTreeMap::new();
        entries.insert(DspFamily::Dsp48, BTreeMap::from([(18, 1), (32, 4)]));
        entries.insert(DspFamily::Dsp58, BTreeMap::from([(24, 1), (32, 2)]));
        Self { entries }
    }
}

impl DspCostTable {
    pub fn with_entry(mut self, family: DspFamily, width: u32, cost: u32) -> Self {
        self.entries.entry(family).or_default().insert(width, cost);
        self
    }

    pub fn validate(&self) -> Result<(), HwError> {
        for (family, map) in &self.entries {
            let mut prev = 0u32;
            for (w, c) in map {
                if *c < 1 {
                    return Err(HwError::BadTable(format!("{family:?}/{w}: cost {c} < 1")));
                }
                if *c < prev {
                    return Err(HwError::BadTable(format!(
                        "{family:?}: cost decreases at width {w}"
                    )));
                }
                prev = *c;
            }
        }
        Ok(())
    }

    /// Exact lookup.
    pub fn mac_dsp_cost(&self, width: u32, family: DspFamily) -> Result<u32, HwError> {
        self.entries
            .get(&family)
            .and_then(|m| m.get(&width).copied())
            .ok_or(HwError::WidthAbsent { family, width })
    }

    /// Cost of the narrowest table entry that covers `width`, for planning
    /// with formats between table rows.
    pub fn cost_covering(&self, width: u32, family: DspFamily) -> Result<u32, HwError> {
        self.entries
            .get(&family)
            .and_then(|m| m.range(width..).next().map(|(_, c)| *c))
            .ok_or(HwError::WidthAbsent { family, width })
    }
}

/// MAC and division counts for one per-joint pipeline unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub unit: UnitId,
    pub macs: u64,
    pub divs: u64,
}

/// Dividers needed when backward units emit one operand per initiation
/// interval into a fully pipelined divider: `ceil(n_units / II)`.
pub fn divider_count(n_backward_units: u64, ii: u64) -> u64 {
    assert!(n_backward_units >= 1 && ii >= 1);
    n_backward_units.div_ceil(ii)
}

/// Depth configuration for latency estimation (cycles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthConfig {
    pub stage_depth: u64,
    pub divider_depth: u64,
    pub fifo_depth: u64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self { stage_depth: 6, divider_depth: 20, fifo_depth: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfEntry {
    pub function: RbdFunction,
    pub ii: u64,
    pub latency_cycles: u64,
    pub latency_s: f64,
    pub throughput_per_s: f64,
}

/// Latency and throughput per function mode at the given clock.
pub fn estimate_perf(plan: &PipelinePlan, depths: &DepthConfig, clock_hz: f64) -> Vec<PerfEntry> {
    use crate::scalar::KernelModule;
    let n = plan.n_joints as u64;
    let module_depth = |m: KernelModule| -> u64 {
        match m {
            KernelModule::Rnea | KernelModule::DeltaRnea => {
                2 * n * depths.stage_depth + depths.fifo_depth
            }
            KernelModule::Minv => match plan.minv_algo {
                // reciprocal sits inside every backward stage
                MinvAlgo::Original => {
                    n * (depths.stage_depth + depths.divider_depth)
                        + n * depths.stage_depth
                        + depths.fifo_depth
                }
                // divisions run between the passes: one divider latency plus
                // the extra inter-pass FIFO, off the backward chain
                MinvAlgo::Deferred => {
                    2 * n * depths.stage_depth + 2 * depths.fifo_depth + depths.divider_depth
                }
            },
        }
    };
    plan.modes
        .iter()
        .map(|mode| {
            let chain: u64 = mode.active.iter().map(|&m| module_depth(m)).sum();
            let hops = (mode.active.len() as u64).saturating_sub(1) * depths.fifo_depth;
            let latency_cycles = chain + hops;
            PerfEntry {
                function: mode.function,
                ii: mode.ii,
                latency_cycles,
                latency_s: latency_cycles as f64 / clock_hz,
                throughput_per_s: clock_hz / mode.ii as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRateEstimate {
    pub horizon: usize,
    pub iterations: usize,
    pub rate_hz: f64,
}

/// Control rate sustained when each optimization iteration evaluates the
/// horizon through the ΔFD pipeline: first task pays latency, the rest
/// stream at the initiation interval.
pub fn control_rate(perf: &[PerfEntry], horizon: usize, iterations: usize) -> ControlRateEstimate {
    assert!(horizon >= 1 && iterations >= 1);
    let dfd = perf
        .iter()
        .find(|p| p.function == RbdFunction::DeltaFd)
        .expect("plan includes the ΔFD mode");
    let per_iter = dfd.latency_s + (horizon as f64 - 1.0) / dfd.throughput_per_s;
    ControlRateEstimate {
        horizon,
        iterations,
        rate_hz: 1.0 / (iterations as f64 * per_iter),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_table_defaults() {
        let t = DspCostTable::default();
        assert_eq!(t.mac_dsp_cost(18, DspFamily::Dsp48).unwrap(), 1);
        assert_eq!(t.mac_dsp_cost(32, DspFamily::Dsp48).unwrap(), 4);
        assert_eq!(t.mac_dsp_cost(24, DspFamily::Dsp58).unwrap(), 1);
        assert_eq!(t.mac_dsp_cost(32, DspFamily::Dsp58).unwrap(), 2);
        assert!(matches!(
            t.mac_dsp_cost(20, DspFamily::Dsp48),
            Err(HwError::WidthAbsent { width: 20, .. })
        ));
        // covering lookup rounds 20 bits up to the 32-bit row
        assert_eq!(t.cost_covering(20, DspFamily::Dsp48).unwrap(), 4);
        assert_eq!(t.cost_covering(10, DspFamily::Dsp48).unwrap(), 1);
        t.validate().unwrap();
    }

    #[test]
    fn bad_tables_rejected() {
        let t = DspCostTable::default().with_entry(DspFamily::Dsp48, 40, 2);
        assert!(matches!(t.validate(), Err(HwError::BadTable(_))));
        let t = DspCostTable::default().with_entry(DspFamily::Dsp58, 16, 0);
        assert!(matches!(t.validate(), Err(HwError::BadTable(_))));
    }

    #[test]
    fn divider_sharing_bound() {
        assert_eq!(divider_count(3, 3), 1);
        assert_eq!(divider_count(7, 3), 3);
        assert_eq!(divider_count(1, 100), 1);
        // utilization n/(count·II) never exceeds one, and hits one when II
        // divides n
        for n in 1..=30u64 {
            for ii in 1..=8u64 {
                let c = divider_count(n, ii);
                let util = n as f64 / (c * ii) as f64;
                assert!(util <= 1.0 + 1e-12);
                if n % ii == 0 {
                    assert!((util - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
