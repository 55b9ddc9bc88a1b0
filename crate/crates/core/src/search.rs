//! Closed-loop precision search: range analysis fixes the integer width,
//! candidates are enumerated cheapest-first against the DSP word sizes, and
//! heuristically ordered simulations reject losers early.

use crate::control::ControllerConfig;
use crate::kernels::{forward_dynamics_s, rnea_s, Binding, JointState};
use crate::model::RobotModel;
use crate::scalar::{collect_ranges, Track};
use crate::sim::{
    fit_compensation, heuristic_sample_order, rollout_pair, CompensationParams, RolloutMetrics,
    SimConfig, SimError,
};
use crate::FxpFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("range analysis budget {0} below the 100-sample minimum")]
    RangeBudgetTooSmall(usize),
    #[error("unbounded intermediate `{0}` during range analysis")]
    UnboundedIntermediate(String),
    #[error("candidate set is empty (floor {floor} exhausts every width)")]
    NoCandidates { floor: u32 },
    #[error("reference rollout failed: {0}")]
    ReferenceRollout(#[from] SimError),
    #[error("format error: {0}")]
    Format(#[from] crate::FxpError),
}

/// Target hardware families constrain usable total word widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HwMode {
    Dsp48_18,
    Dsp58_24,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConstraints {
    pub mode: HwMode,
    /// Allowed total widths, ascending; empty selects per-mode defaults.
    pub widths: Vec<u32>,
    /// Extra integer-bit guard splits tried within each width.
    pub n_int_spread: u32,
    /// Fractional-width grid for unconstrained mode.
    pub nfrac_min: u32,
    pub nfrac_max: u32,
    pub n_int_override: Option<u32>,
    /// Samples for range analysis.
    pub range_samples: usize,
    /// Rollouts evaluated per candidate.
    pub rollouts_per_candidate: usize,
    /// Global simulation budget (rollout pairs).
    pub max_rollouts: usize,
    /// Fraction of the per-candidate set used for early termination.
    pub prune_fraction: f64,
    /// Early-termination threshold as a multiple of the tolerance. Above 1
    /// it cannot reject a borderline-passing candidate.
    pub prune_factor: f64,
    /// Fraction of pruned candidates re-run on the full set as an audit.
    pub audit_fraction: f64,
    pub comp_samples: usize,
    pub comp_diagonal_only: bool,
}

impl Default for SearchConstraints {
    fn default() -> Self {
        Self {
            mode: HwMode::Unconstrained,
            widths: Vec::new(),
            n_int_spread: 1,
            nfrac_min: 6,
            nfrac_max: 16,
            n_int_override: None,
            range_samples: 300,
            rollouts_per_candidate: 200,
            max_rollouts: 5000,
            prune_fraction: 0.1,
            prune_factor: 1.2,
            audit_fraction: 0.1,
            comp_samples: 150,
            comp_diagonal_only: true,
        }
    }
}

impl SearchConstraints {
    fn effective_widths(&self) -> Vec<u32> {
        if !self.widths.is_empty() {
            let mut w = self.widths.clone();
            w.sort_unstable();
            return w;
        }
        match self.mode {
            HwMode::Dsp48_18 => vec![18, 24, 32],
            HwMode::Dsp58_24 => vec![24, 32],
            HwMode::Unconstrained => Vec::new(),
        }
    }
}

/// Smallest integer width whose full span covers twice the observed maximum.
pub fn n_int_for_max(max_abs: f64) -> u32 {
    if max_abs <= 0.0 {
        return 1;
    }
    let need = (2.0 * max_abs).log2().ceil();
    (need.max(1.0)) as u32
}

/// Run the real-valued kernels over sampled states and return the integer
/// bit-width that covers every observed intermediate with a 2× margin.
pub fn range_analysis(
    model: &RobotModel,
    sample_budget: usize,
    seed: u64,
) -> Result<u32, SearchError> {
    if sample_budget < 100 {
        return Err(SearchError::RangeBudgetTooSmall(sample_budget));
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_bodies();
    let ((), record) = collect_ranges(|| {
        for _ in 0..sample_budget {
            let (q, qd) = model.sample_state(&mut rng);
            let qdd: Vec<f64> = (0..n)
                .map(|i| {
                    let v = model.joint(i).limits.velocity;
                    rng.random_range(-2.0 * v..=2.0 * v)
                })
                .collect();
            let qs: Vec<Track> = q.iter().map(|&v| Track(v)).collect();
            let qds: Vec<Track> = qd.iter().map(|&v| Track(v)).collect();
            let qdds: Vec<Track> = qdd.iter().map(|&v| Track(v)).collect();
            let tau = rnea_s::<Track>(model, &qs, &qds, &qdds, None, true);
            let _ = forward_dynamics_s::<Track>(model, &qs, &qds, &tau, None, None);
        }
    });
    if let Some(name) = record.non_finite {
        return Err(SearchError::UnboundedIntermediate(name.to_string()));
    }
    Ok(n_int_for_max(record.global_max))
}

/// Candidate formats, cheapest first: smallest total width, then largest
/// fractional width within a width.
pub fn enumerate_candidates(
    constraints: &SearchConstraints,
    n_int_floor: u32,
) -> Result<Vec<FxpFormat>, SearchError> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    match constraints.mode {
        HwMode::Unconstrained => {
            for n_frac in constraints.nfrac_min..=constraints.nfrac_max {
                for s in 0..=constraints.n_int_spread {
                    out.push((n_int_floor + s, n_frac));
                }
            }
            out.sort_by_key(|&(i, f)| (i + f, std::cmp::Reverse(f)));
        }
        _ => {
            for w in constraints.effective_widths() {
                for s in 0..=constraints.n_int_spread {
                    let n_int = n_int_floor + s;
                    if n_int >= w {
                        continue; // floor exhausts this width
                    }
                    out.push((n_int, w - n_int));
                }
            }
        }
    }
    out.dedup();
    if out.is_empty() {
        return Err(SearchError::NoCandidates { floor: n_int_floor });
    }
    out.into_iter()
        .map(|(i, f)| FxpFormat::new(i, f).map_err(SearchError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateStatus {
    Passed,
    Failed { rollout_rank: usize, metric: String, value: f64, limit: f64 },
    Pruned { rollout_rank: usize, metric: String, value: f64, limit: f64 },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub fmt: FxpFormat,
    pub status: CandidateStatus,
    pub rollouts_run: usize,
    pub worst: Option<RolloutMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub fmt: FxpFormat,
    pub rollout_rank: usize,
    pub run_index: usize,
    pub metric: String,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub fmt: FxpFormat,
    /// Whether the full evaluation set confirms a genuine violation.
    pub genuine_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Found,
    NoCandidatePassed,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantReport {
    pub robot: String,
    pub controller: String,
    pub n_int_floor: u32,
    pub status: SearchStatus,
    pub chosen: Option<FxpFormat>,
    pub candidates: Vec<CandidateOutcome>,
    pub pruning_log: Vec<PruneEvent>,
    pub audits: Vec<AuditOutcome>,
    pub compensation: Option<CompensationParams>,
    /// Whether the winner still passes with compensation applied.
    pub compensation_validated: Option<bool>,
    pub rollouts_used: usize,
    /// Printed to stdout only; excluded so data outputs stay byte-identical
    /// across reruns.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

impl QuantReport {
    pub fn passed(&self) -> bool {
        self.status == SearchStatus::Found
    }
}

struct Violation {
    metric: String,
    value: f64,
    limit: f64,
    hard: bool,
}

fn diverged_metrics() -> RolloutMetrics {
    RolloutMetrics {
        ee_max: f64::INFINITY,
        ee_rms: f64::INFINITY,
        torque_rms: f64::INFINITY,
        posture_max: f64::INFINITY,
    }
}

fn check_metrics(m: &RolloutMetrics, sim: &SimConfig, prune_factor: f64) -> Option<Violation> {
    let mut worst: Option<Violation> = None;
    let mut consider = |name: &str, value: f64, limit: f64| {
        if value > limit {
            let hard = value > prune_factor * limit;
            let replace = match &worst {
                None => true,
                Some(w) => (value / limit) > (w.value / w.limit),
            };
            if replace {
                worst = Some(Violation { metric: name.to_string(), value, limit, hard });
            }
        }
    };
    if sim.metrics.ee_max {
        consider("ee_max", m.ee_max, sim.tolerance_m);
    }
    if sim.metrics.ee_rms {
        consider("ee_rms", m.ee_rms, sim.tolerance_m);
    }
    if sim.metrics.torque_rms {
        consider("torque_rms", m.torque_rms, sim.torque_tolerance);
    }
    worst
}

fn merge_worst(acc: &mut Option<RolloutMetrics>, m: RolloutMetrics) {
    match acc {
        None => *acc = Some(m),
        Some(w) => {
            w.ee_max = w.ee_max.max(m.ee_max);
            w.ee_rms = w.ee_rms.max(m.ee_rms);
            w.torque_rms = w.torque_rms.max(m.torque_rms);
            w.posture_max = w.posture_max.max(m.posture_max);
        }
    }
}

/// Evaluate one candidate over the ordered run indices.
#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    model: &RobotModel,
    ctrl: &ControllerConfig,
    fmt: FxpFormat,
    comp: Option<&CompensationParams>,
    sim: &SimConfig,
    order: &[usize],
    decile: usize,
    prune_factor: f64,
    budget_left: usize,
    pruning_log: &mut Vec<PruneEvent>,
) -> (CandidateOutcome, usize) {
    let mut binding = Binding::fxp(fmt);
    if let Some(c) = comp {
        binding = binding.with_compensation(c.offset.clone());
    }
    let mut worst = None;
    let mut used = 0usize;
    for (rank, &run_index) in order.iter().enumerate() {
        if used >= budget_left {
            return (
                CandidateOutcome {
                    fmt,
                    status: CandidateStatus::Skipped,
                    rollouts_run: used,
                    worst,
                },
                used,
            );
        }
        used += 1;
        let metrics = match rollout_pair(model, ctrl, &binding, sim, run_index) {
            Ok(pair) => pair.metrics(),
            Err(_) => diverged_metrics(),
        };
        merge_worst(&mut worst, metrics);
        if let Some(v) = check_metrics(&metrics, sim, prune_factor) {
            let status = if rank < decile && v.hard {
                pruning_log.push(PruneEvent {
                    fmt,
                    rollout_rank: rank,
                    run_index,
                    metric: v.metric.clone(),
                    value: v.value,
                    limit: v.limit,
                });
                CandidateStatus::Pruned {
                    rollout_rank: rank,
                    metric: v.metric,
                    value: v.value,
                    limit: v.limit,
                }
            } else {
                CandidateStatus::Failed {
                    rollout_rank: rank,
                    metric: v.metric,
                    value: v.value,
                    limit: v.limit,
                }
            };
            return (CandidateOutcome { fmt, status, rollouts_run: used, worst }, used);
        }
    }
    (
        CandidateOutcome { fmt, status: CandidateStatus::Passed, rollouts_run: used, worst },
        used,
    )
}

/// Full search: first candidate passing the whole evaluation set wins;
/// compensation is fitted for the winner and re-validated.
pub fn search(
    model: &RobotModel,
    ctrl: &ControllerConfig,
    constraints: &SearchConstraints,
    sim: &SimConfig,
    seed: u64,
) -> Result<QuantReport, SearchError> {
    let started = std::time::Instant::now();
    let floor = match constraints.n_int_override {
        Some(v) => v,
        None => range_analysis(model, constraints.range_samples, seed)?,
    };
    let candidates = enumerate_candidates(constraints, floor)?;

    // Evaluation states, heuristically ordered (fast states first).
    let r = constraints.rollouts_per_candidate;
    let mut states = Vec::with_capacity(r);
    for k in 0..r {
        let (q, qd) = sim.initial_state(model, k)?;
        let n = q.len();
        states.push(JointState::new(q, qd, vec![0.0; n]));
    }
    let order = heuristic_sample_order(&states, model);
    let decile = ((r as f64 * constraints.prune_fraction).ceil() as usize).max(1);

    let mut report = QuantReport {
        robot: model.name.clone(),
        controller: ctrl.name().to_string(),
        n_int_floor: floor,
        status: SearchStatus::NoCandidatePassed,
        chosen: None,
        candidates: Vec::new(),
        pruning_log: Vec::new(),
        audits: Vec::new(),
        compensation: None,
        compensation_validated: None,
        rollouts_used: 0,
        wall_time_ms: 0,
    };

    let mut winner: Option<FxpFormat> = None;
    for &fmt in &candidates {
        let budget_left = constraints.max_rollouts.saturating_sub(report.rollouts_used);
        if budget_left == 0 {
            report.candidates.push(CandidateOutcome {
                fmt,
                status: CandidateStatus::Skipped,
                rollouts_run: 0,
                worst: None,
            });
            report.status = SearchStatus::BudgetExhausted;
            continue;
        }
        let (outcome, used) = evaluate_candidate(
            model,
            ctrl,
            fmt,
            None,
            sim,
            &order,
            decile,
            constraints.prune_factor,
            budget_left,
            &mut report.pruning_log,
        );
        report.rollouts_used += used;
        let passed = outcome.status == CandidateStatus::Passed;
        let skipped = outcome.status == CandidateStatus::Skipped;
        report.candidates.push(outcome);
        if skipped {
            report.status = SearchStatus::BudgetExhausted;
        }
        if passed {
            winner = Some(fmt);
            break;
        }
    }

    // Audit a sample of pruned candidates against the full evaluation set.
    let pruned: Vec<FxpFormat> = report
        .candidates
        .iter()
        .filter(|c| matches!(c.status, CandidateStatus::Pruned { .. }))
        .map(|c| c.fmt)
        .collect();
    let audit_count =
        ((pruned.len() as f64 * constraints.audit_fraction).ceil() as usize).min(pruned.len());
    for &fmt in pruned.iter().take(audit_count) {
        let binding = Binding::fxp(fmt);
        let mut genuine = false;
        for &run_index in &order {
            let metrics = match rollout_pair(model, ctrl, &binding, sim, run_index) {
                Ok(pair) => pair.metrics(),
                Err(_) => diverged_metrics(),
            };
            report.rollouts_used += 1;
            // genuine = violates the tolerance itself, not the prune margin
            if check_metrics(&metrics, sim, 1.0).is_some() {
                genuine = true;
                break;
            }
        }
        report.audits.push(AuditOutcome { fmt, genuine_violation: genuine });
    }

    if let Some(fmt) = winner {
        report.status = SearchStatus::Found;
        report.chosen = Some(fmt);
        if let Ok(comp) = fit_compensation(
            model,
            fmt,
            constraints.comp_samples,
            seed.wrapping_add(1),
            constraints.comp_diagonal_only,
        ) {
            // Re-validate the winner with compensation active.
            let (outcome, used) = evaluate_candidate(
                model,
                ctrl,
                fmt,
                Some(&comp),
                sim,
                &order,
                decile,
                constraints.prune_factor,
                order.len(),
                &mut Vec::new(),
            );
            report.rollouts_used += used;
            report.compensation_validated = Some(outcome.status == CandidateStatus::Passed);
            report.compensation = Some(comp);
        }
    }

    report.wall_time_ms = started.elapsed().as_millis();
    Ok(report)
}

/// Re-run a format on a freshly seeded evaluation set; true when no
/// tolerance is violated.
pub fn revalidate(
    model: &RobotModel,
    ctrl: &ControllerConfig,
    fmt: FxpFormat,
    comp: Option<&CompensationParams>,
    sim: &SimConfig,
    fresh_seed: u64,
    rollouts: usize,
) -> Result<bool, SearchError> {
    let mut sim = sim.clone();
    sim.source = crate::sim::SampleSource::Seed { seed: fresh_seed };
    let mut binding = Binding::fxp(fmt);
    if let Some(c) = comp {
        binding = binding.with_compensation(c.offset.clone());
    }
    for k in 0..rollouts {
        let metrics = match rollout_pair(model, ctrl, &binding, &sim, k) {
            Ok(pair) => pair.metrics(),
            Err(_) => return Ok(false),
        };
        if check_metrics(&metrics, &sim, 1.0).is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}
