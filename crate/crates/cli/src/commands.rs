//! Subcommand implementations. Every data file written here is a pure
//! function of (config, seed): no timestamps, shortest-round-trip float
//! formatting, fixed key order.

use crate::config::Loaded;
use anyhow::{Context, Result};
use rbdq_core::hw::{estimate_perf, plan_pipeline, DepthConfig, MinvAlgo, RbdFunction};
use rbdq_core::kernels::{
    fd_derivatives_s, forward_dynamics_s, id_derivatives_s, mass_matrix_s, minv_deferred_s,
    minv_original_s, rnea_s,
};
use rbdq_core::sim::{analyze_errors, rollout_pair, SampleSource};
use rbdq_core::{control_rate, search, Binding};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub const EXIT_OK: u8 = 0;
pub const EXIT_DOMAIN: u8 = 2;

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

pub fn cmd_quantize_search(loaded: &Loaded) -> Result<u8> {
    let cfg = &loaded.config;
    let Some(constraints) = &cfg.search else {
        anyhow::bail!("config error: field `search` is required for quantize-search");
    };
    let ctrl = cfg.controller(loaded.model.n_bodies());
    let report = search::search(&loaded.model, &ctrl, constraints, &cfg.sim, cfg.seed)
        .context("search failed")?;

    write_json(&cfg.out_dir, "report.json", &report)?;
    if let Some(comp) = &report.compensation {
        write_json(&cfg.out_dir, "compensation.json", comp)?;
    }
    let mut csv = String::from("fmt,rollout_rank,run_index,metric,value,limit\n");
    for p in &report.pruning_log {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.fmt, p.rollout_rank, p.run_index, p.metric, p.value, p.limit
        );
    }
    write_text(&cfg.out_dir, "pruning_log.csv", &csv)?;

    println!(
        "search: robot={} controller={} n_int_floor={} rollouts={} wall_time={}ms",
        report.robot, report.controller, report.n_int_floor, report.rollouts_used,
        report.wall_time_ms
    );
    println!("  {:<8} {:<10} {}", "format", "status", "worst ee_max (m)");
    for c in &report.candidates {
        let status = match &c.status {
            rbdq_core::search::CandidateStatus::Passed => "passed".to_string(),
            rbdq_core::search::CandidateStatus::Failed { metric, .. } => {
                format!("failed:{metric}")
            }
            rbdq_core::search::CandidateStatus::Pruned { metric, .. } => {
                format!("pruned:{metric}")
            }
            rbdq_core::search::CandidateStatus::Skipped => "skipped".to_string(),
        };
        let worst = c.worst.map(|w| w.ee_max).unwrap_or(f64::NAN);
        println!("  {:<8} {:<10} {:.6e}", c.fmt.to_string(), status, worst);
    }
    match report.chosen {
        Some(fmt) => {
            println!("chosen format: {fmt}");
            Ok(EXIT_OK)
        }
        None => {
            eprintln!("no candidate met the tolerances ({:?})", report.status);
            Ok(EXIT_DOMAIN)
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifyCheck {
    check: &'static str,
    pass: bool,
    max_residual: f64,
    tolerance: f64,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    robot: String,
    states: usize,
    checks: Vec<VerifyCheck>,
    all_pass: bool,
}

pub fn cmd_verify(loaded: &Loaded) -> Result<u8> {
    use rand::SeedableRng;
    let model = &loaded.model;
    let cfg = &loaded.config;
    let n = model.n_bodies();
    let states = 50usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut round_trip = 0.0f64;
    let mut symmetry = 0.0f64;
    let mut identity = 0.0f64;
    let mut deferred_eq = 0.0f64;
    let mut divisions_ok = true;
    for _ in 0..states {
        let (q, qd) = model.sample_state(&mut rng);
        let qdd: Vec<f64> =
            (0..n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let tau = rnea_s::<f64>(model, &q, &qd, &qdd, None, true);
        let back = forward_dynamics_s::<f64>(model, &q, &qd, &tau, None, None)?;
        for i in 0..n {
            round_trip = round_trip.max((back[i] - qdd[i]).abs());
        }

        let m = mass_matrix_s::<f64>(model, &q);
        let (minv, wa) = minv_original_s::<f64>(model, &q)?;
        let (minv_d, wb) = minv_deferred_s::<f64>(model, &q)?;
        for i in 0..n {
            for j in 0..n {
                symmetry = symmetry.max((m[i * n + j] - m[j * n + i]).abs());
                let mut acc = 0.0;
                for k in 0..n {
                    acc += minv[i * n + k] * m[k * n + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                identity = identity.max((acc - expect).abs());
                deferred_eq = deferred_eq.max((minv[i * n + j] - minv_d[i * n + j]).abs());
            }
        }
        divisions_ok &= wa.divisions_in_backward == n
            && wb.divisions_in_backward == 0
            && wb.reciprocals_total == n;
    }

    // gradient checks on a handful of states
    let mut grad_id = 0.0f64;
    let mut grad_fd = 0.0f64;
    for _ in 0..5 {
        let (q, qd) = model.sample_state(&mut rng);
        let qdd: Vec<f64> =
            (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let tau = rnea_s::<f64>(model, &q, &qd, &qdd, None, true);
        let did = id_derivatives_s::<f64>(model, &q, &qd, &qdd);
        let dfd = fd_derivatives_s::<f64>(model, &q, &qd, &tau, None)?;
        let h = 1e-6;
        for j in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let tp = rnea_s::<f64>(model, &qp, &qd, &qdd, None, true);
            let tm = rnea_s::<f64>(model, &qm, &qd, &qdd, None, true);
            let fp = forward_dynamics_s::<f64>(model, &qp, &qd, &tau, None, None)?;
            let fm = forward_dynamics_s::<f64>(model, &qm, &qd, &tau, None, None)?;
            for i in 0..n {
                let fd_ref = (tp[i] - tm[i]) / (2.0 * h);
                let scale = fd_ref.abs().max(1.0);
                grad_id = grad_id.max((did.wrt_q[(i, j)] - fd_ref).abs() / scale);
                let fd_ref = (fp[i] - fm[i]) / (2.0 * h);
                let scale = fd_ref.abs().max(1.0);
                grad_fd = grad_fd.max((dfd.wrt_q[(i, j)] - fd_ref).abs() / scale);
            }
        }
    }

    let checks = vec![
        VerifyCheck { check: "id_fd_round_trip", pass: round_trip <= 1e-7, max_residual: round_trip, tolerance: 1e-7 },
        VerifyCheck { check: "mass_matrix_symmetry", pass: symmetry <= 1e-9, max_residual: symmetry, tolerance: 1e-9 },
        VerifyCheck { check: "minv_times_m_identity", pass: identity <= 1e-7, max_residual: identity, tolerance: 1e-7 },
        VerifyCheck { check: "minv_deferred_equivalence", pass: deferred_eq <= 1e-10, max_residual: deferred_eq, tolerance: 1e-10 },
        VerifyCheck { check: "division_placement", pass: divisions_ok, max_residual: if divisions_ok { 0.0 } else { 1.0 }, tolerance: 0.0 },
        VerifyCheck { check: "id_gradient_vs_fd", pass: grad_id <= 1e-5, max_residual: grad_id, tolerance: 1e-5 },
        VerifyCheck { check: "fd_gradient_vs_fd", pass: grad_fd <= 1e-5, max_residual: grad_fd, tolerance: 1e-5 },
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    let report = VerifyReport { robot: model.name.clone(), states, checks, all_pass };
    write_json(&cfg.out_dir, "verify.json", &report)?;
    for c in &report.checks {
        println!(
        "[{}] {:<28} residual {:.3e} (tol {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.check,
            c.max_residual,
            c.tolerance
        );
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_DOMAIN })
}

#[derive(Debug, Serialize)]
struct PlanReport {
    robot: String,
    format: String,
    reuse_on: rbdq_core::PipelinePlan,
    reuse_off: rbdq_core::PipelinePlan,
    savings_dsps: u64,
    savings_fraction: f64,
    perf_on: Vec<rbdq_core::hw::PerfEntry>,
    perf_off: Vec<rbdq_core::hw::PerfEntry>,
}

pub fn cmd_plan(loaded: &Loaded) -> Result<u8> {
    let cfg = &loaded.config;
    let hw = cfg.hw.clone().unwrap_or_default();
    let fmt = cfg.fixed_format()?;
    let table = hw.table();
    let depths = DepthConfig {
        stage_depth: hw.stage_depth,
        divider_depth: hw.divider_depth,
        fifo_depth: hw.fifo_depth,
    };

    let build = |reuse: bool, algo: MinvAlgo| {
        plan_pipeline(
            &loaded.model,
            fmt,
            hw.family,
            &table,
            hw.budget,
            reuse,
            algo,
            hw.reusable_frac,
        )
    };
    let on = match build(true, hw.minv) {
        Ok(p) => p,
        Err(rbdq_core::HwError::InfeasibleBudget { budget, minimum }) => {
            eprintln!("budget {budget} infeasible; minimum feasible budget is {minimum}");
            return Ok(EXIT_DOMAIN);
        }
        Err(e) => return Err(e.into()),
    };
    let off = build(false, hw.minv)?;
    let perf_on = estimate_perf(&on, &depths, hw.clock_hz);
    let perf_off = estimate_perf(&off, &depths, hw.clock_hz);

    let report = PlanReport {
        robot: loaded.model.name.clone(),
        format: fmt.to_string(),
        savings_dsps: off.total_dsps - on.total_dsps,
        savings_fraction: (off.total_dsps - on.total_dsps) as f64 / off.total_dsps as f64,
        reuse_on: on.clone(),
        reuse_off: off,
        perf_on: perf_on.clone(),
        perf_off,
    };
    write_json(&cfg.out_dir, "plan.json", &report)?;

    // control-rate sweep for both reuse settings and both Minv variants
    let mut csv = String::from(
        "horizon,rate_on_deferred_hz,rate_on_original_hz,rate_off_deferred_hz,rate_off_original_hz\n",
    );
    let perf_for = |reuse: bool, algo: MinvAlgo| -> Result<Vec<rbdq_core::hw::PerfEntry>> {
        Ok(estimate_perf(&build(reuse, algo)?, &depths, hw.clock_hz))
    };
    let p_on_d = perf_for(true, MinvAlgo::Deferred)?;
    let p_on_o = perf_for(true, MinvAlgo::Original)?;
    let p_off_d = perf_for(false, MinvAlgo::Deferred)?;
    let p_off_o = perf_for(false, MinvAlgo::Original)?;
    for horizon in 1..=hw.horizon_max {
        let r = |p: &[rbdq_core::hw::PerfEntry]| control_rate(p, horizon, hw.iterations).rate_hz;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            horizon,
            r(&p_on_d),
            r(&p_on_o),
            r(&p_off_d),
            r(&p_off_o)
        );
    }
    write_text(&cfg.out_dir, "sweep.csv", &csv)?;

    println!(
        "plan: robot={} fmt={} family={:?} budget={}",
        report.robot, report.format, hw.family, hw.budget
    );
    println!(
        "  reuse ON: {} DSPs, OFF: {} DSPs, savings {:.2}%",
        report.reuse_on.total_dsps,
        report.reuse_off.total_dsps,
        report.savings_fraction * 100.0
    );
    for p in &perf_on {
        println!(
            "  {:?}: II {} cycles, latency {:.3} us, throughput {:.0} tasks/s",
            p.function,
            p.ii,
            p.latency_s * 1e6,
            p.throughput_per_s
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_rollout(loaded: &Loaded, run_index: usize) -> Result<u8> {
    let cfg = &loaded.config;
    let fmt = cfg.fixed_format()?;
    let ctrl = cfg.controller(loaded.model.n_bodies());
    let mut sim = cfg.sim.clone();
    if let SampleSource::Seed { seed } = &mut sim.source {
        if *seed == 0 {
            *seed = cfg.seed;
        }
    }
    let pair = rollout_pair(&loaded.model, &ctrl, &Binding::fxp(fmt), &sim, run_index)
        .context("rollout failed")?;
    let stats = analyze_errors(&[pair.clone()], &loaded.model, fmt);

    let n = loaded.model.n_bodies();
    let mut csv = String::from("step,t");
    for i in 0..n {
        let _ = write!(csv, ",q{i}");
    }
    for i in 0..n {
        let _ = write!(csv, ",qd{i}");
    }
    for i in 0..n {
        let _ = write!(csv, ",tau{i}");
    }
    csv.push_str(",ee_x,ee_y,ee_z,run_id\n");
    for (run_id, trace) in [("ref", &pair.reference), ("quant", &pair.quantized)] {
        for k in 0..trace.q.len() {
            let _ = write!(csv, "{},{}", k, k as f64 * pair.dt);
            for v in &trace.q[k] {
                let _ = write!(csv, ",{v}");
            }
            for v in &trace.qd[k] {
                let _ = write!(csv, ",{v}");
            }
            for v in &trace.tau[k] {
                let _ = write!(csv, ",{v}");
            }
            let _ = writeln!(
                csv,
                ",{},{},{},{run_id}",
                trace.ee[k][0], trace.ee[k][1], trace.ee[k][2]
            );
        }
    }
    write_text(&cfg.out_dir, "trajectory.csv", &csv)?;
    write_json(&cfg.out_dir, "errors.json", &stats)?;

    let m = pair.metrics();
    println!(
        "rollout: fmt={fmt} steps={} ee_max={:.6e} m ee_rms={:.6e} m torque_rms={:.4e}",
        pair.reference.q.len(),
        m.ee_max,
        m.ee_rms,
        m.torque_rms
    );
    Ok(EXIT_OK)
}
