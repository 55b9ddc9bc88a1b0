//! Quantization error analysis over recorded rollout pairs: per-joint
//! velocity error versus tree depth, elementwise M⁻¹ error, and trajectory
//! level deviations.

use super::TrajectoryPair;
use crate::kernels::{link_velocities_s, minv_deferred_s};
use crate::model::RobotModel;
use crate::scalar::with_fxp_format;
use crate::{FxpFormat, FxpValue};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    /// Mean ‖δv_i‖ of the quantized forward-pass spatial velocity, per joint.
    pub per_joint_vel_err: Vec<f64>,
    /// Joints from base (1) toward the leaves.
    pub joint_depth: Vec<usize>,
    /// Elementwise mean absolute error of quantized M⁻¹, row-major.
    pub minv_mae: Vec<f64>,
    /// Root-sum-square of the elementwise matrix above.
    pub minv_frobenius: f64,
    pub minv_diag_mae: f64,
    pub minv_offdiag_mae: f64,
    /// Per-step ‖τ_B − τ_A‖ averaged across pairs.
    pub torque_err: Vec<f64>,
    pub ee_max: f64,
    pub ee_rms: f64,
    pub posture_max: f64,
}

/// Evaluate error statistics for `fmt` on the states visited by the pairs.
pub fn analyze_errors(pairs: &[TrajectoryPair], model: &RobotModel, fmt: FxpFormat) -> ErrorStats {
    assert!(!pairs.is_empty(), "analyze_errors needs at least one pair");
    let n = model.n_bodies();

    // Sample visited states, bounded so analysis stays cheap.
    let total_steps: usize = pairs.iter().map(|p| p.reference.q.len()).sum();
    let stride = (total_steps / 400).max(1);
    let mut samples: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for p in pairs {
        for k in (0..p.reference.q.len()).step_by(stride) {
            samples.push((p.reference.q[k].clone(), p.reference.qd[k].clone()));
        }
    }

    let mut vel_err = vec![0.0f64; n];
    let mut minv_mae = vec![0.0f64; n * n];
    let mut minv_ok = 0usize;
    for (q, qd) in &samples {
        let v_real = link_velocities_s::<f64>(model, q, qd);
        let v_q = with_fxp_format(fmt, true, || {
            let qs: Vec<FxpValue> = q.iter().map(|&x| crate::quantize(x, fmt)).collect();
            let qds: Vec<FxpValue> = qd.iter().map(|&x| crate::quantize(x, fmt)).collect();
            link_velocities_s::<FxpValue>(model, &qs, &qds)
        });
        for i in 0..n {
            let mut err_sq = 0.0;
            for k in 0..6 {
                let d = v_real[i].c[k] - v_q[i].c[k].to_real();
                err_sq += d * d;
            }
            vel_err[i] += err_sq.sqrt();
        }

        if let (Ok((mr, _)), Ok((mq, _))) = (
            minv_deferred_s::<f64>(model, q),
            with_fxp_format(fmt, true, || {
                let qs: Vec<FxpValue> = q.iter().map(|&x| crate::quantize(x, fmt)).collect();
                minv_deferred_s::<FxpValue>(model, &qs)
            }),
        ) {
            for k in 0..n * n {
                minv_mae[k] += (mr[k] - mq[k].to_real()).abs();
            }
            minv_ok += 1;
        }
    }
    let count = samples.len().max(1) as f64;
    for v in vel_err.iter_mut() {
        *v /= count;
    }
    if minv_ok > 0 {
        for v in minv_mae.iter_mut() {
            *v /= minv_ok as f64;
        }
    }
    let minv_frobenius = minv_mae.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                diag += minv_mae[i * n + j];
            } else {
                off += minv_mae[i * n + j];
            }
        }
    }
    let minv_diag_mae = diag / n as f64;
    let minv_offdiag_mae = if n > 1 { off / (n * (n - 1)) as f64 } else { 0.0 };

    // Torque-difference series, averaged across pairs at equal step index.
    let steps = pairs.iter().map(|p| p.reference.tau.len()).min().unwrap_or(0);
    let mut torque_err = vec![0.0f64; steps];
    for p in pairs {
        for (k, te) in torque_err.iter_mut().enumerate() {
            let mut s = 0.0;
            for (a, b) in p.reference.tau[k].iter().zip(&p.quantized.tau[k]) {
                s += (a - b) * (a - b);
            }
            *te += s.sqrt();
        }
    }
    for v in torque_err.iter_mut() {
        *v /= pairs.len() as f64;
    }

    let mut ee_max = 0.0f64;
    let mut ee_sq = 0.0;
    let mut ee_count = 0usize;
    let mut posture_max = 0.0f64;
    for p in pairs {
        let m = p.metrics();
        ee_max = ee_max.max(m.ee_max);
        ee_sq += m.ee_rms * m.ee_rms * p.reference.ee.len() as f64;
        ee_count += p.reference.ee.len();
        posture_max = posture_max.max(m.posture_max);
    }

    ErrorStats {
        n,
        per_joint_vel_err: vel_err,
        joint_depth: (0..n).map(|i| model.depth(i)).collect(),
        minv_mae,
        minv_frobenius,
        minv_diag_mae,
        minv_offdiag_mae,
        torque_err,
        ee_max,
        ee_rms: (ee_sq / ee_count.max(1) as f64).sqrt(),
        posture_max,
    }
}

/// Spearman rank correlation. Ties get the average rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                ranks[idx[k]] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ControllerConfig, PidConfig};
    use crate::kernels::Binding;
    use crate::sim::{rollout_pair, SimConfig};

    #[test]
    fn identical_pair_yields_zero_stats() {
        let model = crate::fixtures::pendulum();
        let sim = SimConfig { steps: 120, ..SimConfig::default() };
        let ctrl = ControllerConfig::Pid(PidConfig::default_for(1));
        let pair = rollout_pair(&model, &ctrl, &Binding::real(), &sim, 0).unwrap();
        let fmt: crate::FxpFormat = "Q16.30".parse().unwrap();
        let stats = analyze_errors(&[pair], &model, fmt);
        assert!(stats.ee_max == 0.0);
        assert!(stats.torque_err.iter().all(|&v| v == 0.0));
        // a 30-bit fraction leaves only sub-micro velocity error
        assert!(stats.per_joint_vel_err[0] < 1e-6);
    }

    #[test]
    fn frobenius_matches_elementwise_recomputation() {
        let model = crate::fixtures::iiwa();
        let sim = SimConfig { steps: 60, ..SimConfig::default() };
        let ctrl = ControllerConfig::Pid(PidConfig::default_for(7));
        let fmt: crate::FxpFormat = "Q12.12".parse().unwrap();
        let pair = rollout_pair(&model, &ctrl, &Binding::fxp(fmt), &sim, 0).unwrap();
        let stats = analyze_errors(&[pair], &model, fmt);
        let frob = stats.minv_mae.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((frob - stats.minv_frobenius).abs() <= 1e-12);
        assert!(stats.minv_frobenius > 0.0, "finite n_frac must leave an error");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
    }
}
