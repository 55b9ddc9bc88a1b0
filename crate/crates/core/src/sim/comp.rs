//! Fixed-pattern compensation of quantized M⁻¹: the dominant error is
//! structural (constant-parameter quantization feeding the reciprocals), so
//! a per-robot offset fitted over sampled configurations removes most of it.

use super::SimError;
use crate::kernels::minv_deferred_s;
use crate::model::RobotModel;
use crate::scalar::with_fxp_format;
use crate::{FxpFormat, FxpValue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Offset matrix added to the quantized M⁻¹, plus fit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationParams {
    pub n: usize,
    /// Row-major offset; symmetric, diagonal-only by default.
    pub offset: Vec<f64>,
    pub diagonal_only: bool,
    pub samples: usize,
    /// Mean Frobenius error on the fit set before/after applying the offset.
    pub frob_before: f64,
    pub frob_after: f64,
}

fn minv_pair(model: &RobotModel, fmt: FxpFormat, q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let real = minv_deferred_s::<f64>(model, q).ok()?.0;
    let quant = with_fxp_format(fmt, true, || {
        let qs: Vec<FxpValue> = q.iter().map(|&x| crate::quantize(x, fmt)).collect();
        minv_deferred_s::<FxpValue>(model, &qs)
    })
    .ok()?
    .0
    .iter()
    .map(|v| v.to_real())
    .collect();
    Some((real, quant))
}

fn frob(err: &[f64]) -> f64 {
    err.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fit the offset as the empirical mean of (real − quantized) M⁻¹ over
/// sampled configurations, restricted to the diagonal unless asked otherwise.
pub fn fit_compensation(
    model: &RobotModel,
    fmt: FxpFormat,
    sample_count: usize,
    seed: u64,
    diagonal_only: bool,
) -> Result<CompensationParams, SimError> {
    if sample_count < 100 {
        return Err(SimError::InsufficientSamples { need: 100, got: sample_count });
    }
    let n = model.n_bodies();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = vec![0.0f64; n * n];
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(sample_count);
    let mut used = 0usize;
    while used < sample_count {
        let (q, _) = model.sample_state(&mut rng);
        let Some((real, quant)) = minv_pair(model, fmt, &q) else {
            continue;
        };
        let diff: Vec<f64> = (0..n * n).map(|k| real[k] - quant[k]).collect();
        for k in 0..n * n {
            offset[k] += diff[k];
        }
        diffs.push(diff);
        used += 1;
    }
    for v in offset.iter_mut() {
        *v /= used as f64;
    }
    // symmetrize, then restrict
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (offset[i * n + j] + offset[j * n + i]);
            offset[i * n + j] = s;
            offset[j * n + i] = s;
        }
    }
    if diagonal_only {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    offset[i * n + j] = 0.0;
                }
            }
        }
    }

    let mut before = 0.0;
    let mut after = 0.0;
    for diff in &diffs {
        before += frob(diff);
        let resid: Vec<f64> = (0..n * n).map(|k| diff[k] - offset[k]).collect();
        after += frob(&resid);
    }
    before /= used as f64;
    after /= used as f64;

    Ok(CompensationParams {
        n,
        offset,
        diagonal_only,
        samples: used,
        frob_before: before,
        frob_after: after,
    })
}

/// Held-out evaluation: mean Frobenius error of (compensated) quantized M⁻¹
/// plus diagonal / off-diagonal mean absolute errors.
pub fn evaluate_compensation(
    model: &RobotModel,
    fmt: FxpFormat,
    comp: Option<&CompensationParams>,
    sample_count: usize,
    seed: u64,
) -> (f64, f64, f64) {
    let n = model.n_bodies();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frob_sum = 0.0;
    let mut diag = 0.0;
    let mut off = 0.0;
    let mut used = 0usize;
    while used < sample_count {
        let (q, _) = model.sample_state(&mut rng);
        let Some((real, mut quant)) = minv_pair(model, fmt, &q) else {
            continue;
        };
        if let Some(c) = comp {
            for k in 0..n * n {
                quant[k] += c.offset[k];
            }
        }
        let err: Vec<f64> = (0..n * n).map(|k| real[k] - quant[k]).collect();
        frob_sum += frob(&err);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    diag += err[i * n + j].abs();
                } else {
                    off += err[i * n + j].abs();
                }
            }
        }
        used += 1;
    }
    let used_f = used.max(1) as f64;
    (
        frob_sum / used_f,
        diag / (used_f * n as f64),
        if n > 1 { off / (used_f * (n * (n - 1)) as f64) } else { 0.0 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn insufficient_samples_rejected() {
        let model = fixtures::pendulum();
        let fmt: FxpFormat = "Q12.12".parse().unwrap();
        assert!(matches!(
            fit_compensation(&model, fmt, 50, 0, true),
            Err(SimError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn wide_format_fits_negligible_offset() {
        let model = fixtures::pendulum();
        let fmt: FxpFormat = "Q16.40".parse().unwrap();
        let comp = fit_compensation(&model, fmt, 100, 1, true).unwrap();
        assert!(comp.offset.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn compensation_reduces_holdout_error_on_iiwa() {
        let model = fixtures::iiwa();
        let fmt: FxpFormat = "Q12.12".parse().unwrap();
        let comp = fit_compensation(&model, fmt, 150, 7, true).unwrap();
        assert!(comp.frob_after < comp.frob_before);
        let (before, _, _) = evaluate_compensation(&model, fmt, None, 60, 99);
        let (after, _, _) = evaluate_compensation(&model, fmt, Some(&comp), 60, 99);
        assert!(
            after < before,
            "held-out error did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn offset_is_symmetric_even_in_full_mode() {
        let model = fixtures::iiwa();
        let fmt: FxpFormat = "Q12.12".parse().unwrap();
        let comp = fit_compensation(&model, fmt, 100, 3, false).unwrap();
        let n = comp.n;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(comp.offset[i * n + j], comp.offset[j * n + i]);
            }
        }
    }
}
