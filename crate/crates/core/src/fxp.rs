//! Parameterized fixed-point arithmetic: bit-exact quantization, saturating
//! add/sub/mul, and wide-accumulator dot products modeling DSP MAC chains.

use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FxpError {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(FxpFormat, FxpFormat),
    #[error("accumulator width {given} below required {required} bits")]
    AccumulatorTooNarrow { given: u32, required: u32 },
    #[error("accumulator width {0} exceeds supported maximum of 128 bits")]
    AccumulatorTooWide(u32),
}

/// Signed Q-format: `n_int` integer bits (sign included) plus `n_frac`
/// fractional bits. Spelled `Qi.f`, e.g. `Q12.12` for a 24-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxpFormat {
    pub n_int: u32,
    pub n_frac: u32,
}

impl FxpFormat {
    pub fn new(n_int: u32, n_frac: u32) -> Result<Self, FxpError> {
        if n_int < 1 {
            return Err(FxpError::InvalidFormat(
                "need at least 1 integer bit for the sign".into(),
            ));
        }
        if n_int + n_frac > 64 {
            return Err(FxpError::InvalidFormat(format!(
                "total width {} exceeds 64 bits",
                n_int + n_frac
            )));
        }
        Ok(Self { n_int, n_frac })
    }

    pub fn total_width(&self) -> u32 {
        self.n_int + self.n_frac
    }

    /// Largest representable mantissa, `2^(w-1) - 1`.
    pub fn max_mantissa(&self) -> i64 {
        if self.total_width() == 64 {
            i64::MAX
        } else {
            (1i64 << (self.total_width() - 1)) - 1
        }
    }

    /// Smallest representable mantissa, `-2^(w-1)`.
    pub fn min_mantissa(&self) -> i64 {
        if self.total_width() == 64 {
            i64::MIN
        } else {
            -(1i64 << (self.total_width() - 1))
        }
    }

    /// Quantization half-step `2^(-n_frac-1)`: the worst-case rounding error
    /// for an in-range input.
    pub fn eps(&self) -> f64 {
        (2.0f64).powi(-(self.n_frac as i32) - 1)
    }

    pub fn scale(&self) -> f64 {
        (2.0f64).powi(self.n_frac as i32)
    }

    pub fn max_real(&self) -> f64 {
        self.max_mantissa() as f64 / self.scale()
    }

    pub fn min_real(&self) -> f64 {
        self.min_mantissa() as f64 / self.scale()
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.n_int, self.n_frac)
    }
}

impl FromStr for FxpFormat {
    type Err = FxpError;

    /// Parses the `Qi.f` spelling used by config files and CLI flags.
    fn from_str(s: &str) -> Result<Self, FxpError> {
        let body = s
            .strip_prefix('Q')
            .or_else(|| s.strip_prefix('q'))
            .ok_or_else(|| FxpError::InvalidFormat(format!("expected Qi.f, got {s:?}")))?;
        let (i, f) = body
            .split_once('.')
            .ok_or_else(|| FxpError::InvalidFormat(format!("expected Qi.f, got {s:?}")))?;
        let n_int: u32 = i
            .parse()
            .map_err(|_| FxpError::InvalidFormat(format!("bad integer width in {s:?}")))?;
        let n_frac: u32 = f
            .parse()
            .map_err(|_| FxpError::InvalidFormat(format!("bad fractional width in {s:?}")))?;
        FxpFormat::new(n_int, n_frac)
    }
}

/// A value held in a fixed-point format: signed mantissa plus its format.
/// Real value is `mantissa / 2^n_frac`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxpValue {
    pub mantissa: i64,
    pub fmt: FxpFormat,
}

impl FxpValue {
    pub fn to_real(self) -> f64 {
        self.mantissa as f64 / self.fmt.scale()
    }

    pub fn zero(fmt: FxpFormat) -> Self {
        Self { mantissa: 0, fmt }
    }
}

/// Round-to-nearest with ties away from zero, then arithmetic shift right.
fn round_shift(x: i128, shift: u32) -> i128 {
    if shift == 0 {
        return x;
    }
    let half = 1i128 << (shift - 1);
    if x >= 0 {
        (x + half) >> shift
    } else {
        -((-x + half) >> shift)
    }
}

fn clamp_mantissa(m: i128, fmt: FxpFormat) -> i64 {
    let max = fmt.max_mantissa() as i128;
    let min = fmt.min_mantissa() as i128;
    if m > max {
        stats::note_saturation();
        max as i64
    } else if m < min {
        stats::note_saturation();
        min as i64
    } else {
        m as i64
    }
}

/// Quantize a real value: round-to-nearest (ties away from zero) at
/// `2^n_frac` resolution, then saturate to the representable range.
/// Saturation is recorded in the ambient [`FxpStats`] scope, not an error.
pub fn quantize(x: f64, fmt: FxpFormat) -> FxpValue {
    if x.is_nan() {
        stats::note_saturation();
        return FxpValue::zero(fmt);
    }
    let scaled = x * fmt.scale();
    let m = if scaled >= fmt.max_mantissa() as f64 {
        stats::note_saturation();
        fmt.max_mantissa()
    } else if scaled <= fmt.min_mantissa() as f64 {
        stats::note_saturation();
        fmt.min_mantissa()
    } else {
        // f64::round ties away from zero, matching the hardware rounding mode.
        scaled.round() as i64
    };
    FxpValue { mantissa: m, fmt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxpOp {
    Add,
    Sub,
    Mul,
}

/// Checked arithmetic between two values of one shared format.
///
/// Add/sub saturate without rounding; mul computes the exact double-width
/// product and applies a single round-to-nearest shift before saturating.
pub fn fxp_arith(a: FxpValue, b: FxpValue, op: FxpOp) -> Result<FxpValue, FxpError> {
    if a.fmt != b.fmt {
        return Err(FxpError::FormatMismatch(a.fmt, b.fmt));
    }
    Ok(match op {
        FxpOp::Add => raw_add(a, b),
        FxpOp::Sub => raw_sub(a, b),
        FxpOp::Mul => raw_mul(a, b),
    })
}

pub(crate) fn raw_add(a: FxpValue, b: FxpValue) -> FxpValue {
    debug_assert_eq!(a.fmt, b.fmt);
    let m = a.mantissa as i128 + b.mantissa as i128;
    FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
}

pub(crate) fn raw_sub(a: FxpValue, b: FxpValue) -> FxpValue {
    debug_assert_eq!(a.fmt, b.fmt);
    let m = a.mantissa as i128 - b.mantissa as i128;
    FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
}

pub(crate) fn raw_mul(a: FxpValue, b: FxpValue) -> FxpValue {
    debug_assert_eq!(a.fmt, b.fmt);
    let prod = a.mantissa as i128 * b.mantissa as i128;
    let m = round_shift(prod, a.fmt.n_frac);
    FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
}

pub(crate) fn raw_neg(a: FxpValue) -> FxpValue {
    let m = -(a.mantissa as i128);
    FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
}

/// Exact power-of-two rescale: left shifts saturate, right shifts round to
/// nearest. Models a barrel shift, which costs no DSP resources.
pub(crate) fn raw_scale_pow2(a: FxpValue, e: i32) -> FxpValue {
    if e >= 0 {
        let m = (a.mantissa as i128) << e.min(100);
        FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
    } else {
        let m = round_shift(a.mantissa as i128, (-e) as u32);
        FxpValue { mantissa: clamp_mantissa(m, a.fmt), fmt: a.fmt }
    }
}

/// Accumulator width needed to hold `n` exact double-width products.
pub fn dot_required_width(fmt: FxpFormat, n_pairs: usize) -> u32 {
    let guard = (usize::BITS - n_pairs.max(1).leading_zeros()) as u32;
    2 * fmt.total_width() + guard
}

/// Dot product in a wide accumulator: every product is exact, the sum is
/// exact, and a single round+saturate produces the result. Deterministic and
/// order-independent.
pub fn fxp_dot(acc_width: u32, pairs: &[(FxpValue, FxpValue)]) -> Result<FxpValue, FxpError> {
    let Some(first) = pairs.first() else {
        return Err(FxpError::InvalidFormat("empty dot product has no format".into()));
    };
    let fmt = first.0.fmt;
    for (a, b) in pairs {
        if a.fmt != fmt {
            return Err(FxpError::FormatMismatch(a.fmt, fmt));
        }
        if b.fmt != fmt {
            return Err(FxpError::FormatMismatch(b.fmt, fmt));
        }
    }
    let required = dot_required_width(fmt, pairs.len());
    if acc_width < required {
        return Err(FxpError::AccumulatorTooNarrow { given: acc_width, required });
    }
    if acc_width > 128 {
        return Err(FxpError::AccumulatorTooWide(acc_width));
    }
    Ok(raw_dot(fmt, pairs.iter().copied()))
}

pub(crate) fn raw_dot(fmt: FxpFormat, pairs: impl Iterator<Item = (FxpValue, FxpValue)>) -> FxpValue {
    let mut acc: i128 = 0;
    for (a, b) in pairs {
        debug_assert_eq!(a.fmt, fmt);
        debug_assert_eq!(b.fmt, fmt);
        acc += a.mantissa as i128 * b.mantissa as i128;
    }
    let m = round_shift(acc, fmt.n_frac);
    FxpValue { mantissa: clamp_mantissa(m, fmt), fmt }
}

/// Per-run accounting of saturation events and observed magnitudes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FxpStats {
    pub saturation_events: u64,
    /// Max |value| seen per tracked variable name.
    pub max_abs: BTreeMap<String, f64>,
}

impl FxpStats {
    /// Explicit merge; each run accumulates privately and combines here.
    pub fn merge(&mut self, other: &FxpStats) {
        self.saturation_events += other.saturation_events;
        for (k, v) in &other.max_abs {
            let e = self.max_abs.entry(k.clone()).or_insert(0.0);
            if *v > *e {
                *e = *v;
            }
        }
    }
}

pub mod stats {
    //! Thread-local stats scope. Recording is dropped when no scope is open.
    use super::FxpStats;
    use std::cell::RefCell;

    thread_local! {
        static ACTIVE: RefCell<Option<FxpStats>> = const { RefCell::new(None) };
    }

    /// Run `f` while collecting saturation/magnitude stats on this thread.
    pub fn collect<T>(f: impl FnOnce() -> T) -> (T, FxpStats) {
        ACTIVE.with(|a| *a.borrow_mut() = Some(FxpStats::default()));
        let out = f();
        let stats = ACTIVE.with(|a| a.borrow_mut().take().unwrap_or_default());
        (out, stats)
    }

    pub(crate) fn note_saturation() {
        ACTIVE.with(|a| {
            if let Some(s) = a.borrow_mut().as_mut() {
                s.saturation_events += 1;
            }
        });
    }

    pub(crate) fn note_value(name: &str, v: f64) {
        ACTIVE.with(|a| {
            if let Some(s) = a.borrow_mut().as_mut() {
                let e = s.max_abs.entry(name.to_string()).or_insert(0.0);
                if v.abs() > *e {
                    *e = v.abs();
                }
            }
        });
    }
}

// Keep a module-level handle so the scalar binding can tag values.
pub(crate) use stats::note_value;

thread_local! {
    /// Coarse variable label applied to values tagged by kernels.
    pub(crate) static CURRENT_TAG: RefCell<&'static str> = const { RefCell::new("") };
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(i: u32, f: u32) -> FxpFormat {
        FxpFormat::new(i, f).unwrap()
    }

    #[test]
    fn quantize_examples() {
        // round(0.3 * 256) = 77
        let v = quantize(0.3, q(4, 8));
        assert_eq!(v.mantissa, 77);
        assert!((v.to_real() - 0.30078125).abs() < 1e-15);
        assert!((v.to_real() - 0.3).abs() <= (2.0f64).powi(-9));

        // 1.0 exactly representable
        let v = quantize(1.0, q(4, 12));
        assert_eq!(v.mantissa, 4096);
        assert_eq!(v.to_real(), 1.0);
    }

    #[test]
    fn quantize_saturates_and_counts() {
        let fmt = q(12, 12);
        let ((), s) = stats::collect(|| {
            let v = quantize(1e6, fmt);
            assert_eq!(v.mantissa, fmt.max_mantissa());
            assert!(v.to_real() < 2048.0);
            let v = quantize(-1e6, fmt);
            assert_eq!(v.mantissa, fmt.min_mantissa());
        });
        assert_eq!(s.saturation_events, 2);
    }

    #[test]
    fn arith_examples() {
        let fmt = q(4, 8);
        let zero = FxpValue::zero(fmt);
        let b = quantize(1.25, fmt);
        assert_eq!(fxp_arith(zero, b, FxpOp::Add).unwrap(), b);

        let half = quantize(0.5, fmt);
        let v = fxp_arith(half, half, FxpOp::Mul).unwrap();
        assert_eq!(v.mantissa, 64);
        assert_eq!(v.to_real(), 0.25);
    }

    #[test]
    fn arith_format_mismatch() {
        let a = quantize(1.0, q(4, 8));
        let b = quantize(1.0, q(4, 12));
        assert!(matches!(
            fxp_arith(a, b, FxpOp::Add),
            Err(FxpError::FormatMismatch(_, _))
        ));
    }

    #[test]
    fn mul_error_bound_brute_force() {
        // |to_real(mul) - a*b| <= 2^-13 at n_frac=12 when the product is in
        // range, checked against exact i128 rational arithmetic.
        let fmt = q(12, 12);
        let mut rng = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            rng
        };
        for _ in 0..100_000 {
            let a = FxpValue { mantissa: (next() % 80000) as i64 - 40000, fmt };
            let b = FxpValue { mantissa: (next() % 80000) as i64 - 40000, fmt };
            let exact = a.to_real() * b.to_real();
            if exact.abs() >= fmt.max_real() {
                continue;
            }
            let got = raw_mul(a, b).to_real();
            assert!(
                (got - exact).abs() <= (2.0f64).powi(-13) + 1e-15,
                "a={a:?} b={b:?} got={got} exact={exact}"
            );
            // cross-check against exact integer rounding
            let prod = a.mantissa as i128 * b.mantissa as i128;
            let expect = super::round_shift(prod, 12);
            assert_eq!(got, expect as f64 / fmt.scale());
        }
    }

    #[test]
    fn dot_empty_and_single() {
        let fmt = q(12, 12);
        assert!(fxp_dot(64, &[]).is_err());
        let a = quantize(1.5, fmt);
        let b = quantize(-2.25, fmt);
        let d = fxp_dot(64, &[(a, b)]).unwrap();
        assert_eq!(d, raw_mul(a, b));
    }

    #[test]
    fn dot_accumulator_width_check() {
        let fmt = q(12, 12);
        let a = quantize(1.0, fmt);
        let pairs: Vec<_> = (0..36).map(|_| (a, a)).collect();
        let required = dot_required_width(fmt, 36);
        assert_eq!(required, 48 + 6);
        assert!(matches!(
            fxp_dot(required - 1, &pairs),
            Err(FxpError::AccumulatorTooNarrow { .. })
        ));
        assert!(fxp_dot(required, &pairs).is_ok());
    }

    #[test]
    fn wide_dot_beats_per_term_rounding() {
        // A 36-term dot with one final rounding should be at least as close
        // to the exact value as per-term rounded accumulation on >=99% of
        // random trials.
        let fmt = q(12, 12);
        let mut rng = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            rng
        };
        let mut wide_wins_or_ties = 0usize;
        let trials = 10_000usize;
        for _ in 0..trials {
            let pairs: Vec<(FxpValue, FxpValue)> = (0..36)
                .map(|_| {
                    let a = FxpValue { mantissa: (next() % 16000) as i64 - 8000, fmt };
                    let b = FxpValue { mantissa: (next() % 16000) as i64 - 8000, fmt };
                    (a, b)
                })
                .collect();
            let exact: f64 = pairs.iter().map(|(a, b)| a.to_real() * b.to_real()).sum();
            let wide = raw_dot(fmt, pairs.iter().copied()).to_real();
            let mut acc = FxpValue::zero(fmt);
            for (a, b) in &pairs {
                acc = raw_add(acc, raw_mul(*a, *b));
            }
            let per_term = acc.to_real();
            if (wide - exact).abs() <= (per_term - exact).abs() {
                wide_wins_or_ties += 1;
            }
        }
        assert!(
            wide_wins_or_ties as f64 >= 0.99 * trials as f64,
            "wide accumulator closer on only {wide_wins_or_ties}/{trials}"
        );
    }

    #[test]
    fn format_string_round_trip() {
        let fmt: FxpFormat = "Q12.12".parse().unwrap();
        assert_eq!(fmt, q(12, 12));
        assert_eq!(fmt.to_string(), "Q12.12");
        assert!("Q0.8".parse::<FxpFormat>().is_err());
        assert!("12.12".parse::<FxpFormat>().is_err());
        assert!("Q40.40".parse::<FxpFormat>().is_err());
    }

    proptest! {
        // Eq. over a million samples lives in the acceptance suite; here a
        // lighter property: quantization error within the half-step bound and
        // idempotence.
        #[test]
        fn quantize_bound_and_idempotent(x in -2000.0f64..2000.0, nf in 4u32..20) {
            let fmt = q(12, nf);
            let v = quantize(x, fmt);
            prop_assert!((v.to_real() - x).abs() <= fmt.eps() * (1.0 + 1e-12));
            let v2 = quantize(v.to_real(), fmt);
            prop_assert_eq!(v, v2);
        }

        #[test]
        fn add_mul_commute(a in -1000i64..1000, b in -1000i64..1000) {
            let fmt = q(12, 12);
            let x = FxpValue { mantissa: a * 7, fmt };
            let y = FxpValue { mantissa: b * 11, fmt };
            prop_assert_eq!(raw_add(x, y), raw_add(y, x));
            prop_assert_eq!(raw_mul(x, y), raw_mul(y, x));
        }

        #[test]
        fn widening_preserves_unsaturated(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            // widening n_int with n_frac fixed never changes a non-saturated mul
            let narrow = q(10, 12);
            let wide = q(14, 12);
            let (an, bn) = (quantize(a, narrow), quantize(b, narrow));
            let (aw, bw) = (quantize(a, wide), quantize(b, wide));
            prop_assert_eq!(an.mantissa, aw.mantissa);
            let rn = raw_mul(an, bn);
            let rw = raw_mul(aw, bw);
            if rn.mantissa != narrow.max_mantissa() && rn.mantissa != narrow.min_mantissa() {
                prop_assert_eq!(rn.mantissa, rw.mantissa);
            }
        }
    }
}
