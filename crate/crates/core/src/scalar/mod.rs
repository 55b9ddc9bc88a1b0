//! Scalar abstraction the dynamics kernels are written against.
//!
//! One kernel source runs under several bindings:
//! - `f64`: double-precision reference,
//! - [`FxpValue`]: the fixed-point device model,
//! - [`Dual`]: forward-mode derivatives over any base scalar,
//! - [`Sym`]: structural operation counting for the hardware model,
//! - [`Track`]: magnitude recording for integer-width range analysis.

use crate::fxp::{self, FxpFormat, FxpValue};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

mod dual;
mod sym;
mod track;

pub use dual::Dual;
pub use sym::{collect_counts, OpCounts, Sym};
pub use track::{collect_ranges, RangeRecord, Track};

/// Kernel modules the accelerator instantiates as pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelModule {
    Rnea,
    DeltaRnea,
    Minv,
}

/// Traversal direction of a pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PassDir {
    Forward,
    Backward,
}

/// Identity of one per-joint pipeline unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub module: KernelModule,
    pub pass: PassDir,
    pub joint: u16,
}

impl UnitId {
    pub fn new(module: KernelModule, pass: PassDir, joint: usize) -> Self {
        Self { module, pass, joint: joint as u16 }
    }
}

pub trait Scalar:
    Copy
    + Clone
    + PartialEq
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    /// Ingest a host constant or input. Quantizing bindings round here.
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;

    /// Reciprocal. This is the one operation the divider performs; counting
    /// bindings record it separately from multiplies.
    fn recip(self) -> Self;

    fn sin_cos(self) -> (Self, Self);

    /// MAC chain: products accumulated wide where the binding supports it,
    /// with a single rounding at the end.
    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self;

    /// Runtime-length MAC chain with the same accumulator semantics.
    fn dot_dyn(pairs: &[(Self, Self)]) -> Self {
        let mut acc = Self::zero();
        for &(a, b) in pairs {
            acc = acc + a * b;
        }
        acc
    }

    /// Multiply by 2^e. Exact in every binding; models a barrel shift.
    fn scale_pow2(self, e: i32) -> Self;

    /// floor(log2 |x|), `None` for zero.
    fn floor_log2_abs(self) -> Option<i32>;

    fn is_strictly_positive(self) -> bool;

    /// Instrumentation hook: the per-joint unit the next operations belong
    /// to. No-op except under counting bindings.
    fn enter_unit(_unit: Option<UnitId>) {}

    /// Instrumentation hook: label recorded values for range analysis.
    fn track(_name: &'static str, _v: Self) {}
}

fn f64_floor_log2_abs(x: f64) -> Option<i32> {
    if x == 0.0 || !x.is_finite() {
        return None;
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        // subnormal
        return Some(x.abs().log2().floor() as i32);
    }
    Some(exp - 1023)
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self {
        let mut acc = 0.0f64;
        for (a, b) in pairs {
            acc = a.mul_add(b, acc);
        }
        acc
    }
    fn dot_dyn(pairs: &[(Self, Self)]) -> Self {
        let mut acc = 0.0f64;
        for &(a, b) in pairs {
            acc = a.mul_add(b, acc);
        }
        acc
    }
    fn scale_pow2(self, e: i32) -> Self {
        self * (2.0f64).powi(e)
    }
    fn floor_log2_abs(self) -> Option<i32> {
        f64_floor_log2_abs(self)
    }
    fn is_strictly_positive(self) -> bool {
        self > 0.0
    }
}

thread_local! {
    static FXP_FMT: Cell<Option<FxpFormat>> = const { Cell::new(None) };
    static FXP_WIDE_DOT: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` with an ambient fixed-point format (and accumulator mode) so the
/// `FxpValue` binding can ingest constants. Scoped per thread.
pub fn with_fxp_format<T>(fmt: FxpFormat, wide_dot: bool, f: impl FnOnce() -> T) -> T {
    let prev_fmt = FXP_FMT.with(|c| c.replace(Some(fmt)));
    let prev_wide = FXP_WIDE_DOT.with(|c| c.replace(wide_dot));
    let out = f();
    FXP_FMT.with(|c| c.set(prev_fmt));
    FXP_WIDE_DOT.with(|c| c.set(prev_wide));
    out
}

fn ambient_fmt() -> FxpFormat {
    FXP_FMT
        .with(|c| c.get())
        .expect("fixed-point kernels must run inside with_fxp_format")
}

impl Add for FxpValue {
    type Output = FxpValue;
    fn add(self, rhs: FxpValue) -> FxpValue {
        fxp::raw_add(self, rhs)
    }
}

impl Sub for FxpValue {
    type Output = FxpValue;
    fn sub(self, rhs: FxpValue) -> FxpValue {
        fxp::raw_sub(self, rhs)
    }
}

impl Mul for FxpValue {
    type Output = FxpValue;
    fn mul(self, rhs: FxpValue) -> FxpValue {
        fxp::raw_mul(self, rhs)
    }
}

impl Neg for FxpValue {
    type Output = FxpValue;
    fn neg(self) -> FxpValue {
        fxp::raw_neg(self)
    }
}

impl Scalar for FxpValue {
    fn from_f64(x: f64) -> Self {
        fxp::quantize(x, ambient_fmt())
    }
    fn to_f64(self) -> f64 {
        self.to_real()
    }
    fn zero() -> Self {
        FxpValue::zero(ambient_fmt())
    }
    fn one() -> Self {
        fxp::quantize(1.0, ambient_fmt())
    }

    /// The divider model: operands leave the fixed-point domain, divide in
    /// floating point, and the result is re-quantized.
    fn recip(self) -> Self {
        fxp::quantize(1.0 / self.to_real(), self.fmt)
    }

    /// Computed outside the DSP array (LUT/CORDIC); results re-enter
    /// quantized.
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.to_real().sin_cos();
        (fxp::quantize(s, self.fmt), fxp::quantize(c, self.fmt))
    }

    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self {
        if N == 0 {
            return <Self as Scalar>::zero();
        }
        let fmt = pairs[0].0.fmt;
        if FXP_WIDE_DOT.with(|c| c.get()) {
            fxp::raw_dot(fmt, pairs.into_iter())
        } else {
            let mut acc = FxpValue::zero(fmt);
            for (a, b) in pairs {
                acc = fxp::raw_add(acc, fxp::raw_mul(a, b));
            }
            acc
        }
    }

    fn dot_dyn(pairs: &[(Self, Self)]) -> Self {
        let Some(first) = pairs.first() else {
            return <Self as Scalar>::zero();
        };
        let fmt = first.0.fmt;
        if FXP_WIDE_DOT.with(|c| c.get()) {
            fxp::raw_dot(fmt, pairs.iter().copied())
        } else {
            let mut acc = FxpValue::zero(fmt);
            for &(a, b) in pairs {
                acc = fxp::raw_add(acc, fxp::raw_mul(a, b));
            }
            acc
        }
    }

    fn scale_pow2(self, e: i32) -> Self {
        fxp::raw_scale_pow2(self, e)
    }

    fn floor_log2_abs(self) -> Option<i32> {
        if self.mantissa == 0 {
            return None;
        }
        let top = 63 - self.mantissa.unsigned_abs().leading_zeros() as i32;
        Some(top - self.fmt.n_frac as i32)
    }

    fn is_strictly_positive(self) -> bool {
        self.mantissa > 0
    }

    fn track(name: &'static str, v: Self) {
        fxp::note_value(name, v.to_real());
    }
}


#[cfg(test)]
impl FxpValue {
    fn zero_ambient() -> Self {
        <FxpValue as Scalar>::zero()
    }
}
