//! Magnitude-tracking binding for range analysis.
//!
//! Wraps `f64` and records the absolute value of every operation result,
//! globally and per kernel-tagged channel. The observed maxima drive the
//! integer bit-width requirement.

use super::Scalar;
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track(pub f64);

/// Per-run record of observed magnitudes.
#[derive(Debug, Clone, Default)]
pub struct RangeRecord {
    /// Max |value| over every operation result in the run.
    pub global_max: f64,
    /// Max |value| per named track point.
    pub named_max: BTreeMap<&'static str, f64>,
    /// Name of a variable that produced a non-finite value, if any.
    pub non_finite: Option<&'static str>,
}

thread_local! {
    static RECORD: RefCell<Option<RangeRecord>> = const { RefCell::new(None) };
}

pub fn collect_ranges<T>(f: impl FnOnce() -> T) -> (T, RangeRecord) {
    RECORD.with(|r| *r.borrow_mut() = Some(RangeRecord::default()));
    let out = f();
    let rec = RECORD.with(|r| r.borrow_mut().take().unwrap_or_default());
    (out, rec)
}

fn note(v: f64) -> f64 {
    RECORD.with(|r| {
        if let Some(rec) = r.borrow_mut().as_mut() {
            if v.is_finite() {
                if v.abs() > rec.global_max {
                    rec.global_max = v.abs();
                }
            } else if rec.non_finite.is_none() {
                rec.non_finite = Some("(unnamed)");
            }
        }
    });
    v
}

impl Add for Track {
    type Output = Track;
    fn add(self, rhs: Track) -> Track {
        Track(note(self.0 + rhs.0))
    }
}

impl Sub for Track {
    type Output = Track;
    fn sub(self, rhs: Track) -> Track {
        Track(note(self.0 - rhs.0))
    }
}

impl Mul for Track {
    type Output = Track;
    fn mul(self, rhs: Track) -> Track {
        Track(note(self.0 * rhs.0))
    }
}

impl Neg for Track {
    type Output = Track;
    fn neg(self) -> Track {
        Track(-self.0)
    }
}

impl Scalar for Track {
    fn from_f64(x: f64) -> Self {
        Track(note(x))
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn zero() -> Self {
        Track(0.0)
    }
    fn one() -> Self {
        Track(1.0)
    }
    fn recip(self) -> Self {
        Track(note(1.0 / self.0))
    }
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.0.sin_cos();
        (Track(s), Track(c))
    }
    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self {
        let mut acc = 0.0f64;
        for (a, b) in pairs {
            acc = note(a.0 * b.0) + acc;
        }
        Track(note(acc))
    }
    fn scale_pow2(self, e: i32) -> Self {
        Track(note(self.0 * (2.0f64).powi(e)))
    }
    fn floor_log2_abs(self) -> Option<i32> {
        super::f64_floor_log2_abs(self.0)
    }
    fn is_strictly_positive(self) -> bool {
        self.0 > 0.0
    }

    fn track(name: &'static str, v: Self) {
        RECORD.with(|r| {
            if let Some(rec) = r.borrow_mut().as_mut() {
                if v.0.is_finite() {
                    let e = rec.named_max.entry(name).or_insert(0.0);
                    if v.0.abs() > *e {
                        *e = v.0.abs();
                    }
                } else {
                    rec.non_finite = Some(name);
                }
            }
        });
    }
}
