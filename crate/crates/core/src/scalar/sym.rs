//! Structural operation counting.
//!
//! `Sym` classifies every value as zero, ±1, or generic. Multiplications
//! survive only when both operands are generic, so one-hot motion subspaces,
//! identity rotation blocks, and structurally zero matrix entries cost
//! nothing — the counts model what a topology-specialized datapath would
//! actually instantiate.

use super::{KernelModule, Scalar, UnitId};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sym {
    Zero,
    One,
    NegOne,
    Val,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub mul: u64,
    pub div: u64,
}

impl OpCounts {
    pub fn merge(&mut self, o: OpCounts) {
        self.mul += o.mul;
        self.div += o.div;
    }
}

struct Registry {
    current: Option<UnitId>,
    module_override: Option<KernelModule>,
    counts: BTreeMap<UnitId, OpCounts>,
}

thread_local! {
    static REGISTRY: RefCell<Option<Registry>> = const { RefCell::new(None) };
}

/// Collect per-unit operation counts produced by a `Sym` kernel run.
/// `module_override` relabels units (the derivative pipeline re-runs the
/// base kernels under dual numbers but occupies its own hardware module).
pub fn collect_counts<T>(
    module_override: Option<KernelModule>,
    f: impl FnOnce() -> T,
) -> (T, BTreeMap<UnitId, OpCounts>) {
    REGISTRY.with(|r| {
        *r.borrow_mut() = Some(Registry {
            current: None,
            module_override,
            counts: BTreeMap::new(),
        })
    });
    let out = f();
    let counts = REGISTRY.with(|r| {
        r.borrow_mut()
            .take()
            .map(|reg| reg.counts)
            .unwrap_or_default()
    });
    (out, counts)
}

fn note(mul: u64, div: u64) {
    REGISTRY.with(|r| {
        if let Some(reg) = r.borrow_mut().as_mut() {
            if let Some(unit) = reg.current {
                let c = reg.counts.entry(unit).or_default();
                c.mul += mul;
                c.div += div;
            }
        }
    });
}

impl Add for Sym {
    type Output = Sym;
    fn add(self, rhs: Sym) -> Sym {
        match (self, rhs) {
            (Sym::Zero, x) => x,
            (x, Sym::Zero) => x,
            _ => Sym::Val,
        }
    }
}

impl Sub for Sym {
    type Output = Sym;
    fn sub(self, rhs: Sym) -> Sym {
        match (self, rhs) {
            (x, Sym::Zero) => x,
            (Sym::Zero, x) => -x,
            _ => Sym::Val,
        }
    }
}

impl Neg for Sym {
    type Output = Sym;
    fn neg(self) -> Sym {
        match self {
            Sym::Zero => Sym::Zero,
            Sym::One => Sym::NegOne,
            Sym::NegOne => Sym::One,
            Sym::Val => Sym::Val,
        }
    }
}

impl Mul for Sym {
    type Output = Sym;
    fn mul(self, rhs: Sym) -> Sym {
        match (self, rhs) {
            (Sym::Zero, _) | (_, Sym::Zero) => Sym::Zero,
            (Sym::One, x) | (x, Sym::One) => x,
            (Sym::NegOne, x) | (x, Sym::NegOne) => -x,
            (Sym::Val, Sym::Val) => {
                note(1, 0);
                Sym::Val
            }
        }
    }
}

impl Scalar for Sym {
    fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Sym::Zero
        } else if x == 1.0 {
            Sym::One
        } else if x == -1.0 {
            Sym::NegOne
        } else {
            Sym::Val
        }
    }

    /// Representative magnitude only; counting runs carry no numerics.
    fn to_f64(self) -> f64 {
        match self {
            Sym::Zero => 0.0,
            Sym::One => 1.0,
            Sym::NegOne => -1.0,
            Sym::Val => f64::NAN,
        }
    }

    fn zero() -> Self {
        Sym::Zero
    }
    fn one() -> Self {
        Sym::One
    }

    fn recip(self) -> Self {
        match self {
            Sym::Zero => panic!("structural reciprocal of zero"),
            Sym::One => Sym::One,
            Sym::NegOne => Sym::NegOne,
            Sym::Val => {
                note(0, 1);
                Sym::Val
            }
        }
    }

    fn sin_cos(self) -> (Self, Self) {
        match self {
            Sym::Zero => (Sym::Zero, Sym::One),
            _ => (Sym::Val, Sym::Val),
        }
    }

    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self {
        let mut acc = Sym::Zero;
        for (a, b) in pairs {
            acc = acc + a * b;
        }
        acc
    }

    fn scale_pow2(self, _e: i32) -> Self {
        self
    }

    fn floor_log2_abs(self) -> Option<i32> {
        match self {
            Sym::Zero => None,
            _ => Some(0),
        }
    }

    /// Counting runs assume well-posed inertia, so pivot checks pass.
    fn is_strictly_positive(self) -> bool {
        !matches!(self, Sym::Zero)
    }

    fn enter_unit(unit: Option<UnitId>) {
        REGISTRY.with(|r| {
            if let Some(reg) = r.borrow_mut().as_mut() {
                reg.current = unit.map(|mut u| {
                    if let Some(m) = reg.module_override {
                        u.module = m;
                    }
                    u
                });
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::PassDir;

    #[test]
    fn structural_zeros_cost_nothing() {
        let unit = UnitId::new(KernelModule::Rnea, PassDir::Forward, 0);
        let ((), counts) = collect_counts(None, || {
            Sym::enter_unit(Some(unit));
            let v = Sym::from_f64(0.37);
            let _ = v * Sym::Zero; // free
            let _ = v * Sym::One; // free
            let _ = v * v; // 1 mul
            let _ = Sym::dot([(v, v), (Sym::Zero, v), (Sym::One, v)]); // 1 mul
            let _ = v.recip(); // 1 div
            Sym::enter_unit(None);
            let _ = v * v; // unattributed, dropped
        });
        let c = counts[&unit];
        assert_eq!(c.mul, 2);
        assert_eq!(c.div, 1);
    }

    #[test]
    fn module_override_relabels() {
        let unit = UnitId::new(KernelModule::Rnea, PassDir::Backward, 3);
        let ((), counts) = collect_counts(Some(KernelModule::DeltaRnea), || {
            Sym::enter_unit(Some(unit));
            let v = Sym::Val;
            let _ = v * v;
        });
        let key = UnitId::new(KernelModule::DeltaRnea, PassDir::Backward, 3);
        assert_eq!(counts[&key].mul, 1);
        assert!(!counts.contains_key(&unit));
    }
}
