//! Forward-mode dual numbers over any kernel scalar.
//!
//! Seeding one input's tangent with 1 and running a kernel yields the exact
//! directional derivative in the same arithmetic the kernel uses, so the
//! quantized binding produces derivatives with device-model rounding.

use super::{KernelModule, Scalar, UnitId};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub dx: S,
}

impl<S: Scalar> Dual<S> {
    pub fn constant(re: S) -> Self {
        Self { re, dx: S::zero() }
    }

    pub fn seeded(re: S) -> Self {
        Self { re, dx: S::one() }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self { re: self.re + rhs.re, dx: self.dx + rhs.dx }
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self { re: self.re - rhs.re, dx: self.dx - rhs.dx }
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re * rhs.re,
            dx: S::dot([(self.re, rhs.dx), (self.dx, rhs.re)]),
        }
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { re: -self.re, dx: -self.dx }
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(x: f64) -> Self {
        Self::constant(S::from_f64(x))
    }
    fn to_f64(self) -> f64 {
        self.re.to_f64()
    }
    fn zero() -> Self {
        Self::constant(S::zero())
    }
    fn one() -> Self {
        Self::constant(S::one())
    }

    fn recip(self) -> Self {
        let r = self.re.recip();
        Self { re: r, dx: -(self.dx * r * r) }
    }

    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.re.sin_cos();
        (
            Self { re: s, dx: self.dx * c },
            Self { re: c, dx: -(self.dx * s) },
        )
    }

    fn dot<const N: usize>(pairs: [(Self, Self); N]) -> Self {
        let re = S::dot(pairs.map(|(a, b)| (a.re, b.re)));
        let d1 = S::dot(pairs.map(|(a, b)| (a.re, b.dx)));
        let d2 = S::dot(pairs.map(|(a, b)| (a.dx, b.re)));
        Self { re, dx: d1 + d2 }
    }

    fn dot_dyn(pairs: &[(Self, Self)]) -> Self {
        let re_pairs: Vec<(S, S)> = pairs.iter().map(|&(a, b)| (a.re, b.re)).collect();
        let d1_pairs: Vec<(S, S)> = pairs.iter().map(|&(a, b)| (a.re, b.dx)).collect();
        let d2_pairs: Vec<(S, S)> = pairs.iter().map(|&(a, b)| (a.dx, b.re)).collect();
        Self {
            re: S::dot_dyn(&re_pairs),
            dx: S::dot_dyn(&d1_pairs) + S::dot_dyn(&d2_pairs),
        }
    }

    fn scale_pow2(self, e: i32) -> Self {
        Self { re: self.re.scale_pow2(e), dx: self.dx.scale_pow2(e) }
    }

    fn floor_log2_abs(self) -> Option<i32> {
        self.re.floor_log2_abs()
    }

    fn is_strictly_positive(self) -> bool {
        self.re.is_strictly_positive()
    }

    /// Base kernels re-run under duals occupy the derivative pipeline, so
    /// their units are relabeled for the counting bindings.
    fn enter_unit(unit: Option<UnitId>) {
        S::enter_unit(unit.map(|mut u| {
            if u.module == KernelModule::Rnea {
                u.module = KernelModule::DeltaRnea;
            }
            u
        }));
    }

    fn track(name: &'static str, v: Self) {
        S::track(name, v.re);
    }
}
