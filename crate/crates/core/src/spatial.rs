//! Spatial (6-D) vector algebra over the kernel scalar abstraction.
//!
//! Layout convention: angular triple first, linear triple second. Motion
//! transforms are stored as a rotation block `E` (parent coords to child
//! coords) plus the child origin `r` expressed in parent coordinates.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialVec<S> {
    pub c: [S; 6],
}

impl<S: Scalar> SpatialVec<S> {
    pub fn zero() -> Self {
        Self { c: [S::zero(); 6] }
    }

    pub fn from_f64(v: [f64; 6]) -> Self {
        Self { c: v.map(S::from_f64) }
    }

    pub fn to_f64(&self) -> [f64; 6] {
        self.c.map(|x| x.to_f64())
    }

    pub fn angular(&self) -> [S; 3] {
        [self.c[0], self.c[1], self.c[2]]
    }

    pub fn linear(&self) -> [S; 3] {
        [self.c[3], self.c[4], self.c[5]]
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut c = self.c;
        for i in 0..6 {
            c[i] = c[i] + o.c[i];
        }
        Self { c }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut c = self.c;
        for i in 0..6 {
            c[i] = c[i] - o.c[i];
        }
        Self { c }
    }

    pub fn scale(&self, s: S) -> Self {
        Self { c: self.c.map(|x| x * s) }
    }

    pub fn neg(&self) -> Self {
        Self { c: self.c.map(|x| -x) }
    }

    pub fn dot(&self, o: &Self) -> S {
        S::dot([
            (self.c[0], o.c[0]),
            (self.c[1], o.c[1]),
            (self.c[2], o.c[2]),
            (self.c[3], o.c[3]),
            (self.c[4], o.c[4]),
            (self.c[5], o.c[5]),
        ])
    }

    /// Motion cross product `v ×m x`.
    pub fn cross_motion(&self, x: &Self) -> Self {
        let w = self.angular();
        let v = self.linear();
        let xw = x.angular();
        let xv = x.linear();
        let ang = cross3(w, xw);
        let lin = add3(cross3(w, xv), cross3(v, xw));
        Self { c: [ang[0], ang[1], ang[2], lin[0], lin[1], lin[2]] }
    }

    /// Force cross product `v ×* f = -(v ×m)ᵀ f`.
    pub fn cross_force(&self, f: &Self) -> Self {
        let w = self.angular();
        let v = self.linear();
        let n = f.angular();
        let fl = f.linear();
        let ang = add3(cross3(w, n), cross3(v, fl));
        let lin = cross3(w, fl);
        Self { c: [ang[0], ang[1], ang[2], lin[0], lin[1], lin[2]] }
    }
}

fn cross3<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn add3<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Kind selector for the public cross-product operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossKind {
    Motion,
    Force,
}

/// `v × x` (motion) or `v ×* x` (force); total on finite inputs.
pub fn spatial_cross(v: [f64; 6], x: [f64; 6], kind: CrossKind) -> [f64; 6] {
    let v = SpatialVec::<f64> { c: v };
    let x = SpatialVec::<f64> { c: x };
    match kind {
        CrossKind::Motion => v.cross_motion(&x).c,
        CrossKind::Force => v.cross_force(&x).c,
    }
}

/// Rotation-plus-translation motion transform `^cX_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Xform<S> {
    /// Rotation mapping parent coordinates into child coordinates.
    pub rot: [[S; 3]; 3],
    /// Child frame origin expressed in parent coordinates.
    pub trans: [S; 3],
}

impl<S: Scalar> Xform<S> {
    pub fn identity() -> Self {
        let o = S::zero();
        let l = S::one();
        Self {
            rot: [[l, o, o], [o, l, o], [o, o, l]],
            trans: [o, o, o],
        }
    }

    pub fn from_f64(rot: [[f64; 3]; 3], trans: [f64; 3]) -> Self {
        Self {
            rot: rot.map(|row| row.map(S::from_f64)),
            trans: trans.map(S::from_f64),
        }
    }

    fn rot_apply(&self, v: [S; 3]) -> [S; 3] {
        [
            S::dot([(self.rot[0][0], v[0]), (self.rot[0][1], v[1]), (self.rot[0][2], v[2])]),
            S::dot([(self.rot[1][0], v[0]), (self.rot[1][1], v[1]), (self.rot[1][2], v[2])]),
            S::dot([(self.rot[2][0], v[0]), (self.rot[2][1], v[1]), (self.rot[2][2], v[2])]),
        ]
    }

    fn rot_t_apply(&self, v: [S; 3]) -> [S; 3] {
        [
            S::dot([(self.rot[0][0], v[0]), (self.rot[1][0], v[1]), (self.rot[2][0], v[2])]),
            S::dot([(self.rot[0][1], v[0]), (self.rot[1][1], v[1]), (self.rot[2][1], v[2])]),
            S::dot([(self.rot[0][2], v[0]), (self.rot[1][2], v[1]), (self.rot[2][2], v[2])]),
        ]
    }

    /// Motion vector from parent coordinates to child coordinates:
    /// `(E ω, E (v − r × ω))`.
    pub fn apply_motion(&self, m: &SpatialVec<S>) -> SpatialVec<S> {
        let w = m.angular();
        let v = m.linear();
        let lin_p = [
            v[0] - (self.trans[1] * w[2] - self.trans[2] * w[1]),
            v[1] - (self.trans[2] * w[0] - self.trans[0] * w[2]),
            v[2] - (self.trans[0] * w[1] - self.trans[1] * w[0]),
        ];
        let ang = self.rot_apply(w);
        let lin = self.rot_apply(lin_p);
        SpatialVec { c: [ang[0], ang[1], ang[2], lin[0], lin[1], lin[2]] }
    }

    /// Force covector from child coordinates to parent coordinates:
    /// `(Eᵀ n + r × Eᵀ f, Eᵀ f)` — the transpose of the motion map.
    pub fn transpose_apply_force(&self, f: &SpatialVec<S>) -> SpatialVec<S> {
        let n = self.rot_t_apply(f.angular());
        let fl = self.rot_t_apply(f.linear());
        let ang = add3(n, cross3(self.trans, fl));
        SpatialVec { c: [ang[0], ang[1], ang[2], fl[0], fl[1], fl[2]] }
    }

    /// Composition `outer ∘ inner`: apply `inner` (a→b) first, then `outer`
    /// (b→c), yielding the a→c transform.
    pub fn compose(outer: &Self, inner: &Self) -> Self {
        let mut rot = [[S::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = S::dot([
                    (outer.rot[i][0], inner.rot[0][j]),
                    (outer.rot[i][1], inner.rot[1][j]),
                    (outer.rot[i][2], inner.rot[2][j]),
                ]);
            }
        }
        let shifted = inner.rot_t_apply(outer.trans);
        let trans = add3(inner.trans, shifted);
        Self { rot, trans }
    }

    /// Dense 6×6 motion matrix `[E 0; -E r̂ E]`.
    pub fn to_mat6(&self) -> Mat6<S> {
        let z = S::zero();
        let mut m = [[z; 6]; 6];
        let rx = skew(self.trans);
        // -E r̂
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.rot[i][j];
                m[i + 3][j + 3] = self.rot[i][j];
                m[i + 3][j] = -S::dot([
                    (self.rot[i][0], rx[0][j]),
                    (self.rot[i][1], rx[1][j]),
                    (self.rot[i][2], rx[2][j]),
                ]);
            }
        }
        Mat6 { m }
    }
}

fn skew<S: Scalar>(v: [S; 3]) -> [[S; 3]; 3] {
    let z = S::zero();
    [
        [z, -v[2], v[1]],
        [v[2], z, -v[0]],
        [-v[1], v[0], z],
    ]
}

/// Dense 6×6 matrix used for articulated inertias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat6<S> {
    pub m: [[S; 6]; 6],
}

impl<S: Scalar> Mat6<S> {
    pub fn zero() -> Self {
        Self { m: [[S::zero(); 6]; 6] }
    }

    pub fn from_f64(m: [[f64; 6]; 6]) -> Self {
        Self { m: m.map(|row| row.map(S::from_f64)) }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut m = self.m;
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = m[i][j] + o.m[i][j];
            }
        }
        Self { m }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut m = self.m;
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = m[i][j] - o.m[i][j];
            }
        }
        Self { m }
    }

    pub fn scale(&self, s: S) -> Self {
        Self { m: self.m.map(|row| row.map(|x| x * s)) }
    }

    pub fn scale_pow2(&self, e: i32) -> Self {
        Self { m: self.m.map(|row| row.map(|x| x.scale_pow2(e))) }
    }

    pub fn mul_vec(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        let mut c = [S::zero(); 6];
        for i in 0..6 {
            c[i] = S::dot([
                (self.m[i][0], v.c[0]),
                (self.m[i][1], v.c[1]),
                (self.m[i][2], v.c[2]),
                (self.m[i][3], v.c[3]),
                (self.m[i][4], v.c[4]),
                (self.m[i][5], v.c[5]),
            ]);
        }
        SpatialVec { c }
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut m = [[S::zero(); 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = S::dot([
                    (self.m[i][0], o.m[0][j]),
                    (self.m[i][1], o.m[1][j]),
                    (self.m[i][2], o.m[2][j]),
                    (self.m[i][3], o.m[3][j]),
                    (self.m[i][4], o.m[4][j]),
                    (self.m[i][5], o.m[5][j]),
                ]);
            }
        }
        Self { m }
    }

    pub fn transpose(&self) -> Self {
        let mut m = [[S::zero(); 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = self.m[j][i];
            }
        }
        Self { m }
    }

    pub fn outer(a: &SpatialVec<S>, b: &SpatialVec<S>) -> Self {
        let mut m = [[S::zero(); 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = a.c[i] * b.c[j];
            }
        }
        Self { m }
    }

    /// Congruence transform of an inertia to the parent frame: `Xᵀ I X`
    /// with `X` this transform's dense motion matrix.
    pub fn congruence(&self, x: &Xform<S>) -> Self {
        let xm = x.to_mat6();
        xm.transpose().matmul(&self.matmul(&xm))
    }

    pub fn column(&self, j: usize) -> SpatialVec<S> {
        let mut c = [S::zero(); 6];
        for i in 0..6 {
            c[i] = self.m[i][j];
        }
        SpatialVec { c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rot_z(q: f64) -> [[f64; 3]; 3] {
        let (s, c) = q.sin_cos();
        [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn cross_motion_of_self_angular_is_zero() {
        let v = [0.3, -0.2, 0.9, 0.0, 0.0, 0.0];
        let r = spatial_cross(v, v, CrossKind::Motion);
        for x in r {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_zero_vanishes() {
        let z = [0.0; 6];
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(spatial_cross(z, x, CrossKind::Motion), [0.0; 6]);
        assert_eq!(spatial_cross(z, x, CrossKind::Force), [0.0; 6]);
    }

    #[test]
    fn force_cross_is_negative_transpose_of_motion_operator() {
        // Build both 6x6 operators column-by-column and compare
        // v ×* f = -(v ×m)ᵀ f on random samples.
        let mut seed = 0x853c49e6748fea9bu64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..1000 {
            let v: [f64; 6] = std::array::from_fn(|_| next());
            let f: [f64; 6] = std::array::from_fn(|_| next());
            let mut op = [[0.0f64; 6]; 6];
            for j in 0..6 {
                let mut e = [0.0; 6];
                e[j] = 1.0;
                let col = spatial_cross(v, e, CrossKind::Motion);
                for i in 0..6 {
                    op[i][j] = col[i];
                }
            }
            let direct = spatial_cross(v, f, CrossKind::Force);
            for i in 0..6 {
                let mut expect = 0.0;
                for j in 0..6 {
                    expect -= op[j][i] * f[j];
                }
                assert_abs_diff_eq!(direct[i], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn compose_against_dense_matrices() {
        let a = Xform::<f64>::from_f64(rot_z(0.4), [0.1, -0.2, 0.35]);
        let b = Xform::<f64>::from_f64(rot_z(-1.1), [0.0, 0.5, -0.7]);
        let c = Xform::compose(&b, &a);
        let dense = b.to_mat6().matmul(&a.to_mat6());
        let v = SpatialVec::<f64>::from_f64([0.3, 1.2, -0.4, 0.8, 0.0, -1.5]);
        let via_compose = c.apply_motion(&v);
        let via_dense = dense.mul_vec(&v);
        for i in 0..6 {
            assert_abs_diff_eq!(via_compose.c[i], via_dense.c[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn transpose_force_matches_dense_transpose() {
        let x = Xform::<f64>::from_f64(rot_z(0.9), [0.2, 0.3, -0.1]);
        let f = SpatialVec::<f64>::from_f64([1.0, -2.0, 0.5, 0.1, 0.7, -0.3]);
        let direct = x.transpose_apply_force(&f);
        let dense = x.to_mat6().transpose().mul_vec(&f);
        for i in 0..6 {
            assert_abs_diff_eq!(direct.c[i], dense.c[i], epsilon = 1e-12);
        }
    }
}
