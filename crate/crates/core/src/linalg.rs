//! Small fixed-size dense linear algebra.
//!
//! Symmetric matrices store only their upper triangle, so symmetry holds by
//! construction. Eigenvalues of 2×2 matrices use the closed quadratic
//! formula; everything larger goes through a cyclic Jacobi sweep.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Off-diagonal tolerance (relative to the Frobenius norm) at which the
/// Jacobi sweep stops.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2(pub [f64; 2]);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const E3: Vec3 = Vec3([0.0, 0.0, 1.0]);

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Vec3([a, b, c])
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// 2×2 symmetric matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };
    pub const IDENTITY: Sym2 = Sym2 {
        a: 1.0,
        b: 0.0,
        c: 1.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    pub fn diag(d1: f64, d2: f64) -> Self {
        Sym2 {
            a: d1,
            b: 0.0,
            c: d2,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.a,
            (1, 1) => self.c,
            _ => self.b,
        }
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.a * s, self.b * s, self.c * s)
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.a * v[0] * v[0] + 2.0 * self.b * v[0] * v[1] + self.c * v[1] * v[1]
    }

    /// `trace(self · other)` for two symmetric matrices.
    pub fn frobenius_dot(&self, other: &Sym2) -> f64 {
        self.a * other.a + 2.0 * self.b * other.b + self.c * other.c
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a + self.c);
        let half_diff = 0.5 * (self.a - self.c);
        let radius = half_diff.hypot(self.b);
        [mean - radius, mean + radius]
    }

    /// Congruence `Rᵀ diag(d) R` for the rotation by `theta`.
    pub fn from_rotation(theta: f64, d: [f64; 2]) -> Sym2 {
        let (s, c) = theta.sin_cos();
        Sym2::new(
            d[0] * c * c + d[1] * s * s,
            (d[0] - d[1]) * c * s,
            d[0] * s * s + d[1] * c * c,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.a - o.a, self.b - o.b, self.c - o.c)
    }
}

impl Neg for Sym2 {
    type Output = Sym2;
    fn neg(self) -> Sym2 {
        Sym2::new(-self.a, -self.b, -self.c)
    }
}

/// General 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Mat3(t)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Symmetric part `(M + Mᵀ)/2`.
    pub fn sym_part(&self) -> Sym3 {
        let m = &self.0;
        Sym3([
            m[0][0],
            0.5 * (m[0][1] + m[1][0]),
            0.5 * (m[0][2] + m[2][0]),
            m[1][1],
            0.5 * (m[1][2] + m[2][1]),
            m[2][2],
        ])
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }
}

/// 3×3 symmetric matrix, upper triangle `[m00, m01, m02, m11, m12, m22]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym3(pub [f64; 6]);

#[inline]
fn sym3_slot(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match (i, j) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

impl Sym3 {
    pub const ZERO: Sym3 = Sym3([0.0; 6]);
    pub const IDENTITY: Sym3 = Sym3([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

    pub fn from_fn(f: impl Fn(usize, usize) -> f64) -> Sym3 {
        let mut s = [0.0; 6];
        for i in 0..3 {
            for j in i..3 {
                s[sym3_slot(i, j)] = f(i, j);
            }
        }
        Sym3(s)
    }

    pub fn diag(d: [f64; 3]) -> Sym3 {
        Sym3([d[0], 0.0, 0.0, d[1], 0.0, d[2]])
    }

    /// Rank-one `v ⊗ v`.
    pub fn outer(v: &Vec3) -> Sym3 {
        Sym3::from_fn(|i, j| v.0[i] * v.0[j])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[sym3_slot(i, j)]
    }

    pub fn to_mat(&self) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j);
            }
        }
        Mat3(m)
    }

    pub fn to_array(&self) -> [[f64; 3]; 3] {
        self.to_mat().0
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[3] + self.0[5]
    }

    pub fn scale(&self, s: f64) -> Sym3 {
        Sym3(self.0.map(|v| v * s))
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        Vec3(std::array::from_fn(|i| {
            (0..3).map(|j| self.get(i, j) * v.0[j]).sum()
        }))
    }

    /// `⟨self · u, v⟩`.
    pub fn bilinear(&self, u: &Vec3, v: &Vec3) -> f64 {
        self.mul_vec(u).dot(v)
    }

    pub fn quad(&self, v: &Vec3) -> f64 {
        self.bilinear(v, v)
    }

    /// Product `self · other` (not symmetric in general).
    pub fn mul_sym(&self, other: &Sym3) -> Mat3 {
        self.to_mat() * other.to_mat()
    }

    /// `self²`, which is symmetric.
    pub fn square(&self) -> Sym3 {
        self.mul_sym(self).sym_part()
    }

    /// Congruence `C · self · C` with a symmetric `C`.
    pub fn congruence(&self, c: &Sym3) -> Sym3 {
        (c.to_mat() * self.to_mat() * c.to_mat()).sym_part()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        let s = &self.0;
        (s[0] * s[0] + s[3] * s[3] + s[5] * s[5] + 2.0 * (s[1] * s[1] + s[2] * s[2] + s[4] * s[4]))
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 3] {
        sym_eigen(self.to_array()).0
    }

    /// Eigenvalues (ascending) and the matching unit eigenvectors as columns.
    pub fn eigen(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        sym_eigen(self.to_array())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral norm: largest eigenvalue in absolute value.
    pub fn spectral_norm(&self) -> f64 {
        let e = self.eigenvalues();
        e[0].abs().max(e[2].abs())
    }
}

impl Add for Sym3 {
    type Output = Sym3;
    fn add(self, o: Sym3) -> Sym3 {
        Sym3(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl Sub for Sym3 {
    type Output = Sym3;
    fn sub(self, o: Sym3) -> Sym3 {
        Sym3(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Neg for Sym3 {
    type Output = Sym3;
    fn neg(self) -> Sym3 {
        Sym3(self.0.map(|v| -v))
    }
}

/// 2×3 matrix whose rows are horizontal frame vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2x3(pub [[f64; 3]; 2]);

impl Mat2x3 {
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3(self.0[i])
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Sym3 {
        Sym3::from_fn(|i, j| self.0[0][i] * self.0[0][j] + self.0[1][i] * self.0[1][j])
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `N×N` matrix.
///
/// Returns eigenvalues in ascending order and the eigenvectors as the columns
/// of the second array. The input is assumed symmetric; only values are read,
/// nothing is checked.
pub fn sym_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if total == 0.0 || !total.is_finite() {
        let mut d = [0.0; N];
        for (i, di) in d.iter_mut().enumerate() {
            *di = a[i][i];
        }
        return sort_eigen(d, v);
    }
    let threshold = JACOBI_TOL * total;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut d = [0.0; N];
    for (i, di) in d.iter_mut().enumerate() {
        *di = a[i][i];
    }
    sort_eigen(d, v)
}

fn sort_eigen<const N: usize>(d: [f64; N], v: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let vals = std::array::from_fn(|k| d[order[k]]);
    let vecs = std::array::from_fn(|r| std::array::from_fn(|k| v[r][order[k]]));
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric `N×N` matrix.
pub fn min_eigenvalue<const N: usize>(a: [[f64; N]; N]) -> f64 {
    sym_eigen(a).0[0]
}

/// Largest absolute entry of a square array.
pub fn max_abs_entry<const N: usize>(a: &[[f64; N]; N]) -> f64 {
    a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
}
