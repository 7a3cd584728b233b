//! The first Heisenberg group ℍ¹ ≅ ℝ³.
//!
//! Group law `x·y = (x1+y1, x2+y2, x3+y3+2(y1·x2 − y2·x1))`, anisotropic
//! dilations, the horizontal frame `X = ∂1 + 2x2∂3`, `Y = ∂2 − 2x1∂3`,
//! `T = ∂3`, and the coefficient matrices `σ`, `P = σᵀσ` and `√P`.

use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat2x3, Sym3, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Point {
    pub const ORIGIN: Point = Point {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Point { x1, x2, x3 }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn as_vec(self) -> Vec3 {
        Vec3(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    /// Euclidean norm in ℝ³.
    pub fn norm(&self) -> f64 {
        self.as_vec().norm()
    }

    /// Euclidean distance in ℝ³.
    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    /// Euclidean distance between the horizontal parts `x'`, `y'`.
    pub fn horizontal_dist(&self, other: &Point) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }

    pub fn offset(&self, v: &Vec3, t: f64) -> Point {
        Point::new(
            self.x1 + t * v.0[0],
            self.x2 + t * v.0[1],
            self.x3 + t * v.0[2],
        )
    }
}

impl Sub for Point {
    type Output = Vec3;
    fn sub(self, o: Point) -> Vec3 {
        Vec3([self.x1 - o.x1, self.x2 - o.x2, self.x3 - o.x3])
    }
}

/// Group product `p·q`.
pub fn group_mul(p: Point, q: Point) -> Point {
    Point::new(
        p.x1 + q.x1,
        p.x2 + q.x2,
        p.x3 + q.x3 + 2.0 * (q.x1 * p.x2 - q.x2 * p.x1),
    )
}

/// Group inverse; in exponential coordinates it is the Euclidean opposite.
pub fn group_inv(p: Point) -> Point {
    Point::new(-p.x1, -p.x2, -p.x3)
}

/// Homogeneous dilation `δ_λ(p) = (λp1, λp2, λ²p3)`.
pub fn dilate(lam: f64, p: Point) -> Result<Point> {
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dilation factor must be positive and finite, got {lam}"
        )));
    }
    Ok(Point::new(lam * p.x1, lam * p.x2, lam * lam * p.x3))
}

/// The horizontal frame at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: Vec3,
    pub y: Vec3,
    pub t: Vec3,
}

pub fn frame(p: Point) -> Frame {
    Frame {
        x: Vec3::new(1.0, 0.0, 2.0 * p.x2),
        y: Vec3::new(0.0, 1.0, -2.0 * p.x1),
        t: Vec3::E3,
    }
}

/// `σ(p)`, the 2×3 matrix whose rows are `X(p)` and `Y(p)`.
pub fn sigma(p: Point) -> Mat2x3 {
    let f = frame(p);
    Mat2x3([f.x.0, f.y.0])
}

/// `P(p) = σ(p)ᵀσ(p)`, positive semidefinite with kernel spanned by
/// `(−2x2, 2x1, 1)`.
pub fn p_matrix(p: Point) -> Sym3 {
    let (a, b) = (2.0 * p.x2, -2.0 * p.x1);
    Sym3([1.0, 0.0, a, 1.0, b, 4.0 * (p.x1 * p.x1 + p.x2 * p.x2)])
}

/// The kernel direction of `P(p)`.
pub fn p_kernel(p: Point) -> Vec3 {
    Vec3::new(-2.0 * p.x2, 2.0 * p.x1, 1.0)
}

/// Positive semidefinite square root of `P(p)`.
///
/// With `s = √(1+4|x'|²)` and `D = (1+s)s` the entries are
/// `1 − 4x2²/D`, `1 − 4x1²/D`, `4|x'|²/s` on the diagonal and `4x1x2/D`,
/// `2x2/s`, `−2x1/s` off it. This form has no singularity at `x' = 0`.
pub fn sqrt_p(p: Point) -> Sym3 {
    let (x1, x2) = (p.x1, p.x2);
    let rho2 = x1 * x1 + x2 * x2;
    let s = (1.0 + 4.0 * rho2).sqrt();
    let d = (1.0 + s) * s;
    Sym3([
        1.0 - 4.0 * x2 * x2 / d,
        4.0 * x1 * x2 / d,
        2.0 * x2 / s,
        1.0 - 4.0 * x1 * x1 / d,
        -2.0 * x1 / s,
        4.0 * rho2 / s,
    ])
}
