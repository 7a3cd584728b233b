//! Matrix inequalities behind the doubling-of-variables argument.
//!
//! The penalty `φ(x, y) = L|x−y|^α` has Hessian blocks `±M`; the sums
//! theorem yields `A`, `B` with
//! `[[A, 0], [0, −B]] ≤ [[N, −N], [−N, N]]`, `N = M + (2/μ)M²`.
//! This module builds those objects, decides the block inequality
//! numerically, and evaluates the trace-gap bounds that follow from it in
//! intrinsic and lifted form.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::hcalculus::{lift, ScalarField};
use crate::hgroup::{p_matrix, sqrt_p, Point};
use crate::linalg::{max_abs_entry, min_eigenvalue, Sym3, Vec3};
use crate::rng::{sym3, trial_rng};
use crate::{Error, Result};

/// Relative tolerance for the 6×6 block inequality and the trace gaps.
pub const BLOCK_TOL: f64 = 1e-9;

/// Penalty parameters `L, α, δ, ε, μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyParams {
    pub l: f64,
    pub alpha: f64,
    pub delta: f64,
    pub eps: f64,
    pub mu: f64,
}

impl PenaltyParams {
    pub fn new(l: f64, alpha: f64, delta: f64, eps: f64, mu: f64) -> Result<Self> {
        if !(l > 0.0 && alpha > 0.0 && alpha <= 1.0 && delta >= 0.0 && eps >= 0.0 && mu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty parameters out of range: L={l}, alpha={alpha}, delta={delta}, eps={eps}, mu={mu}"
            )));
        }
        Ok(PenaltyParams {
            l,
            alpha,
            delta,
            eps,
            mu,
        })
    }
}

fn separation(x: Point, y: Point) -> Result<(Vec3, f64)> {
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::Precondition("penalty Hessian needs x != y".into()));
    }
    Ok((d.scale(1.0 / r), r))
}

/// `L|x−y|^α`.
pub fn penalty_value(x: Point, y: Point, pp: &PenaltyParams) -> f64 {
    pp.l * x.dist(&y).powf(pp.alpha)
}

/// `M = Lα|x−y|^{α−2}((α−2) e⊗e + I)`, the Hessian of `x ↦ L|x−y|^α`.
pub fn penalty_hessian(x: Point, y: Point, pp: &PenaltyParams) -> Result<Sym3> {
    let (e, r) = separation(x, y)?;
    let k = pp.l * pp.alpha * r.powf(pp.alpha - 2.0);
    Ok((Sym3::outer(&e).scale(pp.alpha - 2.0) + Sym3::IDENTITY).scale(k))
}

/// `M² = L²α²|x−y|^{2(α−2)}(α(α−2) e⊗e + I)`.
pub fn penalty_hessian_sq(x: Point, y: Point, pp: &PenaltyParams) -> Result<Sym3> {
    let (e, r) = separation(x, y)?;
    let k = (pp.l * pp.alpha).powi(2) * r.powf(2.0 * (pp.alpha - 2.0));
    Ok((Sym3::outer(&e).scale(pp.alpha * (pp.alpha - 2.0)) + Sym3::IDENTITY).scale(k))
}

/// `N = M + (2/μ)M²`.
pub fn n_matrix(x: Point, y: Point, pp: &PenaltyParams) -> Result<Sym3> {
    Ok(penalty_hessian(x, y, pp)? + penalty_hessian_sq(x, y, pp)?.scale(2.0 / pp.mu))
}

/// Bound `Lα r^{α−2} + (2/μ)L²α² r^{2(α−2)}` on the spectral norm of `N`.
pub fn n_norm_bound(r: f64, pp: &PenaltyParams) -> f64 {
    let m = pp.l * pp.alpha * r.powf(pp.alpha - 2.0);
    m + 2.0 / pp.mu * m * m
}

/// The 6×6 matrix `[[N−A, −N], [−N, N+B]]`.
pub fn block_matrix(a: &Sym3, b: &Sym3, n: &Sym3) -> [[f64; 6]; 6] {
    let mut g = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = n.get(i, j) - a.get(i, j);
            g[i][j + 3] = -n.get(i, j);
            g[i + 3][j] = -n.get(i, j);
            g[i + 3][j + 3] = n.get(i, j) + b.get(i, j);
        }
    }
    g
}

/// Smallest eigenvalue of `[[N, −N], [−N, N]] − [[A, 0], [0, −B]]`.
pub fn block_gap(a: &Sym3, b: &Sym3, n: &Sym3) -> f64 {
    min_eigenvalue(block_matrix(a, b, n))
}

/// Whether the block inequality holds up to [`BLOCK_TOL`] times the largest
/// entry.
pub fn block_admissible(a: &Sym3, b: &Sym3, n: &Sym3) -> bool {
    let g = block_matrix(a, b, n);
    min_eigenvalue(g) >= -BLOCK_TOL * max_abs_entry(&g).max(1.0)
}

/// Random `(A, B)` satisfying the block inequality for `N`.
///
/// Draws `A₀, B₀` at the scale of `N`, then shifts `A = A₀ − tI`,
/// `B = B₀ + tI`; the shift raises the block gap by exactly `t`, so
/// choosing `t = max(0, −gap₀) + margin` lands on or inside the admissible
/// set. Half of the draws use margin zero, which makes the inequality tight.
pub fn make_admissible_pair<R: Rng>(n: &Sym3, rng: &mut R) -> (Sym3, Sym3) {
    let s = 1.0 + n.max_abs();
    let a0 = sym3(rng, s);
    let b0 = sym3(rng, s);
    let g = block_gap(&a0, &b0, n);
    let margin = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..0.1 * s)
    };
    let t = (-g).max(0.0) + margin;
    let shift = Sym3::IDENTITY.scale(t);
    (a0 - shift, b0 + shift)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceGapReport {
    pub lhs: f64,
    pub rhs: f64,
    pub n33: f64,
    /// The bound in terms of the penalty parameters, when they are supplied.
    pub rhs_prime: Option<f64>,
    pub holds: bool,
}

fn require_admissible(a: &Sym3, b: &Sym3, n: &Sym3) -> Result<()> {
    if block_admissible(a, b, n) {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "block inequality fails: gap {}",
            block_gap(a, b, n)
        )))
    }
}

fn holds(lhs: f64, rhs: f64, scale: f64) -> bool {
    lhs <= rhs + BLOCK_TOL * (1.0 + scale.max(lhs.abs()).max(rhs.abs()))
}

/// `tr lift(A, x) − tr lift(B, y) ≤ 4|x'−y'|² n33`.
///
/// Frames at `x` and `y` differ only vertically:
/// `X(x) − X(y) = 2(x2−y2)e₃` and `Y(x) − Y(y) = 2(y1−x1)e₃`, which is where
/// the factor 4 comes from.
pub fn trace_gap(a: &Sym3, b: &Sym3, n: &Sym3, x: Point, y: Point) -> Result<TraceGapReport> {
    require_admissible(a, b, n)?;
    let lhs = lift(a, x).trace() - lift(b, y).trace();
    let n33 = n.get(2, 2);
    let h2 = (x.x1 - y.x1).powi(2) + (x.x2 - y.x2).powi(2);
    let rhs = 4.0 * h2 * n33;
    let scale = a.max_abs().max(b.max_abs()).max(n.max_abs()) * (1.0 + x.norm() + y.norm()).powi(2);
    Ok(TraceGapReport {
        lhs,
        rhs,
        n33,
        rhs_prime: None,
        holds: holds(lhs, rhs, scale),
    })
}

/// `‖√P(x) − √P(y)‖_F / |x'−y'|`.
pub fn sqrtp_ratio(x: Point, y: Point) -> Result<f64> {
    let h = x.horizontal_dist(&y);
    if h == 0.0 {
        return Err(Error::Precondition("sqrtp_ratio needs x' != y'".into()));
    }
    Ok((sqrt_p(x) - sqrt_p(y)).frobenius() / h)
}

/// `tr(P(x)A) − tr(P(y)B) ≤ 3|N|·‖√P(x) − √P(y)‖²_F`.
///
/// With `penalty = Some((pp, c2))` the report also carries
/// `3C₂²(LαΔ^α + (2/μ)L²α²Δ^{2α−2})`, `Δ = |x−y|`, which dominates `rhs`
/// whenever `N` is the penalty matrix at `(x, y)` and `c2` bounds
/// [`sqrtp_ratio`] there.
pub fn lifted_trace_gap(
    a: &Sym3,
    b: &Sym3,
    n: &Sym3,
    x: Point,
    y: Point,
    penalty: Option<(&PenaltyParams, f64)>,
) -> Result<TraceGapReport> {
    require_admissible(a, b, n)?;
    let lhs = p_matrix(x).mul_sym(a).trace() - p_matrix(y).mul_sym(b).trace();
    let diff = (sqrt_p(x) - sqrt_p(y)).frobenius();
    let rhs = 3.0 * n.spectral_norm() * diff * diff;
    let rhs_prime = penalty.map(|(pp, c2)| {
        let d = x.dist(&y);
        let m = pp.l * pp.alpha * d.powf(pp.alpha);
        3.0 * c2 * c2 * (m + 2.0 / pp.mu * (pp.l * pp.alpha).powi(2) * d.powf(2.0 * pp.alpha - 2.0))
    });
    let scale = a.max_abs().max(b.max_abs()).max(n.max_abs()) * (1.0 + x.norm() + y.norm()).powi(2);
    Ok(TraceGapReport {
        lhs,
        rhs,
        n33: n.get(2, 2),
        rhs_prime,
        holds: holds(lhs, rhs, scale),
    })
}

/// `S1 ⪯ S2` and `P ⪰ 0` imply `PS1P ⪯ PS2P`; returns whether the
/// computed difference is PSD within tolerance.
pub fn psd_sandwich_check(p: &Sym3, s1: &Sym3, s2: &Sym3) -> Result<bool> {
    let tol = |m: &Sym3| -BLOCK_TOL * m.max_abs().max(1.0);
    if p.min_eigenvalue() < tol(p) {
        return Err(Error::Precondition(
            "P must be positive semidefinite".into(),
        ));
    }
    let gap = *s2 - *s1;
    if gap.min_eigenvalue() < tol(&gap) {
        return Err(Error::Precondition("S1 must be dominated by S2".into()));
    }
    let d = s2.congruence(p) - s1.congruence(p);
    let scale = p.max_abs().powi(2) * s1.max_abs().max(s2.max_abs()).max(1.0);
    Ok(d.min_eigenvalue() >= -BLOCK_TOL * scale.max(1.0))
}

/// On the vertical axis `√P = diag(1, 1, 0)`, so `√P(x)ξ₁ − √P(y)ξ₂` never
/// has a vertical component. Checks that for random `ξ₁, ξ₂`.
pub fn vertical_obstruction_check(x: Point, y: Point, samples: usize, seed: u64) -> Result<bool> {
    if x.x1 != 0.0 || x.x2 != 0.0 || y.x1 != 0.0 || y.x2 != 0.0 {
        return Err(Error::Precondition(
            "both points must lie on the vertical axis".into(),
        ));
    }
    if x.x3 == y.x3 {
        return Err(Error::Precondition("points must be distinct".into()));
    }
    let (sx, sy) = (sqrt_p(x), sqrt_p(y));
    Ok((0..samples).all(|i| {
        let mut rng = trial_rng(seed, "vertical_obstruction", i as u64);
        let xi1 = crate::rng::unit_vec3(&mut rng).scale(rng.gen_range(0.1..10.0));
        let xi2 = crate::rng::unit_vec3(&mut rng).scale(rng.gen_range(0.1..10.0));
        let v = sx.mul_vec(&xi1) - sy.mul_vec(&xi2);
        v.0[2] == 0.0 && v != Vec3::E3 && v != Vec3::E3.scale(-1.0)
    }))
}

/// Anything that can be sampled pointwise on a box.
pub trait FieldSample: Sync {
    fn sample(&self, p: Point) -> f64;
}

impl FieldSample for ScalarField {
    fn sample(&self, p: Point) -> f64 {
        self.value(p)
    }
}

impl<F: Fn(Point) -> f64 + Sync> FieldSample for F {
    fn sample(&self, p: Point) -> f64 {
        self(p)
    }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl BoxDomain {
    pub fn cube(half_width: f64) -> Self {
        BoxDomain {
            lower: [-half_width; 3],
            upper: [half_width; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxReport {
    /// Largest sampled value of `ψ`.
    pub theta: f64,
    pub argmax: (Point, Point),
    /// `|x̂ − ŷ|`.
    pub gap: f64,
    /// `θ ≤ 0` on the sample: evidence for `|u(x)−u(y)| ≤ L|x−y|^α`, not a proof.
    pub certified: bool,
    pub pairs: u64,
}

/// Points per axis of the tensor sample used by [`doubling_certificate`].
pub const DOUBLING_SAMPLES: usize = 17;

fn tensor_sample(lower: [f64; 3], upper: [f64; 3], n: usize) -> Vec<Point> {
    let coord = |k: usize, i: usize| {
        if n == 1 {
            0.5 * (lower[k] + upper[k])
        } else {
            lower[k] + (upper[k] - lower[k]) * i as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push(Point::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }
    pts
}

fn sample_values(u: &impl FieldSample, pts: &[Point]) -> Result<Vec<f64>> {
    let vals: Vec<f64> = pts.iter().map(|&p| u.sample(p)).collect();
    if let Some(node) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node,
            what: format!("u at {:?}", pts[node]),
        });
    }
    Ok(vals)
}

fn best_pair(
    xs: &[Point],
    ux: &[f64],
    ys: &[Point],
    uy: &[f64],
    pp: &PenaltyParams,
) -> (f64, usize, usize) {
    let half_alpha = 0.5 * pp.alpha;
    xs.par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let base = ux[i] - pp.delta * (x.x1 * x.x1 + x.x2 * x.x2 + x.x3 * x.x3) - pp.eps;
            let mut best = (f64::NEG_INFINITY, i, 0);
            for (j, &y) in ys.iter().enumerate() {
                let d2 = (x.x1 - y.x1).powi(2) + (x.x2 - y.x2).powi(2) + (x.x3 - y.x3).powi(2);
                let pen = if d2 == 0.0 {
                    0.0
                } else {
                    pp.l * d2.powf(half_alpha)
                };
                let psi = base - uy[j] - pen;
                if psi > best.0 {
                    best = (psi, i, j);
                }
            }
            best
        })
        // Ties resolve to the smallest index pair, independent of sharding.
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        )
}

/// Maximize `ψ(x,y) = u(x) − u(y) − L|x−y|^α − δ|x|² − ε` over a tensor
/// sample of `domain × domain`, then once more on a 4× finer sample around
/// the incumbent pair.
pub fn doubling_certificate(
    u: &impl FieldSample,
    pp: &PenaltyParams,
    domain: &BoxDomain,
) -> Result<MaxReport> {
    let n = DOUBLING_SAMPLES;
    let pts = tensor_sample(domain.lower, domain.upper, n);
    let vals = sample_values(u, &pts)?;
    let (theta0, i0, j0) = best_pair(&pts, &vals, &pts, &vals, pp);
    let mut pairs = (pts.len() * pts.len()) as u64;

    let spacing: [f64; 3] =
        std::array::from_fn(|k| (domain.upper[k] - domain.lower[k]) / (n - 1) as f64);
    let around = |c: Point| {
        let c = c.to_array();
        let lo: [f64; 3] = std::array::from_fn(|k| (c[k] - spacing[k]).max(domain.lower[k]));
        let hi: [f64; 3] = std::array::from_fn(|k| (c[k] + spacing[k]).min(domain.upper[k]));
        tensor_sample(lo, hi, n)
    };
    let (xs, ys) = (around(pts[i0]), around(pts[j0]));
    let (ux, uy) = (sample_values(u, &xs)?, sample_values(u, &ys)?);
    let (theta1, i1, j1) = best_pair(&xs, &ux, &ys, &uy, pp);
    pairs += (xs.len() * ys.len()) as u64;

    let (theta, x, y) = if theta1 > theta0 {
        (theta1, xs[i1], ys[j1])
    } else {
        (theta0, pts[i0], pts[j0])
    };
    Ok(MaxReport {
        theta,
        argmax: (x, y),
        gap: x.dist(&y),
        certified: theta <= 0.0,
        pairs,
    })
}
