//! Finite-difference solver for `F(D^{2,*}u) − c·u = f` on a box with
//! Dirichlet data.
//!
//! Second horizontal derivatives are semi-Lagrangian: `u` is sampled at
//! `p ± hX(p)`, `p ± hY(p)` (and the four diagonal points for the mixed
//! term) by trilinear interpolation, with `h = min(h1, h2)`. Samples that
//! leave the box take the boundary data there.
//!
//! Nonlinear operators are driven to a steady state by the explicit
//! pseudo-time step `v = u + τ(F − cu − f)`. Linear operators produce the
//! same discrete equations, which are solved by preconditioned BiCGSTAB;
//! the stopping rule (max interior residual below `tol`) is shared.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hcalculus::{HorizontalDerivatives, ScalarField};
use crate::hgroup::{frame, sqrt_p, Point};
use crate::hoperators::{Form, OperatorKind, OperatorSpec};
use crate::linalg::{Sym2, Sym3};
use crate::sumslab::FieldSample;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200_000;

/// Fraction of each side excluded from regularity measurements.
pub const BOUNDARY_MARGIN: f64 = 0.1;

const CHUNK: usize = 4096;

/// Tensor grid; node `(i, j, k)` sits at `lower + (i·h1, j·h2, k·h3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub lower: [f64; 3],
    pub n: [usize; 3],
    pub h: [f64; 3],
}

impl Grid3 {
    pub fn new(lower: [f64; 3], n: [usize; 3], h: [f64; 3]) -> Result<Self> {
        if n.iter().any(|&k| k < 3) {
            return Err(Error::InvalidArgument(format!(
                "grid needs >= 3 nodes per axis, got {n:?}"
            )));
        }
        if h.iter().any(|&s| !(s > 0.0 && s.is_finite())) || lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad grid geometry {lower:?}, {h:?}"
            )));
        }
        Ok(Grid3 { lower, n, h })
    }

    /// `n` nodes per axis on `[lo, hi]³`.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::InvalidArgument(format!(
                "bad cube [{lo}, {hi}] with {n} nodes"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Grid3::new([lo; 3], [n; 3], [h; 3])
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.coord(a, self.n[a] - 1))
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.h[axis]
    }

    /// Flat index, x3 fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    #[inline]
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], k]
    }

    pub fn point(&self, idx: [usize; 3]) -> Point {
        Point::new(
            self.coord(0, idx[0]),
            self.coord(1, idx[1]),
            self.coord(2, idx[2]),
        )
    }

    pub fn point_flat(&self, idx: usize) -> Point {
        self.point(self.unflatten(idx))
    }

    pub fn is_boundary(&self, idx: [usize; 3]) -> bool {
        (0..3).any(|a| idx[a] == 0 || idx[a] + 1 >= self.n[a])
    }

    /// Whether `idx` lies at least `margin` (fraction of each side) away
    /// from the boundary.
    pub fn in_interior_region(&self, idx: [usize; 3], margin: f64) -> bool {
        (0..3).all(|a| {
            let t = idx[a] as f64 / (self.n[a] - 1) as f64;
            t >= margin - 1e-12 && t <= 1.0 - margin + 1e-12
        })
    }

    fn contains(&self, q: [f64; 3]) -> bool {
        let up = self.upper();
        (0..3).all(|a| {
            let slack = 1e-12 * (1.0 + up[a].abs().max(self.lower[a].abs()));
            q[a] >= self.lower[a] - slack && q[a] <= up[a] + slack
        })
    }

    /// Trilinear weights of `q` (clamped into the box), at most eight
    /// nonzero entries.
    fn weights(&self, q: [f64; 3], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = ((q[a] - self.lower[a]) / self.h[a]).clamp(0.0, (self.n[a] - 1) as f64);
            let mut i = s.floor() as usize;
            let mut t = s - i as f64;
            // Snap roundoff so on-node samples hit exactly one node.
            if t < 1e-9 {
                t = 0.0;
            } else if t > 1.0 - 1e-9 {
                i += 1;
                t = 0.0;
            }
            if i >= self.n[a] - 1 {
                i = self.n[a] - 2;
                t = 1.0;
            }
            base[a] = i;
            frac[a] = t;
        }
        for c in 0..8 {
            let bit = |a: usize| (c >> (2 - a)) & 1;
            let w: f64 = (0..3)
                .map(|a| if bit(a) == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            if w != 0.0 {
                out.push((
                    self.index(base[0] + bit(0), base[1] + bit(1), base[2] + bit(2)),
                    w,
                ));
            }
        }
    }
}

/// Nodal values on a [`Grid3`], stored x3-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(grid.point_flat(i)))
            .collect();
        GridFunction { grid, values }
    }

    pub fn sample_field(grid: Grid3, u: &ScalarField) -> Self {
        GridFunction::from_fn(grid, |p| u.value(p))
    }

    #[inline]
    pub fn at(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.index(idx[0], idx[1], idx[2])]
    }

    /// Trilinear interpolation, with `p` clamped into the grid box.
    pub fn interpolate(&self, p: Point) -> f64 {
        let mut w = Vec::with_capacity(8);
        self.grid.weights(p.to_array(), &mut w);
        w.iter().map(|&(i, c)| c * self.values[i]).sum()
    }

    /// Interpolate onto another grid.
    pub fn resample(&self, grid: Grid3) -> GridFunction {
        GridFunction::from_fn(grid, |p| self.interpolate(p))
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with header `x1,x2,x3,u` and 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x1", "x2", "x3", "u"])?;
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point_flat(i);
            out.write_record([fmt17(p.x1), fmt17(p.x2), fmt17(p.x3), fmt17(*v)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        GridFunction::read_csv_from(BufReader::new(File::open(path)?))
    }

    /// Read a CSV written by [`GridFunction::write_csv`]; the grid is
    /// recovered from the coordinate columns.
    pub fn read_csv_from<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x1", "x2", "x3", "u"] {
            return Err(Error::InvalidArgument(format!(
                "unexpected CSV header {headers:?}"
            )));
        }
        let mut pts = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad CSV field in {rec:?}")))
            };
            pts.push([parse(0)?, parse(1)?, parse(2)?]);
            values.push(parse(3)?);
        }
        if pts.is_empty() {
            return Err(Error::InvalidArgument("empty grid CSV".into()));
        }
        let mut lower = [0.0; 3];
        let mut n = [0usize; 3];
        let mut h = [0.0; 3];
        for a in 0..3 {
            let mut c: Vec<f64> = pts.iter().map(|p| p[a]).collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            n[a] = c.len();
            lower[a] = c[0];
            h[a] = if c.len() > 1 {
                (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64
            } else {
                0.0
            };
        }
        let grid = Grid3::new(lower, n, h)?;
        if grid.len() != pts.len() {
            return Err(Error::InvalidArgument(
                "CSV rows do not form a full tensor grid".into(),
            ));
        }
        for (i, p) in pts.iter().enumerate() {
            let q = grid.point_flat(i);
            let tol = 1e-9 * (1.0 + q.norm());
            if (0..3).any(|a| (q.to_array()[a] - p[a]).abs() > tol) {
                return Err(Error::InvalidArgument(format!(
                    "CSV row {i} is out of x3-fastest order"
                )));
            }
        }
        GridFunction::new(grid, values)
    }
}

impl FieldSample for GridFunction {
    fn sample(&self, p: Point) -> f64 {
        self.interpolate(p)
    }
}

/// Fixed-width float formatting used for every CSV and report field.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// How [`solve`] iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// BiCGSTAB for linear operators, pseudo-time stepping otherwise.
    #[default]
    Auto,
    PseudoTime,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub op: OperatorSpec,
    pub c: ScalarField,
    pub f: ScalarField,
    pub boundary: ScalarField,
    pub grid: Grid3,
    pub tol: f64,
    pub max_iters: usize,
    pub method: SolverMethod,
}

impl ProblemSpec {
    pub fn new(
        op: OperatorSpec,
        c: ScalarField,
        f: ScalarField,
        boundary: ScalarField,
        grid: Grid3,
    ) -> Self {
        ProblemSpec {
            op,
            c,
            f,
            boundary,
            grid,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            method: SolverMethod::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.op.form != Form::Intrinsic {
            return Err(Error::FormMismatch(
                "the solver discretizes intrinsic operators".into(),
            ));
        }
        for i in 0..self.grid.len() {
            let cv = self.c.value(self.grid.point_flat(i));
            if !(cv >= 0.0) {
                return Err(Error::Precondition(format!("c = {cv} < 0 at node {i}")));
            }
        }
        Ok(())
    }

    /// `τ = 0.4h²/(Λ(4 + c_max h²))`.
    pub fn tau(&self) -> f64 {
        let h = self.grid.h[0].min(self.grid.h[1]);
        let c_max = (0..self.grid.len())
            .map(|i| self.c.value(self.grid.point_flat(i)))
            .fold(0.0, f64::max);
        0.4 * h * h / (self.op.bracket.big_lam * (4.0 + c_max * h * h))
    }
}

const DIRS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (1.0, 1.0),
    (1.0, -1.0),
    (-1.0, 1.0),
    (-1.0, -1.0),
];

/// Sample point `p + h(sx·X(p) + sy·Y(p))`.
fn frame_offset(p: Point, h: f64, sx: f64, sy: f64) -> [f64; 3] {
    let f = frame(p);
    std::array::from_fn(|a| p.to_array()[a] + h * (sx * f.x.0[a] + sy * f.y.0[a]))
}

fn hessian_from_samples(s: &[f64], center: f64, h: f64) -> Sym2 {
    let ih2 = 1.0 / (h * h);
    let hxx = (s[0] - 2.0 * center + s[1]) * ih2;
    let hyy = (s[2] - 2.0 * center + s[3]) * ih2;
    let hxy = if s.len() == 8 {
        (s[4] - s[5] - s[6] + s[7]) * 0.25 * ih2
    } else {
        0.0
    };
    Sym2::new(hxx, hxy, hyy)
}

/// Semi-Lagrangian horizontal Hessian of a bare grid function at an
/// interior node; off-grid samples are clamped into the box.
pub fn stencil_hessian(u: &GridFunction, idx: [usize; 3]) -> Result<Sym2> {
    if (0..3).any(|a| idx[a] >= u.grid.n[a]) || u.grid.is_boundary(idx) {
        return Err(Error::InvalidArgument(format!(
            "{idx:?} is not an interior node"
        )));
    }
    let p = u.grid.point(idx);
    let h = u.grid.h[0].min(u.grid.h[1]);
    let s: Vec<f64> = DIRS
        .iter()
        .map(|&(sx, sy)| u.interpolate(Point::from_array(frame_offset(p, h, sx, sy))))
        .collect();
    Ok(hessian_from_samples(&s, u.at(idx), h))
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    start: u32,
    end: u32,
    constant: f64,
}

/// Precomputed stencil over the interior unknowns of a [`ProblemSpec`].
///
/// Taps into boundary nodes and samples outside the box are folded into
/// per-sample constants, so the interior unknowns form a closed system.
pub struct Discretization {
    grid: Grid3,
    h: f64,
    nsamp: usize,
    interior: Vec<usize>,
    samples: Vec<Sample>,
    taps: Vec<(u32, f64)>,
    c: Vec<f64>,
    f: Vec<f64>,
    boundary: Vec<f64>,
    op: OperatorSpec,
    /// `(a11, a12, a22)` when `F(H) = a11·Hxx + 2a12·Hxy + a22·Hyy`.
    linear: Option<(f64, f64, f64)>,
}

impl Discretization {
    pub fn new(prob: &ProblemSpec) -> Result<Self> {
        prob.validate()?;
        let grid = prob.grid;
        let h = grid.h[0].min(grid.h[1]);
        let linear = match &prob.op.kind {
            OperatorKind::SubLaplacian => Some((1.0, 0.0, 1.0)),
            OperatorKind::TraceLinear(a) => Some((a.a, a.b, a.c)),
            _ => None,
        };
        let nsamp = match linear {
            Some((_, b, _)) if b == 0.0 => 4,
            _ => 8,
        };
        let mut slot = vec![u32::MAX; grid.len()];
        let mut interior = Vec::new();
        let mut boundary = vec![0.0; grid.len()];
        for idx in 0..grid.len() {
            let ijk = grid.unflatten(idx);
            if grid.is_boundary(ijk) {
                boundary[idx] = prob.boundary.value(grid.point(ijk));
            } else {
                slot[idx] = interior.len() as u32;
                interior.push(idx);
            }
        }
        let mut samples = Vec::with_capacity(interior.len() * nsamp);
        let mut taps = Vec::with_capacity(interior.len() * nsamp * 2);
        let mut w = Vec::with_capacity(8);
        let mut c = Vec::with_capacity(interior.len());
        let mut f = Vec::with_capacity(interior.len());
        for &idx in &interior {
            let p = grid.point_flat(idx);
            c.push(prob.c.value(p));
            f.push(prob.f.value(p));
            for &(sx, sy) in &DIRS[..nsamp] {
                let q = frame_offset(p, h, sx, sy);
                let start = taps.len() as u32;
                let mut constant = 0.0;
                if grid.contains(q) {
                    grid.weights(q, &mut w);
                    for &(node, wt) in &w {
                        if slot[node] == u32::MAX {
                            constant += wt * boundary[node];
                        } else {
                            taps.push((slot[node], wt));
                        }
                    }
                } else {
                    constant = prob.boundary.value(Point::from_array(q));
                }
                samples.push(Sample {
                    start,
                    end: taps.len() as u32,
                    constant,
                });
            }
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: interior[i],
                what: "f".into(),
            });
        }
        Ok(Discretization {
            grid,
            h,
            nsamp,
            interior,
            samples,
            taps,
            c,
            f,
            boundary,
            op: prob.op.clone(),
            linear,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.interior.len()
    }

    pub fn is_linear(&self) -> bool {
        self.linear.is_some()
    }

    /// Interior values of a grid function.
    pub fn restrict(&self, u: &GridFunction) -> Vec<f64> {
        self.interior.iter().map(|&i| u.values[i]).collect()
    }

    /// Grid function with the given interior values and the Dirichlet data.
    pub fn extend(&self, x: &[f64]) -> GridFunction {
        let mut values = self.boundary.clone();
        for (s, &idx) in self.interior.iter().enumerate() {
            values[idx] = x[s];
        }
        GridFunction {
            grid: self.grid,
            values,
        }
    }

    #[inline]
    fn sample(&self, s: usize, k: usize, x: &[f64], with_const: bool) -> f64 {
        let smp = self.samples[s * self.nsamp + k];
        let mut v = if with_const { smp.constant } else { 0.0 };
        for &(j, w) in &self.taps[smp.start as usize..smp.end as usize] {
            v += w * x[j as usize];
        }
        v
    }

    /// Discrete horizontal Hessian at interior slot `s`.
    pub fn hessian_at(&self, s: usize, x: &[f64]) -> Sym2 {
        let mut buf = [0.0; 8];
        for (k, b) in buf.iter_mut().enumerate().take(self.nsamp) {
            *b = self.sample(s, k, x, true);
        }
        hessian_from_samples(&buf[..self.nsamp], x[s], self.h)
    }

    /// `F(H) − c·u − f` at slot `s`; with `affine = false` the constant
    /// parts (boundary data and `f`) are dropped, which for linear
    /// operators leaves the matrix-vector product.
    #[inline]
    fn residual_at(&self, s: usize, x: &[f64], affine: bool) -> f64 {
        if let Some((a11, a12, a22)) = self.linear {
            let ih2 = 1.0 / (self.h * self.h);
            let sm = |k: usize| self.sample(s, k, x, affine);
            let mut v = a11 * (sm(0) + sm(1)) + a22 * (sm(2) + sm(3));
            if self.nsamp == 8 {
                v += 0.5 * a12 * (sm(4) - sm(5) - sm(6) + sm(7));
            }
            v = (v - 2.0 * (a11 + a22) * x[s]) * ih2 - self.c[s] * x[s];
            if affine {
                v - self.f[s]
            } else {
                v
            }
        } else {
            let h = self.hessian_at(s, x);
            let fv = self.op.apply_intrinsic(&h).unwrap_or(f64::NAN);
            fv - self.c[s] * x[s] - self.f[s]
        }
    }

    fn map_into(&self, x: &[f64], out: &mut [f64], affine: bool) {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| {
                for (o, r) in chunk.iter_mut().enumerate() {
                    *r = self.residual_at(ci * CHUNK + o, x, affine);
                }
            });
    }

    /// Residual at every interior slot.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; x.len()];
        self.map_into(x, &mut r, true);
        r
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        max_abs(&self.residual(x))
    }

    /// Diagonal of the linear operator.
    fn diagonal(&self) -> Vec<f64> {
        let (a11, a12, a22) = self.linear.expect("diagonal of a nonlinear operator");
        let ih2 = 1.0 / (self.h * self.h);
        let coef = [
            a11,
            a11,
            a22,
            a22,
            0.5 * a12,
            -0.5 * a12,
            -0.5 * a12,
            0.5 * a12,
        ];
        (0..self.unknowns())
            .map(|s| {
                let mut d = -2.0 * (a11 + a22) * ih2 - self.c[s];
                for (k, ck) in coef.iter().enumerate().take(self.nsamp) {
                    let smp = self.samples[s * self.nsamp + k];
                    for &(j, w) in &self.taps[smp.start as usize..smp.end as usize] {
                        if j as usize == s {
                            d += ck * ih2 * w;
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// One explicit pseudo-time step; returns the residual it used.
    pub fn step_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<f64> {
        self.map_into(x, out, true);
        let res = max_abs(out);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = xi + tau * *o;
        }
        if let Some(s) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: self.interior[s],
                what: "pseudo-time step".into(),
            });
        }
        Ok(res)
    }
}

/// Max-norm over a slice; NaN propagates as infinity.
fn max_abs(v: &[f64]) -> f64 {
    v.iter()
        .map(|x| if x.is_nan() { f64::INFINITY } else { x.abs() })
        .fold(0.0, f64::max)
}

/// Chunked dot product with a fixed summation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationKind {
    PseudoTime,
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub tau: f64,
    pub converged: bool,
    pub method: IterationKind,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub u: GridFunction,
    pub diagnostics: SolveDiagnostics,
}

/// Single pseudo-time step on a full grid function.
pub fn step(u: &GridFunction, prob: &ProblemSpec, tau: f64) -> Result<GridFunction> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if u.grid != prob.grid {
        return Err(Error::InvalidArgument(
            "grid function and problem grids differ".into(),
        ));
    }
    let d = Discretization::new(prob)?;
    let x = d.restrict(u);
    let mut out = vec![0.0; x.len()];
    d.step_into(&x, tau, &mut out)?;
    Ok(d.extend(&out))
}

/// Max interior residual of `u`, whose boundary layer is taken from the
/// problem's Dirichlet data.
pub fn residual_norm(u: &GridFunction, prob: &ProblemSpec) -> Result<f64> {
    let d = Discretization::new(prob)?;
    Ok(d.residual_norm(&d.restrict(u)))
}

pub fn solve(prob: &ProblemSpec) -> Result<SolveOutcome> {
    solve_with_guess(prob, None)
}

/// Solve starting from `guess` (resampled onto the problem grid when it
/// lives on another one), or from zero interior values.
pub fn solve_with_guess(prob: &ProblemSpec, guess: Option<&GridFunction>) -> Result<SolveOutcome> {
    let d = Discretization::new(prob)?;
    let tau = prob.tau();
    let x0 = match guess {
        Some(g) if g.grid == prob.grid => d.restrict(g),
        Some(g) => d.restrict(&g.resample(prob.grid)),
        None => vec![0.0; d.unknowns()],
    };
    let use_krylov = d.is_linear() && prob.method == SolverMethod::Auto;
    let (x, iterations, residual) = if use_krylov {
        bicgstab(&d, x0, prob.tol, prob.max_iters)?
    } else {
        pseudo_time(&d, x0, tau, prob.tol, prob.max_iters)?
    };
    let diagnostics = SolveDiagnostics {
        iterations,
        residual,
        tau,
        converged: residual < prob.tol,
        method: if use_krylov {
            IterationKind::Bicgstab
        } else {
            IterationKind::PseudoTime
        },
    };
    Ok(SolveOutcome {
        u: d.extend(&x),
        diagnostics,
    })
}

fn pseudo_time(
    d: &Discretization,
    mut x: Vec<f64>,
    tau: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let mut next = vec![0.0; x.len()];
    for it in 0..max_iters {
        let res = d.step_into(&x, tau, &mut next)?;
        if res < tol {
            return Ok((x, it, res));
        }
        std::mem::swap(&mut x, &mut next);
    }
    let res = d.residual_norm(&x);
    Ok((x, max_iters, res))
}

/// Right-preconditioned BiCGSTAB on `A x = −k`, where the residual is
/// `A x + k`; restarts from the true residual whenever the recursive one
/// claims convergence but the true one disagrees.
fn bicgstab(
    d: &Discretization,
    mut x: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = x.len();
    let inv_diag: Vec<f64> = d.diagonal().iter().map(|v| 1.0 / v).collect();
    let apply = |v: &[f64], out: &mut [f64]| d.map_into(v, out, false);
    let precond = |v: &[f64], out: &mut [f64]| {
        for ((o, a), m) in out.iter_mut().zip(v).zip(&inv_diag) {
            *o = a * m;
        }
    };
    let mut iters = 0;
    let (mut p, mut v, mut y, mut z, mut t, mut s) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    loop {
        // r = b − A x with b = −k, i.e. r = −residual(x).
        let mut r: Vec<f64> = d.residual(&x).iter().map(|v| -v).collect();
        let true_res = max_abs(&r);
        if true_res < tol || iters >= max_iters {
            return Ok((x, iters, true_res));
        }
        if !true_res.is_finite() {
            return Err(Error::NonFinite {
                node: 0,
                what: "Krylov residual".into(),
            });
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        let restart_at = iters + 2000;
        while iters < max_iters && iters < restart_at {
            iters += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond(&p, &mut y);
            apply(&y, &mut v);
            let denom = dot(&r_hat, &v);
            if denom == 0.0 {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
                x[i] += alpha * y[i];
            }
            if max_abs(&s) < 0.25 * tol {
                break;
            }
            precond(&s, &mut z);
            apply(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
            for i in 0..n {
                x[i] += omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if max_abs(&r) < 0.25 * tol {
                break;
            }
        }
    }
}

/// Right-hand side making `u_star` an exact solution:
/// `f(p) = F(u_star at p) − c(p)·u_star(p)`.
pub fn manufacture(
    u_star: &ScalarField,
    op: &OperatorSpec,
    c: &ScalarField,
) -> Result<ScalarField> {
    let poly = u_star
        .as_polynomial()
        .ok_or_else(|| Error::Derivative("manufacture needs a polynomial u*".into()))?
        .clone();
    let c = c.clone();
    let op = op.clone();
    // Evaluate once so form mismatches surface here rather than as NaN.
    op.eval(u_star, Point::ORIGIN)?;
    match op.form {
        Form::Intrinsic => {
            let hd = HorizontalDerivatives::of(&poly);
            Ok(ScalarField::from_fn(move |p| {
                op.apply_intrinsic(&hd.hessian(p)).unwrap_or(f64::NAN) - c.value(p) * poly.eval(p)
            }))
        }
        Form::Lifted => {
            let second: Vec<_> = (0..3)
                .flat_map(|i| (i..3).map(move |j| (i, j)))
                .map(|(i, j)| poly.partial(i).partial(j))
                .collect();
            Ok(ScalarField::from_fn(move |p| {
                let mut e = [0.0; 6];
                for (k, q) in second.iter().enumerate() {
                    e[k] = q.eval(p);
                }
                let m = Sym3(e).congruence(&sqrt_p(p));
                op.apply_lifted(&m).unwrap_or(f64::NAN) - c.value(p) * poly.eval(p)
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcalculus::{h_hessian, Polynomial};
    use crate::hoperators::{EllipticityBracket, OperatorKind};

    fn poly(s: &str) -> ScalarField {
        ScalarField::polynomial(Polynomial::parse(s).unwrap())
    }

    fn lap_problem(u_star: &str, n: usize) -> (ProblemSpec, ScalarField) {
        let u = poly(u_star);
        let op = OperatorSpec::sublaplacian();
        let c = ScalarField::constant(1.0);
        let f = manufacture(&u, &op, &c).unwrap();
        (
            ProblemSpec::new(op, c, f, u.clone(), Grid3::cube(-1.0, 1.0, n).unwrap()),
            u,
        )
    }

    #[test]
    fn grid_index_round_trip() {
        let g = Grid3::new([0.0, 1.0, -2.0], [4, 5, 6], [0.5, 0.25, 0.1]).unwrap();
        for idx in 0..g.len() {
            let ijk = g.unflatten(idx);
            assert_eq!(g.index(ijk[0], ijk[1], ijk[2]), idx);
        }
        assert_eq!(g.index(0, 0, 1), 1);
        assert!(Grid3::new([0.0; 3], [2, 3, 3], [1.0; 3]).is_err());
        assert!(Grid3::new([0.0; 3], [3, 3, 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_trilinear_data() {
        let g = Grid3::cube(-1.0, 1.0, 5).unwrap();
        let u = GridFunction::from_fn(g, |p| 1.0 + 2.0 * p.x1 - p.x2 + 0.5 * p.x3 + p.x1 * p.x3);
        let p = Point::new(0.13, -0.77, 0.41);
        let exact = 1.0 + 0.26 + 0.77 + 0.205 + 0.13 * 0.41;
        assert!((u.interpolate(p) - exact).abs() < 1e-14);
        // Clamped outside the box.
        assert_eq!(
            u.interpolate(Point::new(5.0, 0.0, 0.0)),
            u.interpolate(Point::new(1.0, 0.0, 0.0))
        );
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid3::new([-1.0, 0.0, 0.5], [3, 4, 5], [0.5, 0.1, 0.3]).unwrap();
        let u = GridFunction::from_fn(g, |p| (p.x1 * 3.0 + p.x2).sin() + p.x3 / 7.0);
        let mut buf = Vec::new();
        u.write_csv_to(&mut buf).unwrap();
        let back = GridFunction::read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back.values, u.values);
        assert_eq!(back.grid.n, g.n);
        assert!((back.grid.h[1] - 0.1).abs() < 1e-15);
        assert!(GridFunction::read_csv_from("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn stencil_examples() {
        let g = Grid3::cube(-1.0, 1.0, 33).unwrap();
        let q = GridFunction::from_fn(g, |p| p.x1 * p.x1 + p.x2 * p.x2);
        let h = stencil_hessian(&q, [16, 12, 20]).unwrap();
        assert!((h - Sym2::diag(2.0, 2.0)).max_abs() < 1e-10);
        let lin = GridFunction::from_fn(g, |p| 3.0 * p.x1 - p.x2 + 0.25 * p.x3 + 1.0);
        assert!(stencil_hessian(&lin, [10, 20, 5]).unwrap().max_abs() < 1e-10);
        assert!(stencil_hessian(&lin, [0, 20, 5]).is_err());
        assert!(stencil_hessian(&lin, [40, 20, 5]).is_err());
    }

    #[test]
    fn vertical_coordinate_stencil_is_small() {
        // Linear in x3, so the frame-aligned stencil is exact away from clamping.
        let g = Grid3::cube(-1.0, 1.0, 17).unwrap();
        let u = GridFunction::from_fn(g, |p| p.x3);
        let h = stencil_hessian(&u, [8, 8, 8]).unwrap();
        assert!(h.max_abs() < 1e-10);
    }

    #[test]
    fn stencil_converges_for_polynomials_affine_in_x3() {
        let u = poly("x1^4 - 2 x1^2 x2^2 + x2^3 + x1 x2 x3 + x1^3 x3");
        let p = Point::new(0.25, -0.25, 0.125);
        let exact = h_hessian(&u, p).unwrap();
        let err = |n: usize| {
            let g = Grid3::cube(-1.0, 1.0, n).unwrap();
            let gf = GridFunction::sample_field(g, &u);
            let h = g.h[0];
            let idx = [
                ((p.x1 + 1.0) / h).round() as usize,
                ((p.x2 + 1.0) / h).round() as usize,
                ((p.x3 + 1.0) / h).round() as usize,
            ];
            (stencil_hessian(&gf, idx).unwrap() - exact).max_abs()
        };
        let (e1, e2) = (err(17), err(33));
        assert!((e1 / e2).log2() >= 1.5, "errors {e1} {e2}");
    }

    #[test]
    fn manufacture_examples() {
        let op = OperatorSpec::sublaplacian();
        let one = ScalarField::constant(1.0);
        let f = manufacture(&poly("x1^2 + x2^2"), &op, &one).unwrap();
        let p = Point::new(0.5, -0.25, 3.0);
        assert!((f.value(p) - (4.0 - 0.25 - 0.0625)).abs() < 1e-14);
        let z = manufacture(&poly("0"), &op, &one).unwrap();
        assert_eq!(z.value(p), 0.0);
        assert!(manufacture(&ScalarField::from_fn(|p| p.x1), &op, &one).is_err());
    }

    #[test]
    fn zero_problem_has_zero_solution() {
        let z = ScalarField::constant(0.0);
        let prob = ProblemSpec::new(
            OperatorSpec::sublaplacian(),
            ScalarField::constant(1.0),
            z.clone(),
            z,
            Grid3::cube(-1.0, 1.0, 9).unwrap(),
        );
        let out = solve(&prob).unwrap();
        assert!(out.diagnostics.converged);
        assert!(out.u.values.iter().all(|v| *v == 0.0));
        assert_eq!(residual_norm(&out.u, &prob).unwrap(), 0.0);
    }

    #[test]
    fn residual_zero_is_fixed_point() {
        let (prob, _) = lap_problem("x1^2 + x2^2", 9);
        let out = solve(&prob).unwrap();
        let tau = prob.tau();
        let v = step(&out.u, &prob, tau).unwrap();
        assert!(v.max_abs_diff(&out.u) <= tau * prob.tol);
        assert!(step(&out.u, &prob, 0.0).is_err());
    }

    #[test]
    fn manufactured_quadratic_is_reproduced() {
        let (prob, u) = lap_problem("x1^2 + x2^2", 17);
        let out = solve(&prob).unwrap();
        assert!(out.diagnostics.converged);
        let exact = GridFunction::sample_field(prob.grid, &u);
        assert!(out.u.max_abs_diff(&exact) < 1e-5);
    }

    #[test]
    fn pseudo_time_residual_is_monotone() {
        let (mut prob, _) = lap_problem("x1^4 + x2^4 + x1 x2 x3", 9);
        prob.method = SolverMethod::PseudoTime;
        let d = Discretization::new(&prob).unwrap();
        let tau = prob.tau();
        let mut x = vec![0.0; d.unknowns()];
        let mut next = x.clone();
        let mut prev = f64::INFINITY;
        for it in 0..500 {
            let r = d.step_into(&x, tau, &mut next).unwrap();
            if it >= 10 {
                assert!(r <= prev * (1.0 + 1e-12), "iteration {it}: {r} > {prev}");
            }
            prev = r;
            std::mem::swap(&mut x, &mut next);
        }
    }

    #[test]
    fn large_c_contracts() {
        // v = u + τ(−cu − f) with τc ≤ 1 contracts toward −f/c.
        let prob = ProblemSpec::new(
            OperatorSpec::sublaplacian(),
            ScalarField::constant(1e4),
            ScalarField::constant(2.0),
            ScalarField::constant(-2e-4),
            Grid3::cube(-1.0, 1.0, 5).unwrap(),
        );
        let tau = prob.tau();
        assert!(tau * 1e4 <= 1.0);
        let g = GridFunction::from_fn(prob.grid, |_| 1.0);
        let v = step(&g, &prob, tau).unwrap();
        let target = -2e-4;
        let d0 = (g.values[g.grid.index(2, 2, 2)] - target).abs();
        let d1 = (v.values[v.grid.index(2, 2, 2)] - target).abs();
        assert!(d1 < d0);
    }

    #[test]
    fn pucci_with_equal_constants_matches_sublaplacian() {
        let (lap, _) = lap_problem("x1^4 + x2^4 + x1 x2 x3", 9);
        let mut lap = lap;
        lap.tol = 1e-11;
        let mut pucci = lap.clone();
        pucci.op = OperatorSpec::new(
            OperatorKind::PucciPlus,
            EllipticityBracket::UNIT,
            Form::Intrinsic,
        );
        let a = solve(&lap).unwrap();
        let b = solve(&pucci).unwrap();
        assert!(a.diagnostics.converged && b.diagnostics.converged);
        assert_eq!(b.diagnostics.method, IterationKind::PseudoTime);
        assert!(a.u.max_abs_diff(&b.u) < 1e-8, "{}", a.u.max_abs_diff(&b.u));
    }

    #[test]
    fn vertical_coordinate_is_sublaplacian_harmonic() {
        let z = ScalarField::constant(0.0);
        let prob = ProblemSpec::new(
            OperatorSpec::sublaplacian(),
            z.clone(),
            z,
            poly("x3"),
            Grid3::cube(-1.0, 1.0, 17).unwrap(),
        );
        let out = solve(&prob).unwrap();
        let exact = GridFunction::sample_field(prob.grid, &poly("x3"));
        assert!(out.u.max_abs_diff(&exact) <= 10.0 * prob.tol);
    }

    #[test]
    fn comparison_principle() {
        let grid = Grid3::cube(-1.0, 1.0, 9).unwrap();
        let c = ScalarField::constant(1.0);
        let mk = |f: &str, g: &str| {
            let mut p = ProblemSpec::new(
                OperatorSpec::sublaplacian(),
                c.clone(),
                poly(f),
                poly(g),
                grid,
            );
            p.tol = 1e-9;
            solve(&p).unwrap().u
        };
        let u1 = mk("1 + x1^2", "x3 - 1");
        let u2 = mk("x1^2 - 0.5", "x3 + x2^2");
        assert!(u1
            .values
            .iter()
            .zip(&u2.values)
            .all(|(a, b)| *a <= b + 1e-8));
    }

    #[test]
    fn flagged_non_convergence() {
        let (mut prob, _) = lap_problem("x1^4 + x2^4", 9);
        prob.max_iters = 1;
        let out = solve(&prob).unwrap();
        assert!(!out.diagnostics.converged);
        prob.method = SolverMethod::PseudoTime;
        assert!(!solve(&prob).unwrap().diagnostics.converged);
    }

    #[test]
    fn problem_validation() {
        let (mut prob, _) = lap_problem("x1", 5);
        prob.c = poly("x1");
        assert!(matches!(solve(&prob), Err(Error::Precondition(_))));
        let (mut prob, _) = lap_problem("x1", 5);
        prob.tol = 0.0;
        assert!(solve(&prob).is_err());
    }
}
