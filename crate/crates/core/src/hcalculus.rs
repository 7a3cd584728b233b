//! Horizontal differential calculus on ℍ¹.
//!
//! A [`ScalarField`] pairs an evaluation map with a derivative provider:
//! polynomials differentiate exactly (and compose the frame fields
//! symbolically), anything else falls back to centered finite differences.
//! Keeping both routes lets every identity be checked against an independent
//! computation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::hgroup::{frame, p_matrix, Point};
use crate::linalg::{Sym2, Sym3, Vec2};
use crate::{Error, Result};

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Real polynomial in `x1, x2, x3`, keyed by exponent triple.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<[u32; 3], f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::monomial(c, [0, 0, 0])
    }

    pub fn monomial(c: f64, exps: [u32; 3]) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(c, exps);
        p
    }

    /// The coordinate function `x_{axis+1}`.
    pub fn coordinate(axis: usize) -> Self {
        let mut e = [0; 3];
        e[axis] = 1;
        Polynomial::monomial(1.0, e)
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (f64, [u32; 3])>) -> Self {
        let mut p = Polynomial::zero();
        for (c, e) in terms {
            p.add_term(c, e);
        }
        p
    }

    pub fn add_term(&mut self, c: f64, exps: [u32; 3]) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(exps).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&exps);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, [u32; 3])> + '_ {
        self.terms.iter().map(|(e, c)| (*c, *e))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e[0] + e[1] + e[2])
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, p: Point) -> f64 {
        let x = p.to_array();
        self.terms
            .iter()
            .map(|(e, c)| {
                c * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32)
            })
            .sum()
    }

    /// Exact partial derivative along coordinate `axis` (0-based).
    pub fn partial(&self, axis: usize) -> Polynomial {
        let mut out = Polynomial::zero();
        for (e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut ne = *e;
            ne[axis] -= 1;
            out.add_term(c * f64::from(e[axis]), ne);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.terms().map(|(c, e)| (c * s, e)))
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (c, e) in other.terms() {
            out.add_term(c, e);
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    /// Multiply by the monomial `c · x^exps`.
    pub fn mul_monomial(&self, c: f64, exps: [u32; 3]) -> Polynomial {
        Polynomial::from_terms(
            self.terms()
                .map(|(k, e)| (k * c, [e[0] + exps[0], e[1] + exps[1], e[2] + exps[2]])),
        )
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (c, e) in other.terms() {
            out = out.add(&self.mul_monomial(c, e));
        }
        out
    }

    /// `Xu = ∂1u + 2x2 ∂3u`.
    pub fn apply_x(&self) -> Polynomial {
        self.partial(0)
            .add(&self.partial(2).mul_monomial(2.0, [0, 1, 0]))
    }

    /// `Yu = ∂2u − 2x1 ∂3u`.
    pub fn apply_y(&self) -> Polynomial {
        self.partial(1)
            .add(&self.partial(2).mul_monomial(-2.0, [1, 0, 0]))
    }

    /// `Tu = ∂3u`.
    pub fn apply_t(&self) -> Polynomial {
        self.partial(2)
    }

    /// `u ∘ δ_λ`.
    pub fn compose_dilation(&self, lam: f64) -> Polynomial {
        Polynomial::from_terms(
            self.terms()
                .map(|(c, e)| (c * lam.powi((e[0] + e[1] + 2 * e[2]) as i32), e)),
        )
    }

    /// Parse the text form `c * x1^a x2^b x3^d + ...`.
    ///
    /// Factors inside a term may be separated by `*` or whitespace; a term
    /// without a numeric factor has coefficient one.
    pub fn parse(src: &str) -> Result<Polynomial> {
        Parser {
            src: src.as_bytes(),
            pos: 0,
        }
        .polynomial()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            match (i, *c < 0.0) {
                (0, true) => write!(f, "-{mag}")?,
                (0, false) => write!(f, "{mag}")?,
                (_, true) => write!(f, " - {mag}")?,
                (_, false) => write!(f, " + {mag}")?,
            }
            for (axis, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, " * x{}", axis + 1)?,
                    _ => write!(f, " * x{}^{k}", axis + 1)?,
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Polynomial {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Polynomial::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn polynomial(&mut self) -> Result<Polynomial> {
        let mut out = Polynomial::zero();
        self.skip_ws();
        if self.peek().is_none() {
            return self.err("empty polynomial");
        }
        let mut sign = 1.0;
        if let Some(b @ (b'+' | b'-')) = self.peek() {
            sign = if b == b'-' { -1.0 } else { 1.0 };
            self.pos += 1;
        }
        loop {
            let (c, e) = self.term()?;
            out.add_term(sign * c, e);
            self.skip_ws();
            match self.peek() {
                None => return Ok(out),
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(b) => return self.err(format!("expected '+' or '-', found '{}'", b as char)),
            }
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<(f64, [u32; 3])> {
        let mut coeff = 1.0;
        let mut exps = [0u32; 3];
        let mut factors = 0;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b) if b.is_ascii_digit() || b == b'.' => coeff *= self.number()?,
                Some(b'x') => {
                    let (axis, k) = self.variable()?;
                    exps[axis] += k;
                }
                _ => break,
            }
            factors += 1;
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.pos += 1;
            }
        }
        if factors == 0 {
            return self.err("expected a coefficient or variable");
        }
        Ok((coeff, exps))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            let exp_sign = (b == b'+' || b == b'-')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E');
            if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("malformed number '{text}'"))
            }
        }
    }

    fn variable(&mut self) -> Result<(usize, u32)> {
        self.pos += 1;
        let axis = match self.peek() {
            Some(b'1') => 0,
            Some(b'2') => 1,
            Some(b'3') => 2,
            _ => return self.err("variable must be x1, x2 or x3"),
        };
        self.pos += 1;
        self.skip_ws();
        if self.peek() != Some(b'^') {
            return Ok((axis, 1));
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<u32>() {
            Ok(k) => Ok((axis, k)),
            Err(_) => self.err("exponent must be a nonnegative integer"),
        }
    }
}

/// How a field supplies derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provider {
    /// Symbolic differentiation; only polynomial fields support it.
    Exact,
    /// Centered differences with step `h`.
    FiniteDifference { h: f64 },
}

type FieldFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    Polynomial(Polynomial),
    Function(FieldFn),
}

/// A real function on ℝ³ together with its derivative provider.
#[derive(Clone)]
pub struct ScalarField {
    source: Source,
    provider: Provider,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Source::Polynomial(p) => write!(f, "ScalarField({p}, {:?})", self.provider),
            Source::Function(_) => write!(f, "ScalarField(<fn>, {:?})", self.provider),
        }
    }
}

impl From<Polynomial> for ScalarField {
    fn from(p: Polynomial) -> Self {
        ScalarField::polynomial(p)
    }
}

impl ScalarField {
    /// Polynomial field with exact derivatives.
    pub fn polynomial(p: Polynomial) -> Self {
        ScalarField {
            source: Source::Polynomial(p),
            provider: Provider::Exact,
        }
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::polynomial(Polynomial::constant(c))
    }

    /// Arbitrary function; derivatives by centered differences.
    pub fn from_fn(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            source: Source::Function(Arc::new(f)),
            provider: Provider::FiniteDifference { h: DEFAULT_FD_STEP },
        }
    }

    pub fn with_provider(mut self, provider: Provider) -> Self {
        self.provider = provider;
        self
    }

    pub fn provider(&self) -> Provider {
        self.provider
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.source {
            Source::Polynomial(p) => Some(p),
            Source::Function(_) => None,
        }
    }

    #[inline]
    pub fn value(&self, p: Point) -> f64 {
        match &self.source {
            Source::Polynomial(poly) => poly.eval(p),
            Source::Function(f) => f(p),
        }
    }

    fn exact_poly(&self) -> Result<&Polynomial> {
        self.as_polynomial()
            .ok_or_else(|| Error::Derivative("exact derivatives need a polynomial field".into()))
    }

    fn fd_step(&self) -> Result<f64> {
        match self.provider {
            Provider::FiniteDifference { h } if h > 0.0 && h.is_finite() => Ok(h),
            Provider::FiniteDifference { h } => Err(Error::Derivative(format!(
                "finite-difference step must be positive, got {h}"
            ))),
            Provider::Exact => unreachable!("fd_step called for exact provider"),
        }
    }

    /// Classical gradient.
    pub fn gradient(&self, p: Point) -> Result<[f64; 3]> {
        let g = match self.provider {
            Provider::Exact => {
                let poly = self.exact_poly()?;
                std::array::from_fn(|i| poly.partial(i).eval(p))
            }
            Provider::FiniteDifference { .. } => {
                let h = self.fd_step()?;
                let x = p.to_array();
                std::array::from_fn(|i| {
                    let mut a = x;
                    let mut b = x;
                    a[i] += h;
                    b[i] -= h;
                    (self.value(Point::from_array(a)) - self.value(Point::from_array(b)))
                        / (2.0 * h)
                })
            }
        };
        finite3(g, "gradient")
    }

    /// Classical 3×3 Hessian.
    pub fn hessian(&self, p: Point) -> Result<Sym3> {
        let h = match self.provider {
            Provider::Exact => {
                let poly = self.exact_poly()?;
                let first: [Polynomial; 3] = std::array::from_fn(|i| poly.partial(i));
                Sym3::from_fn(|i, j| first[i].partial(j).eval(p))
            }
            Provider::FiniteDifference { .. } => {
                let step = self.fd_step()?;
                let x = p.to_array();
                let at =
                    |di: [f64; 3]| self.value(Point::new(x[0] + di[0], x[1] + di[1], x[2] + di[2]));
                let e = |i: usize, s: f64| {
                    let mut v = [0.0; 3];
                    v[i] = s;
                    v
                };
                let center = self.value(p);
                Sym3::from_fn(|i, j| {
                    if i == j {
                        (at(e(i, step)) - 2.0 * center + at(e(i, -step))) / (step * step)
                    } else {
                        let d = |si: f64, sj: f64| {
                            let mut v = e(i, si * step);
                            v[j] = sj * step;
                            at(v)
                        };
                        (d(1.0, 1.0) - d(1.0, -1.0) - d(-1.0, 1.0) + d(-1.0, -1.0))
                            / (4.0 * step * step)
                    }
                })
            }
        };
        if !h.is_finite() {
            return Err(Error::Derivative(format!("non-finite Hessian at {p:?}")));
        }
        Ok(h)
    }
}

fn finite3(g: [f64; 3], what: &str) -> Result<[f64; 3]> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::Derivative(format!("non-finite {what}")))
    }
}

/// Symbolic horizontal derivatives of a polynomial, composed field by field.
#[derive(Debug, Clone)]
pub struct HorizontalDerivatives {
    pub xu: Polynomial,
    pub yu: Polynomial,
    pub xxu: Polynomial,
    pub yyu: Polynomial,
    pub xyu: Polynomial,
    pub yxu: Polynomial,
}

impl HorizontalDerivatives {
    pub fn of(u: &Polynomial) -> Self {
        let xu = u.apply_x();
        let yu = u.apply_y();
        HorizontalDerivatives {
            xxu: xu.apply_x(),
            yyu: yu.apply_y(),
            xyu: yu.apply_x(),
            yxu: xu.apply_y(),
            xu,
            yu,
        }
    }

    pub fn hessian(&self, p: Point) -> Sym2 {
        Sym2::new(
            self.xxu.eval(p),
            0.5 * (self.xyu.eval(p) + self.yxu.eval(p)),
            self.yyu.eval(p),
        )
    }

    /// `[X, Y]u = XYu − YXu`, as a polynomial.
    pub fn commutator(&self) -> Polynomial {
        self.xyu.sub(&self.yxu)
    }
}

/// Intrinsic gradient `(Xu, Yu)`.
pub fn h_gradient(u: &ScalarField, p: Point) -> Result<Vec2> {
    if u.provider() == Provider::Exact {
        let poly = u.exact_poly()?;
        return Ok(Vec2([poly.apply_x().eval(p), poly.apply_y().eval(p)]));
    }
    let g = u.gradient(p)?;
    Ok(Vec2([g[0] + 2.0 * p.x2 * g[2], g[1] - 2.0 * p.x1 * g[2]]))
}

/// Symmetrized horizontal Hessian `[[X²u, (XY+YX)u/2], [·, Y²u]]`.
///
/// Polynomial fields compose `X` and `Y` symbolically; finite-difference
/// fields go through the classical Hessian and [`lift`].
pub fn h_hessian(u: &ScalarField, p: Point) -> Result<Sym2> {
    match u.provider() {
        Provider::Exact => Ok(HorizontalDerivatives::of(u.exact_poly()?).hessian(p)),
        Provider::FiniteDifference { .. } => Ok(lift(&u.hessian(p)?, p)),
    }
}

/// Compress a 3×3 symmetric matrix onto the horizontal frame at `p`.
pub fn lift(a: &Sym3, p: Point) -> Sym2 {
    let f = frame(p);
    Sym2::new(a.quad(&f.x), a.bilinear(&f.x, &f.y), a.quad(&f.y))
}

pub fn full_hessian(u: &ScalarField, p: Point) -> Result<Sym3> {
    u.hessian(p)
}

/// Sub-Laplacian `X²u + Y²u`.
pub fn sublaplacian(u: &ScalarField, p: Point) -> Result<f64> {
    Ok(h_hessian(u, p)?.trace())
}

/// `trace(P(p) D²u(p))`, the second route to the sub-Laplacian.
pub fn sublaplacian_via_p(u: &ScalarField, p: Point) -> Result<f64> {
    Ok(p_matrix(p).mul_sym(&u.hessian(p)?).trace())
}
