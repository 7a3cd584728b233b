//! Seeded randomized property suite.
//!
//! Each check draws its trials from `trial_rng(seed, id, i)`, measures a
//! gap (positive means a violation, scaled to be comparable with the
//! check's tolerance) and reports the worst one. Trials run in parallel
//! and reduce with `max`, so reports do not depend on thread count.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::hcalculus::{
    full_hessian, h_hessian, lift, sublaplacian, sublaplacian_via_p, HorizontalDerivatives,
    Polynomial, ScalarField,
};
use crate::hgroup::{dilate, frame, group_inv, group_mul, p_kernel, p_matrix, sqrt_p, Point};
use crate::hoperators::{
    eval_intrinsic, eval_lifted, validate_operator, EllipticityBracket, Form, OperatorKind,
    OperatorSpec,
};
use crate::linalg::{Sym2, Sym3, Vec3};
use crate::rng::{log_uniform, rotated_diag3, sym2, trial_rng, uniform_point, unit_vec3, SuiteRng};
use crate::sumslab::{
    block_gap, block_matrix, lifted_trace_gap, make_admissible_pair, n_matrix, n_norm_bound,
    penalty_hessian, penalty_hessian_sq, penalty_value, psd_sandwich_check, sqrtp_ratio, trace_gap,
    vertical_obstruction_check, PenaltyParams,
};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    #[serde(rename = "lemma-id")]
    pub lemma_id: String,
    pub module: String,
    pub trials: u64,
    #[serde(rename = "worst-gap")]
    pub worst_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub type PucciFn = fn(&Sym2, &EllipticityBracket) -> f64;

/// The implementations under test. Swapping them lets a test confirm that
/// the suite catches a broken operator.
#[derive(Clone, Copy)]
pub struct Suite {
    pub pucci_plus: PucciFn,
    pub pucci_minus: PucciFn,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            pucci_plus: crate::hoperators::pucci_plus,
            pucci_minus: crate::hoperators::pucci_minus,
        }
    }
}

type CheckFn = fn(&Suite, u64) -> CheckReport;

/// A named check.
pub struct Check {
    pub id: &'static str,
    pub module: &'static str,
    run: CheckFn,
}

impl Check {
    pub fn run(&self, suite: &Suite, seed: u64) -> CheckReport {
        (self.run)(suite, seed)
    }
}

/// Every check, in report order.
pub fn checks() -> Vec<Check> {
    macro_rules! c {
        ($id:literal, $m:literal, $f:path) => {
            Check {
                id: $id,
                module: $m,
                run: $f,
            }
        };
    }
    vec![
        c!("group-law", "hgroup", group_law),
        c!("sqrt-p-squares-to-p", "hgroup", sqrt_p_squares),
        c!("p-kernel", "hgroup", p_kernel_exact),
        c!("frame-difference-vertical", "hgroup", frame_difference),
        c!("commutator", "hcalculus", commutator),
        c!("quadratic-form", "hcalculus", quadratic_form),
        c!("sublaplacian-routes", "hcalculus", sublaplacian_routes),
        c!("dilation-homogeneity", "hcalculus", dilation_homogeneity),
        c!("pucci-brute-force", "hoperators", pucci_brute_force),
        c!("pucci-duality", "hoperators", pucci_duality),
        c!("pucci-extremality", "hoperators", pucci_extremality),
        c!("ellipticity-bracket", "hoperators", ellipticity_bracket),
        c!(
            "lifted-intrinsic-trace",
            "hoperators",
            lifted_intrinsic_trace
        ),
        c!("penalty-hessian-fd", "sumslab", penalty_fd),
        c!("penalty-square", "sumslab", penalty_square),
        c!("block-square-factor", "sumslab", block_square_factor),
        c!("n-norm-bound", "sumslab", n_norm),
        c!("admissible-pairs", "sumslab", admissible_pairs),
        c!(
            "block-scalar-consequence",
            "sumslab",
            block_scalar_consequence
        ),
        c!("trace-gap", "sumslab", trace_gap_check),
        c!("lifted-trace-gap", "sumslab", lifted_trace_gap_check),
        c!("psd-sandwich", "sumslab", psd_sandwich),
        c!("sqrtp-ratio", "sumslab", sqrtp_ratio_check),
        c!("vertical-obstruction", "sumslab", vertical_obstruction),
    ]
}

/// Run every check whose module equals `filter` or whose id contains it.
pub fn run_suite(filter: Option<&str>, seed: u64, suite: &Suite) -> Vec<CheckReport> {
    checks()
        .iter()
        .filter(|c| filter.map_or(true, |f| c.module == f || c.id.contains(f)))
        .map(|c| c.run(suite, seed))
        .collect()
}

/// Run one check by exact id.
pub fn run_check(id: &str, seed: u64, suite: &Suite) -> Option<CheckReport> {
    checks()
        .iter()
        .find(|c| c.id == id)
        .map(|c| c.run(suite, seed))
}

fn nan_to_inf(g: f64) -> f64 {
    if g.is_nan() {
        f64::INFINITY
    } else {
        g
    }
}

/// Worst gap over `trials` independent trials.
fn worst<F>(id: &str, seed: u64, trials: u64, f: F) -> f64
where
    F: Fn(&mut SuiteRng) -> f64 + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| nan_to_inf(f(&mut trial_rng(seed, id, i))))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn report(id: &str, module: &str, trials: u64, worst_gap: f64, tolerance: f64) -> CheckReport {
    CheckReport {
        lemma_id: id.to_string(),
        module: module.to_string(),
        trials,
        worst_gap,
        tolerance,
        pass: worst_gap <= tolerance,
        note: None,
    }
}

fn random_poly(rng: &mut SuiteRng, max_degree: u32) -> Polynomial {
    let terms = rng.gen_range(1..=10);
    Polynomial::from_terms((0..terms).map(|_| {
        let a = rng.gen_range(0..=max_degree);
        let b = rng.gen_range(0..=max_degree - a);
        let d = rng.gen_range(0..=max_degree - a - b);
        (rng.gen_range(-3.0..3.0), [a, b, d])
    }))
}

fn group_law(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("group-law", seed, 10_000, |rng| {
        let (a, b, c) = (
            uniform_point(rng, 10.0),
            uniform_point(rng, 10.0),
            uniform_point(rng, 10.0),
        );
        let l = group_mul(group_mul(a, b), c);
        let r = group_mul(a, group_mul(b, c));
        let id = group_mul(a, group_inv(a));
        (l.dist(&r) + id.norm()) / (1.0 + l.norm())
    });
    report("group-law", "hgroup", 10_000, gap, 1e-12)
}

fn sqrt_p_squares(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("sqrt-p-squares-to-p", seed, 10_000, |rng| {
        let p = uniform_point(rng, 1e3);
        let pm = p_matrix(p);
        (sqrt_p(p).square() - pm).max_abs() / pm.max_abs()
    });
    report("sqrt-p-squares-to-p", "hgroup", 10_000, gap, 1e-10)
}

fn p_kernel_exact(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("p-kernel", seed, 10_000, |rng| {
        let p = uniform_point(rng, 1e3);
        p_matrix(p).mul_vec(&p_kernel(p)).norm()
    });
    report("p-kernel", "hgroup", 10_000, gap, 0.0)
}

fn frame_difference(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("frame-difference-vertical", seed, 10_000, |rng| {
        let (x, y) = (uniform_point(rng, 100.0), uniform_point(rng, 100.0));
        let (fx, fy) = (frame(x), frame(y));
        let dx = fx.x - fy.x - Vec3::new(0.0, 0.0, 2.0 * (x.x2 - y.x2));
        let dy = fx.y - fy.y - Vec3::new(0.0, 0.0, 2.0 * (y.x1 - x.x1));
        dx.norm() + dy.norm()
    });
    report("frame-difference-vertical", "hgroup", 10_000, gap, 0.0)
}

/// Like [`random_poly`] but with coefficients in `2⁻³ℤ`, so every product
/// and sum formed by the frame fields is exact in floating point.
fn random_dyadic_poly(rng: &mut SuiteRng, max_degree: u32) -> Polynomial {
    let u = random_poly(rng, max_degree);
    Polynomial::from_terms(u.terms().map(|(c, e)| ((c * 8.0).round() / 8.0, e)))
}

fn commutator(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("commutator", seed, 100, |rng| {
        let u = random_dyadic_poly(rng, 6);
        let diff = HorizontalDerivatives::of(&u)
            .commutator()
            .sub(&u.apply_t().scale(-4.0));
        diff.terms().map(|(c, _)| c.abs()).fold(0.0, f64::max)
    });
    report("commutator", "hcalculus", 100, gap, 0.0)
}

fn quadratic_form(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("quadratic-form", seed, 1000, |rng| {
        let u = ScalarField::polynomial(random_poly(rng, 6));
        let p = uniform_point(rng, 2.0);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let f = frame(p);
        let v = f.x.scale(a) + f.y.scale(b);
        let d2 = full_hessian(&u, p).unwrap();
        let lhs = d2.quad(&v);
        let rhs = h_hessian(&u, p).unwrap().quad([a, b]);
        let scale = 1.0 + d2.max_abs() * v.dot(&v);
        (lhs - rhs).abs() / scale
    });
    report("quadratic-form", "hcalculus", 1000, gap, 1e-12)
}

fn sublaplacian_routes(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("sublaplacian-routes", seed, 1000, |rng| {
        let u = ScalarField::polynomial(random_poly(rng, 6));
        let p = uniform_point(rng, 2.0);
        let a = sublaplacian(&u, p).unwrap();
        let b = sublaplacian_via_p(&u, p).unwrap();
        let c = lift(&full_hessian(&u, p).unwrap(), p).trace();
        let scale = 1.0 + full_hessian(&u, p).unwrap().max_abs() * (1.0 + 4.0 * p.norm().powi(2));
        ((a - b).abs().max((a - c).abs())) / scale
    });
    report("sublaplacian-routes", "hcalculus", 1000, gap, 1e-12)
}

fn dilation_homogeneity(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("dilation-homogeneity", seed, 1000, |rng| {
        let u = random_poly(rng, 4);
        let lam = log_uniform(rng, 0.25, 4.0);
        let p = uniform_point(rng, 1.0);
        let dp = dilate(lam, p).unwrap();
        let scaled = ScalarField::polynomial(u.compose_dilation(lam));
        let lhs = sublaplacian(&scaled, p).unwrap();
        let rhs = lam * lam * sublaplacian(&ScalarField::polynomial(u), dp).unwrap();
        (lhs - rhs).abs() / (1.0 + rhs.abs())
    });
    report("dilation-homogeneity", "hcalculus", 1000, gap, 1e-10)
}

/// Samples per matrix in the brute-force Pucci oracle.
pub const PUCCI_SAMPLES: usize = 100_000;

/// `(max, min)` of `trace(aH)` over sampled `a = R(θ) diag(d) R(θ)ᵀ` with
/// spectrum in `[λ, Λ]`. Half the samples put `d` on the corners of
/// `[λ, Λ]²` with `θ` stratified over `[0, π)`, the rest are uniform.
pub fn brute_force_extremes(
    h: &Sym2,
    b: &EllipticityBracket,
    rng: &mut SuiteRng,
    samples: usize,
) -> (f64, f64) {
    let corners = [
        [b.big_lam, b.big_lam],
        [b.lam, b.lam],
        [b.big_lam, b.lam],
        [b.lam, b.big_lam],
    ];
    let half = samples / 2;
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for i in 0..samples {
        let (theta, d) = if i < half {
            (
                PI * (i as f64 + rng.gen::<f64>()) / half as f64,
                corners[i % 4],
            )
        } else {
            (
                rng.gen_range(0.0..PI),
                [
                    rng.gen_range(b.lam..=b.big_lam),
                    rng.gen_range(b.lam..=b.big_lam),
                ],
            )
        };
        let v = Sym2::from_rotation(theta, d).frobenius_dot(h);
        hi = hi.max(v);
        lo = lo.min(v);
    }
    (hi, lo)
}

fn pucci_brute_force(s: &Suite, seed: u64) -> CheckReport {
    let b = EllipticityBracket::new(1.0, 2.0).unwrap();
    let gap = worst("pucci-brute-force", seed, 100, |rng| {
        let h = sym2(rng, 5.0);
        let (hi, lo) = brute_force_extremes(&h, &b, rng, PUCCI_SAMPLES);
        ((s.pucci_plus)(&h, &b) - hi)
            .abs()
            .max(((s.pucci_minus)(&h, &b) - lo).abs())
    });
    report("pucci-brute-force", "hoperators", 100, gap, 1e-6)
}

fn pucci_duality(s: &Suite, seed: u64) -> CheckReport {
    let gap = worst("pucci-duality", seed, 10_000, |rng| {
        let lam = rng.gen_range(0.1..2.0);
        let b = EllipticityBracket::new(lam, lam + rng.gen_range(0.0..3.0)).unwrap();
        let h = sym2(rng, 10.0);
        ((s.pucci_minus)(&h, &b) + (s.pucci_plus)(&-h, &b)).abs()
    });
    report("pucci-duality", "hoperators", 10_000, gap, 0.0)
}

fn pucci_extremality(s: &Suite, seed: u64) -> CheckReport {
    let gap = worst("pucci-extremality", seed, 10_000, |rng| {
        let b = EllipticityBracket::new(1.0, 2.0).unwrap();
        let h = sym2(rng, 10.0);
        let a = Sym2::from_rotation(
            rng.gen_range(0.0..PI),
            [rng.gen_range(1.0..=2.0), rng.gen_range(1.0..=2.0)],
        );
        let v = a.frobenius_dot(&h);
        let scale = 1.0 + h.max_abs();
        ((v - (s.pucci_plus)(&h, &b)).max((s.pucci_minus)(&h, &b) - v)) / scale
    });
    report("pucci-extremality", "hoperators", 10_000, gap, 1e-12)
}

fn ellipticity_bracket(_: &Suite, seed: u64) -> CheckReport {
    let b = EllipticityBracket::new(0.5, 2.0).unwrap();
    let specs = [
        OperatorSpec::sublaplacian(),
        OperatorSpec::new(OperatorKind::PucciPlus, b, Form::Intrinsic),
        OperatorSpec::new(OperatorKind::PucciMinus, b, Form::Intrinsic),
        OperatorSpec::new(OperatorKind::PucciPlus, b, Form::Lifted),
        OperatorSpec::new(OperatorKind::PucciMinus, b, Form::Lifted),
        OperatorSpec::new(
            OperatorKind::TraceLinear(Sym2::new(1.0, 0.4, 1.5)),
            b,
            Form::Intrinsic,
        ),
    ];
    let mut violations = 0;
    let mut worst_excess: f64 = 0.0;
    for (k, spec) in specs.iter().enumerate() {
        let r = validate_operator(spec, 2000, seed.wrapping_add(k as u64)).expect("form matches");
        violations += r.violations.len();
        worst_excess = worst_excess.max(r.worst_excess);
    }
    let mut rep = report(
        "ellipticity-bracket",
        "hoperators",
        2000 * specs.len() as u64,
        worst_excess,
        0.0,
    );
    rep.pass = violations == 0;
    rep
}

fn lifted_intrinsic_trace(_: &Suite, seed: u64) -> CheckReport {
    let intr = OperatorSpec::sublaplacian();
    let lifted = OperatorSpec::new(
        OperatorKind::SubLaplacian,
        EllipticityBracket::UNIT,
        Form::Lifted,
    );
    let gap = worst("lifted-intrinsic-trace", seed, 1000, |rng| {
        let u = ScalarField::polynomial(random_poly(rng, 5));
        let p = uniform_point(rng, 2.0);
        let a = eval_intrinsic(&intr, &u, p).unwrap();
        let b = eval_lifted(&lifted, &u, p).unwrap();
        (a - b).abs() / (1.0 + a.abs())
    });
    report("lifted-intrinsic-trace", "hoperators", 1000, gap, 1e-9)
}

fn random_penalty(rng: &mut SuiteRng, alphas: Option<&[f64]>) -> PenaltyParams {
    let alpha = match alphas {
        Some(a) => a[rng.gen_range(0..a.len())],
        None => rng.gen_range(0.05..=1.0),
    };
    PenaltyParams::new(
        log_uniform(rng, 0.1, 10.0),
        alpha,
        0.0,
        0.0,
        log_uniform(rng, 0.1, 10.0),
    )
    .expect("parameters in range")
}

fn random_pair(rng: &mut SuiteRng) -> (Point, Point) {
    let x = uniform_point(rng, 3.0);
    let y = x.offset(&unit_vec3(rng), log_uniform(rng, 0.05, 5.0));
    (x, y)
}

fn penalty_fd(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("penalty-hessian-fd", seed, 10_000, |rng| {
        let pp = random_penalty(rng, Some(&[0.3, 0.5, 0.9, 1.0]));
        let (x, y) = random_pair(rng);
        let m = penalty_hessian(x, y, &pp).unwrap();
        // Step relative to |x−y| keeps roundoff well below the tolerance.
        let h = 1e-4 * x.dist(&y);
        let at =
            |d: [f64; 3]| penalty_value(Point::new(x.x1 + d[0], x.x2 + d[1], x.x3 + d[2]), y, &pp);
        let fd = Sym3::from_fn(|i, j| {
            let mut acc = 0.0;
            for (si, sj, w) in [
                (1.0, 1.0, 1.0),
                (1.0, -1.0, -1.0),
                (-1.0, 1.0, -1.0),
                (-1.0, -1.0, 1.0),
            ] {
                let mut d = [0.0; 3];
                d[i] += si * h;
                d[j] += sj * h;
                acc += w * at(d);
            }
            acc / (4.0 * h * h)
        });
        let scale = pp.l * pp.alpha * x.dist(&y).powf(pp.alpha - 2.0);
        (fd - m).max_abs() / scale
    });
    report("penalty-hessian-fd", "sumslab", 10_000, gap, 1e-6)
}

fn penalty_square(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("penalty-square", seed, 10_000, |rng| {
        let pp = random_penalty(rng, None);
        let (x, y) = random_pair(rng);
        let m = penalty_hessian(x, y, &pp).unwrap();
        let m2 = penalty_hessian_sq(x, y, &pp).unwrap();
        (m.square() - m2).max_abs() / m2.max_abs().max(f64::MIN_POSITIVE)
    });
    report("penalty-square", "sumslab", 10_000, gap, 1e-10)
}

fn block_square_factor(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("block-square-factor", seed, 10_000, |rng| {
        let pp = random_penalty(rng, None);
        let (x, y) = random_pair(rng);
        let m = penalty_hessian(x, y, &pp).unwrap();
        let blk = block_matrix(&Sym3::ZERO, &Sym3::ZERO, &m);
        let m2 = m.square();
        let mut g: f64 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let sq: f64 = (0..6).map(|k| blk[i][k] * blk[k][j]).sum();
                let sign = if (i < 3) == (j < 3) { 1.0 } else { -1.0 };
                g = g.max((sq - 2.0 * sign * m2.get(i % 3, j % 3)).abs());
            }
        }
        g / m2.max_abs().max(f64::MIN_POSITIVE)
    });
    report("block-square-factor", "sumslab", 10_000, gap, 1e-10)
}

fn n_norm(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("n-norm-bound", seed, 10_000, |rng| {
        let pp = random_penalty(rng, None);
        let (x, y) = random_pair(rng);
        let bound = n_norm_bound(x.dist(&y), &pp);
        (n_matrix(x, y, &pp).unwrap().spectral_norm() - bound) / bound
    });
    report("n-norm-bound", "sumslab", 10_000, gap, 1e-12)
}

/// Random `N` (penalty matrix or a generic symmetric matrix) with an
/// admissible pair.
fn admissible_instance(rng: &mut SuiteRng) -> (Sym3, Sym3, Sym3, Point, Point, PenaltyParams) {
    let pp = random_penalty(rng, None);
    let (x, y) = random_pair(rng);
    let n = if rng.gen_bool(0.75) {
        n_matrix(x, y, &pp).unwrap()
    } else {
        let d = [
            rng.gen_range(-2.0..4.0),
            rng.gen_range(0.0..4.0),
            rng.gen_range(0.0..4.0),
        ];
        rotated_diag3(rng, d)
    };
    let (a, b) = make_admissible_pair(&n, rng);
    (a, b, n, x, y, pp)
}

fn entry_scale(a: &Sym3, b: &Sym3, n: &Sym3) -> f64 {
    1.0 + a.max_abs().max(b.max_abs()).max(n.max_abs())
}

fn admissible_pairs(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("admissible-pairs", seed, 10_000, |rng| {
        let (a, b, n, ..) = admissible_instance(rng);
        -block_gap(&a, &b, &n) / entry_scale(&a, &b, &n)
    });
    report("admissible-pairs", "sumslab", 10_000, gap, 1e-10)
}

fn block_scalar_consequence(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("block-scalar-consequence", seed, 10_000, |rng| {
        let (a, b, n, ..) = admissible_instance(rng);
        let mut g = f64::NEG_INFINITY;
        for _ in 0..100 {
            let xi = unit_vec3(rng).scale(rng.gen_range(0.0..3.0));
            let eta = unit_vec3(rng).scale(rng.gen_range(0.0..3.0));
            let lhs = a.quad(&xi) - b.quad(&eta);
            let rhs = n.quad(&(xi - eta));
            g = g.max((lhs - rhs) / (9.0 * entry_scale(&a, &b, &n)));
        }
        g
    });
    report("block-scalar-consequence", "sumslab", 10_000, gap, 1e-9)
}

fn trace_gap_check(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("trace-gap", seed, 10_000, |rng| {
        let (a, b, n, x, y, _) = admissible_instance(rng);
        let r = trace_gap(&a, &b, &n, x, y).unwrap();
        let scale = entry_scale(&a, &b, &n) * (1.0 + x.norm() + y.norm()).powi(2);
        if r.holds {
            ((r.lhs - r.rhs) / scale).min(0.0)
        } else {
            (r.lhs - r.rhs) / scale
        }
    });
    report("trace-gap", "sumslab", 10_000, gap, 1e-9)
}

fn lifted_trace_gap_check(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("lifted-trace-gap", seed, 10_000, |rng| {
        let (a, b, n, x, y, pp) = admissible_instance(rng);
        let c2 = sqrtp_ratio(x, y).unwrap_or(0.0);
        let r = lifted_trace_gap(&a, &b, &n, x, y, Some((&pp, c2))).unwrap();
        let scale = entry_scale(&a, &b, &n) * (1.0 + x.norm() + y.norm()).powi(2);
        if r.holds {
            ((r.lhs - r.rhs) / scale).min(0.0)
        } else {
            (r.lhs - r.rhs) / scale
        }
    });
    report("lifted-trace-gap", "sumslab", 10_000, gap, 1e-9)
}

fn psd_sandwich(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("psd-sandwich", seed, 10_000, |rng| {
        let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..3.0));
        let p = rotated_diag3(rng, d);
        let s1 = crate::rng::sym3(rng, 5.0);
        let d = [
            log_uniform(rng, 1e-3, 1e2),
            log_uniform(rng, 1e-3, 1e2),
            0.0,
        ];
        let g = rotated_diag3(rng, d);
        match psd_sandwich_check(&p, &s1, &(s1 + g)) {
            Ok(true) => 0.0,
            _ => 1.0,
        }
    });
    report("psd-sandwich", "sumslab", 10_000, gap, 0.0)
}

fn sqrtp_ratio_check(_: &Suite, seed: u64) -> CheckReport {
    const GAMMA: f64 = 0.1;
    const SAMPLES: u64 = 100_000;
    let c2 = worst("sqrtp-ratio", seed, SAMPLES, |rng| {
        // Horizontal parts up to 10³, separations in (γ, 1/γ).
        let r = log_uniform(rng, 1e-3, 1e3);
        let th = rng.gen_range(0.0..2.0 * PI);
        let x = Point::new(r * th.cos(), r * th.sin(), rng.gen_range(-10.0..10.0));
        let y = loop {
            let y = x.offset(&unit_vec3(rng), rng.gen_range(GAMMA..1.0 / GAMMA));
            if y.x1.hypot(y.x2) <= 1e3 && x.horizontal_dist(&y) > 0.0 {
                break y;
            }
        };
        sqrtp_ratio(x, y).unwrap()
    });
    let mut rep = report("sqrtp-ratio", "sumslab", SAMPLES, c2, 10.0);
    rep.note = Some(format!("empirical C2 = {c2:.6}"));
    rep
}

fn vertical_obstruction(_: &Suite, seed: u64) -> CheckReport {
    let gap = worst("vertical-obstruction", seed, 100, |rng| {
        let x = Point::new(0.0, 0.0, rng.gen_range(-10.0..10.0));
        let y = Point::new(0.0, 0.0, x.x3 + rng.gen_range(0.1..5.0));
        let ok = vertical_obstruction_check(x, y, 100, rng.gen()).unwrap();
        if ok {
            0.0
        } else {
            1.0
        }
    });
    report("vertical-obstruction", "sumslab", 100, gap, 0.0)
}
