//! Cross-module paths: solve, measure, certify.

use heisenreg::hcalculus::{Polynomial, ScalarField};
use heisenreg::hoperators::{EllipticityBracket, Form, HolderData, OperatorKind, OperatorSpec};
use heisenreg::hregularity::{alpha_target, check_theorem, holder_seminorm, interior_box, Solved};
use heisenreg::hsolver::{manufacture, solve, Grid3, GridFunction, ProblemSpec, SolverMethod};
use heisenreg::sumslab::{doubling_certificate, PenaltyParams};
use heisenreg::verify::{run_suite, Suite};

fn poly(s: &str) -> ScalarField {
    ScalarField::polynomial(Polynomial::parse(s).unwrap())
}

fn interior_error(u: &GridFunction, exact: &ScalarField) -> f64 {
    let g = &u.grid;
    (0..g.len())
        .filter(|&i| !g.is_boundary(g.unflatten(i)))
        .map(|i| (u.values[i] - exact.value(g.point_flat(i))).abs())
        .fold(0.0, f64::max)
}

#[test]
fn pucci_manufactured_problem_converges() {
    // a convex-in-frame solution keeps the Pucci operator on one branch
    let u_star = poly("x1^2 + x2^2 + x1*x3");
    let b = EllipticityBracket::new(1.0, 2.0).unwrap();
    let op = OperatorSpec::new(OperatorKind::PucciPlus, b, Form::Intrinsic);
    let c = ScalarField::constant(1.0);
    let f = manufacture(&u_star, &op, &c).unwrap();
    let mut errs = Vec::new();
    for n in [9, 17] {
        let prob = ProblemSpec::new(
            op.clone(),
            c.clone(),
            f.clone(),
            u_star.clone(),
            Grid3::cube(-1.0, 1.0, n).unwrap(),
        );
        let out = solve(&prob).unwrap();
        assert!(out.diagnostics.converged, "{:?}", out.diagnostics);
        errs.push(interior_error(&out.u, &u_star));
    }
    assert!(errs[1] < errs[0], "{errs:?}");
}

#[test]
fn pseudo_time_and_krylov_agree_on_linear_problems() {
    let u_star = poly("x1^2 - x2^2 + x1*x2*x3");
    let op = OperatorSpec::sublaplacian();
    let c = ScalarField::constant(0.5);
    let f = manufacture(&u_star, &op, &c).unwrap();
    let mut prob = ProblemSpec::new(op, c, f, u_star, Grid3::cube(-1.0, 1.0, 9).unwrap());
    prob.tol = 1e-9;
    let a = solve(&prob).unwrap();
    prob.method = SolverMethod::PseudoTime;
    let b = solve(&prob).unwrap();
    assert!(a.diagnostics.converged && b.diagnostics.converged);
    assert!(a.u.max_abs_diff(&b.u) < 1e-6);
}

#[test]
fn solved_field_is_certified_at_its_seminorm() {
    let op = OperatorSpec::sublaplacian();
    let hd = HolderData::new(1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let f = ScalarField::from_fn(|p| p.norm() - 1.0);
    let mk = |n| {
        let prob = ProblemSpec::new(
            op.clone(),
            ScalarField::constant(1.0),
            f.clone(),
            ScalarField::constant(0.0),
            Grid3::cube(-1.0, 1.0, n).unwrap(),
        );
        solve(&prob).unwrap()
    };
    let (coarse, fine) = (mk(9), mk(17));
    let rep = check_theorem(
        Solved {
            u: &coarse.u,
            diagnostics: &coarse.diagnostics,
        },
        Solved {
            u: &fine.u,
            diagnostics: &fine.diagnostics,
        },
        &hd,
        &EllipticityBracket::UNIT,
        5,
    )
    .unwrap();
    let alpha = alpha_target(&hd, &EllipticityBracket::UNIT);
    assert_eq!(rep.alpha_target, alpha);
    assert_eq!(
        rep.seminorm_at_target,
        holder_seminorm(&fine.u, alpha, 5).unwrap()
    );
    let pp = PenaltyParams::new(1.1 * rep.seminorm_at_target, alpha, 1e-6, 1e-6, 1.0).unwrap();
    let cert = doubling_certificate(&fine.u, &pp, &interior_box(&fine.u).unwrap()).unwrap();
    assert!(cert.certified, "{cert:?}");
    // far below the seminorm the certificate must fail
    let pp = PenaltyParams::new(0.05 * rep.seminorm_at_target, alpha, 0.0, 0.0, 1.0).unwrap();
    let cert = doubling_certificate(&fine.u, &pp, &interior_box(&fine.u).unwrap()).unwrap();
    assert!(!cert.certified);
}

#[test]
fn csv_round_trip_preserves_solution_bits() {
    let prob = ProblemSpec::new(
        OperatorSpec::sublaplacian(),
        ScalarField::constant(1.0),
        poly("x1*x2 - 1"),
        ScalarField::constant(0.0),
        Grid3::new([-1.0, -0.5, 0.0], [5, 7, 9], [0.5, 1.0 / 6.0, 0.125]).unwrap(),
    );
    let u = solve(&prob).unwrap().u;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    u.write_csv(&path).unwrap();
    let back = GridFunction::read_csv(&path).unwrap();
    assert_eq!(back.grid.n, u.grid.n);
    assert_eq!(back.values, u.values);
}

#[test]
fn suite_is_seed_stable_and_green() {
    let a = run_suite(Some("hgroup"), 11, &Suite::default());
    let b = run_suite(Some("hgroup"), 11, &Suite::default());
    assert!(a.iter().all(|r| r.pass));
    let ja = serde_json::to_string(&a).unwrap();
    assert_eq!(ja, serde_json::to_string(&b).unwrap());
}
