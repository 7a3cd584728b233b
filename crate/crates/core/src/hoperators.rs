//! Degenerate elliptic operators on ℍ¹ and PDE residuals.
//!
//! An operator acts either on the intrinsic 2×2 Hessian `D^{2,*}u`
//! ([`Form::Intrinsic`]) or on the conjugated 3×3 matrix `√P D²u √P`
//! ([`Form::Lifted`]). Pucci operators are the max and min of `trace(aH)`
//! over `λI ≤ a ≤ ΛI`, evaluated through the spectrum.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hcalculus::{full_hessian, h_hessian, ScalarField};
use crate::hgroup::{sqrt_p, Point};
use crate::linalg::{Sym2, Sym3};
use crate::rng::{log_uniform, rotated_diag3, trial_rng};
use crate::{Error, Result};

/// Ellipticity constants `0 < λ ≤ Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBracket {
    #[serde(rename = "lambda")]
    pub lam: f64,
    #[serde(rename = "Lambda")]
    pub big_lam: f64,
}

impl EllipticityBracket {
    pub fn new(lam: f64, big_lam: f64) -> Result<Self> {
        if !(lam > 0.0 && lam <= big_lam && big_lam.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ellipticity bracket needs 0 < lambda <= Lambda, got ({lam}, {big_lam})"
            )));
        }
        Ok(EllipticityBracket { lam, big_lam })
    }

    pub const UNIT: EllipticityBracket = EllipticityBracket {
        lam: 1.0,
        big_lam: 1.0,
    };
}

fn split_sum(eigs: &[f64]) -> (f64, f64) {
    let pos = eigs.iter().filter(|&&e| e > 0.0).sum();
    let neg = eigs.iter().filter(|&&e| e < 0.0).sum();
    (pos, neg)
}

/// `max trace(aH)` over `λI ≤ a ≤ ΛI`: `Λ·Σ_{e>0} e + λ·Σ_{e<0} e`.
pub fn pucci_plus(h: &Sym2, b: &EllipticityBracket) -> f64 {
    let (pos, neg) = split_sum(&h.eigenvalues());
    b.big_lam * pos + b.lam * neg
}

/// `min trace(aH)` over `λI ≤ a ≤ ΛI`: `λ·Σ_{e>0} e + Λ·Σ_{e<0} e`.
pub fn pucci_minus(h: &Sym2, b: &EllipticityBracket) -> f64 {
    let (pos, neg) = split_sum(&h.eigenvalues());
    b.lam * pos + b.big_lam * neg
}

pub fn pucci_plus3(m: &Sym3, b: &EllipticityBracket) -> f64 {
    let (pos, neg) = split_sum(&m.eigenvalues());
    b.big_lam * pos + b.lam * neg
}

pub fn pucci_minus3(m: &Sym3, b: &EllipticityBracket) -> f64 {
    let (pos, neg) = split_sum(&m.eigenvalues());
    b.lam * pos + b.big_lam * neg
}

pub type IntrinsicMap = Arc<dyn Fn(&Sym2) -> f64 + Send + Sync>;
pub type LiftedMap = Arc<dyn Fn(&Sym3) -> f64 + Send + Sync>;

/// A user-supplied nonlinearity; its bracket is declared, not proven.
#[derive(Clone)]
pub enum CustomMap {
    Intrinsic(IntrinsicMap),
    Lifted(LiftedMap),
}

#[derive(Clone)]
pub enum OperatorKind {
    SubLaplacian,
    PucciPlus,
    PucciMinus,
    /// `H ↦ trace(aH)` for a fixed coefficient `a`; in lifted form `a`
    /// occupies the upper-left block of a 3×3 matrix.
    TraceLinear(Sym2),
    CustomUniform(CustomMap),
}

impl fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::SubLaplacian => write!(f, "SubLaplacian"),
            OperatorKind::PucciPlus => write!(f, "PucciPlus"),
            OperatorKind::PucciMinus => write!(f, "PucciMinus"),
            OperatorKind::TraceLinear(a) => write!(f, "TraceLinear({a:?})"),
            OperatorKind::CustomUniform(CustomMap::Intrinsic(_)) => write!(f, "Custom(intrinsic)"),
            OperatorKind::CustomUniform(CustomMap::Lifted(_)) => write!(f, "Custom(lifted)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    #[default]
    Intrinsic,
    Lifted,
}

#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub bracket: EllipticityBracket,
    pub form: Form,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, bracket: EllipticityBracket, form: Form) -> Self {
        OperatorSpec {
            kind,
            bracket,
            form,
        }
    }

    pub fn sublaplacian() -> Self {
        OperatorSpec::new(
            OperatorKind::SubLaplacian,
            EllipticityBracket::UNIT,
            Form::Intrinsic,
        )
    }

    /// Apply the intrinsic map `F` to a 2×2 matrix.
    pub fn apply_intrinsic(&self, h: &Sym2) -> Result<f64> {
        if self.form != Form::Intrinsic {
            return Err(Error::FormMismatch(
                "operator is declared in lifted form".into(),
            ));
        }
        Ok(match &self.kind {
            OperatorKind::SubLaplacian => h.trace(),
            OperatorKind::PucciPlus => pucci_plus(h, &self.bracket),
            OperatorKind::PucciMinus => pucci_minus(h, &self.bracket),
            OperatorKind::TraceLinear(a) => a.frobenius_dot(h),
            OperatorKind::CustomUniform(CustomMap::Intrinsic(g)) => g(h),
            OperatorKind::CustomUniform(CustomMap::Lifted(_)) => {
                return Err(Error::FormMismatch(
                    "custom map acts on 3×3 matrices".into(),
                ))
            }
        })
    }

    /// Apply the lifted map `G` to a 3×3 matrix.
    pub fn apply_lifted(&self, m: &Sym3) -> Result<f64> {
        if self.form != Form::Lifted {
            return Err(Error::FormMismatch(
                "operator is declared in intrinsic form".into(),
            ));
        }
        Ok(match &self.kind {
            OperatorKind::SubLaplacian => m.trace(),
            OperatorKind::PucciPlus => pucci_plus3(m, &self.bracket),
            OperatorKind::PucciMinus => pucci_minus3(m, &self.bracket),
            OperatorKind::TraceLinear(a) => {
                a.a * m.get(0, 0) + 2.0 * a.b * m.get(0, 1) + a.c * m.get(1, 1)
            }
            OperatorKind::CustomUniform(CustomMap::Lifted(g)) => g(m),
            OperatorKind::CustomUniform(CustomMap::Intrinsic(_)) => {
                return Err(Error::FormMismatch(
                    "custom map acts on 2×2 matrices".into(),
                ))
            }
        })
    }

    /// Evaluate at `p` in whichever form the spec declares.
    pub fn eval(&self, u: &ScalarField, p: Point) -> Result<f64> {
        match self.form {
            Form::Intrinsic => eval_intrinsic(self, u, p),
            Form::Lifted => eval_lifted(self, u, p),
        }
    }
}

/// `F(D^{2,*}u(p))`.
pub fn eval_intrinsic(spec: &OperatorSpec, u: &ScalarField, p: Point) -> Result<f64> {
    if spec.form != Form::Intrinsic {
        return Err(Error::FormMismatch(
            "eval_intrinsic on a lifted operator".into(),
        ));
    }
    spec.apply_intrinsic(&h_hessian(u, p)?)
}

/// `G(√P(p) D²u(p) √P(p))`.
pub fn eval_lifted(spec: &OperatorSpec, u: &ScalarField, p: Point) -> Result<f64> {
    if spec.form != Form::Lifted {
        return Err(Error::FormMismatch(
            "eval_lifted on an intrinsic operator".into(),
        ));
    }
    let m = full_hessian(u, p)?.congruence(&sqrt_p(p));
    spec.apply_lifted(&m)
}

/// `F(·) − c(p)u(p) − f(p)`.
pub fn residual(
    spec: &OperatorSpec,
    c: &ScalarField,
    f: &ScalarField,
    u: &ScalarField,
    p: Point,
) -> Result<f64> {
    let cp = c.value(p);
    if !(cp >= 0.0) {
        return Err(Error::Precondition(format!(
            "c must be nonnegative, got c = {cp} at {p:?}"
        )));
    }
    Ok(spec.eval(u, p)? - cp * u.value(p) - f.value(p))
}

/// Data entering the Hölder estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderData {
    pub c0: f64,
    pub beta: f64,
    pub beta_prime: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
}

impl HolderData {
    pub fn new(c0: f64, beta: f64, beta_prime: f64, l_c: f64, l_f: f64) -> Result<Self> {
        let d = HolderData {
            c0,
            beta,
            beta_prime,
            l_c,
            l_f,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c0 must be positive, got {}",
                self.c0
            )));
        }
        if !unit(self.beta) || !unit(self.beta_prime) {
            return Err(Error::InvalidArgument(format!(
                "Hölder exponents must lie in (0, 1], got beta = {}, beta' = {}",
                self.beta, self.beta_prime
            )));
        }
        if !(self.l_c >= 0.0 && self.l_f >= 0.0) {
            return Err(Error::InvalidArgument(
                "Hölder constants must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One bracket violation found by [`validate_operator`].
#[derive(Debug, Clone, Serialize)]
pub struct BracketViolation {
    pub sample: usize,
    pub trace_gap: f64,
    pub value_gap: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<BracketViolation>,
    pub worst_excess: f64,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sample ordered pairs `H₂ ≤ H₁ = H₂ + QᵀDQ` and check
/// `λ·tr(H₁−H₂) ≤ F(H₁) − F(H₂) ≤ Λ·tr(H₁−H₂)`.
pub fn validate_operator(
    spec: &OperatorSpec,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let b = spec.bracket;
    let mut violations = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let mut rng = trial_rng(seed, "validate_operator", i as u64);
        let (tr, gap) = match spec.form {
            Form::Intrinsic => {
                let h2 = crate::rng::sym2(&mut rng, 5.0);
                let d = [
                    log_uniform(&mut rng, 1e-3, 1e2),
                    log_uniform(&mut rng, 1e-3, 1e2),
                ];
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let h1 = h2 + Sym2::from_rotation(theta, d);
                let gap = spec.apply_intrinsic(&h1)? - spec.apply_intrinsic(&h2)?;
                (d[0] + d[1], (gap, h1.max_abs().max(h2.max_abs())))
            }
            Form::Lifted => {
                let h2 = crate::rng::sym3(&mut rng, 5.0);
                let d: [f64; 3] = std::array::from_fn(|_| log_uniform(&mut rng, 1e-3, 1e2));
                let h1 = h2 + rotated_diag3(&mut rng, d);
                let gap = spec.apply_lifted(&h1)? - spec.apply_lifted(&h2)?;
                (d.iter().sum(), (gap, h1.max_abs().max(h2.max_abs())))
            }
        };
        let (value_gap, size) = gap;
        let tol = 1e-9 * (1.0 + size + b.big_lam * tr);
        let excess = (b.lam * tr - value_gap).max(value_gap - b.big_lam * tr);
        if !(excess <= tol) {
            worst = worst.max(if excess.is_nan() {
                f64::INFINITY
            } else {
                excess
            });
            violations.push(BracketViolation {
                sample: i,
                trace_gap: tr,
                value_gap,
                excess,
            });
        }
    }
    Ok(ValidationReport {
        samples,
        violations,
        worst_excess: worst,
    })
}

/// Serialized form of an operator, as read from JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: OperatorName,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(rename = "Lambda", default = "one")]
    pub big_lambda: f64,
    #[serde(default)]
    pub form: Form,
    /// Entries `[a11, a12, a22]` of the coefficient for `trace_linear`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<[f64; 3]>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    #[serde(alias = "SubLaplacian")]
    Sublaplacian,
    #[serde(alias = "PucciPlus")]
    PucciPlus,
    #[serde(alias = "PucciMinus")]
    PucciMinus,
    #[serde(alias = "TraceLinear")]
    TraceLinear,
}

impl TryFrom<&OperatorConfig> for OperatorSpec {
    type Error = Error;
    fn try_from(c: &OperatorConfig) -> Result<OperatorSpec> {
        let bracket = EllipticityBracket::new(c.lambda, c.big_lambda)?;
        let kind = match (c.kind, c.coefficient) {
            (OperatorName::Sublaplacian, None) => {
                if bracket != EllipticityBracket::UNIT {
                    return Err(Error::InvalidArgument(
                        "the sub-Laplacian has bracket lambda = Lambda = 1".into(),
                    ));
                }
                OperatorKind::SubLaplacian
            }
            (OperatorName::PucciPlus, None) => OperatorKind::PucciPlus,
            (OperatorName::PucciMinus, None) => OperatorKind::PucciMinus,
            (OperatorName::TraceLinear, Some([a, b, d])) => {
                let a = Sym2::new(a, b, d);
                let [lo, hi] = a.eigenvalues();
                if lo < bracket.lam - 1e-12 || hi > bracket.big_lam + 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "trace_linear coefficient has spectrum [{lo}, {hi}] outside the bracket"
                    )));
                }
                OperatorKind::TraceLinear(a)
            }
            (OperatorName::TraceLinear, None) => {
                return Err(Error::InvalidArgument(
                    "trace_linear needs a coefficient".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "only trace_linear takes a coefficient".into(),
                ))
            }
        };
        Ok(OperatorSpec::new(kind, bracket, c.form))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcalculus::{sublaplacian, Polynomial};
    use crate::rng::sym3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b12() -> EllipticityBracket {
        EllipticityBracket::new(1.0, 2.0).unwrap()
    }

    fn poly(s: &str) -> ScalarField {
        ScalarField::polynomial(Polynomial::parse(s).unwrap())
    }

    fn kind_spec(kind: OperatorKind, form: Form) -> OperatorSpec {
        OperatorSpec::new(kind, b12(), form)
    }

    #[test]
    fn bracket_rejects_bad_constants() {
        assert!(EllipticityBracket::new(0.0, 1.0).is_err());
        assert!(EllipticityBracket::new(2.0, 1.0).is_err());
        assert!(EllipticityBracket::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn pucci_examples() {
        let b = b12();
        assert_eq!(pucci_plus(&Sym2::ZERO, &b), 0.0);
        assert_eq!(pucci_minus(&Sym2::ZERO, &b), 0.0);
        assert_eq!(pucci_plus(&Sym2::diag(2.0, -3.0), &b), 1.0);
        assert_eq!(pucci_minus(&Sym2::diag(2.0, -3.0), &b), -4.0);
        let pd = Sym2::new(3.0, 1.0, 2.0);
        assert_relative_eq!(pucci_plus(&pd, &b), 2.0 * pd.trace(), epsilon = 1e-12);
        // diag(1, −1) separates the max-definition from the printed signs.
        assert_eq!(pucci_plus(&Sym2::diag(1.0, -1.0), &b), 1.0);
    }

    #[test]
    fn eval_examples() {
        let p = Point::new(0.4, -1.2, 0.3);
        let lap = OperatorSpec::sublaplacian();
        assert_eq!(eval_intrinsic(&lap, &poly("x1^2 + x2^2"), p).unwrap(), 4.0);
        let pp = kind_spec(OperatorKind::PucciPlus, Form::Intrinsic);
        assert_eq!(
            eval_intrinsic(&pp, &poly("x1^2 - x2^2"), Point::ORIGIN).unwrap(),
            2.0
        );
        for kind in [
            OperatorKind::PucciPlus,
            OperatorKind::PucciMinus,
            OperatorKind::SubLaplacian,
        ] {
            for form in [Form::Intrinsic, Form::Lifted] {
                let s = kind_spec(kind.clone(), form);
                assert_eq!(s.eval(&poly("3 x1 - x2 + 2"), p).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn form_mismatch_is_an_error() {
        let lifted = kind_spec(OperatorKind::PucciPlus, Form::Lifted);
        let u = poly("x1^2");
        assert!(matches!(
            eval_intrinsic(&lifted, &u, Point::ORIGIN),
            Err(Error::FormMismatch(_))
        ));
        let intr = kind_spec(OperatorKind::PucciPlus, Form::Intrinsic);
        assert!(matches!(
            eval_lifted(&intr, &u, Point::ORIGIN),
            Err(Error::FormMismatch(_))
        ));
        let g: LiftedMap = Arc::new(|m: &Sym3| m.trace());
        let bad = kind_spec(
            OperatorKind::CustomUniform(CustomMap::Lifted(g)),
            Form::Intrinsic,
        );
        assert!(bad.apply_intrinsic(&Sym2::ZERO).is_err());
    }

    #[test]
    fn residual_examples() {
        let lap = OperatorSpec::sublaplacian();
        let u = poly("x1^2 + x2^2");
        let f = poly("4 - x1^2 - x2^2");
        let one = ScalarField::constant(1.0);
        for p in [
            Point::ORIGIN,
            Point::new(1.0, -2.0, 3.0),
            Point::new(0.1, 0.2, -5.0),
        ] {
            assert_eq!(residual(&lap, &one, &f, &u, p).unwrap(), 0.0);
        }
        let zero = ScalarField::constant(0.0);
        assert_eq!(
            residual(&lap, &one, &zero, &zero, Point::ORIGIN).unwrap(),
            0.0
        );
        let neg = ScalarField::constant(-1.0);
        assert!(matches!(
            residual(&lap, &neg, &f, &u, Point::ORIGIN),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn validation_examples() {
        assert!(validate_operator(&OperatorSpec::sublaplacian(), 2000, 1)
            .unwrap()
            .ok());
        for form in [Form::Intrinsic, Form::Lifted] {
            for kind in [OperatorKind::PucciPlus, OperatorKind::PucciMinus] {
                let r = validate_operator(&kind_spec(kind, form), 2000, 2).unwrap();
                assert!(r.ok(), "{r:?}");
            }
        }
        let lin = kind_spec(
            OperatorKind::TraceLinear(Sym2::new(1.5, 0.3, 1.2)),
            Form::Intrinsic,
        );
        assert!(validate_operator(&lin, 2000, 3).unwrap().ok());
        let cube: IntrinsicMap = Arc::new(|h: &Sym2| h.trace().powi(3));
        let bad = OperatorSpec::new(
            OperatorKind::CustomUniform(CustomMap::Intrinsic(cube)),
            EllipticityBracket::UNIT,
            Form::Intrinsic,
        );
        let r = validate_operator(&bad, 500, 4).unwrap();
        assert!(!r.ok());
        assert!(r.worst_excess > 1.0);
    }

    #[test]
    fn config_round_trip_and_checks() {
        let c: OperatorConfig = serde_json::from_str(
            r#"{"kind": "pucci_plus", "lambda": 0.5, "Lambda": 2.0, "form": "lifted"}"#,
        )
        .unwrap();
        let s = OperatorSpec::try_from(&c).unwrap();
        assert!(matches!(s.kind, OperatorKind::PucciPlus));
        assert_eq!(s.form, Form::Lifted);
        let back: OperatorConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let bad = OperatorConfig {
            lambda: 3.0,
            ..c.clone()
        };
        assert!(OperatorSpec::try_from(&bad).is_err());
        let lin = OperatorConfig {
            kind: OperatorName::TraceLinear,
            coefficient: Some([5.0, 0.0, 1.0]),
            ..c
        };
        assert!(OperatorSpec::try_from(&lin).is_err());
        assert!(
            serde_json::from_str::<OperatorConfig>(r#"{"kind": "sublaplacian", "x": 1}"#).is_err()
        );
    }

    #[test]
    fn holder_data_validation() {
        assert!(HolderData::new(1.0, 1.0, 0.5, 0.0, 2.0).is_ok());
        assert!(HolderData::new(0.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(HolderData::new(1.0, 1.5, 1.0, 0.0, 0.0).is_err());
        assert!(HolderData::new(1.0, 1.0, 1.0, -1.0, 0.0).is_err());
    }

    fn any_kind() -> impl Strategy<Value = OperatorKind> {
        prop_oneof![
            Just(OperatorKind::SubLaplacian),
            Just(OperatorKind::PucciPlus),
            Just(OperatorKind::PucciMinus),
            Just(OperatorKind::TraceLinear(Sym2::new(1.5, -0.2, 1.1))),
        ]
    }

    proptest! {
        #[test]
        fn pucci_duality(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64,
                         lam in 0.1..1.0f64, extra in 0.0..5.0f64) {
            let br = EllipticityBracket::new(lam, lam + extra).unwrap();
            let h = Sym2::new(a, b, c);
            prop_assert_eq!(pucci_minus(&h, &br), -pucci_plus(&-h, &br));
            prop_assert!(pucci_minus(&h, &br) <= pucci_plus(&h, &br));
            let m = Sym3([a, b, c, b - a, c * 0.5, a + c]);
            let d = pucci_minus3(&m, &br) + pucci_plus3(&-m, &br);
            prop_assert!(d.abs() <= 1e-12 * (1.0 + m.max_abs()));
        }

        #[test]
        fn extremality(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64,
                       theta in 0.0..3.2f64, s in 0.0..1.0f64, t in 0.0..1.0f64) {
            let br = b12();
            let h = Sym2::new(a, b, c);
            let coeff = Sym2::from_rotation(theta, [1.0 + s, 1.0 + t]);
            let v = coeff.frobenius_dot(&h);
            let tol = 1e-12 * (1.0 + h.max_abs());
            prop_assert!(pucci_minus(&h, &br) <= v + tol);
            prop_assert!(v <= pucci_plus(&h, &br) + tol);
        }

        #[test]
        fn positive_homogeneity(kind in any_kind(), t in 0.0..10.0f64,
                                e in prop::array::uniform6(-5.0..5.0f64)) {
            let intr = kind_spec(kind.clone(), Form::Intrinsic);
            let h = Sym2::new(e[0], e[1], e[2]);
            let l = intr.apply_intrinsic(&h.scale(t)).unwrap();
            let r = t * intr.apply_intrinsic(&h).unwrap();
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
            let lifted = kind_spec(kind, Form::Lifted);
            let m = Sym3(e);
            let l = lifted.apply_lifted(&m.scale(t)).unwrap();
            let r = t * lifted.apply_lifted(&m).unwrap();
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + r.abs()));
        }

        #[test]
        fn lifted_trace_matches_intrinsic(seed in 0u64..1000,
                                          p in prop::array::uniform3(-2.0..2.0f64)) {
            let mut rng = trial_rng(seed, "lifted_trace", 0);
            let coeffs = sym3(&mut rng, 3.0);
            let terms = [([2, 0, 0], 0), ([0, 2, 0], 3), ([1, 1, 0], 1), ([1, 0, 1], 2),
                         ([0, 1, 1], 4), ([0, 0, 2], 5), ([2, 1, 1], 0), ([0, 0, 3], 1)];
            let u = Polynomial::from_terms(terms.iter().map(|&(e, k)| (coeffs.0[k], e)));
            let u = ScalarField::polynomial(u);
            let p = Point::from_array(p);
            let intr = eval_intrinsic(&OperatorSpec::sublaplacian(), &u, p).unwrap();
            let lifted_spec = OperatorSpec::new(OperatorKind::SubLaplacian,
                                                EllipticityBracket::UNIT, Form::Lifted);
            let lifted = eval_lifted(&lifted_spec, &u, p).unwrap();
            let direct = sublaplacian(&u, p).unwrap();
            prop_assert!((intr - lifted).abs() <= 1e-9 * (1.0 + intr.abs()));
            prop_assert_eq!(intr, direct);
        }
    }
}
