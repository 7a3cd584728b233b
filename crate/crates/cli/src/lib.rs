//! Configuration-driven entry points: the property suite, solver runs,
//! Hölder reports and the combined pipeline.
//!
//! Configs are JSON with unknown keys rejected. Reports are JSON, fields
//! are CSV. Every command returns a process exit code; see [`exit`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use heisenreg::hcalculus::{Polynomial, ScalarField};
use heisenreg::hoperators::{EllipticityBracket, HolderData, OperatorConfig, OperatorSpec};
use heisenreg::hregularity::{
    self, alpha_target, check_theorem, holder_seminorm, interior_box, HolderReport, Solved,
};
use heisenreg::hsolver::{
    fmt17, manufacture, solve_with_guess, Grid3, GridFunction, ProblemSpec, SolveDiagnostics,
    SolveOutcome, SolverMethod, BOUNDARY_MARGIN,
};
use heisenreg::sumslab::{doubling_certificate, PenaltyParams};
use heisenreg::verify::{run_suite, CheckReport, Suite};
use heisenreg::Point;

/// Exit codes shared by all commands.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad config, I/O failure, or a failed check.
    pub const FAILURE: i32 = 1;
    /// The solver stopped at `max_iters` without reaching `tol`.
    pub const NOT_CONVERGED: i32 = 2;
}

/// Penalty offsets used by the pipeline's doubling certificate.
pub const CERT_DELTA: f64 = 1e-6;
pub const CERT_EPS: f64 = 1e-6;
/// The certificate is run at `L = CERT_SLACK · seminorm`.
pub const CERT_SLACK: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(
    name = "heisenreg",
    version,
    about = "Heisenberg-group regularity toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the randomized property suite.
    Verify {
        /// Module name or check-id substring.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one problem and write the grid function as CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hölder report for solved grids. Pass `--grid` twice (coarse, then
    /// fine) for a genuine refinement check.
    Holder {
        #[arg(long, required = true, num_args = 1)]
        grid: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coarse and fine solves, Hölder report and doubling certificate.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write `modulus.csv` with the `(r, omega)` pairs.
        #[arg(long)]
        emit_plot_data: bool,
    },
}

// ---------------------------------------------------------------- configs

/// A scalar field in a config: a number, a polynomial string such as
/// `"x1^4 + x2^4 + x1*x2*x3"`, or a smoothed norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Number(f64),
    Polynomial(String),
    SmoothedNorm(SmoothedNormSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothedNormSpec {
    pub smoothed_norm: SmoothedNorm,
}

/// `scale · (|x|² + smoothing²)^{power/2} + plus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothedNorm {
    #[serde(default = "one")]
    pub scale: f64,
    pub smoothing: f64,
    #[serde(default = "one")]
    pub power: f64,
    #[serde(default)]
    pub plus: Option<String>,
}

fn one() -> f64 {
    1.0
}

impl FieldSpec {
    pub fn build(&self) -> Result<ScalarField> {
        Ok(match self {
            FieldSpec::Number(v) => ScalarField::constant(*v),
            FieldSpec::Polynomial(s) => ScalarField::polynomial(parse_poly(s)?),
            FieldSpec::SmoothedNorm(SmoothedNormSpec { smoothed_norm: n }) => {
                if !(n.smoothing >= 0.0 && n.power > 0.0 && n.scale.is_finite()) {
                    bail!("smoothed_norm needs smoothing >= 0 and power > 0");
                }
                let plus = match &n.plus {
                    Some(s) => parse_poly(s)?,
                    None => Polynomial::zero(),
                };
                let (scale, s2, half) = (n.scale, n.smoothing * n.smoothing, n.power / 2.0);
                ScalarField::from_fn(move |p: Point| {
                    scale * (p.x1 * p.x1 + p.x2 * p.x2 + p.x3 * p.x3 + s2).powf(half) + plus.eval(p)
                })
            }
        })
    }
}

fn parse_poly(s: &str) -> Result<Polynomial> {
    Polynomial::parse(s).with_context(|| format!("bad polynomial {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub n: [usize; 3],
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid3> {
        if self.n.iter().any(|&n| n < 3) {
            bail!("grid counts must be >= 3, got {:?}", self.n);
        }
        let h = std::array::from_fn(|a| (self.upper[a] - self.lower[a]) / (self.n[a] - 1) as f64);
        Ok(Grid3::new(self.lower, self.n, h)?)
    }

    /// Every other node of `self`; the counts must be odd.
    pub fn coarsened(&self) -> Result<GridConfig> {
        if self.n.iter().any(|&n| n % 2 == 0 || n < 5) {
            bail!("coarsening needs odd counts >= 5, got {:?}", self.n);
        }
        Ok(GridConfig {
            n: self.n.map(|n| (n - 1) / 2 + 1),
            ..*self
        })
    }
}

/// The PDE instance `F(D^{2,*}u) − c·u = f` with Dirichlet data.
///
/// With `manufactured` set, `f` and `boundary` are derived from that exact
/// solution and must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub operator: OperatorConfig,
    pub c: FieldSpec,
    #[serde(default)]
    pub f: Option<FieldSpec>,
    #[serde(default)]
    pub boundary: Option<FieldSpec>,
    #[serde(default)]
    pub manufactured: Option<String>,
    pub grid: GridConfig,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub method: Option<SolverMethod>,
}

/// A problem ready to solve, plus the exact solution when manufactured.
pub struct Problem {
    pub spec: ProblemSpec,
    pub exact: Option<ScalarField>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Problem> {
        self.build_on(&self.grid)
    }

    pub fn build_on(&self, grid: &GridConfig) -> Result<Problem> {
        let op = OperatorSpec::try_from(&self.operator)?;
        let c = self.c.build()?;
        let (f, boundary, exact) = match (&self.manufactured, &self.f, &self.boundary) {
            (Some(m), None, None) => {
                let u = ScalarField::polynomial(parse_poly(m)?);
                (manufacture(&u, &op, &c)?, u.clone(), Some(u))
            }
            (Some(_), _, _) => bail!("`manufactured` excludes `f` and `boundary`"),
            (None, Some(f), Some(b)) => (f.build()?, b.build()?, None),
            (None, None, _) => bail!("missing field `f`"),
            (None, _, None) => bail!("missing field `boundary`"),
        };
        let mut spec = ProblemSpec::new(op, c, f, boundary, grid.build()?);
        if let Some(t) = self.tol {
            spec.tol = t;
        }
        if let Some(m) = self.max_iters {
            spec.max_iters = m;
        }
        if let Some(m) = self.method {
            spec.method = m;
        }
        spec.validate()?;
        Ok(Problem { spec, exact })
    }
}

/// Config for `pipeline` and `holder`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub problem: ProblemConfig,
    pub holder: HolderData,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// Checks the theorem's hypotheses `c ≥ c₀ > 0` on the fine grid.
    pub fn validate(&self) -> Result<()> {
        self.holder.validate()?;
        let c = self.problem.c.build()?;
        let grid = self.problem.grid.build()?;
        for i in 0..grid.len() {
            let p = grid.point_flat(i);
            let v = c.value(p);
            if !(v >= self.holder.c0) {
                bail!("c = {v} at {p:?} is below c0 = {}", self.holder.c0);
            }
        }
        Ok(())
    }

    pub fn bracket(&self) -> Result<EllipticityBracket> {
        Ok(OperatorSpec::try_from(&self.problem.operator)?.bracket)
    }
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- reports

/// Sidecar written next to every solution CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRecord {
    pub grid: GridConfig,
    pub diagnostics: SolveDiagnostics,
    /// Max interior error against the manufactured solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
}

/// `u.csv` → `u.diagnostics.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("diagnostics.json")
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    pub checks: Vec<CheckReport>,
    pub failed: Vec<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DoublingReport {
    #[serde(rename = "L")]
    pub l: f64,
    pub alpha: f64,
    pub delta: f64,
    pub eps: f64,
    pub theta: f64,
    pub argmax: (Point, Point),
    pub gap: f64,
    pub certified: bool,
    pub pairs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub coarse: SolveRecord,
    pub fine: SolveRecord,
    pub holder: HolderReport,
    pub doubling: DoublingReport,
    pub pass: bool,
}

// ---------------------------------------------------------------- commands

pub fn run(cli: Cli) -> i32 {
    run_with_suite(cli, &Suite::default())
}

/// [`run`] with the Pucci implementations of the property suite swapped in.
pub fn run_with_suite(cli: Cli, suite: &Suite) -> i32 {
    let result = match cli.command {
        Command::Verify { filter, seed, out } => {
            cmd_verify(filter.as_deref(), seed, out.as_deref(), suite)
        }
        Command::Solve { config, out } => cmd_solve(&config, &out),
        Command::Holder { grid, config, out } => cmd_holder(&grid, &config, &out),
        Command::Pipeline {
            config,
            out,
            emit_plot_data,
        } => cmd_pipeline(&config, &out, emit_plot_data),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::FAILURE
        }
    }
}

pub fn cmd_verify(
    filter: Option<&str>,
    seed: u64,
    out: Option<&Path>,
    suite: &Suite,
) -> Result<i32> {
    let checks = run_suite(filter, seed, suite);
    if checks.is_empty() {
        bail!("filter {:?} matches no check", filter.unwrap_or(""));
    }
    for c in &checks {
        eprintln!(
            "{} {:<28} worst-gap {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.lemma_id,
            c.worst_gap
        );
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.lemma_id.clone())
        .collect();
    let report = VerifyReport {
        seed,
        filter: filter.map(str::to_owned),
        pass: failed.is_empty(),
        failed,
        checks,
    };
    match out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(if report.pass { exit::OK } else { exit::FAILURE })
}

/// Interior error `max |u − u*|` over nodes of the interior region.
pub fn max_interior_error(u: &GridFunction, exact: &ScalarField) -> f64 {
    let g = &u.grid;
    (0..g.len())
        .filter(|&i| g.in_interior_region(g.unflatten(i), BOUNDARY_MARGIN))
        .map(|i| (u.values[i] - exact.value(g.point_flat(i))).abs())
        .fold(0.0, f64::max)
}

fn record(grid: GridConfig, out: &SolveOutcome, exact: Option<&ScalarField>) -> SolveRecord {
    SolveRecord {
        grid,
        diagnostics: out.diagnostics,
        max_error: exact.map(|e| max_interior_error(&out.u, e)),
    }
}

fn write_solution(path: &Path, out: &SolveOutcome, rec: &SolveRecord) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    out.u
        .write_csv(path)
        .with_context(|| format!("writing {}", path.display()))?;
    write_json(&sidecar_path(path), rec)
}

pub fn cmd_solve(config: &Path, out: &Path) -> Result<i32> {
    let cfg: ProblemConfig = load_json(config)?;
    let prob = cfg.build()?;
    let outcome = solve_with_guess(&prob.spec, None)?;
    let rec = record(cfg.grid, &outcome, prob.exact.as_ref());
    write_solution(out, &outcome, &rec)?;
    let d = &outcome.diagnostics;
    eprintln!(
        "iterations {} residual {:.3e} converged {}",
        d.iterations, d.residual, d.converged
    );
    if let Some(e) = rec.max_error {
        eprintln!("max interior error {e:.6e}");
    }
    Ok(if d.converged {
        exit::OK
    } else {
        exit::NOT_CONVERGED
    })
}

/// Every other node of `u`, as a grid function on the coarsened grid.
pub fn inject(u: &GridFunction) -> Result<GridFunction> {
    let g = &u.grid;
    if g.n.iter().any(|&n| n % 2 == 0 || n < 5) {
        bail!("injection needs odd counts >= 5, got {:?}", g.n);
    }
    let n = g.n.map(|n| (n - 1) / 2 + 1);
    let coarse = Grid3::new(g.lower, n, g.h.map(|h| 2.0 * h))?;
    let mut values = Vec::with_capacity(coarse.len());
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                values.push(u.at([2 * i, 2 * j, 2 * k]));
            }
        }
    }
    Ok(GridFunction::new(coarse, values)?)
}

fn read_solution(path: &Path) -> Result<(GridFunction, SolveDiagnostics)> {
    let u = GridFunction::read_csv(path).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar_path(path);
    let rec: SolveRecord = load_json(&side).with_context(|| {
        format!(
            "the holder command needs the solver sidecar {}",
            side.display()
        )
    })?;
    Ok((u, rec.diagnostics))
}

pub fn cmd_holder(grids: &[PathBuf], config: &Path, out: &Path) -> Result<i32> {
    let cfg: PipelineConfig = load_json(config)?;
    cfg.validate()?;
    let b = cfg.bracket()?;
    let (coarse, fine) = match grids {
        [one] => {
            let (u, d) = read_solution(one)?;
            ((inject(&u)?, d), (u, d))
        }
        [c, f] => (read_solution(c)?, read_solution(f)?),
        _ => bail!("pass one or two --grid files"),
    };
    let report = check_theorem(
        Solved {
            u: &coarse.0,
            diagnostics: &coarse.1,
        },
        Solved {
            u: &fine.0,
            diagnostics: &fine.1,
        },
        &cfg.holder,
        &b,
        cfg.seed,
    )?;
    write_json(out, &report)?;
    Ok(if report.pass { exit::OK } else { exit::FAILURE })
}

/// Everything `pipeline` computes, before anything is written.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub fine: GridFunction,
    pub modulus: Vec<(f64, f64)>,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let b = cfg.bracket()?;
    let fine_grid = cfg.problem.grid;
    let coarse_grid = fine_grid.coarsened()?;
    let coarse_prob = cfg.problem.build_on(&coarse_grid)?;
    let fine_prob = cfg.problem.build_on(&fine_grid)?;

    let coarse = solve_with_guess(&coarse_prob.spec, None)?;
    let fine = solve_with_guess(&fine_prob.spec, Some(&coarse.u))?;
    let coarse_rec = record(coarse_grid, &coarse, coarse_prob.exact.as_ref());
    let fine_rec = record(fine_grid, &fine, fine_prob.exact.as_ref());
    if !coarse.diagnostics.converged || !fine.diagnostics.converged {
        return Err(anyhow!(NotConverged {
            coarse: coarse_rec,
            fine: fine_rec
        }));
    }

    let holder = check_theorem(
        Solved {
            u: &coarse.u,
            diagnostics: &coarse.diagnostics,
        },
        Solved {
            u: &fine.u,
            diagnostics: &fine.diagnostics,
        },
        &cfg.holder,
        &b,
        cfg.seed,
    )?;
    let alpha = alpha_target(&cfg.holder, &b);
    let seminorm = if holder.seminorm_at_target > 0.0 {
        holder.seminorm_at_target
    } else {
        holder_seminorm(&fine.u, alpha, cfg.seed)?
    };
    // a zero seminorm leaves L free; any positive value certifies
    let l = CERT_SLACK * seminorm.max(f64::MIN_POSITIVE.sqrt());
    let pp = PenaltyParams::new(l, alpha, CERT_DELTA, CERT_EPS, 1.0)?;
    let cert = doubling_certificate(&fine.u, &pp, &interior_box(&fine.u)?)?;
    let (_, modulus) = hregularity::fit_alpha(&fine.u, cfg.seed)?;

    let pass = holder.pass;
    Ok(PipelineRun {
        report: PipelineReport {
            seed: cfg.seed,
            coarse: coarse_rec,
            fine: fine_rec,
            holder,
            doubling: DoublingReport {
                l,
                alpha,
                delta: CERT_DELTA,
                eps: CERT_EPS,
                theta: cert.theta,
                argmax: cert.argmax,
                gap: cert.gap,
                certified: cert.certified,
                pairs: cert.pairs,
            },
            pass,
        },
        fine: fine.u,
        modulus,
    })
}

/// Raised by [`run_pipeline`] when either solve stops short of `tol`.
#[derive(Debug)]
pub struct NotConverged {
    pub coarse: SolveRecord,
    pub fine: SolveRecord,
}

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "solver did not converge (coarse residual {:.3e}, fine residual {:.3e})",
            self.coarse.diagnostics.residual, self.fine.diagnostics.residual
        )
    }
}

impl std::error::Error for NotConverged {}

pub fn cmd_pipeline(config: &Path, out: &Path, emit_plot_data: bool) -> Result<i32> {
    let cfg: PipelineConfig = load_json(config)?;
    let run = match run_pipeline(&cfg) {
        Ok(r) => r,
        Err(e) if e.is::<NotConverged>() => {
            eprintln!("error: {e:#}");
            return Ok(exit::NOT_CONVERGED);
        }
        Err(e) => return Err(e),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = SolveOutcome {
        u: run.fine,
        diagnostics: run.report.fine.diagnostics,
    };
    write_solution(&out.join("solution.csv"), &outcome, &run.report.fine)?;
    write_json(&out.join("report.json"), &run.report)?;
    if emit_plot_data {
        let mut text = String::from("r,omega\n");
        for (r, w) in &run.modulus {
            text.push_str(&format!("{},{}\n", fmt17(*r), fmt17(*w)));
        }
        fs::write(out.join("modulus.csv"), text)?;
    }
    let h = &run.report.holder;
    eprintln!(
        "alpha_target {:.3} alpha_fit {:.3} seminorm {:.4} change {:.3} theta {:.3e} pass {}",
        h.alpha_target,
        h.alpha_fit,
        h.seminorm_at_target,
        h.seminorm_change,
        run.report.doubling.theta,
        h.pass
    );
    Ok(if run.report.pass {
        exit::OK
    } else {
        exit::FAILURE
    })
}
