//! The `sdpack` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{self, BoundednessCertificate};
use crate::error::Error;
use crate::linalg;
use crate::model::{parse_problem, parse_solution, CombinedProblem, PackingProblem, Problem, Status};
use crate::reduce::{self, ReducedBundle};
use crate::solve::{self, cone::ConicSettings, Route, SolveOptions, Solved};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNBOUNDED: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

/// Largest relative difference between a factorized solve and the oracle
/// before the factorized answer is flagged.
pub const BM_ORACLE_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "sdpack", version, about = "Semidefinite packing problems: certificates, reductions, low-rank solutions and optimal design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub report: Format,
    /// Write the report here instead of stdout.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Duality-gap target.
    #[arg(long, env = "SDPACK_TOL")]
    pub tol: Option<f64>,
    /// Iteration cap for each inner solve.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative eigenvalue cutoff for numerical rank.
    #[arg(long)]
    pub rank_threshold: Option<f64>,
}

impl SolverFlags {
    pub fn options(&self) -> SolveOptions {
        let mut o = SolveOptions::default();
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        if let Some(r) = self.rank_threshold {
            o.rank_threshold = r;
        }
        o
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Auto,
    Socp,
    EpsPath,
    Bm,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Route {
        match r {
            RouteArg::Auto => Route::Auto,
            RouteArg::Socp => Route::Socp,
            RouteArg::EpsPath => Route::EpsPath,
            RouteArg::Bm => Route::Bm,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Feasibility, boundedness certificate, ranks and bounds of packing problems.
    Analyze {
        /// Problem files, processed in parallel; reports keep input order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Projects packing problems onto strictly feasible form.
    Reduce {
        /// Problem files, processed in parallel; reports keep input order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Solves packing or combined problems.
    Solve {
        /// Problem files, processed in parallel; reports keep input order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        flags: SolverFlags,
        /// Solver route; auto picks the cone program when the optimum has rank one.
        #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
        route: RouteArg,
        /// Also run the dense SDP and report the difference.
        #[arg(long)]
        oracle: bool,
    },
    /// Optimal designs from design problem files.
    Design {
        /// Problem files, processed in parallel; reports keep input order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Checks a solution against the KKT conditions of a packing problem.
    Verify {
        /// Packing problem file.
        problem: PathBuf,
        /// Solution document, such as the `solution` field of a solve report.
        solution: PathBuf,
        /// Residual tolerance, relative to the problem scale.
        #[arg(long, env = "SDPACK_TOL", default_value_t = 1e-6)]
        tol: f64,
    },
    /// The rank-one approximation factor and the rank bound.
    GapBound {
        /// Problem files, processed in parallel; reports keep input order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// A finished command: the report and the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Outcome { report, code: EXIT_OK }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::RangeInclusionFails | Error::UnboundedInput | Error::InfeasibleDual { .. } => EXIT_UNBOUNDED,
        Error::InfeasibleInput { .. } | Error::InfeasiblePrimal { .. } | Error::InfeasibleDesign(_) => EXIT_INFEASIBLE,
        Error::MaxIterations { .. }
        | Error::NumericalFailure(_)
        | Error::PathDiverged { .. }
        | Error::PathNotMonotone { .. }
        | Error::ZeroDual => EXIT_NUMERICAL,
        Error::InvalidInput(_)
        | Error::NotPsd { .. }
        | Error::DimensionMismatch { .. }
        | Error::Schema(_)
        | Error::Validation { .. }
        | Error::RankNotOne { .. }
        | Error::NonzeroR { .. }
        | Error::NonzeroH0
        | Error::WrongCriterion => EXIT_INPUT,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::NotPsd { .. } => "not_psd",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Schema(_) => "schema",
        Error::Validation { .. } => "validation",
        Error::RangeInclusionFails => "range_inclusion_fails",
        Error::UnboundedInput => "unbounded_input",
        Error::InfeasibleInput { .. } => "infeasible_input",
        Error::RankNotOne { .. } => "rank_not_one",
        Error::NonzeroR { .. } => "nonzero_r",
        Error::NonzeroH0 => "nonzero_h0",
        Error::InfeasiblePrimal { .. } => "infeasible_primal",
        Error::InfeasibleDual { .. } => "infeasible_dual",
        Error::WrongCriterion => "wrong_criterion",
        Error::InfeasibleDesign(_) => "infeasible_design",
        Error::MaxIterations { .. } => "max_iterations",
        Error::NumericalFailure(_) => "numerical_failure",
        Error::PathDiverged { .. } => "path_diverged",
        Error::PathNotMonotone { .. } => "path_not_monotone",
        Error::ZeroDual => "zero_dual",
    }
}

/// JSON diagnostic for a failed command.
pub fn diagnostic(e: &Error, certificate: Option<&BoundednessCertificate>) -> Outcome {
    let mut err = json!({ "kind": error_kind(e), "message": e.to_string() });
    match e {
        Error::Validation { witness, .. } => err["witness"] = to_value(witness),
        Error::InfeasibleInput { index } => err["index"] = json!(index),
        Error::DimensionMismatch { expected, found } => {
            err["expected"] = json!(expected);
            err["found"] = json!(found);
        }
        _ => {}
    }
    if let Some(c) = certificate {
        err["certificate"] = to_value(c);
    }
    let code = exit_code(e);
    Outcome { report: json!({ "kind": "error", "exit_code": code, "error": err }), code }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn read_problem(path: &Path) -> Result<Problem, Error> {
    parse_problem(&read(path)?)
}

fn packing_only(p: Problem, command: &str) -> Result<PackingProblem, Error> {
    match p {
        Problem::Packing(p) => Ok(p),
        Problem::Combined(_) => Err(Error::InvalidInput(format!("{command} expects a packing problem, found a combined problem"))),
        Problem::Design(_) => Err(Error::InvalidInput(format!("{command} expects a packing problem, found a design problem"))),
    }
}

/// Turns an error on a packing problem into a diagnostic, attaching the
/// boundedness certificate when the problem is unbounded.
fn packing_failure(p: &PackingProblem, e: Error) -> Outcome {
    let cert = match e {
        Error::UnboundedInput | Error::RangeInclusionFails => analysis::check_bounded(p).ok(),
        _ => None,
    };
    diagnostic(&e, cert.as_ref())
}

pub fn analyze(p: &PackingProblem) -> Result<Value, Error> {
    let feasibility = analysis::check_feasible(p);
    let certificate = analysis::check_bounded(p)?;
    let gap = analysis::nrt_bound(p)?;
    let mut report = json!({
        "kind": "analysis",
        "n": p.n(),
        "l": p.l(),
        "feasible": feasibility.feasible,
        "bounded": certificate.is_bounded(),
        "rank_c": linalg::rank_tol(p.c(), None)?,
        "rank_sum_m": linalg::rank_tol(&p.sum_m(), None)?,
        "barvinok_pataki": analysis::barvinok_pataki(p.l()),
        "gap_bound": to_value(&gap),
        "certificate": to_value(&certificate),
    });
    if let Some(i) = feasibility.index {
        report["index"] = json!(i);
    }
    match &certificate {
        BoundednessCertificate::Bounded { lambda, .. } => report["lambda"] = json!(lambda),
        BoundednessCertificate::Unbounded { ray, .. } => report["ray"] = json!(ray),
    }
    Ok(report)
}

pub fn cmd_analyze(path: &Path) -> Outcome {
    let p = match read_problem(path).and_then(|p| packing_only(p, "analyze")) {
        Ok(p) => p,
        Err(e) => return diagnostic(&e, None),
    };
    match analyze(&p) {
        Ok(r) => Outcome::ok(r),
        Err(e) => diagnostic(&e, None),
    }
}

pub fn cmd_reduce(path: &Path) -> Outcome {
    let p = match read_problem(path).and_then(|p| packing_only(p, "reduce")) {
        Ok(p) => p,
        Err(e) => return diagnostic(&e, None),
    };
    match reduce::project_packing(&p) {
        Ok((r, map)) => Outcome::ok(to_value(&ReducedBundle::new(&r, &map))),
        Err(e) => packing_failure(&p, e),
    }
}

fn status_code(s: Status) -> i32 {
    match s {
        Status::Unbounded => EXIT_UNBOUNDED,
        Status::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    }
}

fn relative_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn solve_packing_report(p: &PackingProblem, opts: &SolveOptions, route: Route, oracle: bool) -> Result<Value, Error> {
    let Solved { mut solution, mut report } = solve::solve_packing(p, opts, route)?;
    let value = solution.objective.unwrap_or(f64::NAN);
    let mut oracle_block = None;
    if oracle {
        let o = solve::solve_sdp(p, opts)?;
        let ov = o.solution.objective.unwrap_or(f64::NAN);
        let diff = relative_diff(value, ov);
        if route == Route::Bm && !(diff <= BM_ORACLE_TOL) {
            solution.status = Status::NonCertified;
            report.status = Status::NonCertified;
        }
        oracle_block = Some(json!({ "value": ov, "status": o.solution.status, "diff": diff }));
    }
    let mut out = json!({
        "kind": "solve",
        "problem": "packing",
        "route": report.route,
        "status": solution.status,
        "value": value,
        "rank": solution.numerical_rank,
        "kkt": solution.kkt_residuals,
        "report": to_value(&report),
        "options": to_value(opts),
        "solution": to_value(&solution),
    });
    if let Some(o) = oracle_block {
        out["oracle"] = o;
    }
    Ok(out)
}

/// Combined problems whose cone form applies: rank-one `C`, all `R_i = 0`
/// and `h_0 = 0`.
fn socp_eligible(p: &CombinedProblem) -> bool {
    p.r().iter().all(|r| r.max_abs() == 0.0)
        && p.h0().iter().all(|&v| v == 0.0)
        && linalg::rank_tol(p.c(), None).is_ok_and(|r| r == 1)
}

fn solve_combined_report(p: &CombinedProblem, opts: &SolveOptions, route: Route, oracle: bool) -> Result<Value, Error> {
    let use_socp = match route {
        Route::Auto => socp_eligible(p),
        Route::Socp => true,
        Route::EpsPath => false,
        Route::Bm => return Err(Error::InvalidInput("the bm route solves packing problems only".into())),
    };
    let (solution, report, rank) = if use_socp {
        let (s, r) = solve::solve_combined_socp(p, opts)?;
        let rank = linalg::rank_tol(&s.x, Some(opts.rank_threshold))?;
        (s, r, rank)
    } else {
        let out = solve::solve_combined_eta(p, opts)?;
        let rank = out.solution.path_ranks.last().copied().unwrap_or(0);
        (out.solution, out.report, rank)
    };
    let mut out = json!({
        "kind": "solve",
        "problem": "combined",
        "route": report.route,
        "status": solution.status,
        "value": solution.objective,
        "rank": rank,
        "report": to_value(&report),
        "options": to_value(opts),
        "solution": to_value(&solution),
    });
    if oracle {
        let settings: ConicSettings = opts.conic_default();
        let d = solve::solve_sdp_dense(p, None, &settings)?;
        out["oracle"] = json!({ "value": d.value(), "diff": relative_diff(solution.objective, d.value()) });
    }
    Ok(out)
}

/// Solve report for a packing or combined problem.
pub fn solve_report(p: &Problem, opts: &SolveOptions, route: Route, oracle: bool) -> Result<Value, Error> {
    match p {
        Problem::Packing(p) => solve_packing_report(p, opts, route, oracle),
        Problem::Combined(p) => solve_combined_report(p, opts, route, oracle),
        Problem::Design(_) => Err(Error::InvalidInput("design problems are solved with the design command".into())),
    }
}

pub fn cmd_solve(path: &Path, opts: &SolveOptions, route: Route, oracle: bool) -> Outcome {
    match read_problem(path) {
        Err(e) => diagnostic(&e, None),
        Ok(Problem::Packing(p)) => match solve_packing_report(&p, opts, route, oracle) {
            Ok(r) => {
                let code = r["status"].as_str().map_or(EXIT_OK, |s| status_code(from_name(s)));
                Outcome { report: r, code }
            }
            Err(e) => packing_failure(&p, e),
        },
        Ok(Problem::Combined(p)) => match solve_combined_report(&p, opts, route, oracle) {
            Ok(r) => {
                let code = r["status"].as_str().map_or(EXIT_OK, |s| status_code(from_name(s)));
                Outcome { report: r, code }
            }
            Err(e) => diagnostic(&e, None),
        },
        Ok(Problem::Design(_)) => diagnostic(&Error::InvalidInput("design problems are solved with the design command".into()), None),
    }
}

fn from_name(s: &str) -> Status {
    serde_json::from_value(json!(s)).unwrap_or(Status::NonCertified)
}

pub fn cmd_design(path: &Path, opts: &SolveOptions) -> Outcome {
    let d = match read_problem(path) {
        Ok(Problem::Design(d)) => d,
        Ok(_) => return diagnostic(&Error::InvalidInput("design expects a design problem".into()), None),
        Err(e) => return diagnostic(&e, None),
    };
    match solve::solve_design(&d, opts) {
        Ok(r) => {
            let mut v = to_value(&r);
            v["kind"] = json!("design");
            Outcome::ok(v)
        }
        Err(e) => diagnostic(&e, None),
    }
}

pub fn cmd_verify(problem: &Path, solution: &Path, tol: f64) -> Outcome {
    let run = || -> Result<Value, Error> {
        let p = packing_only(read_problem(problem)?, "verify")?;
        let s = parse_solution(&read(solution)?)?;
        if s.x.n() != p.n() {
            return Err(Error::DimensionMismatch { expected: p.n(), found: s.x.n() });
        }
        if s.mu.len() != p.l() {
            return Err(Error::DimensionMismatch { expected: p.l(), found: s.mu.len() });
        }
        let k = solve::kkt_check(&p, &s.x, &s.mu, tol);
        Ok(json!({
            "kind": "verify",
            "pass": k.pass,
            "tol": k.tol,
            "scale": k.scale,
            "residuals": k.residuals,
            "worst": k.worst(),
            "objective": p.objective(&s.x),
        }))
    };
    match run() {
        Ok(r) => Outcome::ok(r),
        Err(e) => diagnostic(&e, None),
    }
}

pub fn cmd_gap_bound(path: &Path) -> Outcome {
    let run = || -> Result<Value, Error> {
        let p = packing_only(read_problem(path)?, "gap-bound")?;
        let g = analysis::nrt_bound(&p)?;
        let mut v = to_value(&g);
        v["kind"] = json!("gap_bound");
        v["barvinok_pataki"] = json!(analysis::barvinok_pataki(p.l()));
        Ok(v)
    };
    match run() {
        Ok(r) => Outcome::ok(r),
        Err(e) => diagnostic(&e, None),
    }
}

/// Runs the command on every input, in parallel, keeping input order.
pub fn execute(command: &Command) -> Vec<(PathBuf, Outcome)> {
    let each = |files: &[PathBuf], f: &(dyn Fn(&Path) -> Outcome + Sync)| -> Vec<(PathBuf, Outcome)> {
        files.par_iter().map(|path| (path.clone(), f(path))).collect()
    };
    match command {
        Command::Analyze { files } => each(files, &|p| cmd_analyze(p)),
        Command::Reduce { files } => each(files, &|p| cmd_reduce(p)),
        Command::Solve { files, flags, route, oracle } => {
            let opts = flags.options();
            if let Err(e) = opts.validate() {
                return vec![(PathBuf::new(), diagnostic(&e, None))];
            }
            let route = Route::from(*route);
            each(files, &|p| cmd_solve(p, &opts, route, *oracle))
        }
        Command::Design { files, flags } => {
            let opts = flags.options();
            if let Err(e) = opts.validate() {
                return vec![(PathBuf::new(), diagnostic(&e, None))];
            }
            each(files, &|p| cmd_design(p, &opts))
        }
        Command::Verify { problem, solution, tol } => vec![(problem.clone(), cmd_verify(problem, solution, *tol))],
        Command::GapBound { files } => each(files, &|p| cmd_gap_bound(p)),
    }
}

/// Rounds to nine significant digits for display.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-4..1e9).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

fn text_value(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.to_string(),
            None => sig9(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Array(a) => format!("[{}]", a.iter().map(text_value).collect::<Vec<_>>().join(", ")),
        Value::Object(_) => "{..}".into(),
    }
}

fn text_lines(v: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(map) = v else {
        out.push(format!("{prefix}: {}", text_value(v)));
        return;
    };
    for (k, val) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match val {
            // Matrices and solution blocks are too large for a summary.
            Value::Object(_) if matches!(k.as_str(), "solution" | "formulation" | "problem" | "lift" | "options") => {}
            Value::Object(_) => text_lines(val, &key, out),
            Value::Array(a) if a.iter().any(|x| x.is_array() || x.is_object()) => {}
            _ => out.push(format!("{key}: {}", text_value(val))),
        }
    }
}

/// Human-readable report: one `key: value` line per scalar field, numbers
/// at nine significant digits.
pub fn render_text(v: &Value) -> String {
    let mut lines = Vec::new();
    text_lines(v, "", &mut lines);
    lines.join("\n") + "\n"
}

/// Serializes the outcomes. A single input gives its report; several give an
/// array of `{file, exit_code, report}` in input order.
pub fn render(results: &[(PathBuf, Outcome)], format: Format) -> String {
    match (format, results) {
        (Format::Json, [(_, o)]) => serde_json::to_string_pretty(&o.report).expect("report serializes") + "\n",
        (Format::Json, _) => {
            let all: Vec<Value> = results
                .iter()
                .map(|(f, o)| json!({ "file": f.display().to_string(), "exit_code": o.code, "report": o.report }))
                .collect();
            serde_json::to_string_pretty(&all).expect("report serializes") + "\n"
        }
        (Format::Text, [(_, o)]) => render_text(&o.report),
        (Format::Text, _) => results
            .iter()
            .map(|(f, o)| format!("== {} ==\n{}", f.display(), render_text(&o.report)))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// The first nonzero exit code in input order.
pub fn combined_code(results: &[(PathBuf, Outcome)]) -> i32 {
    results.iter().map(|(_, o)| o.code).find(|&c| c != EXIT_OK).unwrap_or(EXIT_OK)
}

/// Parses arguments, runs the command and writes the report. Returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    let results = execute(&cli.command);
    let code = combined_code(&results);
    let text = render(&results, cli.report);
    if cli.report == Format::Text {
        for (_, o) in results.iter().filter(|(_, o)| o.code != EXIT_OK) {
            let _ = writeln!(stderr, "{}", o.report);
        }
    }
    let written = match &cli.output {
        Some(path) => std::fs::write(path, &text).map_err(|e| e.to_string()),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "{}", json!({ "kind": "error", "exit_code": EXIT_INPUT, "error": { "kind": "io", "message": e } }));
        return EXIT_INPUT;
    }
    code
}
