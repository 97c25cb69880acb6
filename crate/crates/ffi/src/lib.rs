//! C interface to `sdpack`.
//!
//! Problems and solutions are opaque handles created and freed through this
//! interface. Every fallible call returns an [`SdpackCode`]; on failure the
//! message is available from [`sdpack_last_error`] on the same thread.
//! Matrices cross the boundary as dense row-major `double` arrays. Strings
//! returned through `char **` are owned by the caller and released with
//! [`sdpack_string_free`]. Pointers must be valid for the sizes stated, and
//! handles must come from this library.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sdpack::error::Error;
use sdpack::linalg::SymMatrix;
use sdpack::model::{parse_problem, serialize_problem, CombinedSolution, PackingProblem, Problem, Solution, Status};
use sdpack::solve::{kkt_check, Route, SolveOptions};
use serde_json::Value;

/// Result of every fallible call. Values 2 to 5 match the `sdpack` command
/// line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpackCode {
    Ok = 0,
    NullPointer = 1,
    Input = 2,
    Unbounded = 3,
    Infeasible = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    WrongKind = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpackRoute {
    Auto = 0,
    Socp = 1,
    EpsPath = 2,
    Bm = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpackStatus {
    Optimal = 0,
    Unbounded = 1,
    Infeasible = 2,
    AsymptoticSup = 3,
    NearUnattained = 4,
    NonCertified = 5,
}

impl From<Status> for SdpackStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Optimal => SdpackStatus::Optimal,
            Status::Unbounded => SdpackStatus::Unbounded,
            Status::Infeasible => SdpackStatus::Infeasible,
            Status::AsymptoticSup => SdpackStatus::AsymptoticSup,
            Status::NearUnattained => SdpackStatus::NearUnattained,
            Status::NonCertified => SdpackStatus::NonCertified,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpackOptions {
    /// Duality-gap target.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative eigenvalue cutoff for numerical rank.
    pub rank_threshold: f64,
    /// One of the [`SdpackRoute`] values.
    pub route: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpackKkt {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub pass: bool,
}

/// A parsed packing, combined or design problem.
pub struct SdpackProblem {
    inner: Problem,
}

/// A solve result.
pub struct SdpackSolution {
    x: SymMatrix,
    /// Constraint multipliers; empty for combined problems.
    mu: Vec<f64>,
    objective: f64,
    rank: usize,
    status: Status,
    report: Value,
}

fn sym_from_row_major(n: usize, data: &[f64]) -> Result<SymMatrix, Error> {
    let rows: Vec<Vec<f64>> = data.chunks(n.max(1)).take(n).map(<[f64]>::to_vec).collect();
    SymMatrix::from_rows(&rows)
}

fn write_row_major(m: &SymMatrix, out: &mut [f64]) {
    let n = m.n();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn fail(code: SdpackCode, msg: impl Into<String>) -> SdpackCode {
    set_error(msg);
    code
}

fn code_of(e: &Error) -> SdpackCode {
    match sdpack::cli::exit_code(e) {
        3 => SdpackCode::Unbounded,
        4 => SdpackCode::Infeasible,
        5 => SdpackCode::Numerical,
        _ => SdpackCode::Input,
    }
}

fn from_error(e: Error) -> SdpackCode {
    fail(code_of(&e), e.to_string())
}

/// Runs `f`, turning a panic into [`SdpackCode::Panic`].
fn guard(f: impl FnOnce() -> SdpackCode) -> SdpackCode {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(SdpackCode::Ok) => {
            set_error("");
            SdpackCode::Ok
        }
        Ok(code) => code,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SdpackCode::Panic, format!("internal error: {msg}"))
        }
    }
}

unsafe fn give_string(s: String, out: *mut *mut c_char) -> SdpackCode {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            SdpackCode::Ok
        }
        Err(_) => fail(SdpackCode::Panic, "string contains a nul byte"),
    }
}

/// Library version, as a static string.
#[no_mangle]
pub extern "C" fn sdpack_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sdpack_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn sdpack_options_default() -> SdpackOptions {
    let o = SolveOptions::default();
    SdpackOptions { tol: o.tol, max_iter: o.max_iter, rank_threshold: o.rank_threshold, route: SdpackRoute::Auto as i32 }
}

/// Parses a JSON problem document (packing, combined or design).
#[no_mangle]
pub unsafe extern "C" fn sdpack_problem_from_json(json: *const c_char, out: *mut *mut SdpackProblem) -> SdpackCode {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(SdpackCode::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(SdpackCode::Input, "problem text is not UTF-8");
        };
        match parse_problem(text) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(SdpackProblem { inner: p }));
                SdpackCode::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds a packing problem from `C` (`n × n`), the `M_i` stacked as `l`
/// consecutive `n × n` blocks, and `b` (length `l`).
#[no_mangle]
pub unsafe extern "C" fn sdpack_problem_packing(
    n: usize,
    l: usize,
    c: *const f64,
    m: *const f64,
    b: *const f64,
    out: *mut *mut SdpackProblem,
) -> SdpackCode {
    guard(|| {
        if c.is_null() || m.is_null() || b.is_null() || out.is_null() {
            return fail(SdpackCode::NullPointer, "null argument");
        }
        let nn = n * n;
        let build = || -> Result<PackingProblem, Error> {
            let cm = sym_from_row_major(n, std::slice::from_raw_parts(c, nn))?;
            let ms = std::slice::from_raw_parts(m, l * nn);
            let ms = (0..l).map(|i| sym_from_row_major(n, &ms[i * nn..(i + 1) * nn])).collect::<Result<Vec<_>, _>>()?;
            PackingProblem::from_parts(cm, ms, std::slice::from_raw_parts(b, l).to_vec())
        };
        match build() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(SdpackProblem { inner: Problem::Packing(p) }));
                SdpackCode::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_problem_free(p: *mut SdpackProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Matrix size `n` and number of constraints `l`.
#[no_mangle]
pub unsafe extern "C" fn sdpack_problem_dims(p: *const SdpackProblem, n: *mut usize, l: *mut usize) -> SdpackCode {
    guard(|| {
        let (Some(p), false, false) = (p.as_ref(), n.is_null(), l.is_null()) else {
            return fail(SdpackCode::NullPointer, "null argument");
        };
        let (pn, pl) = match &p.inner {
            Problem::Packing(q) => (q.n(), q.l()),
            Problem::Combined(q) => (q.n(), q.l()),
            Problem::Design(q) => (q.n(), q.l()),
        };
        *n = pn;
        *l = pl;
        SdpackCode::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_problem_to_json(p: *const SdpackProblem, out: *mut *mut c_char) -> SdpackCode {
    guard(|| {
        let Some(p) = p.as_ref() else { return fail(SdpackCode::NullPointer, "null problem") };
        if out.is_null() {
            return fail(SdpackCode::NullPointer, "null output");
        }
        give_string(serialize_problem(&p.inner), out)
    })
}

/// Feasibility, boundedness certificate, ranks and bounds of a packing
/// problem, as a JSON report.
#[no_mangle]
pub unsafe extern "C" fn sdpack_analyze(p: *const SdpackProblem, out: *mut *mut c_char) -> SdpackCode {
    guard(|| {
        let Some(p) = p.as_ref() else { return fail(SdpackCode::NullPointer, "null problem") };
        if out.is_null() {
            return fail(SdpackCode::NullPointer, "null output");
        }
        let Problem::Packing(q) = &p.inner else { return fail(SdpackCode::WrongKind, "analysis needs a packing problem") };
        match sdpack::cli::analyze(q) {
            Ok(v) => give_string(v.to_string(), out),
            Err(e) => from_error(e),
        }
    })
}

fn solution_from_report(report: Value) -> Result<SdpackSolution, String> {
    let block = report["solution"].clone();
    let rank = report["rank"].as_u64().unwrap_or(0) as usize;
    let (x, mu, objective, status) = if report["problem"] == "combined" {
        let s: CombinedSolution = serde_json::from_value(block).map_err(|e| e.to_string())?;
        (s.x, Vec::new(), s.objective, s.status)
    } else {
        let s: Solution = serde_json::from_value(block).map_err(|e| e.to_string())?;
        (s.x, s.mu, s.objective.unwrap_or(f64::NAN), s.status)
    };
    Ok(SdpackSolution { x, mu, objective, rank, status, report })
}

/// Solves a packing or combined problem. `opts` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn sdpack_solve(p: *const SdpackProblem, opts: *const SdpackOptions, out: *mut *mut SdpackSolution) -> SdpackCode {
    guard(|| {
        let Some(p) = p.as_ref() else { return fail(SdpackCode::NullPointer, "null problem") };
        if out.is_null() {
            return fail(SdpackCode::NullPointer, "null output");
        }
        if matches!(p.inner, Problem::Design(_)) {
            return fail(SdpackCode::WrongKind, "design problems are solved with sdpack_design");
        }
        let o = opts.as_ref().copied().unwrap_or_else(|| sdpack_options_default());
        let options = SolveOptions { tol: o.tol, max_iter: o.max_iter, rank_threshold: o.rank_threshold, ..SolveOptions::default() };
        if let Err(e) = options.validate() {
            return from_error(e);
        }
        let route = match o.route {
            r if r == SdpackRoute::Auto as i32 => Route::Auto,
            r if r == SdpackRoute::Socp as i32 => Route::Socp,
            r if r == SdpackRoute::EpsPath as i32 => Route::EpsPath,
            r if r == SdpackRoute::Bm as i32 => Route::Bm,
            r => return fail(SdpackCode::Input, format!("unknown route {r}")),
        };
        match sdpack::cli::solve_report(&p.inner, &options, route, false) {
            Ok(report) => match solution_from_report(report) {
                Ok(s) => {
                    *out = Box::into_raw(Box::new(s));
                    SdpackCode::Ok
                }
                Err(e) => fail(SdpackCode::Panic, e),
            },
            Err(e) => from_error(e),
        }
    })
}

/// Optimal design of a design problem, as a JSON report.
#[no_mangle]
pub unsafe extern "C" fn sdpack_design(p: *const SdpackProblem, opts: *const SdpackOptions, out: *mut *mut c_char) -> SdpackCode {
    guard(|| {
        let Some(p) = p.as_ref() else { return fail(SdpackCode::NullPointer, "null problem") };
        if out.is_null() {
            return fail(SdpackCode::NullPointer, "null output");
        }
        let Problem::Design(d) = &p.inner else { return fail(SdpackCode::WrongKind, "sdpack_design needs a design problem") };
        let o = opts.as_ref().copied().unwrap_or_else(|| sdpack_options_default());
        let options = SolveOptions { tol: o.tol, max_iter: o.max_iter, rank_threshold: o.rank_threshold, ..SolveOptions::default() };
        match sdpack::solve::solve_design(d, &options) {
            Ok(r) => give_string(serde_json::to_string(&r).expect("report serializes"), out),
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_free(s: *mut SdpackSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_status(s: *const SdpackSolution, out: *mut SdpackStatus) -> SdpackCode {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else { return fail(SdpackCode::NullPointer, "null argument") };
        *out = s.status.into();
        SdpackCode::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_objective(s: *const SdpackSolution, out: *mut f64) -> SdpackCode {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else { return fail(SdpackCode::NullPointer, "null argument") };
        *out = s.objective;
        SdpackCode::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_rank(s: *const SdpackSolution, out: *mut usize) -> SdpackCode {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else { return fail(SdpackCode::NullPointer, "null argument") };
        *out = s.rank;
        SdpackCode::Ok
    })
}

/// Size `n` of `X` and the number of multipliers (zero for combined
/// problems).
#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_sizes(s: *const SdpackSolution, n: *mut usize, mu_len: *mut usize) -> SdpackCode {
    guard(|| {
        let (Some(s), false, false) = (s.as_ref(), n.is_null(), mu_len.is_null()) else {
            return fail(SdpackCode::NullPointer, "null argument");
        };
        *n = s.x.n();
        *mu_len = s.mu.len();
        SdpackCode::Ok
    })
}

/// Copies `X` row-major into `buf`, which holds `len ≥ n²` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_x(s: *const SdpackSolution, buf: *mut f64, len: usize) -> SdpackCode {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), buf.is_null()) else { return fail(SdpackCode::NullPointer, "null argument") };
        let need = s.x.n() * s.x.n();
        if len < need {
            return fail(SdpackCode::BufferTooSmall, format!("X needs {need} doubles, buffer holds {len}"));
        }
        write_row_major(&s.x, std::slice::from_raw_parts_mut(buf, need));
        SdpackCode::Ok
    })
}

/// Copies the multipliers into `buf`, which holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_mu(s: *const SdpackSolution, buf: *mut f64, len: usize) -> SdpackCode {
    guard(|| {
        let Some(s) = s.as_ref() else { return fail(SdpackCode::NullPointer, "null solution") };
        if s.mu.is_empty() {
            return SdpackCode::Ok;
        }
        if buf.is_null() {
            return fail(SdpackCode::NullPointer, "null buffer");
        }
        if len < s.mu.len() {
            return fail(SdpackCode::BufferTooSmall, format!("mu needs {} doubles, buffer holds {len}", s.mu.len()));
        }
        std::slice::from_raw_parts_mut(buf, s.mu.len()).copy_from_slice(&s.mu);
        SdpackCode::Ok
    })
}

/// The full solve report as JSON, the same document `sdpack solve` prints.
#[no_mangle]
pub unsafe extern "C" fn sdpack_solution_to_json(s: *const SdpackSolution, out: *mut *mut c_char) -> SdpackCode {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else { return fail(SdpackCode::NullPointer, "null argument") };
        give_string(s.report.to_string(), out)
    })
}

/// KKT residuals of `(X, μ)` for a packing problem, with `X` row-major
/// `n × n` and `μ` of length `l`. Passes when every residual is at most
/// `tol` times the problem scale.
#[no_mangle]
pub unsafe extern "C" fn sdpack_verify(
    p: *const SdpackProblem,
    x: *const f64,
    mu: *const f64,
    tol: f64,
    out: *mut SdpackKkt,
) -> SdpackCode {
    guard(|| {
        let Some(p) = p.as_ref() else { return fail(SdpackCode::NullPointer, "null problem") };
        if x.is_null() || mu.is_null() || out.is_null() {
            return fail(SdpackCode::NullPointer, "null argument");
        }
        let Problem::Packing(q) = &p.inner else { return fail(SdpackCode::WrongKind, "verification needs a packing problem") };
        let xm = match sym_from_row_major(q.n(), std::slice::from_raw_parts(x, q.n() * q.n())) {
            Ok(m) => m,
            Err(e) => return from_error(e),
        };
        let k = kkt_check(q, &xm, std::slice::from_raw_parts(mu, q.l()), tol);
        *out = SdpackKkt { primal: k.residuals.primal, dual: k.residuals.dual, complementarity: k.residuals.complementarity, pass: k.pass };
        SdpackCode::Ok
    })
}
