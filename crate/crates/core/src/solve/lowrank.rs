//! Low-rank solutions of packing problems.
//!
//! After reduction to a strictly feasible problem, a rank-one objective goes
//! to the cone program `max cᵀx s.t. ‖A_i x‖ ≤ √b_i`. Otherwise the perturbed
//! problems with `M_i + εI` are solved along a decreasing schedule. For
//! `ε > 0` the dual slack `Σ μ_i (M_i + εI) − C` has at least `n − r`
//! eigenvalues `≥ ε` (`r = rank C`), so every optimal `X^ε` lives in the span of
//! its `r` smallest eigenvectors. The interior-point iterate carries small
//! spurious components outside that span; the final solution is recovered
//! by re-solving the problem restricted to the span.

use nalgebra::DMatrix;

use super::sdp::{solve_sdp_dense, DenseResult};
use super::{kkt, socp, PathReport, SolveOptions, SolveReport, Solved};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{CombinedProblem, Constraint, PackingProblem, Solution, Status};
use crate::reduce::{self, lift_solution};

/// Relative slack allowed when checking that `OPT(ε)` does not decrease as
/// `ε` shrinks.
pub const PATH_MONOTONE_TOL: f64 = 1e-9;

fn perturbed(p: &PackingProblem, eps: f64) -> Result<PackingProblem> {
    let id = SymMatrix::identity(p.n());
    let cons = p
        .constraints()
        .iter()
        .map(|k| Constraint { m: k.m.add(&id.scale(eps)), b: k.b })
        .collect();
    PackingProblem::new(p.c().clone(), cons)
}

fn compress(p: &PackingProblem, q: &DMatrix<f64>) -> Result<PackingProblem> {
    let cons = p
        .constraints()
        .iter()
        .map(|k| Constraint { m: k.m.congruence(q), b: k.b })
        .collect();
    PackingProblem::new(p.c().congruence(q), cons)
}

fn dense(p: &PackingProblem, settings: &super::cone::ConicSettings) -> Result<DenseResult> {
    solve_sdp_dense(&CombinedProblem::from_packing(p), None, settings)
}

/// Eigen-truncation at `threshold · λ_max`, then rescaling into the feasible
/// set if the truncation pushed any constraint past `b_i`.
fn truncate(p: &PackingProblem, z: &SymMatrix, threshold: f64) -> Result<SymMatrix> {
    let e = linalg::eigh(z)?;
    let cut = threshold * e.max().max(0.0);
    let t = e.rebuild(|v| (v > cut).then_some(v));
    let worst = p
        .constraints()
        .iter()
        .filter(|k| k.b > 0.0)
        .map(|k| k.m.dot(&t) / k.b)
        .fold(1.0_f64, f64::max);
    Ok(if worst > 1.0 { t.scale(1.0 / worst) } else { t })
}

/// Adds `δ` to every multiplier so that `Σ μ_i M_i ⪰ C` holds exactly; needs
/// `Σ M_i ≻ 0`.
fn repair_dual(p: &PackingProblem, mu: &[f64]) -> Result<Vec<f64>> {
    let mut mu: Vec<f64> = mu.iter().map(|v| v.max(0.0)).collect();
    let viol = -linalg::eigh(&p.weighted_m(&mu).sub(p.c()))?.min();
    if viol > 0.0 {
        let floor = linalg::eigh(&p.sum_m())?.min();
        if floor > 0.0 {
            let delta = viol / floor;
            mu.iter_mut().for_each(|v| *v += delta);
        }
    }
    Ok(mu)
}

/// Picks, among the solver's multipliers, their polished version and the
/// repaired variants of both, the one with the smallest KKT residual at `z`.
fn best_dual(q: &PackingProblem, z: &SymMatrix, mu: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    let mut candidates = vec![mu.iter().map(|v| v.max(0.0)).collect::<Vec<f64>>()];
    if let Some(polished) = kkt::polish_dual(q, z, opts.rank_threshold) {
        candidates.push(polished);
    }
    for k in 0..candidates.len() {
        let repaired = repair_dual(q, &candidates[k])?;
        candidates.push(repaired);
    }
    let score = |m: &Vec<f64>| kkt::kkt_check(q, z, m, opts.tol).residuals.max();
    Ok(candidates.into_iter().min_by(|a, b| score(a).total_cmp(&score(b))).expect("at least one candidate"))
}

struct Inner {
    z: SymMatrix,
    mu: Vec<f64>,
    route: &'static str,
    iterations: usize,
    gap: f64,
    path: Option<PathReport>,
}

fn socp_route(q: &PackingProblem, opts: &SolveOptions) -> Result<Inner> {
    let s = reduce::to_socp_rank1(q)?;
    let r = socp::solve_socp_with(&s, opts, &opts.conic_path())?;
    if r.report.status != Status::Optimal {
        return Err(Error::NumericalFailure(format!("cone route ended with status {:?}", r.report.status)));
    }
    let v = r.report.primal_value;
    let mut mu = vec![0.0; q.l()];
    for (cone, dual) in s.cones.iter().zip(&r.cone_duals) {
        let i = cone.tag.expect("rank-one cones are tagged");
        if cone.d > 0.0 {
            mu[i] = v * dual[0] / cone.d;
        }
    }
    Ok(Inner {
        z: SymMatrix::outer(&r.x),
        mu,
        route: "socp",
        iterations: r.report.iterations,
        gap: (r.report.dual_value.powi(2) - v * v).abs(),
        path: None,
    })
}

/// `r`-dimensional span of the smallest dual-slack eigenvectors.
fn primal_span(r: &DenseResult, k: usize) -> Result<DMatrix<f64>> {
    Ok(linalg::eigh(&r.x)?.eigenvectors.columns(0, k).into_owned())
}

fn slack_span(r: &DenseResult, k: usize) -> DMatrix<f64> {
    r.slack_eigenvectors.columns(0, k).into_owned()
}

/// Solves `q` restricted to `X = Q W Qᵀ` and returns `Q W Qᵀ`.
fn refine(q: &PackingProblem, span: &DMatrix<f64>, opts: &SolveOptions) -> Result<SymMatrix> {
    let small = compress(q, span)?;
    let r = dense(&small, &opts.conic_path())?;
    Ok(r.x.congruence_t(span))
}

fn eps_path(q: &PackingProblem, rank: usize, opts: &SolveOptions) -> Result<Inner> {
    let mut values = Vec::with_capacity(opts.eps_schedule.len());
    let mut ranks = Vec::with_capacity(opts.eps_schedule.len());
    let mut iterations = 0;
    let mut last: Option<DenseResult> = None;
    for &eps in &opts.eps_schedule {
        let pe = perturbed(q, eps)?;
        let r = dense(&pe, &opts.conic_path())?;
        iterations += r.iterations;
        let v = r.value();
        if let Some(&prev) = values.last() {
            if v < prev - PATH_MONOTONE_TOL * f64::max(1.0, f64::abs(prev)) {
                return Err(Error::PathDiverged { previous: prev, current: v });
            }
        }
        values.push(v);
        let span = slack_span(&r, rank);
        let xe = refine(&pe, &span, opts)?;
        ranks.push(linalg::rank_tol(&xe, Some(opts.rank_threshold))?);
        last = Some(r);
    }
    let last = last.expect("schedule is nonempty");
    // Both spans estimate the support of the limit; keep the better refinement.
    let from_x = refine(q, &primal_span(&last, rank)?, opts)?;
    let from_slack = refine(q, &slack_span(&last, rank), opts)?;
    let z = if q.objective(&from_x) >= q.objective(&from_slack) { from_x } else { from_slack };
    let n = values.len();
    let convergence_estimate = if n >= 2 { values[n - 1] - values[n - 2] } else { f64::NAN };
    Ok(Inner {
        z,
        mu: last.mu.clone(),
        route: "eps-path",
        iterations,
        gap: last.gap,
        path: Some(PathReport { parameters: opts.eps_schedule.clone(), values, ranks, convergence_estimate }),
    })
}

/// Solves a feasible, bounded packing problem with a solution of rank at most
/// `rank C`.
pub fn solve_packing_lowrank(p: &PackingProblem, opts: &SolveOptions) -> Result<Solved> {
    solve_packing_routed(p, opts, None)
}

/// As [`solve_packing_lowrank`], with the inner route forced: `Some(true)` for
/// the cone program (rank-one `C` only), `Some(false)` for the `ε`-path.
pub(crate) fn solve_packing_routed(p: &PackingProblem, opts: &SolveOptions, socp: Option<bool>) -> Result<Solved> {
    opts.validate()?;
    let (red, map) = reduce::project_packing(p)?;
    let inner = match &red.inner {
        None => Inner { z: SymMatrix::zeros(1), mu: Vec::new(), route: "trivial", iterations: 0, gap: 0.0, path: None },
        Some(q) => {
            let rank = linalg::rank_tol(q.c(), None)?;
            match (rank, socp) {
                (0, _) => Inner { z: SymMatrix::zeros(q.n()), mu: vec![0.0; q.l()], route: "trivial", iterations: 0, gap: 0.0, path: None },
                (1, None | Some(true)) => socp_route(q, opts)?,
                (_, Some(true)) => return Err(Error::RankNotOne { rank }),
                _ => eps_path(q, rank, opts)?,
            }
        }
    };
    let (x, mu_red) = match &red.inner {
        None => (map.zero(), Vec::new()),
        Some(q) => {
            let z = truncate(q, &inner.z, opts.rank_threshold)?;
            let mu = best_dual(q, &z, &inner.mu, opts)?;
            let (z, mu) = kkt::polish(q, &z, &mu, opts.rank_threshold).unwrap_or((z, mu));
            (lift_solution(&z, &map)?, mu)
        }
    };
    let mu = kkt::complete_dual(p, &red.kept, &mu_red, &red.zero_rhs);
    let check = kkt::kkt_check(p, &x, &mu, opts.tol);
    let status = super::certified_status(p, &x, &mu, opts);
    let primal_value = p.objective(&x);
    let dual_value: f64 = p.b().iter().zip(&mu).map(|(b, m)| b * m).sum();
    let solution = Solution {
        numerical_rank: linalg::rank_tol(&x, Some(opts.rank_threshold))?,
        objective: Some(primal_value),
        x,
        mu,
        status,
        kkt_residuals: Some(check.residuals),
    };
    Ok(Solved {
        solution,
        report: SolveReport {
            route: inner.route.into(),
            primal_value,
            dual_value,
            gap: (dual_value - primal_value).max(inner.gap),
            iterations: inner.iterations,
            status,
            kkt: Some(check.residuals),
            path: inner.path,
        },
    })
}
