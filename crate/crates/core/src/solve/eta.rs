//! Trace-capped path for combined problems.
//!
//! Each `η` in the schedule adds `η(tr X + tr Y) ≤ 1`, which makes the
//! feasible set compact; the capped values `γ(η)` increase to the supremum as
//! `η → 0`. When the supremum is not attained the capped solutions run off to
//! infinity with norms of order `1/η`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sdp::{combined_dual_margin, combined_primal_margin, solve_sdp_dense, DenseResult};
use super::{SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{CombinedProblem, CombinedSolution, Status};

/// Relative slack allowed when checking that `γ` does not decrease along the
/// path.
pub const PATH_MONOTONE_TOL: f64 = 1e-9;

/// `η (tr X + tr Y)` above this counts as a binding cap.
pub const CAP_BINDING: f64 = 0.99;

/// Phase-one margins within this distance of zero count as feasible.
pub const PHASE_ONE_TOL: f64 = 1e-7;

/// One point of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaStep {
    pub eta: f64,
    pub value: f64,
    pub rank: usize,
    /// `‖(X, Y, λ)‖_F`.
    pub norm: f64,
    /// `η (tr X + tr Y)`; equal to one when the cap binds.
    pub cap_usage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaOutcome {
    pub solution: CombinedSolution,
    pub report: SolveReport,
    pub steps: Vec<EtaStep>,
}

/// Restricts `X` to `Q W Qᵀ`.
fn compress(p: &CombinedProblem, q: &DMatrix<f64>) -> Result<CombinedProblem> {
    CombinedProblem::new(
        p.c().congruence(q),
        p.m().iter().map(|m| m.congruence(q)).collect(),
        p.b().to_vec(),
        p.r0().cloned(),
        p.r().to_vec(),
        p.h0().clone(),
        p.h().clone(),
    )
}

struct Point {
    dense: DenseResult,
    x: SymMatrix,
    y: Option<SymMatrix>,
    lambda: nalgebra::DVector<f64>,
}

/// Solves the capped problem, then re-solves with `X` restricted to the
/// `r` smallest eigenvectors of the dual slack, where every capped solution
/// lives.
fn capped(p: &CombinedProblem, eta: f64, rank: usize, opts: &SolveOptions) -> Result<Point> {
    let settings = opts.conic_path();
    let dense = solve_sdp_dense(p, Some(eta), &settings)?;
    if rank >= p.n() {
        return Ok(Point { x: dense.x.clone(), y: dense.y.clone(), lambda: dense.lambda.clone(), dense });
    }
    if rank == 0 {
        return Ok(Point { x: SymMatrix::zeros(p.n()), y: dense.y.clone(), lambda: dense.lambda.clone(), dense });
    }
    let span = dense.slack_eigenvectors.columns(0, rank).into_owned();
    let small = solve_sdp_dense(&compress(p, &span)?, Some(eta), &settings)?;
    Ok(Point { x: small.x.congruence_t(&span), y: small.y, lambda: small.lambda, dense })
}

fn norm(x: &SymMatrix, y: Option<&SymMatrix>, lambda: &nalgebra::DVector<f64>) -> f64 {
    (x.norm().powi(2) + y.map_or(0.0, |y| y.norm().powi(2)) + lambda.norm_squared()).sqrt()
}

/// Runs the `η` schedule and classifies the outcome.
///
/// The status is `AsymptoticSup` when, at the end of the schedule, the cap is
/// binding (usage at least [`CAP_BINDING`]) and the iterate norm grew at least
/// like `η^{-1/2}` over the last step, or when the norm exceeds
/// `1e8 (1 + ‖b‖)` with the gap closed. Otherwise the last capped
/// solution is reported as `Optimal`.
pub fn solve_combined_eta(p: &CombinedProblem, opts: &SolveOptions) -> Result<EtaOutcome> {
    opts.validate()?;
    let primal = combined_primal_margin(p)?;
    if primal < -PHASE_ONE_TOL {
        return Err(Error::InfeasiblePrimal { margin: primal });
    }
    let dual = combined_dual_margin(p)?;
    if dual > PHASE_ONE_TOL {
        return Err(Error::InfeasibleDual { margin: dual });
    }
    let rank = linalg::rank_tol(p.c(), None)?;
    let mut steps: Vec<EtaStep> = Vec::with_capacity(opts.eta_schedule.len());
    let mut last: Option<Point> = None;
    let mut iterations = 0;
    for &eta in &opts.eta_schedule {
        let pt = capped(p, eta, rank, opts)?;
        iterations += pt.dense.iterations;
        let value = pt.dense.value();
        if let Some(prev) = steps.last() {
            if value < prev.value - PATH_MONOTONE_TOL * prev.value.abs().max(1.0) {
                return Err(Error::PathNotMonotone { previous: prev.value, current: value });
            }
        }
        let trace = pt.x.trace() + pt.y.as_ref().map_or(0.0, |y| y.trace());
        steps.push(EtaStep {
            eta,
            value,
            rank: linalg::rank_tol(&pt.x, Some(opts.rank_threshold))?,
            norm: norm(&pt.x, pt.y.as_ref(), &pt.lambda),
            cap_usage: eta * trace,
        });
        last = Some(pt);
    }
    let last = last.expect("schedule is nonempty");
    let k = steps.len();
    let fin = &steps[k - 1];
    let bnorm = p.b().iter().map(|v| v * v).sum::<f64>().sqrt();
    let growing = k >= 2 && {
        let prev = &steps[k - 2];
        fin.cap_usage >= CAP_BINDING && fin.norm >= prev.norm * (prev.eta / fin.eta).sqrt()
    };
    let huge = fin.norm > 1e8 * (1.0 + bnorm) && last.dense.gap <= 1e3 * opts.tol;
    let status = if growing || huge { Status::AsymptoticSup } else { Status::Optimal };

    let primal_value = p.objective(&last.x, last.y.as_ref(), &last.lambda);
    let solution = CombinedSolution {
        x: last.x.clone(),
        y: last.y.clone(),
        lambda: last.lambda.iter().copied().collect(),
        objective: fin.value,
        status,
        path_values: steps.iter().map(|s| s.value).collect(),
        path_ranks: steps.iter().map(|s| s.rank).collect(),
    };
    let values = solution.path_values.clone();
    let report = SolveReport {
        route: "eta-path".into(),
        primal_value,
        dual_value: last.dense.dual_value,
        gap: last.dense.gap,
        iterations,
        status,
        kkt: None,
        path: Some(super::PathReport {
            parameters: opts.eta_schedule.clone(),
            convergence_estimate: if k >= 2 { values[k - 1] - values[k - 2] } else { f64::NAN },
            values,
            ranks: solution.path_ranks.clone(),
        }),
    };
    Ok(EtaOutcome { solution, report, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_problem, PackingProblem, Problem};

    const UNATTAINED_SUP: &str = r#"{
        "kind": "combined",
        "C": [[2.43, 0.27], [0.27, 0.03]],
        "constraints": [
            {"M": [[0, 0], [0, 0]], "b": 1},
            {"M": [[1, 0], [0, 0]], "b": 1},
            {"M": [[0, 0], [0, 1]], "b": 1}
        ],
        "h0": [-1, -3],
        "h": [[1, 0], [0, 1], [3, 1]]
    }"#;

    #[test]
    fn unattained_sup_path() {
        let Problem::Combined(p) = parse_problem(UNATTAINED_SUP).unwrap() else { unreachable!() };
        let out = solve_combined_eta(&p, &SolveOptions::default()).unwrap();
        let v = &out.solution.path_values;
        assert!(v.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{v:?}");
        assert!((v[v.len() - 1] - 3.1).abs() < 1e-3, "{v:?}");
        assert_eq!(out.solution.status, Status::AsymptoticSup, "{:?}", out.steps);
        assert!(out.solution.path_ranks.iter().all(|&r| r <= 1));
    }

    #[test]
    fn packing_as_combined() {
        let p = PackingProblem::from_parts(
            SymMatrix::from_diagonal(&[2.0, 1.0]),
            vec![SymMatrix::identity(2), SymMatrix::from_diagonal(&[1.0, 0.0])],
            vec![1.0, 0.5],
        )
        .unwrap();
        let out = solve_combined_eta(&CombinedProblem::from_packing(&p), &SolveOptions::default()).unwrap();
        assert_eq!(out.solution.status, Status::Optimal);
        let low = super::super::solve_packing_lowrank(&p, &SolveOptions::default()).unwrap();
        assert!((out.solution.objective - low.solution.objective.unwrap()).abs() < 1e-6);
    }
}
