//! Optimal designs from packing duals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{socp, solve_packing_lowrank, SolveOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{Criterion, DesignProblem, PackingProblem, Status};
use crate::reduce::{build_a_optimal, build_c_optimal, build_e_optimal, build_resource_constrained};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RecoveryMode {
    /// `w = μ / (μᵀb)`.
    Simplex,
    /// `w = μ / t` with `t` the scalar variable of the resource dual.
    ResourceScaled { t: f64 },
}

/// Design weights proportional to the dual multipliers.
pub fn recover_design(mu: &[f64], b: &[f64], mode: RecoveryMode) -> Result<Vec<f64>> {
    if mu.iter().all(|&v| v <= 0.0) {
        return Err(Error::ZeroDual);
    }
    let denom = match mode {
        RecoveryMode::Simplex => {
            if mu.len() != b.len() {
                return Err(Error::DimensionMismatch { expected: mu.len(), found: b.len() });
            }
            mu.iter().zip(b).map(|(m, b)| m * b).sum::<f64>()
        }
        RecoveryMode::ResourceScaled { t } => t,
    };
    if !(denom > 0.0) {
        return Err(Error::ZeroDual);
    }
    Ok(mu.iter().map(|&m| m.max(0.0) / denom).collect())
}

/// `Kᵀ (Σ w_i M_i)† K`, the covariance of the estimated functionals.
pub fn covariance(d: &DesignProblem, w: &[f64]) -> Result<DMatrix<f64>> {
    let info = linalg::pinv(&d.information(w), Some(1e-10))?;
    Ok(d.k().transpose() * info.as_matrix() * d.k())
}

/// Variance, trace or largest eigenvalue of the covariance at `w`, by
/// criterion.
pub fn criterion_value(d: &DesignProblem, w: &[f64]) -> Result<f64> {
    let cov = covariance(d, w)?;
    Ok(match d.criterion() {
        Criterion::COptimal => cov[(0, 0)],
        Criterion::AOptimal => cov.trace(),
        Criterion::EOptimal => linalg::eigh(&SymMatrix::new(cov)?)?.max(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceCheck {
    /// `max_j (P w − d)_j`.
    pub max_violation: f64,
    pub feasible: bool,
    /// Values of the primal and dual cone programs.
    pub primal_value: f64,
    pub dual_value: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub criterion: Criterion,
    pub route: String,
    /// The packing formulation (absent for the resource-constrained pair).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formulation: Option<serde_json::Value>,
    pub weights: Vec<f64>,
    /// Optimal value of the formulation: the variance, trace or largest
    /// eigenvalue criterion.
    pub value: f64,
    /// The criterion evaluated directly at `weights`.
    pub criterion_at_weights: f64,
    pub rank: usize,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource: Option<ResourceCheck>,
}

fn packing_route(d: &DesignProblem, p: PackingProblem, opts: &SolveOptions) -> Result<DesignReport> {
    let solved = solve_packing_lowrank(&p, opts)?;
    let value = solved.solution.objective.unwrap_or(f64::NAN);
    let weights = recover_design(&solved.solution.mu, &p.b(), RecoveryMode::Simplex)?;
    Ok(DesignReport {
        criterion: d.criterion(),
        route: solved.report.route.clone(),
        formulation: Some(crate::model::problem_to_json(&crate::model::Problem::Packing(p))),
        criterion_at_weights: criterion_value(d, &weights)?,
        weights,
        value,
        rank: solved.solution.numerical_rank,
        status: solved.solution.status,
        resource: None,
    })
}

fn resource_route(d: &DesignProblem, opts: &SolveOptions) -> Result<DesignReport> {
    let pair = build_resource_constrained(d)?;
    let primal = socp::solve_socp(&pair.primal, opts)?;
    let dual = socp::solve_socp(&pair.dual, opts)?;
    for r in [&primal, &dual] {
        if r.report.status != Status::Optimal {
            return Err(Error::NumericalFailure(format!("resource cone program ended with status {:?}", r.report.status)));
        }
    }
    let mu_range = pair.dual.block("mu").expect("dual has a mu block");
    let t_range = pair.dual.block("t").expect("dual has a t block");
    let mu: Vec<f64> = dual.x.rows(mu_range.start, mu_range.len()).iter().copied().collect();
    let t = dual.x[t_range.start];
    let weights = recover_design(&mu, &[], RecoveryMode::ResourceScaled { t })?;
    let res = d.resource().expect("builder checked the resource block");
    let pw = &res.p * DVector::from_column_slice(&weights) - &res.d;
    let max_violation = pw.max();
    let v = primal.report.primal_value;
    Ok(DesignReport {
        criterion: d.criterion(),
        route: "resource-socp".into(),
        formulation: None,
        criterion_at_weights: criterion_value(d, &weights)?,
        weights,
        value: v * v,
        rank: 1,
        status: Status::Optimal,
        resource: Some(ResourceCheck {
            max_violation,
            feasible: max_violation <= 1e-8,
            primal_value: v,
            dual_value: dual.report.primal_value,
            t,
        }),
    })
}

/// Builds the formulation for the design's criterion, solves it and recovers
/// the weights.
pub fn solve_design(d: &DesignProblem, opts: &SolveOptions) -> Result<DesignReport> {
    if d.resource().is_some() {
        return resource_route(d, opts);
    }
    let p = match d.criterion() {
        Criterion::COptimal => build_c_optimal(d)?,
        Criterion::AOptimal => build_a_optimal(d)?,
        Criterion::EOptimal => build_e_optimal(d)?,
    };
    match packing_route(d, p, opts) {
        Err(Error::UnboundedInput) => Err(Error::InfeasibleDesign("the functionals are not estimable: K is not in the range of the information matrices".into())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Experiment, Resource};

    fn design(k: DMatrix<f64>, criterion: Criterion, resource: Option<Resource>) -> DesignProblem {
        let exps = vec![
            Experiment { a: None, m: SymMatrix::from_diagonal(&[1.0, 0.0]) },
            Experiment { a: None, m: SymMatrix::from_diagonal(&[0.0, 1.0]) },
        ];
        DesignProblem::new(exps, k, criterion, resource).unwrap()
    }

    #[test]
    fn recovery_examples() {
        assert_eq!(recover_design(&[2.0, 2.0], &[1.0, 1.0], RecoveryMode::Simplex).unwrap(), vec![0.5, 0.5]);
        assert_eq!(recover_design(&[5.0, 0.0, 0.0], &[1.0; 3], RecoveryMode::Simplex).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(recover_design(&[0.0, 0.0], &[1.0, 1.0], RecoveryMode::Simplex), Err(Error::ZeroDual)));
    }

    #[test]
    fn c_optimal_weights() {
        let d = design(DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), Criterion::COptimal, None);
        let r = solve_design(&d, &SolveOptions::default()).unwrap();
        assert!((r.value - 4.0).abs() < 1e-6);
        assert!((r.weights[0] - 0.5).abs() < 1e-6 && (r.weights[1] - 0.5).abs() < 1e-6);
        assert!((r.criterion_at_weights - 4.0).abs() < 1e-5);
    }

    #[test]
    fn a_and_e_optimal() {
        let a = solve_design(&design(DMatrix::identity(2, 2), Criterion::AOptimal, None), &SolveOptions::default()).unwrap();
        assert!((a.value - 4.0).abs() < 1e-6);
        let e = solve_design(&design(DMatrix::identity(2, 2), Criterion::EOptimal, None), &SolveOptions::default()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-6);
        assert_eq!(e.rank, 2);
    }

    #[test]
    fn resource_box() {
        let res = Resource { p: DMatrix::identity(2, 2), d: DVector::from_vec(vec![1.0, 1.0]) };
        let r = solve_design(&design(DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), Criterion::COptimal, Some(res)), &SolveOptions::default()).unwrap();
        let rc = r.resource.unwrap();
        assert!((rc.primal_value - rc.dual_value).abs() < 1e-6);
        assert!((r.value - 2.0).abs() < 1e-6);
        assert!((r.weights[0] - 1.0).abs() < 1e-5 && (r.weights[1] - 1.0).abs() < 1e-5);
        assert!(rc.feasible, "{rc:?}");
    }
}
