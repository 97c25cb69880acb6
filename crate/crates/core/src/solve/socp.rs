use nalgebra::DVector;

use super::cone::{self, ConicStatus};
use super::{SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{CombinedProblem, CombinedSolution, Status};
use crate::reduce::{combined_to_socp, Sense, SocpProblem};

#[derive(Debug, Clone)]
pub struct SocpResult {
    /// Optimal point, or the improving ray when unbounded.
    pub x: DVector<f64>,
    /// One `(ν, w)` pair per cone with `‖w‖ ≤ ν`.
    pub cone_duals: Vec<DVector<f64>>,
    pub ineq_duals: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub report: SolveReport,
}

pub fn solve_socp(s: &SocpProblem, opts: &SolveOptions) -> Result<SocpResult> {
    solve_socp_with(s, opts, &opts.conic_default())
}

pub(crate) fn solve_socp_with(s: &SocpProblem, opts: &SolveOptions, settings: &cone::ConicSettings) -> Result<SocpResult> {
    opts.validate()?;
    let prob = s.to_conic();
    let sol = cone::solve(&prob, settings).map_err(Error::NumericalFailure)?;
    let sign = match s.sense {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    let li = s.ineq.nrows();
    let mut cone_duals = Vec::with_capacity(s.cones.len());
    let mut off = li;
    for c in &s.cones {
        let m = c.g.len() + 1;
        cone_duals.push(sol.z.rows(off, m).into_owned());
        off += m;
    }
    let ineq_duals = sol.z.rows(0, li).into_owned();

    let near_unattained = |x: &DVector<f64>, gap: f64| x.norm() > 1e8 * (1.0 + prob.h.norm()) && gap <= 1e3 * opts.tol;
    let status = match sol.status {
        ConicStatus::Optimal | ConicStatus::AlmostOptimal => {
            if near_unattained(&sol.x, sol.gap) {
                Status::NearUnattained
            } else {
                Status::Optimal
            }
        }
        ConicStatus::PrimalInfeasible => Status::Infeasible,
        ConicStatus::DualInfeasible => Status::Unbounded,
        ConicStatus::MaxIterations | ConicStatus::NumericalFailure if near_unattained(&sol.x, sol.gap) => Status::NearUnattained,
        ConicStatus::MaxIterations => return Err(Error::MaxIterations { iterations: sol.iterations }),
        ConicStatus::NumericalFailure => {
            return Err(Error::NumericalFailure(format!(
                "cone solver stalled after {} iterations (gap {:e}, residuals {:e}/{:e})",
                sol.iterations, sol.gap, sol.pres, sol.dres
            )))
        }
    };
    let (primal_value, dual_value, gap) = match status {
        Status::Infeasible | Status::Unbounded => (f64::NAN, f64::NAN, f64::NAN),
        _ => (sign * sol.pcost, sign * sol.dcost, sol.gap),
    };
    Ok(SocpResult {
        x: sol.x,
        cone_duals,
        ineq_duals,
        eq_duals: sol.y,
        report: SolveReport {
            route: "socp".into(),
            primal_value,
            dual_value,
            gap,
            iterations: sol.iterations,
            status,
            kkt: None,
            path: None,
        },
    })
}

/// Solves a combined problem with rank-one `C`, all `R_i = 0` and `h_0 = 0`
/// through its cone form. `X = xxᵀ` and the value is `(cᵀx)²`.
pub fn solve_combined_socp(p: &CombinedProblem, opts: &SolveOptions) -> Result<(CombinedSolution, SolveReport)> {
    let s = combined_to_socp(p)?;
    let r = solve_socp(&s, opts)?;
    let xs = s.block("x").expect("cone form has an x block");
    let ls = s.block("lambda").expect("cone form has a lambda block");
    let x = r.x.rows(xs.start, xs.len()).into_owned();
    let lambda: Vec<f64> = r.x.rows(ls.start, ls.len()).iter().copied().collect();
    let v = r.report.primal_value;
    let objective = match r.report.status {
        Status::Unbounded => f64::INFINITY,
        Status::Infeasible => f64::NAN,
        _ => v * v,
    };
    let solution = CombinedSolution {
        x: SymMatrix::outer(&x),
        y: (p.p() > 0).then(|| SymMatrix::zeros(p.p())),
        lambda,
        objective,
        status: r.report.status,
        path_values: Vec::new(),
        path_ranks: Vec::new(),
    };
    let d = r.report.dual_value;
    let report = SolveReport {
        route: "socp".into(),
        primal_value: objective,
        dual_value: if d.is_finite() { d * d } else { d },
        ..r.report
    };
    Ok((solution, report))
}
