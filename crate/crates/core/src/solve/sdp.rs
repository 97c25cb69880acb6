//! Dense SDP oracle.
//!
//! Every problem is posed through its dual
//!
//! ```text
//! minimize    bᵀμ + σ
//! subject to  Σ μ_i M_i + σηI − C ⪰ 0
//!             −R_0 − Σ μ_i R_i + σηI ⪰ 0
//!             h_0 + Hμ = 0,   μ ≥ 0,   σ ≥ 0
//! ```
//!
//! where the `σ` terms appear only under a trace cap `η(tr X + tr Y) ≤ 1`. The
//! cone solver's dual multipliers on the two PSD blocks are `X` and `Y`, and
//! those on the equality rows give `λ`.

use nalgebra::{DMatrix, DVector};

use super::cone::{self, smat, svec, svec_len, ConeSpec, ConicProblem, ConicSettings, ConicSolution, ConicStatus};
use super::{kkt, SolveOptions, SolveReport, Solved};
use crate::analysis;
use crate::reduce;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{CombinedProblem, PackingProblem, Solution};

/// Orthonormal basis of `Im H` (columns in `R^q`).
fn h_range(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = h.nrows();
    if q == 0 || h.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(q, 0));
    }
    let hh = SymMatrix::new(h * h.transpose())?;
    Ok(linalg::range_basis(&hh, Some(1e-12))?.matrix().clone())
}

/// Residual of `h_0` outside `Im H`.
fn h0_residual(h0: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    (h0 - basis * (basis.transpose() * h0)).norm()
}

/// `[QᵀH  0]`, padded with zero columns for variables after `μ`.
fn equality_rows(basis: &DMatrix<f64>, h: &DMatrix<f64>, nx: usize) -> DMatrix<f64> {
    let qh = basis.transpose() * h;
    let mut a = DMatrix::zeros(qh.nrows(), nx);
    a.columns_mut(0, qh.ncols()).copy_from(&qh);
    a
}

fn sym(v: &[f64], k: usize) -> SymMatrix {
    SymMatrix::new(smat(v, k)).expect("svec block is finite")
}

fn svec_identity(k: usize) -> DVector<f64> {
    svec(&DMatrix::identity(k, k))
}

struct DualForm {
    prob: ConicProblem,
    l: usize,
    n: usize,
    p: usize,
    sigma: bool,
    basis: DMatrix<f64>,
    psd1: usize,
    psd2: usize,
}

fn dual_form(p: &CombinedProblem, eta: Option<f64>) -> Result<DualForm> {
    let (n, l, pd) = (p.n(), p.l(), p.p());
    let basis = h_range(p.h())?;
    let res = h0_residual(p.h0(), &basis);
    if res > 1e-9 * p.h0().norm().max(1.0) {
        return Err(Error::InfeasibleDual { margin: res });
    }
    let sigma = eta.is_some();
    let nx = l + usize::from(sigma);
    let orth = nx;
    let rows = orth + svec_len(n) + if pd > 0 { svec_len(pd) } else { 0 };
    let mut g = DMatrix::zeros(rows, nx);
    let mut h = DVector::zeros(rows);
    for i in 0..nx {
        g[(i, i)] = -1.0;
    }
    let psd1 = orth;
    let nv1 = svec_len(n);
    h.rows_mut(psd1, nv1).copy_from(&-svec(p.c().as_matrix()));
    for i in 0..l {
        g.view_mut((psd1, i), (nv1, 1)).copy_from(&-svec(p.m()[i].as_matrix()));
    }
    if let Some(eta) = eta {
        g.view_mut((psd1, l), (nv1, 1)).copy_from(&(-eta * svec_identity(n)));
    }
    let psd2 = psd1 + nv1;
    if let Some(r0) = p.r0() {
        let nv2 = svec_len(pd);
        h.rows_mut(psd2, nv2).copy_from(&-svec(r0.as_matrix()));
        for i in 0..l {
            g.view_mut((psd2, i), (nv2, 1)).copy_from(&svec(p.r()[i].as_matrix()));
        }
        if let Some(eta) = eta {
            g.view_mut((psd2, l), (nv2, 1)).copy_from(&(-eta * svec_identity(pd)));
        }
    }
    let mut c = DVector::zeros(nx);
    c.rows_mut(0, l).copy_from(&DVector::from_column_slice(p.b()));
    if sigma {
        c[l] = 1.0;
    }
    let mut psd = vec![n];
    if pd > 0 {
        psd.push(pd);
    }
    let a = equality_rows(&basis, p.h(), nx);
    let beq = -(basis.transpose() * p.h0());
    let prob = ConicProblem::new(c, g, h, ConeSpec { nonneg: orth, soc: Vec::new(), psd }).with_equalities(a, beq);
    Ok(DualForm { prob, l, n, p: pd, sigma, basis, psd1, psd2 })
}

/// Primal and dual iterates of the dense oracle.
#[derive(Debug, Clone)]
pub struct DenseResult {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub x: SymMatrix,
    pub y: Option<SymMatrix>,
    pub lambda: DVector<f64>,
    /// `⟨C,X⟩ + ⟨R_0,Y⟩ + h_0ᵀλ`.
    pub primal_value: f64,
    /// `bᵀμ + σ`.
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: ConicStatus,
    /// Smallest eigenvalues of the dual slack `Σ μ_i M_i + σηI − C`, with
    /// eigenvectors, ascending.
    pub slack_eigenvalues: DVector<f64>,
    pub slack_eigenvectors: DMatrix<f64>,
}

impl DenseResult {
    pub fn value(&self) -> f64 {
        0.5 * (self.primal_value + self.dual_value)
    }
}

fn extract(p: &CombinedProblem, f: &DualForm, sol: &ConicSolution, eta: Option<f64>) -> Result<DenseResult> {
    let mu: Vec<f64> = sol.x.rows(0, f.l).iter().copied().collect();
    let sigma = if f.sigma { sol.x[f.l] } else { 0.0 };
    let x = sym(sol.z.rows(f.psd1, svec_len(f.n)).as_slice(), f.n);
    let y = (f.p > 0).then(|| sym(sol.z.rows(f.psd2, svec_len(f.p)).as_slice(), f.p));
    let lambda = &f.basis * &sol.y;
    let mut slack = SymMatrix::zeros(f.n);
    for (m, &w) in p.m().iter().zip(&mu) {
        slack = slack.add(&m.scale(w));
    }
    if let Some(eta) = eta {
        slack = slack.add(&SymMatrix::identity(f.n).scale(sigma * eta));
    }
    slack = slack.sub(p.c());
    let e = linalg::eigh(&slack)?;
    let k = f.n;
    let mut vals = DVector::zeros(k);
    let mut vecs = DMatrix::zeros(f.n, k);
    for j in 0..k {
        vals[j] = e.eigenvalues[k - 1 - j];
        vecs.set_column(j, &e.eigenvectors.column(k - 1 - j));
    }
    Ok(DenseResult {
        primal_value: p.objective(&x, y.as_ref(), &lambda),
        dual_value: p.b().iter().zip(&mu).map(|(b, m)| b * m).sum::<f64>() + sigma,
        mu,
        sigma,
        x,
        y,
        lambda,
        gap: sol.gap,
        iterations: sol.iterations,
        status: sol.status,
        slack_eigenvalues: vals,
        slack_eigenvectors: vecs,
    })
}

/// Solves a combined problem (optionally trace-capped by `η`) with the dense
/// interior-point method. Infeasible or unbounded outcomes become errors.
pub fn solve_sdp_dense(p: &CombinedProblem, eta: Option<f64>, settings: &ConicSettings) -> Result<DenseResult> {
    let f = dual_form(p, eta)?;
    let sol = cone::solve(&f.prob, settings).map_err(Error::NumericalFailure)?;
    match sol.status {
        ConicStatus::Optimal | ConicStatus::AlmostOptimal => extract(p, &f, &sol, eta),
        // The dual program is infeasible: the primal is unbounded.
        ConicStatus::PrimalInfeasible => Err(Error::UnboundedInput),
        ConicStatus::DualInfeasible => Err(Error::InfeasiblePrimal { margin: f64::NAN }),
        ConicStatus::MaxIterations => Err(Error::MaxIterations { iterations: sol.iterations }),
        ConicStatus::NumericalFailure => Err(Error::NumericalFailure(format!(
            "SDP oracle stalled after {} iterations (gap {:e}, residuals {:e}/{:e})",
            sol.iterations, sol.gap, sol.pres, sol.dres
        ))),
    }
}

/// Dense oracle for a packing problem: returns `X` and the dual `μ` of
/// `min bᵀμ  s.t.  Σ μ_i M_i ⪰ C, μ ≥ 0`. The problem is first reduced to
/// strictly feasible form, where the interior-point method is accurate.
pub fn solve_sdp(p: &PackingProblem, opts: &SolveOptions) -> Result<Solved> {
    opts.validate()?;
    let feas = analysis::check_feasible(p);
    if let Some(index) = feas.index {
        return Err(Error::InfeasibleInput { index });
    }
    if !analysis::check_bounded(p)?.is_bounded() {
        return Err(Error::UnboundedInput);
    }
    let (red, map) = reduce::project_packing(p)?;
    let (x, mu, gap, iterations) = match &red.inner {
        None => (map.zero(), kkt::complete_dual(p, &[], &[], &red.zero_rhs), 0.0, 0),
        Some(q) => {
            let r = solve_sdp_dense(&CombinedProblem::from_packing(q), None, &opts.conic_default())?;
            let (z, mu) = kkt::polish(q, &r.x, &r.mu, opts.rank_threshold).unwrap_or((r.x, r.mu));
            let x = reduce::lift_solution(&z, &map)?;
            (x, kkt::complete_dual(p, &red.kept, &mu, &red.zero_rhs), r.gap, r.iterations)
        }
    };
    let kkt = kkt::kkt_check(p, &x, &mu, opts.tol);
    let status = super::certified_status(p, &x, &mu, opts);
    let primal_value = p.objective(&x);
    let dual_value: f64 = p.b().iter().zip(&mu).map(|(b, m)| b * m).sum();
    let solution = Solution {
        numerical_rank: linalg::rank_tol(&x, Some(opts.rank_threshold))?,
        objective: Some(primal_value),
        x,
        mu,
        status,
        kkt_residuals: Some(kkt.residuals),
    };
    Ok(Solved {
        solution,
        report: SolveReport {
            route: "sdp".into(),
            primal_value,
            dual_value,
            gap,
            iterations,
            status,
            kkt: Some(kkt.residuals),
            path: None,
        },
    })
}

/// Phase-one value `max t  s.t.  b_i + ⟨R_i,Y⟩ + h_iᵀλ ≥ t,  t ≤ 1,  Y ⪰ 0`.
/// Nonnegative iff the combined problem is feasible (with `X = 0`).
pub fn combined_primal_margin(p: &CombinedProblem) -> Result<f64> {
    let (l, pd) = (p.l(), p.p());
    let basis = h_range(p.h())?;
    let k = basis.ncols();
    let min_b = p.b().iter().copied().fold(f64::INFINITY, f64::min);
    if k == 0 && pd == 0 {
        return Ok(min_b.min(1.0));
    }
    let hb = p.h().transpose() * &basis;
    let ny = if pd > 0 { svec_len(pd) } else { 0 };
    let nx = 1 + k + ny;
    let rows = l + 1 + ny;
    let mut g = DMatrix::zeros(rows, nx);
    let mut h = DVector::zeros(rows);
    for i in 0..l {
        g[(i, 0)] = 1.0;
        for j in 0..k {
            g[(i, 1 + j)] = -hb[(i, j)];
        }
        if pd > 0 {
            let ri = svec(p.r()[i].as_matrix());
            for j in 0..ny {
                g[(i, 1 + k + j)] = -ri[j];
            }
        }
        h[i] = p.b()[i];
    }
    g[(l, 0)] = 1.0;
    h[l] = 1.0;
    for j in 0..ny {
        g[(l + 1 + j, 1 + k + j)] = -1.0;
    }
    let mut c = DVector::zeros(nx);
    c[0] = -1.0;
    let psd = if pd > 0 { vec![pd] } else { Vec::new() };
    let prob = ConicProblem::new(c, g, h, ConeSpec { nonneg: l + 1, soc: Vec::new(), psd });
    let sol = cone::solve(&prob, &ConicSettings::default()).map_err(Error::NumericalFailure)?;
    match sol.status {
        ConicStatus::Optimal | ConicStatus::AlmostOptimal => Ok(sol.x[0]),
        ConicStatus::MaxIterations | ConicStatus::NumericalFailure => Ok(sol.x[0]),
        ConicStatus::PrimalInfeasible | ConicStatus::DualInfeasible => {
            Err(Error::NumericalFailure("primal phase-one problem is ill-posed".into()))
        }
    }
}

/// Phase-one value `min s` over `μ ≥ 0`, `s ≥ −1` with
/// `Σ μ_i M_i − C + sI ⪰ 0`, `−R_0 − Σ μ_i R_i + sI ⪰ 0`, `h_0 + Hμ = 0`.
/// Nonpositive iff the combined dual is feasible; `+∞` when the linear part
/// has no nonnegative solution.
pub fn combined_dual_margin(p: &CombinedProblem) -> Result<f64> {
    let (n, l, pd) = (p.n(), p.l(), p.p());
    let basis = h_range(p.h())?;
    let res = h0_residual(p.h0(), &basis);
    if res > 1e-9 * p.h0().norm().max(1.0) {
        return Ok(f64::INFINITY);
    }
    let nx = l + 1;
    let n1 = svec_len(n);
    let n2 = if pd > 0 { svec_len(pd) } else { 0 };
    let rows = l + 1 + n1 + n2;
    let mut g = DMatrix::zeros(rows, nx);
    let mut h = DVector::zeros(rows);
    for i in 0..l {
        g[(i, i)] = -1.0;
    }
    g[(l, l)] = -1.0;
    h[l] = 1.0;
    let o1 = l + 1;
    h.rows_mut(o1, n1).copy_from(&-svec(p.c().as_matrix()));
    for i in 0..l {
        g.view_mut((o1, i), (n1, 1)).copy_from(&-svec(p.m()[i].as_matrix()));
    }
    g.view_mut((o1, l), (n1, 1)).copy_from(&-svec_identity(n));
    if let Some(r0) = p.r0() {
        let o2 = o1 + n1;
        h.rows_mut(o2, n2).copy_from(&-svec(r0.as_matrix()));
        for i in 0..l {
            g.view_mut((o2, i), (n2, 1)).copy_from(&svec(p.r()[i].as_matrix()));
        }
        g.view_mut((o2, l), (n2, 1)).copy_from(&-svec_identity(pd));
    }
    let mut c = DVector::zeros(nx);
    c[l] = 1.0;
    let mut psd = vec![n];
    if pd > 0 {
        psd.push(pd);
    }
    let a = equality_rows(&basis, p.h(), nx);
    let beq = -(basis.transpose() * p.h0());
    let prob = ConicProblem::new(c, g, h, ConeSpec { nonneg: l + 1, soc: Vec::new(), psd }).with_equalities(a, beq);
    let sol = cone::solve(&prob, &ConicSettings::default()).map_err(Error::NumericalFailure)?;
    match sol.status {
        ConicStatus::Optimal | ConicStatus::AlmostOptimal | ConicStatus::MaxIterations | ConicStatus::NumericalFailure => Ok(sol.x[l]),
        ConicStatus::PrimalInfeasible => Ok(f64::INFINITY),
        ConicStatus::DualInfeasible => Err(Error::NumericalFailure("dual phase-one problem is ill-posed".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_problem, Problem};

    pub(crate) const UNATTAINED_SUP: &str = r#"{
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

    fn unattained_sup() -> CombinedProblem {
        match parse_problem(UNATTAINED_SUP).unwrap() {
            Problem::Combined(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn trace_bound() {
        let p = PackingProblem::from_parts(SymMatrix::identity(2), vec![SymMatrix::identity(2)], vec![1.0]).unwrap();
        let s = solve_sdp(&p, &SolveOptions::default()).unwrap();
        assert!((s.solution.objective.unwrap() - 1.0).abs() < 1e-8);
        assert!((s.solution.mu[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn c_optimal_dual() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let p = PackingProblem::from_parts(
            SymMatrix::outer(&c),
            vec![SymMatrix::from_diagonal(&[1.0, 0.0]), SymMatrix::from_diagonal(&[0.0, 1.0])],
            vec![1.0, 1.0],
        )
        .unwrap();
        let s = solve_sdp(&p, &SolveOptions::default()).unwrap();
        assert!((s.report.dual_value - 4.0).abs() < 1e-7);
        assert!((s.solution.mu[0] - 2.0).abs() < 1e-6 && (s.solution.mu[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unattained_sup_dual_value() {
        // No cap: the dual feasible set is the single point μ = (0.1, 2.7, 0.3),
        // so there is no interior and convergence is slow.
        let p = unattained_sup();
        let f = dual_form(&p, None).unwrap();
        let sol = cone::solve(&f.prob, &ConicSettings::default()).unwrap();
        assert!((sol.pcost - 3.1).abs() < 1e-4, "dual value {}", sol.pcost);
        let mu = sol.x.as_slice();
        for (got, want) in mu.iter().zip([0.1, 2.7, 0.3]) {
            assert!((got - want).abs() < 1e-3, "{mu:?}");
        }
    }

    #[test]
    fn phase_one_margins() {
        let p = unattained_sup();
        assert!(combined_primal_margin(&p).unwrap() >= 0.0);
        assert!(combined_dual_margin(&p).unwrap() <= 1e-7);

        let q = PackingProblem::from_parts(SymMatrix::identity(1), vec![SymMatrix::identity(1)], vec![-1.0]).unwrap();
        let cq = CombinedProblem::from_packing(&q);
        assert!(combined_primal_margin(&cq).unwrap() < 0.0);
    }
}
