//! Factorized `X = RRᵀ` solver for cross-checking.
//!
//! Augmented Lagrangian on `⟨M_i, RRᵀ⟩ ≤ b_i` with L-BFGS inner solves. The
//! problem in `R` is non-convex, so results are reported as `NonCertified`
//! unless the multipliers close the KKT system.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::{kkt, SolveOptions, SolveReport, Solved};
use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{PackingProblem, Solution, Status};

/// Residual level at which a factorized solution counts as certified.
pub const CERTIFY_TOL: f64 = 1e-6;

struct Alm<'a> {
    p: &'a PackingProblem,
    y: Vec<f64>,
    rho: f64,
    n: usize,
    k: usize,
}

impl Alm<'_> {
    fn unpack(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.k, v.as_slice())
    }

    fn violations(&self, r: &DMatrix<f64>) -> Vec<f64> {
        let x = r * r.transpose();
        self.p.constraints().iter().map(|c| c.m.as_matrix().dot(&x) - c.b).collect()
    }

    fn eval(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.unpack(v);
        let cr = self.p.c().as_matrix() * &r;
        let mut f = -cr.dot(&r);
        let mut grad = -2.0 * cr;
        for (c, (&g, &y)) in self.p.constraints().iter().zip(self.violations(&r).iter().zip(&self.y)) {
            let s = (y + self.rho * g).max(0.0);
            f += (s * s - y * y) / (2.0 * self.rho);
            if s > 0.0 {
                grad += 2.0 * s * (c.m.as_matrix() * &r);
            }
        }
        (f, DVector::from_column_slice(grad.as_slice()))
    }
}

/// Limited-memory BFGS with backtracking; returns the final point.
fn lbfgs(alm: &Alm<'_>, mut x: DVector<f64>, max_iter: usize, gtol: f64) -> DVector<f64> {
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let (mut f, mut g) = alm.eval(&x);
    for _ in 0..max_iter {
        if g.amax() <= gtol {
            break;
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, yv) in hist.iter().rev() {
            let a = s.dot(&q) / yv.dot(s);
            q -= yv * a;
            alphas.push(a);
        }
        if let Some((s, yv)) = hist.back() {
            q *= s.dot(yv) / yv.dot(yv);
        }
        for ((s, yv), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = yv.dot(&q) / yv.dot(s);
            q += s * (a - b);
        }
        let mut d = -q;
        if d.dot(&g) >= 0.0 {
            d = -g.clone();
            hist.clear();
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            let (fn_, gn) = alm.eval(&xn);
            if fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = &xn - &x;
        let yv = &gn - &g;
        if s.dot(&yv) > 1e-12 * s.norm() * yv.norm() {
            hist.push_back((s, yv));
            if hist.len() > 10 {
                hist.pop_front();
            }
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    x
}

/// Deterministic start: top eigenvectors of `C` plus a fixed small tilt so
/// that no column starts orthogonal to the optimum.
fn initial(p: &PackingProblem, k: usize) -> Result<DMatrix<f64>> {
    let e = linalg::eigh(p.c())?;
    let n = p.n();
    let mut r = DMatrix::from_fn(n, k, |i, j| 1e-2 * (((i + 1) * (j + 2)) as f64).sin());
    for j in 0..k.min(n) {
        r.set_column(j, &(r.column(j) + e.eigenvectors.column(j)));
    }
    let worst = p
        .constraints()
        .iter()
        .map(|c| c.m.dot(&SymMatrix::new(&r * r.transpose()).expect("finite")) / c.b.max(f64::MIN_POSITIVE))
        .fold(0.0_f64, f64::max);
    if worst > 0.0 {
        r /= worst.sqrt();
    }
    Ok(r)
}

/// Factorized solve with `R` of width `width` (defaults to `rank C`, at
/// least one).
pub fn solve_bm(p: &PackingProblem, opts: &SolveOptions, width: Option<usize>) -> Result<Solved> {
    opts.validate()?;
    if let Some(index) = analysis::check_feasible(p).index {
        return Err(Error::InfeasibleInput { index });
    }
    if !analysis::check_bounded(p)?.is_bounded() {
        return Err(Error::UnboundedInput);
    }
    let n = p.n();
    let k = width.unwrap_or(linalg::rank_tol(p.c(), None)?.max(1)).clamp(1, n);
    let mut alm = Alm { p, y: vec![0.0; p.l()], rho: 10.0, n, k };
    let mut v = DVector::from_column_slice(initial(p, k)?.as_slice());
    let mut prev_viol = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..60 {
        v = lbfgs(&alm, v, 500, 1e-10);
        iterations += 1;
        let r = alm.unpack(&v);
        let g = alm.violations(&r);
        let viol = g.iter().zip(&alm.y).map(|(&g, &y)| g.max(-y / alm.rho)).fold(0.0_f64, |m, v| m.max(v.abs()));
        for (y, &gi) in alm.y.iter_mut().zip(&g) {
            *y = (*y + alm.rho * gi).max(0.0);
        }
        if viol < 1e-10 {
            break;
        }
        if viol > 0.25 * prev_viol {
            alm.rho = (alm.rho * 5.0).min(1e8);
        }
        prev_viol = viol;
    }
    let r = alm.unpack(&v);
    let mut x = SymMatrix::new(&r * r.transpose())?;
    let worst = p
        .constraints()
        .iter()
        .filter(|c| c.b > 0.0)
        .map(|c| c.m.dot(&x) / c.b)
        .fold(1.0_f64, f64::max);
    if worst > 1.0 {
        x = x.scale(1.0 / worst);
    }
    let mu = alm.y.clone();
    let check = kkt::kkt_check(p, &x, &mu, CERTIFY_TOL);
    let status = if check.pass { Status::Optimal } else { Status::NonCertified };
    let primal_value = p.objective(&x);
    let dual_value: f64 = p.b().iter().zip(&mu).map(|(b, m)| b * m).sum();
    Ok(Solved {
        solution: Solution {
            numerical_rank: linalg::rank_tol(&x, Some(opts.rank_threshold))?,
            objective: Some(primal_value),
            x,
            mu,
            status,
            kkt_residuals: Some(check.residuals),
        },
        report: SolveReport {
            route: "bm".into(),
            primal_value,
            dual_value,
            gap: (dual_value - primal_value).abs(),
            iterations,
            status,
            kkt: Some(check.residuals),
            path: None,
        },
    })
}
