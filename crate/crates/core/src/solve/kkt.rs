use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, SymMatrix};
use crate::model::{KktResiduals, PackingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub residuals: KktResiduals,
    /// Residuals are compared with `tol · scale`.
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
}

impl KktReport {
    /// Name of the largest residual.
    pub fn worst(&self) -> &'static str {
        let r = &self.residuals;
        if r.primal >= r.dual && r.primal >= r.complementarity {
            "primal"
        } else if r.dual >= r.complementarity {
            "dual"
        } else {
            "complementarity"
        }
    }
}

/// Max-norm residuals of primal feasibility, dual feasibility
/// `Σ μ_i M_i ⪰ C, μ ≥ 0`, and complementarity `(Σ μ_i M_i − C) X = 0`,
/// `μ_i (b_i − ⟨M_i, X⟩) = 0`.
pub fn kkt_check(p: &PackingProblem, x: &SymMatrix, mu: &[f64], tol: f64) -> KktReport {
    let nan = KktResiduals { primal: f64::INFINITY, dual: f64::INFINITY, complementarity: f64::INFINITY };
    if x.n() != p.n() || mu.len() != p.l() {
        return KktReport { residuals: nan, scale: 1.0, tol, pass: false };
    }
    let slacks: Vec<f64> = p.constraints().iter().map(|k| k.b - k.m.dot(x)).collect();
    let x_min = linalg::eigh(x).map(|e| e.min()).unwrap_or(f64::NEG_INFINITY);
    let primal = slacks.iter().fold((-x_min).max(0.0), |m, &s| m.max(-s));

    let s = p.weighted_m(mu).sub(p.c());
    let s_min = linalg::eigh(&s).map(|e| e.min()).unwrap_or(f64::NEG_INFINITY);
    let dual = mu.iter().fold((-s_min).max(0.0), |m, &v| m.max(-v));

    let sx = s.as_matrix() * x.as_matrix();
    let complementarity = mu
        .iter()
        .zip(&slacks)
        .fold(sx.amax(), |m, (&u, &sl)| m.max((u * sl).abs()));

    let bmax = p.b().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = 1.0_f64.max(p.c().norm()).max(bmax).max(p.objective(x).abs());
    let residuals = KktResiduals { primal, dual, complementarity };
    let pass = residuals.max() <= tol * scale;
    KktReport { residuals, scale, tol, pass }
}

/// Multipliers solving `Σ μ_i M_i V = C V` in the least-squares sense over
/// the active constraints, where `X = VVᵀ`. This enforces complementarity
/// exactly up to the accuracy of `X`; negative entries are dropped one at a
/// time. Returns `None` when no constraint is active.
pub fn polish_dual(p: &PackingProblem, x: &SymMatrix, rank_threshold: f64) -> Option<Vec<f64>> {
    let v = linalg::psd_factor(x, Some(rank_threshold)).ok()?.transpose();
    if v.ncols() == 0 {
        return None;
    }
    let mut active: Vec<usize> = (0..p.l())
        .filter(|&i| {
            let k = &p.constraints()[i];
            k.m.max_abs() > 0.0 && k.b - k.m.dot(x) <= 1e-6 * k.b.abs().max(1.0)
        })
        .collect();
    let rhs = p.c().as_matrix() * &v;
    let rhs = DVector::from_column_slice(rhs.as_slice());
    while !active.is_empty() {
        let cols: Vec<DVector<f64>> = active
            .iter()
            .map(|&i| {
                let mv = p.m(i).as_matrix() * &v;
                DVector::from_column_slice(mv.as_slice())
            })
            .collect();
        let a = DMatrix::from_columns(&cols);
        let sol = a.svd(true, true).solve(&rhs, 1e-12 * rhs.amax().max(1.0)).ok()?;
        match (0..sol.len()).filter(|&k| sol[k] < 0.0).min_by(|&i, &j| sol[i].total_cmp(&sol[j])) {
            Some(k) => {
                active.remove(k);
            }
            None => {
                let mut mu = vec![0.0; p.l()];
                for (&i, &val) in active.iter().zip(sol.iter()) {
                    mu[i] = val;
                }
                return Some(mu);
            }
        }
    }
    None
}

/// Newton refinement of a primal-dual pair with `X = VVᵀ` of rank `k`.
///
/// Solves `(Σ_{i∈A} μ_i M_i − C) V = 0`, `⟨M_i, VVᵀ⟩ = b_i` for `i ∈ A` (the
/// constraints active at `x`) by Gauss–Newton with minimum-norm steps, which
/// handles the rotational freedom `V → VQ`. Returns the refined pair if it
/// lowers the largest KKT residual.
pub fn polish(p: &PackingProblem, x: &SymMatrix, mu: &[f64], rank_threshold: f64) -> Option<(SymMatrix, Vec<f64>)> {
    // Active sets from tight to loose; a wrong guess leaves the system
    // inconsistent and is rejected by the residual comparison.
    let mut best: Option<(SymMatrix, Vec<f64>, f64)> = None;
    // Likewise for the rank: small spurious eigenvalues may survive the
    // requested threshold.
    for threshold in [rank_threshold, rank_threshold.max(1e-4), rank_threshold.max(1e-2)] {
        for slack_tol in [1e-8, 1e-6, 1e-4] {
            if let Some((xp, mp)) = polish_on(p, x, mu, threshold, slack_tol) {
                let r = kkt_check(p, &xp, &mp, 1.0).residuals.max();
                if best.as_ref().is_none_or(|b| r < b.2) {
                    best = Some((xp, mp, r));
                }
            }
        }
    }
    best.map(|(x, m, _)| (x, m))
}

fn polish_on(p: &PackingProblem, x: &SymMatrix, mu: &[f64], rank_threshold: f64, slack_tol: f64) -> Option<(SymMatrix, Vec<f64>)> {
    let mut v = linalg::psd_factor(x, Some(rank_threshold)).ok()?.transpose();
    let (n, k) = v.shape();
    if k == 0 || mu.len() != p.l() {
        return None;
    }
    let mu_max = mu.iter().fold(0.0_f64, |m, &u| m.max(u));
    let active: Vec<usize> = (0..p.l())
        .filter(|&i| {
            let c = &p.constraints()[i];
            c.m.max_abs() > 0.0 && (c.b - c.m.dot(x) <= slack_tol * c.b.abs().max(1.0) || mu[i] > 1e-3 * mu_max)
        })
        .collect();
    let a = active.len();
    let mut ma: Vec<f64> = active.iter().map(|&i| mu[i].max(0.0)).collect();
    let c = p.c().as_matrix();
    let residual = |v: &DMatrix<f64>, ma: &[f64]| -> DVector<f64> {
        let s = active.iter().zip(ma).fold(-c.clone(), |acc, (&i, &u)| acc + p.m(i).as_matrix() * u);
        let sv = s * v;
        let mut f = DVector::zeros(n * k + a);
        f.rows_mut(0, n * k).copy_from_slice(sv.as_slice());
        for (j, &i) in active.iter().enumerate() {
            f[n * k + j] = (v.transpose() * p.m(i).as_matrix() * v).trace() - p.constraints()[i].b;
        }
        f
    };
    let mut f = residual(&v, &ma);
    for _ in 0..20 {
        let norm = f.norm();
        if norm <= 1e-15 * c.amax().max(1.0) {
            break;
        }
        let s = active.iter().zip(&ma).fold(-c.clone(), |acc, (&i, &u)| acc + p.m(i).as_matrix() * u);
        let mut jac = DMatrix::zeros(n * k + a, n * k + a);
        for col in 0..k {
            jac.view_mut((col * n, col * n), (n, n)).copy_from(&s);
        }
        for (j, &i) in active.iter().enumerate() {
            let mv = p.m(i).as_matrix() * &v;
            let mv = DVector::from_column_slice(mv.as_slice());
            jac.view_mut((0, n * k + j), (n * k, 1)).copy_from(&mv);
            jac.view_mut((n * k + j, 0), (1, n * k)).copy_from(&(mv.transpose() * 2.0));
        }
        let eps = 1e-13 * jac.amax().max(1.0);
        let step = jac.svd(true, true).solve(&(-&f), eps).ok()?;
        let vn = &v + DMatrix::from_column_slice(n, k, step.rows(0, n * k).as_slice());
        let mn: Vec<f64> = ma.iter().zip(step.rows(n * k, a).iter()).map(|(u, d)| u + d).collect();
        let fn_ = residual(&vn, &mn);
        if !(fn_.norm() < norm) {
            break;
        }
        v = vn;
        ma = mn;
        f = fn_;
    }
    if ma.iter().any(|&u| u < 0.0) {
        return None;
    }
    let xp = SymMatrix::new(&v * v.transpose()).ok()?;
    let mut mp = vec![0.0; p.l()];
    for (&i, &u) in active.iter().zip(&ma) {
        mp[i] = u;
    }
    let before = kkt_check(p, x, mu, 1.0).residuals.max();
    let after = kkt_check(p, &xp, &mp, 1.0).residuals.max();
    (after < before).then_some((xp, mp))
}

/// Fills in multipliers for constraints that a reduction removed.
///
/// `mu` holds the multipliers of the constraints in `kept`; the constraints in
/// `zero_rhs` get a common weight `t`, doubled from `t₀` until
/// `Σ μ_i M_i − C` is PSD (or the attempts run out, in which case the smallest
/// violation found is kept). All other entries are zero.
pub fn complete_dual(p: &PackingProblem, kept: &[usize], mu: &[f64], zero_rhs: &[usize]) -> Vec<f64> {
    let mut full = vec![0.0; p.l()];
    for (&i, &v) in kept.iter().zip(mu) {
        full[i] = v.max(0.0);
    }
    if zero_rhs.is_empty() {
        return full;
    }
    let base = p.weighted_m(&full).sub(p.c());
    let extra = zero_rhs.iter().fold(SymMatrix::zeros(p.n()), |acc, &i| acc.add(p.m(i)));
    let tol = linalg::default_tol(p.n()) * 1.0_f64.max(base.max_abs());
    let scale = extra.max_abs().max(f64::MIN_POSITIVE);
    let mut t = base.max_abs().max(1.0) / scale * 1e-3;
    let mut best = (f64::NEG_INFINITY, t);
    for _ in 0..80 {
        let min = linalg::eigh(&base.add(&extra.scale(t))).map(|e| e.min()).unwrap_or(f64::NEG_INFINITY);
        if min > best.0 {
            best = (min, t);
        }
        if min >= -tol {
            break;
        }
        t *= 2.0;
    }
    for &i in zero_rhs {
        full[i] = best.1;
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dominant() -> PackingProblem {
        PackingProblem::from_parts(SymMatrix::from_diagonal(&[1.0, 0.0]), vec![SymMatrix::identity(2)], vec![1.0]).unwrap()
    }

    #[test]
    fn exact_point() {
        let r = kkt_check(&dominant(), &SymMatrix::from_diagonal(&[1.0, 0.0]), &[1.0], 1e-12);
        assert!(r.pass);
        assert_eq!(r.residuals.max(), 0.0);
    }

    #[test]
    fn weak_dual() {
        let r = kkt_check(&dominant(), &SymMatrix::from_diagonal(&[1.0, 0.0]), &[0.5], 1e-8);
        assert!(!r.pass);
        assert!((r.residuals.dual - 0.5).abs() < 1e-14);
        assert_eq!(r.worst(), "dual");
    }

    #[test]
    fn dimension_mismatch_fails() {
        let r = kkt_check(&dominant(), &SymMatrix::identity(3), &[1.0], 1e-8);
        assert!(!r.pass);
    }

    #[test]
    fn fills_zero_rhs_weight() {
        // max x₂₂ s.t. x₁₁ ≤ 0, tr X ≤ 1: μ₂ = 1 and μ₁ anything ≥ 0.
        let p = PackingProblem::from_parts(
            SymMatrix::from_diagonal(&[0.0, 1.0]),
            vec![SymMatrix::from_diagonal(&[1.0, 0.0]), SymMatrix::identity(2)],
            vec![0.0, 1.0],
        )
        .unwrap();
        let mu = complete_dual(&p, &[1], &[1.0], &[0]);
        assert_eq!(mu[1], 1.0);
        let r = kkt_check(&p, &SymMatrix::from_diagonal(&[0.0, 1.0]), &mu, 1e-10);
        assert!(r.pass, "{r:?}");
    }
}
