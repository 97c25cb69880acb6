//! Feasibility and boundedness certificates, and the rank and gap bounds.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::PackingProblem;

/// Relative residual below which a column of `C` counts as lying in the
/// range of `Σ M_i`.
pub const RANGE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// Zero-based index of the first negative `b_i`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

/// `X = 0` is feasible iff every `b_i ≥ 0`.
pub fn check_feasible(p: &PackingProblem) -> Feasibility {
    let index = p.constraints().iter().position(|k| k.b < 0.0);
    Feasibility { feasible: index.is_none(), index }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundednessCertificate {
    /// `λ Σ M_i − C ⪰ 0`; `min_eigenvalue` is the smallest eigenvalue of
    /// that matrix.
    Bounded { lambda: f64, min_eigenvalue: f64 },
    /// `M_i h = 0` for every `i` and `hᵀCh > 0`, so `α hhᵀ` is feasible for
    /// all `α > 0` with objective growing linearly in `α`.
    Unbounded {
        ray: Vec<f64>,
        /// `max_i ‖A_i h‖ = max_i √(hᵀM_ih)`.
        residual: f64,
        /// `hᵀCh`.
        curvature: f64,
    },
}

impl BoundednessCertificate {
    pub fn is_bounded(&self) -> bool {
        matches!(self, BoundednessCertificate::Bounded { .. })
    }
}

/// Columns `c_k = √σ_k q_k` with `C = Σ c_k c_kᵀ` over the positive eigenpairs.
pub fn c_columns(c: &SymMatrix) -> Result<Vec<DVector<f64>>> {
    let e = linalg::eigh(c)?;
    let cut = linalg::default_tol(c.n()) * e.max_abs();
    Ok((0..c.n())
        .filter(|&k| e.eigenvalues[k] > cut)
        .map(|k| e.eigenvectors.column(k) * e.eigenvalues[k].sqrt())
        .collect())
}

/// Largest relative residual `‖(I − UUᵀ)c_k‖ / ‖c_k‖` against the range of `S`.
pub fn range_residual(c: &SymMatrix, s: &SymMatrix) -> Result<f64> {
    let u = linalg::range_basis(s, None)?;
    Ok(c_columns(c)?
        .iter()
        .map(|ck| u.residual(ck) / ck.norm())
        .fold(0.0, f64::max))
}

pub fn range_included(c: &SymMatrix, s: &SymMatrix) -> Result<bool> {
    Ok(range_residual(c, s)? <= RANGE_TOL)
}

/// `λ = Σ_k c_kᵀ (Σ M_i)† c_k`, which makes `λ Σ M_i − C` PSD.
pub fn dual_scalar_bound(p: &PackingProblem) -> Result<f64> {
    let s = p.sum_m();
    if !range_included(p.c(), &s)? {
        return Err(Error::RangeInclusionFails);
    }
    let sp = linalg::pinv(&s, None)?;
    Ok(c_columns(p.c())?.iter().map(|ck| sp.quad(ck)).sum::<f64>().max(0.0))
}

pub fn check_bounded(p: &PackingProblem) -> Result<BoundednessCertificate> {
    let s = p.sum_m();
    if range_included(p.c(), &s)? {
        let lambda = dual_scalar_bound(p)?;
        let slack = s.scale(lambda).sub(p.c());
        let min_eigenvalue = linalg::eigh(&slack)?.min();
        return Ok(BoundednessCertificate::Bounded { lambda, min_eigenvalue });
    }
    let kernel = linalg::null_basis(&s, None)?;
    let k = kernel.matrix();
    let reduced = p.c().congruence(k);
    let e = linalg::eigh(&reduced)?;
    let mut h = k * e.eigenvectors.column(0);
    if let Some(first) = h.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            h = -h;
        }
    }
    let residual = p
        .constraints()
        .iter()
        .map(|c| c.m.quad(&h).max(0.0).sqrt())
        .fold(0.0, f64::max);
    let curvature = p.c().quad(&h);
    Ok(BoundednessCertificate::Unbounded { ray: h.iter().copied().collect(), residual, curvature })
}

/// Barvinok–Pataki bound `⌊(√(8l + 1) − 1)/2⌋`: some optimal solution of an
/// SDP with `l` linear constraints has at most this rank.
pub fn barvinok_pataki(l: usize) -> usize {
    // Largest r with r(r + 1)/2 ≤ l, computed in integers.
    let mut r = (((8.0 * l as f64 + 1.0).sqrt() - 1.0) / 2.0) as usize;
    while (r + 1) * (r + 2) / 2 <= l {
        r += 1;
    }
    while r > 0 && r * (r + 1) / 2 > l {
        r -= 1;
    }
    r
}

/// Ratio between the optimum and the best rank-one value: `2 ln(2 l μ̄)` with
/// `μ̄ = min(l, max_i rank M_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBound {
    pub l: usize,
    pub mu_bar: usize,
    /// `None` when `μ̄ = 0`.
    pub factor: Option<f64>,
    pub degenerate: bool,
}

pub fn nrt_bound(p: &PackingProblem) -> Result<GapBound> {
    let mut max_rank = 0;
    for k in p.constraints() {
        max_rank = max_rank.max(linalg::rank_tol(&k.m, None)?);
    }
    let l = p.l();
    let mu_bar = l.min(max_rank);
    if mu_bar == 0 {
        return Ok(GapBound { l, mu_bar, factor: None, degenerate: true });
    }
    let factor = 2.0 * (2.0 * l as f64 * mu_bar as f64).ln();
    Ok(GapBound { l, mu_bar, factor: Some(factor), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packing(c: SymMatrix, ms: Vec<SymMatrix>, b: Vec<f64>) -> PackingProblem {
        PackingProblem::from_parts(c, ms, b).unwrap()
    }

    fn diag(d: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(d)
    }

    #[test]
    fn feasibility() {
        let p = packing(diag(&[1.0]), vec![diag(&[1.0]); 3], vec![1.0, 1.0, 1.0]);
        assert!(check_feasible(&p).feasible);
        let p = packing(diag(&[1.0]), vec![diag(&[1.0]); 2], vec![0.0, 0.0]);
        assert!(check_feasible(&p).feasible);
        let p = packing(diag(&[1.0]), vec![diag(&[1.0]); 2], vec![1.0, -0.5]);
        assert_eq!(check_feasible(&p), Feasibility { feasible: false, index: Some(1) });
    }

    #[test]
    fn orthogonal_ranges_unbounded() {
        let p = packing(diag(&[1.0, 0.0]), vec![diag(&[0.0, 1.0])], vec![1.0]);
        match check_bounded(&p).unwrap() {
            BoundednessCertificate::Unbounded { ray, residual, curvature } => {
                assert!((ray[0] - 1.0).abs() < 1e-12 && ray[1].abs() < 1e-12);
                assert!(residual < 1e-12);
                assert!((curvature - 1.0).abs() < 1e-12);
            }
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    #[test]
    fn unattained_sup_packing_part_bounded() {
        let c = DVector::from_vec(vec![0.9 * 3f64.sqrt(), 0.1 * 3f64.sqrt()]);
        let p = packing(SymMatrix::outer(&c), vec![diag(&[0.0, 0.0]), diag(&[1.0, 0.0]), diag(&[0.0, 1.0])], vec![1.0; 3]);
        let cert = check_bounded(&p).unwrap();
        let BoundednessCertificate::Bounded { lambda, min_eigenvalue } = cert else { panic!() };
        // ΣM = I, so λ = ‖c‖² = 2.46.
        assert!((lambda - 2.46).abs() < 1e-12);
        assert!(min_eigenvalue > -1e-12);
    }

    #[test]
    fn scalar_bound_examples() {
        let p = packing(SymMatrix::identity(2), vec![SymMatrix::identity(2)], vec![1.0]);
        assert!((dual_scalar_bound(&p).unwrap() - 2.0).abs() < 1e-12);

        let p = packing(SymMatrix::zeros(2), vec![SymMatrix::identity(2)], vec![1.0]);
        assert_eq!(dual_scalar_bound(&p).unwrap(), 0.0);

        let c = DVector::from_vec(vec![1.0, 1.0]);
        let p = packing(SymMatrix::outer(&c), vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])], vec![1.0, 1.0]);
        let lam = dual_scalar_bound(&p).unwrap();
        assert!((lam - 2.0).abs() < 1e-12);
        assert!(linalg::is_psd(&p.sum_m().scale(lam).sub(p.c()), None).unwrap().psd);

        let p = packing(diag(&[1.0, 0.0]), vec![diag(&[0.0, 1.0])], vec![1.0]);
        assert!(matches!(dual_scalar_bound(&p), Err(Error::RangeInclusionFails)));
    }

    #[test]
    fn barvinok_pataki_values() {
        assert_eq!(barvinok_pataki(1), 1);
        assert_eq!(barvinok_pataki(3), 2);
        assert_eq!(barvinok_pataki(10), 4);
        for l in 1..2000 {
            let r = barvinok_pataki(l);
            assert!(r * (r + 1) / 2 <= l && (r + 1) * (r + 2) / 2 > l);
        }
    }

    #[test]
    fn gap_bound_values() {
        let p = packing(diag(&[1.0]), vec![diag(&[1.0])], vec![1.0]);
        let g = nrt_bound(&p).unwrap();
        assert_eq!(g.mu_bar, 1);
        assert!((g.factor.unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);

        let p = packing(SymMatrix::identity(3), vec![SymMatrix::identity(3); 2], vec![1.0, 1.0]);
        let g = nrt_bound(&p).unwrap();
        assert_eq!(g.mu_bar, 2);
        assert!((g.factor.unwrap() - 2.0 * 8f64.ln()).abs() < 1e-15);

        let p = packing(diag(&[1.0]), vec![diag(&[0.0])], vec![1.0]);
        let g = nrt_bound(&p).unwrap();
        assert!(g.degenerate && g.factor.is_none());
    }
}
