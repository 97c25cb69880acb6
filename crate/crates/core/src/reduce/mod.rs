//! Reduction of packing problems to strictly feasible form, rank-one cone
//! reductions, and the experimental-design formulations.

pub mod design;
pub mod socp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::{self, OrthonormalBasis, SymMatrix};
use crate::model::{CombinedProblem, Constraint, PackingProblem, Problem};
use crate::solve::sdp;

pub use design::{build_a_optimal, build_c_optimal, build_e_optimal, build_resource_constrained, ResourceSocps};
pub use socp::{Sense, SocConstraint, SocpProblem, VarBlock};

/// Cutoff under which `b_i` counts as zero: `1e-12 · max(1, ‖b‖∞)`.
pub fn zero_rhs_cutoff(b: &[f64]) -> f64 {
    1e-12 * b.iter().fold(1.0_f64, |m, v| m.max(v.abs()))
}

/// `X = W Z Wᵀ` with `W = UV` having orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftMap {
    /// `n × n'`, stored row-major.
    #[serde(rename = "UV")]
    w: Vec<Vec<f64>>,
    n: usize,
    n_reduced: usize,
}

impl LiftMap {
    fn from_matrix(w: &DMatrix<f64>) -> Self {
        LiftMap {
            w: (0..w.nrows()).map(|i| w.row(i).iter().copied().collect()).collect(),
            n: w.nrows(),
            n_reduced: w.ncols(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n_reduced, |i, j| self.w[i][j])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }

    pub fn is_identity(&self) -> bool {
        self.n == self.n_reduced && self.matrix() == DMatrix::identity(self.n, self.n)
    }

    /// `‖WᵀW − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let w = self.matrix();
        (w.transpose() * &w - DMatrix::identity(self.n_reduced, self.n_reduced)).norm()
    }

    /// The lift of `Z = 0`, for the case `n' = 0`.
    pub fn zero(&self) -> SymMatrix {
        SymMatrix::zeros(self.n)
    }
}

/// `X = (UV) Z (UV)ᵀ`.
pub fn lift_solution(z: &SymMatrix, map: &LiftMap) -> Result<SymMatrix> {
    if z.n() != map.n_reduced {
        return Err(Error::DimensionMismatch { expected: map.n_reduced, found: z.n() });
    }
    Ok(z.congruence_t(&map.matrix()))
}

/// Strictly feasible problem over `S_{n'}` together with the index bookkeeping
/// needed to map solutions back.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    /// `None` when `n' = 0`, in which case `X = 0` is the only feasible point.
    pub inner: Option<PackingProblem>,
    /// Original indices of the constraints kept in `inner`, in order.
    pub kept: Vec<usize>,
    /// Constraints with `b_i = 0` (up to the cutoff) and `M_i ≠ 0`.
    pub zero_rhs: Vec<usize>,
    /// Constraints with `M_i = 0` and `b_i ≥ 0`, removed as vacuous.
    pub dropped: Vec<usize>,
    /// `ε` such that `εI` is strictly feasible for `inner`.
    pub primal_eps: f64,
    /// `min_i (b_i − ε tr M_i')`.
    pub primal_margin: f64,
    /// `λ̄` used for the dual strictness check.
    pub dual_lambda: f64,
    /// Smallest eigenvalue of `λ̄ Σ M_i' − C'`.
    pub dual_margin: f64,
}

impl ReducedProblem {
    pub fn n_reduced(&self) -> usize {
        self.inner.as_ref().map_or(0, |p| p.n())
    }

    pub fn primal_strict(&self) -> bool {
        self.inner.is_none() || (self.primal_eps > 0.0 && self.primal_margin > 0.0)
    }

    /// Positive definiteness of `λ̄ Σ M_i' − C'` at the default tolerance.
    pub fn dual_strict(&self) -> bool {
        match &self.inner {
            None => true,
            Some(p) => {
                let scale = p.sum_m().scale(self.dual_lambda).sub(p.c()).max_abs().max(1.0);
                self.dual_margin > linalg::default_tol(p.n()) * scale
            }
        }
    }
}

fn full_or(basis: OrthonormalBasis) -> DMatrix<f64> {
    if basis.len() == basis.ambient_dim() {
        DMatrix::identity(basis.len(), basis.len())
    } else {
        basis.matrix().clone()
    }
}

/// Restricts to `Im Σ M_i`, then to the common kernel of the `M_i` with
/// `b_i = 0`, and drops those constraints.
pub fn project_packing(p: &PackingProblem) -> Result<(ReducedProblem, LiftMap)> {
    let b = p.b();
    let cut = zero_rhs_cutoff(&b);
    if let Some(index) = b.iter().position(|&v| v < -cut) {
        return Err(Error::InfeasibleInput { index });
    }
    if !analysis::check_bounded(p)?.is_bounded() {
        return Err(Error::UnboundedInput);
    }
    let mscale = p.constraints().iter().fold(0.0_f64, |m, k| m.max(k.m.max_abs()));
    let mut dropped = Vec::new();
    let mut zero_rhs = Vec::new();
    let mut positive = Vec::new();
    for (i, k) in p.constraints().iter().enumerate() {
        if k.m.max_abs() <= 1e-14 * mscale || mscale == 0.0 {
            dropped.push(i);
        } else if b[i].abs() <= cut {
            zero_rhs.push(i);
        } else {
            positive.push(i);
        }
    }

    let n = p.n();
    let active: Vec<usize> = zero_rhs.iter().chain(&positive).copied().collect();
    let u = if active.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        let s = active.iter().skip(1).fold(p.m(active[0]).clone(), |acc, &i| acc.add(p.m(i)));
        full_or(linalg::range_basis(&s, None)?)
    };
    let k = u.ncols();
    let v = if zero_rhs.is_empty() || k == 0 {
        DMatrix::identity(k, k)
    } else {
        let t = zero_rhs.iter().fold(SymMatrix::zeros(k), |acc, &i| acc.add(&p.m(i).congruence(&u)));
        full_or(linalg::null_basis(&t, None)?)
    };
    let w = &u * &v;
    let map = LiftMap::from_matrix(&w);
    let n_red = w.ncols();

    let unreduced = |kept: Vec<usize>| ReducedProblem {
        inner: None,
        kept,
        zero_rhs: zero_rhs.clone(),
        dropped: dropped.clone(),
        primal_eps: 0.0,
        primal_margin: 0.0,
        dual_lambda: 0.0,
        dual_margin: 0.0,
    };
    if n_red == 0 || positive.is_empty() {
        return Ok((unreduced(Vec::new()), map));
    }

    let c_red = p.c().congruence(&w);
    let constraints: Vec<Constraint> = positive
        .iter()
        .map(|&i| Constraint { m: p.m(i).congruence(&w), b: b[i] })
        .collect();
    let inner = PackingProblem::new(c_red, constraints)?;

    let primal_eps = 0.5
        * inner
            .constraints()
            .iter()
            .map(|k| k.b / k.m.trace().max(1.0))
            .fold(f64::INFINITY, f64::min);
    let primal_margin = inner
        .constraints()
        .iter()
        .map(|k| k.b - primal_eps * k.m.trace())
        .fold(f64::INFINITY, f64::min);
    let lam = match analysis::dual_scalar_bound(&inner) {
        Ok(l) => l,
        Err(Error::RangeInclusionFails) => 0.0,
        Err(e) => return Err(e),
    };
    let dual_lambda = 1.0 + 2.0 * lam;
    let dual_margin = linalg::eigh(&inner.sum_m().scale(dual_lambda).sub(inner.c()))?.min();

    Ok((
        ReducedProblem {
            inner: Some(inner),
            kept: positive,
            zero_rhs,
            dropped,
            primal_eps,
            primal_margin,
            dual_lambda,
            dual_margin,
        },
        map,
    ))
}

/// JSON bundle emitted by the `reduce` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBundle {
    pub kind: String,
    /// The reduced packing problem, or `null` when `n' = 0`.
    pub problem: Option<serde_json::Value>,
    pub lift: LiftMap,
    pub kept: Vec<usize>,
    pub zero_rhs: Vec<usize>,
    pub dropped: Vec<usize>,
    pub primal_eps: f64,
    pub primal_margin: f64,
    pub primal_strict: bool,
    pub dual_lambda: f64,
    pub dual_margin: f64,
    pub dual_strict: bool,
}

impl ReducedBundle {
    pub fn new(r: &ReducedProblem, map: &LiftMap) -> Self {
        ReducedBundle {
            kind: "reduced".into(),
            problem: r.inner.as_ref().map(|p| crate::model::problem_to_json(&Problem::Packing(p.clone()))),
            lift: map.clone(),
            kept: r.kept.clone(),
            zero_rhs: r.zero_rhs.clone(),
            dropped: r.dropped.clone(),
            primal_eps: r.primal_eps,
            primal_margin: r.primal_margin,
            primal_strict: r.primal_strict(),
            dual_lambda: r.dual_lambda,
            dual_margin: r.dual_margin,
            dual_strict: r.dual_strict(),
        }
    }

    /// Parses a bundle back, validating the embedded problem.
    pub fn parse(text: &str) -> Result<(Self, Option<PackingProblem>)> {
        let bundle: ReducedBundle = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if bundle.kind != "reduced" {
            return Err(Error::Schema(format!("expected kind \"reduced\", found \"{}\"", bundle.kind)));
        }
        let inner = match &bundle.problem {
            Some(v) => match crate::model::parse_problem(&v.to_string())? {
                Problem::Packing(p) => Some(p),
                _ => return Err(Error::Schema("reduced problem must be a packing problem".into())),
            },
            None => None,
        };
        Ok((bundle, inner))
    }
}

/// `c = √σ₁ q₁` from a rank-one `C`, with the first nonzero entry positive.
pub fn rank_one_factor(c: &SymMatrix) -> Result<DVector<f64>> {
    let rank = linalg::rank_tol(c, None)?;
    if rank != 1 {
        return Err(Error::RankNotOne { rank });
    }
    let e = linalg::eigh(c)?;
    let mut v = e.eigenvectors.column(0) * e.eigenvalues[0].max(0.0).sqrt();
    let cut = 1e-12 * v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > cut) {
        if *first < 0.0 {
            v = -v;
        }
    }
    Ok(v)
}

/// `max cᵀx  s.t.  ‖A_i x‖₂ ≤ √b_i` for `C = ccᵀ`. Each cone is tagged with
/// its constraint index; constraints with `M_i = 0` impose nothing and are
/// omitted.
pub fn to_socp_rank1(p: &PackingProblem) -> Result<SocpProblem> {
    let c = rank_one_factor(p.c())?;
    let b = p.b();
    let cut = zero_rhs_cutoff(&b);
    if let Some(index) = b.iter().position(|&v| v < -cut) {
        return Err(Error::InfeasibleInput { index });
    }
    let n = p.n();
    let mut socp = SocpProblem::new(Sense::Maximize, c);
    for (i, k) in p.constraints().iter().enumerate() {
        let a = linalg::psd_factor(&k.m, None)?;
        if a.nrows() == 0 {
            continue;
        }
        let m = a.nrows();
        socp.push_cone(SocConstraint {
            f_mat: a,
            g: DVector::zeros(m),
            f_vec: DVector::zeros(n),
            d: k.b.max(0.0).sqrt(),
            tag: Some(i),
        });
    }
    Ok(socp)
}

/// Hyperbolic cone `‖(2A x; h ᵀλ + b − 1)‖ ≤ hᵀλ + b + 1`, i.e.
/// `‖A x‖² ≤ hᵀλ + b`, over variables `(x, λ)`.
fn hyperbolic_cone(a: &DMatrix<f64>, h: &DVector<f64>, b: f64, tag: usize) -> SocConstraint {
    let (m, n) = a.shape();
    let q = h.len();
    let nv = n + q;
    let mut f_mat = DMatrix::zeros(m + 1, nv);
    f_mat.view_mut((0, 0), (m, n)).copy_from(&(a * 2.0));
    let mut g = DVector::zeros(m + 1);
    for j in 0..q {
        f_mat[(m, n + j)] = h[j];
    }
    g[m] = b - 1.0;
    let mut f_vec = DVector::zeros(nv);
    f_vec.rows_mut(n, q).copy_from(h);
    SocConstraint { f_mat, g, f_vec, d: b + 1.0, tag: Some(tag) }
}

/// Cone form of a combined problem with rank-one `C`, all `R_i = 0` and
/// `h_0 = 0`: `max cᵀx  s.t.  ‖A_i x‖² ≤ h_iᵀλ + b_i`. The optimal value
/// squared is the value of the combined problem.
pub fn combined_to_socp(p: &CombinedProblem) -> Result<SocpProblem> {
    let c = rank_one_factor(p.c())?;
    if let Some(index) = p.r().iter().position(|r| r.max_abs() != 0.0) {
        return Err(Error::NonzeroR { index });
    }
    if p.h0().iter().any(|&v| v != 0.0) {
        return Err(Error::NonzeroH0);
    }
    let primal = sdp::combined_primal_margin(p)?;
    if primal < -1e-9 {
        return Err(Error::InfeasiblePrimal { margin: primal });
    }
    let dual = sdp::combined_dual_margin(p)?;
    if dual > 1e-9 {
        return Err(Error::InfeasibleDual { margin: dual });
    }
    let (n, q) = (p.n(), p.q());
    let mut obj = DVector::zeros(n + q);
    obj.rows_mut(0, n).copy_from(&c);
    let mut socp = SocpProblem::new(Sense::Maximize, obj).with_blocks(&[("x", n), ("lambda", q)]);
    for i in 0..p.l() {
        let a = linalg::psd_factor(&p.m()[i], None)?;
        let h = p.h_col(i);
        if a.nrows() == 0 {
            if h.iter().all(|&v| v == 0.0) {
                continue;
            }
            // 0 ≤ hᵀλ + b
            let mut row = DVector::zeros(n + q);
            row.rows_mut(n, q).copy_from(&(-&h));
            socp.push_ineq(row, p.b()[i], Some(i));
        } else {
            socp.push_cone(hyperbolic_cone(&a, &h, p.b()[i], i));
        }
    }
    Ok(socp)
}
