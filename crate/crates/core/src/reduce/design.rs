//! Packing and cone formulations of optimal experimental design.

use nalgebra::{DMatrix, DVector};

use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{Criterion, DesignProblem, PackingProblem};

use super::socp::{Sense, SocConstraint, SocpProblem};

fn unit_rhs(d: &DesignProblem) -> Vec<f64> {
    vec![1.0; d.l()]
}

fn info_matrices(d: &DesignProblem) -> Vec<SymMatrix> {
    d.experiments().iter().map(|e| e.m.clone()).collect()
}

/// `max cᵀXc  s.t.  ⟨M_i, X⟩ ≤ 1`; its value is the optimal variance
/// `min_w cᵀ(Σ w_i M_i)† c` over the simplex.
pub fn build_c_optimal(d: &DesignProblem) -> Result<PackingProblem> {
    if d.criterion() != Criterion::COptimal {
        return Err(Error::WrongCriterion);
    }
    let c = d.k().column(0).into_owned();
    PackingProblem::from_parts(SymMatrix::outer(&c), info_matrices(d), unit_rhs(d))
}

/// Block-diagonal lifting: `M̃_i = I_r ⊗ M_i`, `c̃ = vec(K)`. The result has
/// rank-one objective in dimension `r n`.
pub fn build_a_optimal(d: &DesignProblem) -> Result<PackingProblem> {
    let (n, r) = (d.n(), d.r());
    let ct = DVector::from_iterator(n * r, d.k().iter().copied());
    let ms = d
        .experiments()
        .iter()
        .map(|e| {
            let mut big = DMatrix::zeros(n * r, n * r);
            for k in 0..r {
                big.view_mut((k * n, k * n), (n, n)).copy_from(e.m.as_matrix());
            }
            SymMatrix::new(big)
        })
        .collect::<Result<Vec<_>>>()?;
    PackingProblem::from_parts(SymMatrix::outer(&ct), ms, unit_rhs(d))
}

/// `max ⟨KKᵀ, X⟩  s.t.  ⟨M_i, X⟩ ≤ 1`.
pub fn build_e_optimal(d: &DesignProblem) -> Result<PackingProblem> {
    let k = d.k();
    let c = SymMatrix::new(k * k.transpose())?;
    PackingProblem::from_parts(c, info_matrices(d), unit_rhs(d))
}

/// Primal and dual cone programs for c-optimal design under `P w ≤ d`.
#[derive(Debug, Clone)]
pub struct ResourceSocps {
    /// Variables `(x, λ)`: `max cᵀx` s.t. `‖(2A_i x; p_iᵀλ − 1)‖ ≤ p_iᵀλ + 1`,
    /// `dᵀλ ≤ 1`, `λ ≥ 0`.
    pub primal: SocpProblem,
    /// Variables `(μ, t, α, z_1..z_l)`: `min Σα_i + t` s.t. `Σ A_iᵀz_i = c`,
    /// `Pμ ≤ t d`, `‖(z_i; α_i − μ_i)‖ ≤ α_i + μ_i`.
    pub dual: SocpProblem,
    /// Row count of each `A_i`.
    pub rows: Vec<usize>,
}

/// Checks that some `ŵ > 0` has `P ŵ ≤ d` and `c ∈ Im Σ ŵ_i M_i`.
fn check_resource_feasible(d: &DesignProblem) -> Result<()> {
    let res = d.resource().ok_or_else(|| Error::InvalidInput("design has no resource block".into()))?;
    for j in 0..res.d.len() {
        let row_zero = res.p.row(j).iter().all(|&v| v == 0.0);
        if res.d[j] < 0.0 || (res.d[j] == 0.0 && !row_zero) {
            return Err(Error::InfeasibleDesign(format!("resource row {j} admits no positive design")));
        }
    }
    let c = SymMatrix::outer(&d.k().column(0).into_owned());
    let total = d.information(&vec![1.0; d.l()]);
    if !analysis::range_included(&c, &total)? {
        return Err(Error::InfeasibleDesign("c is not in the range of the information matrices".into()));
    }
    Ok(())
}

pub fn build_resource_constrained(d: &DesignProblem) -> Result<ResourceSocps> {
    if d.criterion() != Criterion::COptimal {
        return Err(Error::WrongCriterion);
    }
    check_resource_feasible(d)?;
    let res = d.resource().expect("checked above");
    let (n, l, q) = (d.n(), d.l(), res.d.len());
    let c = d.k().column(0).into_owned();
    let a: Vec<DMatrix<f64>> = (0..l).map(|i| d.observation(i)).collect::<Result<_>>()?;
    let rows: Vec<usize> = a.iter().map(|m| m.nrows()).collect();

    // Primal in (x, λ).
    let nv = n + q;
    let mut obj = DVector::zeros(nv);
    obj.rows_mut(0, n).copy_from(&c);
    let mut primal = SocpProblem::new(Sense::Maximize, obj).with_blocks(&[("x", n), ("lambda", q)]);
    for (i, ai) in a.iter().enumerate() {
        let p_i = res.p.column(i).into_owned();
        primal.push_cone(super::hyperbolic_cone(ai, &p_i, 0.0, i));
    }
    let mut row = DVector::zeros(nv);
    row.rows_mut(n, q).copy_from(&res.d);
    primal.push_ineq(row, 1.0, None);
    for j in 0..q {
        let mut row = DVector::zeros(nv);
        row[n + j] = -1.0;
        primal.push_ineq(row, 0.0, None);
    }

    // Dual in (μ, t, α, z).
    let nz: usize = rows.iter().sum();
    let dv = 2 * l + 1 + nz;
    let (mu0, t0, al0, z0) = (0, l, l + 1, 2 * l + 1);
    let mut obj = DVector::zeros(dv);
    for i in 0..l {
        obj[al0 + i] = 1.0;
    }
    obj[t0] = 1.0;
    let mut dual = SocpProblem::new(Sense::Minimize, obj).with_blocks(&[("mu", l), ("t", 1), ("alpha", l), ("z", nz)]);
    // Σ A_iᵀ z_i = c
    for k in 0..n {
        let mut row = DVector::zeros(dv);
        let mut off = z0;
        for ai in &a {
            for r in 0..ai.nrows() {
                row[off + r] = ai[(r, k)];
            }
            off += ai.nrows();
        }
        dual.push_eq(row, c[k]);
    }
    // P μ − t d ≤ 0
    for j in 0..q {
        let mut row = DVector::zeros(dv);
        for i in 0..l {
            row[mu0 + i] = res.p[(j, i)];
        }
        row[t0] = -res.d[j];
        dual.push_ineq(row, 0.0, None);
    }
    let mut off = z0;
    for (i, &m) in rows.iter().enumerate() {
        let mut f_mat = DMatrix::zeros(m + 1, dv);
        for r in 0..m {
            f_mat[(r, off + r)] = 1.0;
        }
        f_mat[(m, al0 + i)] = 1.0;
        f_mat[(m, mu0 + i)] = -1.0;
        let mut f_vec = DVector::zeros(dv);
        f_vec[al0 + i] = 1.0;
        f_vec[mu0 + i] = 1.0;
        dual.push_cone(SocConstraint { f_mat, g: DVector::zeros(m + 1), f_vec, d: 0.0, tag: Some(i) });
        off += m;
    }
    Ok(ResourceSocps { primal, dual, rows })
}
