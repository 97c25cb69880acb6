//! Second-order cone programs in the modelling form used by the reductions.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::solve::cone::{ConeSpec, ConicProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// `‖F x + g‖₂ ≤ fᵀx + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub f_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub f_vec: DVector<f64>,
    pub d: f64,
    /// Index of the packing constraint this cone encodes, if any.
    pub tag: Option<usize>,
}

impl SocConstraint {
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.f_vec.dot(x) + self.d - (&self.f_mat * x + &self.g).norm()
    }
}

/// A named slice of the variable vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub range: Range<usize>,
}

/// Linear objective over second-order cone constraints with optional linear
/// rows `L x ≤ u` and `E x = e`. Variables are free unless constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct SocpProblem {
    pub sense: Sense,
    pub objective: DVector<f64>,
    pub cones: Vec<SocConstraint>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Packing-constraint index for each inequality row, if any.
    pub ineq_tags: Vec<Option<usize>>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub blocks: Vec<VarBlock>,
}

impl SocpProblem {
    pub fn new(sense: Sense, objective: DVector<f64>) -> Self {
        let nv = objective.len();
        SocpProblem {
            sense,
            objective,
            cones: Vec::new(),
            ineq: DMatrix::zeros(0, nv),
            ineq_rhs: DVector::zeros(0),
            ineq_tags: Vec::new(),
            eq: DMatrix::zeros(0, nv),
            eq_rhs: DVector::zeros(0),
            blocks: vec![VarBlock { name: "x".into(), range: 0..nv }],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn with_blocks(mut self, blocks: &[(&str, usize)]) -> Self {
        let mut start = 0;
        self.blocks = blocks
            .iter()
            .map(|&(name, len)| {
                let b = VarBlock { name: name.into(), range: start..start + len };
                start += len;
                b
            })
            .collect();
        assert_eq!(start, self.num_vars(), "variable blocks must cover the objective");
        self
    }

    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.blocks.iter().find(|b| b.name == name).map(|b| b.range.clone())
    }

    pub fn push_cone(&mut self, c: SocConstraint) {
        assert_eq!(c.f_mat.ncols(), self.num_vars());
        assert_eq!(c.f_mat.nrows(), c.g.len());
        assert_eq!(c.f_vec.len(), self.num_vars());
        self.cones.push(c);
    }

    pub fn push_ineq(&mut self, row: DVector<f64>, rhs: f64, tag: Option<usize>) {
        self.ineq = append_row(&self.ineq, &row);
        self.ineq_rhs = self.ineq_rhs.push(rhs);
        self.ineq_tags.push(tag);
    }

    pub fn push_eq(&mut self, row: DVector<f64>, rhs: f64) {
        self.eq = append_row(&self.eq, &row);
        self.eq_rhs = self.eq_rhs.push(rhs);
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.objective.dot(x)
    }

    /// Largest violation over cones, inequality rows and equality rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let cone = self.cones.iter().map(|c| -c.slack(x)).fold(0.0, f64::max);
        let ineq = (&self.ineq * x - &self.ineq_rhs).iter().fold(0.0_f64, |m, &v| m.max(v));
        let eq = (&self.eq * x - &self.eq_rhs).amax();
        cone.max(ineq).max(eq)
    }

    /// Conic standard form: minimize, orthant rows first, then one cone per
    /// constraint in order.
    pub fn to_conic(&self) -> ConicProblem {
        let nv = self.num_vars();
        let rows = self.ineq.nrows() + self.cones.iter().map(|c| c.g.len() + 1).sum::<usize>();
        let mut g = DMatrix::zeros(rows, nv);
        let mut h = DVector::zeros(rows);
        let li = self.ineq.nrows();
        g.rows_mut(0, li).copy_from(&self.ineq);
        h.rows_mut(0, li).copy_from(&self.ineq_rhs);
        let mut r = li;
        let mut soc = Vec::with_capacity(self.cones.len());
        for c in &self.cones {
            let m = c.g.len();
            g.row_mut(r).copy_from(&(-c.f_vec.transpose()));
            h[r] = c.d;
            g.rows_mut(r + 1, m).copy_from(&(-&c.f_mat));
            h.rows_mut(r + 1, m).copy_from(&c.g);
            soc.push(m + 1);
            r += m + 1;
        }
        let c = match self.sense {
            Sense::Maximize => -&self.objective,
            Sense::Minimize => self.objective.clone(),
        };
        ConicProblem::new(c, g, h, ConeSpec { nonneg: li, soc, psd: Vec::new() })
            .with_equalities(self.eq.clone(), self.eq_rhs.clone())
    }
}

fn append_row(m: &DMatrix<f64>, row: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone().insert_row(m.nrows(), 0.0);
    out.row_mut(m.nrows()).copy_from(&row.transpose());
    out
}
