//! Problem and solution types with their JSON representation.
//!
//! Matrices are dense row-major arrays of arrays. Every document carries a
//! top-level `"kind"`: `"packing"`, `"combined"`, `"design"` or `"solution"`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result, Witness};
use crate::linalg::{self, SymMatrix};

/// One packing constraint `⟨M, X⟩ ≤ b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(rename = "M")]
    pub m: SymMatrix,
    pub b: f64,
}

/// `max ⟨C, X⟩  s.t.  ⟨M_i, X⟩ ≤ b_i,  X ⪰ 0` with `C` and every `M_i` PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PackingProblem {
    c: SymMatrix,
    constraints: Vec<Constraint>,
}

impl PackingProblem {
    pub fn new(c: SymMatrix, constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(validation("at least one constraint is required", Witness::Index { field: "constraints".into(), index: 0 }));
        }
        let n = c.n();
        for (i, k) in constraints.iter().enumerate() {
            if k.m.n() != n {
                return Err(validation(
                    "constraint matrix dimension differs from C",
                    Witness::Dimensions { field: format!("constraints[{i}].M"), expected: n, found: k.m.n() },
                ));
            }
            if !k.b.is_finite() {
                return Err(validation("right-hand side is not finite", Witness::Index { field: "constraints.b".into(), index: i }));
            }
        }
        require_psd(&c, "C")?;
        for (i, k) in constraints.iter().enumerate() {
            require_psd(&k.m, &format!("constraints[{i}].M"))?;
        }
        Ok(PackingProblem { c, constraints })
    }

    /// Builds from `C`, the `M_i` and `b` in one go.
    pub fn from_parts(c: SymMatrix, ms: Vec<SymMatrix>, b: Vec<f64>) -> Result<Self> {
        if ms.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: ms.len(), found: b.len() });
        }
        Self::new(c, ms.into_iter().zip(b).map(|(m, b)| Constraint { m, b }).collect())
    }

    pub fn n(&self) -> usize {
        self.c.n()
    }

    pub fn l(&self) -> usize {
        self.constraints.len()
    }

    pub fn c(&self) -> &SymMatrix {
        &self.c
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn m(&self, i: usize) -> &SymMatrix {
        &self.constraints[i].m
    }

    pub fn b(&self) -> Vec<f64> {
        self.constraints.iter().map(|k| k.b).collect()
    }

    pub fn sum_m(&self) -> SymMatrix {
        self.constraints.iter().skip(1).fold(self.constraints[0].m.clone(), |acc, k| acc.add(&k.m))
    }

    /// `Σ μ_i M_i`.
    pub fn weighted_m(&self, mu: &[f64]) -> SymMatrix {
        let mut acc = SymMatrix::zeros(self.n());
        for (k, &w) in self.constraints.iter().zip(mu) {
            acc = acc.add(&k.m.scale(w));
        }
        acc
    }

    pub fn objective(&self, x: &SymMatrix) -> f64 {
        self.c.dot(x)
    }
}

/// `sup ⟨C,X⟩ + ⟨R_0,Y⟩ + h_0ᵀλ  s.t.  ⟨M_i,X⟩ ≤ b_i + ⟨R_i,Y⟩ + h_iᵀλ`,
/// `X ⪰ 0`, `Y ⪰ 0`, `λ` free. `p = 0` means there is no `Y` block and
/// `q = 0` means there is no `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedProblem {
    c: SymMatrix,
    m: Vec<SymMatrix>,
    b: Vec<f64>,
    r0: Option<SymMatrix>,
    r: Vec<SymMatrix>,
    h0: DVector<f64>,
    /// Column `i` is `h_i`.
    h: DMatrix<f64>,
}

impl CombinedProblem {
    pub fn new(
        c: SymMatrix,
        m: Vec<SymMatrix>,
        b: Vec<f64>,
        r0: Option<SymMatrix>,
        r: Vec<SymMatrix>,
        h0: DVector<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let n = c.n();
        let l = m.len();
        if l == 0 {
            return Err(validation("at least one constraint is required", Witness::Index { field: "constraints".into(), index: 0 }));
        }
        if b.len() != l {
            return Err(validation("b length differs from the number of constraints", Witness::Dimensions { field: "b".into(), expected: l, found: b.len() }));
        }
        for (i, mi) in m.iter().enumerate() {
            if mi.n() != n {
                return Err(validation("constraint matrix dimension differs from C", Witness::Dimensions { field: format!("constraints[{i}].M"), expected: n, found: mi.n() }));
            }
        }
        match &r0 {
            Some(r0m) => {
                let p = r0m.n();
                if r.len() != l {
                    return Err(validation("one R_i per constraint is required", Witness::Dimensions { field: "R".into(), expected: l, found: r.len() }));
                }
                for (i, ri) in r.iter().enumerate() {
                    if ri.n() != p {
                        return Err(validation("R_i dimension differs from R0", Witness::Dimensions { field: format!("R[{i}]"), expected: p, found: ri.n() }));
                    }
                }
            }
            None if !r.is_empty() => {
                return Err(validation("R given without R0", Witness::Dimensions { field: "R0".into(), expected: r.len(), found: 0 }));
            }
            None => {}
        }
        let q = h0.len();
        if h.nrows() != q || h.ncols() != l {
            return Err(validation("H must be q x l", Witness::Dimensions { field: "h".into(), expected: q * l, found: h.nrows() * h.ncols() }));
        }
        require_psd(&c, "C")?;
        for (i, mi) in m.iter().enumerate() {
            require_psd(mi, &format!("constraints[{i}].M"))?;
        }
        Ok(CombinedProblem { c, m, b, r0, r, h0, h })
    }

    pub fn n(&self) -> usize {
        self.c.n()
    }
    pub fn l(&self) -> usize {
        self.m.len()
    }
    /// Dimension of `Y` (0 when absent).
    pub fn p(&self) -> usize {
        self.r0.as_ref().map_or(0, |r| r.n())
    }
    /// Dimension of `λ`.
    pub fn q(&self) -> usize {
        self.h0.len()
    }
    pub fn c(&self) -> &SymMatrix {
        &self.c
    }
    pub fn m(&self) -> &[SymMatrix] {
        &self.m
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn r0(&self) -> Option<&SymMatrix> {
        self.r0.as_ref()
    }
    pub fn r(&self) -> &[SymMatrix] {
        &self.r
    }
    pub fn h0(&self) -> &DVector<f64> {
        &self.h0
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn h_col(&self, i: usize) -> DVector<f64> {
        self.h.column(i).into_owned()
    }

    /// The packing part (`C`, `M_i`, `b`), ignoring `Y` and `λ`.
    pub fn packing_part(&self) -> Result<PackingProblem> {
        PackingProblem::from_parts(self.c.clone(), self.m.clone(), self.b.clone())
    }

    /// Embeds a packing problem as a combined problem with no `Y` and no `λ`.
    pub fn from_packing(p: &PackingProblem) -> Self {
        CombinedProblem {
            c: p.c().clone(),
            m: p.constraints().iter().map(|k| k.m.clone()).collect(),
            b: p.b(),
            r0: None,
            r: Vec::new(),
            h0: DVector::zeros(0),
            h: DMatrix::zeros(0, p.l()),
        }
    }

    pub fn objective(&self, x: &SymMatrix, y: Option<&SymMatrix>, lambda: &DVector<f64>) -> f64 {
        let mut v = self.c.dot(x) + self.h0.dot(lambda);
        if let (Some(r0), Some(y)) = (&self.r0, y) {
            v += r0.dot(y);
        }
        v
    }

    /// Largest constraint violation `max_i ⟨M_i,X⟩ − b_i − ⟨R_i,Y⟩ − h_iᵀλ`.
    pub fn max_violation(&self, x: &SymMatrix, y: Option<&SymMatrix>, lambda: &DVector<f64>) -> f64 {
        (0..self.l())
            .map(|i| {
                let mut rhs = self.b[i] + self.h.column(i).dot(lambda);
                if let Some(y) = y {
                    rhs += self.r[i].dot(y);
                }
                self.m[i].dot(x) - rhs
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "c")]
    COptimal,
    #[serde(rename = "a")]
    AOptimal,
    #[serde(rename = "e")]
    EOptimal,
}

/// Linear resource constraints `P w ≤ d` on the design.
#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    /// `q × l`, nonnegative.
    pub p: DMatrix<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Observation matrix, when given.
    pub a: Option<DMatrix<f64>>,
    /// Information matrix `AᵀA`.
    pub m: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    experiments: Vec<Experiment>,
    /// `n × r`, columns `c_1..c_r`.
    k: DMatrix<f64>,
    criterion: Criterion,
    resource: Option<Resource>,
}

impl DesignProblem {
    pub fn new(experiments: Vec<Experiment>, k: DMatrix<f64>, criterion: Criterion, resource: Option<Resource>) -> Result<Self> {
        if experiments.is_empty() {
            return Err(validation("at least one experiment is required", Witness::Index { field: "M".into(), index: 0 }));
        }
        let n = experiments[0].m.n();
        for (i, e) in experiments.iter().enumerate() {
            if e.m.n() != n {
                return Err(validation("information matrices differ in dimension", Witness::Dimensions { field: format!("M[{i}]"), expected: n, found: e.m.n() }));
            }
            require_psd(&e.m, &format!("M[{i}]"))?;
            if let Some(a) = &e.a {
                if a.ncols() != n {
                    return Err(validation("observation matrix has wrong column count", Witness::Dimensions { field: format!("A[{i}]"), expected: n, found: a.ncols() }));
                }
                let res = (a.transpose() * a - e.m.as_matrix()).norm();
                if res > 1e-8 {
                    return Err(validation("A_iᵀA_i differs from M_i", Witness::Residual { field: format!("A[{i}]"), value: res }));
                }
            }
        }
        if k.nrows() != n {
            return Err(validation("K must have n rows", Witness::Dimensions { field: "K".into(), expected: n, found: k.nrows() }));
        }
        if k.ncols() == 0 {
            return Err(validation("K must have at least one column", Witness::Dimensions { field: "K".into(), expected: 1, found: 0 }));
        }
        if criterion == Criterion::COptimal && k.ncols() != 1 {
            return Err(validation("c-optimal design needs a single column in K", Witness::Dimensions { field: "K".into(), expected: 1, found: k.ncols() }));
        }
        if let Some(res) = &resource {
            if res.p.ncols() != experiments.len() || res.p.nrows() != res.d.len() {
                return Err(validation("P must be q x l with q = len(d)", Witness::Dimensions { field: "resource.P".into(), expected: experiments.len(), found: res.p.ncols() }));
            }
            if let Some(idx) = res.p.iter().position(|&v| v < 0.0 || !v.is_finite()) {
                return Err(validation("resource matrix P must be nonnegative", Witness::Index { field: "resource.P".into(), index: idx }));
            }
        }
        Ok(DesignProblem { experiments, k, criterion, resource })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
    pub fn l(&self) -> usize {
        self.experiments.len()
    }
    pub fn r(&self) -> usize {
        self.k.ncols()
    }
    pub fn experiments(&self) -> &[Experiment] {
        &self.experiments
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn criterion(&self) -> Criterion {
        self.criterion
    }
    pub fn resource(&self) -> Option<&Resource> {
        self.resource.as_ref()
    }

    /// Observation matrix of experiment `i`, factoring `M_i` when `A_i` is
    /// not stored.
    pub fn observation(&self, i: usize) -> Result<DMatrix<f64>> {
        match &self.experiments[i].a {
            Some(a) => Ok(a.clone()),
            None => linalg::psd_factor(&self.experiments[i].m, None),
        }
    }

    /// `Σ w_i M_i`.
    pub fn information(&self, w: &[f64]) -> SymMatrix {
        let mut acc = SymMatrix::zeros(self.n());
        for (e, &wi) in self.experiments.iter().zip(w) {
            acc = acc.add(&e.m.scale(wi));
        }
        acc
    }
}

fn validation(message: &str, witness: Witness) -> Error {
    Error::Validation { message: message.into(), witness }
}

fn require_psd(m: &SymMatrix, name: &str) -> Result<()> {
    let chk = linalg::is_psd(m, None)?;
    if !chk.psd {
        return Err(validation(
            &format!("{name} is not positive semidefinite"),
            Witness::Eigenvalue { matrix: name.into(), value: chk.min_eigenvalue },
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Unbounded,
    Infeasible,
    /// Supremum approached along a diverging sequence and not attained.
    AsymptoticSup,
    /// Cone solver: iterates diverged while the gap closed.
    NearUnattained,
    /// Result from a heuristic backend that could not be certified.
    NonCertified,
}

/// Max-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    #[serde(rename = "X")]
    pub x: SymMatrix,
    pub objective: Option<f64>,
    pub numerical_rank: usize,
    pub mu: Vec<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt_residuals: Option<KktResiduals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedSolution {
    #[serde(rename = "X")]
    pub x: SymMatrix,
    #[serde(rename = "Y", default, skip_serializing_if = "Option::is_none")]
    pub y: Option<SymMatrix>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    /// Values `γ_k` along the trace-capped path, when one was run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path_ranks: Vec<usize>,
}

/// Any document accepted by [`parse_problem`].
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Packing(PackingProblem),
    Combined(CombinedProblem),
    Design(DesignProblem),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPacking {
    #[serde(rename = "C")]
    c: SymMatrix,
    constraints: Vec<Constraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCombined {
    #[serde(rename = "C")]
    c: SymMatrix,
    constraints: Vec<Constraint>,
    #[serde(rename = "R0", default)]
    r0: Option<SymMatrix>,
    #[serde(rename = "R", default)]
    r: Vec<SymMatrix>,
    #[serde(default)]
    h0: Vec<f64>,
    #[serde(default)]
    h: Vec<Vec<f64>>,
    #[serde(rename = "H", default)]
    h_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    d: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    #[serde(rename = "A", default)]
    a: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "M", default)]
    m: Option<Vec<SymMatrix>>,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    criterion: Criterion,
    #[serde(default)]
    resource: Option<RawResource>,
}

fn dense(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != nc) {
        return Err(validation("ragged matrix", Witness::Dimensions { field: format!("{field}[{i}]"), expected: nc, found: r.len() }));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn schema<E: std::fmt::Display>(e: E) -> Error {
    let msg = e.to_string();
    // Validation failures raised inside SymMatrix deserialization surface
    // through serde as plain strings.
    Error::Schema(msg)
}

/// Parses and validates a problem document.
pub fn parse_problem(text: &str) -> Result<Problem> {
    let value: Value = serde_json::from_str(text).map_err(schema)?;
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema("missing string field \"kind\"".into()))?
        .to_owned();
    let mut body = value;
    if let Some(obj) = body.as_object_mut() {
        obj.remove("kind");
    }
    match kind.as_str() {
        "packing" => {
            let raw: RawPacking = serde_json::from_value(body).map_err(schema)?;
            Ok(Problem::Packing(PackingProblem::new(raw.c, raw.constraints)?))
        }
        "combined" => {
            let raw: RawCombined = serde_json::from_value(body).map_err(schema)?;
            let l = raw.constraints.len();
            let q = raw.h0.len();
            if raw.h.len() != l && !(q == 0 && raw.h.is_empty()) {
                return Err(validation("one h_i per constraint is required", Witness::Dimensions { field: "h".into(), expected: l, found: raw.h.len() }));
            }
            let mut h = DMatrix::zeros(q, l);
            for (i, hi) in raw.h.iter().enumerate() {
                if hi.len() != q {
                    return Err(validation("h_i length differs from h0", Witness::Dimensions { field: format!("h[{i}]"), expected: q, found: hi.len() }));
                }
                for (k, &v) in hi.iter().enumerate() {
                    h[(k, i)] = v;
                }
            }
            if let Some(hm) = &raw.h_matrix {
                let hm = dense(hm, "H")?;
                if hm.shape() != h.shape() {
                    return Err(validation("H shape differs from the h_i", Witness::Dimensions { field: "H".into(), expected: q * l, found: hm.len() }));
                }
                if let Some(idx) = hm.iter().zip(h.iter()).position(|(a, b)| a != b) {
                    return Err(validation("H column differs from h_i", Witness::Index { field: "H".into(), index: idx }));
                }
            }
            let (ms, bs): (Vec<_>, Vec<_>) = raw.constraints.into_iter().map(|k| (k.m, k.b)).unzip();
            Ok(Problem::Combined(CombinedProblem::new(raw.c, ms, bs, raw.r0, raw.r, DVector::from_vec(raw.h0), h)?))
        }
        "design" => {
            let raw: RawDesign = serde_json::from_value(body).map_err(schema)?;
            let experiments = match (raw.a, raw.m) {
                (None, None) => return Err(Error::Schema("design needs \"A\" or \"M\"".into())),
                (Some(a), m) => {
                    if let Some(m) = &m {
                        if m.len() != a.len() {
                            return Err(validation("A and M differ in length", Witness::Dimensions { field: "M".into(), expected: a.len(), found: m.len() }));
                        }
                    }
                    let mut out = Vec::with_capacity(a.len());
                    for (i, ai) in a.iter().enumerate() {
                        let am = dense(ai, &format!("A[{i}]"))?;
                        let mm = match &m {
                            Some(m) => m[i].clone(),
                            None => SymMatrix::new(am.transpose() * &am)?,
                        };
                        out.push(Experiment { a: Some(am), m: mm });
                    }
                    out
                }
                (None, Some(m)) => m.into_iter().map(|m| Experiment { a: None, m }).collect(),
            };
            let k = dense(&raw.k, "K")?;
            let resource = match raw.resource {
                Some(r) => Some(Resource { p: dense(&r.p, "resource.P")?, d: DVector::from_vec(r.d) }),
                None => None,
            };
            Ok(Problem::Design(DesignProblem::new(experiments, k, raw.criterion, resource)?))
        }
        other => Err(Error::Schema(format!("unknown kind \"{other}\""))),
    }
}

fn with_kind(kind: &str, v: Value) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), Value::String(kind.into()));
    if let Value::Object(m) = v {
        obj.extend(m);
    }
    Value::Object(obj)
}

pub fn problem_to_json(p: &Problem) -> Value {
    match p {
        Problem::Packing(p) => with_kind("packing", serde_json::json!({ "C": p.c, "constraints": p.constraints })),
        Problem::Combined(p) => {
            let constraints: Vec<Constraint> = p.m.iter().zip(&p.b).map(|(m, &b)| Constraint { m: m.clone(), b }).collect();
            let h: Vec<Vec<f64>> = (0..p.l()).map(|i| p.h.column(i).iter().copied().collect()).collect();
            let mut v = serde_json::json!({
                "C": p.c,
                "constraints": constraints,
                "h0": p.h0.as_slice(),
                "h": h,
            });
            if let Some(r0) = &p.r0 {
                v["R0"] = serde_json::to_value(r0).expect("matrix serializes");
                v["R"] = serde_json::to_value(&p.r).expect("matrix serializes");
            }
            with_kind("combined", v)
        }
        Problem::Design(d) => {
            let mut v = serde_json::json!({
                "K": to_rows(&d.k),
                "criterion": d.criterion,
                "M": d.experiments.iter().map(|e| e.m.clone()).collect::<Vec<_>>(),
            });
            if d.experiments.iter().all(|e| e.a.is_some()) {
                v["A"] = serde_json::to_value(d.experiments.iter().map(|e| to_rows(e.a.as_ref().expect("checked"))).collect::<Vec<_>>()).expect("serializes");
            }
            if let Some(r) = &d.resource {
                v["resource"] = serde_json::json!({ "P": to_rows(&r.p), "d": r.d.as_slice() });
            }
            with_kind("design", v)
        }
    }
}

pub fn serialize_problem(p: &Problem) -> String {
    serde_json::to_string_pretty(&problem_to_json(p)).expect("problem serializes")
}

pub fn serialize_solution(s: &Solution) -> String {
    let v = with_kind("solution", serde_json::to_value(s).expect("solution serializes"));
    serde_json::to_string_pretty(&v).expect("solution serializes")
}

pub fn parse_solution(text: &str) -> Result<Solution> {
    let mut value: Value = serde_json::from_str(text).map_err(schema)?;
    match value.get("kind").and_then(Value::as_str) {
        Some("solution") | None => {}
        Some(other) => return Err(Error::Schema(format!("expected a solution document, found kind \"{other}\""))),
    }
    if let Some(obj) = value.as_object_mut() {
        obj.remove("kind");
    }
    serde_json::from_value(value).map_err(schema)
}
