//! Dense primal-dual interior-point method for symmetric cone programs.
//!
//! Problem form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  Gx + s = h,  Ax = b,  s ∈ K
//! ```
//!
//! with dual `maximize −hᵀz − bᵀy  s.t.  Gᵀz + Aᵀy + c = 0, z ∈ K`, where `K` is
//! a product of a nonnegative orthant, second-order cones and PSD cones. PSD
//! blocks are stored as `svec` (lower triangle, column-major, off-diagonal
//! entries scaled by √2) so that the Euclidean inner product on the vector
//! matches the trace inner product on matrices.
//!
//! The iteration works on the homogeneous self-dual embedding (τ, κ) with
//! Nesterov–Todd scaling `W z = W⁻ᵀ s = λ` and Mehrotra predictor-corrector
//! steps. Each Newton system is reduced to `[GᵀW⁻¹W⁻ᵀG  Aᵀ; A  0]` and solved
//! by dense LU with iterative refinement.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Cone product layout. Slack vectors are ordered orthant, then second-order
/// cones, then PSD blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConeSpec {
    pub nonneg: usize,
    pub soc: Vec<usize>,
    pub psd: Vec<usize>,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>() + self.psd.iter().map(|&k| svec_len(k)).sum::<usize>()
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len() + self.psd.iter().sum::<usize>()
    }

    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut off = 0;
        if self.nonneg > 0 {
            out.push(Block { kind: BlockKind::Nonneg, offset: off, len: self.nonneg });
            off += self.nonneg;
        }
        for &k in &self.soc {
            out.push(Block { kind: BlockKind::Soc, offset: off, len: k });
            off += k;
        }
        for &k in &self.psd {
            let len = svec_len(k);
            out.push(Block { kind: BlockKind::Psd(k), offset: off, len });
            off += len;
        }
        out
    }
}

pub fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Symmetric matrix to `svec` (lower triangle, column-major, √2 off-diagonal).
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows();
    let mut v = DVector::zeros(svec_len(k));
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            v[idx] = if i == j { m[(i, j)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            idx += 1;
        }
    }
    v
}

pub fn smat(v: &[f64], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            if i == j {
                m[(i, j)] = v[idx];
            } else {
                m[(i, j)] = v[idx] / SQRT2;
                m[(j, i)] = v[idx] / SQRT2;
            }
            idx += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockKind {
    Nonneg,
    Soc,
    Psd(usize),
}

#[derive(Debug, Clone, Copy)]
struct Block {
    kind: BlockKind,
    offset: usize,
    len: usize,
}

/// Conic program data. `a` may have zero rows.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cones: ConeSpec,
}

impl ConicProblem {
    pub fn new(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>, cones: ConeSpec) -> Self {
        let n = c.len();
        ConicProblem { c, g, h, a: DMatrix::zeros(0, n), b: DVector::zeros(0), cones }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    fn check(&self) -> Result<(), String> {
        let n = self.c.len();
        let m = self.cones.dim();
        if self.g.ncols() != n || self.g.nrows() != m || self.h.len() != m {
            return Err(format!(
                "inconsistent cone data: G is {}x{}, h has {}, cones need {m}, x has {n}",
                self.g.nrows(),
                self.g.ncols(),
                self.h.len()
            ));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err("inconsistent equality data".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConicSettings {
    pub max_iter: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
}

impl Default for ConicSettings {
    fn default() -> Self {
        ConicSettings { max_iter: 200, feastol: 1e-9, abstol: 1e-9, reltol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    /// Stalled close to optimality; residuals within 1e3 times the targets.
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    /// For `Optimal` these are the solution; for infeasibility statuses they
    /// hold the certificate (unnormalized); otherwise the last iterate.
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub pcost: f64,
    pub dcost: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub iterations: usize,
    pub tau: f64,
    pub kappa: f64,
}

/// Per-block Nesterov–Todd scaling.
#[derive(Debug, Clone)]
enum Scaling {
    Nonneg(DVector<f64>),
    Soc { beta: f64, w: DVector<f64> },
    Psd { r: DMatrix<f64>, rinv: DMatrix<f64> },
}

fn soc_det(u: &[f64]) -> f64 {
    let t: f64 = u[1..].iter().map(|v| v * v).sum();
    u[0] * u[0] - t
}

fn jmul(u: &[f64], v: &[f64]) -> f64 {
    u[0] * v[0] - u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>()
}

impl Scaling {
    /// Computes the scaling of one block and writes the scaled point `λ`.
    fn compute(kind: BlockKind, s: &[f64], z: &[f64], lambda: &mut [f64]) -> Option<Scaling> {
        match kind {
            BlockKind::Nonneg => {
                let mut w = DVector::zeros(s.len());
                for i in 0..s.len() {
                    if !(s[i] > 0.0 && z[i] > 0.0) {
                        return None;
                    }
                    w[i] = (s[i] / z[i]).sqrt();
                    lambda[i] = (s[i] * z[i]).sqrt();
                }
                Some(Scaling::Nonneg(w))
            }
            BlockKind::Soc => {
                let sd = soc_det(s);
                let zd = soc_det(z);
                if !(sd > 0.0 && zd > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                    return None;
                }
                let aa = sd.sqrt();
                let bb = zd.sqrt();
                let beta = (aa / bb).sqrt();
                let sn: Vec<f64> = s.iter().map(|v| v / aa).collect();
                let zn: Vec<f64> = z.iter().map(|v| v / bb).collect();
                let dot: f64 = sn.iter().zip(&zn).map(|(a, b)| a * b).sum();
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                // w̄ = (s̄ + J z̄)/(2γ); W = β(2vvᵀ − J) with v = (w̄ + e)/√(2(w̄₀ + 1)).
                let mut w = DVector::zeros(s.len());
                w[0] = (sn[0] + zn[0]) / (2.0 * gamma);
                for i in 1..s.len() {
                    w[i] = (sn[i] - zn[i]) / (2.0 * gamma);
                }
                let f = 1.0 / (2.0 * (w[0] + 1.0)).sqrt();
                w[0] += 1.0;
                w *= f;
                let sc = Scaling::Soc { beta, w };
                let zv = DVector::from_column_slice(z);
                let l = sc.apply(&zv, Op::W);
                lambda.copy_from_slice(l.as_slice());
                Some(sc)
            }
            BlockKind::Psd(k) => {
                let sm = smat(s, k);
                let zm = smat(z, k);
                let ls = Cholesky::new(sm)?.l();
                let lz = Cholesky::new(zm)?.l();
                let prod = lz.transpose() * &ls;
                let svd = prod.svd(true, true);
                let u = svd.u?;
                let vt = svd.v_t?;
                let sig = svd.singular_values;
                if sig.iter().any(|&v| !(v > 0.0)) {
                    return None;
                }
                let v = vt.transpose();
                let mut r = &ls * &v;
                for (j, &sv) in sig.iter().enumerate() {
                    let f = 1.0 / sv.sqrt();
                    r.column_mut(j).scale_mut(f);
                }
                // R⁻¹ = Λ^{-1/2} Uᵀ L_zᵀ, from Rᵀ Z R = Λ.
                let mut rinv = u.transpose() * lz.transpose();
                for (i, &sv) in sig.iter().enumerate() {
                    let f = 1.0 / sv.sqrt();
                    rinv.row_mut(i).scale_mut(f);
                }
                let mut lm = DMatrix::zeros(k, k);
                for i in 0..k {
                    lm[(i, i)] = sig[i];
                }
                lambda.copy_from_slice(svec(&lm).as_slice());
                Some(Scaling::Psd { r, rinv })
            }
        }
    }

    fn apply(&self, v: &DVector<f64>, op: Op) -> DVector<f64> {
        match self {
            Scaling::Nonneg(w) => match op {
                Op::W | Op::Wt => v.component_mul(w),
                Op::Winv | Op::Wit => v.component_div(w),
            },
            Scaling::Soc { beta, w } => {
                // W = β(2wwᵀ − J), W⁻¹ = β⁻¹(2Jw wᵀJ − J); both symmetric.
                let mut jv = v.clone();
                for i in 1..jv.len() {
                    jv[i] = -jv[i];
                }
                match op {
                    Op::W | Op::Wt => {
                        let d = w.dot(v);
                        let mut out = w * (2.0 * d) - jv;
                        out *= *beta;
                        out
                    }
                    Op::Winv | Op::Wit => {
                        let mut jw = w.clone();
                        for i in 1..jw.len() {
                            jw[i] = -jw[i];
                        }
                        let d = jw.dot(v);
                        let mut out = jw * (2.0 * d) - jv;
                        out /= *beta;
                        out
                    }
                }
            }
            Scaling::Psd { r, rinv } => {
                let k = r.nrows();
                let t = smat(v.as_slice(), k);
                let m = match op {
                    Op::W => r.transpose() * t * r,
                    Op::Wt => r * t * r.transpose(),
                    Op::Winv => rinv.transpose() * t * rinv,
                    Op::Wit => rinv * t * rinv.transpose(),
                };
                svec(&m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    W,
    Wt,
    Winv,
    /// W⁻ᵀ
    Wit,
}

struct Cone {
    blocks: Vec<Block>,
    degree: usize,
    dim: usize,
}

impl Cone {
    fn new(spec: &ConeSpec) -> Self {
        Cone { blocks: spec.blocks(), degree: spec.degree(), dim: spec.dim() }
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Nonneg => e.rows_mut(b.offset, b.len).fill(1.0),
                BlockKind::Soc => e[b.offset] = 1.0,
                BlockKind::Psd(k) => {
                    let mut idx = b.offset;
                    for j in 0..k {
                        e[idx] = 1.0;
                        idx += k - j;
                    }
                }
            }
        }
        e
    }

    fn scaling(&self, s: &DVector<f64>, z: &DVector<f64>) -> Option<(Vec<Scaling>, DVector<f64>)> {
        let mut lambda = DVector::zeros(self.dim);
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let r = b.offset..b.offset + b.len;
            let sc = Scaling::compute(
                b.kind,
                &s.as_slice()[r.clone()],
                &z.as_slice()[r.clone()],
                &mut lambda.as_mut_slice()[r],
            )?;
            out.push(sc);
        }
        Some((out, lambda))
    }

    fn apply(&self, sc: &[Scaling], v: &DVector<f64>, op: Op) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (b, s) in self.blocks.iter().zip(sc) {
            let part = DVector::from_column_slice(&v.as_slice()[b.offset..b.offset + b.len]);
            out.rows_mut(b.offset, b.len).copy_from(&s.apply(&part, op));
        }
        out
    }

    /// Jordan product `u ∘ v`.
    fn product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for b in &self.blocks {
            let us = &u.as_slice()[b.offset..b.offset + b.len];
            let vs = &v.as_slice()[b.offset..b.offset + b.len];
            let os = &mut out.as_mut_slice()[b.offset..b.offset + b.len];
            match b.kind {
                BlockKind::Nonneg => {
                    for i in 0..b.len {
                        os[i] = us[i] * vs[i];
                    }
                }
                BlockKind::Soc => {
                    os[0] = us.iter().zip(vs).map(|(a, c)| a * c).sum();
                    for i in 1..b.len {
                        os[i] = us[0] * vs[i] + vs[0] * us[i];
                    }
                }
                BlockKind::Psd(k) => {
                    let um = smat(us, k);
                    let vm = smat(vs, k);
                    let p = (&um * &vm + &vm * &um) * 0.5;
                    os.copy_from_slice(svec(&p).as_slice());
                }
            }
        }
        out
    }

    /// Solves `λ ∘ w = v` for `w`, with `λ` the scaled point (diagonal on
    /// PSD blocks).
    fn divide(&self, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for b in &self.blocks {
            let ls = &lambda.as_slice()[b.offset..b.offset + b.len];
            let vs = &v.as_slice()[b.offset..b.offset + b.len];
            let os = &mut out.as_mut_slice()[b.offset..b.offset + b.len];
            match b.kind {
                BlockKind::Nonneg => {
                    for i in 0..b.len {
                        os[i] = vs[i] / ls[i];
                    }
                }
                BlockKind::Soc => {
                    let det = soc_det(ls);
                    let w0 = (ls[0] * vs[0] - ls[1..].iter().zip(&vs[1..]).map(|(a, c)| a * c).sum::<f64>()) / det;
                    os[0] = w0;
                    for i in 1..b.len {
                        os[i] = (vs[i] - w0 * ls[i]) / ls[0];
                    }
                }
                BlockKind::Psd(k) => {
                    let lm = smat(ls, k);
                    let vm = smat(vs, k);
                    let mut w = DMatrix::zeros(k, k);
                    for i in 0..k {
                        for j in 0..k {
                            w[(i, j)] = 2.0 * vm[(i, j)] / (lm[(i, i)] + lm[(j, j)]);
                        }
                    }
                    os.copy_from_slice(svec(&w).as_slice());
                }
            }
        }
        out
    }

    /// Largest `α ≤ cap` with `u + α du` in the cone (`u` interior).
    fn max_step(&self, u: &DVector<f64>, du: &DVector<f64>, cap: f64) -> f64 {
        let mut alpha = cap;
        for b in &self.blocks {
            let us = &u.as_slice()[b.offset..b.offset + b.len];
            let ds = &du.as_slice()[b.offset..b.offset + b.len];
            let a = match b.kind {
                BlockKind::Nonneg => us
                    .iter()
                    .zip(ds)
                    .filter(|(_, d)| **d < 0.0)
                    .map(|(x, d)| -x / d)
                    .fold(f64::INFINITY, f64::min),
                BlockKind::Soc => soc_step(us, ds),
                BlockKind::Psd(k) => psd_step(&smat(us, k), &smat(ds, k)),
            };
            alpha = alpha.min(a);
        }
        alpha
    }
}

fn soc_step(u: &[f64], d: &[f64]) -> f64 {
    // (u0 + a d0)² − ‖u1 + a d1‖² ≥ 0 and u0 + a d0 ≥ 0.
    let qa = jmul(d, d);
    let qb = 2.0 * jmul(u, d);
    let qc = jmul(u, u);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -u[0] / d[0];
    }
    let roots = if qa.abs() < 1e-300 {
        if qb < 0.0 {
            vec![-qc / qb]
        } else {
            vec![]
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            vec![]
        } else {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            let mut r = Vec::new();
            if q != 0.0 {
                r.push(q / qa);
                r.push(qc / q);
            }
            r
        }
    };
    for r in roots {
        if r > 0.0 {
            alpha = alpha.min(r);
        }
    }
    alpha
}

fn psd_step(u: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let Some(ch) = Cholesky::new(u.clone()) else {
        return 0.0;
    };
    let l = ch.l();
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let mut m = &linv * d * linv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let ev = SymmetricEigen::new(m).eigenvalues;
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

/// Augmented form `[I Gs 0; Gsᵀ 0 −Aᵀ; 0 A 0]`, which avoids squaring the
/// conditioning of the scaled `G`.
struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    mat: DMatrix<f64>,
    gs: DMatrix<f64>,
    nx: usize,
}

impl Kkt {
    fn new(a: &DMatrix<f64>, gs: DMatrix<f64>) -> Option<Kkt> {
        let (m, nx) = gs.shape();
        let p = a.nrows();
        let dim = m + nx + p;
        let mut mat = DMatrix::zeros(dim, dim);
        mat.view_mut((0, 0), (m, m)).fill_with_identity();
        mat.view_mut((0, m), (m, nx)).copy_from(&gs);
        mat.view_mut((m, 0), (nx, m)).copy_from(&gs.transpose());
        if p > 0 {
            mat.view_mut((m, m + nx), (nx, p)).copy_from(&-a.transpose());
            mat.view_mut((m + nx, m), (p, nx)).copy_from(a);
        }
        let scale = gs.amax().max(1.0);
        let mut reg = mat.clone();
        for i in m..m + nx {
            reg[(i, i)] -= 1e-14 * scale;
        }
        for i in m + nx..dim {
            reg[(i, i)] += 1e-14 * scale;
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Kkt { lu, mat, gs, nx })
    }

    /// Solves `GsᵀGs dx + Aᵀ dy = r1 + Gsᵀ t`, `A dx = r2` and returns
    /// `(dx, dy, Gs dx − t)`.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>, t: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let m = self.gs.nrows();
        let p = r2.len();
        let mut rhs = DVector::zeros(m + self.nx + p);
        rhs.rows_mut(0, m).copy_from(t);
        rhs.rows_mut(m, self.nx).copy_from(&-r1);
        rhs.rows_mut(m + self.nx, p).copy_from(r2);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..3 {
            let res = &rhs - &self.mat * &sol;
            sol += self.lu.solve(&res)?;
        }
        let w = sol.rows(0, m).into_owned();
        let dx = sol.rows(m, self.nx).into_owned();
        let dy = sol.rows(m + self.nx, p).into_owned();
        Some((dx, dy, -w))
    }
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
    /// W dz
    wdz: DVector<f64>,
    /// W⁻ᵀ ds
    wds: DVector<f64>,
}

/// Residual level accepted for an `AlmostOptimal` result.
pub const INACCURATE_FEASTOL: f64 = 1e-6;

/// Solves a conic program.
pub fn solve(prob: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution, String> {
    prob.check()?;
    let cone = Cone::new(&prob.cones);
    let nx = prob.c.len();
    let ny = prob.b.len();
    let e = cone.identity();

    let mut x = DVector::zeros(nx);
    let mut y = DVector::zeros(ny);
    let mut s = e.clone();
    let mut z = e.clone();
    let mut tau = 1.0_f64;
    let mut kappa = 1.0_f64;

    let resx0 = prob.c.norm().max(1.0);
    let resy0 = prob.b.norm().max(1.0);
    let resz0 = prob.h.norm().max(1.0);
    let nu = cone.degree as f64;

    let mut best: Option<ConicSolution> = None;
    let mut last_info;

    for iter in 0..=settings.max_iter {
        let rx = prob.a.tr_mul(&y) + prob.g.tr_mul(&z) + &prob.c * tau;
        let ry = -(&prob.a * &x) + &prob.b * tau;
        let rz = &s + &prob.g * &x - &prob.h * tau;
        let cx = prob.c.dot(&x);
        let by = prob.b.dot(&y);
        let hz = prob.h.dot(&z);
        let rt = kappa + cx + by + hz;
        let sz = s.dot(&z);
        let mu = (sz + tau * kappa) / (nu + 1.0);

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = sz / (tau * tau);
        // Residuals relative to the size of the terms that should cancel.
        let ax = (&prob.a * &x).norm() / tau;
        let gx = (&prob.g * &x).norm() / tau;
        let aty = prob.a.tr_mul(&y).norm() / tau;
        let gtz = prob.g.tr_mul(&z).norm() / tau;
        let pres = (ry.norm() / tau / resy0.max(ax)).max(rz.norm() / tau / resz0.max(gx).max(s.norm() / tau));
        let dres = rx.norm() / tau / resx0.max(aty).max(gtz);
        let relgap = gap / pcost.abs().max(dcost.abs()).max(1.0);

        let snapshot = |status| ConicSolution {
            status,
            x: &x / tau,
            y: &y / tau,
            s: &s / tau,
            z: &z / tau,
            pcost,
            dcost,
            gap,
            pres,
            dres,
            iterations: iter,
            tau,
            kappa,
        };

        if pres <= settings.feastol && dres <= settings.feastol && (gap <= settings.abstol || relgap <= settings.reltol) {
            return Ok(snapshot(ConicStatus::Optimal));
        }

        // Infeasibility certificates.
        let dual_obj = -(hz + by);
        if dual_obj > 0.0 {
            let res = (prob.a.tr_mul(&y) + prob.g.tr_mul(&z)).norm() / resx0;
            if res / dual_obj <= settings.feastol {
                let scale = 1.0 / dual_obj;
                return Ok(ConicSolution {
                    status: ConicStatus::PrimalInfeasible,
                    x: DVector::zeros(nx),
                    y: &y * scale,
                    s: DVector::zeros(cone.dim),
                    z: &z * scale,
                    pcost: f64::NAN,
                    dcost: f64::NAN,
                    gap: f64::NAN,
                    pres,
                    dres,
                    iterations: iter,
                    tau,
                    kappa,
                });
            }
        }
        if cx < 0.0 {
            let res = ((&prob.a * &x).norm() / resy0).max((&prob.g * &x + &s).norm() / resz0);
            if res / (-cx) <= settings.feastol {
                let scale = 1.0 / (-cx);
                return Ok(ConicSolution {
                    status: ConicStatus::DualInfeasible,
                    x: &x * scale,
                    y: DVector::zeros(ny),
                    s: &s * scale,
                    z: DVector::zeros(cone.dim),
                    pcost: f64::NAN,
                    dcost: f64::NAN,
                    gap: f64::NAN,
                    pres,
                    dres,
                    iterations: iter,
                    tau,
                    kappa,
                });
            }
        }

        // Reduced accuracy: feasibility to a fixed floor, gap to a thousand
        // times the request.
        let loose = (1e3 * settings.feastol).max(INACCURATE_FEASTOL);
        let near = pres <= loose
            && dres <= loose
            && (gap <= 1e3 * settings.abstol || relgap <= 1e3 * settings.reltol);
        last_info = snapshot(if near { ConicStatus::AlmostOptimal } else { ConicStatus::MaxIterations });
        let better = match &best {
            None => true,
            Some(b) => {
                let score = |p: f64, d: f64, g: f64| p.max(d).max(g.abs().min(1e300));
                score(pres, dres, relgap) < score(b.pres, b.dres, b.gap / b.pcost.abs().max(b.dcost.abs()).max(1.0))
            }
        };
        if better {
            best = Some(last_info.clone());
        }

        if iter == settings.max_iter {
            break;
        }

        let Some((sc, lambda)) = cone.scaling(&s, &z) else {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        };

        // Scaled G: W⁻ᵀ G.
        let mut gs = DMatrix::zeros(cone.dim, nx);
        for j in 0..nx {
            let col = prob.g.column(j).into_owned();
            gs.set_column(j, &cone.apply(&sc, &col, Op::Wit));
        }
        let Some(kkt) = Kkt::new(&prob.a, gs) else {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        };

        let solve_k = |r1: &DVector<f64>, r2: &DVector<f64>, wit_r3: &DVector<f64>| kkt.solve(r1, r2, wit_r3);

        // Direction for the τ coefficient: K [x1; y1; z1] = [−c; b; h].
        let wit_h = cone.apply(&sc, &prob.h, Op::Wit);
        let Some((x1, y1, wz1)) = solve_k(&-&prob.c, &prob.b, &wit_h) else {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        };
        let z1 = cone.apply(&sc, &wz1, Op::Winv);
        let denom1 = prob.c.dot(&x1) + prob.b.dot(&y1) + prob.h.dot(&z1) - kappa / tau;

        let direction = |dxr: &DVector<f64>, dyr: &DVector<f64>, dzr: &DVector<f64>, dsr: &DVector<f64>, dtr: f64, dkr: f64| -> Option<Direction> {
            let ld = cone.divide(&lambda, dsr);
            let wit_r3 = -cone.apply(&sc, dzr, Op::Wit) + &ld;
            let (x2, y2, wz2) = solve_k(&-dxr, dyr, &wit_r3)?;
            let z2 = cone.apply(&sc, &wz2, Op::Winv);
            let num = -dtr + dkr / tau - (prob.c.dot(&x2) + prob.b.dot(&y2) + prob.h.dot(&z2));
            let dtau = num / denom1;
            if !dtau.is_finite() {
                return None;
            }
            let dx = &x2 + &x1 * dtau;
            let dy = &y2 + &y1 * dtau;
            let wdz = &wz2 + &wz1 * dtau;
            let dz = &z2 + &z1 * dtau;
            let wds = -&ld - &wdz;
            let ds = cone.apply(&sc, &wds, Op::Wt);
            let dkappa = (-dkr - kappa * dtau) / tau;
            Some(Direction { dx, dy, dz, ds, dtau, dkappa, wdz, wds })
        };

        let step_len = |d: &Direction| -> f64 {
            let mut a = cone.max_step(&s, &d.ds, 1.0 / 0.99 * 1.0e6);
            a = a.min(cone.max_step(&z, &d.dz, a));
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        // Predictor.
        let ll = cone.product(&lambda, &lambda);
        let Some(aff) = direction(&rx, &ry, &rz, &ll, rt, kappa * tau) else {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        };
        let alpha_aff = step_len(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let corr = cone.product(&aff.wds, &aff.wdz);
        let dsr = &ll + &corr - &e * (sigma * mu);
        let dkr = kappa * tau + aff.dkappa * aff.dtau - sigma * mu;
        let f = 1.0 - sigma;
        let Some(dir) = direction(&(&rx * f), &(&ry * f), &(&rz * f), &dsr, rt * f, dkr) else {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        };
        let alpha = (0.99 * step_len(&dir)).min(1.0);
        if !(alpha > 1e-12) || !alpha.is_finite() {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        }

        x += &dir.dx * alpha;
        y += &dir.dy * alpha;
        z += &dir.dz * alpha;
        s += &dir.ds * alpha;
        tau += dir.dtau * alpha;
        kappa += dir.dkappa * alpha;

        if !(tau > 0.0 && kappa > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Ok(fail(best, ConicStatus::NumericalFailure));
        }
    }
    Ok(fail(best, ConicStatus::MaxIterations))
}

fn fail(best: Option<ConicSolution>, status: ConicStatus) -> ConicSolution {
    let mut b = best.expect("at least one iterate recorded");
    b.status = if b.status == ConicStatus::AlmostOptimal { ConicStatus::AlmostOptimal } else { status };
    b
}
