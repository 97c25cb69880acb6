//! Dense symmetric-matrix kernel.
//!
//! Everything the rest of the crate needs from linear algebra goes through
//! [`SymMatrix`]: eigendecompositions sorted in descending order, numerical
//! rank, orthonormal bases for the range and kernel, PSD factorizations and
//! the Moore–Penrose pseudoinverse. The eigensolver itself is nalgebra's
//! symmetric QR iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold used when no tolerance is given.
pub fn default_tol(n: usize) -> f64 {
    n.max(1) as f64 * 1e-12
}

/// Dense symmetric matrix. Symmetry is enforced at construction by averaging
/// with the transpose, so `entries[i][j] == entries[j][i]` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrize(m))
    }

    /// Like [`SymMatrix::new`] for internally produced matrices that are
    /// square and finite by construction.
    pub(crate) fn from_dense(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self::symmetrize(m)
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut s = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Validation {
                message: "matrix is not square".into(),
                witness: crate::error::Witness::Dimensions {
                    field: format!("row {i}"),
                    expected: n,
                    found: r.len(),
                },
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.0.row(i).iter().copied().collect()).collect()
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix::from_dense(v * v.transpose())
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius inner product `⟨A, B⟩ = trace(AB)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// `Bᵀ S B` for a rectangular `B` with `n` rows.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_dense(b.transpose() * &self.0 * b)
    }

    /// `B S Bᵀ` for a rectangular `B` with `n` columns.
    pub fn congruence_t(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_dense(b * &self.0 * b.transpose())
    }

    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigenvalues: DVector<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomp {
    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `Σ f(λ_k) q_k q_kᵀ` over the selected eigenpairs.
    pub fn rebuild(&self, f: impl Fn(f64) -> Option<f64>) -> SymMatrix {
        let n = self.eigenvectors.nrows();
        let mut out = DMatrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            if let Some(w) = f(lam) {
                let q = self.eigenvectors.column(k);
                out += w * q * q.transpose();
            }
        }
        SymMatrix::from_dense(out)
    }
}

/// Columns form an orthonormal set in `R^n`; `k = 0` is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    pub(crate) fn from_columns(columns: DMatrix<f64>) -> Self {
        OrthonormalBasis { columns }
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// `‖(I − QQᵀ) v‖`.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        let proj = &self.columns * (self.columns.transpose() * v);
        (v - proj).norm()
    }
}

pub fn eigh(s: &SymMatrix) -> Result<EigenDecomp> {
    if s.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let SymmetricEigen { eigenvalues, eigenvectors } = SymmetricEigen::new(s.0.clone());
    let n = eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&k| eigenvalues[k]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eigenvectors.column(src));
    }
    Ok(EigenDecomp { eigenvalues: vals, eigenvectors: vecs })
}

fn resolve_tol(s: &SymMatrix, tol: Option<f64>) -> f64 {
    tol.unwrap_or_else(|| default_tol(s.n()))
}

fn rank_of(e: &EigenDecomp, tol: f64) -> usize {
    let scale = e.max_abs();
    if scale == 0.0 {
        return 0;
    }
    e.eigenvalues.iter().filter(|v| v.abs() > tol * scale).count()
}

/// Number of eigenvalues with `|λ| > tol · max|λ|`.
pub fn rank_tol(s: &SymMatrix, tol: Option<f64>) -> Result<usize> {
    let tol = resolve_tol(s, tol);
    Ok(rank_of(&eigh(s)?, tol))
}

fn check_psd_decomp(e: &EigenDecomp, tol: f64) -> Result<()> {
    let min = e.min();
    if min < -tol * e.max_abs().max(1.0) {
        return Err(Error::NotPsd { min_eig: min });
    }
    Ok(())
}

fn split_basis(s: &SymMatrix, tol: Option<f64>) -> Result<(OrthonormalBasis, OrthonormalBasis)> {
    let tol = resolve_tol(s, tol);
    let e = eigh(s)?;
    check_psd_decomp(&e, tol)?;
    let scale = e.max_abs();
    let k = if scale == 0.0 {
        0
    } else {
        e.eigenvalues.iter().filter(|&&v| v > tol * scale).count()
    };
    let n = s.n();
    let range = e.eigenvectors.columns(0, k).into_owned();
    let null = e.eigenvectors.columns(k, n - k).into_owned();
    Ok((OrthonormalBasis::from_columns(range), OrthonormalBasis::from_columns(null)))
}

/// Orthonormal basis of the eigenspace of eigenvalues above `tol · max|λ|`.
pub fn range_basis(s: &SymMatrix, tol: Option<f64>) -> Result<OrthonormalBasis> {
    Ok(split_basis(s, tol)?.0)
}

/// Orthonormal complement of [`range_basis`].
pub fn null_basis(s: &SymMatrix, tol: Option<f64>) -> Result<OrthonormalBasis> {
    Ok(split_basis(s, tol)?.1)
}

/// Rectangular `A` with `AᵀA = M`, one row per retained eigenvalue.
pub fn psd_factor(m: &SymMatrix, tol: Option<f64>) -> Result<DMatrix<f64>> {
    let tol = resolve_tol(m, tol);
    let e = eigh(m)?;
    check_psd_decomp(&e, tol)?;
    let scale = e.max_abs();
    let keep: Vec<usize> = if scale == 0.0 {
        Vec::new()
    } else {
        (0..m.n()).filter(|&k| e.eigenvalues[k] > tol * scale).collect()
    };
    let mut a = DMatrix::zeros(keep.len(), m.n());
    for (row, &k) in keep.iter().enumerate() {
        let w = e.eigenvalues[k].max(0.0).sqrt();
        a.set_row(row, &(e.eigenvectors.column(k).transpose() * w));
    }
    Ok(a)
}

/// Moore–Penrose pseudoinverse; eigenvalues at or below `tol · max|λ|` are
/// treated as zero.
pub fn pinv(s: &SymMatrix, tol: Option<f64>) -> Result<SymMatrix> {
    let tol = resolve_tol(s, tol);
    let e = eigh(s)?;
    let cut = tol * e.max_abs();
    Ok(e.rebuild(|lam| (lam.abs() > cut && lam != 0.0).then(|| 1.0 / lam)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub psd: bool,
    pub min_eigenvalue: f64,
}

/// PSD test: `min λ ≥ −tol · max(1, max|λ|)`.
pub fn is_psd(s: &SymMatrix, tol: Option<f64>) -> Result<PsdCheck> {
    let tol = resolve_tol(s, tol);
    let e = eigh(s)?;
    let min = e.min();
    Ok(PsdCheck { psd: min >= -tol * e.max_abs().max(1.0), min_eigenvalue: min })
}
