//! Symmetric positive-definite (SPD) matrix kernels.
//!
//! Every matrix function here goes through a symmetric eigendecomposition
//! `C = V diag(λ) Vᵀ` and applies the scalar function to the spectrum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative floor applied to eigenvalues before `log`, as a fraction of the largest.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Positive-definiteness check used at construction, relative to the largest eigenvalue.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Condition number above which an inverse square root is refused.
pub const MAX_CONDITION: f64 = 1e12;

pub const DEFAULT_MEAN_TOL: f64 = 1e-8;
pub const DEFAULT_MEAN_MAX_ITER: usize = 50;

/// A symmetric positive-definite matrix.
///
/// Construction symmetrizes the input (so `m[(i, j)] == m[(j, i)]` holds bit for
/// bit) and rejects spectra whose smallest eigenvalue is not above
/// `PD_TOLERANCE * λ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpdRepr", into = "SpdRepr")]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpdRepr {
    dim: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl TryFrom<SpdRepr> for SpdMatrix {
    type Error = Error;

    fn try_from(r: SpdRepr) -> Result<Self> {
        if r.entries.len() != r.dim * r.dim {
            return Err(Error::DimensionMismatch {
                expected: r.dim * r.dim,
                found: r.entries.len(),
            });
        }
        SpdMatrix::new(DMatrix::from_row_slice(r.dim, r.dim, &r.entries))
    }
}

impl From<SpdMatrix> for SpdRepr {
    fn from(m: SpdMatrix) -> Self {
        let dim = m.dim();
        let entries = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| m.inner[(i, j)])
            .collect();
        SpdRepr { dim, entries }
    }
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Input(format!(
                "SPD matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("matrix has non-finite entries".into()));
        }
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym.clone());
        let (min_eig, max_eig) = extremes(&eig.eigenvalues);
        if !(max_eig > 0.0) || !(min_eig > PD_TOLERANCE * max_eig) {
            return Err(Error::NotPositiveDefinite { min_eig, max_eig });
        }
        Ok(Self { inner: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.inner.clone()).eigenvalues
    }

    /// Scalar multiple; `factor` must be positive.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.inner * factor)
    }

    fn from_trusted(m: DMatrix<f64>) -> Self {
        Self {
            inner: symmetrize(m),
        }
    }
}

/// Upper-triangular vectorization of a symmetric tangent matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    dim: usize,
    values: Vec<f64>,
}

impl TangentVector {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// How off-diagonal entries are weighted when vectorizing a tangent matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDiagonalWeight {
    /// Raw entries.
    #[default]
    Unit,
    /// Off-diagonals multiplied by √2, which makes the vector norm equal the
    /// Frobenius norm of the tangent matrix.
    Sqrt2,
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn extremes(v: &DVector<f64>) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// `V diag(f(λ)) Vᵀ` for a symmetric input.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mapped = eig.eigenvalues.map(f);
    reassemble(&eig.eigenvectors, &mapped)
}

fn reassemble(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v;
    }
    symmetrize(scaled * vectors.transpose())
}

/// Matrix logarithm of an SPD matrix.
///
/// Eigenvalues are floored at `EIGEN_FLOOR * λ_max` before the logarithm.
pub fn matrix_log(c: &SpdMatrix) -> Result<DMatrix<f64>> {
    log_symmetric(c.as_matrix())
}

fn log_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("matrix_log of non-finite matrix".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let (_, max_eig) = extremes(&eig.eigenvalues);
    if !(max_eig > 0.0) {
        return Err(Error::NumericDomain("matrix_log of a non-positive spectrum".into()));
    }
    let floor = EIGEN_FLOOR * max_eig;
    let logs = eig.eigenvalues.map(|l| l.max(floor).ln());
    Ok(reassemble(&eig.eigenvectors, &logs))
}

/// Matrix exponential of a symmetric matrix (the inverse of [`matrix_log`]).
pub fn matrix_exp(s: &DMatrix<f64>) -> Result<SpdMatrix> {
    if !s.is_square() {
        return Err(Error::Input("matrix_exp needs a square matrix".into()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("matrix_exp of non-finite matrix".into()));
    }
    SpdMatrix::new(spectral_map(&symmetrize(s.clone()), f64::exp))
}

pub fn matrix_sqrt(c: &SpdMatrix) -> SpdMatrix {
    SpdMatrix::from_trusted(spectral_map(c.as_matrix(), f64::sqrt))
}

/// `M = C^{-1/2}`, so that `M C M = I`.
pub fn matrix_inv_sqrt(c: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = SymmetricEigen::new(c.as_matrix().clone());
    let (min_eig, max_eig) = extremes(&eig.eigenvalues);
    let cond = max_eig / min_eig;
    if !(min_eig > 0.0) || !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let inv = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(SpdMatrix::from_trusted(reassemble(&eig.eigenvectors, &inv)))
}

/// Ledoit-Wolf shrinkage covariance of a `channels × samples` block.
///
/// Returns `(1 − α) S + α μ I` with `S` the (1/n, mean-removed) sample
/// covariance, `μ = tr(S) / channels`, and the closed-form intensity
/// `α = min(b̄², d²) / d²` where `d² = ‖S − μI‖²` and
/// `b̄² = n⁻² Σ_k ‖x_k x_kᵀ − S‖²`.
pub fn ledoit_wolf_cov(x: &DMatrix<f64>) -> Result<SpdMatrix> {
    let (shrunk, _) = ledoit_wolf_with_intensity(x)?;
    Ok(shrunk)
}

/// [`ledoit_wolf_cov`] that also reports the shrinkage intensity α.
pub fn ledoit_wolf_with_intensity(x: &DMatrix<f64>) -> Result<(SpdMatrix, f64)> {
    let (p, n) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "Ledoit-Wolf needs at least 2 samples, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::Input("Ledoit-Wolf needs at least one channel".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("signal has non-finite samples".into()));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let nf = n as f64;
    let sample = symmetrize(&centered * centered.transpose() / nf);
    let mu = sample.trace() / p as f64;

    let mut target_gap = sample.clone();
    for i in 0..p {
        target_gap[(i, i)] -= mu;
    }
    let d2 = target_gap.norm_squared();

    // Σ_k ‖x_k x_kᵀ − S‖² = Σ_k (‖x_k‖⁴ − 2 x_kᵀ S x_k) + n ‖S‖²
    let s_norm2 = sample.norm_squared();
    let sx = &sample * &centered;
    let mut b_sum = nf * s_norm2;
    for k in 0..n {
        let col = centered.column(k);
        let sq = col.norm_squared();
        b_sum += sq * sq - 2.0 * col.dot(&sx.column(k));
    }
    let b2 = (b_sum / (nf * nf)).max(0.0);

    let alpha = if d2 > 0.0 { b2.min(d2) / d2 } else { 0.0 };
    let mut shrunk = sample * (1.0 - alpha);
    for i in 0..p {
        shrunk[(i, i)] += alpha * mu;
    }
    Ok((SpdMatrix::new(shrunk)?, alpha))
}

/// Riemannian (affine-invariant) Fréchet mean by fixed-point Karcher flow,
/// initialized at the arithmetic mean.
pub fn frechet_mean(cs: &[SpdMatrix], tol: f64, max_iter: usize) -> Result<SpdMatrix> {
    let first = cs
        .first()
        .ok_or_else(|| Error::InsufficientData("Fréchet mean of an empty set".into()))?;
    let dim = first.dim();
    if let Some(bad) = cs.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let count = cs.len() as f64;
    let arith = cs
        .iter()
        .fold(DMatrix::zeros(dim, dim), |acc, c| acc + c.as_matrix())
        / count;
    let mut mean = SpdMatrix::new(arith)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let half = matrix_sqrt(&mean);
        let inv_half = matrix_inv_sqrt(&mean)?;
        let mut step = DMatrix::zeros(dim, dim);
        for c in cs {
            let whitened = inv_half.as_matrix() * c.as_matrix() * inv_half.as_matrix();
            step += log_symmetric(&symmetrize(whitened))?;
        }
        step /= count;
        residual = step.norm();
        if residual < tol {
            return Ok(mean);
        }
        let moved = matrix_exp(&step)?;
        mean = SpdMatrix::new(half.as_matrix() * moved.as_matrix() * half.as_matrix())?;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
        last: Box::new(mean),
    })
}

/// Vectorize the upper triangle (row-major) of a symmetric matrix.
pub fn upper_triangle(s: &DMatrix<f64>, weight: OffDiagonalWeight) -> TangentVector {
    let dim = s.nrows();
    let off = match weight {
        OffDiagonalWeight::Unit => 1.0,
        OffDiagonalWeight::Sqrt2 => std::f64::consts::SQRT_2,
    };
    let mut values = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        values.push(s[(i, i)]);
        for j in (i + 1)..dim {
            values.push(off * s[(i, j)]);
        }
    }
    TangentVector { dim, values }
}

/// `upper(logm(C_ref^{-1/2} C C_ref^{-1/2}))` with raw (unweighted) entries.
pub fn tangent_project(c: &SpdMatrix, c_ref: &SpdMatrix) -> Result<TangentVector> {
    TangentSpace::new(c_ref, OffDiagonalWeight::Unit)?.project(c)
}

/// Tangent space at a fixed reference point, with the reference's inverse
/// square root cached.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    reference: SpdMatrix,
    ref_inv_sqrt: SpdMatrix,
    weight: OffDiagonalWeight,
}

impl TangentSpace {
    pub fn new(reference: &SpdMatrix, weight: OffDiagonalWeight) -> Result<Self> {
        Ok(Self {
            reference: reference.clone(),
            ref_inv_sqrt: matrix_inv_sqrt(reference)?,
            weight,
        })
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.reference
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn project(&self, c: &SpdMatrix) -> Result<TangentVector> {
        let dim = self.dim();
        if c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
        if c == &self.reference {
            // logm(I) = 0 without round-off
            return Ok(TangentVector {
                dim,
                values: vec![0.0; dim * (dim + 1) / 2],
            });
        }
        let w = self.ref_inv_sqrt.as_matrix();
        let whitened = symmetrize(w * c.as_matrix() * w);
        Ok(upper_triangle(&log_symmetric(&whitened)?, self.weight))
    }
}
