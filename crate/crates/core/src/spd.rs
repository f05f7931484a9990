//! Linear algebra on symmetric positive-definite matrices: eigenvalue-based
//! matrix functions, log-Euclidean vectorization, the Burg (LogDet)
//! divergence and congruence whitening.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covariance::{check_symmetric, ClipMeta};
use crate::error::{Error, Result};

/// Relative asymmetry accepted by the matrix functions.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// Eigendecomposition `M = V diag(λ) Vᵀ` of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(m, SYMMETRY_TOLERANCE)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITERATIONS)
        .ok_or(Error::NonFinite("eigendecomposition did not converge"))?;
    Ok((eig.eigenvalues, eig.eigenvectors))
}

/// `V diag(f(λ)) Vᵀ`, symmetrized.
fn spectral_map(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * f(values[j]));
    let out = scaled * vectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn spectral_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m)?;
    Ok(spectral_map(&values, &vectors, f))
}

/// Principal matrix logarithm of an SPD matrix.
pub fn matrix_log(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(c)?;
    let min = values.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(spectral_map(&values, &vectors, f64::ln))
}

/// Matrix exponential of a symmetric matrix.
pub fn matrix_exp(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_function(l, f64::exp)
}

/// `Q^{-1/2}` with eigenvalues clamped below at `floor`.
pub fn inverse_sqrt(q: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(q)?;
    let min = values.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(spectral_map(&values, &vectors, |l| 1.0 / l.max(floor).sqrt()))
}

/// `Q^{1/2}`.
pub fn sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(q)?;
    let min = values.min();
    if min < 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(spectral_map(&values, &vectors, f64::sqrt))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigen(m)?.0.min())
}

/// Scaling of off-diagonal entries when flattening a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDiagonalWeight {
    /// `√2`: vector dot products equal Frobenius inner products.
    #[default]
    Sqrt2,
    /// Plain upper-triangle copy.
    Unit,
}

impl OffDiagonalWeight {
    fn factor(self) -> f64 {
        match self {
            OffDiagonalWeight::Sqrt2 => std::f64::consts::SQRT_2,
            OffDiagonalWeight::Unit => 1.0,
        }
    }
}

/// Length of the upper triangle (with diagonal) of a `d×d` matrix.
pub const fn triangle_len(d: usize) -> usize {
    (d * d + d) / 2
}

/// Recovers `d` from a triangle length, if it is one.
pub fn dim_from_triangle_len(len: usize) -> Option<usize> {
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (triangle_len(d) == len).then_some(d)
}

/// Row-major upper triangle with off-diagonal entries multiplied by the
/// weight factor.
pub fn upper_triangle(m: &DMatrix<f64>, weight: OffDiagonalWeight) -> Vec<f64> {
    let d = m.nrows();
    let w = weight.factor();
    let mut out = Vec::with_capacity(triangle_len(d));
    for i in 0..d {
        out.push(m[(i, i)]);
        for j in i + 1..d {
            out.push(w * m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`upper_triangle`].
pub fn from_upper_triangle(values: &[f64], weight: OffDiagonalWeight) -> Result<DMatrix<f64>> {
    let d = dim_from_triangle_len(values.len())
        .ok_or_else(|| Error::dims("triangular number of entries", values.len()))?;
    let w = weight.factor();
    let mut m = DMatrix::zeros(d, d);
    let mut it = values.iter();
    for i in 0..d {
        m[(i, i)] = *it.next().unwrap();
        for j in i + 1..d {
            let v = *it.next().unwrap() / w;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Flattened matrix logarithm of a clip covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDescriptor {
    pub values: Vec<f64>,
    pub dim: usize,
    pub meta: ClipMeta,
}

impl LogDescriptor {
    pub fn new(values: Vec<f64>, meta: ClipMeta) -> Result<Self> {
        let dim = dim_from_triangle_len(values.len())
            .ok_or_else(|| Error::dims("triangular number of entries", values.len()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log descriptor"));
        }
        Ok(LogDescriptor { values, dim, meta })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.meta.label
    }
}

/// Flattens a symmetric matrix (normally a matrix logarithm).
pub fn vectorize(l: &DMatrix<f64>, weight: OffDiagonalWeight) -> Result<LogDescriptor> {
    check_symmetric(l, SYMMETRY_TOLERANCE)?;
    LogDescriptor::new(upper_triangle(l, weight), ClipMeta::default())
}

/// Log-Euclidean descriptor of an SPD matrix: `vectorize(log C)`.
pub fn log_descriptor(c: &DMatrix<f64>, weight: OffDiagonalWeight, meta: ClipMeta) -> Result<LogDescriptor> {
    let mut v = vectorize(&matrix_log(c)?, weight)?;
    v.meta = meta;
    Ok(v)
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    match Cholesky::new(sym) {
        Some(c) => Ok(c),
        None => Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(m).unwrap_or(f64::NAN),
        }),
    }
}

/// Burg matrix divergence `tr(Q̂Q⁻¹) − log det(Q̂Q⁻¹) − d`.
///
/// Evaluated as `Σ (λᵢ − ln λᵢ − 1)` over the eigenvalues of `L⁻¹ Q̂ L⁻ᵀ`
/// with `Q = LLᵀ`, so every term is individually non-negative.
pub fn logdet_divergence(q_hat: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if q_hat.shape() != q.shape() {
        return Err(Error::dims(
            format!("{}x{}", q.nrows(), q.ncols()),
            format!("{}x{}", q_hat.nrows(), q_hat.ncols()),
        ));
    }
    check_symmetric(q_hat, SYMMETRY_TOLERANCE)?;
    check_symmetric(q, SYMMETRY_TOLERANCE)?;
    let l = cholesky(q)?.unpack();
    let x = l
        .solve_lower_triangular(q_hat)
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITERATIONS)
        .ok_or(Error::NonFinite("eigendecomposition did not converge"))?;
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(eig.eigenvalues.iter().map(|&l| l - l.ln() - 1.0).sum())
}

/// Dictionary atom expressed in the query's whitened frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedAtom {
    pub matrix: DMatrix<f64>,
    pub trace: f64,
}

impl WhitenedAtom {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let trace = matrix.trace();
        WhitenedAtom { matrix, trace }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Maps each atom `D` to `Q^{-1/2} D Q^{-1/2}`.
pub fn whiten(q: &DMatrix<f64>, atoms: &[DMatrix<f64>], floor: f64) -> Result<Vec<WhitenedAtom>> {
    let w = inverse_sqrt(q, floor)?;
    atoms
        .iter()
        .map(|d| {
            if d.shape() != q.shape() {
                return Err(Error::dims(
                    format!("{}x{}", q.nrows(), q.ncols()),
                    format!("{}x{}", d.nrows(), d.ncols()),
                ));
            }
            let m = &w * d * &w;
            Ok(WhitenedAtom::new((&m + m.transpose()) * 0.5))
        })
        .collect()
}
