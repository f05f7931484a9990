//! Batch orthogonal matching pursuit over a dictionary of log descriptors.
//!
//! The dictionary Gram matrix `AᵀA` is computed once; each query then needs
//! only `Aᵀy` and a progressively updated Cholesky factor of the Gram
//! sub-matrix on the current support.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{argmin, ClassSet};
use crate::spd::LogDescriptor;

/// Below this squared norm a new atom is treated as linearly dependent on
/// the current support.
const DEPENDENCE_THRESHOLD: f64 = 1e-12;
/// Relative residual below which the residual is recomputed from the atoms.
const EXPLICIT_RESIDUAL_BELOW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmpParams {
    /// Maximum number of atoms per code.
    pub sparsity: usize,
    /// Stop once the residual norm falls below `tolerance · ‖y‖`.
    pub tolerance: f64,
}

impl Default for OmpParams {
    fn default() -> Self {
        OmpParams {
            sparsity: 10,
            tolerance: 1e-6,
        }
    }
}

/// Unit-norm dictionary columns with class labels and a cached Gram matrix.
#[derive(Debug, Clone)]
pub struct VectorDictionary {
    atoms: DMatrix<f64>,
    norms: Vec<f64>,
    gram: DMatrix<f64>,
    atom_class: Vec<usize>,
    classes: ClassSet,
}

impl VectorDictionary {
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Norms of the descriptors before normalization.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn atom_class(&self) -> &[usize] {
        &self.atom_class
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn signal_len(&self) -> usize {
        self.atoms.nrows()
    }
}

/// Stacks descriptors as normalized columns and precomputes the Gram matrix.
pub fn build_dictionary(descriptors: &[LogDescriptor]) -> Result<VectorDictionary> {
    let first = descriptors.first().ok_or(Error::Empty("dictionary descriptors"))?;
    let len = first.len();
    let p = descriptors.len();
    let mut atoms = DMatrix::zeros(len, p);
    let mut norms = Vec::with_capacity(p);
    for (j, desc) in descriptors.iter().enumerate() {
        if desc.len() != len {
            return Err(Error::dims(len, desc.len()));
        }
        let norm = desc.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm(j));
        }
        for (i, v) in desc.values.iter().enumerate() {
            atoms[(i, j)] = v / norm;
        }
        norms.push(norm);
    }
    let classes = ClassSet::from_labels(descriptors.iter().map(LogDescriptor::label));
    let atom_class = descriptors
        .iter()
        .map(|d| classes.id(d.label()).expect("label collected above"))
        .collect();
    let gram = atoms.transpose() * &atoms;
    let gram = (&gram + gram.transpose()) * 0.5;
    Ok(VectorDictionary {
        atoms,
        norms,
        gram,
        atom_class,
        classes,
    })
}

/// Sparse approximation of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    /// Selected atom indices, in selection order.
    pub support: Vec<usize>,
    /// Coefficients on the unit-norm atoms, in the query's original scale.
    pub coefficients: Vec<f64>,
    /// `‖y − Ax‖₂`.
    pub residual_norm: f64,
    /// Residual norm before any atom and after each selection.
    pub residual_history: Vec<f64>,
    /// Set when pursuit stopped on a linearly dependent atom.
    pub degenerate: bool,
    /// Residual of the class-restricted reconstruction, indexed by class id.
    pub class_residuals: Vec<f64>,
}

impl SparseCode {
    /// Class with the smallest restricted residual (lowest id on ties).
    pub fn best_class(&self) -> Option<usize> {
        argmin(&self.class_residuals)
    }

    pub fn best_residual(&self) -> f64 {
        self.best_class().map_or(f64::INFINITY, |c| self.class_residuals[c])
    }
}

/// Codes every query independently against the shared dictionary.
pub fn batch_omp(dict: &VectorDictionary, queries: &[&[f64]], params: &OmpParams) -> Result<Vec<SparseCode>> {
    if params.sparsity == 0 || params.sparsity > dict.len() {
        return Err(Error::InvalidSparsity {
            sparsity: params.sparsity,
            atoms: dict.len(),
        });
    }
    if let Some(q) = queries.iter().find(|q| q.len() != dict.signal_len()) {
        return Err(Error::dims(dict.signal_len(), q.len()));
    }
    if queries.iter().any(|q| q.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("query"));
    }
    Ok(queries
        .par_iter()
        .map(|q| code_one(dict, q, params))
        .collect())
}

fn code_one(dict: &VectorDictionary, query: &[f64], params: &OmpParams) -> SparseCode {
    let y_norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if y_norm == 0.0 {
        return SparseCode {
            support: Vec::new(),
            coefficients: Vec::new(),
            residual_norm: 0.0,
            residual_history: vec![0.0],
            degenerate: false,
            class_residuals: vec![0.0; dict.classes.len()],
        };
    }
    let y = DVector::from_iterator(query.len(), query.iter().map(|v| v / y_norm));
    let alpha0 = dict.atoms.tr_mul(&y);
    let mut alpha = alpha0.clone();
    let p = dict.len();

    let mut support: Vec<usize> = Vec::with_capacity(params.sparsity);
    let mut selected = vec![false; p];
    // lower-triangular Cholesky factor of G[support, support], row-major
    let mut chol: Vec<Vec<f64>> = Vec::with_capacity(params.sparsity);
    let mut x: Vec<f64> = Vec::new();
    let mut history = vec![1.0];
    let mut degenerate = false;

    while support.len() < params.sparsity {
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in alpha.iter().enumerate() {
            if selected[i] {
                continue;
            }
            if best.map_or(true, |(_, b)| a.abs() > b) {
                best = Some((i, a.abs()));
            }
        }
        let Some((j, corr)) = best else { break };
        if corr <= f64::EPSILON {
            break;
        }

        // extend the Cholesky factor with row [wᵀ, sqrt(1 − wᵀw)]
        let k = support.len();
        let mut w = vec![0.0; k];
        for r in 0..k {
            let mut s = dict.gram[(support[r], j)];
            for c in 0..r {
                s -= chol[r][c] * w[c];
            }
            w[r] = s / chol[r][r];
        }
        let diag2 = dict.gram[(j, j)] - w.iter().map(|v| v * v).sum::<f64>();
        if diag2 <= DEPENDENCE_THRESHOLD {
            degenerate = true;
            break;
        }
        w.push(diag2.sqrt());
        chol.push(w);
        support.push(j);
        selected[j] = true;

        // solve L Lᵀ x = alpha0[support]
        let rhs: Vec<f64> = support.iter().map(|&i| alpha0[i]).collect();
        x = cholesky_solve(&chol, &rhs);

        // alpha = alpha0 − G[:, support] x
        for i in 0..p {
            let mut beta = 0.0;
            for (s, &idx) in support.iter().enumerate() {
                beta += dict.gram[(i, idx)] * x[s];
            }
            alpha[i] = alpha0[i] - beta;
        }
        let explained: f64 = support.iter().zip(&x).map(|(&i, xi)| alpha0[i] * xi).sum();
        let mut err = (1.0 - explained).max(0.0).sqrt();
        if err < EXPLICIT_RESIDUAL_BELOW {
            // the Gram form loses about half the digits near an exact fit
            err = unit_residual(dict, &y, &support, &x);
        }
        history.push(err);
        if err <= params.tolerance {
            break;
        }
    }

    let coefficients: Vec<f64> = x.iter().map(|v| v * y_norm).collect();
    let query_vec = DVector::from_column_slice(query);
    let residual_norm = restricted_residual(dict, &query_vec, &support, &coefficients, |_| true);
    let class_residuals = (0..dict.classes.len())
        .map(|c| restricted_residual(dict, &query_vec, &support, &coefficients, |i| dict.atom_class[i] == c))
        .collect();
    SparseCode {
        support,
        coefficients,
        residual_norm,
        residual_history: history.into_iter().map(|e| e * y_norm).collect(),
        degenerate,
        class_residuals,
    }
}

fn unit_residual(dict: &VectorDictionary, y: &DVector<f64>, support: &[usize], x: &[f64]) -> f64 {
    let mut r = y.clone();
    for (&i, &c) in support.iter().zip(x) {
        r.axpy(-c, &dict.atoms.column(i), 1.0);
    }
    r.norm()
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|c| l[i][c] * z[c]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|r| l[r][i] * x[r]).sum();
        x[i] = (z[i] - s) / l[i][i];
    }
    x
}

fn restricted_residual(
    dict: &VectorDictionary,
    y: &DVector<f64>,
    support: &[usize],
    coefficients: &[f64],
    keep: impl Fn(usize) -> bool,
) -> f64 {
    let mut r = y.clone();
    for (&i, &c) in support.iter().zip(coefficients) {
        if keep(i) {
            r.axpy(-c, &dict.atoms.column(i), 1.0);
        }
    }
    r.norm()
}

/// Residual `‖y − A xᶜ‖₂` of every class, where `xᶜ` keeps only the support
/// coefficients whose atom carries class `c`. A class absent from the
/// support scores `‖y‖`.
pub fn class_residuals(dict: &VectorDictionary, query: &[f64], code: &SparseCode) -> Result<Vec<f64>> {
    if query.len() != dict.signal_len() {
        return Err(Error::dims(dict.signal_len(), query.len()));
    }
    if code.support.len() != code.coefficients.len() || code.support.iter().any(|&i| i >= dict.len()) {
        return Err(Error::dims("support within dictionary", format!("{:?}", code.support)));
    }
    let y = DVector::from_column_slice(query);
    Ok((0..dict.classes.len())
        .map(|c| restricted_residual(dict, &y, &code.support, &code.coefficients, |i| dict.atom_class[i] == c))
        .collect())
}
