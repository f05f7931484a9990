//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use covmotion::covariance::ClipMeta;
use covmotion::spd::LogDescriptor;
use covmotion::spd::WhitenedAtom;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_matrix(rng, d, d).qr().q()
}

/// `V diag(λ) Vᵀ` with eigenvalues spaced geometrically from 1 to `cond`.
pub fn spd_with_condition(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> DMatrix<f64> {
    let v = random_orthogonal(rng, d);
    let lambda = DVector::from_fn(d, |i, _| {
        if d == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (d - 1) as f64)
        }
    });
    let m = &v * DMatrix::from_diagonal(&lambda) * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Well-conditioned random SPD matrix.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, d, d + 2);
    let m = &a * a.transpose() / (d + 2) as f64 + DMatrix::identity(d, d) * 0.1;
    (&m + m.transpose()) * 0.5
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `XcᵀXc/(n−1)` with `Xc` the column-centred sample matrix (rows are samples).
pub fn covariance_oracle(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let mean = samples.row_mean();
    let mut xc = samples.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    xc.transpose() * &xc / (n as f64 - 1.0)
}

/// `tr(Q̂Q⁻¹) − ln det(Q̂Q⁻¹) − d` through an explicit inverse.
pub fn burg_oracle(q_hat: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let inv = q.clone().try_inverse().expect("invertible");
    let p = q_hat * inv;
    p.trace() - p.determinant().ln() - q.nrows() as f64
}

pub fn meta(label: &str) -> ClipMeta {
    ClipMeta {
        label: label.into(),
        ..ClipMeta::default()
    }
}

pub fn descriptor(values: Vec<f64>, label: &str) -> LogDescriptor {
    LogDescriptor::new(values, meta(label)).unwrap()
}

/// Textbook OMP on a unit-norm column dictionary: greedy argmax of |Aᵀr|
/// (lowest index on ties), then a fresh least-squares solve by QR.
pub struct NaiveCode {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual_history: Vec<f64>,
}

pub fn naive_omp(a: &DMatrix<f64>, y: &DVector<f64>, sparsity: usize, tolerance: f64) -> NaiveCode {
    let y_norm = y.norm();
    let mut support = Vec::new();
    let mut coefficients = Vec::new();
    let mut r = y.clone();
    let mut history = vec![y_norm];
    while support.len() < sparsity {
        let corr = a.tr_mul(&r);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in corr.iter().enumerate() {
            if support.contains(&i) {
                continue;
            }
            if best.map_or(true, |(_, b)| c.abs() > b) {
                best = Some((i, c.abs()));
            }
        }
        let Some((j, _)) = best else { break };
        support.push(j);
        let sub = DMatrix::from_fn(a.nrows(), support.len(), |i, k| a[(i, support[k])]);
        let qr = sub.clone().qr();
        let qty = qr.q().tr_mul(y);
        let x = qr.r().solve_upper_triangular(&qty).expect("full column rank");
        r = y - &sub * &x;
        coefficients = x.iter().copied().collect();
        history.push(r.norm());
        if r.norm() <= tolerance * y_norm {
            break;
        }
    }
    NaiveCode {
        support,
        coefficients,
        residual_history: history,
    }
}

/// Objective `Σ (tr D̂ᵢ + δ) xᵢ − log det Σ xᵢ D̂ᵢ`, `+∞` when infeasible.
pub fn maxdet_objective(atoms: &[WhitenedAtom], delta: f64, x: &[f64]) -> f64 {
    let d = atoms[0].dim();
    let mut m = DMatrix::zeros(d, d);
    let mut linear = 0.0;
    for (a, &xi) in atoms.iter().zip(x) {
        if xi < 0.0 {
            return f64::INFINITY;
        }
        m += &a.matrix * xi;
        linear += (a.trace + delta) * xi;
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    if eig.min() <= 0.0 || eig.max() > 1.0 + 1e-12 {
        return f64::INFINITY;
    }
    linear - eig.iter().map(|l| l.ln()).sum::<f64>()
}

/// Best objective on the grid `xᵢ ∈ {0, step, 2·step, …}` within the feasible set.
pub fn grid_minimum(atoms: &[WhitenedAtom], delta: f64, step: f64) -> f64 {
    let limits: Vec<usize> = atoms
        .iter()
        .map(|a| {
            let lmax: f64 = a.matrix.clone().symmetric_eigen().eigenvalues.max();
            (1.0 / (lmax * step)).floor() as usize
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; atoms.len()];
    loop {
        let x: Vec<f64> = idx.iter().map(|&k| k as f64 * step).collect();
        best = best.min(maxdet_objective(atoms, delta, &x));
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] <= limits[pos] {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Random atoms already in a whitened frame: SPD with spectra of order one.
pub fn random_whitened_atoms(rng: &mut ChaCha8Rng, p: usize, d: usize) -> Vec<WhitenedAtom> {
    (0..p)
        .map(|_| {
            let m = random_spd(rng, d);
            let scale = rng.gen_range(0.3..1.5) / m.trace() * d as f64;
            WhitenedAtom::new(m * scale)
        })
        .collect()
}
