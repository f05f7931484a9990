//! Clip-level covariance descriptors.
//!
//! Two routes compute the same matrix: [`covariance_direct`] is the textbook
//! two-pass estimator and [`covariance_integral`] accumulates running sums
//! (`Σf`, `Σffᵀ`) that can be merged across frames or clips. The running sums
//! are taken relative to a shift vector (the first sample seen) so that large
//! feature means do not cancel catastrophically.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStack;

/// Identifies the clip a descriptor was computed from.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClipMeta {
    pub video_id: String,
    pub clip_index: usize,
    pub label: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDescriptor {
    pub matrix: DMatrix<f64>,
    pub sample_count: usize,
    /// Ridge added by [`regularize`], zero for a raw estimate.
    pub ridge: f64,
    pub meta: ClipMeta,
}

impl CovarianceDescriptor {
    pub fn new(matrix: DMatrix<f64>, sample_count: usize) -> Self {
        CovarianceDescriptor {
            matrix,
            sample_count,
            ridge: 0.0,
            meta: ClipMeta::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn with_meta(mut self, meta: ClipMeta) -> Self {
        self.meta = meta;
        self
    }
}

fn check_stack(stack: &FeatureStack) -> Result<()> {
    if stack.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: stack.len(),
        });
    }
    if stack.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature stack"));
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Unbiased sample covariance `1/(n−1) Σ (f−μ)(f−μ)ᵀ`, two-pass.
pub fn covariance_direct(stack: &FeatureStack) -> Result<CovarianceDescriptor> {
    check_stack(stack)?;
    let d = stack.dim();
    let n = stack.len();
    let mut mean = vec![0.0; d];
    for s in stack.samples() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut acc = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for s in stack.samples() {
        for k in 0..d {
            centered[k] = s[k] - mean[k];
        }
        for i in 0..d {
            let ci = centered[i];
            let row = &mut acc[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    let mut c = DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        acc[a * d + b] * scale
    });
    symmetrize(&mut c);
    Ok(CovarianceDescriptor::new(c, n))
}

/// Running first and second moments of a sample set, relative to a shift.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralStats {
    dim: usize,
    count: usize,
    shift: Vec<f64>,
    sum: Vec<f64>,
    /// Upper triangle of `Σ (f−s)(f−s)ᵀ`, row-major `d×d` storage.
    sum_outer: Vec<f64>,
}

impl IntegralStats {
    pub fn new(dim: usize) -> Self {
        IntegralStats {
            dim,
            count: 0,
            shift: Vec::new(),
            sum: vec![0.0; dim],
            sum_outer: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.dim);
        let d = self.dim;
        if self.count == 0 {
            self.shift = sample.to_vec();
        }
        self.count += 1;
        // the first sample contributes zero to both sums
        if self.count == 1 {
            return;
        }
        let g: Vec<f64> = sample.iter().zip(&self.shift).map(|(f, s)| f - s).collect();
        for i in 0..d {
            self.sum[i] += g[i];
            let gi = g[i];
            let row = &mut self.sum_outer[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += gi * g[j];
            }
        }
    }

    pub fn extend<'a>(&mut self, samples: impl IntoIterator<Item = &'a [f64]>) {
        for s in samples {
            self.push(s);
        }
    }

    /// Accumulates another set of statistics, re-expressing them relative to
    /// this accumulator's shift.
    pub fn merge(&mut self, other: &IntegralStats) {
        assert_eq!(self.dim, other.dim, "merging statistics of different dimension");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim;
        let m = other.count as f64;
        // other's samples g' = f − s'; relative to s: g = g' + δ with δ = s' − s
        let delta: Vec<f64> = other.shift.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        for i in 0..d {
            for j in i..d {
                self.sum_outer[i * d + j] += other.sum_outer[i * d + j]
                    + other.sum[i] * delta[j]
                    + delta[i] * other.sum[j]
                    + m * delta[i] * delta[j];
            }
        }
        for i in 0..d {
            self.sum[i] += other.sum[i] + m * delta[i];
        }
        self.count += other.count;
    }

    /// Mean of the accumulated samples.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.shift.iter().zip(&self.sum).map(|(s, g)| s + g / n).collect()
    }

    /// `(Σggᵀ − n·μ_g μ_gᵀ)/(n−1)` where `g` are the shifted samples.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.count,
            });
        }
        let d = self.dim;
        let n = self.count as f64;
        let mg: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut c = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = (self.sum_outer[i * d + j] - n * mg[i] * mg[j]) / (n - 1.0);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        Ok(c)
    }
}

/// Covariance from accumulated running sums. Agrees with
/// [`covariance_direct`] to rounding error.
pub fn covariance_integral(stack: &FeatureStack) -> Result<CovarianceDescriptor> {
    check_stack(stack)?;
    let mut stats = IntegralStats::new(stack.dim());
    stats.extend(stack.samples());
    Ok(CovarianceDescriptor::new(stats.covariance()?, stack.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    /// Ridge as a fraction of the mean diagonal entry, `trace(C)/d`.
    pub relative: f64,
    /// Lower bound on the ridge.
    pub floor: f64,
    /// Allowed asymmetry relative to the largest absolute entry.
    pub symmetry_tolerance: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            relative: 1e-5,
            floor: 1e-8,
            symmetry_tolerance: 1e-9,
        }
    }
}

impl RegularizationConfig {
    pub fn ridge_for(&self, c: &DMatrix<f64>) -> f64 {
        let d = c.nrows().max(1) as f64;
        (self.relative * c.trace() / d).max(self.floor)
    }
}

/// Maximum absolute asymmetry `|C_ij − C_ji|`.
pub fn asymmetry(c: &DMatrix<f64>) -> f64 {
    let d = c.nrows();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in i + 1..d {
            worst = worst.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn check_symmetric(c: &DMatrix<f64>, relative_tolerance: f64) -> Result<()> {
    if !c.is_square() {
        return Err(Error::dims("square matrix", format!("{}x{}", c.nrows(), c.ncols())));
    }
    let scale = c.amax().max(1.0);
    let asym = asymmetry(c);
    let tolerance = relative_tolerance * scale;
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    Ok(())
}

/// Adds the configured ridge to the diagonal so the descriptor is strictly
/// positive definite.
pub fn regularize(c: &CovarianceDescriptor, config: &RegularizationConfig) -> Result<CovarianceDescriptor> {
    check_symmetric(&c.matrix, config.symmetry_tolerance)?;
    let ridge = config.ridge_for(&c.matrix);
    let mut m = c.matrix.clone();
    symmetrize(&mut m);
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    Ok(CovarianceDescriptor {
        matrix: m,
        sample_count: c.sample_count,
        ridge: c.ridge + ridge,
        meta: c.meta.clone(),
    })
}

/// Non-overlapping windows of `clip_length` frames. A trailing partial window
/// is kept when it holds at least `min_length` frames.
pub fn clip_ranges(frame_count: usize, clip_length: usize, min_length: usize) -> Vec<Range<usize>> {
    assert!(clip_length > 0, "clip length must be positive");
    (0..frame_count)
        .step_by(clip_length)
        .map(|start| start..(start + clip_length).min(frame_count))
        .filter(|r| r.len() >= min_length)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(d: usize, rows: &[&[f64]]) -> FeatureStack {
        FeatureStack::from_samples(d, rows.concat()).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let s = stack(3, &[&[1.0, 2.0, 3.0][..]; 5]);
        assert_eq!(covariance_direct(&s).unwrap().matrix, DMatrix::zeros(3, 3));
        assert_eq!(covariance_integral(&s).unwrap().matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn two_sample_expansion() {
        // μ = (a+b)/2, so C = (a−μ)(a−μ)ᵀ + (b−μ)(b−μ)ᵀ = ½(a−b)(a−b)ᵀ
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0, -1.5];
        let c = covariance_direct(&stack(3, &[&a, &b])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = 0.5 * (a[i] - b[i]) * (a[j] - b[j]);
                assert!((c.matrix[(i, j)] - expect).abs() < 1e-14);
            }
        }
        assert_eq!(c.sample_count, 2);
    }

    #[test]
    fn too_few_samples() {
        let s = stack(2, &[&[1.0, 2.0]]);
        assert!(matches!(covariance_direct(&s), Err(Error::InsufficientSamples { .. })));
        assert!(matches!(covariance_integral(&s), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn merge_matches_single_pass() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let x = i as f64;
                vec![x.sin() * 3.0 + 100.0, (0.3 * x).cos(), x * 0.01]
            })
            .collect();
        let mut whole = IntegralStats::new(3);
        whole.extend(rows.iter().map(Vec::as_slice));
        let mut a = IntegralStats::new(3);
        a.extend(rows[..13].iter().map(Vec::as_slice));
        let mut b = IntegralStats::new(3);
        b.extend(rows[13..].iter().map(Vec::as_slice));
        a.merge(&b);
        let (ca, cw) = (a.covariance().unwrap(), whole.covariance().unwrap());
        assert!((ca - &cw).norm() / cw.norm() < 1e-12);
        assert_eq!(a.count(), 40);
    }

    #[test]
    fn regularize_zero_matrix() {
        let c = CovarianceDescriptor::new(DMatrix::zeros(3, 3), 10);
        let r = regularize(&c, &RegularizationConfig::default()).unwrap();
        assert_eq!(r.matrix, DMatrix::identity(3, 3) * 1e-8);
        assert_eq!(r.ridge, 1e-8);
    }

    #[test]
    fn regularize_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        let c = CovarianceDescriptor::new(m, 3);
        assert!(matches!(
            regularize(&c, &RegularizationConfig::default()),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn windowing() {
        assert_eq!(clip_ranges(40, 20, 2), vec![0..20, 20..40]);
        assert_eq!(clip_ranges(45, 20, 2), vec![0..20, 20..40, 40..45]);
        assert_eq!(clip_ranges(41, 20, 2), vec![0..20, 20..40]);
        assert_eq!(clip_ranges(1, 20, 2), Vec::<Range<usize>>::new());
    }
}
