//! Tensor sparse coding: approximate a query covariance `Q` by a nonnegative
//! combination of dictionary covariances under the Burg divergence.
//!
//! After whitening every atom against the query (`D̂ᵢ = Q^{-1/2} Dᵢ Q^{-1/2}`)
//! the coding problem is the log-det program
//!
//! ```text
//! minimize    Σ xᵢ tr(D̂ᵢ) − log det(Σ xᵢ D̂ᵢ) + δ Σ xᵢ
//! subject to  x ≥ 0,  Σ xᵢ D̂ᵢ ⪯ I
//! ```
//!
//! The solver is a primal barrier method. Both constraints enter the
//! objective as logarithmic barriers, `−μ log det(I − Σ xᵢ D̂ᵢ)` and
//! `−μ Σ log(sᵢ xᵢ)` with `sᵢ = λ_max(D̂ᵢ)`, and `μ` is driven towards zero.
//! Each barrier stage is minimized by damped Newton steps taken in the
//! diagonally rescaled variable `x = diag(x) z`, with a fraction-to-boundary
//! rule and Armijo backtracking; a stage ends once the Newton decrement is
//! small. On the feasible set both barrier terms are nonnegative
//! (`sᵢ xᵢ ≤ 1` because `xᵢ D̂ᵢ ⪯ I`), so lowering `μ` never raises the
//! tracked objective and the recorded objective sequence is non-increasing.
//! At the end of the path, coefficients below their reduced cost are set to
//! exactly zero.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::covariance::{regularize, CovarianceDescriptor, RegularizationConfig};
use crate::error::{Error, Result};
use crate::labels::{argmin, ClassSet};
use crate::spd::{logdet_divergence, min_eigenvalue, sym_eigen, whiten, WhitenedAtom};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TscParams {
    /// Weight δ of the ℓ₁ sparsity term.
    pub delta: f64,
    /// A barrier stage ends once half the squared Newton decrement of `F/μ`
    /// drops below this.
    pub tolerance: f64,
    /// Iteration budget across all barrier stages.
    pub max_iterations: usize,
    /// Initial barrier weight μ.
    pub barrier_initial: f64,
    /// Final barrier weight; the path stops after the stage at or below it.
    pub barrier_final: f64,
    /// Factor applied to μ between stages.
    pub barrier_decay: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    /// Scale every dictionary atom to unit trace.
    pub trace_normalize: bool,
}

impl Default for TscParams {
    fn default() -> Self {
        TscParams {
            delta: 1e-3,
            tolerance: 1e-14,
            max_iterations: 2000,
            barrier_initial: 1.0,
            barrier_final: 1e-10,
            barrier_decay: 0.1,
            armijo: 1e-4,
            backtrack: 0.5,
            trace_normalize: false,
        }
    }
}

impl TscParams {
    fn validate(&self) -> Result<()> {
        let ok = self.delta >= 0.0
            && self.tolerance > 0.0
            && self.barrier_initial > 0.0
            && self.barrier_final > 0.0
            && self.barrier_final <= self.barrier_initial
            && self.barrier_decay > 0.0
            && self.barrier_decay < 1.0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid tensor sparse coding parameters: {self:?}")))
        }
    }
}

/// Solution of the log-det coding program.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxdetSolution {
    /// Nonnegative coefficients, one per atom.
    pub x: Vec<f64>,
    /// `Σ xᵢ tr(D̂ᵢ) − log det(Σ xᵢ D̂ᵢ) + δ Σ xᵢ` at `x`.
    pub objective: f64,
    /// Barrier objective after every accepted step and every barrier update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x − Π₊(x − ∇F(x))‖_∞` at return, where `F` is the program objective
    /// plus the final `⪯ I` barrier term.
    pub stationarity: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Upper eigenvalue slack accepted by [`MaxdetSolution::below_identity`].
pub const IDENTITY_SLACK: f64 = 1e-8;

impl MaxdetSolution {
    pub fn positive_definite(&self) -> bool {
        self.min_eigenvalue > 0.0
    }

    pub fn below_identity(&self) -> bool {
        self.max_eigenvalue <= 1.0 + IDENTITY_SLACK
    }

    pub fn nonnegative(&self) -> bool {
        self.x.iter().all(|&v| v >= 0.0)
    }

    pub fn feasible(&self) -> bool {
        self.nonnegative() && self.positive_definite() && self.below_identity()
    }

    /// Number of nonzero coefficients.
    pub fn support_size(&self) -> usize {
        self.x.iter().filter(|&&v| v > 0.0).count()
    }

    /// One `key=value` diagnostics record.
    pub fn diagnostic_line(&self) -> String {
        let mut s = String::from("tsc-solve");
        let _ = write!(
            s,
            " iterations={} converged={} objective={} stationarity={:e} eig_min={:e} eig_max={} support={}",
            self.iterations,
            self.converged,
            self.objective,
            self.stationarity,
            self.min_eigenvalue,
            self.max_eigenvalue,
            self.support_size()
        );
        s
    }
}

/// Objective pieces at one point.
struct Evaluation {
    value: f64,
    /// Gradient of the full barrier objective.
    gradient: DVector<f64>,
    /// Gradient without the `x ≥ 0` barrier.
    program_gradient: DVector<f64>,
    /// Hessian without the `x ≥ 0` barrier.
    hessian: DMatrix<f64>,
}

struct Problem<'a> {
    atoms: &'a [WhitenedAtom],
    cost: DVector<f64>,
    /// `λ_max(D̂ᵢ)`, so that `sᵢ xᵢ ≤ 1` on the feasible set.
    scale: DVector<f64>,
    dim: usize,
}

impl<'a> Problem<'a> {
    fn combination(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, &xi) in self.atoms.iter().zip(x.iter()) {
            if xi != 0.0 {
                m += &a.matrix * xi;
            }
        }
        m
    }

    fn slack(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) - m
    }

    fn orthant_barrier(&self, x: &DVector<f64>) -> f64 {
        -x.iter().zip(self.scale.iter()).map(|(xi, si)| (xi * si).ln()).sum::<f64>()
    }

    /// Barrier objective, `+∞` outside the domain.
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64 {
        if x.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        let m = self.combination(x);
        let Some(lm) = Cholesky::new(m.clone()) else {
            return f64::INFINITY;
        };
        let Some(ln) = Cholesky::new(self.slack(&m)) else {
            return f64::INFINITY;
        };
        self.cost.dot(x) - log_det(&lm) - mu * log_det(&ln) + mu * self.orthant_barrier(x)
    }

    /// Plain program objective (no barrier).
    fn objective(&self, x: &DVector<f64>) -> f64 {
        match Cholesky::new(self.combination(x)) {
            Some(l) => self.cost.dot(x) - log_det(&l),
            None => f64::INFINITY,
        }
    }

    fn evaluate(&self, x: &DVector<f64>, mu: f64) -> Option<Evaluation> {
        let m = self.combination(x);
        let lm = Cholesky::new(m.clone())?;
        let ln = Cholesky::new(self.slack(&m))?;
        let value = self.cost.dot(x) - log_det(&lm) - mu * log_det(&ln) + mu * self.orthant_barrier(x);
        let bm = congruences(&lm, self.atoms);
        let bn = congruences(&ln, self.atoms);
        let p = self.atoms.len();
        let mut program_gradient = self.cost.clone();
        let mut hessian = DMatrix::zeros(p, p);
        for i in 0..p {
            program_gradient[i] += mu * bn[i].trace() - bm[i].trace();
            for j in 0..=i {
                let h = bm[i].dot(&bm[j]) + mu * bn[i].dot(&bn[j]);
                hessian[(i, j)] = h;
                hessian[(j, i)] = h;
            }
        }
        let gradient = DVector::from_fn(p, |i, _| program_gradient[i] - mu / x[i]);
        Some(Evaluation {
            value,
            gradient,
            program_gradient,
            hessian,
        })
    }
}

fn log_det(l: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `L⁻¹ Aᵢ L⁻ᵀ` for every atom, given `M = LLᵀ`.
fn congruences(l: &Cholesky<f64, Dyn>, atoms: &[WhitenedAtom]) -> Vec<DMatrix<f64>> {
    let lower = l.l();
    atoms
        .iter()
        .map(|a| {
            let y = lower.solve_lower_triangular(&a.matrix).expect("cholesky factor is nonsingular");
            lower
                .solve_lower_triangular(&y.transpose())
                .expect("cholesky factor is nonsingular")
        })
        .collect()
}

fn stationarity(x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    x.iter().zip(g.iter()).map(|(&xi, &gi)| (xi - (xi - gi).max(0.0)).abs()).fold(0.0, f64::max)
}

/// Minimizes the whitened log-det coding objective with sparsity weight `delta`.
pub fn maxdet_solve(atoms: &[WhitenedAtom], delta: f64, params: &TscParams) -> Result<MaxdetSolution> {
    let params = TscParams { delta, ..*params };
    params.validate()?;
    let first = atoms.first().ok_or(Error::Empty("whitened atoms"))?;
    let d = first.dim();
    if let Some(a) = atoms.iter().find(|a| a.dim() != d || !a.matrix.is_square()) {
        return Err(Error::dims(format!("{d}x{d} atoms"), format!("{}x{}", a.matrix.nrows(), a.matrix.ncols())));
    }
    let p = atoms.len();
    let mut scale = DVector::zeros(p);
    for (i, a) in atoms.iter().enumerate() {
        let (values, _) = sym_eigen(&a.matrix)?;
        scale[i] = values.max();
    }
    let lambda_max = scale.max();
    if !(lambda_max > 0.0) || !lambda_max.is_finite() || scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: scale.min(),
        });
    }
    let problem = Problem {
        atoms,
        cost: DVector::from_iterator(p, atoms.iter().map(|a| a.trace + delta)),
        scale,
        dim: d,
    };

    // x⁰ = c·1 with c = 1/(2p·max λ_max): λ_max(Σ c D̂ᵢ) ≤ ½, strictly inside
    let mut x = DVector::from_element(p, 1.0 / (2.0 * p as f64 * lambda_max));
    if Cholesky::new(problem.combination(&x)).is_none() {
        let m = problem.combination(&x);
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(&m).unwrap_or(f64::NAN),
        });
    }

    let mut mu = params.barrier_initial;
    let mut iterations = 0;
    let mut trace = vec![problem.value(&x, mu)];
    let mut converged = false;

    'path: loop {
        let mut centered = false;
        let mut last_decrement = f64::INFINITY;
        while iterations < params.max_iterations {
            let Some(eval) = problem.evaluate(&x, mu) else {
                break 'path;
            };
            let Some(dir) = newton_direction(&x, &eval, mu) else {
                break;
            };
            // decrement of F/μ, the self-concordant scaling
            let decrement = -eval.gradient.dot(&dir) / mu;
            if decrement / 2.0 <= params.tolerance {
                centered = true;
                break;
            }
            let quadratic = decrement < 1.0 / 16.0;
            if quadratic && decrement >= last_decrement {
                // rounding floor reached
                centered = true;
                break;
            }
            last_decrement = decrement;
            iterations += 1;
            let step = if quadratic {
                full_step(&problem, &x, &dir, mu)
            } else {
                line_search(&problem, &x, &dir, &eval, mu, &params)
            };
            match step {
                Some((next, value)) => {
                    x = next;
                    // full steps may not decrease F at rounding level
                    let last = *trace.last().expect("trace is seeded");
                    trace.push(value.min(last));
                }
                None => break,
            }
        }
        if !centered {
            break;
        }
        if mu <= params.barrier_final {
            converged = true;
            break;
        }
        mu = (mu * params.barrier_decay).max(params.barrier_final);
        // both barrier terms are ≥ 0 on the feasible set, so this is ≤ the last entry
        trace.push(problem.value(&x, mu));
    }

    let x = prune(&problem, x, mu);
    let m = problem.combination(&x);
    let (values, _) = sym_eigen(&m)?;
    let stat = problem
        .evaluate(&x, mu)
        .map_or(f64::INFINITY, |e| stationarity(&x, &e.program_gradient));
    Ok(MaxdetSolution {
        objective: problem.objective(&x),
        x: x.iter().copied().collect(),
        objective_trace: trace,
        iterations,
        converged,
        stationarity: stat,
        min_eigenvalue: values.min(),
        max_eigenvalue: values.max(),
    })
}

/// Zeroes every coefficient smaller than its reduced cost. On the central
/// path `xᵢ gᵢ = μ`, so this separates inactive atoms (`xᵢ < √μ < gᵢ`) from
/// active ones. Falls back to `x` if the pruned combination is singular.
fn prune(problem: &Problem<'_>, x: DVector<f64>, mu: f64) -> DVector<f64> {
    let Some(eval) = problem.evaluate(&x, mu) else {
        return x;
    };
    let pruned = DVector::from_fn(x.len(), |i, _| {
        if x[i] < eval.program_gradient[i] {
            0.0
        } else {
            x[i]
        }
    });
    if Cholesky::new(problem.combination(&pruned)).is_some() {
        pruned
    } else {
        x
    }
}

/// Newton direction of the barrier objective, solved in the rescaled variable
/// `z = x ./ x₀` where the orthant barrier contributes `μ I`.
fn newton_direction(x: &DVector<f64>, eval: &Evaluation, mu: f64) -> Option<DVector<f64>> {
    let p = x.len();
    let mut h = DMatrix::from_fn(p, p, |i, j| x[i] * eval.hessian[(i, j)] * x[j]);
    for i in 0..p {
        h[(i, i)] += mu;
    }
    let rhs = DVector::from_fn(p, |i, _| -x[i] * eval.gradient[i]);
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut damping = 0.0;
    let step = loop {
        let mut hd = h.clone();
        for i in 0..p {
            hd[(i, i)] += damping;
        }
        if let Some(ch) = Cholesky::new(hd) {
            break ch.solve(&rhs);
        }
        damping = if damping == 0.0 { 1e-14 * scale } else { damping * 10.0 };
        if damping > scale {
            return None;
        }
    };
    Some(step.component_mul(x))
}

/// Undamped Newton step, used inside the quadratic convergence region.
fn full_step(problem: &Problem<'_>, x: &DVector<f64>, dir: &DVector<f64>, mu: f64) -> Option<(DVector<f64>, f64)> {
    let trial = x + dir;
    let value = problem.value(&trial, mu);
    value.is_finite().then_some((trial, value))
}

/// Fraction-to-boundary step limit followed by Armijo backtracking.
fn line_search(
    problem: &Problem<'_>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    eval: &Evaluation,
    mu: f64,
    params: &TscParams,
) -> Option<(DVector<f64>, f64)> {
    let slope = eval.gradient.dot(dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut alpha: f64 = 1.0;
    for (xi, di) in x.iter().zip(dir.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(0.99 * -xi / di);
        }
    }
    for _ in 0..60 {
        let trial = x + dir * alpha;
        let value = problem.value(&trial, mu);
        if value.is_finite() && value <= eval.value + params.armijo * alpha * slope {
            return Some((trial, value));
        }
        alpha *= params.backtrack;
    }
    None
}

/// SPD atoms with class labels.
#[derive(Debug, Clone)]
pub struct TensorDictionary {
    atoms: Vec<DMatrix<f64>>,
    atom_class: Vec<usize>,
    classes: ClassSet,
    trace_normalized: bool,
}

impl TensorDictionary {
    pub fn new(atoms: Vec<DMatrix<f64>>, labels: &[&str], trace_normalize: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty("tensor dictionary"));
        }
        if atoms.len() != labels.len() {
            return Err(Error::dims(atoms.len(), labels.len()));
        }
        let d = atoms[0].nrows();
        let mut out = Vec::with_capacity(atoms.len());
        for a in atoms {
            if a.shape() != (d, d) {
                return Err(Error::dims(format!("{d}x{d}"), format!("{}x{}", a.nrows(), a.ncols())));
            }
            let min = min_eigenvalue(&a)?;
            if min <= 0.0 {
                return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
            }
            out.push(if trace_normalize { &a / a.trace() } else { a });
        }
        let classes = ClassSet::from_labels(labels.iter().copied());
        let atom_class = labels.iter().map(|l| classes.id(l).expect("collected above")).collect();
        Ok(TensorDictionary {
            atoms: out,
            atom_class,
            classes,
            trace_normalized: trace_normalize,
        })
    }

    pub fn from_descriptors(descs: &[CovarianceDescriptor], trace_normalize: bool) -> Result<Self> {
        let labels: Vec<&str> = descs.iter().map(|d| d.meta.label.as_str()).collect();
        Self::new(descs.iter().map(|d| d.matrix.clone()).collect(), &labels, trace_normalize)
    }

    pub fn atoms(&self) -> &[DMatrix<f64>] {
        &self.atoms
    }

    pub fn atom_class(&self) -> &[usize] {
        &self.atom_class
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn trace_normalized(&self) -> bool {
        self.trace_normalized
    }
}

/// Outcome of coding one clip.
#[derive(Debug, Clone)]
pub struct TscDecision {
    pub class: usize,
    /// Burg divergence of each class reconstruction from the query; `+∞` for
    /// classes with no weight.
    pub divergences: Vec<f64>,
    pub solution: MaxdetSolution,
}

/// Codes `q` against the dictionary and picks the class whose restricted
/// reconstruction `Σ_{label(i)=c} xᵢ Dᵢ` is closest to `q` in Burg divergence.
pub fn tsc_classify_clip(
    q: &DMatrix<f64>,
    dict: &TensorDictionary,
    params: &TscParams,
    regularization: &RegularizationConfig,
) -> Result<TscDecision> {
    if q.shape() != (dict.dim(), dict.dim()) {
        return Err(Error::dims(
            format!("{0}x{0}", dict.dim()),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    let normalized;
    let q = if dict.trace_normalized {
        normalized = q / q.trace();
        &normalized
    } else {
        q
    };
    let floor = regularization.ridge_for(q);
    let whitened = whiten(q, &dict.atoms, floor)?;
    let solution = maxdet_solve(&whitened, params.delta, params)?;

    let k = dict.classes.len();
    let mut divergences = vec![f64::INFINITY; k];
    for (c, div) in divergences.iter_mut().enumerate() {
        let mut recon = DMatrix::zeros(dict.dim(), dict.dim());
        let mut weight = 0.0;
        for (i, a) in dict.atoms.iter().enumerate() {
            if dict.atom_class[i] == c && solution.x[i] > 0.0 {
                recon += a * solution.x[i];
                weight += solution.x[i];
            }
        }
        if weight == 0.0 {
            continue;
        }
        *div = match logdet_divergence(&recon, q) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) => {
                let r = regularize(&CovarianceDescriptor::new(recon, 0), regularization)?;
                logdet_divergence(&r.matrix, q)?
            }
            Err(e) => return Err(e),
        };
    }
    let class = argmin(&divergences).expect("dictionary has at least one class");
    Ok(TscDecision {
        class,
        divergences,
        solution,
    })
}
