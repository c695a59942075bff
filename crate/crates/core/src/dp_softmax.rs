//! Private logistic output layer.
//!
//! The cross-entropy of one example, `f(z) = y log(1+e^{−z}) + (1−y) log(1+e^{z})`
//! with `z = w·p`, is replaced by its second-order expansion at `z = 0`:
//! `log 2 + (1−2y)/2 · z + z²/8`. The summed coefficients of the monomials
//! `1`, `w_j` and `w_j w_k` (`j ≤ k`) are perturbed once with Laplace noise of
//! scale `Δ_C/ε`, `Δ_C = d + d²/4`.

use crate::functional_mech::{laplace_sample, CountingRng, FmError};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

/// Eigenvalue floor applied to the perturbed quadratic form.
pub const EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoftmaxError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error(transparent)]
    Mechanism(#[from] FmError),
}

/// Features in [0,1] with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledBatch {
    /// Clamps every feature into [0,1].
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self, SoftmaxError> {
        if features.len() != labels.len() {
            return Err(SoftmaxError::ShapeMismatch(format!(
                "{} feature rows, {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(d) = features.first().map(|f| f.len()) {
            if features.iter().any(|f| f.len() != d) {
                return Err(SoftmaxError::ShapeMismatch("ragged feature rows".into()));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(SoftmaxError::BadLabel { label, classes });
        }
        let features = features
            .into_iter()
            .map(|f| f.into_iter().map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) }).collect())
            .collect();
        Ok(Self { features, labels, classes: classes.max(2) })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    /// Binary targets for class `c` against the rest.
    fn targets(&self, c: usize) -> Vec<f64> {
        if self.classes == 2 {
            self.labels.iter().map(|&l| l as f64).collect()
        } else {
            self.labels.iter().map(|&l| f64::from(l == c)).collect()
        }
    }
}

/// One weight row per binary problem (a single row for two classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub weights: Vec<Vec<f64>>,
}

impl SoftmaxParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        let rows = if classes <= 2 { 1 } else { classes };
        Self { weights: vec![vec![0.0; dim]; rows] }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    /// Positive-class probability `σ(w·p)` (two-class models).
    pub fn prob(&self, p: &[f64]) -> f64 {
        crate::cheb_approx::logistic(dot(&self.weights[0], p))
    }

    /// Predicted label.
    pub fn predict(&self, p: &[f64]) -> usize {
        if self.weights.len() == 1 {
            usize::from(self.prob(p) > 0.5)
        } else {
            let mut best = (f64::NEG_INFINITY, 0);
            for (c, w) in self.weights.iter().enumerate() {
                let s = dot(w, p);
                if s > best.0 {
                    best = (s, c);
                }
            }
            best.1
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `Σ_i y_i log(1+e^{−w·p_i}) + (1−y_i) log(1+e^{w·p_i})` (binary labels).
pub fn cross_entropy(batch: &LabeledBatch, w: &[f64]) -> Result<f64, SoftmaxError> {
    if batch.dim() != w.len() && !batch.is_empty() {
        return Err(SoftmaxError::ShapeMismatch("weight length".into()));
    }
    Ok(batch
        .features
        .iter()
        .zip(batch.targets(1))
        .map(|(p, y)| {
            let z = dot(w, p);
            y * softplus(-z) + (1.0 - y) * softplus(z)
        })
        .sum())
}

/// Coefficients of the degree-2 surrogate: constant, `w_j`, and `w_j w_k` for
/// `j ≤ k` in row-major upper-triangular order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorSurrogate {
    pub dim: usize,
    pub constant: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
}

/// Index of `w_j w_k` (`j ≤ k`) in [`TaylorSurrogate::quadratic`].
pub fn tri_index(d: usize, j: usize, k: usize) -> usize {
    j * d - j * (j + 1) / 2 + k
}

impl TaylorSurrogate {
    /// Number of monomials, `1 + d + d(d+1)/2`.
    pub fn monomials(&self) -> usize {
        1 + self.dim + self.quadratic.len()
    }

    /// Symmetric matrix `M` with `w·Mw` equal to the quadratic part.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in j..d {
                let q = self.quadratic[tri_index(d, j, k)];
                if j == k {
                    m[(j, j)] = q;
                } else {
                    m[(j, k)] = q / 2.0;
                    m[(k, j)] = q / 2.0;
                }
            }
        }
        m
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut v = self.constant + dot(&self.linear, w);
        for j in 0..d {
            for k in j..d {
                v += self.quadratic[tri_index(d, j, k)] * w[j] * w[k];
            }
        }
        v
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut g = self.linear.clone();
        for j in 0..d {
            for k in j..d {
                let q = self.quadratic[tri_index(d, j, k)];
                g[j] += q * w[k];
                g[k] += q * w[j];
            }
        }
        g
    }
}

/// Surrogate for the binary targets `y`.
fn surrogate_for(features: &[Vec<f64>], y: &[f64]) -> TaylorSurrogate {
    let d = features.first().map_or(0, |f| f.len());
    let mut linear = vec![0.0; d];
    let mut quadratic = vec![0.0; d * (d + 1) / 2];
    for (p, &yi) in features.iter().zip(y) {
        let c1 = (1.0 - 2.0 * yi) / 2.0;
        for j in 0..d {
            linear[j] += c1 * p[j];
            for k in j..d {
                let m = if j == k { 1.0 } else { 2.0 };
                quadratic[tri_index(d, j, k)] += m * p[j] * p[k] / 8.0;
            }
        }
    }
    TaylorSurrogate { dim: d, constant: features.len() as f64 * LN_2, linear, quadratic }
}

/// Summed surrogate coefficients of a binary batch.
pub fn taylor_surrogate_coeffs(batch: &LabeledBatch) -> Result<TaylorSurrogate, SoftmaxError> {
    if batch.is_empty() {
        return Err(SoftmaxError::EmptyBatch);
    }
    Ok(surrogate_for(&batch.features, &batch.targets(1)))
}

/// `Δ_C = d + d²/4`.
pub fn softmax_sensitivity(feature_dim: usize) -> f64 {
    let d = feature_dim as f64;
    d + d * d / 4.0
}

/// Perturbed surrogate and the number of Laplace draws it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSurrogate {
    pub surrogate: TaylorSurrogate,
    pub draws: u64,
}

/// One Laplace(`delta/epsilon`) draw per monomial: constant, linear, quadratic.
pub fn perturb_surrogate(
    s: &TaylorSurrogate,
    delta: f64,
    epsilon: f64,
    rng: &mut CountingRng<ChaCha20Rng>,
) -> Result<PerturbedSurrogate, SoftmaxError> {
    if !(delta > 0.0) || !(epsilon > 0.0) {
        return Err(FmError::NonPositiveBudget { delta, epsilon }.into());
    }
    let scale = delta / epsilon;
    let start = rng.words;
    let mut out = s.clone();
    out.constant += laplace_sample(scale, rng)?;
    for x in out.linear.iter_mut().chain(out.quadratic.iter_mut()) {
        *x += laplace_sample(scale, rng)?;
    }
    Ok(PerturbedSurrogate { surrogate: out, draws: rng.words - start })
}

/// Replaces eigenvalues of the quadratic form below `floor` by `floor`.
pub fn clip_quadratic(s: &TaylorSurrogate, floor: f64) -> TaylorSurrogate {
    let d = s.dim;
    if d == 0 {
        return s.clone();
    }
    let eig = SymmetricEigen::new(s.matrix());
    let vals = eig.eigenvalues.map(|x| x.max(floor));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let mut out = s.clone();
    for j in 0..d {
        for k in j..d {
            let q = if j == k { m[(j, j)] } else { m[(j, k)] + m[(k, j)] };
            out.quadratic[tri_index(d, j, k)] = q;
        }
    }
    out
}

/// Closed-form minimizer `−M⁻¹ b / 2` of a positive-definite surrogate.
pub fn surrogate_minimizer(s: &TaylorSurrogate) -> Option<Vec<f64>> {
    let m = s.matrix() * 2.0;
    let b = DVector::from_vec(s.linear.clone());
    m.cholesky().map(|c| (-c.solve(&b)).iter().copied().collect())
}

/// Optimizer settings for the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTraining {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Input dropout rate, applied in expectation to the released surrogate.
    #[serde(default)]
    pub dropout: f64,
}

/// Gradient descent from zero. The step is `min(lr, 1/(2λ_max))` so the
/// iteration stays stable on the clipped quadratic.
pub fn minimize_surrogate(s: &TaylorSurrogate, epochs: usize, lr: f64) -> Vec<f64> {
    minimize_surrogate_trace(s, epochs, lr).0
}

/// [`minimize_surrogate`] plus the surrogate value after every epoch.
pub fn minimize_surrogate_trace(s: &TaylorSurrogate, epochs: usize, lr: f64) -> (Vec<f64>, Vec<f64>) {
    let d = s.dim;
    let mut w = vec![0.0; d];
    if d == 0 {
        return (w, vec![s.constant; epochs]);
    }
    let lmax = SymmetricEigen::new(s.matrix()).eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let step = if lmax > 0.0 { lr.min(1.0 / (2.0 * lmax)) } else { lr };
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let g = s.gradient(&w);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= step * gi;
        }
        trace.push(s.value(&w));
    }
    (w, trace)
}

/// Expected surrogate when each input is kept with probability `1 − rate`:
/// linear and diagonal terms scale by the keep rate, cross terms by its square.
pub fn dropout_expectation(s: &TaylorSurrogate, rate: f64) -> TaylorSurrogate {
    let keep = 1.0 - rate;
    let d = s.dim;
    let mut out = s.clone();
    out.linear.iter_mut().for_each(|x| *x *= keep);
    for j in 0..d {
        for k in j..d {
            out.quadratic[tri_index(d, j, k)] *= if j == k { keep } else { keep * keep };
        }
    }
    out
}

/// Result of private output-layer training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSoftmax {
    pub params: SoftmaxParams,
    /// Sensitivity used per binary problem times the number of problems.
    pub delta: f64,
    pub draws: u64,
    /// Summed surrogate value after each epoch.
    pub trace: Vec<f64>,
}

/// Perturbs each binary surrogate once (one-vs-rest beyond two classes, with
/// `Δ_C` scaled by the class count), clips, and runs gradient descent.
/// `epsilon = None` trains the noiseless surrogate. With dropout the returned
/// weights are already scaled by the keep rate for inference.
pub fn train_private_softmax(
    batch: &LabeledBatch,
    epsilon: Option<f64>,
    opts: SoftmaxTraining,
) -> Result<TrainedSoftmax, SoftmaxError> {
    if batch.is_empty() {
        return Err(SoftmaxError::EmptyBatch);
    }
    if !(0.0..1.0).contains(&opts.dropout) {
        return Err(SoftmaxError::ShapeMismatch(format!("dropout rate {} outside [0,1)", opts.dropout)));
    }
    let problems = if batch.classes == 2 { 1 } else { batch.classes };
    let delta = softmax_sensitivity(batch.dim()) * problems as f64;
    let mut rng = CountingRng::new(ChaCha20Rng::seed_from_u64(opts.seed));
    let mut weights = Vec::with_capacity(problems);
    let mut trace = vec![0.0; opts.epochs];
    let keep = 1.0 - opts.dropout;
    for c in 0..problems {
        let target = if problems == 1 { 1 } else { c };
        let s = surrogate_for(&batch.features, &batch.targets(target));
        let s = match epsilon {
            Some(eps) => perturb_surrogate(&s, delta, eps, &mut rng)?.surrogate,
            None => s,
        };
        let s = if opts.dropout > 0.0 { dropout_expectation(&s, opts.dropout) } else { s };
        let s = clip_quadratic(&s, EIGEN_FLOOR);
        let (w, t) = minimize_surrogate_trace(&s, opts.epochs, opts.lr);
        trace.iter_mut().zip(t).for_each(|(a, b)| *a += b);
        weights.push(w.into_iter().map(|x| x * keep).collect());
    }
    Ok(TrainedSoftmax { params: SoftmaxParams { weights }, delta, draws: rng.words, trace })
}
