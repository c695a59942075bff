//! Private CDBN pipeline: layer-wise perturbed CRBMs with max-pooling, then a
//! private output layer.
//!
//! Each CRBM layer releases the minimizer of its perturbed energy objective.
//! The objective is built once per layer from frozen normalizers and receives
//! its noise once, so optimizer epochs never touch the budget. Groups do not
//! interact in the objective, so each group's filter and bias are optimized
//! on their own by projected gradient descent on the box `|θ| ≤ B`. The
//! default `B = q^β/(N_W²+1)` keeps every normalized preactivation of
//! in-range data inside [−1,1], where the polynomial approximation is valid.

use crate::cheb_approx::{logistic_error_bounds, ApproximatorKind, ChebError, ErrorBounds, MonomialPolynomial};
use crate::dp_softmax::{
    cross_entropy, softmax_sensitivity, train_private_softmax, LabeledBatch, SoftmaxError, SoftmaxParams, SoftmaxTraining,
};
use crate::energy_model::{
    all_preactivations, lrn_all, max_pool, CrbmParams, EnergyError, Geometry, LrnHyper, VisibleGrid,
};
use crate::functional_mech::{
    frozen_normalizers, noiseless_objective, perturb_implicit, sensitivity_domain, sensitivity_all_groups,
    sensitivity_lemma2, sensitivity_report, FmError, PerturbedObjective, PrivacyAccountant, SensitivityReport,
    VarLayout,
};
use crate::cheb_approx::logistic;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("budget split sums to {sum}, expected {total}")]
    BudgetSplitMismatch { sum: f64, total: f64 },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid L value {0}")]
    InvalidL(usize),
    #[error("duplicate L value {0}")]
    DuplicateL(usize),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Mechanism(#[from] FmError),
    #[error(transparent)]
    Softmax(#[from] SoftmaxError),
    #[error(transparent)]
    Approximation(#[from] ChebError),
}

/// One CRBM layer followed by max-pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub k: usize,
    pub n_w: usize,
    pub pool: usize,
    pub approximator: ApproximatorKind,
}

/// Fixed reduction of the top pooled maps into softmax features. Every
/// variant except `Flatten` averages over groups first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Every pooled unit.
    Flatten,
    /// One feature per pooled position.
    GroupMean,
    /// Means over a `g×g` grid of cells.
    Grid(usize),
    /// Mean over the central third of each axis, and over the rest.
    CenterSurround,
}

/// Sensitivity used to calibrate a CRBM layer's noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityRule {
    /// Single-group bound `2 max_{t,k} G(t,k) + max_t Σ|v|` over the training data.
    Lemma2,
    /// `2 max_t Σ_k G(t,k) + max_t Σ|v|` over the training data.
    AllGroups,
    /// Single-group bound at the worst admissible input.
    Lemma2Domain,
    /// All-groups bound at the worst admissible input.
    AllGroupsDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub layers: Vec<LayerSpec>,
    pub readout: Readout,
    /// Append a constant 1 to the softmax features.
    pub readout_bias: bool,
    pub classes: usize,
    /// `None` trains without noise and spends nothing.
    pub epsilon_total: Option<f64>,
    /// Per-stage budget (layers then softmax); empty means an equal split.
    pub split: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub softmax_lr: f64,
    pub softmax_epochs: usize,
    /// Size of the stratified training sample; 0 uses every instance.
    pub batch_size: usize,
    pub seed: u64,
    pub lrn: LrnHyper,
    pub sensitivity: SensitivityRule,
    /// Box bound on CRBM parameters; `None` uses `q^β/(N_W²+1)`.
    pub param_bound: Option<f64>,
    pub dropout: f64,
    /// Perturb and optimize in coordinates `θ/B`, where the box is [−1,1].
    #[serde(default = "yes")]
    pub unit_box: bool,
}

fn yes() -> bool {
    true
}

impl Default for NetworkSpec {
    /// One layer of 8 groups, 5×5 filters, pooling 2, on 28×28 binary-class input.
    fn default() -> Self {
        Self {
            input_side: 28,
            layers: vec![LayerSpec { k: 8, n_w: 5, pool: 2, approximator: ApproximatorKind::ChebyshevTruncated(7) }],
            readout: Readout::CenterSurround,
            readout_bias: false,
            classes: 2,
            epsilon_total: None,
            split: Vec::new(),
            lr: 1e-3,
            epochs: 50,
            softmax_lr: 1.0,
            softmax_epochs: 2000,
            batch_size: 0,
            seed: 0,
            lrn: LrnHyper::default(),
            sensitivity: SensitivityRule::AllGroups,
            param_bound: None,
            dropout: 0.0,
            unit_box: true,
        }
    }
}

/// Geometry of every layer, and the pooled side feeding the next.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub geometry: Geometry,
    pub pooled_side: usize,
}

impl NetworkSpec {
    /// Checks chaining, pooling, optimizer settings and the budget split.
    pub fn validate(&self) -> Result<Vec<LayerShape>, NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidSpec(m));
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if self.classes < 2 {
            return bad("classes must be at least 2".into());
        }
        if !(self.lr >= 0.0) || !(self.softmax_lr > 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if let Some(b) = self.param_bound {
            if !(b > 0.0) || !b.is_finite() {
                return bad(format!("param_bound {b} must be positive"));
            }
        }
        self.lrn.validate()?;
        let mut side = self.input_side;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.k == 0 || l.n_w == 0 || l.n_w > side {
                return bad(format!("layer {i}: filter {} does not fit input side {side}", l.n_w));
            }
            let geometry = Geometry::new(side, l.n_w, l.k)?;
            let n_h = geometry.n_h();
            if l.pool == 0 || n_h % l.pool != 0 {
                return Err(EnergyError::IndivisibleShape { n_h, ratio: l.pool }.into());
            }
            l.approximator.polynomial()?;
            side = n_h / l.pool;
            shapes.push(LayerShape { geometry, pooled_side: side });
        }
        match self.readout {
            Readout::Grid(g) if g == 0 || g > side => return bad(format!("grid {g} does not fit pooled side {side}")),
            Readout::CenterSurround if side < 2 => return bad("center-surround needs a pooled side of 2 or more".into()),
            _ => {}
        }
        self.stage_budgets()?;
        Ok(shapes)
    }

    /// Budget for each stage (layers then softmax), or `None` when noiseless.
    pub fn stage_budgets(&self) -> Result<Option<Vec<f64>>, NetworkError> {
        let Some(total) = self.epsilon_total else {
            if !self.split.is_empty() {
                return Err(NetworkError::InvalidSpec("split given without epsilon_total".into()));
            }
            return Ok(None);
        };
        if !(total > 0.0) || !total.is_finite() {
            return Err(NetworkError::InvalidSpec(format!("epsilon {total} must be positive")));
        }
        let stages = self.layers.len() + 1;
        if self.split.is_empty() {
            return Ok(Some(vec![total / stages as f64; stages]));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.len() != stages || self.split.iter().any(|e| !(*e > 0.0)) || (sum - total).abs() > 1e-9 * total {
            return Err(NetworkError::BudgetSplitMismatch { sum, total });
        }
        Ok(Some(self.split.clone()))
    }

    /// Softmax input width.
    pub fn feature_dim(&self, top: &LayerShape) -> usize {
        let m = top.pooled_side;
        let base = match self.readout {
            Readout::Flatten => top.geometry.k * m * m,
            Readout::GroupMean => m * m,
            Readout::Grid(g) => g * g,
            Readout::CenterSurround => 2,
        };
        base + usize::from(self.readout_bias)
    }

    fn bound(&self, g: Geometry) -> f64 {
        self.param_bound.unwrap_or(self.lrn.floor() / (g.filter_len() + 1) as f64)
    }
}

/// Square grids with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGrids {
    pub grids: Vec<VisibleGrid>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledGrids {
    pub fn new(grids: Vec<VisibleGrid>, labels: Vec<usize>, classes: usize) -> Result<Self, NetworkError> {
        if grids.len() != labels.len() {
            return Err(NetworkError::ShapeMismatch(format!("{} grids, {} labels", grids.len(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(NetworkError::ShapeMismatch(format!("label {l} outside 0..{classes}")));
        }
        if let Some(s) = grids.first().map(|g| g.side()) {
            if grids.iter().any(|g| g.side() != s) {
                return Err(NetworkError::ShapeMismatch("grids of different sides".into()));
            }
        }
        Ok(Self { grids, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            grids: idx.iter().map(|&i| self.grids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Balanced sample of `n` indices: `n / classes` per class (fewer when a class
/// runs out), chosen by a seeded shuffle and returned in ascending order.
/// `n = 0` or `n ≥ len` returns every index.
pub fn stratified_sample(labels: &[usize], classes: usize, n: usize, seed: u64) -> Vec<usize> {
    if n == 0 || n >= labels.len() {
        return (0..labels.len()).collect();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let per = n / classes.max(1);
    let mut out = Vec::with_capacity(n);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        out.extend(idx.into_iter().take(per));
    }
    out.sort_unstable();
    out
}

/// One optimizer epoch of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub epoch: usize,
    pub objective: f64,
    /// Seconds spent on this epoch.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub layers: Vec<CrbmParams>,
    pub softmax: SoftmaxParams,
    pub accountant: PrivacyAccountant,
    pub metrics: Vec<MetricRecord>,
}

impl TrainedModel {
    /// Consistency of the stored parameters with the spec.
    pub fn check(&self) -> Result<(), NetworkError> {
        let shapes = self.spec.validate()?;
        if shapes.len() != self.layers.len() {
            return Err(NetworkError::ShapeMismatch("layer count differs from the spec".into()));
        }
        for (s, p) in shapes.iter().zip(&self.layers) {
            if s.geometry != p.geometry {
                return Err(NetworkError::ShapeMismatch("layer geometry differs from the spec".into()));
            }
            p.check()?;
        }
        let dim = self.spec.feature_dim(shapes.last().expect("nonempty"));
        let rows = if self.spec.classes == 2 { 1 } else { self.spec.classes };
        if self.softmax.weights.len() != rows || self.softmax.dim() != dim {
            return Err(NetworkError::ShapeMismatch("softmax shape differs from the spec".into()));
        }
        Ok(())
    }
}

/// Magnitude of a pooled probability, `|2p − 1|` scaled so `p = σ(±1)` maps to 1.
fn unit_activation(p: f64) -> f64 {
    ((2.0 * p - 1.0).abs() / (2.0 * logistic(1.0) - 1.0)).min(1.0)
}

/// Pooled maps of one layer for one input.
fn layer_forward(p: &CrbmParams, v: &VisibleGrid, pool: usize, hyper: &LrnHyper) -> Result<Vec<f64>, NetworkError> {
    let g = p.geometry;
    let pre = all_preactivations(p, v)?;
    let z = lrn_all(&pre, g.k, g.n_h(), hyper);
    let prob: Vec<f64> = pre.iter().zip(&z).map(|(a, z)| logistic(a / z)).collect();
    Ok(max_pool(&prob, g.k, g.n_h(), pool)?.into_iter().map(unit_activation).collect())
}

/// Mean over groups of `K` stacked `m×m` maps.
fn group_mean(maps: &[f64], k: usize, m: usize) -> Vec<f64> {
    let plane = m * m;
    (0..plane).map(|p| (0..k).map(|g| maps[g * plane + p]).sum::<f64>() / k as f64).collect()
}

fn next_input(maps: &[f64], k: usize, m: usize) -> Result<VisibleGrid, NetworkError> {
    let mean = group_mean(maps, k, m).into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
    Ok(VisibleGrid::new(m, mean)?)
}

fn readout(spec: &NetworkSpec, maps: &[f64], k: usize, m: usize) -> Vec<f64> {
    let mut f = match spec.readout {
        Readout::Flatten => maps.to_vec(),
        Readout::GroupMean => group_mean(maps, k, m),
        Readout::Grid(g) => {
            let mean = group_mean(maps, k, m);
            let mut sums = vec![0.0; g * g];
            let mut counts = vec![0usize; g * g];
            for i in 0..m {
                for j in 0..m {
                    let c = (i * g / m) * g + j * g / m;
                    sums[c] += mean[i * m + j];
                    counts[c] += 1;
                }
            }
            sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
        }
        Readout::CenterSurround => {
            let mean = group_mean(maps, k, m);
            let (lo, hi) = (m / 3, m - m / 3);
            let (mut c, mut nc, mut s, mut ns) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..m {
                for j in 0..m {
                    if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
                        c += mean[i * m + j];
                        nc += 1;
                    } else {
                        s += mean[i * m + j];
                        ns += 1;
                    }
                }
            }
            vec![c / nc as f64, s / ns as f64]
        }
    };
    if spec.readout_bias {
        f.push(1.0);
    }
    f
}

/// Softmax features of one instance under the given layers.
pub fn features(spec: &NetworkSpec, layers: &[CrbmParams], v: &VisibleGrid) -> Result<Vec<f64>, NetworkError> {
    let mut input = v.clone();
    for (i, (p, ls)) in layers.iter().zip(&spec.layers).enumerate() {
        let maps = layer_forward(p, &input, ls.pool, &spec.lrn)?;
        let m = p.geometry.n_h() / ls.pool;
        if i + 1 == layers.len() {
            return Ok(readout(spec, &maps, p.geometry.k, m));
        }
        input = next_input(&maps, p.geometry.k, m)?;
    }
    Err(NetworkError::InvalidSpec("no layers".into()))
}

fn stage_seed(seed: u64, stage: u64, salt: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stage * 4 + salt);
    rand::RngCore::next_u64(&mut rng)
}

/// LRN settings whose floor `q^β` is divided by `scale`, matching normalizers
/// divided by `scale`.
fn scaled_floor(hyper: &LrnHyper, scale: f64) -> LrnHyper {
    LrnHyper { q: (hyper.floor() / scale).powf(1.0 / hyper.beta), ..*hyper }
}

/// Sensitivity of one layer under the spec's rule. `hyper` gives the
/// normalizer floor in the coordinates of `z`.
pub fn layer_sensitivity(
    rule: SensitivityRule,
    grids: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    hyper: &LrnHyper,
    z: &[Vec<f64>],
) -> Result<f64, NetworkError> {
    Ok(match rule {
        SensitivityRule::Lemma2 => sensitivity_lemma2(grids, poly, geometry, z)?.delta,
        SensitivityRule::AllGroups => sensitivity_all_groups(grids, poly, geometry, z)?,
        SensitivityRule::Lemma2Domain => sensitivity_domain(poly, geometry, hyper).0,
        SensitivityRule::AllGroupsDomain => sensitivity_domain(poly, geometry, hyper).1,
    })
}

/// Projected gradient descent on one layer's objective, group by group, over
/// variables `θ/scale`. The step is chosen so the path in `θ` does not depend
/// on `scale` without noise. Returns the parameters and the summed objective
/// at the start of each epoch, with the time each epoch took across groups.
fn optimize_layer(
    obj: &PerturbedObjective,
    init: &CrbmParams,
    bound: f64,
    scale: f64,
    lr: f64,
    epochs: usize,
    n: usize,
) -> (CrbmParams, Vec<(f64, f64)>) {
    let g = obj.geometry;
    let layout = VarLayout::new(g);
    let m = layout.group_vars();
    let bound = bound / scale;
    let mut x: Vec<f64> = layout.flatten(init).into_iter().map(|v| (v / scale).clamp(-bound, bound)).collect();
    let step = lr / (n as f64 * scale);
    let mut trace = vec![(0.0, 0.0); epochs];
    for k in 0..g.k {
        let group = obj.group(k).expect("implicit objective");
        let xk = &mut x[k * m..(k + 1) * m];
        for rec in trace.iter_mut() {
            let t0 = Instant::now();
            let (val, grad) = group.value_and_gradient(xk);
            for (xi, gi) in xk.iter_mut().zip(&grad) {
                *xi = (*xi - step * gi).clamp(-bound, bound);
            }
            rec.0 += val;
            rec.1 += t0.elapsed().as_secs_f64();
        }
    }
    let ci = layout.var_c() as usize;
    let lam_c = obj.visible_coefficient();
    for rec in trace.iter_mut() {
        rec.0 += lam_c * x[ci];
        x[ci] = (x[ci] - step * lam_c).clamp(-bound, bound);
    }
    x.iter_mut().for_each(|v| *v *= scale);
    (layout.unflatten(&x), trace)
}

/// Layer-wise private training followed by the private output layer.
pub fn train(spec: &NetworkSpec, data: &LabeledGrids) -> Result<TrainedModel, NetworkError> {
    let shapes = spec.validate()?;
    let budgets = spec.stage_budgets()?;
    if data.is_empty() {
        return Err(NetworkError::EmptyTrainingSet);
    }
    if data.classes != spec.classes {
        return Err(NetworkError::ShapeMismatch(format!("data has {} classes, spec {}", data.classes, spec.classes)));
    }
    if data.grids[0].side() != spec.input_side {
        return Err(NetworkError::ShapeMismatch(format!(
            "input side {} vs spec {}",
            data.grids[0].side(),
            spec.input_side
        )));
    }
    let idx = stratified_sample(&data.labels, spec.classes, spec.batch_size, stage_seed(spec.seed, 0, 3));
    let data = data.subset(&idx);
    let n = data.len();
    let mut accountant = PrivacyAccountant::new();
    let mut metrics = Vec::new();
    let mut layers = Vec::with_capacity(shapes.len());
    let mut inputs = Arc::new(data.grids.clone());
    for (i, (ls, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        let g = shape.geometry;
        let stage = format!("layer{}", i + 1);
        let poly = ls.approximator.polynomial()?;
        let init_seed = stage_seed(spec.seed, i as u64 + 1, 0);
        let bound = spec.bound(g);
        let scale = if spec.unit_box { bound } else { 1.0 };
        let mut z = frozen_normalizers(&inputs, g, &spec.lrn, init_seed)?;
        z.iter_mut().flatten().for_each(|x| *x /= scale);
        let z = Arc::new(z);
        let obj = match &budgets {
            Some(b) => {
                let delta = layer_sensitivity(spec.sensitivity, &inputs, &poly, g, &scaled_floor(&spec.lrn, scale), &z)?;
                accountant.record(&stage, delta, b[i])?;
                perturb_implicit(inputs.clone(), &poly, g, z, delta, b[i], stage_seed(spec.seed, i as u64 + 1, 1))?
            }
            None => noiseless_objective(inputs.clone(), &poly, g, z)?,
        };
        let init = CrbmParams::init(g, init_seed);
        let (params, trace) = optimize_layer(&obj, &init, bound, scale, spec.lr, spec.epochs, n);
        drop(obj);
        metrics.extend(trace.into_iter().enumerate().map(|(e, (objective, wall_time))| MetricRecord {
            stage: stage.clone(),
            epoch: e + 1,
            objective: objective * scale / n as f64,
            wall_time,
        }));
        if i + 1 < shapes.len() {
            let next: Vec<VisibleGrid> = inputs
                .par_iter()
                .map(|v| {
                    let maps = layer_forward(&params, v, ls.pool, &spec.lrn)?;
                    next_input(&maps, g.k, shape.pooled_side)
                })
                .collect::<Result<_, _>>()?;
            inputs = Arc::new(next);
        }
        layers.push(params);
    }
    let feats: Vec<Vec<f64>> =
        data.grids.par_iter().map(|v| features(spec, &layers, v)).collect::<Result<_, _>>()?;
    let batch = LabeledBatch::new(feats, data.labels.clone(), spec.classes)?;
    let eps_softmax = budgets.as_ref().map(|b| b[b.len() - 1]);
    let t0 = Instant::now();
    let sm = train_private_softmax(
        &batch,
        eps_softmax,
        SoftmaxTraining {
            epochs: spec.softmax_epochs,
            lr: spec.softmax_lr,
            seed: stage_seed(spec.seed, 0, 2),
            dropout: spec.dropout,
        },
    )?;
    if let Some(e) = eps_softmax {
        accountant.record("softmax", sm.delta, e)?;
    }
    let per_epoch = t0.elapsed().as_secs_f64() / spec.softmax_epochs.max(1) as f64;
    metrics.extend(sm.trace.iter().enumerate().map(|(e, &v)| MetricRecord {
        stage: "softmax".into(),
        epoch: e + 1,
        objective: v / n as f64,
        wall_time: per_epoch,
    }));
    accountant.seal();
    Ok(TrainedModel { spec: spec.clone(), layers, softmax: sm.params, accountant, metrics })
}

/// Class scores and the predicted label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    /// `σ(w·p)` for each binary problem (one entry for two classes).
    pub scores: Vec<f64>,
}

pub fn predict(model: &TrainedModel, instance: &VisibleGrid) -> Result<Prediction, NetworkError> {
    if !model.accountant.is_sealed() {
        return Err(NetworkError::InvalidSpec("model ledger is not sealed".into()));
    }
    if instance.side() != model.spec.input_side {
        return Err(NetworkError::ShapeMismatch(format!(
            "instance side {} vs model {}",
            instance.side(),
            model.spec.input_side
        )));
    }
    let f = features(&model.spec, &model.layers, instance)?;
    let scores = model.softmax.weights.iter().map(|w| logistic(w.iter().zip(&f).map(|(a, b)| a * b).sum())).collect();
    Ok(Prediction { label: model.softmax.predict(&f), scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    pub total: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassCounts>,
    /// Mean binary cross-entropy, averaged over the binary problems.
    pub loss: f64,
}

pub fn evaluate(model: &TrainedModel, test: &LabeledGrids) -> Result<EvalMetrics, NetworkError> {
    if test.is_empty() {
        return Err(NetworkError::EmptyTestSet);
    }
    let feats: Vec<Vec<f64>> =
        test.grids.par_iter().map(|v| features(&model.spec, &model.layers, v)).collect::<Result<_, _>>()?;
    let mut per_class: Vec<ClassCounts> =
        (0..model.spec.classes).map(|label| ClassCounts { label, total: 0, correct: 0 }).collect();
    let mut correct = 0;
    for (f, &y) in feats.iter().zip(&test.labels) {
        let hit = model.softmax.predict(f) == y;
        per_class[y].total += 1;
        per_class[y].correct += usize::from(hit);
        correct += usize::from(hit);
    }
    let batch = LabeledBatch::new(feats, test.labels.clone(), model.spec.classes)?;
    let loss = if model.softmax.weights.len() == 1 {
        cross_entropy(&batch, &model.softmax.weights[0])?
    } else {
        let mut total = 0.0;
        for (c, w) in model.softmax.weights.iter().enumerate() {
            let bin = LabeledBatch::new(
                batch.features.clone(),
                batch.labels.iter().map(|&l| usize::from(l == c)).collect(),
                2,
            )?;
            total += cross_entropy(&bin, w)?;
        }
        total / model.softmax.weights.len() as f64
    };
    Ok(EvalMetrics {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        per_class,
        loss: loss / test.len() as f64,
    })
}

/// Sensitivity and approximation-error report for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum AuditRecord {
    Layer {
        layer: usize,
        approximator: String,
        /// `None` beyond the first layer, whose inputs depend on trained parameters.
        data: Option<SensitivityReport>,
        delta_lemma2_domain: f64,
        delta_all_groups_domain: f64,
        /// Present for Chebyshev truncations of the logistic.
        error_bounds: Option<ErrorBounds>,
    },
    Softmax {
        feature_dim: usize,
        delta_c: f64,
    },
}

/// Sensitivities and error bounds without training. Data-based values use the
/// training sample and frozen normalizers that [`train`] would use, in the
/// same coordinates.
pub fn audit(spec: &NetworkSpec, data: &LabeledGrids) -> Result<Vec<AuditRecord>, NetworkError> {
    let shapes = spec.validate()?;
    if data.is_empty() {
        return Err(NetworkError::EmptyTrainingSet);
    }
    let idx = stratified_sample(&data.labels, spec.classes, spec.batch_size, stage_seed(spec.seed, 0, 3));
    let data = data.subset(&idx);
    let mut out = Vec::with_capacity(shapes.len() + 1);
    for (i, (ls, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        let g = shape.geometry;
        let poly = ls.approximator.polynomial()?;
        let scale = if spec.unit_box { spec.bound(g) } else { 1.0 };
        let report = if i == 0 {
            let mut z = frozen_normalizers(&data.grids, g, &spec.lrn, stage_seed(spec.seed, 1, 0))?;
            z.iter_mut().flatten().for_each(|x| *x /= scale);
            Some(sensitivity_report(&data.grids, &poly, g, &spec.lrn, &z)?)
        } else {
            None
        };
        let (dom_l2, dom_ag) = sensitivity_domain(&poly, g, &scaled_floor(&spec.lrn, scale));
        let error_bounds = match ls.approximator {
            ApproximatorKind::ChebyshevTruncated(l) => Some(logistic_error_bounds(l, g.n_h(), g.k)?),
            _ => None,
        };
        out.push(AuditRecord::Layer {
            layer: i + 1,
            approximator: ls.approximator.label(),
            data: report,
            delta_lemma2_domain: dom_l2,
            delta_all_groups_domain: dom_ag,
            error_bounds,
        });
    }
    let problems = if spec.classes == 2 { 1 } else { spec.classes };
    let d = spec.feature_dim(shapes.last().expect("nonempty"));
    out.push(AuditRecord::Softmax { feature_dim: d, delta_c: softmax_sensitivity(d) * problems as f64 });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "L")]
    pub l: usize,
    pub accuracy: f64,
    pub wall_time: f64,
    #[serde(skip)]
    pub accountant: PrivacyAccountant,
}

/// Trains and evaluates once per `L`, every layer using the logistic's
/// degree-`L` Chebyshev truncation, with the spec's seed throughout.
pub fn l_sweep(
    spec: &NetworkSpec,
    train_set: &LabeledGrids,
    test_set: &LabeledGrids,
    l_values: &[usize],
) -> Result<Vec<SweepRow>, NetworkError> {
    for (i, &l) in l_values.iter().enumerate() {
        if l == 0 || l > crate::functional_mech::MAX_EXPANSION_DEGREE {
            return Err(NetworkError::InvalidL(l));
        }
        if l_values[..i].contains(&l) {
            return Err(NetworkError::DuplicateL(l));
        }
    }
    l_values
        .iter()
        .map(|&l| {
            let t0 = Instant::now();
            let mut s = spec.clone();
            for layer in &mut s.layers {
                layer.approximator = ApproximatorKind::ChebyshevTruncated(l);
            }
            let model = train(&s, train_set)?;
            let acc = evaluate(&model, test_set)?.accuracy;
            Ok(SweepRow { l, accuracy: acc, wall_time: t0.elapsed().as_secs_f64(), accountant: model.accountant })
        })
        .collect()
}
