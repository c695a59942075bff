//! Convolutional RBM: parameters, Gibbs conditionals, energies, CD-1,
//! local response normalization and max-pooling.
//!
//! Index conventions (0-based): the hidden unit `(k,i,j)` sees the patch
//! `v[i+r][j+s]`, `r,s < N_W`, and
//! `pre^k_{ij} = Σ_{rs} W^k_{rs} v_{i+r,j+s} + b_k`.
//! This is the valid convolution of the flipped filter with `v`, and pairs with
//! the visible path `Σ_k (W^k ∗ h^k)` as a full convolution.

use crate::cheb_approx::{logistic, MonomialPolynomial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("pooling ratio {ratio} does not divide hidden side {n_h}")]
    IndivisibleShape { n_h: usize, ratio: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("visible value {value} at {index} is outside [0,1]")]
    VisibleOutOfRange { index: usize, value: f64 },
    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),
    #[error("invalid LRN hyperparameters: {0}")]
    InvalidLrn(String),
}

/// Square visible grid with entries in [0,1], stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleGrid {
    side: usize,
    values: Vec<f64>,
}

impl VisibleGrid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self, EnergyError> {
        if values.len() != side * side || side == 0 {
            return Err(EnergyError::GeometryMismatch(format!(
                "{} values for a {side}x{side} grid",
                values.len()
            )));
        }
        if let Some((index, &value)) =
            values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(EnergyError::VisibleOutOfRange { index, value });
        }
        Ok(Self { side, values })
    }

    pub fn zeros(side: usize) -> Self {
        Self { side, values: vec![0.0; side * side] }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side + j]
    }

    /// `Σ_{rs} v_{i+r,j+s}` over the `n_w×n_w` patch at `(i,j)`.
    pub fn patch_sum(&self, i: usize, j: usize, n_w: usize) -> f64 {
        let mut s = 0.0;
        for r in 0..n_w {
            let row = &self.values[(i + r) * self.side + j..(i + r) * self.side + j + n_w];
            s += row.iter().sum::<f64>();
        }
        s
    }
}

/// LRN hyperparameters `(q, l, α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnHyper {
    pub q: f64,
    pub l_span: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnHyper {
    fn default() -> Self {
        Self { q: 2.0, l_span: 5, alpha: 1e-4, beta: 0.75 }
    }
}

impl LrnHyper {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.q > 0.0) || !(self.beta > 0.0) || self.l_span < 1 || !(self.alpha >= 0.0) {
            return Err(EnergyError::InvalidLrn(format!("{self:?}")));
        }
        Ok(())
    }

    /// Smallest possible normalizer, `q^β`.
    pub fn floor(&self) -> f64 {
        self.q.powf(self.beta)
    }
}

/// Layer shape: `K` groups of `N_W×N_W` filters over an `N_V×N_V` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub n_v: usize,
    pub n_w: usize,
    pub k: usize,
}

impl Geometry {
    pub fn new(n_v: usize, n_w: usize, k: usize) -> Result<Self, EnergyError> {
        if n_w == 0 || k == 0 || n_w > n_v {
            return Err(EnergyError::GeometryMismatch(format!(
                "N_V={n_v}, N_W={n_w}, K={k}"
            )));
        }
        Ok(Self { n_v, n_w, k })
    }

    /// `N_H = N_V − N_W + 1`.
    pub fn n_h(&self) -> usize {
        self.n_v - self.n_w + 1
    }

    pub fn filter_len(&self) -> usize {
        self.n_w * self.n_w
    }

    pub fn hidden_len(&self) -> usize {
        self.k * self.n_h() * self.n_h()
    }
}

/// CRBM parameters: filters `W^k` (row-major, concatenated), group biases `b`,
/// shared visible bias `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbmParams {
    pub geometry: Geometry,
    pub filters: Vec<f64>,
    pub group_bias: Vec<f64>,
    pub visible_bias: f64,
}

impl CrbmParams {
    pub fn zeros(geometry: Geometry) -> Self {
        Self {
            geometry,
            filters: vec![0.0; geometry.k * geometry.filter_len()],
            group_bias: vec![0.0; geometry.k],
            visible_bias: 0.0,
        }
    }

    /// Zero biases and filter weights i.i.d. uniform in [−0.05, 0.05].
    pub fn init(geometry: Geometry, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = Self::zeros(geometry);
        for w in &mut p.filters {
            *w = rng.gen_range(-0.05..=0.05);
        }
        p
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        let f = self.geometry.filter_len();
        &self.filters[k * f..(k + 1) * f]
    }

    pub fn check(&self) -> Result<(), EnergyError> {
        let g = self.geometry;
        if self.filters.len() != g.k * g.filter_len() || self.group_bias.len() != g.k {
            return Err(EnergyError::GeometryMismatch("parameter lengths".into()));
        }
        if self.filters.iter().chain(&self.group_bias).any(|x| !x.is_finite())
            || !self.visible_bias.is_finite()
        {
            return Err(EnergyError::GeometryMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    fn check_visible(&self, v: &VisibleGrid) -> Result<(), EnergyError> {
        if v.side() != self.geometry.n_v {
            return Err(EnergyError::GeometryMismatch(format!(
                "visible side {} but layer expects {}",
                v.side(),
                self.geometry.n_v
            )));
        }
        Ok(())
    }
}

/// Hidden probabilities (`K×N_H×N_H`, row-major per group) and optional samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMap {
    pub probs: Vec<f64>,
    pub samples: Option<Vec<u8>>,
}

/// Preactivation of group `k`, an `N_H×N_H` map.
pub fn hidden_preactivation(
    p: &CrbmParams,
    v: &VisibleGrid,
    k: usize,
) -> Result<Vec<f64>, EnergyError> {
    p.check_visible(v)?;
    if k >= p.geometry.k {
        return Err(EnergyError::GeometryMismatch(format!("group {k} out of range")));
    }
    Ok(group_preactivation(p, v, k))
}

fn group_preactivation(p: &CrbmParams, v: &VisibleGrid, k: usize) -> Vec<f64> {
    let g = p.geometry;
    let (n_h, n_w, n_v) = (g.n_h(), g.n_w, g.n_v);
    let w = p.filter(k);
    let b = p.group_bias[k];
    let vals = v.values();
    let mut out = vec![b; n_h * n_h];
    for i in 0..n_h {
        for j in 0..n_h {
            let mut acc = 0.0;
            for r in 0..n_w {
                let vrow = &vals[(i + r) * n_v + j..(i + r) * n_v + j + n_w];
                let wrow = &w[r * n_w..(r + 1) * n_w];
                acc += vrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
            out[i * n_h + j] += acc;
        }
    }
    out
}

/// All `K` preactivation maps, concatenated.
pub fn all_preactivations(p: &CrbmParams, v: &VisibleGrid) -> Result<Vec<f64>, EnergyError> {
    p.check_visible(v)?;
    let mut out = Vec::with_capacity(p.geometry.hidden_len());
    for k in 0..p.geometry.k {
        out.extend(group_preactivation(p, v, k));
    }
    Ok(out)
}

/// `Z = max(|pre^k_{ij}|, (q + α Σ_{m∈window} (pre^m_{ij})²)^β)` with the
/// window `max(0,k−⌊l/2⌋) ..= min(K−1,k+⌊l/2⌋)`.
pub fn lrn_term(pre: &[f64], n_groups: usize, n_h: usize, k: usize, i: usize, j: usize, h: &LrnHyper) -> f64 {
    let plane = n_h * n_h;
    let half = h.l_span / 2;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(n_groups - 1);
    let idx = i * n_h + j;
    let sq: f64 = (lo..=hi).map(|m| pre[m * plane + idx].powi(2)).sum();
    let x = pre[k * plane + idx];
    x.abs().max((h.q + h.alpha * sq).powf(h.beta))
}

/// LRN normalizers for every hidden unit.
pub fn lrn_all(pre: &[f64], n_groups: usize, n_h: usize, h: &LrnHyper) -> Vec<f64> {
    let mut out = Vec::with_capacity(pre.len());
    for k in 0..n_groups {
        for i in 0..n_h {
            for j in 0..n_h {
                out.push(lrn_term(pre, n_groups, n_h, k, i, j, h));
            }
        }
    }
    out
}

/// `σ(pre)` or, when `normalized`, `σ(pre/Z)`.
pub fn hidden_prob(
    p: &CrbmParams,
    v: &VisibleGrid,
    hyper: &LrnHyper,
    normalized: bool,
) -> Result<Vec<f64>, EnergyError> {
    let pre = all_preactivations(p, v)?;
    Ok(probs_from_pre(&pre, p.geometry, hyper, normalized))
}

fn probs_from_pre(pre: &[f64], g: Geometry, hyper: &LrnHyper, normalized: bool) -> Vec<f64> {
    if normalized {
        let z = lrn_all(pre, g.k, g.n_h(), hyper);
        pre.iter().zip(&z).map(|(x, z)| logistic(x / z)).collect()
    } else {
        pre.iter().map(|&x| logistic(x)).collect()
    }
}

/// `σ(Σ_k (W^k ∗ h^k) + c)` with a full convolution.
pub fn visible_prob(p: &CrbmParams, h: &[f64]) -> Result<VisibleGrid, EnergyError> {
    let g = p.geometry;
    if h.len() != g.hidden_len() {
        return Err(EnergyError::GeometryMismatch(format!(
            "hidden length {} but layer has {}",
            h.len(),
            g.hidden_len()
        )));
    }
    let (n_h, n_w, n_v) = (g.n_h(), g.n_w, g.n_v);
    let mut acc = vec![p.visible_bias; n_v * n_v];
    for k in 0..g.k {
        let w = p.filter(k);
        let hk = &h[k * n_h * n_h..(k + 1) * n_h * n_h];
        for i in 0..n_h {
            for j in 0..n_h {
                let hv = hk[i * n_h + j];
                if hv == 0.0 {
                    continue;
                }
                for r in 0..n_w {
                    for s in 0..n_w {
                        acc[(i + r) * n_v + j + s] += hv * w[r * n_w + s];
                    }
                }
            }
        }
    }
    Ok(VisibleGrid { side: n_v, values: acc.into_iter().map(logistic).collect() })
}

/// One Gibbs step: `h ~ Bernoulli(P(h|v))`, then the mean-field reconstruction `P(v|h)`.
pub fn gibbs_step<R: Rng>(
    p: &CrbmParams,
    v: &VisibleGrid,
    hyper: &LrnHyper,
    normalized: bool,
    rng: &mut R,
) -> Result<(HiddenMap, VisibleGrid), EnergyError> {
    let probs = hidden_prob(p, v, hyper, normalized)?;
    let samples: Vec<u8> = probs.iter().map(|&q| u8::from(rng.gen::<f64>() < q)).collect();
    let hf: Vec<f64> = samples.iter().map(|&s| f64::from(s)).collect();
    let recon = visible_prob(p, &hf)?;
    Ok((HiddenMap { probs, samples: Some(samples) }, recon))
}

/// `Σ_{ij} h_{ij} v_{i+r,j+s}` for every filter offset of one group.
fn correlate(h: &[f64], v: &VisibleGrid, g: Geometry) -> Vec<f64> {
    let (n_h, n_w, n_v) = (g.n_h(), g.n_w, g.n_v);
    let vals = v.values();
    let mut out = vec![0.0; n_w * n_w];
    for r in 0..n_w {
        for s in 0..n_w {
            let mut acc = 0.0;
            for i in 0..n_h {
                let vrow = &vals[(i + r) * n_v + s..(i + r) * n_v + s + n_h];
                let hrow = &h[i * n_h..(i + 1) * n_h];
                acc += vrow.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>();
            }
            out[r * n_w + s] = acc;
        }
    }
    out
}

/// CD-1 update averaged over the batch. Filter and group-bias statistics are
/// divided by `N_H²`, the visible-bias statistic by `N_V²`.
pub fn cd1_update<R: Rng>(
    p: &CrbmParams,
    batch: &[VisibleGrid],
    lr: f64,
    hyper: &LrnHyper,
    normalized: bool,
    rng: &mut R,
) -> Result<CrbmParams, EnergyError> {
    if batch.is_empty() {
        return Err(EnergyError::EmptyBatch);
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(EnergyError::InvalidLearningRate(lr));
    }
    let g = p.geometry;
    let (n_h, fl) = (g.n_h(), g.filter_len());
    let plane = n_h * n_h;
    let mut dw = vec![0.0; g.k * fl];
    let mut db = vec![0.0; g.k];
    let mut dc = 0.0;
    for v in batch {
        let (hm, recon) = gibbs_step(p, v, hyper, normalized, rng)?;
        let neg = hidden_prob(p, &recon, hyper, normalized)?;
        for k in 0..g.k {
            let pos_h = &hm.probs[k * plane..(k + 1) * plane];
            let neg_h = &neg[k * plane..(k + 1) * plane];
            let pc = correlate(pos_h, v, g);
            let nc = correlate(neg_h, &recon, g);
            for t in 0..fl {
                dw[k * fl + t] += pc[t] - nc[t];
            }
            db[k] += pos_h.iter().sum::<f64>() - neg_h.iter().sum::<f64>();
        }
        dc += v.values().iter().sum::<f64>() - recon.values().iter().sum::<f64>();
    }
    let m = batch.len() as f64;
    let sh = lr / (m * plane as f64);
    let mut out = p.clone();
    for (w, d) in out.filters.iter_mut().zip(&dw) {
        *w += sh * d;
    }
    for (b, d) in out.group_bias.iter_mut().zip(&db) {
        *b += sh * d;
    }
    out.visible_bias += lr / (m * (g.n_v * g.n_v) as f64) * dc;
    Ok(out)
}

/// Mean squared error between `v` and its mean-field reconstruction through `P(h|v)`.
pub fn reconstruction_error(
    p: &CrbmParams,
    batch: &[VisibleGrid],
    hyper: &LrnHyper,
    normalized: bool,
) -> Result<f64, EnergyError> {
    if batch.is_empty() {
        return Err(EnergyError::EmptyBatch);
    }
    let mut total = 0.0;
    for v in batch {
        let h = hidden_prob(p, v, hyper, normalized)?;
        let r = visible_prob(p, &h)?;
        total += v
            .values()
            .iter()
            .zip(r.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / v.values().len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// `E = −Σ h W v − Σ_k b_k Σ h^k − c Σ v` for a binary (or real) `h`.
pub fn energy_exact(p: &CrbmParams, v: &VisibleGrid, h: &[f64]) -> Result<f64, EnergyError> {
    p.check_visible(v)?;
    let g = p.geometry;
    if h.len() != g.hidden_len() {
        return Err(EnergyError::GeometryMismatch("hidden length".into()));
    }
    let pre = all_preactivations(p, v)?;
    let hp: f64 = h.iter().zip(&pre).map(|(a, b)| a * b).sum();
    Ok(-hp - p.visible_bias * v.values().iter().sum::<f64>())
}

/// Energy with `h` replaced by `σ(pre/Z)` (LRN from the current parameters).
pub fn energy_prob(p: &CrbmParams, v: &VisibleGrid, hyper: &LrnHyper) -> Result<f64, EnergyError> {
    let pre = all_preactivations(p, v)?;
    let z = lrn_all(&pre, p.geometry.k, p.geometry.n_h(), hyper);
    Ok(energy_with(&pre, &z, |u| logistic(u)) - p.visible_bias * v.values().iter().sum::<f64>())
}

/// Energy with the logistic replaced by `Σ α_l (pre/Z)^l` (LRN from the current parameters).
pub fn energy_approx(
    p: &CrbmParams,
    v: &VisibleGrid,
    hyper: &LrnHyper,
    poly: &MonomialPolynomial,
) -> Result<f64, EnergyError> {
    let pre = all_preactivations(p, v)?;
    let z = lrn_all(&pre, p.geometry.k, p.geometry.n_h(), hyper);
    energy_approx_with_z(p, v, &z, poly)
}

/// Approximated energy with caller-supplied normalizers `z` (one per hidden unit).
pub fn energy_approx_with_z(
    p: &CrbmParams,
    v: &VisibleGrid,
    z: &[f64],
    poly: &MonomialPolynomial,
) -> Result<f64, EnergyError> {
    let pre = all_preactivations(p, v)?;
    if z.len() != pre.len() {
        return Err(EnergyError::GeometryMismatch("normalizer length".into()));
    }
    Ok(energy_with(&pre, z, |u| poly.eval(u)) - p.visible_bias * v.values().iter().sum::<f64>())
}

fn energy_with(pre: &[f64], z: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    -pre.iter().zip(z).map(|(&x, &z)| f(x / z) * x).sum::<f64>()
}

/// Block maximum over `ratio×ratio` tiles of each group's `N_H×N_H` map.
pub fn max_pool(probs: &[f64], n_groups: usize, n_h: usize, ratio: usize) -> Result<Vec<f64>, EnergyError> {
    if ratio == 0 || n_h % ratio != 0 {
        return Err(EnergyError::IndivisibleShape { n_h, ratio });
    }
    if probs.len() != n_groups * n_h * n_h {
        return Err(EnergyError::GeometryMismatch("pooling input length".into()));
    }
    let m = n_h / ratio;
    let mut out = vec![f64::NEG_INFINITY; n_groups * m * m];
    for k in 0..n_groups {
        for i in 0..n_h {
            for j in 0..n_h {
                let o = &mut out[k * m * m + (i / ratio) * m + j / ratio];
                *o = o.max(probs[k * n_h * n_h + i * n_h + j]);
            }
        }
    }
    Ok(out)
}

/// Hidden probabilities for a whole batch, in parallel.
pub fn batch_hidden_probs(
    p: &CrbmParams,
    batch: &[VisibleGrid],
    hyper: &LrnHyper,
    normalized: bool,
) -> Result<Vec<Vec<f64>>, EnergyError> {
    batch.par_iter().map(|v| hidden_prob(p, v, hyper, normalized)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cheb_approx::MonomialPolynomial;

    fn one_by_one(w: f64, b: f64, c: f64) -> CrbmParams {
        let g = Geometry::new(1, 1, 1).unwrap();
        CrbmParams { geometry: g, filters: vec![w], group_bias: vec![b], visible_bias: c }
    }

    #[test]
    fn preactivation_examples() {
        let p = one_by_one(0.0, 0.0, 0.0);
        let v = VisibleGrid::new(1, vec![1.0]).unwrap();
        assert_eq!(hidden_preactivation(&p, &v, 0).unwrap(), vec![0.0]);
        let p = one_by_one(2.0, 1.0, 0.0);
        let v = VisibleGrid::new(1, vec![0.5]).unwrap();
        assert_eq!(hidden_preactivation(&p, &v, 0).unwrap(), vec![2.0]);
        let g = Geometry::new(2, 1, 1).unwrap();
        let p = CrbmParams { geometry: g, filters: vec![1.0], group_bias: vec![0.0], visible_bias: 0.0 };
        let v = VisibleGrid::new(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(hidden_preactivation(&p, &v, 0).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn geometry_mismatch_is_reported() {
        let p = one_by_one(1.0, 0.0, 0.0);
        let v = VisibleGrid::zeros(3);
        assert!(matches!(hidden_preactivation(&p, &v, 0), Err(EnergyError::GeometryMismatch(_))));
        assert!(Geometry::new(2, 3, 1).is_err());
    }

    #[test]
    fn lrn_examples() {
        let h = LrnHyper::default();
        let pre = vec![5.0, 0.0, 0.0];
        assert_eq!(lrn_term(&pre, 3, 1, 0, 0, 0, &h), 5.0);
        let zero = vec![0.0; 3];
        assert!((lrn_term(&zero, 3, 1, 1, 0, 0, &h) - 2f64.powf(0.75)).abs() < 1e-15);
        assert_eq!((h.q, h.l_span, h.alpha, h.beta), (2.0, 5, 1e-4, 0.75));
    }

    #[test]
    fn lrn_window_is_clipped() {
        let h = LrnHyper { q: 1.0, l_span: 3, alpha: 1.0, beta: 1.0 };
        // groups 0..4 with 1x1 maps; window of group 0 is {0,1}
        let pre = vec![0.1, 0.2, 0.3, 0.4];
        let z0 = lrn_term(&pre, 4, 1, 0, 0, 0, &h);
        assert!((z0 - (1.0 + 0.01 + 0.04)).abs() < 1e-15);
        let z3 = lrn_term(&pre, 4, 1, 3, 0, 0, &h);
        assert!((z3 - (1.0 + 0.09 + 0.16)).abs() < 1e-15);
    }

    #[test]
    fn probability_examples() {
        let g = Geometry::new(3, 2, 2).unwrap();
        let p = CrbmParams::zeros(g);
        let v = VisibleGrid::new(3, vec![0.3; 9]).unwrap();
        for norm in [false, true] {
            assert!(hidden_prob(&p, &v, &LrnHyper::default(), norm).unwrap().iter().all(|&x| x == 0.5));
        }
        let h0 = vec![0.0; g.hidden_len()];
        assert!(visible_prob(&p, &h0).unwrap().values().iter().all(|&x| x == 0.5));
        let mut sat = p.clone();
        sat.visible_bias = -1000.0;
        assert!(visible_prob(&sat, &h0).unwrap().values().iter().all(|&x| x < 1e-300));
        let q = one_by_one(1.0, 0.0, 0.0);
        assert!((visible_prob(&q, &[1.0]).unwrap().values()[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        // pre = 2, Z = 2 (LRN with q^β below 2, so Z = |pre| = 2)
        let r = one_by_one(2.0, 0.0, 0.0);
        let v1 = VisibleGrid::new(1, vec![1.0]).unwrap();
        let hp = hidden_prob(&r, &v1, &LrnHyper::default(), true).unwrap();
        assert!((hp[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        let p = one_by_one(1.0, 1.0, 1.0);
        let v = VisibleGrid::new(1, vec![1.0]).unwrap();
        assert_eq!(energy_exact(&p, &v, &[1.0]).unwrap(), -3.0);
        let p = one_by_one(0.7, 0.0, 0.0);
        assert_eq!(energy_exact(&p, &v, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_prob_closed_form() {
        let g = Geometry::new(4, 2, 3).unwrap();
        let mut p = CrbmParams::zeros(g);
        let hyper = LrnHyper::default();
        assert_eq!(energy_prob(&p, &VisibleGrid::zeros(4), &hyper).unwrap(), 0.0);
        let bh = 0.8;
        p.group_bias = vec![bh; 3];
        let v = VisibleGrid::new(4, vec![0.25; 16]).unwrap();
        let pre = all_preactivations(&p, &v).unwrap();
        let z = lrn_all(&pre, 3, 3, &hyper);
        let expect: f64 = z.iter().map(|z| -bh * logistic(bh / z)).sum();
        assert!((energy_prob(&p, &v, &hyper).unwrap() - expect).abs() < 1e-12);
        // all Z equal to q^β here because 0.8 < q^β and the α term is tiny
        let zf = (2.0 + 1e-4 * 3.0 * 0.64f64).powf(0.75);
        assert!((z[4] - zf).abs() < 1e-15);
    }

    #[test]
    fn energy_approx_constant_poly() {
        let g = Geometry::new(3, 2, 2).unwrap();
        let mut p = CrbmParams::init(g, 3);
        p.visible_bias = 0.3;
        let v = VisibleGrid::new(3, (0..9).map(|i| i as f64 / 9.0).collect()).unwrap();
        let half = MonomialPolynomial::new(vec![0.5]);
        let e = energy_approx(&p, &v, &LrnHyper::default(), &half).unwrap();
        let mut expect = -0.3 * v.values().iter().sum::<f64>();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    for r in 0..2 {
                        for s in 0..2 {
                            expect -= 0.5 * p.filter(k)[r * 2 + s] * v.at(i + r, j + s);
                        }
                    }
                }
            }
        }
        assert!((e - expect).abs() < 1e-12);
    }

    #[test]
    fn pooling_examples() {
        let c = vec![0.3; 16];
        assert_eq!(max_pool(&c, 1, 4, 2).unwrap(), vec![0.3; 4]);
        assert_eq!(max_pool(&[0.1, 0.9, 0.2, 0.3], 1, 2, 2).unwrap(), vec![0.9]);
        let m: Vec<f64> = (0..18).map(|x| x as f64 / 20.0).collect();
        assert_eq!(max_pool(&m, 2, 3, 3).unwrap(), vec![8.0 / 20.0, 17.0 / 20.0]);
        assert!(matches!(max_pool(&m, 2, 3, 2), Err(EnergyError::IndivisibleShape { .. })));
    }

    #[test]
    fn gibbs_saturated_and_deterministic() {
        let g = Geometry::new(4, 2, 2).unwrap();
        let mut p = CrbmParams::zeros(g);
        p.group_bias = vec![1000.0; 2];
        let v = VisibleGrid::new(4, vec![0.5; 16]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (h, _) = gibbs_step(&p, &v, &LrnHyper::default(), false, &mut rng).unwrap();
        assert!(h.samples.unwrap().iter().all(|&s| s == 1));
        let q = CrbmParams::init(g, 9);
        let a = gibbs_step(&q, &v, &LrnHyper::default(), true, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let b = gibbs_step(&q, &v, &LrnHyper::default(), true, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn cd1_errors_and_zero_lr() {
        let g = Geometry::new(4, 2, 2).unwrap();
        let p = CrbmParams::init(g, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(
            cd1_update(&p, &[], 0.1, &LrnHyper::default(), false, &mut rng),
            Err(EnergyError::EmptyBatch)
        );
        let batch = vec![VisibleGrid::new(4, vec![0.2; 16]).unwrap()];
        let q = cd1_update(&p, &batch, 0.0, &LrnHyper::default(), false, &mut rng).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let g = Geometry::new(6, 3, 4).unwrap();
        let a = CrbmParams::init(g, 11);
        assert_eq!(a, CrbmParams::init(g, 11));
        assert_ne!(a, CrbmParams::init(g, 12));
        assert!(a.filters.iter().all(|w| w.abs() <= 0.05));
        assert!(a.group_bias.iter().all(|&b| b == 0.0) && a.visible_bias == 0.0);
    }
}
