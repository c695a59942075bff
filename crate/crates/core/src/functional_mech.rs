//! Functional mechanism for the approximated CRBM energy.
//!
//! With frozen normalizers `Z` and `a = (v_patch, 1)/Z`, one hidden unit of
//! group `k` contributes `−Z Σ_l α_l (a·x)^{l+1}` to the energy, where
//! `x = (W^k, b_k)`. Expanding the powers gives the monomial coefficients
//! `λ_φ`, one per multi-index of degree `1..=L+1` over the variables of a
//! single group, plus the linear visible-bias coefficient `−Σ v`.
//!
//! Monomials are canonical sorted variable-id lists. Group `k` owns the ids
//! `k(N_W²+1) .. k(N_W²+1)+N_W²` (filter then bias) and `c` is the last id.
//! Noise is drawn in ascending key order, which within a group is a depth-first
//! preorder over sorted index tuples. [`perturb`] and [`perturb_implicit`] use
//! that same order, so they produce the same noise for the same seed.

use crate::cheb_approx::MonomialPolynomial;
use crate::energy_model::{all_preactivations, lrn_all, CrbmParams, EnergyError, Geometry, LrnHyper, VisibleGrid};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Largest `L` accepted by coefficient expansion.
pub const MAX_EXPANSION_DEGREE: usize = 9;

/// Largest explicit table [`extract_coefficients`] will build.
pub const MAX_EXPLICIT_ENTRIES: u64 = 2_000_000;

const CHUNK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmError {
    #[error("normalizer {value} is not strictly positive")]
    NonPositiveNormalizer { value: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("Laplace scale {0} is not strictly positive")]
    NonPositiveScale(f64),
    #[error("objective was already perturbed")]
    AlreadyPerturbed,
    #[error("privacy budget and sensitivity must be positive (delta={delta}, epsilon={epsilon})")]
    NonPositiveBudget { delta: f64, epsilon: f64 },
    #[error("ledger is sealed")]
    SealedLedger,
    #[error("explicit table would hold {0} monomials; use the implicit form")]
    TableTooLarge(u64),
    #[error("polynomial degree {0} exceeds the expansion guard")]
    DegreeTooLarge(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Variable numbering for a layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub geometry: Geometry,
}

impl VarLayout {
    pub fn new(geometry: Geometry) -> Self {
        Self { geometry }
    }

    /// Variables per group: `N_W² + 1`.
    pub fn group_vars(&self) -> usize {
        self.geometry.filter_len() + 1
    }

    pub fn var_w(&self, k: usize, rs: usize) -> u32 {
        (k * self.group_vars() + rs) as u32
    }

    pub fn var_b(&self, k: usize) -> u32 {
        (k * self.group_vars() + self.geometry.filter_len()) as u32
    }

    pub fn var_c(&self) -> u32 {
        (self.geometry.k * self.group_vars()) as u32
    }

    pub fn n_vars(&self) -> usize {
        self.geometry.k * self.group_vars() + 1
    }

    /// Flattens parameters in variable-id order.
    pub fn flatten(&self, p: &CrbmParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_vars());
        for k in 0..self.geometry.k {
            x.extend_from_slice(p.filter(k));
            x.push(p.group_bias[k]);
        }
        x.push(p.visible_bias);
        x
    }

    /// Inverse of [`VarLayout::flatten`].
    pub fn unflatten(&self, x: &[f64]) -> CrbmParams {
        let g = self.geometry;
        let f = g.filter_len();
        let mut p = CrbmParams::zeros(g);
        for k in 0..g.k {
            let base = k * (f + 1);
            p.filters[k * f..(k + 1) * f].copy_from_slice(&x[base..base + f]);
            p.group_bias[k] = x[base + f];
        }
        p.visible_bias = x[g.k * (f + 1)];
        p
    }
}

/// Number of monomials of degree `1..=d` in `n` variables: `C(n+d, d) − 1`.
pub fn monomial_count(n: usize, d: usize) -> u64 {
    let mut c: u128 = 1;
    for i in 1..=d as u128 {
        c = c * (n as u128 + i) / i;
    }
    (c - 1) as u64
}

/// Normalizers computed from a public, data-independent initialization.
pub fn frozen_normalizers(
    batch: &[VisibleGrid],
    geometry: Geometry,
    hyper: &LrnHyper,
    init_seed: u64,
) -> Result<Vec<Vec<f64>>, FmError> {
    let p = CrbmParams::init(geometry, init_seed);
    batch
        .par_iter()
        .map(|v| {
            let pre = all_preactivations(&p, v)?;
            Ok(lrn_all(&pre, geometry.k, geometry.n_h(), hyper))
        })
        .collect()
}

fn check_inputs(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    z: &[Vec<f64>],
) -> Result<(), FmError> {
    if batch.is_empty() {
        return Err(FmError::EmptyDataset);
    }
    if poly.degree() > MAX_EXPANSION_DEGREE {
        return Err(FmError::DegreeTooLarge(poly.degree()));
    }
    if z.len() != batch.len() {
        return Err(FmError::ShapeMismatch(format!("{} normalizer maps for {} instances", z.len(), batch.len())));
    }
    for (v, zt) in batch.iter().zip(z) {
        if v.side() != geometry.n_v {
            return Err(EnergyError::GeometryMismatch(format!("instance side {} vs {}", v.side(), geometry.n_v)).into());
        }
        if zt.len() != geometry.hidden_len() {
            return Err(FmError::ShapeMismatch("normalizer map length".into()));
        }
        if let Some(&value) = zt.iter().find(|z| !(**z > 0.0) || !z.is_finite()) {
            return Err(FmError::NonPositiveNormalizer { value });
        }
    }
    Ok(())
}

/// `(v_patch, 1)` for hidden position `(i,j)`.
fn patch_vector(v: &VisibleGrid, i: usize, j: usize, n_w: usize, out: &mut [f64]) {
    for r in 0..n_w {
        for s in 0..n_w {
            out[r * n_w + s] = v.at(i + r, j + s);
        }
    }
    out[n_w * n_w] = 1.0;
}

/// Adds `scale · α_{m−1} · multinom(c) · a^c` to `out` for every monomial `c` of
/// degree `m = 1..=max_deg`, in depth-first preorder.
fn accumulate_group(a: &[f64], scale: f64, alpha: &[f64], max_deg: usize, out: &mut [f64]) {
    fn rec(
        a: &[f64],
        scale: f64,
        alpha: &[f64],
        max_deg: usize,
        out: &mut [f64],
        idx: &mut usize,
        start: usize,
        depth: usize,
        run: usize,
        t: f64,
    ) {
        let m = depth + 1;
        for j in start..a.len() {
            let e = if j == start && depth > 0 { run + 1 } else { 1 };
            let tc = t * a[j] * m as f64 / e as f64;
            out[*idx] += scale * alpha[m - 1] * tc;
            *idx += 1;
            if m < max_deg {
                rec(a, scale, alpha, max_deg, out, idx, j, m, e, tc);
            }
        }
    }
    let mut idx = 0;
    rec(a, scale, alpha, max_deg, out, &mut idx, 0, 0, 0, 1.0);
}

/// Every monomial of degree `1..=max_deg` over `n` variables, in preorder.
pub fn monomials_preorder(n: usize, max_deg: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, max_deg: usize, prefix: &mut Vec<u32>, start: usize, out: &mut Vec<Vec<u32>>) {
        for j in start..n {
            prefix.push(j as u32);
            out.push(prefix.clone());
            if prefix.len() < max_deg {
                rec(n, max_deg, prefix, j, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, max_deg, &mut Vec::new(), 0, &mut out);
    out
}

/// Coefficients of one group's energy part, summed over instances, in preorder.
fn group_coefficients(
    batch: &[VisibleGrid],
    alpha: &[f64],
    geometry: Geometry,
    z: &[Vec<f64>],
    k: usize,
) -> Vec<f64> {
    let layout = VarLayout::new(geometry);
    let m = layout.group_vars();
    let max_deg = alpha.len();
    let count = monomial_count(m, max_deg) as usize;
    let n_h = geometry.n_h();
    let plane = n_h * n_h;
    let partials: Vec<Vec<f64>> = batch
        .par_chunks(CHUNK)
        .zip(z.par_chunks(CHUNK))
        .map(|(vs, zs)| {
            let mut acc = vec![0.0; count];
            let mut a = vec![0.0; m];
            for (v, zt) in vs.iter().zip(zs) {
                for i in 0..n_h {
                    for j in 0..n_h {
                        let zz = zt[k * plane + i * n_h + j];
                        patch_vector(v, i, j, geometry.n_w, &mut a);
                        a.iter_mut().for_each(|x| *x /= zz);
                        accumulate_group(&a, -zz, alpha, max_deg, &mut acc);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; count];
    for p in partials {
        out.iter_mut().zip(p).for_each(|(o, x)| *o += x);
    }
    out
}

/// Explicit monomial → coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub geometry: Geometry,
    /// Highest monomial degree, `L+1`.
    pub max_degree: usize,
    pub entries: BTreeMap<Vec<u32>, f64>,
    pub instance_count: usize,
    perturbed: bool,
}

impl CoefficientTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_perturbed(&self) -> bool {
        self.perturbed
    }

    pub fn get(&self, monomial: &[u32]) -> f64 {
        self.entries.get(monomial).copied().unwrap_or(0.0)
    }

    /// Entrywise sum (tables over the same layout).
    pub fn merged(&self, other: &Self) -> Result<Self, FmError> {
        if self.geometry != other.geometry || self.max_degree != other.max_degree {
            return Err(FmError::ShapeMismatch("tables over different layouts".into()));
        }
        let mut out = self.clone();
        for (k, v) in &other.entries {
            *out.entries.entry(k.clone()).or_insert(0.0) += v;
        }
        out.instance_count += other.instance_count;
        Ok(out)
    }

    /// `Σ_φ |λ_φ − λ'_φ|`.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        let mut d = 0.0;
        for (k, v) in &self.entries {
            d += (v - other.get(k)).abs();
        }
        for (k, v) in &other.entries {
            if !self.entries.contains_key(k) {
                d += v.abs();
            }
        }
        d
    }

    /// `Σ_φ λ_φ φ(x)` and its gradient, with `x` in variable-id order.
    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut val = 0.0;
        let mut grad = vec![0.0; x.len()];
        for (mono, &lam) in &self.entries {
            let prod: f64 = mono.iter().map(|&i| x[i as usize]).product();
            val += lam * prod;
            for (pos, &i) in mono.iter().enumerate() {
                if mono[..pos].contains(&i) {
                    continue;
                }
                let e = mono.iter().filter(|&&j| j == i).count();
                let rest: f64 = mono.iter().filter(|&&j| j != i).map(|&j| x[j as usize]).product();
                grad[i as usize] += lam * e as f64 * x[i as usize].powi(e as i32 - 1) * rest;
            }
        }
        (val, grad)
    }
}

/// Expands the approximated energy of `batch` into monomial coefficients.
pub fn extract_coefficients(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: &[Vec<f64>],
) -> Result<CoefficientTable, FmError> {
    check_inputs(batch, poly, geometry, frozen_z)?;
    let layout = VarLayout::new(geometry);
    let max_deg = poly.degree() + 1;
    let per_group = monomial_count(layout.group_vars(), max_deg);
    let total = per_group * geometry.k as u64 + 1;
    if total > MAX_EXPLICIT_ENTRIES {
        return Err(FmError::TableTooLarge(total));
    }
    let monos = monomials_preorder(layout.group_vars(), max_deg);
    let mut entries = BTreeMap::new();
    for k in 0..geometry.k {
        let coeffs = group_coefficients(batch, poly.coeffs(), geometry, frozen_z, k);
        let offset = (k * layout.group_vars()) as u32;
        for (m, c) in monos.iter().zip(coeffs) {
            entries.insert(m.iter().map(|i| i + offset).collect::<Vec<u32>>(), c);
        }
    }
    let vsum: f64 = batch.iter().map(|v| v.values().iter().sum::<f64>()).sum();
    entries.insert(vec![layout.var_c()], -vsum);
    Ok(CoefficientTable { geometry, max_degree: max_deg, entries, instance_count: batch.len(), perturbed: false })
}

/// `G(t,k) = Σ_{ij} Σ_l |α_l| (1+S)((S+1)/Z)^l`, the L1 mass of one instance's
/// group-`k` coefficients (`S` the patch sum).
pub fn group_sensitivity_terms(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, FmError> {
    check_inputs(batch, poly, geometry, frozen_z)?;
    let n_h = geometry.n_h();
    let plane = n_h * n_h;
    let abs_alpha: Vec<f64> = poly.coeffs().iter().map(|a| a.abs()).collect();
    Ok(batch
        .par_iter()
        .zip(frozen_z.par_iter())
        .map(|(v, zt)| {
            let sums: Vec<f64> = (0..plane).map(|p| v.patch_sum(p / n_h, p % n_h, geometry.n_w)).collect();
            (0..geometry.k)
                .map(|k| {
                    let mut g = 0.0;
                    for (p, &s) in sums.iter().enumerate() {
                        let ratio = (s + 1.0) / zt[k * plane + p];
                        let mut pow = 1.0;
                        let mut acc = 0.0;
                        for a in &abs_alpha {
                            acc += a * pow;
                            pow *= ratio;
                        }
                        g += acc * (1.0 + s);
                    }
                    g
                })
                .collect()
        })
        .collect())
}

/// Single-group sensitivity with its argmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2 {
    pub delta: f64,
    pub argmax_instance: usize,
    pub argmax_group: usize,
}

fn max_visible_sum(batch: &[VisibleGrid]) -> f64 {
    batch.iter().map(|v| v.values().iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `Δ = 2 max_{t,k} G(t,k) + max_t Σ|v_t|`.
pub fn sensitivity_lemma2(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: &[Vec<f64>],
) -> Result<Lemma2, FmError> {
    let g = group_sensitivity_terms(batch, poly, geometry, frozen_z)?;
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (t, row) in g.iter().enumerate() {
        for (k, &x) in row.iter().enumerate() {
            if x > best.0 {
                best = (x, t, k);
            }
        }
    }
    Ok(Lemma2 { delta: 2.0 * best.0 + max_visible_sum(batch), argmax_instance: best.1, argmax_group: best.2 })
}

/// `2 max_t Σ_k G(t,k) + max_t Σ|v_t|`, an L1 bound on the whole merged
/// table for any group count. Groups own disjoint monomials, so replacing one
/// record moves the table by at most the two records' total masses. It equals
/// [`sensitivity_lemma2`] when `K = 1`.
pub fn sensitivity_all_groups(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: &[Vec<f64>],
) -> Result<f64, FmError> {
    let g = group_sensitivity_terms(batch, poly, geometry, frozen_z)?;
    let mass = g.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    Ok(2.0 * mass + max_visible_sum(batch))
}

/// Data-independent worst case of `G` over inputs in [0,1] (`S ≤ N_W²`, `Z ≥ q^β`),
/// returned as `(single_group, all_groups)`.
pub fn sensitivity_domain(poly: &MonomialPolynomial, geometry: Geometry, hyper: &LrnHyper) -> (f64, f64) {
    let s = geometry.filter_len() as f64;
    let ratio = (s + 1.0) / hyper.floor();
    let mut pow = 1.0;
    let mut acc = 0.0;
    for a in poly.coeffs() {
        acc += a.abs() * pow;
        pow *= ratio;
    }
    let g = (geometry.n_h() * geometry.n_h()) as f64 * acc * (1.0 + s);
    let vmax = (geometry.n_v * geometry.n_v) as f64;
    (2.0 * g + vmax, 2.0 * geometry.k as f64 * g + vmax)
}

fn patch_abs_sums(v: &VisibleGrid, geometry: Geometry) -> Vec<f64> {
    let n_h = geometry.n_h();
    (0..n_h * n_h).map(|p| v.patch_sum(p / n_h, p % n_h, geometry.n_w)).collect()
}

/// Sensitivity computed from hidden values `h` (one `K×N_H²` map per instance):
/// `2 max_{t,k} [Σ_{ij} |h| Σ_{rs}|v_patch| + Σ_{ij}|h| + Σ|v|]`.
pub fn sensitivity_naive_h(
    batch: &[VisibleGrid],
    geometry: Geometry,
    h: &[Vec<f64>],
) -> Result<f64, FmError> {
    if batch.is_empty() {
        return Err(FmError::EmptyDataset);
    }
    if h.len() != batch.len() || h.iter().any(|m| m.len() != geometry.hidden_len()) {
        return Err(FmError::ShapeMismatch("hidden maps".into()));
    }
    let plane = geometry.n_h() * geometry.n_h();
    let mut best: f64 = 0.0;
    for (v, ht) in batch.iter().zip(h) {
        let sums = patch_abs_sums(v, geometry);
        let vs: f64 = v.values().iter().map(|x| x.abs()).sum();
        for k in 0..geometry.k {
            let hk = &ht[k * plane..(k + 1) * plane];
            let term: f64 = hk.iter().zip(&sums).map(|(a, s)| a.abs() * s).sum::<f64>()
                + hk.iter().map(|a| a.abs()).sum::<f64>()
                + vs;
            best = best.max(term);
        }
    }
    Ok(2.0 * best)
}

/// [`sensitivity_naive_h`] with every hidden unit set to 1.
pub fn sensitivity_maximal(batch: &[VisibleGrid], geometry: Geometry) -> Result<f64, FmError> {
    let ones = vec![vec![1.0; geometry.hidden_len()]; batch.len()];
    sensitivity_naive_h(batch, geometry, &ones)
}

/// Audit row comparing the sensitivity variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub delta_lemma2: f64,
    pub delta_naive_h0: f64,
    pub delta_naive_h1: f64,
    pub delta_maximal: f64,
    pub argmax_instance: usize,
    pub argmax_group: usize,
    pub delta_all_groups: f64,
    pub delta_lemma2_domain: f64,
    pub delta_all_groups_domain: f64,
}

pub fn sensitivity_report(
    batch: &[VisibleGrid],
    poly: &MonomialPolynomial,
    geometry: Geometry,
    hyper: &LrnHyper,
    frozen_z: &[Vec<f64>],
) -> Result<SensitivityReport, FmError> {
    let l2 = sensitivity_lemma2(batch, poly, geometry, frozen_z)?;
    let zeros = vec![vec![0.0; geometry.hidden_len()]; batch.len()];
    let (dom_l2, dom_ag) = sensitivity_domain(poly, geometry, hyper);
    Ok(SensitivityReport {
        delta_lemma2: l2.delta,
        delta_naive_h0: sensitivity_naive_h(batch, geometry, &zeros)?,
        delta_naive_h1: sensitivity_maximal(batch, geometry)?,
        delta_maximal: sensitivity_maximal(batch, geometry)?,
        argmax_instance: l2.argmax_instance,
        argmax_group: l2.argmax_group,
        delta_all_groups: sensitivity_all_groups(batch, poly, geometry, frozen_z)?,
        delta_lemma2_domain: dom_l2,
        delta_all_groups_domain: dom_ag,
    })
}

/// Uniform draw in the open interval (0,1) from one 64-bit word.
pub fn uniform_open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Inverse Laplace CDF: `−s·sgn(u−½)·ln(1 − 2|u−½|)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let d = u - 0.5;
    -scale * d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

/// Laplace CDF with location 0.
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// One Laplace(0, `scale`) draw by inverse CDF from a single uniform.
pub fn laplace_sample<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> Result<f64, FmError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(FmError::NonPositiveScale(scale));
    }
    Ok(laplace_from_uniform(uniform_open01(rng), scale))
}

/// One-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// `sup |F_n − F|` of `samples` against `cdf`, with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sq = nf.sqrt();
    KsResult { n, statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d) }
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2j²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Draws `n` Laplace(`delta/epsilon`) samples from `seed` and tests them
/// against the analytic CDF.
pub fn laplace_self_test(epsilon: f64, delta: f64, n: usize, seed: u64) -> Result<KsResult, FmError> {
    if !(delta > 0.0) || !(epsilon > 0.0) {
        return Err(FmError::NonPositiveBudget { delta, epsilon });
    }
    let scale = delta / epsilon;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draws = (0..n).map(|_| laplace_sample(scale, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    Ok(ks_test(&draws, |x| laplace_cdf(x, scale)))
}

/// Wraps a generator and counts 64-bit words drawn.
pub struct CountingRng<R> {
    pub inner: R,
    pub words: u64,
}

impl<R: RngCore> CountingRng<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, words: 0 }
    }
}

impl<R: RngCore> RngCore for CountingRng<R> {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.words += dest.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Data term in closed form plus a noise polynomial with one Laplace draw per
/// monomial. Group `k`'s draws occupy a fixed window of the generator stream,
/// so each group can be regenerated on its own.
#[derive(Debug, Clone)]
pub struct ImplicitObjective {
    data: Arc<Vec<VisibleGrid>>,
    frozen_z: Arc<Vec<Vec<f64>>>,
    visible_sum: f64,
    /// `None` for the noiseless objective.
    scale: Option<f64>,
    per_group: u64,
    noise_c: f64,
}

#[derive(Debug, Clone)]
enum ObjectiveForm {
    Explicit(CoefficientTable),
    Implicit(ImplicitObjective),
}

/// Noisy energy objective. Noise is fixed at construction.
#[derive(Debug, Clone)]
pub struct PerturbedObjective {
    pub geometry: Geometry,
    pub poly: MonomialPolynomial,
    pub delta: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Laplace draws consumed, one per merged coefficient.
    pub draws: u64,
    form: ObjectiveForm,
}

fn check_budget(delta: f64, epsilon: f64) -> Result<(), FmError> {
    if !(delta > 0.0) || !(epsilon > 0.0) || !delta.is_finite() || !epsilon.is_finite() {
        return Err(FmError::NonPositiveBudget { delta, epsilon });
    }
    Ok(())
}

/// Adds one Laplace(Δ/ε) draw to every coefficient of `table`, in key order.
pub fn perturb(
    table: &CoefficientTable,
    poly: &MonomialPolynomial,
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<PerturbedObjective, FmError> {
    if table.perturbed {
        return Err(FmError::AlreadyPerturbed);
    }
    check_budget(delta, epsilon)?;
    let scale = delta / epsilon;
    let mut rng = CountingRng::new(ChaCha20Rng::seed_from_u64(seed));
    let mut noisy = table.clone();
    for v in noisy.entries.values_mut() {
        *v += laplace_sample(scale, &mut rng)?;
    }
    noisy.perturbed = true;
    Ok(PerturbedObjective {
        geometry: table.geometry,
        poly: poly.clone(),
        delta,
        epsilon,
        seed,
        draws: rng.words,
        form: ObjectiveForm::Explicit(noisy),
    })
}

/// Draws `count` Laplace values starting at draw number `offset` of the stream.
fn laplace_window(seed: u64, scale: f64, offset: u64, count: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // each draw consumes one 64-bit word, i.e. two 32-bit stream words
    rng.set_word_pos(2 * offset as u128);
    (0..count).map(|_| laplace_from_uniform(uniform_open01(&mut rng), scale)).collect()
}

/// Same noise as `perturb(extract_coefficients(..))` without building the
/// table: the data part stays in closed form.
pub fn perturb_implicit(
    batch: Arc<Vec<VisibleGrid>>,
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: Arc<Vec<Vec<f64>>>,
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<PerturbedObjective, FmError> {
    check_budget(delta, epsilon)?;
    build_implicit(batch, poly, geometry, frozen_z, Some((delta, epsilon)), seed)
}

/// The exact approximated energy with no noise.
pub fn noiseless_objective(
    batch: Arc<Vec<VisibleGrid>>,
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: Arc<Vec<Vec<f64>>>,
) -> Result<PerturbedObjective, FmError> {
    build_implicit(batch, poly, geometry, frozen_z, None, 0)
}

fn build_implicit(
    batch: Arc<Vec<VisibleGrid>>,
    poly: &MonomialPolynomial,
    geometry: Geometry,
    frozen_z: Arc<Vec<Vec<f64>>>,
    budget: Option<(f64, f64)>,
    seed: u64,
) -> Result<PerturbedObjective, FmError> {
    check_inputs(&batch, poly, geometry, &frozen_z)?;
    let layout = VarLayout::new(geometry);
    let per_group = monomial_count(layout.group_vars(), poly.degree() + 1);
    let scale = budget.map(|(d, e)| d / e);
    let noise_c = match scale {
        Some(s) => laplace_window(seed, s, per_group * geometry.k as u64, 1)[0],
        None => 0.0,
    };
    let visible_sum = batch.iter().map(|v| v.values().iter().sum::<f64>()).sum();
    let (delta, epsilon) = budget.unwrap_or((0.0, f64::INFINITY));
    Ok(PerturbedObjective {
        geometry,
        poly: poly.clone(),
        delta,
        epsilon,
        seed,
        draws: if scale.is_some() { per_group * geometry.k as u64 + 1 } else { 0 },
        form: ObjectiveForm::Implicit(ImplicitObjective {
            data: batch,
            frozen_z,
            visible_sum,
            scale,
            per_group,
            noise_c,
        }),
    })
}

/// `Σ η_φ φ(x)` over the preorder monomials of one group, with its gradient
/// added into `grad`.
pub fn noise_polynomial(x: &[f64], eta: &[f64], max_deg: usize, grad: &mut [f64]) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(x: &[f64], eta: &[f64], max_deg: usize, idx: &mut usize, start: usize, depth: usize, phi: f64, grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for j in start..x.len() {
            let me = *idx;
            *idx += 1;
            let mut s = eta[me];
            if depth + 1 < max_deg {
                s += rec(x, eta, max_deg, idx, j, depth + 1, phi * x[j], grad);
            }
            grad[j] += phi * s;
            total += x[j] * s;
        }
        total
    }
    let mut idx = 0;
    rec(x, eta, max_deg, &mut idx, 0, 0, 1.0, grad)
}

/// One group's slice of an implicit objective, with its noise materialized.
pub struct GroupObjective<'a> {
    obj: &'a PerturbedObjective,
    imp: &'a ImplicitObjective,
    k: usize,
    noise: Vec<f64>,
}

impl GroupObjective<'_> {
    /// Value and gradient of the group-`k` part at `x = (W^k, b_k)`.
    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let g = self.obj.geometry;
        let m = g.filter_len() + 1;
        let (n_h, n_w) = (g.n_h(), g.n_w);
        let plane = n_h * n_h;
        let k = self.k;
        let mut single = CrbmParams::zeros(Geometry { k: 1, ..g });
        single.filters.copy_from_slice(&x[..m - 1]);
        single.group_bias[0] = x[m - 1];
        let poly = &self.obj.poly;
        let partials: Vec<(f64, Vec<f64>)> = self
            .imp
            .data
            .par_chunks(CHUNK)
            .zip(self.imp.frozen_z.par_chunks(CHUNK))
            .map(|(vs, zs)| {
                let mut val = 0.0;
                let mut grad = vec![0.0; m];
                for (v, zt) in vs.iter().zip(zs) {
                    let pre = all_preactivations(&single, v).expect("checked geometry");
                    for i in 0..n_h {
                        for j in 0..n_h {
                            let p = i * n_h + j;
                            let u = pre[p] / zt[k * plane + p];
                            let (pv, dp) = poly.eval_with_derivative(u);
                            val -= pre[p] * pv;
                            let w = -(pv + u * dp);
                            for r in 0..n_w {
                                for s in 0..n_w {
                                    grad[r * n_w + s] += w * v.at(i + r, j + s);
                                }
                            }
                            grad[m - 1] += w;
                        }
                    }
                }
                (val, grad)
            })
            .collect();
        let mut val = 0.0;
        let mut grad = vec![0.0; m];
        for (pv, pg) in partials {
            val += pv;
            grad.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
        }
        if !self.noise.is_empty() {
            val += noise_polynomial(x, &self.noise, poly.degree() + 1, &mut grad);
        }
        (val, grad)
    }
}

impl PerturbedObjective {
    /// The noisy table, when built explicitly.
    pub fn table(&self) -> Option<&CoefficientTable> {
        match &self.form {
            ObjectiveForm::Explicit(t) => Some(t),
            ObjectiveForm::Implicit(_) => None,
        }
    }

    /// Group view of an implicit objective.
    pub fn group(&self, k: usize) -> Option<GroupObjective<'_>> {
        match &self.form {
            ObjectiveForm::Implicit(imp) if k < self.geometry.k => {
                let noise = match imp.scale {
                    Some(s) => laplace_window(self.seed, s, imp.per_group * k as u64, imp.per_group),
                    None => Vec::new(),
                };
                Some(GroupObjective { obj: self, imp, k, noise })
            }
            _ => None,
        }
    }

    /// Noisy coefficient of the visible bias `c`.
    pub fn visible_coefficient(&self) -> f64 {
        match &self.form {
            ObjectiveForm::Explicit(t) => t.get(&[VarLayout::new(self.geometry).var_c()]),
            ObjectiveForm::Implicit(imp) => -imp.visible_sum + imp.noise_c,
        }
    }

    /// Value and gradient at flattened parameters `x` (variable-id order).
    pub fn value_and_gradient_flat(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match &self.form {
            ObjectiveForm::Explicit(t) => t.value_and_gradient(x),
            ObjectiveForm::Implicit(_) => {
                let layout = VarLayout::new(self.geometry);
                let m = layout.group_vars();
                let mut val = 0.0;
                let mut grad = vec![0.0; x.len()];
                for k in 0..self.geometry.k {
                    let go = self.group(k).expect("implicit form");
                    let (v, g) = go.value_and_gradient(&x[k * m..(k + 1) * m]);
                    val += v;
                    grad[k * m..(k + 1) * m].copy_from_slice(&g);
                }
                let lam_c = self.visible_coefficient();
                val += lam_c * x[layout.var_c() as usize];
                grad[layout.var_c() as usize] = lam_c;
                (val, grad)
            }
        }
    }
}

/// `Σ_φ λ̄_φ φ(params)` and its gradient, shaped like the parameters.
pub fn objective_value_and_gradient(
    obj: &PerturbedObjective,
    params: &CrbmParams,
) -> Result<(f64, CrbmParams), FmError> {
    if params.geometry != obj.geometry {
        return Err(FmError::ShapeMismatch("parameters do not match the objective".into()));
    }
    let layout = VarLayout::new(obj.geometry);
    let (v, g) = obj.value_and_gradient_flat(&layout.flatten(params));
    Ok((v, layout.unflatten(&g)))
}


/// One ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub delta: f64,
    pub epsilon: f64,
}

/// Append-only sequential-composition ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccountant {
    entries: Vec<LedgerEntry>,
    sealed: bool,
}

impl PrivacyAccountant {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a ledger from stored entries.
    pub fn from_entries(entries: Vec<LedgerEntry>, sealed: bool) -> Result<Self, FmError> {
        let mut a = Self::new();
        for e in entries {
            a.record(&e.stage, e.delta, e.epsilon)?;
        }
        a.sealed = sealed;
        Ok(a)
    }

    pub fn record(&mut self, stage: &str, delta: f64, epsilon: f64) -> Result<(), FmError> {
        if self.sealed {
            return Err(FmError::SealedLedger);
        }
        check_budget(delta, epsilon)?;
        self.entries.push(LedgerEntry { stage: stage.to_string(), delta, epsilon });
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// `Σ ε` over entries, summed in insertion order.
    pub fn total(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc + e.epsilon)
    }

    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return "ε spent: 0\n".to_string();
        }
        let mut s = String::from("stage\tdelta\tepsilon\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{:.6e}\t{}\n", e.stage, e.delta, e.epsilon));
        }
        s.push_str(&format!("ε spent: {}{}\n", self.total(), if self.sealed { " (sealed)" } else { "" }));
        s
    }
}
