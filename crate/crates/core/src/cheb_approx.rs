//! Chebyshev polynomials of the first kind: evaluation, Chebyshev–Gauss
//! coefficient quadrature, exact basis conversion and truncation bounds.
//!
//! Series use the half-A₀ convention throughout:
//! `f(x) ≈ ½A₀ + Σ_{k≥1} A_k T_k(x)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Largest degree accepted by the exact basis conversions.
pub const MAX_CONVERSION_DEGREE: usize = 30;

/// Default number of Chebyshev–Gauss nodes.
pub const DEFAULT_NODES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChebError {
    #[error("function is not finite at node x = {x}")]
    NonFiniteFunction { x: f64 },
    #[error("degree {degree} exceeds the conversion guard {max}")]
    DegreeTooLarge { degree: usize, max: usize },
    #[error("{nodes} quadrature nodes are too few for degree {degree} (need at least {needed})")]
    TooFewNodes { nodes: usize, degree: usize, needed: usize },
    #[error("coefficient {index} is not finite")]
    NonFiniteCoefficient { index: usize },
    #[error("invalid approximator: {0}")]
    InvalidApproximator(String),
}

/// Truncated Chebyshev series `[A₀, …, A_L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSeries {
    coeffs: Vec<f64>,
}

impl ChebyshevSeries {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, ChebError> {
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(ChebError::NonFiniteCoefficient { index });
        }
        let coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs };
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Series value by Clenshaw's recurrence.
    pub fn eval(&self, x: f64) -> f64 {
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &a in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + a;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + 0.5 * self.coeffs[0]
    }

    /// Series cut to degree `l` (or unchanged if already shorter).
    pub fn truncate(&self, l: usize) -> Self {
        let n = (l + 1).min(self.coeffs.len());
        Self { coeffs: self.coeffs[..n].to_vec() }
    }
}

/// Power-basis polynomial `Σ α_l x^l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialPolynomial {
    coeffs: Vec<f64>,
}

impl MonomialPolynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs };
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    /// Value and first derivative in one Horner pass.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &a in self.coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + a;
        }
        (p, dp)
    }
}

/// `T_k(x)` by the three-term recursion.
pub fn cheb_eval(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut t0, mut t1) = (1.0, x);
            for _ in 1..k {
                let t2 = 2.0 * x * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        }
    }
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// `T_k(x) = Σ_j (−1)^j C(k,2j) x^{k−2j} (1−x²)^j`.
pub fn cheb_eval_closed(k: usize, x: f64) -> f64 {
    let s = 1.0 - x * x;
    (0..=k / 2)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial_f64(k, 2 * j) * x.powi((k - 2 * j) as i32) * s.powi(j as i32)
        })
        .sum()
}

/// Chebyshev–Gauss quadrature of `A_k = (2/π)∫ f T_k / √(1−x²)` for `k = 0..=l`.
///
/// Nodes are `cos((2i−1)π/2n)`, `i = 1..=n`, each with weight `π/n`, so
/// `A_k = (2/n) Σ_i f(x_i) cos(k θ_i)`.
pub fn cheb_coefficients<F>(f: F, l: usize, nodes: usize) -> Result<ChebyshevSeries, ChebError>
where
    F: Fn(f64) -> f64,
{
    let needed = 4 * (l + 1);
    if nodes < needed {
        return Err(ChebError::TooFewNodes { nodes, degree: l, needed });
    }
    let n = nodes as f64;
    let mut coeffs = vec![0.0; l + 1];
    for i in 1..=nodes {
        let theta = (2 * i - 1) as f64 * PI / (2.0 * n);
        let x = theta.cos();
        let fx = f(x);
        if !fx.is_finite() {
            return Err(ChebError::NonFiniteFunction { x });
        }
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c += fx * (k as f64 * theta).cos();
        }
    }
    for c in &mut coeffs {
        *c *= 2.0 / n;
    }
    ChebyshevSeries::new(coeffs)
}

/// Integer power-basis coefficients of `T_k`, expanded from the closed form.
pub fn cheb_monomial_table(k: usize) -> Vec<BigInt> {
    let mut out = vec![BigInt::zero(); k + 1];
    for j in 0..=k / 2 {
        // (−1)^j C(k,2j) x^{k−2j} Σ_i C(j,i) (−1)^i x^{2i}
        let outer = binomial_big(k, 2 * j);
        for i in 0..=j {
            let mut term = &outer * binomial_big(j, i);
            if (i + j) % 2 == 1 {
                term = -term;
            }
            out[k - 2 * j + 2 * i] += term;
        }
    }
    out
}

fn binomial_big(n: usize, k: usize) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// Exact Chebyshev → power conversion on rationals (half-A₀ convention).
pub fn cheb_to_monomial_exact(a: &[BigRational]) -> Result<Vec<BigRational>, ChebError> {
    if a.is_empty() {
        return Ok(vec![BigRational::zero()]);
    }
    let degree = a.len() - 1;
    if degree > MAX_CONVERSION_DEGREE {
        return Err(ChebError::DegreeTooLarge { degree, max: MAX_CONVERSION_DEGREE });
    }
    let mut out = vec![BigRational::zero(); a.len()];
    out[0] = &a[0] / BigRational::from_integer(BigInt::from(2));
    for (k, ak) in a.iter().enumerate().skip(1) {
        if ak.is_zero() {
            continue;
        }
        for (p, t) in cheb_monomial_table(k).into_iter().enumerate() {
            if !t.is_zero() {
                out[p] += ak * BigRational::from_integer(t);
            }
        }
    }
    Ok(out)
}

/// Exact power → Chebyshev conversion on rationals (half-A₀ convention).
///
/// Back-substitution from the top degree, using the leading coefficient
/// `2^{k−1}` of `T_k`.
pub fn monomial_to_cheb_exact(alpha: &[BigRational]) -> Result<Vec<BigRational>, ChebError> {
    if alpha.is_empty() {
        return Ok(vec![BigRational::zero()]);
    }
    let degree = alpha.len() - 1;
    if degree > MAX_CONVERSION_DEGREE {
        return Err(ChebError::DegreeTooLarge { degree, max: MAX_CONVERSION_DEGREE });
    }
    let mut rem = alpha.to_vec();
    let mut a = vec![BigRational::zero(); alpha.len()];
    for k in (1..=degree).rev() {
        let table = cheb_monomial_table(k);
        let lead = BigRational::from_integer(table[k].clone());
        let ak = &rem[k] / lead;
        if !ak.is_zero() {
            for (p, t) in table.into_iter().enumerate() {
                rem[p] -= &ak * BigRational::from_integer(t);
            }
        }
        a[k] = ak;
    }
    a[0] = &rem[0] * BigRational::from_integer(BigInt::from(2));
    Ok(a)
}

fn to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Converts a series to the power basis. Each float coefficient is taken as
/// an exact rational, the conversion is exact, and only the result is rounded.
pub fn cheb_to_monomial(s: &ChebyshevSeries) -> Result<MonomialPolynomial, ChebError> {
    let a: Vec<BigRational> = s.coeffs().iter().map(|&c| to_rational(c)).collect();
    let alpha = cheb_to_monomial_exact(&a)?;
    Ok(MonomialPolynomial::new(alpha.iter().map(to_f64).collect()))
}

/// Inverse of [`cheb_to_monomial`].
pub fn monomial_to_cheb(p: &MonomialPolynomial) -> Result<ChebyshevSeries, ChebError> {
    let alpha: Vec<BigRational> = p.coeffs().iter().map(|&c| to_rational(c)).collect();
    let a = monomial_to_cheb_exact(&alpha)?;
    ChebyshevSeries::new(a.iter().map(to_f64).collect())
}

/// The degree-7 steep sigmoid `(16 + 35x − 35x³ + 21x⁵ − 5x⁷)/32`, as exact rationals.
pub fn paper_steep_sigmoid_exact() -> Vec<BigRational> {
    [16i64, 35, 0, -35, 0, 21, 0, -5]
        .iter()
        .map(|&n| BigRational::new(BigInt::from(n), BigInt::from(32)))
        .collect()
}

/// Logistic sigmoid.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid surrogates available to the energy approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ApproximatorKind {
    /// Logistic truncated to degree L of its Chebyshev series.
    ChebyshevTruncated(usize),
    PaperSteepSigmoidL7,
    /// `x − x³/3 + 2x⁵/15`.
    TaylorTanh5,
    /// `c₁x + c₂`.
    LinearPiecewise(f64, f64),
}

impl ApproximatorKind {
    pub fn linear_default() -> Self {
        ApproximatorKind::LinearPiecewise(0.25, 0.5)
    }

    /// Power-basis form of the surrogate.
    pub fn polynomial(&self) -> Result<MonomialPolynomial, ChebError> {
        match *self {
            ApproximatorKind::ChebyshevTruncated(l) => {
                let s = cheb_coefficients(logistic, l, DEFAULT_NODES.max(4 * (l + 1)))?;
                cheb_to_monomial(&s)
            }
            ApproximatorKind::PaperSteepSigmoidL7 => Ok(MonomialPolynomial::new(
                paper_steep_sigmoid_exact().iter().map(to_f64).collect(),
            )),
            ApproximatorKind::TaylorTanh5 => {
                Ok(MonomialPolynomial::new(vec![0.0, 1.0, 0.0, -1.0 / 3.0, 0.0, 2.0 / 15.0]))
            }
            ApproximatorKind::LinearPiecewise(c1, c2) => {
                if !(c1 > 0.0) || !c2.is_finite() {
                    return Err(ChebError::InvalidApproximator(format!(
                        "linear approximator needs c1 > 0, got c1={c1}, c2={c2}"
                    )));
                }
                Ok(MonomialPolynomial::new(vec![c2, c1]))
            }
        }
    }

    /// Short identifier used in reports and config files.
    pub fn label(&self) -> String {
        match *self {
            ApproximatorKind::ChebyshevTruncated(l) => format!("chebyshev{l}"),
            ApproximatorKind::PaperSteepSigmoidL7 => "steep7".into(),
            ApproximatorKind::TaylorTanh5 => "tanh5".into(),
            ApproximatorKind::LinearPiecewise(c1, c2) => format!("linear({c1},{c2})"),
        }
    }
}

/// Evaluator for an approximator kind.
pub fn make_approximator(kind: ApproximatorKind) -> Result<impl Fn(f64) -> f64, ChebError> {
    let p = kind.polynomial()?;
    Ok(move |x: f64| p.eval(x))
}

/// Truncation error bounds for an `N_H²K`-unit energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    /// `(π/4)·N_H²K·|A_{L+1}|`.
    pub lower: f64,
    /// `upper_factor · N_H²K · tail_bound`.
    pub upper: f64,
    /// `|A_{L+1}|`.
    pub a_next: f64,
    pub hidden_units: usize,
    /// `4 + (4/π²)·ln L`.
    pub upper_factor: f64,
    /// `Σ_{l=L+1..L+50} |A_l|`, a ceiling on the sup error of one unit.
    pub tail_bound: f64,
}

/// Bounds for truncating `s` at degree `l`. `s` must extend to at least `L+1`;
/// coefficients beyond its length count as zero in the tail.
pub fn truncation_error_bounds(
    s: &ChebyshevSeries,
    l: usize,
    n_h: usize,
    k: usize,
) -> ErrorBounds {
    let l = l.max(1);
    let units = n_h * n_h * k;
    let a = s.coeffs();
    let get = |i: usize| a.get(i).copied().unwrap_or(0.0).abs();
    let a_next = get(l + 1);
    let tail_bound: f64 = (l + 1..=l + 50).map(get).sum();
    let upper_factor = 4.0 + 4.0 / (PI * PI) * (l as f64).ln();
    ErrorBounds {
        lower: PI / 4.0 * units as f64 * a_next,
        upper: upper_factor * units as f64 * tail_bound,
        a_next,
        hidden_units: units,
        upper_factor,
        tail_bound,
    }
}

/// Logistic bounds at degree `l` using a degree-`l+50` quadrature series.
pub fn logistic_error_bounds(l: usize, n_h: usize, k: usize) -> Result<ErrorBounds, ChebError> {
    let s = cheb_coefficients(logistic, l + 50, DEFAULT_NODES)?;
    Ok(truncation_error_bounds(&s, l, n_h, k))
}

/// Sup-norm distance between `f` and `g` on an `n`-point uniform grid of [−1,1].
pub fn sup_error_on_grid(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, n: usize) -> f64 {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            (f(x) - g(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// One row of the approximator report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproximatorReportRow {
    pub kind: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub lower_bound: f64,
    pub tail_bound: f64,
    pub sup_error_empirical: f64,
}

/// Report row for `kind` against the logistic (single unit).
pub fn approximator_report(kind: ApproximatorKind) -> Result<ApproximatorReportRow, ChebError> {
    let p = kind.polynomial()?;
    let l = p.degree();
    let b = logistic_error_bounds(l, 1, 1)?;
    let sup = sup_error_on_grid(logistic, |x| p.eval(x), 10_001);
    Ok(ApproximatorReportRow {
        kind: kind.label(),
        l,
        lower_bound: b.lower,
        tail_bound: b.tail_bound,
        sup_error_empirical: sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recursion_small_cases() {
        assert_eq!(cheb_eval(0, 0.5), 1.0);
        assert_eq!(cheb_eval(1, 0.3), 0.3);
        assert!((cheb_eval(2, 0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_small_cases() {
        assert!((cheb_eval_closed(2, 0.5) + 0.5).abs() < 1e-15);
        assert!((cheb_eval_closed(3, 1.0) - 1.0).abs() < 1e-15);
        assert!((cheb_eval_closed(7, 0.123) - cheb_eval(7, 0.123)).abs() < 1e-9);
    }

    #[test]
    fn quadrature_of_basis_functions() {
        let one = cheb_coefficients(|_| 1.0, 2, 64).unwrap();
        assert!((one.coeffs()[0] - 2.0).abs() < 1e-14);
        assert!(one.coeffs()[1].abs() < 1e-14 && one.coeffs()[2].abs() < 1e-14);
        assert!((one.eval(0.3) - 1.0).abs() < 1e-14);
        let x = cheb_coefficients(|x| x, 2, 64).unwrap();
        assert!(x.coeffs()[0].abs() < 1e-14);
        assert!((x.coeffs()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_rejects_bad_inputs() {
        assert!(matches!(
            cheb_coefficients(|_| 1.0, 7, 10),
            Err(ChebError::TooFewNodes { .. })
        ));
        assert!(matches!(
            cheb_coefficients(|x| 1.0 / x.abs().min(0.0), 3, 64),
            Err(ChebError::NonFiniteFunction { .. })
        ));
    }

    #[test]
    fn conversion_examples() {
        let t2 = ChebyshevSeries::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cheb_to_monomial(&t2).unwrap().coeffs(), &[-1.0, 0.0, 2.0]);
        let c = ChebyshevSeries::new(vec![2.0]).unwrap();
        assert_eq!(cheb_to_monomial(&c).unwrap().coeffs(), &[1.0]);
        let big = ChebyshevSeries::new(vec![0.0; 32]).unwrap();
        assert!(matches!(cheb_to_monomial(&big), Err(ChebError::DegreeTooLarge { .. })));
    }

    #[test]
    fn monomial_tables_match_recursion() {
        for k in 0..=12 {
            let t = cheb_monomial_table(k);
            for &x in &[-0.9f64, -0.2, 0.0, 0.45, 1.0] {
                let v: f64 = t
                    .iter()
                    .enumerate()
                    .map(|(p, c)| c.to_f64().unwrap() * x.powi(p as i32))
                    .sum();
                assert!((v - cheb_eval(k, x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn approximator_values() {
        let p = make_approximator(ApproximatorKind::PaperSteepSigmoidL7).unwrap();
        assert!((p(0.0) - 0.5).abs() < 1e-15);
        assert!((p(1.0) - 1.0).abs() < 1e-15);
        assert!(p(-1.0).abs() < 1e-15);
        let t = make_approximator(ApproximatorKind::TaylorTanh5).unwrap();
        assert_eq!(t(0.0), 0.0);
        let lin = make_approximator(ApproximatorKind::linear_default()).unwrap();
        assert_eq!(lin(0.0), 0.5);
        assert!(ApproximatorKind::LinearPiecewise(0.0, 0.5).polynomial().is_err());
    }

    #[test]
    fn bounds_scale_with_units() {
        let s = ChebyshevSeries::new(vec![1.0, 0.5, 0.0, 0.04]).unwrap();
        let b1 = truncation_error_bounds(&s, 2, 1, 1);
        assert!((b1.lower - PI / 4.0 * 0.04).abs() < 1e-15);
        let b12 = truncation_error_bounds(&s, 2, 2, 3);
        assert!((b12.lower - 12.0 * b1.lower).abs() < 1e-14);
        assert!((b12.upper - 12.0 * b1.upper).abs() < 1e-12);
        assert!(b1.lower <= b1.upper);
    }

    #[test]
    fn clenshaw_matches_direct_sum() {
        let s = ChebyshevSeries::new(vec![0.7, -0.3, 0.25, 0.1, -0.05]).unwrap();
        for &x in &[-1.0, -0.3, 0.0, 0.8, 1.0] {
            let direct = 0.5 * 0.7
                + s.coeffs()
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, a)| a * cheb_eval(k, x))
                    .sum::<f64>();
            assert!((s.eval(x) - direct).abs() < 1e-14);
        }
    }
}
