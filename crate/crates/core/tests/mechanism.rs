use pcdbn::cheb_approx::{ApproximatorKind, MonomialPolynomial};
use pcdbn::energy_model::{CrbmParams, Geometry, LrnHyper, VisibleGrid};
use pcdbn::functional_mech::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::sync::Arc;

fn random_grid(n: usize, rng: &mut ChaCha20Rng) -> VisibleGrid {
    VisibleGrid::new(n, (0..n * n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn setup(seed: u64, n_v: usize, n_w: usize, k: usize, l: usize, n: usize) -> (Vec<VisibleGrid>, MonomialPolynomial, Geometry, Vec<Vec<f64>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = Geometry::new(n_v, n_w, k).unwrap();
    let poly = ApproximatorKind::ChebyshevTruncated(l).polynomial().unwrap();
    let batch: Vec<VisibleGrid> = (0..n).map(|_| random_grid(n_v, &mut rng)).collect();
    let z = frozen_normalizers(&batch, g, &LrnHyper::default(), seed).unwrap();
    (batch, poly, g, z)
}

#[test]
fn coefficients_are_additive_over_instances() {
    let (batch, poly, g, z) = setup(1, 4, 2, 2, 3, 6);
    let whole = extract_coefficients(&batch, &poly, g, &z).unwrap();
    let a = extract_coefficients(&batch[..2], &poly, g, &z[..2]).unwrap();
    let b = extract_coefficients(&batch[2..], &poly, g, &z[2..]).unwrap();
    let sum = a.merged(&b).unwrap();
    assert_eq!(whole.len(), sum.len());
    for (k, v) in &whole.entries {
        assert!((v - sum.get(k)).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}

#[test]
fn table_does_not_depend_on_parameters() {
    // the table is built from data and frozen normalizers only; the same
    // inputs always give the same table
    let (batch, poly, g, z) = setup(2, 3, 2, 2, 2, 3);
    let a = extract_coefficients(&batch, &poly, g, &z).unwrap();
    let b = extract_coefficients(&batch, &poly, g, &z).unwrap();
    assert_eq!(a, b);
    assert!(a.entries.keys().all(|m| m.len() <= 3));
    assert!(a.entries.values().all(|v| v.is_finite()));
}

#[test]
fn vanishing_noise_leaves_coefficients() {
    let (batch, poly, g, z) = setup(3, 3, 2, 1, 3, 2);
    let t = extract_coefficients(&batch, &poly, g, &z).unwrap();
    let d = sensitivity_all_groups(&batch, &poly, g, &z).unwrap();
    let p = perturb(&t, &poly, d, 1e9 * d, 4).unwrap();
    let x: Vec<f64> = (0..VarLayout::new(g).n_vars()).map(|i| 0.1 * i as f64 - 0.3).collect();
    let (noisy, _) = p.value_and_gradient_flat(&x);
    let (clean, _) = t.value_and_gradient(&x);
    assert!((noisy - clean).abs() < 1e-6);
}

#[test]
fn perturbation_is_unbiased() {
    let (batch, poly, g, z) = setup(5, 2, 1, 1, 1, 1);
    let t = extract_coefficients(&batch, &poly, g, &z).unwrap();
    let key = t.entries.keys().next().unwrap().clone();
    let (scale, n) = (0.5, 10_000);
    let mean = (0..n)
        .map(|s| {
            let p = perturb(&t, &poly, scale, 1.0, s).unwrap();
            // at the origin only degree-1 monomials reach the gradient
            p.value_and_gradient_flat(&vec![0.0; VarLayout::new(g).n_vars()]).1[key[0] as usize]
        })
        .sum::<f64>()
        / n as f64;
    let sd = (2.0f64).sqrt() * scale / (n as f64).sqrt();
    assert_eq!(key.len(), 1);
    assert!((mean - t.get(&key)).abs() <= 3.0 * sd, "{mean} vs {}", t.get(&key));
}

#[test]
fn perturb_is_deterministic_and_sealed() {
    let (batch, poly, g, z) = setup(6, 3, 2, 2, 2, 2);
    let t = extract_coefficients(&batch, &poly, g, &z).unwrap();
    let a = perturb(&t, &poly, 2.0, 1.0, 9).unwrap();
    let b = perturb(&t, &poly, 2.0, 1.0, 9).unwrap();
    let x = vec![0.2; VarLayout::new(g).n_vars()];
    assert_eq!(a.value_and_gradient_flat(&x), b.value_and_gradient_flat(&x));
    assert!(matches!(perturb(&t, &poly, 0.0, 1.0, 9), Err(FmError::NonPositiveBudget { .. })));
    assert!(matches!(perturb(&t, &poly, 1.0, -1.0, 9), Err(FmError::NonPositiveBudget { .. })));
}

#[test]
fn draws_equal_merged_coefficients() {
    for (n_v, n_w, k, l) in [(2, 1, 1, 1), (3, 2, 2, 3), (4, 2, 3, 2)] {
        let (batch, poly, g, z) = setup(7, n_v, n_w, k, l, 2);
        let t = extract_coefficients(&batch, &poly, g, &z).unwrap();
        let p = perturb(&t, &poly, 1.0, 1.0, 1).unwrap();
        let expected = k as u64 * monomial_count(VarLayout::new(g).group_vars(), l + 1) + 1;
        assert_eq!(p.draws, t.len() as u64);
        assert_eq!(p.draws, expected);
        let i = perturb_implicit(Arc::new(batch), &poly, g, Arc::new(z), 1.0, 1.0, 1).unwrap();
        assert_eq!(i.draws, expected);
    }
}

#[test]
fn zero_table_gives_zero_objective() {
    let g = Geometry::new(2, 1, 1).unwrap();
    let poly = MonomialPolynomial::new(vec![0.0]);
    let batch = vec![VisibleGrid::zeros(2)];
    let z = vec![vec![1.0; g.hidden_len()]];
    let obj = noiseless_objective(Arc::new(batch), &poly, g, Arc::new(z)).unwrap();
    let (v, grad) = objective_value_and_gradient(&obj, &CrbmParams::init(g, 1)).unwrap();
    assert_eq!(v, 0.0);
    assert!(grad.filters.iter().chain(&grad.group_bias).all(|&x| x == 0.0));
    assert_eq!(grad.visible_bias, 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for case in 0..50 {
        let (batch, poly, g, z) = setup(case, rng.gen_range(2..=3), rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3), 2);
        let t = extract_coefficients(&batch, &poly, g, &z).unwrap();
        let obj = perturb(&t, &poly, 1.0, 1.0, case).unwrap();
        let x: Vec<f64> = (0..VarLayout::new(g).n_vars()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let (_, grad) = obj.value_and_gradient_flat(&x);
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut scale = 1e-12f64;
        for i in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (obj.value_and_gradient_flat(&p).0 - obj.value_and_gradient_flat(&m).0) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
            scale = scale.max(grad[i].abs());
        }
        assert!(worst / scale < 1e-5, "case {case}: {}", worst / scale);
    }
}

#[test]
fn naive_sensitivity_is_monotone_in_h() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for _ in 0..20 {
        let g = Geometry::new(3, 2, 2).unwrap();
        let batch: Vec<VisibleGrid> = (0..3).map(|_| random_grid(3, &mut rng)).collect();
        let hl = g.hidden_len();
        let zero = sensitivity_naive_h(&batch, g, &vec![vec![0.0; hl]; 3]).unwrap();
        let one = sensitivity_naive_h(&batch, g, &vec![vec![1.0; hl]; 3]).unwrap();
        let h: Vec<Vec<f64>> = (0..3).map(|_| (0..hl).map(|_| f64::from(rng.gen::<bool>())).collect()).collect();
        let mid = sensitivity_naive_h(&batch, g, &h).unwrap();
        assert!(zero <= mid && mid <= one);
        let max_sum = batch.iter().map(|v| v.values().iter().sum::<f64>()).fold(0.0, f64::max);
        assert!((zero - 2.0 * max_sum).abs() < 1e-12);
        assert!((one - sensitivity_maximal(&batch, g).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn maximal_examples() {
    let g = Geometry::new(3, 2, 1).unwrap();
    assert_eq!(sensitivity_maximal(&[VisibleGrid::zeros(3)], g).unwrap(), 8.0);
    let half = VisibleGrid::new(3, vec![0.3; 9]).unwrap();
    let full = VisibleGrid::new(3, vec![0.6; 9]).unwrap();
    assert!(sensitivity_maximal(&[full], g).unwrap() >= sensitivity_maximal(&[half], g).unwrap());
}

#[test]
fn accountant_sums_and_seals() {
    let mut a = PrivacyAccountant::new();
    assert_eq!(a.total(), 0.0);
    assert!(a.render().contains("ε spent: 0"));
    a.record("layer1", 1.0, 0.25).unwrap();
    a.record("layer2", 1.0, 0.25).unwrap();
    a.record("softmax", 1.0, 0.5).unwrap();
    assert_eq!(a.total(), 1.0);
    a.seal();
    let before = a.clone();
    assert!(matches!(a.record("extra", 1.0, 1.0), Err(FmError::SealedLedger)));
    assert_eq!(a, before);
    let rebuilt = PrivacyAccountant::from_entries(a.entries().to_vec(), true).unwrap();
    assert_eq!(rebuilt.total().to_bits(), a.total().to_bits());
}

#[test]
fn laplace_statistics() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| laplace_sample(2.0, &mut rng).unwrap()).collect();
    let mean_abs = draws.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    // |η| is exponential with mean 2 and sd 2
    assert!((mean_abs - 2.0).abs() <= 3.0 * 2.0 / (n as f64).sqrt());
    assert_eq!(laplace_from_uniform(0.5, 2.0), 0.0);
    let r = ks_test(&draws, |x| laplace_cdf(x, 2.0));
    assert!(r.p_value >= 0.01);
    assert_eq!(laplace_self_test(1.0, 2.0, 10_000, 3).unwrap(), laplace_self_test(1.0, 2.0, 10_000, 3).unwrap());
}

#[test]
fn kolmogorov_tail_matches_reference() {
    use statrs::distribution::{ContinuousCDF, Exp};
    // critical values of the limiting distribution
    assert!((kolmogorov_q(1.628) - 0.01).abs() < 5e-4);
    assert!((kolmogorov_q(1.358) - 0.05).abs() < 5e-4);
    assert_eq!(kolmogorov_q(0.1), 1.0);
    // a wrong reference distribution is rejected
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let exp = Exp::new(1.0).unwrap();
    let draws: Vec<f64> = (0..10_000).map(|_| laplace_sample(1.0, &mut rng).unwrap()).collect();
    assert!(ks_test(&draws, |x| exp.cdf(x)).p_value < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn all_groups_bound_dominates(seed in any::<u64>(), n_v in 1usize..=3, k in 1usize..=3, l in 1usize..=3, n in 1usize..=3) {
        let n_w = n_v.min(2);
        let (batch, poly, g, z) = setup(seed, n_v, n_w, k, l, n);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let mut other = batch.clone();
        let t = rng.gen_range(0..n);
        other[t] = random_grid(n_v, &mut rng);
        let z2 = frozen_normalizers(&other, g, &LrnHyper::default(), seed).unwrap();
        let dist = extract_coefficients(&batch, &poly, g, &z)
            .unwrap()
            .l1_distance(&extract_coefficients(&other, &poly, g, &z2).unwrap());
        let bound = sensitivity_all_groups(&batch, &poly, g, &z).unwrap().max(sensitivity_all_groups(&other, &poly, g, &z2).unwrap());
        prop_assert!(dist <= bound * (1.0 + 1e-12));
        if k == 1 {
            let single = sensitivity_lemma2(&batch, &poly, g, &z).unwrap().delta.max(sensitivity_lemma2(&other, &poly, g, &z2).unwrap().delta);
            prop_assert!(dist <= single * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spend_is_a_function_of_the_ledger(eps in prop::collection::vec(0.01f64..10.0, 1..6), extra in 0usize..1000) {
        let mut a = PrivacyAccountant::new();
        for (i, e) in eps.iter().enumerate() {
            a.record(&format!("stage{i}"), 1.0, *e).unwrap();
        }
        a.seal();
        let total = a.total();
        for _ in 0..extra.min(10) {
            let _ = a.record("late", 1.0, 1.0);
        }
        prop_assert_eq!(a.total().to_bits(), total.to_bits());
    }
}
