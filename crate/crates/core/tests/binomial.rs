use lens_core::lens::binomial_tau_test;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;

/// `P(K >= k)` for every `k` in `0..=n`, `K ~ Binomial(n, p)`, summed
/// exactly over rationals.
fn exact_tails(n: u64, p: f64) -> Vec<f64> {
    let p = BigRational::from_float(p).unwrap();
    let q = BigRational::one() - &p;
    let mut pmf = Vec::with_capacity(n as usize + 1);
    let mut binom = BigInt::one();
    for j in 0..=n {
        if j > 0 {
            binom = binom * BigInt::from(n - j + 1) / BigInt::from(j);
        }
        pmf.push(BigRational::from_integer(binom.clone()) * p.pow(j as i32) * q.pow((n - j) as i32));
    }
    let mut tails = vec![0.0; n as usize + 1];
    let mut acc = BigRational::zero();
    for j in (0..=n as usize).rev() {
        acc += &pmf[j];
        tails[j] = acc.to_f64().unwrap();
    }
    tails
}

#[test]
fn full_success_at_point_nine() {
    let t = binomial_tau_test(100, 100, 0.9, 0.05).unwrap();
    assert!((t.p_value - 0.9f64.powi(100)).abs() <= 1e-12);
    assert!(t.reject);
}

#[test]
fn zero_successes_never_reject() {
    let t = binomial_tau_test(0, 10, 0.5, 0.05).unwrap();
    assert_eq!(t.p_value, 1.0);
    assert!(!t.reject);
}

#[test]
fn matches_exact_tail_on_a_grid() {
    let taus = [0.1, 0.25, 0.5, 0.9];
    for n in [1u64, 5, 20, 60] {
        let tails: Vec<Vec<f64>> = taus.iter().map(|&t| exact_tails(n, t)).collect();
        for k in 0..=n {
            for (tau, tails) in taus.iter().zip(&tails) {
                let got = binomial_tau_test(k, n, *tau, 0.05).unwrap().p_value;
                let want = tails[k as usize];
                assert!((got - want).abs() <= 1e-10 * want.max(1e-300) + 1e-14, "n={n} k={k} tau={tau}: {got} vs {want}");
            }
        }
    }
}

proptest! {
    #[test]
    fn decisions_are_monotone_in_successes(n in 1u64..200, tau in 0.01f64..0.99, alpha in 0.001f64..0.5) {
        let mut rejected = false;
        let mut last_p = f64::INFINITY;
        for k in 0..=n {
            let t = binomial_tau_test(k, n, tau, alpha).unwrap();
            prop_assert!(t.p_value <= last_p + 1e-15);
            last_p = t.p_value;
            prop_assert!(!rejected || t.reject, "rejected at fewer successes but not at k={}", k);
            rejected |= t.reject;
        }
    }
}
