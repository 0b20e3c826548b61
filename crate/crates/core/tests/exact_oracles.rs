use extremal_clock_core::ehrenfest::EhrenfestChain;
use extremal_clock_core::pspin::{
    bivariate_max_cdf, gaussian_comparison_rhs, h1_covariance, interpolation_integral, make_schedule, repair_psd,
    PSpinInstance, SpinState,
};
use nalgebra::DMatrix;
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

/// `E_{l−1} T_l` in exact arithmetic from the first-step equations
/// `h(k) = 1 + (1 − k/n) h(k+1) + (k/n) h(k−1)` with `h(l) = 0`.
fn exact_adjacent(n: i64, l: usize) -> BigRational {
    let mut c: Vec<BigRational> = Vec::with_capacity(l);
    let mut d: Vec<BigRational> = Vec::with_capacity(l);
    for k in 0..l {
        let a = if k == 0 { BigRational::zero() } else { -ratio(k as i64, n) };
        let up = if k + 1 < l { -ratio(n - k as i64, n) } else { BigRational::zero() };
        let (cp, dp) = if k == 0 {
            (BigRational::zero(), BigRational::zero())
        } else {
            (c[k - 1].clone(), d[k - 1].clone())
        };
        let denom = BigRational::one() - &a * &cp;
        c.push(&up / &denom);
        d.push((BigRational::one() - &a * &dp) / &denom);
    }
    let mut h = BigRational::zero();
    for k in (0..l).rev() {
        h = &d[k] - &c[k] * &h;
        if k == l - 1 {
            return h;
        }
    }
    h
}

#[test]
fn adjacent_hitting_matches_rational_solution() {
    for n in 1..=30usize {
        let chain = EhrenfestChain::new(n).unwrap();
        for l in 1..=n {
            let want = exact_adjacent(n as i64, l).to_f64().unwrap();
            let got = chain.expected_hitting_adjacent(l).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "n={n} l={l}: {got} vs {want}");
        }
    }
}

#[test]
fn second_level_hitting_closed_form() {
    for n in 3..=40usize {
        let chain = EhrenfestChain::new(n).unwrap();
        let want = (n as f64 + 1.0) / (n as f64 - 1.0);
        assert!((chain.expected_hitting_adjacent(2).unwrap() - want).abs() < 1e-13);
        assert!((chain.expected_hitting_from_zero(2).unwrap() - (1.0 + want)).abs() < 1e-13);
    }
    let ten = EhrenfestChain::new(10).unwrap();
    assert!((ten.expected_hitting_from_zero(2).unwrap() - 20.0 / 9.0).abs() < 1e-13);
    assert!((ten.hitting_bound(2).unwrap() - 10.0 / 3.0).abs() < 1e-13);
}

#[test]
fn two_step_distribution_by_hand() {
    let law = EhrenfestChain::new(2).unwrap().exact_distribution(0, 2).unwrap();
    assert_eq!(law, vec![0.5, 0.0, 0.5]);
}

#[test]
fn hamiltonian_by_explicit_contraction() {
    // p = 2, n = 2: H(x) = n^{-1/2} Σ_{ij} J_ij x_i x_j.
    let j = vec![0.3, -1.2, 0.7, 2.0];
    let inst = PSpinInstance::from_couplings(2, 2, j.clone()).unwrap();
    for spins in [[1i8, 1], [1, -1], [-1, 1], [-1, -1]] {
        let x = SpinState::new(spins.to_vec()).unwrap();
        let s = [spins[0] as f64, spins[1] as f64];
        let mut want = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                want += j[2 * a + b] * s[a] * s[b];
            }
        }
        want /= 2f64.sqrt();
        assert!((inst.hamiltonian(&x) - want).abs() < 1e-12);
    }
}

#[test]
fn schedule_constants_at_sixteen() {
    let sk = make_schedule(16, 2, 0.25, 1.0).unwrap();
    let s = sk.schedule;
    assert!((sk.gamma - 0.5).abs() < 1e-15);
    assert!((s.alpha_n - 0.5).abs() < 1e-15);
    assert_eq!(s.theta_n, 768);
    let a = (32.0 * std::f64::consts::PI).sqrt() * 2.0 * 2f64.exp();
    assert!((s.a_n - a).abs() < 1e-9 * a);
    assert!((s.log_c_n - 8.0).abs() < 1e-12);
    assert_eq!(make_schedule(10, 2, 0.25, 1.0).unwrap().schedule.theta_n, 300);
}

#[test]
fn h1_adjacent_covariance() {
    for (n, p) in [(16usize, 2usize), (64, 2), (64, 3)] {
        let m = h1_covariance(n, p, 5);
        for i in 0..4 {
            assert!((m[(i, i + 1)] - (1.0 - 2.0 * p as f64 / n as f64)).abs() < 1e-15);
            assert_eq!(m[(i, i)], 1.0);
        }
    }
}

#[test]
fn psd_repair_returns_psd_symmetric_matrix() {
    let m = h1_covariance(16, 2, 11);
    let r = repair_psd(&m);
    assert_eq!(r, r.transpose());
    let eig = r.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-10));
    // Already-PSD input is left alone up to rounding.
    let ok = h1_covariance(64, 2, 5);
    assert!((repair_psd(&ok) - &ok).abs().max() < 1e-10);
}

/// `P(max(X,Y) ≤ s) = ∫_{−∞}^{s} φ(x) Φ((s − ρx)/√(1−ρ²)) dx` by Simpson.
fn bivariate_by_conditioning(rho: f64, s: f64) -> f64 {
    let z = Normal::standard();
    let f = |x: f64| z.pdf(x) * z.cdf((s - rho * x) / (1.0 - rho * rho).sqrt());
    let (a, m) = (-12.0, 40_000);
    let h = (s - a) / m as f64;
    let mut total = f(a) + f(s);
    for i in 1..m {
        total += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    total * h / 3.0
}

#[test]
fn bivariate_max_cdf_matches_conditioning_formula() {
    for rho in [-0.9, -0.5, 0.0, 0.3, 0.5, 0.95] {
        for s in [-2.0, -0.5, 0.0, 1.0, 2.5] {
            let got = bivariate_max_cdf(rho, s).unwrap();
            let want = bivariate_by_conditioning(rho, s);
            assert!((got - want).abs() < 1e-9, "rho={rho} s={s}: {got} vs {want}");
        }
    }
}

#[test]
fn two_by_two_comparison_holds_exactly() {
    let d0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let d1 = DMatrix::<f64>::identity(2, 2);
    for s in [0.5, 1.0, 2.0] {
        let lhs = bivariate_by_conditioning(0.5, s) - bivariate_by_conditioning(0.0, s);
        let rhs = gaussian_comparison_rhs(&d0, &d1, s).unwrap();
        assert!(lhs > 0.0 && lhs <= rhs, "s={s}: {lhs} vs {rhs}");
    }
}

#[test]
fn interpolation_integral_closed_form() {
    for (a, b) in [(0.5, 0.0), (0.9, -0.3), (0.2, 0.1999)] {
        let want = (f64::asin(a) - f64::asin(b)) / (a - b);
        assert!((interpolation_integral(a, b).unwrap() - want).abs() < 1e-9);
    }
}
