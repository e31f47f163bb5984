mod common;

use common::{enumerate_l1_qp, factor_gram, sup, sup_diff};
use l2relax::nalgebra::{DMatrix, DVector};
use l2relax::{
    fit, fit_path, fit_ridgeless, predict, solve_dual, DualSolver, GramPair, SolverSettings,
};
use proptest::prelude::*;

fn tight() -> SolverSettings {
    SolverSettings {
        tol: 1e-12,
        ..Default::default()
    }
}

fn residual(gram: &GramPair, beta: &[f64]) -> DVector<f64> {
    &gram.eta - &gram.sigma * DVector::from_column_slice(beta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_fits_are_feasible_and_recover_beta(
        seed in 0u64..10_000,
        n in 2usize..12,
        t in 6usize..40,
        frac in 0.0f64..1.2,
    ) {
        let gram = factor_gram(seed, n, t);
        let tau = frac * gram.eta_sup();
        let f = fit(&gram, tau, &SolverSettings::default()).unwrap();
        prop_assert!(f.converged);
        let r = residual(&gram, &f.beta);
        prop_assert!(r.amax() <= tau * (1.0 + 1e-6) + 1e-8, "violation {} at tau {}", r.amax(), tau);
        if tau > 0.0 {
            let sg = &gram.sigma * DVector::from_column_slice(&f.gamma);
            prop_assert!(sup_diff(sg.as_slice(), &f.beta) <= 1e-10 * (1.0 + sup(&f.beta)));
        }
    }

    #[test]
    fn active_constraints_match_dual_signs(seed in 0u64..10_000, n in 2usize..8, frac in 0.05f64..0.9) {
        let gram = factor_gram(seed, n, 3 * n + 5);
        let tau = frac * gram.eta_sup();
        let f = fit(&gram, tau, &tight()).unwrap();
        let r = residual(&gram, &f.beta);
        let scale = sup(&f.gamma).max(1e-300);
        for i in 0..n {
            if f.gamma[i].abs() > 1e-6 * scale {
                prop_assert!((r[i] - tau * f.gamma[i].signum()).abs() <= 1e-6 * (1.0 + tau));
            }
        }
    }

    #[test]
    fn norm_shrinks_as_tau_grows(seed in 0u64..10_000, n in 2usize..15, t in 8usize..40) {
        let gram = factor_gram(seed, n, t);
        let taus: Vec<f64> = (0..12).map(|k| gram.eta_sup() * 10f64.powf(-3.0 + 3.3 * k as f64 / 11.0)).collect();
        let fits = fit_path(&gram, &taus, &SolverSettings::default()).unwrap();
        let norms: Vec<f64> = fits.iter().map(|f| DVector::from_column_slice(&f.beta).norm()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-8, "{norms:?}");
        }
    }

    #[test]
    fn coordinate_order_does_not_change_beta(seed in 0u64..10_000, n in 2usize..12, frac in 0.01f64..0.9) {
        let gram = factor_gram(seed, n, 25);
        let tau = frac * gram.eta_sup();
        let solver = DualSolver::new(&gram.sigma);
        let fwd: Vec<usize> = (0..n).collect();
        let rev: Vec<usize> = (0..n).rev().collect();
        let a = solver.solve_ordered(gram.eta.as_slice(), tau, &tight(), None, &fwd);
        let b = solver.solve_ordered(gram.eta.as_slice(), tau, &tight(), None, &rev);
        let ba = &gram.sigma * DVector::from_column_slice(&a.gamma);
        let bb = &gram.sigma * DVector::from_column_slice(&b.gamma);
        prop_assert!(sup_diff(ba.as_slice(), bb.as_slice()) <= 1e-6);
    }

    #[test]
    fn scaling_the_target_scales_beta(seed in 0u64..10_000, n in 2usize..10, c in 0.1f64..20.0, frac in 0.0f64..1.0) {
        let gram = factor_gram(seed, n, 30);
        let scaled = GramPair { eta: &gram.eta * c, y_mean: gram.y_mean * c, ..gram.clone() };
        let tau = frac * gram.eta_sup();
        let a = fit(&gram, tau, &tight()).unwrap();
        let b = fit(&scaled, c * tau, &tight()).unwrap();
        let expect: Vec<f64> = a.beta.iter().map(|v| v * c).collect();
        prop_assert!(sup_diff(&b.beta, &expect) <= 1e-7 * (1.0 + sup(&expect)));
    }
}

#[test]
fn matches_exhaustive_support_search() {
    for seed in 0..60u64 {
        let n = 2 + (seed as usize % 4);
        let gram = factor_gram(seed, n, 12 + seed as usize % 9);
        let tau = [0.05, 0.2, 0.5][seed as usize % 3] * gram.eta_sup();
        let a = &gram.sigma * &gram.sigma;
        let gamma = enumerate_l1_qp(&a, &gram.eta, tau);
        let solver = DualSolver::new(&gram.sigma);
        let f = fit(&gram, tau, &tight()).unwrap();
        let want = solver.objective(gram.eta.as_slice(), gamma.as_slice(), tau);
        let got = solver.objective(gram.eta.as_slice(), &f.gamma, tau);
        assert!(
            (want - got).abs() <= 1e-10 * (1.0 + want.abs()),
            "seed {seed}: {got} vs {want}"
        );
        let beta = &gram.sigma * &gamma;
        assert!(sup_diff(beta.as_slice(), &f.beta) <= 1e-7, "seed {seed}");
    }
}

#[test]
fn warm_path_equals_cold_fits() {
    let gram = factor_gram(3, 10, 30);
    let taus: Vec<f64> = (1..=20).map(|k| gram.eta_sup() * k as f64 / 21.0).collect();
    let path = fit_path(&gram, &taus, &tight()).unwrap();
    for (tau, p) in taus.iter().zip(&path) {
        let cold = fit(&gram, *tau, &tight()).unwrap();
        assert!(sup_diff(&cold.beta, &p.beta) <= 1e-6);
    }
}

#[test]
fn zero_fit_has_mean_intercept() {
    let gram = factor_gram(5, 6, 20);
    let f = fit(&gram, gram.eta_sup(), &SolverSettings::default()).unwrap();
    assert!(f.beta.iter().all(|&b| b == 0.0));
    assert_eq!(f.alpha, gram.y_mean);
    let x = vec![3.0; 6];
    assert_eq!(predict(&f, &x, &gram), gram.y_mean);
    let g = solve_dual(&gram, 2.0 * gram.eta_sup(), &SolverSettings::default()).unwrap();
    assert!(g.gamma.iter().all(|&v| v == 0.0));
}

#[test]
fn prediction_at_training_means_is_the_target_mean() {
    let gram = factor_gram(8, 7, 25);
    let f = fit(&gram, 0.2 * gram.eta_sup(), &SolverSettings::default()).unwrap();
    let p = predict(&f, gram.x_means.as_slice(), &gram);
    assert!((p - gram.y_mean).abs() < 1e-12);
}

/// Pseudo-inverse from a full SVD, a second route to the ridgeless fit.
fn pinv_solve(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let cutoff = 1e-10 * svd.singular_values.max();
    svd.pseudo_inverse(cutoff).unwrap() * v
}

#[test]
fn ridgeless_is_the_minimum_norm_solution() {
    for seed in 0..10u64 {
        // more controls than periods: Sigma is singular
        let gram = factor_gram(seed, 15, 8);
        let f = fit_ridgeless(&gram);
        let want = pinv_solve(&gram.sigma, &gram.eta);
        assert!(sup_diff(&f.beta, want.as_slice()) <= 1e-8 * (1.0 + want.amax()));
        let beta = DVector::from_column_slice(&f.beta);
        assert!((&gram.sigma * &beta - &gram.eta).amax() <= 1e-8 * (1.0 + gram.eta.amax()));
        // moving along the null space keeps the fit and lengthens beta
        let eig = gram.sigma.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        for j in 0..15 {
            if eig.eigenvalues[j].abs() <= 1e-10 * lmax {
                let other = &beta + eig.eigenvectors.column(j) * 0.1;
                assert!(other.norm() > beta.norm());
            }
        }
        // tau = 0 takes the same route
        let z = fit(&gram, 0.0, &SolverSettings::default()).unwrap();
        assert_eq!(z.beta, f.beta);
    }
}

#[test]
fn ridgeless_full_rank_is_the_inverse() {
    let gram = factor_gram(4, 5, 40);
    let f = fit_ridgeless(&gram);
    let want = gram.sigma.clone().lu().solve(&gram.eta).unwrap();
    assert!(sup_diff(&f.beta, want.as_slice()) <= 1e-10 * (1.0 + want.amax()));
}
