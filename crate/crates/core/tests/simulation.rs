mod common;

use common::{normal, rng};
use l2relax::linalg::log_space;
use l2relax::nalgebra::{DMatrix, DVector};
use l2relax::simulation::dgp::gen_effect_bases;
use l2relax::simulation::rng::{substream, Stream};
use l2relax::simulation::{
    factor_strength, gen_panel, oracle_beta0, oracle_beta0_woodbury, oracle_beta_star, oracle_mse,
    run_mpse_experiment, run_size_power_experiment, Design, DgpSpec, McConfig, TreatmentSetting,
    SIGMA0_SQ,
};
use l2relax::{compute_gram, fit, mpse, Estimator, SolverSettings};
use proptest::prelude::*;
use rand::Rng;

fn random_model(seed: u64, n: usize, q: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let lambda = DMatrix::from_fn(n, q, |_, _| normal(&mut r));
    let lambda0 = DVector::from_fn(q, |_, _| normal(&mut r));
    let b = DMatrix::from_fn(n, n, |_, _| 0.2 * normal(&mut r));
    let omega = &b * b.transpose() + DMatrix::identity(n, n) * 0.3;
    (lambda, lambda0, omega)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_identities(seed in 0u64..100_000, n in 5usize..60, q in 1usize..5) {
        let (lambda, lambda0, omega) = random_model(seed, n, q);
        let star = oracle_beta_star(&lambda, &lambda0).unwrap();
        prop_assert!((lambda.transpose() * &star - &lambda0).amax() < 1e-10);
        let direct = oracle_beta0(&lambda, &lambda0, &omega).unwrap();
        let wood = oracle_beta0_woodbury(&lambda, &lambda0, &omega).unwrap();
        prop_assert!((&direct - &wood).amax() < 1e-8);
        let at_star = oracle_mse(&star, &lambda, &lambda0, &omega, SIGMA0_SQ);
        let want = SIGMA0_SQ + (star.transpose() * &omega * &star)[(0, 0)];
        prop_assert!((at_star - want).abs() < 1e-10 * want);
    }

    #[test]
    fn projection_minimizes_the_population_mse(seed in 0u64..100_000, n in 3usize..30) {
        let (lambda, lambda0, omega) = random_model(seed, n, 3.min(n - 1));
        let b0 = oracle_beta0(&lambda, &lambda0, &omega).unwrap();
        let best = oracle_mse(&b0, &lambda, &lambda0, &omega, 1.0);
        let mut r = rng(seed ^ 0xabc);
        for _ in 0..1000 {
            let scale = 10f64.powf(r.gen_range(-5.0..0.5));
            let d = DVector::from_fn(n, |_, _| scale * normal(&mut r));
            prop_assert!(oracle_mse(&(&b0 + d), &lambda, &lambda0, &omega, 1.0) >= best - 1e-12);
        }
    }
}

#[test]
fn spherical_noise_forms_agree_tightly() {
    let (lambda, lambda0, _) = random_model(1, 40, 4);
    let omega = DMatrix::identity(40, 40) * 0.5;
    let a = oracle_beta0(&lambda, &lambda0, &omega).unwrap();
    let b = oracle_beta0_woodbury(&lambda, &lambda0, &omega).unwrap();
    assert!((a - b).amax() < 1e-10);
}

#[test]
fn oracle_norm_scales_with_strength() {
    let spec: DgpSpec = "strong-homo".parse().unwrap();
    let scaled: Vec<f64> = [50, 100, 200, 400]
        .into_iter()
        .map(|n| {
            let sp = gen_panel(spec, n, 10, 1, 3, 0).unwrap();
            let star = oracle_beta_star(&sp.truth.lambda, &sp.truth.lambda0).unwrap();
            star.norm() * (n as f64 * factor_strength(&sp.truth.lambda)).sqrt()
        })
        .collect();
    let (lo, hi) = scaled
        .iter()
        .fold((f64::MAX, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi <= 2.0 * lo, "{scaled:?}");
}

#[test]
fn control_variance_matches_the_model() {
    let spec: DgpSpec = "strong-mild".parse().unwrap();
    let sp = gen_panel(spec, 6, 5000, 1, 9, 0).unwrap();
    let x = sp.panel.x();
    for i in 0..6 {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / row.len() as f64;
        let pop = sp.truth.lambda.row(i).norm_squared() + sp.truth.omega_diag[i];
        assert!((var - pop).abs() <= 0.15 * pop, "unit {i}: {var} vs {pop}");
    }
}

#[test]
fn panels_are_reproducible() {
    let spec: DgpSpec = "weak-severe".parse().unwrap();
    let a = gen_panel(spec, 30, 40, 10, 99, 7).unwrap();
    let b = gen_panel(spec, 30, 40, 10, 99, 7).unwrap();
    let c = gen_panel(spec, 30, 40, 10, 99, 8).unwrap();
    assert_eq!(a.panel.y(), b.panel.y());
    assert_eq!(a.panel.x(), b.panel.x());
    assert_ne!(a.panel.y(), c.panel.y());
}

#[test]
fn neighbouring_effects_are_correlated() {
    let m = 50;
    let draws = 10_000;
    let (mut sxy, mut sxx, mut syy, mut sx, mut sy, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0_f64);
    let mut mean_d6 = 0.0;
    for d in 0..draws {
        let bases = gen_effect_bases(
            TreatmentSetting::Multi,
            m,
            &mut substream(5, d, Stream::Treatment),
        );
        let chain = &bases[Design::D6.base()];
        for i in 0..m - 1 {
            let (a, b) = (chain[i], chain[i + 1]);
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
            sx += a;
            sy += b;
            count += 1.0;
        }
        mean_d6 += chain.iter().map(|v| v + Design::D6.shift()).sum::<f64>() / m as f64;
    }
    let cov = sxy / count - sx / count * sy / count;
    let corr =
        cov / ((sxx / count - (sx / count).powi(2)) * (syy / count - (sy / count).powi(2))).sqrt();
    assert!((corr - 0.3).abs() <= 0.02, "corr {corr}");
    assert!((mean_d6 / draws as f64 - 0.3).abs() <= 0.01);
}

fn small_config() -> McConfig {
    McConfig {
        reps: 6,
        n: 15,
        t1: 30,
        t2: 10,
        tau_grid: log_space(1e-2, 1.0, 6),
        ridge_grid: log_space(1e-3, 1.0, 6),
        lasso_grid: log_space(1e-3, 1.0, 6),
        test_grid: log_space(1e-2, 1.0, 6),
        ..Default::default()
    }
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let cfg = small_config();
    let pool = |k| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .unwrap()
    };
    let one = pool(1).install(|| run_mpse_experiment(&cfg).unwrap().to_json());
    let three = pool(3).install(|| run_mpse_experiment(&cfg).unwrap().to_json());
    assert_eq!(one, three);
    assert_eq!(one, run_mpse_experiment(&cfg).unwrap().to_json());
    let s1 = pool(1).install(|| {
        run_size_power_experiment(&cfg, TreatmentSetting::Single)
            .unwrap()
            .to_json()
    });
    let s3 = pool(3).install(|| {
        run_size_power_experiment(&cfg, TreatmentSetting::Single)
            .unwrap()
            .to_json()
    });
    assert_eq!(s1, s3);
}

/// With many periods the fitted predictor approaches the oracle one, so the
/// out-of-sample MPSE settles around `sigma0^2 + beta*' Omega beta*`.
#[test]
fn mpse_concentrates_around_the_oracle_error() {
    let spec: DgpSpec = "strong-homo".parse().unwrap();
    let (n, t1, t2, reps) = (100, 4000, 1000, 200);
    let settings = SolverSettings::default();
    let mut gaps = Vec::with_capacity(reps);
    for rep in 0..reps as u64 {
        let sp = gen_panel(spec, n, t1, t2, 17, rep).unwrap();
        let gram = compute_gram(&sp.panel).unwrap();
        let f = fit(&gram, 0.01, &settings).unwrap();
        let star = oracle_beta_star(&sp.truth.lambda, &sp.truth.lambda0).unwrap();
        let oracle = SIGMA0_SQ + (star.transpose() * sp.truth.omega() * &star)[(0, 0)];
        gaps.push(mpse(&f, &sp.panel, sp.panel.eval_idx()).unwrap() - oracle);
    }
    let k = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / k;
    let se = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    assert!(mean.abs() <= 3.0 * se, "mean gap {mean}, se {se}");
}

#[test]
fn small_experiments_report_every_method() {
    let cfg = McConfig {
        methods: vec![Estimator::L2Relax, Estimator::Pca],
        ..small_config()
    };
    let r = run_mpse_experiment(&cfg).unwrap();
    for (m, s) in [
        ("l2relax", "infeasible_mpse"),
        ("l2relax", "validated_mpse"),
        ("pca_fixed", "mpse"),
        ("pca_pcp1", "mpse"),
        ("oracle", "mpse"),
    ] {
        assert!(r.value(m, "", s).unwrap().is_finite(), "{m} {s}");
    }
    assert!(r.value("ridge", "", "infeasible_mpse").is_none());
    let s = run_size_power_experiment(
        &McConfig {
            m: 5,
            t2: 1,
            ..small_config()
        },
        TreatmentSetting::Multi,
    )
    .unwrap();
    for d in Design::ALL {
        let rate = s.value("l2relax", &d.label(), "rejection_rate").unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}
