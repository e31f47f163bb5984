//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`cargo test -p l2relax-cli --test acceptance`).
//! Exits nonzero if any criterion fails. Pass criterion numbers as arguments
//! to run a subset, e.g. `-- 1 2 7 8`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use l2relax::nalgebra::{DMatrix, DVector};
use l2relax::simulation::{
    oracle_beta0, oracle_beta0_woodbury, oracle_beta_star, oracle_mse, run_mpse_experiment,
    run_size_power_experiment, DgpSpec, McConfig, SimReport, TreatmentSetting,
};
use l2relax::{compute_gram, fit, hac_lrv, DualSolver, GramPair, SolverSettings, TimePanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Controls with one common factor plus noise, and a target loading on a few
/// of them.
fn random_gram(rng: &mut ChaCha8Rng, n: usize, t: usize) -> (GramPair, DMatrix<f64>, DVector<f64>) {
    let f: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
    let load: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.5)).collect();
    let x = DMatrix::from_fn(n, t, |i, s| load[i] * f[s] + normal(rng));
    let w: Vec<f64> = (0..n).map(|_| normal(rng) * 0.5).collect();
    let y = DVector::from_fn(t, |s, _| {
        1.0 + (0..n).map(|i| w[i] * x[(i, s)]).sum::<f64>() + 0.5 * normal(rng)
    });
    let panel = TimePanel::new(y.clone(), x.clone(), (0..t).collect(), Vec::new()).expect("panel");
    (compute_gram(&panel).expect("gram"), x, y)
}

/// Projected gradient with momentum on the split form `gamma = u - v`,
/// `u, v >= 0`, run until the fixed-point residual vanishes, then finished
/// by solving the stationarity equations on the support it found.
fn pg_oracle(a: &DMatrix<f64>, eta: &DVector<f64>, tau: f64) -> DVector<f64> {
    let n = eta.len();
    let lip = 2.0 * a.symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let obj = |gam: &DVector<f64>| 0.5 * gam.dot(&(a * gam)) - eta.dot(gam) + tau * gam.abs().sum();
    let av: Vec<f64> = a.iter().copied().collect();
    // one projected step from `w` into `out`; returns the split objective there
    let mut ag = vec![0.0; n];
    let mut step_from = |w: &[f64], out: &mut [f64]| -> f64 {
        let diff: Vec<f64> = (0..n).map(|i| w[i] - w[n + i]).collect();
        for i in 0..n {
            ag[i] = (0..n).map(|j| av[i + j * n] * diff[j]).sum::<f64>();
        }
        for i in 0..n {
            let g = ag[i] - eta[i];
            out[i] = (w[i] - step * (g + tau)).max(0.0);
            out[n + i] = (w[n + i] - step * (tau - g)).max(0.0);
        }
        split_value(&av, eta.as_slice(), tau, out)
    };
    let mut z = vec![0.0; 2 * n];
    let mut w = z.clone();
    let mut next = z.clone();
    let mut probe = z.clone();
    let mut fz = 0.0;
    let mut k = 1.0_f64;
    for it in 0..200_000 {
        let fnext = step_from(&w, &mut next);
        if fnext > fz {
            w.copy_from_slice(&z);
            k = 1.0;
            continue;
        }
        let k_next = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
        let mom = (k - 1.0) / k_next;
        for i in 0..2 * n {
            w[i] = next[i] + mom * (next[i] - z[i]);
        }
        std::mem::swap(&mut z, &mut next);
        fz = fnext;
        k = k_next;
        if it % 50 == 0 {
            step_from(&z, &mut probe);
            let scale = 1.0 + z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if z.iter()
                .zip(&probe)
                .all(|(p, q)| (p - q).abs() <= 1e-11 * scale)
            {
                break;
            }
        }
    }
    let gamma = DVector::from_fn(n, |i, _| z[i] - z[n + i]);

    let cut = 1e-8 * gamma.amax();
    let support: Vec<usize> = (0..n).filter(|&i| gamma[i].abs() > cut).collect();
    if support.is_empty() {
        return gamma;
    }
    let sub = DMatrix::from_fn(support.len(), support.len(), |p, q| {
        a[(support[p], support[q])]
    });
    let rhs = DVector::from_fn(support.len(), |p, _| {
        eta[support[p]] - tau * gamma[support[p]].signum()
    });
    let Some(sol) = sub.lu().solve(&rhs) else {
        return gamma;
    };
    let mut exact = DVector::zeros(n);
    for (p, &i) in support.iter().enumerate() {
        exact[i] = sol[p];
    }
    let signs_kept = support
        .iter()
        .all(|&i| exact[i].signum() == gamma[i].signum());
    if signs_kept && obj(&exact) <= obj(&gamma) {
        exact
    } else {
        gamma
    }
}

fn split_value(a: &[f64], eta: &[f64], tau: f64, z: &[f64]) -> f64 {
    let n = eta.len();
    let mut total = 0.0;
    for i in 0..n {
        let gi = z[i] - z[n + i];
        let row: f64 = (0..n).map(|j| a[i + j * n] * (z[j] - z[n + j])).sum();
        total += 0.5 * gi * row - eta[i] * gi + tau * (z[i] + z[n + i]);
    }
    total
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let settings = SolverSettings {
        tol: 1e-12,
        ..Default::default()
    };
    let (mut worst_obj, mut worst_beta) = (0.0_f64, 0.0_f64);
    for k in 0..50 {
        let n = rng.gen_range(3..=8);
        let t = rng.gen_range(10..=30);
        let (gram, _, _) = random_gram(&mut rng, n, t);
        let tau = [0.0, 0.1, 0.5][k % 3] * gram.eta_sup();
        let got = fit(&gram, tau, &settings).expect("fit");
        let solver = DualSolver::new(&gram.sigma);
        let a = &gram.sigma * &gram.sigma;
        let gamma = pg_oracle(&a, &gram.eta, tau);
        let beta = &gram.sigma * &gamma;
        let ours = solver.objective(gram.eta.as_slice(), &got.gamma, tau);
        let theirs = solver.objective(gram.eta.as_slice(), gamma.as_slice(), tau);
        worst_obj = worst_obj.max((ours - theirs).abs());
        let d = got
            .beta
            .iter()
            .zip(beta.iter())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        worst_beta = worst_beta.max(d);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_obj <= 1e-6 && worst_beta <= 1e-5 && secs < 10.0,
        format!("50 instances, max objective gap {worst_obj:.2e}, max beta gap {worst_beta:.2e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let settings = SolverSettings::default();
    let mut zero_ok = true;
    let mut worst_rel = 0.0_f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..=15);
        let t = rng.gen_range(n + 5..=60);
        let (gram, x, y) = random_gram(&mut rng, n, t);
        for scale in [1.0, 1.5, 10.0] {
            let f = fit(&gram, scale * gram.eta_sup(), &settings).expect("fit");
            zero_ok &= f.beta.iter().all(|&b| b == 0.0);
        }
        // least squares with an intercept column, by SVD
        let design = DMatrix::from_fn(t, n + 1, |s, j| if j == 0 { 1.0 } else { x[(j - 1, s)] });
        let coef = design.svd(true, true).solve(&y, 1e-14).expect("svd");
        let ols = coef.rows(1, n).into_owned();
        let f = fit(&gram, 0.0, &settings).expect("fit");
        let diff = f
            .beta
            .iter()
            .zip(ols.iter())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        worst_rel = worst_rel.max(diff / ols.amax());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        zero_ok && worst_rel <= 1e-6 && secs < 1.0,
        format!("zero fit exact: {zero_ok}, max relative gap to OLS {worst_rel:.2e}, {secs:.3}s"),
    )
}

fn mpse_config(dgp: &str, t: usize) -> McConfig {
    McConfig {
        dgp: dgp.parse::<DgpSpec>().expect("dgp"),
        reps: 200,
        n: 100,
        t1: t,
        t2: t,
        ..Default::default()
    }
}

/// Table 1 style runs shared by criteria 3, 4 and 9.
struct MpseRuns {
    strong: Vec<(usize, SimReport)>,
    weak_200: SimReport,
    elapsed: Duration,
}

fn mpse_runs() -> MpseRuns {
    let start = Instant::now();
    let strong = [50, 100, 200]
        .into_iter()
        .map(|t| {
            (
                t,
                run_mpse_experiment(&mpse_config("strong-homo", t)).expect("run"),
            )
        })
        .collect();
    let weak_200 = run_mpse_experiment(&mpse_config("weak-homo", 200)).expect("run");
    MpseRuns {
        strong,
        weak_200,
        elapsed: start.elapsed(),
    }
}

fn val(r: &SimReport, method: &str, stat: &str) -> f64 {
    r.value(method, "", stat).unwrap_or(f64::NAN)
}

fn criterion_3(runs: &MpseRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (t, r) in &runs.strong {
        let (l2, ridge, lasso) = (
            val(r, "l2relax", "infeasible_mpse"),
            val(r, "ridge", "infeasible_mpse"),
            val(r, "lasso", "infeasible_mpse"),
        );
        pass &= l2 < ridge && ridge < lasso;
        parts.push(format!(
            "T={t} L2 {l2:.4} ridge {ridge:.4} LASSO {lasso:.4}"
        ));
        match t {
            50 => pass &= (l2 - 0.120).abs() <= 0.03,
            200 => pass &= (l2 - 0.041).abs() <= 0.015,
            _ => {}
        }
    }
    let w = &runs.weak_200;
    let (l2v, lassov, pcp1) = (
        val(w, "l2relax", "validated_mpse"),
        val(w, "lasso", "validated_mpse"),
        val(w, "pca_pcp1", "mpse"),
    );
    pass &= l2v < lassov && l2v < pcp1;
    parts.push(format!(
        "weak T=200 validated L2 {l2v:.4} LASSO {lassov:.4} PC_p1 {pcp1:.4}"
    ));
    let secs = runs.elapsed.as_secs_f64();
    pass &= secs < 20.0 * 60.0;
    parts.push(format!("{secs:.0}s"));
    outcome(pass, parts.join("; "))
}

fn criterion_4(runs: &MpseRuns) -> Outcome {
    let homo = val(&runs.strong[2].1, "l2relax", "infeasible_mpse");
    let mild = val(
        &run_mpse_experiment(&mpse_config("strong-mild", 200)).expect("run"),
        "l2relax",
        "infeasible_mpse",
    );
    let severe = val(
        &run_mpse_experiment(&mpse_config("strong-severe", 200)).expect("run"),
        "l2relax",
        "infeasible_mpse",
    );
    let v = [homo, mild, severe];
    let spread =
        v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        spread <= 0.02,
        format!("T=200 homo {homo:.4} mild {mild:.4} severe {severe:.4}, spread {spread:.4}"),
    )
}

fn rate(r: &SimReport, design: &str) -> f64 {
    r.value("l2relax", design, "rejection_rate")
        .unwrap_or(f64::NAN)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = McConfig {
        reps: 500,
        n: 100,
        t1: 200,
        t2: 200,
        ..Default::default()
    };
    let r = run_size_power_experiment(&cfg, TreatmentSetting::Single).expect("run");
    let (d1, d2, d7) = (rate(&r, "D1"), rate(&r, "D2"), rate(&r, "D7"));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (d1 - 0.072).abs() <= 0.03
            && (d2 - 0.048).abs() <= 0.03
            && d7 >= 0.97
            && secs < 30.0 * 60.0,
        format!("D1 {d1:.3} D2 {d2:.3} D7 {d7:.3}, {secs:.0}s"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = McConfig {
        reps: 500,
        n: 200,
        t1: 200,
        t2: 1,
        m: 50,
        ..Default::default()
    };
    let r = run_size_power_experiment(&cfg, TreatmentSetting::Multi).expect("run");
    let (d1, d7) = (rate(&r, "D1"), rate(&r, "D7"));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (d1 - 0.052).abs() <= 0.03 && d7 >= 0.97,
        format!("D1 {d1:.3} D7 {d7:.3}, {secs:.0}s"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst_star, mut worst_forms) = (0.0_f64, 0.0_f64);
    let mut min_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(5..=60);
        let q = rng.gen_range(1..=4).min(n - 1);
        let lambda = DMatrix::from_fn(n, q, |_, _| normal(&mut rng));
        let lambda0 = DVector::from_fn(q, |_, _| normal(&mut rng));
        let omega = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5)));
        let star = oracle_beta_star(&lambda, &lambda0).expect("beta star");
        worst_star = worst_star.max((lambda.transpose() * &star - &lambda0).amax());
        let direct = oracle_beta0(&lambda, &lambda0, &omega).expect("beta0");
        let wood = oracle_beta0_woodbury(&lambda, &lambda0, &omega).expect("woodbury");
        worst_forms = worst_forms.max((&direct - &wood).amax());
        let best = oracle_mse(&direct, &lambda, &lambda0, &omega, 1.0);
        for _ in 0..20 {
            let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
            let pert = DVector::from_fn(n, |_, _| scale * normal(&mut rng));
            min_ok &= oracle_mse(&(&direct + pert), &lambda, &lambda0, &omega, 1.0) >= best - 1e-12;
        }
    }
    outcome(
        worst_star < 1e-10 && worst_forms < 1e-8 && min_ok,
        format!("max |L'b* - l0| {worst_star:.2e}, max direct vs Woodbury {worst_forms:.2e}, 1000 perturbations never lower the MSE: {min_ok}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut worst, mut worst_h0) = (0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let l: usize = rng.gen_range(2..=150);
        let h = rng.gen_range(0..l);
        let s: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
        let mean = s.iter().sum::<f64>() / l as f64;
        let c: Vec<f64> = s.iter().map(|v| v - mean).collect();
        let mut brute = 0.0;
        for t in 0..l {
            for u in 0..l {
                if t.abs_diff(u) <= h {
                    brute += c[t] * c[u];
                }
            }
        }
        brute /= l as f64;
        let got = hac_lrv(&s, h).expect("lrv");
        worst = worst.max((got - brute).abs() / brute.abs().max(1.0));
        let var = c.iter().map(|v| v * v).sum::<f64>() / l as f64;
        worst_h0 = worst_h0.max((hac_lrv(&s, 0).expect("lrv") - var).abs());
    }
    outcome(
        worst <= 1e-12 && worst_h0 <= 1e-12,
        format!("100 series, max gap to double loop {worst:.2e}, h=0 vs variance {worst_h0:.2e}"),
    )
}

fn criterion_9(runs: &MpseRuns) -> Outcome {
    let med: Vec<f64> = runs
        .strong
        .iter()
        .map(|(_, r)| val(r, "l2relax", "median_beta_error"))
        .collect();
    outcome(
        med.windows(2).all(|w| w[1] < w[0]),
        format!(
            "median |b - b*| at T=50,100,200: {:.4}, {:.4}, {:.4}",
            med[0], med[1], med[2]
        ),
    )
}

fn criterion_10() -> Outcome {
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/pda_synthetic.csv"
    );
    let out = Command::new(env!("CARGO_BIN_EXE_l2relax"))
        .args([
            "--seed",
            "1",
            "pda",
            "single",
            "--input",
            fixture,
            "--treated",
            "treated",
            "--pre-end",
            "115",
        ])
        .output()
        .expect("run binary");
    if !out.status.success() {
        return outcome(
            false,
            String::from_utf8_lossy(&out.stderr).trim().to_string(),
        );
    }
    let v: serde_json::Value = match serde_json::from_slice(&out.stdout) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("output is not JSON: {e}")),
    };
    let num = |k: &str| v[k].as_f64().filter(|x| x.is_finite());
    let fields = ["ate", "z", "p_value", "rho1_sq", "rho2_sq", "tau"];
    let complete = fields.iter().all(|k| num(k).is_some());
    let shape = v["t1"] == 115 && v["t2"] == 43 && v["beta"].as_array().map(Vec::len) == Some(64);
    outcome(
        complete && shape,
        format!(
            "T1 {} T2 {} ATE {:.4} Z {:.3} p {:.3}",
            v["t1"],
            v["t2"],
            num("ate").unwrap_or(f64::NAN),
            num("z").unwrap_or(f64::NAN),
            num("p_value").unwrap_or(f64::NAN)
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut failed = 0;
    let mut report = |k: u32, o: Outcome| {
        println!(
            "criterion {k}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    };
    if wanted(1) {
        report(1, criterion_1());
    }
    if wanted(2) {
        report(2, criterion_2());
    }
    if wanted(7) {
        report(7, criterion_7());
    }
    if wanted(8) {
        report(8, criterion_8());
    }
    if wanted(10) {
        report(10, criterion_10());
    }
    if wanted(3) || wanted(4) || wanted(9) {
        let runs = mpse_runs();
        if wanted(3) {
            report(3, criterion_3(&runs));
        }
        if wanted(4) {
            report(4, criterion_4(&runs));
        }
        if wanted(9) {
            report(9, criterion_9(&runs));
        }
    }
    if wanted(5) {
        report(5, criterion_5());
    }
    if wanted(6) {
        report(6, criterion_6());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all selected criteria passed");
        ExitCode::SUCCESS
    }
}
