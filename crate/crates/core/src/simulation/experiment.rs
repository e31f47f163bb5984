//! Monte Carlo experiments: out-of-sample MPSE of every estimator, and size
//! and power of the treatment-effect tests.

use std::io::Write;

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{
    gen_effect_bases, gen_multi_panel, gen_panel, Design, DgpSpec, ErrorKind, LoadingKind,
    TreatmentSetting, SIGMA0_SQ,
};
use super::oracle::oracle_beta_star;
use super::rng::{substream, Stream};
use crate::baselines::PcaBasis;
use crate::error::{Error, Result};
use crate::linalg::log_space;
use crate::model::mpse;
use crate::panel::{compute_gram, MultiPanel};
use crate::pda::{ate_multi, ate_single, default_lag, Kernel};
use crate::solver::SolverSettings;
use crate::tuning::{
    fit_grid_gram, fold_scores, mean_over_folds, pick_best, validate, validate_units, Estimator,
    FittedModel, GridSpec, TauGrid, ValidationScheme,
};

/// Nominal level of the simulated tests.
pub const TEST_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub t1: usize,
    pub t2: usize,
    /// Treated units (many-unit experiments only).
    pub m: usize,
    pub dgp: DgpSpec,
    pub methods: Vec<Estimator>,
    pub scheme: ValidationScheme,
    /// Absolute grids shared by every replication, so the infeasible best
    /// value is a single number per design.
    pub tau_grid: Vec<f64>,
    pub ridge_grid: Vec<f64>,
    pub lasso_grid: Vec<f64>,
    /// Grid over which tau is validated in the testing experiments.
    pub test_grid: Vec<f64>,
    pub pca_factors: usize,
    pub pca_max_factors: usize,
    pub designs: Vec<Design>,
    pub kernel: Kernel,
    pub solver: SolverSettings,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            reps: 200,
            seed: 2024,
            n: 100,
            t1: 50,
            t2: 50,
            m: 1,
            dgp: DgpSpec {
                loadings: LoadingKind::Strong,
                errors: ErrorKind::Homo,
            },
            methods: vec![
                Estimator::L2Relax,
                Estimator::Ridge,
                Estimator::Lasso,
                Estimator::Pca,
            ],
            scheme: ValidationScheme::default(),
            tau_grid: log_space(1e-3, 1.0, 40),
            ridge_grid: log_space(1e-4, 10.0, 40),
            lasso_grid: log_space(1e-4, 1.0, 40),
            test_grid: log_space(0.01, 1.0, 20),
            pca_factors: 4,
            pca_max_factors: 8,
            designs: Design::ALL.to_vec(),
            kernel: Kernel::Uniform,
            solver: SolverSettings::default(),
        }
    }
}

impl McConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: McConfig =
            toml::from_str(s).map_err(|e| Error::invalid(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.n < 2 || self.t1 < 5 || self.t2 < 1 || self.m < 1 {
            return Err(Error::invalid("need n >= 2, t1 >= 5, t2 >= 1, m >= 1"));
        }
        for g in [
            &self.tau_grid,
            &self.ridge_grid,
            &self.lasso_grid,
            &self.test_grid,
        ] {
            TauGrid::new(g.clone())?;
        }
        if self.ridge_grid[0] <= 0.0 || self.lasso_grid[0] <= 0.0 {
            return Err(Error::invalid("ridge and LASSO grids must be positive"));
        }
        if self.pca_factors == 0 || self.pca_max_factors == 0 {
            return Err(Error::invalid("PCA factor counts must be positive"));
        }
        self.solver.validate()
    }

    fn scheme_for(&self, rep: u64) -> ValidationScheme {
        self.scheme
            .with_seed(substream(self.seed, rep, Stream::Folds).next_u64())
    }
}

/// One number of a simulation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dgp: String,
    pub n: usize,
    pub t1: usize,
    pub t2: usize,
    pub m: usize,
    pub method: String,
    /// Treatment design for size/power rows, empty otherwise.
    pub design: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub experiment: String,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl SimReport {
    fn new(experiment: &str, config: &McConfig) -> Self {
        Self {
            experiment: experiment.into(),
            reps: config.reps,
            seed: config.seed,
            rows: Vec::new(),
        }
    }

    fn push(
        &mut self,
        config: &McConfig,
        m: usize,
        method: &str,
        design: &str,
        statistic: &str,
        value: f64,
    ) {
        self.rows.push(ReportRow {
            dgp: config.dgp.label(),
            n: config.n,
            t1: config.t1,
            t2: config.t2,
            m,
            method: method.into(),
            design: design.into(),
            statistic: statistic.into(),
            value,
        });
    }

    /// First value matching `method`, `design` and `statistic`.
    pub fn value(&self, method: &str, design: &str, statistic: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.design == design && r.statistic == statistic)
            .map(|r| r.value)
    }

    /// Appends another report's rows (same experiment kind).
    pub fn extend(&mut self, other: SimReport) {
        self.rows.extend(other.rows);
    }

    /// CSV with a `#` comment line stamping the experiment, reps and seed.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(
            writer,
            "# experiment={} reps={} seed={}",
            self.experiment, self.reps, self.seed
        )?;
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-replication scores of one grid method.
#[derive(Debug, Clone, Default)]
struct GridRep {
    oos: Vec<f64>,
    validated: f64,
    nonconverged: usize,
    beta_error: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct MpseRep {
    grids: Vec<(Estimator, GridRep)>,
    pca_fixed: f64,
    pca_pcp1: f64,
    pcp1_k: usize,
    oracle: f64,
}

fn mpse_rep(config: &McConfig, rep: u64) -> Result<MpseRep> {
    let sp = gen_panel(config.dgp, config.n, config.t1, config.t2, config.seed, rep)?;
    let panel = &sp.panel;
    let gram = compute_gram(panel)?;
    let folds = config.scheme_for(rep).folds(panel.train_idx())?;
    let beta_star = oracle_beta_star(&sp.truth.lambda, &sp.truth.lambda0)?;
    let omega = sp.truth.omega();
    let mut out = MpseRep {
        oracle: (beta_star.transpose() * &omega * &beta_star)[(0, 0)],
        ..Default::default()
    };
    for &method in &config.methods {
        let grid = match method {
            Estimator::L2Relax => &config.tau_grid,
            Estimator::Ridge => &config.ridge_grid,
            Estimator::Lasso => &config.lasso_grid,
            Estimator::Pca => {
                let basis = PcaBasis::new(panel, panel.train_idx())?;
                let fixed = basis.fit(config.pca_factors.min(basis.rank_limit()))?;
                out.pca_fixed = mpse(&fixed, panel, panel.eval_idx())? - SIGMA0_SQ;
                out.pcp1_k = basis.select_pcp1(config.pca_max_factors.min(basis.rank_limit()))?;
                out.pca_pcp1 = mpse(&basis.fit(out.pcp1_k)?, panel, panel.eval_idx())? - SIGMA0_SQ;
                continue;
            }
        };
        let fits = fit_grid_gram(&gram, method, grid, &config.solver)?;
        let oos = fits
            .iter()
            .map(|f| Ok(mpse(f, panel, panel.eval_idx())? - SIGMA0_SQ))
            .collect::<Result<Vec<f64>>>()?;
        let scores = mean_over_folds(&fold_scores(panel, &folds, grid, method, &config.solver)?);
        let chosen = pick_best(method, grid, &scores);
        let beta_error = if method == Estimator::L2Relax {
            fits.iter()
                .map(|f| {
                    (DVector::from_column_slice(crate::model::LinearFit::beta(f)) - &beta_star)
                        .norm()
                })
                .collect()
        } else {
            Vec::new()
        };
        out.grids.push((
            method,
            GridRep {
                validated: oos[chosen],
                oos,
                nonconverged: fits.iter().filter(|f| !f.converged()).count(),
                beta_error,
            },
        ));
    }
    Ok(out)
}

fn run_reps<T: Send>(
    config: &McConfig,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..config.reps as u64).into_par_iter().map(f).collect()
}

/// Out-of-sample MPSE (net of the target's idiosyncratic variance) for each
/// configured method. Grid methods report the infeasible best value (the
/// grid point minimizing the across-replication mean) and the validated
/// value; PCA reports a fixed factor count and the PC_p1 choice.
pub fn run_mpse_experiment(config: &McConfig) -> Result<SimReport> {
    config.validate()?;
    let reps = run_reps(config, |r| mpse_rep(config, r))?;
    let mut report = SimReport::new("mpse", config);
    for (slot, &method) in config
        .methods
        .iter()
        .filter(|m| **m != Estimator::Pca)
        .enumerate()
    {
        let grid = match method {
            Estimator::L2Relax => &config.tau_grid,
            Estimator::Ridge => &config.ridge_grid,
            _ => &config.lasso_grid,
        };
        let per_rep: Vec<&GridRep> = reps.iter().map(|r| &r.grids[slot].1).collect();
        let means: Vec<f64> = (0..grid.len())
            .map(|j| per_rep.iter().map(|g| g.oos[j]).sum::<f64>() / per_rep.len() as f64)
            .collect();
        let best = pick_best(method, grid, &means);
        let at_best: Vec<f64> = per_rep.iter().map(|g| g.oos[best]).collect();
        let validated: Vec<f64> = per_rep.iter().map(|g| g.validated).collect();
        let (im, ise) = mean_se(&at_best);
        let (vm, vse) = mean_se(&validated);
        let name = method.name();
        report.push(config, 1, name, "", "best_hyper", grid[best]);
        report.push(config, 1, name, "", "infeasible_mpse", im);
        report.push(config, 1, name, "", "infeasible_se", ise);
        report.push(config, 1, name, "", "validated_mpse", vm);
        report.push(config, 1, name, "", "validated_se", vse);
        report.push(
            config,
            1,
            name,
            "",
            "nonconverged",
            per_rep.iter().map(|g| g.nonconverged).sum::<usize>() as f64,
        );
        if method == Estimator::L2Relax {
            let mut errs: Vec<f64> = per_rep.iter().map(|g| g.beta_error[best]).collect();
            report.push(config, 1, name, "", "median_beta_error", median(&mut errs));
        }
    }
    if config.methods.contains(&Estimator::Pca) {
        let fixed: Vec<f64> = reps.iter().map(|r| r.pca_fixed).collect();
        let pcp1: Vec<f64> = reps.iter().map(|r| r.pca_pcp1).collect();
        let (fm, fse) = mean_se(&fixed);
        let (pm, pse) = mean_se(&pcp1);
        report.push(
            config,
            1,
            "pca_fixed",
            "",
            "factors",
            config.pca_factors as f64,
        );
        report.push(config, 1, "pca_fixed", "", "mpse", fm);
        report.push(config, 1, "pca_fixed", "", "se", fse);
        report.push(config, 1, "pca_pcp1", "", "mpse", pm);
        report.push(config, 1, "pca_pcp1", "", "se", pse);
        let ks: Vec<f64> = reps.iter().map(|r| r.pcp1_k as f64).collect();
        report.push(config, 1, "pca_pcp1", "", "mean_factors", mean_se(&ks).0);
    }
    let oracle: Vec<f64> = reps.iter().map(|r| r.oracle).collect();
    let (om, ose) = mean_se(&oracle);
    report.push(config, 1, "oracle", "", "mpse", om);
    report.push(config, 1, "oracle", "", "se", ose);
    Ok(report)
}

/// Per replication, per design: `(z, rejected)`, or `None` when the
/// variance estimate was degenerate.
type DesignOutcomes = Vec<Option<(f64, bool)>>;

fn single_rep(config: &McConfig, rep: u64) -> Result<DesignOutcomes> {
    let sp = gen_panel(config.dgp, config.n, config.t1, config.t2, config.seed, rep)?;
    let panel = &sp.panel;
    let grid = TauGrid::new(config.test_grid.clone())?;
    let v = validate(
        panel,
        &grid,
        config.scheme_for(rep),
        Estimator::L2Relax,
        &config.solver,
    )?;
    let bases = gen_effect_bases(
        TreatmentSetting::Single,
        config.t2,
        &mut substream(config.seed, rep, Stream::Treatment),
    );
    let (h1, h2) = (default_lag(config.t1), default_lag(config.t2));
    config
        .designs
        .iter()
        .map(|d| {
            let mut y = panel.y().clone();
            for (k, &t) in panel.eval_idx().iter().enumerate() {
                y[t] += bases[d.base()][k] + d.shift();
            }
            let treated = panel.with_target(y)?;
            match ate_single(&v.fit, &treated, h1, h2, config.kernel) {
                Ok(r) => Ok(Some((r.z, r.p_value < TEST_LEVEL))),
                Err(Error::DegenerateVariance { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn multi_rep(config: &McConfig, rep: u64) -> Result<DesignOutcomes> {
    let sm = gen_multi_panel(
        config.dgp,
        config.n,
        config.m,
        config.t1,
        config.t2,
        config.seed,
        rep,
    )?;
    let units = validate_units(
        &sm.panel,
        &GridSpec::Values(TauGrid::new(config.test_grid.clone())?),
        config.scheme_for(rep),
        Estimator::L2Relax,
        &config.solver,
    )?;
    let fits: Vec<FittedModel> = units.into_iter().map(|u| u.fit).collect();
    let bases = gen_effect_bases(
        TreatmentSetting::Multi,
        config.m,
        &mut substream(config.seed, rep, Stream::Treatment),
    );
    config
        .designs
        .iter()
        .map(|d| {
            let mut treated: MultiPanel = sm.panel.clone();
            for i in 0..config.m {
                for &t in &sm.panel.eval_idx {
                    treated.treated[(i, t)] += bases[d.base()][i] + d.shift();
                }
            }
            match ate_multi(&fits, &treated) {
                Ok(r) => Ok(Some((r.z_t[0], r.p_values[0] < TEST_LEVEL))),
                Err(Error::DegenerateVariance { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Rejection frequencies at the 5% level for each configured design. The
/// fit is trained once per replication on untreated data (treatment only
/// touches post-treatment periods) with a validated tau; many-unit runs test
/// the first post-treatment period.
pub fn run_size_power_experiment(
    config: &McConfig,
    setting: TreatmentSetting,
) -> Result<SimReport> {
    config.validate()?;
    if config.designs.is_empty() {
        return Err(Error::invalid("no treatment designs selected"));
    }
    let (name, m) = match setting {
        TreatmentSetting::Single => ("size_power_single", 1),
        TreatmentSetting::Multi => ("size_power_multi", config.m),
    };
    let reps = match setting {
        TreatmentSetting::Single => run_reps(config, |r| single_rep(config, r))?,
        TreatmentSetting::Multi => run_reps(config, |r| multi_rep(config, r))?,
    };
    let mut report = SimReport::new(name, config);
    for (j, d) in config.designs.iter().enumerate() {
        let valid: Vec<(f64, bool)> = reps.iter().filter_map(|r| r[j]).collect();
        let rejections = valid.iter().filter(|(_, rej)| *rej).count();
        let label = d.label();
        let rate = if valid.is_empty() {
            f64::NAN
        } else {
            rejections as f64 / valid.len() as f64
        };
        report.push(config, m, "l2relax", &label, "rejection_rate", rate);
        let zs: Vec<f64> = valid.iter().map(|(z, _)| *z).collect();
        report.push(config, m, "l2relax", &label, "mean_z", mean_se(&zs).0);
        report.push(
            config,
            m,
            "l2relax",
            &label,
            "degenerate",
            (reps.len() - valid.len()) as f64,
        );
    }
    Ok(report)
}
