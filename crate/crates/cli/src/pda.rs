use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use l2relax::panel::{MultiPanel, MIN_TRAIN_ROWS as MIN_SIDE};
use l2relax::{
    ate_multi, ate_single, fit_method, load_multi_panel_csv, load_panel_csv, placebo_test,
    standardize_in_sample, standardize_multi, validate_units, Estimator, FittedModel, GridSpec,
    Kernel, LagChoice, LinearFit, PlaceboResult, RowRef, SolverSettings, SplitSpec, TimePanel,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{self, fit_panel, ModelOpts, ValidationReport};
use crate::{Format, GlobalOpts};

#[derive(Debug, Subcommand)]
pub enum PdaCommand {
    /// One treated unit: ATE over the post-treatment periods.
    Single(SingleArgs),
    /// Several treated units: cross-sectional ATE per post-treatment period.
    Multi(MultiArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TreatmentOpts {
    #[arg(long)]
    pub input: PathBuf,
    /// Last pre-treatment row (1-based number or label).
    #[arg(long)]
    pub pre_end: String,
    /// First post-treatment row (default: the row after --pre-end).
    #[arg(long)]
    pub post_start: Option<String>,
}

impl TreatmentOpts {
    fn split(&self) -> SplitSpec {
        let row = |s: &str| s.parse::<RowRef>().expect("infallible");
        SplitSpec {
            train_end: row(&self.pre_end),
            eval_start: self.post_start.as_deref().map(row),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LagOpts {
    /// HAC lag for the pre-treatment residuals (default: floor(T1^(1/5))).
    #[arg(long)]
    pub h1: Option<usize>,
    /// HAC lag for the post-treatment gaps (default: floor(T2^(1/5))).
    #[arg(long)]
    pub h2: Option<usize>,
    /// uniform or bartlett.
    #[arg(long, default_value = "uniform", value_parser = parse_kernel)]
    pub kernel: Kernel,
}

fn parse_kernel(s: &str) -> Result<Kernel, String> {
    s.parse().map_err(|e: l2relax::Error| e.to_string())
}

impl LagOpts {
    fn lags(&self) -> LagChoice {
        LagChoice {
            h1: self.h1,
            h2: self.h2,
        }
    }
}

#[derive(Debug, Args)]
pub struct SingleArgs {
    /// Treated series.
    #[arg(long)]
    pub treated: String,
    #[command(flatten)]
    pub data: TreatmentOpts,
    #[command(flatten)]
    pub lags: LagOpts,
    #[command(flatten)]
    pub model: ModelOpts,
}

#[derive(Debug, Args)]
pub struct MultiArgs {
    /// Treated series, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub treated: Vec<String>,
    #[command(flatten)]
    pub data: TreatmentOpts,
    #[command(flatten)]
    pub lags: LagOpts,
    #[command(flatten)]
    pub model: ModelOpts,
}

#[derive(Debug, Serialize)]
struct SingleReport<'a> {
    command: &'static str,
    config: serde_json::Value,
    method: Estimator,
    tau: f64,
    standardized: bool,
    treated: &'a str,
    t1: usize,
    t2: usize,
    kernel: Kernel,
    ate: f64,
    z: f64,
    p_value: f64,
    rho1_sq: f64,
    rho2_sq: f64,
    h1: usize,
    h2: usize,
    periods: Vec<String>,
    delta_hat: &'a [f64],
    alpha: f64,
    beta: &'a [f64],
    validation: Option<ValidationReport>,
}

pub fn run(global: &GlobalOpts, cmd: PdaCommand) -> Result<()> {
    match cmd {
        PdaCommand::Single(a) => run_single(global, a),
        PdaCommand::Multi(a) => run_multi(global, a),
    }
}

fn check_post(n_post: usize) -> Result<()> {
    if n_post == 0 {
        bail!("no post-treatment periods after --pre-end");
    }
    Ok(())
}

fn run_single(global: &GlobalOpts, args: SingleArgs) -> Result<()> {
    let panel = load_panel_csv(&args.data.input, &args.treated, &args.data.split())
        .with_context(|| format!("reading {}", args.data.input.display()))?;
    check_post(panel.eval_idx().len())?;
    let outcome = fit_panel(&panel, &args.model, global.seed)?;
    let (h1, h2) = args
        .lags
        .lags()
        .resolve(panel.train_idx().len(), panel.eval_idx().len());
    let res = ate_single(&outcome.fit, &panel, h1, h2, args.lags.kernel)?;
    eprintln!(
        "ATE = {:.6}  Z = {:.4}  p = {:.4}",
        res.ate, res.z, res.p_value
    );
    let report = SingleReport {
        command: "pda single",
        config: serde_json::json!({
            "treated": args.treated,
            "data": args.data,
            "lags": args.lags,
            "model": args.model,
            "seed": global.seed,
        }),
        method: args.model.method,
        tau: outcome.fit.hyper(),
        standardized: !args.model.raw,
        treated: &args.treated,
        t1: panel.train_idx().len(),
        t2: panel.eval_idx().len(),
        kernel: args.lags.kernel,
        ate: res.ate,
        z: res.z,
        p_value: res.p_value,
        rho1_sq: res.rho1_sq,
        rho2_sq: res.rho2_sq,
        h1: res.h1,
        h2: res.h2,
        periods: io::row_labels(panel.time_labels(), panel.eval_idx()),
        delta_hat: &res.delta_hat,
        alpha: outcome.fit.alpha(),
        beta: outcome.fit.beta(),
        validation: outcome.report(),
    };
    match io::format_or(global, Format::Json) {
        Format::Json => io::write_json(global, &report),
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# pda single method={} tau={} ate={} z={} p_value={} rho1_sq={} rho2_sq={} h1={} h2={}",
                report.method.name(),
                report.tau,
                report.ate,
                report.z,
                report.p_value,
                report.rho1_sq,
                report.rho2_sq,
                report.h1,
                report.h2
            )?;
            writeln!(w, "# config: {}", report.config)?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["period", "delta_hat"])?;
            for (p, d) in report.periods.iter().zip(report.delta_hat) {
                c.write_record([p.as_str(), &d.to_string()])?;
            }
            c.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct UnitReport {
    name: String,
    tau: f64,
    converged: bool,
    alpha: f64,
    beta: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct MultiReport {
    command: &'static str,
    config: serde_json::Value,
    method: Estimator,
    standardized: bool,
    m: usize,
    t1: usize,
    t2: usize,
    v_hat_sq: f64,
    periods: Vec<String>,
    ate_t: Vec<f64>,
    z_t: Vec<f64>,
    p_values: Vec<f64>,
    /// Rows are treated units, columns post-treatment periods.
    delta_hat: Vec<Vec<f64>>,
    units: Vec<UnitReport>,
}

fn fit_units(panel: &MultiPanel, opts: &ModelOpts, seed: Option<u64>) -> Result<Vec<FittedModel>> {
    let settings = SolverSettings::default();
    let (work, params) = if opts.raw {
        (panel.clone(), None)
    } else {
        let (p, s) = standardize_multi(panel)?;
        (p, Some(s))
    };
    let fits: Vec<FittedModel> = match opts.tau {
        Some(h) => (0..work.n_treated())
            .into_par_iter()
            .map(|i| Ok(fit_method(&work.unit(i)?, opts.method, h, &settings)?))
            .collect::<Result<_>>()?,
        None => {
            let grid = GridSpec::Points(opts.grid);
            validate_units(&work, &grid, opts.scheme(seed)?, opts.method, &settings)?
                .into_iter()
                .map(|v| v.fit)
                .collect()
        }
    };
    Ok(match params {
        Some(ps) => fits
            .iter()
            .zip(&ps)
            .map(|(f, p)| {
                let (a, b) = p.to_original(f.alpha(), f.beta());
                f.with_coefficients(a, b)
            })
            .collect(),
        None => fits,
    })
}

fn run_multi(global: &GlobalOpts, args: MultiArgs) -> Result<()> {
    let panel = load_multi_panel_csv(&args.data.input, &args.treated, &args.data.split())
        .with_context(|| format!("reading {}", args.data.input.display()))?;
    check_post(panel.eval_idx.len())?;
    let fits = fit_units(&panel, &args.model, global.seed)?;
    let res = ate_multi(&fits, &panel)?;
    let periods = io::row_labels(panel.time_labels.as_deref(), &panel.eval_idx);
    for ((p, a), (z, pv)) in periods
        .iter()
        .zip(&res.ate_t)
        .zip(res.z_t.iter().zip(&res.p_values))
    {
        eprintln!("{p}: ATE = {a:.6}  Z = {z:.4}  p = {pv:.4}");
    }
    let report = MultiReport {
        command: "pda multi",
        config: serde_json::json!({
            "treated": args.treated,
            "data": args.data,
            "lags": args.lags,
            "model": args.model,
            "seed": global.seed,
        }),
        method: args.model.method,
        standardized: !args.model.raw,
        m: fits.len(),
        t1: panel.train_idx.len(),
        t2: panel.eval_idx.len(),
        v_hat_sq: res.v_hat_sq,
        periods,
        ate_t: res.ate_t,
        z_t: res.z_t,
        p_values: res.p_values,
        delta_hat: res.delta_hat,
        units: panel
            .treated_names
            .iter()
            .zip(&fits)
            .map(|(name, f)| UnitReport {
                name: name.clone(),
                tau: f.hyper(),
                converged: f.converged(),
                alpha: f.alpha(),
                beta: f.beta().to_vec(),
            })
            .collect(),
    };
    match io::format_or(global, Format::Json) {
        Format::Json => io::write_json(global, &report),
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# pda multi method={} m={} v_hat_sq={}",
                report.method.name(),
                report.m,
                report.v_hat_sq
            )?;
            writeln!(w, "# config: {}", report.config)?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["period", "ate", "z", "p_value"])?;
            for (j, p) in report.periods.iter().enumerate() {
                c.write_record([
                    p.as_str(),
                    &report.ate_t[j].to_string(),
                    &report.z_t[j].to_string(),
                    &report.p_values[j].to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    /// Series to test.
    #[arg(long)]
    pub target: String,
    #[command(flatten)]
    pub data: TreatmentOpts,
    /// Pre-treatment periods used as pseudo-training (default: two thirds).
    #[arg(long)]
    pub pseudo_train: Option<usize>,
    #[command(flatten)]
    pub lags: LagOpts,
    #[command(flatten)]
    pub model: ModelOpts,
}

/// Placebo test at a given hyperparameter instead of a validated one.
fn fixed_placebo(
    panel: &TimePanel,
    pre_split: usize,
    method: Estimator,
    hyper: f64,
    lags: &LagOpts,
    settings: &SolverSettings,
) -> Result<PlaceboResult> {
    let train = panel.train_idx();
    if pre_split < MIN_SIDE || train.len().saturating_sub(pre_split) < MIN_SIDE {
        bail!(
            "placebo split {pre_split} of {} pre-treatment periods leaves fewer than {MIN_SIDE} on a side",
            train.len()
        );
    }
    let pseudo = panel.with_split(train[..pre_split].to_vec(), train[pre_split..].to_vec())?;
    let fit = fit_method(&pseudo, method, hyper, settings)?;
    let (h1, h2) = lags
        .lags()
        .resolve(pseudo.train_idx().len(), pseudo.eval_idx().len());
    let result = ate_single(&fit, &pseudo, h1, h2, lags.kernel)?;
    Ok(PlaceboResult {
        method,
        hyper,
        pseudo_train: pseudo.train_idx().len(),
        pseudo_post: pseudo.eval_idx().len(),
        result,
    })
}

#[derive(Debug, Serialize)]
struct PlaceboReport<'a> {
    command: &'static str,
    config: serde_json::Value,
    method: Estimator,
    tau: f64,
    standardized: bool,
    pseudo_train: usize,
    pseudo_post: usize,
    kernel: Kernel,
    ate: f64,
    z: f64,
    p_value: f64,
    rho1_sq: f64,
    rho2_sq: f64,
    h1: usize,
    h2: usize,
    periods: Vec<String>,
    delta_hat: &'a [f64],
}

pub fn run_placebo(global: &GlobalOpts, args: PlaceboArgs) -> Result<()> {
    let panel = load_panel_csv(&args.data.input, &args.target, &args.data.split())
        .with_context(|| format!("reading {}", args.data.input.display()))?;
    let t1 = panel.train_idx().len();
    let pre_split = args.pseudo_train.unwrap_or(2 * t1 / 3);
    let (work, scale) = if args.model.raw {
        (panel.clone(), 1.0)
    } else {
        let (p, s) = standardize_in_sample(&panel)?;
        (p, s.y_sd)
    };
    let settings = SolverSettings::default();
    let scheme = args.model.scheme(global.seed)?;
    let mut placebo = match args.model.tau {
        None => placebo_test(
            &work,
            pre_split,
            args.model.method,
            scheme,
            args.model.grid,
            args.lags.lags(),
            args.lags.kernel,
            &settings,
        )?,
        Some(h) => fixed_placebo(
            &work,
            pre_split,
            args.model.method,
            h,
            &args.lags,
            &settings,
        )?,
    };
    // gaps come back in standardized units
    placebo.result.ate *= scale;
    placebo
        .result
        .delta_hat
        .iter_mut()
        .for_each(|d| *d *= scale);
    placebo.result.rho1_sq *= scale * scale;
    placebo.result.rho2_sq *= scale * scale;
    let r = &placebo.result;
    eprintln!(
        "placebo ATE = {:.6}  Z = {:.4}  p = {:.4}",
        r.ate, r.z, r.p_value
    );
    let rows = &panel.train_idx()[placebo.pseudo_train..];
    let report = PlaceboReport {
        command: "placebo",
        config: serde_json::json!({
            "target": args.target,
            "data": args.data,
            "pseudo_train": pre_split,
            "lags": args.lags,
            "model": args.model,
            "seed": global.seed,
        }),
        method: placebo.method,
        tau: placebo.hyper,
        standardized: !args.model.raw,
        pseudo_train: placebo.pseudo_train,
        pseudo_post: placebo.pseudo_post,
        kernel: args.lags.kernel,
        ate: r.ate,
        z: r.z,
        p_value: r.p_value,
        rho1_sq: r.rho1_sq,
        rho2_sq: r.rho2_sq,
        h1: r.h1,
        h2: r.h2,
        periods: io::row_labels(panel.time_labels(), rows),
        delta_hat: &r.delta_hat,
    };
    match io::format_or(global, Format::Json) {
        Format::Json => io::write_json(global, &report),
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# placebo method={} tau={} ate={} z={} p_value={}",
                report.method.name(),
                report.tau,
                report.ate,
                report.z,
                report.p_value
            )?;
            writeln!(w, "# config: {}", report.config)?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["period", "delta_hat"])?;
            for (p, d) in report.periods.iter().zip(report.delta_hat) {
                c.write_record([p.as_str(), &d.to_string()])?;
            }
            c.flush()?;
            Ok(())
        }
    }
}
