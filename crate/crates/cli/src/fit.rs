use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use l2relax::nalgebra::{DMatrix, DVector};
use l2relax::{mpse, Estimator, FittedModel, LinearFit, StandardizationParams, TimePanel};
use serde::{Deserialize, Serialize};

use crate::io::{self, fit_panel, ModelOpts, ValidationReport};
use crate::{Format, GlobalOpts};

/// Agreement required between stored and recomputed MPSE.
const ROUNDTRIP_TOL: f64 = 1e-10;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a header row; an optional first column of time labels.
    #[arg(long)]
    pub input: PathBuf,
    /// Column to predict; every other numeric column is a control.
    #[arg(long)]
    pub target: String,
    /// Last training row, optionally followed by `:FIRST_EVAL_ROW`.
    #[arg(long, value_parser = io::parse_split)]
    pub split: l2relax::SplitSpec,
    #[command(flatten)]
    pub model: ModelOpts,
    /// Also write the validation score table to this CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FitConfig<'a> {
    input: String,
    target: &'a str,
    split: String,
    #[serde(flatten)]
    model: &'a ModelOpts,
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    command: &'static str,
    config: FitConfig<'a>,
    method: Estimator,
    hyper: f64,
    standardized: bool,
    target: &'a str,
    controls: &'a [String],
    /// 1-based row numbers.
    train_rows: Vec<usize>,
    eval_rows: Vec<usize>,
    alpha: f64,
    beta: &'a [f64],
    converged: bool,
    mpse_in: f64,
    mpse_oos: Option<f64>,
    standardization: Option<&'a StandardizationParams>,
    internal_fit: Option<&'a FittedModel>,
    validation: Option<ValidationReport>,
}

fn one_based(rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|t| t + 1).collect()
}

pub fn run_fit(global: &GlobalOpts, args: FitArgs) -> Result<()> {
    let panel = l2relax::load_panel_csv(&args.input, &args.target, &args.split)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let outcome = fit_panel(&panel, &args.model, global.seed)?;
    let fit = &outcome.fit;
    let mpse_in = mpse(fit, &panel, panel.train_idx())?;
    let mpse_oos = if panel.has_eval() {
        Some(mpse(fit, &panel, panel.eval_idx())?)
    } else {
        None
    };
    if let (Some(path), Some(v)) = (&args.scores, &outcome.validation) {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        v.write_scores_csv(file)?;
    }
    let out = FitOutput {
        command: "fit",
        config: FitConfig {
            input: args.input.display().to_string(),
            target: &args.target,
            split: io::split_string(&args.split),
            model: &args.model,
            seed: global.seed,
        },
        method: args.model.method,
        hyper: fit.hyper(),
        standardized: !args.model.raw,
        target: panel.target_name(),
        controls: panel.control_names(),
        train_rows: one_based(panel.train_idx()),
        eval_rows: one_based(panel.eval_idx()),
        alpha: fit.alpha(),
        beta: fit.beta(),
        converged: fit.converged(),
        mpse_in,
        mpse_oos,
        standardization: outcome.standardization.as_ref(),
        internal_fit: outcome.internal.as_ref(),
        validation: outcome.report(),
    };
    match io::format_or(global, Format::Json) {
        Format::Json => io::write_json(global, &out),
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# fit method={} hyper={} standardized={} mpse_in={} mpse_oos={}",
                out.method.name(),
                out.hyper,
                out.standardized,
                out.mpse_in,
                out.mpse_oos.map_or("NA".to_string(), |v| v.to_string())
            )?;
            writeln!(w, "# config: {}", serde_json::to_string(&out.config)?)?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["term", "coefficient"])?;
            c.write_record(["(intercept)", &out.alpha.to_string()])?;
            for (name, b) in out.controls.iter().zip(out.beta) {
                c.write_record([name.as_str(), &b.to_string()])?;
            }
            c.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV containing the fitted controls.
    #[arg(long)]
    pub input: PathBuf,
}

/// The parts of a fit file needed to predict.
#[derive(Debug, Deserialize)]
struct StoredFit {
    target: String,
    controls: Vec<String>,
    train_rows: Vec<usize>,
    eval_rows: Vec<usize>,
    alpha: f64,
    beta: Vec<f64>,
    mpse_in: f64,
    mpse_oos: Option<f64>,
}

impl LinearFit for StoredFit {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> &[f64] {
        &self.beta
    }
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    row: usize,
    label: String,
    y: Option<f64>,
    yhat: f64,
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    command: &'static str,
    config: serde_json::Value,
    predictions: Vec<PredictionRow>,
    mpse_in: Option<f64>,
    mpse_oos: Option<f64>,
    stored_mpse_in: f64,
    stored_mpse_oos: Option<f64>,
}

fn zero_based(rows: &[usize], n: usize) -> Option<Vec<usize>> {
    rows.iter()
        .map(|&r| (1..=n).contains(&r).then(|| r - 1))
        .collect()
}

pub fn run_predict(global: &GlobalOpts, args: PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.fit)
        .with_context(|| format!("cannot read {}", args.fit.display()))?;
    let stored: StoredFit = serde_json::from_str(&text).context("not a fit file")?;
    if stored.controls.len() != stored.beta.len() {
        bail!(
            "fit file has {} controls but {} coefficients",
            stored.controls.len(),
            stored.beta.len()
        );
    }
    let table = io::load_table(&args.input)?;
    let t = table.n_rows();
    let mut x = DMatrix::zeros(stored.controls.len(), t);
    for (i, name) in stored.controls.iter().enumerate() {
        let col = table
            .column(name)
            .with_context(|| format!("missing column `{name}`"))?;
        x.row_mut(i).copy_from_slice(col);
    }
    let y = table
        .column(&stored.target)
        .map(DVector::from_column_slice);
    let yhat: Vec<f64> = (0..t)
        .map(|s| stored.predict_at(x.column(s).as_slice()))
        .collect();

    let mut mpse_in = None;
    let mut mpse_oos = None;
    if let Some(y) = &y {
        match (
            zero_based(&stored.train_rows, t),
            zero_based(&stored.eval_rows, t),
        ) {
            (Some(train), Some(eval)) => {
                let panel = TimePanel::new(y.clone(), x.clone(), train, eval)?;
                mpse_in = Some(mpse(&stored, &panel, panel.train_idx())?);
                if panel.has_eval() {
                    mpse_oos = Some(mpse(&stored, &panel, panel.eval_idx())?);
                }
            }
            _ => eprintln!("warning: stored rows are outside this file; MPSE not recomputed"),
        }
    }
    let labels = io::row_labels(table.labels.as_deref(), &(0..t).collect::<Vec<_>>());
    let out = PredictOutput {
        command: "predict",
        config: serde_json::json!({
            "fit": args.fit.display().to_string(),
            "input": args.input.display().to_string(),
        }),
        predictions: (0..t)
            .map(|s| PredictionRow {
                row: s + 1,
                label: labels[s].clone(),
                y: y.as_ref().map(|y| y[s]),
                yhat: yhat[s],
            })
            .collect(),
        mpse_in,
        mpse_oos,
        stored_mpse_in: stored.mpse_in,
        stored_mpse_oos: stored.mpse_oos,
    };
    match io::format_or(global, Format::Json) {
        Format::Json => io::write_json(global, &out)?,
        Format::Csv => {
            let mut w = io::sink(global)?;
            writeln!(
                w,
                "# predict fit={} mpse_in={:?} mpse_oos={:?}",
                args.fit.display(),
                mpse_in,
                mpse_oos
            )?;
            let mut c = csv::Writer::from_writer(w);
            for row in &out.predictions {
                c.serialize(row)?;
            }
            c.flush()?;
        }
    }
    check_roundtrip("in-sample", mpse_in, Some(stored.mpse_in))?;
    check_roundtrip("out-of-sample", mpse_oos, stored.mpse_oos)
}

fn check_roundtrip(what: &str, got: Option<f64>, stored: Option<f64>) -> Result<()> {
    if let (Some(g), Some(s)) = (got, stored) {
        if (g - s).abs() > ROUNDTRIP_TOL {
            bail!("{what} MPSE {g} does not reproduce the stored {s}");
        }
    }
    Ok(())
}
