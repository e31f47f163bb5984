use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};
use clap::Args;
use l2relax::panel::read_table;
use l2relax::tuning::{Validation, PCA_MAX_FACTORS};
use l2relax::{
    compute_gram, fit_method, standardize_in_sample, validate, Estimator, FittedModel, LinearFit,
    RowRef, SolverSettings, SplitSpec, StandardizationParams, TimePanel, ValidationScheme,
};
use serde::Serialize;

use crate::{Format, GlobalOpts};

pub const DEFAULT_SCHEME: &str = "block:5";

/// Parses `END` or `END:START`, each a 1-based row number or a label.
pub fn parse_split(s: &str) -> Result<SplitSpec, String> {
    let (end, start) = match s.split_once(':') {
        Some((e, st)) => (e, Some(st)),
        None => (s, None),
    };
    if end.trim().is_empty() || start.is_some_and(|st| st.trim().is_empty()) {
        return Err(format!("bad split `{s}`, expected END or END:START"));
    }
    let row = |v: &str| v.parse::<RowRef>().expect("infallible");
    Ok(SplitSpec {
        train_end: row(end),
        eval_start: start.map(row),
    })
}

pub fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: l2relax::Error| e.to_string())
}

pub fn split_string(split: &SplitSpec) -> String {
    let show = |r: &RowRef| match r {
        RowRef::Position(k) => k.to_string(),
        RowRef::Label(l) => l.clone(),
    };
    match &split.eval_start {
        Some(s) => format!("{}:{}", show(&split.train_end), show(s)),
        None => show(&split.train_end),
    }
}

/// Estimator choice shared by every command that fits a model.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelOpts {
    /// l2relax, ridge, lasso or pca.
    #[arg(long, default_value = "l2relax", value_parser = parse_estimator)]
    pub method: Estimator,
    /// Fixed tuning value (tau, ridge/LASSO lambda, or number of factors).
    #[arg(long, visible_alias = "hyper", conflicts_with = "validate")]
    pub tau: Option<f64>,
    /// Validation scheme: kfold:K[:SEED], block:K or holdout[:FRACTION].
    #[arg(long)]
    pub validate: Option<String>,
    /// Number of grid points tried during validation.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Fit on the data as given instead of standardizing with training moments.
    #[arg(long)]
    pub raw: bool,
}

impl ModelOpts {
    pub fn scheme(&self, seed: Option<u64>) -> Result<ValidationScheme> {
        let text = self.validate.as_deref().unwrap_or(DEFAULT_SCHEME);
        let scheme: ValidationScheme = text.parse()?;
        let explicit_seed = text.split(':').count() > 2;
        Ok(match seed {
            Some(s) if !explicit_seed => scheme.with_seed(s),
            _ => scheme,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scheme: String,
    pub chosen: f64,
    pub grid: Vec<f64>,
    pub mean_scores: Vec<f64>,
    pub scores: Vec<l2relax::tuning::ScoreRow>,
}

/// A fitted model in original units, plus what produced it.
pub struct ModelOutcome {
    pub fit: FittedModel,
    pub standardization: Option<StandardizationParams>,
    /// The fit on standardized data before mapping back.
    pub internal: Option<FittedModel>,
    pub validation: Option<Validation>,
    pub grid: Vec<f64>,
}

impl ModelOutcome {
    pub fn report(&self) -> Option<ValidationReport> {
        self.validation.as_ref().map(|v| ValidationReport {
            scheme: v.scheme.to_string(),
            chosen: v.chosen,
            grid: self.grid.clone(),
            mean_scores: v.mean_scores.clone(),
            scores: v.scores.clone(),
        })
    }
}

/// Standardizes (unless raw), tunes or fixes the hyperparameter, fits on the
/// training rows and maps the coefficients back to original units.
pub fn fit_panel(panel: &TimePanel, opts: &ModelOpts, seed: Option<u64>) -> Result<ModelOutcome> {
    let (work, params) = if opts.raw {
        (panel.clone(), None)
    } else {
        let (p, s) = standardize_in_sample(panel)?;
        (p, Some(s))
    };
    let settings = SolverSettings::default();
    let (model, validation, grid) = match opts.tau {
        Some(h) => (
            fit_method(&work, opts.method, h, &settings)?,
            None,
            Vec::new(),
        ),
        None => {
            let gram = compute_gram(&work)?;
            let grid = opts
                .method
                .default_grid(&gram, opts.grid, PCA_MAX_FACTORS)?;
            let v = validate(&work, &grid, opts.scheme(seed)?, opts.method, &settings)?;
            (v.fit.clone(), Some(v), grid.values().to_vec())
        }
    };
    if !model.converged() {
        eprintln!("warning: solver stopped before reaching its tolerance");
    }
    let (fit, internal) = match &params {
        Some(p) => {
            let (a, b) = p.to_original(model.alpha(), model.beta());
            (model.with_coefficients(a, b), Some(model))
        }
        None => (model, None),
    };
    Ok(ModelOutcome {
        fit,
        standardization: params,
        internal,
        validation,
        grid,
    })
}

pub fn load_table(path: &std::path::Path) -> Result<l2relax::panel::Table> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(read_table(file)?)
}

/// Destination for command output: a file or stdout.
pub fn sink(global: &GlobalOpts) -> Result<Box<dyn Write>> {
    Ok(match &global.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

pub fn write_json<T: Serialize>(global: &GlobalOpts, value: &T) -> Result<()> {
    let mut w = sink(global)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn format_or(global: &GlobalOpts, default: Format) -> Format {
    global.format.unwrap_or(default)
}

/// Time labels of the given rows, or 1-based row numbers.
pub fn row_labels(labels: Option<&[String]>, rows: &[usize]) -> Vec<String> {
    rows.iter()
        .map(|&t| labels.map_or_else(|| (t + 1).to_string(), |l| l[t].clone()))
        .collect()
}
