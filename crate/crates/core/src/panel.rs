//! Panel time series: ingestion, in-sample standardization, train/evaluation
//! splits and the covariance pair every estimator consumes.
//!
//! The covariance divisor is the number of training periods, not one less.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of training periods accepted from a CSV split.
pub const MIN_TRAIN_ROWS: usize = 3;

/// A target series plus `N` control series on a positional time axis.
///
/// Controls are stored as an `N x T` matrix (one row per unit).
#[derive(Debug, Clone, PartialEq)]
pub struct TimePanel {
    y: DVector<f64>,
    x: DMatrix<f64>,
    target_name: String,
    control_names: Vec<String>,
    time_labels: Option<Vec<String>>,
    train_idx: Vec<usize>,
    eval_idx: Vec<usize>,
}

impl TimePanel {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        train_idx: Vec<usize>,
        eval_idx: Vec<usize>,
    ) -> Result<Self> {
        let t = y.len();
        if x.ncols() != t {
            return Err(Error::Dimension(format!(
                "target has {t} periods but controls have {}",
                x.ncols()
            )));
        }
        check_split(t, &train_idx, &eval_idx)?;
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("panel contains non-finite values"));
        }
        let n = x.nrows();
        Ok(Self {
            y,
            x,
            target_name: "y".to_string(),
            control_names: (1..=n).map(|i| format!("x{i}")).collect(),
            time_labels: None,
            train_idx,
            eval_idx,
        })
    }

    pub fn with_names(mut self, target: impl Into<String>, controls: Vec<String>) -> Result<Self> {
        if controls.len() != self.x.nrows() {
            return Err(Error::Dimension(format!(
                "{} control names for {} controls",
                controls.len(),
                self.x.nrows()
            )));
        }
        self.target_name = target.into();
        self.control_names = controls;
        Ok(self)
    }

    pub fn with_time_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(
                "time labels must cover every period".into(),
            ));
        }
        self.time_labels = Some(labels);
        Ok(self)
    }

    /// Same data with a different train/evaluation split.
    pub fn with_split(&self, train_idx: Vec<usize>, eval_idx: Vec<usize>) -> Result<Self> {
        check_split(self.len(), &train_idx, &eval_idx)?;
        let mut p = self.clone();
        p.train_idx = train_idx;
        p.eval_idx = eval_idx;
        Ok(p)
    }

    /// Replaces the target series, keeping controls and split.
    pub fn with_target(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::Dimension(
                "replacement target has wrong length".into(),
            ));
        }
        let mut p = self.clone();
        p.y = y;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_controls(&self) -> usize {
        self.x.nrows()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Control values at period `t`.
    pub fn x_at(&self, t: usize) -> Vec<f64> {
        self.x.column(t).iter().copied().collect()
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn eval_idx(&self) -> &[usize] {
        &self.eval_idx
    }

    pub fn has_eval(&self) -> bool {
        !self.eval_idx.is_empty()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    pub fn time_labels(&self) -> Option<&[String]> {
        self.time_labels.as_deref()
    }
}

fn check_split(t: usize, train: &[usize], eval: &[usize]) -> Result<()> {
    let mut seen = vec![false; t];
    for &i in train.iter().chain(eval) {
        if i >= t {
            return Err(Error::SplitOutOfRange(i.to_string()));
        }
        if seen[i] {
            return Err(Error::invalid(format!(
                "period {i} appears twice in the train/evaluation split"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Target plus controls for several treated units sharing one control pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPanel {
    /// `M x T`, one row per treated unit.
    pub treated: DMatrix<f64>,
    /// `N x T` controls.
    pub controls: DMatrix<f64>,
    pub treated_names: Vec<String>,
    pub control_names: Vec<String>,
    pub time_labels: Option<Vec<String>>,
    pub train_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
}

impl MultiPanel {
    pub fn new(
        treated: DMatrix<f64>,
        controls: DMatrix<f64>,
        train_idx: Vec<usize>,
        eval_idx: Vec<usize>,
    ) -> Result<Self> {
        if treated.ncols() != controls.ncols() {
            return Err(Error::Dimension(
                "treated and control series differ in length".into(),
            ));
        }
        check_split(controls.ncols(), &train_idx, &eval_idx)?;
        let (m, n) = (treated.nrows(), controls.nrows());
        Ok(Self {
            treated,
            controls,
            treated_names: (1..=m).map(|i| format!("y{i}")).collect(),
            control_names: (1..=n).map(|i| format!("x{i}")).collect(),
            time_labels: None,
            train_idx,
            eval_idx,
        })
    }

    pub fn n_treated(&self) -> usize {
        self.treated.nrows()
    }

    /// Single-target view of treated unit `i`.
    pub fn unit(&self, i: usize) -> Result<TimePanel> {
        let y = self.treated.row(i).transpose();
        let p = TimePanel::new(
            y,
            self.controls.clone(),
            self.train_idx.clone(),
            self.eval_idx.clone(),
        )?
        .with_names(self.treated_names[i].clone(), self.control_names.clone())?;
        match &self.time_labels {
            Some(l) => p.with_time_labels(l.clone()),
            None => Ok(p),
        }
    }
}

/// In-sample location and scale used to standardize a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_means: Vec<f64>,
    pub x_sds: Vec<f64>,
}

impl StandardizationParams {
    /// Maps coefficients fitted on standardized data back to original units,
    /// returning `(alpha, beta)` such that `y = alpha + x' beta`.
    pub fn to_original(&self, alpha_std: f64, beta_std: &[f64]) -> (f64, Vec<f64>) {
        let beta: Vec<f64> = beta_std
            .iter()
            .zip(&self.x_sds)
            .map(|(b, sd)| b * self.y_sd / sd)
            .collect();
        let shift: f64 = beta_std
            .iter()
            .zip(self.x_means.iter().zip(&self.x_sds))
            .map(|(b, (m, sd))| b * m / sd)
            .sum();
        let alpha = self.y_mean + self.y_sd * (alpha_std - shift);
        (alpha, beta)
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

/// Shifts and scales every series by its training mean and standard deviation
/// (divisor `|T1|`). Evaluation periods use the same parameters.
pub fn standardize_in_sample(panel: &TimePanel) -> Result<(TimePanel, StandardizationParams)> {
    let train = panel.train_idx();
    if train.is_empty() {
        return Err(Error::EmptyIndex("train_idx"));
    }
    let (y_mean, y_sd) = mean_sd(train.iter().map(|&t| panel.y[t]));
    if is_constant(y_mean, y_sd) {
        return Err(Error::ConstantSeries(panel.target_name.clone()));
    }
    let n = panel.n_controls();
    let mut x_means = Vec::with_capacity(n);
    let mut x_sds = Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = mean_sd(train.iter().map(|&t| panel.x[(i, t)]));
        if is_constant(m, s) {
            return Err(Error::ConstantSeries(panel.control_names[i].clone()));
        }
        x_means.push(m);
        x_sds.push(s);
    }
    let mut out = panel.clone();
    out.y.iter_mut().for_each(|v| *v = (*v - y_mean) / y_sd);
    for i in 0..n {
        for t in 0..panel.len() {
            out.x[(i, t)] = (panel.x[(i, t)] - x_means[i]) / x_sds[i];
        }
    }
    Ok((
        out,
        StandardizationParams {
            y_mean,
            y_sd,
            x_means,
            x_sds,
        },
    ))
}

/// Standardizes the controls once and every treated series separately, all
/// with training-period moments. Returns one parameter set per treated unit.
pub fn standardize_multi(panel: &MultiPanel) -> Result<(MultiPanel, Vec<StandardizationParams>)> {
    let m = panel.n_treated();
    if m == 0 {
        return Err(Error::invalid("no treated units"));
    }
    let mut params = Vec::with_capacity(m);
    let mut treated = panel.treated.clone();
    let mut controls = None;
    for i in 0..m {
        let (std_unit, p) = standardize_in_sample(&panel.unit(i)?)?;
        treated.set_row(i, &std_unit.y().transpose());
        if controls.is_none() {
            controls = Some(std_unit.x().clone());
        }
        params.push(p);
    }
    let out = MultiPanel {
        treated,
        controls: controls.expect("at least one unit"),
        ..panel.clone()
    };
    Ok((out, params))
}

/// Sample covariance of the controls and their cross-covariance with the
/// target over the training periods, plus the training means.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    pub sigma: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub y_mean: f64,
    pub x_means: DVector<f64>,
    pub n_obs: usize,
}

impl GramPair {
    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn eta_sup(&self) -> f64 {
        self.eta.amax()
    }
}

/// Gram pair over the panel's training periods.
pub fn compute_gram(panel: &TimePanel) -> Result<GramPair> {
    compute_gram_on(panel, panel.train_idx())
}

/// Gram pair over an arbitrary set of periods.
pub fn compute_gram_on(panel: &TimePanel, idx: &[usize]) -> Result<GramPair> {
    let (xc, yc, x_means, y_mean) = demeaned(panel.x(), panel.y(), idx)?;
    let t = idx.len() as f64;
    let sigma = (&xc * xc.transpose()) / t;
    let eta = (&xc * yc) / t;
    Ok(GramPair {
        sigma,
        eta,
        y_mean,
        x_means,
        n_obs: idx.len(),
    })
}

/// Demeaned controls over a fixed set of periods, for building gram pairs
/// of many targets that share the same controls.
pub(crate) struct SharedControls {
    xc: DMatrix<f64>,
    sigma: DMatrix<f64>,
    x_means: DVector<f64>,
    idx: Vec<usize>,
}

impl SharedControls {
    pub(crate) fn new(x: &DMatrix<f64>, idx: &[usize]) -> Result<Self> {
        let dummy = DVector::zeros(x.ncols());
        let (xc, _, x_means, _) = demeaned(x, &dummy, idx)?;
        let sigma = (&xc * xc.transpose()) / idx.len() as f64;
        Ok(Self {
            xc,
            sigma,
            x_means,
            idx: idx.to_vec(),
        })
    }

    pub(crate) fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Gram pair for target `y` (indexed by period, full length).
    pub(crate) fn gram(&self, y: impl Fn(usize) -> f64) -> GramPair {
        let t = self.idx.len() as f64;
        let y_mean = self.idx.iter().map(|&s| y(s)).sum::<f64>() / t;
        let yc = DVector::from_iterator(self.idx.len(), self.idx.iter().map(|&s| y(s) - y_mean));
        GramPair {
            sigma: self.sigma.clone(),
            eta: (&self.xc * yc) / t,
            y_mean,
            x_means: self.x_means.clone(),
            n_obs: self.idx.len(),
        }
    }
}

/// Demeaned controls (`N x |idx|`) and target over `idx`, with their means.
pub(crate) fn demeaned(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    idx: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>, f64)> {
    if idx.len() < 2 {
        return Err(Error::TooFewTrainingRows {
            required: 2,
            got: idx.len(),
        });
    }
    let n = x.nrows();
    let t = idx.len() as f64;
    let mut xc = x.select_columns(idx);
    let mut x_means = DVector::zeros(n);
    for i in 0..n {
        let m = xc.row(i).sum() / t;
        x_means[i] = m;
        xc.row_mut(i).add_scalar_mut(-m);
    }
    let y_mean = idx.iter().map(|&s| y[s]).sum::<f64>() / t;
    let yc = DVector::from_iterator(idx.len(), idx.iter().map(|&s| y[s] - y_mean));
    Ok((xc, yc, x_means, y_mean))
}

/// Row reference used for splitting: a 1-based row position or a value of
/// the label column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowRef {
    Position(usize),
    Label(String),
}

impl FromStr for RowRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(k) => RowRef::Position(k),
            Err(_) => RowRef::Label(s.trim().to_string()),
        })
    }
}

impl RowRef {
    fn resolve(&self, n_rows: usize, labels: Option<&[String]>) -> Result<usize> {
        match self {
            RowRef::Position(k) if (1..=n_rows).contains(k) => Ok(k - 1),
            RowRef::Position(k) => Err(Error::SplitOutOfRange(k.to_string())),
            RowRef::Label(l) => labels
                .and_then(|ls| ls.iter().position(|x| x == l))
                .ok_or_else(|| Error::SplitOutOfRange(l.clone())),
        }
    }
}

/// How a CSV's rows are divided into training and evaluation periods.
///
/// Training runs from the first row through `train_end`. Evaluation starts at
/// `eval_start` (default: the row right after `train_end`) and runs to the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: RowRef,
    pub eval_start: Option<RowRef>,
}

impl SplitSpec {
    pub fn after(row: RowRef) -> Self {
        Self {
            train_end: row,
            eval_start: None,
        }
    }

    pub fn resolve(
        &self,
        n_rows: usize,
        labels: Option<&[String]>,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let last_train = self.train_end.resolve(n_rows, labels)?;
        let first_eval = match &self.eval_start {
            Some(r) => {
                let k = r.resolve(n_rows, labels)?;
                if k <= last_train {
                    return Err(Error::invalid(
                        "evaluation must start after the last training row",
                    ));
                }
                k
            }
            None => last_train + 1,
        };
        let train: Vec<usize> = (0..=last_train).collect();
        if train.len() < MIN_TRAIN_ROWS {
            return Err(Error::TooFewTrainingRows {
                required: MIN_TRAIN_ROWS,
                got: train.len(),
            });
        }
        Ok((train, (first_eval..n_rows).collect()))
    }
}

/// Header plus numeric columns of a CSV, with an optional label column.
#[derive(Debug, Clone)]
pub struct Table {
    pub labels: Option<Vec<String>>,
    pub label_header: Option<String>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.1.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }

    fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.columns.remove(pos).1)
    }
}

/// Reads a headered CSV. The first column is treated as labels when any of
/// its cells is not a number.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut raw: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        raw.push(rec.iter().map(str::to_string).collect());
    }
    let label_col = !headers.is_empty()
        && raw
            .iter()
            .any(|r| !r[0].is_empty() && r[0].parse::<f64>().is_err());
    let first_data = usize::from(label_col);
    let mut columns = Vec::with_capacity(headers.len().saturating_sub(first_data));
    for (c, name) in headers.iter().enumerate().skip(first_data) {
        let mut col = Vec::with_capacity(raw.len());
        for (r, rec) in raw.iter().enumerate() {
            let cell = rec[c].as_str();
            if cell.is_empty()
                || cell.eq_ignore_ascii_case("na")
                || cell.eq_ignore_ascii_case("nan")
            {
                return Err(Error::MissingValue {
                    column: name.clone(),
                    row: r + 1,
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                column: name.clone(),
                row: r + 1,
                value: cell.to_string(),
            })?;
            col.push(v);
        }
        columns.push((name.clone(), col));
    }
    Ok(Table {
        labels: label_col.then(|| raw.iter().map(|r| r[0].clone()).collect()),
        label_header: label_col.then(|| headers[0].clone()),
        columns,
    })
}

/// Builds a single-target panel from CSV contents.
pub fn read_panel_csv<R: Read>(reader: R, target: &str, split: &SplitSpec) -> Result<TimePanel> {
    let mut table = read_table(reader)?;
    let y = table.take(target)?;
    let (train, eval) = split.resolve(y.len(), table.labels.as_deref())?;
    let names: Vec<String> = table.columns.iter().map(|c| c.0.clone()).collect();
    let x = rows_to_matrix(&table.columns, y.len());
    let panel = TimePanel::new(DVector::from_vec(y), x, train, eval)?.with_names(target, names)?;
    match table.labels {
        Some(l) => panel.with_time_labels(l),
        None => Ok(panel),
    }
}

pub fn load_panel_csv(
    path: impl AsRef<Path>,
    target: &str,
    split: &SplitSpec,
) -> Result<TimePanel> {
    let file = std::fs::File::open(path)?;
    read_panel_csv(file, target, split)
}

/// Builds a multi-target panel: every column in `treated` becomes a treated
/// unit, every other numeric column a control.
pub fn read_multi_panel_csv<R: Read>(
    reader: R,
    treated: &[String],
    split: &SplitSpec,
) -> Result<MultiPanel> {
    let mut table = read_table(reader)?;
    if treated.is_empty() {
        return Err(Error::invalid("at least one treated column is required"));
    }
    let t = table.n_rows();
    let mut treated_cols = Vec::with_capacity(treated.len());
    for name in treated {
        treated_cols.push((name.clone(), table.take(name)?));
    }
    let (train, eval) = split.resolve(t, table.labels.as_deref())?;
    let mut panel = MultiPanel::new(
        rows_to_matrix(&treated_cols, t),
        rows_to_matrix(&table.columns, t),
        train,
        eval,
    )?;
    panel.treated_names = treated.to_vec();
    panel.control_names = table.columns.iter().map(|c| c.0.clone()).collect();
    panel.time_labels = table.labels;
    Ok(panel)
}

pub fn load_multi_panel_csv(
    path: impl AsRef<Path>,
    treated: &[String],
    split: &SplitSpec,
) -> Result<MultiPanel> {
    let file = std::fs::File::open(path)?;
    read_multi_panel_csv(file, treated, split)
}

fn rows_to_matrix(cols: &[(String, Vec<f64>)], t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(cols.len(), t, |i, s| cols[i].1[s])
}
