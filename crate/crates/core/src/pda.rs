//! Treatment-effect estimation and inference for the panel data approach:
//! one treated unit with a time-averaged effect, many treated units with a
//! cross-sectional average, and pre-treatment placebo tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{residuals, LinearFit};
use crate::panel::{MultiPanel, TimePanel, MIN_TRAIN_ROWS};
use crate::solver::SolverSettings;
use crate::tuning::{validate, Estimator, TauGrid, ValidationScheme};

/// Denominators at or below this are treated as degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Uniform,
    Bartlett,
}

impl Kernel {
    fn weight(&self, lag: usize, h: usize) -> f64 {
        match self {
            Kernel::Uniform => 1.0,
            Kernel::Bartlett => 1.0 - lag as f64 / (h as f64 + 1.0),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Uniform => "uniform",
            Kernel::Bartlett => "bartlett",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Kernel::Uniform),
            "bartlett" => Ok(Kernel::Bartlett),
            _ => Err(Error::invalid(format!("unknown kernel `{s}`"))),
        }
    }
}

/// Truncated autocovariance sum with divisor `L` at every lag, after
/// demeaning. Uniform kernel.
pub fn hac_lrv(series: &[f64], h: usize) -> Result<f64> {
    long_run_variance(series, h, Kernel::Uniform, true)
}

/// `sum_{|l| <= h} w(l) (1/L) sum_t s_t s_{t+l}` over valid pairs, with `s`
/// demeaned first when `demean` is set.
pub fn long_run_variance(series: &[f64], h: usize, kernel: Kernel, demean: bool) -> Result<f64> {
    let l = series.len();
    if l < 2 {
        return Err(Error::invalid(format!(
            "long-run variance needs at least 2 points, got {l}"
        )));
    }
    if h >= l {
        return Err(Error::invalid(format!(
            "lag truncation {h} must be below the series length {l}"
        )));
    }
    let mean = if demean {
        series.iter().sum::<f64>() / l as f64
    } else {
        0.0
    };
    let s: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let mut total = s.iter().map(|v| v * v).sum::<f64>();
    for lag in 1..=h {
        let acov: f64 = s[..l - lag].iter().zip(&s[lag..]).map(|(a, b)| a * b).sum();
        total += 2.0 * kernel.weight(lag, h) * acov;
    }
    Ok(total / l as f64)
}

/// `floor(L^{1/5})`.
pub fn default_lag(l: usize) -> usize {
    let mut k = (l as f64).powf(0.2).floor() as usize;
    while (k + 1).pow(5) <= l {
        k += 1;
    }
    while k > 0 && k.pow(5) > l {
        k -= 1;
    }
    k
}

/// Two-sided standard normal p-value.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleUnitResult {
    pub delta_hat: Vec<f64>,
    pub ate: f64,
    pub rho1_sq: f64,
    pub rho2_sq: f64,
    pub h1: usize,
    pub h2: usize,
    pub z: f64,
    pub p_value: f64,
}

/// Average effect over the evaluation periods and its t-statistic
/// `mean(Delta) / sqrt(rho1^2 / T1 + rho2^2 / T2)` under a zero null.
///
/// `rho1^2` comes from the training residuals as they are (the intercept
/// already centers them); `rho2^2` from the demeaned post-period gaps.
pub fn ate_single(
    fit: &impl LinearFit,
    panel: &TimePanel,
    h1: usize,
    h2: usize,
    kernel: Kernel,
) -> Result<SingleUnitResult> {
    let t1 = panel.train_idx().len();
    let t2 = panel.eval_idx().len();
    if t2 < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 post-treatment periods, got {t2}"
        )));
    }
    if fit.beta().len() != panel.n_controls() {
        return Err(Error::Dimension(
            "fit and panel disagree on the number of controls".into(),
        ));
    }
    let e = residuals(fit, panel, panel.train_idx());
    let delta_hat = residuals(fit, panel, panel.eval_idx());
    let ate = delta_hat.iter().sum::<f64>() / t2 as f64;
    let rho1_sq = long_run_variance(&e, h1, kernel, false)?;
    let rho2_sq = long_run_variance(&delta_hat, h2, kernel, true)?;
    let denominator = rho1_sq / t1 as f64 + rho2_sq / t2 as f64;
    if !(denominator > VARIANCE_FLOOR) {
        return Err(Error::DegenerateVariance { denominator });
    }
    let z = ate / denominator.sqrt();
    Ok(SingleUnitResult {
        delta_hat,
        ate,
        rho1_sq,
        rho2_sq,
        h1,
        h2,
        z,
        p_value: two_sided_p(z),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiUnitResult {
    /// `M x T2`, one row per treated unit.
    pub delta_hat: Vec<Vec<f64>>,
    pub ate_t: Vec<f64>,
    pub v_hat_sq: f64,
    pub z_t: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// Cross-sectional average effect per post period with
/// `Z_t = sqrt(M) mean_i(Delta_it) / V`, where
/// `V^2 = (1/M) sum_{i,j} mean_{t in T1}(e_it e_jt)`.
pub fn ate_multi<F: LinearFit>(fits: &[F], panel: &MultiPanel) -> Result<MultiUnitResult> {
    let m = panel.n_treated();
    if fits.len() != m {
        return Err(Error::Dimension(format!(
            "{} fits for {m} treated units",
            fits.len()
        )));
    }
    if m == 0 {
        return Err(Error::invalid("no treated units"));
    }
    if panel.eval_idx.is_empty() {
        return Err(Error::EmptyIndex("post-treatment periods"));
    }
    let t1 = panel.train_idx.len();
    let t2 = panel.eval_idx.len();
    let mut pooled = vec![0.0; t1];
    let mut delta_hat = Vec::with_capacity(m);
    for (i, fit) in fits.iter().enumerate() {
        if fit.beta().len() != panel.controls.nrows() {
            return Err(Error::Dimension(
                "fit and panel disagree on the number of controls".into(),
            ));
        }
        let gap = |t: usize| {
            let x = panel.controls.column(t);
            let pred = fit.alpha()
                + fit
                    .beta()
                    .iter()
                    .zip(x.iter())
                    .map(|(b, v)| b * v)
                    .sum::<f64>();
            panel.treated[(i, t)] - pred
        };
        for (acc, &t) in pooled.iter_mut().zip(&panel.train_idx) {
            *acc += gap(t);
        }
        delta_hat.push(panel.eval_idx.iter().map(|&t| gap(t)).collect::<Vec<f64>>());
    }
    let v_hat_sq = pooled.iter().map(|s| s * s).sum::<f64>() / (m as f64 * t1 as f64);
    if !(v_hat_sq > VARIANCE_FLOOR) {
        return Err(Error::DegenerateVariance {
            denominator: v_hat_sq,
        });
    }
    let ate_t: Vec<f64> = (0..t2)
        .map(|k| delta_hat.iter().map(|row| row[k]).sum::<f64>() / m as f64)
        .collect();
    let scale = (m as f64).sqrt() / v_hat_sq.sqrt();
    let z_t: Vec<f64> = ate_t.iter().map(|a| a * scale).collect();
    let p_values = z_t.iter().map(|&z| two_sided_p(z)).collect();
    Ok(MultiUnitResult {
        delta_hat,
        ate_t,
        v_hat_sq,
        z_t,
        p_values,
    })
}

/// Lag truncations for a placebo or post-period test; `None` picks
/// [`default_lag`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagChoice {
    pub h1: Option<usize>,
    pub h2: Option<usize>,
}

impl LagChoice {
    pub fn resolve(&self, t1: usize, t2: usize) -> (usize, usize) {
        (
            self.h1.unwrap_or_else(|| default_lag(t1)),
            self.h2.unwrap_or_else(|| default_lag(t2)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub method: Estimator,
    pub hyper: f64,
    pub pseudo_train: usize,
    pub pseudo_post: usize,
    pub result: SingleUnitResult,
}

/// Treats the first `pre_split` training periods as pseudo-training and the
/// rest of the training periods as a pseudo-post period, tunes and fits on
/// the former and tests for a zero effect on the latter.
#[allow(clippy::too_many_arguments)]
pub fn placebo_test(
    panel: &TimePanel,
    pre_split: usize,
    method: Estimator,
    scheme: ValidationScheme,
    grid_points: usize,
    lags: LagChoice,
    kernel: Kernel,
    settings: &SolverSettings,
) -> Result<PlaceboResult> {
    let train = panel.train_idx();
    if pre_split < MIN_TRAIN_ROWS || train.len().saturating_sub(pre_split) < MIN_TRAIN_ROWS {
        return Err(Error::SplitOutOfRange(format!(
            "placebo split {pre_split} of {} pre-treatment periods leaves fewer than {MIN_TRAIN_ROWS} on a side",
            train.len()
        )));
    }
    let pseudo = panel.with_split(train[..pre_split].to_vec(), train[pre_split..].to_vec())?;
    let gram = crate::panel::compute_gram(&pseudo)?;
    let grid: TauGrid = method.default_grid(&gram, grid_points, crate::tuning::PCA_MAX_FACTORS)?;
    let v = validate(&pseudo, &grid, scheme, method, settings)?;
    let (h1, h2) = lags.resolve(pseudo.train_idx().len(), pseudo.eval_idx().len());
    let result = ate_single(&v.fit, &pseudo, h1, h2, kernel)?;
    Ok(PlaceboResult {
        method,
        hyper: v.chosen,
        pseudo_train: pseudo.train_idx().len(),
        pseudo_post: pseudo.eval_idx().len(),
        result,
    })
}
