//! Hyperparameter selection by K-fold, K-block, or sequential hold-out
//! validation inside the training periods.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_path, ridge_path, BaselineFit, PcaBasis};
use crate::error::{Error, Result};
use crate::linalg::log_space;
use crate::model::{mpse, LinearFit};
use crate::panel::{
    compute_gram_on, GramPair, MultiPanel, SharedControls, TimePanel, MIN_TRAIN_ROWS,
};
use crate::solver::{DualSolver, RelaxationFit, SolverSettings};

pub const DEFAULT_GRID_POINTS: usize = 50;
pub const DEFAULT_HOLDOUT: f64 = 0.2;
/// Largest number of factors tried when PCA is validated.
pub const PCA_MAX_FACTORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationScheme {
    /// Random folds drawn under `seed`.
    KFold { k: usize, seed: u64 },
    /// Contiguous time blocks.
    Block { k: usize },
    /// Trailing `fraction` of the training periods.
    SequentialHoldout { fraction: f64 },
}

impl Default for ValidationScheme {
    fn default() -> Self {
        ValidationScheme::SequentialHoldout {
            fraction: DEFAULT_HOLDOUT,
        }
    }
}

impl fmt::Display for ValidationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationScheme::KFold { k, seed } => write!(f, "kfold:{k}:{seed}"),
            ValidationScheme::Block { k } => write!(f, "block:{k}"),
            ValidationScheme::SequentialHoldout { fraction } => write!(f, "holdout:{fraction}"),
        }
    }
}

/// Parses `kfold:K[:SEED]`, `block:K`, or `holdout[:FRACTION]`.
impl FromStr for ValidationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::invalid(format!("unrecognized validation scheme `{s}`"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["kfold", k] => Ok(ValidationScheme::KFold {
                k: int(k)?,
                seed: 0,
            }),
            ["kfold", k, seed] => Ok(ValidationScheme::KFold {
                k: int(k)?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            ["block", k] => Ok(ValidationScheme::Block { k: int(k)? }),
            ["holdout"] => Ok(ValidationScheme::default()),
            ["holdout", fr] => Ok(ValidationScheme::SequentialHoldout {
                fraction: fr.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// One fit-set / score-set pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub label: String,
    pub fit_idx: Vec<usize>,
    pub score_idx: Vec<usize>,
}

impl ValidationScheme {
    /// Replaces the seed of a K-fold scheme; other schemes are unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ValidationScheme::KFold { k, .. } => ValidationScheme::KFold { k, seed },
            other => other,
        }
    }

    /// Partitions the training periods `train` into folds.
    pub fn folds(&self, train: &[usize]) -> Result<Vec<Fold>> {
        let t1 = train.len();
        let infeasible = |msg: String| Err(Error::InfeasibleScheme(msg));
        match *self {
            ValidationScheme::SequentialHoldout { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return infeasible(format!("hold-out fraction {fraction} not in (0, 1)"));
                }
                let n_val = (fraction * t1 as f64).round() as usize;
                if n_val < 2 || t1 - n_val < MIN_TRAIN_ROWS {
                    return infeasible(format!(
                        "hold-out of {n_val} periods from {t1} training periods"
                    ));
                }
                let cut = t1 - n_val;
                Ok(vec![Fold {
                    label: "holdout".into(),
                    fit_idx: train[..cut].to_vec(),
                    score_idx: train[cut..].to_vec(),
                }])
            }
            ValidationScheme::Block { k } | ValidationScheme::KFold { k, .. } => {
                if k < 2 || k > t1 {
                    return infeasible(format!("{k} folds for {t1} training periods"));
                }
                let mut positions: Vec<usize> = (0..t1).collect();
                if let ValidationScheme::KFold { seed, .. } = *self {
                    positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                }
                let mut folds = Vec::with_capacity(k);
                for f in 0..k {
                    let (lo, hi) = (f * t1 / k, (f + 1) * t1 / k);
                    let mut score: Vec<usize> = positions[lo..hi].to_vec();
                    score.sort_unstable();
                    if t1 - score.len() < MIN_TRAIN_ROWS {
                        return infeasible(format!("{k} folds for {t1} training periods"));
                    }
                    let mut in_score = vec![false; t1];
                    for &p in &score {
                        in_score[p] = true;
                    }
                    folds.push(Fold {
                        label: format!("fold{}", f + 1),
                        fit_idx: (0..t1)
                            .filter(|&p| !in_score[p])
                            .map(|p| train[p])
                            .collect(),
                        score_idx: score.into_iter().map(|p| train[p]).collect(),
                    });
                }
                Ok(folds)
            }
        }
    }
}

/// Strictly increasing, nonempty, nonnegative hyperparameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    values: Vec<f64>,
}

impl TauGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("grid values must be finite and nonnegative"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Log-spaced from `1e-4 |eta|_inf` to `|eta|_inf`.
pub fn default_grid(gram: &GramPair, n_points: usize) -> Result<TauGrid> {
    if n_points < 2 {
        return Err(Error::invalid("a grid needs at least 2 points"));
    }
    let top = gram.eta_sup();
    if top <= 0.0 {
        return Err(Error::invalid("eta is zero; every tau gives the zero fit"));
    }
    TauGrid::new(log_space(1e-4 * top, top, n_points))
}

/// How a grid is obtained for each fit: a method default with a number of
/// points, or fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Points(usize),
    Values(TauGrid),
}

impl GridSpec {
    pub fn resolve(&self, method: Estimator, gram: &GramPair) -> Result<TauGrid> {
        match self {
            GridSpec::Points(n) => method.default_grid(gram, *n, PCA_MAX_FACTORS),
            GridSpec::Values(g) => Ok(g.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    L2Relax,
    Ridge,
    Lasso,
    Pca,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::L2Relax => "l2relax",
            Estimator::Ridge => "ridge",
            Estimator::Lasso => "lasso",
            Estimator::Pca => "pca",
        }
    }

    /// A default grid for this method on `gram`.
    pub fn default_grid(
        &self,
        gram: &GramPair,
        n_points: usize,
        max_factors: usize,
    ) -> Result<TauGrid> {
        match self {
            Estimator::L2Relax | Estimator::Lasso => default_grid(gram, n_points),
            Estimator::Ridge => {
                if n_points < 2 {
                    return Err(Error::invalid("a grid needs at least 2 points"));
                }
                let scale = gram.sigma.trace() / gram.dim() as f64;
                if scale <= 0.0 {
                    return Err(Error::invalid("controls have zero variance"));
                }
                TauGrid::new(log_space(1e-4 * scale, 1e3 * scale, n_points))
            }
            Estimator::Pca => {
                let kmax = max_factors
                    .min(gram.dim())
                    .min(gram.n_obs.saturating_sub(1))
                    .max(1);
                TauGrid::new((1..=kmax).map(|k| k as f64).collect())
            }
        }
    }

    /// Whether `a` shrinks more than `b`; used to break validation ties.
    fn shrinks_more(&self, a: f64, b: f64) -> bool {
        match self {
            Estimator::Pca => a < b,
            _ => a > b,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2relax" | "l2-relax" | "l2_relax" | "l2" => Ok(Estimator::L2Relax),
            "ridge" => Ok(Estimator::Ridge),
            "lasso" => Ok(Estimator::Lasso),
            "pca" => Ok(Estimator::Pca),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

/// A fit from any estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FittedModel {
    Relaxation(RelaxationFit),
    Baseline(BaselineFit),
}

impl FittedModel {
    pub fn hyper(&self) -> f64 {
        match self {
            FittedModel::Relaxation(f) => f.tau,
            FittedModel::Baseline(f) => f.hyper,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Relaxation(f) => f.converged,
            FittedModel::Baseline(f) => f.converged,
        }
    }

    /// Same model with its coefficients replaced, e.g. after mapping back
    /// from standardized units.
    pub fn with_coefficients(&self, alpha: f64, beta: Vec<f64>) -> Self {
        match self {
            FittedModel::Relaxation(f) => FittedModel::Relaxation(RelaxationFit {
                alpha,
                beta,
                ..f.clone()
            }),
            FittedModel::Baseline(f) => FittedModel::Baseline(BaselineFit {
                alpha,
                beta,
                ..f.clone()
            }),
        }
    }
}

impl LinearFit for FittedModel {
    fn alpha(&self) -> f64 {
        match self {
            FittedModel::Relaxation(f) => f.alpha,
            FittedModel::Baseline(f) => f.alpha,
        }
    }

    fn beta(&self) -> &[f64] {
        match self {
            FittedModel::Relaxation(f) => &f.beta,
            FittedModel::Baseline(f) => &f.beta,
        }
    }
}

/// Fits `method` on the periods `idx` at every value in `hypers`, returned in
/// input order.
pub fn fit_grid(
    panel: &TimePanel,
    idx: &[usize],
    method: Estimator,
    hypers: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<FittedModel>> {
    if method == Estimator::Pca {
        let basis = PcaBasis::new(panel, idx)?;
        return hypers
            .iter()
            .map(|&k| {
                if k.fract() != 0.0 || k < 1.0 {
                    return Err(Error::invalid(format!(
                        "number of factors must be a positive integer, got {k}"
                    )));
                }
                basis.fit(k as usize).map(FittedModel::Baseline)
            })
            .collect();
    }
    let gram = compute_gram_on(panel, idx)?;
    fit_grid_gram(&gram, method, hypers, settings)
}

/// Gram-based variant of [`fit_grid`]; PCA needs the raw panel and is
/// rejected here.
pub fn fit_grid_gram(
    gram: &GramPair,
    method: Estimator,
    hypers: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<FittedModel>> {
    Ok(match method {
        Estimator::L2Relax => DualSolver::new(&gram.sigma)
            .fit_path(gram, hypers, settings)?
            .into_iter()
            .map(FittedModel::Relaxation)
            .collect(),
        Estimator::Ridge => ridge_path(gram, hypers)?
            .into_iter()
            .map(FittedModel::Baseline)
            .collect(),
        Estimator::Lasso => lasso_path(gram, hypers, settings)?
            .into_iter()
            .map(FittedModel::Baseline)
            .collect(),
        Estimator::Pca => return Err(Error::invalid("PCA fits need the panel, not the gram")),
    })
}

/// Fits `method` once on the training periods of `panel`.
pub fn fit_method(
    panel: &TimePanel,
    method: Estimator,
    hyper: f64,
    settings: &SolverSettings,
) -> Result<FittedModel> {
    let mut fits = fit_grid(panel, panel.train_idx(), method, &[hyper], settings)?;
    Ok(fits.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub hyper: f64,
    pub fold_or_holdout: String,
    pub mpse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub method: Estimator,
    pub scheme: ValidationScheme,
    pub chosen: f64,
    /// Mean validation MPSE per grid value, aligned with the grid.
    pub mean_scores: Vec<f64>,
    pub scores: Vec<ScoreRow>,
    /// Refit on all training periods at `chosen`.
    pub fit: FittedModel,
}

impl Validation {
    /// Score table as CSV with columns `hyper,fold_or_holdout,mpse`.
    pub fn write_scores_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.scores {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the smallest score; ties go to the value that shrinks more.
pub fn pick_best(method: Estimator, hypers: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] < scores[best]
            || (scores[i] == scores[best] && method.shrinks_more(hypers[i], hypers[best]));
        if better {
            best = i;
        }
    }
    best
}

/// MPSE of every grid value on every fold: `scores[fold][grid]`.
pub fn fold_scores(
    panel: &TimePanel,
    folds: &[Fold],
    hypers: &[f64],
    method: Estimator,
    settings: &SolverSettings,
) -> Result<Vec<Vec<f64>>> {
    folds
        .par_iter()
        .map(|fold| {
            fit_grid(panel, &fold.fit_idx, method, hypers, settings)?
                .iter()
                .map(|f| mpse(f, panel, &fold.score_idx))
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Averages fold scores per grid value.
pub fn mean_over_folds(per_fold: &[Vec<f64>]) -> Vec<f64> {
    let k = per_fold.len() as f64;
    let n = per_fold.first().map_or(0, Vec::len);
    (0..n)
        .map(|j| per_fold.iter().map(|s| s[j]).sum::<f64>() / k)
        .collect()
}

/// Scores every grid value on every fold, picks the minimizer of the mean
/// fold MPSE, and refits on the whole training sample. Evaluation periods are
/// never touched.
pub fn validate(
    panel: &TimePanel,
    grid: &TauGrid,
    scheme: ValidationScheme,
    method: Estimator,
    settings: &SolverSettings,
) -> Result<Validation> {
    let folds = scheme.folds(panel.train_idx())?;
    let hypers = grid.values();
    let per_fold = fold_scores(panel, &folds, hypers, method, settings)?;
    let mut scores = Vec::with_capacity(hypers.len() * folds.len());
    for (j, &h) in hypers.iter().enumerate() {
        for (fold, s) in folds.iter().zip(&per_fold) {
            scores.push(ScoreRow {
                hyper: h,
                fold_or_holdout: fold.label.clone(),
                mpse: s[j],
            });
        }
    }
    let mean_scores = mean_over_folds(&per_fold);
    let chosen = hypers[pick_best(method, hypers, &mean_scores)];
    let fit = fit_method(panel, method, chosen, settings)?;
    Ok(Validation {
        method,
        scheme,
        chosen,
        mean_scores,
        scores,
        fit,
    })
}

/// Outcome of validating one treated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitValidation {
    pub chosen: f64,
    pub fit: FittedModel,
}

/// Validates `method` separately for every treated unit of `panel`, each on
/// the grid `grid` resolves to for it. For L2-relaxation the
/// covariance of the controls and its dual solver are built once per fold
/// and shared across units.
pub fn validate_units(
    panel: &MultiPanel,
    grid: &GridSpec,
    scheme: ValidationScheme,
    method: Estimator,
    settings: &SolverSettings,
) -> Result<Vec<UnitValidation>> {
    if method != Estimator::L2Relax {
        return (0..panel.n_treated())
            .map(|i| {
                let unit = panel.unit(i)?;
                let gram = compute_gram_on(&unit, unit.train_idx())?;
                let grid = grid.resolve(method, &gram)?;
                let v = validate(&unit, &grid, scheme, method, settings)?;
                Ok(UnitValidation {
                    chosen: v.chosen,
                    fit: v.fit,
                })
            })
            .collect();
    }
    settings.validate()?;
    let m = panel.n_treated();
    let target = |i: usize| move |t: usize| panel.treated[(i, t)];
    let full = SharedControls::new(&panel.controls, &panel.train_idx)?;
    let full_grams: Vec<GramPair> = (0..m).map(|i| full.gram(target(i))).collect();
    let grids: Vec<TauGrid> = full_grams
        .iter()
        .map(|g| grid.resolve(method, g))
        .collect::<Result<_>>()?;
    let folds = scheme.folds(&panel.train_idx)?;
    let per_fold: Vec<Vec<Vec<f64>>> = folds
        .par_iter()
        .map(|fold| {
            let shared = SharedControls::new(&panel.controls, &fold.fit_idx)?;
            let solver = DualSolver::new(shared.sigma());
            (0..m)
                .map(|i| {
                    let gram = shared.gram(target(i));
                    let path = solver.fit_path(&gram, grids[i].values(), settings)?;
                    Ok(path
                        .iter()
                        .map(|f| {
                            fold.score_idx
                                .iter()
                                .map(|&t| {
                                    let x = panel.controls.column(t);
                                    let pred = f.alpha
                                        + f.beta
                                            .iter()
                                            .zip(x.iter())
                                            .map(|(b, v)| b * v)
                                            .sum::<f64>();
                                    (panel.treated[(i, t)] - pred).powi(2)
                                })
                                .sum::<f64>()
                                / fold.score_idx.len() as f64
                        })
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    let solver = DualSolver::new(full.sigma());
    (0..m)
        .map(|i| {
            let unit_scores: Vec<Vec<f64>> = per_fold.iter().map(|f| f[i].clone()).collect();
            let mean = mean_over_folds(&unit_scores);
            let hypers = grids[i].values();
            let chosen = hypers[pick_best(method, hypers, &mean)];
            let fit = solver.fit(&full_grams[i], chosen, settings, None)?;
            Ok(UnitValidation {
                chosen,
                fit: FittedModel::Relaxation(fit),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_parsing() {
        assert_eq!(
            "block:5".parse::<ValidationScheme>().unwrap(),
            ValidationScheme::Block { k: 5 }
        );
        assert_eq!(
            "kfold:4:9".parse::<ValidationScheme>().unwrap(),
            ValidationScheme::KFold { k: 4, seed: 9 }
        );
        assert_eq!(
            "holdout".parse::<ValidationScheme>().unwrap(),
            ValidationScheme::default()
        );
        assert!("block".parse::<ValidationScheme>().is_err());
        let s = ValidationScheme::SequentialHoldout { fraction: 0.25 };
        assert_eq!(s.to_string().parse::<ValidationScheme>().unwrap(), s);
    }

    #[test]
    fn block_folds_partition() {
        let train: Vec<usize> = (10..33).collect();
        let folds = ValidationScheme::Block { k: 5 }.folds(&train).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.score_idx.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, train);
        for f in &folds {
            assert!(f.score_idx.windows(2).all(|w| w[1] == w[0] + 1));
            assert_eq!(f.fit_idx.len() + f.score_idx.len(), train.len());
        }
    }

    #[test]
    fn kfold_is_seeded() {
        let train: Vec<usize> = (0..40).collect();
        let a = ValidationScheme::KFold { k: 4, seed: 1 }
            .folds(&train)
            .unwrap();
        let b = ValidationScheme::KFold { k: 4, seed: 1 }
            .folds(&train)
            .unwrap();
        let c = ValidationScheme::KFold { k: 4, seed: 2 }
            .folds(&train)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn holdout_split() {
        let train: Vec<usize> = (0..50).collect();
        let f = ValidationScheme::default().folds(&train).unwrap();
        assert_eq!(f[0].fit_idx, (0..40).collect::<Vec<_>>());
        assert_eq!(f[0].score_idx, (40..50).collect::<Vec<_>>());
        assert!(ValidationScheme::SequentialHoldout { fraction: 0.2 }
            .folds(&train[..5])
            .is_err());
        assert!(ValidationScheme::Block { k: 1 }.folds(&train).is_err());
    }

    #[test]
    fn ties_prefer_shrinkage() {
        assert_eq!(
            pick_best(Estimator::L2Relax, &[0.1, 0.2, 0.3], &[1.0, 0.5, 0.5]),
            2
        );
        assert_eq!(
            pick_best(Estimator::Pca, &[1.0, 2.0, 3.0], &[0.5, 0.5, 0.7]),
            0
        );
    }

    #[test]
    fn grid_checks() {
        assert!(TauGrid::new(vec![]).is_err());
        assert!(TauGrid::new(vec![0.2, 0.1]).is_err());
        assert!(TauGrid::new(vec![0.1, 0.1]).is_err());
        assert!(TauGrid::new(vec![0.0, 0.1]).is_ok());
    }
}
