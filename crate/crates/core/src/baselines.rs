//! Comparator estimators sharing the `alpha + x' beta` prediction form:
//! OLS, ridge, LASSO and principal component regression, plus the PC_p1
//! information criterion for the number of factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cd::{CdProblem, Curvature};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, sym_eigen, SortedEigen};
use crate::model::{intercept, LinearFit};
use crate::panel::{compute_gram_on, demeaned, GramPair, TimePanel};
use crate::solver::SolverSettings;

/// OLS refuses grams whose condition number exceeds this.
pub const OLS_MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Ols,
    Ridge,
    Lasso,
    Pca,
}

/// Estimated factor structure behind a principal component fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaExtras {
    /// One loading vector (length `N`) per factor.
    pub loadings: Vec<Vec<f64>>,
    /// One training-period factor series per factor, normalized to unit
    /// sample variance.
    pub factors: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub method: BaselineMethod,
    /// Penalty for ridge/LASSO, number of factors for PCA, 0 for OLS.
    pub hyper: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub sweeps_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extras: Option<PcaExtras>,
}

impl LinearFit for BaselineFit {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> &[f64] {
        &self.beta
    }
}

fn closed_form(
    method: BaselineMethod,
    hyper: f64,
    gram: &GramPair,
    beta: DVector<f64>,
) -> BaselineFit {
    BaselineFit {
        method,
        hyper,
        alpha: intercept(gram.y_mean, gram.x_means.as_slice(), beta.as_slice()),
        beta: beta.as_slice().to_vec(),
        converged: true,
        sweeps_used: 0,
        extras: None,
    }
}

/// `Sigma^{-1} eta`; errors when `Sigma` is singular or nearly so.
pub fn fit_ols(gram: &GramPair) -> Result<BaselineFit> {
    let eig = sym_eigen(&gram.sigma);
    let lmax = eig.max_value();
    let lmin = eig.values.last().copied().unwrap_or(0.0);
    if lmin <= 0.0 || lmax / lmin > OLS_MAX_CONDITION {
        let condition = if lmin > 0.0 {
            lmax / lmin
        } else {
            f64::INFINITY
        };
        return Err(Error::RankDeficient { condition });
    }
    let beta = eig.apply(&gram.eta, 0.0, |l| 1.0 / l);
    Ok(closed_form(BaselineMethod::Ols, 0.0, gram, beta))
}

fn check_penalty(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "penalty must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// `(Sigma + 2 lambda I)^{-1} eta`, the first-order condition of
/// `1/(2n) |y - X beta|^2 + lambda |beta|^2` on demeaned data.
pub fn fit_ridge(gram: &GramPair, lambda: f64) -> Result<BaselineFit> {
    check_penalty(lambda)?;
    let n = gram.dim();
    let m = &gram.sigma + DMatrix::identity(n, n) * (2.0 * lambda);
    let beta = solve_spd(&m, &gram.eta)?;
    Ok(closed_form(BaselineMethod::Ridge, lambda, gram, beta))
}

/// Ridge fits for many penalties from one eigendecomposition.
pub fn ridge_path(gram: &GramPair, lambdas: &[f64]) -> Result<Vec<BaselineFit>> {
    let eig = sym_eigen(&gram.sigma);
    lambdas
        .iter()
        .map(|&lambda| {
            check_penalty(lambda)?;
            let beta = eig.apply(&gram.eta, f64::NEG_INFINITY, |l| {
                1.0 / (l.max(0.0) + 2.0 * lambda)
            });
            Ok(closed_form(BaselineMethod::Ridge, lambda, gram, beta))
        })
        .collect()
}

struct LassoSolver<'a> {
    gram: &'a GramPair,
    diag: Vec<f64>,
    order: Vec<usize>,
}

impl<'a> LassoSolver<'a> {
    fn new(gram: &'a GramPair) -> Self {
        Self {
            diag: Curvature::Explicit(&gram.sigma).diag(),
            order: (0..gram.dim()).collect(),
            gram,
        }
    }

    fn fit(&self, lambda: f64, settings: &SolverSettings, warm: Option<&[f64]>) -> BaselineFit {
        let problem = CdProblem {
            curvature: Curvature::Explicit(&self.gram.sigma),
            diag: &self.diag,
            linear: self.gram.eta.as_slice(),
            penalty: lambda,
        };
        let out = problem.solve(settings.tol, settings.max_sweeps, warm, &self.order);
        BaselineFit {
            method: BaselineMethod::Lasso,
            hyper: lambda,
            alpha: intercept(self.gram.y_mean, self.gram.x_means.as_slice(), &out.x),
            beta: out.x,
            converged: out.converged,
            sweeps_used: out.sweeps,
            extras: None,
        }
    }
}

/// LASSO in gram form by cyclic coordinate descent:
/// `beta_i <- S(eta_i - sum_{j != i} Sigma_ij beta_j, lambda) / Sigma_ii`.
pub fn fit_lasso(gram: &GramPair, lambda: f64, settings: &SolverSettings) -> Result<BaselineFit> {
    check_penalty(lambda)?;
    settings.validate()?;
    Ok(LassoSolver::new(gram).fit(lambda, settings, None))
}

/// LASSO over many penalties, warm-started from the largest down.
pub fn lasso_path(
    gram: &GramPair,
    lambdas: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<BaselineFit>> {
    settings.validate()?;
    for &l in lambdas {
        check_penalty(l)?;
    }
    let solver = LassoSolver::new(gram);
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<BaselineFit>> = vec![None; lambdas.len()];
    let mut warm: Option<Vec<f64>> = None;
    for k in order {
        let f = solver.fit(lambdas[k], settings, warm.as_deref());
        warm = Some(f.beta.clone());
        out[k] = Some(f);
    }
    Ok(out
        .into_iter()
        .map(|f| f.expect("every index visited"))
        .collect())
}

/// Principal components of the demeaned training controls.
///
/// Eigenvalues use divisor `|T1|`, so they are the eigenvalues of `Sigma`.
/// Computed from whichever of the `N x N` and `T1 x T1` grams is smaller.
pub struct PcaBasis {
    pub values: Vec<f64>,
    /// `N x r` orthonormal directions, `r = min(N, T1)`.
    pub vectors: DMatrix<f64>,
    pub trace: f64,
    xc: DMatrix<f64>,
    gram: GramPair,
}

impl PcaBasis {
    pub fn new(panel: &TimePanel, idx: &[usize]) -> Result<Self> {
        let gram = compute_gram_on(panel, idx)?;
        let (xc, _, _, _) = demeaned(panel.x(), panel.y(), idx)?;
        let (n, t) = (xc.nrows(), xc.ncols());
        let tf = t as f64;
        let trace = gram.sigma.trace();
        let (values, vectors) = if n <= t {
            let SortedEigen { values, vectors } = sym_eigen(&gram.sigma);
            (values, vectors)
        } else {
            let k = xc.transpose() * &xc / tf;
            let eig = sym_eigen(&k);
            let cutoff = 1e-12 * eig.max_value().max(0.0);
            let mut u = DMatrix::zeros(n, t);
            for j in 0..t {
                let lam = eig.values[j];
                if lam > cutoff {
                    let col = &xc * eig.vectors.column(j) / (tf * lam).sqrt();
                    u.set_column(j, &col);
                }
            }
            (eig.values, u)
        };
        let values = clamp_tail(values);
        Ok(Self {
            values,
            vectors,
            trace,
            xc,
            gram,
        })
    }

    pub fn rank_limit(&self) -> usize {
        self.values.len()
    }

    /// Mean squared residual of the controls after removing `k` components.
    pub fn residual_variance(&self, k: usize) -> f64 {
        let n = self.gram.dim() as f64;
        let kept: f64 = self.values.iter().take(k).sum();
        let v = (self.trace - kept) / n;
        if v <= 1e-12 * self.trace.max(f64::MIN_POSITIVE) / n {
            0.0
        } else {
            v
        }
    }

    /// Regression of the target on the first `k` estimated factors, mapped
    /// back to a coefficient on the controls.
    pub fn fit(&self, k: usize) -> Result<BaselineFit> {
        if k == 0 || k > self.rank_limit() {
            return Err(Error::invalid(format!(
                "number of factors must be in 1..={}, got {k}",
                self.rank_limit()
            )));
        }
        let n = self.gram.dim();
        let mut beta = DVector::zeros(n);
        let mut loadings = Vec::with_capacity(k);
        let mut factors = Vec::with_capacity(k);
        let mut eigenvalues = Vec::with_capacity(k);
        for j in 0..k {
            let lam = self.values[j];
            eigenvalues.push(lam);
            let u = self.vectors.column(j);
            if lam <= 0.0 {
                loadings.push(vec![0.0; n]);
                factors.push(vec![0.0; self.xc.ncols()]);
                continue;
            }
            beta.axpy(u.dot(&self.gram.eta) / lam, &u, 1.0);
            loadings.push(u.iter().map(|v| v * lam.sqrt()).collect());
            let f = self.xc.transpose() * u / lam.sqrt();
            factors.push(f.as_slice().to_vec());
        }
        let mut fit = closed_form(BaselineMethod::Pca, k as f64, &self.gram, beta);
        fit.extras = Some(PcaExtras {
            loadings,
            factors,
            eigenvalues,
        });
        Ok(fit)
    }

    /// Bai-Ng PC_p1 over `k = 1..=k_max`:
    /// `V(k) + k V(k_max) (N + T) / (N T) ln(N T / (N + T))`.
    /// Ties go to the smaller `k`.
    pub fn select_pcp1(&self, k_max: usize) -> Result<usize> {
        if k_max == 0 || k_max > self.rank_limit() {
            return Err(Error::invalid(format!(
                "k_max must be in 1..={}, got {k_max}",
                self.rank_limit()
            )));
        }
        let n = self.gram.dim() as f64;
        let t = self.xc.ncols() as f64;
        let sigma2 = self.residual_variance(k_max);
        let scale = (n + t) / (n * t) * (n * t / (n + t)).ln();
        let mut best = (1, f64::INFINITY);
        for k in 1..=k_max {
            let crit = self.residual_variance(k) + k as f64 * sigma2 * scale;
            if crit < best.1 {
                best = (k, crit);
            }
        }
        Ok(best.0)
    }
}

fn clamp_tail(mut values: Vec<f64>) -> Vec<f64> {
    let cutoff = 1e-12 * values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v <= cutoff {
            *v = 0.0;
        }
    }
    values
}

/// Principal component regression with `k` factors on the training periods.
pub fn fit_pca(panel: &TimePanel, k: usize) -> Result<BaselineFit> {
    let idx = panel.train_idx();
    if k == 0 || k > panel.n_controls().min(idx.len()) {
        return Err(Error::invalid(format!("k = {k} out of range")));
    }
    PcaBasis::new(panel, idx)?.fit(k)
}

/// Number of factors by the PC_p1 criterion.
pub fn select_factors_pcp1(panel: &TimePanel, k_max: usize) -> Result<usize> {
    let idx = panel.train_idx();
    if k_max == 0 || k_max > panel.n_controls().min(idx.len()) {
        return Err(Error::invalid(format!("k_max = {k_max} out of range")));
    }
    PcaBasis::new(panel, idx)?.select_pcp1(k_max)
}
