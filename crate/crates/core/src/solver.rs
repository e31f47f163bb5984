//! L2-relaxation: the minimum-norm coefficient vector whose sample moment
//! condition is violated by at most `tau` in sup-norm,
//!
//! ```text
//! min_beta 1/2 |beta|_2^2   s.t.  |eta - Sigma beta|_inf <= tau
//! ```
//!
//! solved through its dual
//!
//! ```text
//! min_gamma 1/2 gamma' Sigma' Sigma gamma - eta' gamma + tau |gamma|_1
//! ```
//!
//! with `beta = Sigma gamma`. The dual is a LASSO in `gamma` and is solved by
//! cyclic coordinate descent with soft-thresholding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cd::{CdProblem, Curvature};
use crate::error::{Error, Result};
use crate::linalg::{dot, sup_norm, sym_eigen};
use crate::model::{intercept, LinearFit};
use crate::panel::GramPair;

/// Above this dimension `Sigma' Sigma` is not materialized.
pub const PRECOMPUTE_LIMIT: usize = 2000;

/// Relative eigenvalue cutoff for the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Largest coordinate change allowed in the final full sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relative slack on the sup-norm constraint when judging feasibility.
    pub feasibility_slack: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
            feasibility_slack: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::invalid("solver needs tol > 0 and max_sweeps >= 1"));
        }
        Ok(())
    }
}

/// Fitted L2-relaxation coefficients with their dual certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub tau: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `max(|eta - Sigma beta|_inf - tau, 0)`.
    pub kkt_residual: f64,
    pub converged: bool,
    pub sweeps_used: usize,
}

impl LinearFit for RelaxationFit {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> &[f64] {
        &self.beta
    }
}

impl RelaxationFit {
    /// Whether the sup-norm constraint holds within the settings' slack.
    pub fn is_feasible(&self, gram: &GramPair, settings: &SolverSettings) -> bool {
        self.kkt_residual <= settings.feasibility_slack * self.tau.max(gram.eta_sup()) + 1e-8
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub gamma: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Dual solver bound to one covariance matrix. Reusable across targets that
/// share the same controls (different `eta`) and across a `tau` path.
pub struct DualSolver {
    sigma: DMatrix<f64>,
    curvature: Option<DMatrix<f64>>,
    diag: Vec<f64>,
}

impl DualSolver {
    pub fn new(sigma: &DMatrix<f64>) -> Self {
        let sigma = sigma.clone();
        let curvature = (sigma.nrows() <= PRECOMPUTE_LIMIT).then(|| &sigma * &sigma);
        let diag = match &curvature {
            Some(a) => Curvature::Explicit(a).diag(),
            None => Curvature::SquaredSym(&sigma).diag(),
        };
        Self {
            sigma,
            curvature,
            diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn problem<'a>(&'a self, eta: &'a [f64], tau: f64) -> CdProblem<'a> {
        let curvature = match &self.curvature {
            Some(a) => Curvature::Explicit(a),
            None => Curvature::SquaredSym(&self.sigma),
        };
        CdProblem {
            curvature,
            diag: &self.diag,
            linear: eta,
            penalty: tau,
        }
    }

    /// Coordinate descent on the dual in natural coordinate order.
    pub fn solve(
        &self,
        eta: &[f64],
        tau: f64,
        settings: &SolverSettings,
        warm: Option<&[f64]>,
    ) -> DualSolution {
        let order: Vec<usize> = (0..self.dim()).collect();
        self.solve_ordered(eta, tau, settings, warm, &order)
    }

    /// Coordinate descent visiting coordinates in `order` each sweep.
    pub fn solve_ordered(
        &self,
        eta: &[f64],
        tau: f64,
        settings: &SolverSettings,
        warm: Option<&[f64]>,
        order: &[usize],
    ) -> DualSolution {
        let out = self
            .problem(eta, tau)
            .solve(settings.tol, settings.max_sweeps, warm, order);
        DualSolution {
            gamma: out.x,
            sweeps: out.sweeps,
            converged: out.converged,
        }
    }

    /// Dual objective `1/2 |Sigma gamma|^2 - eta' gamma + tau |gamma|_1`.
    pub fn objective(&self, eta: &[f64], gamma: &[f64], tau: f64) -> f64 {
        let g = DVector::from_column_slice(gamma);
        let b = &self.sigma * &g;
        0.5 * b.norm_squared() - dot(eta, gamma) + tau * gamma.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Fits one `tau`, optionally warm-started from a previous dual vector.
    pub fn fit(
        &self,
        gram: &GramPair,
        tau: f64,
        settings: &SolverSettings,
        warm: Option<&[f64]>,
    ) -> Result<RelaxationFit> {
        check_tau(tau)?;
        settings.validate()?;
        if gram.dim() != self.dim() {
            return Err(Error::Dimension("gram does not match solver".into()));
        }
        if tau >= gram.eta_sup() {
            return Ok(zero_fit(gram, tau));
        }
        if tau == 0.0 {
            return Ok(fit_ridgeless(gram));
        }
        let sol = self.solve(gram.eta.as_slice(), tau, settings, warm);
        Ok(assemble(gram, tau, sol))
    }

    /// Fits every value in `taus`, walking from the largest down with warm
    /// starts. Results come back in the order of `taus`.
    pub fn fit_path(
        &self,
        gram: &GramPair,
        taus: &[f64],
        settings: &SolverSettings,
    ) -> Result<Vec<RelaxationFit>> {
        let mut order: Vec<usize> = (0..taus.len()).collect();
        order.sort_by(|&a, &b| taus[b].total_cmp(&taus[a]));
        let mut out: Vec<Option<RelaxationFit>> = vec![None; taus.len()];
        let mut warm: Option<Vec<f64>> = None;
        for k in order {
            let f = self.fit(gram, taus[k], settings, warm.as_deref())?;
            warm = Some(f.gamma.clone());
            out[k] = Some(f);
        }
        Ok(out
            .into_iter()
            .map(|f| f.expect("every index visited"))
            .collect())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    Ok(())
}

fn zero_fit(gram: &GramPair, tau: f64) -> RelaxationFit {
    let n = gram.dim();
    RelaxationFit {
        tau,
        alpha: gram.y_mean,
        beta: vec![0.0; n],
        gamma: vec![0.0; n],
        kkt_residual: (gram.eta_sup() - tau).max(0.0),
        converged: true,
        sweeps_used: 0,
    }
}

fn assemble(gram: &GramPair, tau: f64, sol: DualSolution) -> RelaxationFit {
    let gamma = DVector::from_column_slice(&sol.gamma);
    let beta = &gram.sigma * &gamma;
    RelaxationFit {
        tau,
        alpha: intercept(gram.y_mean, gram.x_means.as_slice(), beta.as_slice()),
        kkt_residual: kkt_residual(gram, beta.as_slice(), tau),
        beta: beta.as_slice().to_vec(),
        gamma: sol.gamma,
        converged: sol.converged,
        sweeps_used: sol.sweeps,
    }
}

/// `max(|eta - Sigma beta|_inf - tau, 0)`.
pub fn kkt_residual(gram: &GramPair, beta: &[f64], tau: f64) -> f64 {
    let b = DVector::from_column_slice(beta);
    let r = &gram.eta - &gram.sigma * b;
    (sup_norm(r.as_slice()) - tau).max(0.0)
}

/// Dual vector only; see [`DualSolver`] for reuse across solves.
pub fn solve_dual(gram: &GramPair, tau: f64, settings: &SolverSettings) -> Result<DualSolution> {
    check_tau(tau)?;
    settings.validate()?;
    Ok(DualSolver::new(&gram.sigma).solve(gram.eta.as_slice(), tau, settings, None))
}

/// L2-relaxation fit at a single `tau`.
///
/// `tau >= |eta|_inf` returns the zero vector exactly. `tau = 0` is the
/// minimum-norm solution of `Sigma beta = eta` and goes through
/// [`fit_ridgeless`].
pub fn fit(gram: &GramPair, tau: f64, settings: &SolverSettings) -> Result<RelaxationFit> {
    check_tau(tau)?;
    if tau >= gram.eta_sup() {
        return Ok(zero_fit(gram, tau));
    }
    if tau == 0.0 {
        return Ok(fit_ridgeless(gram));
    }
    DualSolver::new(&gram.sigma).fit(gram, tau, settings, None)
}

/// Path of fits over `taus` sharing one solver.
pub fn fit_path(
    gram: &GramPair,
    taus: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<RelaxationFit>> {
    DualSolver::new(&gram.sigma).fit_path(gram, taus, settings)
}

/// Ridgeless regression `beta = Sigma^+ eta`, the `tau = 0` limit.
///
/// Eigenvalues at or below `1e-10` times the largest are treated as zero.
/// The reported dual vector is `(Sigma^+)^2 eta`, which maps to `beta`.
pub fn fit_ridgeless(gram: &GramPair) -> RelaxationFit {
    let eig = sym_eigen(&gram.sigma);
    let cutoff = PINV_CUTOFF * eig.max_value().max(0.0);
    let (beta, gamma) = if eig.max_value() <= 0.0 {
        (DVector::zeros(gram.dim()), DVector::zeros(gram.dim()))
    } else {
        (
            eig.apply(&gram.eta, cutoff, |l| 1.0 / l),
            eig.apply(&gram.eta, cutoff, |l| 1.0 / (l * l)),
        )
    };
    RelaxationFit {
        tau: 0.0,
        alpha: intercept(gram.y_mean, gram.x_means.as_slice(), beta.as_slice()),
        kkt_residual: kkt_residual(gram, beta.as_slice(), 0.0),
        beta: beta.as_slice().to_vec(),
        gamma: gamma.as_slice().to_vec(),
        converged: true,
        sweeps_used: 0,
    }
}

/// Out-of-sample prediction `ybar + (x_new - xbar)' beta` using the
/// training means stored in `gram`.
pub fn predict(fit: &RelaxationFit, x_new: &[f64], gram: &GramPair) -> f64 {
    gram.y_mean
        + x_new
            .iter()
            .zip(gram.x_means.iter())
            .zip(&fit.beta)
            .map(|((x, m), b)| (x - m) * b)
            .sum::<f64>()
}
