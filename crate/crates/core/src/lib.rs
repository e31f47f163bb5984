//! L2-relaxation for dense high-dimensional regression.
//!
//! Minimum-norm coefficients under a sup-norm relaxed moment condition,
//! solved through the dual by coordinate descent, together with the
//! comparators used to benchmark it (OLS, ridge, LASSO, principal component
//! regression), validation-based tuning, panel-data treatment-effect
//! inference with HAC variances, and a Monte Carlo harness for latent factor
//! designs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
mod cd;
pub mod error;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod pda;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use nalgebra;

pub use baselines::{
    fit_lasso, fit_ols, fit_pca, fit_ridge, lasso_path, ridge_path, select_factors_pcp1,
    BaselineFit, BaselineMethod, PcaBasis, PcaExtras,
};
pub use error::{Error, Result};
pub use model::{mpse, residuals, LinearFit};
pub use panel::{
    compute_gram, compute_gram_on, load_multi_panel_csv, load_panel_csv, read_multi_panel_csv,
    read_panel_csv, standardize_in_sample, standardize_multi, GramPair, MultiPanel, RowRef,
    SplitSpec, StandardizationParams, TimePanel,
};
pub use pda::{
    ate_multi, ate_single, default_lag, hac_lrv, long_run_variance, placebo_test, Kernel,
    LagChoice, MultiUnitResult, PlaceboResult, SingleUnitResult,
};
pub use solver::{
    fit, fit_path, fit_ridgeless, predict, solve_dual, DualSolution, DualSolver, RelaxationFit,
    SolverSettings,
};
pub use tuning::{
    default_grid, fit_grid, fit_method, validate, validate_units, Estimator, FittedModel, GridSpec,
    TauGrid, Validation, ValidationScheme,
};
