//! Population quantities of the factor model: the projection coefficient,
//! the minimum-norm oracle, and the population MSE of any candidate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// `(Lambda Lambda' + Omega)^{-1} Lambda lambda0` by a direct `N x N` solve.
pub fn oracle_beta0(
    lambda: &DMatrix<f64>,
    lambda0: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let cov = lambda * lambda.transpose() + omega;
    let rhs = lambda * lambda0;
    cov.lu()
        .solve(&rhs)
        .ok_or(Error::Singular("Lambda Lambda' + Omega"))
}

/// Same quantity through the Woodbury form
/// `Omega^{-1} Lambda (Lambda' Omega^{-1} Lambda + I_q)^{-1} lambda0`.
pub fn oracle_beta0_woodbury(
    lambda: &DMatrix<f64>,
    lambda0: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let omega_inv = omega
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("Omega"))?;
    let q = lambda.ncols();
    let oil = &omega_inv * lambda;
    let inner = lambda.transpose() * &oil + DMatrix::identity(q, q);
    let w = solve_spd(&inner, lambda0)?;
    Ok(oil * w)
}

/// Minimum-norm solution of `Lambda' beta = lambda0`:
/// `Lambda (Lambda' Lambda)^{-1} lambda0`.
pub fn oracle_beta_star(lambda: &DMatrix<f64>, lambda0: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = lambda.transpose() * lambda;
    let chol = gram.cholesky().ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    Ok(lambda * chol.solve(lambda0))
}

/// Population MSE `sigma0^2 + beta' Omega beta + |lambda0 - Lambda' beta|^2`.
pub fn oracle_mse(
    beta: &DVector<f64>,
    lambda: &DMatrix<f64>,
    lambda0: &DVector<f64>,
    omega: &DMatrix<f64>,
    sigma0_sq: f64,
) -> f64 {
    let bias = lambda0 - lambda.transpose() * beta;
    sigma0_sq + (beta.transpose() * omega * beta)[(0, 0)] + bias.norm_squared()
}

/// Smallest eigenvalue of `Lambda' Lambda / N`.
pub fn factor_strength(lambda: &DMatrix<f64>) -> f64 {
    let n = lambda.nrows() as f64;
    let g = lambda.transpose() * lambda / n;
    g.symmetric_eigenvalues().min()
}
