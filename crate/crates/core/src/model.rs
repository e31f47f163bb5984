use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::panel::TimePanel;

/// Any fitted predictor of the form `y = alpha + x' beta`, equivalently
/// `y = mean(y) + (x - mean(x))' beta` with training means.
pub trait LinearFit {
    fn alpha(&self) -> f64;
    fn beta(&self) -> &[f64];

    fn predict_at(&self, x: &[f64]) -> f64 {
        self.alpha() + dot(self.beta(), x)
    }
}

/// Prediction errors `y_t - yhat_t` over `idx`.
pub fn residuals(fit: &impl LinearFit, panel: &TimePanel, idx: &[usize]) -> Vec<f64> {
    let x = panel.x();
    let beta = fit.beta();
    idx.iter()
        .map(|&t| {
            let pred = fit.alpha()
                + x.column(t)
                    .iter()
                    .zip(beta)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            panel.y()[t] - pred
        })
        .collect()
}

/// Mean squared prediction error over `idx`.
pub fn mpse(fit: &impl LinearFit, panel: &TimePanel, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyIndex("idx"));
    }
    let r = residuals(fit, panel, idx);
    Ok(r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64)
}

/// Intercept that gives zero mean training residuals.
pub(crate) fn intercept(y_mean: f64, x_means: &[f64], beta: &[f64]) -> f64 {
    y_mean - dot(x_means, beta)
}
