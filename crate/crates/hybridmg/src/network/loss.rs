//! Training losses: mean square error and the probabilistic ensemble loss.

use ndarray::Array2;

/// Mean square error over all entries. Returns the loss and d loss / d pred.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    (loss, grad)
}

/// Epsilon inside the unnormalized Gaussian, guarding sigma -> 0.
pub const PROB_LOSS_EPS: f64 = 1e-12;

/// Probabilistic ensemble loss: mean over components of
/// 1/2 (d - mu)^2 + 1/2 (1 - G^2 + sigma), G = exp(-(d - mu)^2 / (2 sigma^2 + eps)).
///
/// Returns the scalar loss and gradients with respect to mu and sigma,
/// averaged the same way as the loss itself.
pub fn prob_loss(
    target: &Array2<f64>,
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = target.len() as f64;
    let mut loss = 0.0;
    let mut dmu = Array2::zeros(mu.raw_dim());
    let mut dsigma = Array2::zeros(sigma.raw_dim());
    for ((td, md), ((sd, gm), gs)) in target
        .iter()
        .zip(mu.iter())
        .zip(sigma.iter().zip(dmu.iter_mut()).zip(dsigma.iter_mut()))
    {
        let d = td - md;
        let denom = 2.0 * sd * sd + PROB_LOSS_EPS;
        let g = (-d * d / denom).exp();
        loss += 0.5 * d * d + 0.5 * (1.0 - g * g + sd);
        // d loss / d mu: -d from the MSE part, plus the G^2 chain.
        // dG/dmu = G * 2 d / denom, so d(-G^2/2)/dmu = -G^2 * 2 d / denom.
        *gm = (-d - g * g * 2.0 * d / denom) / n;
        // dG/dsigma = G * d^2 * 4 sd / denom^2; d(-G^2/2)/dsigma + 1/2.
        *gs = (0.5 - g * g * d * d * 4.0 * sd / (denom * denom)) / n;
    }
    (loss / n, dmu, dsigma)
}
