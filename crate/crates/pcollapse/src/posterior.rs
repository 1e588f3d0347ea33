//! Diagonal-Gaussian posterior representation and attack criteria.
//!
//! The encoder of a VAE maps an image to `q(z|x) = N(mu, diag(sigma^2))`.
//! Every criterion here measures how far that posterior sits from an
//! isotropic target `N(0, v I)`:
//!
//! * reverse KL `D_KL(q || N(0, vI))` — the attack criterion,
//! * its ln-v-free surrogate (the constant term dropped),
//! * forward KL `D_KL(N(0, vI) || q)`,
//! * a squared-distance baseline on `(mu, sigma^2)`.
//!
//! Posteriors are carried as log-variance so `sigma^2 > 0` holds
//! unconditionally under gradient updates, and `ln sigma^2` is read off
//! directly instead of re-logging an exponential.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension mean and log-variance of a diagonal Gaussian posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    /// Mean vector, length `d`.
    pub mean: Vec<f64>,
    /// Natural log of the per-dimension variance, length `d`.
    pub log_variance: Vec<f64>,
}

impl PosteriorParams {
    /// Validate lengths and finiteness.
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::validation("posterior dimension must be >= 1"));
        }
        if mean.len() != log_variance.len() {
            return Err(Error::validation(format!(
                "mean length {} != log_variance length {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if !mean.iter().chain(log_variance.iter()).all(|v| v.is_finite()) {
            return Err(Error::validation("posterior entries must be finite"));
        }
        Ok(Self { mean, log_variance })
    }

    /// Latent dimensionality `d`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-dimension variances `sigma_i^2 = exp(log_variance_i)`.
    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_variance.iter().map(|lv| lv.exp())
    }
}

/// The isotropic attack target `p*(z) = N(0, v I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPrior {
    /// Variance scale `v > 0`.
    pub variance_scale: f64,
}

impl TargetPrior {
    pub fn new(variance_scale: f64) -> Result<Self> {
        if !variance_scale.is_finite() || variance_scale <= 0.0 {
            return Err(Error::validation(format!(
                "target variance must be finite and > 0, got {variance_scale}"
            )));
        }
        Ok(Self { variance_scale })
    }

    /// Standard normal target, `v = 1`.
    pub fn standard() -> Self {
        Self { variance_scale: 1.0 }
    }
}

/// Reverse KL divergence `D_KL(q(z|x) || N(0, vI))` for a diagonal posterior:
/// `0.5 * sum_i ((sigma_i^2 + mu_i^2)/v - 1 + ln(v / sigma_i^2))`.
///
/// Zero exactly when `mu = 0` and `sigma^2 = v` in every dimension.
pub fn kl_to_isotropic(post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
    let v = prior.variance_scale;
    let ln_v = v.ln();
    let mut total = 0.0;
    for (&mu, &lv) in post.mean.iter().zip(&post.log_variance) {
        let sigma_sq = lv.exp();
        total += (sigma_sq + mu * mu) / v - 1.0 + ln_v - lv;
    }
    Ok(0.5 * total)
}

/// The implemented attack loss: reverse KL with the constant `ln v` term
/// dropped, `0.5 * sum_i (-ln sigma_i^2 - 1 + (mu_i^2 + sigma_i^2)/v)`.
///
/// Differs from [`kl_to_isotropic`] by exactly `(d/2) * ln v`; the gradients
/// coincide.
pub fn collapse_loss(post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
    let v = prior.variance_scale;
    let mut total = 0.0;
    for (&mu, &lv) in post.mean.iter().zip(&post.log_variance) {
        let sigma_sq = lv.exp();
        total += -lv - 1.0 + (mu * mu + sigma_sq) / v;
    }
    Ok(0.5 * total)
}

/// Forward KL divergence `D_KL(N(0, vI) || q(z|x))`:
/// `0.5 * sum_i (ln(sigma_i^2 / v) - 1 + (v + mu_i^2) / sigma_i^2)`.
pub fn forward_kl_to_isotropic(post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
    let v = prior.variance_scale;
    let ln_v = v.ln();
    let mut total = 0.0;
    for (&mu, &lv) in post.mean.iter().zip(&post.log_variance) {
        let sigma_sq = lv.exp();
        total += lv - ln_v - 1.0 + (v + mu * mu) / sigma_sq;
    }
    Ok(0.5 * total)
}

/// Squared-distance baseline from `(mu, sigma^2)` to `(0, v)`:
/// `sum_i mu_i^2 + sum_i (sigma_i^2 - v)^2`.
pub fn mse_criterion(post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
    let v = prior.variance_scale;
    let mut total = 0.0;
    for (&mu, &lv) in post.mean.iter().zip(&post.log_variance) {
        let sigma_sq = lv.exp();
        total += mu * mu + (sigma_sq - v) * (sigma_sq - v);
    }
    Ok(total)
}

/// Which divergence drives the attack or populates a loss-surface grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `D_KL(q || p*)` — the attack default.
    ReverseKl,
    /// `D_KL(p* || q)`.
    ForwardKl,
    /// Squared distance on `(mu, sigma^2)`.
    Mse,
}

impl Criterion {
    /// Exact criterion value; zero at `mu = 0`, `sigma^2 = v` for all three.
    pub fn value(&self, post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
        match self {
            Criterion::ReverseKl => kl_to_isotropic(post, prior),
            Criterion::ForwardKl => forward_kl_to_isotropic(post, prior),
            Criterion::Mse => mse_criterion(post, prior),
        }
    }

    /// The quantity the attack actually optimizes and records: for reverse KL
    /// this is [`collapse_loss`] (the `ln v` constant dropped, matching the
    /// implemented objective); the other criteria have no constant to drop.
    pub fn attack_value(&self, post: &PosteriorParams, prior: &TargetPrior) -> Result<f64> {
        match self {
            Criterion::ReverseKl => collapse_loss(post, prior),
            Criterion::ForwardKl => forward_kl_to_isotropic(post, prior),
            Criterion::Mse => mse_criterion(post, prior),
        }
    }

    /// Analytic gradient of the criterion with respect to the posterior
    /// parameters, as `(d/d mu, d/d log_variance)` vectors.
    pub fn gradient(&self, post: &PosteriorParams, prior: &TargetPrior) -> (Vec<f64>, Vec<f64>) {
        let v = prior.variance_scale;
        let d = post.dim();
        let mut grad_mu = vec![0.0; d];
        let mut grad_lv = vec![0.0; d];
        for i in 0..d {
            let mu = post.mean[i];
            let sigma_sq = post.log_variance[i].exp();
            match self {
                Criterion::ReverseKl => {
                    grad_mu[i] = mu / v;
                    grad_lv[i] = 0.5 * (sigma_sq / v - 1.0);
                }
                Criterion::ForwardKl => {
                    grad_mu[i] = mu / sigma_sq;
                    grad_lv[i] = 0.5 * (1.0 - (v + mu * mu) / sigma_sq);
                }
                Criterion::Mse => {
                    grad_mu[i] = 2.0 * mu;
                    grad_lv[i] = 2.0 * (sigma_sq - v) * sigma_sq;
                }
            }
        }
        (grad_mu, grad_lv)
    }

    /// Stable identifier used in CLI flags and CSV headers.
    pub fn id(&self) -> &'static str {
        match self {
            Criterion::ReverseKl => "reverse_kl",
            Criterion::ForwardKl => "forward_kl",
            Criterion::Mse => "mse",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "reverse_kl" => Ok(Criterion::ReverseKl),
            "forward_kl" => Ok(Criterion::ForwardKl),
            "mse" => Ok(Criterion::Mse),
            other => Err(Error::validation(format!("unknown criterion id {other:?}"))),
        }
    }
}

/// A criterion evaluated over a `(mu, sigma^2)` grid at `d = 1`.
#[derive(Debug, Clone)]
pub struct LossSurfaceGrid {
    /// Mean values along axis 0 of `values`.
    pub mu: Vec<f64>,
    /// Variance values along axis 1 of `values`.
    pub sigma_sq: Vec<f64>,
    /// `values[[i, j]]` is the criterion at `(mu[i], sigma_sq[j])`.
    pub values: Array2<f64>,
}

impl LossSurfaceGrid {
    /// Index of the grid cell holding the smallest value.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_val = f64::INFINITY;
        for ((i, j), &val) in self.values.indexed_iter() {
            if val < best_val {
                best_val = val;
                best = (i, j);
            }
        }
        best
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Evaluate a criterion over a scalar `(mu, sigma^2)` grid.
///
/// All three criteria attain their minimum at `(0, v)`; the grid makes the
/// differing gradient geometry around that shared minimum visible.
pub fn loss_surface_grid(
    criterion: Criterion,
    mu_range: (f64, f64),
    sigma_sq_range: (f64, f64),
    resolution: usize,
    prior: &TargetPrior,
) -> Result<LossSurfaceGrid> {
    if resolution < 2 {
        return Err(Error::validation("grid resolution must be >= 2"));
    }
    if sigma_sq_range.0 <= 0.0 || sigma_sq_range.1 <= 0.0 {
        return Err(Error::validation("sigma^2 range must be strictly positive"));
    }
    let mu = linspace(mu_range.0, mu_range.1, resolution);
    let sigma_sq = linspace(sigma_sq_range.0, sigma_sq_range.1, resolution);
    let mut values = Array2::zeros((resolution, resolution));
    for (i, &m) in mu.iter().enumerate() {
        for (j, &s2) in sigma_sq.iter().enumerate() {
            let post = PosteriorParams::new(vec![m], vec![s2.ln()])?;
            values[[i, j]] = criterion.value(&post, prior)?;
        }
    }
    Ok(LossSurfaceGrid { mu, sigma_sq, values })
}
