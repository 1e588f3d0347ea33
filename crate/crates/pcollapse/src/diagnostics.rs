//! Collapse classification and attack-trajectory summaries.
//!
//! Collapse is defined in the limit (posterior contracting to a point mass,
//! or dispersing without bound); finite-step attacks never reach a limit, so
//! classification compares before/after statistics against documented ratio
//! thresholds. The defaults (0.1x shrink, 10x growth) are artifact
//! conventions, reported alongside the raw statistics.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackDirection, AttackResult};
use crate::error::Result;
use crate::posterior::{kl_to_isotropic, PosteriorParams, TargetPrior};

/// Scalar summaries of one posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStats {
    /// `(1/d) * sum mu_i^2`.
    pub mean_sq_mu: f64,
    /// `(1/d) * sum sigma_i^2`.
    pub mean_sigma_sq: f64,
    /// Reverse KL to the standard normal, `kl_to_isotropic(post, v=1)`.
    pub kl_to_standard: f64,
}

/// Classification thresholds for [`classify_collapse`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseThresholds {
    /// Both statistics must fall below `shrink` times their clean value.
    pub shrink: f64,
    /// `mean_sigma_sq` must grow above `grow` times its clean value.
    pub grow: f64,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        Self { shrink: 0.1, grow: 10.0 }
    }
}

/// The collapse regime a posterior moved into, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseKind {
    Concentration,
    Diffusion,
    None,
}

/// Verdict plus the ratios it was based on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub kind: CollapseKind,
    pub mu_ratio: f64,
    pub sigma_ratio: f64,
    pub thresholds: CollapseThresholds,
}

/// Compute the three posterior statistics.
pub fn posterior_stats(post: &PosteriorParams) -> Result<PosteriorStats> {
    let d = post.dim() as f64;
    let mean_sq_mu = post.mean.iter().map(|m| m * m).sum::<f64>() / d;
    let mean_sigma_sq = post.variances().sum::<f64>() / d;
    let kl_to_standard = kl_to_isotropic(post, &TargetPrior::standard())?;
    Ok(PosteriorStats { mean_sq_mu, mean_sigma_sq, kl_to_standard })
}

/// Classify the before/after transition. Concentration (both statistics
/// shrank below `shrink`x) is checked first; diffusion requires
/// `mean_sigma_sq` above `grow`x. Under the default thresholds the two
/// cannot co-occur, but the tie-break order is fixed regardless.
pub fn classify_collapse(
    before: &PosteriorStats,
    after: &PosteriorStats,
    thresholds: CollapseThresholds,
) -> CollapseVerdict {
    let mu_ratio = after.mean_sq_mu / before.mean_sq_mu;
    let sigma_ratio = after.mean_sigma_sq / before.mean_sigma_sq;
    let kind = if mu_ratio < thresholds.shrink && sigma_ratio < thresholds.shrink {
        CollapseKind::Concentration
    } else if sigma_ratio > thresholds.grow {
        CollapseKind::Diffusion
    } else {
        CollapseKind::None
    };
    CollapseVerdict { kind, mu_ratio, sigma_ratio, thresholds }
}

/// Endpoint and monotonicity summary of one attack trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub first_loss: f64,
    pub final_loss: f64,
    /// Fraction of steps that moved the loss in the configured direction;
    /// 1.0 for a single-entry trace.
    pub monotonic_fraction: f64,
    /// Mean per-step change.
    pub slope: f64,
}

/// Summarize a loss trace under the direction it was optimized in.
pub fn trajectory_summary(result: &AttackResult, direction: AttackDirection) -> TrajectorySummary {
    let trace = &result.loss_trace;
    let first_loss = trace[0];
    let final_loss = *trace.last().unwrap();
    if trace.len() < 2 {
        return TrajectorySummary { first_loss, final_loss, monotonic_fraction: 1.0, slope: 0.0 };
    }
    let steps = trace.len() - 1;
    let moving = trace
        .windows(2)
        .filter(|w| match direction {
            AttackDirection::Minimize => w[1] < w[0],
            AttackDirection::Maximize => w[1] > w[0],
        })
        .count();
    TrajectorySummary {
        first_loss,
        final_loss,
        monotonic_fraction: moving as f64 / steps as f64,
        slope: (final_loss - first_loss) / steps as f64,
    }
}
