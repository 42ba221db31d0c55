//! Group-relative policy optimization math over token log-probabilities.
//!
//! Advantages are standardized within a group of sampled responses and
//! broadcast over each response's tokens. The objective is the PPO-style
//! clipped surrogate minus a per-token KL penalty toward a frozen
//! reference policy, averaged over tokens and then over the group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toy::policy::{toy_gradient, toy_objective, ToyBatch, ToyCategoricalPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("log-probabilities must be finite and <= 0")]
    BadLogProb,
    #[error("invalid config: {0}")]
    Config(String),
}

/// How the per-token KL penalty is estimated from sampled tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `u - ln u - 1` with `u = π_ref / π_θ`; non-negative.
    #[default]
    K3,
    /// `ln π_θ - ln π_ref`; unbiased but can go negative per token.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub adv_epsilon: f64,
    pub grpo_group_size: usize,
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_epsilon: 0.2,
            kl_beta: 0.02,
            adv_epsilon: 1e-4,
            grpo_group_size: 4,
            kl_estimator: KlEstimator::K3,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::Config(format!(
                "clip_epsilon {} not in (0, 1)",
                self.clip_epsilon
            )));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(GrpoError::Config(format!(
                "kl_beta {} must be finite and >= 0",
                self.kl_beta
            )));
        }
        if !(self.adv_epsilon > 0.0 && self.adv_epsilon.is_finite()) {
            return Err(GrpoError::Config(format!(
                "adv_epsilon {} must be > 0",
                self.adv_epsilon
            )));
        }
        if self.grpo_group_size < 2 {
            return Err(GrpoError::Config(format!(
                "grpo_group_size {} must be >= 2",
                self.grpo_group_size
            )));
        }
        Ok(())
    }
}

/// Per-token log-probabilities of one sampled response under the current,
/// behaviour and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLogProbs {
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

impl ResponseLogProbs {
    pub fn new(
        logp_new: Vec<f64>,
        logp_old: Vec<f64>,
        logp_ref: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        let lp = ResponseLogProbs {
            logp_new,
            logp_old,
            logp_ref,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn len(&self) -> usize {
        self.logp_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_new.is_empty()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let n = self.logp_new.len();
        if n == 0 || self.logp_old.len() != n || self.logp_ref.len() != n {
            return Err(GrpoError::Shape(format!(
                "new/old/ref lengths {}/{}/{}",
                n,
                self.logp_old.len(),
                self.logp_ref.len()
            )));
        }
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x <= 0.0);
        if !(ok(&self.logp_new) && ok(&self.logp_old) && ok(&self.logp_ref)) {
            return Err(GrpoError::BadLogProb);
        }
        Ok(())
    }
}

/// `(R_i - mean(R)) / (std(R) + adv_epsilon)` with the population std.
///
/// Centering is done in two passes so the advantages sum to zero up to
/// rounding of the final division.
pub fn group_advantages(rewards: &[f64], adv_epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let mut centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let drift = centered.iter().sum::<f64>() / n;
    centered.iter_mut().for_each(|c| *c -= drift);
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    let denom = std + adv_epsilon;
    Ok(centered.into_iter().map(|c| c / denom).collect())
}

/// Importance ratios `π_θ / π_θ_old` per token.
pub fn token_ratios(lp: &ResponseLogProbs) -> Result<Vec<f64>, GrpoError> {
    lp.validate()?;
    Ok(lp
        .logp_new
        .iter()
        .zip(&lp.logp_old)
        .map(|(new, old)| (new - old).exp())
        .collect())
}

fn kl_token(logp_new: f64, logp_ref: f64, estimator: KlEstimator) -> f64 {
    match estimator {
        KlEstimator::K3 => {
            let log_u = logp_ref - logp_new;
            log_u.exp() - log_u - 1.0
        }
        KlEstimator::Naive => logp_new - logp_ref,
    }
}

/// Per-token k3 estimate of `KL(π_θ ‖ π_ref)`; never negative.
pub fn kl_estimate(lp: &ResponseLogProbs) -> Result<Vec<f64>, GrpoError> {
    kl_estimate_with(lp, KlEstimator::K3)
}

pub fn kl_estimate_with(
    lp: &ResponseLogProbs,
    estimator: KlEstimator,
) -> Result<Vec<f64>, GrpoError> {
    lp.validate()?;
    Ok(lp
        .logp_new
        .iter()
        .zip(&lp.logp_ref)
        .map(|(&new, &r)| kl_token(new, r, estimator))
        .collect())
}

/// Clipped surrogate `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Evaluates the group objective; no parameters are updated.
pub fn grpo_objective(
    group: &[ResponseLogProbs],
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    if group.is_empty() || group.len() != advantages.len() {
        return Err(GrpoError::Shape(format!(
            "{} responses vs {} advantages",
            group.len(),
            advantages.len()
        )));
    }
    let mut total = 0.0;
    for (lp, &adv) in group.iter().zip(advantages) {
        let ratios = token_ratios(lp)?;
        let kls = kl_estimate_with(lp, cfg.kl_estimator)?;
        let per_token: f64 = ratios
            .iter()
            .zip(&kls)
            .map(|(&r, &kl)| clipped_surrogate(r, adv, cfg.clip_epsilon) - cfg.kl_beta * kl)
            .sum();
        total += per_token / lp.len() as f64;
    }
    Ok(total / group.len() as f64)
}

/// Derivative of one token's bracket term with respect to its `logp_new`.
pub(crate) fn token_term_slope(
    logp_new: f64,
    logp_old: f64,
    logp_ref: f64,
    advantage: f64,
    cfg: &GrpoConfig,
) -> f64 {
    let ratio = (logp_new - logp_old).exp();
    let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let surrogate = if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    };
    let kl_slope = match cfg.kl_estimator {
        KlEstimator::K3 => 1.0 - (logp_ref - logp_new).exp(),
        KlEstimator::Naive => 1.0,
    };
    surrogate - cfg.kl_beta * kl_slope
}

/// Step used by [`grpo_gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest absolute difference between the analytic logit gradient of the
/// toy objective and central finite differences of [`grpo_objective`].
pub fn grpo_gradient_check(
    policy: &ToyCategoricalPolicy,
    batch: &ToyBatch,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let analytic = toy_gradient(policy, batch, cfg)?;
    let mut worst = 0.0f64;
    for (prompt, grad) in &analytic {
        for (j, &g) in grad.iter().enumerate() {
            let mut plus = policy.clone();
            plus.logits_mut(prompt).expect("prompt present")[j] += FD_STEP;
            let mut minus = policy.clone();
            minus.logits_mut(prompt).expect("prompt present")[j] -= FD_STEP;
            let fd = (toy_objective(&plus, batch, cfg)? - toy_objective(&minus, batch, cfg)?)
                / (2.0 * FD_STEP);
            worst = worst.max((fd - g).abs());
        }
    }
    Ok(worst)
}
