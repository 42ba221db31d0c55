//! Categorical policy over a fixed candidate pool, with the analytic
//! gradient of the group objective with respect to its logits.
//!
//! Each candidate is a single "token", so a response's log-probability is
//! the log-softmax entry of the chosen candidate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grpo::{grpo_objective, token_term_slope, GrpoConfig, GrpoError, ResponseLogProbs};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToyCategoricalPolicy {
    logits: BTreeMap<String, Vec<f64>>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl ToyCategoricalPolicy {
    pub fn new(logits: BTreeMap<String, Vec<f64>>) -> Self {
        ToyCategoricalPolicy { logits }
    }

    /// All-zero logits, i.e. uniform over `m` candidates for each prompt.
    pub fn uniform<'a>(prompts: impl IntoIterator<Item = &'a str>, m: usize) -> Self {
        ToyCategoricalPolicy {
            logits: prompts
                .into_iter()
                .map(|p| (p.to_string(), vec![0.0; m]))
                .collect(),
        }
    }

    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.logits.keys().map(String::as_str)
    }

    pub fn logits(&self, prompt: &str) -> Option<&[f64]> {
        self.logits.get(prompt).map(Vec::as_slice)
    }

    pub fn logits_mut(&mut self, prompt: &str) -> Option<&mut Vec<f64>> {
        self.logits.get_mut(prompt)
    }

    pub fn log_probs(&self, prompt: &str) -> Option<Vec<f64>> {
        self.logits(prompt).map(log_softmax)
    }

    pub fn probs(&self, prompt: &str) -> Option<Vec<f64>> {
        self.log_probs(prompt)
            .map(|lp| lp.into_iter().map(f64::exp).collect())
    }
}

/// One prompt's sampled group: chosen candidates, their advantages, and
/// their log-probabilities under the frozen behaviour and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroup {
    pub prompt: String,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToyBatch {
    pub groups: Vec<PromptGroup>,
}

fn current_log_probs(
    policy: &ToyCategoricalPolicy,
    group: &PromptGroup,
) -> Result<Vec<f64>, GrpoError> {
    let n = group.actions.len();
    if group.advantages.len() != n || group.logp_old.len() != n || group.logp_ref.len() != n {
        return Err(GrpoError::Shape(format!(
            "group for `{}` has ragged fields",
            group.prompt
        )));
    }
    let lp = policy
        .log_probs(&group.prompt)
        .ok_or_else(|| GrpoError::Shape(format!("unknown prompt `{}`", group.prompt)))?;
    if let Some(&a) = group.actions.iter().find(|&&a| a >= lp.len()) {
        return Err(GrpoError::Shape(format!(
            "action {a} out of range for `{}`",
            group.prompt
        )));
    }
    Ok(lp)
}

pub fn group_objective(
    policy: &ToyCategoricalPolicy,
    group: &PromptGroup,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let lp = current_log_probs(policy, group)?;
    let responses = group
        .actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            ResponseLogProbs::new(
                vec![lp[a]],
                vec![group.logp_old[i]],
                vec![group.logp_ref[i]],
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    grpo_objective(&responses, &group.advantages, cfg)
}

/// Gradient of [`group_objective`] with respect to the prompt's logits.
pub fn group_gradient(
    policy: &ToyCategoricalPolicy,
    group: &PromptGroup,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    let lp = current_log_probs(policy, group)?;
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let mut grad = vec![0.0; lp.len()];
    let g = group.actions.len() as f64;
    for (i, &a) in group.actions.iter().enumerate() {
        let slope = token_term_slope(
            lp[a],
            group.logp_old[i],
            group.logp_ref[i],
            group.advantages[i],
            cfg,
        ) / g;
        // d log π(a) / d z_j = 1[j = a] - π_j
        for (j, p) in probs.iter().enumerate() {
            grad[j] -= slope * p;
        }
        grad[a] += slope;
    }
    Ok(grad)
}

/// Mean of the per-prompt group objectives over the batch.
pub fn toy_objective(
    policy: &ToyCategoricalPolicy,
    batch: &ToyBatch,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    if batch.groups.is_empty() {
        return Err(GrpoError::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for group in &batch.groups {
        total += group_objective(policy, group, cfg)?;
    }
    Ok(total / batch.groups.len() as f64)
}

/// Analytic gradient of [`toy_objective`], keyed by prompt.
pub fn toy_gradient(
    policy: &ToyCategoricalPolicy,
    batch: &ToyBatch,
    cfg: &GrpoConfig,
) -> Result<BTreeMap<String, Vec<f64>>, GrpoError> {
    if batch.groups.is_empty() {
        return Err(GrpoError::Shape("empty batch".into()));
    }
    let scale = 1.0 / batch.groups.len() as f64;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for group in &batch.groups {
        let g = group_gradient(policy, group, cfg)?;
        let acc = out
            .entry(group.prompt.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, x) in acc.iter_mut().zip(g) {
            *a += scale * x;
        }
    }
    Ok(out)
}
