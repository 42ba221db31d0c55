//! Training loop and reward-curve output for the toy task.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{group_gradient, group_objective, PromptGroup, ToyBatch, ToyCategoricalPolicy};
use super::task::ToyTask;
use super::ToyError;
use crate::grpo::{group_advantages, GrpoConfig};
use crate::normalizer::{aggregate, NormalizerState, WeightVector};
use crate::reward::RefRewardConfig;

/// Per-step means over every sampled candidate. Reward components are raw,
/// `r_scalar` is the aggregated normalized reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub r_focus: f64,
    pub r_attr: f64,
    pub r_ref: f64,
    pub r_scalar: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    /// Mean of `f` over records `range` (clamped to the log).
    pub fn window_mean(
        &self,
        range: std::ops::Range<usize>,
        f: impl Fn(&StepRecord) -> f64,
    ) -> f64 {
        let end = range.end.min(self.records.len());
        let start = range.start.min(end);
        let window = &self.records[start..end];
        if window.is_empty() {
            return f64::NAN;
        }
        window.iter().map(f).sum::<f64>() / window.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub log: TrainingLog,
    pub policy: ToyCategoricalPolicy,
    /// The frozen reference policy (uniform initialization).
    pub reference: ToyCategoricalPolicy,
    pub normalizer: NormalizerState,
}

/// Runs `steps` GRPO updates on the task, seeded by `task.seed`.
///
/// Per step and prompt: sample `grpo_group_size` candidates from the
/// current policy, feed their raw rewards into the normalizer, normalize
/// the whole group with the updated statistics, aggregate, and ascend the
/// prompt's group objective by `lr` times its analytic gradient.
pub fn run_training(
    task: &ToyTask,
    cfg: &GrpoConfig,
    mut norm: NormalizerState,
    weights: &WeightVector,
    steps: usize,
    lr: f64,
) -> Result<TrainingOutcome, ToyError> {
    cfg.validate()?;
    if !weights.is_valid() {
        return Err(ToyError::Weights);
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(ToyError::LearningRate(lr));
    }
    let ref_cfg = RefRewardConfig::default();
    task.validate(&ref_cfg)?;
    let raw = task.score_pools(&ref_cfg)?;
    for p in &task.prompts {
        let pool = raw[&p.id].len();
        if cfg.grpo_group_size > pool {
            return Err(ToyError::GroupTooLarge {
                prompt: p.id.clone(),
                group_size: cfg.grpo_group_size,
                pool,
            });
        }
    }

    let mut policy = ToyCategoricalPolicy::new(
        task.prompts
            .iter()
            .map(|p| (p.id.clone(), vec![0.0; raw[&p.id].len()]))
            .collect(),
    );
    let reference = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut log = TrainingLog::default();
    let g = cfg.grpo_group_size;

    for step in 0..steps {
        let old = policy.clone();
        let mut sums = [0.0f64; 4];
        let mut batch = ToyBatch::default();

        for p in &task.prompts {
            let probs = old.probs(&p.id).expect("policy covers every prompt");
            let sampler =
                WeightedIndex::new(&probs).map_err(|e| ToyError::Invalid(e.to_string()))?;
            let actions: Vec<usize> = (0..g).map(|_| sampler.sample(&mut rng)).collect();
            let group = task.group_of(&p.character_id);
            let rewards: Vec<_> = actions.iter().map(|&a| raw[&p.id][a]).collect();
            for r in &rewards {
                norm.update(group, r);
            }
            let scalars: Vec<f64> = rewards
                .iter()
                .map(|r| aggregate(&norm.normalize(group, r), weights))
                .collect();
            for (r, s) in rewards.iter().zip(&scalars) {
                sums[0] += r.focus;
                sums[1] += r.focus_attr;
                sums[2] += r.reference;
                sums[3] += s;
            }
            let advantages = group_advantages(&scalars, cfg.adv_epsilon)?;
            let old_lp = old.log_probs(&p.id).expect("policy covers every prompt");
            let ref_lp = reference
                .log_probs(&p.id)
                .expect("policy covers every prompt");
            batch.groups.push(PromptGroup {
                prompt: p.id.clone(),
                logp_old: actions.iter().map(|&a| old_lp[a]).collect(),
                logp_ref: actions.iter().map(|&a| ref_lp[a]).collect(),
                actions,
                advantages,
            });
        }

        let mut objective = 0.0;
        for group in &batch.groups {
            objective += group_objective(&old, group, cfg)?;
            let grad = group_gradient(&old, group, cfg)?;
            let logits = policy
                .logits_mut(&group.prompt)
                .expect("policy covers every prompt");
            for (z, d) in logits.iter_mut().zip(grad) {
                *z += lr * d;
            }
        }

        let n = (task.prompts.len() * g) as f64;
        log.records.push(StepRecord {
            step,
            r_focus: sums[0] / n,
            r_attr: sums[1] / n,
            r_ref: sums[2] / n,
            r_scalar: sums[3] / n,
            objective: objective / batch.groups.len() as f64,
        });
    }

    Ok(TrainingOutcome {
        log,
        policy,
        reference,
        normalizer: norm,
    })
}

/// Formats like C's `%g`: 6 significant digits, trailing zeros removed.
pub(crate) fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn curves_csv(log: &TrainingLog) -> String {
    let mut out = String::from("step,r_focus,r_attr,r_ref,r_scalar,objective\n");
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            format_g6(r.r_focus),
            format_g6(r.r_attr),
            format_g6(r.r_ref),
            format_g6(r.r_scalar),
            format_g6(r.objective)
        );
    }
    out
}

pub fn emit_curves(log: &TrainingLog, path: &Path) -> Result<(), ToyError> {
    if log.records.is_empty() {
        return Err(ToyError::EmptyLog);
    }
    fs::write(path, curves_csv(log))?;
    Ok(())
}
