//! Character-conditional reward normalization.
//!
//! One exponentially weighted running mean/variance per (role group,
//! reward type). Raw rewards are standardized against their group's
//! statistics and combined into a scalar with a fixed weight vector.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RewardVector;

pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardType {
    Focus,
    FocusAttr,
    Ref,
}

impl RewardType {
    pub const ALL: [RewardType; 3] = [RewardType::Focus, RewardType::FocusAttr, RewardType::Ref];

    pub fn of(self, r: &RewardVector) -> f64 {
        match self {
            RewardType::Focus => r.focus,
            RewardType::FocusAttr => r.focus_attr,
            RewardType::Ref => r.reference,
        }
    }
}

impl fmt::Display for RewardType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardType::Focus => "focus",
            RewardType::FocusAttr => "focus_attr",
            RewardType::Ref => "ref",
        })
    }
}

#[derive(Debug, Error)]
pub enum NormalizerError {
    #[error("unsupported snapshot version {0} (expected {SNAPSHOT_VERSION})")]
    Version(u32),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error("decay must lie in (0, 1), got {0}")]
    Decay(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
}

/// EMA mean and variance of one reward stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningStat {
    pub mean: f64,
    pub var: f64,
    pub count: u64,
}

impl Default for RunningStat {
    /// Identity bootstrap: mean 0, variance 1.
    fn default() -> Self {
        RunningStat {
            mean: 0.0,
            var: 1.0,
            count: 0,
        }
    }
}

impl RunningStat {
    pub fn update(&mut self, r: f64, decay: f64) {
        let old_mean = self.mean;
        self.mean = decay * old_mean + (1.0 - decay) * r;
        self.var = decay * self.var + (1.0 - decay) * (r - old_mean) * (r - old_mean);
        self.count += 1;
    }

    pub fn standardize(&self, r: f64, epsilon: f64) -> f64 {
        (r - self.mean) / (self.var + epsilon).sqrt()
    }
}

/// Standardized reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRewards {
    pub focus: f64,
    pub focus_attr: f64,
    #[serde(rename = "ref")]
    pub reference: f64,
}

impl NormalizedRewards {
    pub const ZERO: NormalizedRewards = NormalizedRewards {
        focus: 0.0,
        focus_attr: 0.0,
        reference: 0.0,
    };

    pub fn get(&self, k: RewardType) -> f64 {
        match k {
            RewardType::Focus => self.focus,
            RewardType::FocusAttr => self.focus_attr,
            RewardType::Ref => self.reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    pub focus: f64,
    pub attr: f64,
    #[serde(rename = "ref")]
    pub reference: f64,
}

impl Default for WeightVector {
    fn default() -> Self {
        WeightVector {
            focus: 0.4,
            attr: 0.2,
            reference: 0.2,
        }
    }
}

impl WeightVector {
    pub fn is_valid(&self) -> bool {
        [self.focus, self.attr, self.reference]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// `w_focus·r̂_focus + w_attr·r̂_focus_attr + w_ref·r̂_ref`.
pub fn aggregate(normalized: &NormalizedRewards, weights: &WeightVector) -> f64 {
    weights.focus * normalized.focus
        + weights.attr * normalized.focus_attr
        + weights.reference * normalized.reference
}

/// Running statistics for every (group, reward type) seen so far.
///
/// Groups are created lazily; an unseen group normalizes with the identity
/// bootstrap. Validating group indices is the caller's job, since the
/// state does not know the group model.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerState {
    stats: BTreeMap<(usize, RewardType), RunningStat>,
    epsilon: f64,
    decay: f64,
}

impl Default for NormalizerState {
    fn default() -> Self {
        NormalizerState {
            stats: BTreeMap::new(),
            epsilon: DEFAULT_EPSILON,
            decay: DEFAULT_DECAY,
        }
    }
}

impl NormalizerState {
    pub fn new(decay: f64, epsilon: f64) -> Result<Self, NormalizerError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(NormalizerError::Decay(decay));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(NormalizerError::Epsilon(epsilon));
        }
        Ok(NormalizerState {
            stats: BTreeMap::new(),
            epsilon,
            decay,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn version(&self) -> u32 {
        SNAPSHOT_VERSION
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn stat(&self, group: usize, reward: RewardType) -> RunningStat {
        self.stats
            .get(&(group, reward))
            .copied()
            .unwrap_or_default()
    }

    /// Overrides one stream's statistics, e.g. to start from a prior.
    pub fn set_stat(&mut self, group: usize, reward: RewardType, stat: RunningStat) {
        self.stats.insert((group, reward), stat);
    }

    pub fn stats(&self) -> impl Iterator<Item = (usize, RewardType, &RunningStat)> {
        self.stats.iter().map(|(&(g, k), s)| (g, k, s))
    }

    /// Folds one reward vector into the group's statistics. Format-gated
    /// zero vectors are folded in like any other.
    pub fn update(&mut self, group: usize, rewards: &RewardVector) {
        for k in RewardType::ALL {
            self.stats
                .entry((group, k))
                .or_default()
                .update(k.of(rewards), self.decay);
        }
    }

    pub fn normalize(&self, group: usize, rewards: &RewardVector) -> NormalizedRewards {
        let z = |k: RewardType| self.stat(group, k).standardize(k.of(rewards), self.epsilon);
        NormalizedRewards {
            focus: z(RewardType::Focus),
            focus_attr: z(RewardType::FocusAttr),
            reference: z(RewardType::Ref),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            epsilon: self.epsilon,
            decay: self.decay,
            stats: self
                .stats
                .iter()
                .map(|(&(group, reward), s)| StatEntry {
                    group,
                    reward,
                    mean: s.mean,
                    var: s.var,
                    count: s.count,
                })
                .collect(),
        }
    }

    pub fn restore(doc: &Snapshot) -> Result<Self, NormalizerError> {
        if doc.version != SNAPSHOT_VERSION {
            return Err(NormalizerError::Version(doc.version));
        }
        let mut state = NormalizerState::new(doc.decay, doc.epsilon)?;
        for e in &doc.stats {
            if !e.mean.is_finite() || !(e.var >= 0.0 && e.var.is_finite()) {
                return Err(NormalizerError::Malformed(format!(
                    "non-finite or negative statistics for group {} / {}",
                    e.group, e.reward
                )));
            }
            let prev = state.stats.insert(
                (e.group, e.reward),
                RunningStat {
                    mean: e.mean,
                    var: e.var,
                    count: e.count,
                },
            );
            if prev.is_some() {
                return Err(NormalizerError::Malformed(format!(
                    "duplicate entry for group {} / {}",
                    e.group, e.reward
                )));
            }
        }
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot is always serializable")
    }

    /// Parses and restores a snapshot document. A document that is not
    /// JSON or misses fields is `Malformed`; a wrong version is `Version`.
    pub fn from_json(text: &str) -> Result<Self, NormalizerError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| NormalizerError::Malformed(e.to_string()))?;
        if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
            if v != u64::from(SNAPSHOT_VERSION) {
                return Err(NormalizerError::Version(
                    u32::try_from(v).unwrap_or(u32::MAX),
                ));
            }
        }
        let doc: Snapshot =
            serde_json::from_value(value).map_err(|e| NormalizerError::Malformed(e.to_string()))?;
        NormalizerState::restore(&doc)
    }
}

/// Persisted form of a [`NormalizerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub version: u32,
    pub epsilon: f64,
    pub decay: f64,
    pub stats: Vec<StatEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatEntry {
    pub group: usize,
    pub reward: RewardType,
    pub mean: f64,
    pub var: f64,
    pub count: u64,
}
