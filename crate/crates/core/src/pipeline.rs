//! Batch scoring: parse → score → normalize → aggregate, shared by the
//! HTTP service and the CLI so both produce identical records.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::{assign_group, hash_embedding, GroupModel, GroupingError};
use crate::normalizer::{aggregate, NormalizedRewards, NormalizerState, WeightVector};
use crate::reward::{score_parsed, GoldAnnotation, RefRewardConfig, RewardVector};
use crate::trajectory::{parse_trajectory, Severity};

/// Diagnostic code attached when a character is not in the group model.
pub const FALLBACK_EMBEDDING: &str = "fallback_embedding";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("request has no items")]
    Empty,
    #[error("duplicate request_id `{0}`")]
    DuplicateRequestId(String),
    #[error("item `{request_id}`: {message}")]
    InvalidItem { request_id: String, message: String },
    #[error("invalid weights: every weight must be finite and non-negative")]
    Weights,
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub weights: WeightVector,
    pub ref_metrics: RefRewardConfig,
    /// When set, format-invalid items neither update the statistics nor
    /// receive a normalized reward: their normalized vector and scalar are
    /// zero. Otherwise their zeroed raw vector is normalized like any other.
    pub gate_after_normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub request_id: String,
    pub character_id: String,
    pub raw_output: String,
    pub gold: GoldAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
    #[serde(default)]
    pub update_stats: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub code: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub request_id: String,
    pub group: usize,
    pub raw: RewardVector,
    pub normalized: NormalizedRewards,
    pub scalar: f64,
    pub diagnostics: Vec<DiagnosticRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub items: Vec<ScoredItem>,
    pub stats_version: u64,
}

/// One line of a scoring corpus. Without a `request_id` the CLI uses the
/// 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub character_id: String,
    pub raw_output: String,
    pub gold: GoldAnnotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

impl CorpusRecord {
    pub fn into_item(self, line: usize) -> ScoreItem {
        ScoreItem {
            request_id: self.request_id.unwrap_or_else(|| line.to_string()),
            character_id: self.character_id,
            raw_output: self.raw_output,
            gold: self.gold,
        }
    }
}

/// Group of a character: its fitted assignment, or the nearest centroid to
/// the hash embedding of its id when the model has never seen it.
pub fn resolve_group(
    model: &GroupModel,
    character_id: &str,
) -> Result<(usize, bool), GroupingError> {
    match model.group_of(character_id) {
        Some(g) => Ok((g, false)),
        None => Ok((
            assign_group(model, &hash_embedding(character_id, model.dim()))?,
            true,
        )),
    }
}

pub fn validate_items(items: &[ScoreItem]) -> Result<(), PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::Empty);
    }
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.request_id.as_str()) {
            return Err(PipelineError::DuplicateRequestId(item.request_id.clone()));
        }
        item.gold
            .validate()
            .map_err(|e| PipelineError::InvalidItem {
                request_id: item.request_id.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}

struct Prepared {
    group: usize,
    raw: RewardVector,
    diagnostics: Vec<DiagnosticRecord>,
}

fn prepare(
    item: &ScoreItem,
    model: &GroupModel,
    cfg: &ScoringConfig,
) -> Result<Prepared, PipelineError> {
    let (group, fallback) = resolve_group(model, &item.character_id)?;
    let parsed = parse_trajectory(&item.raw_output);
    let raw = score_parsed(&parsed, &item.gold, &cfg.ref_metrics);
    let mut diagnostics: Vec<DiagnosticRecord> = parsed
        .diagnostics
        .iter()
        .map(|d| DiagnosticRecord {
            code: d.code().to_string(),
            severity: d.severity(),
            message: d.to_string(),
        })
        .collect();
    if fallback {
        diagnostics.push(DiagnosticRecord {
            code: FALLBACK_EMBEDDING.to_string(),
            severity: Severity::Warning,
            message: format!(
                "character `{}` is not in the group model; assigned by hashed embedding",
                item.character_id
            ),
        });
    }
    Ok(Prepared {
        group,
        raw,
        diagnostics,
    })
}

fn finish(
    item: &ScoreItem,
    p: Prepared,
    state: &NormalizerState,
    cfg: &ScoringConfig,
) -> ScoredItem {
    let normalized = if cfg.gate_after_normalize && !p.raw.format_valid {
        NormalizedRewards::ZERO
    } else {
        state.normalize(p.group, &p.raw)
    };
    ScoredItem {
        request_id: item.request_id.clone(),
        group: p.group,
        raw: p.raw,
        normalized,
        scalar: aggregate(&normalized, &cfg.weights),
        diagnostics: p.diagnostics,
    }
}

fn prepare_all(
    items: &[ScoreItem],
    model: &GroupModel,
    cfg: &ScoringConfig,
) -> Result<Vec<Prepared>, PipelineError> {
    validate_items(items)?;
    if !cfg.weights.is_valid() {
        return Err(PipelineError::Weights);
    }
    items.iter().map(|item| prepare(item, model, cfg)).collect()
}

/// Scores against frozen statistics; never mutates anything.
pub fn score_items(
    items: &[ScoreItem],
    model: &GroupModel,
    state: &NormalizerState,
    cfg: &ScoringConfig,
) -> Result<Vec<ScoredItem>, PipelineError> {
    let prepared = prepare_all(items, model, cfg)?;
    Ok(items
        .iter()
        .zip(prepared)
        .map(|(item, p)| finish(item, p, state, cfg))
        .collect())
}

/// Scores in order, updating the statistics with each item before
/// normalizing it. Nothing is mutated if validation fails.
pub fn score_items_updating(
    items: &[ScoreItem],
    model: &GroupModel,
    state: &mut NormalizerState,
    cfg: &ScoringConfig,
) -> Result<Vec<ScoredItem>, PipelineError> {
    let prepared = prepare_all(items, model, cfg)?;
    Ok(items
        .iter()
        .zip(prepared)
        .map(|(item, p)| {
            if p.raw.format_valid || !cfg.gate_after_normalize {
                state.update(p.group, &p.raw);
            }
            finish(item, p, state, cfg)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{CAKE_REFERENCE, CAKE_TRANSCRIPT};
    use crate::trajectory::FocusDimension;
    use std::collections::BTreeMap;

    fn model() -> GroupModel {
        GroupModel {
            centroids: vec![vec![0.0; 4], vec![1.0; 4]],
            assignments: BTreeMap::from([("cake".to_string(), 1)]),
            cluster_count: 2,
            seed: 0,
        }
    }

    fn item(id: &str, character: &str, raw: &str) -> ScoreItem {
        ScoreItem {
            request_id: id.into(),
            character_id: character.into(),
            raw_output: raw.into(),
            gold: GoldAnnotation {
                character_id: character.into(),
                gold_foci: [FocusDimension::Knowledge].into(),
                gold_attrs: BTreeMap::new(),
                reference_response: CAKE_REFERENCE.into(),
            },
        }
    }

    #[test]
    fn fresh_stats_pass_raw_through() {
        let cfg = ScoringConfig::default();
        let out = score_items(
            &[item("a", "cake", CAKE_TRANSCRIPT)],
            &model(),
            &NormalizerState::default(),
            &cfg,
        )
        .unwrap();
        let it = &out[0];
        assert_eq!(it.group, 1);
        assert!((it.normalized.focus - it.raw.focus).abs() < 1e-6);
        assert!((it.normalized.reference - it.raw.reference).abs() < 1e-6);
        let w = cfg.weights;
        let expect =
            w.focus * it.raw.focus + w.attr * it.raw.focus_attr + w.reference * it.raw.reference;
        assert!((it.scalar - expect).abs() < 1e-6);
    }

    #[test]
    fn unknown_character_is_flagged() {
        let out = score_items(
            &[item("a", "stranger", CAKE_TRANSCRIPT)],
            &model(),
            &NormalizerState::default(),
            &ScoringConfig::default(),
        )
        .unwrap();
        assert!(out[0]
            .diagnostics
            .iter()
            .any(|d| d.code == FALLBACK_EMBEDDING));
        assert!(out[0].group < 2);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let state = NormalizerState::default();
        let cfg = ScoringConfig::default();
        assert!(matches!(
            score_items(&[], &model(), &state, &cfg),
            Err(PipelineError::Empty)
        ));
        let items = [item("a", "cake", "x"), item("a", "cake", "y")];
        assert!(matches!(
            score_items(&items, &model(), &state, &cfg),
            Err(PipelineError::DuplicateRequestId(_))
        ));
    }

    #[test]
    fn updating_moves_stats_and_matches_one_by_one() {
        let cfg = ScoringConfig::default();
        let items: Vec<_> = (0..5)
            .map(|i| {
                item(
                    &format!("r{i}"),
                    "cake",
                    if i % 2 == 0 { CAKE_TRANSCRIPT } else { "junk" },
                )
            })
            .collect();
        let mut batch_state = NormalizerState::default();
        let batch = score_items_updating(&items, &model(), &mut batch_state, &cfg).unwrap();
        let mut seq_state = NormalizerState::default();
        let seq: Vec<_> = items
            .iter()
            .flat_map(|it| {
                score_items_updating(std::slice::from_ref(it), &model(), &mut seq_state, &cfg)
                    .unwrap()
            })
            .collect();
        assert_eq!(batch, seq);
        assert_eq!(batch_state, seq_state);
        assert!(!batch_state.is_empty());
    }

    #[test]
    fn gating_after_normalize_skips_invalid_items() {
        let cfg = ScoringConfig {
            gate_after_normalize: true,
            ..ScoringConfig::default()
        };
        let mut state = NormalizerState::default();
        let out = score_items_updating(
            &[item("a", "cake", "no tags at all")],
            &model(),
            &mut state,
            &cfg,
        )
        .unwrap();
        assert!(state.is_empty());
        assert_eq!(out[0].normalized, NormalizedRewards::ZERO);
        assert_eq!(out[0].scalar, 0.0);
    }
}
