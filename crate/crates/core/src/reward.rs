//! Raw verifiable rewards: focus accuracy, focus-attribute overlap and
//! reference-guided overlap, behind a format gate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{bleu, bleu1, exact_match, tokenize, BleuConfig};
use crate::trajectory::{
    parse_trajectory, parse_trajectory_bytes, FocusDimension, ParseError, ParsedTrajectory,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("gold attribute for `{0}` has no matching gold focus")]
    AttrWithoutFocus(FocusDimension),
    #[error("reference response is empty")]
    EmptyReference,
}

/// Per-sample ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    #[serde(default)]
    pub character_id: String,
    pub gold_foci: BTreeSet<FocusDimension>,
    #[serde(default)]
    pub gold_attrs: BTreeMap<FocusDimension, String>,
    pub reference_response: String,
}

impl GoldAnnotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if let Some(dim) = self.gold_attrs.keys().find(|d| !self.gold_foci.contains(d)) {
            return Err(AnnotationError::AttrWithoutFocus(*dim));
        }
        if self.reference_response.trim().is_empty() {
            return Err(AnnotationError::EmptyReference);
        }
        Ok(())
    }
}

/// The three raw reward components plus the format verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub focus: f64,
    pub focus_attr: f64,
    #[serde(rename = "ref")]
    pub reference: f64,
    pub format_valid: bool,
}

impl RewardVector {
    pub const GATED: RewardVector = RewardVector {
        focus: 0.0,
        focus_attr: 0.0,
        reference: 0.0,
        format_valid: false,
    };

    pub fn components(&self) -> [f64; 3] {
        [self.focus, self.focus_attr, self.reference]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Mean of the metric scores, keeping the component in `[0, 1]`.
    #[default]
    SumNormalized,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefConfigError {
    #[error("reference reward needs at least one metric")]
    NoMetrics,
}

/// The overlap metrics summed into the reference reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRefRewardConfig")]
pub struct RefRewardConfig {
    metrics: Vec<BleuConfig>,
    combine: Combine,
}

#[derive(Deserialize)]
struct RawRefRewardConfig {
    metrics: Vec<BleuConfig>,
    #[serde(default)]
    combine: Combine,
}

impl TryFrom<RawRefRewardConfig> for RefRewardConfig {
    type Error = RefConfigError;

    fn try_from(raw: RawRefRewardConfig) -> Result<Self, Self::Error> {
        let mut cfg = RefRewardConfig::new(raw.metrics)?;
        cfg.combine = raw.combine;
        Ok(cfg)
    }
}

impl RefRewardConfig {
    pub fn new(metrics: Vec<BleuConfig>) -> Result<Self, RefConfigError> {
        if metrics.is_empty() {
            return Err(RefConfigError::NoMetrics);
        }
        Ok(RefRewardConfig {
            metrics,
            combine: Combine::SumNormalized,
        })
    }

    pub fn metrics(&self) -> &[BleuConfig] {
        &self.metrics
    }
}

impl Default for RefRewardConfig {
    /// Unigram BLEU and bigram-only BLEU.
    fn default() -> Self {
        RefRewardConfig {
            metrics: vec![
                BleuConfig::bleu1(),
                BleuConfig::individual(2).expect("valid order"),
            ],
            combine: Combine::SumNormalized,
        }
    }
}

/// Exact match of the deduplicated declared labels against the gold set.
pub fn score_focus(parsed: &ParsedTrajectory, gold: &GoldAnnotation) -> f64 {
    if !parsed.format_valid {
        return 0.0;
    }
    exact_match(&parsed.focus_labels(), &gold.gold_foci)
}

/// Mean BLEU-1 over the gold dimensions that carry an attribute.
///
/// A dimension the trajectory never declares scores 0. Repeated
/// declarations of one dimension are joined in document order.
pub fn score_focus_attr(parsed: &ParsedTrajectory, gold: &GoldAnnotation) -> f64 {
    if !parsed.format_valid || gold.gold_attrs.is_empty() {
        return 0.0;
    }
    let total: f64 = gold
        .gold_attrs
        .iter()
        .map(|(dim, gold_attr)| {
            let declared: Vec<&str> = parsed
                .foci
                .iter()
                .filter(|f| f.dimension == *dim)
                .map(|f| f.attribute.as_str())
                .collect();
            if declared.is_empty() {
                0.0
            } else {
                bleu1(&tokenize(&declared.join(" ")), &tokenize(gold_attr))
            }
        })
        .sum();
    total / gold.gold_attrs.len() as f64
}

pub fn score_reference(
    parsed: &ParsedTrajectory,
    gold: &GoldAnnotation,
    cfg: &RefRewardConfig,
) -> f64 {
    if !parsed.format_valid || cfg.metrics.is_empty() {
        return 0.0;
    }
    let answer = tokenize(&parsed.answer);
    let reference = tokenize(&gold.reference_response);
    match cfg.combine {
        Combine::SumNormalized => {
            let sum: f64 = cfg
                .metrics
                .iter()
                .map(|m| bleu(&answer, &reference, m))
                .sum();
            sum / cfg.metrics.len() as f64
        }
    }
}

/// Scores an already parsed trajectory.
pub fn score_parsed(
    parsed: &ParsedTrajectory,
    gold: &GoldAnnotation,
    cfg: &RefRewardConfig,
) -> RewardVector {
    if !parsed.format_valid {
        return RewardVector::GATED;
    }
    RewardVector {
        focus: score_focus(parsed, gold),
        focus_attr: score_focus_attr(parsed, gold),
        reference: score_reference(parsed, gold, cfg),
        format_valid: true,
    }
}

pub fn score_trajectory(raw: &str, gold: &GoldAnnotation, cfg: &RefRewardConfig) -> RewardVector {
    score_parsed(&parse_trajectory(raw), gold, cfg)
}

pub fn score_trajectory_bytes(
    raw: &[u8],
    gold: &GoldAnnotation,
    cfg: &RefRewardConfig,
) -> Result<RewardVector, ParseError> {
    Ok(score_parsed(&parse_trajectory_bytes(raw)?, gold, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{render_trajectory, FocusDeclaration};
    use FocusDimension::*;

    fn gold(
        foci: &[FocusDimension],
        attrs: &[(FocusDimension, &str)],
        reference: &str,
    ) -> GoldAnnotation {
        GoldAnnotation {
            character_id: "c".into(),
            gold_foci: foci.iter().copied().collect(),
            gold_attrs: attrs.iter().map(|(d, a)| (*d, a.to_string())).collect(),
            reference_response: reference.into(),
        }
    }

    const CAKE: &str = "<think>I need to describe my original form. \n<focus>Knowledge</focus>\n<focus_attr>Original form</focus_attr>\n</think>\nI was originally a fresh cream fruit cake, freshly baked and most delicious. Back then, I had a pure heart and the purest joy.";

    #[test]
    fn cake_transcript_rewards() {
        let g = gold(
            &[Knowledge],
            &[(Knowledge, "Original form")],
            "I used to be a normal, fresh cream fruit cake, very delicious and much loved.",
        );
        let r = score_trajectory(CAKE, &g, &RefRewardConfig::default());
        assert_eq!(r.focus, 1.0);
        assert_eq!(r.focus_attr, 1.0);
        assert!(r.reference > 0.0);
        assert!(r.format_valid);
    }

    #[test]
    fn empty_foci_against_gold() {
        let g = gold(&[Emotion], &[], "x");
        let p = parse_trajectory("<think>no foci</think>\\boxed{x}");
        assert_eq!(score_focus(&p, &g), 0.0);
    }

    #[test]
    fn duplicated_focus_deduplicated() {
        let g = gold(&[Emotion], &[], "x");
        let p = parse_trajectory(
            "<think><focus>Emotion</focus><focus_attr>a</focus_attr><focus>Emotion</focus><focus_attr>b</focus_attr></think>\\boxed{x}",
        );
        assert_eq!(score_focus(&p, &g), 1.0);
    }

    #[test]
    fn attr_mean_over_gold_dims() {
        let g = gold(
            &[Knowledge, Style],
            &[(Knowledge, "k attr"), (Style, "s attr")],
            "x",
        );
        let p = parse_trajectory(
            "<think><focus>Knowledge</focus><focus_attr>k attr</focus_attr></think>\\boxed{x}",
        );
        assert_eq!(score_focus_attr(&p, &g), 0.5);
    }

    #[test]
    fn attr_partial_overlap() {
        let g = gold(&[Knowledge], &[(Knowledge, "fruit cake")], "x");
        let p = parse_trajectory(
            "<think><focus>Knowledge</focus><focus_attr>fresh cream fruit cake</focus_attr></think>\\boxed{x}",
        );
        assert_eq!(score_focus_attr(&p, &g), 0.5);
    }

    #[test]
    fn attr_repeated_dimension_joined() {
        let g = gold(&[Emotion], &[(Emotion, "calm and steady")], "x");
        let p = parse_trajectory(
            "<think><focus>Emotion</focus><focus_attr>calm</focus_attr><focus>Emotion</focus><focus_attr>and steady</focus_attr></think>\\boxed{x}",
        );
        assert_eq!(score_focus_attr(&p, &g), 1.0);
    }

    #[test]
    fn attr_without_gold_attrs_is_zero() {
        let g = gold(&[Emotion], &[], "x");
        let p = parse_trajectory(
            "<think><focus>Emotion</focus><focus_attr>a</focus_attr></think>\\boxed{x}",
        );
        assert_eq!(score_focus_attr(&p, &g), 0.0);
    }

    #[test]
    fn reference_default_metrics() {
        let g = gold(&[], &[], "a b d");
        let p = parse_trajectory("<think>t</think>\\boxed{a b c}");
        let v = score_reference(&p, &g, &RefRewardConfig::default());
        assert!((v - 7.0 / 12.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn reference_identity_and_empty() {
        let g = gold(&[], &[], "Freedom comes at a price.");
        let same = parse_trajectory("<think>t</think>\\boxed{freedom comes at a price}");
        assert_eq!(score_reference(&same, &g, &RefRewardConfig::default()), 1.0);
        let mut empty = same.clone();
        empty.answer.clear();
        assert_eq!(
            score_reference(&empty, &g, &RefRewardConfig::default()),
            0.0
        );
    }

    #[test]
    fn gate_zeroes_everything() {
        let g = gold(&[Knowledge], &[(Knowledge, "x")], "x");
        assert_eq!(
            score_trajectory("no think block \\boxed{x}", &g, &RefRewardConfig::default()),
            RewardVector::GATED
        );
    }

    #[test]
    fn constructed_perfect_trajectory() {
        let g = gold(
            &[Emotion, Memory],
            &[(Emotion, "calm"), (Memory, "user asked about time")],
            "I have to take care of my business.",
        );
        let t = ParsedTrajectory {
            think_text: "thinking about it".into(),
            foci: vec![
                FocusDeclaration {
                    dimension: Memory,
                    attribute: "user asked about time".into(),
                    offset: 0,
                },
                FocusDeclaration {
                    dimension: Emotion,
                    attribute: "calm".into(),
                    offset: 8,
                },
            ],
            answer: g.reference_response.clone(),
            answer_was_boxed: true,
            format_valid: true,
            diagnostics: vec![],
        };
        let raw = render_trajectory(&t).unwrap();
        let r = score_trajectory(&raw, &g, &RefRewardConfig::default());
        assert_eq!(
            r,
            RewardVector {
                focus: 1.0,
                focus_attr: 1.0,
                reference: 1.0,
                format_valid: true
            }
        );
    }

    #[test]
    fn annotation_validation() {
        let mut g = gold(&[Knowledge], &[(Style, "s")], "x");
        assert_eq!(g.validate(), Err(AnnotationError::AttrWithoutFocus(Style)));
        g.gold_attrs.clear();
        g.reference_response = "  ".into();
        assert_eq!(g.validate(), Err(AnnotationError::EmptyReference));
    }

    #[test]
    fn reward_vector_wire_names() {
        let json = serde_json::to_value(RewardVector::GATED).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"focus": 0.0, "focus_attr": 0.0, "ref": 0.0, "format_valid": false})
        );
    }
}
