//! Overlap metrics: tokenization, BLEU with clipped n-gram counts and
//! brevity penalty, and exact match over focus label sets.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::FocusDimension;

/// Numerator substituted for zero n-gram matches under
/// [`Smoothing::AddEpsilon`].
pub const SMOOTHING_EPSILON: f64 = 1e-9;

/// Whitespace-free, non-empty tokens produced by [`tokenize`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercases, splits on whitespace and strips non-alphanumeric characters
/// from both ends of every token. Tokens left empty are dropped.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        text.split_whitespace()
            .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|tok| !tok.is_empty())
            .map(str::to_lowercase)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    AddEpsilon,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BleuConfigError {
    #[error("max_n must be at least 1")]
    ZeroOrder,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights must be finite and non-negative")]
    NegativeWeight,
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
}

/// Orders and weights of one BLEU variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBleuConfig", into = "RawBleuConfig")]
pub struct BleuConfig {
    max_n: usize,
    weights: Vec<f64>,
    smoothing: Smoothing,
}

#[derive(Serialize, Deserialize)]
struct RawBleuConfig {
    max_n: usize,
    weights: Vec<f64>,
    #[serde(default)]
    smoothing: Smoothing,
}

impl TryFrom<RawBleuConfig> for BleuConfig {
    type Error = BleuConfigError;

    fn try_from(raw: RawBleuConfig) -> Result<Self, Self::Error> {
        BleuConfig::new(raw.max_n, raw.weights, raw.smoothing)
    }
}

impl From<BleuConfig> for RawBleuConfig {
    fn from(cfg: BleuConfig) -> Self {
        RawBleuConfig {
            max_n: cfg.max_n,
            weights: cfg.weights,
            smoothing: cfg.smoothing,
        }
    }
}

impl BleuConfig {
    pub fn new(
        max_n: usize,
        weights: Vec<f64>,
        smoothing: Smoothing,
    ) -> Result<Self, BleuConfigError> {
        if max_n == 0 {
            return Err(BleuConfigError::ZeroOrder);
        }
        if weights.len() != max_n {
            return Err(BleuConfigError::WeightCount {
                expected: max_n,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BleuConfigError::NegativeWeight);
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(BleuConfigError::WeightSum(sum));
        }
        Ok(BleuConfig {
            max_n,
            weights,
            smoothing,
        })
    }

    /// Uniform weights over orders `1..=max_n`.
    pub fn uniform(max_n: usize) -> Result<Self, BleuConfigError> {
        BleuConfig::new(max_n, vec![1.0 / max_n as f64; max_n], Smoothing::None)
    }

    /// Unigram BLEU: `max_n = 1`, weight 1, no smoothing.
    pub fn bleu1() -> Self {
        BleuConfig {
            max_n: 1,
            weights: vec![1.0],
            smoothing: Smoothing::None,
        }
    }

    /// Score from order-`n` n-grams only (weights `[0, …, 0, 1]`).
    pub fn individual(n: usize) -> Result<Self, BleuConfigError> {
        let mut weights = vec![0.0; n];
        if let Some(last) = weights.last_mut() {
            *last = 1.0;
        }
        BleuConfig::new(n, weights, Smoothing::None)
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision numerator and denominator for order `n`.
fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU of `candidate` against a single `reference`.
///
/// Orders with zero weight are skipped. When neither side has any n-gram of
/// some order (both shorter than `n`) that order's precision is taken as 1.
pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence, cfg: &BleuConfig) -> f64 {
    let cand = candidate.tokens();
    let refs = reference.tokens();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (idx, &weight) in cfg.weights.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let n = idx + 1;
        let (matched, total) = clipped_matches(cand, refs, n);
        let precision = if total == 0 && refs.len() < n {
            1.0
        } else if matched == 0 {
            match cfg.smoothing {
                Smoothing::None => return 0.0,
                Smoothing::AddEpsilon => SMOOTHING_EPSILON / total.max(1) as f64,
            }
        } else {
            matched as f64 / total as f64
        };
        log_sum += weight * precision.ln();
    }
    brevity_penalty(cand.len(), refs.len()) * log_sum.exp()
}

/// `min(1, exp(1 - ref_len / cand_len))`.
pub fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

pub fn bleu1(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    bleu(candidate, reference, &BleuConfig::bleu1())
}

/// 1.0 iff the two label sets are equal.
pub fn exact_match(pred: &BTreeSet<FocusDimension>, gold: &BTreeSet<FocusDimension>) -> f64 {
    if pred == gold {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> TokenSequence {
        TokenSequence(words.iter().map(|w| w.to_string()).collect())
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("I love swimming"),
            toks(&["i", "love", "swimming"])
        );
        assert_eq!(tokenize("Hello, world!"), toks(&["hello", "world"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  ... -- ! "), toks(&[]));
        assert_eq!(tokenize("don't… stop"), toks(&["don't", "stop"]));
    }

    #[test]
    fn unigram_partial_match() {
        let v = bleu1(&toks(&["a", "b", "c"]), &toks(&["a", "b", "d"]));
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn longer_candidate_no_penalty() {
        let v = bleu1(
            &toks(&["fresh", "cream", "fruit", "cake"]),
            &toks(&["fruit", "cake"]),
        );
        assert_eq!(v, 0.5);
    }

    #[test]
    fn short_candidate_penalized() {
        // cand "a" vs ref "a b": p1 = 1, BP = exp(1 - 2) = e^-1
        let v = bleu1(&toks(&["a"]), &toks(&["a", "b"]));
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn clipping_limits_repeats() {
        // "the the the" vs "the cat": clipped count 1 of 3
        let v = bleu1(&toks(&["the", "the", "the"]), &toks(&["the", "cat"]));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_one_for_any_order() {
        let x = toks(&["just", "two"]);
        for n in 1..=4 {
            assert_eq!(bleu(&x, &x, &BleuConfig::uniform(n).unwrap()), 1.0);
        }
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu1(&toks(&[]), &toks(&["x"])), 0.0);
        assert_eq!(bleu1(&toks(&[]), &toks(&[])), 0.0);
    }

    #[test]
    fn zero_precision_without_smoothing() {
        let c = toks(&["a", "b"]);
        let r = toks(&["b", "a"]);
        assert_eq!(bleu(&c, &r, &BleuConfig::uniform(2).unwrap()), 0.0);
        let smoothed = bleu(
            &c,
            &r,
            &BleuConfig::uniform(2)
                .unwrap()
                .with_smoothing(Smoothing::AddEpsilon),
        );
        assert!(smoothed > 0.0 && smoothed < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            BleuConfig::new(0, vec![], Smoothing::None),
            Err(BleuConfigError::ZeroOrder)
        );
        assert!(matches!(
            BleuConfig::new(2, vec![1.0], Smoothing::None),
            Err(BleuConfigError::WeightCount { .. })
        ));
        assert!(matches!(
            BleuConfig::new(2, vec![0.6, 0.6], Smoothing::None),
            Err(BleuConfigError::WeightSum(_))
        ));
        assert!(BleuConfig::new(2, vec![-0.5, 1.5], Smoothing::None).is_err());
        let parsed: Result<BleuConfig, _> =
            serde_json::from_str(r#"{"max_n":2,"weights":[0.3,0.3]}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn exact_match_is_set_equality() {
        use FocusDimension::*;
        let set = |v: &[FocusDimension]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(exact_match(&set(&[Knowledge]), &set(&[Knowledge])), 1.0);
        assert_eq!(
            exact_match(&set(&[Emotion, Style]), &set(&[Style, Emotion])),
            1.0
        );
        assert_eq!(
            exact_match(&set(&[Knowledge]), &set(&[Knowledge, Memory])),
            0.0
        );
    }
}
