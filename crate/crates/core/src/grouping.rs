//! Role grouping: k-means over character-profile embeddings.
//!
//! Lloyd iterations from a k-means++ seeding drawn with a seeded ChaCha
//! stream, so a fit is bit-deterministic for a given profile order, cluster
//! count and seed. Distances are Euclidean on the raw embeddings.

use std::collections::{BTreeMap, HashSet};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cluster count used when none is configured.
pub const DEFAULT_CLUSTER_COUNT: usize = 7;
pub const DEFAULT_MAX_ITERS: usize = 100;
/// Dimensionality of [`hash_embedding`] when no model dictates one.
pub const FALLBACK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("need at least {needed} profiles, got {got}")]
    TooFewProfiles { needed: usize, got: usize },
    #[error("cluster count must be at least {0}")]
    ClusterCount(usize),
    #[error("embedding of `{id}` has dimension {got}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding of `{0}` is empty")]
    EmptyEmbedding(String),
    #[error("embedding of `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("character `{0}` appears more than once")]
    DuplicateCharacter(String),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("character `{0}` is assigned past the last centroid")]
    BadAssignment(String),
    #[error("at least one seed is required")]
    NoSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub character_id: String,
    #[serde(default)]
    pub profile_text: String,
    /// Left empty in profile files to request the hashed fallback.
    #[serde(default)]
    pub embedding: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ProfileFileError {
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Reads profiles from a JSON array or from one JSON object per line.
/// Profiles without an embedding get [`hash_embedding`] of their text at
/// [`FALLBACK_DIM`].
pub fn parse_profiles(text: &str) -> Result<Vec<CharacterProfile>, ProfileFileError> {
    let mut profiles: Vec<CharacterProfile> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| ProfileFileError::Line {
                    line: i + 1,
                    source,
                })
            })
            .collect::<Result<_, _>>()?
    };
    fill_missing_embeddings(&mut profiles);
    Ok(profiles)
}

pub fn fill_missing_embeddings(profiles: &mut [CharacterProfile]) {
    for p in profiles.iter_mut().filter(|p| p.embedding.is_empty()) {
        p.embedding = hash_embedding(&p.profile_text, FALLBACK_DIM);
    }
}

/// Fitted partition of characters into role groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub cluster_count: usize,
    pub seed: u64,
}

impl GroupModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Group of a known character, if it took part in the fit.
    pub fn group_of(&self, character_id: &str) -> Option<usize> {
        self.assignments.get(character_id).copied()
    }

    /// Checks the structural invariants of a model loaded from outside.
    pub fn validate(&self) -> Result<(), GroupingError> {
        if self.cluster_count == 0 || self.centroids.len() != self.cluster_count {
            return Err(GroupingError::ClusterCount(1));
        }
        let dim = self.dim();
        for (j, c) in self.centroids.iter().enumerate() {
            let id = format!("centroid {j}");
            if c.is_empty() {
                return Err(GroupingError::EmptyEmbedding(id));
            }
            if c.len() != dim {
                return Err(GroupingError::DimensionMismatch {
                    id,
                    expected: dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(GroupingError::NonFinite(id));
            }
        }
        if let Some((id, _)) = self
            .assignments
            .iter()
            .find(|(_, &g)| g >= self.cluster_count)
        {
            return Err(GroupingError::BadAssignment(id.clone()));
        }
        Ok(())
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign_group(model: &GroupModel, embedding: &[f64]) -> Result<usize, GroupingError> {
    if embedding.len() != model.dim() {
        return Err(GroupingError::DimensionMismatch {
            id: "query".into(),
            expected: model.dim(),
            got: embedding.len(),
        });
    }
    Ok(nearest(&model.centroids, embedding))
}

fn check_profiles(profiles: &[CharacterProfile]) -> Result<usize, GroupingError> {
    let dim = profiles.first().map_or(0, |p| p.embedding.len());
    let mut seen = HashSet::new();
    for p in profiles {
        if p.embedding.is_empty() {
            return Err(GroupingError::EmptyEmbedding(p.character_id.clone()));
        }
        if p.embedding.len() != dim {
            return Err(GroupingError::DimensionMismatch {
                id: p.character_id.clone(),
                expected: dim,
                got: p.embedding.len(),
            });
        }
        if p.embedding.iter().any(|x| !x.is_finite()) {
            return Err(GroupingError::NonFinite(p.character_id.clone()));
        }
        if !seen.insert(p.character_id.as_str()) {
            return Err(GroupingError::DuplicateCharacter(p.character_id.clone()));
        }
    }
    Ok(dim)
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // Guard against rounding landing on an already-chosen point.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn inertia_of(points: &[&[f64]], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p, &centroids[l]))
        .sum()
}

/// A fitted model plus the inertia after every assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: GroupModel,
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_kmeans(
    profiles: &[CharacterProfile],
    cluster_count: usize,
    seed: u64,
    max_iters: usize,
) -> Result<GroupModel, GroupingError> {
    fit_kmeans_traced(profiles, cluster_count, seed, max_iters).map(|f| f.model)
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// An empty cluster has its centroid moved onto the point farthest from
/// that point's current centroid.
pub fn fit_kmeans_traced(
    profiles: &[CharacterProfile],
    cluster_count: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansFit, GroupingError> {
    if cluster_count == 0 {
        return Err(GroupingError::ClusterCount(1));
    }
    if profiles.len() < cluster_count {
        return Err(GroupingError::TooFewProfiles {
            needed: cluster_count,
            got: profiles.len(),
        });
    }
    let dim = check_profiles(profiles)?;
    let points: Vec<&[f64]> = profiles.iter().map(|p| p.embedding.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, cluster_count, &mut rng);

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut trace = vec![inertia_of(&points, &centroids, &labels)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cluster_count];
        let mut counts = vec![0usize; cluster_count];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..cluster_count {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..cluster_count {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .zip(&labels)
                    .map(|(p, &l)| squared_distance(p, &centroids[l]))
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |best, (i, d)| if d > best.1 { (i, d) } else { best },
                    )
                    .0;
                centroids[j] = points[far].to_vec();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        trace.push(inertia_of(&points, &centroids, &next));
        let stable = next == labels;
        labels = next;
        if stable {
            converged = true;
            break;
        }
    }

    let assignments = profiles
        .iter()
        .zip(&labels)
        .map(|(p, &l)| (p.character_id.clone(), l))
        .collect();
    Ok(KMeansFit {
        model: GroupModel {
            centroids,
            assignments,
            cluster_count,
            seed,
        },
        inertia_trace: trace,
        iterations,
        converged,
    })
}

fn label_of(model: &GroupModel, p: &CharacterProfile) -> Result<usize, GroupingError> {
    match model.group_of(&p.character_id) {
        Some(g) => Ok(g),
        None => assign_group(model, &p.embedding),
    }
}

/// Sum of squared distances from each profile to its assigned centroid.
pub fn inertia(model: &GroupModel, profiles: &[CharacterProfile]) -> Result<f64, GroupingError> {
    let mut total = 0.0;
    for p in profiles {
        if p.embedding.len() != model.dim() {
            return Err(GroupingError::DimensionMismatch {
                id: p.character_id.clone(),
                expected: model.dim(),
                got: p.embedding.len(),
            });
        }
        let g = label_of(model, p)?;
        total += squared_distance(&p.embedding, &model.centroids[g]);
    }
    Ok(total)
}

/// Mean silhouette coefficient. Singleton clusters contribute 0, as do
/// points whose intra- and nearest-cluster distances are both 0.
pub fn silhouette(model: &GroupModel, profiles: &[CharacterProfile]) -> Result<f64, GroupingError> {
    if model.cluster_count < 2 {
        return Err(GroupingError::ClusterCount(2));
    }
    if profiles.len() < 2 {
        return Err(GroupingError::TooFewProfiles {
            needed: 2,
            got: profiles.len(),
        });
    }
    let labels = profiles
        .iter()
        .map(|p| {
            if p.embedding.len() != model.dim() {
                return Err(GroupingError::DimensionMismatch {
                    id: p.character_id.clone(),
                    expected: model.dim(),
                    got: p.embedding.len(),
                });
            }
            label_of(model, p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let k = model.cluster_count;
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(GroupingError::EmptyCluster(empty));
    }

    let mut total = 0.0;
    for (i, p) in profiles.iter().enumerate() {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in profiles.iter().enumerate() {
            if i != j {
                sums[labels[j]] += squared_distance(&p.embedding, &q.embedding).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / profiles.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cluster_count: usize,
    pub inertia: f64,
    /// `None` where the silhouette is undefined (one cluster, or an empty one).
    pub silhouette: Option<f64>,
}

/// For each cluster count, keeps the best-of-seeds fit by inertia.
pub fn sweep_cluster_counts(
    profiles: &[CharacterProfile],
    counts: RangeInclusive<usize>,
    seeds: &[u64],
    max_iters: usize,
) -> Result<Vec<SweepRow>, GroupingError> {
    if seeds.is_empty() {
        return Err(GroupingError::NoSeeds);
    }
    let mut rows = Vec::new();
    for g in counts {
        let mut best: Option<(f64, GroupModel)> = None;
        for &seed in seeds {
            let model = fit_kmeans(profiles, g, seed, max_iters)?;
            let value = inertia(&model, profiles)?;
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, model));
            }
        }
        let (value, model) = best.expect("at least one seed");
        let silhouette = if g >= 2 {
            silhouette(&model, profiles).ok()
        } else {
            None
        };
        rows.push(SweepRow {
            cluster_count: g,
            inertia: value,
            silhouette,
        });
    }
    Ok(rows)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic stand-in embedder: hashed character-trigram counts of the
/// lowercased text, L2-normalized. Not a semantic embedding.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    let chars: Vec<char> = std::iter::once(' ')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once(' '))
        .collect();
    for gram in chars.windows(3.min(chars.len())) {
        let mut buf = [0u8; 4];
        let bytes = gram
            .iter()
            .flat_map(|c| c.encode_utf8(&mut buf).as_bytes().to_vec());
        v[(fnv1a(bytes) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::three_blobs;

    #[test]
    fn profile_files_fill_missing_embeddings() {
        let jsonl = "{\"character_id\":\"a\",\"profile_text\":\"knight\"}\n\n{\"character_id\":\"b\",\"embedding\":[1.0,0.0]}\n";
        let ps = parse_profiles(jsonl).unwrap();
        assert_eq!(ps[0].embedding.len(), FALLBACK_DIM);
        assert_eq!(ps[1].embedding, vec![1.0, 0.0]);
        let err = parse_profiles("{}\n{\"character_id\":\"x\"}").unwrap_err();
        assert!(err.to_string().starts_with("line 1"), "{err}");
        assert_eq!(
            parse_profiles("[{\"character_id\":\"a\"}]").unwrap().len(),
            1
        );
    }

    fn profile(id: &str, e: &[f64]) -> CharacterProfile {
        CharacterProfile {
            character_id: id.into(),
            profile_text: String::new(),
            embedding: e.to_vec(),
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let ps = [
            profile("a", &[0.0, 0.0]),
            profile("b", &[2.0, 4.0]),
            profile("c", &[4.0, 2.0]),
        ];
        let m = fit_kmeans(&ps, 1, 3, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(m.centroids, vec![vec![2.0, 2.0]]);
        assert!(m.assignments.values().all(|&g| g == 0));
    }

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let (ps, _) = three_blobs(4, 3, 11);
        let m = fit_kmeans(&ps, ps.len(), 5, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(inertia(&m, &ps).unwrap(), 0.0);
    }

    #[test]
    fn two_point_inertia() {
        let d = 3.0;
        let ps = [profile("a", &[0.0, 0.0]), profile("b", &[d, 0.0])];
        let m = fit_kmeans(&ps, 1, 0, 10).unwrap();
        assert!((inertia(&m, &ps).unwrap() - d * d / 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let ps = [profile("a", &[0.0]), profile("b", &[1.0, 2.0])];
        assert!(matches!(
            fit_kmeans(&ps, 1, 0, 10),
            Err(GroupingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit_kmeans(&ps[..1], 2, 0, 10),
            Err(GroupingError::TooFewProfiles { .. })
        ));
        let bad = [profile("a", &[f64::NAN])];
        assert!(matches!(
            fit_kmeans(&bad, 1, 0, 10),
            Err(GroupingError::NonFinite(_))
        ));
        let dup = [profile("a", &[0.0]), profile("a", &[1.0])];
        assert!(matches!(
            fit_kmeans(&dup, 1, 0, 10),
            Err(GroupingError::DuplicateCharacter(_))
        ));
        assert!(matches!(
            fit_kmeans(&dup, 0, 0, 10),
            Err(GroupingError::ClusterCount(_))
        ));
    }

    #[test]
    fn assign_tie_breaks_low() {
        let m = GroupModel {
            centroids: vec![vec![10.0], vec![-1.0], vec![5.0], vec![1.0]],
            assignments: BTreeMap::new(),
            cluster_count: 4,
            seed: 0,
        };
        assert_eq!(assign_group(&m, &[0.0]).unwrap(), 1);
        for (j, c) in m.centroids.iter().enumerate() {
            assert_eq!(assign_group(&m, c).unwrap(), j);
        }
        assert!(assign_group(&m, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn silhouette_degenerate_and_separated() {
        let same: Vec<_> = (0..4)
            .map(|i| profile(&format!("p{i}"), &[1.0, 1.0]))
            .collect();
        let m = GroupModel {
            centroids: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            assignments: [("p0", 0), ("p1", 0), ("p2", 1), ("p3", 1)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            cluster_count: 2,
            seed: 0,
        };
        assert_eq!(silhouette(&m, &same).unwrap(), 0.0);

        let ps = [
            profile("a", &[0.0]),
            profile("b", &[0.1]),
            profile("c", &[100.0]),
            profile("d", &[100.1]),
        ];
        let m = fit_kmeans(&ps, 2, 1, 10).unwrap();
        assert!(silhouette(&m, &ps).unwrap() > 0.9);
        let one = fit_kmeans(&ps, 1, 1, 10).unwrap();
        assert_eq!(silhouette(&one, &ps), Err(GroupingError::ClusterCount(2)));
    }

    #[test]
    fn sweep_single_count_has_no_silhouette() {
        let (ps, _) = three_blobs(5, 2, 1);
        let rows = sweep_cluster_counts(&ps, 1..=1, &[0, 1], DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].silhouette, None);
    }

    #[test]
    fn hash_embedding_is_unit_and_stable() {
        let a = hash_embedding("A cheerful baker from Lyon", FALLBACK_DIM);
        assert_eq!(a.len(), FALLBACK_DIM);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(
            a,
            hash_embedding("A cheerful baker from Lyon", FALLBACK_DIM)
        );
        assert_ne!(a, hash_embedding("A grumpy knight", FALLBACK_DIM));
        assert!(hash_embedding("", 8).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }
}
