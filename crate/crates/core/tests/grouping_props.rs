use std::collections::BTreeMap;

use proptest::prelude::*;
use rolereward_core::fixtures::three_blobs;
use rolereward_core::grouping::{
    assign_group, fit_kmeans, fit_kmeans_traced, hash_embedding, inertia, sweep_cluster_counts,
    GroupModel,
};

/// Pair-counting Rand index adjusted for chance, straight from the
/// definition over all point pairs.
fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_a + only_b + neither;
    let expected = (both + only_a) * (both + only_b) / total;
    let max = ((both + only_a) + (both + only_b)) / 2.0;
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

#[test]
fn recovers_three_blobs_over_seeds() {
    let (profiles, truth) = three_blobs(30, 8, 5);
    for seed in 0..20 {
        let model = fit_kmeans(&profiles, 3, seed, 100).unwrap();
        let labels: Vec<usize> = profiles
            .iter()
            .map(|p| model.group_of(&p.character_id).unwrap())
            .collect();
        let ari = ari_by_pairs(&truth, &labels);
        assert!(ari >= 0.95, "seed {seed}: {ari}");
        assert!(
            (ari - rolereward_core::grouping::adjusted_rand_index(&truth, &labels)).abs() < 1e-12
        );
    }
}

#[test]
fn lloyd_inertia_never_increases() {
    let (profiles, _) = three_blobs(25, 6, 9);
    for g in 1..=8 {
        for seed in 0..10 {
            let fit = fit_kmeans_traced(&profiles, g, seed, 100).unwrap();
            for w in fit.inertia_trace.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12),
                    "G={g} seed={seed}: {:?}",
                    fit.inertia_trace
                );
            }
        }
    }
}

#[test]
fn sweep_peaks_at_three() {
    let (profiles, _) = three_blobs(20, 8, 1);
    let rows = sweep_cluster_counts(&profiles, 2..=6, &[0, 1, 2, 3, 4], 100).unwrap();
    let best = rows
        .iter()
        .max_by(|a, b| a.silhouette.unwrap().total_cmp(&b.silhouette.unwrap()))
        .unwrap();
    assert_eq!(best.cluster_count, 3);
    assert!(best.silhouette.unwrap() > 0.9);
    for w in rows.windows(2) {
        assert!(w[1].inertia <= w[0].inertia * (1.0 + 1e-9));
    }
}

#[test]
fn fits_are_deterministic() {
    let (profiles, _) = three_blobs(15, 4, 2);
    let a = fit_kmeans(&profiles, 4, 77, 100).unwrap();
    let b = fit_kmeans(&profiles, 4, 77, 100).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        inertia(&a, &profiles).unwrap(),
        inertia(&b, &profiles).unwrap()
    );
}

#[test]
fn hash_embedding_is_unit_length() {
    for text in ["a", "knight of the north", "民主"] {
        let v = hash_embedding(text, 64);
        assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn assignment_is_nearest_centroid(
        centroids in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 1..6),
        point in prop::collection::vec(-5f64..5.0, 3),
    ) {
        let model = GroupModel {
            cluster_count: centroids.len(),
            centroids: centroids.clone(),
            assignments: BTreeMap::new(),
            seed: 0,
        };
        let got = assign_group(&model, &point).unwrap();
        let dist = |c: &Vec<f64>| c.iter().zip(&point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = centroids.iter().map(dist).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(dist(&centroids[got]), best);
        // Ties break toward the lowest index.
        prop_assert!(centroids[..got].iter().all(|c| dist(c) > best));
    }
}
