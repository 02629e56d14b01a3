mod common;

use std::collections::{BTreeSet, HashSet};

use common::*;
use driftbench::corpus::CorpusStore;
use driftbench::rng::SeededRng;
use driftbench::select::{build_adaptation_set, fast_vote_k, isoscore, select_by_isoscore};
use nalgebra::DVector;
use proptest::prelude::*;

#[test]
fn isoscore_analytic_configurations() {
    let square = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    assert!((isoscore(&square).unwrap() - 1.0).abs() < 1e-9);
    assert!((isoscore_pca(&square) - 1.0).abs() < 1e-9);
    let pair = vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]];
    assert!(isoscore(&pair).unwrap().abs() < 1e-9);
    assert!(isoscore_pca(&pair).abs() < 1e-9);
}

#[test]
fn isoscore_of_gaussian_cloud_is_near_one() {
    let mut rng = SeededRng::new("iso-gauss", 0);
    let points: Vec<Vec<f64>> = (0..10_000).map(|_| gaussian(&mut rng, 16)).collect();
    let ours = isoscore(&points).unwrap();
    assert!(ours > 0.95, "{ours}");
    assert!((ours - isoscore_pca(&points)).abs() < 1e-9);
}

#[test]
fn closed_form_matches_pca_recipe_on_anisotropic_clouds() {
    for seed in 0..20 {
        let mut rng = SeededRng::new("iso-aniso", seed);
        let d = 2 + rng.below(10);
        let n = 3 + rng.below(40);
        let scales: Vec<f64> = (0..d).map(|_| rng.unit_f64() * 5.0).collect();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| gaussian(&mut rng, d).iter().zip(&scales).map(|(x, s)| x * s).collect())
            .collect();
        let a = isoscore(&points).unwrap();
        let b = isoscore_pca(&points).clamp(0.0, 1.0);
        assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn isoscore_is_rotation_and_scale_invariant(seed in 0u64..10_000, n in 3usize..30, d in 2usize..8, scale in 0.01f64..100.0) {
        let mut rng = SeededRng::new("iso-prop", seed);
        let stretch: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * rng.unit_f64()).collect();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| gaussian(&mut rng, d).iter().zip(&stretch).map(|(x, s)| x * s).collect())
            .collect();
        let base = isoscore(&points).unwrap();
        let rot = random_rotation(&mut rng, d);
        let rotated: Vec<Vec<f64>> = points
            .iter()
            .map(|p| (&rot * DVector::from_column_slice(p)).iter().copied().collect())
            .collect();
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect();
        prop_assert!((isoscore(&rotated).unwrap() - base).abs() < 1e-6);
        prop_assert!((isoscore(&scaled).unwrap() - base).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

#[test]
fn isoscore_selection_agrees_with_pca_oracle() {
    let mut rng = SeededRng::new("iso-select", 1);
    let d = 6;
    // test cloud stretched along the first axis
    let test: Vec<_> = (0..8)
        .map(|i| {
            let mut v = gaussian(&mut rng, d);
            v[0] *= 6.0;
            unit(&v, &format!("t{i}"))
        })
        .collect();
    let train: Vec<_> = (0..40).map(|i| unit(&gaussian(&mut rng, d), &format!("x{i:02}"))).collect();
    let index = index_of(train.clone());
    let picked = select_by_isoscore(&test, &index, 10).unwrap();

    let as_f64 = |v: &driftbench::embed::EmbeddingVector| v.values.iter().map(|x| f64::from(*x)).collect::<Vec<_>>();
    let mut oracle: Vec<(String, f64)> = train
        .iter()
        .map(|c| {
            let mut cloud: Vec<Vec<f64>> = test.iter().map(as_f64).collect();
            cloud.push(as_f64(c));
            (c.source_id.clone(), isoscore_pca(&cloud))
        })
        .collect();
    oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for ((id, s), (oid, os)) in picked.iter().zip(&oracle) {
        assert_eq!(id, oid);
        assert!((s - os).abs() < 1e-6, "{id}: {s} vs {os}");
    }
}

#[test]
fn vote_k_covers_three_separated_clusters() {
    let index = index_of(clustered(3, 16, &[30, 30, 30], 0.05));
    let picked = fast_vote_k(&index, 3, 10, 10.0).unwrap();
    let clusters: BTreeSet<&str> = picked.iter().map(|id| cluster_of(id)).collect();
    assert_eq!(clusters.len(), 3, "{picked:?}");
}

/// Well-separated clusters of unequal size; the 20-run mean of the selected
/// set's pairwise cosine must be below that of same-size random samples.
#[test]
fn vote_k_is_more_diverse_than_random_samples() {
    let (mut vote_sum, mut random_sum) = (0.0, 0.0);
    for run in 0..20 {
        let index = index_of(clustered(100 + run, 16, &[60, 30, 15, 10, 5], 0.05));
        let picked = fast_vote_k(&index, 10, 15, 10.0).unwrap();
        let random = SeededRng::new("votek-baseline", run).sample(index.ids(), 10);
        vote_sum += mean_pairwise_cosine(&index, &picked);
        random_sum += mean_pairwise_cosine(&index, &random);
    }
    assert!(vote_sum < random_sum, "{} vs {}", vote_sum / 20.0, random_sum / 20.0);
}

#[test]
fn vote_k_and_isoscore_are_deterministic() {
    let index = index_of(clustered(9, 8, &[20, 20], 0.3));
    assert_eq!(fast_vote_k(&index, 5, 6, 10.0).unwrap(), fast_vote_k(&index, 5, 6, 10.0).unwrap());
    let test = clustered(10, 8, &[5], 0.3);
    assert_eq!(
        select_by_isoscore(&test, &index, 7).unwrap(),
        select_by_isoscore(&test, &index, 7).unwrap()
    );
}

#[test]
fn retrieval_set_size_bounds() {
    let mut rng = SeededRng::new("tau-bounds", 0);
    let train: Vec<_> = (0..3000).map(|i| unit(&gaussian(&mut rng, 64), &format!("tr{i:04}"))).collect();
    let queries: Vec<_> = (0..32).map(|i| unit(&gaussian(&mut rng, 64), &format!("te{i:02}"))).collect();
    let index = index_of(train);
    let store = CorpusStore::from_records(Vec::new()).0;
    for (k, bound) in [(4, 128), (8, 256), (32, 1024)] {
        let set = build_adaptation_set("d", &queries, &index, &store, k).unwrap();
        assert!(set.len() <= bound && set.len() >= k, "k={k}: {}", set.len());
        let unique: HashSet<&String> = set.member_ids.iter().collect();
        assert_eq!(unique.len(), set.len());
        assert!(set.provenance.values().all(|ns| ns.len() == k));
    }
}
