//! Adaptation and demonstration set construction.
//!
//! - [`build_adaptation_set`]: per-query top-k retrieval from the training
//!   index, unioned and deduplicated (the retrieved set, "τ_ret").
//! - [`combine_adaptation_sets`]: union across test domains.
//! - [`random_baseline_set`] / [`sample_demonstrations`]: seeded uniform draws.
//! - [`isoscore`] / [`select_by_isoscore`]: isotropy-driven candidate ranking.
//! - [`fast_vote_k`]: graph-vote selection of representative, diverse examples.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::embed::{dot, EmbedError, EmbeddingVector, Neighbor, VectorIndex};
use crate::rng::SeededRng;

pub const COMBINED_ORIGIN: &str = "combined";
pub const DEFAULT_VOTE_GRAPH_K: usize = 150;
pub const DEFAULT_VOTE_RHO: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("no test queries")]
    EmptyTestSet,
    #[error("pool has {available} ids, {needed} requested")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("set has {available} ids, {needed} requested")]
    SetTooSmall { needed: usize, available: usize },
    #[error("budget {budget} exceeds the {available} available candidates")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("graph_k must be in 1..{candidates}, got {graph_k}")]
    InvalidGraphK { graph_k: usize, candidates: usize },
    #[error("isoscore needs at least 2 points and dimension >= 2")]
    DegenerateInput,
    #[error("points have inconsistent dimensions")]
    RaggedPoints,
    #[error("{0} selected ids overlap the test ids they were built for")]
    Leakage(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub type Result<T, E = SelectError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSet {
    pub origin: String,
    pub k_per_query: usize,
    pub member_ids: Vec<String>,
    /// Test id to its ranked neighbors.
    pub provenance: BTreeMap<String, Vec<Neighbor>>,
}

impl AdaptationSet {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// Keeps the first occurrence of each id, then the first occurrence of each
/// (code, docstring) content when the record is known to the store.
fn dedup_members<'a>(ids: impl IntoIterator<Item = &'a String>, store: &CorpusStore) -> Vec<String> {
    let mut seen_ids = HashSet::new();
    let mut seen_content = HashSet::new();
    let mut out = Vec::new();
    for id in ids {
        if !seen_ids.insert(id.clone()) {
            continue;
        }
        if let Some(rec) = store.get(id) {
            if !seen_content.insert(rec.content_hash()) {
                continue;
            }
        }
        out.push(id.clone());
    }
    out
}

/// Retrieves the `k` nearest training examples for every test query.
/// Each query's `source_id` is its test record id; test ids are never
/// returned as neighbors.
pub fn build_adaptation_set(
    origin: &str,
    queries: &[EmbeddingVector],
    train_index: &VectorIndex,
    store: &CorpusStore,
    k: usize,
) -> Result<AdaptationSet> {
    if queries.is_empty() {
        return Err(SelectError::EmptyTestSet);
    }
    let exclude: HashSet<String> = queries.iter().map(|q| q.source_id.clone()).collect();
    let lists: Vec<Vec<Neighbor>> = queries
        .par_iter()
        .map(|q| train_index.knn_excluding(q, k, &exclude))
        .collect::<Result<_, EmbedError>>()?;
    let member_ids = dedup_members(lists.iter().flatten().map(|n| &n.id), store);
    let provenance = queries
        .iter()
        .map(|q| q.source_id.clone())
        .zip(lists)
        .collect();
    Ok(AdaptationSet {
        origin: origin.to_string(),
        k_per_query: k,
        member_ids,
        provenance,
    })
}

pub fn combine_adaptation_sets(sets: &[AdaptationSet], store: &CorpusStore) -> AdaptationSet {
    let member_ids = dedup_members(sets.iter().flat_map(|s| &s.member_ids), store);
    let mut provenance = BTreeMap::new();
    for s in sets {
        for (q, ns) in &s.provenance {
            provenance.entry(q.clone()).or_insert_with(|| ns.clone());
        }
    }
    AdaptationSet {
        origin: COMBINED_ORIGIN.to_string(),
        k_per_query: sets.iter().map(|s| s.k_per_query).max().unwrap_or(0),
        member_ids,
        provenance,
    }
}

/// Uniform sample without replacement. The pool is sorted first, so the
/// result depends only on its contents, `label` and `seed`.
pub fn random_baseline_set(pool: &[String], n: usize, label: &str, seed: u64) -> Result<Vec<String>> {
    let mut sorted = pool.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() < n {
        return Err(SelectError::PoolTooSmall {
            needed: n,
            available: sorted.len(),
        });
    }
    Ok(SeededRng::new(&format!("random/{label}"), seed).sample(&sorted, n))
}

pub fn sample_demonstrations(set: &AdaptationSet, n: usize, seed: u64) -> Result<Vec<String>> {
    if set.len() < n {
        return Err(SelectError::SetTooSmall {
            needed: n,
            available: set.len(),
        });
    }
    Ok(SeededRng::new(&format!("demos/{}", set.origin), seed).sample(&set.member_ids, n))
}

/// IsoScore from the spectrum moments of the covariance matrix.
///
/// Reorienting by principal components makes the covariance diagonal equal
/// to its eigenvalues λ, and the isotropy defect only depends on
/// Σλ = tr(C) and ‖λ‖ = ‖C‖_F. Substituting gives
/// ι = (tr(C)/‖C‖_F − 1) / (√d − 1).
pub fn isoscore_from_moments(trace: f64, frobenius: f64, dimension: usize) -> f64 {
    if trace <= 0.0 || frobenius <= 0.0 {
        return 0.0;
    }
    let sqrt_d = (dimension as f64).sqrt();
    ((trace / frobenius - 1.0) / (sqrt_d - 1.0)).clamp(0.0, 1.0)
}

/// A cloud of identical points leaves only rounding noise after centering;
/// treat spread below that level as zero.
fn guarded_isoscore(trace: f64, frobenius: f64, energy: f64, dimension: usize) -> f64 {
    if trace <= energy * 1e-12 {
        return 0.0;
    }
    isoscore_from_moments(trace, frobenius, dimension)
}

/// Trace and Frobenius norm of the centered Gram matrix built from raw dot
/// products. `raw` is row-major `n × n`. Both equal the corresponding
/// quantities of the scatter matrix, so the covariance ratio is preserved.
fn centered_gram_moments(raw: &[f64], n: usize) -> (f64, f64) {
    let row_mean: Vec<f64> = (0..n)
        .map(|i| raw[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut trace = 0.0;
    let mut frob2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = raw[i * n + j] - row_mean[i] - row_mean[j] + grand;
            if i == j {
                trace += g;
            }
            frob2 += g * g;
        }
    }
    (trace, frob2.sqrt())
}

/// Isotropy of a point cloud in `[0, 1]`. A cloud of identical points scores 0.
pub fn isoscore(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    let d = points.first().map(Vec::len).unwrap_or(0);
    if n < 2 || d < 2 {
        return Err(SelectError::DegenerateInput);
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(SelectError::RaggedPoints);
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    // scatter as d×d when d is small, otherwise the n×n Gram matrix
    let (trace, frob) = if d <= n {
        let mut s = vec![0f64; d * d];
        for p in &centered {
            for a in 0..d {
                for b in 0..d {
                    s[a * d + b] += p[a] * p[b];
                }
            }
        }
        let tr = (0..d).map(|a| s[a * d + a]).sum::<f64>();
        (tr, s.iter().map(|v| v * v).sum::<f64>().sqrt())
    } else {
        let mut g = vec![0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        let tr = (0..n).map(|i| g[i * n + i]).sum::<f64>();
        (tr, g.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let energy: f64 = points.iter().flatten().map(|v| v * v).sum();
    Ok(guarded_isoscore(trace, frob, energy, d))
}

/// Scores every training candidate by the IsoScore of the test cloud plus
/// that candidate, and keeps the `budget` highest (ties by id).
pub fn select_by_isoscore(
    test: &[EmbeddingVector],
    train_index: &VectorIndex,
    budget: usize,
) -> Result<Vec<(String, f64)>> {
    if test.is_empty() {
        return Err(SelectError::EmptyTestSet);
    }
    let d = train_index.dimension();
    if let Some(bad) = test.iter().find(|t| t.dimension() != d) {
        return Err(EmbedError::DimensionMismatch {
            expected: d,
            got: bad.dimension(),
        }
        .into());
    }
    let exclude: HashSet<&str> = test.iter().map(|t| t.source_id.as_str()).collect();
    let candidates: Vec<usize> = (0..train_index.len())
        .filter(|&i| !exclude.contains(train_index.ids()[i].as_str()))
        .collect();
    if budget > candidates.len() {
        return Err(SelectError::BudgetTooLarge {
            budget,
            available: candidates.len(),
        });
    }
    let n = test.len();
    let m = n + 1;
    // the test block of the raw Gram matrix is shared by every candidate
    let mut base = vec![0f64; m * m];
    for i in 0..n {
        for j in i..n {
            let v = dot(&test[i].values, &test[j].values);
            base[i * m + j] = v;
            base[j * m + i] = v;
        }
    }
    let mut scored: Vec<(String, f64)> = candidates
        .par_iter()
        .map(|&c| {
            let row = train_index.row(c);
            let mut raw = base.clone();
            for (i, t) in test.iter().enumerate() {
                let v = dot(&t.values, row);
                raw[i * m + n] = v;
                raw[n * m + i] = v;
            }
            raw[n * m + n] = dot(row, row);
            let (trace, frob) = centered_gram_moments(&raw, m);
            let energy: f64 = (0..m).map(|i| raw[i * m + i]).sum();
            (train_index.ids()[c].clone(), guarded_isoscore(trace, frob, energy, d))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(budget);
    Ok(scored)
}

/// Fast vote-k over the candidates in `index`.
///
/// Each candidate votes for its `graph_k` nearest neighbors. A candidate's
/// score is the sum over its voters `v` of `rho^-(number of already selected
/// candidates among v's neighbors)`; the best unselected candidate is taken
/// greedily until `budget` are chosen. Ties go to the smaller id.
pub fn fast_vote_k(index: &VectorIndex, budget: usize, graph_k: usize, rho: f64) -> Result<Vec<String>> {
    let n = index.len();
    if budget > n {
        return Err(SelectError::BudgetTooLarge { budget, available: n });
    }
    if graph_k == 0 || graph_k >= n {
        return Err(SelectError::InvalidGraphK { graph_k, candidates: n });
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let q = index.row(v);
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter(|&u| u != v)
                .map(|u| (u, dot(q, index.row(u))))
                .collect();
            let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if graph_k < scored.len() {
                scored.select_nth_unstable_by(graph_k - 1, by_rank);
                scored.truncate(graph_k);
            }
            scored.sort_by(by_rank);
            scored.into_iter().map(|(u, _)| u).collect()
        })
        .collect();
    let mut voters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (v, ns) in neighbors.iter().enumerate() {
        for &u in ns {
            voters[u].push(v);
        }
    }
    let mut score: Vec<f64> = voters.iter().map(|vs| vs.len() as f64).collect();
    let mut covered = vec![0i32; n];
    let mut selected = vec![false; n];
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let mut best: Option<usize> = None;
        for u in 0..n {
            if selected[u] {
                continue;
            }
            // rows are id-sorted, so the first maximum is the smallest id
            if best.map_or(true, |b| score[u] > score[b]) {
                best = Some(u);
            }
        }
        let Some(u) = best else { break };
        selected[u] = true;
        out.push(index.ids()[u].clone());
        for &v in &voters[u] {
            let before = rho.powi(-covered[v]);
            covered[v] += 1;
            let delta = rho.powi(-covered[v]) - before;
            for &w in &neighbors[v] {
                if !selected[w] {
                    score[w] += delta;
                }
            }
        }
    }
    Ok(out)
}

/// Fails if any of `selected` is one of `test_ids`.
pub fn check_disjoint<'a>(
    selected: impl IntoIterator<Item = &'a String>,
    test_ids: &HashSet<String>,
) -> Result<()> {
    let hits = selected.into_iter().filter(|id| test_ids.contains(*id)).count();
    if hits == 0 {
        Ok(())
    } else {
        Err(SelectError::Leakage(hits))
    }
}
