#![allow(dead_code)]

use driftbench::embed::{EmbeddingVector, VectorIndex};
use driftbench::rng::SeededRng;
use nalgebra::{DMatrix, SymmetricEigen};

/// IsoScore by the original recipe: rotate onto principal components, take
/// the covariance diagonal, normalize, measure the isotropy defect.
pub fn isoscore_pca(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let rotated = &centered * &eig.eigenvectors;
    let pca_cov = rotated.transpose() * &rotated / (n as f64 - 1.0);
    let sigma: Vec<f64> = (0..d).map(|i| pca_cov[(i, i)]).collect();
    let norm = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let df = d as f64;
    let sqrt_d = df.sqrt();
    let defect = sigma
        .iter()
        .map(|s| (sqrt_d * s / norm - 1.0).powi(2))
        .sum::<f64>()
        .sqrt()
        / (2.0 * (df - sqrt_d)).sqrt();
    let phi = (df - defect * defect * (df - sqrt_d)) / df;
    (df * phi - sqrt_d) / (df - sqrt_d)
}

/// Full ranking by cosine computed from scratch, ties by id.
pub fn brute_force_ranking(query: &[f32], rows: &[(String, Vec<f32>)]) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut out: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| {
            let dot: f64 = query.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            (id.clone(), dot / (qn * norm(v)))
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn gaussian(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

pub fn unit(values: &[f64], id: &str) -> EmbeddingVector {
    EmbeddingVector::normalized(values.iter().map(|v| *v as f32).collect(), id).unwrap()
}

/// Unit vectors scattered tightly around `centers` orthogonal axes;
/// cluster `c` gets `sizes[c]` members with ids `c<c>-<i>`.
pub fn clustered(seed: u64, d: usize, sizes: &[usize], noise: f64) -> Vec<EmbeddingVector> {
    let mut rng = SeededRng::new("clusters", seed);
    let mut out = Vec::new();
    for (c, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let mut v: Vec<f64> = (0..d).map(|_| noise * rng.normal()).collect();
            v[c % d] += 1.0;
            out.push(unit(&v, &format!("c{c}-{i:03}")));
        }
    }
    out
}

pub fn index_of(vectors: Vec<EmbeddingVector>) -> VectorIndex {
    VectorIndex::build(vectors, "test").unwrap()
}

pub fn cluster_of(id: &str) -> &str {
    id.split('-').next().unwrap()
}

pub fn mean_pairwise_cosine(index: &VectorIndex, ids: &[String]) -> f64 {
    let vs: Vec<EmbeddingVector> = ids.iter().map(|id| index.vector(id).unwrap()).collect();
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            sum += driftbench::embed::cosine(&vs[i], &vs[j]);
            n += 1;
        }
    }
    sum / n as f64
}

/// A random rotation from the QR decomposition of a Gaussian matrix.
pub fn random_rotation(rng: &mut SeededRng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
    g.qr().q()
}
