//! Record embeddings, exact cosine retrieval and domain similarity statistics.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a deterministic hashed
//! TF-IDF model over identifier subtokens, and a remote HTTP endpoint. All
//! retrieval is an exact linear scan; ties are broken by ascending record id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CodeRecord;

pub const DEFAULT_DIMENSION: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding is all zeros")]
    DegenerateVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate record id {0} in index")]
    DuplicateId(String),
    #[error("domain needs at least 2 vectors, got {0}")]
    DomainTooSmall(usize),
    #[error("embedding endpoint error: {0}")]
    Endpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// Splits identifiers into lowercase subtokens: `getHTTPResponse_code2` gives
/// `get`, `http`, `response`, `code`, `2`. Punctuation and layout are dropped.
pub fn subtokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_alphanumeric() {
            i += 1;
        }
        split_identifier(&chars[start..i], &mut out);
    }
    out
}

fn split_identifier(word: &[char], out: &mut Vec<String>) {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Lower,
        Upper,
        Digit,
        Other,
    }
    let class = |c: char| {
        if c.is_ascii_digit() {
            Class::Digit
        } else if c.is_uppercase() {
            Class::Upper
        } else if c.is_lowercase() {
            Class::Lower
        } else {
            Class::Other
        }
    };
    let mut start = 0;
    for i in 1..word.len() {
        let (prev, cur) = (class(word[i - 1]), class(word[i]));
        let boundary = match (prev, cur) {
            (Class::Lower, Class::Upper) => true,
            (Class::Digit, c) | (c, Class::Digit) if c != Class::Digit => true,
            // HTTPResponse: split before the capital that starts a lowercase run
            (Class::Upper, Class::Upper) => {
                i + 1 < word.len() && class(word[i + 1]) == Class::Lower
            }
            _ => false,
        };
        if boundary {
            out.push(word[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    if start < word.len() {
        out.push(word[start..].iter().collect::<String>().to_lowercase());
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub source_id: String,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. All-zero (or non-finite) input is rejected.
    pub fn normalized(values: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        let norm = values
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::DegenerateVector);
        }
        Ok(EmbeddingVector {
            values: values.iter().map(|v| (f64::from(*v) / norm) as f32).collect(),
            source_id: source_id.into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine of two unit vectors.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    dot(&a.values, &b.values)
}

pub trait EmbeddingProvider: Sync {
    fn dimension(&self) -> usize;
    /// Stable description of the provider and its fitted state.
    fn fingerprint(&self) -> String;
    /// Raw (unnormalized) vectors, one per input text.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

/// Hashed TF-IDF over identifier subtokens.
#[derive(Debug, Clone)]
pub struct HashedTfidf {
    dimension: usize,
    doc_freq: HashMap<String, u32>,
    n_docs: u32,
    fingerprint: String,
}

impl HashedTfidf {
    /// Fits document frequencies on `docs` (normally the training partition).
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>, dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        let mut n_docs = 0u32;
        for doc in docs {
            n_docs += 1;
            let unique: HashSet<String> = subtokens(doc).into_iter().collect();
            for t in unique {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        let sorted: BTreeMap<&String, &u32> = doc_freq.iter().collect();
        let mut h = Sha256::new();
        for (t, df) in sorted {
            h.update(t.as_bytes());
            h.update(df.to_le_bytes());
        }
        let fingerprint = format!(
            "hashed-tfidf/v1/dim={dimension}/docs={n_docs}/vocab={}",
            &hex::encode(h.finalize())[..16]
        );
        HashedTfidf {
            dimension,
            doc_freq,
            n_docs,
            fingerprint,
        }
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((1.0 + f64::from(self.n_docs)) / (1.0 + f64::from(df))).ln() + 1.0
    }

    pub fn vectorize(&self, text: &str) -> Vec<f32> {
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in subtokens(text) {
            *tf.entry(t).or_default() += 1;
        }
        let mut acc = vec![0f64; self.dimension];
        for (term, count) in tf {
            let weight = (1.0 + f64::from(count).ln()) * self.idf(&term);
            let bucket = (fnv1a(term.as_bytes()) % self.dimension as u64) as usize;
            acc[bucket] += weight;
        }
        acc.into_iter().map(|v| v as f32).collect()
    }
}

impl EmbeddingProvider for HashedTfidf {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.par_iter().map(|t| self.vectorize(t)).collect())
    }
}

/// Client for a JSON embedding endpoint: `{"input": [...]}` in,
/// `{"data": [{"embedding": [...]}]}` out.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub url: String,
    pub model: Option<String>,
    pub api_key_env: String,
    pub dimension: usize,
    pub batch_size: usize,
    pub parallelism: usize,
}

impl RemoteProvider {
    pub fn new(url: impl Into<String>, dimension: usize) -> Self {
        RemoteProvider {
            url: url.into(),
            model: None,
            api_key_env: "DRIFTBENCH_API_KEY".into(),
            dimension,
            batch_size: 64,
            parallelism: 4,
        }
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        #[derive(Deserialize)]
        struct Item {
            embedding: Vec<f32>,
        }
        #[derive(Deserialize)]
        struct Response {
            data: Vec<Item>,
        }
        let mut body = serde_json::json!({ "input": texts });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let mut req = ureq::post(&self.url);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp: Response = req
            .send_json(body)
            .map_err(|e| EmbedError::Endpoint(e.to_string()))?
            .into_json()
            .map_err(|e| EmbedError::Endpoint(e.to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(EmbedError::Endpoint(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        resp.data
            .into_iter()
            .map(|item| {
                if item.embedding.len() == self.dimension {
                    Ok(item.embedding)
                } else {
                    Err(EmbedError::DimensionMismatch {
                        expected: self.dimension,
                        got: item.embedding.len(),
                    })
                }
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn fingerprint(&self) -> String {
        format!(
            "remote/{}/{}/dim={}",
            self.url,
            self.model.as_deref().unwrap_or("-"),
            self.dimension
        )
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let batches: Vec<&[&str]> = texts.chunks(self.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(texts.len());
        // waves of at most `parallelism` concurrent requests, merged in input order
        for wave in batches.chunks(self.parallelism.max(1)) {
            let results: Vec<Result<Vec<Vec<f32>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|b| s.spawn(|| self.fetch(b))).collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(EmbedError::Endpoint("worker panicked".into())))
                    })
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

/// Which part of a record is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedField {
    Code,
    Docstring,
    DocstringAndCode,
}

impl EmbedField {
    pub fn text(self, record: &CodeRecord) -> String {
        match self {
            EmbedField::Code => record.code.clone(),
            EmbedField::Docstring => record.docstring.clone(),
            EmbedField::DocstringAndCode => format!("{}\n{}", record.docstring, record.code),
        }
    }
}

pub fn embed_text(
    provider: &dyn EmbeddingProvider,
    text: &str,
    source_id: &str,
) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let raw = provider
        .embed_batch(&[text])?
        .pop()
        .ok_or_else(|| EmbedError::Endpoint("no embedding returned".into()))?;
    EmbeddingVector::normalized(raw, source_id)
}

/// Embeds many records at once. Records that cannot be embedded are returned
/// separately so the caller can report and skip them.
pub fn embed_records<'a>(
    provider: &dyn EmbeddingProvider,
    records: impl IntoIterator<Item = &'a CodeRecord>,
    field: EmbedField,
) -> Result<(Vec<EmbeddingVector>, Vec<(String, EmbedError)>)> {
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    let mut skipped = Vec::new();
    for r in records {
        let t = field.text(r);
        if t.trim().is_empty() {
            skipped.push((r.id.clone(), EmbedError::EmptyText));
        } else {
            ids.push(r.id.clone());
            texts.push(t);
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let raw = provider.embed_batch(&refs)?;
    let mut vectors = Vec::with_capacity(raw.len());
    for (id, values) in ids.into_iter().zip(raw) {
        match EmbeddingVector::normalized(values, id.clone()) {
            Ok(v) => vectors.push(v),
            Err(e) => skipped.push((id, e)),
        }
    }
    Ok((vectors, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

/// Ranking order: similarity descending, then id ascending.
fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Serialize, Deserialize)]
struct IndexSidecar {
    ids: Vec<String>,
    dimension: usize,
    fingerprint: String,
}

/// Dense id-ordered matrix of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    ids: Vec<String>,
    dimension: usize,
    fingerprint: String,
    data: Vec<f32>,
}

impl VectorIndex {
    /// Input order does not matter: rows are stored sorted by id.
    pub fn build(mut vectors: Vec<EmbeddingVector>, fingerprint: impl Into<String>) -> Result<Self> {
        let dimension = vectors.first().map(|v| v.dimension()).ok_or(EmbedError::EmptyIndex)?;
        vectors.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        let mut data = Vec::with_capacity(vectors.len() * dimension);
        let mut ids = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.dimension() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: dimension,
                    got: v.dimension(),
                });
            }
            if ids.last() == Some(&v.source_id) {
                return Err(EmbedError::DuplicateId(v.source_id));
            }
            data.extend_from_slice(&v.values);
            ids.push(v.source_id);
        }
        Ok(VectorIndex {
            ids,
            dimension,
            fingerprint: fingerprint.into(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    pub fn vector(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id).map(|i| EmbeddingVector {
            values: self.row(i).to_vec(),
            source_id: id.to_string(),
        })
    }

    /// Restricts the index to the given ids (unknown ids are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<VectorIndex> {
        let vectors: Vec<EmbeddingVector> = ids.into_iter().filter_map(|id| self.vector(id)).collect();
        VectorIndex::build(vectors, self.fingerprint.clone())
    }

    pub fn knn(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>> {
        self.knn_excluding(query, k, &HashSet::new())
    }

    /// Exact top-k by cosine, skipping ids in `exclude`.
    pub fn knn_excluding(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(EmbedError::InvalidK);
        }
        if self.is_empty() {
            return Err(EmbedError::EmptyIndex);
        }
        if query.dimension() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let mut scored: Vec<Neighbor> = (0..self.len())
            .filter(|&i| !exclude.contains(&self.ids[i]))
            .map(|i| Neighbor {
                id: self.ids[i].clone(),
                similarity: dot(&query.values, self.row(i)),
            })
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_by(rank);
        Ok(scored)
    }

    /// Writes `<prefix>.f32` (little-endian rows) and `<prefix>.json`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let bin = prefix.with_extension("f32");
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| EmbedError::Io { path: p, source }
        };
        let mut w = BufWriter::new(File::create(&bin).map_err(io_err(&bin))?);
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err(&bin))?;
        }
        w.flush().map_err(io_err(&bin))?;
        let side = prefix.with_extension("json");
        let sidecar = IndexSidecar {
            ids: self.ids.clone(),
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
        };
        serde_json::to_writer(File::create(&side).map_err(io_err(&side))?, &sidecar)?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let side = prefix.with_extension("json");
        let bin = prefix.with_extension("f32");
        let sidecar: IndexSidecar = serde_json::from_reader(BufReader::new(
            File::open(&side).map_err(|source| EmbedError::Io { path: side.clone(), source })?,
        ))?;
        let mut bytes = Vec::new();
        File::open(&bin)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| EmbedError::Io { path: bin.clone(), source })?;
        let expected = sidecar.ids.len() * sidecar.dimension * 4;
        if bytes.len() != expected {
            return Err(EmbedError::DimensionMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(VectorIndex {
            ids: sidecar.ids,
            dimension: sidecar.dimension,
            fingerprint: sidecar.fingerprint,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSimilarity {
    pub intra_avg: f64,
    /// `None` when there are no vectors outside the domain.
    pub inter_avg: Option<f64>,
}

/// Mean pairwise cosine inside a domain and mean cosine from the domain to
/// everything outside it.
pub fn domain_similarity_stats(
    domain: &[EmbeddingVector],
    others: &[EmbeddingVector],
) -> Result<DomainSimilarity> {
    if domain.len() < 2 {
        return Err(EmbedError::DomainTooSmall(domain.len()));
    }
    let n = domain.len();
    let intra_sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| cosine(&domain[i], &domain[j])).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let pairs = (n * (n - 1) / 2) as f64;
    let inter_avg = if others.is_empty() {
        None
    } else {
        let s: f64 = domain
            .par_iter()
            .map(|a| others.iter().map(|b| cosine(a, b)).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        Some((s / (n * others.len()) as f64).clamp(-1.0, 1.0))
    };
    Ok(DomainSimilarity {
        intra_avg: (intra_sum / pairs).clamp(-1.0, 1.0),
        inter_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(values: &[f32], id: &str) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec(), id).unwrap()
    }

    #[test]
    fn subtoken_splitting() {
        assert_eq!(
            subtokens("getHTTPResponse_code2 = x.y;"),
            vec!["get", "http", "response", "code", "2", "x", "y"]
        );
        assert_eq!(subtokens("  "), Vec::<String>::new());
    }

    #[test]
    fn layout_does_not_change_embeddings() {
        let model = HashedTfidf::fit(["return x", "var y = 2"], 64);
        let a = embed_text(&model, "return x", "a").unwrap();
        let b = embed_text(&model, "return x  \n\t", "a").unwrap();
        assert_eq!(a, b);
        assert!(matches!(embed_text(&model, "   ", "a"), Err(EmbedError::EmptyText)));
        assert!(matches!(embed_text(&model, "+-*/", "a"), Err(EmbedError::DegenerateVector)));
    }

    #[test]
    fn disjoint_subtokens_are_nearly_orthogonal() {
        let docs = ["alpha beta gamma", "delta epsilon zeta", "eta theta iota", "kappa lambda mu"];
        let model = HashedTfidf::fit(docs, 512);
        for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            let va = embed_text(&model, docs[a], "a").unwrap();
            let vb = embed_text(&model, docs[b], "b").unwrap();
            assert!(cosine(&va, &vb) < 0.05);
        }
    }

    #[test]
    fn knn_matches_hand_computed_ranking() {
        // query (1, 0, 0); dot products: a=0.6, b=0.8, c=0, d=-1, e=0.8
        let vs = vec![
            unit(&[0.6, 0.8, 0.0], "a"),
            unit(&[0.8, 0.0, 0.6], "b"),
            unit(&[0.0, 1.0, 0.0], "c"),
            unit(&[-1.0, 0.0, 0.0], "d"),
            unit(&[0.8, 0.6, 0.0], "e"),
        ];
        let index = VectorIndex::build(vs, "test").unwrap();
        let q = unit(&[1.0, 0.0, 0.0], "q");
        let got: Vec<String> = index.knn(&q, 10).unwrap().into_iter().map(|n| n.id).collect();
        assert_eq!(got, vec!["b", "e", "a", "c", "d"]);
        let top = index.knn(&q, 2).unwrap();
        assert_eq!(top.len(), 2);
        assert!((top[0].similarity - 0.8).abs() < 1e-6);
        let self_hit = index.knn(&unit(&[0.0, 1.0, 0.0], "c"), 1).unwrap();
        assert_eq!(self_hit[0].id, "c");
        assert!((self_hit[0].similarity - 1.0).abs() < 1e-6);
        assert!(matches!(
            index.knn(&unit(&[1.0, 0.0], "q"), 1),
            Err(EmbedError::DimensionMismatch { .. })
        ));
        assert!(matches!(index.knn(&q, 0), Err(EmbedError::InvalidK)));
    }

    #[test]
    fn similarity_stats_by_hand() {
        let same = vec![unit(&[1.0, 0.0], "a"), unit(&[1.0, 0.0], "b"), unit(&[1.0, 0.0], "c")];
        assert!((domain_similarity_stats(&same, &[]).unwrap().intra_avg - 1.0).abs() < 1e-9);
        let ortho = vec![unit(&[1.0, 0.0], "a"), unit(&[0.0, 1.0], "b")];
        assert!(domain_similarity_stats(&ortho, &[]).unwrap().intra_avg.abs() < 1e-9);

        // domain {x, y, (x+y)/√2}, others {x, -y}
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let dom = vec![unit(&[1.0, 0.0], "a"), unit(&[0.0, 1.0], "b"), unit(&[s, s], "c")];
        let oth = vec![unit(&[1.0, 0.0], "o1"), unit(&[0.0, -1.0], "o2")];
        let st = domain_similarity_stats(&dom, &oth).unwrap();
        // intra pairs: 0, s, s -> 2s/3 ; cross: (1,0),(0,-1),(s,-s) -> 1 - 1 + 0 = 0 over 6
        assert!((st.intra_avg - 2.0 * f64::from(s) / 3.0).abs() < 1e-6);
        assert!(st.inter_avg.unwrap().abs() < 1e-6);
        assert!(matches!(
            domain_similarity_stats(&dom[..1], &oth),
            Err(EmbedError::DomainTooSmall(1))
        ));
    }

    #[test]
    fn index_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let index = VectorIndex::build(
            vec![unit(&[1.0, 2.0], "b"), unit(&[3.0, -1.0], "a")],
            "fp",
        )
        .unwrap();
        let prefix = dir.path().join("idx");
        index.save(&prefix).unwrap();
        assert_eq!(VectorIndex::load(&prefix).unwrap(), index);
        assert_eq!(index.ids(), ["a", "b"]);
    }
}
