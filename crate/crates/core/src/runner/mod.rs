//! Experiment orchestration.
//!
//! A run visits every (granularity, domain) of the test partition, splits the
//! domain once per seed, prompts the model with each configured demonstration
//! source and scores the outputs. Fine-tuning methods only export their
//! adaptation sets; outputs of models trained on them come back through
//! [`score_external`].

mod config;
mod export;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    EmbeddingBackend, EmbeddingConfig, ExperimentConfig, Method, ModelBackendKind, ModelConfig, PromptConfig,
};
pub use export::{export_adaptation_jsonl, import_adaptation_jsonl, ExportRow, ExportSpec, ExportSummary};
pub use report::{aggregate, emit_report, load_result, render_tables, AggregateRow};

use crate::corpus::{
    build_domain_index, exclude_seen_domains, split_domain, CodeRecord, CorpusError, CorpusStore, DomainKey,
    DomainSplit, Granularity, Partition, SPLIT_PART_SIZE,
};
use crate::embed::{
    domain_similarity_stats, embed_records, DomainSimilarity, EmbedError, EmbedField, EmbeddingProvider,
    EmbeddingVector, HashedTfidf, RemoteProvider, VectorIndex,
};
use crate::metrics::{Metric, MetricError, MetricReport};
use crate::modelclient::{
    CacheStats, CompletionRequest, HttpBackend, MockBackend, ModelBackend, ModelClient, ModelError, ResponseCache,
};
use crate::prompt::{self, render_prompt, shuffle_orders, Demonstration, Placement, PromptError, RenderOptions, Task};
use crate::rng::{SeededRng, PRNG_ID};
use crate::select::{
    build_adaptation_set, combine_adaptation_sets, fast_vote_k, random_baseline_set, sample_demonstrations,
    select_by_isoscore, AdaptationSet, SelectError, COMBINED_ORIGIN, DEFAULT_VOTE_GRAPH_K, DEFAULT_VOTE_RHO,
};
use crate::synth::synthetic_corpus;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("export {path} shares {count} ids with its test queries")]
    Leakage { path: String, count: usize },
    #[error("unknown record id {0}")]
    UnknownRecord(String),
    #[error("{}:{line}: {message}", path.display())]
    BadRow { path: PathBuf, line: usize, message: String },
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = RunnerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleFailure {
    pub id: String,
    pub error: String,
}

/// Scores of one (domain, method, shots, task, seed, variant, order) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub granularity: Granularity,
    pub domain: String,
    pub method: String,
    pub shots: usize,
    pub task: Task,
    pub seed: u64,
    pub variant: usize,
    pub order: usize,
    pub reports: Vec<MetricReport>,
    /// Examples scored as empty output.
    pub failures: Vec<ExampleFailure>,
}

type RunKey<'a> = (Granularity, &'a str, &'a str, usize, Task, u64, usize, usize);

impl RunRecord {
    fn key(&self) -> RunKey<'_> {
        (
            self.granularity,
            &self.domain,
            &self.method,
            self.shots,
            self.task,
            self.seed,
            self.variant,
            self.order,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub prng: String,
    pub embedding: String,
    pub backend: String,
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub granularities: Vec<Granularity>,
    pub shots: Vec<usize>,
    pub cache: CacheStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStat {
    pub granularity: Granularity,
    pub domain: String,
    pub size: usize,
    pub similarity: DomainSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub manifest: RunManifest,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub domain_stats: Vec<DomainStat>,
    pub exports: Vec<ExportSummary>,
}

impl ExperimentResult {
    /// Adds or replaces runs, keeping runs sorted and aggregates current.
    pub fn merge_runs(&mut self, runs: Vec<RunRecord>) {
        let incoming: HashSet<String> = runs.iter().map(|r| format!("{:?}", r.key())).collect();
        self.runs.retain(|r| !incoming.contains(&format!("{:?}", r.key())));
        self.runs.extend(runs);
        self.runs.sort_by(|a, b| a.key().cmp(&b.key()));
        self.aggregates = aggregate(&self.runs);
    }
}

pub fn task_metrics(task: Task) -> &'static [Metric] {
    match task {
        Task::Summarize => &[Metric::Bleu],
        Task::Generate => &[Metric::Codebleu, Metric::Chrf, Metric::Rougel],
    }
}

pub fn score_outputs(task: Task, ids: &[String], hyps: &[String], refs: &[String]) -> Result<Vec<MetricReport>> {
    task_metrics(task)
        .iter()
        .map(|m| Ok(m.score(hyps, refs)?.with_ids(ids)?))
        .collect()
}

/// Model replies sometimes wrap code in a markdown fence.
fn clean_output(text: &str) -> String {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        return body.split("```").next().unwrap_or("").trim().to_string();
    }
    t.to_string()
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<CorpusStore> {
    let mut store = if cfg.corpus.is_empty() {
        CorpusStore::from_records(Vec::new()).0
    } else {
        let (store, report) = CorpusStore::ingest(&cfg.corpus, cfg.format)?;
        info!("ingested {} records ({} malformed, {} duplicates)", report.accepted, report.malformed, report.duplicates);
        store
    };
    if let Some(synth) = &cfg.synthetic {
        store = store.merged(&synthetic_corpus(synth));
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainEntry {
    pub key: DomainKey,
    pub ids: Vec<String>,
}

/// Test-partition domains large enough to split that never occur in the
/// training partition, per configured granularity.
pub fn discover_domains(cfg: &ExperimentConfig, store: &CorpusStore) -> Result<Vec<DomainEntry>> {
    let test: Vec<&CodeRecord> = store.partition(Partition::Test).collect();
    if test.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for &g in &cfg.granularities {
        let index = build_domain_index(test.iter().copied(), g, cfg.min_domain_size)?;
        let index = exclude_seen_domains(&index, store.partition(Partition::Train));
        let cap = if cfg.max_domains == 0 { usize::MAX } else { cfg.max_domains };
        out.extend(index.domains.into_iter().take(cap).map(|(k, ids)| DomainEntry {
            key: DomainKey::new(g, k),
            ids,
        }));
    }
    Ok(out)
}

fn query_field(task: Task) -> EmbedField {
    match task {
        Task::Summarize => EmbedField::Code,
        Task::Generate => EmbedField::Docstring,
    }
}

fn build_client(cfg: &ExperimentConfig) -> Result<ModelClient> {
    let backend: Box<dyn ModelBackend> = match cfg.model.backend {
        ModelBackendKind::Mock => Box::new(MockBackend),
        ModelBackendKind::Http => {
            let ep = cfg.model.endpoint.clone().ok_or_else(|| RunnerError::Config("missing [model.endpoint]".into()))?;
            Box::new(HttpBackend::new(ep))
        }
    };
    let cache = if cfg.model.cache {
        Some(ResponseCache::open(cfg.cache_dir())?)
    } else {
        None
    };
    Ok(ModelClient::new(backend, cache))
}

/// Retrieval sets kept for the cross-domain combined export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RetSet {
    seed: u64,
    task: Task,
    k: usize,
    test_ids: Vec<String>,
    set: AdaptationSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DomainOutcome {
    domain: DomainKey,
    runs: Vec<RunRecord>,
    exports: Vec<ExportSummary>,
    ret_sets: Vec<RetSet>,
}

enum DemoSource {
    /// The same demonstrations for every query, one list per order.
    Shared(Vec<Vec<String>>),
    /// Each query's own neighbors, most similar first.
    PerQuery(BTreeMap<String, Vec<String>>),
}

struct Plan {
    method: Method,
    shots: usize,
    placement: Placement,
    demos: DemoSource,
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    store: &'a CorpusStore,
    run_dir: PathBuf,
    x_train: Vec<String>,
    fingerprint: String,
    code_index: VectorIndex,
    doc_index: VectorIndex,
    code_vecs: HashMap<String, EmbeddingVector>,
    doc_vecs: HashMap<String, EmbeddingVector>,
    client: ModelClient,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig, store: &'a CorpusStore, run_dir: PathBuf) -> Result<Self> {
        let train: Vec<&CodeRecord> = store.partition(Partition::Train).collect();
        if train.is_empty() {
            return Err(RunnerError::Config("corpus has no training partition".into()));
        }
        let provider: Box<dyn EmbeddingProvider> = match cfg.embedding.provider {
            EmbeddingBackend::Hashed => Box::new(HashedTfidf::fit(
                train.iter().flat_map(|r| [r.code.as_str(), r.docstring.as_str()]),
                cfg.embedding.dimension,
            )),
            EmbeddingBackend::Remote => {
                let url = cfg.embedding.url.clone().unwrap_or_default();
                let mut p = RemoteProvider::new(url, cfg.embedding.dimension);
                p.model = cfg.embedding.model.clone();
                Box::new(p)
            }
        };
        let fingerprint = provider.fingerprint();
        let index = |field| -> Result<VectorIndex> {
            let (vectors, skipped) = embed_records(&*provider, train.iter().copied(), field)?;
            if !skipped.is_empty() {
                warn!("{} training records not embedded for {field:?}", skipped.len());
            }
            Ok(VectorIndex::build(vectors, fingerprint.clone())?)
        };
        let code_index = index(EmbedField::Code)?;
        let doc_index = index(EmbedField::Docstring)?;
        let vecs = |field| -> Result<HashMap<String, EmbeddingVector>> {
            let (vectors, _) = embed_records(&*provider, store.partition(Partition::Test), field)?;
            Ok(vectors.into_iter().map(|v| (v.source_id.clone(), v)).collect())
        };
        let code_vecs = vecs(EmbedField::Code)?;
        let doc_vecs = vecs(EmbedField::Docstring)?;
        let mut x_train: Vec<String> = train.iter().map(|r| r.id.clone()).collect();
        x_train.sort();
        Ok(Engine {
            cfg,
            store,
            run_dir,
            x_train,
            fingerprint,
            code_index,
            doc_index,
            code_vecs,
            doc_vecs,
            client: build_client(cfg)?,
        })
    }

    fn index(&self, task: Task) -> &VectorIndex {
        match query_field(task) {
            EmbedField::Code => &self.code_index,
            _ => &self.doc_index,
        }
    }

    fn query_vectors(&self, task: Task, ids: &[String]) -> Vec<EmbeddingVector> {
        let map = match query_field(task) {
            EmbedField::Code => &self.code_vecs,
            _ => &self.doc_vecs,
        };
        ids.iter().filter_map(|id| map.get(id).cloned()).collect()
    }

    fn record(&self, id: &str) -> Result<&'a CodeRecord> {
        self.store.get(id).ok_or_else(|| RunnerError::UnknownRecord(id.to_string()))
    }

    /// The retrieval set for `k`, built once per (domain, seed, task).
    fn tau<'c>(
        &self,
        cache: &'c mut BTreeMap<usize, AdaptationSet>,
        split: &DomainSplit,
        task: Task,
        k: usize,
    ) -> Result<&'c AdaptationSet> {
        if !cache.contains_key(&k) {
            let queries = self.query_vectors(task, &split.test_ids);
            let set = build_adaptation_set(&split.domain.key, &queries, self.index(task), self.store, k)?;
            cache.insert(k, set);
        }
        Ok(&cache[&k])
    }

    fn evaluate_domain(&self, entry: &DomainEntry) -> Result<DomainOutcome> {
        let slug = entry.key.slug();
        let ckpt = self.run_dir.join("checkpoints").join(format!("{slug}.json"));
        if let Ok(bytes) = fs::read(&ckpt) {
            match serde_json::from_slice::<DomainOutcome>(&bytes) {
                Ok(done) => {
                    info!("{}: resumed from checkpoint", entry.key);
                    return Ok(done);
                }
                Err(e) => warn!("{}: ignoring unreadable checkpoint: {e}", entry.key),
            }
        }
        info!("{}: {} records", entry.key, entry.ids.len());
        let mut out = DomainOutcome {
            domain: entry.key.clone(),
            runs: Vec::new(),
            exports: Vec::new(),
            ret_sets: Vec::new(),
        };
        for &seed in &self.cfg.split_seeds {
            let split = split_domain(&entry.key, &entry.ids, seed)?;
            let queries = split
                .test_ids
                .iter()
                .map(|id| self.record(id))
                .collect::<Result<Vec<_>>>()?;
            for &task in &self.cfg.tasks {
                let mut ret = BTreeMap::new();
                for plan in self.plans(&split, task, &mut ret)? {
                    self.execute(&split, task, &queries, &plan, &mut out.runs)?;
                }
                self.exports(&split, task, &mut ret, &mut out.exports)?;
                if self.cfg.has(Method::ExportCombinedK) {
                    for &k in &self.cfg.ret_ks {
                        out.ret_sets.push(RetSet {
                            seed,
                            task,
                            k,
                            test_ids: split.test_ids.clone(),
                            set: self.tau(&mut ret, &split, task, k)?.clone(),
                        });
                    }
                }
            }
        }
        write_atomic(&ckpt, &serde_json::to_vec(&out)?)?;
        Ok(out)
    }

    fn plans(&self, split: &DomainSplit, task: Task, ret: &mut BTreeMap<usize, AdaptationSet>) -> Result<Vec<Plan>> {
        let cfg = self.cfg;
        let key = &split.domain;
        let seed = split.seed;
        let shared = |method, ids: Vec<String>| Plan {
            method,
            shots: ids.len(),
            placement: Placement::AsGiven,
            demos: DemoSource::Shared(shuffle_orders(&ids, cfg.n_orders, seed)),
        };
        let mut plans = Vec::new();
        for &method in &cfg.methods {
            match method {
                Method::ZeroShot => plans.push(Plan {
                    method,
                    shots: 0,
                    placement: Placement::AsGiven,
                    demos: DemoSource::Shared(vec![Vec::new()]),
                }),
                Method::IclRandom => {
                    let ids = random_baseline_set(&self.x_train, cfg.icl_shots, &format!("icl/{key}"), seed)?;
                    plans.push(shared(method, ids));
                }
                Method::IclId => {
                    let ids = SeededRng::new(&format!("icl-id/{key}"), seed).sample(&split.train_ids, cfg.icl_shots);
                    plans.push(shared(method, ids));
                }
                Method::IclRet4 | Method::IclRet8 => {
                    let k = if method == Method::IclRet4 { 4 } else { 8 };
                    let set = self.tau(ret, split, task, k)?;
                    let per_query = set
                        .provenance
                        .iter()
                        .map(|(q, ns)| (q.clone(), ns.iter().map(|n| n.id.clone()).collect()))
                        .collect();
                    plans.push(Plan {
                        method,
                        shots: k,
                        placement: Placement::MostSimilarLast,
                        demos: DemoSource::PerQuery(per_query),
                    });
                }
                Method::IclSampledFromRet => {
                    let set = self.tau(ret, split, task, cfg.sampled_pool_k)?.clone();
                    for &n in &cfg.sampled_demos {
                        match sample_demonstrations(&set, n, seed) {
                            Ok(ids) => plans.push(shared(method, ids)),
                            Err(e) => warn!("{key}: icl_sampled_from_ret with {n} demos skipped: {e}"),
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(plans)
    }

    fn execute(
        &self,
        split: &DomainSplit,
        task: Task,
        queries: &[&CodeRecord],
        plan: &Plan,
        runs: &mut Vec<RunRecord>,
    ) -> Result<()> {
        let mut orders: Vec<(usize, Option<&Vec<String>>)> = match &plan.demos {
            DemoSource::Shared(orders) => orders.iter().map(Some).enumerate().collect(),
            DemoSource::PerQuery(_) => vec![(0, None)],
        };
        if self.cfg.pair_orders && orders.len() > 1 {
            let pos = self.cfg.split_seeds.iter().position(|&s| s == split.seed).unwrap_or(0);
            orders = vec![orders[pos % orders.len()]];
        }
        let ids: Vec<String> = queries.iter().map(|q| q.id.clone()).collect();
        let refs: Vec<String> = queries
            .iter()
            .map(|q| Demonstration::new(q.docstring.clone(), q.code.clone()).answer(task).to_string())
            .collect();
        for &variant in &self.cfg.prompt.variants {
            for &(order, shared) in &orders {
                let answers: Vec<Result<String>> = queries
                    .par_iter()
                    .map(|q| {
                        let demo_ids = match (&plan.demos, shared) {
                            (_, Some(ids)) => ids.clone(),
                            (DemoSource::PerQuery(map), None) => map.get(&q.id).cloned().unwrap_or_default(),
                            (DemoSource::Shared(_), None) => Vec::new(),
                        };
                        self.answer(task, variant, plan.placement, q, &demo_ids)
                    })
                    .collect();
                let mut hyps = Vec::with_capacity(queries.len());
                let mut failures = Vec::new();
                for (q, a) in queries.iter().zip(answers) {
                    match a {
                        Ok(text) => hyps.push(text),
                        Err(e) => {
                            warn!("{}: {} failed: {e}", split.domain, q.id);
                            hyps.push(String::new());
                            failures.push(ExampleFailure {
                                id: q.id.clone(),
                                error: e.to_string(),
                            });
                        }
                    }
                }
                runs.push(RunRecord {
                    granularity: split.domain.granularity,
                    domain: split.domain.key.clone(),
                    method: plan.method.as_str().to_string(),
                    shots: plan.shots,
                    task,
                    seed: split.seed,
                    variant,
                    order,
                    reports: score_outputs(task, &ids, &hyps, &refs)?,
                    failures,
                });
            }
        }
        Ok(())
    }

    fn answer(&self, task: Task, variant: usize, placement: Placement, q: &CodeRecord, demo_ids: &[String]) -> Result<String> {
        let template = prompt::variant(task, self.cfg.prompt.style, variant)?;
        let demos = demo_ids
            .iter()
            .map(|id| self.record(id).map(|r| Demonstration::new(r.docstring.clone(), r.code.clone())))
            .collect::<Result<Vec<_>>>()?;
        let query = Demonstration::new(q.docstring.clone(), q.code.clone());
        let opts = RenderOptions {
            budget: self.cfg.prompt.budget,
            max_demos: self.cfg.prompt.max_demos,
            output_margin: self.cfg.prompt.output_margin,
            placement,
        };
        let p = render_prompt(template, &demos, query.input(task), &opts)?;
        let mut req = CompletionRequest::from_prompt(self.cfg.model.name.clone(), &p);
        req.max_output_tokens = self.cfg.model.max_output_tokens;
        req.temperature = self.cfg.model.temperature;
        req.stop = template.stop_sequences();
        Ok(clean_output(&self.client.complete(&req)?))
    }

    fn exports(
        &self,
        split: &DomainSplit,
        task: Task,
        ret: &mut BTreeMap<usize, AdaptationSet>,
        out: &mut Vec<ExportSummary>,
    ) -> Result<()> {
        let cfg = self.cfg;
        let key = &split.domain;
        let seed = split.seed;
        let test_ids: HashSet<String> = split.test_ids.iter().cloned().collect();
        let slug = key.slug();
        let mut write = |method: Method, k: usize, ids: &[String]| -> Result<()> {
            let spec = ExportSpec {
                granularity: key.granularity,
                origin: &key.key,
                method: method.export_label().unwrap_or(method.as_str()),
                k,
                seed,
                task,
                ids,
                test_ids: &test_ids,
            };
            out.push(export_adaptation_jsonl(&self.run_dir, &slug, &spec, self.store)?);
            Ok(())
        };
        for &method in &cfg.methods {
            match method {
                Method::ExportFtId => {
                    for &n in &cfg.shots {
                        let ids = SeededRng::new(&format!("ft-id/{key}"), seed).sample(&split.train_ids, n);
                        write(method, n, &ids)?;
                    }
                }
                Method::ExportFtRandom => {
                    for &n in &cfg.shots {
                        let ids = random_baseline_set(&self.x_train, n, &format!("ft/{key}"), seed)?;
                        write(method, n, &ids)?;
                    }
                }
                Method::ExportRetK => {
                    for &k in &cfg.ret_ks {
                        let ids = self.tau(ret, split, task, k)?.member_ids.clone();
                        write(method, k, &ids)?;
                    }
                }
                Method::ExportVotek => {
                    let kmax = cfg.ret_ks.iter().copied().max().unwrap_or(0);
                    let pool = self.tau(ret, split, task, kmax)?.member_ids.clone();
                    let candidates = self.index(task).subset(&pool)?;
                    for &k in &cfg.ret_ks {
                        let budget = k * SPLIT_PART_SIZE;
                        if budget >= candidates.len() {
                            warn!("{key}: vote-k budget {budget} >= pool {}, skipped", candidates.len());
                            continue;
                        }
                        let graph_k = DEFAULT_VOTE_GRAPH_K.min(candidates.len() - 1);
                        let ids = fast_vote_k(&candidates, budget, graph_k, DEFAULT_VOTE_RHO)?;
                        write(method, k, &ids)?;
                    }
                }
                Method::ExportIsoscore => {
                    let queries = self.query_vectors(task, &split.test_ids);
                    for &k in &cfg.ret_ks {
                        let budget = k * SPLIT_PART_SIZE;
                        if budget > self.index(task).len() {
                            warn!("{key}: isoscore budget {budget} exceeds the training pool, skipped");
                            continue;
                        }
                        let ids: Vec<String> = select_by_isoscore(&queries, self.index(task), budget)?
                            .into_iter()
                            .map(|(id, _)| id)
                            .collect();
                        write(method, k, &ids)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// One set per (granularity, seed, task, k) pooling every domain's
    /// retrieval set, checked against all of their test ids.
    fn combined_exports(&self, outcomes: &[DomainOutcome]) -> Result<Vec<ExportSummary>> {
        let mut groups: BTreeMap<(Granularity, u64, Task, usize), Vec<&RetSet>> = BTreeMap::new();
        for o in outcomes {
            for r in &o.ret_sets {
                groups.entry((o.domain.granularity, r.seed, r.task, r.k)).or_default().push(r);
            }
        }
        let mut out = Vec::new();
        for ((granularity, seed, task, k), sets) in groups {
            let owned: Vec<AdaptationSet> = sets.iter().map(|r| r.set.clone()).collect();
            let combined = combine_adaptation_sets(&owned, self.store);
            let test_ids: HashSet<String> = sets.iter().flat_map(|r| r.test_ids.iter().cloned()).collect();
            let spec = ExportSpec {
                granularity,
                origin: COMBINED_ORIGIN,
                method: Method::ExportCombinedK.export_label().unwrap_or_default(),
                k,
                seed,
                task,
                ids: &combined.member_ids,
                test_ids: &test_ids,
            };
            out.push(export_adaptation_jsonl(&self.run_dir, COMBINED_ORIGIN, &spec, self.store)?);
        }
        Ok(out)
    }

    /// Code-embedding similarity inside each domain and to the other test
    /// domains of the same granularity.
    fn domain_stats(&self, domains: &[DomainEntry]) -> Result<Vec<DomainStat>> {
        let mut out = Vec::new();
        for &g in &self.cfg.granularities {
            let group: Vec<(&DomainEntry, Vec<EmbeddingVector>)> = domains
                .iter()
                .filter(|d| d.key.granularity == g)
                .map(|d| (d, d.ids.iter().filter_map(|id| self.code_vecs.get(id).cloned()).collect()))
                .collect();
            for (i, (d, vecs)) in group.iter().enumerate() {
                if vecs.len() < 2 {
                    continue;
                }
                let others: Vec<EmbeddingVector> = group
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .flat_map(|(_, (_, v))| v.iter().cloned())
                    .collect();
                out.push(DomainStat {
                    granularity: g,
                    domain: d.key.key.clone(),
                    size: d.ids.len(),
                    similarity: domain_similarity_stats(vecs, &others)?,
                });
            }
        }
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| RunnerError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunnerError::io(path, e))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let store = load_corpus(cfg)?;
    run_with_corpus(cfg, &store)
}

/// Runs every domain (in parallel, resuming from checkpoints) and collects
/// runs, exports and domain statistics. Reports are written separately by
/// [`emit_report`].
pub fn run_with_corpus(cfg: &ExperimentConfig, store: &CorpusStore) -> Result<ExperimentResult> {
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| RunnerError::io(&run_dir, e))?;
    write_atomic(&run_dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    let domains = discover_domains(cfg, store)?;
    info!("{} domains across {} granularities", domains.len(), cfg.granularities.len());
    let engine = Engine::new(cfg, store, run_dir)?;
    let outcomes: Vec<DomainOutcome> = domains
        .par_iter()
        .map(|d| engine.evaluate_domain(d))
        .collect::<Result<_>>()?;
    let mut exports: Vec<ExportSummary> = outcomes.iter().flat_map(|o| o.exports.iter().cloned()).collect();
    exports.extend(engine.combined_exports(&outcomes)?);
    let mut result = ExperimentResult {
        manifest: RunManifest {
            config_hash: cfg.hash(),
            code_version: CODE_VERSION.to_string(),
            prng: PRNG_ID.to_string(),
            embedding: engine.fingerprint.clone(),
            backend: engine.client.backend_id(),
            model: cfg.model.name.clone(),
            max_output_tokens: cfg.model.max_output_tokens,
            temperature: cfg.model.temperature,
            granularities: cfg.granularities.clone(),
            shots: cfg.shots.clone(),
            cache: engine.client.stats(),
        },
        runs: Vec::new(),
        aggregates: Vec::new(),
        domain_stats: engine.domain_stats(&domains)?,
        exports,
    };
    result.merge_runs(outcomes.into_iter().flat_map(|o| o.runs).collect());
    Ok(result)
}

/// One model output for a test example, produced outside this crate
/// (typically by a model fine-tuned on an export).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub id: String,
    pub hypothesis: String,
    pub task: Task,
    pub seed: u64,
    pub granularity: Granularity,
    pub shots: usize,
    #[serde(default)]
    pub method: Option<String>,
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<HypothesisRow>> {
    export::read_jsonl(path)
}

/// Scores external outputs against the test splits the config defines.
/// A domain is scored when any of its test ids has a hypothesis; missing
/// ones count as empty outputs and are listed as failures.
pub fn score_external(
    cfg: &ExperimentConfig,
    store: &CorpusStore,
    rows: &[HypothesisRow],
    default_method: &str,
) -> Result<Vec<RunRecord>> {
    type Group<'r> = BTreeMap<(Granularity, String, usize, Task, u64), HashMap<&'r str, &'r str>>;
    let mut groups: Group<'_> = BTreeMap::new();
    for r in rows {
        let method = r.method.clone().unwrap_or_else(|| default_method.to_string());
        groups
            .entry((r.granularity, method, r.shots, r.task, r.seed))
            .or_default()
            .insert(&r.id, &r.hypothesis);
    }
    let domains = discover_domains(cfg, store)?;
    let mut runs = Vec::new();
    let mut used = 0usize;
    for ((g, method, shots, task, seed), hyps) in &groups {
        for d in domains.iter().filter(|d| d.key.granularity == *g) {
            let split = split_domain(&d.key, &d.ids, *seed)?;
            let present = split.test_ids.iter().filter(|id| hyps.contains_key(id.as_str())).count();
            if present == 0 {
                continue;
            }
            used += present;
            let mut outputs = Vec::new();
            let mut refs = Vec::new();
            let mut failures = Vec::new();
            for id in &split.test_ids {
                let rec = store.get(id).ok_or_else(|| RunnerError::UnknownRecord(id.clone()))?;
                refs.push(Demonstration::new(rec.docstring.clone(), rec.code.clone()).answer(*task).to_string());
                match hyps.get(id.as_str()) {
                    Some(h) => outputs.push(clean_output(h)),
                    None => {
                        outputs.push(String::new());
                        failures.push(ExampleFailure {
                            id: id.clone(),
                            error: "missing hypothesis".into(),
                        });
                    }
                }
            }
            runs.push(RunRecord {
                granularity: *g,
                domain: d.key.key.clone(),
                method: method.clone(),
                shots: *shots,
                task: *task,
                seed: *seed,
                variant: 0,
                order: 0,
                reports: score_outputs(*task, &split.test_ids, &outputs, &refs)?,
                failures,
            });
        }
    }
    if used < rows.len() {
        warn!("{} hypotheses matched no test split", rows.len() - used);
    }
    Ok(runs)
}
