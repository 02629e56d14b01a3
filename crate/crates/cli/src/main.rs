use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use driftbench::corpus::{
    build_domain_index, exclude_seen_domains, split_domain, CorpusStore, DomainIndex, DomainKey, DomainSplit,
    Granularity, Partition, SourceFormat, DEFAULT_MIN_DOMAIN_SIZE,
};
use driftbench::embed::{embed_records, EmbedField, EmbeddingVector, HashedTfidf, VectorIndex, DEFAULT_DIMENSION};
use driftbench::jsparse;
use driftbench::metrics::Metric;
use driftbench::prompt::{self, render_prompt, shuffle_orders, Demonstration, RenderOptions, Style, Task};
use driftbench::runner::{
    self, emit_report, load_result, ExperimentConfig, ExperimentResult, RunManifest,
};
use driftbench::select::{
    build_adaptation_set, combine_adaptation_sets, fast_vote_k, select_by_isoscore, AdaptationSet,
    DEFAULT_VOTE_GRAPH_K, DEFAULT_VOTE_RHO,
};

#[derive(Parser)]
#[command(name = "driftbench", version, about = "Domain-shift evaluation for code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Codesearchnet,
    Vault,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dump {
    Tree,
    Subtrees,
    Dataflow,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Code,
    Docstring,
}

impl From<Field> for EmbedField {
    fn from(f: Field) -> Self {
        match f {
            Field::Code => EmbedField::Code,
            Field::Docstring => EmbedField::Docstring,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read CodeSearchNet-style JSONL(.gz) files into a record store.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "codesearchnet")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group one partition of a store into domains.
    Domains {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        granularity: Granularity,
        #[arg(long, default_value_t = DEFAULT_MIN_DOMAIN_SIZE)]
        min_size: usize,
        #[arg(long, default_value = "test")]
        partition: Partition,
        /// Drop domains that also occur in the training partition.
        #[arg(long)]
        exclude_train: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded 32/32/32 split of one domain.
    Split {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k nearest training examples for every test id of a split.
    Retrieve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "code")]
        field: Field,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Union of adaptation sets, deduplicated.
    Combine {
        #[arg(long)]
        store: PathBuf,
        #[arg(required = true)]
        sets: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training examples that keep the test cloud most isotropic.
    SelectIsoscore {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value = "code")]
        field: Field,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fast vote-k over the members of an adaptation set.
    SelectVotek {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_VOTE_GRAPH_K)]
        graph_k: usize,
        #[arg(long, value_enum, default_value = "code")]
        field: Field,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse JavaScript and print the tree, subtree shapes or dataflow edges.
    Parse {
        #[arg(long, value_enum, default_value = "tree")]
        dump: Dump,
        /// Source file; stdin when absent.
        file: Option<PathBuf>,
    },
    /// Score aligned hypothesis and reference JSONL files.
    Eval {
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Print a rendered prompt.
    Prompt {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "completion")]
        style: Style,
        #[arg(long, default_value_t = 0)]
        variant: usize,
        /// JSON array of record ids, or an adaptation set file.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        query_id: String,
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rewrite the reports of a finished run from its result.json.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run only the export methods of a config.
    Export {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score externally produced outputs and merge them into the run.
    ScoreExternal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Method label for rows that carry none.
        #[arg(long, default_value = "external")]
        method: String,
    },
}

fn write_json(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_store(path: &Path) -> Result<CorpusStore> {
    CorpusStore::read_jsonl(path).with_context(|| format!("reading store {}", path.display()))
}

/// Hashed TF-IDF fitted on the training partition, and the training index.
fn train_index(store: &CorpusStore, field: EmbedField) -> Result<(HashedTfidf, VectorIndex)> {
    let train: Vec<_> = store.partition(Partition::Train).collect();
    if train.is_empty() {
        bail!("store has no training partition");
    }
    let provider = HashedTfidf::fit(
        train.iter().flat_map(|r| [r.code.as_str(), r.docstring.as_str()]),
        DEFAULT_DIMENSION,
    );
    let (vectors, _) = embed_records(&provider, train.iter().copied(), field)?;
    let fingerprint = driftbench::embed::EmbeddingProvider::fingerprint(&provider);
    Ok((provider, VectorIndex::build(vectors, fingerprint)?))
}

fn split_queries(
    store: &CorpusStore,
    provider: &HashedTfidf,
    split: &DomainSplit,
    field: EmbedField,
) -> Result<Vec<EmbeddingVector>> {
    let records = split
        .test_ids
        .iter()
        .map(|id| store.get(id).with_context(|| format!("unknown id {id}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(embed_records(provider, records, field)?.0)
}

/// A line is either a JSON string or an object with an `id` and one text field.
fn read_texts(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let (id, t) = match &v {
            Value::String(s) => (ids.len().to_string(), s.clone()),
            Value::Object(m) => {
                let t = ["hypothesis", "reference", "text", "target"]
                    .iter()
                    .find_map(|k| m.get(*k).and_then(Value::as_str))
                    .with_context(|| format!("{}:{}: no text field", path.display(), i + 1))?;
                let id = m.get("id").and_then(Value::as_str).map_or_else(|| ids.len().to_string(), str::to_string);
                (id, t.to_string())
            }
            _ => bail!("{}:{}: expected a string or an object", path.display(), i + 1),
        };
        ids.push(id);
        texts.push(t);
    }
    Ok((ids, texts))
}

fn demo_ids(path: &Path) -> Result<Vec<String>> {
    let v: Value = read_json(path)?;
    if let Ok(ids) = serde_json::from_value::<Vec<String>>(v.clone()) {
        return Ok(ids);
    }
    Ok(serde_json::from_value::<AdaptationSet>(v)
        .context("demos must be a JSON array of ids or an adaptation set")?
        .member_ids)
}

fn run_and_report(cfg: &ExperimentConfig) -> Result<()> {
    let result = runner::run_experiment(cfg)?;
    let dir = cfg.run_dir();
    emit_report(&result, &dir)?;
    let failures: usize = result.runs.iter().map(|r| r.failures.len()).sum();
    eprintln!(
        "{} runs, {} exports, {failures} failed examples, cache {} hits / {} misses",
        result.runs.len(),
        result.exports.len(),
        result.manifest.cache.hits,
        result.manifest.cache.misses
    );
    println!("{}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { inputs, format, out } => {
            let format = match format {
                Format::Codesearchnet => SourceFormat::CodeSearchNet,
                Format::Vault => SourceFormat::Vault,
            };
            let (store, report) = CorpusStore::ingest(&inputs, format)?;
            store.write_jsonl(&out)?;
            write_json(None, &report)?;
        }
        Command::Domains {
            store,
            granularity,
            min_size,
            partition,
            exclude_train,
            out,
        } => {
            let store = load_store(&store)?;
            let mut index = build_domain_index(store.partition(partition), granularity, min_size)?;
            if exclude_train {
                index = exclude_seen_domains(&index, store.partition(Partition::Train));
            }
            eprintln!("{} domains", index.len());
            match out {
                Some(p) => index.save(&p)?,
                None => write_json(None, &index)?,
            }
        }
        Command::Split { index, domain, seed, out } => {
            let index = DomainIndex::load(&index)?;
            let key = DomainKey::new(index.granularity, domain);
            let ids = index.get(&key).with_context(|| format!("no domain {key} in index"))?;
            write_json(out.as_deref(), &split_domain(&key, ids, seed)?)?;
        }
        Command::Retrieve {
            store,
            split,
            k,
            field,
            out,
        } => {
            let store = load_store(&store)?;
            let split: DomainSplit = read_json(&split)?;
            let (provider, index) = train_index(&store, field.into())?;
            let queries = split_queries(&store, &provider, &split, field.into())?;
            let set = build_adaptation_set(&split.domain.key, &queries, &index, &store, k)?;
            write_json(out.as_deref(), &set)?;
        }
        Command::Combine { store, sets, out } => {
            let store = load_store(&store)?;
            let sets = sets.iter().map(|p| read_json(p)).collect::<Result<Vec<AdaptationSet>>>()?;
            write_json(out.as_deref(), &combine_adaptation_sets(&sets, &store))?;
        }
        Command::SelectIsoscore {
            store,
            split,
            budget,
            field,
            out,
        } => {
            let store = load_store(&store)?;
            let split: DomainSplit = read_json(&split)?;
            let (provider, index) = train_index(&store, field.into())?;
            let queries = split_queries(&store, &provider, &split, field.into())?;
            write_json(out.as_deref(), &select_by_isoscore(&queries, &index, budget)?)?;
        }
        Command::SelectVotek {
            store,
            set,
            budget,
            graph_k,
            field,
            out,
        } => {
            let store = load_store(&store)?;
            let set: AdaptationSet = read_json(&set)?;
            let (_, index) = train_index(&store, field.into())?;
            let pool = index.subset(&set.member_ids)?;
            let graph_k = graph_k.min(pool.len().saturating_sub(1));
            write_json(out.as_deref(), &fast_vote_k(&pool, budget, graph_k, DEFAULT_VOTE_RHO)?)?;
        }
        Command::Parse { dump, file } => {
            let src = match file {
                Some(p) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let tree = jsparse::parse(&src);
            match dump {
                Dump::Tree => write_json(None, &tree)?,
                Dump::Subtrees => write_json(None, &jsparse::subtree_multiset(&tree, 3))?,
                Dump::Dataflow => write_json(None, &jsparse::dataflow_edges(&tree))?,
            }
        }
        Command::Eval { metric, hyp, reference } => {
            let (ids, hyps) = read_texts(&hyp)?;
            let (_, refs) = read_texts(&reference)?;
            write_json(None, &metric.score(&hyps, &refs)?.with_ids(&ids)?)?;
        }
        Command::Prompt {
            store,
            task,
            style,
            variant,
            demos,
            query_id,
            order,
            seed,
        } => {
            let store = load_store(&store)?;
            let ids = match demos {
                Some(p) => demo_ids(&p)?,
                None => Vec::new(),
            };
            let ordered = shuffle_orders(&ids, order + 1, seed).pop().unwrap_or_default();
            let demos = ordered
                .iter()
                .map(|id| {
                    let r = store.get(id).with_context(|| format!("unknown id {id}"))?;
                    Ok(Demonstration::new(r.docstring.clone(), r.code.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let q = store.get(&query_id).with_context(|| format!("unknown id {query_id}"))?;
            let query = Demonstration::new(q.docstring.clone(), q.code.clone());
            let template = prompt::variant(task, style, variant)?;
            let p = render_prompt(template, &demos, query.input(task), &RenderOptions::default())?;
            if let Some(system) = &p.system_message {
                println!("[system]\n{system}\n[user]");
            }
            println!("{}", p.rendered);
            eprintln!("{} demonstrations, ~{} tokens", p.demonstrations.len(), p.token_estimate);
        }
        Command::Run { config } => {
            run_and_report(&ExperimentConfig::load(&config)?)?;
        }
        Command::Report { run_dir, out } => {
            let result = load_result(&run_dir)?;
            emit_report(&result, out.as_deref().unwrap_or(&run_dir))?;
        }
        Command::Export { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.methods.retain(|m| m.is_export());
            if cfg.methods.is_empty() {
                bail!("config lists no export methods");
            }
            run_and_report(&cfg)?;
        }
        Command::ScoreExternal { config, hyp, method } => {
            let cfg = ExperimentConfig::load(&config)?;
            let store = runner::load_corpus(&cfg)?;
            let rows = runner::read_hypotheses(&hyp)?;
            let runs = runner::score_external(&cfg, &store, &rows, &method)?;
            eprintln!("scored {} runs", runs.len());
            let dir = cfg.run_dir();
            let mut result = load_result(&dir).unwrap_or_else(|_| ExperimentResult {
                manifest: RunManifest {
                    config_hash: cfg.hash(),
                    code_version: runner::CODE_VERSION.to_string(),
                    granularities: cfg.granularities.clone(),
                    shots: cfg.shots.clone(),
                    ..RunManifest::default()
                },
                runs: Vec::new(),
                aggregates: Vec::new(),
                domain_stats: Vec::new(),
                exports: Vec::new(),
            });
            result.merge_runs(runs);
            emit_report(&result, &dir)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}
