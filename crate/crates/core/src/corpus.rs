//! Corpus ingestion, hierarchical domains and seeded domain splits.
//!
//! Records come from CodeSearchNet-style JSON-Lines files (optionally gzip
//! compressed). Each record belongs to one domain per [`Granularity`]:
//! organization, repository, or the lowest-level folder of its source file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::SeededRng;

/// Records per split part; a domain needs three parts' worth to be split.
pub const SPLIT_PART_SIZE: usize = 32;
pub const DEFAULT_MIN_DOMAIN_SIZE: usize = 3 * SPLIT_PART_SIZE;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("min_size must be at least 1")]
    InvalidMinSize,
    #[error("granularity mismatch: {left} vs {right}")]
    GranularityMismatch {
        left: Granularity,
        right: Granularity,
    },
    #[error("domain {domain} has {size} records, {required} required")]
    DomainTooSmall {
        domain: String,
        size: usize,
        required: usize,
    },
    #[error("unknown granularity `{0}`")]
    UnknownGranularity(String),
    #[error("unknown partition `{0}`")]
    UnknownPartition(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    /// Guesses the partition from a CodeSearchNet file name such as
    /// `javascript_train_3.jsonl.gz`.
    pub fn from_file_name(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        if name.contains("train") {
            Some(Partition::Train)
        } else if name.contains("valid") {
            Some(Partition::Valid)
        } else if name.contains("test") {
            Some(Partition::Test)
        } else {
            None
        }
    }

    fn precedence(self) -> u8 {
        match self {
            Partition::Train => 0,
            Partition::Valid => 1,
            Partition::Test => 2,
        }
    }
}

impl FromStr for Partition {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "valid" | "validation" | "dev" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            other => Err(CorpusError::UnknownPartition(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Org,
    Repo,
    Folder,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Org, Granularity::Repo, Granularity::Folder];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Org => "org",
            Granularity::Repo => "repo",
            Granularity::Folder => "folder",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "org" | "organization" => Ok(Granularity::Org),
            "repo" | "repository" => Ok(Granularity::Repo),
            "folder" => Ok(Granularity::Folder),
            other => Err(CorpusError::UnknownGranularity(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub id: String,
    pub org: String,
    pub repo: String,
    pub folder: String,
    pub path: String,
    pub func_name: String,
    pub code: String,
    pub docstring: String,
    pub code_tokens: Vec<String>,
    pub docstring_tokens: Vec<String>,
    pub partition: Partition,
}

impl CodeRecord {
    /// Builds a record, deriving `id`, `org` and `folder` from the other fields.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        repo: &str,
        path: &str,
        func_name: &str,
        code: &str,
        docstring: &str,
        code_tokens: Vec<String>,
        docstring_tokens: Vec<String>,
        partition: Partition,
    ) -> Self {
        let repo = repo.trim_matches('/').to_string();
        let path = path.trim_start_matches("./").trim_start_matches('/').to_string();
        let code = normalize_newlines(code);
        let docstring = normalize_newlines(docstring);
        let org = repo.split('/').next().unwrap_or_default().to_string();
        let folder = join_folder(&repo, &path);
        let id = record_id(&repo, &path, func_name, &code);
        CodeRecord {
            id,
            org,
            repo,
            folder,
            path,
            func_name: func_name.to_string(),
            code,
            docstring,
            code_tokens,
            docstring_tokens,
            partition,
        }
    }

    /// Key used to detect content duplicates that carry different ids.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.code.as_bytes());
        h.update([0u8]);
        h.update(self.docstring.as_bytes());
        h.finalize().into()
    }
}

/// Deterministic record id: the first 16 bytes of SHA-256 over the
/// identifying fields, hex encoded.
pub fn record_id(repo: &str, path: &str, func_name: &str, code: &str) -> String {
    let mut h = Sha256::new();
    for part in [repo, path, func_name, code] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..16])
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

fn join_folder(repo: &str, path: &str) -> String {
    match path.rfind('/') {
        Some(i) if i > 0 => format!("{}/{}", repo, &path[..i]),
        _ => repo.to_string(),
    }
}

#[derive(Deserialize)]
struct RawRecord {
    repo: Option<String>,
    path: Option<String>,
    func_name: Option<String>,
    code: Option<String>,
    original_string: Option<String>,
    docstring: Option<String>,
    code_tokens: Option<Vec<String>>,
    docstring_tokens: Option<Vec<String>>,
    partition: Option<String>,
}

fn non_empty(value: Option<String>, field: &'static str) -> Result<String> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(CorpusError::MissingField(field)),
    }
}

/// Parses one CodeSearchNet JSON line. `default_partition` applies when the
/// line has no `partition` field (it is usually implied by the file name).
pub fn parse_record(line: &str, default_partition: Option<Partition>) -> Result<CodeRecord> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let repo = non_empty(raw.repo, "repo")?;
    let path = non_empty(raw.path, "path")?;
    let func_name = raw.func_name.unwrap_or_default();
    let code = non_empty(raw.code.or(raw.original_string), "code")?;
    let docstring = non_empty(raw.docstring, "docstring")?;
    let partition = match raw.partition {
        Some(p) => p.parse()?,
        None => default_partition.ok_or(CorpusError::MissingField("partition"))?,
    };
    Ok(CodeRecord::new(
        &repo,
        &path,
        &func_name,
        &code,
        &docstring,
        raw.code_tokens.unwrap_or_default(),
        raw.docstring_tokens.unwrap_or_default(),
        partition,
    ))
}

#[derive(Deserialize)]
struct RawVaultRecord {
    repo: Option<String>,
    path: Option<String>,
    identifier: Option<String>,
    func_name: Option<String>,
    code: Option<String>,
    original_docstring: Option<String>,
    docstring: Option<String>,
    code_tokens: Option<Vec<String>>,
    docstring_tokens: Option<Vec<String>>,
}

/// Adapter for The Vault's function-level schema. Records land in the test
/// partition because that dataset only serves as an out-of-domain test source.
/// The result still needs [`normalize_vault_record`].
pub fn parse_vault_record(line: &str) -> Result<CodeRecord> {
    let raw: RawVaultRecord =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let repo = non_empty(raw.repo, "repo")?;
    let path = non_empty(raw.path, "path")?;
    let func_name = raw.identifier.or(raw.func_name).unwrap_or_default();
    let code = non_empty(raw.code, "code")?;
    let docstring = non_empty(raw.original_docstring.or(raw.docstring), "docstring")?;
    Ok(CodeRecord::new(
        &repo,
        &path,
        &func_name,
        &code,
        &docstring,
        raw.code_tokens.unwrap_or_default(),
        raw.docstring_tokens.unwrap_or_default(),
        Partition::Test,
    ))
}

const PARAM_DOC_MARKERS: [&str; 3] = ["@param", "@returns", ":param"];

/// Cuts a docstring at its first parameter-documentation line, matching the
/// summary-only docstrings of CodeSearchNet. Returns `None` when nothing is
/// left, in which case the record should be dropped.
pub fn normalize_vault_record(record: &CodeRecord) -> Option<CodeRecord> {
    let mut kept = Vec::new();
    for line in record.docstring.lines() {
        let trimmed = line.trim_start();
        if PARAM_DOC_MARKERS.iter().any(|m| trimmed.starts_with(m)) {
            break;
        }
        kept.push(line);
    }
    let docstring = kept.join("\n").trim().to_string();
    if docstring.is_empty() {
        return None;
    }
    let mut out = record.clone();
    if docstring != record.docstring {
        out.docstring_tokens = docstring.split_whitespace().map(str::to_string).collect();
        out.docstring = docstring;
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    CodeSearchNet,
    Vault,
}

/// Outcome of ingesting a set of files.
#[derive(Debug, Default, Clone, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub missing_field: usize,
    /// Same id seen again; the copy in the lower-precedence partition is dropped.
    pub duplicates: usize,
    /// Vault records whose docstring was empty after normalization.
    pub emptied: usize,
}

fn open_lines(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let magic = reader.fill_buf().map_err(|e| CorpusError::io(path, e))?;
    let gz = magic.len() >= 2 && magic[0] == 0x1f && magic[1] == 0x8b;
    if gz {
        Ok(Box::new(BufReader::new(GzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_file(path: &Path, format: SourceFormat) -> Result<(Vec<CodeRecord>, IngestReport)> {
    let default_partition = Partition::from_file_name(path);
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for line in open_lines(path)?.lines() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let parsed = match format {
            SourceFormat::CodeSearchNet => parse_record(&line, default_partition),
            SourceFormat::Vault => parse_vault_record(&line),
        };
        match parsed {
            Ok(rec) => {
                let rec = match format {
                    SourceFormat::Vault => match normalize_vault_record(&rec) {
                        Some(r) => r,
                        None => {
                            report.emptied += 1;
                            continue;
                        }
                    },
                    SourceFormat::CodeSearchNet => rec,
                };
                records.push(rec);
            }
            Err(CorpusError::MalformedRecord(_)) | Err(CorpusError::UnknownPartition(_)) => {
                report.malformed += 1
            }
            Err(CorpusError::MissingField(_)) => report.missing_field += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((records, report))
}

/// An immutable, id-sorted collection of records.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    records: Vec<CodeRecord>,
    by_id: HashMap<String, usize>,
}

impl CorpusStore {
    /// Builds a store, dropping duplicate ids. When the same id appears in
    /// several partitions the train copy wins, then valid, then test.
    pub fn from_records(records: Vec<CodeRecord>) -> (Self, usize) {
        let mut best: BTreeMap<String, CodeRecord> = BTreeMap::new();
        let mut duplicates = 0;
        for rec in records {
            match best.get(&rec.id) {
                Some(existing) => {
                    duplicates += 1;
                    if rec.partition.precedence() < existing.partition.precedence() {
                        best.insert(rec.id.clone(), rec);
                    }
                }
                None => {
                    best.insert(rec.id.clone(), rec);
                }
            }
        }
        let records: Vec<CodeRecord> = best.into_values().collect();
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        (CorpusStore { records, by_id }, duplicates)
    }

    /// Reads and merges every file. Files are parsed in parallel; the result
    /// does not depend on the order of `paths`.
    pub fn ingest(paths: &[PathBuf], format: SourceFormat) -> Result<(Self, IngestReport)> {
        let parsed: Vec<(Vec<CodeRecord>, IngestReport)> = paths
            .par_iter()
            .map(|p| read_file(p, format))
            .collect::<Result<_>>()?;
        let mut report = IngestReport::default();
        let mut all = Vec::new();
        for (records, r) in parsed {
            report.lines += r.lines;
            report.malformed += r.malformed;
            report.missing_field += r.missing_field;
            report.emptied += r.emptied;
            all.extend(records);
        }
        let (store, duplicates) = CorpusStore::from_records(all);
        report.duplicates = duplicates;
        report.accepted = store.len();
        Ok((store, report))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CodeRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[CodeRecord] {
        &self.records
    }

    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &CodeRecord> {
        self.records.iter().filter(move |r| r.partition == partition)
    }

    /// Merges another store into this one under the usual duplicate rule.
    pub fn merged(&self, other: &CorpusStore) -> CorpusStore {
        let mut all = self.records.clone();
        all.extend(other.records.iter().cloned());
        CorpusStore::from_records(all).0
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in open_lines(path)?.lines() {
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(CorpusStore::from_records(records).0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainKey {
    pub granularity: Granularity,
    pub key: String,
}

impl DomainKey {
    pub fn new(granularity: Granularity, key: impl Into<String>) -> Self {
        DomainKey {
            granularity,
            key: key.into(),
        }
    }

    /// File-system friendly rendering, used for checkpoint and export names.
    pub fn slug(&self) -> String {
        let body: String = self
            .key
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        format!("{}__{}", self.granularity, body)
    }
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.granularity, self.key)
    }
}

pub fn derive_domain_key(record: &CodeRecord, granularity: Granularity) -> DomainKey {
    let key = match granularity {
        Granularity::Org => record.org.clone(),
        Granularity::Repo => record.repo.clone(),
        Granularity::Folder => record.folder.clone(),
    };
    DomainKey { granularity, key }
}

/// Domains at one granularity that passed the size filter, each with its
/// id-sorted member list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainIndex {
    pub granularity: Granularity,
    pub min_size: usize,
    pub domains: BTreeMap<String, Vec<String>>,
}

impl DomainIndex {
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = DomainKey> + '_ {
        self.domains
            .keys()
            .map(move |k| DomainKey::new(self.granularity, k.clone()))
    }

    pub fn get(&self, key: &DomainKey) -> Option<&[String]> {
        if key.granularity != self.granularity {
            return None;
        }
        self.domains.get(&key.key).map(Vec::as_slice)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| CorpusError::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

pub fn build_domain_index<'a>(
    records: impl IntoIterator<Item = &'a CodeRecord>,
    granularity: Granularity,
    min_size: usize,
) -> Result<DomainIndex> {
    if min_size == 0 {
        return Err(CorpusError::InvalidMinSize);
    }
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut seen = 0usize;
    for rec in records {
        seen += 1;
        groups
            .entry(derive_domain_key(rec, granularity).key)
            .or_default()
            .push(rec.id.clone());
    }
    if seen == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let domains = groups
        .into_iter()
        .filter_map(|(k, mut ids)| {
            ids.sort();
            ids.dedup();
            (ids.len() >= min_size).then_some((k, ids))
        })
        .collect();
    Ok(DomainIndex {
        granularity,
        min_size,
        domains,
    })
}

/// Drops every test domain whose key also names a training domain.
pub fn exclude_test_overlap(test: &DomainIndex, train: &DomainIndex) -> Result<DomainIndex> {
    if test.granularity != train.granularity {
        return Err(CorpusError::GranularityMismatch {
            left: test.granularity,
            right: train.granularity,
        });
    }
    let domains = test
        .domains
        .iter()
        .filter(|(k, _)| !train.domains.contains_key(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(DomainIndex {
        granularity: test.granularity,
        min_size: test.min_size,
        domains,
    })
}

/// Like [`exclude_test_overlap`] but against every training-partition domain
/// regardless of size, which is what "appears in X_train" means for the
/// unfiltered training side.
pub fn exclude_seen_domains<'a>(
    test: &DomainIndex,
    train_records: impl IntoIterator<Item = &'a CodeRecord>,
) -> DomainIndex {
    let seen: HashSet<String> = train_records
        .into_iter()
        .map(|r| derive_domain_key(r, test.granularity).key)
        .collect();
    DomainIndex {
        granularity: test.granularity,
        min_size: test.min_size,
        domains: test
            .domains
            .iter()
            .filter(|(k, _)| !seen.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSplit {
    pub domain: DomainKey,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DomainSplit {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train_ids.iter().chain(&self.dev_ids).chain(&self.test_ids)
    }
}

/// Draws 32/32/32 ids without replacement from the sorted member list.
/// The remainder of the domain is left unused.
pub fn split_domain(domain: &DomainKey, ids: &[String], seed: u64) -> Result<DomainSplit> {
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let needed = 3 * SPLIT_PART_SIZE;
    if sorted.len() < needed {
        return Err(CorpusError::DomainTooSmall {
            domain: domain.to_string(),
            size: sorted.len(),
            required: needed,
        });
    }
    let mut rng = SeededRng::new(&format!("split/{domain}"), seed);
    let drawn = rng.sample(&sorted, needed);
    let mut parts = drawn.chunks(SPLIT_PART_SIZE).map(<[String]>::to_vec);
    Ok(DomainSplit {
        domain: domain.clone(),
        seed,
        train_ids: parts.next().unwrap_or_default(),
        dev_ids: parts.next().unwrap_or_default(),
        test_ids: parts.next().unwrap_or_default(),
    })
}
