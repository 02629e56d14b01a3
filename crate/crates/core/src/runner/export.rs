//! JSONL adaptation sets for fine-tuning.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, RunnerError};
use crate::corpus::{CorpusStore, Granularity};
use crate::prompt::{Demonstration, Task};
use crate::select::{check_disjoint, SelectError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub id: String,
    pub input: String,
    pub target: String,
    /// Domain the set was built for, or `combined`.
    pub origin: String,
    pub method: String,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub granularity: Granularity,
    pub origin: String,
    pub method: String,
    pub k: usize,
    pub seed: u64,
    pub task: Task,
    pub lines: usize,
}

/// What to write: the member ids of one adaptation set and the test ids it
/// must stay clear of.
pub struct ExportSpec<'a> {
    pub granularity: Granularity,
    pub origin: &'a str,
    pub method: &'a str,
    pub k: usize,
    pub seed: u64,
    pub task: Task,
    pub ids: &'a [String],
    pub test_ids: &'a HashSet<String>,
}

impl ExportSpec<'_> {
    /// `exports/<granularity>/<origin slug>/seed<s>/<method>_<k>_<task>.jsonl`
    pub fn relative_path(&self, origin_slug: &str) -> String {
        format!(
            "exports/{}/{}/seed{}/{}_{}_{}.jsonl",
            self.granularity,
            origin_slug,
            self.seed,
            self.method,
            self.k,
            self.task.as_str()
        )
    }
}

/// Writes one export after checking it shares no id with its test queries.
pub fn export_adaptation_jsonl(
    run_dir: &Path,
    origin_slug: &str,
    spec: &ExportSpec<'_>,
    store: &CorpusStore,
) -> Result<ExportSummary> {
    let rel = spec.relative_path(origin_slug);
    check_disjoint(spec.ids, spec.test_ids).map_err(|e| match e {
        SelectError::Leakage(count) => RunnerError::Leakage {
            path: rel.clone(),
            count,
        },
        other => other.into(),
    })?;
    let path = run_dir.join(&rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let file = File::create(&tmp).map_err(|e| RunnerError::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    for id in spec.ids {
        let rec = store.get(id).ok_or_else(|| RunnerError::UnknownRecord(id.clone()))?;
        let d = Demonstration::new(rec.docstring.clone(), rec.code.clone());
        let row = ExportRow {
            id: id.clone(),
            input: d.input(spec.task).to_string(),
            target: d.answer(spec.task).to_string(),
            origin: spec.origin.to_string(),
            method: spec.method.to_string(),
            k: spec.k,
            seed: spec.seed,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| RunnerError::io(&tmp, e))?;
    }
    w.flush().map_err(|e| RunnerError::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, &path).map_err(|e| RunnerError::io(&path, e))?;
    Ok(ExportSummary {
        path: rel,
        granularity: spec.granularity,
        origin: spec.origin.to_string(),
        method: spec.method.to_string(),
        k: spec.k,
        seed: spec.seed,
        task: spec.task,
        lines: spec.ids.len(),
    })
}

pub fn import_adaptation_jsonl(path: &Path) -> Result<Vec<ExportRow>> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| RunnerError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunnerError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| RunnerError::BadRow {
            path: PathBuf::from(path),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CodeRecord, Partition};

    fn store(n: usize) -> CorpusStore {
        let recs = (0..n)
            .map(|i| {
                let code = format!("function f{i}() {{ return {i}; }}");
                CodeRecord::new("o/r", "a.js", &format!("f{i}"), &code, &format!("returns {i}"), vec![], vec![], Partition::Train)
            })
            .collect();
        CorpusStore::from_records(recs).0
    }

    #[test]
    fn round_trip_and_task_fields() {
        let s = store(5);
        let ids: Vec<String> = s.records().iter().map(|r| r.id.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let empty = HashSet::new();
        let spec = ExportSpec {
            granularity: Granularity::Repo,
            origin: "o/r",
            method: "ret",
            k: 4,
            seed: 1,
            task: Task::Summarize,
            ids: &ids,
            test_ids: &empty,
        };
        let summary = export_adaptation_jsonl(dir.path(), "repo__o_r", &spec, &s).unwrap();
        assert_eq!(summary.path, "exports/repo/repo__o_r/seed1/ret_4_summarize.jsonl");
        let rows = import_adaptation_jsonl(&dir.path().join(&summary.path)).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), ids);
        let first = s.get(&ids[0]).unwrap();
        assert_eq!(rows[0].input, first.code);
        assert_eq!(rows[0].target, first.docstring);
    }

    #[test]
    fn leakage_is_refused() {
        let s = store(3);
        let ids: Vec<String> = s.records().iter().map(|r| r.id.clone()).collect();
        let test: HashSet<String> = [ids[1].clone()].into();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExportSpec {
            granularity: Granularity::Org,
            origin: "o",
            method: "ft_id",
            k: 3,
            seed: 0,
            task: Task::Generate,
            ids: &ids,
            test_ids: &test,
        };
        match export_adaptation_jsonl(dir.path(), "org__o", &spec, &s) {
            Err(RunnerError::Leakage { count, .. }) => assert_eq!(count, 1),
            other => panic!("{other:?}"),
        }
        assert!(!dir.path().join(spec.relative_path("org__o")).exists());
    }
}
