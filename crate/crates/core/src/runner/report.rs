//! Aggregation and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, Result, RunRecord, RunnerError};
use crate::corpus::Granularity;
use crate::prompt::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub granularity: Granularity,
    pub method: String,
    pub shots: usize,
    pub task: Task,
    pub metric: String,
    pub mean: f64,
    /// Number of runs averaged (domains × seeds × variants × orders).
    pub runs: usize,
}

/// Mean corpus score per (granularity, method, shots, task, metric).
pub fn aggregate(runs: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Granularity, &str, usize, Task, &str), (f64, usize)> = BTreeMap::new();
    for run in runs {
        for rep in &run.reports {
            let slot = groups
                .entry((run.granularity, run.method.as_str(), run.shots, run.task, rep.metric.as_str()))
                .or_default();
            slot.0 += rep.corpus;
            slot.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((granularity, method, shots, task, metric), (sum, n))| AggregateRow {
            granularity,
            method: method.to_string(),
            shots,
            task,
            metric: metric.to_string(),
            mean: sum / n as f64,
            runs: n,
        })
        .collect()
}

/// In-context methods get one column per granularity; externally scored
/// methods get a shot sweep.
fn is_prompting(method: &str) -> bool {
    method == "zero_shot" || method.starts_with("icl_")
}

fn primary_metric(task: Task) -> &'static str {
    match task {
        Task::Summarize => "bleu",
        Task::Generate => "codebleu",
    }
}

fn table_header(out: &mut String, columns: &[String]) {
    let _ = writeln!(out, "| method | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |m| format!("{m:.2}"))
}

pub fn render_tables(result: &ExperimentResult) -> String {
    let grans = &result.manifest.granularities;
    let shots = &result.manifest.shots;
    // primary metric first within each task, then the rest by name
    let mut sections: Vec<(Task, String)> = Vec::new();
    for &t in Task::ALL.iter() {
        let primary = primary_metric(t);
        let others: BTreeSet<&str> = result
            .aggregates
            .iter()
            .filter(|a| a.task == t && a.metric != primary)
            .map(|a| a.metric.as_str())
            .collect();
        sections.push((t, primary.to_string()));
        sections.extend(others.into_iter().map(|m| (t, m.to_string())));
    }
    let lookup: BTreeMap<(Granularity, &str, usize, Task, &str), f64> = result
        .aggregates
        .iter()
        .map(|a| ((a.granularity, a.method.as_str(), a.shots, a.task, a.metric.as_str()), a.mean))
        .collect();

    let mut out = String::from("# Results\n");
    for (task, metric) in &sections {
        let rows: Vec<_> = result
            .aggregates
            .iter()
            .filter(|a| a.task == *task && a.metric == *metric)
            .collect();
        let _ = writeln!(out, "\n## {} / {metric}\n", task.as_str());

        let columns: Vec<String> = grans.iter().map(|g| g.to_string()).collect();
        table_header(&mut out, &columns);
        let prompting: BTreeSet<(&str, usize)> = rows
            .iter()
            .filter(|a| is_prompting(&a.method))
            .map(|a| (a.method.as_str(), a.shots))
            .collect();
        for (method, n) in prompting {
            let label = if method == "zero_shot" {
                method.to_string()
            } else {
                format!("{method} ({n})")
            };
            let cells: Vec<String> = grans
                .iter()
                .map(|&g| cell(lookup.get(&(g, method, n, *task, metric.as_str())).copied()))
                .collect();
            let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
        }

        let external: BTreeSet<&str> = rows
            .iter()
            .filter(|a| !is_prompting(&a.method))
            .map(|a| a.method.as_str())
            .collect();
        if external.is_empty() {
            continue;
        }
        out.push('\n');
        let columns: Vec<String> = grans
            .iter()
            .flat_map(|g| shots.iter().map(move |s| format!("{g} {s}")))
            .collect();
        table_header(&mut out, &columns);
        for method in external {
            let cells: Vec<String> = grans
                .iter()
                .flat_map(|&g| shots.iter().map(move |&s| (g, s)))
                .map(|(g, s)| cell(lookup.get(&(g, method, s, *task, metric.as_str())).copied()))
                .collect();
            let _ = writeln!(out, "| {method} | {} |", cells.join(" | "));
        }
    }
    out
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| RunnerError::io(path, e))?;
    Ok(())
}

/// Writes `result.json`, `summary.csv`, `tables.md` and
/// `domain_similarity.csv` into `dir`.
pub fn emit_report(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let json = dir.join("result.json");
    fs::write(&json, serde_json::to_vec_pretty(result)?).map_err(|e| RunnerError::io(&json, e))?;
    write_csv(
        &dir.join("summary.csv"),
        &["granularity", "method", "shots", "task", "metric", "mean", "runs"],
        result.aggregates.iter().map(|a| {
            vec![
                a.granularity.to_string(),
                a.method.clone(),
                a.shots.to_string(),
                a.task.as_str().to_string(),
                a.metric.clone(),
                format!("{:.4}", a.mean),
                a.runs.to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join("domain_similarity.csv"),
        &["domain", "granularity", "size", "intra_avg", "inter_avg"],
        result.domain_stats.iter().map(|d| {
            vec![
                d.domain.clone(),
                d.granularity.to_string(),
                d.size.to_string(),
                format!("{:.6}", d.similarity.intra_avg),
                d.similarity.inter_avg.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ]
        }),
    )?;
    let md = dir.join("tables.md");
    fs::write(&md, render_tables(result)).map_err(|e| RunnerError::io(&md, e))?;
    Ok(())
}

pub fn load_result(dir: &Path) -> Result<ExperimentResult> {
    let path = dir.join("result.json");
    let bytes = fs::read(&path).map_err(|e| RunnerError::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;
    use crate::runner::RunManifest;

    fn run(g: Granularity, domain: &str, method: &str, shots: usize, score: f64) -> RunRecord {
        RunRecord {
            granularity: g,
            domain: domain.into(),
            method: method.into(),
            shots,
            task: Task::Summarize,
            seed: 0,
            variant: 0,
            order: 0,
            reports: vec![MetricReport {
                metric: "bleu".into(),
                per_example: vec![],
                corpus: score,
                components: None,
            }],
            failures: vec![],
        }
    }

    fn result(runs: Vec<RunRecord>) -> ExperimentResult {
        let aggregates = aggregate(&runs);
        ExperimentResult {
            manifest: RunManifest {
                granularities: vec![Granularity::Folder, Granularity::Repo, Granularity::Org],
                shots: vec![8, 16, 32],
                ..RunManifest::default()
            },
            runs,
            aggregates,
            domain_stats: vec![],
            exports: vec![],
        }
    }

    #[test]
    fn single_run_aggregates_to_itself() {
        let rows = aggregate(&[run(Granularity::Repo, "a", "icl_id", 8, 12.5)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 12.5);
        assert_eq!(rows[0].runs, 1);
    }

    #[test]
    fn equal_scores_keep_their_value() {
        let runs: Vec<_> = (0..5).map(|i| run(Granularity::Org, &format!("d{i}"), "icl_id", 8, 7.0)).collect();
        let rows = aggregate(&runs);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 7.0).abs() < 1e-12);
        assert_eq!(rows[0].runs, 5);
    }

    #[test]
    fn grid_is_grouped_by_granularity_and_method() {
        let runs = vec![
            run(Granularity::Repo, "a", "icl_id", 8, 10.0),
            run(Granularity::Repo, "b", "icl_id", 8, 20.0),
            run(Granularity::Repo, "a", "zero_shot", 0, 1.0),
            run(Granularity::Org, "a", "icl_id", 8, 30.0),
            run(Granularity::Org, "b", "icl_id", 8, 50.0),
            run(Granularity::Org, "a", "zero_shot", 0, 3.0),
        ];
        let means: Vec<(Granularity, String, f64)> = aggregate(&runs)
            .into_iter()
            .map(|a| (a.granularity, a.method, a.mean))
            .collect();
        assert_eq!(
            means,
            vec![
                (Granularity::Org, "icl_id".into(), 40.0),
                (Granularity::Org, "zero_shot".into(), 3.0),
                (Granularity::Repo, "icl_id".into(), 15.0),
                (Granularity::Repo, "zero_shot".into(), 1.0),
            ]
        );
    }

    #[test]
    fn empty_result_gives_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&result(vec![]), dir.path()).unwrap();
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary, "granularity,method,shots,task,metric,mean,runs\n");
        let sim = fs::read_to_string(dir.path().join("domain_similarity.csv")).unwrap();
        assert_eq!(sim.lines().count(), 1);
        let md = fs::read_to_string(dir.path().join("tables.md")).unwrap();
        assert!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| method")).count() == 0);
    }

    #[test]
    fn table_column_counts() {
        let r = result(vec![
            run(Granularity::Folder, "a", "icl_id", 8, 10.0),
            run(Granularity::Repo, "a", "ft_id", 16, 20.0),
        ]);
        let md = render_tables(&r);
        let widths: BTreeSet<usize> = md
            .lines()
            .filter(|l| l.starts_with('|'))
            .map(|l| l.matches('|').count() - 1)
            .collect();
        // 1 + G and 1 + 3G columns
        assert_eq!(widths, BTreeSet::from([4, 10]));
    }

    #[test]
    fn tables_match_golden_file() {
        let r = result(vec![
            run(Granularity::Folder, "a", "zero_shot", 0, 0.0),
            run(Granularity::Folder, "a", "icl_id", 8, 10.0),
            run(Granularity::Folder, "b", "icl_id", 8, 11.0),
            run(Granularity::Org, "a", "icl_ret4", 4, 31.25),
            run(Granularity::Repo, "a", "ft_id", 16, 20.0),
            run(Granularity::Org, "a", "ft_id", 32, 22.5),
            run(Granularity::Org, "a", "ft_random", 8, 5.0),
        ]);
        let golden = include_str!("../../tests/fixtures/tables_golden.md");
        assert_eq!(render_tables(&r), golden);
    }
}
