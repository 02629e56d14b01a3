//! BLEU-4, chrF, ROUGE-L and CodeBLEU.
//!
//! Every metric returns a [`MetricReport`] on the 0–100 scale. Empty
//! candidates score 0 on every metric.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsparse::{self, DEFAULT_SUBTREE_DEPTH};

/// JavaScript keywords used by the weighted n-gram component.
pub const JS_KEYWORDS: &[&str] = &[
    "await", "break", "case", "catch", "class", "const", "continue", "debugger", "default",
    "delete", "do", "else", "enum", "export", "extends", "false", "finally", "for", "function",
    "if", "implements", "import", "in", "instanceof", "interface", "let", "new", "null", "package",
    "private", "protected", "public", "return", "super", "switch", "static", "this", "throw",
    "try", "true", "typeof", "var", "void", "while", "with", "yield",
];

pub const MAX_NGRAM: usize = 4;
pub const KEYWORD_WEIGHT: f64 = 5.0;
pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf,
    Rougel,
    Codebleu,
}

impl std::str::FromStr for Metric {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" | "bleu4" | "bleu-4" => Ok(Metric::Bleu),
            "chrf" => Ok(Metric::Chrf),
            "rougel" | "rouge-l" | "rouge_l" => Ok(Metric::Rougel),
            "codebleu" => Ok(Metric::Codebleu),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

impl Metric {
    pub fn score<S: AsRef<str> + Sync>(self, candidates: &[S], references: &[S]) -> Result<MetricReport> {
        match self {
            Metric::Bleu => bleu4(candidates, references),
            Metric::Chrf => chrf(candidates, references, CHRF_ORDER, CHRF_BETA),
            Metric::Rougel => rouge_l(candidates, references, ROUGE_BETA),
            Metric::Codebleu => codebleu(candidates, references),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_example: Vec<(String, f64)>,
    pub corpus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<BTreeMap<String, f64>>,
}

impl MetricReport {
    fn new(metric: &str, scores: Vec<f64>, corpus: f64) -> Self {
        MetricReport {
            metric: metric.to_string(),
            per_example: scores.into_iter().enumerate().map(|(i, s)| (i.to_string(), s)).collect(),
            corpus,
            components: None,
        }
    }

    /// Replaces the positional ids with caller-supplied ones.
    pub fn with_ids<S: AsRef<str>>(mut self, ids: &[S]) -> Result<Self> {
        check_lengths(self.per_example.len(), ids.len())?;
        for (slot, id) in self.per_example.iter_mut().zip(ids) {
            slot.0 = id.as_ref().to_string();
        }
        Ok(self)
    }
}

fn check_lengths(c: usize, r: usize) -> Result<()> {
    if c != r {
        return Err(MetricError::LengthMismatch {
            candidates: c,
            references: r,
        });
    }
    Ok(())
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Lowercases and splits on whitespace and at every punctuation character.
pub fn text_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn counts<T: Hash + Eq + Clone>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn ngrams<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    if tokens.len() < n {
        return HashMap::new();
    }
    counts(tokens.windows(n))
}

/// Sufficient statistics of BLEU for one or more sentence pairs. Counts are
/// real-valued so keyword weighting can reuse them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [f64; MAX_NGRAM],
    pub totals: [f64; MAX_NGRAM],
    pub candidate_len: f64,
    pub reference_len: f64,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_NGRAM {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Geometric mean of clipped precisions times the brevity penalty, on
    /// 0–100. Zero-match orders are smoothed by exponential decay; orders
    /// with no candidate n-grams are left out of the mean. No match at any
    /// order scores 0.
    pub fn score(&self) -> f64 {
        if self.matches.iter().all(|&m| m <= 0.0) {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut order = 0;
        let mut decay = 1.0;
        for n in 0..MAX_NGRAM {
            if self.totals[n] <= 0.0 {
                break;
            }
            order = n + 1;
            let p = if self.matches[n] > 0.0 {
                100.0 * self.matches[n] / self.totals[n]
            } else {
                decay *= 2.0;
                100.0 / (decay * self.totals[n])
            };
            log_sum += p.ln();
        }
        if order == 0 || self.candidate_len <= 0.0 {
            return 0.0;
        }
        let bp = if self.candidate_len < self.reference_len {
            (1.0 - self.reference_len / self.candidate_len).exp()
        } else {
            1.0
        };
        (bp * (log_sum / order as f64).exp()).min(100.0)
    }
}

fn bleu_stats_weighted<T, W>(candidate: &[T], reference: &[T], weight: W) -> BleuStats
where
    T: Hash + Eq + Clone,
    W: Fn(&[T]) -> f64,
{
    let mut s = BleuStats {
        candidate_len: candidate.len() as f64,
        reference_len: reference.len() as f64,
        ..Default::default()
    };
    for n in 1..=MAX_NGRAM {
        let hyp = ngrams(candidate, n);
        let refs = ngrams(reference, n);
        for (g, &c) in &hyp {
            let w = weight(g);
            s.totals[n - 1] += w * c as f64;
            s.matches[n - 1] += w * c.min(refs.get(g).copied().unwrap_or(0)) as f64;
        }
    }
    s
}

pub fn bleu_stats<T: Hash + Eq + Clone>(candidate: &[T], reference: &[T]) -> BleuStats {
    bleu_stats_weighted(candidate, reference, |_| 1.0)
}

/// Corpus BLEU-4 over text tokens; per-example values are sentence BLEU.
pub fn bleu4<S: AsRef<str> + Sync>(candidates: &[S], references: &[S]) -> Result<MetricReport> {
    check_lengths(candidates.len(), references.len())?;
    let stats: Vec<BleuStats> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| bleu_stats(&text_tokens(c.as_ref()), &text_tokens(r.as_ref())))
        .collect();
    let mut total = BleuStats::default();
    for s in &stats {
        total.add(s);
    }
    let per: Vec<f64> = stats.iter().map(BleuStats::score).collect();
    Ok(MetricReport::new("bleu", per, total.score()))
}

/// Sentence chrF: character n-gram precision and recall averaged over the
/// orders present in both strings, combined as F_β. Whitespace is ignored.
pub fn chrf_sentence(candidate: &str, reference: &str, order: usize, beta: f64) -> f64 {
    let hyp: Vec<char> = candidate.chars().filter(|c| !c.is_whitespace()).collect();
    let refr: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let (mut p_sum, mut r_sum, mut effective) = (0.0, 0.0, 0usize);
    for n in 1..=order {
        let h = ngrams(&hyp, n);
        let r = ngrams(&refr, n);
        let h_total: usize = h.values().sum();
        let r_total: usize = r.values().sum();
        if h_total == 0 || r_total == 0 {
            continue;
        }
        let m: usize = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        p_sum += m as f64 / h_total as f64;
        r_sum += m as f64 / r_total as f64;
        effective += 1;
    }
    if effective == 0 {
        return 0.0;
    }
    let (p, r) = (p_sum / effective as f64, r_sum / effective as f64);
    let b2 = beta * beta;
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

pub fn chrf<S: AsRef<str> + Sync>(candidates: &[S], references: &[S], order: usize, beta: f64) -> Result<MetricReport> {
    check_lengths(candidates.len(), references.len())?;
    let per: Vec<f64> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| chrf_sentence(c.as_ref(), r.as_ref(), order, beta))
        .collect();
    let corpus = mean(&per);
    Ok(MetricReport::new("chrf", per, corpus))
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure of two token lists on 0–100.
pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = beta * beta;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l<S: AsRef<str> + Sync>(candidates: &[S], references: &[S], beta: f64) -> Result<MetricReport> {
    check_lengths(candidates.len(), references.len())?;
    let per: Vec<f64> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| rouge_l_tokens(&text_tokens(c.as_ref()), &text_tokens(r.as_ref()), beta))
        .collect();
    let corpus = mean(&per);
    Ok(MetricReport::new("rougel", per, corpus))
}

/// Keyword-weighted BLEU on 0–1: every n-gram that contains a keyword counts
/// `KEYWORD_WEIGHT` times in both the clipped matches and the totals.
pub fn weighted_ngram_match<S: AsRef<str>>(candidate: &[S], reference: &[S], keywords: &[&str]) -> f64 {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let stats = bleu_stats_weighted(&cand, &refr, |g: &[&str]| {
        if g.iter().any(|t| keywords.contains(t)) {
            KEYWORD_WEIGHT
        } else {
            1.0
        }
    });
    stats.score() / 100.0
}

/// Fraction of the reference's subtree shapes also present in the candidate,
/// or `None` when the reference does not parse.
pub fn syntax_match(candidate_src: &str, reference_src: &str) -> Option<f64> {
    let reference = jsparse::parse(reference_src);
    if !reference.parse_ok {
        return None;
    }
    let want = jsparse::subtree_multiset(&reference, DEFAULT_SUBTREE_DEPTH);
    let have = jsparse::subtree_multiset(&jsparse::parse(candidate_src), DEFAULT_SUBTREE_DEPTH);
    let total: usize = want.values().sum();
    let hit: usize = want.iter().map(|(k, &c)| c.min(have.get(k).copied().unwrap_or(0))).sum();
    Some(hit as f64 / total as f64)
}

/// Fraction of the reference's def-use edges reproduced by the candidate, or
/// `None` when the reference has no edges. Edges are compared by variable
/// order and relative site order, not absolute positions.
pub fn dataflow_match(candidate_src: &str, reference_src: &str) -> Option<f64> {
    let want = jsparse::dataflow_signature(&jsparse::parse(reference_src));
    if want.is_empty() {
        return None;
    }
    let have = counts(jsparse::dataflow_signature(&jsparse::parse(candidate_src)));
    let want_counts = counts(want.iter().copied());
    let hit: usize = want_counts.iter().map(|(k, &c)| c.min(have.get(k).copied().unwrap_or(0))).sum();
    Some(hit as f64 / want.len() as f64)
}

/// One CodeBLEU score with its components on 0–1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: Option<f64>,
    pub dataflow: Option<f64>,
    /// Weighted component sum, times 100.
    pub composite: f64,
}

impl CodeBleuScore {
    /// Effective weights of (ngram, weighted_ngram, syntax, dataflow) after
    /// dropping undefined components.
    pub fn weights(&self) -> [f64; 4] {
        let present = [true, true, self.syntax.is_some(), self.dataflow.is_some()];
        let share = 1.0 / present.iter().filter(|p| **p).count() as f64;
        present.map(|p| if p { share } else { 0.0 })
    }

    fn values(&self) -> [f64; 4] {
        [
            self.ngram,
            self.weighted_ngram,
            self.syntax.unwrap_or(0.0),
            self.dataflow.unwrap_or(0.0),
        ]
    }
}

pub fn codebleu_sentence(candidate: &str, reference: &str) -> CodeBleuScore {
    if is_blank(candidate) {
        let syntax = jsparse::parse(reference).parse_ok.then_some(0.0);
        let dataflow = (!jsparse::dataflow_signature(&jsparse::parse(reference)).is_empty()).then_some(0.0);
        return CodeBleuScore {
            ngram: 0.0,
            weighted_ngram: 0.0,
            syntax,
            dataflow,
            composite: 0.0,
        };
    }
    let cand = jsparse::token_texts(candidate);
    let refr = jsparse::token_texts(reference);
    let mut s = CodeBleuScore {
        ngram: bleu_stats(&cand, &refr).score() / 100.0,
        weighted_ngram: weighted_ngram_match(&cand, &refr, JS_KEYWORDS),
        syntax: syntax_match(candidate, reference),
        dataflow: dataflow_match(candidate, reference),
        composite: 0.0,
    };
    s.composite = 100.0 * s.weights().iter().zip(s.values()).map(|(w, v)| w * v).sum::<f64>();
    s
}

/// Per-example CodeBLEU, averaged. The reported components are means over
/// the examples where each one is defined, on 0–1.
pub fn codebleu<S: AsRef<str> + Sync>(candidates: &[S], references: &[S]) -> Result<MetricReport> {
    check_lengths(candidates.len(), references.len())?;
    let scores: Vec<CodeBleuScore> = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| codebleu_sentence(c.as_ref(), r.as_ref()))
        .collect();
    let per: Vec<f64> = scores.iter().map(|s| s.composite).collect();
    let corpus = mean(&per);
    let mut report = MetricReport::new("codebleu", per, corpus);
    let pick = |f: fn(&CodeBleuScore) -> Option<f64>| mean(&scores.iter().filter_map(f).collect::<Vec<_>>());
    report.components = Some(BTreeMap::from([
        ("ngram".to_string(), pick(|s| Some(s.ngram))),
        ("weighted_ngram".to_string(), pick(|s| Some(s.weighted_ngram))),
        ("syntax".to_string(), pick(|s| s.syntax)),
        ("dataflow".to_string(), pick(|s| s.dataflow)),
    ]));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_table_has_46_unique_entries() {
        let set: std::collections::BTreeSet<_> = JS_KEYWORDS.iter().collect();
        assert_eq!(JS_KEYWORDS.len(), 46);
        assert_eq!(set.len(), 46);
    }

    #[test]
    fn text_tokenizer_splits_punctuation() {
        assert_eq!(text_tokens("Returns a.b(C)!"), ["returns", "a", ".", "b", "(", "c", ")", "!"]);
    }

    #[test]
    fn bleu_identity_and_clipping() {
        let r = bleu4(&["the cat sat on the mat"], &["the cat sat on the mat"]).unwrap();
        assert!((r.corpus - 100.0).abs() < 1e-9);
        let s = bleu_stats(&text_tokens("the the the the"), &text_tokens("the cat"));
        assert_eq!(s.matches[0] / s.totals[0], 0.25);
        assert!(bleu4(&["a"], &["a", "b"]).is_err());
        assert_eq!(bleu4(&[""], &["x y"]).unwrap().corpus, 0.0);
    }

    #[test]
    fn chrf_hand_pair() {
        // orders 1..4 only: p = r = (3/4 + 2/3 + 1/2 + 0) / 4
        let expected = 100.0 * (0.75 + 2.0 / 3.0 + 0.5) / 4.0;
        assert!((chrf_sentence("abcd", "abce", 6, 2.0) - expected).abs() < 1e-6);
        assert_eq!(chrf_sentence("abc", "xyz", 6, 2.0), 0.0);
        assert_eq!(chrf_sentence("a b c", "abc", 6, 2.0), 100.0);
    }

    #[test]
    fn rouge_hand_pair() {
        let f = rouge_l_tokens(&["a", "b", "c", "d"], &["a", "c", "b", "d"], 1.2);
        assert!((f - 75.0).abs() < 1e-9);
        assert_eq!(rouge_l(&[""], &["a"], 1.2).unwrap().corpus, 0.0);
    }

    #[test]
    fn keyword_edits_cost_more_than_identifier_edits() {
        let reference = jsparse::token_texts("var total = count + 1 ; return total ;");
        let kw = jsparse::token_texts("let total = count + 1 ; return total ;");
        let ident = jsparse::token_texts("var total = amount + 1 ; return total ;");
        assert_eq!(weighted_ngram_match(&reference, &reference, JS_KEYWORDS), 1.0);
        let a = weighted_ngram_match(&kw, &reference, JS_KEYWORDS);
        let b = weighted_ngram_match(&ident, &reference, JS_KEYWORDS);
        assert!(a < b, "{a} >= {b}");
    }

    #[test]
    fn syntax_match_hand_pair() {
        let src = "function f(a){var b=a+1;return b;}";
        assert_eq!(syntax_match(src, src), Some(1.0));
        assert_eq!(syntax_match("function g(x){var y=x+1;return y;}", src), Some(1.0));
        assert_eq!(syntax_match(src, "function ("), None);
        // return -> throw changes the return_statement shape and the shapes above it
        let reference = jsparse::parse(src);
        let want = jsparse::subtree_multiset(&reference, 3);
        let got = syntax_match("function f(a){var b=a+1;throw b;}", src).unwrap();
        let have = jsparse::subtree_multiset(&jsparse::parse("function f(a){var b=a+1;throw b;}"), 3);
        let total: usize = want.values().sum();
        let hit: usize = want.iter().map(|(k, c)| (*c).min(*have.get(k).unwrap_or(&0))).sum();
        assert!(hit < total);
        assert!((got - hit as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn dataflow_match_cases() {
        let src = "function f(a){var b=a+1;return b;}";
        assert_eq!(dataflow_match(src, src), Some(1.0));
        assert_eq!(dataflow_match("var x = 1; f(x);", "var x = 1;"), None);
        assert_eq!(dataflow_match("var x = 1; f(2);", "var x = 1; f(x);"), Some(0.0));
        // keeps a -> b but drops the read of b
        assert_eq!(dataflow_match("function f(a){var b=a+1;return 0;}", src), Some(0.5));
    }

    #[test]
    fn codebleu_identity_and_empty() {
        let src = "function f(a){var b=a+1;return b;}";
        let s = codebleu_sentence(src, src);
        assert!((s.composite - 100.0).abs() < 1e-9);
        assert_eq!((s.ngram, s.weighted_ngram, s.syntax, s.dataflow), (1.0, 1.0, Some(1.0), Some(1.0)));
        assert_eq!(codebleu_sentence("  ", src).composite, 0.0);
        let r = codebleu(&[src, ""], &[src, src]).unwrap();
        assert!((r.corpus - 50.0).abs() < 1e-9);
    }

    #[test]
    fn codebleu_renormalizes_missing_components() {
        let s = codebleu_sentence("var x = 1;", "var x = 2;");
        assert!(s.dataflow.is_none());
        assert_eq!(s.weights(), [1.0 / 3.0; 3].into_iter().chain([0.0]).collect::<Vec<_>>()[..]);
    }
}
