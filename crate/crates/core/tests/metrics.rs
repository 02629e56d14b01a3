use driftbench::metrics::{self, bleu4, chrf, codebleu, codebleu_sentence, rouge_l, CHRF_BETA, CHRF_ORDER, ROUGE_BETA};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Pair {
    hyp: String,
    #[serde(rename = "ref")]
    reference: String,
    bleu: f64,
    chrf: f64,
    rougel: f64,
}

#[derive(Deserialize)]
struct Oracle {
    pairs: Vec<Pair>,
    corpus_bleu: f64,
    mean_chrf: f64,
    mean_rougel: f64,
}

const TOL: f64 = 1e-4;

fn oracle() -> Oracle {
    serde_json::from_str(include_str!("fixtures/text_metrics_oracle.json")).unwrap()
}

#[test]
fn text_metrics_match_reference_tooling() {
    let o = oracle();
    let hyps: Vec<&str> = o.pairs.iter().map(|p| p.hyp.as_str()).collect();
    let refs: Vec<&str> = o.pairs.iter().map(|p| p.reference.as_str()).collect();

    let b = bleu4(&hyps, &refs).unwrap();
    let c = chrf(&hyps, &refs, CHRF_ORDER, CHRF_BETA).unwrap();
    let r = rouge_l(&hyps, &refs, ROUGE_BETA).unwrap();
    for (i, p) in o.pairs.iter().enumerate() {
        assert!((b.per_example[i].1 - p.bleu.min(100.0)).abs() < TOL, "bleu #{i}: {} vs {}", b.per_example[i].1, p.bleu);
        assert!((c.per_example[i].1 - p.chrf).abs() < TOL, "chrf #{i}");
        assert!((r.per_example[i].1 - p.rougel).abs() < TOL, "rougel #{i}");
    }
    assert!((b.corpus - o.corpus_bleu).abs() < TOL);
    assert!((c.corpus - o.mean_chrf).abs() < TOL);
    assert!((r.corpus - o.mean_rougel).abs() < TOL);
}

#[test]
fn three_pair_toy_corpus() {
    let o = oracle();
    let hyps: Vec<&str> = o.pairs[1..4].iter().map(|p| p.hyp.as_str()).collect();
    let refs: Vec<&str> = o.pairs[1..4].iter().map(|p| p.reference.as_str()).collect();
    // sentence scores of the oracle are single-pair corpora
    for (i, p) in o.pairs[1..4].iter().enumerate() {
        let one = bleu4(&hyps[i..=i], &refs[i..=i]).unwrap();
        assert!((one.corpus - p.bleu).abs() < TOL);
    }
    assert!(bleu4(&hyps, &refs).unwrap().corpus > 0.0);
}

#[test]
fn length_mismatch_is_rejected() {
    for m in ["bleu", "chrf", "rougel", "codebleu"] {
        let metric: metrics::Metric = m.parse().unwrap();
        assert!(matches!(
            metric.score(&["a"], &["a", "b"]),
            Err(metrics::MetricError::LengthMismatch { .. })
        ));
    }
}

const SNIPPETS: &[&str] = &[
    "function add(a, b) { return a + b; }",
    "function f(x) { var y = x * 2; if (y > 3) { y = 0; } return y; }",
    "const g = (s) => s.split(',').map(t => t.trim());",
    "function loop(n) { let s = 0; for (let i = 0; i < n; i++) { s += i; } return s; }",
    "class A { constructor(v) { this.v = v; } get() { return this.v; } }",
    "var x = 1;",
    "function broken( { return",
    "",
];

fn snippet() -> impl Strategy<Value = String> {
    prop_oneof![
        proptest::sample::select(SNIPPETS).prop_map(str::to_string),
        "[a-z (){};=+.,]{0,40}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_bounded(pairs in proptest::collection::vec((snippet(), snippet()), 1..6)) {
        let (c, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        for m in ["bleu", "chrf", "rougel", "codebleu"] {
            let rep = m.parse::<metrics::Metric>().unwrap().score(&c, &r).unwrap();
            prop_assert!((0.0..=100.0).contains(&rep.corpus), "{m} {}", rep.corpus);
            for (_, s) in &rep.per_example {
                prop_assert!((0.0..=100.0).contains(s));
            }
        }
    }

    #[test]
    fn self_score_is_maximal(x in proptest::sample::select(&SNIPPETS[..6])) {
        let rep = codebleu(&[x], &[x]).unwrap();
        prop_assert!((rep.corpus - 100.0).abs() < 1e-9);
        for m in ["bleu", "chrf", "rougel"] {
            let s = m.parse::<metrics::Metric>().unwrap().score(&[x], &[x]).unwrap();
            prop_assert!((s.corpus - 100.0).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn corpus_aggregate_ignores_order(
        pairs in proptest::collection::vec((snippet(), snippet()), 2..8),
        seed in any::<u64>(),
    ) {
        let (c, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let mut idx: Vec<usize> = (0..c.len()).collect();
        driftbench::rng::SeededRng::new("perm", seed).shuffle(&mut idx);
        let c2: Vec<String> = idx.iter().map(|&i| c[i].clone()).collect();
        let r2: Vec<String> = idx.iter().map(|&i| r[i].clone()).collect();
        for m in ["bleu", "chrf", "rougel", "codebleu"] {
            let metric = m.parse::<metrics::Metric>().unwrap();
            let a = metric.score(&c, &r).unwrap().corpus;
            let b = metric.score(&c2, &r2).unwrap().corpus;
            prop_assert!((a - b).abs() < 1e-9, "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn codebleu_equals_weighted_components(c in snippet(), r in snippet()) {
        let s = codebleu_sentence(&c, &r);
        let w = s.weights();
        let v = [s.ngram, s.weighted_ngram, s.syntax.unwrap_or(0.0), s.dataflow.unwrap_or(0.0)];
        let sum: f64 = w.iter().zip(v).map(|(w, v)| w * v).sum();
        if c.trim().is_empty() {
            prop_assert_eq!(s.composite, 0.0);
        } else {
            prop_assert!((s.composite - 100.0 * sum).abs() < 1e-9);
        }
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
