use driftbench::jsparse::{dataflow_edges, parse, subtree_multiset, token_texts, SyntaxNode};
use proptest::prelude::*;

const STATEMENTS: &[&str] = &[
    "var $0 = $1 + 3;",
    "let $2 = [$0, $1].map(function ($3) { return $3 * 2; });",
    "if ($0 > 4) { $1 = $0; } else { $1 = -$0; }",
    "function $4($0, $1) { var $2 = $0 * $1; return $2; }",
    "for (var $3 = 0; $3 < $1; $3++) { $2 += $3; }",
    "$1 = $0.$2 ? $0.$2($1) : null;",
    "while ($0) { $0 = $0.next; }",
    "const $3 = { a: $0, b: \"s\" };",
];

/// A program from statement templates with placeholder names bound to `names`.
fn program(picks: &[usize], names: &[&str], sep: &str) -> String {
    picks
        .iter()
        .map(|&i| {
            let mut s = STATEMENTS[i % STATEMENTS.len()].to_string();
            for (k, n) in names.iter().enumerate() {
                s = s.replace(&format!("${k}"), n);
            }
            s
        })
        .collect::<Vec<_>>()
        .join(sep)
}

fn check_spans(node: &SyntaxNode, src: &str) -> Result<(), TestCaseError> {
    for c in &node.children {
        if c.span.0 < c.span.1 {
            prop_assert!(node.span.0 <= c.span.0 && c.span.1 <= node.span.1);
        }
        check_spans(c, src)?;
    }
    if let Some(text) = &node.text {
        prop_assert_eq!(&src[node.span.0..node.span.1], text.as_str());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_never_panics_on_text(src in ".{0,400}") {
        let _ = parse(&src);
    }

    #[test]
    fn parse_never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let src = String::from_utf8_lossy(&bytes);
        let tree = parse(&src);
        let _ = subtree_multiset(&tree, 3);
        let _ = dataflow_edges(&tree);
    }

    #[test]
    fn parse_never_panics_on_code_fragments(picks in prop::collection::vec(0usize..8, 1..6), cut in 0usize..400) {
        let src = program(&picks, &["a", "b", "c", "d", "f"], "\n");
        let cut = src.char_indices().map(|(i, _)| i).filter(|&i| i <= cut).last().unwrap_or(0);
        let _ = parse(&src[..cut]);
    }

    #[test]
    fn structure_ignores_layout_and_names(picks in prop::collection::vec(0usize..8, 1..6)) {
        let plain = program(&picks, &["a", "b", "c", "d", "f"], "\n");
        let renamed = program(&picks, &["alpha", "beta9", "gamma_", "delta", "fn1"], "\n");
        let spaced = program(&picks, &["a", "b", "c", "d", "f"], "\n  /* note */\n\n// line\n");
        let t = parse(&plain);
        prop_assert!(t.parse_ok, "{plain}");
        for other in [&renamed, &spaced] {
            let o = parse(other);
            prop_assert!(o.parse_ok);
            prop_assert_eq!(subtree_multiset(&t, 3), subtree_multiset(&o, 3));
            prop_assert_eq!(dataflow_edges(&t), dataflow_edges(&o));
        }
    }

    #[test]
    fn leaves_reproduce_tokens_and_spans_nest(picks in prop::collection::vec(0usize..8, 1..6)) {
        let src = program(&picks, &["a", "b", "c", "d", "f"], "\n");
        let tree = parse(&src);
        prop_assert!(tree.parse_ok);
        let leaves: Vec<String> = tree.root.leaves().iter().filter_map(|l| l.text.clone()).collect();
        prop_assert_eq!(leaves, token_texts(&src));
        check_spans(&tree.root, &src)?;
    }
}
