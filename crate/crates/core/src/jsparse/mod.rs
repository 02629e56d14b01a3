//! Tolerant parser for the function-level JavaScript subset, plus the two
//! structural views CodeBLEU needs: depth-limited subtree shapes and
//! def-use dataflow edges.
//!
//! The tree is concrete: every token becomes a leaf whose kind is its
//! category (`identifier`, `number`, `string`, ...) or, for keywords and
//! punctuation, the token text itself. Shapes therefore ignore identifier
//! and literal spellings but keep the operators.

mod dataflow;
pub mod lexer;
mod parser;

use std::collections::BTreeMap;

use serde::Serialize;

pub use dataflow::{dataflow_edges, dataflow_signature, DataflowEdge};
pub use lexer::{token_texts, tokenize, Token, TokenKind};
pub use parser::parse;

pub const DEFAULT_SUBTREE_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntaxNode {
    pub kind: &'static str,
    /// Source text for leaves, `None` for interior nodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub span: (usize, usize),
    /// Preorder position in the tree.
    pub ordinal: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SyntaxNode>,
}

impl SyntaxNode {
    pub fn new(kind: &'static str) -> Self {
        SyntaxNode {
            kind,
            text: None,
            span: (usize::MAX, 0),
            ordinal: 0,
            children: Vec::new(),
        }
    }

    pub fn leaf(kind: &'static str, text: &str, start: usize, end: usize) -> Self {
        SyntaxNode {
            kind,
            text: Some(text.to_string()),
            span: (start, end),
            ordinal: 0,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.text.is_some()
    }

    pub fn push(&mut self, child: SyntaxNode) {
        if child.span.0 <= child.span.1 {
            self.span.0 = self.span.0.min(child.span.0);
            self.span.1 = self.span.1.max(child.span.1);
        }
        self.children.push(child);
    }

    /// Assigns preorder ordinals starting at `next`; returns the next free one.
    pub(crate) fn number(&mut self, next: usize) -> usize {
        self.ordinal = next;
        let mut n = next + 1;
        for c in &mut self.children {
            n = c.number(n);
        }
        if self.span.0 > self.span.1 {
            self.span = (0, 0);
        }
        n
    }

    /// Leaves in traversal order.
    pub fn leaves(&self) -> Vec<&SyntaxNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if n.is_leaf() {
                out.push(n);
            }
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(SyntaxNode::node_count).sum::<usize>()
    }

    /// Depth-first preorder search for the first node of `kind`.
    pub fn find(&self, kind: &str) -> Option<&SyntaxNode> {
        if self.kind == kind {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(kind))
    }

    fn shape(&self, depth: usize, out: &mut String) {
        if self.children.is_empty() || depth <= 1 {
            out.push_str(self.kind);
            return;
        }
        out.push('(');
        out.push_str(self.kind);
        for c in &self.children {
            out.push(' ');
            c.shape(depth - 1, out);
        }
        out.push(')');
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntaxTree {
    pub root: SyntaxNode,
    pub parse_ok: bool,
    pub error_count: usize,
}

impl SyntaxTree {
    /// Wraps a hand-built node, renumbering it.
    pub fn from_root(mut root: SyntaxNode) -> Self {
        root.number(0);
        SyntaxTree {
            root,
            parse_ok: true,
            error_count: 0,
        }
    }
}

/// Every node's shape, truncated `max_depth` levels down and with leaf text
/// stripped, counted with multiplicity.
pub fn subtree_multiset(tree: &SyntaxTree, max_depth: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut stack = vec![&tree.root];
    while let Some(n) = stack.pop() {
        let mut s = String::new();
        n.shape(max_depth.max(1), &mut s);
        *out.entry(s).or_insert(0) += 1;
        stack.extend(n.children.iter());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_declaration_parses() {
        let t = parse("var x = 1;");
        assert!(t.parse_ok);
        let decl = t.root.find("variable_declaration").unwrap();
        assert_eq!(decl.children.iter().filter(|c| c.kind == "variable_declarator").count(), 1);
    }

    #[test]
    fn function_with_param_and_return() {
        let t = parse("function f(a){return a;}");
        assert!(t.parse_ok);
        let f = t.root.find("function_declaration").unwrap();
        let params = f.find("formal_parameters").unwrap();
        assert_eq!(params.children.iter().filter(|c| c.kind == "identifier").count(), 1);
        assert!(f.find("return_statement").is_some());
    }

    #[test]
    fn truncated_input_keeps_partial_tree() {
        let t = parse("function f(a){ var b =");
        assert!(!t.parse_ok);
        assert!(t.error_count >= 1);
        let decl = t.root.find("variable_declaration").unwrap();
        assert!(decl.find("variable_declarator").is_some());
    }

    #[test]
    fn shapes_ignore_leaf_text() {
        let a = subtree_multiset(&parse("var x = 1;"), 3);
        let b = subtree_multiset(&parse("var y = 2;"), 3);
        assert_eq!(a, b);
        let single = SyntaxTree::from_root(SyntaxNode::leaf("identifier", "x", 0, 1));
        assert_eq!(subtree_multiset(&single, 3).values().sum::<usize>(), 1);
    }

    #[test]
    fn precedence_and_associativity() {
        let t = parse("x = a + b * c ** d ** e;");
        let mut s = String::new();
        let assign = t.root.find("assignment_expression").unwrap();
        assign.children[2].shape(10, &mut s);
        assert_eq!(
            s,
            "(binary_expression identifier + (binary_expression identifier * \
             (binary_expression identifier ** (binary_expression identifier ** identifier))))"
        );
    }

    #[test]
    fn covers_common_constructs() {
        let src = r#"
            'use strict';
            const {a, b: [c, ...d]} = require('x'), e = async (p, q = 1) => { await p; };
            class K extends Base { static n = 1; get v() { return this.#p; } m(...xs) { super.m(); } }
            for (let i = 0; i < 10; i++) { if (i % 2) continue; else break; }
            for (const k of list) total += k;
            for (var k2 in obj) {}
            while (x--) { do { y++ } while (y < 3) }
            switch (v) { case 1: f(); break; default: g(); }
            try { risky(); } catch (err) { log`oops ${err}`; } finally { done(); }
            label: for (;;) { break label; }
            var r = /ab+c/gi.test(s) ? obj?.deep?.[0] ?? null : new Foo.Bar(1, ...rest);
            export default function named() {}
            let fn = function* gen() { yield* other(); };
            x = {get: 1, set() {}, async *it() {}, [computed]: 2, 'str': 3, 4: 5};
        "#;
        let t = parse(src);
        assert!(t.parse_ok, "errors: {}", t.error_count);
    }

    #[test]
    fn leaves_reproduce_token_stream() {
        let src = "function f(a, b) { return a.b(c)[d] + `t${x}` ; }";
        let t = parse(src);
        let leaves: Vec<String> = t.root.leaves().iter().map(|l| l.text.clone().unwrap()).collect();
        assert_eq!(leaves, token_texts(src));
    }
}
