//! Intraprocedural def-use chains over the syntax tree.
//!
//! Definitions are parameters, declarators, function and class names, and
//! assignment targets; every identifier read is a use. Reaching definitions
//! are tracked per lexical scope. Branches are analyzed from the same entry
//! state and joined by union, so a use after an `if` sees the definitions of
//! both arms (and of the fall-through path).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::{SyntaxNode, SyntaxTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DataflowEdge {
    /// Variable number in first-seen order, so renaming does not change edges.
    pub variable: usize,
    /// Preorder ordinal of the defining identifier.
    pub def_site: usize,
    /// Preorder ordinal of the reading identifier.
    pub use_site: usize,
}

type Defs = BTreeSet<usize>;

#[derive(Clone, Default)]
struct Scope {
    vars: HashMap<String, Defs>,
    function: bool,
}

#[derive(Default)]
struct Flow {
    scopes: Vec<Scope>,
    names: HashMap<String, usize>,
    edges: BTreeSet<DataflowEdge>,
}

#[derive(Clone, Copy, PartialEq)]
enum Bind {
    /// `var` and function-level declarations.
    Var,
    /// `let`/`const`/`class`/parameters: the innermost scope.
    Lexical,
    /// Reassignment of an existing binding.
    Assign,
}

fn is_punct(n: &SyntaxNode) -> bool {
    n.is_leaf() && n.kind != "identifier"
}

impl Flow {
    fn variable(&mut self, name: &str) -> usize {
        let next = self.names.len();
        *self.names.entry(name.to_string()).or_insert(next)
    }

    fn push_scope(&mut self, function: bool) {
        self.scopes.push(Scope {
            vars: HashMap::new(),
            function,
        });
    }

    fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    fn snapshot(&self) -> Vec<Scope> {
        self.scopes.clone()
    }

    fn restore(&mut self, s: Vec<Scope>) {
        self.scopes = s;
    }

    /// Union of reaching definitions; both states have the same scope shape.
    fn join(&mut self, other: &[Scope]) {
        for (mine, theirs) in self.scopes.iter_mut().zip(other) {
            for (name, defs) in &theirs.vars {
                mine.vars.entry(name.clone()).or_default().extend(defs.iter().copied());
            }
        }
    }

    fn define(&mut self, leaf: &SyntaxNode, mode: Bind) {
        let name = leaf.text.clone().unwrap_or_default();
        self.variable(&name);
        let defs: Defs = [leaf.ordinal].into();
        let idx = match mode {
            Bind::Lexical => self.scopes.len() - 1,
            Bind::Var => self.scopes.iter().rposition(|s| s.function).unwrap_or(0),
            Bind::Assign => self
                .scopes
                .iter()
                .rposition(|s| s.vars.contains_key(&name))
                .unwrap_or(0),
        };
        self.scopes[idx].vars.insert(name, defs);
    }

    fn read(&mut self, leaf: &SyntaxNode) {
        let name = leaf.text.as_deref().unwrap_or_default();
        let variable = self.variable(name);
        let Some(defs) = self.scopes.iter().rev().find_map(|s| s.vars.get(name)) else {
            return;
        };
        let defs: Vec<usize> = defs.iter().copied().collect();
        for def_site in defs {
            self.edges.insert(DataflowEdge {
                variable,
                def_site,
                use_site: leaf.ordinal,
            });
        }
    }

    /// Function and class declarations are visible throughout their block.
    fn hoist(&mut self, statements: &[SyntaxNode]) {
        for s in statements {
            let target = if s.kind == "export_statement" {
                s.children.iter().find(|c| !c.is_leaf())
            } else {
                Some(s)
            };
            if let Some(decl) = target.filter(|d| d.kind == "function_declaration") {
                if let Some(name) = decl.children.iter().find(|c| c.kind == "identifier") {
                    self.define(name, Bind::Var);
                }
            }
        }
    }

    fn statements(&mut self, items: &[SyntaxNode]) {
        self.hoist(items);
        for s in items {
            self.visit(s);
        }
    }

    fn bind(&mut self, target: &SyntaxNode, mode: Bind) {
        match target.kind {
            "identifier" => self.define(target, mode),
            "array" | "object" | "parenthesized_expression" => {
                for c in &target.children {
                    if !is_punct(c) {
                        self.bind(c, mode);
                    }
                }
            }
            "pair" => {
                // key: value; only the value side binds
                if let Some(v) = target.children.iter().rev().find(|c| !is_punct(c)) {
                    if let Some(key) = target.children.iter().find(|c| c.kind == "computed_property_name") {
                        self.visit(key);
                    }
                    self.bind(v, mode);
                }
            }
            "assignment_pattern" | "assignment_expression" => {
                if let Some(default) = target.children.get(2) {
                    self.visit(default);
                }
                if let Some(left) = target.children.first() {
                    self.bind(left, mode);
                }
            }
            "rest_pattern" | "spread_element" => {
                if let Some(arg) = target.children.get(1) {
                    self.bind(arg, mode);
                }
            }
            // member targets (`a.b = 1`) read their object
            _ => self.visit(target),
        }
    }

    fn function_like(&mut self, node: &SyntaxNode) {
        self.push_scope(true);
        if node.kind == "function_expression" {
            if let Some(name) = node.children.iter().find(|c| c.kind == "identifier") {
                self.define(name, Bind::Lexical);
            }
        }
        for c in &node.children {
            match c.kind {
                "formal_parameters" => {
                    for p in c.children.iter().filter(|p| !is_punct(p)) {
                        self.bind(p, Bind::Lexical);
                    }
                }
                // bare arrow parameter
                "identifier" if node.kind == "arrow_function" => self.define(c, Bind::Lexical),
                "statement_block" => self.statements(&c.children),
                "computed_property_name" => self.visit(c),
                _ if node.kind == "arrow_function" && !c.is_leaf() => self.visit(c),
                _ => {}
            }
        }
        self.pop_scope();
    }

    fn children(&mut self, node: &SyntaxNode) {
        for c in &node.children {
            self.visit(c);
        }
    }

    fn visit(&mut self, node: &SyntaxNode) {
        match node.kind {
            "identifier" => self.read(node),
            "program" => self.statements(&node.children),
            "statement_block" => {
                self.push_scope(false);
                self.statements(&node.children);
                self.pop_scope();
            }
            "variable_declaration" | "lexical_declaration" => {
                let mode = if node.kind == "variable_declaration" { Bind::Var } else { Bind::Lexical };
                for d in node.children.iter().filter(|c| c.kind == "variable_declarator") {
                    if let Some(init) = d.children.get(2) {
                        self.visit(init);
                    }
                    if let Some(target) = d.children.first() {
                        self.bind(target, mode);
                    }
                }
            }
            "function_declaration" => {
                if let Some(name) = node.children.iter().find(|c| c.kind == "identifier") {
                    let hoisted = self
                        .scopes
                        .iter()
                        .any(|s| s.vars.get(name.text.as_deref().unwrap_or("")).is_some_and(|d| d.contains(&name.ordinal)));
                    if !hoisted {
                        self.define(name, Bind::Var);
                    }
                }
                self.function_like(node);
            }
            "function_expression" | "arrow_function" | "method_definition" => self.function_like(node),
            "class_declaration" | "class" => {
                for c in &node.children {
                    match c.kind {
                        "identifier" if node.kind == "class_declaration" => self.define(c, Bind::Lexical),
                        "class_heritage" | "class_body" => self.children(c),
                        _ => {}
                    }
                }
            }
            "field_definition" => {
                for c in node.children.iter().skip_while(|c| c.kind != "=").skip(1) {
                    self.visit(c);
                }
            }
            "assignment_expression" => {
                if let Some(right) = node.children.get(2) {
                    self.visit(right);
                }
                if let Some(left) = node.children.first() {
                    self.bind(left, Bind::Assign);
                }
            }
            "augmented_assignment_expression" => {
                if let Some(right) = node.children.get(2) {
                    self.visit(right);
                }
                if let Some(left) = node.children.first() {
                    self.visit(left);
                    if left.kind == "identifier" {
                        self.define(left, Bind::Assign);
                    }
                }
            }
            "update_expression" => {
                if let Some(target) = node.children.iter().find(|c| !is_punct(c)) {
                    self.visit(target);
                    if target.kind == "identifier" {
                        self.define(target, Bind::Assign);
                    }
                }
            }
            "member_expression" => {
                // the property name is not a variable
                if let Some(obj) = node.children.first() {
                    self.visit(obj);
                }
                for c in node.children.iter().skip(1) {
                    if c.kind == "arguments" || c.kind == "computed_property_name" {
                        self.visit(c);
                    }
                }
            }
            "pair" => {
                for c in &node.children {
                    if c.kind == "computed_property_name" || !(c.is_leaf() && c.kind != "identifier") {
                        if c.kind != "property_identifier" {
                            self.visit(c);
                        }
                    }
                }
            }
            "if_statement" => {
                let mut parts = node.children.iter().filter(|c| !c.is_leaf());
                if let Some(cond) = parts.next() {
                    self.visit(cond);
                }
                let entry = self.snapshot();
                if let Some(then) = parts.next() {
                    self.visit(then);
                }
                let after_then = std::mem::replace(&mut self.scopes, entry.clone());
                match parts.next() {
                    Some(else_clause) => self.visit(else_clause),
                    None => {}
                }
                self.join(&after_then);
            }
            "while_statement" => {
                let mut parts = node.children.iter().filter(|c| !c.is_leaf());
                if let Some(cond) = parts.next() {
                    self.visit(cond);
                }
                let entry = self.snapshot();
                for p in parts {
                    self.visit(p);
                }
                self.join(&entry);
            }
            "do_statement" => self.children(node),
            "for_statement" => {
                self.push_scope(false);
                let parts: Vec<&SyntaxNode> = node.children.iter().filter(|c| !c.is_leaf()).collect();
                // init, test, update are the non-leaf children before the body
                let (body, header) = parts.split_last().map_or((None, &[][..]), |(b, h)| (Some(*b), h));
                let mut header = header.iter();
                if let Some(init) = header.next() {
                    self.visit(init);
                }
                let rest: Vec<&&SyntaxNode> = header.collect();
                if let Some(test) = rest.first() {
                    self.visit(test);
                }
                let entry = self.snapshot();
                if let Some(b) = body {
                    self.visit(b);
                }
                for update in rest.iter().skip(1) {
                    self.visit(update);
                }
                self.join(&entry);
                self.pop_scope();
            }
            "for_in_statement" => {
                self.push_scope(false);
                let parts: Vec<&SyntaxNode> = node.children.iter().filter(|c| !c.is_leaf()).collect();
                if parts.len() >= 3 {
                    self.visit(parts[1]);
                    let left = parts[0];
                    match left.kind {
                        "variable_declaration" | "lexical_declaration" => {
                            let mode = if left.kind == "variable_declaration" { Bind::Var } else { Bind::Lexical };
                            for d in left.children.iter().filter(|c| c.kind == "variable_declarator") {
                                if let Some(t) = d.children.first() {
                                    self.bind(t, mode);
                                }
                            }
                        }
                        _ => self.bind(left, Bind::Assign),
                    }
                    let entry = self.snapshot();
                    for p in &parts[2..] {
                        self.visit(p);
                    }
                    self.join(&entry);
                } else {
                    self.children(node);
                }
                self.pop_scope();
            }
            "switch_statement" => {
                let mut parts = node.children.iter().filter(|c| !c.is_leaf());
                if let Some(d) = parts.next() {
                    self.visit(d);
                }
                if let Some(body) = parts.next() {
                    let entry = self.snapshot();
                    let mut exits = Vec::new();
                    for case in body.children.iter().filter(|c| !c.is_leaf()) {
                        self.restore(entry.clone());
                        self.push_scope(false);
                        self.children(case);
                        self.pop_scope();
                        exits.push(self.snapshot());
                    }
                    self.restore(entry);
                    for e in &exits {
                        self.join(e);
                    }
                }
            }
            "try_statement" => {
                let entry = self.snapshot();
                let mut after_try = None;
                for c in &node.children {
                    match c.kind {
                        "statement_block" => {
                            self.visit(c);
                            after_try = Some(self.snapshot());
                        }
                        "catch_clause" => {
                            // the exception may be thrown before or after any try statement
                            self.join(&entry);
                            self.push_scope(false);
                            for p in c.children.iter().filter(|p| !p.is_leaf()) {
                                if p.kind == "statement_block" {
                                    self.statements(&p.children);
                                } else {
                                    self.bind(p, Bind::Lexical);
                                }
                            }
                            self.pop_scope();
                            if let Some(t) = &after_try {
                                self.join(t);
                            }
                        }
                        "finally_clause" => self.children(c),
                        _ => {}
                    }
                }
            }
            "labeled_statement" | "break_statement" | "continue_statement" => {
                for c in node.children.iter().filter(|c| c.kind != "statement_identifier") {
                    self.visit(c);
                }
            }
            _ => self.children(node),
        }
    }
}

/// Def-use edges of a parsed tree.
pub fn dataflow_edges(tree: &SyntaxTree) -> BTreeSet<DataflowEdge> {
    let mut flow = Flow::default();
    flow.push_scope(true);
    flow.visit(&tree.root);
    flow.edges
}

/// Position-independent form of the edges, for comparing two programs:
/// each def and use site is replaced by its rank among the sites of the same
/// variable that take part in any edge.
pub fn dataflow_signature(tree: &SyntaxTree) -> Vec<(usize, usize, usize)> {
    let edges = dataflow_edges(tree);
    let mut sites: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for e in &edges {
        let s = sites.entry(e.variable).or_default();
        s.insert(e.def_site);
        s.insert(e.use_site);
    }
    let rank = |var: usize, site: usize| sites[&var].iter().position(|&x| x == site).unwrap_or(0);
    let mut out: Vec<(usize, usize, usize)> = edges
        .iter()
        .map(|e| (e.variable, rank(e.variable, e.def_site), rank(e.variable, e.use_site)))
        .collect();
    out.sort_unstable();
    out
}
