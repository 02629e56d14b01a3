//! Recursive-descent parser producing a concrete syntax tree: every token of
//! the input ends up as a leaf, in order. Syntax errors are recorded and the
//! parser resynchronizes instead of failing.

use super::lexer::{static_name, tokenize, Token, TokenKind};
use super::{SyntaxNode, SyntaxTree};

const MAX_DEPTH: usize = 64;

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "**=", "<<=", ">>=", ">>>=", "&=", "|=", "^=", "&&=", "||=",
    "??=",
];

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "??" => 1,
        "||" => 2,
        "&&" => 3,
        "|" => 4,
        "^" => 5,
        "&" => 6,
        "==" | "!=" | "===" | "!==" => 7,
        "<" | ">" | "<=" | ">=" | "instanceof" | "in" => 8,
        "<<" | ">>" | ">>>" => 9,
        "+" | "-" => 10,
        "*" | "/" | "%" => 11,
        "**" => 12,
        _ => return None,
    })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    errors: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&Token> {
        self.tokens.get(self.pos + off)
    }

    fn at(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text && t.kind != TokenKind::String)
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().is_some_and(|t| t.kind == kind)
    }

    fn at_eof(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn newline_before(&self) -> bool {
        self.peek().is_some_and(|t| t.newline_before)
    }

    /// Consumes the current token as a leaf of kind `kind`.
    fn leaf_as(&mut self, kind: &'static str) -> SyntaxNode {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        SyntaxNode::leaf(kind, &t.text, t.start, t.end)
    }

    /// Consumes the current token as a leaf named after its category.
    fn leaf(&mut self) -> SyntaxNode {
        let t = &self.tokens[self.pos];
        let kind = match t.kind {
            TokenKind::Identifier => "identifier",
            TokenKind::Number => "number",
            TokenKind::String => "string",
            TokenKind::Template => "template_string",
            TokenKind::Regex => "regex",
            TokenKind::Invalid => "ERROR",
            TokenKind::Keyword | TokenKind::Punct => static_name(&t.text).unwrap_or("ERROR"),
        };
        self.leaf_as(kind)
    }

    /// Consumes an identifier token acting as a contextual keyword.
    fn contextual(&mut self) -> SyntaxNode {
        let kind = static_name(&self.tokens[self.pos].text).unwrap_or("identifier");
        self.leaf_as(kind)
    }

    fn eat(&mut self, node: &mut SyntaxNode, text: &str) -> bool {
        if self.at(text) {
            let l = self.leaf();
            node.push(l);
            true
        } else {
            false
        }
    }

    fn expect(&mut self, node: &mut SyntaxNode, text: &str) {
        if !self.eat(node, text) {
            self.errors += 1;
        }
    }

    fn semicolon(&mut self, node: &mut SyntaxNode) {
        if self.eat(node, ";") || self.at("}") || self.at_eof() || self.newline_before() {
            return;
        }
        self.errors += 1;
        let mut err = SyntaxNode::new("ERROR");
        while !self.at_eof() && !self.at(";") && !self.at("}") && !self.newline_before() {
            let l = self.leaf();
            err.push(l);
        }
        self.eat(&mut err, ";");
        node.push(err);
    }

    fn error_token(&mut self) -> SyntaxNode {
        self.errors += 1;
        let mut err = SyntaxNode::new("ERROR");
        if !self.at_eof() {
            let l = self.leaf();
            err.push(l);
        }
        err
    }

    fn enter(&mut self) -> bool {
        if self.depth >= MAX_DEPTH {
            return false;
        }
        self.depth += 1;
        true
    }

    // ---------------------------------------------------------------- statements

    fn program(&mut self) -> SyntaxNode {
        let mut root = SyntaxNode::new("program");
        while !self.at_eof() {
            let before = self.pos;
            let s = self.statement();
            root.push(s);
            if self.pos == before {
                let e = self.error_token();
                root.push(e);
            }
        }
        root
    }

    fn statement(&mut self) -> SyntaxNode {
        if !self.enter() {
            return self.error_token();
        }
        let node = self.statement_inner();
        self.depth -= 1;
        node
    }

    fn statement_inner(&mut self) -> SyntaxNode {
        let Some(tok) = self.peek() else {
            return self.error_token();
        };
        let text = tok.text.clone();
        let kind = tok.kind;
        let next_text = self.peek_at(1).map(|t| t.text.clone());
        match (kind, text.as_str()) {
            (TokenKind::Punct, "{") => self.block(),
            (TokenKind::Punct, ";") => {
                let mut n = SyntaxNode::new("empty_statement");
                self.expect(&mut n, ";");
                n
            }
            (TokenKind::Keyword, "var") => {
                let mut n = self.declaration("variable_declaration", false);
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Keyword, "const") => {
                let mut n = self.declaration("lexical_declaration", false);
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Identifier, "let")
                if self.peek_at(1).is_some_and(|t| {
                    t.kind == TokenKind::Identifier || t.text == "[" || t.text == "{"
                }) =>
            {
                let mut n = self.declaration("lexical_declaration", false);
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Keyword, "function") => self.function("function_declaration"),
            (TokenKind::Identifier, "async")
                if next_text.as_deref() == Some("function")
                    && !self.peek_at(1).is_some_and(|t| t.newline_before) =>
            {
                self.function("function_declaration")
            }
            (TokenKind::Keyword, "class") => self.class("class_declaration"),
            (TokenKind::Keyword, "if") => self.if_statement(),
            (TokenKind::Keyword, "for") => self.for_statement(),
            (TokenKind::Keyword, "while") => {
                let mut n = SyntaxNode::new("while_statement");
                self.leaf_into(&mut n);
                let c = self.parenthesized();
                n.push(c);
                let b = self.statement();
                n.push(b);
                n
            }
            (TokenKind::Keyword, "do") => {
                let mut n = SyntaxNode::new("do_statement");
                self.leaf_into(&mut n);
                let b = self.statement();
                n.push(b);
                self.expect(&mut n, "while");
                let c = self.parenthesized();
                n.push(c);
                self.eat(&mut n, ";");
                n
            }
            (TokenKind::Keyword, "switch") => self.switch_statement(),
            (TokenKind::Keyword, "try") => self.try_statement(),
            (TokenKind::Keyword, "return") | (TokenKind::Keyword, "throw") => {
                let mut n = SyntaxNode::new(if text == "return" {
                    "return_statement"
                } else {
                    "throw_statement"
                });
                self.leaf_into(&mut n);
                if !self.at(";") && !self.at("}") && !self.at_eof() && !self.newline_before() {
                    let e = self.expression(false);
                    n.push(e);
                }
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Keyword, "break") | (TokenKind::Keyword, "continue") => {
                let mut n = SyntaxNode::new(if text == "break" {
                    "break_statement"
                } else {
                    "continue_statement"
                });
                self.leaf_into(&mut n);
                if self.at_kind(TokenKind::Identifier) && !self.newline_before() {
                    let l = self.leaf_as("statement_identifier");
                    n.push(l);
                }
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Keyword, "debugger") => {
                let mut n = SyntaxNode::new("debugger_statement");
                self.leaf_into(&mut n);
                self.semicolon(&mut n);
                n
            }
            (TokenKind::Keyword, "export") => self.export_statement(),
            (TokenKind::Keyword, "import")
                if next_text.as_deref() != Some("(") && next_text.as_deref() != Some(".") =>
            {
                self.opaque_statement()
            }
            (TokenKind::Identifier, _) if next_text.as_deref() == Some(":") => {
                let mut n = SyntaxNode::new("labeled_statement");
                let l = self.leaf_as("statement_identifier");
                n.push(l);
                self.leaf_into(&mut n);
                let s = self.statement();
                n.push(s);
                n
            }
            (TokenKind::Punct, "}") | (TokenKind::Punct, ")") | (TokenKind::Punct, "]") => {
                self.error_token()
            }
            _ => {
                let mut n = SyntaxNode::new("expression_statement");
                let e = self.expression(false);
                n.push(e);
                self.semicolon(&mut n);
                n
            }
        }
    }

    fn leaf_into(&mut self, node: &mut SyntaxNode) {
        let l = self.leaf();
        node.push(l);
    }

    /// Statement kinds this grammar does not model, kept as a flat token run.
    fn opaque_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("opaque_statement");
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            if depth == 0 && !n.children.is_empty() && (t.newline_before || t.text == "}") {
                break;
            }
            let text = t.text.clone();
            self.leaf_into(&mut n);
            match text.as_str() {
                "{" | "(" | "[" => depth += 1,
                "}" | ")" | "]" => depth = depth.saturating_sub(1),
                ";" if depth == 0 => break,
                _ => {}
            }
        }
        n
    }

    fn export_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("export_statement");
        self.leaf_into(&mut n);
        self.eat(&mut n, "default");
        let starts_decl = self.peek().is_some_and(|t| {
            matches!(t.text.as_str(), "var" | "const" | "let" | "function" | "class" | "async")
        });
        if starts_decl {
            let s = self.statement();
            n.push(s);
        } else if self.at("{") || self.at("*") {
            let o = self.opaque_statement();
            n.push(o);
        } else {
            let e = self.expression(false);
            n.push(e);
            self.semicolon(&mut n);
        }
        n
    }

    fn block(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("statement_block");
        self.expect(&mut n, "{");
        while !self.at_eof() && !self.at("}") {
            let before = self.pos;
            let s = self.statement();
            n.push(s);
            if self.pos == before {
                let e = self.error_token();
                n.push(e);
            }
        }
        self.expect(&mut n, "}");
        n
    }

    /// `var`/`let`/`const` with its declarators; no trailing semicolon.
    fn declaration(&mut self, kind: &'static str, no_in: bool) -> SyntaxNode {
        let mut n = SyntaxNode::new(kind);
        let kw = self.contextual();
        n.push(kw);
        loop {
            let mut d = SyntaxNode::new("variable_declarator");
            let target = self.binding_target();
            d.push(target);
            if self.eat(&mut d, "=") {
                let v = self.assignment(no_in);
                d.push(v);
            }
            n.push(d);
            if !self.eat(&mut n, ",") {
                break;
            }
        }
        n
    }

    fn binding_target(&mut self) -> SyntaxNode {
        if self.at("[") {
            self.array()
        } else if self.at("{") {
            self.object()
        } else if self.at_kind(TokenKind::Identifier) {
            self.leaf()
        } else {
            self.error_token()
        }
    }

    fn parenthesized(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("parenthesized_expression");
        self.expect(&mut n, "(");
        if !self.at(")") {
            let e = self.expression(false);
            n.push(e);
        }
        self.expect(&mut n, ")");
        n
    }

    fn if_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("if_statement");
        self.leaf_into(&mut n);
        let c = self.parenthesized();
        n.push(c);
        let s = self.statement();
        n.push(s);
        if self.at("else") {
            let mut e = SyntaxNode::new("else_clause");
            self.leaf_into(&mut e);
            let s = self.statement();
            e.push(s);
            n.push(e);
        }
        n
    }

    fn for_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("for_statement");
        self.leaf_into(&mut n);
        if self.at("await") {
            let a = self.contextual();
            n.push(a);
        }
        self.expect(&mut n, "(");
        // init
        if self.at("var") || self.at("const") || (self.at("let") && !self.peek_at(1).is_some_and(|t| t.text == "in" || t.text == "of")) {
            let kind = if self.at("var") { "variable_declaration" } else { "lexical_declaration" };
            let d = self.declaration(kind, true);
            n.push(d);
        } else if !self.at(";") {
            let e = self.expression(true);
            n.push(e);
        }
        if self.at("of") || self.at("in") {
            n.kind = "for_in_statement";
            let op = self.contextual();
            n.push(op);
            let r = self.expression(false);
            n.push(r);
        } else {
            self.expect(&mut n, ";");
            if !self.at(";") {
                let t = self.expression(false);
                n.push(t);
            }
            self.expect(&mut n, ";");
            if !self.at(")") {
                let u = self.expression(false);
                n.push(u);
            }
        }
        self.expect(&mut n, ")");
        let b = self.statement();
        n.push(b);
        n
    }

    fn switch_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("switch_statement");
        self.leaf_into(&mut n);
        let d = self.parenthesized();
        n.push(d);
        let mut body = SyntaxNode::new("switch_body");
        self.expect(&mut body, "{");
        while !self.at_eof() && !self.at("}") {
            let mut case = if self.at("case") {
                let mut c = SyntaxNode::new("switch_case");
                self.leaf_into(&mut c);
                let e = self.expression(false);
                c.push(e);
                c
            } else if self.at("default") {
                let mut c = SyntaxNode::new("switch_default");
                self.leaf_into(&mut c);
                c
            } else {
                let e = self.error_token();
                body.push(e);
                continue;
            };
            self.expect(&mut case, ":");
            while !self.at_eof() && !self.at("}") && !self.at("case") && !self.at("default") {
                let before = self.pos;
                let s = self.statement();
                case.push(s);
                if self.pos == before {
                    let e = self.error_token();
                    case.push(e);
                }
            }
            body.push(case);
        }
        self.expect(&mut body, "}");
        n.push(body);
        n
    }

    fn try_statement(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("try_statement");
        self.leaf_into(&mut n);
        let b = self.block();
        n.push(b);
        if self.at("catch") {
            let mut c = SyntaxNode::new("catch_clause");
            self.leaf_into(&mut c);
            if self.eat(&mut c, "(") {
                let p = self.binding_target();
                c.push(p);
                self.expect(&mut c, ")");
            }
            let b = self.block();
            c.push(b);
            n.push(c);
        }
        if self.at("finally") {
            let mut f = SyntaxNode::new("finally_clause");
            self.leaf_into(&mut f);
            let b = self.block();
            f.push(b);
            n.push(f);
        }
        n
    }

    fn function(&mut self, kind: &'static str) -> SyntaxNode {
        let mut n = SyntaxNode::new(kind);
        if self.at("async") {
            let a = self.contextual();
            n.push(a);
        }
        self.expect(&mut n, "function");
        self.eat(&mut n, "*");
        if self.at_kind(TokenKind::Identifier) {
            self.leaf_into(&mut n);
        }
        let p = self.parameters();
        n.push(p);
        let b = self.block();
        n.push(b);
        n
    }

    fn parameters(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("formal_parameters");
        self.expect(&mut n, "(");
        while !self.at_eof() && !self.at(")") {
            let before = self.pos;
            let p = self.parameter();
            n.push(p);
            if !self.eat(&mut n, ",") {
                break;
            }
            if self.pos == before {
                break;
            }
        }
        self.expect(&mut n, ")");
        n
    }

    fn parameter(&mut self) -> SyntaxNode {
        if self.at("...") {
            let mut r = SyntaxNode::new("rest_pattern");
            self.leaf_into(&mut r);
            let t = self.binding_target();
            r.push(t);
            return r;
        }
        let target = self.binding_target();
        if self.at("=") {
            let mut a = SyntaxNode::new("assignment_pattern");
            a.push(target);
            self.leaf_into(&mut a);
            let v = self.assignment(false);
            a.push(v);
            a
        } else {
            target
        }
    }

    fn class(&mut self, kind: &'static str) -> SyntaxNode {
        let mut n = SyntaxNode::new(kind);
        self.leaf_into(&mut n);
        if self.at_kind(TokenKind::Identifier) && !self.at("extends") {
            self.leaf_into(&mut n);
        }
        if self.at("extends") {
            let mut h = SyntaxNode::new("class_heritage");
            self.leaf_into(&mut h);
            let e = self.lhs();
            h.push(e);
            n.push(h);
        }
        let mut body = SyntaxNode::new("class_body");
        self.expect(&mut body, "{");
        while !self.at_eof() && !self.at("}") {
            if self.eat(&mut body, ";") {
                continue;
            }
            let before = self.pos;
            let m = self.class_member();
            body.push(m);
            if self.pos == before {
                let e = self.error_token();
                body.push(e);
            }
        }
        self.expect(&mut body, "}");
        n.push(body);
        n
    }

    fn is_modifier(&self) -> bool {
        let Some(t) = self.peek() else { return false };
        let modifier = matches!(t.text.as_str(), "static" | "async" | "get" | "set");
        // `get() {}` names a method called get
        modifier
            && self
                .peek_at(1)
                .is_some_and(|n| !matches!(n.text.as_str(), "(" | "=" | ";" | "}" | ":" | ",") && !n.newline_before)
    }

    fn class_member(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("method_definition");
        while self.is_modifier() {
            let m = self.contextual();
            n.push(m);
        }
        self.eat(&mut n, "*");
        let key = self.property_key();
        n.push(key);
        if self.at("(") {
            let p = self.parameters();
            n.push(p);
            let b = self.block();
            n.push(b);
        } else {
            n.kind = "field_definition";
            if self.eat(&mut n, "=") {
                let v = self.assignment(false);
                n.push(v);
            }
            self.semicolon(&mut n);
        }
        n
    }

    fn property_key(&mut self) -> SyntaxNode {
        match self.peek().map(|t| t.kind) {
            Some(TokenKind::Identifier) | Some(TokenKind::Keyword) => self.leaf_as("property_identifier"),
            Some(TokenKind::String) | Some(TokenKind::Number) => self.leaf(),
            Some(TokenKind::Punct) if self.at("[") => {
                let mut c = SyntaxNode::new("computed_property_name");
                self.leaf_into(&mut c);
                let e = self.assignment(false);
                c.push(e);
                self.expect(&mut c, "]");
                c
            }
            Some(TokenKind::Punct) if self.at("#") => {
                let mut p = SyntaxNode::new("private_property_identifier");
                self.leaf_into(&mut p);
                if self.at_kind(TokenKind::Identifier) || self.at_kind(TokenKind::Keyword) {
                    let l = self.leaf_as("property_identifier");
                    p.push(l);
                }
                p
            }
            _ => self.error_token(),
        }
    }

    // --------------------------------------------------------------- expressions

    fn expression(&mut self, no_in: bool) -> SyntaxNode {
        let first = self.assignment(no_in);
        if !self.at(",") {
            return first;
        }
        let mut n = SyntaxNode::new("sequence_expression");
        n.push(first);
        while self.eat(&mut n, ",") {
            let e = self.assignment(no_in);
            n.push(e);
        }
        n
    }

    /// Index of the token after the `)` matching the `(` at `self.pos + off`.
    fn after_matching_paren(&self, off: usize) -> Option<usize> {
        let mut depth = 0usize;
        let mut i = self.pos + off;
        while let Some(t) = self.tokens.get(i) {
            match t.text.as_str() {
                "(" | "[" | "{" if t.kind == TokenKind::Punct => depth += 1,
                ")" | "]" | "}" if t.kind == TokenKind::Punct => {
                    depth = depth.checked_sub(1)?;
                    if depth == 0 {
                        return Some(i + 1);
                    }
                }
                _ => {}
            }
            i += 1;
        }
        None
    }

    fn arrow_ahead(&self) -> bool {
        let is_arrow = |i: usize| self.tokens.get(i).is_some_and(|t| t.text == "=>" && t.kind == TokenKind::Punct);
        let mut off = 0;
        if self.at("async") && self.peek_at(1).is_some_and(|t| !t.newline_before && (t.kind == TokenKind::Identifier || t.text == "(")) {
            off = 1;
        }
        match self.peek_at(off) {
            Some(t) if t.kind == TokenKind::Identifier => is_arrow(self.pos + off + 1),
            Some(t) if t.text == "(" && t.kind == TokenKind::Punct => {
                self.after_matching_paren(off).is_some_and(is_arrow)
            }
            _ => false,
        }
    }

    fn arrow(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("arrow_function");
        if self.at("async") && !self.peek_at(1).is_some_and(|t| t.text == "=>") {
            let a = self.contextual();
            n.push(a);
        }
        if self.at("(") {
            let p = self.parameters();
            n.push(p);
        } else {
            self.leaf_into(&mut n);
        }
        self.expect(&mut n, "=>");
        if self.at("{") {
            let b = self.block();
            n.push(b);
        } else {
            let e = self.assignment(false);
            n.push(e);
        }
        n
    }

    fn assignment(&mut self, no_in: bool) -> SyntaxNode {
        if !self.enter() {
            return self.error_token();
        }
        let node = self.assignment_inner(no_in);
        self.depth -= 1;
        node
    }

    fn assignment_inner(&mut self, no_in: bool) -> SyntaxNode {
        if self.arrow_ahead() {
            return self.arrow();
        }
        if self.at("yield") && self.peek_at(1).is_some_and(|t| !t.newline_before && !matches!(t.text.as_str(), ")" | "]" | "}" | "," | ";" | ":")) {
            let mut n = SyntaxNode::new("yield_expression");
            let y = self.contextual();
            n.push(y);
            self.eat(&mut n, "*");
            let e = self.assignment(no_in);
            n.push(e);
            return n;
        }
        let left = self.conditional(no_in);
        let op = self.peek().filter(|t| t.kind == TokenKind::Punct).map(|t| t.text.clone());
        match op {
            Some(op) if ASSIGN_OPS.contains(&op.as_str()) => {
                let mut n = SyntaxNode::new(if op == "=" {
                    "assignment_expression"
                } else {
                    "augmented_assignment_expression"
                });
                n.push(left);
                self.leaf_into(&mut n);
                let r = self.assignment(no_in);
                n.push(r);
                n
            }
            _ => left,
        }
    }

    fn conditional(&mut self, no_in: bool) -> SyntaxNode {
        let cond = self.binary(0, no_in);
        if !self.at("?") {
            return cond;
        }
        let mut n = SyntaxNode::new("ternary_expression");
        n.push(cond);
        self.leaf_into(&mut n);
        let a = self.assignment(false);
        n.push(a);
        self.expect(&mut n, ":");
        let b = self.assignment(no_in);
        n.push(b);
        n
    }

    fn binary(&mut self, min_prec: u8, no_in: bool) -> SyntaxNode {
        let mut left = self.unary();
        loop {
            let Some(t) = self.peek() else { break };
            if !matches!(t.kind, TokenKind::Punct | TokenKind::Keyword) || (no_in && t.text == "in") {
                break;
            }
            let Some(prec) = binary_precedence(&t.text) else { break };
            if prec <= min_prec {
                break;
            }
            let mut n = SyntaxNode::new("binary_expression");
            n.push(left);
            self.leaf_into(&mut n);
            // `**` is right associative
            let next_min = if prec == 12 { prec - 1 } else { prec };
            if !self.enter() {
                let e = self.error_token();
                n.push(e);
                return n;
            }
            let right = self.binary(next_min, no_in);
            self.depth -= 1;
            n.push(right);
            left = n;
        }
        left
    }

    fn unary(&mut self) -> SyntaxNode {
        let Some(t) = self.peek() else {
            return self.error_token();
        };
        let text = t.text.clone();
        let is_op = match t.kind {
            TokenKind::Punct => matches!(text.as_str(), "!" | "~" | "+" | "-" | "++" | "--"),
            TokenKind::Keyword => matches!(text.as_str(), "typeof" | "void" | "delete"),
            TokenKind::Identifier => {
                text == "await"
                    && self.peek_at(1).is_some_and(|n| {
                        !matches!(n.text.as_str(), ")" | "]" | "}" | "," | ";" | ":" | "=" | ".")
                    })
            }
            _ => false,
        };
        if !is_op {
            return self.postfix();
        }
        if !self.enter() {
            return self.error_token();
        }
        let kind = match text.as_str() {
            "++" | "--" => "update_expression",
            "await" => "await_expression",
            _ => "unary_expression",
        };
        let mut n = SyntaxNode::new(kind);
        let op = if text == "await" { self.contextual() } else { self.leaf() };
        n.push(op);
        let arg = self.unary();
        n.push(arg);
        self.depth -= 1;
        n
    }

    fn postfix(&mut self) -> SyntaxNode {
        let e = self.lhs();
        if (self.at("++") || self.at("--")) && !self.newline_before() {
            let mut n = SyntaxNode::new("update_expression");
            n.push(e);
            self.leaf_into(&mut n);
            return n;
        }
        e
    }

    fn arguments(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("arguments");
        self.expect(&mut n, "(");
        while !self.at_eof() && !self.at(")") {
            let before = self.pos;
            let a = if self.at("...") {
                let mut s = SyntaxNode::new("spread_element");
                self.leaf_into(&mut s);
                let e = self.assignment(false);
                s.push(e);
                s
            } else {
                self.assignment(false)
            };
            n.push(a);
            if !self.eat(&mut n, ",") || self.pos == before {
                break;
            }
        }
        self.expect(&mut n, ")");
        n
    }

    fn lhs(&mut self) -> SyntaxNode {
        let mut expr = if self.at("new") {
            self.new_expression()
        } else {
            self.primary()
        };
        loop {
            if self.at(".") || self.at("?.") {
                let optional = self.at("?.");
                let mut n = SyntaxNode::new("member_expression");
                n.push(expr);
                self.leaf_into(&mut n);
                if optional && self.at("(") {
                    n.kind = "call_expression";
                    let a = self.arguments();
                    n.push(a);
                } else if optional && self.at("[") {
                    n.kind = "subscript_expression";
                    self.leaf_into(&mut n);
                    let i = self.expression(false);
                    n.push(i);
                    self.expect(&mut n, "]");
                } else {
                    let p = self.property_key();
                    n.push(p);
                }
                expr = n;
            } else if self.at("[") {
                let mut n = SyntaxNode::new("subscript_expression");
                n.push(expr);
                self.leaf_into(&mut n);
                let i = self.expression(false);
                n.push(i);
                self.expect(&mut n, "]");
                expr = n;
            } else if self.at("(") {
                let mut n = SyntaxNode::new("call_expression");
                n.push(expr);
                let a = self.arguments();
                n.push(a);
                expr = n;
            } else if self.at_kind(TokenKind::Template) {
                let mut n = SyntaxNode::new("call_expression");
                n.push(expr);
                self.leaf_into(&mut n);
                expr = n;
            } else {
                break;
            }
        }
        expr
    }

    fn new_expression(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("new_expression");
        self.leaf_into(&mut n);
        if self.eat(&mut n, ".") {
            // new.target
            let p = self.property_key();
            n.push(p);
            return n;
        }
        if !self.enter() {
            let e = self.error_token();
            n.push(e);
            return n;
        }
        let mut callee = if self.at("new") {
            self.new_expression()
        } else {
            self.primary()
        };
        while self.at(".") || self.at("[") {
            let mut m = SyntaxNode::new(if self.at(".") { "member_expression" } else { "subscript_expression" });
            m.push(callee);
            let open = self.at("[");
            self.leaf_into(&mut m);
            if open {
                let i = self.expression(false);
                m.push(i);
                self.expect(&mut m, "]");
            } else {
                let p = self.property_key();
                m.push(p);
            }
            callee = m;
        }
        self.depth -= 1;
        n.push(callee);
        if self.at("(") {
            let a = self.arguments();
            n.push(a);
        }
        n
    }

    fn primary(&mut self) -> SyntaxNode {
        let Some(t) = self.peek() else {
            return self.error_token();
        };
        match t.kind {
            TokenKind::Identifier => {
                if t.text == "async" && self.peek_at(1).is_some_and(|n| n.text == "function" && !n.newline_before) {
                    self.function("function_expression")
                } else {
                    self.leaf()
                }
            }
            TokenKind::Number | TokenKind::String | TokenKind::Template | TokenKind::Regex => self.leaf(),
            TokenKind::Keyword => match t.text.as_str() {
                "this" | "super" | "true" | "false" | "null" => self.leaf(),
                "function" => self.function("function_expression"),
                "class" => self.class("class"),
                "import" => self.leaf(),
                _ => self.error_token(),
            },
            TokenKind::Punct => match t.text.as_str() {
                "(" => self.parenthesized(),
                "[" => self.array(),
                "{" => self.object(),
                ")" | "]" | "}" | ";" | "," => {
                    // missing operand: report without consuming the delimiter
                    self.errors += 1;
                    SyntaxNode::new("ERROR")
                }
                _ => self.error_token(),
            },
            TokenKind::Invalid => self.error_token(),
        }
    }

    fn array(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("array");
        self.expect(&mut n, "[");
        while !self.at_eof() && !self.at("]") {
            if self.eat(&mut n, ",") {
                continue;
            }
            let before = self.pos;
            let e = if self.at("...") {
                let mut s = SyntaxNode::new("spread_element");
                self.leaf_into(&mut s);
                let e = self.assignment(false);
                s.push(e);
                s
            } else {
                self.assignment(false)
            };
            n.push(e);
            if !self.eat(&mut n, ",") || self.pos == before {
                break;
            }
        }
        self.expect(&mut n, "]");
        n
    }

    fn object(&mut self) -> SyntaxNode {
        let mut n = SyntaxNode::new("object");
        self.expect(&mut n, "{");
        while !self.at_eof() && !self.at("}") {
            let before = self.pos;
            let member = self.object_member();
            n.push(member);
            if !self.eat(&mut n, ",") || self.pos == before {
                break;
            }
        }
        self.expect(&mut n, "}");
        n
    }

    fn object_member(&mut self) -> SyntaxNode {
        if self.at("...") {
            let mut s = SyntaxNode::new("spread_element");
            self.leaf_into(&mut s);
            let e = self.assignment(false);
            s.push(e);
            return s;
        }
        let shorthand = self.at_kind(TokenKind::Identifier)
            && self
                .peek_at(1)
                .is_some_and(|t| matches!(t.text.as_str(), "," | "}" | "="));
        if shorthand {
            let id = self.leaf();
            if self.at("=") {
                let mut a = SyntaxNode::new("assignment_pattern");
                a.push(id);
                self.leaf_into(&mut a);
                let v = self.assignment(false);
                a.push(v);
                return a;
            }
            return id;
        }
        let mut m = SyntaxNode::new("pair");
        let mut method = false;
        while self.is_modifier() {
            let k = self.contextual();
            m.push(k);
            method = true;
        }
        if self.eat(&mut m, "*") {
            method = true;
        }
        let key = self.property_key();
        m.push(key);
        if self.at("(") {
            m.kind = "method_definition";
            let p = self.parameters();
            m.push(p);
            let b = self.block();
            m.push(b);
        } else if !method {
            self.expect(&mut m, ":");
            let v = self.assignment(false);
            m.push(v);
        }
        m
    }
}

pub fn parse(source: &str) -> SyntaxTree {
    let (tokens, lex_errors) = tokenize(source);
    let mut p = Parser {
        tokens,
        pos: 0,
        errors: lex_errors,
        depth: 0,
    };
    let mut root = p.program();
    root.number(0);
    SyntaxTree {
        parse_ok: p.errors == 0,
        error_count: p.errors,
        root,
    }
}
