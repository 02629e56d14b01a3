//! JavaScript tokenizer. Never fails: unknown characters become `Invalid`
//! tokens and unterminated literals run to the end of their line or input.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    String,
    Template,
    Regex,
    Punct,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub start: usize,
    pub end: usize,
    /// A line terminator occurs between the previous token and this one.
    pub newline_before: bool,
}

pub const KEYWORDS: &[&str] = &[
    "break", "case", "catch", "class", "const", "continue", "debugger", "default", "delete", "do",
    "else", "enum", "export", "extends", "false", "finally", "for", "function", "if", "import",
    "in", "instanceof", "new", "null", "return", "super", "switch", "this", "throw", "true", "try",
    "typeof", "var", "void", "while", "with",
];

/// Identifiers that act as keywords in some positions.
pub const CONTEXTUAL: &[&str] = &[
    "let", "static", "yield", "await", "async", "of", "get", "set", "from", "as",
];

pub const PUNCTUATORS: &[&str] = &[
    ">>>=", "...", "===", "!==", "**=", "<<=", ">>=", ">>>", "&&=", "||=", "??=", "=>", "==", "!=",
    "<=", ">=", "&&", "||", "??", "?.", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "<<", ">>", "**", "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/", "%",
    "&", "|", "^", "!", "~", "?", ":", "=", ".", "@", "#",
];

/// Keywords after which a `/` starts a regular expression.
const REGEX_AFTER_KEYWORD: &[&str] = &[
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void", "throw", "case", "do",
    "else", "yield", "await",
];

/// Interned `'static` name for a keyword, contextual keyword or punctuator.
pub fn static_name(text: &str) -> Option<&'static str> {
    KEYWORDS
        .iter()
        .chain(CONTEXTUAL)
        .chain(PUNCTUATORS)
        .find(|k| **k == text)
        .copied()
}

fn is_id_start(c: char) -> bool {
    c == '$' || c == '_' || c.is_alphabetic()
}

fn is_id_continue(c: char) -> bool {
    c == '$' || c == '_' || c.is_alphanumeric() || c == '\u{200c}' || c == '\u{200d}'
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    tokens: Vec<Token>,
    newline: bool,
    errors: usize,
}

impl<'a> Lexer<'a> {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).map(|&(_, c)| c)
    }

    fn offset(&self, idx: usize) -> usize {
        self.chars.get(idx).map_or(self.src.len(), |&(o, _)| o)
    }

    fn push(&mut self, kind: TokenKind, start_idx: usize) {
        let (start, end) = (self.offset(start_idx), self.offset(self.pos));
        self.tokens.push(Token {
            kind,
            text: self.src[start..end].to_string(),
            start,
            end,
            newline_before: self.newline,
        });
        self.newline = false;
    }

    fn regex_allowed(&self) -> bool {
        match self.tokens.last() {
            None => true,
            Some(t) => match t.kind {
                TokenKind::Punct => !matches!(t.text.as_str(), ")" | "]" | "}" | "++" | "--"),
                TokenKind::Keyword => REGEX_AFTER_KEYWORD.contains(&t.text.as_str()),
                TokenKind::Identifier => REGEX_AFTER_KEYWORD.contains(&t.text.as_str()),
                _ => false,
            },
        }
    }

    fn run(mut self) -> (Vec<Token>, usize) {
        while let Some(c) = self.peek(0) {
            let start = self.pos;
            if c == '\n' || c == '\r' || c == '\u{2028}' || c == '\u{2029}' {
                self.newline = true;
                self.pos += 1;
            } else if c.is_whitespace() || c == '\u{feff}' {
                self.pos += 1;
            } else if c == '/' && self.peek(1) == Some('/') {
                self.skip_line();
            } else if c == '/' && self.peek(1) == Some('*') {
                self.skip_block_comment();
            } else if c == '#' && self.pos == 0 && self.peek(1) == Some('!') {
                self.skip_line();
            } else if is_id_start(c) {
                while self.peek(0).is_some_and(is_id_continue) {
                    self.pos += 1;
                }
                let (s, e) = (self.offset(start), self.offset(self.pos));
                let kind = if KEYWORDS.contains(&&self.src[s..e]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                self.push(kind, start);
            } else if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
                self.number();
                self.push(TokenKind::Number, start);
            } else if c == '"' || c == '\'' {
                self.string(c);
                self.push(TokenKind::String, start);
            } else if c == '`' {
                self.pos += 1;
                self.template_rest();
                self.push(TokenKind::Template, start);
            } else if c == '/' && self.regex_allowed() && self.try_regex() {
                self.push(TokenKind::Regex, start);
            } else if let Some(p) = self.punct() {
                self.pos += p.chars().count();
                self.push(TokenKind::Punct, start);
            } else {
                self.pos += 1;
                self.errors += 1;
                self.push(TokenKind::Invalid, start);
            }
        }
        (self.tokens, self.errors)
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek(0) {
            if c == '\n' || c == '\r' {
                break;
            }
            self.pos += 1;
        }
    }

    fn skip_block_comment(&mut self) {
        self.pos += 2;
        loop {
            match self.peek(0) {
                None => {
                    self.errors += 1;
                    return;
                }
                Some('*') if self.peek(1) == Some('/') => {
                    self.pos += 2;
                    return;
                }
                Some(c) => {
                    if c == '\n' || c == '\r' {
                        self.newline = true;
                    }
                    self.pos += 1;
                }
            }
        }
    }

    fn number(&mut self) {
        if self.peek(0) == Some('0') && self.peek(1).is_some_and(|c| "xXoObB".contains(c)) {
            self.pos += 2;
            while self.peek(0).is_some_and(|c| c.is_ascii_hexdigit() || c == '_') {
                self.pos += 1;
            }
        } else {
            while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_' || c == '.') {
                self.pos += 1;
            }
            if self.peek(0).is_some_and(|c| c == 'e' || c == 'E') {
                let sign = self.peek(1).is_some_and(|c| c == '+' || c == '-');
                let digit_at = if sign { 2 } else { 1 };
                if self.peek(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += digit_at;
                    while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
                        self.pos += 1;
                    }
                }
            }
        }
        if self.peek(0) == Some('n') {
            self.pos += 1;
        }
    }

    fn string(&mut self, quote: char) {
        self.pos += 1;
        loop {
            match self.peek(0) {
                None | Some('\n') | Some('\r') => {
                    self.errors += 1;
                    return;
                }
                Some('\\') => self.pos += 2.min(self.chars.len() - self.pos),
                Some(c) => {
                    self.pos += 1;
                    if c == quote {
                        return;
                    }
                }
            }
        }
    }

    /// Consumes a template body after the opening backtick, including nested
    /// `${ ... }` substitutions.
    fn template_rest(&mut self) {
        loop {
            match self.peek(0) {
                None => {
                    self.errors += 1;
                    return;
                }
                Some('\\') => self.pos += 2.min(self.chars.len() - self.pos),
                Some('`') => {
                    self.pos += 1;
                    return;
                }
                Some('$') if self.peek(1) == Some('{') => {
                    self.pos += 2;
                    self.substitution();
                }
                Some(_) => self.pos += 1,
            }
        }
    }

    fn substitution(&mut self) {
        let mut depth = 1usize;
        while let Some(c) = self.peek(0) {
            match c {
                '{' => {
                    depth += 1;
                    self.pos += 1;
                }
                '}' => {
                    self.pos += 1;
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                '"' | '\'' => self.string(c),
                '`' => {
                    self.pos += 1;
                    self.template_rest();
                }
                _ => self.pos += 1,
            }
        }
    }

    fn try_regex(&mut self) -> bool {
        let save = self.pos;
        self.pos += 1;
        let mut in_class = false;
        loop {
            match self.peek(0) {
                None | Some('\n') | Some('\r') => {
                    self.pos = save;
                    return false;
                }
                Some('\\') => self.pos += 2,
                Some('[') => {
                    in_class = true;
                    self.pos += 1;
                }
                Some(']') => {
                    in_class = false;
                    self.pos += 1;
                }
                Some('/') if !in_class => {
                    self.pos += 1;
                    break;
                }
                Some(_) => self.pos += 1,
            }
        }
        while self.peek(0).is_some_and(is_id_continue) {
            self.pos += 1;
        }
        true
    }

    fn punct(&self) -> Option<&'static str> {
        let rest = &self.src[self.offset(self.pos)..];
        PUNCTUATORS.iter().copied().find(|p| {
            rest.starts_with(p)
                // `a?.5:b` is a conditional, not optional chaining
                && !(*p == "?." && rest[2..].starts_with(|c: char| c.is_ascii_digit()))
        })
    }
}

/// Tokenizes `src`, skipping whitespace and comments. Returns the tokens and
/// the number of lexical errors encountered.
pub fn tokenize(src: &str) -> (Vec<Token>, usize) {
    Lexer {
        src,
        chars: src.char_indices().collect(),
        pos: 0,
        tokens: Vec::new(),
        newline: false,
        errors: 0,
    }
    .run()
}

/// Token texts only; used as the code tokenizer for n-gram metrics.
pub fn token_texts(src: &str) -> Vec<String> {
    tokenize(src).0.into_iter().map(|t| t.text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        token_texts(src)
    }

    #[test]
    fn basic_tokens() {
        assert_eq!(texts("var x = 1;"), ["var", "x", "=", "1", ";"]);
        assert_eq!(texts("a >>>= b?.c ?? d"), ["a", ">>>=", "b", "?.", "c", "??", "d"]);
        assert_eq!(texts("x = a ? .5 : 1"), ["x", "=", "a", "?", ".5", ":", "1"]);
    }

    #[test]
    fn comments_and_layout_are_skipped() {
        assert_eq!(texts("a /* c */ + // d\n b"), ["a", "+", "b"]);
        let (toks, _) = tokenize("a\nb");
        assert!(toks[1].newline_before);
    }

    #[test]
    fn regex_versus_division() {
        assert_eq!(texts("x = a / b / c"), ["x", "=", "a", "/", "b", "/", "c"]);
        assert_eq!(texts("x = /ab[/]c/g.test(s)"), ["x", "=", "/ab[/]c/g", ".", "test", "(", "s", ")"]);
        assert_eq!(tokenize("return /x/").0[1].kind, TokenKind::Regex);
    }

    #[test]
    fn templates_are_single_tokens() {
        assert_eq!(texts("f(`a ${b + `c${d}`} e`)"), ["f", "(", "`a ${b + `c${d}`} e`", ")"]);
    }

    #[test]
    fn unterminated_literals_count_errors() {
        let (toks, errs) = tokenize("'abc\nx");
        assert_eq!(errs, 1);
        assert_eq!(toks.len(), 2);
        assert_eq!(tokenize("\u{1}").1, 1);
    }
}
