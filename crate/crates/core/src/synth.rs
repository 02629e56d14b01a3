//! Synthetic CodeSearchNet-shaped corpus for offline runs.
//!
//! Test-partition domains draw identifiers and docstring words from their
//! own theme and follow their own code conventions, so in-domain examples
//! resemble each other. Every test record
//! also has a lightly perturbed copy planted in some training repository,
//! which is what nearest-neighbor retrieval should find.

use serde::{Deserialize, Serialize};

use crate::corpus::{CodeRecord, CorpusStore, Partition};
use crate::jsparse::token_texts;
use crate::rng::SeededRng;

const VERBS: &[&str] = &[
    "get", "set", "parse", "build", "load", "save", "find", "update", "remove", "create", "format", "check",
];

const THEMES: &[&[&str]] = &[
    &["user", "session", "token", "login", "account", "profile", "password"],
    &["matrix", "vector", "row", "column", "scale", "determinant", "norm"],
    &["request", "response", "header", "route", "status", "cookie", "socket"],
    &["file", "path", "directory", "stream", "buffer", "encoding", "chunk"],
    &["color", "pixel", "canvas", "shape", "layer", "gradient", "sprite"],
    &["order", "invoice", "price", "cart", "discount", "payment", "customer"],
    &["node", "edge", "graph", "weight", "visit", "queue", "parent"],
    &["date", "hour", "minute", "timezone", "calendar", "interval", "week"],
    &["query", "table", "record", "index", "schema", "cursor", "column"],
    &["event", "listener", "emitter", "handler", "signal", "payload", "topic"],
    &["config", "option", "setting", "default", "flag", "profile", "env"],
    &["image", "thumbnail", "width", "height", "crop", "ratio", "format"],
];

const FILLER: &[&str] = &["the", "given", "a", "from", "for", "with", "new", "current"];

/// Docstring phrasing conventions, one per organization. `V`/`v` is the verb
/// (capitalized or not), `N`/`O`/`T` theme words, `F` a random filler word;
/// anything else is literal.
const DOC_STYLES: &[&[&str]] = &[
    &["V", "F", "N", "F", "F", "O", "T"],
    &["V", "N", "entries", "F", "O", "T", "when", "available"],
    &["Helper", "that", "will", "v", "F", "N", "and", "O"],
    &["Internal", "method", "to", "v", "F", "N", "by", "O", "T"],
    &["Tries", "to", "v", "N", "F", "O", "or", "returns", "nothing"],
    &["V", "N", "using", "F", "O", "T", "settings"],
];

/// Code conventions, one per organization: three function shapes each.
/// `$F` function name, `$A` argument, `$L` list field, `$T`/`$O`/`$N` theme
/// words, `$V` verb.
const CODE_STYLES: &[&[&str]] = &[
    &[
        "function $F($A, opts) {\n  var $T = this.$L[$A];\n  if (!$T) {\n    return null;\n  }\n  return $T.$O;\n}",
        "function $F($A) {\n  var out = [];\n  for (var i = 0; i < $A.length; i++) {\n    out.push($A[i].$N);\n  }\n  return out;\n}",
        "function $F($A, cb) {\n  this.$L.$V($A, function (err, $N) {\n    cb(err, $N);\n  });\n}",
    ],
    &[
        "const $F = ($A) => {\n  const $T = this.$L.find((x) => x.id === $A);\n  return $T ? $T.$O : undefined;\n};",
        "const $F = ($A) => $A.map((item) => item.$N).filter(Boolean);",
        "const $F = async ($A) => {\n  const $N = await this.$L.$V($A);\n  return $N;\n};",
    ],
    &[
        "function $F ($A) {\n  let $T = this.$L[$A]\n  if ($T == null) return\n  return $T.$O\n}",
        "function $F ($A) {\n  let out = []\n  $A.forEach(function (item) { out.push(item.$N) })\n  return out\n}",
        "function $F ($A) {\n  return this.$L.$V($A).then(function ($N) { return $N })\n}",
    ],
    &[
        "$F: function($A) {\n    if (typeof $A !== 'string') {\n        throw new TypeError('$O');\n    }\n    return this.$L[$A].$O;\n}",
        "$F: function($A) {\n    var self = this, result = {};\n    Object.keys($A).forEach(function(key) {\n        result[key] = $A[key].$N;\n    });\n    return result;\n}",
        "$F: function($A, done) {\n    var self = this;\n    self.$L.$V($A, function(error, $N) {\n        if (error) { return done(error); }\n        done(null, $N);\n    });\n}",
    ],
    &[
        "export function $F($A) {\n  try {\n    return this.$L.get($A).$O;\n  } catch (e) {\n    return null;\n  }\n}",
        "export function $F($A) {\n  const out = new Map();\n  for (const item of $A) {\n    out.set(item.id, item.$N);\n  }\n  return out;\n}",
        "export async function $F($A) {\n  const { $N } = await this.$L.$V($A);\n  return $N;\n}",
    ],
    &[
        "$F($A) {\n    const $T = this.$L.get($A);\n    switch ($T.$O) {\n        case undefined:\n            return null;\n        default:\n            return $T.$O;\n    }\n}",
        "$F($A) {\n    let i = $A.length;\n    const out = [];\n    while (i--) {\n        out.unshift($A[i].$N);\n    }\n    return out;\n}",
        "$F($A) {\n    return new Promise((resolve, reject) => {\n        this.$L.$V($A, (err, $N) => (err ? reject(err) : resolve($N)));\n    });\n}",
    ],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Test-partition organizations, one repository and folder each.
    pub test_orgs: usize,
    pub records_per_test_domain: usize,
    pub train_orgs: usize,
    pub records_per_train_org: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            test_orgs: 2,
            records_per_test_domain: 100,
            train_orgs: 10,
            records_per_train_org: 200,
        }
    }
}

fn camel(words: &[&str]) -> String {
    let mut s = words[0].to_string();
    for w in &words[1..] {
        let mut c = w.chars();
        if let Some(f) = c.next() {
            s.extend(f.to_uppercase());
            s.push_str(c.as_str());
        }
    }
    s
}

struct Sample {
    func: String,
    code: String,
    doc: String,
}

fn pick<'a>(rng: &mut SeededRng, xs: &[&'a str]) -> &'a str {
    xs[rng.below(xs.len())]
}

fn sample(rng: &mut SeededRng, theme: &[&str], style: &[&str], code_style: &[&str], serial: usize) -> Sample {
    let verb = pick(rng, VERBS);
    let noun = pick(rng, theme);
    let other = pick(rng, theme);
    let third = pick(rng, theme);
    let func = format!("{}{serial}", camel(&[verb, noun]));
    let arg = camel(&[other, "value"]);
    let field = camel(&[third, "list"]);
    let template = code_style[rng.below(code_style.len())];
    let body = template
        .replace("$F", &func)
        .replace("$A", &arg)
        .replace("$L", &field)
        .replace("$T", third)
        .replace("$O", other)
        .replace("$N", noun)
        .replace("$V", verb);
    let words: Vec<String> = style
        .iter()
        .map(|w| match *w {
            "V" => capitalize(verb),
            "v" => verb.to_string(),
            "N" => noun.to_string(),
            "O" => other.to_string(),
            "T" => third.to_string(),
            "F" => pick(rng, FILLER).to_string(),
            lit => lit.to_string(),
        })
        .collect();
    Sample {
        func,
        code: body,
        doc: words.join(" "),
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Renames the function and redraws one docstring filler word.
fn perturb(rng: &mut SeededRng, s: &Sample, serial: usize) -> Sample {
    let func = format!("{}Copy{serial}", s.func);
    let code = s.code.replacen(&s.func, &func, 1);
    let mut words: Vec<String> = s.doc.split(' ').map(str::to_string).collect();
    let fillers: Vec<usize> = (0..words.len()).filter(|&i| FILLER.contains(&words[i].as_str())).collect();
    if !fillers.is_empty() {
        let slot = fillers[rng.below(fillers.len())];
        words[slot] = pick(rng, FILLER).to_string();
    }
    Sample {
        func,
        code,
        doc: words.join(" "),
    }
}

fn record(repo: &str, path: &str, s: &Sample, partition: Partition) -> CodeRecord {
    let doc_tokens = s.doc.split(' ').map(str::to_string).collect();
    CodeRecord::new(repo, path, &s.func, &s.code, &s.doc, token_texts(&s.code), doc_tokens, partition)
}

/// Builds the corpus. Test organizations use themes `0..test_orgs`; training
/// organizations cycle through the remaining themes. Docstring and code
/// conventions are assigned round-robin over all organizations.
pub fn synthetic_corpus(cfg: &SynthConfig) -> CorpusStore {
    let mut rng = SeededRng::new("synth", cfg.seed);
    let mut records = Vec::new();
    let mut planted = Vec::new();
    let mut serial = 0usize;
    for t in 0..cfg.test_orgs {
        let theme = THEMES[t % THEMES.len()];
        let style = DOC_STYLES[t % DOC_STYLES.len()];
        let code_style = CODE_STYLES[t % CODE_STYLES.len()];
        let repo = format!("testorg{t}/{}-kit", theme[0]);
        for i in 0..cfg.records_per_test_domain {
            serial += 1;
            let s = sample(&mut rng, theme, style, code_style, serial);
            let path = format!("lib/{}/{}.js", theme[1], i % 7);
            records.push(record(&repo, &path, &s, Partition::Test));
            planted.push(perturb(&mut rng, &s, serial));
        }
    }
    let train_themes = THEMES.len() - cfg.test_orgs.min(THEMES.len() - 1);
    for o in 0..cfg.train_orgs {
        let theme = THEMES[cfg.test_orgs.min(THEMES.len() - 1) + o % train_themes];
        let style = DOC_STYLES[(cfg.test_orgs + o) % DOC_STYLES.len()];
        let code_style = CODE_STYLES[(cfg.test_orgs + o) % CODE_STYLES.len()];
        let repo = format!("trainorg{o}/{}-utils", theme[0]);
        for i in 0..cfg.records_per_train_org {
            serial += 1;
            let s = sample(&mut rng, theme, style, code_style, serial);
            records.push(record(&repo, &format!("src/{}.js", i % 5), &s, Partition::Train));
        }
    }
    // near-duplicates spread over their own training organizations
    for (i, s) in planted.iter().enumerate() {
        let repo = format!("mirror{}/vendor", i % 5);
        records.push(record(&repo, &format!("copied/{}.js", i % 9), s, Partition::Train));
    }
    CorpusStore::from_records(records).0
}
