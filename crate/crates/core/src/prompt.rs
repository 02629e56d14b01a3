//! Instruction templates, prompt rendering under a token budget, and the
//! inverse parse used by the offline mock model.
//!
//! The template catalog ships as `data/templates.json`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

pub const DEFAULT_BUDGET: usize = 4096;
pub const DEFAULT_MAX_DEMOS: usize = 8;
pub const DEFAULT_OUTPUT_MARGIN: usize = 256;
pub const DEFAULT_ORDERS: usize = 5;

const TEXT_SLOT: &str = "{text}";
const CODE_SLOT: &str = "{code}";
const DEMO_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("instruction and query need {estimate} tokens, budget is {budget}")]
    QueryTooLarge { estimate: usize, budget: usize },
    #[error("no {style:?} template for {task:?} with index {index}")]
    UnknownVariant { task: Task, style: Style, index: usize },
    #[error("malformed template {0:?}")]
    MalformedTemplate(String),
}

pub type Result<T> = std::result::Result<T, PromptError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Summarize,
    Generate,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Summarize, Task::Generate];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Summarize => "summarize",
            Task::Generate => "generate",
        }
    }

    /// Slot holding the model input; the other slot is the answer.
    fn input_slot(self) -> &'static str {
        match self {
            Task::Summarize => CODE_SLOT,
            Task::Generate => TEXT_SLOT,
        }
    }

    fn answer_slot(self) -> &'static str {
        match self {
            Task::Summarize => TEXT_SLOT,
            Task::Generate => CODE_SLOT,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "summarize" | "summarization" => Ok(Task::Summarize),
            "generate" | "generation" => Ok(Task::Generate),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Completion,
    Chat,
}

impl std::str::FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "completion" => Ok(Style::Completion),
            "chat" => Ok(Style::Chat),
            _ => Err(format!("unknown prompt style {s:?}")),
        }
    }
}

/// One (text, code) pair shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub code: String,
}

impl Demonstration {
    pub fn new(text: impl Into<String>, code: impl Into<String>) -> Self {
        Demonstration {
            text: text.into(),
            code: code.into(),
        }
    }

    pub fn input(&self, task: Task) -> &str {
        match task {
            Task::Summarize => &self.code,
            Task::Generate => &self.text,
        }
    }

    pub fn answer(&self, task: Task) -> &str {
        match task {
            Task::Summarize => &self.text,
            Task::Generate => &self.code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub task: Task,
    pub style: Style,
    pub text: String,
    pub demo_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_message: Option<String>,
    /// Chat style only: line introducing the demonstrations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_header: Option<String>,
}

/// A demo template split around its two slots.
struct TemplateParts<'a> {
    prefix: &'a str,
    middle: &'a str,
    suffix: &'a str,
}

impl InstructionTemplate {
    fn parts(&self) -> Result<TemplateParts<'_>> {
        let t = &self.demo_template;
        let bad = || PromptError::MalformedTemplate(t.clone());
        let i = t.find(self.task.input_slot()).ok_or_else(bad)?;
        let a = t.find(self.task.answer_slot()).ok_or_else(bad)?;
        if a < i + self.task.input_slot().len() {
            return Err(bad());
        }
        Ok(TemplateParts {
            prefix: &t[..i],
            middle: &t[i + self.task.input_slot().len()..a],
            suffix: &t[a + self.task.answer_slot().len()..],
        })
    }

    /// Where a completion model starts inventing the next demonstration.
    /// Chat replies need no stop sequence.
    pub fn stop_sequences(&self) -> Vec<String> {
        match (self.style, self.parts()) {
            (Style::Completion, Ok(p)) => vec![format!("{DEMO_SEPARATOR}{}", p.prefix.trim_end())],
            _ => Vec::new(),
        }
    }

    pub fn render_demo(&self, d: &Demonstration) -> String {
        self.demo_template.replace(TEXT_SLOT, &d.text).replace(CODE_SLOT, &d.code)
    }

    /// The demo template filled with the query and cut at its answer slot.
    /// Trailing spaces are dropped so the model does not start after a blank.
    fn render_query(&self, input: &str) -> Result<String> {
        let p = self.parts()?;
        Ok(format!("{}{}{}", p.prefix, input, p.middle.trim_end_matches(' ')))
    }

    /// (system message, body) for the given demonstrations and query input.
    fn render_body(&self, demos: &[Demonstration], input: &str) -> Result<(Option<String>, String)> {
        let mut body = String::new();
        match self.style {
            Style::Completion => {
                body.push_str(&self.text);
                body.push('\n');
                for d in demos {
                    body.push_str(&self.render_demo(d));
                }
                body.push_str(&self.render_query(input)?);
            }
            Style::Chat => {
                if !demos.is_empty() {
                    body.push_str(self.demo_header.as_deref().unwrap_or(""));
                    for d in demos {
                        body.push_str(&self.render_demo(d));
                    }
                }
                body.push_str(&self.text);
                body.push_str(input);
            }
        }
        Ok((self.system_message.clone(), body))
    }

    /// Splits a rendered body back into demonstrations and the query input.
    /// Returns `None` when the body was not produced by this template.
    pub fn parse_body(&self, body: &str) -> Option<(Vec<Demonstration>, String)> {
        let p = self.parts().ok()?;
        match self.style {
            Style::Completion => {
                let rest = body.strip_prefix(self.text.as_str())?.strip_prefix('\n')?;
                let tail = p.middle.trim_end_matches(' ');
                let mut segments = split_demos(rest, p.prefix);
                let query = segments.pop()?;
                let input = query.strip_prefix(p.prefix)?.strip_suffix(tail)?;
                let demos = segments
                    .into_iter()
                    .map(|s| self.parse_demo(s, &p))
                    .collect::<Option<Vec<_>>>()?;
                Some((demos, input.to_string()))
            }
            Style::Chat => {
                let at = body.rfind(self.text.as_str())?;
                let input = &body[at + self.text.len()..];
                let head = &body[..at];
                if head.is_empty() {
                    return Some((Vec::new(), input.to_string()));
                }
                let head = head.strip_prefix(self.demo_header.as_deref().unwrap_or(""))?;
                let demos = split_demos(head, p.prefix)
                    .into_iter()
                    .map(|s| self.parse_demo(s, &p))
                    .collect::<Option<Vec<_>>>()?;
                Some((demos, input.to_string()))
            }
        }
    }

    fn parse_demo(&self, segment: &str, p: &TemplateParts) -> Option<Demonstration> {
        let inner = segment.strip_prefix(p.prefix)?.strip_suffix(p.suffix)?;
        let cut = inner.find(p.middle)?;
        let (input, answer) = (&inner[..cut], &inner[cut + p.middle.len()..]);
        Some(match self.task {
            Task::Summarize => Demonstration::new(answer, input),
            Task::Generate => Demonstration::new(input, answer),
        })
    }
}

/// Cuts `s` before every occurrence of separator + prefix. Every segment but
/// the last keeps its trailing separator.
fn split_demos<'a>(s: &'a str, prefix: &str) -> Vec<&'a str> {
    let boundary = format!("{DEMO_SEPARATOR}{prefix}");
    let mut out = Vec::new();
    let mut start = 0;
    let mut from = 0;
    while let Some(off) = s[from..].find(&boundary) {
        let cut = from + off + DEMO_SEPARATOR.len();
        out.push(&s[start..cut]);
        start = cut;
        from = cut;
    }
    out.push(&s[start..]);
    out
}

#[derive(Deserialize)]
struct CompletionFamily {
    task: Task,
    instructions: Vec<String>,
    demo_templates: Vec<String>,
}

#[derive(Deserialize)]
struct ChatFamily {
    task: Task,
    system_message: String,
    instruction: String,
    demo_header: String,
    demo_template: String,
}

#[derive(Deserialize)]
struct CatalogFile {
    completion: Vec<CompletionFamily>,
    chat: Vec<ChatFamily>,
}

/// Every instruction variant. Completion style crosses each instruction with
/// each demonstration template of the same task.
pub fn catalog() -> &'static [InstructionTemplate] {
    static CATALOG: OnceLock<Vec<InstructionTemplate>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let file: CatalogFile =
            serde_json::from_str(include_str!("../data/templates.json")).expect("bundled template catalog");
        let mut out = Vec::new();
        for fam in file.completion {
            for text in &fam.instructions {
                for demo in &fam.demo_templates {
                    out.push(InstructionTemplate {
                        task: fam.task,
                        style: Style::Completion,
                        text: text.clone(),
                        demo_template: demo.clone(),
                        system_message: None,
                        demo_header: None,
                    });
                }
            }
        }
        for fam in file.chat {
            out.push(InstructionTemplate {
                task: fam.task,
                style: Style::Chat,
                text: fam.instruction,
                demo_template: fam.demo_template,
                system_message: Some(fam.system_message),
                demo_header: Some(fam.demo_header),
            });
        }
        out
    })
}

pub fn variants(task: Task, style: Style) -> Vec<&'static InstructionTemplate> {
    catalog().iter().filter(|t| t.task == task && t.style == style).collect()
}

pub fn variant(task: Task, style: Style, index: usize) -> Result<&'static InstructionTemplate> {
    variants(task, style)
        .get(index)
        .copied()
        .ok_or(PromptError::UnknownVariant { task, style, index })
}

/// Token count surrogate: a quarter of the UTF-8 length, plus 10%, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    let quarter = text.len().div_ceil(4);
    (quarter * 11).div_ceil(10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Demonstrations appear in the order given.
    #[default]
    AsGiven,
    /// Input is most-similar-first; the kept demonstrations are reversed so
    /// the most similar one sits next to the query.
    MostSimilarLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub budget: usize,
    pub max_demos: usize,
    pub output_margin: usize,
    pub placement: Placement,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            budget: DEFAULT_BUDGET,
            max_demos: DEFAULT_MAX_DEMOS,
            output_margin: DEFAULT_OUTPUT_MARGIN,
            placement: Placement::AsGiven,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instruction: InstructionTemplate,
    /// In rendered order.
    pub demonstrations: Vec<Demonstration>,
    pub query: String,
    /// The completion prompt, or the chat user message.
    pub rendered: String,
    pub system_message: Option<String>,
    pub token_estimate: usize,
}

fn estimate_parts(system: Option<&str>, body: &str) -> usize {
    match system {
        Some(s) => estimate_tokens(&format!("{s}\n\n{body}")),
        None => estimate_tokens(body),
    }
}

/// Renders a prompt, keeping the longest prefix of `demonstrations` that
/// stays within `budget - output_margin` tokens and `max_demos`.
pub fn render_prompt(
    instruction: &InstructionTemplate,
    demonstrations: &[Demonstration],
    query: &str,
    opts: &RenderOptions,
) -> Result<Prompt> {
    let (system, base) = instruction.render_body(&[], query)?;
    let base_estimate = estimate_parts(system.as_deref(), &base);
    if base_estimate > opts.budget {
        return Err(PromptError::QueryTooLarge {
            estimate: base_estimate,
            budget: opts.budget,
        });
    }
    let limit = opts.budget.saturating_sub(opts.output_margin);
    let mut kept = 0;
    while kept < demonstrations.len().min(opts.max_demos) {
        let (s, body) = instruction.render_body(&demonstrations[..=kept], query)?;
        if estimate_parts(s.as_deref(), &body) > limit {
            break;
        }
        kept += 1;
    }
    let mut demos = demonstrations[..kept].to_vec();
    if opts.placement == Placement::MostSimilarLast {
        demos.reverse();
    }
    let (system, rendered) = instruction.render_body(&demos, query)?;
    let token_estimate = estimate_parts(system.as_deref(), &rendered);
    Ok(Prompt {
        instruction: instruction.clone(),
        demonstrations: demos,
        query: query.to_string(),
        rendered,
        system_message: system,
        token_estimate,
    })
}

/// A rendered prompt taken apart again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub task: Task,
    pub demonstrations: Vec<Demonstration>,
    pub query: String,
}

/// Recognizes a rendered prompt produced from the bundled catalog.
pub fn parse_rendered(system_message: Option<&str>, body: &str) -> Option<ParsedPrompt> {
    catalog()
        .iter()
        .filter(|t| t.system_message.as_deref() == system_message)
        .find_map(|t| {
            t.parse_body(body).map(|(demonstrations, query)| ParsedPrompt {
                task: t.task,
                demonstrations,
                query,
            })
        })
}

/// `n_orders` orderings of `items`: the first is the given order, the rest
/// are seeded shuffles.
pub fn shuffle_orders<T: Clone>(items: &[T], n_orders: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = SeededRng::new("demo-orders", seed);
    (0..n_orders)
        .map(|i| {
            let mut v = items.to_vec();
            if i > 0 {
                rng.shuffle(&mut v);
            }
            v
        })
        .collect()
}
