//! Prompt templates and deterministic rendering of queries, histories and
//! options.
//!
//! Template syntax, line by line:
//!
//! * `{Identifier}` is replaced by the bound value.
//! * A line holding only a history identifier (`{Nearest Events}` and the
//!   like) is a block: it expands to a `[Identifier]` header plus the rendered
//!   history, and disappears when that history is inactive or empty.
//! * A line prefixed with `?[Identifier] ` is kept only when the identifier is
//!   active for the current mode and format.
//! * `{format: text=.. | graph=.. | mixed=..}` and `{task: object=.. | relation=..}`
//!   pick an alternative.
//! * A line `=== input ===` separates the instruction from the input.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{group_by_day, DatedText, Format, HistoryBundle, HistoryMode, Query, Task};
use crate::model::{AtomicEvent, Document, Vocabularies};
use crate::text::whitespace_token_count;

pub const ENTITY_FILTER_OPENING: &str = "You are an assistant to find relevant entities";
pub const SUMMARY_OPENING: &str = "Summarize the following news document";
pub const DISTRACTOR_OPENING: &str = "Propose five plausible but incorrect";
pub const ANSWER_INSTRUCTION: &str = "Answer with the letter of the correct option.";
const INPUT_SEPARATOR: &str = "=== input ===";

const FORECAST_TEMPLATE: &str = include_str!("../templates/forecast.txt");
const ENTITY_FILTER_TEMPLATE: &str = include_str!("../templates/entity_filter.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: identifier [{name}] is not bound")]
    Unbound { template: String, name: String },
    #[error("template {template}: {message}")]
    Syntax { template: String, message: String },
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Identifier {
    Query,
    NearestEvents,
    FurtherEvents,
    RelatedEvents,
    RelevantEvent,
    RelevantNewsText,
    Options,
    Subject,
    CandidateSet,
}

impl Identifier {
    pub const ALL: [Identifier; 9] = [
        Identifier::Query,
        Identifier::NearestEvents,
        Identifier::FurtherEvents,
        Identifier::RelatedEvents,
        Identifier::RelevantEvent,
        Identifier::RelevantNewsText,
        Identifier::Options,
        Identifier::Subject,
        Identifier::CandidateSet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identifier::Query => "Query",
            Identifier::NearestEvents => "Nearest Events",
            Identifier::FurtherEvents => "Further Events",
            Identifier::RelatedEvents => "Related Events",
            Identifier::RelevantEvent => "Relevant Event",
            Identifier::RelevantNewsText => "Relevant News Text",
            Identifier::Options => "Options",
            Identifier::Subject => "Subject",
            Identifier::CandidateSet => "Candidate Set",
        }
    }

    pub fn from_name(name: &str) -> Option<Identifier> {
        Identifier::ALL.into_iter().find(|i| i.name() == name)
    }

    fn is_history(self) -> bool {
        matches!(
            self,
            Identifier::NearestEvents
                | Identifier::FurtherEvents
                | Identifier::RelatedEvents
                | Identifier::RelevantEvent
                | Identifier::RelevantNewsText
        )
    }
}

/// Identifiers a bundle of this mode and format fills in.
pub fn active_history_identifiers(mode: HistoryMode, format: Format) -> Vec<Identifier> {
    match (mode, format) {
        (HistoryMode::None, _) => vec![],
        (HistoryMode::Rule, _) => vec![
            Identifier::NearestEvents,
            Identifier::FurtherEvents,
            Identifier::RelatedEvents,
        ],
        (HistoryMode::Retrieved, Format::Graph) => vec![Identifier::RelevantEvent],
        (HistoryMode::Retrieved, Format::Text) => vec![Identifier::RelevantNewsText],
        (HistoryMode::Retrieved, Format::Mixed) => {
            vec![Identifier::RelevantEvent, Identifier::RelevantNewsText]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Identifier),
    FormatAlt(Vec<(Format, String)>),
    TaskAlt(Vec<(Task, String)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Line {
    Block(Identifier),
    Inline {
        condition: Option<Identifier>,
        pieces: Vec<Piece>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: String,
    instruction: Vec<Line>,
    input: Vec<Line>,
    identifiers: BTreeSet<Identifier>,
}

impl PromptTemplate {
    pub fn parse(template_id: &str, text: &str) -> Result<Self, PromptError> {
        let syntax = |message: String| PromptError::Syntax {
            template: template_id.to_owned(),
            message,
        };
        let mut instruction = Vec::new();
        let mut input = Vec::new();
        let mut in_input = false;
        let mut identifiers = BTreeSet::new();
        for raw in text.lines() {
            if raw.trim() == INPUT_SEPARATOR {
                if in_input {
                    return Err(syntax("more than one input separator".into()));
                }
                in_input = true;
                continue;
            }
            let line = parse_line(template_id, raw)?;
            match &line {
                Line::Block(id) => {
                    identifiers.insert(*id);
                }
                Line::Inline { condition, pieces } => {
                    identifiers.extend(condition.iter().copied());
                    identifiers.extend(pieces.iter().filter_map(|p| match p {
                        Piece::Slot(id) => Some(*id),
                        _ => None,
                    }));
                }
            }
            if in_input {
                input.push(line);
            } else {
                instruction.push(line);
            }
        }
        if !in_input {
            return Err(syntax(format!("missing '{INPUT_SEPARATOR}' line")));
        }
        Ok(PromptTemplate {
            template_id: template_id.to_owned(),
            instruction,
            input,
            identifiers,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        Self::parse(&id, &text)
    }

    pub fn forecast() -> Self {
        Self::parse("forecast", FORECAST_TEMPLATE).expect("bundled forecast template parses")
    }

    pub fn entity_filter() -> Self {
        Self::parse("entity_filter", ENTITY_FILTER_TEMPLATE)
            .expect("bundled entity filter template parses")
    }

    pub fn identifiers(&self) -> &BTreeSet<Identifier> {
        &self.identifiers
    }
}

fn parse_line(template: &str, raw: &str) -> Result<Line, PromptError> {
    let unknown = |name: &str| PromptError::UnknownPlaceholder {
        template: template.to_owned(),
        name: name.to_owned(),
    };
    let trimmed = raw.trim();
    if let Some(name) = trimmed.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        if let Some(id) = Identifier::from_name(name).filter(|i| i.is_history()) {
            return Ok(Line::Block(id));
        }
    }
    let mut rest = raw;
    let mut condition = None;
    if let Some(r) = raw.strip_prefix("?[") {
        let end = r.find(']').ok_or_else(|| PromptError::Syntax {
            template: template.to_owned(),
            message: format!("unterminated condition in {raw:?}"),
        })?;
        condition = Some(Identifier::from_name(&r[..end]).ok_or_else(|| unknown(&r[..end]))?);
        rest = r[end + 1..].strip_prefix(' ').unwrap_or(&r[end + 1..]);
    }
    let mut pieces = Vec::new();
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_owned()));
        }
        let close = rest[open..].find('}').ok_or_else(|| PromptError::Syntax {
            template: template.to_owned(),
            message: format!("unterminated placeholder in {raw:?}"),
        })? + open;
        let inner = &rest[open + 1..close];
        pieces.push(parse_placeholder(template, inner)?);
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_owned()));
    }
    Ok(Line::Inline { condition, pieces })
}

fn parse_placeholder(template: &str, inner: &str) -> Result<Piece, PromptError> {
    let syntax = |message: String| PromptError::Syntax {
        template: template.to_owned(),
        message,
    };
    if let Some((key, alts)) = inner.split_once(':') {
        let pairs: Vec<(String, String)> = alts
            .split('|')
            .map(|alt| {
                alt.split_once('=')
                    .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                    .ok_or_else(|| syntax(format!("bad alternative {alt:?}")))
            })
            .collect::<Result<_, _>>()?;
        return match key.trim() {
            "format" => Ok(Piece::FormatAlt(
                pairs
                    .into_iter()
                    .map(|(k, v)| k.parse::<Format>().map(|f| (f, v)).map_err(syntax))
                    .collect::<Result<_, _>>()?,
            )),
            "task" => Ok(Piece::TaskAlt(
                pairs
                    .into_iter()
                    .map(|(k, v)| k.parse::<Task>().map(|t| (t, v)).map_err(syntax))
                    .collect::<Result<_, _>>()?,
            )),
            other => Err(syntax(format!("unknown alternation key {other:?}"))),
        };
    }
    Identifier::from_name(inner)
        .map(Piece::Slot)
        .ok_or_else(|| PromptError::UnknownPlaceholder {
            template: template.to_owned(),
            name: inner.to_owned(),
        })
}

/// Values for one rendering. `None` marks an inactive identifier.
#[derive(Debug, Clone, Default)]
struct Bindings {
    values: Vec<(Identifier, String)>,
    format: Option<Format>,
    task: Option<Task>,
}

impl Bindings {
    fn get(&self, id: Identifier) -> Option<&str> {
        self.values.iter().find(|(i, _)| *i == id).map(|(_, v)| v.as_str())
    }

    fn is_active(&self, id: Identifier) -> bool {
        self.get(id).is_some()
    }
}

fn render_lines(template: &PromptTemplate, lines: &[Line], b: &Bindings) -> Result<String, PromptError> {
    let unbound = |id: Identifier| PromptError::Unbound {
        template: template.template_id.clone(),
        name: id.name().to_owned(),
    };
    let mut out: Vec<String> = Vec::new();
    for line in lines {
        match line {
            Line::Block(id) => match b.get(*id) {
                Some(content) if !content.is_empty() => {
                    out.push(format!("[{}]", id.name()));
                    out.push(content.to_owned());
                }
                _ => {}
            },
            Line::Inline { condition, pieces } => {
                if condition.is_some_and(|c| !b.is_active(c)) {
                    continue;
                }
                let mut s = String::new();
                for p in pieces {
                    match p {
                        Piece::Text(t) => s.push_str(t),
                        Piece::Slot(id) => s.push_str(b.get(*id).ok_or_else(|| unbound(*id))?),
                        Piece::FormatAlt(alts) => {
                            let f = b.format.unwrap_or(Format::Graph);
                            s.push_str(alt_value(alts, &f));
                        }
                        Piece::TaskAlt(alts) => {
                            let t = b.task.unwrap_or(Task::Object);
                            s.push_str(alt_value(alts, &t));
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    Ok(out.join("\n"))
}

fn alt_value<'a, K: PartialEq>(alts: &'a [(K, String)], key: &K) -> &'a str {
    alts.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub instruction: String,
    pub input: String,
    /// Whitespace tokens of the full prompt.
    pub token_count: usize,
}

impl RenderedPrompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.instruction, self.input)
    }
}

pub fn render_event(vocab: &Vocabularies, e: &AtomicEvent) -> String {
    format!(
        "({}, {}, {}, {});",
        vocab.entity_name(e.subject),
        vocab.relation_name(e.relation),
        vocab.entity_name(e.object),
        e.t
    )
}

fn render_triple(vocab: &Vocabularies, e: &AtomicEvent) -> String {
    format!(
        "({}, {}, {});",
        vocab.entity_name(e.subject),
        vocab.relation_name(e.relation),
        vocab.entity_name(e.object)
    )
}

fn render_texts(out: &mut Vec<String>, texts: &[DatedText]) {
    let mut sorted: Vec<&DatedText> = texts.iter().collect();
    sorted.sort_by_key(|x| (x.t, x.doc_id));
    for x in sorted {
        out.push(format!("[Date]{}:", x.t));
        out.push(x.text.clone());
    }
}

/// One history list in the given format: quadruples for graph, dated
/// summaries for text, and per day the summaries followed by the triples for
/// mixed.
pub fn render_section(
    vocab: &Vocabularies,
    events: &[AtomicEvent],
    texts: &[DatedText],
    format: Format,
) -> String {
    let mut out = Vec::new();
    match format {
        Format::Graph => out.extend(events.iter().map(|e| render_event(vocab, e))),
        Format::Text => render_texts(&mut out, texts),
        Format::Mixed => {
            for (t, (day_texts, day_events)) in group_by_day(events, texts) {
                out.push(format!("[Date]{t}:"));
                out.extend(day_texts.iter().map(|x| x.text.clone()));
                out.extend(day_events.iter().map(|e| render_triple(vocab, e)));
            }
        }
    }
    out.join("\n")
}

/// Every history list of the bundle, concatenated without headers.
pub fn render_history_block(vocab: &Vocabularies, bundle: &HistoryBundle) -> String {
    let parts = [
        render_section(vocab, &bundle.nearest.events, &bundle.nearest.texts, bundle.format),
        render_section(vocab, &bundle.further.events, &bundle.further.texts, bundle.format),
        render_section(vocab, &bundle.related.events, &bundle.related.texts, bundle.format),
        render_section(vocab, &bundle.relevant_events, &[], Format::Graph),
        render_section(vocab, &[], &bundle.relevant_texts, Format::Text),
    ];
    parts
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_query(vocab: &Vocabularies, query: &Query) -> String {
    let s = vocab.entity_name(query.subject);
    match query.task {
        Task::Object => format!(
            "({s}, {}, ?, {})",
            query.relation.map(|r| vocab.relation_name(r)).unwrap_or_default(),
            query.t
        ),
        Task::Relation => format!(
            "({s}, ?, {}, {})",
            query.object.map(|o| vocab.entity_name(o)).unwrap_or_default(),
            query.t
        ),
    }
}

pub fn option_label(i: usize) -> char {
    (b'A' + i as u8) as char
}

pub fn render_options(options: &[String]) -> String {
    let mut out = String::new();
    for (i, o) in options.iter().enumerate() {
        let _ = writeln!(out, "{}. {o}", option_label(i));
    }
    out.push_str(ANSWER_INSTRUCTION);
    out
}

/// `"C. Name"` splits into `('C', "Name")`.
pub fn parse_option_line(line: &str) -> Option<(char, &str)> {
    let b = line.as_bytes();
    if b.len() >= 4 && b[0].is_ascii_uppercase() && b[1] == b'.' && b[2] == b' ' {
        Some((b[0] as char, &line[3..]))
    } else {
        None
    }
}

/// Day of a rendered `(S, R, O, T);` line.
pub fn quadruple_day(line: &str) -> Option<u32> {
    let inner = line.trim().strip_prefix('(')?.strip_suffix(");")?;
    let (_, last) = inner.rsplit_once(", ")?;
    last.trim().parse().ok()
}

/// Renders the forecasting prompt. `bundle = None` means no history.
pub fn render_prompt(
    template: &PromptTemplate,
    vocab: &Vocabularies,
    query: &Query,
    bundle: Option<&HistoryBundle>,
    options: &[String],
) -> Result<RenderedPrompt, PromptError> {
    if options.is_empty() {
        return Err(PromptError::Unbound {
            template: template.template_id.clone(),
            name: Identifier::Options.name().into(),
        });
    }
    let mut b = Bindings {
        task: Some(query.task),
        format: bundle.map(|x| x.format),
        ..Bindings::default()
    };
    b.values.push((Identifier::Query, render_query(vocab, query)));
    b.values.push((Identifier::Options, render_options(options)));
    if let Some(h) = bundle {
        for id in active_history_identifiers(h.mode, h.format) {
            let content = match id {
                Identifier::NearestEvents => {
                    render_section(vocab, &h.nearest.events, &h.nearest.texts, h.format)
                }
                Identifier::FurtherEvents => {
                    render_section(vocab, &h.further.events, &h.further.texts, h.format)
                }
                Identifier::RelatedEvents => {
                    render_section(vocab, &h.related.events, &h.related.texts, h.format)
                }
                Identifier::RelevantEvent => {
                    render_section(vocab, &h.relevant_events, &[], Format::Graph)
                }
                Identifier::RelevantNewsText => {
                    render_section(vocab, &[], &h.relevant_texts, Format::Text)
                }
                _ => unreachable!("history identifiers only"),
            };
            b.values.push((id, content));
        }
    }
    finish(template, &b)
}

fn finish(template: &PromptTemplate, b: &Bindings) -> Result<RenderedPrompt, PromptError> {
    let instruction = render_lines(template, &template.instruction, b)?;
    let input = render_lines(template, &template.input, b)?;
    let token_count = whitespace_token_count(&instruction) + whitespace_token_count(&input);
    Ok(RenderedPrompt {
        instruction,
        input,
        token_count,
    })
}

/// Comma-separated list; commas and backslashes inside names are escaped.
pub fn render_candidate_list(names: &[String]) -> String {
    names
        .iter()
        .map(|n| n.replace('\\', "\\\\").replace(',', "\\,"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Splits a list reply. `Some(vec![])` is an explicit empty answer; `None`
/// means nothing list-like was found.
pub fn parse_entity_list(reply: &str) -> Option<Vec<String>> {
    let mut s = reply.trim();
    if is_empty_answer(s) {
        return Some(Vec::new());
    }
    for (open, close) in [('[', ']'), ('{', '}')] {
        if s.starts_with(open) && s.ends_with(close) && s.len() >= 2 {
            s = s[1..s.len() - 1].trim();
        }
    }
    if is_empty_answer(s) {
        return Some(Vec::new());
    }
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            ',' | '\n' | ';' => items.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    items.push(cur);
    let items: Vec<String> = items
        .into_iter()
        .map(|i| clean_item(&i))
        .filter(|i| !i.is_empty())
        .collect();
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

fn is_empty_answer(s: &str) -> bool {
    let s = s.trim().trim_end_matches('.').to_ascii_lowercase();
    matches!(s.as_str(), "" | "[]" | "{}" | "none" | "n/a")
}

fn clean_item(item: &str) -> String {
    let mut s = item.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(r) = s.strip_prefix(bullet) {
            s = r.trim();
        }
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && s[digits..].starts_with(['.', ')']) {
        s = s[digits + 1..].trim();
    }
    s.trim_matches(|c| c == '"' || c == '\'').trim().to_owned()
}

pub fn render_entity_filter_prompt(subject: &str, candidates: &[String]) -> Result<String, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    let template = PromptTemplate::entity_filter();
    let b = Bindings {
        values: vec![
            (Identifier::Subject, subject.to_owned()),
            (Identifier::CandidateSet, render_candidate_list(candidates)),
        ],
        ..Bindings::default()
    };
    Ok(finish(&template, &b)?.text())
}

/// The rendered candidate list of an entity-filter prompt.
pub fn candidate_block(prompt: &str) -> Option<String> {
    let lines: Vec<&str> = prompt.lines().collect();
    let at = lines.iter().rposition(|l| l.trim() == "[Candidate Set]")?;
    lines.get(at + 1).map(|s| s.to_string())
}

pub fn summarization_prompt(doc: &Document) -> String {
    format!(
        "{SUMMARY_OPENING} in a few sentences, keeping only the core events.\nTitle: {}\n[Document]\n{}",
        doc.title, doc.body
    )
}

/// Body of a summarization prompt.
pub fn summary_source(prompt: &str) -> Option<&str> {
    prompt.split_once("\n[Document]\n").map(|(_, body)| body)
}

pub fn distractor_prompt(vocab: &Vocabularies, query: &Query, gold: &str) -> String {
    let what = match query.task {
        Task::Object => "object entities",
        Task::Relation => "relations",
    };
    format!(
        "{DISTRACTOR_OPENING} {what} for the missing element of the query {}. \
         The correct answer is \"{gold}\"; do not repeat it. \
         Reply with a comma-separated list of five names.",
        render_query(vocab, query)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{HistoryBundle, Section};
    use crate::model::*;

    fn vocab() -> Vocabularies {
        let mut v = Vocabularies::default();
        v.entities.insert(EntityId(0), "Pakistan Foreign Ministry").unwrap();
        v.entities.insert(EntityId(1), "Egyptian counterpart officials").unwrap();
        v.relations.insert(RelationId(0), "Cooperate economically").unwrap();
        v
    }

    fn event(t: u32) -> AtomicEvent {
        AtomicEvent {
            event_id: EventId(u64::from(t)),
            subject: EntityId(0),
            relation: RelationId(0),
            object: EntityId(1),
            t: RelativeDay(t),
            complex_event: ComplexEventId(0),
            source_docs: vec![DocumentId(0)],
        }
    }

    fn query() -> Query {
        Query {
            subject: EntityId(0),
            relation: Some(RelationId(0)),
            object: None,
            t: RelativeDay(2191),
            complex_event: ComplexEventId(0),
            task: Task::Object,
        }
    }

    fn opts() -> Vec<String> {
        (0..6).map(|i| format!("Option {i}")).collect()
    }

    #[test]
    fn graph_line_style() {
        let mut b = HistoryBundle::empty(HistoryMode::Rule, Format::Graph);
        b.nearest.events.push(event(2190));
        assert_eq!(
            render_history_block(&vocab(), &b),
            "(Pakistan Foreign Ministry, Cooperate economically, Egyptian counterpart officials, 2190);"
        );
        let empty = HistoryBundle::empty(HistoryMode::Rule, Format::Graph);
        assert_eq!(render_history_block(&vocab(), &empty), "");
    }

    #[test]
    fn text_and_mixed_blocks() {
        let text = DatedText {
            t: RelativeDay(2190),
            doc_id: DocumentId(0),
            text: "The minister expressed great compatibility.".into(),
        };
        let mut b = HistoryBundle::empty(HistoryMode::Rule, Format::Text);
        b.nearest.texts.push(text.clone());
        assert!(render_history_block(&vocab(), &b).starts_with("[Date]2190:\n"));

        let mut m = HistoryBundle::empty(HistoryMode::Rule, Format::Mixed);
        m.nearest = Section {
            events: vec![event(2190)],
            texts: vec![text],
        };
        assert_eq!(
            render_history_block(&vocab(), &m),
            "[Date]2190:\nThe minister expressed great compatibility.\n\
             (Pakistan Foreign Ministry, Cooperate economically, Egyptian counterpart officials);"
        );
    }

    #[test]
    fn rule_and_retrieved_identifiers_do_not_mix() {
        let v = vocab();
        let t = PromptTemplate::forecast();
        let mut rule = HistoryBundle::empty(HistoryMode::Rule, Format::Graph);
        rule.related.events.push(event(2190));
        let p = render_prompt(&t, &v, &query(), Some(&rule), &opts()).unwrap().text();
        assert!(p.contains("[Related Events]"));
        assert!(!p.contains("[Relevant News Text]") && !p.contains("[Relevant Event]"));

        let retrieved = HistoryBundle::empty(HistoryMode::Retrieved, Format::Text);
        let p = render_prompt(&t, &v, &query(), Some(&retrieved), &opts()).unwrap().text();
        assert!(p.contains("[Relevant News Text]"));
        assert!(!p.contains("[Nearest Events]") && !p.contains("[Related Events]"));

        let again = render_prompt(&t, &v, &query(), Some(&retrieved), &opts()).unwrap().text();
        assert_eq!(p, again);
    }

    #[test]
    fn no_history_prompt_has_no_history_block() {
        let p = render_prompt(&PromptTemplate::forecast(), &vocab(), &query(), None, &opts())
            .unwrap();
        assert!(p.input.starts_with("[Query]\n(Pakistan Foreign Ministry, Cooperate economically, ?, 2191)\n[Options]\nA. Option 0"));
        let option_lines = p.input.lines().filter(|l| parse_option_line(l).is_some()).count();
        assert_eq!(option_lines, 6);
        assert!(p.token_count > 50);
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let err = PromptTemplate::parse("t", "x {Mystery}\n=== input ===\n{Query}").unwrap_err();
        assert_eq!(
            err,
            PromptError::UnknownPlaceholder {
                template: "t".into(),
                name: "Mystery".into()
            }
        );
        let t = PromptTemplate::parse("t", "hello\n=== input ===\n{Subject}").unwrap();
        let err = render_prompt(&t, &vocab(), &query(), None, &opts()).unwrap_err();
        assert!(matches!(err, PromptError::Unbound { name, .. } if name == "Subject"));
    }

    #[test]
    fn entity_filter_prompt() {
        let names: Vec<String> = vec!["Hamas".into(), "Gaza, City".into(), "Egypt".into()];
        let p = render_entity_filter_prompt("Israel", &names).unwrap();
        assert!(p.starts_with(ENTITY_FILTER_OPENING));
        assert!(p.contains("Israel") && p.contains("Hamas") && p.contains("Egypt"));
        assert_eq!(parse_entity_list(&candidate_block(&p).unwrap()).unwrap(), names);
        assert_eq!(render_entity_filter_prompt("Israel", &[]), Err(PromptError::EmptyCandidates));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_entity_list("[A, B]").unwrap(), vec!["A", "B"]);
        assert_eq!(parse_entity_list("1. A\n2. B").unwrap(), vec!["A", "B"]);
        assert_eq!(parse_entity_list("None.").unwrap(), Vec::<String>::new());
        assert_eq!(parse_entity_list(" , "), None);
    }

    #[test]
    fn quadruple_day_parsing() {
        assert_eq!(quadruple_day("(A, B, C, 12);"), Some(12));
        assert_eq!(quadruple_day("(A, B, C);"), None);
    }
}
