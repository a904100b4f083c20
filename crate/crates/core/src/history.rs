//! Query context assembly: rule-based and retrieved histories in graph, text
//! and mixed formats.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    AtomicEvent, ComplexEventId, Dataset, DocumentId, EntityId, RelationId, RelativeDay,
};
use crate::retrieval::{RetrievalError, Retriever, Scope, ScopeKind, ScopeRef};

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("document {0} has no summary and no gateway was given to produce one")]
    NoSummary(DocumentId),
    #[error("{0} needs a gateway")]
    NoGateway(&'static str),
    #[error("{0} needs a retriever")]
    NoRetriever(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Object,
    Relation,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Object => "object",
            Task::Relation => "relation",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "object" => Ok(Task::Object),
            "relation" => Ok(Task::Relation),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub subject: EntityId,
    pub relation: Option<RelationId>,
    pub object: Option<EntityId>,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
    pub task: Task,
}

impl Query {
    /// Object queries carry the relation only; relation queries the object only.
    pub fn is_well_formed(&self) -> bool {
        match self.task {
            Task::Object => self.relation.is_some() && self.object.is_none(),
            Task::Relation => self.relation.is_none() && self.object.is_some(),
        }
    }

    /// The same query seen from `horizon` days earlier: history may only use
    /// days `<= t - horizon`.
    pub fn at_horizon(&self, horizon: u32) -> Query {
        Query {
            t: RelativeDay((self.t.0 + 1).saturating_sub(horizon.max(1))),
            ..*self
        }
    }

    fn scope(&self, kind: ScopeKind, window_days: u32) -> Scope {
        Scope {
            kind,
            window_days: Some(window_days),
            reference: ScopeRef {
                subject: self.subject,
                t: self.t,
                complex_event: self.complex_event,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    Rule,
    Retrieved,
    None,
}

impl std::str::FromStr for HistoryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rule" => Ok(HistoryMode::Rule),
            "retrieved" => Ok(HistoryMode::Retrieved),
            "none" => Ok(HistoryMode::None),
            _ => Err(format!("unknown history mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Graph,
    Text,
    Mixed,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Graph, Format::Text, Format::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Graph => "graph",
            Format::Text => "text",
            Format::Mixed => "mixed",
        }
    }

    fn events(self) -> bool {
        self != Format::Text
    }

    fn texts(self) -> bool {
        self != Format::Graph
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "graph" => Ok(Format::Graph),
            "text" => Ok(Format::Text),
            "mixed" => Ok(Format::Mixed),
            _ => Err(format!("unknown format {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatedText {
    pub t: RelativeDay,
    pub doc_id: DocumentId,
    pub text: String,
}

/// Events and document summaries of one history section, both ascending by
/// time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub events: Vec<AtomicEvent>,
    pub texts: Vec<DatedText>,
}

impl Section {
    fn is_empty(&self) -> bool {
        self.events.is_empty() && self.texts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryBundle {
    pub mode: HistoryMode,
    pub format: Format,
    pub nearest: Section,
    pub further: Section,
    pub related: Section,
    pub relevant_events: Vec<AtomicEvent>,
    pub relevant_texts: Vec<DatedText>,
    /// The entity filter reply could not be parsed; every candidate was kept.
    pub filter_parse_failed: bool,
    pub warnings: Vec<String>,
}

impl HistoryBundle {
    pub fn empty(mode: HistoryMode, format: Format) -> Self {
        HistoryBundle {
            mode,
            format,
            nearest: Section::default(),
            further: Section::default(),
            related: Section::default(),
            relevant_events: Vec::new(),
            relevant_texts: Vec::new(),
            filter_parse_failed: false,
            warnings: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nearest.is_empty()
            && self.further.is_empty()
            && self.related.is_empty()
            && self.relevant_events.is_empty()
            && self.relevant_texts.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.nearest.events.len()
            + self.further.events.len()
            + self.related.events.len()
            + self.relevant_events.len()
    }

    pub fn text_count(&self) -> usize {
        self.nearest.texts.len()
            + self.further.texts.len()
            + self.related.texts.len()
            + self.relevant_texts.len()
    }

    /// Timestamps of every item in the bundle.
    pub fn item_days(&self) -> impl Iterator<Item = RelativeDay> + '_ {
        let sections = [&self.nearest, &self.further, &self.related];
        sections
            .into_iter()
            .flat_map(|s| s.events.iter().map(|e| e.t).chain(s.texts.iter().map(|x| x.t)))
            .chain(self.relevant_events.iter().map(|e| e.t))
            .chain(self.relevant_texts.iter().map(|x| x.t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistoryParams {
    /// Same-subject events kept in the related section.
    pub k: usize,
    /// Days before the query that count as nearest.
    pub local_window_days: u32,
    /// Visible past in days, for every mode.
    pub history_length: u32,
    /// Documents summarized per retrieved text history.
    pub top_n: usize,
    pub max_events: usize,
    pub max_texts: usize,
    pub scope: ScopeKind,
}

impl Default for HistoryParams {
    fn default() -> Self {
        HistoryParams {
            k: 10,
            local_window_days: 2,
            history_length: 30,
            top_n: 5,
            max_events: 20,
            max_texts: 5,
            scope: ScopeKind::ComplexEvent,
        }
    }
}

fn window_start(query: &Query, days: u32) -> RelativeDay {
    query.t.saturating_sub(days)
}

fn local_events<'a>(
    ds: &'a Dataset,
    query: &Query,
    scope: ScopeKind,
    from: RelativeDay,
) -> Vec<&'a AtomicEvent> {
    match scope {
        ScopeKind::None => Vec::new(),
        ScopeKind::Global => ds.events_between(from, query.t).collect(),
        ScopeKind::ComplexEvent => ds.ce_events_between(query.complex_event, from, query.t).collect(),
    }
}

fn last_n(events: Vec<&AtomicEvent>, n: usize) -> Vec<AtomicEvent> {
    let skip = events.len().saturating_sub(n);
    events[skip..].iter().map(|e| (*e).clone()).collect()
}

/// Summaries of the distinct source documents of `events`, ascending by
/// `(t, doc_id)`.
fn summaries_of(
    ds: &Dataset,
    events: &[AtomicEvent],
    gateway: Option<&Gateway>,
) -> Result<Vec<DatedText>, HistoryError> {
    let docs: BTreeSet<(RelativeDay, DocumentId)> = events
        .iter()
        .flat_map(|e| e.source_docs.iter().map(move |d| (e.t, *d)))
        .collect();
    let mut out = Vec::with_capacity(docs.len());
    for (_, id) in docs {
        let Some(doc) = ds.document(id) else { continue };
        let text = match (&doc.summary, gateway) {
            (Some(s), _) => s.clone(),
            (None, Some(gw)) => gw.summarize_document(doc)?,
            (None, None) => return Err(HistoryError::NoSummary(id)),
        };
        out.push(DatedText {
            t: doc.t,
            doc_id: id,
            text,
        });
    }
    Ok(out)
}

fn section(
    ds: &Dataset,
    events: Vec<AtomicEvent>,
    format: Format,
    gateway: Option<&Gateway>,
) -> Result<Section, HistoryError> {
    let texts = if format.texts() {
        summaries_of(ds, &events, gateway)?
    } else {
        Vec::new()
    };
    Ok(Section {
        events: if format.events() { events } else { Vec::new() },
        texts,
    })
}

/// Nearest: local events in the last `local_window_days`; further: older
/// local events; related: the subject's `k` most recent events anywhere.
/// Everything is bounded to the last `history_length` days.
pub fn build_rule_history(
    ds: &Dataset,
    query: &Query,
    params: &HistoryParams,
    format: Format,
    gateway: Option<&Gateway>,
) -> Result<HistoryBundle, HistoryError> {
    let mut bundle = HistoryBundle::empty(HistoryMode::Rule, format);
    if params.scope == ScopeKind::None {
        return Ok(bundle);
    }
    let from = window_start(query, params.history_length);
    let near_from = window_start(query, params.local_window_days).max(from);
    let local = local_events(ds, query, params.scope, from);
    let split = local.partition_point(|e| e.t < near_from);
    let (further, nearest) = local.split_at(split);
    let related: Vec<&AtomicEvent> = ds.subject_events_between(query.subject, from, query.t).collect();

    bundle.nearest = section(ds, last_n(nearest.to_vec(), params.max_events), format, gateway)?;
    bundle.further = section(ds, last_n(further.to_vec(), params.max_events), format, gateway)?;
    bundle.related = section(ds, last_n(related, params.k), format, gateway)?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCandidateSet {
    /// Distinct entities with their last-seen day, most recent first.
    pub candidates: Vec<(EntityId, RelativeDay)>,
    pub window_days: u32,
}

impl EntityCandidateSet {
    pub fn ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.candidates.iter().map(|(e, _)| *e)
    }
}

/// Subjects and objects of same-complex-event events in the last
/// `window_days` days.
pub fn build_candidate_set(ds: &Dataset, query: &Query, window_days: u32) -> EntityCandidateSet {
    build_scoped_candidate_set(ds, query, window_days, ScopeKind::ComplexEvent)
}

pub fn build_scoped_candidate_set(
    ds: &Dataset,
    query: &Query,
    window_days: u32,
    scope: ScopeKind,
) -> EntityCandidateSet {
    let mut last_seen: HashMap<EntityId, RelativeDay> = HashMap::new();
    for e in local_events(ds, query, scope, window_start(query, window_days)) {
        for ent in [e.subject, e.object] {
            let t = last_seen.entry(ent).or_insert(e.t);
            *t = (*t).max(e.t);
        }
    }
    let mut candidates: Vec<(EntityId, RelativeDay)> = last_seen.into_iter().collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    EntityCandidateSet {
        candidates,
        window_days,
    }
}

/// Asks the model which candidates matter to the subject, then keeps the
/// in-scope past events that involve a selected entity.
pub fn build_retrieved_graph_history(
    ds: &Dataset,
    query: &Query,
    gateway: &Gateway,
    params: &HistoryParams,
) -> Result<HistoryBundle, HistoryError> {
    let (bundle, _) = retrieved_graph(ds, query, gateway, params, Format::Graph)?;
    Ok(bundle)
}

fn retrieved_graph(
    ds: &Dataset,
    query: &Query,
    gateway: &Gateway,
    params: &HistoryParams,
    format: Format,
) -> Result<(HistoryBundle, Vec<EntityId>), HistoryError> {
    let mut bundle = HistoryBundle::empty(HistoryMode::Retrieved, format);
    if params.scope == ScopeKind::None {
        return Ok((bundle, Vec::new()));
    }
    let cands = build_scoped_candidate_set(ds, query, params.history_length, params.scope);
    if cands.candidates.is_empty() {
        return Ok((bundle, Vec::new()));
    }
    let names: Vec<String> = cands.ids().map(|e| ds.vocab.entity_name(e)).collect();
    let outcome =
        gateway.filter_candidate_entities(&ds.vocab.entity_name(query.subject), &names)?;
    bundle.filter_parse_failed = outcome.parse_failed;
    if outcome.parse_failed {
        bundle
            .warnings
            .push("entity filter reply unparseable; kept all candidates".into());
    }
    let selected: Vec<EntityId> = outcome.selected.iter().map(|&i| cands.candidates[i].0).collect();
    let set: BTreeSet<EntityId> = selected.iter().copied().collect();
    let hits: Vec<&AtomicEvent> =
        local_events(ds, query, params.scope, window_start(query, params.history_length))
            .into_iter()
            .filter(|e| set.contains(&e.subject) || set.contains(&e.object))
            .collect();
    bundle.relevant_events = last_n(hits, params.max_events);
    Ok((bundle, selected))
}

/// Ranks document chunks from the last `history_length` days against the
/// subject name and summarizes the `top_n` best documents.
pub fn build_retrieved_text_history(
    ds: &Dataset,
    query: &Query,
    retriever: &Retriever,
    gateway: &Gateway,
    params: &HistoryParams,
) -> Result<HistoryBundle, HistoryError> {
    let mut bundle = HistoryBundle::empty(HistoryMode::Retrieved, Format::Text);
    let subject = ds.vocab.entity_name(query.subject);
    retrieve_texts(ds, query, retriever, gateway, params, &subject, &mut bundle)?;
    Ok(bundle)
}

/// Graph retrieval, then text retrieval with the selected entity names added
/// to the query string.
pub fn build_retrieved_mixed_history(
    ds: &Dataset,
    query: &Query,
    retriever: &Retriever,
    gateway: &Gateway,
    params: &HistoryParams,
) -> Result<HistoryBundle, HistoryError> {
    let (mut bundle, selected) = retrieved_graph(ds, query, gateway, params, Format::Mixed)?;
    let mut query_text = ds.vocab.entity_name(query.subject);
    for e in selected {
        query_text.push(' ');
        query_text.push_str(&ds.vocab.entity_name(e));
    }
    retrieve_texts(ds, query, retriever, gateway, params, &query_text, &mut bundle)?;
    Ok(bundle)
}

fn retrieve_texts(
    ds: &Dataset,
    query: &Query,
    retriever: &Retriever,
    gateway: &Gateway,
    params: &HistoryParams,
    query_text: &str,
    bundle: &mut HistoryBundle,
) -> Result<(), HistoryError> {
    let scope = query.scope(params.scope, params.history_length);
    let hits = retriever.retrieve(query_text, &scope, Some(gateway), None)?;
    let mut docs: Vec<DocumentId> = Vec::new();
    for h in hits {
        if docs.len() >= params.top_n {
            break;
        }
        if !docs.contains(&h.chunk.doc_id) {
            docs.push(h.chunk.doc_id);
        }
    }
    let mut texts = Vec::new();
    for id in docs {
        let Some(doc) = ds.document(id) else { continue };
        match gateway.summarize_document(doc) {
            Ok(text) => texts.push(DatedText {
                t: doc.t,
                doc_id: id,
                text,
            }),
            Err(e @ GatewayError::StrictReplay { .. }) => return Err(e.into()),
            Err(e) => bundle.warnings.push(format!("document {id} skipped: {e}")),
        }
    }
    texts.sort_by_key(|x| (x.t, x.doc_id));
    bundle.relevant_texts = texts;
    Ok(())
}

/// Builds the history for any mode and format.
pub fn build_history(
    ds: &Dataset,
    query: &Query,
    mode: HistoryMode,
    format: Format,
    params: &HistoryParams,
    gateway: Option<&Gateway>,
    retriever: Option<&Retriever>,
) -> Result<HistoryBundle, HistoryError> {
    let bundle = match mode {
        HistoryMode::None => HistoryBundle::empty(HistoryMode::None, format),
        HistoryMode::Rule => build_rule_history(ds, query, params, format, gateway)?,
        HistoryMode::Retrieved => {
            let gw = gateway.ok_or(HistoryError::NoGateway("retrieved history"))?;
            match format {
                Format::Graph => build_retrieved_graph_history(ds, query, gw, params)?,
                Format::Text | Format::Mixed if params.scope == ScopeKind::None => {
                    HistoryBundle::empty(HistoryMode::Retrieved, format)
                }
                Format::Text => {
                    let r = retriever.ok_or(HistoryError::NoRetriever("text retrieval"))?;
                    build_retrieved_text_history(ds, query, r, gw, params)?
                }
                Format::Mixed => {
                    let r = retriever.ok_or(HistoryError::NoRetriever("mixed retrieval"))?;
                    build_retrieved_mixed_history(ds, query, r, gw, params)?
                }
            }
        }
    };
    Ok(truncate_history(bundle, params.max_events, params.max_texts))
}

/// Keeps at most `max_events` events and `max_texts` texts. The budget is
/// spent section by section (nearest, related, further, relevant), most
/// recent items first.
pub fn truncate_history(mut bundle: HistoryBundle, max_events: usize, max_texts: usize) -> HistoryBundle {
    let mut events_left = max_events;
    let mut texts_left = max_texts;
    let HistoryBundle {
        nearest,
        related,
        further,
        relevant_events,
        relevant_texts,
        ..
    } = &mut bundle;
    for s in [nearest, related, further] {
        keep_latest(&mut s.events, &mut events_left);
        keep_latest(&mut s.texts, &mut texts_left);
    }
    keep_latest(relevant_events, &mut events_left);
    keep_latest(relevant_texts, &mut texts_left);
    bundle
}

fn keep_latest<T>(items: &mut Vec<T>, budget: &mut usize) {
    let keep = items.len().min(*budget);
    items.drain(..items.len() - keep);
    *budget -= keep;
}

/// Per-day grouping helper used by renderers: day -> (texts, events).
pub fn group_by_day<'a>(
    events: &'a [AtomicEvent],
    texts: &'a [DatedText],
) -> BTreeMap<RelativeDay, (Vec<&'a DatedText>, Vec<&'a AtomicEvent>)> {
    let mut days: BTreeMap<RelativeDay, (Vec<&DatedText>, Vec<&AtomicEvent>)> = BTreeMap::new();
    for x in texts {
        days.entry(x.t).or_default().0.push(x);
    }
    for e in events {
        days.entry(e.t).or_default().1.push(e);
    }
    days
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::gateway::ScriptPolicy;
    use crate::model::*;
    use chrono::NaiveDate;

    /// Events given as (subject, object, t, ce); entity ids < 10.
    fn tiny(events: &[(u32, u32, u32, u32)]) -> Dataset {
        let mut v = Vocabularies::default();
        for i in 0..10 {
            v.entities.insert(EntityId(i), format!("Ent{i} Body")).unwrap();
        }
        v.relations.insert(RelationId(0), "meet").unwrap();
        v.complex_events.insert(ComplexEventId(0), "c0").unwrap();
        v.complex_events.insert(ComplexEventId(1), "c1").unwrap();
        let mut evs = Vec::new();
        let mut docs = Vec::new();
        for (i, &(s, o, t, ce)) in events.iter().enumerate() {
            evs.push(AtomicEvent {
                event_id: EventId(i as u64),
                subject: EntityId(s),
                relation: RelationId(0),
                object: EntityId(o),
                t: RelativeDay(t),
                complex_event: ComplexEventId(ce),
                source_docs: vec![DocumentId(i as u32)],
            });
            docs.push(Document {
                doc_id: DocumentId(i as u32),
                t: RelativeDay(t),
                complex_event: ComplexEventId(ce),
                title: String::new(),
                body: format!("Ent{s} Body met Ent{o} Body"),
                summary: Some(format!("summary {i}")),
            });
        }
        Dataset::new(
            v,
            evs,
            docs,
            SplitRanges {
                train: DayRange::new(0, 100),
                val: DayRange::new(100, 100),
                test: DayRange::new(100, 100),
            },
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        )
        .unwrap()
    }

    fn q(subject: u32, t: u32, ce: u32) -> Query {
        Query {
            subject: EntityId(subject),
            relation: Some(RelationId(0)),
            object: None,
            t: RelativeDay(t),
            complex_event: ComplexEventId(ce),
            task: Task::Object,
        }
    }

    #[test]
    fn nearest_and_further_split_on_the_local_window() {
        let ds = tiny(&[(1, 2, 9, 0), (3, 4, 5, 0), (1, 5, 10, 0)]);
        let b = build_rule_history(&ds, &q(1, 10, 0), &HistoryParams::default(), Format::Graph, None)
            .unwrap();
        let ids = |s: &Section| s.events.iter().map(|e| e.event_id.0).collect::<Vec<_>>();
        assert_eq!(ids(&b.nearest), [0]);
        assert_eq!(ids(&b.further), [1]);
        assert!(b.nearest.texts.is_empty());

        let first = build_rule_history(&ds, &q(3, 5, 0), &HistoryParams::default(), Format::Graph, None)
            .unwrap();
        assert!(first.nearest.events.is_empty() && first.further.events.is_empty());
    }

    #[test]
    fn related_keeps_the_k_latest_subject_events() {
        let ds = tiny(&[(1, 2, 3, 0), (1, 3, 6, 1), (1, 4, 8, 0), (2, 1, 9, 0)]);
        let params = HistoryParams {
            k: 1,
            ..HistoryParams::default()
        };
        let b = build_rule_history(&ds, &q(1, 10, 0), &params, Format::Graph, None).unwrap();
        let oracle = ds
            .events()
            .filter(|e| e.subject.0 == 1 && e.t.0 < 10)
            .max_by_key(|e| e.t)
            .unwrap();
        assert_eq!(b.related.events, vec![oracle.clone()]);
    }

    #[test]
    fn text_format_swaps_events_for_summaries() {
        let ds = tiny(&[(1, 2, 9, 0), (3, 4, 9, 0)]);
        let b = build_rule_history(&ds, &q(1, 10, 0), &HistoryParams::default(), Format::Text, None)
            .unwrap();
        assert!(b.nearest.events.is_empty());
        assert_eq!(b.nearest.texts.len(), 2);
        let m = build_rule_history(&ds, &q(1, 10, 0), &HistoryParams::default(), Format::Mixed, None)
            .unwrap();
        assert_eq!(m.nearest.events.len(), 2);
        assert_eq!(m.nearest.texts.len(), 2);
    }

    #[test]
    fn candidate_set_window() {
        let ds = tiny(&[(1, 2, 9, 0), (3, 4, 7, 0), (5, 5, 9, 0), (6, 7, 9, 1)]);
        let c = build_candidate_set(&ds, &q(1, 10, 0), 2);
        let ids: BTreeSet<u32> = c.ids().map(|e| e.0).collect();
        assert_eq!(ids, BTreeSet::from([1, 2, 5]));
        assert_eq!(c.candidates.len(), 3);
        assert!(build_candidate_set(&ds, &q(1, 3, 0), 2).candidates.is_empty());
    }

    #[test]
    fn graph_retrieval_intersects_the_filter_reply() {
        let ds = tiny(&[(1, 2, 9, 0), (3, 4, 8, 0), (5, 6, 8, 0)]);
        let params = HistoryParams::default();
        let echo = Gateway::scripted(ScriptPolicy::EchoCandidates);
        let all = build_retrieved_graph_history(&ds, &q(1, 10, 0), &echo, &params).unwrap();
        assert_eq!(all.relevant_events.len(), 3);

        let mut replies = std::collections::BTreeMap::new();
        replies.insert("[Candidate Set]".to_owned(), "Ent3 Body, Zeus".to_owned());
        let gw = Gateway::scripted(ScriptPolicy::ScriptedMap { replies });
        let b = build_retrieved_graph_history(&ds, &q(1, 10, 0), &gw, &params).unwrap();
        let ids: Vec<u64> = b.relevant_events.iter().map(|e| e.event_id.0).collect();
        assert_eq!(ids, [1]);
        assert!(!b.filter_parse_failed);

        let mut replies = std::collections::BTreeMap::new();
        replies.insert("[Candidate Set]".to_owned(), "{}".to_owned());
        let gw = Gateway::scripted(ScriptPolicy::ScriptedMap { replies });
        let b = build_retrieved_graph_history(&ds, &q(1, 10, 0), &gw, &params).unwrap();
        assert!(b.relevant_events.is_empty());
    }

    #[test]
    fn retrieved_text_ranks_subject_documents_first() {
        // a wide corpus, so subject names stay rare enough for a positive idf
        let ds = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let e = ds.events().filter(|e| e.t.0 > 30).nth(10).unwrap().clone();
        let query = q(e.subject.0, e.t.0, e.complex_event.0);
        let gw = Gateway::scripted(ScriptPolicy::Recency);
        let retriever = Retriever::new(&ds, crate::retrieval::RetrieverKind::Bm25, 150, 30).unwrap();
        let params = HistoryParams {
            top_n: 1,
            history_length: 7,
            ..HistoryParams::default()
        };
        let b = build_retrieved_text_history(&ds, &query, &retriever, &gw, &params).unwrap();
        assert_eq!(b.relevant_texts.len(), 1);
        let doc = ds.document(b.relevant_texts[0].doc_id).unwrap();
        assert!(doc.body.contains(&ds.vocab.entity_name(query.subject)));
        assert!(doc.t < query.t);
    }

    #[test]
    fn truncation_prefers_recent_items_in_priority_order() {
        let mk = |t: u32, id: u64| AtomicEvent {
            event_id: EventId(id),
            subject: EntityId(0),
            relation: RelationId(0),
            object: EntityId(1),
            t: RelativeDay(t),
            complex_event: ComplexEventId(0),
            source_docs: vec![],
        };
        let mut b = HistoryBundle::empty(HistoryMode::Rule, Format::Graph);
        b.nearest.events = (0..10).map(|i| mk(90 + i, i as u64)).collect();
        b.related.events = (0..10).map(|i| mk(50 + i, 100 + i as u64)).collect();
        b.further.events = (0..10).map(|i| mk(70 + i, 200 + i as u64)).collect();
        let t = truncate_history(b.clone(), 20, 5);
        assert_eq!(t.event_count(), 20);
        assert_eq!(t.nearest.events, b.nearest.events);
        assert_eq!(t.related.events, b.related.events);
        assert!(t.further.events.is_empty());

        let t = truncate_history(b.clone(), 15, 5);
        let kept: Vec<u64> = t.related.events.iter().map(|e| e.event_id.0).collect();
        assert_eq!(kept, (105..110).collect::<Vec<_>>());

        assert!(truncate_history(b.clone(), 0, 0).is_empty());
        let within = truncate_history(b.clone(), 100, 100);
        assert_eq!(within, b);
    }

    #[test]
    fn horizon_shifts_the_visible_past() {
        let query = q(1, 20, 0);
        assert_eq!(query.at_horizon(1).t, RelativeDay(20));
        assert_eq!(query.at_horizon(7).t, RelativeDay(14));
    }
}
