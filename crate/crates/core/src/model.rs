//! Event, document and dataset types shared by every other module.
//!
//! A [`Dataset`] is immutable once built. It owns the vocabularies, the
//! time-ordered [`TimeSlice`]s, the document store and the split ranges, plus a
//! handful of lookup tables (events by complex event, by subject) that the
//! history builders and samplers use for windowed scans.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::whitespace_token_count;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident, $inner:ty) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(EntityId, u32);
id_newtype!(RelationId, u32);
id_newtype!(ComplexEventId, u32);
id_newtype!(DocumentId, u32);
id_newtype!(EventId, u64);

/// Days since the dataset epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelativeDay(pub u32);

impl RelativeDay {
    pub fn to_date(self, epoch: NaiveDate) -> NaiveDate {
        epoch + chrono::Duration::days(i64::from(self.0))
    }

    /// `self - days`, clamped at day 0.
    pub fn saturating_sub(self, days: u32) -> RelativeDay {
        RelativeDay(self.0.saturating_sub(days))
    }
}

impl fmt::Display for RelativeDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("date {date} precedes the epoch {epoch}")]
    BeforeEpoch { date: NaiveDate, epoch: NaiveDate },
    #[error("date {date} is too far from the epoch {epoch}")]
    OutOfRange { date: NaiveDate, epoch: NaiveDate },
    #[error("vocabulary conflict: id {id} / name {name:?} already registered")]
    VocabularyConflict { id: u32, name: String },
    #[error("events reference documents with mismatched timestamps: {0:?}")]
    DocTimeMismatch(Vec<(EventId, DocumentId)>),
    #[error("dataset is invalid: {0}")]
    Invalid(ValidationReport),
}

pub fn to_relative_day(date: NaiveDate, epoch: NaiveDate) -> Result<RelativeDay, ModelError> {
    let days = date.signed_duration_since(epoch).num_days();
    if days < 0 {
        return Err(ModelError::BeforeEpoch { date, epoch });
    }
    u32::try_from(days)
        .map(RelativeDay)
        .map_err(|_| ModelError::OutOfRange { date, epoch })
}

/// A bijection between registered ids and their canonical names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab<I: Ord + Hash + Copy> {
    by_id: BTreeMap<I, String>,
    by_name: HashMap<String, I>,
}

impl<I: Ord + Hash + Copy> Default for Vocab<I> {
    fn default() -> Self {
        Self {
            by_id: BTreeMap::new(),
            by_name: HashMap::new(),
        }
    }
}

impl<I: Ord + Hash + Copy + Into<u32>> Vocab<I> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `id <-> name`. Re-registering the identical pair is a no-op;
    /// any other reuse of the id or the name is a conflict.
    pub fn insert(&mut self, id: I, name: impl Into<String>) -> Result<(), ModelError> {
        let name = name.into();
        match (self.by_id.get(&id), self.by_name.get(&name)) {
            (Some(existing), _) if *existing == name => Ok(()),
            (None, None) => {
                self.by_name.insert(name.clone(), id);
                self.by_id.insert(id, name);
                Ok(())
            }
            _ => Err(ModelError::VocabularyConflict { id: id.into(), name }),
        }
    }

    pub fn name(&self, id: I) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<I> {
        self.by_name.get(name).copied()
    }

    pub fn contains(&self, id: I) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (I, &str)> {
        self.by_id.iter().map(|(id, name)| (*id, name.as_str()))
    }

    pub fn ids(&self) -> impl Iterator<Item = I> + '_ {
        self.by_id.keys().copied()
    }
}

macro_rules! into_u32 {
    ($($t:ty),*) => {$(
        impl From<$t> for u32 {
            fn from(v: $t) -> u32 {
                v.0
            }
        }
    )*};
}
into_u32!(EntityId, RelationId, ComplexEventId);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub entities: Vocab<EntityId>,
    pub relations: Vocab<RelationId>,
    pub complex_events: Vocab<ComplexEventId>,
}

impl Vocabularies {
    /// Entity name, or `#<id>` for an unregistered id.
    pub fn entity_name(&self, id: EntityId) -> String {
        self.entities
            .name(id)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{id}"))
    }

    pub fn relation_name(&self, id: RelationId) -> String {
        self.relations
            .name(id)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{id}"))
    }
}

/// One quintuple `(subject, relation, object, t, complex_event)` with the
/// documents it was extracted from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicEvent {
    pub event_id: EventId,
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
    pub source_docs: Vec<DocumentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocumentId,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSlice {
    pub t: RelativeDay,
    pub events: Vec<AtomicEvent>,
    pub docs: Vec<DocumentId>,
}

/// Half-open day range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: u32,
    pub end: u32,
}

impl DayRange {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: RelativeDay) -> bool {
        self.start <= t.0 && t.0 < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &DayRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: DayRange,
    pub val: DayRange,
    pub test: DayRange,
}

impl SplitRanges {
    pub fn range(&self, split: Split) -> DayRange {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// First split whose range contains `t`.
    pub fn split_of(&self, t: RelativeDay) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.range(*s).contains(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DuplicateEventId,
    DuplicateDocId,
    UnknownEntity,
    UnknownRelation,
    UnknownComplexEvent,
    MissingSourceDocs,
    DanglingDocument,
    DocTimeMismatch,
    SliceOrder,
    SliceTimeMismatch,
    UnsortedSlice,
    EmptyBody,
    SummaryNotShorter,
    SplitOverlap,
    SplitOrder,
    EventOutsideSplits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, detail: String) {
        self.violations.push(Violation { kind, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(10) {
            write!(f, "; {:?}: {}", v.kind, v.detail)?;
        }
        Ok(())
    }
}

/// Position of an event inside `Dataset::slices`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EventRef {
    slice: u32,
    pos: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Lookups {
    by_ce: HashMap<ComplexEventId, Vec<EventRef>>,
    by_subject: HashMap<EntityId, Vec<EventRef>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub vocab: Vocabularies,
    slices: Vec<TimeSlice>,
    documents: BTreeMap<DocumentId, Document>,
    pub splits: SplitRanges,
    pub epoch_date: NaiveDate,
    lookups: Lookups,
}

/// Groups events and documents by timestamp, rejecting events whose source
/// documents carry a different timestamp.
pub fn build_slices(
    events: Vec<AtomicEvent>,
    docs: &[Document],
) -> Result<Vec<TimeSlice>, ModelError> {
    let doc_t: HashMap<DocumentId, RelativeDay> = docs.iter().map(|d| (d.doc_id, d.t)).collect();
    let mut bad = Vec::new();
    for e in &events {
        for d in &e.source_docs {
            if doc_t.get(d).is_some_and(|t| *t != e.t) {
                bad.push((e.event_id, *d));
            }
        }
    }
    if !bad.is_empty() {
        return Err(ModelError::DocTimeMismatch(bad));
    }
    Ok(group_slices(events, docs))
}

fn group_slices(events: Vec<AtomicEvent>, docs: &[Document]) -> Vec<TimeSlice> {
    let mut by_t: BTreeMap<RelativeDay, (Vec<AtomicEvent>, Vec<DocumentId>)> = BTreeMap::new();
    for e in events {
        by_t.entry(e.t).or_default().0.push(e);
    }
    for d in docs {
        by_t.entry(d.t).or_default().1.push(d.doc_id);
    }
    by_t.into_iter()
        .map(|(t, (mut events, mut docs))| {
            events.sort_by_key(|e| e.event_id);
            docs.sort();
            TimeSlice { t, events, docs }
        })
        .collect()
}

impl Dataset {
    /// Builds a dataset and rejects it unless it validates cleanly.
    pub fn new(
        vocab: Vocabularies,
        events: Vec<AtomicEvent>,
        docs: Vec<Document>,
        splits: SplitRanges,
        epoch_date: NaiveDate,
    ) -> Result<Dataset, ModelError> {
        let ds = Self::new_unchecked(vocab, events, docs, splits, epoch_date);
        let report = validate_dataset(&ds);
        if report.is_empty() {
            Ok(ds)
        } else {
            Err(ModelError::Invalid(report))
        }
    }

    /// Builds a dataset without validation; see [`validate_dataset`].
    pub fn new_unchecked(
        vocab: Vocabularies,
        events: Vec<AtomicEvent>,
        docs: Vec<Document>,
        splits: SplitRanges,
        epoch_date: NaiveDate,
    ) -> Dataset {
        let slices = group_slices(events, &docs);
        let documents = docs.into_iter().map(|d| (d.doc_id, d)).collect();
        Self::from_slices(vocab, slices, documents, splits, epoch_date)
    }

    fn from_slices(
        vocab: Vocabularies,
        slices: Vec<TimeSlice>,
        documents: BTreeMap<DocumentId, Document>,
        splits: SplitRanges,
        epoch_date: NaiveDate,
    ) -> Dataset {
        let mut lookups = Lookups::default();
        for (si, slice) in slices.iter().enumerate() {
            for (pi, e) in slice.events.iter().enumerate() {
                let r = EventRef {
                    slice: si as u32,
                    pos: pi as u32,
                };
                lookups.by_ce.entry(e.complex_event).or_default().push(r);
                lookups.by_subject.entry(e.subject).or_default().push(r);
            }
        }
        Dataset {
            vocab,
            slices,
            documents,
            splits,
            epoch_date,
            lookups,
        }
    }

    /// Same data with different split ranges.
    pub fn with_splits(&self, splits: SplitRanges) -> Dataset {
        Dataset {
            splits,
            ..self.clone()
        }
    }

    pub fn slices(&self) -> &[TimeSlice] {
        &self.slices
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn document(&self, id: DocumentId) -> Option<&Document> {
        self.documents.get(&id)
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    /// All events in `(t, event_id)` order.
    pub fn events(&self) -> impl Iterator<Item = &AtomicEvent> {
        self.slices.iter().flat_map(|s| s.events.iter())
    }

    pub fn event_count(&self) -> usize {
        self.slices.iter().map(|s| s.events.len()).sum()
    }

    pub fn first_day(&self) -> Option<RelativeDay> {
        self.slices.first().map(|s| s.t)
    }

    pub fn last_day(&self) -> Option<RelativeDay> {
        self.slices.last().map(|s| s.t)
    }

    pub fn slice_at(&self, t: RelativeDay) -> Option<&TimeSlice> {
        self.slices
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|i| &self.slices[i])
    }

    /// Events with `from <= t < to`, in time order.
    pub fn events_between(
        &self,
        from: RelativeDay,
        to: RelativeDay,
    ) -> impl Iterator<Item = &AtomicEvent> {
        let lo = self.slices.partition_point(|s| s.t < from);
        let hi = self.slices.partition_point(|s| s.t < to).max(lo);
        self.slices[lo..hi].iter().flat_map(|s| s.events.iter())
    }

    /// Events of one complex event with `from <= t < to`, in time order.
    pub fn ce_events_between(
        &self,
        ce: ComplexEventId,
        from: RelativeDay,
        to: RelativeDay,
    ) -> impl Iterator<Item = &AtomicEvent> {
        self.window(self.lookups.by_ce.get(&ce), from, to)
    }

    /// Events with the given subject and `from <= t < to`, in time order.
    pub fn subject_events_between(
        &self,
        subject: EntityId,
        from: RelativeDay,
        to: RelativeDay,
    ) -> impl Iterator<Item = &AtomicEvent> {
        self.window(self.lookups.by_subject.get(&subject), from, to)
    }

    /// Every event of a complex event.
    pub fn ce_events(&self, ce: ComplexEventId) -> impl Iterator<Item = &AtomicEvent> {
        self.ce_events_between(ce, RelativeDay(0), RelativeDay(u32::MAX))
    }

    fn window<'a>(
        &'a self,
        refs: Option<&'a Vec<EventRef>>,
        from: RelativeDay,
        to: RelativeDay,
    ) -> impl Iterator<Item = &'a AtomicEvent> + 'a {
        let refs: &[EventRef] = refs.map(Vec::as_slice).unwrap_or(&[]);
        let t_of = |r: &EventRef| self.slices[r.slice as usize].t;
        let lo = refs.partition_point(|r| t_of(r) < from);
        let hi = refs.partition_point(|r| t_of(r) < to).max(lo);
        refs[lo..hi]
            .iter()
            .map(move |r| &self.slices[r.slice as usize].events[r.pos as usize])
    }

    pub fn split_events(&self, split: Split) -> impl Iterator<Item = &AtomicEvent> {
        let range = self.splits.range(split);
        self.events_between(RelativeDay(range.start), RelativeDay(range.end))
    }

    pub fn split_documents(&self, split: Split) -> impl Iterator<Item = &Document> {
        let range = self.splits.range(split);
        self.documents.values().filter(move |d| range.contains(d.t))
    }

    /// Complex events that own at least one event, in id order.
    pub fn complex_event_ids(&self) -> BTreeSet<ComplexEventId> {
        self.lookups.by_ce.keys().copied().collect()
    }
}

/// Enumerates every violated invariant. An empty report means the dataset is
/// well-formed.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    use ViolationKind as K;
    let mut report = ValidationReport::default();
    let vocab = &ds.vocab;

    let mut seen_events = BTreeSet::new();
    let mut prev_t: Option<RelativeDay> = None;
    for slice in &ds.slices {
        if prev_t.is_some_and(|p| p >= slice.t) {
            report.push(K::SliceOrder, format!("slice t={} out of order", slice.t));
        }
        prev_t = Some(slice.t);
        if slice.events.windows(2).any(|w| w[0].event_id > w[1].event_id) {
            report.push(K::UnsortedSlice, format!("slice t={}", slice.t));
        }
        for d in &slice.docs {
            if ds.documents.get(d).is_some_and(|doc| doc.t != slice.t) {
                report.push(K::SliceTimeMismatch, format!("doc {d} in slice {}", slice.t));
            }
        }
        for e in &slice.events {
            if e.t != slice.t {
                report.push(K::SliceTimeMismatch, format!("event {} in slice {}", e.event_id, slice.t));
            }
            if !seen_events.insert(e.event_id) {
                report.push(K::DuplicateEventId, format!("event {}", e.event_id));
            }
            for ent in [e.subject, e.object] {
                if !vocab.entities.contains(ent) {
                    report.push(K::UnknownEntity, format!("event {} entity {ent}", e.event_id));
                }
            }
            if !vocab.relations.contains(e.relation) {
                report.push(
                    K::UnknownRelation,
                    format!("event {} relation {}", e.event_id, e.relation),
                );
            }
            if !vocab.complex_events.contains(e.complex_event) {
                report.push(
                    K::UnknownComplexEvent,
                    format!("event {} complex event {}", e.event_id, e.complex_event),
                );
            }
            if e.source_docs.is_empty() {
                report.push(K::MissingSourceDocs, format!("event {}", e.event_id));
            }
            for d in &e.source_docs {
                match ds.documents.get(d) {
                    None => report.push(K::DanglingDocument, format!("event {} doc {d}", e.event_id)),
                    Some(doc) if doc.t != e.t => report.push(
                        K::DocTimeMismatch,
                        format!("event {} (t={}) doc {d} (t={})", e.event_id, e.t, doc.t),
                    ),
                    Some(_) => {}
                }
            }
            if ds.splits.split_of(e.t).is_none() {
                report.push(K::EventOutsideSplits, format!("event {} t={}", e.event_id, e.t));
            }
        }
    }

    for doc in ds.documents.values() {
        if !vocab.complex_events.contains(doc.complex_event) {
            report.push(
                K::UnknownComplexEvent,
                format!("doc {} complex event {}", doc.doc_id, doc.complex_event),
            );
        }
        let body_len = whitespace_token_count(&doc.body);
        if body_len == 0 {
            report.push(K::EmptyBody, format!("doc {}", doc.doc_id));
        }
        if let Some(summary) = &doc.summary {
            if whitespace_token_count(summary) >= body_len && body_len > 0 {
                report.push(K::SummaryNotShorter, format!("doc {}", doc.doc_id));
            }
        }
    }

    let s = &ds.splits;
    let ranges = [("train", s.train), ("val", s.val), ("test", s.test)];
    for i in 0..ranges.len() {
        for j in i + 1..ranges.len() {
            if ranges[i].1.overlaps(&ranges[j].1) {
                report.push(
                    K::SplitOverlap,
                    format!("{} {:?} overlaps {} {:?}", ranges[i].0, ranges[i].1, ranges[j].0, ranges[j].1),
                );
            }
        }
    }
    let non_empty: Vec<_> = ranges.iter().filter(|(_, r)| !r.is_empty()).collect();
    if non_empty.windows(2).any(|w| w[0].1.start > w[1].1.start) {
        report.push(K::SplitOrder, "split ranges not ordered train < val < test".into());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
    }

    fn vocab() -> Vocabularies {
        let mut v = Vocabularies::default();
        for (i, n) in ["Israel", "Hamas", "Egypt"].iter().enumerate() {
            v.entities.insert(EntityId(i as u32), *n).unwrap();
        }
        v.relations.insert(RelationId(0), "Fire rocket").unwrap();
        v.complex_events.insert(ComplexEventId(0), "Gaza conflict").unwrap();
        v
    }

    fn event(id: u64, t: u32, doc: u32) -> AtomicEvent {
        AtomicEvent {
            event_id: EventId(id),
            subject: EntityId(0),
            relation: RelationId(0),
            object: EntityId(1),
            t: RelativeDay(t),
            complex_event: ComplexEventId(0),
            source_docs: vec![DocumentId(doc)],
        }
    }

    fn doc(id: u32, t: u32) -> Document {
        Document {
            doc_id: DocumentId(id),
            t: RelativeDay(t),
            complex_event: ComplexEventId(0),
            title: "t".into(),
            body: "Israel fired rockets at Hamas positions".into(),
            summary: None,
        }
    }

    fn all_train() -> SplitRanges {
        SplitRanges {
            train: DayRange::new(0, 100),
            val: DayRange::new(100, 100),
            test: DayRange::new(100, 100),
        }
    }

    #[test]
    fn relative_day_identity_and_offsets() {
        assert_eq!(to_relative_day(epoch(), epoch()).unwrap(), RelativeDay(0));
        let d = epoch() + chrono::Duration::days(2190);
        assert_eq!(to_relative_day(d, epoch()).unwrap(), RelativeDay(2190));
        assert_eq!(RelativeDay(2190).to_date(epoch()), d);
        let d = epoch() + chrono::Duration::days(365);
        assert_eq!(to_relative_day(d, epoch()).unwrap(), RelativeDay(365));
    }

    #[test]
    fn relative_day_before_epoch_is_an_error() {
        let d = epoch() - chrono::Duration::days(1);
        assert!(matches!(
            to_relative_day(d, epoch()),
            Err(ModelError::BeforeEpoch { .. })
        ));
    }

    #[test]
    fn vocab_is_a_bijection() {
        let mut v: Vocab<EntityId> = Vocab::new();
        v.insert(EntityId(3), "Israel").unwrap();
        v.insert(EntityId(3), "Israel").unwrap();
        assert!(v.insert(EntityId(4), "Israel").is_err());
        assert!(v.insert(EntityId(3), "Hamas").is_err());
        assert_eq!(v.id("Israel"), Some(EntityId(3)));
        assert_eq!(v.name(EntityId(3)), Some("Israel"));
    }

    #[test]
    fn slices_group_by_day() {
        let events = vec![event(2, 5, 0), event(1, 5, 0), event(3, 9, 1)];
        let slices = build_slices(events, &[doc(0, 5), doc(1, 9)]).unwrap();
        let sizes: Vec<_> = slices.iter().map(|s| s.events.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
        assert_eq!(slices[0].events[0].event_id, EventId(1));
        assert!(build_slices(vec![], &[]).unwrap().is_empty());
    }

    #[test]
    fn slices_reject_mismatched_doc_time() {
        let err = build_slices(vec![event(7, 5, 0)], &[doc(0, 6)]).unwrap_err();
        assert_eq!(err, ModelError::DocTimeMismatch(vec![(EventId(7), DocumentId(0))]));
    }

    #[test]
    fn validation_flags_planted_defects() {
        let ok = Dataset::new(
            vocab(),
            vec![event(1, 5, 0)],
            vec![doc(0, 5)],
            all_train(),
            epoch(),
        )
        .unwrap();
        assert!(validate_dataset(&ok).is_empty());

        let bad = Dataset::new_unchecked(
            vocab(),
            vec![event(1, 5, 0)],
            vec![doc(0, 6)],
            all_train(),
            epoch(),
        );
        let report = validate_dataset(&bad);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.count(ViolationKind::DocTimeMismatch), 1);

        let overlapping = SplitRanges {
            train: DayRange::new(0, 50),
            val: DayRange::new(40, 60),
            test: DayRange::new(60, 100),
        };
        let ds = ok.with_splits(overlapping);
        assert_eq!(validate_dataset(&ds).count(ViolationKind::SplitOverlap), 1);
    }

    #[test]
    fn windows_are_half_open() {
        let events = vec![event(1, 1, 0), event(2, 3, 1), event(3, 5, 2)];
        let docs = vec![doc(0, 1), doc(1, 3), doc(2, 5)];
        let ds = Dataset::new(vocab(), events, docs, all_train(), epoch()).unwrap();
        let ids: Vec<_> = ds
            .ce_events_between(ComplexEventId(0), RelativeDay(1), RelativeDay(5))
            .map(|e| e.event_id.0)
            .collect();
        assert_eq!(ids, vec![1, 2]);
        let ids: Vec<_> = ds
            .subject_events_between(EntityId(0), RelativeDay(2), RelativeDay(6))
            .map(|e| e.event_id.0)
            .collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(ds.events_between(RelativeDay(4), RelativeDay(2)).count(), 0);
    }
}
