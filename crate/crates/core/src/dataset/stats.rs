//! Dataset summary statistics: split table, per-complex-event rows, entity
//! frequencies and the month-by-year event calendar.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::model::{ComplexEventId, Dataset, EntityId, Split};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: String,
    pub atomic_events: usize,
    pub complex_events: usize,
    pub entities: usize,
    pub relations: usize,
    pub docs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexEventStats {
    pub complex_event: ComplexEventId,
    pub name: String,
    pub events: usize,
    pub docs: usize,
    pub entities: usize,
    pub first_day: u32,
    pub last_day: u32,
    /// `last_day - first_day + 1`
    pub span_days: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFrequency {
    pub entity: EntityId,
    pub name: String,
    /// Subject plus object occurrences.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthCount {
    pub year: i32,
    pub month: u32,
    pub events: usize,
    pub docs: usize,
    pub complex_events: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// train, val, test, total, in that order.
    pub splits: Vec<SplitCounts>,
    pub complex_events: Vec<ComplexEventStats>,
    /// Sorted by count descending, then entity id.
    pub entity_frequency: Vec<EntityFrequency>,
    pub monthly: Vec<MonthCount>,
}

impl DatasetStats {
    pub fn total(&self) -> &SplitCounts {
        self.splits.last().expect("stats always carry a total row")
    }

    pub fn split(&self, split: Split) -> &SplitCounts {
        &self.splits[split as usize]
    }

    pub fn top_entities(&self, n: usize) -> &[EntityFrequency] {
        &self.entity_frequency[..n.min(self.entity_frequency.len())]
    }

    pub fn splits_csv(&self) -> String {
        let mut out = String::from("split,atomic_events,complex_events,entities,relations,docs\n");
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.split, s.atomic_events, s.complex_events, s.entities, s.relations, s.docs
            );
        }
        out
    }

    pub fn complex_events_csv(&self) -> String {
        let mut out =
            String::from("complex_event,name,events,docs,entities,first_day,last_day,span_days\n");
        for c in &self.complex_events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.complex_event,
                csv_field(&c.name),
                c.events,
                c.docs,
                c.entities,
                c.first_day,
                c.last_day,
                c.span_days
            );
        }
        out
    }

    pub fn entity_frequency_csv(&self) -> String {
        let mut out = String::from("entity,name,count\n");
        for e in &self.entity_frequency {
            let _ = writeln!(out, "{},{},{}", e.entity, csv_field(&e.name), e.count);
        }
        out
    }

    pub fn monthly_csv(&self) -> String {
        let mut out = String::from("year,month,events,docs,complex_events\n");
        for m in &self.monthly {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.year, m.month, m.events, m.docs, m.complex_events
            );
        }
        out
    }

    /// Fixed-width split table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>14} {:>6} {:>9} {:>10} {:>7}\n",
            "split", "atomic_events", "CEs", "entities", "relations", "docs"
        );
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{:<8} {:>14} {:>6} {:>9} {:>10} {:>7}",
                s.split, s.atomic_events, s.complex_events, s.entities, s.relations, s.docs
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    let mut splits = Vec::with_capacity(4);
    for split in Split::ALL {
        let events: Vec<_> = ds.split_events(split).collect();
        splits.push(counts(
            split.as_str(),
            events.iter().copied(),
            ds.split_documents(split).count(),
        ));
    }
    splits.push(counts("total", ds.events(), ds.document_count()));

    let mut per_ce: BTreeMap<ComplexEventId, (usize, HashSet<EntityId>, u32, u32)> =
        BTreeMap::new();
    for e in ds.events() {
        let row = per_ce
            .entry(e.complex_event)
            .or_insert((0, HashSet::new(), u32::MAX, 0));
        row.0 += 1;
        row.1.insert(e.subject);
        row.1.insert(e.object);
        row.2 = row.2.min(e.t.0);
        row.3 = row.3.max(e.t.0);
    }
    let mut docs_per_ce: BTreeMap<ComplexEventId, usize> = BTreeMap::new();
    for d in ds.documents() {
        *docs_per_ce.entry(d.complex_event).or_default() += 1;
    }
    let complex_events = per_ce
        .into_iter()
        .map(|(ce, (events, ents, first, last))| ComplexEventStats {
            complex_event: ce,
            name: ds.vocab.complex_events.name(ce).unwrap_or_default().to_owned(),
            events,
            docs: docs_per_ce.get(&ce).copied().unwrap_or(0),
            entities: ents.len(),
            first_day: first,
            last_day: last,
            span_days: last - first + 1,
        })
        .collect();

    let mut freq: BTreeMap<EntityId, usize> = BTreeMap::new();
    for e in ds.events() {
        *freq.entry(e.subject).or_default() += 1;
        *freq.entry(e.object).or_default() += 1;
    }
    let mut entity_frequency: Vec<EntityFrequency> = freq
        .into_iter()
        .map(|(entity, count)| EntityFrequency {
            entity,
            name: ds.vocab.entity_name(entity),
            count,
        })
        .collect();
    entity_frequency.sort_by(|a, b| b.count.cmp(&a.count).then(a.entity.cmp(&b.entity)));

    let mut months: BTreeMap<(i32, u32), (usize, usize, BTreeSet<ComplexEventId>)> =
        BTreeMap::new();
    for e in ds.events() {
        let d = e.t.to_date(ds.epoch_date);
        let m = months.entry((d.year(), d.month())).or_default();
        m.0 += 1;
        m.2.insert(e.complex_event);
    }
    for doc in ds.documents() {
        let d = doc.t.to_date(ds.epoch_date);
        months.entry((d.year(), d.month())).or_default().1 += 1;
    }
    let monthly = months
        .into_iter()
        .map(|((year, month), (events, docs, ces))| MonthCount {
            year,
            month,
            events,
            docs,
            complex_events: ces.len(),
        })
        .collect();

    DatasetStats {
        splits,
        complex_events,
        entity_frequency,
        monthly,
    }
}

fn counts<'a>(
    name: &str,
    events: impl Iterator<Item = &'a crate::model::AtomicEvent>,
    docs: usize,
) -> SplitCounts {
    let mut n = 0;
    let mut ces = HashSet::new();
    let mut ents = HashSet::new();
    let mut rels = HashSet::new();
    for e in events {
        n += 1;
        ces.insert(e.complex_event);
        ents.insert(e.subject);
        ents.insert(e.object);
        rels.insert(e.relation);
    }
    SplitCounts {
        split: name.to_owned(),
        atomic_events: n,
        complex_events: ces.len(),
        entities: ents.len(),
        relations: rels.len(),
        docs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SyntheticSpec};
    use crate::model::*;
    use chrono::NaiveDate;
    use std::collections::HashMap;

    #[test]
    fn single_event_dataset() {
        let mut v = Vocabularies::default();
        v.entities.insert(EntityId(0), "A").unwrap();
        v.entities.insert(EntityId(1), "B").unwrap();
        v.relations.insert(RelationId(0), "r").unwrap();
        v.complex_events.insert(ComplexEventId(0), "c").unwrap();
        let ds = Dataset::new(
            v,
            vec![AtomicEvent {
                event_id: EventId(0),
                subject: EntityId(0),
                relation: RelationId(0),
                object: EntityId(1),
                t: RelativeDay(3),
                complex_event: ComplexEventId(0),
                source_docs: vec![DocumentId(0)],
            }],
            vec![Document {
                doc_id: DocumentId(0),
                t: RelativeDay(3),
                complex_event: ComplexEventId(0),
                title: "x".into(),
                body: "A did r to B".into(),
                summary: None,
            }],
            SplitRanges {
                train: DayRange::new(0, 10),
                val: DayRange::new(10, 10),
                test: DayRange::new(10, 10),
            },
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        )
        .unwrap();
        let s = compute_stats(&ds);
        let total = s.total();
        assert_eq!(total.complex_events, 1);
        assert_eq!(total.entities, 2);
        assert_eq!(total.relations, 1);
        assert_eq!(s.complex_events.len(), 1);
        assert_eq!(s.complex_events[0].span_days, 1);
    }

    #[test]
    fn frequency_table_matches_count_and_sort_oracle() {
        let ds = generate_synthetic(&SyntheticSpec::small(11)).unwrap();
        let stats = compute_stats(&ds);

        let mut oracle: HashMap<u32, usize> = HashMap::new();
        for e in ds.events() {
            *oracle.entry(e.subject.0).or_insert(0) += 1;
            *oracle.entry(e.object.0).or_insert(0) += 1;
        }
        let mut ranked: Vec<(u32, usize)> = oracle.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let top: Vec<(u32, usize)> = stats
            .top_entities(10)
            .iter()
            .map(|f| (f.entity.0, f.count))
            .collect();
        assert_eq!(top, ranked[..10.min(ranked.len())].to_vec());

        let sum: usize = stats.entity_frequency.iter().map(|f| f.count).sum();
        assert_eq!(sum, 2 * ds.event_count());
    }

    #[test]
    fn split_event_counts_sum_to_total() {
        let ds = generate_synthetic(&SyntheticSpec::small(12)).unwrap();
        let s = compute_stats(&ds);
        let sum: usize = s.splits[..3].iter().map(|c| c.atomic_events).sum();
        assert_eq!(sum, s.total().atomic_events);
        let docs: usize = s.splits[..3].iter().map(|c| c.docs).sum();
        assert_eq!(docs, s.total().docs);
        let ce_rows: usize = s.complex_events.iter().map(|c| c.events).sum();
        assert_eq!(ce_rows, ds.event_count());
        let months: usize = s.monthly.iter().map(|m| m.events).sum();
        assert_eq!(months, ds.event_count());
    }
}
