//! Seeded synthetic datasets with planted temporal patterns.
//!
//! Each complex event owns a private pool of entities. The first
//! `actors_per_ce` entities of a pool act as subjects; every actor follows one
//! pattern for the lifetime of its complex event:
//!
//! * **copy-head**: one event per day, the object repeating the actor's object
//!   from the previous day (the relation is redrawn daily);
//! * **periodic**: one fixed triple emitted every `period_days` days;
//! * **noise**: one event per day with a random relation and object.
//!
//! Every `(complex event, day)` with events gets one template document whose
//! body mentions the subject, relation and object of each of its events.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::model::{
    AtomicEvent, ComplexEventId, Dataset, DayRange, Document, DocumentId, EntityId, EventId,
    RelationId, RelativeDay, SplitRanges, Vocabularies,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternMix {
    pub periodic: f64,
    pub copy_head: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub complex_events: u32,
    pub span_days: u32,
    pub entities_per_ce: u32,
    pub actors_per_ce: u32,
    /// Offset between the start days of consecutive complex events.
    pub stagger_days: u32,
    pub relations: u32,
    pub period_days: u32,
    pub mix: PatternMix,
    /// Filler sentences appended to each document body. With zero filler no
    /// summary is emitted.
    pub filler_sentences: u32,
    pub epoch_date: NaiveDate,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            complex_events: 24,
            span_days: 45,
            entities_per_ce: 10,
            actors_per_ce: 3,
            stagger_days: 9,
            relations: 30,
            period_days: 7,
            mix: PatternMix {
                periodic: 0.2,
                copy_head: 0.5,
                noise: 0.3,
            },
            filler_sentences: 3,
            epoch_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    /// A few hundred events; quick enough for unit tests.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            complex_events: 6,
            span_days: 12,
            entities_per_ce: 8,
            actors_per_ce: 3,
            stagger_days: 4,
            relations: 12,
            ..Self::default()
        }
    }

    /// Pure copy-head data: every object repeats its subject's previous-day object.
    pub fn copy_head(seed: u64) -> Self {
        Self {
            seed,
            mix: PatternMix {
                periodic: 0.0,
                copy_head: 1.0,
                noise: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let m = self.mix;
        let fractions = [m.periodic, m.copy_head, m.noise];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(infeasible("pattern fractions must be in [0, 1] and sum to 1"));
        }
        if self.span_days == 0 {
            return Err(infeasible("span_days must be positive"));
        }
        if self.entities_per_ce < 2 {
            return Err(infeasible("entities_per_ce must be at least 2"));
        }
        if self.actors_per_ce == 0 || self.actors_per_ce > self.entities_per_ce {
            return Err(infeasible("actors_per_ce must be in 1..=entities_per_ce"));
        }
        if self.complex_events == 0 || self.relations == 0 || self.period_days == 0 {
            return Err(infeasible(
                "complex_events, relations and period_days must be positive",
            ));
        }
        if u64::from(self.complex_events) * u64::from(self.entities_per_ce) > NAME_SPACE {
            return Err(infeasible("too many entities for the name generator"));
        }
        if !(0.0..1.0).contains(&(self.val_fraction + self.test_fraction))
            || self.val_fraction < 0.0
            || self.test_fraction < 0.0
        {
            return Err(infeasible("val_fraction + test_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

fn infeasible(msg: &str) -> DatasetError {
    DatasetError::Domain(format!("infeasible synthetic spec: {msg}"))
}

const SYLLABLES: [&str; 16] = [
    "ka", "ro", "mi", "sa", "lu", "te", "no", "ba", "vi", "de", "zo", "ri", "pa", "gu", "le", "fa",
];
const ROLES: [&str; 12] = [
    "Ministry", "Council", "Police", "Militia", "Party", "Army", "Embassy", "Court", "Union",
    "Agency", "Parliament", "Front",
];
const NAME_SPACE: u64 = 65_536;

fn entity_name(k: u32) -> String {
    // odd multiplier: a bijection on 0..2^16, so names stay unique
    let mut code = (u64::from(k) * 40_503 + 12_345) % NAME_SPACE;
    let mut base = String::new();
    for _ in 0..4 {
        base.push_str(SYLLABLES[(code % 16) as usize]);
        code /= 16;
    }
    let mut chars = base.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or('X');
    let role = ROLES[(k as usize * 7 + 3) % ROLES.len()];
    format!("{first}{} {role}", chars.as_str())
}

const RELATIONS: [&str; 24] = [
    "Make statement",
    "Consult",
    "Engage in diplomatic cooperation",
    "Provide aid",
    "Demand",
    "Threaten",
    "Protest",
    "Fight with small arms",
    "Express intent to cooperate",
    "Appeal for negotiation",
    "Accuse",
    "Reject proposal",
    "Impose sanctions",
    "Arrest",
    "Host visit",
    "Sign agreement",
    "Cooperate economically",
    "Criticize",
    "Investigate",
    "Mobilize forces",
    "Praise",
    "Deny responsibility",
    "Release prisoners",
    "Attack",
];

fn relation_name(i: u32) -> String {
    let base = RELATIONS[i as usize % RELATIONS.len()];
    match i as usize / RELATIONS.len() {
        0 => base.to_owned(),
        n => format!("{base} variant {}", n + 1),
    }
}

const EVENT_TEMPLATES: [&str; 3] = [
    "{s} and {o} were involved in an incident classed as {r}.",
    "Officials reported that {s} acted toward {o} in a manner described as {r}.",
    "According to local media, {r} was the label given to the latest move by {s} concerning {o}.",
];

const FILLER: [&str; 10] = [
    "Observers expect further developments in the coming days.",
    "The situation remained tense according to regional analysts.",
    "No further details were immediately available.",
    "Diplomats from several countries called for calm.",
    "The statement was carried by state media late in the evening.",
    "Residents described a day of uncertainty across the area.",
    "Analysts said the move could shape talks scheduled for next week.",
    "A spokesperson declined to comment on the record.",
    "Earlier reports could not be independently verified.",
    "International organizations continued to monitor events closely.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Periodic,
    CopyHead,
    Noise,
}

struct Actor {
    entity: EntityId,
    pattern: Pattern,
    last_object: Option<EntityId>,
    fixed: (RelationId, EntityId),
    phase: u32,
}

/// Generates a dataset; identical specs yield identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DatasetError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut vocab = Vocabularies::default();
    for r in 0..spec.relations {
        vocab
            .relations
            .insert(RelationId(r), relation_name(r))
            .map_err(|e| DatasetError::Domain(e.to_string()))?;
    }

    let n_actors = (spec.complex_events * spec.actors_per_ce) as usize;
    let mut patterns = allocate_patterns(n_actors, spec.mix);
    patterns.shuffle(&mut rng);

    let mut pools: Vec<Vec<EntityId>> = Vec::new();
    let mut actors: Vec<Vec<Actor>> = Vec::new();
    for c in 0..spec.complex_events {
        let pool: Vec<EntityId> = (0..spec.entities_per_ce)
            .map(|i| EntityId(c * spec.entities_per_ce + i))
            .collect();
        for e in &pool {
            vocab
                .entities
                .insert(*e, entity_name(e.0))
                .map_err(|err| DatasetError::Domain(err.to_string()))?;
        }
        let ce_name = format!("Crisis {c}: {}", vocab.entity_name(pool[0]));
        vocab
            .complex_events
            .insert(ComplexEventId(c), ce_name)
            .map_err(|e| DatasetError::Domain(e.to_string()))?;
        let mut ce_actors = Vec::new();
        for a in 0..spec.actors_per_ce as usize {
            let entity = pool[a];
            let pattern = patterns[c as usize * spec.actors_per_ce as usize + a];
            let fixed = (
                RelationId(rng.random_range(0..spec.relations)),
                pick_other(&pool, entity, &mut rng),
            );
            let phase = rng.random_range(0..spec.period_days);
            ce_actors.push(Actor {
                entity,
                pattern,
                last_object: None,
                fixed,
                phase,
            });
        }
        pools.push(pool);
        actors.push(ce_actors);
    }

    let last_day = (spec.complex_events - 1) * spec.stagger_days + spec.span_days - 1;
    let mut events = Vec::new();
    let mut docs = Vec::new();
    for day in 0..=last_day {
        for c in 0..spec.complex_events {
            let start = c * spec.stagger_days;
            if day < start || day >= start + spec.span_days {
                continue;
            }
            let local = day - start;
            let ce = ComplexEventId(c);
            let doc_id = DocumentId(docs.len() as u32);
            let mut day_events = Vec::new();
            for actor in actors[c as usize].iter_mut() {
                let triple = match actor.pattern {
                    Pattern::Periodic => {
                        if local % spec.period_days != actor.phase {
                            continue;
                        }
                        actor.fixed
                    }
                    Pattern::CopyHead => {
                        let object = match actor.last_object {
                            Some(o) => o,
                            None => pick_other(&pools[c as usize], actor.entity, &mut rng),
                        };
                        (RelationId(rng.random_range(0..spec.relations)), object)
                    }
                    Pattern::Noise => (
                        RelationId(rng.random_range(0..spec.relations)),
                        pick_other(&pools[c as usize], actor.entity, &mut rng),
                    ),
                };
                actor.last_object = Some(triple.1);
                let event = AtomicEvent {
                    event_id: EventId(events.len() as u64 + day_events.len() as u64),
                    subject: actor.entity,
                    relation: triple.0,
                    object: triple.1,
                    t: RelativeDay(day),
                    complex_event: ce,
                    source_docs: vec![doc_id],
                };
                day_events.push(event);
            }
            if day_events.is_empty() {
                continue;
            }
            docs.push(render_document(
                spec, &vocab, doc_id, ce, day, &day_events, &mut rng,
            ));
            events.extend(day_events);
        }
    }

    let end = last_day + 1;
    let test_len = (f64::from(end) * spec.test_fraction).round() as u32;
    let val_len = (f64::from(end) * spec.val_fraction).round() as u32;
    let test_start = end - test_len.min(end);
    let val_start = test_start - val_len.min(test_start);
    let splits = SplitRanges {
        train: DayRange::new(0, val_start),
        val: DayRange::new(val_start, test_start),
        test: DayRange::new(test_start, end),
    };
    Dataset::new(vocab, events, docs, splits, spec.epoch_date)
        .map_err(|e| DatasetError::Domain(format!("generator produced an invalid dataset: {e}")))
}

fn allocate_patterns(n: usize, mix: PatternMix) -> Vec<Pattern> {
    let periodic = ((n as f64) * mix.periodic).round() as usize;
    let copy = (((n as f64) * mix.copy_head).round() as usize).min(n - periodic.min(n));
    let periodic = periodic.min(n);
    let mut out = vec![Pattern::Periodic; periodic];
    out.extend(std::iter::repeat_n(Pattern::CopyHead, copy));
    let noise = n - out.len();
    if mix.noise == 0.0 && noise > 0 {
        // rounding slack goes to whichever pattern is present
        let fill = if mix.copy_head > 0.0 {
            Pattern::CopyHead
        } else {
            Pattern::Periodic
        };
        out.extend(std::iter::repeat_n(fill, noise));
    } else {
        out.extend(std::iter::repeat_n(Pattern::Noise, noise));
    }
    out
}

fn pick_other(pool: &[EntityId], not: EntityId, rng: &mut ChaCha8Rng) -> EntityId {
    loop {
        let e = pool[rng.random_range(0..pool.len())];
        if e != not {
            return e;
        }
    }
}

fn render_document(
    spec: &SyntheticSpec,
    vocab: &Vocabularies,
    doc_id: DocumentId,
    ce: ComplexEventId,
    day: u32,
    events: &[AtomicEvent],
    rng: &mut ChaCha8Rng,
) -> Document {
    let sentences: Vec<String> = events
        .iter()
        .map(|e| {
            EVENT_TEMPLATES[rng.random_range(0..EVENT_TEMPLATES.len())]
                .replace("{s}", &vocab.entity_name(e.subject))
                .replace("{o}", &vocab.entity_name(e.object))
                .replace("{r}", &vocab.relation_name(e.relation))
        })
        .collect();
    let summary = sentences.join(" ");
    let mut body = summary.clone();
    for _ in 0..spec.filler_sentences {
        body.push(' ');
        body.push_str(FILLER[rng.random_range(0..FILLER.len())]);
    }
    Document {
        doc_id,
        t: RelativeDay(day),
        complex_event: ce,
        title: format!(
            "{}: report for day {day}",
            vocab.complex_events.name(ce).unwrap_or_default()
        ),
        body,
        summary: (spec.filler_sentences > 0).then_some(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_dataset;
    use std::collections::{BTreeMap, HashSet};

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&SyntheticSpec::small(1)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::small(1)).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        crate::dataset::write_dataset(&a, dir_a.path()).unwrap();
        crate::dataset::write_dataset(&b, dir_b.path()).unwrap();
        for f in ["events.tsv", "documents.jsonl", "entities.tsv", "manifest.toml"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(f)).unwrap(),
                std::fs::read(dir_b.path().join(f)).unwrap()
            );
        }
        let c = generate_synthetic(&SyntheticSpec::small(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn copy_head_objects_appear_on_previous_day() {
        let spec = SyntheticSpec {
            complex_events: 5,
            span_days: 15,
            ..SyntheticSpec::copy_head(3)
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut objects_by_day: BTreeMap<(u32, u32), HashSet<u32>> = BTreeMap::new();
        let mut first_day: BTreeMap<u32, u32> = BTreeMap::new();
        for e in ds.events() {
            objects_by_day
                .entry((e.complex_event.0, e.t.0))
                .or_default()
                .insert(e.object.0);
            let f = first_day.entry(e.complex_event.0).or_insert(e.t.0);
            *f = (*f).min(e.t.0);
        }
        let mut checked = 0;
        for e in ds.events() {
            if e.t.0 == first_day[&e.complex_event.0] {
                continue;
            }
            let prev = &objects_by_day[&(e.complex_event.0, e.t.0 - 1)];
            assert!(prev.contains(&e.object.0), "event {} breaks copy-head", e.event_id);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn periodic_triples_recur_exactly_every_period() {
        let spec = SyntheticSpec {
            span_days: 40,
            period_days: 7,
            mix: PatternMix {
                periodic: 1.0,
                copy_head: 0.0,
                noise: 0.0,
            },
            ..SyntheticSpec::small(9)
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut days: BTreeMap<(u32, u32, u32, u32), Vec<u32>> = BTreeMap::new();
        for e in ds.events() {
            days.entry((e.complex_event.0, e.subject.0, e.relation.0, e.object.0))
                .or_default()
                .push(e.t.0);
        }
        let mut gaps = 0;
        for ts in days.values() {
            for w in ts.windows(2) {
                assert_eq!(w[1] - w[0], 7);
                gaps += 1;
            }
        }
        assert!(gaps > 0);
    }

    #[test]
    fn every_event_has_a_document_naming_its_triple() {
        let ds = generate_synthetic(&SyntheticSpec::small(4)).unwrap();
        for e in ds.events() {
            let s = ds.vocab.entity_name(e.subject);
            let r = ds.vocab.relation_name(e.relation);
            let o = ds.vocab.entity_name(e.object);
            assert!(e.source_docs.iter().any(|d| {
                let body = &ds.document(*d).unwrap().body;
                body.contains(&s) && body.contains(&r) && body.contains(&o)
            }));
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let spec = SyntheticSpec {
            entities_per_ce: 1,
            actors_per_ce: 1,
            ..SyntheticSpec::small(1)
        };
        assert!(matches!(generate_synthetic(&spec), Err(DatasetError::Domain(_))));
        let spec = SyntheticSpec {
            mix: PatternMix {
                periodic: 0.5,
                copy_head: 0.6,
                noise: 0.0,
            },
            ..SyntheticSpec::small(1)
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec {
            span_days: 0,
            ..SyntheticSpec::small(1)
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn names_are_unique() {
        let names: HashSet<String> = (0..5000).map(entity_name).collect();
        assert_eq!(names.len(), 5000);
    }

    #[test]
    fn generated_datasets_validate() {
        for seed in 0..5 {
            let ds = generate_synthetic(&SyntheticSpec::small(seed)).unwrap();
            assert!(validate_dataset(&ds).is_empty());
        }
    }
}
