//! Multiple-choice questions built from dataset events.
//!
//! Each question draws from its own ChaCha8 stream: the bank seed selects the
//! key and the event id the stream, so a question can be regenerated alone.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::history::{Query, Task};
use crate::model::{AtomicEvent, Dataset, EntityId, EventId, RelationId, RelativeDay, Split};
use crate::prompting::{distractor_prompt, option_label, parse_entity_list};
use crate::text::canonical;

pub const OPTION_COUNT: usize = 6;
const DISTRACTORS: usize = OPTION_COUNT - 1;
const GENERATED_REASKS: usize = 3;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("dataset too small: {needed} candidates needed, {available} available")]
    DatasetTooSmall { needed: usize, available: usize },
    #[error("invalid question: {0}")]
    Contract(String),
    #[error("the generated strategy needs a gateway")]
    NeedsGateway,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    History,
    Global,
    Generated,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::History => "history",
            Strategy::Global => "global",
            Strategy::Generated => "generated",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "history" => Ok(Strategy::History),
            "global" => Ok(Strategy::Global),
            "generated" => Ok(Strategy::Generated),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "gold")]
    Gold,
    #[serde(rename = "t-1")]
    PrevDay,
    #[serde(rename = "t-2")]
    TwoDaysBack,
    #[serde(rename = "Gq")]
    SubjectHistory,
    #[serde(rename = "global")]
    Global,
    #[serde(rename = "generated")]
    Generated,
    #[serde(rename = "backfill")]
    Backfill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub text: String,
    /// Entity id for object questions, relation id for relation questions;
    /// absent for generated names outside the vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqInstance {
    /// The generating event's id; also the RNG stream.
    pub question_id: u64,
    pub query: Query,
    /// In label order A..F.
    pub options: Vec<McqOption>,
    pub gold_label: char,
    pub strategy: Strategy,
    pub rng_seed: u64,
}

impl McqInstance {
    pub fn option_texts(&self) -> Vec<String> {
        self.options.iter().map(|o| o.text.clone()).collect()
    }

    pub fn gold_index(&self) -> usize {
        (self.gold_label as u8 - b'A') as usize
    }

    pub fn gold(&self) -> &McqOption {
        &self.options[self.gold_index()]
    }

    /// Checks the six-option, distinct, single-gold invariants.
    pub fn check(&self) -> Result<(), BankError> {
        if self.options.len() != OPTION_COUNT {
            return Err(BankError::Contract(format!(
                "{} options instead of {OPTION_COUNT}",
                self.options.len()
            )));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if !seen.insert(canonical(&o.text)) {
                return Err(BankError::Contract(format!("duplicate option {:?}", o.text)));
            }
        }
        let golds = self.options.iter().filter(|o| o.provenance == Provenance::Gold).count();
        if golds != 1 || self.gold().provenance != Provenance::Gold {
            return Err(BankError::Contract("gold label does not mark the single gold option".into()));
        }
        Ok(())
    }
}

pub fn make_query(event: &AtomicEvent, task: Task) -> Query {
    Query {
        subject: event.subject,
        relation: (task == Task::Object).then_some(event.relation),
        object: (task == Task::Relation).then_some(event.object),
        t: event.t,
        complex_event: event.complex_event,
        task,
    }
}

/// Hidden field of the event for the task.
pub fn answer_id(event: &AtomicEvent, task: Task) -> u32 {
    match task {
        Task::Object => event.object.0,
        Task::Relation => event.relation.0,
    }
}

pub fn question_rng(bank_seed: u64, question_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(bank_seed);
    rng.set_stream(question_id);
    rng
}

fn name_of(ds: &Dataset, task: Task, id: u32) -> String {
    match task {
        Task::Object => ds.vocab.entity_name(EntityId(id)),
        Task::Relation => ds.vocab.relation_name(RelationId(id)),
    }
}

fn universe(ds: &Dataset, task: Task) -> Vec<u32> {
    match task {
        Task::Object => ds.vocab.entities.ids().map(|e| e.0).collect(),
        Task::Relation => ds.vocab.relations.ids().map(|r| r.0).collect(),
    }
}

fn day_pool(ds: &Dataset, query: &Query, t: Option<RelativeDay>) -> Vec<u32> {
    let Some(t) = t else { return Vec::new() };
    let mut pool = BTreeSet::new();
    for e in ds.ce_events_between(query.complex_event, t, RelativeDay(t.0 + 1)) {
        match query.task {
            Task::Object => {
                pool.insert(e.subject.0);
                pool.insert(e.object.0);
            }
            Task::Relation => {
                pool.insert(e.relation.0);
            }
        }
    }
    pool.into_iter().collect()
}

fn subject_pool(ds: &Dataset, query: &Query) -> Vec<u32> {
    let pool: BTreeSet<u32> = ds
        .subject_events_between(query.subject, RelativeDay(0), query.t)
        .map(|e| match query.task {
            Task::Object => e.object.0,
            Task::Relation => e.relation.0,
        })
        .collect();
    pool.into_iter().collect()
}

/// Pools of the history recipe: t-1, t-2 and the subject's past, in that
/// order, followed by the full vocabulary.
pub fn history_pools(ds: &Dataset, query: &Query) -> [Vec<u32>; 4] {
    let prev = |d: u32| query.t.0.checked_sub(d).map(RelativeDay);
    [
        day_pool(ds, query, prev(1)),
        day_pool(ds, query, prev(2)),
        subject_pool(ds, query),
        universe(ds, query.task),
    ]
}

struct Picker<'a> {
    ds: &'a Dataset,
    task: Task,
    excluded: HashSet<u32>,
    names: HashSet<String>,
    picked: Vec<McqOption>,
}

impl Picker<'_> {
    fn draw(&mut self, pool: &[u32], n: usize, tag: Provenance, rng: &mut ChaCha8Rng) -> usize {
        let available: Vec<(u32, String)> = pool
            .iter()
            .filter(|id| !self.excluded.contains(id))
            .map(|&id| (id, name_of(self.ds, self.task, id)))
            .filter(|(_, name)| !self.names.contains(&canonical(name)))
            .collect();
        let mut taken = 0;
        for (id, name) in available.choose_multiple(rng, n) {
            if !self.names.insert(canonical(name)) {
                continue;
            }
            self.excluded.insert(*id);
            self.picked.push(McqOption {
                text: name.clone(),
                id: Some(*id),
                provenance: tag,
            });
            taken += 1;
        }
        taken
    }
}

/// Five distractors for `query`; `gold` is the hidden id.
pub fn sample_negatives(
    query: &Query,
    gold: u32,
    ds: &Dataset,
    strategy: Strategy,
    gateway: Option<&Gateway>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<McqOption>, BankError> {
    let all = universe(ds, query.task);
    let mut excluded: HashSet<u32> = HashSet::from([gold]);
    if query.task == Task::Object {
        excluded.insert(query.subject.0);
    }
    let available = all.iter().filter(|id| !excluded.contains(id)).count();
    if available < DISTRACTORS {
        return Err(BankError::DatasetTooSmall {
            needed: OPTION_COUNT,
            available: available + 1,
        });
    }
    let gold_name = name_of(ds, query.task, gold);
    let mut p = Picker {
        ds,
        task: query.task,
        excluded,
        names: HashSet::from([canonical(&gold_name)]),
        picked: Vec::new(),
    };
    match strategy {
        Strategy::History => {
            let pools = history_pools(ds, query);
            let recipe = [
                (0, 2, Provenance::PrevDay),
                (1, 2, Provenance::TwoDaysBack),
                (2, 1, Provenance::SubjectHistory),
            ];
            for (pool, n, tag) in recipe {
                let mut missing = n - p.draw(&pools[pool], n, tag, rng);
                for next in &pools[pool + 1..] {
                    if missing == 0 {
                        break;
                    }
                    missing -= p.draw(next, missing, Provenance::Backfill, rng);
                }
            }
        }
        Strategy::Global => {
            p.draw(&all, DISTRACTORS, Provenance::Global, rng);
        }
        Strategy::Generated => {
            let gw = gateway.ok_or(BankError::NeedsGateway)?;
            let base = distractor_prompt(&ds.vocab, query, &gold_name);
            for attempt in 0..=GENERATED_REASKS {
                if p.picked.len() >= DISTRACTORS {
                    break;
                }
                let prompt = if attempt == 0 {
                    base.clone()
                } else {
                    format!("{base}\nAttempt {}.", attempt + 1)
                };
                let reply = gw.complete(&prompt)?;
                for name in parse_entity_list(&reply.text).unwrap_or_default() {
                    if p.picked.len() >= DISTRACTORS {
                        break;
                    }
                    if !p.names.insert(canonical(&name)) {
                        continue;
                    }
                    let id = match query.task {
                        Task::Object => ds.vocab.entities.id(&name).map(|e| e.0),
                        Task::Relation => ds.vocab.relations.id(&name).map(|r| r.0),
                    };
                    if let Some(id) = id {
                        p.excluded.insert(id);
                    }
                    p.picked.push(McqOption {
                        text: name,
                        id,
                        provenance: Provenance::Generated,
                    });
                }
            }
            let missing = DISTRACTORS - p.picked.len();
            p.draw(&all, missing, Provenance::Backfill, rng);
        }
    }
    if p.picked.len() < DISTRACTORS {
        return Err(BankError::DatasetTooSmall {
            needed: OPTION_COUNT,
            available: p.picked.len() + 1,
        });
    }
    Ok(p.picked)
}

/// Shuffles gold and distractors into a labeled question.
pub fn assemble_mcq(
    question_id: u64,
    query: Query,
    gold: McqOption,
    distractors: Vec<McqOption>,
    strategy: Strategy,
    rng_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<McqInstance, BankError> {
    if distractors.len() != DISTRACTORS {
        return Err(BankError::Contract(format!(
            "{} distractors instead of {DISTRACTORS}",
            distractors.len()
        )));
    }
    let mut options = Vec::with_capacity(OPTION_COUNT);
    options.push(McqOption {
        provenance: Provenance::Gold,
        ..gold
    });
    options.extend(distractors);
    let mut seen = HashSet::new();
    for o in &options {
        if !seen.insert(canonical(&o.text)) {
            return Err(BankError::Contract(format!("duplicate option {:?}", o.text)));
        }
    }
    options.shuffle(rng);
    let gold_pos = options
        .iter()
        .position(|o| o.provenance == Provenance::Gold)
        .expect("gold was inserted");
    Ok(McqInstance {
        question_id,
        query,
        options,
        gold_label: option_label(gold_pos),
        strategy,
        rng_seed,
    })
}

/// One question per event of `split`.
pub fn make_bank(
    ds: &Dataset,
    split: Split,
    task: Task,
    strategy: Strategy,
    seed: u64,
    gateway: Option<&Gateway>,
) -> Result<Vec<McqInstance>, BankError> {
    if strategy == Strategy::Generated && gateway.is_none() {
        return Err(BankError::NeedsGateway);
    }
    let events: Vec<&AtomicEvent> = ds.split_events(split).collect();
    events
        .par_iter()
        .map(|e| make_question(ds, e, task, strategy, seed, gateway))
        .collect()
}

pub fn make_question(
    ds: &Dataset,
    event: &AtomicEvent,
    task: Task,
    strategy: Strategy,
    seed: u64,
    gateway: Option<&Gateway>,
) -> Result<McqInstance, BankError> {
    let EventId(qid) = event.event_id;
    let mut rng = question_rng(seed, qid);
    let query = make_query(event, task);
    let gold = answer_id(event, task);
    let distractors = sample_negatives(&query, gold, ds, strategy, gateway, &mut rng)?;
    let gold = McqOption {
        text: name_of(ds, task, gold),
        id: Some(gold),
        provenance: Provenance::Gold,
    };
    assemble_mcq(qid, query, gold, distractors, strategy, seed, &mut rng)
}

pub fn write_bank(path: &Path, bank: &[McqInstance]) -> Result<(), BankError> {
    let io = |source| BankError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for q in bank {
        let line = serde_json::to_string(q).expect("questions serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_bank(path: &Path) -> Result<Vec<McqInstance>, BankError> {
    let io = |source| BankError::Io {
        path: path.to_owned(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let q: McqInstance = serde_json::from_str(&line).map_err(|e| BankError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        q.check().map_err(|e| BankError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::gateway::ScriptPolicy;
    use crate::model::*;
    use chrono::NaiveDate;

    fn ds() -> Dataset {
        generate_synthetic(&SyntheticSpec::small(5)).unwrap()
    }

    #[test]
    fn make_query_hides_one_field() {
        let ds = ds();
        let e = ds.events().next().unwrap();
        let q = make_query(e, Task::Object);
        assert_eq!((q.relation, q.object), (Some(e.relation), None));
        assert!(q.is_well_formed());
        let q = make_query(e, Task::Relation);
        assert_eq!((q.relation, q.object), (None, Some(e.object)));
        assert!(q.is_well_formed());
    }

    #[test]
    fn history_recipe_tags_and_pool_membership() {
        let ds = ds();
        let bank = make_bank(&ds, Split::Test, Task::Object, Strategy::History, 7, None).unwrap();
        assert_eq!(bank.len(), ds.split_events(Split::Test).count());
        for q in &bank {
            q.check().unwrap();
            let pools = history_pools(&ds, &q.query);
            let count = |p: Provenance| q.options.iter().filter(|o| o.provenance == p).count();
            assert!(count(Provenance::PrevDay) <= 2);
            assert!(count(Provenance::TwoDaysBack) <= 2);
            assert!(count(Provenance::SubjectHistory) <= 1);
            for o in &q.options {
                let id = o.id.unwrap();
                match o.provenance {
                    Provenance::PrevDay => assert!(pools[0].contains(&id)),
                    Provenance::TwoDaysBack => assert!(pools[1].contains(&id)),
                    Provenance::SubjectHistory => assert!(pools[2].contains(&id)),
                    _ => {}
                }
                if o.provenance != Provenance::Gold {
                    assert_ne!(id, q.gold().id.unwrap());
                    assert_ne!(id, q.query.subject.0);
                }
            }
        }
    }

    /// Subject 0 asks at day 5. Day 4 holds 5..8, day 3 holds 1..4, and the
    /// subject met 10 and 11 on day 1. `dense = false` drops day 4.
    fn planted(dense: bool) -> Dataset {
        let mut v = Vocabularies::default();
        for i in 0..14 {
            v.entities.insert(EntityId(i), format!("E{i}")).unwrap();
        }
        v.relations.insert(RelationId(0), "r").unwrap();
        v.complex_events.insert(ComplexEventId(0), "c").unwrap();
        let mut rows = vec![(0, 10, 1), (0, 11, 1), (1, 2, 3), (3, 4, 3)];
        if dense {
            rows.extend([(5, 6, 4), (7, 8, 4)]);
        }
        rows.push((0, 9, 5));
        let events: Vec<AtomicEvent> = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, o, t))| AtomicEvent {
                event_id: EventId(i as u64),
                subject: EntityId(s),
                relation: RelationId(0),
                object: EntityId(o),
                t: RelativeDay(t),
                complex_event: ComplexEventId(0),
                source_docs: vec![],
            })
            .collect();
        Dataset::new_unchecked(
            v,
            events,
            vec![],
            SplitRanges {
                train: DayRange::new(0, 5),
                val: DayRange::new(5, 5),
                test: DayRange::new(5, 6),
            },
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        )
    }

    #[test]
    fn dense_pools_give_the_exact_recipe() {
        let ds = planted(true);
        let q = make_query(ds.events().last().unwrap(), Task::Object);
        for seed in 0..50 {
            let mut rng = question_rng(seed, 0);
            let d = sample_negatives(&q, 9, &ds, Strategy::History, None, &mut rng).unwrap();
            let tags: Vec<Provenance> = d.iter().map(|o| o.provenance).collect();
            assert_eq!(
                tags,
                [
                    Provenance::PrevDay,
                    Provenance::PrevDay,
                    Provenance::TwoDaysBack,
                    Provenance::TwoDaysBack,
                    Provenance::SubjectHistory
                ]
            );
        }
    }

    #[test]
    fn empty_prev_day_pool_is_backfilled() {
        let ds = planted(false);
        let q = make_query(ds.events().last().unwrap(), Task::Object);
        for seed in 0..50 {
            let mut rng = question_rng(seed, 0);
            let d = sample_negatives(&q, 9, &ds, Strategy::History, None, &mut rng).unwrap();
            let backfill = d.iter().filter(|o| o.provenance == Provenance::Backfill).count();
            // t-1 is empty and t-2 holds four names, so both t-1 slots backfill
            assert_eq!(backfill, 2);
            assert!(!d.iter().any(|o| o.provenance == Provenance::PrevDay));
            assert!(d.iter().all(|o| o.id != Some(9) && o.id != Some(0)));
        }
    }

    #[test]
    fn global_strategy_is_seeded() {
        let ds = ds();
        let a = make_bank(&ds, Split::Test, Task::Object, Strategy::Global, 3, None).unwrap();
        let b = make_bank(&ds, Split::Test, Task::Object, Strategy::Global, 3, None).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|q| q
            .options
            .iter()
            .all(|o| matches!(o.provenance, Provenance::Gold | Provenance::Global))));
    }

    #[test]
    fn generated_strategy_needs_and_uses_a_gateway() {
        let ds = ds();
        assert!(matches!(
            make_bank(&ds, Split::Test, Task::Object, Strategy::Generated, 1, None),
            Err(BankError::NeedsGateway)
        ));
        let gw = Gateway::scripted(ScriptPolicy::Recency);
        let bank = make_bank(&ds, Split::Test, Task::Object, Strategy::Generated, 1, Some(&gw)).unwrap();
        for q in &bank {
            q.check().unwrap();
        }
        assert!(bank[0].options.iter().any(|o| o.provenance == Provenance::Generated));
    }

    #[test]
    fn duplicate_distractor_is_rejected() {
        let ds = ds();
        let e = ds.events().next().unwrap();
        let q = make_query(e, Task::Object);
        let gold = McqOption {
            text: "Same".into(),
            id: None,
            provenance: Provenance::Gold,
        };
        let mut d: Vec<McqOption> = (0..4)
            .map(|i| McqOption {
                text: format!("D{i}"),
                id: None,
                provenance: Provenance::Global,
            })
            .collect();
        d.push(McqOption {
            text: " same ".into(),
            id: None,
            provenance: Provenance::Global,
        });
        let mut rng = question_rng(0, 0);
        assert!(matches!(
            assemble_mcq(0, q, gold, d, Strategy::Global, 0, &mut rng),
            Err(BankError::Contract(_))
        ));
    }

    #[test]
    fn relation_task_uses_relation_pools() {
        let ds = ds();
        let bank = make_bank(&ds, Split::Test, Task::Relation, Strategy::History, 2, None).unwrap();
        for q in &bank {
            q.check().unwrap();
            assert!(q.options.iter().all(|o| ds.vocab.relations.id(&o.text).is_some()));
        }
    }

    #[test]
    fn bank_file_round_trip() {
        let ds = ds();
        let bank = make_bank(&ds, Split::Test, Task::Object, Strategy::History, 4, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        write_bank(&path, &bank).unwrap();
        assert_eq!(read_bank(&path).unwrap(), bank);
    }
}
