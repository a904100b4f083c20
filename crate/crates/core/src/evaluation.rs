//! Experiment runs over frozen question banks, accuracy, popularity
//! breakdowns and one-axis sweeps.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::gateway::{parse_choice, Choice, Gateway, GatewayError};
use crate::history::{build_history, Format, HistoryBundle, HistoryError, HistoryMode, HistoryParams, Task};
use crate::model::{Dataset, EntityId, RelationId, Split};
use crate::prompting::{render_prompt, PromptError, PromptTemplate, RenderedPrompt};
use crate::question_bank::{make_bank, BankError, McqInstance, Strategy};
use crate::retrieval::{RetrievalError, Retriever, RetrieverKind, ScopeKind, DEFAULT_CHUNK_TOKENS, DEFAULT_OVERLAP_TOKENS};

pub const HISTORY_LENGTHS: [u32; 5] = [3, 7, 15, 30, 90];
pub const MAX_HORIZON: u32 = 14;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("question {question_id}: replay cache has no entry for {key}")]
    StrictReplay { question_id: u64, key: String },
    #[error("question {question_id}: {source}")]
    Question {
        question_id: u64,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("no records to score")]
    Empty,
}

impl EvalError {
    /// The replay miss behind this error, if any.
    pub fn replay_miss(&self) -> Option<&str> {
        match self {
            EvalError::StrictReplay { key, .. } => Some(key),
            EvalError::Question { source, .. } => source.replay_miss(),
            EvalError::Gateway(GatewayError::StrictReplay { key }) => Some(key),
            EvalError::History(HistoryError::Gateway(GatewayError::StrictReplay { key })) => Some(key),
            EvalError::Bank(BankError::Gateway(GatewayError::StrictReplay { key })) => Some(key),
            _ => None,
        }
    }

    pub fn is_transport(&self) -> bool {
        match self {
            EvalError::Question { source, .. } => source.is_transport(),
            EvalError::Gateway(GatewayError::Transport { .. }) => true,
            EvalError::History(HistoryError::Gateway(GatewayError::Transport { .. })) => true,
            EvalError::Bank(BankError::Gateway(GatewayError::Transport { .. })) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub format: Format,
    pub mode: HistoryMode,
    pub retriever: RetrieverKind,
    pub history: HistoryParams,
    /// Days between the last visible history day and the predicted event.
    pub horizon: u32,
    pub strategy: Strategy,
    pub bank_seed: u64,
    pub chunk_tokens: usize,
    pub overlap_tokens: usize,
    /// Forecast template file; the shipped default when absent.
    pub template: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Object,
            format: Format::Graph,
            mode: HistoryMode::Rule,
            retriever: RetrieverKind::Bm25,
            history: HistoryParams::default(),
            horizon: 1,
            strategy: Strategy::History,
            bank_seed: 0,
            chunk_tokens: DEFAULT_CHUNK_TOKENS,
            overlap_tokens: DEFAULT_OVERLAP_TOKENS,
            template: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.horizon < 1 {
            return Err(EvalError::Config("horizon must be at least 1".into()));
        }
        if self.history.history_length == 0 {
            return Err(EvalError::Config("history_length must be positive".into()));
        }
        if self.mode == HistoryMode::None && self.history != HistoryParams::default() {
            return Err(EvalError::Config(
                "history parameters are meaningless with mode = none".into(),
            ));
        }
        if self.overlap_tokens >= self.chunk_tokens {
            return Err(EvalError::Config("overlap_tokens must be below chunk_tokens".into()));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<PromptTemplate, EvalError> {
        Ok(match &self.template {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::forecast(),
        })
    }

    fn needs_retriever(&self) -> bool {
        self.mode == HistoryMode::Retrieved && self.format != Format::Graph
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub question_id: u64,
    pub predicted: Choice,
    pub gold_label: char,
    pub correct: bool,
    pub invalid: bool,
    pub history_events: usize,
    pub history_texts: usize,
    pub prompt_tokens: usize,
    pub cache_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock time; kept out of the serialized record so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ExperimentRecord>,
    pub accuracy: f64,
    pub invalid_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub invalid_rate: f64,
    pub n: usize,
    pub correct: usize,
    pub invalid: usize,
    pub cache_hits: usize,
}

impl ExperimentResult {
    pub fn summary(&self) -> Summary {
        Summary {
            accuracy: self.accuracy,
            invalid_rate: self.invalid_rate,
            n: self.n,
            correct: self.records.iter().filter(|r| r.correct).count(),
            invalid: self.records.iter().filter(|r| r.invalid).count(),
            cache_hits: self.records.iter().filter(|r| r.cache_hit).count(),
        }
    }
}

/// Everything a question needs besides the gateway call.
pub struct PreparedPrompt {
    pub prompt: RenderedPrompt,
    pub bundle: Option<HistoryBundle>,
}

/// Builds the history seen `horizon` days before the question and renders
/// the forecast prompt. The query line keeps the real timestamp.
pub fn prepare_prompt(
    config: &ExperimentConfig,
    template: &PromptTemplate,
    ds: &Dataset,
    q: &McqInstance,
    gateway: Option<&Gateway>,
    retriever: Option<&Retriever>,
) -> Result<PreparedPrompt, EvalError> {
    let bundle = match config.mode {
        HistoryMode::None => None,
        mode => {
            let visible = q.query.at_horizon(config.horizon);
            Some(build_history(
                ds,
                &visible,
                mode,
                config.format,
                &config.history,
                gateway,
                retriever,
            )?)
        }
    };
    let prompt = render_prompt(template, &ds.vocab, &q.query, bundle.as_ref(), &q.option_texts())?;
    Ok(PreparedPrompt { prompt, bundle })
}

pub fn build_retriever(config: &ExperimentConfig, ds: &Dataset) -> Result<Retriever, EvalError> {
    Ok(Retriever::new(ds, config.retriever, config.chunk_tokens, config.overlap_tokens)?)
}

fn answer(
    config: &ExperimentConfig,
    template: &PromptTemplate,
    ds: &Dataset,
    q: &McqInstance,
    gateway: &Gateway,
    retriever: Option<&Retriever>,
) -> Result<ExperimentRecord, EvalError> {
    let start = Instant::now();
    let mut rec = ExperimentRecord {
        question_id: q.question_id,
        predicted: Choice::Invalid,
        gold_label: q.gold_label,
        correct: false,
        invalid: true,
        history_events: 0,
        history_texts: 0,
        prompt_tokens: 0,
        cache_hit: false,
        error: None,
        latency_ms: 0.0,
    };
    let transport = |e: &EvalError| e.is_transport();
    let prepared = match prepare_prompt(config, template, ds, q, Some(gateway), retriever) {
        Ok(p) => p,
        Err(e) if transport(&e) => {
            rec.error = Some(e.to_string());
            rec.latency_ms = start.elapsed().as_secs_f64() * 1e3;
            return Ok(rec);
        }
        Err(e) => return Err(e),
    };
    if let Some(b) = &prepared.bundle {
        rec.history_events = b.event_count();
        rec.history_texts = b.text_count();
    }
    rec.prompt_tokens = prepared.prompt.token_count;
    match gateway.complete(&prepared.prompt.text()) {
        Ok(reply) => {
            rec.cache_hit = reply.cache_hit;
            rec.predicted = parse_choice(&reply.text, &q.option_texts());
            rec.invalid = rec.predicted == Choice::Invalid;
            rec.correct = rec.predicted == Choice::Label(q.gold_label);
        }
        Err(e @ GatewayError::Transport { .. }) => rec.error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    rec.latency_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}

/// Answers every question of `bank`. Questions run concurrently up to the
/// gateway's in-flight limit; records come back sorted by question id.
pub fn run_experiment(
    config: &ExperimentConfig,
    ds: &Dataset,
    bank: &[McqInstance],
    gateway: &Gateway,
    retriever: Option<&Retriever>,
) -> Result<ExperimentResult, EvalError> {
    config.validate()?;
    let ids: BTreeSet<u64> = bank.iter().map(|q| q.question_id).collect();
    if ids.len() != bank.len() {
        return Err(EvalError::Config("question bank repeats a question id".into()));
    }
    if let Some(q) = bank.iter().find(|q| q.query.task != config.task) {
        return Err(EvalError::Config(format!(
            "question {} is a {} question but the config asks for {}",
            q.question_id,
            q.query.task.as_str(),
            config.task.as_str()
        )));
    }
    let template = config.template()?;
    let owned;
    let retriever = match retriever {
        Some(r) if r.kind() == config.retriever => Some(r),
        _ if config.needs_retriever() => {
            owned = build_retriever(config, ds)?;
            Some(&owned)
        }
        _ => None,
    };
    let mut order: Vec<&McqInstance> = bank.iter().collect();
    order.sort_by_key(|q| q.question_id);
    let threads = gateway.config().max_in_flight.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ExperimentRecord, EvalError>> = pool.install(|| {
        order
            .par_iter()
            .map(|q| answer(config, &template, ds, q, gateway, retriever))
            .collect()
    });
    let mut records = Vec::with_capacity(outcomes.len());
    for (q, outcome) in order.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                if let Some(key) = e.replay_miss() {
                    return Err(EvalError::StrictReplay {
                        question_id: q.question_id,
                        key: key.to_owned(),
                    });
                }
                return Err(EvalError::Question {
                    question_id: q.question_id,
                    source: Box::new(e),
                });
            }
        }
    }
    let accuracy = compute_accuracy(&records)?;
    let n = records.len();
    let invalid_rate = records.iter().filter(|r| r.invalid).count() as f64 / n as f64;
    Ok(ExperimentResult {
        config: config.clone(),
        records,
        accuracy,
        invalid_rate,
        n,
    })
}

/// Correct over total; invalid answers count as wrong.
pub fn compute_accuracy(records: &[ExperimentRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityGroup {
    /// Inclusive frequency range, e.g. "3-7" or "12+".
    pub label: String,
    pub lo: u64,
    /// Exclusive upper edge; `None` for the last group.
    pub hi: Option<u64>,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityBreakdown {
    /// What was counted to place a question in a group.
    pub measure: String,
    /// Lower edges of groups 2..; group 1 starts at 0.
    pub edges: Vec<u64>,
    pub groups: Vec<SparsityGroup>,
    pub warnings: Vec<String>,
}

/// Occurrences (as subject or object) of each entity, or of each relation,
/// in the train split.
pub fn train_frequencies(ds: &Dataset, task: Task) -> HashMap<u32, u64> {
    let mut freq = HashMap::new();
    for e in ds.split_events(Split::Train) {
        match task {
            Task::Object => {
                *freq.entry(e.subject.0).or_insert(0) += 1;
                *freq.entry(e.object.0).or_insert(0) += 1;
            }
            Task::Relation => *freq.entry(e.relation.0).or_insert(0) += 1,
        }
    }
    freq
}

/// Quartile-style edges: the values at ranks `i * n / bins`, deduplicated and
/// kept above the minimum. Fewer than `bins - 1` edges means merged groups.
pub fn quantile_edges(values: &[u64], bins: usize) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let Some(&min) = sorted.first() else {
        return Vec::new();
    };
    let mut edges: Vec<u64> = Vec::new();
    for i in 1..bins {
        let e = sorted[i * sorted.len() / bins];
        if e > min && edges.last().is_none_or(|&l| e > l) {
            edges.push(e);
        }
    }
    edges
}

/// Groups questions by the train-split frequency of their gold answer.
/// `edges` overrides the quantile edges.
pub fn sparsity_breakdown(
    result: &ExperimentResult,
    bank: &[McqInstance],
    ds: &Dataset,
    bins: usize,
    edges: Option<&[u64]>,
) -> Result<SparsityBreakdown, EvalError> {
    if result.records.is_empty() {
        return Err(EvalError::Empty);
    }
    let bins = bins.max(1);
    let task = result.config.task;
    let freq = train_frequencies(ds, task);
    let by_id: HashMap<u64, &McqInstance> = bank.iter().map(|q| (q.question_id, q)).collect();
    let mut values = Vec::with_capacity(result.records.len());
    for r in &result.records {
        let q = by_id.get(&r.question_id).ok_or_else(|| {
            EvalError::Config(format!("question {} is not in the bank", r.question_id))
        })?;
        let gold = q.gold().id.unwrap_or_else(|| gold_id(ds, task, &q.gold().text));
        values.push(freq.get(&gold).copied().unwrap_or(0));
    }
    let mut warnings = Vec::new();
    let edges = match edges {
        Some(e) => {
            let mut e = e.to_vec();
            e.sort_unstable();
            e.dedup();
            e.retain(|&x| x > 0);
            e
        }
        None => {
            let e = quantile_edges(&values, bins);
            if e.len() + 1 < bins {
                let msg = format!(
                    "only {} distinct frequency groups for {bins} bins; groups merged",
                    e.len() + 1
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            e
        }
    };
    let mut groups: Vec<SparsityGroup> = (0..=edges.len())
        .map(|i| {
            let lo = if i == 0 { 0 } else { edges[i - 1] };
            let hi = edges.get(i).copied();
            let label = match hi {
                Some(h) => format!("{lo}-{}", h - 1),
                None => format!("{lo}+"),
            };
            SparsityGroup {
                label,
                lo,
                hi,
                n: 0,
                correct: 0,
                accuracy: None,
            }
        })
        .collect();
    for (r, v) in result.records.iter().zip(&values) {
        let g = edges.partition_point(|&e| e <= *v);
        groups[g].n += 1;
        groups[g].correct += r.correct as usize;
    }
    for g in &mut groups {
        g.accuracy = (g.n > 0).then(|| g.correct as f64 / g.n as f64);
    }
    let measure = match task {
        Task::Object => "train-split occurrences of the gold object entity",
        Task::Relation => "train-split occurrences of the gold relation",
    };
    Ok(SparsityBreakdown {
        measure: measure.into(),
        edges,
        groups,
        warnings,
    })
}

fn gold_id(ds: &Dataset, task: Task, name: &str) -> u32 {
    match task {
        Task::Object => ds.vocab.entities.id(name).map(|EntityId(i)| i),
        Task::Relation => ds.vocab.relations.id(name).map(|RelationId(i)| i),
    }
    .unwrap_or(u32::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    HistoryLength,
    Horizon,
    Scope,
    Retriever,
    Strategy,
    Format,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::HistoryLength => "history_length",
            SweepAxis::Horizon => "horizon",
            SweepAxis::Scope => "scope",
            SweepAxis::Retriever => "retriever",
            SweepAxis::Strategy => "strategy",
            SweepAxis::Format => "format",
        }
    }

    /// The grid used when no values are given.
    pub fn default_values(self) -> Vec<String> {
        match self {
            SweepAxis::HistoryLength => HISTORY_LENGTHS.iter().map(u32::to_string).collect(),
            SweepAxis::Horizon => (1..=MAX_HORIZON).map(|d| d.to_string()).collect(),
            SweepAxis::Scope => ScopeKind::ALL.iter().map(|s| s.label().to_owned()).collect(),
            SweepAxis::Retriever => vec!["bm25".into(), "dense".into()],
            SweepAxis::Strategy => vec!["history".into(), "global".into(), "generated".into()],
            SweepAxis::Format => Format::ALL.iter().map(|f| f.as_str().to_owned()).collect(),
        }
    }

    /// `config` with this axis set to `value`.
    pub fn apply(self, config: &ExperimentConfig, value: &str) -> Result<ExperimentConfig, EvalError> {
        let bad = |e: String| EvalError::Config(format!("{} value {value:?}: {e}", self.as_str()));
        let mut c = config.clone();
        match self {
            SweepAxis::HistoryLength => {
                c.history.history_length = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            SweepAxis::Horizon => c.horizon = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::Scope => c.history.scope = value.parse().map_err(bad)?,
            SweepAxis::Retriever => c.retriever = value.parse().map_err(bad)?,
            SweepAxis::Strategy => c.strategy = value.parse().map_err(bad)?,
            SweepAxis::Format => c.format = value.parse().map_err(bad)?,
        }
        c.validate().map_err(|e| bad(e.to_string()))?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            SweepAxis::HistoryLength,
            SweepAxis::Horizon,
            SweepAxis::Scope,
            SweepAxis::Retriever,
            SweepAxis::Strategy,
            SweepAxis::Format,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
        .ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub accuracy: f64,
    pub invalid_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortKind {
    ReplayMiss,
    Transport,
    Other,
}

impl AbortKind {
    pub fn of(e: &EvalError) -> Self {
        if e.replay_miss().is_some() {
            AbortKind::ReplayMiss
        } else if e.is_transport() {
            AbortKind::Transport
        } else {
            AbortKind::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Set when a run failed; rows hold the cells finished before it.
    pub aborted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_kind: Option<AbortKind>,
    /// Distinct question-id sets answered by the rows (1 when comparable).
    pub question_sets: usize,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis_value,accuracy,invalid_rate,n\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.axis_value, r.accuracy, r.invalid_rate, r.n));
        }
        s
    }

    /// Long-format plot data: axis name, position, label and both rates.
    pub fn to_plot_csv(&self) -> String {
        let mut s = String::from("axis,x,axis_value,accuracy,invalid_rate\n");
        for (i, r) in self.rows.iter().enumerate() {
            let x = r.axis_value.parse::<f64>().map(|v| v.to_string()).unwrap_or_else(|_| i.to_string());
            s.push_str(&format!(
                "{},{x},{},{},{}\n",
                self.axis.as_str(),
                r.axis_value,
                r.accuracy,
                r.invalid_rate
            ));
        }
        s
    }
}

/// One run per value with everything else fixed. The strategy axis draws a
/// fresh bank per value over the same test events and seed; every other axis
/// reuses `bank`.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    ds: &Dataset,
    bank: &[McqInstance],
    gateway: &Gateway,
) -> Result<SweepResult, EvalError> {
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(config, v))
        .collect::<Result<_, _>>()?;
    let mut retrievers: HashMap<RetrieverKind, Retriever> = HashMap::new();
    let mut rows = Vec::new();
    let mut sets = BTreeSet::new();
    for (value, c) in values.iter().zip(&configs) {
        if c.needs_retriever() && !retrievers.contains_key(&c.retriever) {
            retrievers.insert(c.retriever, build_retriever(c, ds)?);
        }
        let fresh;
        let cell_bank = if axis == SweepAxis::Strategy {
            fresh = match make_bank(ds, Split::Test, c.task, c.strategy, c.bank_seed, Some(gateway)) {
                Ok(b) => b,
                Err(e) => return Ok(aborted(axis, rows, value, &e.into(), sets.len())),
            };
            &fresh[..]
        } else {
            bank
        };
        match run_experiment(c, ds, cell_bank, gateway, retrievers.get(&c.retriever)) {
            Ok(r) => {
                sets.insert(r.records.iter().map(|x| x.question_id).collect::<Vec<_>>());
                rows.push(SweepRow {
                    axis_value: value.clone(),
                    accuracy: r.accuracy,
                    invalid_rate: r.invalid_rate,
                    n: r.n,
                });
            }
            Err(e) => return Ok(aborted(axis, rows, value, &e, sets.len())),
        }
    }
    Ok(SweepResult {
        axis,
        rows,
        aborted: None,
        abort_kind: None,
        question_sets: sets.len(),
    })
}

fn aborted(axis: SweepAxis, rows: Vec<SweepRow>, value: &str, e: &EvalError, sets: usize) -> SweepResult {
    SweepResult {
        axis,
        rows,
        aborted: Some(format!("{} = {value}: {e}", axis.as_str())),
        abort_kind: Some(AbortKind::of(e)),
        question_sets: sets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::gateway::ScriptPolicy;
    use std::collections::BTreeMap;

    fn rec(id: u64, correct: bool, invalid: bool) -> ExperimentRecord {
        ExperimentRecord {
            question_id: id,
            predicted: if invalid { Choice::Invalid } else { Choice::Label('A') },
            gold_label: 'A',
            correct,
            invalid,
            history_events: 0,
            history_texts: 0,
            prompt_tokens: 0,
            cache_hit: false,
            error: None,
            latency_ms: 0.0,
        }
    }

    #[test]
    fn accuracy_counts_invalid_as_wrong() {
        let r = [rec(0, true, false), rec(1, true, false), rec(2, true, false), rec(3, false, true)];
        assert_eq!(compute_accuracy(&r).unwrap(), 0.75);
        let r = [rec(0, false, true), rec(1, false, true)];
        assert_eq!(compute_accuracy(&r).unwrap(), 0.0);
        assert!(matches!(compute_accuracy(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn quantile_edges_by_sorting() {
        assert_eq!(quantile_edges(&[1, 1, 10, 10], 2), vec![10]);
        assert_eq!(quantile_edges(&[5, 5, 5, 5], 4), Vec::<u64>::new());
        assert_eq!(quantile_edges(&[1, 2, 3, 4, 5, 6, 7, 8], 4), vec![3, 5, 7]);
    }

    fn setup() -> (Dataset, Vec<McqInstance>) {
        let ds = generate_synthetic(&SyntheticSpec::small(9)).unwrap();
        let bank = make_bank(&ds, Split::Test, Task::Object, Strategy::History, 1, None).unwrap();
        (ds, bank)
    }

    #[test]
    fn always_gold_responder_scores_one() {
        let (ds, bank) = setup();
        let config = ExperimentConfig::default();
        let template = config.template().unwrap();
        let mut replies = BTreeMap::new();
        for q in &bank {
            let p = prepare_prompt(&config, &template, &ds, q, None, None).unwrap();
            replies.insert(p.prompt.text(), q.gold_label.to_string());
        }
        let gw = Gateway::scripted(ScriptPolicy::ScriptedMap { replies });
        let r = run_experiment(&config, &ds, &bank, &gw, None).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n, bank.len());
        assert!(r.records.windows(2).all(|w| w[0].question_id < w[1].question_id));
    }

    #[test]
    fn scope_none_prompts_have_no_history() {
        let (ds, bank) = setup();
        let mut config = ExperimentConfig::default();
        config.history.scope = ScopeKind::None;
        let template = config.template().unwrap();
        for q in bank.iter().take(20) {
            let p = prepare_prompt(&config, &template, &ds, q, None, None).unwrap();
            let input = &p.prompt.input;
            assert!(!input.contains("[Nearest Events]"));
            assert!(!input.contains("[Related Events]"));
            assert!(!input.lines().any(|l| l.ends_with(");")));
            assert_eq!(p.bundle.unwrap().event_count(), 0);
        }
    }

    #[test]
    fn breakdown_recombines_to_overall() {
        let (ds, bank) = setup();
        let gw = Gateway::scripted(ScriptPolicy::Recency);
        let r = run_experiment(&ExperimentConfig::default(), &ds, &bank, &gw, None).unwrap();
        let b = sparsity_breakdown(&r, &bank, &ds, 4, None).unwrap();
        assert_eq!(b.groups.iter().map(|g| g.n).sum::<usize>(), r.n);
        let weighted: f64 = b
            .groups
            .iter()
            .filter_map(|g| g.accuracy.map(|a| a * g.n as f64))
            .sum::<f64>()
            / r.n as f64;
        assert!((weighted - r.accuracy).abs() <= 1e-12);
    }

    #[test]
    fn sweep_grids() {
        assert_eq!(SweepAxis::HistoryLength.default_values(), ["3", "7", "15", "30", "90"]);
        assert_eq!(SweepAxis::Horizon.default_values().len(), 14);
        assert_eq!(
            SweepAxis::Scope.default_values(),
            ["without-history", "global", "complex-event"]
        );
    }

    #[test]
    fn sweep_rows_follow_values_on_one_bank() {
        let (ds, bank) = setup();
        let gw = Gateway::scripted(ScriptPolicy::Recency);
        let values = SweepAxis::Scope.default_values();
        let s = sweep(&ExperimentConfig::default(), SweepAxis::Scope, &values, &ds, &bank, &gw).unwrap();
        assert!(s.aborted.is_none());
        assert_eq!(s.question_sets, 1);
        let labels: Vec<&str> = s.rows.iter().map(|r| r.axis_value.as_str()).collect();
        assert_eq!(labels, values);
        assert!(s.to_csv().starts_with("axis_value,accuracy,invalid_rate,n\nwithout-history,"));
    }

    #[test]
    fn mode_none_rejects_history_parameters() {
        let c = ExperimentConfig {
            mode: HistoryMode::None,
            history: HistoryParams {
                k: 3,
                ..HistoryParams::default()
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(EvalError::Config(_))));
        let c = ExperimentConfig {
            horizon: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
