//! Command implementations behind the `eventcast` binary.
//!
//! A run is described by one TOML [`RunSpec`]; `--set a.b=value` assignments
//! are applied on top of the file before it is deserialized, so flags beat
//! the file and the file beats defaults. Relative paths are resolved against
//! the spec file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::info;

use crate::dataset::{
    compute_stats, export_finetune_records, generate_synthetic, load_dataset_from,
    write_dataset, write_finetune_records, DatasetError, FinetuneOptions, SyntheticSpec,
};
use crate::evaluation::{
    run_experiment, sparsity_breakdown, sweep, AbortKind, EvalError, ExperimentConfig,
    ExperimentResult, SparsityBreakdown, Summary, SweepAxis, SweepResult,
};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, GatewayMode};
use crate::model::{validate_dataset, Dataset, Split};
use crate::question_bank::{make_bank, read_bank, write_bank, BankError, McqInstance, Strategy};

pub const SPEC_FILE: &str = "spec.resolved.toml";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BREAKDOWN_FILE: &str = "breakdown.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_PLOT_FILE: &str = "sweep_plot.csv";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const BANK_FILE: &str = "bank.jsonl";
pub const FINETUNE_FILE: &str = "finetune.jsonl";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error("replay miss{}: no cached reply for request {key}", question_id.map(|q| format!(" on question {q}")).unwrap_or_default())]
    ReplayMiss { question_id: Option<u64>, key: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("{0}")]
    Internal(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Input(_) => 2,
            HarnessError::ReplayMiss { .. } => 3,
            HarnessError::Transport(_) => 4,
            HarnessError::Internal(_) => 1,
        }
    }
}

impl From<DatasetError> for HarnessError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Bank(b) => b.into(),
            e => HarnessError::Input(e.to_string()),
        }
    }
}

impl From<GatewayError> for HarnessError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::StrictReplay { key } => HarnessError::ReplayMiss {
                question_id: None,
                key,
            },
            GatewayError::Transport { .. } => HarnessError::Transport(e.to_string()),
            GatewayError::Cache { .. } | GatewayError::Config(_) => HarnessError::Input(e.to_string()),
        }
    }
}

impl From<BankError> for HarnessError {
    fn from(e: BankError) -> Self {
        match e {
            BankError::Gateway(g) => g.into(),
            e => HarnessError::Input(e.to_string()),
        }
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        if let Some(key) = e.replay_miss() {
            let question_id = match &e {
                EvalError::StrictReplay { question_id, .. } | EvalError::Question { question_id, .. } => {
                    Some(*question_id)
                }
                _ => None,
            };
            return HarnessError::ReplayMiss {
                question_id,
                key: key.to_owned(),
            };
        }
        if e.is_transport() {
            return HarnessError::Transport(e.to_string());
        }
        match e {
            EvalError::Bank(b) => b.into(),
            e => HarnessError::Input(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Internal(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Option<SweepAxis>,
    /// Empty means the axis' default grid.
    pub values: Vec<String>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            axis: None,
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreakdownSpec {
    pub bins: usize,
    /// Explicit group edges instead of quantiles.
    pub edges: Option<Vec<u64>>,
}

impl Default for BreakdownSpec {
    fn default() -> Self {
        BreakdownSpec { bins: 4, edges: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSpec {
    pub split: Split,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        FinetuneSpec { split: Split::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Frozen question bank. When absent, run and sweep sample one from the
    /// test split and save it next to the results.
    pub bank: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub gateway: GatewayConfig,
    pub sweep: SweepSpec,
    pub breakdown: BreakdownSpec,
    pub finetune: FinetuneSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            dataset: PathBuf::from("manifest.toml"),
            output_dir: PathBuf::from("runs/default"),
            bank: None,
            experiment: ExperimentConfig::default(),
            gateway: GatewayConfig::default(),
            sweep: SweepSpec::default(),
            breakdown: BreakdownSpec::default(),
            finetune: FinetuneSpec::default(),
        }
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal when
/// it parses as one and as a bare string otherwise.
pub fn apply_assignment(table: &mut toml::Table, assignment: &str) -> Result<(), HarnessError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Input(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Input(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Input(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

impl RunSpec {
    /// Reads `path` (or starts from defaults), applies `overrides` and
    /// resolves relative paths.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    HarnessError::Input(format!("cannot read run spec {}: {e}", p.display()))
                })?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| HarnessError::Input(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            apply_assignment(&mut table, o)?;
        }
        let mut spec: RunSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Input(format!("run spec: {e}")))?;
        spec.resolve_paths(&base);
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &Path| -> PathBuf {
            let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            std::path::absolute(&p).unwrap_or(p)
        };
        self.dataset = abs(&self.dataset);
        self.output_dir = abs(&self.output_dir);
        self.bank = self.bank.as_deref().map(abs);
        self.experiment.template = self.experiment.template.as_deref().map(abs);
        self.gateway.cache_path = self.gateway.cache_path.as_deref().map(abs);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.experiment.validate()?;
        if self.gateway.mode == GatewayMode::Replay {
            match &self.gateway.cache_path {
                None => return Err(HarnessError::Input("replay mode needs gateway.cache_path".into())),
                Some(p) if !p.exists() => {
                    return Err(HarnessError::Input(format!(
                        "replay cache {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        }
        if self.gateway.max_in_flight == 0 {
            return Err(HarnessError::Input("gateway.max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run specs serialize")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    s
}

fn load(manifest: &Path) -> Result<Dataset, HarnessError> {
    if !manifest.exists() {
        return Err(HarnessError::Input(format!("file not found: {}", manifest.display())));
    }
    Ok(load_dataset_from(manifest)?)
}

/// Writes the split, complex-event, entity and monthly tables into `out` and
/// returns the human-readable table.
pub fn cmd_stats(manifest: &Path, out: Option<&Path>) -> Result<String, HarnessError> {
    let ds = load(manifest)?;
    let stats = compute_stats(&ds);
    let table = stats.table();
    if let Some(dir) = out {
        write(&dir.join("splits.csv"), stats.splits_csv())?;
        write(&dir.join("complex_events.csv"), stats.complex_events_csv())?;
        write(&dir.join("entity_frequency.csv"), stats.entity_frequency_csv())?;
        write(&dir.join("monthly.csv"), stats.monthly_csv())?;
        write(&dir.join("stats.txt"), &table)?;
    }
    Ok(table)
}

/// Loads without the constructor's checks and reports every violation.
pub fn cmd_validate(manifest: &Path) -> Result<String, HarnessError> {
    if !manifest.exists() {
        return Err(HarnessError::Input(format!("file not found: {}", manifest.display())));
    }
    match load_dataset_from(manifest) {
        Ok(ds) => {
            let report = validate_dataset(&ds);
            if report.is_empty() {
                Ok(format!(
                    "ok: {} events, {} documents",
                    ds.event_count(),
                    ds.document_count()
                ))
            } else {
                Err(HarnessError::Input(report.to_string()))
            }
        }
        Err(e) => Err(e.into()),
    }
}

/// Generates a synthetic dataset into `out`; returns the manifest path.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<PathBuf, HarnessError> {
    let ds = generate_synthetic(spec)?;
    let manifest = write_dataset(&ds, out)?;
    write(&out.join("synth.toml"), toml::to_string(spec).expect("synthetic specs serialize"))?;
    Ok(manifest)
}

fn gateway(spec: &RunSpec) -> Result<Gateway, HarnessError> {
    Ok(Gateway::from_config(spec.gateway.clone())?)
}

fn bank_for(spec: &RunSpec, ds: &Dataset, gw: &Gateway) -> Result<(Vec<McqInstance>, bool), HarnessError> {
    if let Some(p) = &spec.bank {
        if p.exists() {
            return Ok((read_bank(p)?, false));
        }
    }
    let e = &spec.experiment;
    info!(strategy = e.strategy.as_str(), "sampling question bank");
    Ok((make_bank(ds, Split::Test, e.task, e.strategy, e.bank_seed, Some(gw))?, true))
}

/// Samples the test-split bank and writes it to `spec.bank` (or
/// `output_dir/bank.jsonl`). Returns the path and question count.
pub fn cmd_make_bank(spec: &RunSpec) -> Result<(PathBuf, usize), HarnessError> {
    spec.validate()?;
    let ds = load(&spec.dataset)?;
    let e = &spec.experiment;
    let gw = if e.strategy == Strategy::Generated {
        if spec.gateway.mode == GatewayMode::Scripted && spec.gateway.cache_path.is_none() {
            return Err(HarnessError::Input(
                "strategy = generated needs a model gateway (live, record or replay, or a scripted cache)".into(),
            ));
        }
        Some(gateway(spec)?)
    } else {
        None
    };
    let bank = make_bank(&ds, Split::Test, e.task, e.strategy, e.bank_seed, gw.as_ref())?;
    let path = spec.bank.clone().unwrap_or_else(|| spec.output_dir.join(BANK_FILE));
    write_bank(&path, &bank)?;
    Ok((path, bank.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub summary: Summary,
    pub task: String,
    pub format: String,
    pub mode: String,
    /// sha256 of records.jsonl.
    pub records_sha256: String,
    pub bank_sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata {
    command: String,
    started_at: String,
    finished_at: String,
    wall_seconds: f64,
    mean_latency_ms: f64,
    max_latency_ms: f64,
    backend_calls: u64,
    version: &'static str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn bank_bytes(bank: &[McqInstance]) -> Vec<u8> {
    let mut out = Vec::new();
    for q in bank {
        out.extend(serde_json::to_vec(q).expect("questions serialize"));
        out.push(b'\n');
    }
    out
}

fn records_bytes(result: &ExperimentResult) -> Vec<u8> {
    let mut out = Vec::new();
    for r in &result.records {
        out.extend(serde_json::to_vec(r).expect("records serialize"));
        out.push(b'\n');
    }
    out
}

fn metadata(command: &str, started: chrono::DateTime<chrono::Utc>, clock: Instant, latencies: &[f64], gw: &Gateway) -> Metadata {
    let n = latencies.len().max(1) as f64;
    Metadata {
        command: command.into(),
        started_at: started.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        mean_latency_ms: latencies.iter().sum::<f64>() / n,
        max_latency_ms: latencies.iter().copied().fold(0.0, f64::max),
        backend_calls: gw.backend_calls(),
        version: env!("CARGO_PKG_VERSION"),
    }
}

pub struct RunOutcome {
    pub result: ExperimentResult,
    pub summary: RunSummary,
    pub breakdown: SparsityBreakdown,
}

/// Runs one experiment and writes the spec echo, records, summary,
/// breakdown and metadata into `spec.output_dir`.
pub fn cmd_run(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    spec.validate()?;
    let out = &spec.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join(SPEC_FILE), spec.to_toml())?;
    let ds = load(&spec.dataset)?;
    let gw = gateway(spec)?;
    let (bank, fresh) = bank_for(spec, &ds, &gw)?;
    if fresh {
        write_bank(&out.join(BANK_FILE), &bank)?;
    }
    let result = run_experiment(&spec.experiment, &ds, &bank, &gw, None)?;
    let records = records_bytes(&result);
    write(&out.join(RECORDS_FILE), &records)?;
    let e = &spec.experiment;
    let summary = RunSummary {
        summary: result.summary(),
        task: e.task.as_str().into(),
        format: e.format.as_str().into(),
        mode: format!("{:?}", e.mode).to_lowercase(),
        records_sha256: sha256_hex(&records),
        bank_sha256: sha256_hex(&bank_bytes(&bank)),
    };
    write(&out.join(SUMMARY_FILE), json(&summary))?;
    let breakdown = sparsity_breakdown(&result, &bank, &ds, spec.breakdown.bins, spec.breakdown.edges.as_deref())?;
    write(&out.join(BREAKDOWN_FILE), json(&breakdown))?;
    let latencies: Vec<f64> = result.records.iter().map(|r| r.latency_ms).collect();
    write(&out.join(METADATA_FILE), json(&metadata("run", started, clock, &latencies, &gw)))?;
    if !result.records.is_empty() && result.records.iter().all(|r| r.error.is_some()) {
        return Err(HarnessError::Transport(format!(
            "every question failed to reach the model; first error: {}",
            result.records[0].error.as_deref().unwrap_or_default()
        )));
    }
    Ok(RunOutcome {
        result,
        summary,
        breakdown,
    })
}

/// Sweeps one axis and writes sweep.csv, sweep_plot.csv and sweep.json.
/// Partial tables are still written when a cell fails.
pub fn cmd_sweep(spec: &RunSpec) -> Result<SweepResult, HarnessError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    spec.validate()?;
    let axis = spec
        .sweep
        .axis
        .ok_or_else(|| HarnessError::Input("sweep.axis is not set".into()))?;
    let values = if spec.sweep.values.is_empty() {
        axis.default_values()
    } else {
        spec.sweep.values.clone()
    };
    let out = &spec.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join(SPEC_FILE), spec.to_toml())?;
    let ds = load(&spec.dataset)?;
    let gw = gateway(spec)?;
    let (bank, fresh) = bank_for(spec, &ds, &gw)?;
    if fresh {
        write_bank(&out.join(BANK_FILE), &bank)?;
    }
    let result = sweep(&spec.experiment, axis, &values, &ds, &bank, &gw)?;
    write(&out.join(SWEEP_FILE), result.to_csv())?;
    write(&out.join(SWEEP_PLOT_FILE), result.to_plot_csv())?;
    write(&out.join(SWEEP_JSON_FILE), json(&result))?;
    write(&out.join(METADATA_FILE), json(&metadata("sweep", started, clock, &[], &gw)))?;
    match (result.abort_kind, &result.aborted) {
        (Some(AbortKind::ReplayMiss), Some(m)) => Err(HarnessError::ReplayMiss {
            question_id: None,
            key: m.clone(),
        }),
        (Some(AbortKind::Transport), Some(m)) => Err(HarnessError::Transport(m.clone())),
        (Some(_), Some(m)) => Err(HarnessError::Input(m.clone())),
        _ => Ok(result),
    }
}

/// Writes fine-tuning records for `spec.finetune.split`; returns the path and
/// record count.
pub fn cmd_export_finetune(spec: &RunSpec) -> Result<(PathBuf, usize), HarnessError> {
    spec.validate()?;
    let ds = load(&spec.dataset)?;
    let e = &spec.experiment;
    let template = e.template()?;
    let records = export_finetune_records(
        &ds,
        spec.finetune.split,
        &e.history,
        &template,
        FinetuneOptions {
            task: e.task,
            mode: e.mode,
            format: e.format,
            strategy: e.strategy,
            seed: e.bank_seed,
        },
    )?;
    let path = spec.output_dir.join(FINETUNE_FILE);
    fs::create_dir_all(&spec.output_dir).map_err(|e| io_err(&spec.output_dir, e))?;
    write_finetune_records(&path, &records)?;
    Ok((path, records.len()))
}

/// Human-readable summary of a run directory; also saved as report.txt.
pub fn cmd_report(run_dir: &Path) -> Result<String, HarnessError> {
    let read = |name: &str| -> Result<Option<String>, HarnessError> {
        let p = run_dir.join(name);
        match fs::read_to_string(&p) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&p, e)),
        }
    };
    let bad = |name: &str, e: serde_json::Error| HarnessError::Input(format!("{name}: {e}"));
    let mut out = String::new();
    let summary = read(SUMMARY_FILE)?;
    let sweep_csv = read(SWEEP_FILE)?;
    if summary.is_none() && sweep_csv.is_none() {
        return Err(HarnessError::Input(format!(
            "{} holds neither {SUMMARY_FILE} nor {SWEEP_FILE}",
            run_dir.display()
        )));
    }
    if let Some(s) = summary {
        let s: RunSummary = serde_json::from_str(&s).map_err(|e| bad(SUMMARY_FILE, e))?;
        out.push_str(&format!(
            "task {} / format {} / history {}\naccuracy {:.4}  invalid rate {:.4}  questions {}  cache hits {}\n",
            s.task, s.format, s.mode, s.summary.accuracy, s.summary.invalid_rate, s.summary.n, s.summary.cache_hits
        ));
    }
    if let Some(b) = read(BREAKDOWN_FILE)? {
        let b: SparsityBreakdown = serde_json::from_str(&b).map_err(|e| bad(BREAKDOWN_FILE, e))?;
        out.push_str(&format!("\nby {}:\n", b.measure));
        out.push_str(&format!("{:<12} {:>6} {:>9}\n", "frequency", "n", "accuracy"));
        for g in &b.groups {
            let acc = g.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{:<12} {:>6} {:>9}\n", g.label, g.n, acc));
        }
        for w in &b.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
    }
    if let Some(csv) = sweep_csv {
        out.push_str("\nsweep:\n");
        for line in csv.lines() {
            let cells: Vec<&str> = line.split(',').collect();
            out.push_str(&format!("{}\n", cells.join("\t")));
        }
    }
    write(&run_dir.join(REPORT_FILE), &out)?;
    Ok(out)
}
