//! On-disk dataset layout.
//!
//! A dataset directory holds a TOML manifest plus line-oriented data files:
//!
//! * `events.tsv`: `event_id, subject, relation, object, t, complex_event, doc_ids`
//!   (tab-separated, header row, `doc_ids` comma-separated)
//! * `documents.jsonl`: one JSON object per line
//!   (`doc_id, t, complex_event, title, body, summary?`)
//! * `entities.tsv`, `relations.tsv`, `complex_events.tsv`: `id, name`
//!
//! Paths in the manifest are resolved relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::model::{
    AtomicEvent, ComplexEventId, Dataset, DayRange, Document, DocumentId, EntityId, EventId,
    RelationId, RelativeDay, SplitRanges, Vocab, Vocabularies,
};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub epoch_date: NaiveDate,
    pub events: PathBuf,
    pub documents: PathBuf,
    pub entities: PathBuf,
    pub relations: PathBuf,
    pub complex_events: PathBuf,
    pub splits: SplitRanges,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = read_to_string(path)?;
        let mut manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| DatasetError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn files(&self) -> [PathBuf; 5] {
        [
            self.resolve(&self.events),
            self.resolve(&self.documents),
            self.resolve(&self.entities),
            self.resolve(&self.relations),
            self.resolve(&self.complex_events),
        ]
    }

    /// Checks that every referenced file exists and the split bounds are ordered.
    pub fn check(&self) -> Result<(), DatasetError> {
        for f in self.files() {
            if !f.is_file() {
                return Err(DatasetError::MissingFile(f));
            }
        }
        let s = &self.splits;
        let ordered = [s.train, s.val, s.test].iter().all(|r| r.start <= r.end)
            && s.train.start <= s.val.start
            && s.val.start <= s.test.start;
        if !ordered {
            return Err(DatasetError::Domain(format!(
                "split boundaries are not ordered: {s:?}"
            )));
        }
        Ok(())
    }
}

pub fn load_dataset_from(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    load_dataset(&DatasetManifest::load(manifest_path)?)
}

/// Loads, canonically sorts and validates a dataset.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset, DatasetError> {
    manifest.check()?;
    let vocab = Vocabularies {
        entities: read_vocab(&manifest.resolve(&manifest.entities), EntityId)?,
        relations: read_vocab(&manifest.resolve(&manifest.relations), RelationId)?,
        complex_events: read_vocab(&manifest.resolve(&manifest.complex_events), ComplexEventId)?,
    };

    let events = read_events(&manifest.resolve(&manifest.events))?;
    let docs = read_documents(&manifest.resolve(&manifest.documents))?;

    let ds = Dataset::new_unchecked(vocab, events, docs, manifest.splits, manifest.epoch_date);
    let report = crate::model::validate_dataset(&ds);
    if !report.is_empty() {
        return Err(DatasetError::Invalid(report));
    }
    Ok(ds)
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    if source.kind() == std::io::ErrorKind::NotFound {
        DatasetError::MissingFile(path.to_path_buf())
    } else {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T, DatasetError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(parse_err(path, line, format!("missing {name}")));
    }
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {name}: {raw:?}")))
}

fn is_header(line_no: usize, first_field: &str, expected: &str) -> bool {
    line_no == 1 && first_field.trim() == expected
}

fn read_vocab<I>(path: &Path, wrap: fn(u32) -> I) -> Result<Vocab<I>, DatasetError>
where
    I: Ord + std::hash::Hash + Copy + Into<u32>,
{
    let mut vocab = Vocab::new();
    for (no, line) in open_lines(path)? {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, no, "expected `id<TAB>name`"))?;
        if is_header(no, id, "id") {
            continue;
        }
        let id: u32 = parse_field(path, no, "id", id)?;
        if name.trim().is_empty() {
            return Err(parse_err(path, no, "missing name"));
        }
        vocab
            .insert(wrap(id), name.trim())
            .map_err(|e| parse_err(path, no, e.to_string()))?;
    }
    Ok(vocab)
}

const EVENT_HEADER: &str = "event_id\tsubject\trelation\tobject\tt\tcomplex_event\tdoc_ids";

fn read_events(path: &Path) -> Result<Vec<AtomicEvent>, DatasetError> {
    let mut events = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in open_lines(path)? {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if is_header(no, fields[0], "event_id") {
            continue;
        }
        if fields.len() != 7 {
            return Err(parse_err(
                path,
                no,
                format!("expected 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        let event_id = EventId(parse_field(path, no, "event_id", fields[0])?);
        if !seen.insert(event_id) {
            return Err(DatasetError::DuplicateEventId(event_id));
        }
        let source_docs = fields[6]
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_field(path, no, "doc_id", s).map(DocumentId))
            .collect::<Result<Vec<_>, _>>()?;
        events.push(AtomicEvent {
            event_id,
            subject: EntityId(parse_field(path, no, "subject", fields[1])?),
            relation: RelationId(parse_field(path, no, "relation", fields[2])?),
            object: EntityId(parse_field(path, no, "object", fields[3])?),
            t: RelativeDay(parse_field(path, no, "t", fields[4])?),
            complex_event: ComplexEventId(parse_field(path, no, "complex_event", fields[5])?),
            source_docs,
        });
    }
    Ok(events)
}

fn read_documents(path: &Path) -> Result<Vec<Document>, DatasetError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in open_lines(path)? {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| parse_err(path, no, e.to_string()))?;
        if !seen.insert(doc.doc_id) {
            return Err(DatasetError::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes `ds` into `dir` in the layout above and returns the manifest path.
/// Output is byte-stable for equal datasets.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = DatasetManifest {
        epoch_date: ds.epoch_date,
        events: "events.tsv".into(),
        documents: "documents.jsonl".into(),
        entities: "entities.tsv".into(),
        relations: "relations.tsv".into(),
        complex_events: "complex_events.tsv".into(),
        splits: ds.splits,
        base_dir: dir.to_path_buf(),
    };

    write_vocab(&dir.join(&manifest.entities), ds.vocab.entities.iter())?;
    write_vocab(&dir.join(&manifest.relations), ds.vocab.relations.iter())?;
    write_vocab(&dir.join(&manifest.complex_events), ds.vocab.complex_events.iter())?;

    write_lines(&dir.join(&manifest.events), |w| {
        writeln!(w, "{EVENT_HEADER}")?;
        for e in ds.events() {
            let docs: Vec<String> = e.source_docs.iter().map(|d| d.0.to_string()).collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.event_id,
                e.subject,
                e.relation,
                e.object,
                e.t,
                e.complex_event,
                docs.join(",")
            )?;
        }
        Ok(())
    })?;

    write_lines(&dir.join(&manifest.documents), |w| {
        for d in ds.documents() {
            serde_json::to_writer(&mut *w, d).map_err(std::io::Error::other)?;
            writeln!(w)?;
        }
        Ok(())
    })?;

    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn write_vocab<'a, I: std::fmt::Display>(
    path: &Path,
    entries: impl Iterator<Item = (I, &'a str)>,
) -> Result<(), DatasetError> {
    let entries: Vec<_> = entries.collect();
    if let Some((id, _)) = entries.iter().find(|(_, n)| n.contains(['\t', '\n', '\r'])) {
        return Err(DatasetError::Domain(format!(
            "vocabulary name for id {id} contains a tab or newline"
        )));
    }
    write_lines(path, |w| {
        writeln!(w, "id\tname")?;
        for (id, name) in &entries {
            writeln!(w, "{id}\t{name}")?;
        }
        Ok(())
    })
}

fn write_lines(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Where the validation and test ranges begin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub val_start: RelativeDay,
    pub test_start: RelativeDay,
}

/// Installs train `[first, val_start)`, val `[val_start, test_start)` and
/// test `[test_start, last + 1)`. Assignment is purely by timestamp.
pub fn temporal_split(ds: &Dataset, b: SplitBoundaries) -> Result<Dataset, DatasetError> {
    let (first, last) = match (ds.first_day(), ds.last_day()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(DatasetError::Domain("cannot split an empty dataset".into())),
    };
    let end = last + 1;
    let (v, t) = (b.val_start.0, b.test_start.0);
    if !(first <= v && v <= t && t <= end) {
        return Err(DatasetError::Domain(format!(
            "boundaries val_start={v}, test_start={t} outside dataset range [{first}, {end}]"
        )));
    }
    Ok(ds.with_splits(SplitRanges {
        train: DayRange::new(first, v),
        val: DayRange::new(v, t),
        test: DayRange::new(t, end),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SyntheticSpec};
    use crate::model::Split;

    #[test]
    fn write_then_load_is_identity() {
        let ds = generate_synthetic(&SyntheticSpec::small(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset_from(&manifest).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_is_independent_of_row_order() {
        let ds = generate_synthetic(&SyntheticSpec::small(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let events = dir.path().join("events.tsv");
        let text = fs::read_to_string(&events).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        fs::write(&events, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
        assert_eq!(load_dataset_from(&manifest).unwrap(), ds);
    }

    #[test]
    fn duplicate_event_id_is_named() {
        let ds = generate_synthetic(&SyntheticSpec::small(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let events = dir.path().join("events.tsv");
        let text = fs::read_to_string(&events).unwrap();
        let second = text.lines().nth(1).unwrap().to_owned();
        fs::write(&events, format!("{text}{second}\n")).unwrap();
        let id = second.split('\t').next().unwrap().parse().unwrap();
        match load_dataset_from(&manifest) {
            Err(DatasetError::DuplicateEventId(e)) => assert_eq!(e, EventId(id)),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let ds = generate_synthetic(&SyntheticSpec::small(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let events = dir.path().join("events.tsv");
        let text = fs::read_to_string(&events).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        // blank out the object of the third line
        let mut f: Vec<String> = lines[2].split('\t').map(str::to_owned).collect();
        f[3] = String::new();
        lines[2] = f.join("\t");
        fs::write(&events, lines.join("\n")).unwrap();
        match load_dataset_from(&manifest) {
            Err(DatasetError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("object"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_id_fails_validation() {
        let ds = generate_synthetic(&SyntheticSpec::small(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let events = dir.path().join("events.tsv");
        let text = fs::read_to_string(&events).unwrap();
        fs::write(&events, format!("{text}999999\t0\t0\t987654\t0\t0\t0\n")).unwrap();
        assert!(matches!(
            load_dataset_from(&manifest),
            Err(DatasetError::Invalid(_))
        ));
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset_from(&dir.path().join("nope.toml")).unwrap_err();
        assert!(err.to_string().contains("nope.toml"));
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let ds = generate_synthetic(&SyntheticSpec::small(7)).unwrap();
        let end = RelativeDay(ds.last_day().unwrap().0 + 1);
        let all_train = temporal_split(
            &ds,
            SplitBoundaries {
                val_start: end,
                test_start: end,
            },
        )
        .unwrap();
        assert_eq!(all_train.split_events(Split::Train).count(), ds.event_count());
        assert_eq!(all_train.split_events(Split::Val).count(), 0);
        assert_eq!(all_train.split_events(Split::Test).count(), 0);
        assert!(crate::model::validate_dataset(&all_train).is_empty());
    }

    #[test]
    fn split_boundary_outside_range_is_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::small(7)).unwrap();
        let beyond = RelativeDay(ds.last_day().unwrap().0 + 5);
        assert!(matches!(
            temporal_split(
                &ds,
                SplitBoundaries {
                    val_start: beyond,
                    test_start: beyond
                }
            ),
            Err(DatasetError::Domain(_))
        ));
    }

    #[test]
    fn median_split_matches_brute_force_filter() {
        let ds = generate_synthetic(&SyntheticSpec::small(8)).unwrap();
        let mut days: Vec<u32> = ds.events().map(|e| e.t.0).collect();
        days.sort_unstable();
        let median = days[days.len() / 2];
        let split = temporal_split(
            &ds,
            SplitBoundaries {
                val_start: RelativeDay(median),
                test_start: RelativeDay(median),
            },
        )
        .unwrap();
        let before = ds.events().filter(|e| e.t.0 < median).count();
        let after = ds.events().filter(|e| e.t.0 >= median).count();
        assert_eq!(split.split_events(Split::Train).count(), before);
        assert_eq!(split.split_events(Split::Val).count(), 0);
        assert_eq!(split.split_events(Split::Test).count(), after);
    }
}
