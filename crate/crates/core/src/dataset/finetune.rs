//! Instruction/input/output records for supervised fine-tuning.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::history::{build_rule_history, Format, HistoryMode, HistoryParams, Task};
use crate::model::{Dataset, Split};
use crate::prompting::{render_prompt, PromptTemplate};
use crate::question_bank::{make_question, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    /// The gold option line, e.g. "C. Karomisa Police".
    pub output: String,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneOptions {
    pub task: Task,
    pub mode: HistoryMode,
    pub format: Format,
    pub strategy: Strategy,
    pub seed: u64,
}

/// One record per event of `split`. Only rule-based (or empty) history is
/// accepted.
pub fn export_finetune_records(
    ds: &Dataset,
    split: Split,
    params: &HistoryParams,
    template: &PromptTemplate,
    opts: FinetuneOptions,
) -> Result<Vec<FinetuneRecord>, DatasetError> {
    if opts.mode == HistoryMode::Retrieved {
        return Err(DatasetError::Unsupported(
            "fine-tune export takes rule-based history only".into(),
        ));
    }
    if opts.strategy == crate::question_bank::Strategy::Generated {
        return Err(DatasetError::Unsupported(
            "fine-tune export does not call a model; use history or global sampling".into(),
        ));
    }
    let mut out = Vec::new();
    for e in ds.split_events(split) {
        let q = make_question(ds, e, opts.task, opts.strategy, opts.seed, None)?;
        let bundle = match opts.mode {
            HistoryMode::Rule => Some(
                build_rule_history(ds, &q.query, params, opts.format, None)
                    .map_err(|err| DatasetError::Domain(err.to_string()))?,
            ),
            _ => None,
        };
        let bundle = bundle.map(|b| crate::history::truncate_history(b, params.max_events, params.max_texts));
        let p = render_prompt(template, &ds.vocab, &q.query, bundle.as_ref(), &q.option_texts())?;
        out.push(FinetuneRecord {
            instruction: p.instruction,
            input: p.input,
            output: format!("{}. {}", q.gold_label, q.gold().text),
        });
    }
    Ok(out)
}

pub fn write_finetune_records(path: &Path, records: &[FinetuneRecord]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("records serialize")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn opts(mode: HistoryMode) -> FinetuneOptions {
        FinetuneOptions {
            task: Task::Object,
            mode,
            format: Format::Graph,
            strategy: Strategy::History,
            seed: 1,
        }
    }

    #[test]
    fn output_is_one_of_the_rendered_options() {
        let ds = generate_synthetic(&SyntheticSpec::small(2)).unwrap();
        let recs = export_finetune_records(
            &ds,
            Split::Train,
            &HistoryParams::default(),
            &PromptTemplate::forecast(),
            opts(HistoryMode::Rule),
        )
        .unwrap();
        assert_eq!(recs.len(), ds.split_events(Split::Train).count());
        for r in &recs {
            assert!(r.input.lines().any(|l| l == r.output), "{}", r.output);
        }
        assert!(recs.iter().any(|r| r.input.lines().any(|l| l.starts_with('(') && l.ends_with(");"))));
    }

    #[test]
    fn retrieved_history_is_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::small(2)).unwrap();
        let err = export_finetune_records(
            &ds,
            Split::Train,
            &HistoryParams::default(),
            &PromptTemplate::forecast(),
            opts(HistoryMode::Retrieved),
        );
        assert!(matches!(err, Err(DatasetError::Unsupported(_))));
    }
}
