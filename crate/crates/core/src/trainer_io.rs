//! Serialization boundary with the trainer: iteration datasets, exported
//! conversation files, and the per-iteration training manifest.
//!
//! All three formats are line- or document-oriented JSON with stable field
//! order, so identical inputs produce byte-identical files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::ChatMessage;
use crate::error::{Error, Result};
use crate::model::{IterationDataset, Lineage, Problem, RunConfig, Strategy, TrainingTuple};
use crate::prompts::{build_direct_prompt, build_solution_prompt, TemplateSet};

/// Schema version stamped on every file this module writes.
pub const SCHEMA_VERSION: &str = "1";

/// The `kind` discriminator of iteration dataset files.
pub const DATASET_KIND: &str = "iteration_dataset";

/// First line of a dataset file; the remaining `count` lines are tuples.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    version: String,
    kind: String,
    iteration: u32,
    provenance: crate::model::Provenance,
    count: usize,
}

/// A training conversation without a reward: plain supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub conversation: Vec<ChatMessage>,
}

/// A training conversation with an optional reward; the reward field is
/// omitted entirely for unrewarded records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub conversation: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<i8>,
}

/// First line of an exported training file; the remaining `count` lines are
/// [`ExportRecord`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub version: String,
    pub iteration: u32,
    pub strategy: String,
    pub base_checkpoint: String,
    pub learning_rate: f64,
    pub epochs: u32,
    pub count: usize,
}

/// Everything a trainer hook needs to run one fine-tuning job.
/// `dataset_path` is relative to the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub version: String,
    pub iteration: u32,
    pub strategy: String,
    pub base_checkpoint: String,
    pub dataset_path: String,
    pub learning_rate: f64,
    pub epochs: u32,
}

/// The checkpoint the next fine-tuning job starts from. Chain strategies and
/// plain rejection sampling continue from the previous iteration's
/// checkpoint by default; `rest_em` and `star` always restart from the
/// initial checkpoint. The `lepa_lineage` switch flips the chain strategies
/// to restart-from-initial for lineage ablations.
pub fn lineage_base(config: &RunConfig, initial: &str, previous: &str) -> String {
    let base = match config.strategy {
        Strategy::Lepa
        | Strategy::LepaReinforce
        | Strategy::NoPlan
        | Strategy::NoSelfReflection => match config.lepa_lineage {
            Lineage::Previous => previous,
            Lineage::Initial => initial,
        },
        Strategy::Rest
        | Strategy::SilenceTokens
        | Strategy::Correction
        | Strategy::LongSolution => previous,
        Strategy::RestEm | Strategy::Star => initial,
    };
    base.to_string()
}

/// Builds the training conversation for a tuple: four messages for
/// plan-bearing tuples (plan request, plan, solve request, solution), two for
/// plan-less ones (direct request, solution). Assistant turns carry the
/// stored texts verbatim.
pub fn conversation_for(
    tuple: &TrainingTuple,
    problem: &Problem,
    templates: &TemplateSet,
) -> Vec<ChatMessage> {
    let mut messages = match &tuple.plan_text {
        Some(plan) => build_solution_prompt(templates, problem, plan),
        None => build_direct_prompt(templates, problem),
    };
    messages.push(ChatMessage::assistant(&tuple.solution_text));
    messages
}

/// Converts a tuple to a supervised record. Rewarded tuples are refused:
/// they belong in reward-carrying exports, not SFT files.
pub fn to_sft_record(
    tuple: &TrainingTuple,
    problem: &Problem,
    templates: &TemplateSet,
) -> Result<SftRecord> {
    if tuple.reward.is_some() {
        return Err(Error::UnexpectedReward(format!(
            "tuple for '{}' carries a reward; use the export record form",
            tuple.problem_id
        )));
    }
    Ok(SftRecord {
        conversation: conversation_for(tuple, problem, templates),
    })
}

/// Converts a tuple to an export record, carrying its reward through if any.
pub fn to_export_record(
    tuple: &TrainingTuple,
    problem: &Problem,
    templates: &TemplateSet,
) -> ExportRecord {
    ExportRecord {
        conversation: conversation_for(tuple, problem, templates),
        reward: tuple.reward,
    }
}

/// Writes an iteration dataset: one header line, then one tuple per line.
pub fn write_dataset(path: &Path, dataset: &IterationDataset) -> Result<()> {
    let header = DatasetHeader {
        version: SCHEMA_VERSION.to_string(),
        kind: DATASET_KIND.to_string(),
        iteration: dataset.iteration,
        provenance: dataset.provenance.clone(),
        count: dataset.tuples.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for tuple in &dataset.tuples {
        out.push_str(&serde_json::to_string(tuple)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset file back, verifying schema version, kind, and count.
pub fn read_dataset(path: &Path) -> Result<IterationDataset> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        detail: "empty dataset file".into(),
    })?;
    let header: DatasetHeader =
        serde_json::from_str(header_line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            detail: format!("bad dataset header: {e}"),
        })?;
    if header.version != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            found: header.version,
            supported: SCHEMA_VERSION.to_string(),
        });
    }
    if header.kind != DATASET_KIND {
        return Err(Error::SchemaMismatch {
            found: header.kind,
            supported: DATASET_KIND.to_string(),
        });
    }
    let mut tuples = Vec::with_capacity(header.count);
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let tuple: TrainingTuple = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: index + 1,
            detail: format!("bad tuple: {e}"),
        })?;
        tuples.push(tuple);
    }
    if tuples.len() != header.count {
        return Err(Error::Parse {
            path: display,
            line: 1,
            detail: format!(
                "header count {} does not match {} tuple lines",
                header.count,
                tuples.len()
            ),
        });
    }
    Ok(IterationDataset {
        iteration: header.iteration,
        tuples,
        provenance: header.provenance,
    })
}

/// Writes the trainer-facing export: a header line followed by one
/// conversation record per tuple. Fails with `MissingProblem` if a tuple
/// references a problem not in `problems`.
pub fn write_export(
    path: &Path,
    dataset: &IterationDataset,
    problems: &[Problem],
    templates: &TemplateSet,
    config: &RunConfig,
    base_checkpoint: &str,
) -> Result<()> {
    let index: HashMap<&str, &Problem> =
        problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let header = ExportHeader {
        version: SCHEMA_VERSION.to_string(),
        iteration: dataset.iteration,
        strategy: config.strategy.as_str().to_string(),
        base_checkpoint: base_checkpoint.to_string(),
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        count: dataset.tuples.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for tuple in &dataset.tuples {
        let problem = index
            .get(tuple.problem_id.as_str())
            .ok_or_else(|| Error::MissingProblem {
                problem_id: tuple.problem_id.clone(),
            })?;
        let record = to_export_record(tuple, problem, templates);
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads an export file back, verifying schema version and count.
pub fn read_export(path: &Path) -> Result<(ExportHeader, Vec<ExportRecord>)> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        detail: "empty export file".into(),
    })?;
    let header: ExportHeader = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        path: display.clone(),
        line: 1,
        detail: format!("bad export header: {e}"),
    })?;
    if header.version != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            found: header.version,
            supported: SCHEMA_VERSION.to_string(),
        });
    }
    let mut records = Vec::with_capacity(header.count);
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExportRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: index + 1,
            detail: format!("bad export record: {e}"),
        })?;
        records.push(record);
    }
    if records.len() != header.count {
        return Err(Error::Parse {
            path: display,
            line: 1,
            detail: format!(
                "header count {} does not match {} record lines",
                header.count,
                records.len()
            ),
        });
    }
    Ok((header, records))
}

/// Writes the manifest as pretty-printed JSON with a trailing newline.
pub fn write_manifest(path: &Path, manifest: &TrainingManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a manifest back, verifying the schema version.
pub fn read_manifest(path: &Path) -> Result<TrainingManifest> {
    let text = fs::read_to_string(path)?;
    let manifest: TrainingManifest = serde_json::from_str(&text)?;
    if manifest.version != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            found: manifest.version,
            supported: SCHEMA_VERSION.to_string(),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Role;
    use crate::model::{Provenance, TaskKind};
    use tempfile::tempdir;

    fn problem() -> Problem {
        Problem {
            id: "p1".into(),
            statement: "What is 2+2?".into(),
            gold_answer: Some("4".into()),
            choices: vec![],
            task_kind: TaskKind::FreeFormMath,
        }
    }

    fn plan_tuple() -> TrainingTuple {
        TrainingTuple {
            problem_id: "p1".into(),
            plan_text: Some("Add the numbers.".into()),
            solution_text: "2+2 = 4.\nFinal Answer: 4".into(),
            reward: None,
            strategy_tag: "lepa".into(),
            trial_index: 0,
        }
    }

    fn direct_tuple() -> TrainingTuple {
        TrainingTuple {
            plan_text: None,
            strategy_tag: "rest".into(),
            ..plan_tuple()
        }
    }

    fn dataset(tuples: Vec<TrainingTuple>) -> IterationDataset {
        IterationDataset {
            iteration: 2,
            tuples,
            provenance: Provenance {
                config_hash: "abc123".into(),
                backend_id: "mock".into(),
                seed: 0,
            },
        }
    }

    #[test]
    fn plan_tuples_become_four_message_conversations() {
        let templates = TemplateSet::builtin();
        let record = to_sft_record(&plan_tuple(), &problem(), &templates).unwrap();
        let roles: Vec<Role> = record.conversation.iter().map(|m| m.role).collect();
        assert_eq!(roles, vec![Role::User, Role::Assistant, Role::User, Role::Assistant]);
        assert_eq!(record.conversation[1].content, "Add the numbers.");
        assert_eq!(record.conversation[3].content, "2+2 = 4.\nFinal Answer: 4");
        assert!(record.conversation[0].content.contains("What is 2+2?"));
        assert!(record.conversation[2].content.contains("following the plan"));
    }

    #[test]
    fn plan_less_tuples_become_two_message_conversations() {
        let templates = TemplateSet::builtin();
        let record = to_sft_record(&direct_tuple(), &problem(), &templates).unwrap();
        assert_eq!(record.conversation.len(), 2);
        assert_eq!(record.conversation[0].role, Role::User);
        assert_eq!(record.conversation[1].role, Role::Assistant);
        assert_eq!(record.conversation[1].content, "2+2 = 4.\nFinal Answer: 4");
    }

    #[test]
    fn rewarded_tuples_are_refused_by_the_sft_converter() {
        let templates = TemplateSet::builtin();
        let tuple = TrainingTuple {
            reward: Some(1),
            ..plan_tuple()
        };
        let err = to_sft_record(&tuple, &problem(), &templates).unwrap_err();
        assert!(matches!(err, Error::UnexpectedReward(_)));
    }

    #[test]
    fn export_records_carry_rewards_and_omit_absent_ones() {
        let templates = TemplateSet::builtin();
        let rewarded = TrainingTuple {
            reward: Some(-1),
            ..plan_tuple()
        };
        let record = to_export_record(&rewarded, &problem(), &templates);
        assert_eq!(record.reward, Some(-1));

        let plain = to_export_record(&direct_tuple(), &problem(), &templates);
        let json = serde_json::to_string(&plain).unwrap();
        assert!(!json.contains("reward"), "absent reward must not appear: {json}");
    }

    #[test]
    fn dataset_round_trip_is_byte_stable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let ds = dataset(vec![plan_tuple(), direct_tuple()]);
        write_dataset(&path, &ds).unwrap();
        let first = std::fs::read(&path).unwrap();

        let reread = read_dataset(&path).unwrap();
        assert_eq!(reread.iteration, 2);
        assert_eq!(reread.tuples, ds.tuples);
        assert_eq!(reread.provenance, ds.provenance);

        write_dataset(&path, &reread).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn unsupported_dataset_versions_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let ds = dataset(vec![]);
        write_dataset(&path, &ds).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":\"1\"", "\"version\":\"9\"");
        std::fs::write(&path, text).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch { .. }));
    }

    #[test]
    fn count_mismatches_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_dataset(&path, &dataset(vec![plan_tuple()])).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"count\":1", "\"count\":2");
        std::fs::write(&path, text).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn export_header_has_exactly_the_documented_fields() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let config = RunConfig::default();
        let templates = TemplateSet::builtin();
        write_export(
            &path,
            &dataset(vec![plan_tuple()]),
            &[problem()],
            &templates,
            &config,
            "initial",
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header: serde_json::Value =
            serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<&str> = header.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![
                "base_checkpoint",
                "count",
                "epochs",
                "iteration",
                "learning_rate",
                "strategy",
                "version"
            ]
        );

        let (header, records) = read_export(&path).unwrap();
        assert_eq!(header.base_checkpoint, "initial");
        assert_eq!(header.count, 1);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].conversation.len(), 4);
    }

    #[test]
    fn exports_fail_when_a_tuple_references_an_unknown_problem() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let config = RunConfig::default();
        let templates = TemplateSet::builtin();
        let mut tuple = plan_tuple();
        tuple.problem_id = "ghost".into();
        let err = write_export(
            &path,
            &dataset(vec![tuple]),
            &[problem()],
            &templates,
            &config,
            "initial",
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingProblem { .. }));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = TrainingManifest {
            version: SCHEMA_VERSION.into(),
            iteration: 1,
            strategy: "lepa".into(),
            base_checkpoint: "initial-it1".into(),
            dataset_path: "train.jsonl".into(),
            learning_rate: 3e-7,
            epochs: 1,
        };
        write_manifest(&path, &manifest).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), manifest);
    }

    #[test]
    fn lineage_follows_the_strategy_rules() {
        let mut config = RunConfig::default();
        let cases = [
            (Strategy::Lepa, "prev"),
            (Strategy::LepaReinforce, "prev"),
            (Strategy::NoPlan, "prev"),
            (Strategy::NoSelfReflection, "prev"),
            (Strategy::Rest, "prev"),
            (Strategy::SilenceTokens, "prev"),
            (Strategy::Correction, "prev"),
            (Strategy::LongSolution, "prev"),
            (Strategy::RestEm, "init"),
            (Strategy::Star, "init"),
        ];
        for (strategy, expected) in cases {
            config.strategy = strategy;
            assert_eq!(
                lineage_base(&config, "init", "prev"),
                expected,
                "strategy {strategy}"
            );
        }

        config.lepa_lineage = Lineage::Initial;
        for strategy in [
            Strategy::Lepa,
            Strategy::LepaReinforce,
            Strategy::NoPlan,
            Strategy::NoSelfReflection,
        ] {
            config.strategy = strategy;
            assert_eq!(lineage_base(&config, "init", "prev"), "init");
        }
        // The lineage switch must not disturb the fixed strategies.
        config.strategy = Strategy::Rest;
        assert_eq!(lineage_base(&config, "init", "prev"), "prev");
        config.strategy = Strategy::Star;
        assert_eq!(lineage_base(&config, "init", "prev"), "init");
    }
}
