//! Chat-format fine-tuning data built by replaying gold traversals.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatMessage;
use crate::data::LabeledMention;
use crate::engine::{build_prompt, EngineError};
use crate::knowledge::{render_option, DefinitionStore, GroundingSetting};
use crate::ontology::{AtcCode, Node, Ontology};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("gold code {0} is not in the ontology")]
    GoldNotInOntology(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMeta {
    pub mention: String,
    pub level: u8,
    pub gold_code: AtcCode,
}

/// System, user and assistant turns for one level of one mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
    pub meta: SftMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub grounding: GroundingSetting,
    /// Also emit levels that offer a single option.
    pub include_single_child: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            grounding: GroundingSetting::WithName,
            include_single_child: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub records: usize,
    pub mentions: usize,
    pub skipped: usize,
}

/// Records for one mention, walking from the root to its gold code.
pub fn records_for(
    item: &LabeledMention,
    ontology: &Ontology,
    defs: &DefinitionStore,
    options: ExportOptions,
) -> Result<Vec<SftRecord>, ExportError> {
    if !ontology.contains(&item.gold) {
        return Err(ExportError::GoldNotInOntology(item.gold.to_string()));
    }
    let mut records = Vec::new();
    let mut parent: Option<AtcCode> = None;
    for level in 1..=item.gold.level() {
        let target = item.gold.prefix_at_level(level).expect("level within gold");
        let node = parent.as_ref().map_or(Node::Root, Node::Code);
        let prompt = build_prompt(&item.mention, node, ontology, options.grounding, defs)?;
        if prompt.options.len() > 1 || options.include_single_child {
            let entry = ontology.get(target.as_str()).expect("ontology is closed under parents");
            let mut messages = prompt.messages;
            messages.push(ChatMessage::assistant(render_option(entry, options.grounding, defs)));
            records.push(SftRecord {
                messages,
                meta: SftMeta {
                    mention: item.mention.clone(),
                    level,
                    gold_code: item.gold.clone(),
                },
            });
        }
        parent = Some(target);
    }
    Ok(records)
}

/// Streams records for every mention into `sink`. Mentions whose gold code is
/// missing from the ontology are skipped and counted.
pub fn export_sft<F>(
    data: &[LabeledMention],
    ontology: &Ontology,
    defs: &DefinitionStore,
    options: ExportOptions,
    mut sink: F,
) -> Result<ExportSummary, ExportError>
where
    F: FnMut(SftRecord) -> Result<(), ExportError>,
{
    let mut summary = ExportSummary::default();
    for item in data {
        match records_for(item, ontology, defs, options) {
            Ok(records) => {
                summary.mentions += 1;
                for r in records {
                    summary.records += 1;
                    sink(r)?;
                }
            }
            Err(ExportError::GoldNotInOntology(_)) => summary.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// Writes one JSON record per line.
pub fn write_sft_jsonl<W: Write>(
    data: &[LabeledMention],
    ontology: &Ontology,
    defs: &DefinitionStore,
    options: ExportOptions,
    mut writer: W,
) -> Result<ExportSummary, ExportError> {
    let summary = export_sft(data, ontology, defs, options, |record| {
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
        Ok(())
    })?;
    writer.flush()?;
    Ok(summary)
}

/// Reference fine-tuning settings recorded alongside an export. They are
/// metadata for an external trainer; nothing here trains a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparameters {
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: u32,
}

impl Default for TrainingHyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            epochs: 3,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub created_at: String,
    pub grounding: GroundingSetting,
    pub include_single_child: bool,
    pub ontology_sha256: String,
    pub ontology_entries: usize,
    pub record_count: usize,
    pub mention_count: usize,
    pub skipped_mentions: usize,
    pub hyperparameters: TrainingHyperparameters,
}

impl ExportManifest {
    pub fn new(ontology: &Ontology, options: ExportOptions, summary: &ExportSummary) -> Self {
        Self {
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            grounding: options.grounding,
            include_single_child: options.include_single_child,
            ontology_sha256: ontology.fingerprint(),
            ontology_entries: ontology.len(),
            record_count: summary.records,
            mention_count: summary.mentions,
            skipped_mentions: summary.skipped,
            hyperparameters: TrainingHyperparameters::default(),
        }
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), ExportError> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}
