//! Hierarchical scoring: how deep a prediction agrees with the gold code, and
//! cumulative accuracy at each depth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledMention;
use crate::ontology::{level_length, AtcCode, MAX_LEVEL};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no examples left to evaluate ({excluded} excluded)")]
    EmptyEvaluation { excluded: usize },
}

/// Deepest level at which gold and prediction share a prefix; 0 when even the
/// level-1 group differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorrectLevel(u8);

impl CorrectLevel {
    pub const ZERO: CorrectLevel = CorrectLevel(0);

    pub fn value(self) -> u8 {
        self.0
    }
}

/// `predicted = None` (an abstention) scores 0.
pub fn correct_level(gold: &AtcCode, predicted: Option<&AtcCode>) -> CorrectLevel {
    let Some(predicted) = predicted else {
        return CorrectLevel::ZERO;
    };
    let max = gold.level().min(predicted.level());
    (1..=max)
        .rev()
        .find(|&k| {
            let len = level_length(k).expect("level in range");
            gold.as_str()[..len] == predicted.as_str()[..len]
        })
        .map_or(CorrectLevel::ZERO, CorrectLevel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CappedScore {
    pub level: CorrectLevel,
    /// The granularity annotation limited this score.
    pub capped: bool,
    /// Granularity 0: the mention cannot be coded at any level.
    pub excluded: bool,
}

/// Correct level limited by the mention's granularity annotation. The cap is
/// reported as binding when the granularity sits below level 5 and does not
/// exceed the uncapped score.
pub fn capped_correct_level(gold: &AtcCode, predicted: Option<&AtcCode>, granularity: Option<u8>) -> CappedScore {
    let raw = correct_level(gold, predicted);
    match granularity {
        None => CappedScore { level: raw, capped: false, excluded: false },
        Some(0) => CappedScore { level: CorrectLevel::ZERO, capped: true, excluded: true },
        Some(g) => {
            let g = g.min(MAX_LEVEL);
            CappedScore {
                level: raw.min(CorrectLevel(g)),
                capped: g < MAX_LEVEL && g <= raw.0,
                excluded: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Evaluate only mentions annotated at granularity 5 (or not annotated),
    /// excluding every ambiguous one.
    pub full_granularity_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub mention: String,
    pub gold: AtcCode,
    pub predicted: Option<AtcCode>,
    pub correct_level: CorrectLevel,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// A@>=k for k = 1..=5.
    pub cumulative: BTreeMap<u8, f64>,
    pub n_evaluated: usize,
    pub n_excluded: usize,
    pub per_example: Vec<ExampleScore>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: u8) -> f64 {
        self.cumulative.get(&k).copied().unwrap_or(0.0)
    }
}

/// Cumulative accuracy rows from already-computed correct levels.
pub fn cumulative_accuracy(levels: &[CorrectLevel]) -> BTreeMap<u8, f64> {
    (1..=MAX_LEVEL)
        .map(|k| {
            let hits = levels.iter().filter(|l| l.0 >= k).count();
            let acc = if levels.is_empty() { 0.0 } else { hits as f64 / levels.len() as f64 };
            (k, acc)
        })
        .collect()
}

pub fn build_report(examples: &[(LabeledMention, Option<AtcCode>)]) -> Result<EvalReport, EvalError> {
    build_report_with(examples, EvalOptions::default())
}

/// Scores every example. Abstentions count as level 0; granularity-0 items
/// (and, with `full_granularity_only`, every item below granularity 5) are left
/// out of both numerator and denominator and counted in `n_excluded`.
pub fn build_report_with(
    examples: &[(LabeledMention, Option<AtcCode>)],
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut per_example = Vec::new();
    let mut excluded = 0;
    for (item, predicted) in examples {
        let score = capped_correct_level(&item.gold, predicted.as_ref(), item.granularity);
        let ambiguous = options.full_granularity_only && item.granularity.is_some_and(|g| g < MAX_LEVEL);
        if score.excluded || ambiguous {
            excluded += 1;
            continue;
        }
        per_example.push(ExampleScore {
            mention: item.mention.clone(),
            gold: item.gold.clone(),
            predicted: predicted.clone(),
            correct_level: score.level,
            capped: score.capped,
        });
    }
    if per_example.is_empty() {
        return Err(EvalError::EmptyEvaluation { excluded });
    }
    let levels: Vec<CorrectLevel> = per_example.iter().map(|e| e.correct_level).collect();
    Ok(EvalReport {
        cumulative: cumulative_accuracy(&levels),
        n_evaluated: per_example.len(),
        n_excluded: excluded,
        per_example,
    })
}

/// Aligned text table, rows `≥5` down to `≥1`, one percentage column per run.
pub fn render_table(runs: &[(&str, &EvalReport)]) -> String {
    let head = "Correct Level";
    let widths: Vec<usize> = runs.iter().map(|(name, _)| name.chars().count().max(6)).collect();
    let mut out = String::new();
    let _ = write!(out, "{head}");
    for ((name, _), w) in runs.iter().zip(&widths) {
        let _ = write!(out, " | {name:>w$}");
    }
    out.push('\n');
    let _ = write!(out, "{}", "-".repeat(head.len()));
    for w in &widths {
        let _ = write!(out, "-+-{}", "-".repeat(*w));
    }
    out.push('\n');
    for k in (1..=MAX_LEVEL).rev() {
        let _ = write!(out, "{:<width$}", format!("≥{k}"), width = head.len());
        for ((_, report), w) in runs.iter().zip(&widths) {
            let cell = format!("{:.1}%", report.accuracy_at(k) * 100.0);
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    }
    out
}
