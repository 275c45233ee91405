//! Level-by-level traversal of the ATC hierarchy.
//!
//! Starting above the level-1 groups, the engine shows the model the children
//! of the current node, maps the reply back onto one of them, and descends.
//! Every selection is taken from the option list, so a finished trace can only
//! ever name codes that exist in the ontology.

mod normalize;
pub mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize_reply, AmbiguousMatch, MatchStage};
pub use prompt::{build_prompt, render_prompt, LevelPrompt, PromptOption, SYSTEM_PROMPT};

use crate::backend::{BackendError, ChatBackend, GenerationParams};
use crate::knowledge::{DefinitionStore, GroundingSetting};
use crate::ontology::{AtcCode, Node, Ontology, OntologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("code {0} has no children to choose from")]
    NoChildren(String),
    #[error("mention is empty")]
    EmptyMention,
    #[error("ontology is empty")]
    EmptyOntology,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    pub params: GenerationParams,
    pub grounding: GroundingSetting,
    /// Extra attempts at a level after an unusable reply.
    pub retries_per_level: u32,
    /// Descend through single-child nodes without asking the model.
    pub auto_select: bool,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self {
            params: GenerationParams::default(),
            grounding: GroundingSetting::WithName,
            retries_per_level: 2,
            auto_select: true,
        }
    }
}

/// One prompt (or automatic descent) at one level.
///
/// A level that needed retries contributes one step per attempt, all with the
/// same `level`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelStep {
    pub level: u8,
    pub options: Vec<PromptOption>,
    /// `None` for automatic descents.
    pub raw_reply: Option<String>,
    pub selected: Option<AtcCode>,
    pub auto_selected: bool,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTrace {
    pub mention: String,
    pub grounding: GroundingSetting,
    pub steps: Vec<LevelStep>,
    /// Deepest matched code; `None` means the traversal abstained.
    pub final_code: Option<AtcCode>,
}

impl CodingTrace {
    pub fn abstained(&self) -> bool {
        self.final_code.is_none()
    }

    /// Number of steps that went to the backend.
    pub fn backend_calls(&self) -> usize {
        self.steps.iter().filter(|s| !s.auto_selected).count()
    }

    /// Checks the structural guarantees of a trace against `ontology`, without
    /// reference to any gold label.
    pub fn check_consistency(&self, ontology: &Ontology) -> Result<(), String> {
        let mut current: Option<&AtcCode> = None;
        let mut level = 1u8;
        for (i, step) in self.steps.iter().enumerate() {
            let expected = current.map_or(1, |c| c.level() + 1);
            if step.level != expected || step.level < level {
                return Err(format!("step {i} is at level {}, expected {expected}", step.level));
            }
            level = step.level;
            let Some(sel) = &step.selected else { continue };
            if !ontology.contains(sel) {
                return Err(format!("step {i} selected {sel}, which is not in the ontology"));
            }
            if !step.options.iter().any(|o| &o.code == sel) {
                return Err(format!("step {i} selected {sel}, which was not offered"));
            }
            if sel.parent().as_ref() != current {
                return Err(format!("step {i} selected {sel}, not a child of {current:?}"));
            }
            current = Some(sel);
        }
        if self.final_code.as_ref() != current {
            return Err(format!("final {:?} differs from last selection {current:?}", self.final_code));
        }
        Ok(())
    }

    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            mention: self.mention.clone(),
            grounding: self.grounding,
            final_code: self.final_code.clone(),
            abstained: self.abstained(),
            error: None,
            steps: self
                .steps
                .iter()
                .map(|s| StepRecord {
                    level: s.level,
                    options: s.options.iter().map(|o| o.code.clone()).collect(),
                    raw_reply: s.raw_reply.clone(),
                    selected: s.selected.clone(),
                    auto_selected: s.auto_selected,
                })
                .collect(),
        }
    }
}

/// One JSONL line of trace output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub mention: String,
    pub grounding: GroundingSetting,
    #[serde(rename = "final")]
    pub final_code: Option<AtcCode>,
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps: Vec<StepRecord>,
}

impl TraceRecord {
    /// Record for a mention whose traversal failed outright.
    pub fn failed(mention: &str, grounding: GroundingSetting, error: &EngineError) -> Self {
        Self {
            mention: mention.to_owned(),
            grounding,
            final_code: None,
            abstained: false,
            error: Some(error.to_string()),
            steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub level: u8,
    pub options: Vec<AtcCode>,
    pub raw_reply: Option<String>,
    pub selected: Option<AtcCode>,
    pub auto_selected: bool,
}

/// Runs traversals against one ontology, definition store and backend.
pub struct Coder<'a, B: ChatBackend + ?Sized> {
    ontology: &'a Ontology,
    defs: &'a DefinitionStore,
    backend: &'a B,
    config: CodingConfig,
}

impl<'a, B: ChatBackend + ?Sized> Coder<'a, B> {
    pub fn new(ontology: &'a Ontology, defs: &'a DefinitionStore, backend: &'a B, config: CodingConfig) -> Self {
        Self {
            ontology,
            defs,
            backend,
            config,
        }
    }

    pub fn config(&self) -> &CodingConfig {
        &self.config
    }

    /// Codes one mention, descending until a leaf, level 5, or a level whose
    /// replies never match an option.
    pub fn code_mention(&self, mention: &str) -> Result<CodingTrace, EngineError> {
        let mention = prompt::clean_mention(mention);
        if mention.is_empty() {
            return Err(EngineError::EmptyMention);
        }
        if self.ontology.is_empty() {
            return Err(EngineError::EmptyOntology);
        }

        let mut steps = Vec::new();
        let mut current: Option<AtcCode> = None;
        loop {
            let parent = current.as_ref().map_or(Node::Root, Node::Code);
            let children = self.ontology.children(parent)?;
            if children.is_empty() {
                break;
            }
            let level = parent.level() + 1;

            if children.len() == 1 && self.config.auto_select {
                let only = children[0];
                steps.push(LevelStep {
                    level,
                    options: vec![PromptOption {
                        code: only.code.clone(),
                        rendered: crate::knowledge::render_option(only, self.config.grounding, self.defs),
                    }],
                    raw_reply: None,
                    selected: Some(only.code.clone()),
                    auto_selected: true,
                    ambiguous: false,
                });
                current = Some(only.code.clone());
                continue;
            }

            let prompt = build_prompt(&mention, parent, self.ontology, self.config.grounding, self.defs)?;
            let mut chosen = None;
            for _ in 0..=self.config.retries_per_level {
                let reply = self.backend.complete(&prompt.messages, &self.config.params)?;
                let (selected, ambiguous) = match normalize_reply(&reply, &prompt.options) {
                    Ok(sel) => (sel, false),
                    Err(_) => (None, true),
                };
                steps.push(LevelStep {
                    level,
                    options: prompt.options.clone(),
                    raw_reply: Some(reply),
                    selected: selected.clone(),
                    auto_selected: false,
                    ambiguous,
                });
                if selected.is_some() {
                    chosen = selected;
                    break;
                }
            }
            match chosen {
                Some(code) => current = Some(code),
                None => break,
            }
        }

        Ok(CodingTrace {
            mention,
            grounding: self.config.grounding,
            steps,
            final_code: current,
        })
    }

    /// Codes many mentions with at most `max_concurrency` traversals running
    /// at once. Results come back in input order; a failure is confined to its
    /// own slot.
    pub fn code_batch<S: AsRef<str> + Sync>(
        &self,
        mentions: &[S],
        max_concurrency: usize,
    ) -> Vec<Result<CodingTrace, EngineError>> {
        let workers = max_concurrency.max(1).min(mentions.len());
        if workers <= 1 {
            return mentions.iter().map(|m| self.code_mention(m.as_ref())).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CodingTrace, EngineError>>>> =
            Mutex::new((0..mentions.len()).map(|_| None).collect());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(mention) = mentions.get(i) else { break };
                    let result = self.code_mention(mention.as_ref());
                    slots.lock().unwrap()[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot is filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, OracleBackend, ScriptedBackend};

    const CHAIN: &str = "A\tAlimentary tract and metabolism\nA10\tDiabetes medication\nA10B\tBlood glucose lowering drug\nA10BA\tBiguanides\nA10BA02\tmetformin\n";

    const SMALL: &str = "\
A\tAlimentary tract and metabolism
A06\tDrugs for constipation
A06A\tDrugs for constipation
A06AB\tContact laxatives
A06AB06\tsenna glycosides
A06AD\tOsmotically acting laxatives
A06AD15\tmacrogol
A10\tDrugs used in diabetes
A10B\tBlood glucose lowering drugs, excl. insulins
A10BA\tBiguanides
A10BA02\tmetformin
A10BB\tSulfonylureas
A10BB09\tgliclazide
N\tNervous system
N02\tAnalgesics
N02B\tOther analgesics and antipyretics
N02BE\tAnilides
N02BE01\tparacetamol
";

    fn code(s: &str) -> AtcCode {
        AtcCode::parse(s).unwrap()
    }

    fn load(s: &str) -> Ontology {
        Ontology::from_reader(s.as_bytes()).unwrap()
    }

    /// Panics if ever called.
    struct Unreachable;

    impl ChatBackend for Unreachable {
        fn complete(&self, _: &[ChatMessage], _: &GenerationParams) -> Result<String, BackendError> {
            panic!("backend should not be called")
        }
    }

    #[test]
    fn chain_auto_descends_without_calls() {
        let o = load(CHAIN);
        let defs = DefinitionStore::new();
        let coder = Coder::new(&o, &defs, &Unreachable, CodingConfig::default());
        let trace = coder.code_mention("anything").unwrap();
        assert_eq!(trace.final_code, Some(code("A10BA02")));
        assert_eq!(trace.steps.len(), 5);
        assert_eq!(trace.backend_calls(), 0);
        assert!(trace.steps.iter().all(|s| s.auto_selected));
        trace.check_consistency(&o).unwrap();
    }

    #[test]
    fn disabling_auto_select_prompts_every_level() {
        let o = load(CHAIN);
        let defs = DefinitionStore::new();
        let oracle = OracleBackend::new([("metformin", code("A10BA02"))]);
        let config = CodingConfig {
            auto_select: false,
            ..CodingConfig::default()
        };
        let trace = Coder::new(&o, &defs, &oracle, config).code_mention("metformin").unwrap();
        assert_eq!(trace.final_code, Some(code("A10BA02")));
        assert_eq!(trace.backend_calls(), 5);
    }

    #[test]
    fn oracle_reaches_gold() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let oracle = OracleBackend::new([("metformin", code("A10BA02")), ("tylenol", code("N02BE01"))]);
        let coder = Coder::new(&o, &defs, &oracle, CodingConfig::default());
        let t = coder.code_mention("metformin").unwrap();
        assert_eq!(t.final_code, Some(code("A10BA02")));
        let selected: Vec<_> = t.steps.iter().filter_map(|s| s.selected.as_ref().map(|c| c.to_string())).collect();
        assert_eq!(selected, ["A", "A10", "A10B", "A10BA", "A10BA02"]);
        t.check_consistency(&o).unwrap();
        assert_eq!(coder.code_mention("tylenol").unwrap().final_code, Some(code("N02BE01")));
    }

    #[test]
    fn garbage_abstains_after_retries() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let backend = ScriptedBackend::new(["garbage"]);
        let config = CodingConfig {
            retries_per_level: 2,
            ..CodingConfig::default()
        };
        let t = Coder::new(&o, &defs, &backend, config).code_mention("senna").unwrap();
        assert!(t.abstained());
        // retries + 1 calls, every one at level 1
        assert_eq!(backend.calls(), 3);
        assert_eq!(t.steps.len(), 3);
        assert!(t.steps.iter().all(|s| s.level == 1 && s.selected.is_none()));
        t.check_consistency(&o).unwrap();
    }

    #[test]
    fn stops_at_deepest_matched_level() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        // level 1 "A", level 2 "A06", then nonsense forever
        let backend = ScriptedBackend::new(["A", "A06: Drugs for constipation", "???", "???", "???"]);
        let t = Coder::new(&o, &defs, &backend, CodingConfig::default()).code_mention("senna").unwrap();
        // A06 -> A06A is single-child and auto-selected, then A06A offers two options
        assert_eq!(t.final_code, Some(code("A06A")));
        assert_eq!(backend.calls(), 5);
        t.check_consistency(&o).unwrap();
    }

    #[test]
    fn ambiguous_reply_is_retried() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let backend = ScriptedBackend::new(["A or N", "N"]);
        let t = Coder::new(&o, &defs, &backend, CodingConfig::default()).code_mention("x").unwrap();
        assert!(t.steps[0].ambiguous);
        assert_eq!(t.steps[1].selected, Some(code("N")));
        assert_eq!(t.final_code, Some(code("N02BE01")));
    }

    #[test]
    fn backend_errors_propagate() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let oracle = OracleBackend::new([("metformin", code("A10BA02"))]);
        let err = Coder::new(&o, &defs, &oracle, CodingConfig::default()).code_mention("unknown drug").unwrap_err();
        assert!(matches!(err, EngineError::Backend(BackendError::OracleMiss(_))));
    }

    #[test]
    fn empty_mention_rejected() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let coder = Coder::new(&o, &defs, &Unreachable, CodingConfig::default());
        assert!(matches!(coder.code_mention("  \n "), Err(EngineError::EmptyMention)));
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let oracle = OracleBackend::new([
            ("metformin", code("A10BA02")),
            ("tylenol", code("N02BE01")),
            ("senna", code("A06AB06")),
        ]);
        let coder = Coder::new(&o, &defs, &oracle, CodingConfig::default());
        let out = coder.code_batch(&["metformin", "tylenol", "senna"], 2);
        let finals: Vec<_> = out.iter().map(|r| r.as_ref().unwrap().final_code.clone().unwrap().to_string()).collect();
        assert_eq!(finals, ["A10BA02", "N02BE01", "A06AB06"]);

        let out = coder.code_batch(&["metformin", "nobody", "senna"], 3);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());

        assert!(coder.code_batch::<&str>(&[], 4).is_empty());
    }

    #[test]
    fn batch_respects_concurrency_bound() {
        struct Counting {
            inner: OracleBackend,
            state: Mutex<(usize, usize)>,
        }
        impl ChatBackend for Counting {
            fn complete(&self, m: &[ChatMessage], p: &GenerationParams) -> Result<String, BackendError> {
                {
                    let mut s = self.state.lock().unwrap();
                    s.0 += 1;
                    s.1 = s.1.max(s.0);
                }
                std::thread::sleep(std::time::Duration::from_millis(2));
                let r = self.inner.complete(m, p);
                self.state.lock().unwrap().0 -= 1;
                r
            }
        }
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let mentions: Vec<String> = (0..12).map(|i| format!("m{i}")).collect();
        let backend = Counting {
            inner: OracleBackend::new(mentions.iter().map(|m| (m.as_str(), code("N02BE01")))),
            state: Mutex::new((0, 0)),
        };
        let coder = Coder::new(&o, &defs, &backend, CodingConfig::default());
        let out = coder.code_batch(&mentions, 3);
        assert!(out.iter().all(|r| r.is_ok()));
        let peak = backend.state.lock().unwrap().1;
        assert!((1..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn trace_record_shape() {
        let o = load(SMALL);
        let defs = DefinitionStore::new();
        let backend = ScriptedBackend::new(["N"]);
        let t = Coder::new(&o, &defs, &backend, CodingConfig::default()).code_mention("tylenol").unwrap();
        let json = serde_json::to_value(t.to_record()).unwrap();
        assert_eq!(json["mention"], "tylenol");
        assert_eq!(json["grounding"], "with-name");
        assert_eq!(json["final"], "N02BE01");
        assert_eq!(json["abstained"], false);
        assert!(json.get("error").is_none());
        assert_eq!(json["steps"][0]["options"], serde_json::json!(["A", "N"]));
        assert_eq!(json["steps"][0]["raw_reply"], "N");
        assert_eq!(json["steps"][1]["auto_selected"], true);
        assert!(json["steps"][1]["raw_reply"].is_null());
        let back: TraceRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, t.to_record());
    }

    #[test]
    fn consistency_check_catches_fabrication() {
        let o = load(SMALL);
        let mut t = CodingTrace {
            mention: "x".into(),
            grounding: GroundingSetting::WithName,
            steps: vec![LevelStep {
                level: 1,
                options: vec![PromptOption { code: code("B"), rendered: "B".into() }],
                raw_reply: Some("B".into()),
                selected: Some(code("B")),
                auto_selected: false,
                ambiguous: false,
            }],
            final_code: Some(code("B")),
        };
        assert!(t.check_consistency(&o).is_err());
        t.steps[0].selected = None;
        t.final_code = None;
        assert!(t.check_consistency(&o).is_ok());
    }
}
