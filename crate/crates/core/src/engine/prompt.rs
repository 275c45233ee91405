//! The per-level classification prompt.

use serde::Serialize;

use crate::backend::ChatMessage;
use crate::knowledge::{render_option, DefinitionStore, GroundingSetting};
use crate::ontology::{AtcCode, Node, Ontology};

use super::EngineError;

pub const SYSTEM_PROMPT: &str = "You are a pharmacology expert specializing in ATC classification.";

const CLASSIFY_PREFIX: &str = "Classify the drug `";
const CLASSIFY_MIDDLE: &str = "' into one of the following ATC level ";
const CLASSIFY_SUFFIX: &str = " categories:";
const INSTRUCTION_PREFIX: &str = "Provide ONLY one of the options listed above that best matches `";
const INSTRUCTION_SUFFIX: &str = "'. Do not include any description.";

/// One candidate shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptOption {
    pub code: AtcCode,
    pub rendered: String,
}

impl PromptOption {
    /// Text after `CODE:` in the rendered line, if any.
    pub fn label(&self) -> Option<&str> {
        let rest = self.rendered.strip_prefix(self.code.as_str())?;
        let label = rest.strip_prefix(':')?.trim();
        (!label.is_empty()).then_some(label)
    }
}

/// A fully rendered prompt for one level together with its option list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPrompt {
    pub level: u8,
    pub messages: Vec<ChatMessage>,
    pub options: Vec<PromptOption>,
}

/// Line breaks would corrupt the one-option-per-line layout.
pub fn clean_mention(mention: &str) -> String {
    mention.split(['\r', '\n']).map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

pub fn build_prompt(
    mention: &str,
    parent: Node<'_>,
    ontology: &Ontology,
    setting: GroundingSetting,
    defs: &DefinitionStore,
) -> Result<LevelPrompt, EngineError> {
    let children = ontology.children(parent)?;
    if children.is_empty() {
        return Err(EngineError::NoChildren(match parent {
            Node::Root => "<root>".into(),
            Node::Code(c) => c.to_string(),
        }));
    }
    let level = parent.level() + 1;
    let mention = clean_mention(mention);
    let options: Vec<PromptOption> = children
        .into_iter()
        .map(|e| PromptOption {
            code: e.code.clone(),
            rendered: render_option(e, setting, defs),
        })
        .collect();

    let mut user = format!("{CLASSIFY_PREFIX}{mention}{CLASSIFY_MIDDLE}{level}{CLASSIFY_SUFFIX}\n");
    for opt in &options {
        user.push_str(&opt.rendered);
        user.push('\n');
    }
    user.push_str(&format!("{INSTRUCTION_PREFIX}{mention}{INSTRUCTION_SUFFIX}"));

    Ok(LevelPrompt {
        level,
        messages: vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(user)],
        options,
    })
}

/// Renders the system and user turns asking the model to pick one child of
/// `parent` for `mention`.
pub fn render_prompt(
    mention: &str,
    parent: Node<'_>,
    ontology: &Ontology,
    setting: GroundingSetting,
    defs: &DefinitionStore,
) -> Result<Vec<ChatMessage>, EngineError> {
    build_prompt(mention, parent, ontology, setting, defs).map(|p| p.messages)
}

/// A user turn produced by [`render_prompt`], taken apart again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub mention: &'a str,
    pub level: u8,
    pub option_lines: Vec<&'a str>,
}

impl ParsedPrompt<'_> {
    /// Leading code token of each option line (text before the first `:`).
    pub fn option_codes(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.option_lines
            .iter()
            .map(|line| (line.split(':').next().unwrap_or("").trim(), *line))
    }
}

pub fn parse_user_prompt(content: &str) -> Option<ParsedPrompt<'_>> {
    let lines: Vec<&str> = content.lines().collect();
    let (first, rest) = lines.split_first()?;
    let (last, options) = rest.split_last()?;
    let head = first.strip_prefix(CLASSIFY_PREFIX)?.strip_suffix(CLASSIFY_SUFFIX)?;
    let split = head.rfind(CLASSIFY_MIDDLE)?;
    let mention = &head[..split];
    let level = head[split + CLASSIFY_MIDDLE.len()..].parse().ok()?;
    if !last.starts_with(INSTRUCTION_PREFIX) {
        return None;
    }
    Some(ParsedPrompt {
        mention,
        level,
        option_lines: options.to_vec(),
    })
}
