use std::collections::HashMap;

use super::{validate_messages, BackendError, ChatBackend, ChatMessage, GenerationParams, Role};
use crate::engine::prompt::{clean_mention, parse_user_prompt};
use crate::ontology::AtcCode;

/// Answers every level prompt with the option on the path to the gold code.
///
/// The mention is read back out of the user turn, so the oracle works with
/// any prompt produced by [`crate::engine::render_prompt`]. Below a gold code
/// that stops short of level 5 it answers [`OracleBackend::STOP_REPLY`], which
/// matches no option, so the traversal ends on the gold code.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    gold: HashMap<String, AtcCode>,
}

impl OracleBackend {
    pub const STOP_REPLY: &'static str = "NONE";

    pub fn new<I, S>(gold: I) -> Self
    where
        I: IntoIterator<Item = (S, AtcCode)>,
        S: AsRef<str>,
    {
        Self {
            gold: gold
                .into_iter()
                .map(|(m, c)| (clean_mention(m.as_ref()), c))
                .collect(),
        }
    }

    pub fn gold_for(&self, mention: &str) -> Option<&AtcCode> {
        self.gold.get(&clean_mention(mention))
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, BackendError> {
        validate_messages(messages)?;
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| BackendError::InvalidRequest("no user turn".into()))?;
        let prompt = parse_user_prompt(&user.content)
            .ok_or_else(|| BackendError::OracleMiss("user turn is not a level prompt".into()))?;
        let gold = self
            .gold_for(prompt.mention)
            .ok_or_else(|| BackendError::OracleMiss(format!("no gold code for mention {:?}", prompt.mention)))?;

        if prompt.level > gold.level() {
            return Ok(Self::STOP_REPLY.to_owned());
        }
        let mut hits = prompt
            .option_codes()
            .filter(|(code, _)| AtcCode::parse(code).is_ok_and(|c| c.is_prefix_of(gold)))
            .map(|(_, line)| line);
        match (hits.next(), hits.next()) {
            (Some(line), None) => Ok(line.to_owned()),
            (None, _) => Err(BackendError::OracleMiss(format!(
                "no level-{} option lies on the path to {gold}",
                prompt.level
            ))),
            (Some(_), Some(_)) => Err(BackendError::OracleMiss(format!(
                "several level-{} options lie on the path to {gold}",
                prompt.level
            ))),
        }
    }
}
