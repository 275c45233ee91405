use std::sync::Mutex;

use super::{validate_messages, BackendError, ChatBackend, ChatMessage, GenerationParams};

/// Returns scripted replies in order, cycling once the list is exhausted.
///
/// Useful for exercising the reply-normalization and retry paths with
/// malformed or hostile model output.
#[derive(Debug)]
pub struct ScriptedBackend {
    replies: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        assert!(!replies.is_empty(), "ScriptedBackend needs at least one reply");
        Self {
            replies,
            cursor: Mutex::new(0),
        }
    }

    /// Number of replies handed out so far.
    pub fn calls(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, BackendError> {
        validate_messages(messages)?;
        let mut cursor = self.cursor.lock().unwrap();
        let reply = self.replies[*cursor % self.replies.len()].clone();
        *cursor += 1;
        Ok(reply)
    }
}
