use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_TRIGGER;
use crate::error::{Error, Result};

pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../../data/system_prompt.txt");
const DEFAULT_FEW_SHOT: &str = include_str!("../../data/few_shot.json");
pub const RELATION_ADDENDUM: &str = include_str!("../../data/relation_addendum.txt");

pub const DEFAULT_MAX_NEW_TOKENS: usize = 1000;
pub const DEFAULT_BEAMS: usize = 3;

/// Prefix of the line carrying the final answer.
pub const ANSWER_PREFIX: &str = "Answer:";
pub const REFUSAL: &str = "I don't know.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub response: String,
}

pub fn default_few_shot() -> Vec<FewShotExample> {
    serde_json::from_str(DEFAULT_FEW_SHOT).expect("bundled few-shot examples parse")
}

pub fn load_few_shot(path: &Path) -> Result<Vec<FewShotExample>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system_prompt: String,
    pub few_shot: Vec<FewShotExample>,
    pub trigger: String,
    pub max_new_tokens: usize,
    pub beams: usize,
    /// Sampling is not supported; decoding is greedy or beam search.
    pub sampling: bool,
    /// Appends the instruction to treat every relation independently.
    pub relation_addendum: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            system_prompt: DEFAULT_SYSTEM_PROMPT.trim_end().to_string(),
            few_shot: default_few_shot(),
            trigger: DEFAULT_TRIGGER.to_string(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            beams: DEFAULT_BEAMS,
            sampling: false,
            relation_addendum: false,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        if self.beams == 0 {
            return Err(Error::InvalidConfig("beams must be at least 1".into()));
        }
        if self.sampling {
            return Err(Error::InvalidConfig("sampling is not supported".into()));
        }
        if self.trigger.is_empty() {
            return Err(Error::InvalidConfig("trigger must not be empty".into()));
        }
        Ok(())
    }

    /// The full prompt for `question`; generation continues right after it.
    pub fn render(&self, question: &str) -> String {
        let mut out = String::with_capacity(self.system_prompt.len() + 1024);
        out.push_str(&self.system_prompt);
        out.push_str("\n\n");
        if self.relation_addendum {
            out.push_str(RELATION_ADDENDUM.trim_end());
            out.push_str("\n\n");
        }
        for ex in &self.few_shot {
            out.push_str("Question: ");
            out.push_str(ex.question.trim());
            out.push('\n');
            out.push_str(ex.response.trim_end());
            out.push_str("\n\n");
        }
        out.push_str("Question: ");
        out.push_str(question.trim());
        out.push('\n');
        out
    }
}
