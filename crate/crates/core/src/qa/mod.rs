//! End-to-end question answering over a fact index.

mod dataset;
mod model;
mod prompt;
mod run;

pub use dataset::{
    answer_line, parse_answer, read_jsonl, AnswerType, ParsedAnswer, QuestionRecord, Terminal,
    Transcript,
};
pub use model::{CallbackModel, LanguageModel, Script, ScriptRule, ScriptedModel};
pub use prompt::{
    default_few_shot, load_few_shot, FewShotExample, PromptConfig, ANSWER_PREFIX,
    DEFAULT_BEAMS, DEFAULT_MAX_NEW_TOKENS, DEFAULT_SYSTEM_PROMPT, REFUSAL, RELATION_ADDENDUM,
};
pub use run::{log_softmax, par_map, run_question, top_k};
