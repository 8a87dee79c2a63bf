//! The perturb, infer, restore pipeline.
//!
//! A document is perturbed `N` times, each perturbed copy is sent to a
//! remote model with a continuation prompt, and a local model writes the
//! final continuation from the original document plus the `N` remote
//! generations.

mod llm;
mod prompts;
mod run;

use thiserror::Error;

use crate::mechanism::MechanismError;
use crate::vocab::VocabError;

pub use llm::{
    parse_chat_response, run_inference, HttpClient, LlmClient, LlmEndpointConfig, LlmError,
    MockClient, RetryPolicy, DEFAULT_API_KEY_ENV,
};
pub use prompts::{
    build_gpt_attack_prompt, build_inference_prompt, build_restoration_prompt, render_token_list,
    EmptyInput, INFERENCE_INSTRUCTION, RESTORATION_INSTRUCTION,
};
pub use run::{
    run_pipeline, CallRecord, PerturbedText, PipelineConfig, RunConfigSnapshot, RunRecord,
    RunStatus, TRUNCATED_DOCUMENT_TOKENS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("could not save run record: {0}")]
    Io(#[from] std::io::Error),
}
