//! Attacks that try to recover original tokens from perturbed ones.
//!
//! Every attack yields an [`AttackReport`]: which positions were recovered,
//! the attack success rate (ASR) over all positions counted with
//! multiplicity, and the privacy score `1 − ASR`.

mod gpt;
mod inversion;
mod mask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::LlmError;
use crate::vocab::{TokenId, VocabError};

pub use gpt::{
    gpt_inference_attack, parse_gpt_attack_response, tokens_from_attack_prompt, ResponseParseError,
    DEFAULT_CHUNK_SIZE,
};
pub use inversion::embedding_inversion;
pub use mask::{mask_attack, MaskedLmClient, MaskedLmError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("perturbed sequence has {perturbed} tokens but originals have {originals}")]
    LengthMismatch { perturbed: usize, originals: usize },
    #[error("k = {k} is outside 1..={vocab}")]
    InvalidK { k: usize, vocab: usize },
    #[error("token id {0} has no embedding")]
    UnknownToken(TokenId),
    #[error("chunk size must be at least 1")]
    InvalidChunkSize,
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("masked language model failed: {0}")]
    MaskedLm(#[from] MaskedLmError),
    #[error("attack model failed: {0}")]
    Llm(#[from] LlmError),
    #[error("could not parse attack response: {0}")]
    Parse(#[from] ResponseParseError),
}

pub(crate) fn check_lengths(perturbed: usize, originals: usize) -> Result<(), AttackError> {
    if perturbed == originals {
        Ok(())
    } else {
        Err(AttackError::LengthMismatch { perturbed, originals })
    }
}

/// Outcome of an attack at one token position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOutcome {
    pub position: usize,
    pub original_id: TokenId,
    pub recovered: bool,
    /// Token ids the attack proposed, best first. Empty when the attack
    /// answers in text that is not a vocabulary entry.
    pub candidate_ids: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub per_token: Vec<TokenOutcome>,
    pub asr: f64,
    pub privacy: f64,
    /// Set when the attack could not be completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl AttackReport {
    /// Builds a report from per-position outcomes. An empty sequence has
    /// ASR 0.
    pub fn from_outcomes(per_token: Vec<TokenOutcome>) -> Self {
        let recovered = per_token.iter().filter(|o| o.recovered).count();
        let (asr, privacy) = rates(recovered, per_token.len());
        Self {
            per_token,
            asr,
            privacy,
            failure: None,
        }
    }

    /// A report for an attack that did not run to completion.
    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            per_token: Vec::new(),
            asr: 0.0,
            privacy: 1.0,
            failure: Some(reason.into()),
        }
    }

    pub fn recovered(&self) -> usize {
        self.per_token.iter().filter(|o| o.recovered).count()
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Pools several reports as if they were one long sequence. Positions
    /// are renumbered consecutively.
    pub fn merge(reports: impl IntoIterator<Item = AttackReport>) -> Self {
        let mut per_token = Vec::new();
        let mut failure = None;
        for r in reports {
            failure = failure.or(r.failure);
            for mut o in r.per_token {
                o.position = per_token.len();
                per_token.push(o);
            }
        }
        Self {
            failure,
            ..Self::from_outcomes(per_token)
        }
    }
}

fn rates(recovered: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let asr = recovered as f64 / total as f64;
    (asr, 1.0 - asr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(position: usize, recovered: bool) -> TokenOutcome {
        TokenOutcome {
            position,
            original_id: 0,
            recovered,
            candidate_ids: vec![],
            predictions: vec![],
        }
    }

    #[test]
    fn arithmetic() {
        let r = AttackReport::from_outcomes((0..4).map(|i| outcome(i, i < 2)).collect());
        assert_eq!((r.asr, r.privacy), (0.5, 0.5));
        let r = AttackReport::from_outcomes((0..3).map(|i| outcome(i, i == 0)).collect());
        assert_eq!(r.privacy, 1.0 - r.asr);
        let empty = AttackReport::from_outcomes(vec![]);
        assert_eq!((empty.asr, empty.privacy), (0.0, 1.0));
    }

    #[test]
    fn privacy_is_complement_for_all_small_counts() {
        for total in 1..=200 {
            for recovered in 0..=total {
                let (asr, privacy) = rates(recovered, total);
                assert_eq!(privacy, 1.0 - asr, "{recovered}/{total}");
                assert!((asr + privacy - 1.0).abs() <= f64::EPSILON);
            }
        }
    }

    #[test]
    fn merge_renumbers_and_pools() {
        let a = AttackReport::from_outcomes(vec![outcome(0, true)]);
        let b = AttackReport::from_outcomes(vec![outcome(0, false), outcome(1, false)]);
        let m = AttackReport::merge([a, b]);
        assert_eq!(m.per_token.iter().map(|o| o.position).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((m.asr - 1.0 / 3.0).abs() < 1e-15);
        assert!(!m.is_failed());
    }

    #[test]
    fn json_shape() {
        let r = AttackReport::from_outcomes(vec![outcome(0, true)]);
        let v = serde_json::to_value(&r).unwrap();
        for key in ["per_token", "asr", "privacy"] {
            assert!(v.get(key).is_some());
        }
        assert!(v.get("failure").is_none());
        assert_eq!(serde_json::from_value::<AttackReport>(v).unwrap(), r);
    }
}
