use thiserror::Error;

use super::{check_lengths, AttackError, AttackReport, TokenOutcome};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct MaskedLmError(pub String);

/// A masked language model. Given a sequence and one position to hide, it
/// returns candidate tokens for that position, most likely first.
pub trait MaskedLmClient: Send + Sync {
    fn predict(&self, tokens: &[TokenId], mask_position: usize) -> Result<Vec<TokenId>, MaskedLmError>;
}

impl<F> MaskedLmClient for F
where
    F: Fn(&[TokenId], usize) -> Result<Vec<TokenId>, MaskedLmError> + Send + Sync,
{
    fn predict(&self, tokens: &[TokenId], mask_position: usize) -> Result<Vec<TokenId>, MaskedLmError> {
        self(tokens, mask_position)
    }
}

/// Masks each perturbed position in turn and asks `client` to fill it in.
/// A position is recovered when the original is among the top `k` answers.
pub fn mask_attack(
    perturbed: &[TokenId],
    originals: &[TokenId],
    client: &dyn MaskedLmClient,
    k: usize,
) -> Result<AttackReport, AttackError> {
    check_lengths(perturbed.len(), originals.len())?;
    if k == 0 {
        return Err(AttackError::InvalidK { k, vocab: 0 });
    }
    let mut per_token = Vec::with_capacity(perturbed.len());
    for (position, &original_id) in originals.iter().enumerate() {
        let mut candidate_ids = client.predict(perturbed, position)?;
        if candidate_ids.is_empty() {
            return Err(MaskedLmError(format!("no candidates for position {position}")).into());
        }
        candidate_ids.truncate(k);
        per_token.push(TokenOutcome {
            position,
            original_id,
            recovered: candidate_ids.contains(&original_id),
            candidate_ids,
            predictions: Vec::new(),
        });
    }
    Ok(AttackReport::from_outcomes(per_token))
}
