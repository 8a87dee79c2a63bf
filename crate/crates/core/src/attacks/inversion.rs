use rayon::prelude::*;

use super::{check_lengths, AttackError, AttackReport, TokenOutcome};
use crate::embeddings::EmbeddingTable;
use crate::vocab::TokenId;

/// Nearest-neighbour inversion: for each perturbed token, the adversary
/// guesses the `k` vocabulary tokens closest to its embedding (ties by
/// smaller id). A position is recovered when the original is among them.
pub fn embedding_inversion(
    perturbed: &[TokenId],
    originals: &[TokenId],
    table: &EmbeddingTable,
    k: usize,
) -> Result<AttackReport, AttackError> {
    check_lengths(perturbed.len(), originals.len())?;
    if k == 0 || k > table.len() {
        return Err(AttackError::InvalidK { k, vocab: table.len() });
    }
    if let Some(&bad) = perturbed
        .iter()
        .chain(originals)
        .find(|&&t| t as usize >= table.len())
    {
        return Err(AttackError::UnknownToken(bad));
    }
    let per_token = perturbed
        .par_iter()
        .zip(originals)
        .enumerate()
        .map(|(position, (&p, &original_id))| {
            let candidate_ids = table.nearest(p, k);
            TokenOutcome {
                position,
                original_id,
                recovered: candidate_ids.contains(&original_id),
                candidate_ids,
                predictions: Vec::new(),
            }
        })
        .collect();
    Ok(AttackReport::from_outcomes(per_token))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f32]) -> EmbeddingTable {
        EmbeddingTable::from_rows(points.iter().map(|&p| vec![p]).collect()).unwrap()
    }

    #[test]
    fn identity_at_k1_and_full_k() {
        let t = line(&[0.0, 1.0, 5.0, 2.5]);
        let ids = [0, 1, 2, 3, 3];
        assert_eq!(embedding_inversion(&ids, &ids, &t, 1).unwrap().asr, 1.0);
        let shifted = [3, 0, 1, 2, 2];
        let r = embedding_inversion(&shifted, &ids, &t, 4).unwrap();
        assert_eq!((r.asr, r.privacy), (1.0, 0.0));
    }

    #[test]
    fn far_perturbation_is_not_recovered() {
        // Positions 0, 1, 5: the two tokens nearest 5 are 5 and 1.
        let t = line(&[0.0, 1.0, 5.0]);
        let r = embedding_inversion(&[2], &[0], &t, 2).unwrap();
        assert_eq!(r.per_token[0].candidate_ids, vec![2, 1]);
        assert!(!r.per_token[0].recovered);
        assert_eq!(r.privacy, 1.0);
    }

    #[test]
    fn errors() {
        let t = line(&[0.0, 1.0]);
        assert!(matches!(
            embedding_inversion(&[0], &[0, 1], &t, 1),
            Err(AttackError::LengthMismatch { .. })
        ));
        assert!(matches!(embedding_inversion(&[0], &[0], &t, 3), Err(AttackError::InvalidK { .. })));
        assert!(matches!(embedding_inversion(&[0], &[0], &t, 0), Err(AttackError::InvalidK { .. })));
        assert!(matches!(embedding_inversion(&[5], &[0], &t, 1), Err(AttackError::UnknownToken(5))));
    }

    proptest! {
        #[test]
        fn asr_non_decreasing_in_k(
            points in proptest::collection::vec(-10.0f32..10.0, 2..12),
            pairs in proptest::collection::vec((0usize..100, 0usize..100), 1..20),
        ) {
            let t = line(&points);
            let n = points.len();
            let perturbed: Vec<TokenId> = pairs.iter().map(|p| (p.0 % n) as TokenId).collect();
            let originals: Vec<TokenId> = pairs.iter().map(|p| (p.1 % n) as TokenId).collect();
            let mut last: Option<AttackReport> = None;
            for k in 1..=n {
                let r = embedding_inversion(&perturbed, &originals, &t, k).unwrap();
                if let Some(prev) = &last {
                    prop_assert!(r.asr >= prev.asr);
                    for (a, b) in prev.per_token.iter().zip(&r.per_token) {
                        prop_assert_eq!(&a.candidate_ids[..], &b.candidate_ids[..k - 1]);
                    }
                }
                last = Some(r);
            }
            prop_assert_eq!(last.unwrap().asr, 1.0);
        }
    }
}
