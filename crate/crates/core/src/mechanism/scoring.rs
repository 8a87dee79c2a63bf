use super::adjacency::AdjacencySample;
use super::ScoringMode;
use crate::dp::minmax_normalize;
use crate::embeddings::{distance_unchecked, EmbeddingTable};

/// Scores every candidate of `sample` in `[0, 1]`. A lone candidate scores 1.
pub fn score_candidates(
    sample: &AdjacencySample,
    table: &EmbeddingTable,
    mode: ScoringMode,
) -> Vec<f64> {
    assert!(!sample.is_empty(), "adjacency has no candidates");
    if sample.len() == 1 {
        return vec![1.0];
    }
    match mode {
        ScoringMode::OriginDistance => minmax_normalize(&sample.origin_distances)
            .expect("distances are finite")
            .into_iter()
            .map(|d| (1.0 - d).clamp(0.0, 1.0))
            .collect(),
        ScoringMode::NoisyRatio => noisy_ratio(sample, table),
    }
}

fn noisy_ratio(sample: &AdjacencySample, table: &EmbeddingTable) -> Vec<f64> {
    let origin_row = table.row(sample.origin);
    let unperturbed = origin_row
        .iter()
        .zip(&sample.perturbed_embedding)
        .all(|(&a, &b)| a as f64 == b);
    if unperturbed {
        return vec![1.0; sample.len()];
    }
    let to_noisy: Vec<f64> = sample
        .candidates
        .iter()
        .map(|&c| distance_unchecked(table.row(c), &sample.perturbed_embedding))
        .collect();
    let normalized = minmax_normalize(&to_noisy).expect("distances are finite");
    let denom = normalized[sample.origin_index()];
    if denom == 0.0 {
        return vec![1.0; sample.len()];
    }
    normalized
        .into_iter()
        .map(|d| (d / denom).clamp(0.0, 1.0))
        .collect()
}
