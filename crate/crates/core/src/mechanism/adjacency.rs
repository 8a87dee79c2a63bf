use serde::{Deserialize, Serialize};

use super::{MechanismConfig, MechanismError, MechanismKind};
use crate::dp::{sample_laplace_vector, ProbabilityVector, RngHandle};
use crate::embeddings::{by_distance_then_id, EmbeddingTable, NeighborCache};
use crate::vocab::TokenId;

/// One candidate set for one token, plus its scores and selection
/// probabilities once those are computed.
///
/// Candidates are listed in ascending token id, whichever way they were
/// found, so sampling does not depend on the search path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySample {
    pub origin: TokenId,
    pub radius: f64,
    /// `φ(t) + Y` for random adjacency, `φ(t)` otherwise.
    pub perturbed_embedding: Vec<f64>,
    pub candidates: Vec<TokenId>,
    /// `d(φ(c), φ(origin))` for each candidate.
    pub origin_distances: Vec<f64>,
    pub scores: Vec<f64>,
    pub probs: Option<ProbabilityVector>,
}

impl AdjacencySample {
    fn from_pairs(
        origin: TokenId,
        radius: f64,
        perturbed_embedding: Vec<f64>,
        mut pairs: Vec<(f64, TokenId)>,
    ) -> Self {
        pairs.sort_by_key(|&(_, id)| id);
        let (origin_distances, candidates) = pairs.into_iter().unzip();
        Self {
            origin,
            radius,
            perturbed_embedding,
            candidates,
            origin_distances,
            scores: Vec::new(),
            probs: None,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn origin_index(&self) -> usize {
        self.candidates
            .binary_search(&self.origin)
            .expect("origin is always a candidate")
    }
}

fn check_token(table: &EmbeddingTable, t: TokenId) -> Result<(), MechanismError> {
    if (t as usize) < table.len() {
        Ok(())
    } else {
        Err(MechanismError::UnknownToken(t))
    }
}

fn origin_f64(table: &EmbeddingTable, t: TokenId) -> Vec<f64> {
    table.row(t).iter().map(|&v| v as f64).collect()
}

fn within(
    table: &EmbeddingTable,
    origin: TokenId,
    radius: f64,
    cache: Option<&NeighborCache>,
) -> Vec<(f64, TokenId)> {
    match cache {
        Some(cache) => {
            let sorted = cache.sorted(table, origin);
            let end = sorted.partition_point(|&(d, _)| d <= radius);
            sorted[..end].to_vec()
        }
        None => table
            .distances_from(origin)
            .into_iter()
            .filter(|&(d, _)| d <= radius)
            .collect(),
    }
}

/// Every token whose embedding is within `radius` of `origin`'s.
pub fn adjacency_within_radius(
    origin: TokenId,
    table: &EmbeddingTable,
    radius: f64,
    cache: Option<&NeighborCache>,
) -> Result<AdjacencySample, MechanismError> {
    check_token(table, origin)?;
    let pairs = within(table, origin, radius, cache);
    Ok(AdjacencySample::from_pairs(origin, radius, origin_f64(table, origin), pairs))
}

/// Random adjacency for a given noise vector `Y`: radius `‖Y‖₂`, perturbed
/// embedding `φ(t) + Y`.
pub fn random_adjacency_from_noise(
    origin: TokenId,
    table: &EmbeddingTable,
    noise: &[f64],
    cache: Option<&NeighborCache>,
) -> Result<AdjacencySample, MechanismError> {
    check_token(table, origin)?;
    if noise.len() != table.dim() {
        return Err(MechanismError::InvalidConfig(format!(
            "noise has {} components, embeddings have {}",
            noise.len(),
            table.dim()
        )));
    }
    let radius = noise.iter().map(|y| y * y).sum::<f64>().sqrt();
    let perturbed = table
        .row(origin)
        .iter()
        .zip(noise)
        .map(|(&x, y)| x as f64 + y)
        .collect();
    let pairs = within(table, origin, radius, cache);
    Ok(AdjacencySample::from_pairs(origin, radius, perturbed, pairs))
}

/// Draws Laplace noise at scale `Δf / ε_lap` and returns the resulting
/// random adjacency. Scores are left empty.
pub fn compute_random_adjacency(
    origin: TokenId,
    table: &EmbeddingTable,
    cfg: &MechanismConfig,
    rng: &mut RngHandle,
    cache: Option<&NeighborCache>,
) -> Result<AdjacencySample, MechanismError> {
    if cfg.kind != MechanismKind::Rantext {
        return Err(MechanismError::InvalidConfig(
            "random adjacency requires the rantext mechanism".into(),
        ));
    }
    cfg.validate()?;
    let scale = cfg.laplace_scale(table);
    // A table with no spread has every token at distance zero; noise is moot.
    let noise = if scale > 0.0 {
        sample_laplace_vector(table.dim(), scale, rng)?
    } else {
        vec![0.0; table.dim()]
    };
    random_adjacency_from_noise(origin, table, &noise, cache)
}

/// The `k` nearest tokens to `origin`, origin included, ties by smaller id.
pub fn topk_adjacency(
    origin: TokenId,
    table: &EmbeddingTable,
    k: usize,
    cache: Option<&NeighborCache>,
) -> Result<AdjacencySample, MechanismError> {
    check_token(table, origin)?;
    if k == 0 {
        return Err(MechanismError::InvalidConfig("top_k must be at least 1".into()));
    }
    let mut pairs: Vec<(f64, TokenId)> = match cache {
        Some(cache) => cache.sorted(table, origin).iter().take(k).copied().collect(),
        None => {
            let mut all = table.distances_from(origin);
            let k = k.min(all.len());
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, by_distance_then_id);
                all.truncate(k);
            }
            all
        }
    };
    // A duplicate embedding with a smaller id could outrank the origin.
    if !pairs.iter().any(|&(_, id)| id == origin) {
        pairs.pop();
        pairs.push((0.0, origin));
    }
    let radius = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(AdjacencySample::from_pairs(origin, radius, origin_f64(table, origin), pairs))
}

pub fn global_adjacency(
    origin: TokenId,
    table: &EmbeddingTable,
) -> Result<AdjacencySample, MechanismError> {
    check_token(table, origin)?;
    let pairs = table.distances_from(origin);
    let radius = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(AdjacencySample::from_pairs(origin, radius, origin_f64(table, origin), pairs))
}
