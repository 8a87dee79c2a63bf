//! Differential-privacy primitives: seeded randomness, Laplace noise,
//! exponential-mechanism probabilities, categorical sampling and min-max
//! normalization.
//!
//! # Randomness
//!
//! Every random draw in the crate goes through [`RngHandle`]. A handle is a
//! ChaCha20 stream whose 256-bit key is expanded from a 64-bit seed with
//! SplitMix64, so a seed reproduces the same draws on every platform and can
//! be re-implemented outside Rust. Uniform reals use the top 53 bits of a
//! `u64` draw: `u = (x >> 11) * 2^-53`, giving `u ∈ [0, 1)`.
//!
//! Independent streams are derived with [`RngHandle::child`], keyed by two
//! integers (document index and token index during perturbation). Children
//! depend only on the parent's seed, never on how many values the parent has
//! already produced.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a [`ProbabilityVector`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("laplace scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("sensitivity must be positive and finite, got {0}")]
    InvalidSensitivity(f64),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, replayable random stream.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngHandle {
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            seed,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream keyed by `(stream, index)`.
    pub fn child(&self, stream: u64, index: u64) -> Self {
        let mut state = self.seed;
        let a = splitmix64(&mut state);
        let mut state = a ^ stream;
        let b = splitmix64(&mut state);
        let mut state = b ^ index.rotate_left(32);
        Self::from_seed(splitmix64(&mut state))
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// One draw from Laplace(0, `scale`) by inverse CDF:
/// `y = -scale * sgn(u) * ln(1 - 2|u|)` with `u` uniform on `(-0.5, 0.5)`.
pub fn sample_laplace(scale: f64, rng: &mut RngHandle) -> Result<f64, DpError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DpError::InvalidScale(scale));
    }
    Ok(laplace_unchecked(scale, rng))
}

fn laplace_unchecked(scale: f64, rng: &mut RngHandle) -> f64 {
    loop {
        let u = rng.next_f64() - 0.5;
        // u == -0.5 would give ln(0); the open interval excludes it.
        if u > -0.5 {
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// `dim` i.i.d. Laplace(0, `scale`) draws.
pub fn sample_laplace_vector(
    dim: usize,
    scale: f64,
    rng: &mut RngHandle,
) -> Result<Vec<f64>, DpError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DpError::InvalidScale(scale));
    }
    Ok((0..dim).map(|_| laplace_unchecked(scale, rng)).collect())
}

/// A discrete distribution: entries in `[0, 1]` summing to 1 within
/// [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, DpError> {
        if probs.is_empty() {
            return Err(DpError::Empty("probability vector"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(DpError::InvalidProbabilities(format!(
                "entry {i} = {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(DpError::InvalidProbabilities(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_finite(values: &[f64]) -> Result<(), DpError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(DpError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Exponential-mechanism selection probabilities
/// `p_i ∝ exp(ε · s_i / (2 Δu))`, evaluated with a max-shift so large
/// `ε · s` never overflows.
pub fn exp_mechanism_probs(
    scores: &[f64],
    epsilon: f64,
    delta_u: f64,
) -> Result<ProbabilityVector, DpError> {
    if scores.is_empty() {
        return Err(DpError::Empty("scores"));
    }
    check_finite(scores)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(DpError::InvalidEpsilon(epsilon));
    }
    if !(delta_u > 0.0 && delta_u.is_finite()) {
        return Err(DpError::InvalidSensitivity(delta_u));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor = epsilon / (2.0 * delta_u);
    let weights: Vec<f64> = scores
        .iter()
        .map(|s| (factor * (s - max)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(ProbabilityVector(
        weights.into_iter().map(|w| w / total).collect(),
    ))
}

/// Inverse-CDF draw of an index from `probs`.
pub fn sample_categorical(probs: &ProbabilityVector, rng: &mut RngHandle) -> usize {
    let u = rng.next_f64();
    let mut cumulative = 0.0;
    for (i, p) in probs.0.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left the total just under u: take the last index with mass.
    probs
        .0
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.0.len() - 1)
}

/// Maps `x ↦ (x − min) / (max − min)`; all zeros when `max == min`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>, DpError> {
    if values.is_empty() {
        return Err(DpError::Empty("distances"));
    }
    check_finite(values)?;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = max - min;
    if span == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / span).collect())
}
