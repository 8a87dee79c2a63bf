//! Token perturbation mechanisms.
//!
//! Three ways of choosing the candidate set a token may be replaced by:
//!
//! * [`MechanismKind::Rantext`]: random adjacency. Laplace noise `Y` is drawn
//!   in embedding space and every token whose embedding lies within `‖Y‖₂` of
//!   the original is a candidate. The candidate set changes on every call.
//! * [`MechanismKind::Topk`]: the fixed `K` nearest tokens (the original
//!   included).
//! * [`MechanismKind::Global`]: the whole vocabulary.
//!
//! Candidates are scored in `[0, 1]` and one is drawn with the exponential
//! mechanism at `Δu = 1`.

mod adjacency;
mod perturb;
mod scoring;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::DpError;
use crate::embeddings::EmbeddingTable;
use crate::vocab::TokenId;

pub use adjacency::{
    adjacency_within_radius, compute_random_adjacency, global_adjacency,
    random_adjacency_from_noise, topk_adjacency, AdjacencySample,
};
pub use perturb::{
    perturb_document, perturb_token, read_perturbed_jsonl, write_perturbed_jsonl,
    PerturbedDocument, PerturbedRecord, Perturber,
};
pub use scoring::score_candidates;

/// Default candidate count for [`MechanismKind::Topk`].
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("invalid mechanism configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {0} has no embedding")]
    UnknownToken(TokenId),
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Rantext,
    Topk,
    Global,
}

impl std::str::FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rantext" => Ok(Self::Rantext),
            "topk" => Ok(Self::Topk),
            "global" => Ok(Self::Global),
            other => Err(format!("unknown mechanism `{other}` (rantext, topk, global)")),
        }
    }
}

/// How random-adjacency candidates are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// `u = 1 − minmax(d(φ(t'), φ(t)))`: never increases with distance from
    /// the original token.
    #[default]
    OriginDistance,
    /// `u = d̄(φ(t'), φ̂(t)) / d̄(φ(t), φ̂(t))` where `d̄` is min-max normalized
    /// distance to the noisy embedding `φ̂(t)`; all ones when the noise is
    /// zero or the denominator vanishes. Not monotone in distance from the
    /// original.
    NoisyRatio,
}

impl std::str::FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "origin-distance" => Ok(Self::OriginDistance),
            "noisy-ratio" => Ok(Self::NoisyRatio),
            other => Err(format!(
                "unknown scoring mode `{other}` (origin-distance, noisy-ratio)"
            )),
        }
    }
}

/// Sensitivity `Δf` used to scale Laplace noise in embedding space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SensitivityRepr", into = "SensitivityRepr")]
pub enum Sensitivity {
    /// Largest per-coordinate range of the embedding table.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SensitivityRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<SensitivityRepr> for Sensitivity {
    type Error = String;

    fn try_from(r: SensitivityRepr) -> Result<Self, String> {
        match r {
            SensitivityRepr::Name(s) => s.parse(),
            SensitivityRepr::Value(v) => Ok(Sensitivity::Fixed(v)),
        }
    }
}

impl From<Sensitivity> for SensitivityRepr {
    fn from(s: Sensitivity) -> Self {
        match s {
            Sensitivity::Auto => SensitivityRepr::Name("auto".into()),
            Sensitivity::Fixed(v) => SensitivityRepr::Value(v),
        }
    }
}

impl std::str::FromStr for Sensitivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<f64>()
            .map(Self::Fixed)
            .map_err(|_| format!("sensitivity must be `auto` or a number, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    /// Exponential-mechanism ε.
    pub epsilon_em: f64,
    /// Laplace ε for the adjacency radius; falls back to `epsilon_em`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_lap: Option<f64>,
    #[serde(default)]
    pub laplace_sensitivity: Sensitivity,
    #[serde(default)]
    pub scoring_mode: ScoringMode,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl MechanismConfig {
    pub fn rantext(epsilon: f64) -> Self {
        Self {
            kind: MechanismKind::Rantext,
            epsilon_em: epsilon,
            epsilon_lap: None,
            laplace_sensitivity: Sensitivity::Auto,
            scoring_mode: ScoringMode::OriginDistance,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn topk(epsilon: f64, k: usize) -> Self {
        Self {
            kind: MechanismKind::Topk,
            top_k: k,
            ..Self::rantext(epsilon)
        }
    }

    pub fn global(epsilon: f64) -> Self {
        Self {
            kind: MechanismKind::Global,
            ..Self::rantext(epsilon)
        }
    }

    pub fn with_scoring(mut self, mode: ScoringMode) -> Self {
        self.scoring_mode = mode;
        self
    }

    pub fn with_epsilon_lap(mut self, eps: f64) -> Self {
        self.epsilon_lap = Some(eps);
        self
    }

    pub fn with_sensitivity(mut self, s: Sensitivity) -> Self {
        self.laplace_sensitivity = s;
        self
    }

    pub fn effective_epsilon_lap(&self) -> f64 {
        self.epsilon_lap.unwrap_or(self.epsilon_em)
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |m: String| Err(MechanismError::InvalidConfig(m));
        if !(self.epsilon_em >= 0.0 && self.epsilon_em.is_finite()) {
            return bad(format!("epsilon_em must be finite and >= 0, got {}", self.epsilon_em));
        }
        match self.kind {
            MechanismKind::Rantext => {
                let eps = self.effective_epsilon_lap();
                if !(eps > 0.0 && eps.is_finite()) {
                    return bad(format!("epsilon_lap must be finite and > 0, got {eps}"));
                }
                if let Sensitivity::Fixed(s) = self.laplace_sensitivity {
                    if !(s > 0.0 && s.is_finite()) {
                        return bad(format!("laplace sensitivity must be > 0, got {s}"));
                    }
                }
            }
            MechanismKind::Topk if self.top_k == 0 => {
                return bad("top_k must be at least 1".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-coordinate Laplace scale `Δf / ε_lap` for `table`.
    pub fn laplace_scale(&self, table: &EmbeddingTable) -> f64 {
        let sensitivity = match self.laplace_sensitivity {
            Sensitivity::Auto => table.max_range(),
            Sensitivity::Fixed(s) => s,
        };
        sensitivity / self.effective_epsilon_lap()
    }
}
