//! Token-level differential privacy for prompts sent to black-box language
//! models.
//!
//! A document is tokenized with the model's own vocabulary and every token
//! is replaced by one drawn with the exponential mechanism from a candidate
//! set. With random adjacency ([`MechanismKind::Rantext`]) the candidate set
//! is every token whose embedding lies within a Laplace-noised radius of the
//! original, so it changes on every draw. Fixed top-K and whole-vocabulary
//! candidate sets are included as baselines.
//!
//! Around the mechanism sit the pieces needed to use and evaluate it:
//!
//! * [`pipeline`]: perturb a document `N` times, query a remote model with
//!   each copy, and have a local model assemble the final continuation.
//! * [`attacks`]: embedding inversion, model-assisted token recovery and a
//!   masked-LM harness, all scored as attack success rate.
//! * [`metrics`]: n-gram diversity, coherence and edit distance.
//! * [`verify`]: exact and Monte Carlo checks of the privacy properties on
//!   tiny vocabularies.
//!
//! ```
//! use dptext_core::{fixtures, MechanismConfig, Perturber, RngHandle, TokenIdSeq};
//!
//! let table = fixtures::anisotropic_table(50, 4, 1);
//! let perturber = Perturber::new(&table, MechanismConfig::rantext(2.0)).unwrap();
//! let doc = TokenIdSeq(vec![3, 1, 4, 1, 5]);
//! let out = perturber.perturb_document(&doc, 2, &RngHandle::from_seed(7)).unwrap();
//! assert_eq!(out.len(), 2);
//! assert_eq!(out[0].perturbed_ids.len(), 5);
//! ```

pub mod attacks;
pub mod dp;
pub mod embeddings;
pub mod fixtures;
pub mod mechanism;
pub mod metrics;
pub mod pipeline;
pub mod verify;
pub mod vocab;

pub use attacks::{AttackError, AttackReport, TokenOutcome};
pub use dp::{DpError, ProbabilityVector, RngHandle};
pub use embeddings::{load_embeddings, EmbeddingError, EmbeddingTable, NeighborCache};
pub use mechanism::{
    AdjacencySample, MechanismConfig, MechanismError, MechanismKind, PerturbedDocument,
    PerturbedRecord, Perturber, ScoringMode, Sensitivity,
};
pub use metrics::{DiversityFormula, MetricReport};
pub use pipeline::{LlmClient, LlmEndpointConfig, LlmError, PipelineConfig, RunRecord, RunStatus};
pub use verify::VerificationResult;
pub use vocab::{load_merges, load_vocabulary, TokenId, TokenIdSeq, VocabError, Vocabulary};
