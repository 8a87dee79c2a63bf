use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adjacency::{compute_random_adjacency, global_adjacency, topk_adjacency, AdjacencySample};
use super::scoring::score_candidates;
use super::{MechanismConfig, MechanismError, MechanismKind, ScoringMode};
use crate::dp::{exp_mechanism_probs, sample_categorical, RngHandle};
use crate::embeddings::{EmbeddingTable, NeighborCache};
use crate::vocab::{TokenId, TokenIdSeq};

/// Score sensitivity: every score lies in `[0, 1]`.
const SCORE_SENSITIVITY: f64 = 1.0;

/// A validated mechanism bound to an embedding table.
#[derive(Debug)]
pub struct Perturber<'a> {
    table: &'a EmbeddingTable,
    cfg: MechanismConfig,
    cache: Option<NeighborCache>,
}

impl<'a> Perturber<'a> {
    pub fn new(table: &'a EmbeddingTable, cfg: MechanismConfig) -> Result<Self, MechanismError> {
        cfg.validate()?;
        Ok(Self {
            table,
            cfg,
            cache: None,
        })
    }

    /// Keeps a sorted neighbour list per origin token once it is first used.
    pub fn with_neighbor_cache(mut self) -> Self {
        self.cache = Some(NeighborCache::new(self.table.len()));
        self
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.cfg
    }

    pub fn table(&self) -> &EmbeddingTable {
        self.table
    }

    /// Candidate set for `t` according to the configured kind (unscored).
    pub fn adjacency(&self, t: TokenId, rng: &mut RngHandle) -> Result<AdjacencySample, MechanismError> {
        let cache = self.cache.as_ref();
        match self.cfg.kind {
            MechanismKind::Rantext => compute_random_adjacency(t, self.table, &self.cfg, rng, cache),
            MechanismKind::Topk => topk_adjacency(t, self.table, self.cfg.top_k, cache),
            MechanismKind::Global => global_adjacency(t, self.table),
        }
    }

    /// Fills in scores and exponential-mechanism probabilities.
    pub fn score(&self, sample: &mut AdjacencySample) -> Result<(), MechanismError> {
        let mode = match self.cfg.kind {
            MechanismKind::Rantext => self.cfg.scoring_mode,
            // Fixed-adjacency baselines always rank by distance from the original.
            MechanismKind::Topk | MechanismKind::Global => ScoringMode::OriginDistance,
        };
        sample.scores = score_candidates(sample, self.table, mode);
        sample.probs = Some(exp_mechanism_probs(
            &sample.scores,
            self.cfg.epsilon_em,
            SCORE_SENSITIVITY,
        )?);
        Ok(())
    }

    pub fn perturb_token(
        &self,
        t: TokenId,
        rng: &mut RngHandle,
    ) -> Result<(TokenId, AdjacencySample), MechanismError> {
        let mut sample = self.adjacency(t, rng)?;
        self.score(&mut sample)?;
        let probs = sample.probs.as_ref().expect("scored above");
        let pick = sample.candidates[sample_categorical(probs, rng)];
        Ok((pick, sample))
    }

    /// `n_docs` independent perturbations of `doc`. Token `i` of document `j`
    /// (1-based) draws from `rng.child(j, i)`, so the output does not depend
    /// on evaluation order.
    pub fn perturb_document(
        &self,
        doc: &TokenIdSeq,
        n_docs: usize,
        rng: &RngHandle,
    ) -> Result<Vec<PerturbedDocument>, MechanismError> {
        if n_docs == 0 {
            return Err(MechanismError::InvalidConfig("n_docs must be at least 1".into()));
        }
        if let Some(&bad) = doc.iter().find(|&&t| t as usize >= self.table.len()) {
            return Err(MechanismError::UnknownToken(bad));
        }
        (1..=n_docs)
            .into_par_iter()
            .map(|j| {
                let (perturbed, sizes) = doc
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let mut child = rng.child(j as u64, i as u64);
                        self.perturb_token(t, &mut child).map(|(p, s)| (p, s.len()))
                    })
                    .collect::<Result<(Vec<_>, Vec<_>), _>>()?;
                Ok(PerturbedDocument {
                    doc_index: j,
                    original_ids: doc.clone(),
                    perturbed_ids: TokenIdSeq(perturbed),
                    adjacency_sizes: sizes,
                })
            })
            .collect()
    }
}

/// Perturbs a single token with a throwaway [`Perturber`].
pub fn perturb_token(
    t: TokenId,
    table: &EmbeddingTable,
    cfg: &MechanismConfig,
    rng: &mut RngHandle,
) -> Result<(TokenId, AdjacencySample), MechanismError> {
    Perturber::new(table, cfg.clone())?.perturb_token(t, rng)
}

pub fn perturb_document(
    doc: &TokenIdSeq,
    table: &EmbeddingTable,
    cfg: &MechanismConfig,
    n_docs: usize,
    rng: &RngHandle,
) -> Result<Vec<PerturbedDocument>, MechanismError> {
    Perturber::new(table, cfg.clone())?.perturb_document(doc, n_docs, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDocument {
    /// 1-based position among the `N` perturbations.
    pub doc_index: usize,
    pub original_ids: TokenIdSeq,
    pub perturbed_ids: TokenIdSeq,
    pub adjacency_sizes: Vec<usize>,
}

/// One line of a perturbed-document JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub doc_index: usize,
    /// Absent when the batch was written redacted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_ids: Option<TokenIdSeq>,
    pub perturbed_ids: TokenIdSeq,
    pub adjacency_sizes: Vec<usize>,
    pub seed: u64,
    pub config: MechanismConfig,
}

impl PerturbedRecord {
    pub fn new(doc: &PerturbedDocument, seed: u64, config: &MechanismConfig, redact: bool) -> Self {
        Self {
            doc_index: doc.doc_index,
            original_ids: (!redact).then(|| doc.original_ids.clone()),
            perturbed_ids: doc.perturbed_ids.clone(),
            adjacency_sizes: doc.adjacency_sizes.clone(),
            seed,
            config: config.clone(),
        }
    }
}

pub fn write_perturbed_jsonl(mut w: impl Write, records: &[PerturbedRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_perturbed_jsonl(r: impl BufRead) -> io::Result<Vec<PerturbedRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
