use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::{run_inference, LlmClient, RetryPolicy};
use super::prompts::{
    build_inference_prompt, build_restoration_prompt, INFERENCE_INSTRUCTION, RESTORATION_INSTRUCTION,
};
use super::PipelineError;
use crate::dp::RngHandle;
use crate::embeddings::EmbeddingTable;
use crate::mechanism::{MechanismConfig, Perturber};
use crate::vocab::{TokenIdSeq, Vocabulary};

/// Token budget used when a document is cut to a fixed prefix.
pub const TRUNCATED_DOCUMENT_TOKENS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mechanism: MechanismConfig,
    pub n_docs: usize,
    /// Keep only this many leading tokens of the input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_tokens: Option<usize>,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
    /// Where to write `<run_id>.json`; nothing is written when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(mechanism: MechanismConfig, n_docs: usize) -> Self {
        Self {
            mechanism,
            n_docs,
            truncate_tokens: None,
            max_concurrency: 4,
            retry: RetryPolicy::default(),
            runs_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A remote call failed for good; restoration was not attempted.
    Failed,
    /// All generations arrived but the restoration call failed.
    RestorationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedText {
    pub doc_index: usize,
    pub text: String,
    pub ids: TokenIdSeq,
}

/// One model call and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl CallRecord {
    fn run(client: &dyn LlmClient, prompt: &str, retry: &RetryPolicy) -> Self {
        let started_ms = now_ms();
        let result = run_inference(client, prompt, retry);
        let finished_ms = now_ms();
        let (text, error) = match result {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self { text, error, started_ms, finished_ms }
    }

    fn skipped(reason: &str) -> Self {
        Self {
            text: None,
            error: Some(reason.to_string()),
            started_ms: 0,
            finished_ms: 0,
        }
    }
}

/// Settings and backends a run was made with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigSnapshot {
    pub pipeline: PipelineConfig,
    pub remote: String,
    pub restoration: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
}

/// Everything one perturb, infer, restore run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub raw_document: String,
    pub instruction: String,
    pub restoration_instruction: String,
    pub config: RunConfigSnapshot,
    pub perturbed: Vec<PerturbedText>,
    /// One per perturbed document, same order.
    pub generations: Vec<CallRecord>,
    pub restoration: CallRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored_text: Option<String>,
    /// Tokens of the restored text that also occur in some generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_tokens: Option<usize>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("{}.json", self.run_id)
    }

    /// Writes the record as pretty JSON into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// A copy with every timestamp zeroed, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        let mut r = self.clone();
        r.started_ms = 0;
        r.finished_ms = 0;
        for c in r.generations.iter_mut().chain(std::iter::once(&mut r.restoration)) {
            c.started_ms = 0;
            c.finished_ms = 0;
        }
        r
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_id(seed: u64, document: &str, snapshot: &RunConfigSnapshot) -> String {
    let mut h = Sha256::new();
    h.update(document.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(snapshot).expect("snapshot serializes"));
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("run-{seed}-{hex}")
}

fn shared_token_count(vocab: &Vocabulary, restored: &str, generations: &[CallRecord]) -> Option<usize> {
    let mut seen = HashSet::new();
    for g in generations {
        seen.extend(vocab.tokenize(g.text.as_deref()?).ok()?.iter().copied());
    }
    let restored = vocab.tokenize(restored).ok()?;
    Some(restored.iter().filter(|t| seen.contains(t)).count())
}

/// Calls `client` once per prompt with at most `max_concurrency` calls in
/// flight. Results come back in prompt order.
fn call_all(
    client: &dyn LlmClient,
    prompts: &[String],
    max_concurrency: usize,
    retry: &RetryPolicy,
) -> Vec<CallRecord> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CallRecord>>> = Mutex::new(vec![None; prompts.len()]);
    let workers = max_concurrency.clamp(1, prompts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = prompts.get(j) else { break };
                let record = CallRecord::run(client, prompt, retry);
                slots.lock().expect("no worker panics while holding the lock")[j] = Some(record);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every prompt was taken"))
        .collect()
}

/// Tokenizes `document`, perturbs it `n_docs` times, asks `remote` to
/// continue each perturbed copy, then asks `local` to write the final
/// continuation from the original document and the remote generations.
///
/// A remote call that still fails after retries ends the run with status
/// [`RunStatus::Failed`]; that is reported in the record, not as an error.
pub fn run_pipeline(
    document: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    cfg: &PipelineConfig,
    remote: &dyn LlmClient,
    local: &dyn LlmClient,
    rng: &RngHandle,
) -> Result<RunRecord, PipelineError> {
    if cfg.n_docs == 0 {
        return Err(PipelineError::InvalidConfig("n_docs must be at least 1".into()));
    }
    if vocab.len() != table.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "vocabulary has {} tokens but the embedding table has {}",
            vocab.len(),
            table.len()
        )));
    }
    let started_ms = now_ms();
    let mut ids = vocab.tokenize(document)?;
    let raw_document = match cfg.truncate_tokens {
        Some(n) if ids.len() > n => {
            ids.0.truncate(n);
            vocab.detokenize_lossy(&ids)?
        }
        _ => document.to_string(),
    };

    let perturber = Perturber::new(table, cfg.mechanism.clone())?.with_neighbor_cache();
    let perturbed = perturber
        .perturb_document(&ids, cfg.n_docs, rng)?
        .into_iter()
        .map(|d| {
            Ok(PerturbedText {
                doc_index: d.doc_index,
                text: vocab.detokenize_lossy(&d.perturbed_ids)?,
                ids: d.perturbed_ids,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let snapshot = RunConfigSnapshot {
        pipeline: cfg.clone(),
        remote: remote.name(),
        restoration: local.name(),
        vocab_size: vocab.len(),
        embedding_dim: table.dim(),
    };
    let prompts: Vec<String> = perturbed.iter().map(|p| build_inference_prompt(&p.text)).collect();
    let generations = call_all(remote, &prompts, cfg.max_concurrency, &cfg.retry);

    let texts: Option<Vec<&str>> = generations.iter().map(|g| g.text.as_deref()).collect();
    let (status, restoration) = match texts {
        None => (RunStatus::Failed, CallRecord::skipped("not attempted: a remote call failed")),
        Some(texts) => {
            let prompt = build_restoration_prompt(&raw_document, &texts).expect("n_docs >= 1");
            let call = CallRecord::run(local, &prompt, &cfg.retry);
            let status = if call.text.is_some() {
                RunStatus::Completed
            } else {
                RunStatus::RestorationFailed
            };
            (status, call)
        }
    };
    let restored_text = restoration.text.clone();
    let shared_tokens = restored_text
        .as_deref()
        .and_then(|r| shared_token_count(vocab, r, &generations));

    let record = RunRecord {
        run_id: run_id(rng.seed(), &raw_document, &snapshot),
        seed: rng.seed(),
        status,
        raw_document,
        instruction: INFERENCE_INSTRUCTION.to_string(),
        restoration_instruction: RESTORATION_INSTRUCTION.to_string(),
        config: snapshot,
        perturbed,
        generations,
        restoration,
        restored_text,
        shared_tokens,
        started_ms,
        finished_ms: now_ms(),
    };
    if let Some(dir) = &cfg.runs_dir {
        record.save(dir)?;
    }
    Ok(record)
}
