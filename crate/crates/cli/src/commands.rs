//! One function per subcommand.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use dptext_core::attacks::{embedding_inversion, gpt_inference_attack, mask_attack, tokens_from_attack_prompt};
use dptext_core::mechanism::{read_perturbed_jsonl, write_perturbed_jsonl};
use dptext_core::metrics::levenshtein;
use dptext_core::pipeline::{run_pipeline, HttpClient, MockClient, RetryPolicy, TRUNCATED_DOCUMENT_TOKENS};
use dptext_core::verify::{run_suite, SuiteConfig};
use dptext_core::{
    fixtures, load_embeddings, load_merges, load_vocabulary, AttackReport, EmbeddingTable, LlmClient,
    MetricReport, PerturbedRecord, Perturber, PipelineConfig, RngHandle, RunRecord, RunStatus,
    TokenId, TokenIdSeq, Vocabulary,
};
use serde::Serialize;

use crate::config::ConfigError;
use crate::{AttackArgs, AttackKind, CliError, Context, MetricsArgs, VerifyArgs};

/// Size of the built-in vocabulary used when no model files are given.
const FALLBACK_VOCAB: usize = 512;
const FALLBACK_DIM: usize = 16;

fn failed(context: &str) -> impl Fn(&dyn std::fmt::Display) -> CliError + '_ {
    move |e| CliError::Failed(format!("{context}: {e}"))
}

fn io_failed(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_failed(path))
}

/// Loads the configured vocabulary and embeddings, or the built-in
/// synthetic pair when none are configured.
fn load_resources(ctx: &Context) -> Result<(Vocabulary, EmbeddingTable), CliError> {
    let paths = &ctx.config.paths;
    let (Some(vocab_path), Some(emb_path)) = (&paths.vocab, &paths.embeddings) else {
        ctx.note(format!(
            "no vocabulary configured; using the built-in synthetic vocabulary ({FALLBACK_VOCAB} tokens, {FALLBACK_DIM} dimensions)"
        ));
        return Ok((
            fixtures::synthetic_vocabulary(FALLBACK_VOCAB),
            fixtures::anisotropic_table(FALLBACK_VOCAB, FALLBACK_DIM, 0),
        ));
    };
    let mut vocab = load_vocabulary(vocab_path).map_err(|e| failed("vocabulary")(&e))?;
    if let Some(m) = &paths.merges {
        let merges = load_merges(m).map_err(|e| failed("merges")(&e))?;
        vocab = vocab.with_merges(merges).map_err(|e| failed("merges")(&e))?;
    }
    let table = load_embeddings(emb_path, &vocab).map_err(|e| failed("embeddings")(&e))?;
    Ok((vocab, table))
}

pub fn perturb(ctx: &Context, input: &Path, out: Option<&Path>, redact: bool) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (vocab, table) = load_resources(ctx)?;
    let text = read_text(input)?;
    let ids = vocab.tokenize(&text).map_err(|e| failed("tokenize")(&e))?;
    let perturber = Perturber::new(&table, cfg.mechanism.clone())
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?
        .with_neighbor_cache();
    let docs = perturber
        .perturb_document(&ids, cfg.n_docs, &RngHandle::from_seed(ctx.seed))
        .map_err(|e| failed("perturb")(&e))?;
    let records: Vec<PerturbedRecord> = docs
        .iter()
        .map(|d| PerturbedRecord::new(d, ctx.seed, &cfg.mechanism, redact))
        .collect();

    let mut lines = Vec::with_capacity(docs.len());
    for d in &docs {
        let perturbed = vocab.detokenize_lossy(&d.perturbed_ids).map_err(|e| failed("detokenize")(&e))?;
        lines.push(format!(
            "doc={} edit_distance={} tokens={}",
            d.doc_index,
            levenshtein(&text, &perturbed),
            d.perturbed_ids.len()
        ));
    }

    match out {
        Some(path) => {
            let file = File::create(path).map_err(io_failed(path))?;
            let mut w = BufWriter::new(file);
            write_perturbed_jsonl(&mut w, &records).map_err(io_failed(path))?;
            w.flush().map_err(io_failed(path))?;
            for l in lines {
                println!("{l}");
            }
        }
        None => {
            write_perturbed_jsonl(io::stdout().lock(), &records).map_err(|e| failed("stdout")(&e))?;
            for l in lines {
                ctx.note(l);
            }
        }
    }
    Ok(())
}

/// Mock remote model: continues a document by repeating it.
fn mock_continuation(prompt: &str) -> String {
    prompt
        .split_once("- Prefix Text:\n")
        .map(|(_, doc)| doc.to_string())
        .unwrap_or_default()
}

/// Mock local model: answers with the first perturbed result verbatim.
fn mock_restoration(prompt: &str) -> String {
    let Some((_, rest)) = prompt.split_once("\n[1]\n") else {
        return String::new();
    };
    match rest.split_once("\n[2]\n") {
        Some((first, _)) => first.to_string(),
        None => rest.to_string(),
    }
}

/// Mock attacker: answers every token with the token itself.
fn mock_attack_answer(prompt: &str) -> String {
    let tokens = tokens_from_attack_prompt(prompt).unwrap_or_default();
    let rows: Vec<String> = tokens
        .iter()
        .map(|t| format!("[{}]", serde_json::to_string(t).expect("strings serialize")))
        .collect();
    format!("[\n{}\n]", rows.join(",\n"))
}

fn http_client(cfg: &dptext_core::LlmEndpointConfig) -> Result<HttpClient, CliError> {
    HttpClient::new(cfg.clone()).map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))
}

pub fn run(ctx: &Context, input: &Path, truncate: bool) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (remote, local): (Box<dyn LlmClient>, Box<dyn LlmClient>) = if ctx.mock {
        (
            Box::new(MockClient::map(mock_continuation)),
            Box::new(MockClient::map(mock_restoration)),
        )
    } else {
        (Box::new(http_client(&cfg.remote)?), Box::new(http_client(&cfg.restoration)?))
    };
    let (vocab, table) = load_resources(ctx)?;
    let document = read_text(input)?;

    let mut pipeline = PipelineConfig::new(cfg.mechanism.clone(), cfg.n_docs);
    pipeline.truncate_tokens = truncate.then_some(TRUNCATED_DOCUMENT_TOKENS);
    pipeline.max_concurrency = cfg.remote.max_concurrency;
    if ctx.mock {
        pipeline.retry = RetryPolicy::immediate();
    }
    pipeline.runs_dir = Some(cfg.paths.runs_dir.clone());

    let record = run_pipeline(
        &document,
        &vocab,
        &table,
        &pipeline,
        remote.as_ref(),
        local.as_ref(),
        &RngHandle::from_seed(ctx.seed),
    )
    .map_err(|e| failed("run")(&e))?;
    ctx.note(format!(
        "run record: {}",
        cfg.paths.runs_dir.join(record.file_name()).display()
    ));
    match (&record.status, &record.restored_text) {
        (RunStatus::Completed, Some(text)) => {
            println!("{text}");
            Ok(())
        }
        (status, _) => {
            let reason = record
                .generations
                .iter()
                .chain(std::iter::once(&record.restoration))
                .find_map(|c| c.error.clone())
                .unwrap_or_default();
            Err(CliError::Failed(format!("run {} ended with status {status:?}: {reason}", record.run_id)))
        }
    }
}

#[derive(Serialize)]
struct DocumentAttack<'a> {
    doc_index: usize,
    epsilon: f64,
    report: &'a AttackReport,
}

#[derive(Serialize)]
struct AttackOutput<'a> {
    kind: &'static str,
    k: usize,
    seed: u64,
    documents: Vec<DocumentAttack<'a>>,
    aggregate: &'a AttackReport,
}

fn read_records(path: &Path) -> Result<Vec<PerturbedRecord>, CliError> {
    let file = File::open(path).map_err(io_failed(path))?;
    read_perturbed_jsonl(BufReader::new(file)).map_err(io_failed(path))
}

fn summary(report: &AttackReport, k: usize, eps: f64) -> String {
    format!("asr={:.4} privacy={:.4} k={k} eps={eps}", report.asr, report.privacy)
}

pub fn attack(ctx: &Context, args: &AttackArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let originals: HashMap<usize, TokenIdSeq> = match &args.originals {
        Some(path) => read_records(path)?
            .into_iter()
            .filter_map(|r| Some((r.doc_index, r.original_ids?)))
            .collect(),
        None => records
            .iter()
            .filter_map(|r| Some((r.doc_index, r.original_ids.clone()?)))
            .collect(),
    };
    let mut pairs: Vec<(&PerturbedRecord, &[TokenId])> = Vec::with_capacity(records.len());
    for r in &records {
        let Some(orig) = originals.get(&r.doc_index) else {
            return Err(CliError::Usage(format!(
                "document {} has no original token ids. Attacks run in evaluation mode only: \
                 perturb without --redact, or pass the unredacted output with --originals",
                r.doc_index
            )));
        };
        pairs.push((r, &orig.0));
    }

    let k = match args.kind {
        AttackKind::Gpt => 1,
        _ => ctx.config.attack.k,
    };
    let (vocab, mut table) = load_resources(ctx)?;
    if let Some(path) = &args.adversary_embeddings {
        table = load_embeddings(path, &vocab).map_err(|e| failed("adversary embeddings")(&e))?;
    }
    let client: Option<Box<dyn LlmClient>> = match (args.kind, ctx.mock) {
        (AttackKind::Gpt, true) => Some(Box::new(MockClient::map(mock_attack_answer))),
        (AttackKind::Gpt, false) => Some(Box::new(http_client(&ctx.config.remote)?)),
        (AttackKind::Mask, false) => {
            return Err(CliError::Usage(
                "no masked language model backend is built in; use --mock for the identity stub".into(),
            ))
        }
        _ => None,
    };
    let identity = |tokens: &[TokenId], position: usize| Ok(vec![tokens[position]]);
    let retry = RetryPolicy::default();

    let mut reports = Vec::with_capacity(pairs.len());
    for (record, orig) in &pairs {
        let perturbed = &record.perturbed_ids.0;
        let result = match args.kind {
            AttackKind::Inversion => embedding_inversion(perturbed, orig, &table, k),
            AttackKind::Gpt => gpt_inference_attack(
                perturbed,
                orig,
                &vocab,
                client.as_deref().expect("client built for gpt"),
                ctx.config.attack.chunk_size,
                &retry,
            ),
            AttackKind::Mask => mask_attack(perturbed, orig, &identity, k),
        };
        let report = match result {
            Ok(r) => r,
            Err(e @ (dptext_core::AttackError::InvalidK { .. } | dptext_core::AttackError::InvalidChunkSize)) => {
                return Err(CliError::Usage(e.to_string()))
            }
            Err(e) => AttackReport::failed(e.to_string()),
        };
        reports.push(report);
    }

    let epsilons: Vec<f64> = pairs.iter().map(|(r, _)| r.config.epsilon_em).collect();
    for ((record, _), (report, eps)) in pairs.iter().zip(reports.iter().zip(&epsilons)) {
        match &report.failure {
            None => println!("doc={} {}", record.doc_index, summary(report, k, *eps)),
            Some(reason) => println!("doc={} failed: {reason}", record.doc_index),
        }
    }
    let aggregate = AttackReport::merge(reports.iter().cloned());
    println!("{}", summary(&aggregate, k, epsilons.first().copied().unwrap_or(f64::NAN)));

    if let Some(path) = &args.out {
        let output = AttackOutput {
            kind: match args.kind {
                AttackKind::Inversion => "inversion",
                AttackKind::Gpt => "gpt",
                AttackKind::Mask => "mask",
            },
            k,
            seed: ctx.seed,
            documents: pairs
                .iter()
                .zip(&reports)
                .zip(&epsilons)
                .map(|(((r, _), report), &epsilon)| DocumentAttack {
                    doc_index: r.doc_index,
                    epsilon,
                    report,
                })
                .collect(),
            aggregate: &aggregate,
        };
        let json = serde_json::to_string_pretty(&output).expect("reports serialize");
        fs::write(path, json + "\n").map_err(io_failed(path))?;
    }
    match aggregate.failure {
        Some(reason) => Err(CliError::Failed(format!("attack did not complete: {reason}"))),
        None => Ok(()),
    }
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    read_text(path)?
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| failed(&path.display().to_string())(&e))
}

#[derive(Serialize)]
struct MetricRow {
    name: String,
    #[serde(flatten)]
    report: Option<MetricReport>,
}

pub fn metrics(ctx: &Context, args: &MetricsArgs) -> Result<(), CliError> {
    let vectors = match (&args.prefix_vector, &args.continuation_vector) {
        (Some(p), Some(c)) => Some((read_vector(p)?, read_vector(c)?)),
        _ => None,
    };
    let embeddings = vectors.as_ref().map(|(p, c)| (p.as_slice(), c.as_slice()));
    let compute = |reference: &str, generated: &str| {
        let words: Vec<&str> = generated.split_whitespace().collect();
        MetricReport::compute(reference, generated, &words, args.formula.into(), embeddings)
            .map_err(|e| failed("metrics")(&e))
    };

    let mut rows = Vec::new();
    if let (Some(r), Some(g)) = (&args.reference, &args.generated) {
        rows.push(MetricRow {
            name: g.display().to_string(),
            report: Some(compute(&read_text(r)?, &read_text(g)?)?),
        });
    }
    for path in &args.runs {
        let run = RunRecord::load(path).map_err(io_failed(path))?;
        let report = match &run.restored_text {
            Some(text) => Some(compute(&run.raw_document, text)?),
            None => {
                ctx.note(format!("{}: no restored text ({:?})", run.run_id, run.status));
                None
            }
        };
        rows.push(MetricRow { name: run.run_id, report });
    }
    if rows.is_empty() {
        return Err(CliError::Usage("give --reference and --generated, or --runs".into()));
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("metrics serialize"));
        return Ok(());
    }
    println!("{:<32} {:>10} {:>10} {:>8} {:>7} {:>7}", "name", "diversity", "coherence", "edit", "tokens", "chars");
    for row in rows {
        match row.report {
            Some(r) => println!(
                "{:<32} {:>10.4} {:>10} {:>8} {:>7} {:>7}",
                row.name,
                r.diversity,
                r.coherence.map_or("-".to_string(), |c| format!("{c:.4}")),
                r.edit_distance,
                r.tokens,
                r.chars
            ),
            None => println!("{:<32} {:>10} {:>10} {:>8} {:>7} {:>7}", row.name, "-", "-", "-", "-", "-"),
        }
    }
    Ok(())
}

pub fn verify(ctx: &Context, args: &VerifyArgs) -> Result<(), CliError> {
    let mut suite = SuiteConfig {
        epsilon: args.epsilon,
        eps_lap: args.eps_lap,
        seed: ctx.seed,
        ..SuiteConfig::default()
    };
    if let Some(t) = args.membership_trials {
        suite.membership_trials = t;
    }
    let results = run_suite(&suite).map_err(|e| CliError::Usage(e.to_string()))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&results).expect("results serialize"));
    } else {
        for r in &results {
            println!("{}", r.summary_line());
        }
    }
    for r in results.iter().filter(|r| !r.pass && !r.deterministic) {
        ctx.note(format!("note: informational check {} did not pass: {}", r.name, r.detail));
    }
    let broken: Vec<&str> = results
        .iter()
        .filter(|r| r.deterministic && !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("deterministic checks failed: {}", broken.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dptext_core::pipeline::{build_gpt_attack_prompt, build_inference_prompt, build_restoration_prompt};

    #[test]
    fn mocks_read_their_prompts() {
        assert_eq!(mock_continuation(&build_inference_prompt("abc\ndef")), "abc\ndef");
        let p = build_restoration_prompt("doc", &["first\nline", "second"]).unwrap();
        assert_eq!(mock_restoration(&p), "first\nline");
        let p = build_restoration_prompt("doc", &["only"]).unwrap();
        assert_eq!(mock_restoration(&p), "only");
        let p = build_gpt_attack_prompt(&["a", " \"b\""]).unwrap();
        assert_eq!(mock_attack_answer(&p), "[\n[\"a\"],\n[\" \\\"b\\\"\"]\n]");
    }
}
