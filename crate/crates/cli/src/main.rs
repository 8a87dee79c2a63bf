//! `dptext`: perturb documents with token-level differential privacy, run
//! the perturb / infer / restore pipeline against chat endpoints, and
//! evaluate the result.
//!
//! ```text
//! dptext perturb  --input doc.txt -n 3 --out perturbed.jsonl
//! dptext run      --input doc.txt -n 5 --mock --seed 7
//! dptext attack   --input perturbed.jsonl --kind inversion -k 10
//! dptext metrics  --reference doc.txt --generated out.txt
//! dptext verify   --epsilon 1
//! ```
//!
//! Without `--vocab` and `--embeddings` (or the matching `[paths]` keys),
//! commands fall back to a small built-in synthetic vocabulary so that
//! everything can be tried without downloading model files.
//!
//! Exit status is 0 on success, 1 when a command ran but failed (a failed
//! run, a failed deterministic check, an I/O error), and 2 for usage or
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dptext_core::{DiversityFormula, MechanismKind, ScoringMode, Sensitivity};

use crate::config::{AppConfig, ConfigError};

#[derive(Debug, Parser)]
#[command(name = "dptext", version, about = "Token-level differential privacy for LLM prompts")]
struct Cli {
    /// INI-style configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed. A fresh one is drawn and reported when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use in-process mock backends instead of HTTP endpoints.
    #[arg(long, global = true)]
    mock: bool,

    /// Suppress informational messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    /// Override a configuration key, e.g. `--set mechanism.epsilon=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Vocabulary file.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,

    /// Embedding file matching the vocabulary.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,

    /// BPE merges file.
    #[arg(long, global = true)]
    merges: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write N perturbed copies of a document as JSONL.
    Perturb(PerturbArgs),
    /// Perturb, query the remote model with every copy, then restore.
    Run(RunArgs),
    /// Attack perturbed documents and report the attack success rate.
    Attack(AttackArgs),
    /// Text-quality metrics for generated text.
    Metrics(MetricsArgs),
    /// Check the privacy properties on small built-in fixtures.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Default)]
struct MechanismArgs {
    /// Candidate-set construction.
    #[arg(long, value_enum)]
    mechanism: Option<KindArg>,
    /// Exponential-mechanism ε.
    #[arg(long, short)]
    epsilon: Option<f64>,
    /// Laplace ε for the adjacency radius (defaults to ε).
    #[arg(long)]
    eps_lap: Option<f64>,
    /// `auto` or a number.
    #[arg(long)]
    sensitivity: Option<Sensitivity>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    /// Candidate count for the top-K mechanism.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Rantext,
    Topk,
    Global,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoringArg {
    OriginDistance,
    NoisyRatio,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    /// Text file to perturb.
    #[arg(long, short)]
    input: PathBuf,
    /// Number of perturbed copies.
    #[arg(short)]
    n: Option<usize>,
    /// Output JSONL; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Leave the original token ids out of the output.
    #[arg(long)]
    redact: bool,
    #[command(flatten)]
    mechanism: MechanismArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(short)]
    n: Option<usize>,
    /// Keep only the first 50 tokens of the input.
    #[arg(long)]
    truncate: bool,
    /// Directory for the run record.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[command(flatten)]
    mechanism: MechanismArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackKind {
    Inversion,
    Gpt,
    Mask,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// JSONL written by `perturb`.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "inversion")]
    kind: AttackKind,
    /// Guesses per position.
    #[arg(short)]
    k: Option<usize>,
    /// Unredacted JSONL holding the original ids. Defaults to the ids in
    /// `--input` itself when present.
    #[arg(long)]
    originals: Option<PathBuf>,
    /// Embedding table the inversion adversary searches. Defaults to the
    /// table used for perturbation.
    #[arg(long)]
    adversary_embeddings: Option<PathBuf>,
    /// Tokens per prompt for the model-assisted attack.
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Write the full reports as JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Reference text file.
    #[arg(long, requires = "generated", conflicts_with = "runs")]
    reference: Option<PathBuf>,
    /// Generated text file.
    #[arg(long, requires = "reference")]
    generated: Option<PathBuf>,
    /// Run records; one table row per run.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "product")]
    formula: FormulaArg,
    /// Sentence embedding of the prefix (whitespace-separated floats).
    #[arg(long, requires = "continuation_vector")]
    prefix_vector: Option<PathBuf>,
    /// Sentence embedding of the continuation.
    #[arg(long, requires = "prefix_vector")]
    continuation_vector: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormulaArg {
    Product,
    Sum,
}

impl From<FormulaArg> for DiversityFormula {
    fn from(f: FormulaArg) -> Self {
        match f {
            FormulaArg::Product => DiversityFormula::Product,
            FormulaArg::Sum => DiversityFormula::Sum,
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Exponential-mechanism ε for the exact checks.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Laplace ε for the adjacency checks.
    #[arg(long, default_value_t = 1.0)]
    eps_lap: f64,
    /// Draws for each membership check.
    #[arg(long)]
    membership_trials: Option<u64>,
    /// Print the results as JSON.
    #[arg(long)]
    json: bool,
}

/// A command failure, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl MechanismArgs {
    fn apply(&self, cfg: &mut AppConfig) {
        let m = &mut cfg.mechanism;
        if let Some(k) = self.mechanism {
            m.kind = match k {
                KindArg::Rantext => MechanismKind::Rantext,
                KindArg::Topk => MechanismKind::Topk,
                KindArg::Global => MechanismKind::Global,
            };
        }
        if let Some(e) = self.epsilon {
            m.epsilon_em = e;
        }
        if let Some(e) = self.eps_lap {
            m.epsilon_lap = Some(e);
        }
        if let Some(s) = self.sensitivity {
            m.laplace_sensitivity = s;
        }
        if let Some(s) = self.scoring {
            m.scoring_mode = match s {
                ScoringArg::OriginDistance => ScoringMode::OriginDistance,
                ScoringArg::NoisyRatio => ScoringMode::NoisyRatio,
            };
        }
        if let Some(k) = self.top_k {
            m.top_k = k;
        }
    }
}

/// Shared state handed to every command.
pub struct Context {
    pub config: AppConfig,
    pub seed: u64,
    pub mock: bool,
    pub quiet: bool,
}

impl Context {
    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn build_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(p) = &cli.vocab {
        cfg.paths.vocab = Some(p.clone());
    }
    if let Some(p) = &cli.embeddings {
        cfg.paths.embeddings = Some(p.clone());
    }
    if let Some(p) = &cli.merges {
        cfg.paths.merges = Some(p.clone());
    }
    match &cli.command {
        Command::Perturb(a) => {
            a.mechanism.apply(&mut cfg);
            if let Some(n) = a.n {
                cfg.n_docs = n;
            }
        }
        Command::Run(a) => {
            a.mechanism.apply(&mut cfg);
            if let Some(n) = a.n {
                cfg.n_docs = n;
            }
            if let Some(d) = &a.runs_dir {
                cfg.paths.runs_dir = d.clone();
            }
        }
        Command::Attack(a) => {
            if let Some(k) = a.k {
                cfg.attack.k = k;
            }
            if let Some(c) = a.chunk_size {
                cfg.attack.chunk_size = c;
            }
        }
        Command::Metrics(_) | Command::Verify(_) => {}
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = build_config(&cli)?;
    let seed = config.seed.unwrap_or_else(rand::random);
    let ctx = Context {
        config,
        seed,
        mock: cli.mock,
        quiet: cli.quiet,
    };
    if cli.seed.is_none() {
        ctx.note(format!("seed: {seed}"));
    }
    match &cli.command {
        Command::Perturb(a) => commands::perturb(&ctx, &a.input, a.out.as_deref(), a.redact),
        Command::Run(a) => commands::run(&ctx, &a.input, a.truncate),
        Command::Attack(a) => commands::attack(&ctx, a),
        Command::Metrics(a) => commands::metrics(&ctx, a),
        Command::Verify(a) => commands::verify(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dptext: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::parse_from([
            "dptext",
            "--set",
            "mechanism.epsilon=9",
            "perturb",
            "--input",
            "x.txt",
            "-e",
            "4",
            "--mechanism",
            "topk",
            "-n",
            "2",
        ]);
        let cfg = build_config(&cli).unwrap();
        assert_eq!(cfg.mechanism.epsilon_em, 4.0);
        assert_eq!(cfg.mechanism.kind, MechanismKind::Topk);
        assert_eq!(cfg.n_docs, 2);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let cli = Cli::parse_from(["dptext", "--set", "nope", "verify"]);
        let err = build_config(&cli).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
