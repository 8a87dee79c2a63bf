use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dptext_core::fixtures::line_table;
use dptext_core::{RunRecord, Vocabulary};
use tempfile::TempDir;

fn dptext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dptext"))
        .current_dir(dir)
        .env_remove("DPTEXT_API_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(o), stderr(o));
}

fn workdir(doc: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("doc.txt"), doc).unwrap();
    dir
}

/// Eight one-letter tokens on a line, written as model files.
fn write_letter_model(dir: &Path) -> (PathBuf, PathBuf) {
    let vocab = Vocabulary::from_tokens((b'a'..=b'h').map(|b| vec![b]).collect()).unwrap();
    let table = line_table(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let (v, e) = (dir.join("vocab.txt"), dir.join("emb.txt"));
    vocab.write_to(fs::File::create(&v).unwrap()).unwrap();
    table.write_to(fs::File::create(&e).unwrap()).unwrap();
    (v, e)
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn perturb_shape_and_determinism() {
    let dir = workdir("xq#z!");
    let p = dir.path();
    let run = |out: &str| dptext(p, &["perturb", "--input", "doc.txt", "-n", "2", "--out", out, "--seed", "11", "-q"]);
    let first = run("a.jsonl");
    assert_ok(&first);
    assert_ok(&run("b.jsonl"));
    let a = fs::read(p.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(p.join("b.jsonl")).unwrap());

    let text = String::from_utf8(a).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    for r in &records {
        assert_eq!(r["perturbed_ids"].as_array().unwrap().len(), 5);
        assert_eq!(r["original_ids"].as_array().unwrap().len(), 5);
        assert_eq!(r["seed"], 11);
        assert_eq!(r["config"]["kind"], "rantext");
    }
    let out = stdout(&first);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("doc=1 edit_distance="));
    assert_eq!(fs::read_to_string(p.join("doc.txt")).unwrap(), "xq#z!");
}

#[test]
fn redaction_and_evaluation_mode() {
    let dir = workdir("hello world");
    let p = dir.path();
    assert_ok(&dptext(p, &["perturb", "-i", "doc.txt", "-n", "2", "-o", "full.jsonl", "--seed", "1", "-q"]));
    assert_ok(&dptext(p, &["perturb", "-i", "doc.txt", "-n", "2", "-o", "red.jsonl", "--seed", "1", "-q", "--redact"]));
    assert!(!fs::read_to_string(p.join("red.jsonl")).unwrap().contains("original_ids"));

    let missing = dptext(p, &["attack", "-i", "red.jsonl", "-q"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("evaluation mode"));

    let with = dptext(p, &["attack", "-i", "red.jsonl", "--originals", "full.jsonl", "-q"]);
    let embedded = dptext(p, &["attack", "-i", "full.jsonl", "-q"]);
    assert_ok(&with);
    assert_eq!(stdout(&with), stdout(&embedded));
}

#[test]
fn edit_distance_shrinks_with_epsilon() {
    let dir = workdir("abcdefghhgfedcbaaceg");
    let p = dir.path();
    let (v, e) = write_letter_model(p);
    let (v, e) = (v.to_str().unwrap(), e.to_str().unwrap());
    let mean = |eps: &str| {
        let o = dptext(
            p,
            &["--vocab", v, "--embeddings", e, "perturb", "-i", "doc.txt", "-n", "400", "-o", "o.jsonl", "-e", eps, "--seed", "3"],
        );
        assert_ok(&o);
        let out = stdout(&o);
        out.lines().map(|l| field(l, "edit_distance")).sum::<f64>() / out.lines().count() as f64
    };
    let means: Vec<f64> = ["1", "2", "3"].iter().map(|e| mean(e)).collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
    assert!(means[2] < means[0], "{means:?}");
}

#[test]
fn run_with_mocks() {
    let dir = workdir("Meet me at the station at noon.");
    let p = dir.path();
    let o = dptext(p, &["run", "-i", "doc.txt", "-n", "5", "--mock", "--seed", "4", "--runs-dir", "runs"]);
    assert_ok(&o);
    let files: Vec<PathBuf> = fs::read_dir(p.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    let record = RunRecord::load(&files[0]).unwrap();
    assert_eq!(record.generations.len(), 5);
    assert_eq!(record.seed, 4);
    assert_eq!(record.config.pipeline.n_docs, 5);
    assert_eq!(stdout(&o).trim_end_matches('\n'), record.restored_text.unwrap());

    let metrics = dptext(p, &["metrics", "--runs", files[0].to_str().unwrap(), "-q"]);
    assert_ok(&metrics);
    let table = stdout(&metrics);
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with(&record.run_id));
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let dir = workdir("some text");
    let p = dir.path();
    let started = std::time::Instant::now();
    let o = dptext(
        p,
        &["run", "-i", "doc.txt", "--seed", "1", "--set", "remote.base_url=http://192.0.2.1:9/v1", "--runs-dir", "runs"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DPTEXT_API_KEY"), "{}", stderr(&o));
    assert!(!p.join("runs").exists());
    assert!(started.elapsed().as_secs() < 5);
}

#[test]
fn inversion_privacy_falls_as_k_grows() {
    let dir = workdir("The quarterly report shows that the company's revenue grew.");
    let p = dir.path();
    assert_ok(&dptext(p, &["perturb", "-i", "doc.txt", "-n", "4", "-o", "p.jsonl", "--seed", "9", "-q"]));
    let privacy = |k: &str| {
        let o = dptext(p, &["attack", "-i", "p.jsonl", "-k", k, "-q"]);
        assert_ok(&o);
        let last = stdout(&o).lines().last().unwrap().to_string();
        assert!(last.starts_with("asr="), "{last}");
        assert_eq!(field(&last, "k"), k.parse::<f64>().unwrap());
        field(&last, "privacy")
    };
    let ps: Vec<f64> = ["1", "250", "500"].iter().map(|k| privacy(k)).collect();
    assert!(ps.windows(2).all(|w| w[1] <= w[0]), "{ps:?}");
    assert_eq!(privacy("512"), 0.0);
    assert_eq!(dptext(p, &["attack", "-i", "p.jsonl", "-k", "513", "-q"]).status.code(), Some(2));
}

#[test]
fn model_assisted_attacks_with_mocks() {
    let dir = workdir("plain words here");
    let p = dir.path();
    // A huge ε keeps every token, so an attacker that repeats its input wins.
    assert_ok(&dptext(p, &["perturb", "-i", "doc.txt", "-n", "2", "-o", "p.jsonl", "-e", "100000", "--seed", "2", "-q"]));
    let o = dptext(p, &["attack", "-i", "p.jsonl", "--kind", "gpt", "--mock", "-q", "-o", "report.json"]);
    assert_ok(&o);
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert_eq!((field(&last, "asr"), field(&last, "privacy")), (1.0, 0.0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "gpt");
    assert_eq!(report["documents"].as_array().unwrap().len(), 2);

    let mask = dptext(p, &["attack", "-i", "p.jsonl", "--kind", "mask", "--mock", "-k", "1", "-q"]);
    assert_ok(&mask);
    assert_eq!(field(stdout(&mask).lines().last().unwrap(), "asr"), 1.0);
    assert_eq!(dptext(p, &["attack", "-i", "p.jsonl", "--kind", "mask", "-q"]).status.code(), Some(2));
}

#[test]
fn verify_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let a = dptext(p, &["verify", "--seed", "5"]);
    assert_ok(&a);
    let lines: Vec<String> = stdout(&a).lines().map(str::to_string).collect();
    assert!(lines.len() >= 10);
    for l in &lines {
        let parts: Vec<&str> = l.split(' ').collect();
        assert_eq!(parts.len(), 4, "{l}");
        assert!(parts[1].starts_with("pass=") && parts[2].starts_with("worst=") && parts[3].starts_with("bound="));
    }
    assert!(lines.iter().any(|l| l.starts_with("membership_monotonicity pass=true")));
    assert_eq!(stdout(&dptext(p, &["verify", "--seed", "5"])), stdout(&a));

    let tiny = dptext(p, &["verify", "--seed", "5", "--epsilon", "0.01"]);
    assert_ok(&tiny);
    for l in stdout(&tiny).lines().filter(|l| l.starts_with("em_dp")) {
        assert!(field(l, "worst") <= 0.01, "{l}");
    }
    let json: serde_json::Value = serde_json::from_slice(&dptext(p, &["verify", "--seed", "5", "--json"]).stdout).unwrap();
    assert_eq!(json.as_array().unwrap().len(), lines.len());
}

#[test]
fn config_file_and_errors() {
    let dir = workdir("abc");
    let p = dir.path();
    fs::write(p.join("dptext.ini"), "[mechanism]\nkind = topk\ntop_k = 3\nepsilon = 4\n[run]\nn = 3\n").unwrap();
    assert_ok(&dptext(p, &["--config", "dptext.ini", "perturb", "-i", "doc.txt", "-o", "p.jsonl", "--seed", "1", "-q"]));
    let text = fs::read_to_string(p.join("p.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["config"]["kind"], "topk");
    assert_eq!(first["config"]["epsilon_em"], 4.0);
    assert!(first["adjacency_sizes"].as_array().unwrap().iter().all(|s| s == 3));

    fs::write(p.join("bad.ini"), "[mechanism]\nflavour = mint\n").unwrap();
    assert_eq!(dptext(p, &["--config", "bad.ini", "verify"]).status.code(), Some(2));
    assert_eq!(dptext(p, &["--config", "nope.ini", "verify"]).status.code(), Some(2));
    assert_eq!(dptext(p, &["perturb", "-i", "doc.txt", "--epsilon=-1"]).status.code(), Some(2));
    assert_eq!(dptext(p, &["--vocab", "missing.txt", "--embeddings", "x", "verify"]).status.code(), Some(2));
    assert_eq!(dptext(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(dptext(p, &["perturb", "-i", "absent.txt", "-q", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn seed_is_reported_when_not_given() {
    let dir = workdir("abc");
    let o = dptext(dir.path(), &["perturb", "-i", "doc.txt", "-n", "1"]);
    assert_ok(&o);
    let seed: u64 = stderr(&o)
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .expect("seed line")
        .parse()
        .unwrap();
    let record: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(record["seed"], seed);
}
