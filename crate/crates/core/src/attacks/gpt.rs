use thiserror::Error;

use super::{check_lengths, AttackError, AttackReport, TokenOutcome};
use crate::pipeline::{build_gpt_attack_prompt, run_inference, LlmClient, RetryPolicy};
use crate::vocab::{TokenId, Vocabulary};

/// Tokens per attack prompt unless configured otherwise.
pub const DEFAULT_CHUNK_SIZE: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{message}")]
pub struct ResponseParseError {
    pub message: String,
    /// The full response that failed to parse.
    pub raw: String,
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.pos += c.len_utf8();
        }
    }

    /// Skips whitespace and `#` comments running to the end of the line.
    fn skip_blank(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                match self.s[self.pos..].find('\n') {
                    Some(n) => self.pos += n,
                    None => self.pos = self.s.len(),
                }
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), String> {
        self.skip_blank();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(format!("expected `{want}` at byte {}, found `{c}`", self.pos)),
            None => Err(format!("expected `{want}`, found end of input")),
        }
    }

    fn string(&mut self) -> Result<String, String> {
        self.skip_blank();
        let start = self.pos;
        if self.peek() != Some('"') {
            return Err(format!("expected a string at byte {start}"));
        }
        self.bump();
        let mut escaped = false;
        while let Some(c) = self.peek() {
            self.bump();
            match (escaped, c) {
                (false, '\\') => escaped = true,
                (false, '"') => {
                    return serde_json::from_str(&self.s[start..self.pos])
                        .map_err(|e| format!("bad string at byte {start}: {e}"));
                }
                _ => escaped = false,
            }
        }
        Err(format!("unterminated string at byte {start}"))
    }

    /// `[ [ "a" ], [ "b", "c" ], ... ]`, keeping the first string of each
    /// inner list.
    fn list_of_lists(&mut self) -> Result<Vec<String>, String> {
        self.expect('[')?;
        let mut out = Vec::new();
        loop {
            self.skip_blank();
            match self.peek() {
                Some(']') => {
                    self.bump();
                    return Ok(out);
                }
                Some(',') if !out.is_empty() => self.bump(),
                Some('[') => {
                    self.bump();
                    let first = self.string()?;
                    loop {
                        self.skip_blank();
                        match self.peek() {
                            Some(',') => {
                                self.bump();
                                self.string()?;
                            }
                            _ => break,
                        }
                    }
                    self.expect(']')?;
                    out.push(first);
                }
                Some(c) => return Err(format!("unexpected `{c}` at byte {}", self.pos)),
                None => return Err("list is not closed".into()),
            }
        }
    }
}

/// Pulls the predictions out of a model's answer to the attack prompt: the
/// first `[` followed by an inner `[`, parsed as a list of string lists
/// with `#` comments ignored. Text around the list is ignored.
pub fn parse_gpt_attack_response(body: &str, expected_count: usize) -> Result<Vec<String>, ResponseParseError> {
    let fail = |message: String| ResponseParseError { message, raw: body.to_string() };
    let mut last_err = "no list of lists found".to_string();
    for (start, _) in body.match_indices('[') {
        if !body[start + 1..].trim_start().starts_with('[') {
            continue;
        }
        let mut cur = Cursor { s: body, pos: start };
        match cur.list_of_lists() {
            Ok(predictions) if predictions.len() == expected_count => return Ok(predictions),
            Ok(predictions) => {
                return Err(fail(format!(
                    "expected {expected_count} predictions, found {}",
                    predictions.len()
                )))
            }
            Err(e) => last_err = e,
        }
    }
    Err(fail(last_err))
}

/// Asks `client` to undo the perturbation, `chunk_size` tokens per prompt.
/// A position is recovered when the prediction is byte-for-byte the
/// original token.
pub fn gpt_inference_attack(
    perturbed: &[TokenId],
    originals: &[TokenId],
    vocab: &Vocabulary,
    client: &dyn LlmClient,
    chunk_size: usize,
    retry: &RetryPolicy,
) -> Result<AttackReport, AttackError> {
    check_lengths(perturbed.len(), originals.len())?;
    if chunk_size == 0 {
        return Err(AttackError::InvalidChunkSize);
    }
    vocab.check_ids(perturbed)?;
    vocab.check_ids(originals)?;
    let mut reports = Vec::new();
    for (chunk, orig) in perturbed.chunks(chunk_size).zip(originals.chunks(chunk_size)) {
        let texts: Vec<String> = chunk.iter().map(|&t| vocab.token_text(t)).collect();
        let prompt = build_gpt_attack_prompt(&texts).expect("chunks are non-empty");
        let body = run_inference(client, &prompt, retry)?;
        let predictions = parse_gpt_attack_response(&body, texts.len())?;
        let outcomes = orig
            .iter()
            .zip(predictions)
            .enumerate()
            .map(|(position, (&original_id, prediction))| {
                let original = vocab.token_bytes(original_id).expect("checked above");
                TokenOutcome {
                    position,
                    original_id,
                    recovered: prediction.as_bytes() == original,
                    candidate_ids: vocab.id_of(prediction.as_bytes()).into_iter().collect(),
                    predictions: vec![prediction],
                }
            })
            .collect();
        reports.push(AttackReport::from_outcomes(outcomes));
    }
    Ok(AttackReport::merge(reports))
}

/// Reads the token list back out of an attack prompt. Lets a mock stand in
/// for a model that repeats its input.
pub fn tokens_from_attack_prompt(prompt: &str) -> Option<Vec<String>> {
    let start = prompt.find("For the given list of \"INPUTS\":\n")?;
    let rest = &prompt[start..];
    let line = rest.lines().nth(1)?;
    serde_json::from_str(line).ok()
}
