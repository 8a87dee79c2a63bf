//! Token vocabulary, optional BPE merge table, and tokenization.
//!
//! File formats (UTF-8 text, one record per line):
//!
//! ```text
//! DPTEXT-VOCAB v1 <count>
//! <id>\t<base64(token bytes)>
//!
//! DPTEXT-MERGES v1 <count>
//! <rank>\t<base64(left)>\t<base64(right)>
//! ```
//!
//! Token bytes are base64 encoded because byte-level BPE vocabularies contain
//! tokens that are not valid UTF-8 on their own.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Left and right byte strings of one merge rule.
pub type MergePair = (Vec<u8>, Vec<u8>);

const VOCAB_MAGIC: &str = "DPTEXT-VOCAB";
const MERGES_MAGIC: &str = "DPTEXT-MERGES";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vocabulary integrity: {0}")]
    Integrity(String),
    #[error("bytes at offset {offset} are not covered by the vocabulary")]
    Uncoverable { offset: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(TokenId),
}

fn parse_err(line: usize, message: impl Into<String>) -> VocabError {
    VocabError::Parse {
        line,
        message: message.into(),
    }
}

/// An ordered list of token ids, all valid for the vocabulary that produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenIdSeq(pub Vec<TokenId>);

impl TokenIdSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenIdSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenIdSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MergeTable {
    // (left, right) -> (rank, merged)
    pairs: HashMap<(TokenId, TokenId), (u32, TokenId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, TokenId>,
    max_token_len: usize,
    merges: Option<MergeTable>,
}

impl Vocabulary {
    /// Builds a vocabulary where each token's id is its position.
    pub fn from_tokens(tokens: Vec<Vec<u8>>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, bytes) in tokens.iter().enumerate() {
            if bytes.is_empty() {
                return Err(VocabError::Integrity(format!("token {id} is empty")));
            }
            if let Some(prev) = index.insert(bytes.clone(), id as TokenId) {
                return Err(VocabError::Integrity(format!(
                    "tokens {prev} and {id} have identical bytes"
                )));
            }
        }
        let max_token_len = tokens.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            tokens,
            index,
            max_token_len,
            merges: None,
        })
    }

    /// Attaches BPE merges, given in rank order as `(left, right)` byte pairs.
    pub fn with_merges(mut self, merges: Vec<MergePair>) -> Result<Self, VocabError> {
        let mut pairs = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.into_iter().enumerate() {
            let lookup = |bytes: &[u8], what: &str| {
                self.index.get(bytes).copied().ok_or_else(|| {
                    VocabError::Integrity(format!("merge rank {rank}: {what} is not a token"))
                })
            };
            let l = lookup(&left, "left side")?;
            let r = lookup(&right, "right side")?;
            let joined: Vec<u8> = left.iter().chain(&right).copied().collect();
            let merged = lookup(&joined, "merged result")?;
            if pairs.insert((l, r), (rank as u32, merged)).is_some() {
                return Err(VocabError::Integrity(format!(
                    "merge rank {rank} duplicates an earlier pair"
                )));
            }
        }
        self.merges = Some(MergeTable { pairs });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_merges(&self) -> bool {
        self.merges.is_some()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Token text with invalid UTF-8 replaced by U+FFFD.
    pub fn token_text(&self, id: TokenId) -> String {
        self.token_bytes(id)
            .map(|b| String::from_utf8_lossy(b).into_owned())
            .unwrap_or_default()
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.index.get(bytes).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, b)| (i as TokenId, b.as_slice()))
    }

    /// Keeps the first `n` entries; merges referring to dropped tokens go too.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let tokens = self.tokens[..n].to_vec();
        let index = self
            .index
            .iter()
            .filter(|(_, &id)| (id as usize) < n)
            .map(|(b, &id)| (b.clone(), id))
            .collect();
        let merges = self.merges.as_ref().map(|m| MergeTable {
            pairs: m
                .pairs
                .iter()
                .filter(|(&(l, r), &(_, merged))| {
                    (l as usize) < n && (r as usize) < n && (merged as usize) < n
                })
                .map(|(k, v)| (*k, *v))
                .collect(),
        });
        let max_token_len = tokens.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            tokens,
            index,
            max_token_len,
            merges,
        }
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<(), VocabError> {
        match ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(VocabError::UnknownId(id)),
            None => Ok(()),
        }
    }

    /// Splits `text` into tokens: BPE when merges are loaded, otherwise greedy
    /// longest match over the token bytes.
    pub fn tokenize(&self, text: &str) -> Result<TokenIdSeq, VocabError> {
        self.tokenize_bytes(text.as_bytes())
    }

    pub fn tokenize_bytes(&self, bytes: &[u8]) -> Result<TokenIdSeq, VocabError> {
        match &self.merges {
            Some(merges) => self.bpe(bytes, merges),
            None => self.longest_match(bytes),
        }
    }

    fn longest_match(&self, bytes: &[u8]) -> Result<TokenIdSeq, VocabError> {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let longest = self.max_token_len.min(bytes.len() - pos);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.index.get(&bytes[pos..pos + len]).map(|&id| (id, len)));
            match hit {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => return Err(VocabError::Uncoverable { offset: pos }),
            }
        }
        Ok(TokenIdSeq(ids))
    }

    fn bpe(&self, bytes: &[u8], merges: &MergeTable) -> Result<TokenIdSeq, VocabError> {
        let mut parts = bytes
            .iter()
            .enumerate()
            .map(|(offset, b)| {
                self.index
                    .get(std::slice::from_ref(b))
                    .copied()
                    .ok_or(VocabError::Uncoverable { offset })
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Repeatedly apply the lowest-rank merge (leftmost on ties).
        loop {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| merges.pairs.get(&(w[0], w[1])).map(|&(rank, id)| (rank, i, id)))
                .min_by_key(|&(rank, i, _)| (rank, i));
            let Some((rank, _, merged)) = best else {
                break;
            };
            let mut out = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len()
                    && merges.pairs.get(&(parts[i], parts[i + 1])).map(|p| p.0) == Some(rank)
                {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(parts[i]);
                    i += 1;
                }
            }
            parts = out;
        }
        Ok(TokenIdSeq(parts))
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id).ok_or(VocabError::UnknownId(id))?);
        }
        Ok(out)
    }

    /// Detokenizes and decodes as UTF-8, replacing invalid sequences.
    pub fn detokenize_lossy(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        self.detokenize(ids)
            .map(|b| String::from_utf8_lossy(&b).into_owned())
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{VOCAB_MAGIC} {FORMAT_VERSION} {}", self.len())?;
        for (id, bytes) in self.iter() {
            writeln!(w, "{id}\t{}", B64.encode(bytes))?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, VocabError> {
    fs::read_to_string(path).map_err(|source| VocabError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `<MAGIC> v1 <n> [<m> ...]` and returns the numeric fields.
pub(crate) fn parse_header(
    line: Option<&str>,
    magic: &str,
    fields: usize,
) -> Result<Vec<usize>, VocabError> {
    let line = line.ok_or_else(|| parse_err(1, "missing header"))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(parse_err(1, format!("expected `{magic}` header")));
    }
    if parts.next() != Some(FORMAT_VERSION) {
        return Err(parse_err(1, format!("unsupported version, expected {FORMAT_VERSION}")));
    }
    let nums = parts
        .map(|p| p.parse::<usize>().map_err(|_| parse_err(1, format!("bad header field `{p}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if nums.len() != fields {
        return Err(parse_err(1, format!("header needs {fields} numeric field(s)")));
    }
    Ok(nums)
}

fn decode_b64(field: &str, line: usize) -> Result<Vec<u8>, VocabError> {
    B64.decode(field.trim())
        .map_err(|e| parse_err(line, format!("invalid base64: {e}")))
}

pub fn parse_vocabulary(text: &str) -> Result<Vocabulary, VocabError> {
    let mut lines = text.lines();
    let count = parse_header(lines.next(), VOCAB_MAGIC, 1)?[0];
    let mut slots: Vec<Option<Vec<u8>>> = vec![None; count];
    let mut seen = 0;
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let (id, b64) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected `<id>\\t<base64>`"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad token id `{id}`")))?;
        let bytes = decode_b64(b64, line_no)?;
        seen += 1;
        if seen > count {
            return Err(VocabError::Integrity(format!(
                "more than the {count} entries declared in the header"
            )));
        }
        let slot = slots.get_mut(id).ok_or_else(|| {
            VocabError::Integrity(format!("id {id} breaks the contiguous range 0..{count}"))
        })?;
        if slot.is_some() {
            return Err(VocabError::Integrity(format!("duplicate id {id}")));
        }
        *slot = Some(bytes);
    }
    let tokens = slots
        .into_iter()
        .enumerate()
        .map(|(id, s)| s.ok_or_else(|| VocabError::Integrity(format!("missing id {id}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Vocabulary::from_tokens(tokens)
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    parse_vocabulary(&read(path.as_ref())?)
}

/// Parses a merges file into `(left, right)` pairs ordered by rank.
pub fn parse_merges(text: &str) -> Result<Vec<MergePair>, VocabError> {
    let mut lines = text.lines();
    let count = parse_header(lines.next(), MERGES_MAGIC, 1)?[0];
    let mut ranked = Vec::with_capacity(count);
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [rank, left, right] = fields[..] else {
            return Err(parse_err(line_no, "expected `<rank>\\t<left>\\t<right>`"));
        };
        let rank: u64 = rank
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad rank `{rank}`")))?;
        ranked.push((rank, decode_b64(left, line_no)?, decode_b64(right, line_no)?));
    }
    if ranked.len() != count {
        return Err(VocabError::Integrity(format!(
            "header declares {count} merges, found {}",
            ranked.len()
        )));
    }
    ranked.sort_by_key(|m| m.0);
    if ranked.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(VocabError::Integrity("duplicate merge rank".into()));
    }
    Ok(ranked.into_iter().map(|(_, l, r)| (l, r)).collect())
}

pub fn load_merges(path: impl AsRef<Path>) -> Result<Vec<MergePair>, VocabError> {
    parse_merges(&read(path.as_ref())?)
}

pub fn render_merges(merges: &[(Vec<u8>, Vec<u8>)]) -> String {
    let mut out = format!("{MERGES_MAGIC} {FORMAT_VERSION} {}\n", merges.len());
    for (rank, (l, r)) in merges.iter().enumerate() {
        let _ = writeln!(out, "{rank}\t{}\t{}", B64.encode(l), B64.encode(r));
    }
    out
}
