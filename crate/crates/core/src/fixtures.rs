//! Small synthetic vocabularies and embedding tables.
//!
//! Used by the verifier, the benchmarks and the tests. Nothing here is meant
//! to resemble a real tokenizer beyond being able to cover ASCII text.

use rand_distr::{Distribution, Normal};

use crate::dp::RngHandle;
use crate::embeddings::EmbeddingTable;
use crate::vocab::Vocabulary;

/// One-dimensional table with token `i` at `points[i]`.
pub fn line_table(points: &[f64]) -> EmbeddingTable {
    EmbeddingTable::from_rows(points.iter().map(|&p| vec![p as f32]).collect())
        .expect("finite points")
}

/// `n` Gaussian embeddings in `dim` dimensions whose coordinate `k` has
/// standard deviation `1 / (k + 1)`. A few wide coordinates and many narrow
/// ones, roughly the shape of learned token embeddings.
pub fn anisotropic_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = RngHandle::from_seed(seed);
    let normals: Vec<Normal<f64>> = (0..dim)
        .map(|k| Normal::new(0.0, 1.0 / (k as f64 + 1.0)).expect("positive std"))
        .collect();
    let rows = (0..n)
        .map(|_| normals.iter().map(|d| d.sample(&mut rng) as f32).collect())
        .collect();
    EmbeddingTable::from_rows(rows).expect("finite samples")
}

const WORDS: &[&str] = &[
    " the", " of", " and", " to", " in", " is", " was", " for", " on", " that", " with", " as",
    " by", " at", " from", " his", " her", " it", " an", " be", " has", " are", " this", " new",
    " said", " after", " who", " year", " first", " people", " police", " told", " more", " one",
    " two", " state", " city", " data", " text", " model", " privacy", " private", " secret",
    " patient", " doctor", " bank", " account", " name", " address", " phone", "ing", "ed", "er",
    "es", "ly", "tion", "ment", "re", "un",
];

/// A vocabulary of `n` tokens: every single byte first (so any text is
/// coverable when `n ≥ 256`), then common English pieces, then synthetic
/// two-letter pieces.
pub fn synthetic_vocabulary(n: usize) -> Vocabulary {
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    tokens.extend(WORDS.iter().map(|w| w.as_bytes().to_vec()));
    'outer: for a in b'a'..=b'z' {
        for b in b'a'..=b'z' {
            if tokens.len() >= n {
                break 'outer;
            }
            let piece = vec![b' ', a, b];
            if !tokens.contains(&piece) {
                tokens.push(piece);
            }
        }
    }
    tokens.truncate(n);
    Vocabulary::from_tokens(tokens).expect("distinct tokens")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anisotropic_shape_and_spread() {
        let t = anisotropic_table(400, 8, 1);
        assert_eq!((t.len(), t.dim()), (400, 8));
        let r = t.per_dim_range();
        assert!(r[0] > 3.0 * r[7], "{r:?}");
        assert_eq!(anisotropic_table(400, 8, 1).rows().collect::<Vec<_>>(), t.rows().collect::<Vec<_>>());
    }

    #[test]
    fn vocabulary_covers_text() {
        let v = synthetic_vocabulary(400);
        assert_eq!(v.len(), 400);
        let text = "The patient said: \"call 555-0100\" after the data was lost.\n";
        let ids = v.tokenize(text).unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), text.as_bytes());
        assert!(ids.len() < text.len());
    }
}
