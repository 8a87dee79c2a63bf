//! Shared inputs for the benchmarks.

use dptext_core::fixtures::{anisotropic_table, synthetic_vocabulary};
use dptext_core::{EmbeddingTable, Vocabulary};

/// A paragraph of ordinary prose, repeated `copies` times.
pub fn sample_text(copies: usize) -> String {
    const PARAGRAPH: &str = "The committee met on Thursday to review the quarterly figures. \
        Revenue rose in every region except the north, where two large contracts ended. \
        The chair asked for a revised forecast before the next meeting.\n";
    PARAGRAPH.repeat(copies)
}

/// A vocabulary and matching embedding table of `n` tokens.
pub fn model(n: usize, dim: usize) -> (Vocabulary, EmbeddingTable) {
    (synthetic_vocabulary(n), anisotropic_table(n, dim, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_consistent() {
        let (vocab, table) = model(512, 8);
        assert_eq!(vocab.len(), table.len());
        assert!(vocab.tokenize(&sample_text(2)).is_ok());
    }
}
