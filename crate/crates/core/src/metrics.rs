//! Utility metrics for generated text: n-gram diversity, embedding
//! coherence and edit distance.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("vectors have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("{0} is the zero vector")]
    ZeroVector(&'static str),
}

/// How the per-n repetition ratios are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversityFormula {
    /// `Π ratio_n`, in `(0, 1]`.
    #[default]
    Product,
    /// `Σ ratio_n`, in `(0, 3]`.
    Sum,
}

impl std::str::FromStr for DiversityFormula {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "product" => Ok(Self::Product),
            "sum" => Ok(Self::Sum),
            other => Err(format!("unknown diversity formula `{other}` (product, sum)")),
        }
    }
}

/// `|unique n-grams| / |n-grams|` for n = 2, 3, 4. Orders longer than the
/// input are left out.
pub fn ngram_ratios<T: AsRef<str>>(tokens: &[T]) -> Vec<(usize, f64)> {
    (2..=4)
        .filter(|&n| tokens.len() >= n)
        .map(|n| {
            let grams: Vec<Vec<&str>> = tokens
                .windows(n)
                .map(|w| w.iter().map(AsRef::as_ref).collect())
                .collect();
            let unique: HashSet<&Vec<&str>> = grams.iter().collect();
            (n, unique.len() as f64 / grams.len() as f64)
        })
        .collect()
}

/// N-gram diversity of `tokens`. A single token has no n-grams and scores
/// the empty product (1) or the empty sum (0).
pub fn diversity<T: AsRef<str>>(tokens: &[T], formula: DiversityFormula) -> Result<f64, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::Empty("token list"));
    }
    let ratios = ngram_ratios(tokens).into_iter().map(|(_, r)| r);
    Ok(match formula {
        DiversityFormula::Product => ratios.product(),
        DiversityFormula::Sum => ratios.sum(),
    })
}

/// Cosine similarity of two sentence embeddings.
pub fn coherence(prefix: &[f64], continuation: &[f64]) -> Result<f64, MetricError> {
    if prefix.len() != continuation.len() {
        return Err(MetricError::DimensionMismatch(prefix.len(), continuation.len()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(prefix), norm(continuation));
    if na == 0.0 {
        return Err(MetricError::ZeroVector("prefix embedding"));
    }
    if nb == 0.0 {
        return Err(MetricError::ZeroVector("continuation embedding"));
    }
    let dot: f64 = prefix.iter().zip(continuation).map(|(a, b)| a * b).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Minimum number of insertions, deletions and substitutions turning `a`
/// into `b`. Two rows of the table are kept, sized by the shorter input.
pub fn levenshtein_by<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let substitute = prev[j] + usize::from(x != y);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Character-level edit distance (Unicode scalar values).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_by(&a, &b)
}

/// Token-level edit distance.
pub fn token_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    levenshtein_by(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub diversity: f64,
    pub diversity_formula: DiversityFormula,
    /// Absent when no sentence embeddings were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<f64>,
    pub edit_distance: usize,
    pub tokens: usize,
    pub chars: usize,
    /// Only filled in from an external scorer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mauve: Option<f64>,
}

impl MetricReport {
    /// Metrics for `generated` against `reference`. `tokens` is the
    /// generated text split into tokens; `embeddings` are the prefix and
    /// continuation sentence embeddings when available.
    pub fn compute<T: AsRef<str>>(
        reference: &str,
        generated: &str,
        tokens: &[T],
        formula: DiversityFormula,
        embeddings: Option<(&[f64], &[f64])>,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            diversity: diversity(tokens, formula)?,
            diversity_formula: formula,
            coherence: embeddings.map(|(p, c)| coherence(p, c)).transpose()?,
            edit_distance: levenshtein(reference, generated),
            tokens: tokens.len(),
            chars: generated.chars().count(),
            mauve: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-table recurrence, kept deliberately naive.
    fn table_oracle(a: &[char], b: &[char]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("héllo", "hello"), 1);
        assert_eq!(token_levenshtein(&[1, 2, 3], &[1, 3]), 1);
    }

    #[test]
    fn diversity_examples() {
        let rep = ["a"; 5];
        let product = diversity(&rep, DiversityFormula::Product).unwrap();
        assert!((product - 1.0 / 24.0).abs() < 1e-12);
        let sum = diversity(&rep, DiversityFormula::Sum).unwrap();
        assert!((sum - (0.25 + 1.0 / 3.0 + 0.5)).abs() < 1e-12);
        let distinct = ["a", "b", "c", "d", "e"];
        assert_eq!(diversity(&distinct, DiversityFormula::Product).unwrap(), 1.0);
        assert_eq!(diversity(&distinct, DiversityFormula::Sum).unwrap(), 3.0);
        // Only bigrams are defined for two tokens.
        assert_eq!(ngram_ratios(&["x", "x"]), vec![(2, 1.0)]);
        assert_eq!(diversity::<&str>(&[], DiversityFormula::Product), Err(MetricError::Empty("token list")));
    }

    #[test]
    fn coherence_examples() {
        assert!((coherence(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert!(coherence(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        assert!((coherence(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(coherence(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(coherence(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn report_shape() {
        let r = MetricReport::compute(
            "the cat sat",
            "the dog sat",
            &["the", " dog", " sat"],
            DiversityFormula::Product,
            None,
        )
        .unwrap();
        assert_eq!(r.edit_distance, 3);
        assert_eq!((r.tokens, r.chars), (3, 11));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["diversity_formula"], "product");
        assert!(json.get("mauve").is_none());
    }

    fn short_string() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[abc]{0,12}").unwrap()
    }

    proptest! {
        #[test]
        fn matches_table_oracle(a in "[a-e]{0,30}", b in "[a-e]{0,30}") {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            prop_assert_eq!(levenshtein(&a, &b), table_oracle(&ca, &cb));
        }

        #[test]
        fn is_a_metric(a in short_string(), b in short_string(), c in short_string()) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
            prop_assert_eq!(levenshtein("", &b), b.len());
        }

        #[test]
        fn coherence_bounded_and_scale_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 3),
            w in proptest::collection::vec(-10.0f64..10.0, 3),
            s in 0.01f64..100.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
            let c = coherence(&v, &w).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            prop_assert!((coherence(&scaled, &w).unwrap() - c).abs() < 1e-9);
        }

        #[test]
        fn diversity_ranges(tokens in proptest::collection::vec("[ab]", 1..20)) {
            let p = diversity(&tokens, DiversityFormula::Product).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
            let s = diversity(&tokens, DiversityFormula::Sum).unwrap();
            let expected: f64 = ngram_ratios(&tokens).iter().map(|r| r.1).sum();
            prop_assert_eq!(s, expected);
            prop_assert!((0.0..=3.0).contains(&s));
        }
    }
}
