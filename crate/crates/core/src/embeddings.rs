//! Dense token embeddings and Euclidean geometry over them.
//!
//! ```text
//! DPTEXT-EMB v1 <count> <dim>
//! <id>\t<float> <float> ...
//! ```

use std::cmp::Ordering;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use thiserror::Error;

use crate::vocab::{parse_header, TokenId, VocabError, Vocabulary};

const EMB_MAGIC: &str = "DPTEXT-EMB";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding format: {0}")]
    Format(String),
    #[error("line {line}: non-finite component in row {id}")]
    NonFinite { line: usize, id: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

impl From<VocabError> for EmbeddingError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::Parse { line, message } => EmbeddingError::Parse { line, message },
            other => EmbeddingError::Format(other.to_string()),
        }
    }
}

/// Euclidean distance `sqrt(Σ (a_k − b_k)²)`.
pub fn distance<A, B>(a: &[A], b: &[B]) -> Result<f64, EmbeddingError>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(distance_unchecked(a, b))
}

#[inline]
pub(crate) fn distance_unchecked<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Orders `(distance, id)` pairs by distance, then smaller id.
pub(crate) fn by_distance_then_id(a: &(f64, TokenId), b: &(f64, TokenId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// One row per vocabulary entry, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f32>,
    per_dim_range: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(EmbeddingError::Format("dimension must be at least 1".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { line: id + 2, id });
            }
            data.extend_from_slice(row);
        }
        Ok(Self::from_flat(dim, data))
    }

    fn from_flat(dim: usize, data: Vec<f32>) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in data.chunks_exact(dim) {
            for (k, &v) in row.iter().enumerate() {
                lo[k] = lo[k].min(v as f64);
                hi[k] = hi[k].max(v as f64);
            }
        }
        let per_dim_range = if data.is_empty() {
            vec![0.0; dim]
        } else {
            hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
        };
        Self {
            dim,
            data,
            per_dim_range,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Panics if `id` is out of range.
    pub fn row(&self, id: TokenId) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// `max_i rows[i][k] − min_i rows[i][k]` for every coordinate `k`.
    pub fn per_dim_range(&self) -> &[f64] {
        &self.per_dim_range
    }

    pub fn max_range(&self) -> f64 {
        self.per_dim_range.iter().copied().fold(0.0, f64::max)
    }

    /// Bytes held by the row storage.
    pub fn memory_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    pub fn token_distance(&self, a: TokenId, b: TokenId) -> f64 {
        distance_unchecked(self.row(a), self.row(b))
    }

    /// All tokens as `(distance to origin, id)`, in id order.
    pub fn distances_from(&self, origin: TokenId) -> Vec<(f64, TokenId)> {
        let o = self.row(origin);
        self.rows()
            .enumerate()
            .map(|(i, r)| (distance_unchecked(r, o), i as TokenId))
            .collect()
    }

    /// The `k` tokens nearest to `origin` (origin included), by distance then id.
    pub fn nearest(&self, origin: TokenId, k: usize) -> Vec<TokenId> {
        let mut all = self.distances_from(origin);
        let k = k.min(all.len());
        if k == 0 {
            return Vec::new();
        }
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, by_distance_then_id);
            all.truncate(k);
        }
        all.sort_by(by_distance_then_id);
        all.into_iter().map(|(_, id)| id).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{EMB_MAGIC} v1 {} {}", self.len(), self.dim)?;
        for (id, row) in self.rows().enumerate() {
            write!(w, "{id}\t")?;
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn parse_embeddings(text: &str, vocab: &Vocabulary) -> Result<EmbeddingTable, EmbeddingError> {
    let mut lines = text.lines();
    let header = parse_header(lines.next(), EMB_MAGIC, 2)?;
    let (count, dim) = (header[0], header[1]);
    if count != vocab.len() {
        return Err(EmbeddingError::Format(format!(
            "header declares {count} rows but the vocabulary has {}",
            vocab.len()
        )));
    }
    if dim == 0 {
        return Err(EmbeddingError::Format("dimension must be at least 1".into()));
    }
    let mut data = vec![0f32; count * dim];
    let mut filled = vec![false; count];
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| EmbeddingError::Parse {
            line: line_no,
            message: "expected `<id>\\t<floats>`".into(),
        })?;
        let id: usize = id.trim().parse().map_err(|_| EmbeddingError::Parse {
            line: line_no,
            message: format!("bad token id `{id}`"),
        })?;
        if id >= count {
            return Err(EmbeddingError::Format(format!("row id {id} out of range 0..{count}")));
        }
        if std::mem::replace(&mut filled[id], true) {
            return Err(EmbeddingError::Format(format!("duplicate row id {id}")));
        }
        let row = &mut data[id * dim..(id + 1) * dim];
        let mut k = 0;
        for field in values.split_whitespace() {
            let v: f32 = field.parse().map_err(|_| EmbeddingError::Parse {
                line: line_no,
                message: format!("bad float `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(EmbeddingError::NonFinite { line: line_no, id });
            }
            if k == dim {
                return Err(EmbeddingError::Format(format!(
                    "line {line_no}: more than {dim} components"
                )));
            }
            row[k] = v;
            k += 1;
        }
        if k != dim {
            return Err(EmbeddingError::Format(format!(
                "line {line_no}: {k} components, expected {dim}"
            )));
        }
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(EmbeddingError::Format(format!("missing row {missing}")));
    }
    Ok(EmbeddingTable::from_flat(dim, data))
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<EmbeddingTable, EmbeddingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(&text, vocab)
}

/// Lazily computed per-origin neighbour lists, sorted by distance then id.
///
/// Each list costs `|V|` entries, so caching every origin of an 11k-token
/// vocabulary holds roughly 1.4 GB; only origins that are actually queried
/// are materialized.
#[derive(Debug)]
pub struct NeighborCache {
    lists: Vec<OnceLock<Vec<(f64, TokenId)>>>,
}

impl NeighborCache {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            lists: (0..vocab_size).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn sorted(&self, table: &EmbeddingTable, origin: TokenId) -> &[(f64, TokenId)] {
        self.lists[origin as usize].get_or_init(|| {
            let mut all = table.distances_from(origin);
            all.sort_by(by_distance_then_id);
            all
        })
    }

    pub fn nearest(&self, table: &EmbeddingTable, origin: TokenId, k: usize) -> Vec<TokenId> {
        self.sorted(table, origin)
            .iter()
            .take(k)
            .map(|&(_, id)| id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| format!("t{i}").into_bytes()).collect()).unwrap()
    }

    #[test]
    fn per_dim_range_from_rows() {
        let t = EmbeddingTable::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]])
            .unwrap();
        assert_eq!(t.per_dim_range(), &[1.0, 2.0]);
        assert_eq!(t.max_range(), 2.0);
    }

    #[test]
    fn parses_embedding_file() {
        let text = "DPTEXT-EMB v1 3 2\n0\t0 0\n1\t1 0\n2\t0 2\n";
        let t = parse_embeddings(text, &vocab(3)).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.row(2), &[0.0, 2.0]);
        assert_eq!(t.per_dim_range(), &[1.0, 2.0]);
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let text = "DPTEXT-EMB v1 4 2\n0\t0 0\n1\t1 0\n2\t0 2\n3\t1 1\n";
        assert!(matches!(parse_embeddings(text, &vocab(3)), Err(EmbeddingError::Format(_))));
    }

    #[test]
    fn dim_mismatch_and_non_finite() {
        let short = "DPTEXT-EMB v1 2 2\n0\t0 0\n1\t1\n";
        assert!(matches!(parse_embeddings(short, &vocab(2)), Err(EmbeddingError::Format(_))));
        let long = "DPTEXT-EMB v1 2 2\n0\t0 0\n1\t1 2 3\n";
        assert!(matches!(parse_embeddings(long, &vocab(2)), Err(EmbeddingError::Format(_))));
        let nan = "DPTEXT-EMB v1 2 2\n0\t0 0\n1\tNaN 1\n";
        assert!(matches!(
            parse_embeddings(nan, &vocab(2)),
            Err(EmbeddingError::NonFinite { line: 3, id: 1 })
        ));
        let zero_dim = "DPTEXT-EMB v1 1 0\n0\t\n";
        assert!(parse_embeddings(zero_dim, &vocab(1)).is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let t = EmbeddingTable::from_rows(vec![vec![0.25, -1.5e-7], vec![3.0, 1e9]]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = parse_embeddings(std::str::from_utf8(&buf).unwrap(), &vocab(2)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn memory_is_four_bytes_per_component() {
        // 11000 × 1536 table: 11000 · 1536 · 4 bytes.
        let t = EmbeddingTable::from_flat(1536, vec![0.0; 11_000 * 1536]);
        assert_eq!(t.memory_bytes(), 11_000 * 1536 * 4);
        assert_eq!(t.len(), 11_000);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[0.0f64, 0.0], &[0.0f64, 0.0]).unwrap(), 0.0);
        assert_eq!(distance(&[0.0f64, 0.0], &[3.0f64, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            distance(&[0.0f64], &[1.0f64, 2.0]),
            Err(EmbeddingError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn nearest_breaks_ties_by_id() {
        let t = EmbeddingTable::from_rows(vec![vec![0.0], vec![1.0], vec![-1.0], vec![5.0]]).unwrap();
        assert_eq!(t.nearest(0, 3), vec![0, 1, 2]);
        assert_eq!(t.nearest(3, 2), vec![3, 1]);
        let cache = NeighborCache::new(t.len());
        for origin in 0..4 {
            for k in 0..=4 {
                assert_eq!(cache.nearest(&t, origin, k), t.nearest(origin, k));
            }
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 3)
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_zero_on_self(a in vec3(), b in vec3()) {
            prop_assert_eq!(distance(&a, &b).unwrap(), distance(&b, &a).unwrap());
            prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn distance_triangle_inequality(a in vec3(), b in vec3(), c in vec3()) {
            let ab = distance(&a, &b).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-12);
        }
    }
}
