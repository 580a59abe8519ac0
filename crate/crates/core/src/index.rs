//! Exact inner-product index over frozen document embeddings.
//!
//! The index is immutable once built. Rows are stored as `f32`; every score is
//! accumulated in `f64` so that ranking and tie-breaking are reproducible.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic        b"DPRFIDX1"                 8 bytes
//! dim          u64                         8 bytes
//! count        u64                         8 bytes
//! matrix       count * dim * f32           row-major
//! id table     count * (u32 len, utf-8 bytes)
//! crc32        u32 (IEEE) over every preceding byte
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

/// Magic bytes at the start of every index file.
pub const INDEX_MAGIC: [u8; 8] = *b"DPRFIDX1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero documents")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("non-finite value in embedding for `{0}`")]
    NonFinite(String),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense embedding. All retrieval math happens on these.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Sequential `f64` dot product. The summation order is part of the contract.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// One search result.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordering used everywhere a ranked list is produced: score descending, then
/// doc id ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

/// Flat, id-addressed matrix of document embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    doc_ids: Vec<String>,
    matrix: Vec<f32>,
    lookup: HashMap<String, usize>,
}

impl FlatIndex {
    /// Builds an index, preserving input order.
    pub fn build<I, S>(embeddings: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (S, EmbeddingVector)>,
        S: Into<String>,
    {
        let mut dim = None;
        let mut doc_ids = Vec::new();
        let mut matrix = Vec::new();
        let mut lookup = HashMap::new();
        for (id, emb) in embeddings {
            let id = id.into();
            let expected = *dim.get_or_insert(emb.dim());
            if emb.dim() != expected {
                return Err(IndexError::DimensionMismatch {
                    expected,
                    actual: emb.dim(),
                });
            }
            let row: Vec<f32> = emb.0.iter().map(|&v| v as f32).collect();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::NonFinite(id));
            }
            if lookup.insert(id.clone(), doc_ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            doc_ids.push(id);
            matrix.extend_from_slice(&row);
        }
        match dim {
            None | Some(0) => Err(IndexError::Empty),
            Some(dim) => Ok(Self {
                dim,
                doc_ids,
                matrix,
                lookup,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.lookup.get(doc_id).copied()
    }

    /// Stored embedding widened to `f64`.
    pub fn embedding(&self, doc_id: &str) -> Option<EmbeddingVector> {
        self.position(doc_id)
            .map(|i| EmbeddingVector(self.row(i).iter().map(|&v| v as f64).collect()))
    }

    /// Raw matrix, row-major.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// `f64` score of row `i` against `q`.
    pub fn score(&self, q: &[f64], i: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(q)
            .fold(0.0, |acc, (&r, &x)| acc + x * r as f64)
    }

    /// Exact top-k maximum inner product search.
    pub fn search(&self, q: &EmbeddingVector, top_k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if q.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        if top_k == 0 {
            return Err(IndexError::ZeroTopK);
        }
        if !q.is_finite() {
            return Err(IndexError::NonFinite("<query>".into()));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len()).map(|i| (self.score(&q.0, i), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.doc_ids[a.1], b.0, &self.doc_ids[b.1])
        };
        let k = top_k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| ScoredHit {
                doc_id: self.doc_ids[i].clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + self.matrix.len() * 4 + self.len() * 16 + 4);
        buf.extend_from_slice(&INDEX_MAGIC);
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.matrix {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.doc_ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::Corrupt(m.to_string());
        if bytes.len() < INDEX_MAGIC.len() + 16 + 4 {
            return Err(corrupt("file too short"));
        }
        if bytes[..8] != INDEX_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let dim = cur.u64()? as usize;
        let count = cur.u64()? as usize;
        let n_values = dim
            .checked_mul(count)
            .ok_or_else(|| corrupt("matrix size overflow"))?;
        let raw = cur.take(n_values.checked_mul(4).ok_or_else(|| corrupt("matrix size overflow"))?)?;
        let matrix: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut doc_ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?).map_err(|_| corrupt("id is not utf-8"))?;
            doc_ids.push(id.to_string());
        }
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes before checksum"));
        }
        let mut lookup = HashMap::with_capacity(count);
        for (i, id) in doc_ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        if dim == 0 || count == 0 {
            return Err(IndexError::Empty);
        }
        Ok(Self {
            dim,
            doc_ids,
            matrix,
            lookup,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::Corrupt("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_doc() -> FlatIndex {
        FlatIndex::build(vec![
            ("d1", EmbeddingVector(vec![1.0, 0.0])),
            ("d2", EmbeddingVector(vec![0.0, 1.0])),
        ])
        .unwrap()
    }

    fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, EmbeddingVector)> {
        (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
                (format!("doc{i:04}"), EmbeddingVector(v))
            })
            .collect()
    }

    #[test]
    fn builds_two_doc_index() {
        let idx = two_doc();
        assert_eq!(idx.dim(), 2);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.position("d2"), Some(1));
    }

    #[test]
    fn rejects_duplicates_and_mismatched_dims() {
        let dup = FlatIndex::build(vec![
            ("d1", EmbeddingVector(vec![1.0, 0.0])),
            ("d1", EmbeddingVector(vec![0.0, 1.0])),
        ]);
        assert!(matches!(dup, Err(IndexError::DuplicateId(id)) if id == "d1"));
        let mism = FlatIndex::build(vec![
            ("d1", EmbeddingVector(vec![1.0, 0.0])),
            ("d2", EmbeddingVector(vec![0.0, 1.0, 2.0])),
        ]);
        assert!(matches!(mism, Err(IndexError::DimensionMismatch { .. })));
        let empty: Vec<(String, EmbeddingVector)> = vec![];
        assert!(matches!(FlatIndex::build(empty), Err(IndexError::Empty)));
        let inf = FlatIndex::build(vec![("d1", EmbeddingVector(vec![f64::INFINITY]))]);
        assert!(matches!(inf, Err(IndexError::NonFinite(_))));
    }

    #[test]
    fn rows_match_input_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_vectors(&mut rng, 100, 8);
        let idx = FlatIndex::build(input.clone()).unwrap();
        for (i, (id, v)) in input.iter().enumerate() {
            assert_eq!(&idx.doc_ids()[i], id);
            let row: Vec<u64> = idx.row(i).iter().map(|&x| (x as f64).to_bits()).collect();
            let want: Vec<u64> = v.0.iter().map(|x| x.to_bits()).collect();
            assert_eq!(row, want);
        }
    }

    #[test]
    fn orthogonal_basis_search() {
        let idx = two_doc();
        let hits = idx.search(&EmbeddingVector(vec![1.0, 0.0]), 1).unwrap();
        assert_eq!(hits, vec![ScoredHit { doc_id: "d1".into(), score: 1.0, rank: 1 }]);
    }

    #[test]
    fn equal_scores_break_ties_by_id() {
        let idx = FlatIndex::build(vec![
            ("d2", EmbeddingVector(vec![0.0, 1.0])),
            ("d1", EmbeddingVector(vec![1.0, 0.0])),
        ])
        .unwrap();
        let hits = idx.search(&EmbeddingVector(vec![std::f64::consts::FRAC_1_SQRT_2; 2]), 2).unwrap();
        assert_eq!(hits[0].doc_id, "d1");
        assert_eq!(hits[1].doc_id, "d2");
        assert_eq!(hits[0].score, hits[1].score);
        assert_eq!((hits[0].rank, hits[1].rank), (1, 2));
    }

    #[test]
    fn search_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let idx = FlatIndex::build(random_vectors(&mut rng, 100, 8)).unwrap();
        let q = EmbeddingVector((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut all: Vec<(f64, String)> = idx
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let row: Vec<f64> = idx.row(i).iter().map(|&x| x as f64).collect();
                (dot(&q.0, &row), id.clone())
            })
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let hits = idx.search(&q, 10).unwrap();
        let got: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        let want: Vec<&str> = all.iter().take(10).map(|x| x.1.as_str()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn search_errors() {
        let idx = two_doc();
        assert!(matches!(
            idx.search(&EmbeddingVector(vec![1.0]), 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert!(matches!(idx.search(&EmbeddingVector(vec![1.0, 0.0]), 0), Err(IndexError::ZeroTopK)));
        assert_eq!(idx.search(&EmbeddingVector(vec![1.0, 0.0]), 50).unwrap().len(), 2);
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.idx");
        let idx = two_doc();
        idx.save(&path).unwrap();
        assert_eq!(FlatIndex::load(&path).unwrap(), idx);

        let bytes = fs::read(&path).unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(FlatIndex::from_bytes(truncated), Err(IndexError::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40;
        assert!(matches!(FlatIndex::from_bytes(&flipped), Err(IndexError::Corrupt(_))));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(FlatIndex::from_bytes(&bad_magic), Err(IndexError::Corrupt(_))));
    }

    #[test]
    fn thousand_doc_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = FlatIndex::build(random_vectors(&mut rng, 1000, 16)).unwrap();
        let back = FlatIndex::from_bytes(&idx.to_bytes()).unwrap();
        let a: Vec<u32> = idx.matrix().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.matrix().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(idx.doc_ids(), back.doc_ids());
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = two_doc().to_bytes();
        assert_eq!(&bytes[..8], b"DPRFIDX1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
        // 4 floats, then len-prefixed "d1", "d2", then crc
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 2);
        assert_eq!(&bytes[44..46], b"d1");
        assert_eq!(bytes.len(), 24 + 16 + 12 + 4);
    }

    #[test]
    fn concurrent_searches_match_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = FlatIndex::build(random_vectors(&mut rng, 300, 12)).unwrap();
        let queries: Vec<EmbeddingVector> = (0..16)
            .map(|_| EmbeddingVector((0..12).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let serial: Vec<_> = queries.iter().map(|q| idx.search(q, 20).unwrap()).collect();
        let parallel: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = queries.iter().map(|q| s.spawn(|| idx.search(q, 20).unwrap())).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(serial, parallel);
    }
}
