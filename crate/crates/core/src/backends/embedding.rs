use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::BackendError;
use crate::text;

/// A unit-norm embedding vector.
///
/// Serialized sparsely as `{"dim": d, "nz": [[index, value], ...]}` so trace
/// files stay small for the hashed mock embeddings; dense vectors simply list
/// every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length. Rejects zero and non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::SchemaViolation(
                "embedding has non-finite entries".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(BackendError::EmptyContent);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps values that are already unit-norm (normalizes anyway if not).
    pub fn unit(values: Vec<f64>) -> Self {
        Self::new(values).expect("unit() needs a non-zero finite vector")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; `None` on dimension mismatch.
    pub fn cosine(&self, other: &Embedding) -> Option<f64> {
        if self.dim() != other.dim() {
            return None;
        }
        let denom = self.norm() * other.norm();
        Some(self.dot(other) / denom)
    }

    /// Weighted mean of embeddings, re-normalized. `None` when the inputs are
    /// empty, mixed-dimension, or cancel to zero.
    pub fn weighted_mean<'a>(items: impl IntoIterator<Item = (f64, &'a Embedding)>) -> Option<Self> {
        let mut acc: Option<Vec<f64>> = None;
        for (w, e) in items {
            let a = acc.get_or_insert_with(|| vec![0.0; e.dim()]);
            if a.len() != e.dim() {
                return None;
            }
            for (x, v) in a.iter_mut().zip(e.values()) {
                *x += w * v;
            }
        }
        acc.and_then(|a| Self::new(a).ok())
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Sparse<'a> {
            dim: usize,
            nz: &'a [(usize, f64)],
        }
        let nz: Vec<(usize, f64)> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        Sparse { dim: self.0.len(), nz: &nz }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Sparse {
            dim: usize,
            nz: Vec<(usize, f64)>,
        }
        let raw = Sparse::deserialize(d)?;
        let mut v = vec![0.0; raw.dim];
        for (i, x) in raw.nz {
            if i >= raw.dim {
                return Err(D::Error::custom(format!("index {i} out of range {}", raw.dim)));
            }
            v[i] = x;
        }
        Ok(Embedding(v))
    }
}

/// Non-zero coordinates each token occupies.
const TOKEN_SUPPORT: usize = 8;

/// The mock embedder: signed sparse feature hashing over content tokens.
///
/// Each token hashes (SHA-256 keyed by `seed`) to `min(8, dim)` distinct
/// coordinates with ±1 signs; a text is the term-frequency weighted sum of its
/// token vectors, normalized. Equal strings map to equal vectors, and strings
/// with no tokens in common are near-orthogonal.
pub fn sparse_hash_embedding(content: &str, dim: usize, seed: u64) -> Result<Embedding, BackendError> {
    let toks = text::content_tokens(content);
    if toks.is_empty() {
        return Err(BackendError::EmptyContent);
    }
    let support = TOKEN_SUPPORT.min(dim);
    let mut acc = vec![0.0; dim];
    for tok in &toks {
        for (idx, sign) in token_coordinates(tok, dim, support, seed) {
            acc[idx] += sign;
        }
    }
    Embedding::new(acc)
}

fn token_coordinates(token: &str, dim: usize, support: usize, seed: u64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(support);
    let mut round: u32 = 0;
    while out.len() < support {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(round.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        for chunk in digest.chunks_exact(4) {
            if out.len() == support {
                break;
            }
            let word = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            let idx = (word >> 1) as usize % dim;
            if out.iter().any(|(i, _)| *i == idx) {
                continue;
            }
            let sign = if word & 1 == 0 { 1.0 } else { -1.0 };
            out.push((idx, sign));
        }
        round += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let a = sparse_hash_embedding("Stadium crowd cheers the striker", 64, 7).unwrap();
        let b = sparse_hash_embedding("Stadium crowd cheers the striker", 64, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((a.cosine(&b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = sparse_hash_embedding("ballot", 64, 1).unwrap();
        let b = sparse_hash_embedding("ballot", 64, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn small_dimensions_fill_support() {
        let e = sparse_hash_embedding("x", 8, 3).unwrap();
        assert_eq!(e.values().iter().filter(|v| **v != 0.0).count(), 8);
    }

    #[test]
    fn empty_content_is_rejected() {
        assert_eq!(sparse_hash_embedding("  ... ", 32, 0), Err(BackendError::EmptyContent));
    }

    #[test]
    fn sparse_serde_round_trip() {
        let e = sparse_hash_embedding("federal reserve rates", 128, 11).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        let back: Embedding = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<Embedding>(r#"{"dim":2,"nz":[[5,1.0]]}"#).is_err());
    }

    #[test]
    fn weighted_mean_renormalizes() {
        let a = Embedding::unit(vec![1.0, 0.0]);
        let b = Embedding::unit(vec![0.0, 1.0]);
        let m = Embedding::weighted_mean([(1.0, &a), (1.0, &b)]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((m.values()[0] - h).abs() < 1e-12 && (m.values()[1] - h).abs() < 1e-12);
        assert!(Embedding::weighted_mean(std::iter::empty()).is_none());
    }
}
