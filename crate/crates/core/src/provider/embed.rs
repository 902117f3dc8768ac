use super::ProviderError;
use serde::{Deserialize, Serialize};

pub const TRIGRAM_BUCKETS: usize = 64;

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `raw`; `None` for an all-zero or non-finite vector.
    pub fn normalized(raw: Vec<f64>) -> Option<Self> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(raw.into_iter().map(|x| x / norm).collect()))
    }

    /// Wraps values that are already unit length (e.g. read back from disk).
    pub fn from_unit(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    debug_assert_eq!(a.dimension(), b.dimension());
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    /// Identifies the model; indexes built with one fingerprint refuse queries
    /// embedded under another.
    fn fingerprint(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Offline embedder: lowercase character trigrams of `" text "`, each hashed
/// with 64-bit FNV-1a into one of 64 buckets, counts L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl TrigramEmbedder {
    pub fn bucket(trigram: &str) -> usize {
        (fnv1a(trigram.as_bytes()) % TRIGRAM_BUCKETS as u64) as usize
    }

    pub fn counts(text: &str) -> [f64; TRIGRAM_BUCKETS] {
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        let mut counts = [0.0; TRIGRAM_BUCKETS];
        for window in padded.windows(3) {
            let gram: String = window.iter().collect();
            counts[Self::bucket(&gram)] += 1.0;
        }
        counts
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for TrigramEmbedder {
    fn fingerprint(&self) -> String {
        format!("trigram-fnv1a-{TRIGRAM_BUCKETS}")
    }

    fn dimension(&self) -> usize {
        TRIGRAM_BUCKETS
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        Ok(EmbeddingVector::normalized(Self::counts(text).to_vec())
            .expect("padded text always yields at least one trigram"))
    }
}
