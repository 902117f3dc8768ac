//! Exhaustive dense retrieval over API documents and recall evaluation.

use crate::api_spec::ApiDocument;
use crate::dataset_io::SampleRecord;
use crate::provider::{cosine, Embedder, EmbeddingVector, ProviderError};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("index was built with '{index}' but the query embedder is '{query}'")]
    FingerprintMismatch { index: String, query: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Text embedded for a document: name, description, parameters and output.
pub fn doc_text(doc: &ApiDocument) -> String {
    let mut text = format!("{}: {}", doc.name, doc.description);
    if !doc.parameters.is_empty() {
        let params: Vec<String> = doc.parameters.iter().map(|p| format!("{} ({})", p.name, p.description)).collect();
        text.push_str(&format!(" Parameters: {}.", params.join("; ")));
    }
    match &doc.output_schema {
        serde_json::Value::Null => {}
        serde_json::Value::String(s) => text.push_str(&format!(" Output: {s}.")),
        other => text.push_str(&format!(" Output: {other}.")),
    }
    text
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    fingerprint: String,
}

const IDS_FILE: &str = "ids.json";
const VECTORS_FILE: &str = "vectors.bin";
const FINGERPRINT_FILE: &str = "fingerprint.txt";

impl DocIndex {
    pub fn build(corpus: &[ApiDocument], embedder: &dyn Embedder) -> Result<Self, RetrieverError> {
        if corpus.is_empty() {
            return Err(RetrieverError::EmptyCorpus);
        }
        let vectors = corpus.iter().map(|d| embedder.embed(&doc_text(d))).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { ids: corpus.iter().map(|d| d.name.clone()).collect(), vectors, fingerprint: embedder.fingerprint() })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Top `k` ids by cosine similarity, ties broken by id.
    pub fn search(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrieverError> {
        if k == 0 {
            return Err(RetrieverError::InvalidK);
        }
        if embedder.fingerprint() != self.fingerprint {
            return Err(RetrieverError::FingerprintMismatch {
                index: self.fingerprint.clone(),
                query: embedder.fingerprint(),
            });
        }
        let q = embedder.embed(query)?;
        let mut scored: Vec<(String, f64)> =
            self.ids.iter().zip(&self.vectors).map(|(id, v)| (id.clone(), cosine(&q, v))).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn search_ids(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<String>, RetrieverError> {
        Ok(self.search(embedder, query, k)?.into_iter().map(|(id, _)| id).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrieverError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(IDS_FILE), serde_json::to_string(&self.ids).expect("ids serialize"))?;
        let blob: Vec<u8> = self.vectors.iter().flat_map(|v| v.values().iter().flat_map(|x| x.to_le_bytes())).collect();
        std::fs::write(dir.join(VECTORS_FILE), blob)?;
        std::fs::write(dir.join(FINGERPRINT_FILE), &self.fingerprint)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RetrieverError> {
        let dir = dir.as_ref();
        let ids: Vec<String> = serde_json::from_str(&std::fs::read_to_string(dir.join(IDS_FILE))?)
            .map_err(|e| RetrieverError::Corrupt(e.to_string()))?;
        let blob = std::fs::read(dir.join(VECTORS_FILE))?;
        let fingerprint = std::fs::read_to_string(dir.join(FINGERPRINT_FILE))?;
        if ids.is_empty() || blob.len() % (8 * ids.len()) != 0 {
            return Err(RetrieverError::Corrupt(format!("{} bytes for {} ids", blob.len(), ids.len())));
        }
        let dim = blob.len() / 8 / ids.len();
        let values: Vec<f64> =
            blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunks are 8 bytes"))).collect();
        let vectors = values.chunks(dim).map(|c| EmbeddingVector::from_unit(c.to_vec())).collect();
        Ok(Self { ids, vectors, fingerprint })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecall {
    pub query: String,
    pub gold: Vec<String>,
    pub recall_at_gt: f64,
    pub recall_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub k: usize,
    /// Macro averages over samples with a non-empty gold path.
    pub recall_at_gt: f64,
    pub recall_at_k: f64,
    pub samples: Vec<SampleRecall>,
}

pub fn recall(retrieved: &[String], gold: &BTreeSet<String>) -> f64 {
    if gold.is_empty() {
        return 1.0;
    }
    let hits = retrieved.iter().collect::<BTreeSet<_>>().into_iter().filter(|id| gold.contains(*id)).count();
    hits as f64 / gold.len() as f64
}

/// recall@GT retrieves as many documents as the sample has distinct gold
/// functions; recall@k uses the fixed `k`.
pub fn recall_eval(
    index: &DocIndex,
    embedder: &dyn Embedder,
    samples: &[SampleRecord],
    k: usize,
) -> Result<RecallReport, RetrieverError> {
    let mut rows = Vec::new();
    for s in samples {
        let gold: BTreeSet<String> = s.gold_path().into_iter().collect();
        if gold.is_empty() {
            continue;
        }
        let ranked = index.search_ids(embedder, &s.query, k.max(gold.len()))?;
        rows.push(SampleRecall {
            query: s.query.clone(),
            recall_at_gt: recall(&ranked[..gold.len().min(ranked.len())], &gold),
            recall_at_k: recall(&ranked[..k.min(ranked.len())], &gold),
            gold: gold.into_iter().collect(),
        });
    }
    let mean = |f: fn(&SampleRecall) -> f64| {
        if rows.is_empty() { 0.0 } else { rows.iter().map(f).sum::<f64>() / rows.len() as f64 }
    };
    Ok(RecallReport { k, recall_at_gt: mean(|r| r.recall_at_gt), recall_at_k: mean(|r| r.recall_at_k), samples: rows })
}
