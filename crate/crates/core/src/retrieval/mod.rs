//! Exact inner-product reference search with pathology labels, used for
//! contrastive (with / without pathology) reference retrieval.

mod embed;
pub mod persist;

pub use embed::{embed_slice, BuiltinEmbedder, EmbeddingProvider, PrecomputedEmbeddings, BUILTIN_DIM};

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector has non-finite entries")]
    NonFinite,
    #[error("vector norm {0} is not 1 (tolerance 1e-5)")]
    NotUnitNorm(f64),
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no records to index")]
    EmptyIndex,
    #[error("duplicate record id {0}")]
    DuplicateRecord(u64),
    #[error("no candidates after filtering")]
    NoCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index has no records labelled has_pathology={0}")]
    MissingLabel(bool),
    #[error("cannot embed an empty slice")]
    EmptySlice,
    #[error("no precomputed embedding for slice {0}")]
    MissingEmbedding(usize),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed index: {0}")]
    Malformed(String),
}

/// A finite vector with unit L2 norm (within 1e-5).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(RetrievalError::NotUnitNorm(norm));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit length.
    pub fn normalized(values: Vec<f32>) -> Result<Self, RetrievalError> {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(RetrievalError::NotUnitNorm(norm));
        }
        Self::new(values.iter().map(|&v| (v as f64 / norm) as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Inner product, accumulated in f64 in index order.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRecord {
    pub record_id: u64,
    pub patient_id: String,
    pub slice_index: usize,
    pub has_pathology: bool,
    pub vector: EmbeddingVector,
    pub thumbnail_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub record_id: u64,
    pub score: f64,
    /// Position in [`ReferenceIndex::records`].
    pub position: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchFilter {
    pub has_pathology: Option<bool>,
    pub exclude_patient: Option<String>,
}

impl SearchFilter {
    pub fn label(has_pathology: bool) -> Self {
        Self {
            has_pathology: Some(has_pathology),
            exclude_patient: None,
        }
    }

    fn admits(&self, r: &ReferenceRecord) -> bool {
        self.has_pathology.is_none_or(|l| r.has_pathology == l)
            && self
                .exclude_patient
                .as_ref()
                .is_none_or(|p| &r.patient_id != p)
    }
}

/// Score descending, then record id ascending.
pub fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Flat exact index; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    dimension: usize,
    records: Vec<ReferenceRecord>,
    positives: usize,
    negatives: usize,
}

impl ReferenceIndex {
    pub fn build(records: impl IntoIterator<Item = ReferenceRecord>) -> Result<Self, RetrievalError> {
        let records: Vec<ReferenceRecord> = records.into_iter().collect();
        let first = records.first().ok_or(RetrievalError::EmptyIndex)?;
        let dimension = first.vector.dim();
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.dim() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dimension,
                    got: r.vector.dim(),
                });
            }
            if !ids.insert(r.record_id) {
                return Err(RetrievalError::DuplicateRecord(r.record_id));
            }
        }
        let positives = records.iter().filter(|r| r.has_pathology).count();
        let negatives = records.len() - positives;
        if positives == 0 || negatives == 0 {
            tracing::warn!(
                positives,
                negatives,
                "reference index lacks one label; contrastive retrieval will fail"
            );
        }
        Ok(Self {
            dimension,
            records,
            positives,
            negatives,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ReferenceRecord] {
        &self.records
    }

    /// `(with pathology, without pathology)` record counts.
    pub fn label_counts(&self) -> (usize, usize) {
        (self.positives, self.negatives)
    }

    pub fn get(&self, record_id: u64) -> Option<&ReferenceRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    /// Top-`k` records by inner product among those admitted by `filter`.
    pub fn knn_search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &SearchFilter,
    ) -> Result<Vec<Hit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.dim() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                got: query.dim(),
            });
        }
        let mut scored: Vec<Hit> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| filter.admits(r))
            .map(|(position, r)| Hit {
                record_id: r.record_id,
                score: query.dot(&r.vector),
                position,
            })
            .collect();
        if scored.is_empty() {
            return Err(RetrievalError::NoCandidates);
        }
        let cmp = |a: &Hit, b: &Hit| rank_order((a.score, a.record_id), (b.score, b.record_id));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored)
    }

    /// Nearest record with pathology and nearest without.
    pub fn contrastive_retrieve(
        &self,
        query: &EmbeddingVector,
        exclude_patient: Option<&str>,
    ) -> Result<(&ReferenceRecord, &ReferenceRecord), RetrievalError> {
        let pick = |label: bool| -> Result<&ReferenceRecord, RetrievalError> {
            let filter = SearchFilter {
                has_pathology: Some(label),
                exclude_patient: exclude_patient.map(str::to_string),
            };
            match self.knn_search(query, 1, &filter) {
                Ok(hits) => Ok(&self.records[hits[0].position]),
                Err(RetrievalError::NoCandidates) => Err(RetrievalError::MissingLabel(label)),
                Err(e) => Err(e),
            }
        };
        Ok((pick(true)?, pick(false)?))
    }
}
