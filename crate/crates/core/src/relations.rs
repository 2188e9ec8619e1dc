//! Relation vectors `[anchor ‖ positive]`, pooling across sources, and the
//! global centering statistics.

use log::warn;

use crate::error::{RezeError, Result};
use crate::matrix::{norm, DenseMatrix};
use crate::scalar::Real;

/// Fixed-width vectors tagged by source. Always held in 64-bit precision;
/// the on-disk form is 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    vectors: DenseMatrix<f64>,
    source_ids: Vec<usize>,
    source_names: Vec<String>,
}

impl EmbeddingDump {
    pub fn new(
        vectors: DenseMatrix<f64>,
        source_ids: Vec<usize>,
        source_names: Vec<String>,
    ) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(RezeError::EmptySampleSet);
        }
        if source_ids.len() != vectors.rows() {
            return Err(RezeError::DimensionMismatch {
                context: "dump source ids",
                expected: vectors.rows(),
                found: source_ids.len(),
            });
        }
        if let Some(&id) = source_ids.iter().find(|&&id| id >= source_names.len()) {
            return Err(RezeError::UnknownSource {
                id,
                sources: source_names.len(),
            });
        }
        if let Some(i) = vectors.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(RezeError::NonFinite(i));
        }
        Ok(Self {
            vectors,
            source_ids,
            source_names,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn num_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn vectors(&self) -> &DenseMatrix<f64> {
        &self.vectors
    }

    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    /// Keeps the rows listed in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.vectors.row(i)).collect();
        let ids = indices.iter().map(|&i| self.source_ids[i]).collect();
        Self::new(DenseMatrix::from_rows(&rows)?, ids, self.source_names.clone())
    }
}

/// Pooled relation vectors with their per-row source association.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSet<T> {
    pub relations: DenseMatrix<T>,
    pub source_ids: Vec<usize>,
    pub source_names: Vec<String>,
    pub normalized: bool,
}

impl<T: Real> RelationSet<T> {
    pub fn new(
        relations: DenseMatrix<T>,
        source_ids: Vec<usize>,
        source_names: Vec<String>,
        normalized: bool,
    ) -> Result<Self> {
        if !relations.cols().is_multiple_of(2) {
            return Err(RezeError::config(format!(
                "relation width {} is odd",
                relations.cols()
            )));
        }
        if source_ids.len() != relations.rows() {
            return Err(RezeError::DimensionMismatch {
                context: "relation source ids",
                expected: relations.rows(),
                found: source_ids.len(),
            });
        }
        if let Some(&id) = source_ids.iter().find(|&&id| id >= source_names.len()) {
            return Err(RezeError::UnknownSource {
                id,
                sources: source_names.len(),
            });
        }
        Ok(Self {
            relations,
            source_ids,
            source_names,
            normalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.relations.cols()
    }

    pub fn len(&self) -> usize {
        self.relations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_sources(&self) -> usize {
        self.source_names.len()
    }

    /// Same rows with a different payload matrix (e.g. after debiasing).
    pub fn with_relations(&self, relations: DenseMatrix<T>) -> Result<Self> {
        if relations.shape() != self.relations.shape() {
            return Err(RezeError::Mismatch { field: "relation shape" });
        }
        Ok(Self {
            relations,
            ..self.clone()
        })
    }
}

/// Global mean and the centered rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredRelations<T> {
    pub mean: Vec<T>,
    pub centered: DenseMatrix<T>,
}

/// Scales `v` to unit length in place; returns false for a zero vector,
/// which is left untouched.
pub fn normalize_in_place<T: Real>(v: &mut [T]) -> bool {
    let n = norm(v);
    if n == T::zero() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Concatenates anchors and positives row by row, optionally unit-normalizing
/// each half first.
pub fn build_relations<T: Real>(
    anchors: &EmbeddingDump,
    positives: &EmbeddingDump,
    normalize: bool,
) -> Result<RelationSet<T>> {
    if anchors.len() != positives.len() {
        return Err(RezeError::Mismatch { field: "row count N" });
    }
    if anchors.dim() != positives.dim() {
        return Err(RezeError::Mismatch { field: "dimension d" });
    }
    if anchors.source_ids() != positives.source_ids() {
        return Err(RezeError::Mismatch { field: "source_ids" });
    }
    if anchors.source_names() != positives.source_names() {
        return Err(RezeError::Mismatch { field: "source_names" });
    }
    let d = anchors.dim();
    let mut out = DenseMatrix::zeros(anchors.len(), 2 * d);
    let mut zero_rows = 0usize;
    for i in 0..anchors.len() {
        let row = out.row_mut(i);
        for (dst, &src) in row[..d].iter_mut().zip(anchors.vectors().row(i)) {
            *dst = T::c(src);
        }
        for (dst, &src) in row[d..].iter_mut().zip(positives.vectors().row(i)) {
            *dst = T::c(src);
        }
        if normalize {
            let (a, p) = row.split_at_mut(d);
            zero_rows += usize::from(!normalize_in_place(a));
            zero_rows += usize::from(!normalize_in_place(p));
        }
    }
    if zero_rows > 0 {
        warn!("{zero_rows} zero embedding vector(s) left unnormalized");
    }
    RelationSet::new(
        out,
        anchors.source_ids().to_vec(),
        anchors.source_names().to_vec(),
        normalize,
    )
}

/// Concatenates relation sets in input order. Source ids are offset so each
/// input keeps its own block of the global source table.
pub fn pool_sources<T: Real>(per_source: &[RelationSet<T>]) -> Result<RelationSet<T>> {
    let first = per_source.first().ok_or(RezeError::EmptySampleSet)?;
    let dim = first.dim();
    let normalized = first.normalized;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut names = Vec::new();
    for set in per_source {
        if set.dim() != dim {
            return Err(RezeError::DimensionMismatch {
                context: "pool_sources",
                expected: dim,
                found: set.dim(),
            });
        }
        if set.normalized != normalized {
            return Err(RezeError::Mismatch { field: "normalized flag" });
        }
        let offset = names.len();
        rows.extend_from_slice(set.relations.as_slice());
        ids.extend(set.source_ids.iter().map(|&s| s + offset));
        names.extend(set.source_names.iter().cloned());
    }
    if names.len() < 2 {
        warn!("pooling a single source: between-source statistics will be trivial");
    }
    let n = ids.len();
    RelationSet::new(DenseMatrix::from_vec(n, dim, rows)?, ids, names, normalized)
}

/// Subtracts the mean over all pooled rows (not per source).
pub fn global_center<T: Real>(pooled: &RelationSet<T>) -> Result<CenteredRelations<T>> {
    if pooled.is_empty() {
        return Err(RezeError::EmptySampleSet);
    }
    let mean = pooled.relations.column_means();
    let mut centered = pooled.relations.clone();
    for i in 0..centered.rows() {
        for (v, &m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Ok(CenteredRelations { mean, centered })
}
