//! Debiasing reference relations with a fitted [`RezeMatrix`] and the cosine
//! regularization loss against those debiased targets.

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{RezeError, Result};
use crate::fit::RezeMatrix;
use crate::matrix::{dot, norm, DenseMatrix};
use crate::relations::RelationSet;
use crate::scalar::Real;

/// `W·A_s·Wᵀ·(r0 − u) + u`.
pub fn debias<T: Real>(r0: &[T], source: usize, rm: &RezeMatrix<T>) -> Result<Vec<T>> {
    let alphas = rm.alpha_row(source)?;
    if r0.len() != rm.dim() {
        return Err(RezeError::DimensionMismatch {
            context: "debias",
            expected: rm.dim(),
            found: r0.len(),
        });
    }
    let centered: Vec<T> = r0.iter().zip(&rm.mean).map(|(&r, &u)| r - u).collect();
    let mut z = rm.basis.vectors.tr_mul_vec(&centered)?;
    z.iter_mut().zip(alphas).for_each(|(c, &a)| *c *= a);
    let mut out = rm.basis.vectors.mul_vec(&z)?;
    out.iter_mut().zip(&rm.mean).for_each(|(o, &u)| *o += u);
    Ok(out)
}

/// Row-wise [`debias`] of a relation set.
pub fn debias_batch<T: Real>(relations: &RelationSet<T>, rm: &RezeMatrix<T>) -> Result<DenseMatrix<T>> {
    if relations.dim() != rm.dim() {
        return Err(RezeError::DimensionMismatch {
            context: "debias_batch",
            expected: rm.dim(),
            found: relations.dim(),
        });
    }
    let mut out = DenseMatrix::zeros(relations.len(), rm.dim());
    for (i, (row, &src)) in relations
        .relations
        .row_iter()
        .zip(&relations.source_ids)
        .enumerate()
    {
        out.row_mut(i).copy_from_slice(&debias(row, src, rm)?);
    }
    Ok(out)
}

/// Content digest of a relation set (values, source ids, flag).
pub fn relation_digest<T: Real>(relations: &RelationSet<T>) -> String {
    let mut h = Sha256::new();
    h.update((relations.len() as u64).to_le_bytes());
    h.update((relations.dim() as u64).to_le_bytes());
    for v in relations.relations.as_slice() {
        h.update(v.as_f64().to_le_bytes());
    }
    for &s in &relations.source_ids {
        h.update((s as u64).to_le_bytes());
    }
    h.update([u8::from(relations.normalized)]);
    hex::encode(h.finalize())
}

/// Debiased targets for one fitted matrix, computed once per distinct input.
///
/// The reference model is frozen, so its debiased relations never change over
/// a training run.
#[derive(Debug)]
pub struct DebiasCache<'a, T> {
    rm: &'a RezeMatrix<T>,
    entries: HashMap<String, Arc<DenseMatrix<T>>>,
}

impl<'a, T: Real> DebiasCache<'a, T> {
    pub fn new(rm: &'a RezeMatrix<T>) -> Self {
        Self {
            rm,
            entries: HashMap::new(),
        }
    }

    pub fn targets(&mut self, relations: &RelationSet<T>) -> Result<Arc<DenseMatrix<T>>> {
        let key = relation_digest(relations);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let targets = Arc::new(debias_batch(relations, self.rm)?);
        self.entries.insert(key, Arc::clone(&targets));
        Ok(targets)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_pair<T: Real>(r: &DenseMatrix<T>, r_hat: &DenseMatrix<T>) -> Result<()> {
    if r.shape() != r_hat.shape() {
        return Err(RezeError::Mismatch { field: "relation batch shape" });
    }
    if r.rows() == 0 {
        return Err(RezeError::EmptySampleSet);
    }
    Ok(())
}

struct CosineTerms<T> {
    cos: T,
    norm_r: T,
    norm_hat: T,
}

fn cosine_terms<T: Real>(i: usize, r: &[T], r_hat: &[T]) -> Result<CosineTerms<T>> {
    let norm_r = norm(r);
    let norm_hat = norm(r_hat);
    if norm_r == T::zero() || norm_hat == T::zero() {
        return Err(RezeError::DegenerateRelation(i));
    }
    Ok(CosineTerms {
        cos: dot(r, r_hat) / (norm_r * norm_hat),
        norm_r,
        norm_hat,
    })
}

/// Mean cosine dissimilarity `(1/B) Σ (1 − cos(r_i, r̂_i))`, in `[0, 2]`.
pub fn reze_loss<T: Real>(r: &DenseMatrix<T>, r_hat: &DenseMatrix<T>) -> Result<T> {
    check_pair(r, r_hat)?;
    let mut total = T::zero();
    for (i, (a, b)) in r.row_iter().zip(r_hat.row_iter()).enumerate() {
        total += T::one() - cosine_terms(i, a, b)?.cos;
    }
    Ok(total / T::from_count(r.rows()))
}

/// Gradient of [`reze_loss`] with respect to `r` only; the targets are
/// constants.
pub fn reze_loss_grad<T: Real>(r: &DenseMatrix<T>, r_hat: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    check_pair(r, r_hat)?;
    let scale = T::one() / T::from_count(r.rows());
    let mut grad = DenseMatrix::zeros(r.rows(), r.cols());
    for (i, (a, b)) in r.row_iter().zip(r_hat.row_iter()).enumerate() {
        let t = cosine_terms(i, a, b)?;
        let k_hat = T::one() / (t.norm_r * t.norm_hat);
        let k_r = t.cos / (t.norm_r * t.norm_r);
        for ((g, &ri), &hi) in grad.row_mut(i).iter_mut().zip(a).zip(b) {
            *g = -scale * (hi * k_hat - ri * k_r);
        }
    }
    Ok(grad)
}
