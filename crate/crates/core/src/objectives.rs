//! In-batch InfoNCE over cosine similarities and the combined objective
//! `main + w·reze`.

use crate::debias::{reze_loss, reze_loss_grad};
use crate::error::{RezeError, Result};
use crate::matrix::{dot, norm, DenseMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    /// Weight on the regularization term.
    pub reg_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            reg_weight: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(RezeError::config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(RezeError::config(format!(
                "reg_weight {} must be non-negative",
                self.reg_weight
            )));
        }
        Ok(())
    }
}

/// Loss values and gradients for one batch.
///
/// `grad_anchor`/`grad_positive` are gradients of the combined loss with the
/// relation taken as `[anchor ‖ positive]`; `grad_relation` is the
/// unweighted gradient of the regularization term alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub main: T,
    pub reze: T,
    pub combined: T,
    pub grad_anchor: DenseMatrix<T>,
    pub grad_positive: DenseMatrix<T>,
    pub grad_relation: DenseMatrix<T>,
}

struct Similarities<T> {
    cos: DenseMatrix<T>,
    anchor_norms: Vec<T>,
    positive_norms: Vec<T>,
}

fn similarities<T: Real>(anchors: &DenseMatrix<T>, positives: &DenseMatrix<T>) -> Result<Similarities<T>> {
    if anchors.shape() != positives.shape() {
        return Err(RezeError::Mismatch { field: "anchor/positive batch shape" });
    }
    if anchors.rows() == 0 {
        return Err(RezeError::EmptySampleSet);
    }
    let row_norms = |m: &DenseMatrix<T>| -> Result<Vec<T>> {
        m.row_iter()
            .enumerate()
            .map(|(i, r)| {
                let n = norm(r);
                if n == T::zero() {
                    Err(RezeError::DegenerateRelation(i))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let anchor_norms = row_norms(anchors)?;
    let positive_norms = row_norms(positives)?;
    let b = anchors.rows();
    let mut cos = DenseMatrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            cos[(i, j)] = dot(anchors.row(i), positives.row(j)) / (anchor_norms[i] * positive_norms[j]);
        }
    }
    Ok(Similarities {
        cos,
        anchor_norms,
        positive_norms,
    })
}

/// Row-wise softmax of `cos/τ` (max-subtracted) and the per-row loss terms.
fn softmax_rows<T: Real>(cos: &DenseMatrix<T>, temperature: f64) -> (DenseMatrix<T>, T) {
    let b = cos.rows();
    let inv_t = T::one() / T::c(temperature);
    let mut probs = DenseMatrix::zeros(b, b);
    let mut loss = T::zero();
    for i in 0..b {
        let logits: Vec<T> = cos.row(i).iter().map(|&c| c * inv_t).collect();
        let max = logits.iter().fold(T::neg_infinity(), |m, &l| m.max(l));
        let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
        for (p, &l) in probs.row_mut(i).iter_mut().zip(&logits) {
            *p = (l - max).exp() / sum;
        }
        loss += (max - logits[i]) + sum.ln();
    }
    (probs, loss / T::from_count(b))
}

/// `−(1/B) Σ_i log softmax_j(cos(a_i, p_j)/τ)[i]`, denominator over all `j`.
pub fn info_nce<T: Real>(anchors: &DenseMatrix<T>, positives: &DenseMatrix<T>, temperature: f64) -> Result<T> {
    let sims = similarities(anchors, positives)?;
    Ok(softmax_rows(&sims.cos, temperature).1)
}

/// Exact gradients of [`info_nce`] with respect to every anchor and positive.
pub fn info_nce_grad<T: Real>(
    anchors: &DenseMatrix<T>,
    positives: &DenseMatrix<T>,
    temperature: f64,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let sims = similarities(anchors, positives)?;
    let (probs, _) = softmax_rows(&sims.cos, temperature);
    let (b, d) = anchors.shape();
    let scale = T::one() / (T::from_count(b) * T::c(temperature));
    let mut grad_a = DenseMatrix::zeros(b, d);
    let mut grad_p = DenseMatrix::zeros(b, d);
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { T::one() } else { T::zero() };
            // ∂L/∂cos_ij
            let g = (probs[(i, j)] - delta) * scale;
            if g == T::zero() {
                continue;
            }
            let c = sims.cos[(i, j)];
            let (na, np) = (sims.anchor_norms[i], sims.positive_norms[j]);
            let cross = g / (na * np);
            let self_a = g * c / (na * na);
            let self_p = g * c / (np * np);
            for k in 0..d {
                let (ak, pk) = (anchors[(i, k)], positives[(j, k)]);
                grad_a[(i, k)] += cross * pk - self_a * ak;
                grad_p[(j, k)] += cross * ak - self_p * pk;
            }
        }
    }
    Ok((grad_a, grad_p))
}

pub fn combined<T: Real>(main: T, reze: T, reg_weight: f64) -> T {
    main + T::c(reg_weight) * reze
}

/// Concatenates two equally shaped batches column-wise.
pub fn concat_halves<T: Real>(left: &DenseMatrix<T>, right: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if left.shape() != right.shape() {
        return Err(RezeError::Mismatch { field: "half shapes" });
    }
    let (b, d) = left.shape();
    let mut out = DenseMatrix::zeros(b, 2 * d);
    for i in 0..b {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(left.row(i));
        row[d..].copy_from_slice(right.row(i));
    }
    Ok(out)
}

/// Full loss and gradients for a batch of current embeddings against
/// debiased relation targets.
pub fn evaluate<T: Real>(
    anchors: &DenseMatrix<T>,
    positives: &DenseMatrix<T>,
    targets: &DenseMatrix<T>,
    config: &ObjectiveConfig,
) -> Result<LossReport<T>> {
    config.validate()?;
    let main = info_nce(anchors, positives, config.temperature)?;
    let (mut grad_anchor, mut grad_positive) = info_nce_grad(anchors, positives, config.temperature)?;
    let relations = concat_halves(anchors, positives)?;
    let reze = reze_loss(&relations, targets)?;
    let grad_relation = reze_loss_grad(&relations, targets)?;
    let w = T::c(config.reg_weight);
    let d = anchors.cols();
    for i in 0..anchors.rows() {
        let gr = grad_relation.row(i);
        for (g, &x) in grad_anchor.row_mut(i).iter_mut().zip(&gr[..d]) {
            *g += w * x;
        }
        for (g, &x) in grad_positive.row_mut(i).iter_mut().zip(&gr[d..]) {
            *g += w * x;
        }
    }
    let total = combined(main, reze, config.reg_weight);
    if !total.is_finite() {
        return Err(RezeError::NonFiniteLoss(0));
    }
    Ok(LossReport {
        main,
        reze,
        combined: total,
        grad_anchor,
        grad_positive,
        grad_relation,
    })
}
