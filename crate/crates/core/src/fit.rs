//! Offline fitting: eigenspace statistics of per-source means, active
//! dimension selection, robust thresholds, and per-source shrink factors.
//!
//! The fitted [`RezeMatrix`] is immutable. Per source `s` and eigen-dimension
//! `j` it holds a factor `α_{s,j}`; the debiasing transform multiplies the
//! `j`-th eigen-coordinate of a source-`s` vector by that factor.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::eigenspace::{covariance, project_rows, symmetric_evd, EigenBasis};
use crate::error::{RezeError, Result};
use crate::matrix::DenseMatrix;
use crate::relations::{global_center, RelationSet};
use crate::robust::{mean, median, median_abs_deviation};
use crate::scalar::Real;

/// How the per-dimension reference point over source means is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

/// Denominator used by the shrink-factor update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShrinkMode {
    /// `|μ| + ε`.
    #[default]
    Literal,
    /// `μ` itself when `|μ| > ε`, so negative means also contract toward the
    /// band; falls back to the literal form near zero.
    Signed,
}

macro_rules! keyword_enum {
    ($ty:ty, $($variant:ident => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = RezeError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(RezeError::config(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Aggregation, Median => "median", Mean => "mean");
keyword_enum!(ShrinkMode, Literal => "literal", Signed => "signed");

/// Fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Cumulative explained-variance ratio selecting the active dimensions.
    pub rho: f64,
    /// Scale on both the global threshold's MAD term and the band widths.
    pub gamma: f64,
    /// Shrink strength.
    pub eta: f64,
    pub epsilon: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub aggregation: Aggregation,
    pub shrink_mode: ShrinkMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho: 0.99,
            gamma: 1.0,
            eta: 0.7,
            epsilon: 1e-8,
            clip_lo: 0.0,
            clip_hi: 2.0,
            aggregation: Aggregation::Median,
            shrink_mode: ShrinkMode::Literal,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rho,
            self.gamma,
            self.eta,
            self.epsilon,
            self.clip_lo,
            self.clip_hi,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RezeError::config("fit parameters must be finite"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(RezeError::config(format!("rho {} outside (0, 1]", self.rho)));
        }
        if self.gamma <= 0.0 {
            return Err(RezeError::config(format!("gamma {} must be positive", self.gamma)));
        }
        if self.eta < 0.0 {
            return Err(RezeError::config(format!("eta {} must be non-negative", self.eta)));
        }
        if self.epsilon <= 0.0 {
            return Err(RezeError::config(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.clip_lo >= 0.0 && self.clip_lo <= 1.0 && 1.0 <= self.clip_hi) {
            return Err(RezeError::config(format!(
                "clip bounds [{}, {}] must satisfy 0 <= lo <= 1 <= hi",
                self.clip_lo, self.clip_hi
            )));
        }
        Ok(())
    }
}

/// Per-source eigenspace means and the statistics derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStats<T> {
    /// `S × D` source means.
    pub means: DenseMatrix<T>,
    /// Per-dimension reference point (median or mean of the source means).
    pub reference: Vec<T>,
    /// Task-variant score per dimension.
    pub scores: Vec<T>,
    /// Per-dimension band half-width around the reference.
    pub bands: Vec<T>,
}

impl<T: Real> SourceStats<T> {
    pub fn compute(
        means: DenseMatrix<T>,
        aggregation: Aggregation,
        gamma: f64,
    ) -> Result<Self> {
        let reference = reference_vector(&means, aggregation)?;
        let scores = task_variant_scores(&means, &reference)?;
        let bands = band_widths(&means, &reference, gamma)?;
        Ok(Self {
            means,
            reference,
            scores,
            bands,
        })
    }

    /// `μ_{s,j} − m_j`.
    pub fn deviation(&self, s: usize, j: usize) -> T {
        self.means[(s, j)] - self.reference[j]
    }
}

/// The fitted artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct RezeMatrix<T> {
    /// Global mean of the pooled relations.
    pub mean: Vec<T>,
    pub basis: EigenBasis<T>,
    /// Number of leading (active) eigen-dimensions.
    pub active: usize,
    /// Global threshold on task-variant scores.
    pub threshold: T,
    /// `S × D` shrink factors.
    pub alphas: DenseMatrix<T>,
    pub config: FitConfig,
    /// Whether relation halves were unit-normalized before fitting.
    pub normalize: bool,
    pub source_names: Vec<String>,
    /// Present on freshly fitted matrices; not persisted.
    pub stats: Option<SourceStats<T>>,
    /// Digest of the input the matrix was fitted on, when known.
    pub input_digest: Option<String>,
    pub provenance: Option<String>,
}

impl<T: Real> RezeMatrix<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn num_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn alpha_row(&self, source: usize) -> Result<&[T]> {
        if source >= self.num_sources() {
            return Err(RezeError::UnknownSource {
                id: source,
                sources: self.num_sources(),
            });
        }
        Ok(self.alphas.row(source))
    }

    /// Dimensions passing the global gate (`j < k` and `v_j > θ`). Needs the
    /// retained statistics.
    pub fn flagged_dims(&self) -> Option<Vec<usize>> {
        let stats = self.stats.as_ref()?;
        Some(flagged_dims(&stats.scores, self.active, self.threshold))
    }

    /// Number of `(s, j)` entries whose factor differs from one.
    pub fn shrunk_entries(&self) -> usize {
        self.alphas.as_slice().iter().filter(|&&a| a != T::one()).count()
    }

    /// Checks every structural invariant of the artifact.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.dim();
        let s = self.num_sources();
        if self.basis.dim() != d {
            return Err(RezeError::DimensionMismatch {
                context: "basis vs mean",
                expected: d,
                found: self.basis.dim(),
            });
        }
        if self.alphas.shape() != (s, d) {
            return Err(RezeError::Mismatch { field: "alpha matrix shape" });
        }
        if self.active < 1 || self.active > d {
            return Err(RezeError::config(format!(
                "active count {} outside [1, {d}]",
                self.active
            )));
        }
        if !self.threshold.is_finite() || self.mean.iter().any(|v| !v.is_finite()) {
            return Err(RezeError::config("non-finite mean or threshold"));
        }
        let lo = T::c(self.config.clip_lo);
        let hi = T::c(self.config.clip_hi);
        for src in 0..s {
            for (j, &a) in self.alphas.row(src).iter().enumerate() {
                if !(a >= lo && a <= hi) {
                    return Err(RezeError::config(format!(
                        "alpha[{src}][{j}] = {a} outside clip bounds [{lo}, {hi}]"
                    )));
                }
                if j >= self.active && a != T::one() {
                    return Err(RezeError::config(format!(
                        "alpha[{src}][{j}] = {a} on an inactive dimension"
                    )));
                }
            }
        }
        let ortho = self.basis.orthonormality_error();
        if ortho > T::tol(1e-8) {
            return Err(RezeError::config(format!(
                "basis not orthonormal ({ortho:e})"
            )));
        }
        Ok(())
    }
}

pub(crate) fn flagged_dims<T: Real>(scores: &[T], active: usize, threshold: T) -> Vec<usize> {
    scores
        .iter()
        .take(active)
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Mean eigen-coordinates of each source.
pub fn source_means<T: Real>(
    z: &DenseMatrix<T>,
    source_ids: &[usize],
    source_names: &[String],
) -> Result<DenseMatrix<T>> {
    if source_ids.len() != z.rows() {
        return Err(RezeError::DimensionMismatch {
            context: "source_means ids",
            expected: z.rows(),
            found: source_ids.len(),
        });
    }
    let s = source_names.len();
    let mut sums = DenseMatrix::zeros(s, z.cols());
    let mut counts = vec![0usize; s];
    for (row, &id) in z.row_iter().zip(source_ids) {
        if id >= s {
            return Err(RezeError::UnknownSource { id, sources: s });
        }
        counts[id] += 1;
        for (acc, &v) in sums.row_mut(id).iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (src, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(RezeError::EmptySource(source_names[src].clone()));
        }
        let n = T::from_count(count);
        sums.row_mut(src).iter_mut().for_each(|v| *v /= n);
    }
    Ok(sums)
}

/// Component-wise median (or mean) over the rows of `means`.
pub fn reference_vector<T: Real>(
    means: &DenseMatrix<T>,
    aggregation: Aggregation,
) -> Result<Vec<T>> {
    if means.rows() == 0 {
        return Err(RezeError::EmptySampleSet);
    }
    Ok((0..means.cols())
        .map(|j| {
            let col = means.column(j);
            match aggregation {
                Aggregation::Median => median(&col),
                Aggregation::Mean => mean(&col),
            }
            .expect("non-empty column")
        })
        .collect())
}

fn check_reference<T: Real>(means: &DenseMatrix<T>, reference: &[T]) -> Result<()> {
    if means.cols() != reference.len() {
        return Err(RezeError::DimensionMismatch {
            context: "reference vector",
            expected: means.cols(),
            found: reference.len(),
        });
    }
    if means.rows() == 0 {
        return Err(RezeError::EmptySampleSet);
    }
    Ok(())
}

/// `v_j = (1/S) Σ_s (μ_{s,j} − m_j)²`.
pub fn task_variant_scores<T: Real>(means: &DenseMatrix<T>, reference: &[T]) -> Result<Vec<T>> {
    check_reference(means, reference)?;
    let s = T::from_count(means.rows());
    Ok(reference
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            (0..means.rows())
                .map(|src| {
                    let d = means[(src, j)] - m;
                    d * d
                })
                .sum::<T>()
                / s
        })
        .collect())
}

/// Smallest `k` whose leading eigenvalues reach the cumulative ratio `rho`.
pub fn select_active<T: Real>(eigenvalues: &[T], rho: f64) -> Result<usize> {
    let total: T = eigenvalues.iter().copied().sum();
    if total <= T::zero() || !total.is_finite() {
        return Err(RezeError::DegenerateCovariance);
    }
    let target = T::c(rho);
    let mut cumulative = T::zero();
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        cumulative += lambda;
        if cumulative / total >= target {
            return Ok(j + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// `θ = median(v_{<k}) + γ·(MAD(v_{<k}) + ε)`.
pub fn global_threshold<T: Real>(scores: &[T], active: usize, gamma: f64, epsilon: f64) -> Result<T> {
    if active == 0 || active > scores.len() {
        return Err(RezeError::config(format!(
            "active count {active} outside [1, {}]",
            scores.len()
        )));
    }
    let head = &scores[..active];
    let v_median = median(head).expect("non-empty");
    let mad = median_abs_deviation(head).expect("non-empty");
    Ok(v_median + T::c(gamma) * (mad + T::c(epsilon)))
}

/// `θ_j = γ·(1/S) Σ_s |μ_{s,j} − m_j|`: a mean absolute deviation around the
/// reference point.
pub fn band_widths<T: Real>(means: &DenseMatrix<T>, reference: &[T], gamma: f64) -> Result<Vec<T>> {
    check_reference(means, reference)?;
    let s = T::from_count(means.rows());
    let g = T::c(gamma);
    Ok(reference
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            g * (0..means.rows())
                .map(|src| (means[(src, j)] - m).abs())
                .sum::<T>()
                / s
        })
        .collect())
}

fn signum_or_zero<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Shrink factors for every source and dimension.
///
/// Entries failing either gate stay exactly one. Gated entries move the
/// source mean toward the nearer band edge `m_j ± θ_j`, then are clamped to
/// the configured bounds.
pub fn shrink_factors<T: Real>(
    stats: &SourceStats<T>,
    active: usize,
    threshold: T,
    config: &FitConfig,
) -> DenseMatrix<T> {
    let (s, d) = stats.means.shape();
    let mut alphas = DenseMatrix::zeros(s, d).map(|_| T::one());
    let eta = T::c(config.eta);
    let eps = T::c(config.epsilon);
    let lo = T::c(config.clip_lo);
    let hi = T::c(config.clip_hi);
    for j in flagged_dims(&stats.scores, active, threshold) {
        let band = stats.bands[j];
        let m = stats.reference[j];
        for src in 0..s {
            let mu = stats.means[(src, j)];
            let delta = mu - m;
            if delta.abs() < band {
                continue;
            }
            let denom = match config.shrink_mode {
                ShrinkMode::Signed if mu.abs() > eps => mu,
                _ => mu.abs() + eps,
            };
            let target = m + signum_or_zero(delta) * band;
            let alpha = T::one() + eta * (target - mu) / denom;
            alphas[(src, j)] = alpha.max(lo).min(hi);
        }
    }
    alphas
}

/// Runs the complete offline fit on pooled relations.
pub fn fit<T: Real>(pooled: &RelationSet<T>, config: &FitConfig) -> Result<RezeMatrix<T>> {
    config.validate()?;
    if pooled.num_sources() < 2 {
        return Err(RezeError::config(format!(
            "fitting needs at least 2 sources, got {}",
            pooled.num_sources()
        )));
    }
    if pooled.len() < 2 {
        return Err(RezeError::config(format!(
            "fitting needs at least 2 samples, got {}",
            pooled.len()
        )));
    }
    if pooled.len() < pooled.dim() {
        warn!("covariance is rank-deficient; trailing eigenvalues clamped to zero");
    }
    let centered = global_center(pooled)?;
    let cov = covariance(&centered.centered)?;
    let basis = symmetric_evd(&cov)?;
    let zero = vec![T::zero(); pooled.dim()];
    let z = project_rows(&centered.centered, &zero, &basis)?;
    let means = source_means(&z, &pooled.source_ids, &pooled.source_names)?;
    let stats = SourceStats::compute(means, config.aggregation, config.gamma)?;
    let active = select_active(&basis.values, config.rho)?;
    let threshold = global_threshold(&stats.scores, active, config.gamma, config.epsilon)?;
    let alphas = shrink_factors(&stats, active, threshold, config);
    Ok(RezeMatrix {
        mean: centered.mean,
        basis,
        active,
        threshold,
        alphas,
        config: *config,
        normalize: pooled.normalized,
        source_names: pooled.source_names.clone(),
        stats: Some(stats),
        input_digest: None,
        provenance: None,
    })
}
