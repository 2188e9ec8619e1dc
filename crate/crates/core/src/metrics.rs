//! Analysis tooling: IsoScore, before/after dispersion reports in a fitted
//! eigenbasis, the whitening baseline, and 2-D PCA coordinates.

use std::fmt::Write as _;

use crate::eigenspace::{covariance, project_rows, symmetric_evd};
use crate::error::{RezeError, Result};
use crate::fit::{flagged_dims, source_means, RezeMatrix, SourceStats};
use crate::matrix::DenseMatrix;
use crate::relations::{global_center, RelationSet};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropyResult<T> {
    pub score: T,
    pub dim: usize,
    pub samples: usize,
}

fn centered_covariance<T: Real>(x: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>, DenseMatrix<T>)> {
    let mean = x.column_means();
    let mut centered = x.clone();
    for i in 0..centered.rows() {
        for (v, &m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = covariance(&centered)?;
    Ok((mean, centered, cov))
}

fn require_points<T: Real>(x: &DenseMatrix<T>, what: &str) -> Result<()> {
    if x.rows() < 2 || x.cols() < 2 {
        return Err(RezeError::config(format!(
            "{what} needs at least 2 rows and 2 columns, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// IsoScore of a point cloud: 1 when variance is spread evenly over all
/// principal directions, 0 when it lies along a single one.
pub fn isoscore<T: Real>(x: &DenseMatrix<T>) -> Result<IsotropyResult<T>> {
    require_points(x, "isoscore")?;
    let (_, _, cov) = centered_covariance(x)?;
    // variance in the PCA basis is the eigenvalue spectrum
    let variances = symmetric_evd(&cov)?.values;
    let length = variances.iter().map(|&v| v * v).sum::<T>().sqrt();
    if length == T::zero() {
        return Err(RezeError::DegeneratePointSet);
    }
    let d = T::from_count(x.cols());
    let sqrt_d = d.sqrt();
    let defect = variances
        .iter()
        .map(|&v| {
            let e = sqrt_d * v / length - T::one();
            e * e
        })
        .sum::<T>()
        .sqrt()
        / (T::c(2.0) * (d - sqrt_d)).sqrt();
    let phi = {
        let inner = d - defect * defect * (d - sqrt_d);
        inner * inner / (d * d)
    };
    let score = ((d * phi - T::one()) / (d - T::one())).max(T::zero()).min(T::one());
    Ok(IsotropyResult {
        score,
        dim: x.cols(),
        samples: x.rows(),
    })
}

/// Task-variant scores before and after a transform, measured in the fitted
/// eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionReport<T> {
    pub scores_before: Vec<T>,
    pub scores_after: Vec<T>,
    /// Dimensions gated by the fit (`j < k`, `v_j > θ`) on the `before` set.
    pub flagged: Vec<usize>,
    /// `S × D` deviations `μ_{s,j} − m_j`.
    pub deviations_before: DenseMatrix<T>,
    pub deviations_after: DenseMatrix<T>,
    /// `v_after / v_before` (1 where both are zero).
    pub ratios: Vec<T>,
    pub flagged_sum_before: T,
    pub flagged_sum_after: T,
}

impl<T: Real> DispersionReport<T> {
    /// Fraction of flagged-dimension dispersion removed (0 if none flagged).
    pub fn flagged_reduction(&self) -> T {
        if self.flagged_sum_before == T::zero() {
            T::zero()
        } else {
            T::one() - self.flagged_sum_after / self.flagged_sum_before
        }
    }

    /// Tab-separated per-dimension table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("dim\tv_before\tv_after\tratio\tflagged\n");
        for j in 0..self.scores_before.len() {
            let _ = writeln!(
                out,
                "{j}\t{:e}\t{:e}\t{}\t{}",
                self.scores_before[j],
                self.scores_after[j],
                self.ratios[j],
                u8::from(self.flagged.contains(&j))
            );
        }
        out
    }

    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        let flagged: Vec<String> = self.flagged.iter().map(|j| j.to_string()).collect();
        format!(
            "flagged_count={}\nflagged_dims={}\nflagged_sum_before={:e}\nflagged_sum_after={:e}\nflagged_reduction={}\n",
            self.flagged.len(),
            flagged.join(","),
            self.flagged_sum_before,
            self.flagged_sum_after,
            self.flagged_reduction()
        )
    }
}

fn deviations<T: Real>(stats: &SourceStats<T>) -> DenseMatrix<T> {
    let (s, d) = stats.means.shape();
    let mut out = DenseMatrix::zeros(s, d);
    for src in 0..s {
        for j in 0..d {
            out[(src, j)] = stats.deviation(src, j);
        }
    }
    out
}

/// Recomputes source statistics for `before` and `after` (row-aligned) using
/// the fit's frozen mean and eigenbasis.
pub fn dispersion_report<T: Real>(
    before: &RelationSet<T>,
    after: &DenseMatrix<T>,
    rm: &RezeMatrix<T>,
) -> Result<DispersionReport<T>> {
    if after.shape() != before.relations.shape() {
        return Err(RezeError::Mismatch { field: "before/after shape" });
    }
    if before.dim() != rm.dim() {
        return Err(RezeError::DimensionMismatch {
            context: "dispersion_report",
            expected: rm.dim(),
            found: before.dim(),
        });
    }
    if before.num_sources() != rm.num_sources() {
        return Err(RezeError::Mismatch { field: "source count" });
    }
    let stats_for = |x: &DenseMatrix<T>| -> Result<SourceStats<T>> {
        let z = project_rows(x, &rm.mean, &rm.basis)?;
        let mu = source_means(&z, &before.source_ids, &before.source_names)?;
        SourceStats::compute(mu, rm.config.aggregation, rm.config.gamma)
    };
    let sb = stats_for(&before.relations)?;
    let sa = stats_for(after)?;
    let flagged = flagged_dims(&sb.scores, rm.active, rm.threshold);
    let ratios = sb
        .scores
        .iter()
        .zip(&sa.scores)
        .map(|(&b, &a)| if b == T::zero() && a == T::zero() { T::one() } else { a / b })
        .collect();
    let sum_over = |v: &[T]| flagged.iter().map(|&j| v[j]).sum::<T>();
    Ok(DispersionReport {
        flagged_sum_before: sum_over(&sb.scores),
        flagged_sum_after: sum_over(&sa.scores),
        deviations_before: deviations(&sb),
        deviations_after: deviations(&sa),
        ratios,
        flagged,
        scores_before: sb.scores,
        scores_after: sa.scores,
    })
}

/// Whitening statistics: `h' = transform·(h − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening<T> {
    pub mean: Vec<T>,
    pub transform: DenseMatrix<T>,
}

/// Fits `W Λ^{−1/2} Wᵀ` on `x`; eigenvalues below `1e−12` are floored first.
pub fn whitening_fit<T: Real>(x: &DenseMatrix<T>) -> Result<Whitening<T>> {
    if x.rows() < 2 {
        return Err(RezeError::config("whitening needs at least 2 rows"));
    }
    let (mean, _, cov) = centered_covariance(x)?;
    let basis = symmetric_evd(&cov)?;
    let floor = T::c(1e-12);
    let d = x.cols();
    let inv_sqrt: Vec<T> = basis.values.iter().map(|&l| T::one() / l.max(floor).sqrt()).collect();
    let mut transform = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = T::zero();
            for (k, &s) in inv_sqrt.iter().enumerate() {
                acc += basis.vectors[(i, k)] * s * basis.vectors[(j, k)];
            }
            transform[(i, j)] = acc;
            transform[(j, i)] = acc;
        }
    }
    Ok(Whitening { mean, transform })
}

pub fn whitening_apply<T: Real>(h: &[T], mean: &[T], transform: &DenseMatrix<T>) -> Result<Vec<T>> {
    if h.len() != mean.len() {
        return Err(RezeError::DimensionMismatch {
            context: "whitening mean",
            expected: mean.len(),
            found: h.len(),
        });
    }
    let centered: Vec<T> = h.iter().zip(mean).map(|(&a, &b)| a - b).collect();
    transform.mul_vec(&centered)
}

impl<T: Real> Whitening<T> {
    pub fn apply_rows(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut out = DenseMatrix::zeros(x.rows(), self.transform.rows());
        for (i, row) in x.row_iter().enumerate() {
            out.row_mut(i)
                .copy_from_slice(&whitening_apply(row, &self.mean, &self.transform)?);
        }
        Ok(out)
    }
}

/// Coordinates along the two leading principal directions.
pub fn pca2<T: Real>(x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    require_points(x, "pca2")?;
    let (_, centered, cov) = centered_covariance(x)?;
    let basis = symmetric_evd(&cov)?;
    let (w0, w1) = (basis.vector(0), basis.vector(1));
    let mut out = DenseMatrix::zeros(x.rows(), 2);
    for (i, row) in centered.row_iter().enumerate() {
        out[(i, 0)] = crate::matrix::dot(row, &w0);
        out[(i, 1)] = crate::matrix::dot(row, &w1);
    }
    Ok(out)
}

/// Mean Euclidean distance between aligned rows.
pub fn mean_displacement<T: Real>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<T> {
    if a.shape() != b.shape() || a.rows() == 0 {
        return Err(RezeError::Mismatch { field: "displacement shapes" });
    }
    let total: T = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>().sqrt())
        .sum();
    Ok(total / T::from_count(a.rows()))
}

/// IsoScore of a relation set's rows after centering on the pooled mean.
pub fn relation_isoscore<T: Real>(set: &RelationSet<T>) -> Result<IsotropyResult<T>> {
    isoscore(&global_center(set)?.centered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenspace::project;

    fn m(rows: &[&[f64]]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn one_dimensional_cloud_scores_zero() {
        let rows: Vec<[f64; 4]> = (0..10).map(|i| [i as f64, 0.0, 0.0, 0.0]).collect();
        let r = isoscore(&DenseMatrix::from_rows(&rows).unwrap()).unwrap();
        assert!(r.score.abs() < 1e-9);
        assert_eq!((r.dim, r.samples), (4, 10));
    }

    #[test]
    fn equal_variance_cloud_scores_one() {
        // ±e_k: covariance is exactly a multiple of the identity
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for k in 0..3 {
            let mut plus = [0.0; 3];
            plus[k] = 1.0;
            rows.push(plus);
            plus[k] = -1.0;
            rows.push(plus);
        }
        let r = isoscore(&DenseMatrix::from_rows(&rows).unwrap()).unwrap();
        assert!((r.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let same = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(isoscore(&same), Err(RezeError::DegeneratePointSet)));
        assert!(isoscore(&m(&[&[1.0, 2.0]])).is_err());
    }

    #[test]
    fn whitening_apply_examples() {
        let t = DenseMatrix::from_diag(&[0.5, 1.0]);
        assert_eq!(whitening_apply(&[3.0, 2.0], &[1.0, 0.0], &t).unwrap(), vec![1.0, 2.0]);
        assert_eq!(whitening_apply(&[1.0, 0.0], &[1.0, 0.0], &t).unwrap(), vec![0.0, 0.0]);
        let id = DenseMatrix::identity(2);
        assert_eq!(whitening_apply(&[3.0, 2.0], &[0.0, 0.0], &id).unwrap(), vec![3.0, 2.0]);
        assert!(whitening_apply(&[1.0], &[0.0, 0.0], &id).is_err());
    }

    #[test]
    fn whitening_of_exactly_white_set_is_identity() {
        // ±√2·e_k over 2 dims: covariance is exactly I
        let s = 2f64.sqrt();
        let x = m(&[&[s, 0.0], &[-s, 0.0], &[0.0, s], &[0.0, -s]]);
        let w = whitening_fit(&x).unwrap();
        let err = w.transform.sub(&DenseMatrix::identity(2)).unwrap().max_abs();
        assert!(err < 1e-6);
    }

    #[test]
    fn rank_deficient_whitening_stays_finite() {
        let x = m(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        let w = whitening_fit(&x).unwrap();
        assert!(w.transform.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pca2_examples() {
        let x = m(&[&[1.0, 2.0, 0.0], &[2.0, 4.0, 0.0], &[-3.0, -6.0, 0.0], &[0.5, 1.0, 0.0]]);
        let c = pca2(&x).unwrap();
        assert!(c.column(1).iter().all(|v| v.abs() < 1e-12));

        let y = m(&[&[1.0, 0.3], &[-2.0, 0.1], &[0.5, -0.9], &[3.0, 0.2], &[0.1, 0.4]]);
        let c = pca2(&y).unwrap();
        let var = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>();
        assert!(var(c.column(0)) >= var(c.column(1)));

        // same as projecting centered rows onto the leading two eigenvectors
        let (mean, _, cov) = centered_covariance(&y).unwrap();
        let basis = symmetric_evd(&cov).unwrap();
        for i in 0..y.rows() {
            let z = project(y.row(i), &mean, &basis).unwrap();
            assert!((z[0] - c[(i, 0)]).abs() < 1e-10 && (z[1] - c[(i, 1)]).abs() < 1e-10);
        }
    }
}
