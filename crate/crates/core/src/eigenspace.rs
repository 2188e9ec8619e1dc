//! Covariance construction, symmetric eigendecomposition, and the maps
//! between the original coordinates and eigen-coordinates.
//!
//! The decomposition is a cyclic Jacobi sweep. Output is canonical: eigenvalues
//! in non-increasing order (ties keep their original index order) and each
//! eigenvector flipped so its largest-magnitude entry is positive, the lowest
//! index winning ties. Identical input therefore gives identical bytes.

use crate::error::{RezeError, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Real;

const MAX_SWEEPS: usize = 100;

/// Eigenvectors (as columns of `vectors`) with their eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis<T> {
    pub vectors: DenseMatrix<T>,
    pub values: Vec<T>,
}

impl<T: Real> EigenBasis<T> {
    /// Assembles a basis from parts, checking shape, ordering and
    /// orthonormality.
    pub fn new(vectors: DenseMatrix<T>, values: Vec<T>) -> Result<Self> {
        let dim = values.len();
        if vectors.shape() != (dim, dim) {
            return Err(RezeError::DimensionMismatch {
                context: "eigenbasis",
                expected: dim,
                found: vectors.rows(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RezeError::NonFinite(i));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(RezeError::config("eigenvalues must be non-increasing"));
        }
        if let Some(&v) = values.iter().find(|&&v| v < -T::tol(1e-9)) {
            return Err(RezeError::NegativeEigenvalue(v.as_f64()));
        }
        let basis = Self { vectors, values };
        let err = basis.orthonormality_error();
        if err > T::tol(1e-8) {
            return Err(RezeError::config(format!(
                "eigenvectors are not orthonormal (‖WᵀW − I‖_F = {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `‖WᵀW − I‖_F`.
    pub fn orthonormality_error(&self) -> T {
        let wtw = self
            .vectors
            .transpose()
            .matmul(&self.vectors)
            .expect("square basis");
        wtw.sub(&DenseMatrix::identity(self.dim()))
            .expect("same shape")
            .frobenius_norm()
    }

    /// `W · diag(λ) · Wᵀ`.
    pub fn recompose(&self) -> DenseMatrix<T> {
        let n = self.dim();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = T::zero();
                for (k, &lambda) in self.values.iter().enumerate() {
                    acc += self.vectors[(i, k)] * lambda * self.vectors[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    /// Column `j` of `W`.
    pub fn vector(&self, j: usize) -> Vec<T> {
        self.vectors.column(j)
    }
}

/// `(1/N)·X̃ᵀX̃` for rows that the caller has already centered.
pub fn covariance<T: Real>(centered: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (n, d) = centered.shape();
    if n == 0 {
        return Err(RezeError::EmptySampleSet);
    }
    let mut cov = DenseMatrix::zeros(d, d);
    for row in centered.row_iter() {
        for i in 0..d {
            let ri = row[i];
            if ri == T::zero() {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ri * row[j];
            }
        }
    }
    let inv_n = T::one() / T::from_count(n);
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] * inv_n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Eigendecomposition of a symmetric positive-semidefinite matrix.
///
/// Entries negative by no more than rounding (`≥ −1e−9`, or the type's own
/// resolution at the input's scale) are clamped to zero; anything below is
/// rejected because the input cannot be a covariance.
pub fn symmetric_evd<T: Real>(c: &DenseMatrix<T>) -> Result<EigenBasis<T>> {
    let (rows, cols) = c.shape();
    if rows != cols {
        return Err(RezeError::NotSquare { rows, cols });
    }
    if let Some(i) = c.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(RezeError::NonFinite(i));
    }
    let n = rows;
    let scale = c.max_abs().max(T::one());
    let mut asym = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    if asym > T::tol(1e-8) * scale {
        return Err(RezeError::NotSymmetric(asym.as_f64()));
    }

    let half = T::c(0.5);
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = (c[(i, j)] + c[(j, i)]) * half;
        }
    }
    let mut v = DenseMatrix::identity(n);
    jacobi_sweeps(&mut a, &mut v);

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep index order
    order.sort_by(|&x, &y| a[(y, y)].partial_cmp(&a[(x, x)]).expect("finite eigenvalues"));

    let neg_tol = T::tol(1e-9).max(T::epsilon() * T::from_count(n.max(1)) * c.frobenius_norm());
    let mut values = Vec::with_capacity(n);
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = a[(src, src)];
        if lambda < -neg_tol {
            return Err(RezeError::NegativeEigenvalue(lambda.as_f64()));
        }
        values.push(lambda.max(T::zero()));
        for i in 0..n {
            vectors[(i, dst)] = v[(i, src)];
        }
    }
    canonicalize_signs(&mut vectors);
    Ok(EigenBasis { vectors, values })
}

fn jacobi_sweeps<T: Real>(a: &mut DenseMatrix<T>, v: &mut DenseMatrix<T>) {
    let n = a.rows();
    let hundred = T::c(100.0);
    let total = a.frobenius_norm();
    if total == T::zero() {
        return;
    }
    let stop = T::epsilon() * T::epsilon() * total * total;
    for sweep in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // late sweeps: drop elements below the diagonal's resolution
                let g = hundred * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (T::c(2.0) * apq);
                let t = {
                    let mag = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -mag
                    } else {
                        mag
                    }
                };
                let cos = T::one() / (t * t + T::one()).sqrt();
                let sin = t * cos;
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = cos * akp - sin * akq;
                    let new_kq = sin * akp + cos * akq;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cos * vkp - sin * vkq;
                    v[(k, q)] = sin * vkp + cos * vkq;
                }
            }
        }
    }
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn canonicalize_signs<T: Real>(vectors: &mut DenseMatrix<T>) {
    let (rows, cols) = vectors.shape();
    for j in 0..cols {
        let mut best = 0;
        for i in 1..rows {
            if vectors[(i, j)].abs() > vectors[(best, j)].abs() {
                best = i;
            }
        }
        if rows > 0 && vectors[(best, j)] < T::zero() {
            for i in 0..rows {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(RezeError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Eigen-coordinates `Wᵀ(x − u)`.
pub fn project<T: Real>(x: &[T], u: &[T], basis: &EigenBasis<T>) -> Result<Vec<T>> {
    check_len("project: x", basis.dim(), x.len())?;
    check_len("project: u", basis.dim(), u.len())?;
    let centered: Vec<T> = x.iter().zip(u).map(|(&a, &b)| a - b).collect();
    basis.vectors.tr_mul_vec(&centered)
}

/// Inverse of [`project`]: `W·z + u`.
pub fn reconstruct<T: Real>(z: &[T], u: &[T], basis: &EigenBasis<T>) -> Result<Vec<T>> {
    check_len("reconstruct: z", basis.dim(), z.len())?;
    check_len("reconstruct: u", basis.dim(), u.len())?;
    let mut out = basis.vectors.mul_vec(z)?;
    for (o, &m) in out.iter_mut().zip(u) {
        *o += m;
    }
    Ok(out)
}

/// Projects every row of `x`.
pub fn project_rows<T: Real>(
    x: &DenseMatrix<T>,
    u: &[T],
    basis: &EigenBasis<T>,
) -> Result<DenseMatrix<T>> {
    check_len("project_rows", basis.dim(), x.cols())?;
    let mut out = DenseMatrix::zeros(x.rows(), basis.dim());
    for (i, row) in x.row_iter().enumerate() {
        let z = project(row, u, basis)?;
        out.row_mut(i).copy_from_slice(&z);
    }
    Ok(out)
}
