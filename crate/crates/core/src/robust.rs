//! Order statistics used by the fitting stage.

use crate::scalar::Real;

/// Median with the even-length convention of averaging the two middle order
/// statistics. Returns `None` for an empty slice.
pub fn median<T: Real>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let mid = n / 2;
    Some(if n % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) * T::c(0.5)
    })
}

/// Median absolute deviation from the median (unscaled).
pub fn median_abs_deviation<T: Real>(values: &[T]) -> Option<T> {
    let center = median(values)?;
    let deviations: Vec<T> = values.iter().map(|&v| (v - center).abs()).collect();
    median(&deviations)
}

pub fn mean<T: Real>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().copied().sum::<T>() / T::from_count(values.len()))
}
