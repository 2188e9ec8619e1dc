#![allow(dead_code)]

use reze::matrix::DenseMatrix;
use reze::relations::EmbeddingDump;
use reze::synth::{generate, CounterRng, PlantedOffset, SynthConfig};

pub const PLANTED_DIM: usize = 16;

pub fn scales(d: usize) -> Vec<f64> {
    (0..d).map(|k| 1.0 / (1.0 + 0.15 * k as f64)).collect()
}

/// Four sources; source 1 is shifted by five base scales along relation
/// coordinate 0.
pub fn planted_config(seed: u64) -> SynthConfig {
    let d = PLANTED_DIM;
    let s = scales(d);
    SynthConfig {
        sources: 4,
        dim: d,
        samples_per_source: 500,
        planted: vec![PlantedOffset {
            source: 1,
            direction: 0,
            offset: 5.0 * s[0],
        }],
        base_scales: s,
        pair_noise: 0.3,
        seed,
    }
}

pub fn planted(seed: u64) -> (EmbeddingDump, EmbeddingDump) {
    let (a, p, _) = generate(&planted_config(seed)).unwrap();
    (a, p)
}

/// Five sources: source 1 carries a moderate planted shift, source 4 is an
/// extreme outlier shifted by ±20 on every anchor coordinate.
pub fn outlier_config(seed: u64) -> SynthConfig {
    let d = PLANTED_DIM;
    let mut planted = vec![PlantedOffset {
        source: 1,
        direction: 0,
        offset: 5.0,
    }];
    for k in 0..d {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        planted.push(PlantedOffset {
            source: 4,
            direction: k,
            offset: 20.0 * sign,
        });
    }
    SynthConfig {
        sources: 5,
        dim: d,
        samples_per_source: 300,
        base_scales: scales(d),
        planted,
        pair_noise: 0.3,
        seed,
    }
}

/// `BᵀB / m` for a Gaussian `m × n` matrix `B`.
pub fn random_psd(n: usize, m: usize, seed: u64) -> DenseMatrix<f64> {
    let mut rng = CounterRng::new(seed);
    let b = DenseMatrix::from_vec(m, n, (0..m * n).map(|_| rng.normal()).collect()).unwrap();
    let mut c = b.transpose().matmul(&b).unwrap();
    let inv = 1.0 / m as f64;
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= inv;
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
    let mut rng = CounterRng::new(seed);
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Mean squared distance of per-source mean vectors from their average,
/// restricted to `keep` sources. Rotation invariant.
pub fn between_source_scatter(x: &DenseMatrix<f64>, ids: &[usize], keep: &[usize]) -> f64 {
    let d = x.cols();
    let mut means = vec![vec![0.0; d]; keep.len()];
    let mut counts = vec![0usize; keep.len()];
    for (i, row) in x.row_iter().enumerate() {
        if let Some(k) = keep.iter().position(|&s| s == ids[i]) {
            means[k].iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            counts[k] += 1;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let n = keep.len() as f64;
    (0..d)
        .map(|j| {
            let avg = means.iter().map(|m| m[j]).sum::<f64>() / n;
            means.iter().map(|m| (m[j] - avg).powi(2)).sum::<f64>() / n
        })
        .sum()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &DenseMatrix<f64>, step: f64, f: impl Fn(&DenseMatrix<f64>) -> f64) -> DenseMatrix<f64> {
    let mut g = DenseMatrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let base = x[(i, j)];
            probe[(i, j)] = base + step;
            let plus = f(&probe);
            probe[(i, j)] = base - step;
            let minus = f(&probe);
            probe[(i, j)] = base;
            g[(i, j)] = (plus - minus) / (2.0 * step);
        }
    }
    g
}

/// Largest `|a − n| / max(|a|, |n|, 1e−6)` over all entries.
pub fn max_rel_error(a: &DenseMatrix<f64>, n: &DenseMatrix<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(n.as_slice())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
