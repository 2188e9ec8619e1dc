//! Seeded multi-source anchor/positive generator with planted per-source
//! mean shifts.
//!
//! # Random stream
//!
//! Reproducible across implementations by construction:
//!
//! * `next_u64`: the `c`-th draw (`c = 1, 2, ...`) is the SplitMix64 finalizer
//!   applied to `seed + c·0x9E3779B97F4A7C15` (wrapping), with
//!   `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!   z *= 0x94D049BB133111EB; z ^= z >> 31`.
//! * uniform: `((x >> 11) + 0.5) · 2⁻⁵³`, never 0 or 1.
//! * normal: Box–Muller on two consecutive uniforms `u1, u2`:
//!   `√(−2 ln u1)·cos(2π u2)` is returned first, the `sin` partner second.
//!
//! # Sample layout
//!
//! Sources in order, samples within a source in order. Per sample: `d`
//! normals scaled by `base_scales` form the anchor, then `d` normals scaled by
//! `pair_noise` are added to a copy of it to form the positive (drawn even
//! when `pair_noise` is zero). Planted offsets are then added in relation
//! coordinates (`< d` anchor, `≥ d` positive). Values are rounded to `f32`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{RezeError, Result};
use crate::matrix::DenseMatrix;
use crate::relations::EmbeddingDump;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based SplitMix64 stream with Box–Muller normals.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    /// Uniform index in `0..n` (multiply-shift, no modulo bias worth caring
    /// about at these sizes).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// A mean shift applied to one source along one relation coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedOffset {
    pub source: usize,
    /// Coordinate in relation space (`0..2d`).
    pub direction: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sources: usize,
    pub dim: usize,
    pub samples_per_source: usize,
    pub base_scales: Vec<f64>,
    #[serde(default)]
    pub planted: Vec<PlantedOffset>,
    #[serde(default)]
    pub pair_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources < 2 {
            return Err(RezeError::config("synthetic data needs at least 2 sources"));
        }
        if self.dim == 0 || self.samples_per_source == 0 {
            return Err(RezeError::config("dim and samples_per_source must be positive"));
        }
        if self.base_scales.len() != self.dim {
            return Err(RezeError::DimensionMismatch {
                context: "base_scales",
                expected: self.dim,
                found: self.base_scales.len(),
            });
        }
        if self.base_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(RezeError::config("base_scales must be positive and finite"));
        }
        if !(self.pair_noise.is_finite() && self.pair_noise >= 0.0) {
            return Err(RezeError::config("pair_noise must be finite and non-negative"));
        }
        for p in &self.planted {
            if p.source >= self.sources {
                return Err(RezeError::UnknownSource {
                    id: p.source,
                    sources: self.sources,
                });
            }
            if p.direction >= 2 * self.dim {
                return Err(RezeError::config(format!(
                    "planted direction {} outside relation space of width {}",
                    p.direction,
                    2 * self.dim
                )));
            }
            if !p.offset.is_finite() {
                return Err(RezeError::config("planted offsets must be finite"));
            }
        }
        Ok(())
    }

    pub fn source_names(&self) -> Vec<String> {
        (0..self.sources).map(|s| format!("src_{s}")).collect()
    }
}

/// What the generator planted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub planted: Vec<PlantedOffset>,
    /// `S × 2d` relation-space mean shift per source.
    pub shifts: DenseMatrix<f64>,
    pub seed: u64,
}

impl GroundTruth {
    /// Plain-text `key=value` rendering with a fixed key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "sources={}", self.shifts.rows());
        let _ = writeln!(out, "relation_dim={}", self.shifts.cols());
        let _ = writeln!(out, "planted_count={}", self.planted.len());
        for (i, p) in self.planted.iter().enumerate() {
            let _ = writeln!(
                out,
                "planted.{i}=source:{},direction:{},offset:{:?}",
                p.source, p.direction, p.offset
            );
        }
        for s in 0..self.shifts.rows() {
            let row: Vec<String> = self.shifts.row(s).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "shift.{s}={}", row.join(","));
        }
        out
    }
}

/// Draws anchor and positive dumps per [`SynthConfig`].
pub fn generate(config: &SynthConfig) -> Result<(EmbeddingDump, EmbeddingDump, GroundTruth)> {
    config.validate()?;
    let d = config.dim;
    let n = config.sources * config.samples_per_source;
    let mut shifts = DenseMatrix::zeros(config.sources, 2 * d);
    for p in &config.planted {
        shifts[(p.source, p.direction)] += p.offset;
    }
    let mut rng = CounterRng::new(config.seed);
    let mut anchors = DenseMatrix::zeros(n, d);
    let mut positives = DenseMatrix::zeros(n, d);
    let mut ids = Vec::with_capacity(n);
    let round = |v: f64| v as f32 as f64;
    for s in 0..config.sources {
        let shift = shifts.row(s).to_vec();
        for i in 0..config.samples_per_source {
            let row = s * config.samples_per_source + i;
            let base: Vec<f64> = config.base_scales.iter().map(|&sc| sc * rng.normal()).collect();
            let noise: Vec<f64> = (0..d).map(|_| config.pair_noise * rng.normal()).collect();
            for k in 0..d {
                anchors[(row, k)] = round(base[k] + shift[k]);
                positives[(row, k)] = round(base[k] + noise[k] + shift[d + k]);
            }
            ids.push(s);
        }
    }
    let names = config.source_names();
    let truth = GroundTruth {
        planted: config.planted.clone(),
        shifts,
        seed: config.seed,
    };
    Ok((
        EmbeddingDump::new(anchors, ids.clone(), names.clone())?,
        EmbeddingDump::new(positives, ids, names)?,
        truth,
    ))
}

/// Replicates every row of `dump` once per copy, copy `c` becoming source
/// `c`. Copies are exact; `seed` is accepted for interface symmetry with the
/// generator and does not influence the output.
pub fn duplicate_as_sources(dump: &EmbeddingDump, copies: usize, seed: u64) -> Result<EmbeddingDump> {
    let _ = seed;
    if copies < 2 {
        return Err(RezeError::config("duplicate_as_sources needs at least 2 copies"));
    }
    let n = dump.len();
    let mut values = Vec::with_capacity(n * copies * dump.dim());
    let mut ids = Vec::with_capacity(n * copies);
    for c in 0..copies {
        values.extend_from_slice(dump.vectors().as_slice());
        ids.extend(std::iter::repeat_n(c, n));
    }
    let names = (0..copies).map(|c| format!("copy_{c}")).collect();
    EmbeddingDump::new(DenseMatrix::from_vec(n * copies, dump.dim(), values)?, ids, names)
}
