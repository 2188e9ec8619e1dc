//! Small-scale training loop: a linear encoder optimized with
//! `InfoNCE + w·reze` against debiased targets from a frozen reference
//! encoder, using plain gradient descent on seeded mixed-source batches.

use std::fmt::Write as _;

use crate::debias::DebiasCache;
use crate::error::{RezeError, Result};
use crate::fit::RezeMatrix;
use crate::matrix::DenseMatrix;
use crate::metrics::{dispersion_report, isoscore, mean_displacement};
use crate::objectives::{concat_halves, evaluate, LossReport, ObjectiveConfig};
use crate::relations::{EmbeddingDump, RelationSet};
use crate::synth::CounterRng;

/// `e = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub weight: DenseMatrix<f64>,
    pub bias: Vec<f64>,
}

impl LinearEncoder {
    pub fn new(weight: DenseMatrix<f64>, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(RezeError::DimensionMismatch {
                context: "encoder bias",
                expected: weight.rows(),
                found: bias.len(),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(RezeError::config("encoder bias must be finite"));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: DenseMatrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    /// Identity plus seeded Gaussian noise of the given scale on the weights.
    pub fn perturbed_identity(dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        let mut enc = Self::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                enc.weight[(i, j)] += scale * rng.normal();
            }
        }
        enc
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Encodes each row of `x`.
    pub fn encode(&self, x: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        if x.cols() != self.in_dim() {
            return Err(RezeError::DimensionMismatch {
                context: "encoder input",
                expected: self.in_dim(),
                found: x.cols(),
            });
        }
        let mut out = x.matmul(&self.weight.transpose())?;
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&self.bias).for_each(|(o, &b)| *o += b);
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    fn parameter(&self, idx: usize) -> f64 {
        let nw = self.weight.as_slice().len();
        if idx < nw {
            self.weight.as_slice()[idx]
        } else {
            self.bias[idx - nw]
        }
    }

    fn set_parameter(&mut self, idx: usize, value: f64) {
        let (rows, cols) = self.weight.shape();
        let nw = rows * cols;
        if idx < nw {
            self.weight[(idx / cols, idx % cols)] = value;
        } else {
            self.bias[idx - nw] = value;
        }
    }
}

/// Gradients with respect to encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub weight: DenseMatrix<f64>,
    pub bias: Vec<f64>,
}

impl EncoderGrad {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.weight.as_slice().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }
}

/// A batch of raw inputs with their source ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub anchors: DenseMatrix<f64>,
    pub positives: DenseMatrix<f64>,
    pub source_ids: Vec<usize>,
}

impl Batch {
    pub fn from_dumps(anchors: &EmbeddingDump, positives: &EmbeddingDump, rows: &[usize]) -> Result<Self> {
        let a = anchors.select(rows)?;
        let p = positives.select(rows)?;
        Ok(Self {
            source_ids: a.source_ids().to_vec(),
            anchors: a.vectors().clone(),
            positives: p.vectors().clone(),
        })
    }
}

/// Unit-normalizes rows, returning the normalized rows and the norms.
fn normalize_rows(e: &DenseMatrix<f64>) -> Result<(DenseMatrix<f64>, Vec<f64>)> {
    let mut out = e.clone();
    let mut norms = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        let n = crate::matrix::norm(e.row(i));
        if n == 0.0 {
            return Err(RezeError::DegenerateRelation(i));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient on unit rows `ê = e/‖e‖` back onto `e`.
fn normalization_backward(unit: &DenseMatrix<f64>, norms: &[f64], grad: &mut DenseMatrix<f64>) {
    for (i, &n) in norms.iter().enumerate() {
        let radial = crate::matrix::dot(grad.row(i), unit.row(i));
        for (g, &u) in grad.row_mut(i).iter_mut().zip(unit.row(i)) {
            *g = (*g - radial * u) / n;
        }
    }
}

/// Embeddings as the model exposes them: unit rows when `normalize` is set.
pub fn embed(encoder: &LinearEncoder, x: &DenseMatrix<f64>, normalize: bool) -> Result<DenseMatrix<f64>> {
    let e = encoder.encode(x)?;
    if normalize {
        Ok(normalize_rows(&e)?.0)
    } else {
        Ok(e)
    }
}

/// Relation set produced by `encoder` on a dump pair.
pub fn encode_relations(
    encoder: &LinearEncoder,
    anchors: &EmbeddingDump,
    positives: &EmbeddingDump,
    normalize: bool,
) -> Result<RelationSet<f64>> {
    if anchors.source_ids() != positives.source_ids() {
        return Err(RezeError::Mismatch { field: "source_ids" });
    }
    let a = embed(encoder, anchors.vectors(), normalize)?;
    let p = embed(encoder, positives.vectors(), normalize)?;
    RelationSet::new(
        concat_halves(&a, &p)?,
        anchors.source_ids().to_vec(),
        anchors.source_names().to_vec(),
        normalize,
    )
}

/// Loss report and parameter gradients for one batch.
pub fn batch_loss(
    encoder: &LinearEncoder,
    batch: &Batch,
    targets: &DenseMatrix<f64>,
    normalize: bool,
    objective: &ObjectiveConfig,
) -> Result<(LossReport<f64>, EncoderGrad)> {
    let ea = encoder.encode(&batch.anchors)?;
    let ep = encoder.encode(&batch.positives)?;
    let (report, mut ga, mut gp) = if normalize {
        let (ua, na) = normalize_rows(&ea)?;
        let (up, np) = normalize_rows(&ep)?;
        let report = evaluate(&ua, &up, targets, objective)?;
        let mut ga = report.grad_anchor.clone();
        let mut gp = report.grad_positive.clone();
        normalization_backward(&ua, &na, &mut ga);
        normalization_backward(&up, &np, &mut gp);
        (report, ga, gp)
    } else {
        let report = evaluate(&ea, &ep, targets, objective)?;
        let (ga, gp) = (report.grad_anchor.clone(), report.grad_positive.clone());
        (report, ga, gp)
    };
    let (out, inp) = encoder.weight.shape();
    let mut gw = DenseMatrix::zeros(out, inp);
    let mut gb = vec![0.0; out];
    for (grads, inputs) in [(&mut ga, &batch.anchors), (&mut gp, &batch.positives)] {
        for i in 0..inputs.rows() {
            let g = grads.row(i);
            let x = inputs.row(i);
            for (r, &gr) in g.iter().enumerate() {
                gb[r] += gr;
                for (c, &xc) in x.iter().enumerate() {
                    gw[(r, c)] += gr * xc;
                }
            }
        }
    }
    Ok((report, EncoderGrad { weight: gw, bias: gb }))
}

/// Central-difference check of [`batch_loss`] gradients over every encoder
/// parameter. Targets are the batch's own relations debiased by `rm`.
/// Returns the largest per-parameter relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e−6)`.
pub fn encoder_grad_check(
    encoder: &LinearEncoder,
    batch: &Batch,
    rm: &RezeMatrix<f64>,
    objective: &ObjectiveConfig,
    step: f64,
) -> Result<f64> {
    let ref_rel = RelationSet::new(
        concat_halves(
            &embed(&LinearEncoder::identity(batch.anchors.cols()), &batch.anchors, rm.normalize)?,
            &embed(&LinearEncoder::identity(batch.positives.cols()), &batch.positives, rm.normalize)?,
        )?,
        batch.source_ids.clone(),
        rm.source_names.clone(),
        rm.normalize,
    )?;
    let targets = crate::debias::debias_batch(&ref_rel, rm)?;
    let (_, analytic) = batch_loss(encoder, batch, &targets, rm.normalize, objective)?;
    let analytic = analytic.flat();
    let mut probe = encoder.clone();
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let base = encoder.parameter(idx);
        probe.set_parameter(idx, base + step);
        let plus = batch_loss(&probe, batch, &targets, rm.normalize, objective)?.0.combined;
        probe.set_parameter(idx, base - step);
        let minus = batch_loss(&probe, batch, &targets, rm.normalize, objective)?.0.combined;
        probe.set_parameter(idx, base);
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub objective: ObjectiveConfig,
    pub shuffle_seed: u64,
    /// Draw batches across sources; otherwise each batch holds one source.
    pub mixed_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 32,
            learning_rate: 0.05,
            objective: ObjectiveConfig::default(),
            shuffle_seed: 0,
            mixed_batches: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.batch < 2 {
            return Err(RezeError::config("batch size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RezeError::config("learning rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Epoch-based seeded batch order.
#[derive(Debug)]
pub struct BatchSampler {
    rng: CounterRng,
    batch: usize,
    mixed: bool,
    source_ids: Vec<usize>,
    queue: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(source_ids: &[usize], batch: usize, mixed: bool, seed: u64) -> Result<Self> {
        if batch > source_ids.len() {
            return Err(RezeError::config(format!(
                "batch size {batch} exceeds {} samples",
                source_ids.len()
            )));
        }
        Ok(Self {
            rng: CounterRng::new(seed),
            batch,
            mixed,
            source_ids: source_ids.to_vec(),
            queue: Vec::new(),
        })
    }

    fn refill(&mut self) -> Result<()> {
        let mut batches = Vec::new();
        if self.mixed {
            let mut order: Vec<usize> = (0..self.source_ids.len()).collect();
            self.rng.shuffle(&mut order);
            batches.extend(order.chunks_exact(self.batch).map(<[usize]>::to_vec));
        } else {
            let sources = self.source_ids.iter().max().map_or(0, |&m| m + 1);
            for s in 0..sources {
                let mut rows: Vec<usize> = (0..self.source_ids.len())
                    .filter(|&i| self.source_ids[i] == s)
                    .collect();
                self.rng.shuffle(&mut rows);
                batches.extend(rows.chunks_exact(self.batch).map(<[usize]>::to_vec));
            }
            self.rng.shuffle(&mut batches);
        }
        if batches.is_empty() {
            return Err(RezeError::config("no source has enough samples for one batch"));
        }
        // pop() takes from the back
        batches.reverse();
        self.queue = batches;
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            self.refill()?;
        }
        Ok(self.queue.pop().expect("refilled"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub main: f64,
    pub reze: f64,
    pub combined: f64,
}

/// Evaluation of an encoder over the full data set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    /// IsoScore of the encoder's relation vectors.
    pub isoscore: f64,
    /// Mean distance of relation vectors from their reference positions.
    pub displacement: f64,
    /// Summed task-variant score over fit-flagged dimensions.
    pub flagged_dispersion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub encoder: LinearEncoder,
    pub before: Snapshot,
    pub after: Snapshot,
}

impl TrainHistory {
    /// Tab-separated `step main reze combined` table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("step\tmain\treze\tcombined\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(out, "{}\t{:?}\t{:?}\t{:?}", i + 1, r.main, r.reze, r.combined);
        }
        out
    }
}

fn snapshot(
    encoder: &LinearEncoder,
    anchors: &EmbeddingDump,
    positives: &EmbeddingDump,
    reference: &RelationSet<f64>,
    rm: &RezeMatrix<f64>,
) -> Result<Snapshot> {
    let current = encode_relations(encoder, anchors, positives, rm.normalize)?;
    let report = dispersion_report(reference, &current.relations, rm)?;
    Ok(Snapshot {
        isoscore: isoscore(&current.relations)?.score,
        displacement: mean_displacement(&current.relations, &reference.relations)?,
        flagged_dispersion: report.flagged_sum_after,
    })
}

fn gather_rows(m: &DenseMatrix<f64>, rows: &[usize]) -> Result<DenseMatrix<f64>> {
    let picked: Vec<&[f64]> = rows.iter().map(|&i| m.row(i)).collect();
    DenseMatrix::from_rows(&picked)
}

/// Trains `init` with the combined objective. Debiased targets come from the
/// frozen `reference` encoder and are computed once.
pub fn train(
    anchors: &EmbeddingDump,
    positives: &EmbeddingDump,
    rm: &RezeMatrix<f64>,
    reference: &LinearEncoder,
    init: &LinearEncoder,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if init.in_dim() != anchors.dim() || reference.in_dim() != anchors.dim() {
        return Err(RezeError::DimensionMismatch {
            context: "encoder input vs data",
            expected: anchors.dim(),
            found: init.in_dim(),
        });
    }
    if init.out_dim() != reference.out_dim() || 2 * init.out_dim() != rm.dim() {
        return Err(RezeError::DimensionMismatch {
            context: "relation width vs fitted matrix",
            expected: rm.dim(),
            found: 2 * init.out_dim(),
        });
    }
    let reference_rel = encode_relations(reference, anchors, positives, rm.normalize)?;
    let mut cache = DebiasCache::new(rm);
    let targets = cache.targets(&reference_rel)?;

    let mut encoder = init.clone();
    let before = snapshot(&encoder, anchors, positives, &reference_rel, rm)?;
    let mut sampler = BatchSampler::new(anchors.source_ids(), config.batch, config.mixed_batches, config.shuffle_seed)?;
    let mut records = Vec::with_capacity(config.steps);
    let lr = config.learning_rate;
    for step in 0..config.steps {
        let rows = sampler.next_batch()?;
        let batch = Batch::from_dumps(anchors, positives, &rows)?;
        let batch_targets = gather_rows(&targets, &rows)?;
        let (report, grad) = batch_loss(&encoder, &batch, &batch_targets, rm.normalize, &config.objective)
            .map_err(|e| match e {
                RezeError::NonFiniteLoss(_) => RezeError::NonFiniteLoss(step + 1),
                other => other,
            })?;
        if !report.combined.is_finite() {
            return Err(RezeError::NonFiniteLoss(step + 1));
        }
        records.push(StepRecord {
            main: report.main,
            reze: report.reze,
            combined: report.combined,
        });
        for (w, g) in encoder.weight.as_mut_slice().iter_mut().zip(grad.weight.as_slice()) {
            *w -= lr * g;
        }
        for (b, g) in encoder.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
    let after = snapshot(&encoder, anchors, positives, &reference_rel, rm)?;
    Ok(TrainHistory {
        records,
        encoder,
        before,
        after,
    })
}
