//! Supervised training of the weight predictor against ground-truth labels.
//!
//! Each batch draws one physical error rate, samples shots, labels them with
//! [`ground_truth`], and runs one Adam step on the mean over all directed
//! edges of the batch of `BCE(p, y) + lambda * H(p)`. Every shot is a
//! separate tape, so no attention crosses shots.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::decoder::{edge_labels, P_CLAMP};
use crate::error::{QecError, Result};
use crate::graph::{build_graph, DecodingGraph};
use crate::ground_truth::{ground_truth, GtConfig};
use crate::lattice::CodeLattice;
use crate::noise::{extract_syndrome, sample_error, NoiseKind, NoiseModel};
use crate::qwp::{QwpConfig, QwpModel};
use crate::rng::{derive_seed, stream_rng, Substream};
use crate::tensor::{ParamGrads, ParamStore, Real, Tape, Tensor, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub p_range: (f64, f64),
    pub seed: u64,
    pub gt: GtConfig,
    pub hist_bins: usize,
}

impl TrainConfig {
    pub fn for_noise(noise: NoiseKind) -> Self {
        TrainConfig {
            batch_size: 32,
            lr_init: 9e-5,
            lr_min: 1e-5,
            batches_per_epoch: 500,
            epochs: 200,
            lambda: 0.01,
            p_range: noise.default_p_range(),
            seed: 0,
            gt: GtConfig::default(),
            hist_bins: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(QecError::Config(m.to_string()));
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.epochs == 0 {
            return bad("batch_size, batches_per_epoch and epochs must be positive");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        if !(self.lr_min <= self.lr_init && self.lr_min >= 0.0) {
            return bad("need 0 <= lr_min <= lr_init");
        }
        let (lo, hi) = self.p_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("p_range must satisfy 0 <= lo <= hi <= 1");
        }
        if self.hist_bins < 2 {
            return bad("hist_bins must be at least 2");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }
}

pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_min;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Summed (not averaged) loss terms of one shot.
pub struct LossTerms {
    pub bce: Var,
    pub entropy: Var,
}

/// `sum BCE(p, y)` and `sum H(p)` over the entries of `probs`, with `p`
/// clamped to `[P_CLAMP, 1 - P_CLAMP]` before the logarithms.
pub fn loss_terms<R: Real>(tape: &Tape<R>, probs: Var, labels: &[f32]) -> Result<LossTerms> {
    let [n, c] = tape.shape(probs);
    if n * c != labels.len() {
        return Err(QecError::LengthMismatch(n * c, labels.len()));
    }
    let p = tape.clamp(probs, P_CLAMP, 1.0 - P_CLAMP);
    let q = tape.add_scalar(tape.neg(p), 1.0);
    let (lp, lq) = (tape.log(p), tape.log(q));
    let y = tape.constant(Tensor::new([n, c], labels.iter().map(|&v| R::of(v as f64)).collect())?);
    let ny = tape.constant(Tensor::new(
        [n, c],
        labels.iter().map(|&v| R::of(1.0 - v as f64)).collect(),
    )?);
    // BCE(p, y) = -(y ln p + (1 - y) ln(1 - p)); H(p) = BCE(p, p).
    let bce = tape.neg(tape.sum(tape.add(tape.mul(y, lp)?, tape.mul(ny, lq)?)?));
    let entropy = tape.neg(tape.sum(tape.add(tape.mul(p, lp)?, tape.mul(q, lq)?)?));
    Ok(LossTerms { bce, entropy })
}

/// Mean `BCE(p, y) + lambda * H(p)` on plain slices.
pub fn loss(probs: &[f64], labels: &[f64], lambda: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(QecError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let bce = |p: f64, y: f64| {
        let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            bce(p, y) + lambda * bce(p, pc)
        })
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id).data();
        let m = state.m.0[id.0].data_mut();
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = (ADAM_BETA1 * *mk as f64 + (1.0 - ADAM_BETA1) * gk as f64) as f32;
        }
        let v = state.v.0[id.0].data_mut();
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = (ADAM_BETA2 * *vk as f64 + (1.0 - ADAM_BETA2) * (gk as f64).powi(2)) as f32;
        }
        let (m, v) = (state.m.0[id.0].data(), state.v.0[id.0].data());
        for ((w, &mk), &vk) in params.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
            let step = lr * (mk as f64 / c1) / ((vk as f64 / c2).sqrt() + ADAM_EPS);
            *w = (*w as f64 - step) as f32;
        }
    }
}

/// A labeled training shot.
#[derive(Clone, Debug)]
pub struct LabeledShot {
    pub graph: DecodingGraph,
    pub labels: Vec<f32>,
}

/// Result of labeling a batch: usable shots and the count discarded by the
/// ground-truth search.
pub struct Batch {
    pub p: f64,
    pub shots: Vec<LabeledShot>,
    pub gt_timeouts: usize,
}

/// Samples and labels batch `index` of the data substream.
pub fn make_batch(lattice: &CodeLattice, noise: NoiseKind, cfg: &TrainConfig, seed: u64, index: u64) -> Result<Batch> {
    let (lo, hi) = cfg.p_range;
    let p = if hi > lo {
        stream_rng(seed, Substream::Data, index).random_range(lo..hi)
    } else {
        lo
    };
    let model = NoiseModel::new(noise, p)?;
    let shot_seed = derive_seed(seed, index);
    let labeled = crate::par::map_indexed(cfg.batch_size, |s| {
        let frame = sample_error(&model, lattice, &mut stream_rng(shot_seed, Substream::Data, s as u64));
        match ground_truth(&frame, lattice, &cfg.gt) {
            Ok(gt) => {
                let graph = build_graph(&extract_syndrome(&frame, lattice), lattice, noise);
                let labels = edge_labels(&graph, &gt.matching);
                Ok(Some(LabeledShot { graph, labels }))
            }
            Err(QecError::GroundTruthTimeout { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut shots = Vec::with_capacity(cfg.batch_size);
    let mut gt_timeouts = 0;
    for r in labeled {
        match r? {
            Some(s) => shots.push(s),
            None => gt_timeouts += 1,
        }
    }
    Ok(Batch { p, shots, gt_timeouts })
}

/// Labels `records` shots with `p` drawn uniformly from `p_range`. Record
/// `i` is sampled from seed `derive_seed(seed, i)`, which it stores. Returns
/// the dataset and the number of shots the ground-truth search discarded.
pub fn generate_dataset(
    lattice: &CodeLattice,
    noise: NoiseKind,
    p_range: (f64, f64),
    records: usize,
    seed: u64,
    gt: &GtConfig,
) -> Result<(crate::io::Dataset, usize)> {
    let (lo, hi) = p_range;
    let labeled = crate::par::map_indexed(records, |i| -> Result<Option<crate::io::LabeledRecord>> {
        let p = if hi > lo {
            stream_rng(seed, Substream::Data, i as u64).random_range(lo..hi)
        } else {
            lo
        };
        let shot_seed = derive_seed(seed, i as u64);
        let frame = sample_error(
            &NoiseModel::new(noise, p)?,
            lattice,
            &mut stream_rng(shot_seed, Substream::Data, 0),
        );
        match ground_truth(&frame, lattice, gt) {
            Ok(truth) => Ok(Some(crate::io::LabeledRecord {
                seed: shot_seed,
                p,
                syndrome: extract_syndrome(&frame, lattice),
                matching: truth.matching,
            })),
            Err(QecError::GroundTruthTimeout { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut out = Vec::with_capacity(records);
    let mut discarded = 0;
    for r in labeled {
        match r? {
            Some(rec) => out.push(rec),
            None => discarded += 1,
        }
    }
    let dataset = crate::io::Dataset {
        code: lattice.kind,
        distance: lattice.distance,
        n_stabilizers: lattice.n_stabilizers(),
        records: out,
    };
    Ok((dataset, discarded))
}

/// Batch-level statistics from one forward/backward pass.
#[derive(Clone, Debug, Default)]
pub struct BatchStats {
    pub edges: usize,
    pub bce: f64,
    pub entropy: f64,
    pub correct: usize,
    pub probs: Vec<f32>,
}

impl BatchStats {
    pub fn loss(&self, lambda: f64) -> f64 {
        self.bce + lambda * self.entropy
    }
}

/// Shots reduced into one gradient in a fixed order, independent of the
/// thread count.
const REDUCE_CHUNK: usize = 4;

/// Gradient of the batch-mean loss and its statistics.
pub fn batch_gradient(model: &QwpModel, shots: &[LabeledShot], lambda: f64) -> Result<(ParamGrads, BatchStats)> {
    let edges: usize = shots.iter().map(|s| s.labels.len()).sum();
    let scale = 1.0 / edges.max(1) as f64;
    let chunks: Vec<&[LabeledShot]> = shots.chunks(REDUCE_CHUNK).collect();
    let partial = crate::par::map_indexed(chunks.len(), |c| -> Result<(ParamGrads, BatchStats)> {
        let mut grads = ParamGrads::zeros_like(&model.params);
        let mut stats = BatchStats::default();
        for shot in chunks[c] {
            let tape = Tape::<f32>::new();
            let Some(logits) = model.forward(&tape, &shot.graph)? else {
                continue;
            };
            let probs = tape.sigmoid(logits);
            let terms = loss_terms(&tape, probs, &shot.labels)?;
            let total = tape.add(terms.bce, tape.scale(terms.entropy, lambda))?;
            stats.bce += tape.value(terms.bce).data()[0] as f64 * scale;
            stats.entropy += tape.value(terms.entropy).data()[0] as f64 * scale;
            let p = tape.value(probs).data().to_vec();
            stats.correct += p
                .iter()
                .zip(&shot.labels)
                .filter(|&(&pk, &y)| (pk >= 0.5) == (y >= 0.5))
                .count();
            stats.probs.extend(p);
            tape.backward_scaled(total, scale)?.accumulate(&mut grads);
        }
        stats.edges = stats.probs.len();
        Ok((grads, stats))
    });
    let mut grads = ParamGrads::zeros_like(&model.params);
    let mut stats = BatchStats::default();
    for r in partial {
        let (g, s) = r?;
        grads.add(&g);
        stats.bce += s.bce;
        stats.entropy += s.entropy;
        stats.correct += s.correct;
        stats.edges += s.edges;
        stats.probs.extend(s.probs);
    }
    Ok((grads, stats))
}

/// Normalized density per equal-width bin over `[0, 1]`; `p = 1` falls in
/// the last bin.
pub fn histogram(probs: &[f32], bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &p in probs {
        let b = ((p.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = probs.len().max(1) as f64;
    counts.iter().map(|&c| c as f64 * bins as f64 / n).collect()
}

/// Fraction of probability mass in `[0, 0.1) U (0.9, 1]`.
pub fn polarized_fraction(probs: &[f32]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().filter(|&&p| !(0.1..=0.9).contains(&p)).count() as f64 / probs.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    pub entropy: f64,
    pub edge_acc: f64,
    pub gt_timeouts: usize,
    pub lr: f64,
    /// Density per bin of this epoch's predicted training probabilities.
    pub histogram: Vec<f64>,
    pub polarized: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["epoch", "loss", "bce", "entropy", "edge_acc", "gt_timeouts", "lr"];

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(METRICS_HEADER)?;
        for m in rows {
            csv.write_record([
                m.epoch.to_string(),
                m.loss.to_string(),
                m.bce.to_string(),
                m.entropy.to_string(),
                m.edge_acc.to_string(),
                m.gt_timeouts.to_string(),
                m.lr.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Where `train` writes per-epoch artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn histogram(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("hist_epoch{epoch:04}.csv"))
    }
}

pub struct TrainOutcome {
    pub model: QwpModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains a fresh model. `on_epoch` sees each epoch's metrics as they land.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: QwpConfig,
    lattice: &CodeLattice,
    noise: NoiseKind,
    outputs: Option<&TrainOutputs>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = QwpModel::new(model_cfg, lattice, cfg.seed)?;
    let mut adam = AdamState::new(&model.params);
    let total = cfg.total_steps();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sums = BatchStats::default();
        let (mut loss_sum, mut timeouts) = (0.0, 0);
        let mut lr = cfg.lr_init;
        for _ in 0..cfg.batches_per_epoch {
            let batch = make_batch(lattice, noise, cfg, cfg.seed, step as u64)?;
            timeouts += batch.gt_timeouts;
            let (grads, stats) = batch_gradient(&model, &batch.shots, cfg.lambda)?;
            lr = cosine_lr(step, total, cfg.lr_init, cfg.lr_min);
            adam_step(&mut model.params, &grads, &mut adam, lr);
            loss_sum += stats.loss(cfg.lambda);
            sums.bce += stats.bce;
            sums.entropy += stats.entropy;
            sums.correct += stats.correct;
            sums.edges += stats.edges;
            sums.probs.extend(stats.probs);
            step += 1;
        }
        let nb = cfg.batches_per_epoch as f64;
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / nb,
            bce: sums.bce / nb,
            entropy: sums.entropy / nb,
            edge_acc: sums.correct as f64 / sums.edges.max(1) as f64,
            gt_timeouts: timeouts,
            lr,
            histogram: histogram(&sums.probs, cfg.hist_bins),
            polarized: polarized_fraction(&sums.probs),
        };
        on_epoch(&m);
        metrics.push(m);
        if let Some(out) = outputs {
            model.params.save(&out.checkpoint())?;
            write_metrics_csv(&out.metrics(), &metrics)?;
            crate::evaluator::write_histogram_csv(
                &out.histogram(epoch),
                &crate::evaluator::histogram_rows(&metrics[epoch].histogram),
            )?;
        }
    }
    Ok(TrainOutcome { model, metrics })
}

/// Mean loss of one shot evaluated in `f64`, for gradient checks.
pub fn shot_loss_f64(model: &QwpModel, shot: &LabeledShot, lambda: f64) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let Some(logits) = model.forward(&tape, &shot.graph)? else {
        return Ok(0.0);
    };
    let probs = tape.sigmoid(logits);
    let terms = loss_terms(&tape, probs, &shot.labels)?;
    let total = tape.add(terms.bce, tape.scale(terms.entropy, lambda))?;
    let n = shot.labels.len().max(1) as f64;
    let v = tape.value(total).data()[0] / n;
    Ok(v)
}

/// Relative error between the `f64` tape gradient of [`shot_loss_f64`] and
/// central differences, over one random coordinate of every parameter array
/// plus `extra` more drawn uniformly. Differences divide by the realized
/// `f32` step, so rounding of the stored weights does not bias them.
pub fn end_to_end_gradient_error(
    model: &QwpModel,
    shot: &LabeledShot,
    lambda: f64,
    extra: usize,
    eps: f32,
    rng: &mut impl Rng,
) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let Some(logits) = model.forward(&tape, &shot.graph)? else {
        return Ok(0.0);
    };
    let probs = tape.sigmoid(logits);
    let terms = loss_terms(&tape, probs, &shot.labels)?;
    let total = tape.add(terms.bce, tape.scale(terms.entropy, lambda))?;
    let grads = tape.backward_scaled(total, 1.0 / shot.labels.len().max(1) as f64)?;

    let ids: Vec<_> = model.params.ids().collect();
    let mut coords: Vec<(usize, usize)> = ids
        .iter()
        .map(|&id| (id.0, rng.random_range(0..model.params.get(id).len())))
        .collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.params.get(id).len()).collect();
    let n_scalars: usize = sizes.iter().sum();
    for _ in 0..extra {
        let mut k = rng.random_range(0..n_scalars);
        let mut t = 0;
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        coords.push((t, k));
    }

    let mut work = model.clone();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (t, k) in coords {
        let id = ids[t];
        let g = grads.param(id).map_or(0.0, |g| g.data()[k]);
        let w0 = work.params.get(id).data()[k];
        let mut eval = |w: f32| -> Result<(f64, f64)> {
            work.params.get_mut(id).data_mut()[k] = w;
            Ok((w as f64, shot_loss_f64(&work, shot, lambda)?))
        };
        let (hi_w, hi) = eval(w0 + eps)?;
        let (lo_w, lo) = eval(w0 - eps)?;
        work.params.get_mut(id).data_mut()[k] = w0;
        analytic.push(g);
        numeric.push((hi - lo) / (hi_w - lo_w));
    }
    let as_tensor = |v: Vec<f64>| Tensor::new([1, v.len()], v);
    Ok(crate::tensor::check::relative_error(
        &[as_tensor(analytic)?],
        &[as_tensor(numeric)?],
    ))
}
