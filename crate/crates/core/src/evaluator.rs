//! Monte-Carlo benchmarks: logical error rates with Wilson intervals,
//! threshold crossings between code distances, and the CSV files consumed by
//! the plotting scripts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{edge_labels, Decoder};
use crate::error::{QecError, Result};
use crate::graph::build_graph;
use crate::ground_truth::{ground_truth, GtConfig};
use crate::lattice::CodeLattice;
use crate::noise::{extract_syndrome, is_logical_error, sample_error, sample_error_seeded, NoiseKind, NoiseModel};
use crate::qwp::QwpModel;
use crate::rng::{stream_rng, Substream};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub decoder: String,
    pub code: String,
    #[serde(rename = "L")]
    pub distance: usize,
    pub noise: String,
    pub p: f64,
    pub shots: u64,
    pub failures: u64,
    pub ler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "decoder", "code", "L", "noise", "p", "shots", "failures", "ler", "ci_lo", "ci_hi",
];

/// Wilson score interval for `failures` out of `shots`.
pub fn wilson(failures: u64, shots: u64, z: f64) -> (f64, f64) {
    if shots == 0 {
        return (0.0, 1.0);
    }
    let n = shots as f64;
    let phat = failures as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl BenchResult {
    pub fn new(decoder: &str, lattice: &CodeLattice, noise: NoiseKind, p: f64, shots: u64, failures: u64) -> Self {
        let (ci_lo, ci_hi) = wilson(failures, shots, Z95);
        BenchResult {
            decoder: decoder.to_string(),
            code: lattice.kind.name().to_string(),
            distance: lattice.distance,
            noise: noise.name().to_string(),
            p,
            shots,
            failures,
            ler: failures as f64 / shots.max(1) as f64,
            ci_lo,
            ci_hi,
        }
    }
}

/// Shots per parallel work item.
const SHOT_CHUNK: u64 = 256;

/// Logical error rate of `decoder` on shots `0..shots` of the benchmark
/// substream. Identical `(seed, p)` gives identical shots for every decoder,
/// so runs are paired.
pub fn run_ler(
    decoder: &dyn Decoder,
    lattice: &CodeLattice,
    noise: NoiseKind,
    p: f64,
    shots: u64,
    seed: u64,
) -> Result<BenchResult> {
    if shots == 0 {
        return Err(QecError::InvalidArgument("shots must be at least 1".into()));
    }
    let model = NoiseModel::new(noise, p)?;
    let chunks = shots.div_ceil(SHOT_CHUNK) as usize;
    let per_chunk = crate::par::map_indexed(chunks, |c| -> Result<u64> {
        let start = c as u64 * SHOT_CHUNK;
        let mut failures = 0;
        for i in start..(start + SHOT_CHUNK).min(shots) {
            let frame = sample_error_seeded(&model, lattice, seed, i);
            let syndrome = extract_syndrome(&frame, lattice);
            let matching = decoder.decode(&syndrome, lattice)?;
            if !matching.covers(&syndrome) {
                return Err(QecError::InvalidArgument(format!(
                    "{} left defects unmatched on shot {i}",
                    decoder.tag()
                )));
            }
            // A nonzero residual syndrome is reported as an error here.
            failures += is_logical_error(&frame, &matching.correction(lattice), lattice)? as u64;
        }
        Ok(failures)
    });
    let failures = per_chunk.into_iter().sum::<Result<u64>>()?;
    Ok(BenchResult::new(decoder.tag(), lattice, noise, p, shots, failures))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub l_small: usize,
    pub l_large: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdEstimate {
    pub crossings: Vec<Crossing>,
    pub mean: f64,
    /// Population standard deviation of the pairwise crossings.
    pub spread: f64,
}

/// `ln(ler)` with zero-failure points floored at half a failure.
fn log_ler(r: &BenchResult) -> f64 {
    (r.failures as f64).max(0.5).ln() - (r.shots.max(1) as f64).ln()
}

/// Crossing of two LER curves sampled on the same p grid, by linear
/// interpolation of `ln(ler)` in p.
fn crossing(small: &[&BenchResult], large: &[&BenchResult]) -> Result<Option<f64>> {
    let diffs: Vec<(f64, f64)> = small
        .iter()
        .zip(large)
        .map(|(a, b)| (a.p, log_ler(b) - log_ler(a)))
        .collect();
    if diffs.iter().all(|&(_, d)| d == 0.0) {
        return Err(QecError::DegenerateCrossing(small[0].distance, large[0].distance));
    }
    for w in diffs.windows(2) {
        let ((p0, d0), (p1, d1)) = (w[0], w[1]);
        if d0 == 0.0 {
            return Ok(Some(p0));
        }
        if d0.signum() != d1.signum() {
            return Ok(Some(if d1 == 0.0 { p1 } else { p0 + (p1 - p0) * d0 / (d0 - d1) }));
        }
    }
    Ok(None)
}

/// Crossings of adjacent code distances of one decoder's grid.
pub fn estimate_threshold(results: &[BenchResult]) -> Result<ThresholdEstimate> {
    let mut distances: Vec<usize> = results.iter().map(|r| r.distance).collect();
    distances.sort_unstable();
    distances.dedup();
    if distances.len() < 2 {
        return Err(QecError::InvalidArgument(
            "threshold needs at least two code distances".into(),
        ));
    }
    let curve = |l: usize| {
        let mut c: Vec<&BenchResult> = results.iter().filter(|r| r.distance == l).collect();
        c.sort_by(|a, b| a.p.total_cmp(&b.p));
        c
    };
    let mut crossings = Vec::new();
    for pair in distances.windows(2) {
        let (a, b) = (curve(pair[0]), curve(pair[1]));
        let grid = |c: &[&BenchResult]| c.iter().map(|r| r.p).collect::<Vec<_>>();
        if grid(&a) != grid(&b) || a.len() < 2 {
            return Err(QecError::InvalidArgument(format!(
                "L={} and L={} are not sampled on a shared grid of at least two points",
                pair[0], pair[1]
            )));
        }
        if let Some(p) = crossing(&a, &b)? {
            crossings.push(Crossing {
                l_small: pair[0],
                l_large: pair[1],
                p,
            });
        }
    }
    if crossings.is_empty() {
        return Err(QecError::NoCrossing);
    }
    let n = crossings.len() as f64;
    let mean = crossings.iter().map(|c| c.p).sum::<f64>() / n;
    let spread = (crossings.iter().map(|c| (c.p - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ThresholdEstimate {
        crossings,
        mean,
        spread,
    })
}

/// One row of the histogram CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub density: f64,
}

pub const HIST_HEADER: [&str; 3] = ["bin_lo", "bin_hi", "density"];

pub fn histogram_rows(densities: &[f64]) -> Vec<HistRow> {
    let bins = densities.len();
    densities
        .iter()
        .enumerate()
        .map(|(i, &density)| HistRow {
            bin_lo: i as f64 / bins as f64,
            bin_hi: (i + 1) as f64 / bins as f64,
            density,
        })
        .collect()
}

/// Normalized density of `probs` over `bins` equal bins of `[0, 1]`.
pub fn export_histogram(probs: &[f32], bins: usize) -> Result<Vec<HistRow>> {
    if bins < 2 {
        return Err(QecError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if probs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(histogram_rows(&crate::trainer::histogram(probs, bins)))
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        csv.write_record(header)?;
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let have: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if have != header {
        return Err(QecError::Format(format!(
            "{}: header {have:?}, expected {header:?}",
            path.display()
        )));
    }
    Ok(rdr.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn write_results_csv(path: &Path, rows: &[BenchResult]) -> Result<()> {
    write_rows(path, &RESULTS_HEADER, rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<BenchResult>> {
    read_rows(path, &RESULTS_HEADER)
}

pub fn write_histogram_csv(path: &Path, rows: &[HistRow]) -> Result<()> {
    write_rows(path, &HIST_HEADER, rows)
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<HistRow>> {
    read_rows(path, &HIST_HEADER)
}

/// Held-out directed-edge classification on ground-truth labeled shots.
#[derive(Clone, Debug, Default)]
pub struct EdgeEval {
    pub shots: usize,
    pub gt_timeouts: usize,
    pub edges: usize,
    pub correct: usize,
    pub probs: Vec<f32>,
}

impl EdgeEval {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.edges.max(1) as f64
    }
}

/// Scores `model` on `shots` fresh shots of the evaluation substream, with
/// `p` spread evenly over `p_range`.
pub fn evaluate_edges(
    model: &QwpModel,
    lattice: &CodeLattice,
    noise: NoiseKind,
    p_range: (f64, f64),
    shots: usize,
    seed: u64,
    gt: &GtConfig,
) -> Result<EdgeEval> {
    let per_shot = crate::par::map_indexed(shots, |i| -> Result<Option<(usize, Vec<f32>)>> {
        let t = if shots > 1 { i as f64 / (shots - 1) as f64 } else { 0.5 };
        let p = p_range.0 + t * (p_range.1 - p_range.0);
        let frame = sample_error(
            &NoiseModel::new(noise, p)?,
            lattice,
            &mut stream_rng(seed, Substream::Eval, i as u64),
        );
        let truth = match ground_truth(&frame, lattice, gt) {
            Ok(g) => g,
            Err(QecError::GroundTruthTimeout { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let graph = build_graph(&extract_syndrome(&frame, lattice), lattice, noise);
        let labels = edge_labels(&graph, &truth.matching);
        let probs = model.predict_edges(&graph)?;
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|&(&p, &y)| (p >= 0.5) == (y >= 0.5))
            .count();
        Ok(Some((correct, probs)))
    });
    let mut out = EdgeEval {
        shots,
        ..EdgeEval::default()
    };
    for r in per_shot {
        match r? {
            Some((c, probs)) => {
                out.correct += c;
                out.edges += probs.len();
                out.probs.extend(probs);
            }
            None => out.gt_timeouts += 1,
        }
    }
    Ok(out)
}

/// Ground-truth labeling outcomes over a batch of shots.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GtAudit {
    pub shots: u64,
    /// Shots whose search ran out of wall-clock budget.
    pub timeouts: u64,
    /// Shots whose search space was exhausted without a valid matching.
    pub exhausted: u64,
    /// Labeled shots whose correction clears the syndrome.
    pub residual_ok: u64,
    /// Labeled shots whose correction is logically equivalent to the error.
    pub logical_ok: u64,
    pub brute_force: u64,
}

impl GtAudit {
    pub fn labeled(&self) -> u64 {
        self.shots - self.timeouts - self.exhausted
    }

    /// Fraction of shots without a label.
    pub fn discard_rate(&self) -> f64 {
        (self.timeouts + self.exhausted) as f64 / self.shots.max(1) as f64
    }

    /// Every labeled shot is valid.
    pub fn all_valid(&self) -> bool {
        self.residual_ok == self.labeled() && self.logical_ok == self.labeled()
    }
}

/// Labels shots `0..shots` of the benchmark substream and checks each label.
pub fn gt_audit(
    lattice: &CodeLattice,
    noise: NoiseKind,
    p: f64,
    shots: u64,
    seed: u64,
    gt: &GtConfig,
) -> Result<GtAudit> {
    let model = NoiseModel::new(noise, p)?;
    let chunks = shots.div_ceil(SHOT_CHUNK) as usize;
    let parts = crate::par::map_indexed(chunks, |c| -> Result<GtAudit> {
        let start = c as u64 * SHOT_CHUNK;
        let mut a = GtAudit::default();
        for i in start..(start + SHOT_CHUNK).min(shots) {
            a.shots += 1;
            let frame = sample_error_seeded(&model, lattice, seed, i);
            match ground_truth(&frame, lattice, gt) {
                Ok(truth) => {
                    a.brute_force += truth.stats.brute_force as u64;
                    let residual = extract_syndrome(&frame.xor(&truth.correction), lattice);
                    if residual.is_zero() {
                        a.residual_ok += 1;
                        a.logical_ok += !is_logical_error(&frame, &truth.correction, lattice)? as u64;
                    }
                }
                Err(QecError::GroundTruthTimeout { exhausted: true, .. }) => a.exhausted += 1,
                Err(QecError::GroundTruthTimeout { .. }) => a.timeouts += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(a)
    });
    let mut total = GtAudit::default();
    for part in parts {
        let a = part?;
        total.shots += a.shots;
        total.timeouts += a.timeouts;
        total.exhausted += a.exhausted;
        total.residual_ok += a.residual_ok;
        total.logical_ok += a.logical_ok;
        total.brute_force += a.brute_force;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::MwpmDecoder;
    use crate::lattice::CodeKind;

    #[test]
    fn wilson_matches_reference_intervals() {
        // Frozen from statsmodels proportion_confint(method="wilson").
        let cases = [
            (0, 10, 0.0, 0.277_532_799_862_889_26),
            (5, 10, 0.236_593_090_512_563_94, 0.763_406_909_487_436_1),
            (3, 1000, 0.001_020_783_881_138_619_5, 0.008_783_014_053_503_176),
            (100, 100, 0.963_006_501_793_014_3, 1.0),
        ];
        for (k, n, lo, hi) in cases {
            let (a, b) = wilson(k, n, Z95);
            assert!((a - lo).abs() < 1e-12 && (b - hi).abs() < 1e-12, "{k}/{n}: {a} {b}");
        }
    }

    fn row(l: usize, p: f64, failures: u64) -> BenchResult {
        let lat = CodeLattice::build(CodeKind::Toric, l).unwrap();
        BenchResult::new("mwpm_manhattan", &lat, NoiseKind::Independent, p, 10_000, failures)
    }

    #[test]
    fn crossing_of_straight_log_curves() {
        // ln ler = a_L + b_L (p - 0.1); curves cross where the lines meet.
        let ps = [0.08, 0.09, 0.10, 0.11, 0.12];
        let curve = |l: usize, a: f64, b: f64| -> Vec<BenchResult> {
            ps.iter()
                .map(|&p| row(l, p, ((a + b * (p - 0.1)).exp() * 10_000.0).round() as u64))
                .collect()
        };
        let mut rows = curve(4, (0.1f64).ln(), 10.0);
        rows.extend(curve(6, (0.1f64).ln() + 0.05, 20.0));
        let est = estimate_threshold(&rows).unwrap();
        assert_eq!(est.crossings.len(), 1);
        // Integer failure counts perturb the exact crossing at 0.095 slightly.
        assert!((est.mean - 0.095).abs() < 5e-4, "{}", est.mean);
        assert_eq!(est.spread, 0.0);
    }

    #[test]
    fn parallel_curves_have_no_crossing() {
        let mut rows = Vec::new();
        for (p, f4, f6) in [(0.05, 100, 50), (0.07, 200, 120), (0.09, 400, 300)] {
            rows.push(row(4, p, f4));
            rows.push(row(6, p, f6));
        }
        assert!(matches!(estimate_threshold(&rows), Err(QecError::NoCrossing)));
        let same: Vec<_> = [4, 6].iter().flat_map(|&l| [row(l, 0.1, 7), row(l, 0.2, 9)]).collect();
        assert!(matches!(
            estimate_threshold(&same),
            Err(QecError::DegenerateCrossing(4, 6))
        ));
        assert!(estimate_threshold(&rows[..2]).is_err());
    }

    #[test]
    fn results_csv_round_trips_with_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row(4, 0.1, 120), row(6, 0.1, 90)];
        write_results_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "decoder,code,L,noise,p,shots,failures,ler,ci_lo,ci_hi"
        );
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("mwpm_manhattan,toric,4,independent,0.1,10000,120,0.012,"));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
        std::fs::write(&path, "decoder,L\nx,4\n").unwrap();
        assert!(matches!(read_results_csv(&path), Err(QecError::Format(_))));
    }

    #[test]
    fn histogram_csv_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        let rows = export_histogram(&[0.01, 0.02, 0.6, 0.99], 4).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].bin_lo, rows[0].bin_hi, rows[0].density), (0.0, 0.25, 2.0));
        let mass: f64 = rows.iter().map(|r| r.density * (r.bin_hi - r.bin_lo)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        write_histogram_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "bin_lo,bin_hi,density");
        assert_eq!(read_histogram_csv(&path).unwrap(), rows);
        assert!(export_histogram(&[], 4).unwrap().is_empty());
        assert!(export_histogram(&[0.5], 1).is_err());
    }

    #[test]
    fn ler_runs_are_paired_and_reproducible() {
        let lat = CodeLattice::build(CodeKind::Toric, 4).unwrap();
        let dec = MwpmDecoder;
        let a = run_ler(&dec, &lat, NoiseKind::Independent, 0.08, 600, 3).unwrap();
        let b = run_ler(&dec, &lat, NoiseKind::Independent, 0.08, 600, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.failures > 0 && a.failures < 600);
        assert!(a.ci_lo <= a.ler && a.ler <= a.ci_hi);
        let zero = run_ler(&dec, &lat, NoiseKind::Independent, 0.0, 100, 3).unwrap();
        assert_eq!(zero.failures, 0);
        assert!(run_ler(&dec, &lat, NoiseKind::Independent, 0.08, 0, 3).is_err());
    }

    #[test]
    fn wilson_width_shrinks_as_inverse_root_shots() {
        let width = |n: u64| {
            let (lo, hi) = wilson(n / 10, n, Z95);
            hi - lo
        };
        let ratio = width(10_000) / width(40_000);
        assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn audit_counts_add_up() {
        let lat = CodeLattice::build(CodeKind::Toric, 4).unwrap();
        let a = gt_audit(&lat, NoiseKind::Depolarizing, 0.1, 300, 1, &GtConfig::default()).unwrap();
        assert_eq!(a.shots, 300);
        assert!(a.all_valid(), "{a:?}");
        assert!(a.discard_rate() < 0.05);
    }
}
