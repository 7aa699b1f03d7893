//! Browser bindings: sample a shot and decode it, and sweep logical error
//! rates. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nmwpm::decoder::{Decoder, DefectMatching, MwpmDecoder};
use nmwpm::evaluator::{estimate_threshold, run_ler, BenchResult};
use nmwpm::ground_truth::{ground_truth, GtConfig};
use nmwpm::lattice::{CodeKind, CodeLattice, PauliType};
use nmwpm::noise::{extract_syndrome, is_logical_error, sample_error_seeded, NoiseKind, NoiseModel};
use nmwpm::QecError;

#[derive(Serialize)]
struct Point {
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct Check {
    x: f64,
    y: f64,
    kind: &'static str,
}

#[derive(Serialize)]
struct Segment {
    from: Point,
    to: Point,
}

#[derive(Serialize)]
struct MatchingView {
    pairs: Vec<(usize, usize)>,
    boundary: Vec<usize>,
    /// Straight segments between matched checks, drawn the short way round
    /// on the torus.
    segments: Vec<Segment>,
    /// Qubits flipped by the correction.
    flips: Vec<usize>,
    logical_failure: bool,
}

#[derive(Serialize)]
struct Shot {
    code: &'static str,
    distance: usize,
    /// Drawing extent in lattice units.
    extent: f64,
    qubits: Vec<Point>,
    checks: Vec<Check>,
    error_x: Vec<usize>,
    error_z: Vec<usize>,
    defects: Vec<usize>,
    mwpm: MatchingView,
    /// `None` when the ground-truth search gave up on the shot.
    truth: Option<MatchingView>,
}

fn code_kind(code: &str) -> nmwpm::Result<CodeKind> {
    code.parse()
}

fn noise_kind(noise: &str) -> nmwpm::Result<NoiseKind> {
    noise.parse()
}

fn ones(bits: &[bool]) -> Vec<usize> {
    bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn view(
    lat: &CodeLattice,
    frame: &nmwpm::noise::PauliFrame,
    m: &DefectMatching,
    correction: &nmwpm::noise::PauliFrame,
) -> nmwpm::Result<MatchingView> {
    let unit = match lat.kind {
        CodeKind::Toric => 1.0,
        CodeKind::RotatedSurface => 0.5,
    };
    let at = |s: usize, d: (i32, i32)| {
        let (x, y) = lat.stabilizer_position(s);
        Segment {
            from: Point { x, y },
            to: Point {
                x: x + d.0 as f64 * unit,
                y: y + d.1 as f64 * unit,
            },
        }
    };
    let mut segments: Vec<Segment> = m.pairs.iter().map(|&(a, b)| at(a, lat.displacement(a, b))).collect();
    segments.extend(
        m.boundary
            .iter()
            .filter_map(|&s| lat.boundary_displacement(s).map(|d| at(s, d))),
    );
    let flips = (0..lat.n_qubits)
        .filter(|&q| correction.x_bits[q] || correction.z_bits[q])
        .collect();
    Ok(MatchingView {
        pairs: m.pairs.clone(),
        boundary: m.boundary.clone(),
        segments,
        flips,
        logical_failure: is_logical_error(frame, correction, lat)?,
    })
}

/// One shot of `noise` at rate `p` on the chosen code, decoded by MWPM and
/// labeled by the ground-truth search.
pub fn sample_and_decode_json(
    code: &str,
    distance: usize,
    noise: &str,
    p: f64,
    seed: u64,
    shot: u64,
) -> nmwpm::Result<String> {
    let lat = CodeLattice::build(code_kind(code)?, distance)?;
    let kind = noise_kind(noise)?;
    let frame = sample_error_seeded(&NoiseModel::new(kind, p)?, &lat, seed, shot);
    let syndrome = extract_syndrome(&frame, &lat);
    let matching = MwpmDecoder.decode(&syndrome, &lat)?;
    let mwpm = view(&lat, &frame, &matching, &matching.correction(&lat))?;
    let truth = match ground_truth(&frame, &lat, &GtConfig::default()) {
        Ok(t) => Some(view(&lat, &frame, &t.matching, &t.correction)?),
        Err(QecError::GroundTruthTimeout { .. }) => None,
        Err(e) => return Err(e),
    };
    let extent = match lat.kind {
        CodeKind::Toric => distance as f64,
        CodeKind::RotatedSurface => distance as f64 + 0.5,
    };
    let shot = Shot {
        code: lat.kind.name(),
        distance,
        extent,
        qubits: (0..lat.n_qubits)
            .map(|q| {
                let (x, y) = lat.qubit_position(q);
                Point { x, y }
            })
            .collect(),
        checks: (0..lat.n_stabilizers())
            .map(|s| {
                let (x, y) = lat.stabilizer_position(s);
                let kind = match lat.stabilizers[s].pauli_type {
                    PauliType::X => "X",
                    PauliType::Z => "Z",
                };
                Check { x, y, kind }
            })
            .collect(),
        error_x: ones(&frame.x_bits),
        error_z: ones(&frame.z_bits),
        defects: syndrome.defects().collect(),
        mwpm,
        truth,
    };
    Ok(serde_json::to_string(&shot).expect("serializable"))
}

#[derive(Serialize)]
struct Sweep {
    rows: Vec<BenchResult>,
    /// Mean crossing of adjacent distances, when the curves cross.
    threshold: Option<f64>,
    threshold_note: String,
}

/// Baseline MWPM logical error rates over `distances` and `points` evenly
/// spaced rates in `[p_lo, p_hi]`, with the crossing estimate.
#[allow(clippy::too_many_arguments)]
pub fn ler_sweep_json(
    code: &str,
    distances: &[usize],
    noise: &str,
    p_lo: f64,
    p_hi: f64,
    points: usize,
    shots: u64,
    seed: u64,
) -> nmwpm::Result<String> {
    let kind = noise_kind(noise)?;
    let code = code_kind(code)?;
    let points = points.max(2);
    let mut rows = Vec::new();
    for &l in distances {
        let lat = CodeLattice::build(code, l)?;
        for i in 0..points {
            let p = p_lo + (p_hi - p_lo) * i as f64 / (points - 1) as f64;
            rows.push(run_ler(&MwpmDecoder, &lat, kind, p, shots, seed)?);
        }
    }
    let (threshold, threshold_note) = match estimate_threshold(&rows) {
        Ok(t) => (
            Some(t.mean),
            format!("{} crossing(s), spread {:.4}", t.crossings.len(), t.spread),
        ),
        Err(e) => (None, e.to_string()),
    };
    Ok(serde_json::to_string(&Sweep {
        rows,
        threshold,
        threshold_note,
    })
    .expect("serializable"))
}

fn js(r: nmwpm::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn sample_and_decode(
    code: &str,
    distance: usize,
    noise: &str,
    p: f64,
    seed: u64,
    shot: u64,
) -> Result<String, JsError> {
    js(sample_and_decode_json(code, distance, noise, p, seed, shot))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn ler_sweep(
    code: &str,
    distances: &[u32],
    noise: &str,
    p_lo: f64,
    p_hi: f64,
    points: usize,
    shots: u64,
    seed: u64,
) -> Result<String, JsError> {
    let distances: Vec<usize> = distances.iter().map(|&d| d as usize).collect();
    js(ler_sweep_json(code, &distances, noise, p_lo, p_hi, points, shots, seed))
}
