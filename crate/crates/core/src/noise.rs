//! Pauli-frame noise sampling and syndrome extraction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QecError, Result};
use crate::lattice::{CodeLattice, PauliType};
use crate::rng::{stream_rng, Substream};

/// X and Z error bits per qubit. A Y error sets both.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PauliFrame {
    pub x_bits: Vec<bool>,
    pub z_bits: Vec<bool>,
}

impl PauliFrame {
    pub fn identity(n_qubits: usize) -> Self {
        PauliFrame {
            x_bits: vec![false; n_qubits],
            z_bits: vec![false; n_qubits],
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.x_bits.len()
    }

    pub fn is_identity(&self) -> bool {
        !self.x_bits.iter().chain(&self.z_bits).any(|&b| b)
    }

    /// The error component that stabilizers of type `ty` detect: X-type
    /// checks see Z errors and vice versa.
    pub fn detected_by(&self, ty: PauliType) -> &[bool] {
        match ty {
            PauliType::X => &self.z_bits,
            PauliType::Z => &self.x_bits,
        }
    }

    pub fn detected_by_mut(&mut self, ty: PauliType) -> &mut [bool] {
        match ty {
            PauliType::X => &mut self.z_bits,
            PauliType::Z => &mut self.x_bits,
        }
    }

    pub fn xor(&self, other: &PauliFrame) -> PauliFrame {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    pub fn xor_assign(&mut self, other: &PauliFrame) {
        for (a, b) in self.x_bits.iter_mut().zip(&other.x_bits) {
            *a ^= b;
        }
        for (a, b) in self.z_bits.iter_mut().zip(&other.z_bits) {
            *a ^= b;
        }
    }

    pub fn weight(&self) -> usize {
        self.x_bits.iter().zip(&self.z_bits).filter(|(x, z)| **x || **z).count()
    }
}

/// Stabilizer outcomes, `true` marking a defect.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Syndrome(pub Vec<bool>);

impl Syndrome {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn defects(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn defect_count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Modulated form `2s - 1`.
    pub fn modulated(&self) -> Vec<f32> {
        self.0.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    pub fn from_defects(n: usize, defects: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &d in defects {
            bits[d] ^= true;
        }
        Syndrome(bits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    Independent,
    Depolarizing,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Independent => "independent",
            NoiseKind::Depolarizing => "depolarizing",
        }
    }

    /// Default training interval for the physical error rate.
    pub fn default_p_range(self) -> (f64, f64) {
        match self {
            NoiseKind::Independent => (0.03, 0.12),
            NoiseKind::Depolarizing => (0.05, 0.17),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = QecError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" | "iid" => Ok(NoiseKind::Independent),
            "depolarizing" | "depolarising" => Ok(NoiseKind::Depolarizing),
            other => Err(QecError::Config(format!("unknown noise model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub p: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(QecError::InvalidArgument(format!(
                "physical error rate {p} outside [0, 1]"
            )));
        }
        Ok(NoiseModel { kind, p })
    }

    /// Draws one Pauli on a single qubit as `(x, z)` bits.
    pub fn sample_qubit<R: Rng + ?Sized>(&self, rng: &mut R) -> (bool, bool) {
        match self.kind {
            NoiseKind::Independent => (rng.random::<f64>() < self.p, rng.random::<f64>() < self.p),
            NoiseKind::Depolarizing => {
                let r: f64 = rng.random();
                let third = self.p / 3.0;
                if r < third {
                    (true, false)
                } else if r < 2.0 * third {
                    (true, true)
                } else if r < self.p {
                    (false, true)
                } else {
                    (false, false)
                }
            }
        }
    }
}

pub fn sample_error<R: Rng + ?Sized>(model: &NoiseModel, lattice: &CodeLattice, rng: &mut R) -> PauliFrame {
    let mut frame = PauliFrame::identity(lattice.n_qubits);
    for q in 0..lattice.n_qubits {
        let (x, z) = model.sample_qubit(rng);
        frame.x_bits[q] = x;
        frame.z_bits[q] = z;
    }
    frame
}

/// Samples shot `index` of the benchmark substream under `seed`.
pub fn sample_error_seeded(model: &NoiseModel, lattice: &CodeLattice, seed: u64, index: u64) -> PauliFrame {
    sample_error(model, lattice, &mut stream_rng(seed, Substream::Shots, index))
}

pub fn extract_syndrome(frame: &PauliFrame, lattice: &CodeLattice) -> Syndrome {
    debug_assert_eq!(frame.n_qubits(), lattice.n_qubits);
    Syndrome(
        lattice
            .stabilizers
            .iter()
            .map(|s| {
                let bits = frame.detected_by(s.pauli_type);
                s.support.iter().filter(|&&q| bits[q]).count() % 2 == 1
            })
            .collect(),
    )
}

/// Bitmask of the type-`ty` logical operators that anticommute with an error
/// component given as per-qubit bits (the component type-`ty` checks detect).
pub fn logical_signature(lattice: &CodeLattice, ty: PauliType, bits: &[bool]) -> u32 {
    lattice
        .logicals_of(ty)
        .enumerate()
        .filter(|(_, l)| l.support.iter().filter(|&&q| bits[q]).count() % 2 == 1)
        .fold(0, |acc, (k, _)| acc | (1 << k))
}

/// Whether `frame ⊕ correction` acts nontrivially on the encoded qubits.
pub fn is_logical_error(frame: &PauliFrame, correction: &PauliFrame, lattice: &CodeLattice) -> Result<bool> {
    for (what, f) in [("frame", frame), ("correction", correction)] {
        if f.n_qubits() != lattice.n_qubits {
            return Err(QecError::SizeMismatch {
                what,
                expected: lattice.n_qubits,
                actual: f.n_qubits(),
            });
        }
    }
    let residual = frame.xor(correction);
    let defects = extract_syndrome(&residual, lattice).defect_count();
    if defects > 0 {
        return Err(QecError::InvalidCorrection { defects });
    }
    Ok(PauliType::BOTH
        .iter()
        .any(|&ty| logical_signature(lattice, ty, residual.detected_by(ty)) != 0))
}
