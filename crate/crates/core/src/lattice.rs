//! Surface-code lattices: stabilizer supports, coordinates and logical
//! operators for the Toric and Rotated Surface codes.
//!
//! Coordinate conventions:
//!
//! * Toric, distance `L`: qubits live on the edges of an `L x L` periodic
//!   grid. Horizontal edge `h(x, y)` joins vertices `(x, y)` and `(x+1, y)`
//!   and has qubit index `y*L + x`; vertical edge `v(x, y)` joins `(x, y)` and
//!   `(x, y+1)` and has index `L*L + y*L + x`. Vertex (X-type) and plaquette
//!   (Z-type) stabilizers both use the integer grid `(x, y)`, plaquette
//!   `(x, y)` being the face whose lower-left corner is vertex `(x, y)`.
//! * Rotated, odd distance `L`: data qubit `(i, j)` has index `j*L + i` and
//!   feature coordinate `(2i+1, 2j+1)`. Stabilizers sit on the corner grid
//!   `(a, b)`, `0 <= a, b <= L`, with feature coordinate `(2a, 2b)`; X-type
//!   where `a + b` is even (weight-2 ones on the top/bottom edges), Z-type
//!   where it is odd (weight-2 ones on the left/right edges).
//!
//! Stabilizer indices put all X-type stabilizers first, each type ordered
//! row-major by coordinate.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QecError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliType {
    X,
    Z,
}

impl PauliType {
    pub const BOTH: [PauliType; 2] = [PauliType::X, PauliType::Z];

    pub fn other(self) -> PauliType {
        match self {
            PauliType::X => PauliType::Z,
            PauliType::Z => PauliType::X,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PauliType::X => 0,
            PauliType::Z => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeKind {
    Toric,
    RotatedSurface,
}

impl CodeKind {
    pub fn name(self) -> &'static str {
        match self {
            CodeKind::Toric => "toric",
            CodeKind::RotatedSurface => "rotated",
        }
    }
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodeKind {
    type Err = QecError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toric" => Ok(CodeKind::Toric),
            "rotated" | "rotated_surface" | "rotatedsurface" => Ok(CodeKind::RotatedSurface),
            other => Err(QecError::Config(format!("unknown code kind `{other}`"))),
        }
    }
}

/// Anything with a single Pauli type and a qubit support.
pub trait PauliOperator {
    fn pauli_type(&self) -> PauliType;
    /// Sorted qubit indices.
    fn support(&self) -> &[usize];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stabilizer {
    pub index: usize,
    pub pauli_type: PauliType,
    pub support: Vec<usize>,
    pub coord: (i32, i32),
}

impl PauliOperator for Stabilizer {
    fn pauli_type(&self) -> PauliType {
        self.pauli_type
    }
    fn support(&self) -> &[usize] {
        &self.support
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicalOperator {
    pub pauli_type: PauliType,
    pub support: Vec<usize>,
}

impl PauliOperator for LogicalOperator {
    fn pauli_type(&self) -> PauliType {
        self.pauli_type
    }
    fn support(&self) -> &[usize] {
        &self.support
    }
}

/// Number of qubits in the intersection of two sorted supports.
pub fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Single-type Pauli operators commute unless they have opposite types and
/// overlap on an odd number of qubits.
pub fn commutes(a: &impl PauliOperator, b: &impl PauliOperator) -> bool {
    a.pauli_type() == b.pauli_type() || overlap(a.support(), b.support()).is_multiple_of(2)
}

/// One hop in a same-type check graph: an error on `qubit` toggles the
/// stabilizer at both ends, or only one when `to` is `None` (open boundary).
#[derive(Clone, Copy, Debug)]
struct Hop {
    to: Option<usize>,
    qubit: usize,
}

/// Shortest-path tables for open-boundary codes, built by BFS.
#[derive(Clone, Debug)]
struct PathTables {
    dist: Vec<Vec<u32>>,
    /// `parent[s][t]`: previous stabilizer and qubit on the BFS path s -> t.
    parent: Vec<Vec<(u32, u32)>>,
    boundary_dist: Vec<u32>,
    boundary_path: Vec<Vec<usize>>,
    boundary_point: Vec<(i32, i32)>,
}

#[derive(Clone, Debug)]
pub struct CodeLattice {
    pub kind: CodeKind,
    pub distance: usize,
    pub n_qubits: usize,
    pub stabilizers: Vec<Stabilizer>,
    pub logical_ops: Vec<LogicalOperator>,
    pub center: (f64, f64),
    pub qubit_coords: Vec<(i32, i32)>,
    n_x: usize,
    /// Stabilizers of each type touching a qubit, `[X-type, Z-type]`.
    qubit_checks: Vec<[Vec<usize>; 2]>,
    paths: Option<PathTables>,
}

impl CodeLattice {
    pub fn build_toric(distance: usize) -> Result<Self> {
        if distance < 2 {
            return Err(QecError::InvalidDistance {
                code: "toric",
                distance,
                reason: "must be at least 2",
            });
        }
        let l = distance;
        let h = |x: usize, y: usize| (y % l) * l + (x % l);
        let v = |x: usize, y: usize| l * l + (y % l) * l + (x % l);

        let mut stabilizers = Vec::with_capacity(2 * l * l);
        for y in 0..l {
            for x in 0..l {
                let mut support = vec![h(x, y), h(x + l - 1, y), v(x, y), v(x, y + l - 1)];
                support.sort_unstable();
                support.dedup();
                stabilizers.push(Stabilizer {
                    index: stabilizers.len(),
                    pauli_type: PauliType::X,
                    support,
                    coord: (x as i32, y as i32),
                });
            }
        }
        for y in 0..l {
            for x in 0..l {
                let mut support = vec![h(x, y), h(x, y + 1), v(x, y), v(x + 1, y)];
                support.sort_unstable();
                support.dedup();
                stabilizers.push(Stabilizer {
                    index: stabilizers.len(),
                    pauli_type: PauliType::Z,
                    support,
                    coord: (x as i32, y as i32),
                });
            }
        }

        let logical_ops = vec![
            LogicalOperator {
                pauli_type: PauliType::X,
                support: sorted((0..l).map(|x| v(x, 0))),
            },
            LogicalOperator {
                pauli_type: PauliType::X,
                support: sorted((0..l).map(|y| h(0, y))),
            },
            LogicalOperator {
                pauli_type: PauliType::Z,
                support: sorted((0..l).map(|x| h(x, 0))),
            },
            LogicalOperator {
                pauli_type: PauliType::Z,
                support: sorted((0..l).map(|y| v(0, y))),
            },
        ];

        let mut qubit_coords = vec![(0, 0); 2 * l * l];
        for y in 0..l {
            for x in 0..l {
                qubit_coords[h(x, y)] = (2 * x as i32 + 1, 2 * y as i32);
                qubit_coords[v(x, y)] = (2 * x as i32, 2 * y as i32 + 1);
            }
        }

        Ok(Self::assemble(
            CodeKind::Toric,
            l,
            2 * l * l,
            stabilizers,
            logical_ops,
            (l as f64 / 2.0, l as f64 / 2.0),
            qubit_coords,
        ))
    }

    pub fn build_rotated(distance: usize) -> Result<Self> {
        if distance < 3 || distance.is_multiple_of(2) {
            return Err(QecError::InvalidDistance {
                code: "rotated",
                distance,
                reason: "must be odd and at least 3",
            });
        }
        let l = distance;
        let qubit = |i: usize, j: usize| j * l + i;

        let mut stabilizers = Vec::with_capacity(l * l - 1);
        for ty in PauliType::BOTH {
            for b in 0..=l {
                for a in 0..=l {
                    let even = (a + b) % 2 == 0;
                    let present = match ty {
                        PauliType::X => even && (1..l).contains(&a),
                        PauliType::Z => !even && (1..l).contains(&b),
                    };
                    if !present {
                        continue;
                    }
                    let mut support = Vec::with_capacity(4);
                    for j in b.saturating_sub(1)..=b.min(l - 1) {
                        for i in a.saturating_sub(1)..=a.min(l - 1) {
                            support.push(qubit(i, j));
                        }
                    }
                    support.sort_unstable();
                    stabilizers.push(Stabilizer {
                        index: stabilizers.len(),
                        pauli_type: ty,
                        support,
                        coord: (2 * a as i32, 2 * b as i32),
                    });
                }
            }
        }

        let logical_ops = vec![
            LogicalOperator {
                pauli_type: PauliType::X,
                support: sorted((0..l).map(|j| qubit(0, j))),
            },
            LogicalOperator {
                pauli_type: PauliType::Z,
                support: sorted((0..l).map(|i| qubit(i, 0))),
            },
        ];

        let mut qubit_coords = vec![(0, 0); l * l];
        for j in 0..l {
            for i in 0..l {
                qubit_coords[qubit(i, j)] = (2 * i as i32 + 1, 2 * j as i32 + 1);
            }
        }

        let mut lattice = Self::assemble(
            CodeKind::RotatedSurface,
            l,
            l * l,
            stabilizers,
            logical_ops,
            (l as f64, l as f64),
            qubit_coords,
        );
        lattice.paths = Some(lattice.build_path_tables());
        Ok(lattice)
    }

    pub fn build(kind: CodeKind, distance: usize) -> Result<Self> {
        match kind {
            CodeKind::Toric => Self::build_toric(distance),
            CodeKind::RotatedSurface => Self::build_rotated(distance),
        }
    }

    fn assemble(
        kind: CodeKind,
        distance: usize,
        n_qubits: usize,
        stabilizers: Vec<Stabilizer>,
        logical_ops: Vec<LogicalOperator>,
        center: (f64, f64),
        qubit_coords: Vec<(i32, i32)>,
    ) -> Self {
        let n_x = stabilizers.iter().filter(|s| s.pauli_type == PauliType::X).count();
        let mut qubit_checks: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; n_qubits];
        for s in &stabilizers {
            for &q in &s.support {
                qubit_checks[q][s.pauli_type.index()].push(s.index);
            }
        }
        CodeLattice {
            kind,
            distance,
            n_qubits,
            stabilizers,
            logical_ops,
            center,
            qubit_coords,
            n_x,
            qubit_checks,
            paths: None,
        }
    }

    pub fn n_stabilizers(&self) -> usize {
        self.stabilizers.len()
    }

    /// Index range occupied by stabilizers of type `ty`.
    pub fn type_range(&self, ty: PauliType) -> Range<usize> {
        match ty {
            PauliType::X => 0..self.n_x,
            PauliType::Z => self.n_x..self.stabilizers.len(),
        }
    }

    pub fn stabilizers_of(&self, ty: PauliType) -> &[Stabilizer] {
        &self.stabilizers[self.type_range(ty)]
    }

    pub fn logicals_of(&self, ty: PauliType) -> impl Iterator<Item = &LogicalOperator> {
        self.logical_ops.iter().filter(move |l| l.pauli_type == ty)
    }

    /// Stabilizers of type `ty` whose support contains `qubit`.
    pub fn checks_of(&self, qubit: usize, ty: PauliType) -> &[usize] {
        &self.qubit_checks[qubit][ty.index()]
    }

    pub fn has_boundary(&self) -> bool {
        self.kind == CodeKind::RotatedSurface
    }

    /// Signed displacement from stabilizer `a` to stabilizer `b` in feature
    /// units. On the torus each component is wrapped into `(-L/2, L/2]`.
    pub fn displacement(&self, a: usize, b: usize) -> (i32, i32) {
        let (pa, pb) = (self.stabilizers[a].coord, self.stabilizers[b].coord);
        let (dx, dy) = (pb.0 - pa.0, pb.1 - pa.1);
        match self.kind {
            CodeKind::Toric => {
                let l = self.distance as i32;
                (wrap(dx, l), wrap(dy, l))
            }
            CodeKind::RotatedSurface => (dx, dy),
        }
    }

    /// Number of qubits on the shortest error chain joining two stabilizers
    /// of the same type: the wrapped Manhattan distance on the torus, and the
    /// Manhattan distance of the 45-degree check lattice (Chebyshev distance
    /// on the corner grid) for the rotated code.
    pub fn chain_distance(&self, a: usize, b: usize) -> usize {
        match (&self.paths, self.kind) {
            (None, _) | (_, CodeKind::Toric) => {
                let (dx, dy) = self.displacement(a, b);
                (dx.unsigned_abs() + dy.unsigned_abs()) as usize
            }
            (Some(tables), CodeKind::RotatedSurface) => tables.dist[a][b] as usize,
        }
    }

    /// Distance from a stabilizer to the open boundary that its type's error
    /// chains can terminate on; `None` on the torus.
    pub fn boundary_distance(&self, s: usize) -> Option<usize> {
        self.paths.as_ref().map(|t| t.boundary_dist[s] as usize)
    }

    /// Displacement from a stabilizer to the nearest point of its boundary.
    pub fn boundary_displacement(&self, s: usize) -> Option<(i32, i32)> {
        self.paths.as_ref().map(|t| {
            let c = self.stabilizers[s].coord;
            let p = t.boundary_point[s];
            (p.0 - c.0, p.1 - c.1)
        })
    }

    /// Upper bound on `chain_distance` and `boundary_distance`; both codes
    /// stay within the code distance.
    pub fn max_chain_distance(&self) -> usize {
        self.distance
    }

    /// Qubits along one shortest chain from `a` to `b` (same type). The torus
    /// walk moves along x first, then along y.
    pub fn chain_path(&self, a: usize, b: usize) -> Vec<usize> {
        debug_assert_eq!(self.stabilizers[a].pauli_type, self.stabilizers[b].pauli_type);
        match &self.paths {
            None => self.toric_walk(a, b),
            Some(tables) => {
                let mut path = Vec::new();
                let mut cur = b;
                while cur != a {
                    let (prev, q) = tables.parent[a][cur];
                    path.push(q as usize);
                    cur = prev as usize;
                }
                path.reverse();
                path
            }
        }
    }

    /// Qubits along a shortest chain from `s` to its boundary.
    pub fn boundary_path(&self, s: usize) -> Option<&[usize]> {
        self.paths.as_ref().map(|t| t.boundary_path[s].as_slice())
    }

    /// Axes (bit 0 = x, bit 1 = y) along which `a` and `b` are exactly half
    /// the torus apart, so that both wrap directions are shortest.
    pub fn tied_axes(&self, a: usize, b: usize) -> u8 {
        if self.kind != CodeKind::Toric || self.distance % 2 == 1 {
            return 0;
        }
        let half = (self.distance / 2) as i32;
        let (dx, dy) = self.displacement(a, b);
        (dx == half) as u8 | (((dy == half) as u8) << 1)
    }

    /// A non-contractible loop of errors detected by neither class-`class`
    /// check, winding along `axis` (0 = x, 1 = y). Swapping the wrap
    /// direction of a tied chain adds exactly this loop.
    pub fn error_loop(&self, class: PauliType, axis: usize) -> Option<&[usize]> {
        if self.kind != CodeKind::Toric {
            return None;
        }
        // Z-class chains are X errors (X1 = v(x,0) runs along x, X2 = h(0,y)
        // along y); X-class chains are Z errors (Z1 = h(x,0), Z2 = v(0,y)).
        let idx = match class {
            PauliType::Z => axis,
            PauliType::X => 2 + axis,
        };
        Some(&self.logical_ops[idx].support)
    }

    fn toric_walk(&self, a: usize, b: usize) -> Vec<usize> {
        let l = self.distance;
        let ty = self.stabilizers[a].pauli_type;
        let (mut x, mut y) = (
            self.stabilizers[a].coord.0 as usize,
            self.stabilizers[a].coord.1 as usize,
        );
        let (dx, dy) = self.displacement(a, b);
        let h = |x: usize, y: usize| (y % l) * l + (x % l);
        let v = |x: usize, y: usize| l * l + (y % l) * l + (x % l);
        let mut path = Vec::with_capacity((dx.abs() + dy.abs()) as usize);
        for _ in 0..dx.abs() {
            if dx > 0 {
                path.push(match ty {
                    PauliType::X => h(x, y),
                    PauliType::Z => v(x + 1, y),
                });
                x = (x + 1) % l;
            } else {
                path.push(match ty {
                    PauliType::X => h(x + l - 1, y),
                    PauliType::Z => v(x, y),
                });
                x = (x + l - 1) % l;
            }
        }
        for _ in 0..dy.abs() {
            if dy > 0 {
                path.push(match ty {
                    PauliType::X => v(x, y),
                    PauliType::Z => h(x, y + 1),
                });
                y = (y + 1) % l;
            } else {
                path.push(match ty {
                    PauliType::X => v(x, y + l - 1),
                    PauliType::Z => h(x, y),
                });
                y = (y + l - 1) % l;
            }
        }
        path
    }

    fn hops(&self) -> Vec<Vec<Hop>> {
        let mut hops = vec![Vec::new(); self.stabilizers.len()];
        for q in 0..self.n_qubits {
            for ty in PauliType::BOTH {
                match self.checks_of(q, ty) {
                    [a] => hops[*a].push(Hop { to: None, qubit: q }),
                    [a, b] => {
                        hops[*a].push(Hop { to: Some(*b), qubit: q });
                        hops[*b].push(Hop { to: Some(*a), qubit: q });
                    }
                    _ => {}
                }
            }
        }
        hops
    }

    fn build_path_tables(&self) -> PathTables {
        let n = self.stabilizers.len();
        let hops = self.hops();
        let mut dist = vec![vec![u32::MAX; n]; n];
        let mut parent = vec![vec![(u32::MAX, u32::MAX); n]; n];
        let mut boundary_dist = vec![u32::MAX; n];
        let mut boundary_path = vec![Vec::new(); n];
        let mut boundary_point = vec![(0, 0); n];

        for src in 0..n {
            let mut queue = VecDeque::from([src]);
            dist[src][src] = 0;
            let mut exit: Option<(usize, usize)> = None;
            while let Some(u) = queue.pop_front() {
                for hop in &hops[u] {
                    match hop.to {
                        None => {
                            if exit.is_none() {
                                exit = Some((u, hop.qubit));
                            }
                        }
                        Some(w) if dist[src][w] == u32::MAX => {
                            dist[src][w] = dist[src][u] + 1;
                            parent[src][w] = (u as u32, hop.qubit as u32);
                            queue.push_back(w);
                        }
                        Some(_) => {}
                    }
                }
            }
            let (last, q) = exit.expect("every rotated-code check reaches its boundary");
            let mut path = vec![q];
            let mut cur = last;
            while cur != src {
                let (prev, pq) = parent[src][cur];
                path.push(pq as usize);
                cur = prev as usize;
            }
            path.reverse();
            boundary_dist[src] = path.len() as u32;
            boundary_path[src] = path;
            // The boundary point is the far side of the exit qubit, mirrored
            // through the qubit from the last stabilizer on the path.
            let sc = self.stabilizers[last].coord;
            let qc = self.qubit_coords[q];
            boundary_point[src] = (2 * qc.0 - sc.0, 2 * qc.1 - sc.1);
        }
        PathTables {
            dist,
            parent,
            boundary_dist,
            boundary_path,
            boundary_point,
        }
    }

    /// Euclidean distance of a stabilizer to the lattice center. For the
    /// rotated code the position used is the mean coordinate of the qubits
    /// in its support.
    pub fn rho(&self, s: usize) -> f64 {
        let stab = &self.stabilizers[s];
        let (x, y) = match self.kind {
            CodeKind::Toric => (stab.coord.0 as f64, stab.coord.1 as f64),
            CodeKind::RotatedSurface => {
                let n = stab.support.len() as f64;
                let (sx, sy) = stab.support.iter().fold((0.0, 0.0), |(sx, sy), &q| {
                    let c = self.qubit_coords[q];
                    (sx + c.0 as f64, sy + c.1 as f64)
                });
                (sx / n, sy / n)
            }
        };
        ((x - self.center.0).powi(2) + (y - self.center.1).powi(2)).sqrt()
    }

    /// Geometric placement in lattice units, used for positional encodings
    /// and drawing. Unlike `coord`, this separates the two stabilizer
    /// sublattices of the torus (plaquettes sit at half-integer offsets).
    pub fn stabilizer_position(&self, s: usize) -> (f64, f64) {
        let stab = &self.stabilizers[s];
        match self.kind {
            CodeKind::Toric => {
                let off = match stab.pauli_type {
                    PauliType::X => 0.0,
                    PauliType::Z => 0.5,
                };
                (stab.coord.0 as f64 + off, stab.coord.1 as f64 + off)
            }
            CodeKind::RotatedSurface => (stab.coord.0 as f64 / 2.0, stab.coord.1 as f64 / 2.0),
        }
    }

    pub fn qubit_position(&self, q: usize) -> (f64, f64) {
        let c = self.qubit_coords[q];
        (c.0 as f64 / 2.0, c.1 as f64 / 2.0)
    }
}

fn wrap(d: i32, l: i32) -> i32 {
    let mut d = d.rem_euclid(l);
    if 2 * d > l {
        d -= l;
    }
    d
}

fn sorted(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn xor_supports<'a>(ops: impl Iterator<Item = &'a Stabilizer>) -> HashSet<usize> {
        let mut acc = HashSet::new();
        for s in ops {
            for &q in &s.support {
                if !acc.remove(&q) {
                    acc.insert(q);
                }
            }
        }
        acc
    }

    #[test]
    fn toric_counts() {
        let lat = CodeLattice::build_toric(4).unwrap();
        assert_eq!(lat.n_qubits, 32);
        assert_eq!(lat.stabilizers_of(PauliType::X).len(), 16);
        assert_eq!(lat.stabilizers_of(PauliType::Z).len(), 16);
        let lat2 = CodeLattice::build_toric(2).unwrap();
        assert_eq!(lat2.n_qubits, 8);
        assert_eq!(lat2.n_stabilizers(), 8);
        assert!(CodeLattice::build_toric(1).is_err());
        assert!(CodeLattice::build_toric(0).is_err());
    }

    #[test]
    fn toric_weights_and_products() {
        for l in 3..=6 {
            let lat = CodeLattice::build_toric(l).unwrap();
            assert!(lat.stabilizers.iter().all(|s| s.support.len() == 4));
            for ty in PauliType::BOTH {
                assert!(xor_supports(lat.stabilizers_of(ty).iter()).is_empty());
            }
        }
    }

    #[test]
    fn toric_coordinates_cover_grid_once() {
        let l = 5;
        let lat = CodeLattice::build_toric(l).unwrap();
        for ty in PauliType::BOTH {
            let coords: HashSet<_> = lat.stabilizers_of(ty).iter().map(|s| s.coord).collect();
            assert_eq!(coords.len(), l * l);
            assert!(coords
                .iter()
                .all(|&(x, y)| (0..l as i32).contains(&x) && (0..l as i32).contains(&y)));
        }
        // row-major within each type
        let s = &lat.stabilizers[lat.type_range(PauliType::Z).start + 7];
        assert_eq!(s.coord, (2, 1));
    }

    #[test]
    fn rotated_counts() {
        let lat = CodeLattice::build_rotated(3).unwrap();
        assert_eq!(lat.n_qubits, 9);
        assert_eq!(lat.n_stabilizers(), 8);
        assert_eq!(lat.stabilizers_of(PauliType::X).len(), 4);
        assert_eq!(lat.stabilizers_of(PauliType::Z).len(), 4);
        let lat5 = CodeLattice::build_rotated(5).unwrap();
        assert_eq!((lat5.n_qubits, lat5.n_stabilizers()), (25, 24));
        let boundary = lat5.stabilizers.iter().filter(|s| s.support.len() == 2).count();
        assert_eq!(boundary, 8);
        assert!(lat5.stabilizers.iter().all(|s| matches!(s.support.len(), 2 | 4)));
        for bad in [1, 2, 4, 6] {
            assert!(CodeLattice::build_rotated(bad).is_err());
        }
    }

    #[test]
    fn all_stabilizer_pairs_commute() {
        let lattices = (2..=6)
            .map(|l| CodeLattice::build_toric(l).unwrap())
            .chain([3, 5].map(|l| CodeLattice::build_rotated(l).unwrap()));
        for lat in lattices {
            let mut pairs = 0;
            for (i, a) in lat.stabilizers.iter().enumerate() {
                for b in &lat.stabilizers[i + 1..] {
                    assert!(commutes(a, b), "{:?} vs {:?}", a.coord, b.coord);
                    pairs += 1;
                }
            }
            if lat.kind == CodeKind::RotatedSurface && lat.distance == 3 {
                assert_eq!(pairs, 28);
            }
        }
    }

    #[test]
    fn commutation_examples() {
        let lat = CodeLattice::build_toric(4).unwrap();
        // vertex (1,1) and the plaquette whose corner it is share two edges
        let vtx = &lat.stabilizers[lat.type_range(PauliType::X).start + 5];
        let plq = &lat.stabilizers[lat.type_range(PauliType::Z).start + 5];
        assert_eq!(overlap(&vtx.support, &plq.support), 2);
        assert!(commutes(vtx, plq));
        // disjoint
        let far = &lat.stabilizers[lat.type_range(PauliType::Z).start + 15];
        assert_eq!(overlap(&vtx.support, &far.support), 0);
        assert!(commutes(vtx, far));
    }

    #[test]
    fn logicals_pair_up() {
        for lat in [
            CodeLattice::build_toric(4).unwrap(),
            CodeLattice::build_toric(5).unwrap(),
            CodeLattice::build_rotated(5).unwrap(),
        ] {
            for lop in &lat.logical_ops {
                assert_eq!(lop.support.len(), lat.distance);
                assert!(lat.stabilizers.iter().all(|s| commutes(lop, s)));
                let partners = lat.logical_ops.iter().filter(|other| !commutes(lop, *other)).count();
                assert_eq!(partners, 1);
            }
        }
        let lat = CodeLattice::build_toric(4).unwrap();
        assert_eq!(lat.logicals_of(PauliType::X).count(), 2);
        assert_eq!(lat.logicals_of(PauliType::Z).count(), 2);
        let x1 = &lat.logical_ops[0];
        let z2 = &lat.logical_ops[3];
        assert_eq!(overlap(&x1.support, &z2.support), 1);
    }

    #[test]
    fn toric_wrap_distance() {
        let lat = CodeLattice::build_toric(6).unwrap();
        let z0 = lat.type_range(PauliType::Z).start;
        let a = z0; // (0,0)
        let b = z0 + 5 * 6; // (0,5)
        assert_eq!(lat.chain_distance(a, b), 1);
        assert_eq!(lat.displacement(a, b), (0, -1));
        assert_eq!(lat.chain_path(a, b).len(), 1);
    }

    #[test]
    fn rotated_distances_match_chebyshev() {
        let lat = CodeLattice::build_rotated(7).unwrap();
        for ty in PauliType::BOTH {
            for a in lat.type_range(ty) {
                for b in lat.type_range(ty) {
                    let (pa, pb) = (lat.stabilizers[a].coord, lat.stabilizers[b].coord);
                    let cheb = ((pa.0 - pb.0).abs().max((pa.1 - pb.1).abs()) / 2) as usize;
                    assert_eq!(lat.chain_distance(a, b), cheb);
                    assert_eq!(lat.chain_path(a, b).len(), cheb);
                }
                let (x, y) = lat.stabilizers[a].coord;
                let l = 7;
                let expect = match ty {
                    PauliType::Z => (y / 2).min(l - y / 2),
                    PauliType::X => (x / 2).min(l - x / 2),
                } as usize;
                assert_eq!(lat.boundary_distance(a), Some(expect));
                assert_eq!(lat.boundary_path(a).unwrap().len(), expect);
            }
        }
    }

    #[test]
    fn rho_examples() {
        let lat = CodeLattice::build_toric(6).unwrap();
        let x0 = lat.type_range(PauliType::X).start;
        assert_eq!(lat.rho(x0 + 3 * 6 + 3), 0.0);
        assert!((lat.rho(x0) - 18f64.sqrt()).abs() < 1e-12);

        let rot = CodeLattice::build_rotated(3).unwrap();
        let s = rot.stabilizers.iter().find(|s| s.support.len() == 2).unwrap();
        let (mx, my) = s.support.iter().fold((0.0, 0.0), |acc, &q| {
            let c = rot.qubit_coords[q];
            (acc.0 + c.0 as f64 / 2.0, acc.1 + c.1 as f64 / 2.0)
        });
        let expect = ((mx - 3.0f64).powi(2) + (my - 3.0f64).powi(2)).sqrt();
        assert!((rot.rho(s.index) - expect).abs() < 1e-12);
    }
}
