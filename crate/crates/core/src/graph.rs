//! Syndrome to decoding graph: the complete defect graph of each matching
//! class, raw node features for every stabilizer, directed edge features and
//! the modulated syndrome.

use std::ops::Range;

use crate::lattice::{CodeKind, CodeLattice, PauliType};
use crate::noise::{NoiseKind, Syndrome};

/// Positional-encoding width: 8 channels per axis.
pub const D_PE: usize = 16;
/// Raw node feature layout: `[x, y, tau_X, tau_Z, rho, PE(16)]`.
pub const NODE_FEATURES: usize = 5 + D_PE;
/// Raw edge feature layout: `[d, dx, dy, tau_edge]`.
pub const EDGE_FEATURES: usize = 4;

/// Column ranges inside a raw node feature row.
pub mod cols {
    use std::ops::Range;
    pub const POS: Range<usize> = 0..2;
    pub const TAU: Range<usize> = 2..4;
    pub const RHO: Range<usize> = 4..5;
    pub const PE: Range<usize> = 5..21;
}

/// Sinusoidal encoding of the stabilizer placement, four sin/cos frequency
/// pairs per axis.
pub fn positional_encoding(index: usize, lattice: &CodeLattice) -> [f32; D_PE] {
    let (x, y) = lattice.stabilizer_position(index);
    let mut pe = [0.0f32; D_PE];
    for (axis, pos) in [x, y].into_iter().enumerate() {
        for i in 0..D_PE / 4 {
            let omega = 10000f64.powf(-(2.0 * i as f64) / (D_PE / 2) as f64);
            pe[axis * 8 + 2 * i] = (pos * omega).sin() as f32;
            pe[axis * 8 + 2 * i + 1] = (pos * omega).cos() as f32;
        }
    }
    pe
}

pub fn rho(index: usize, lattice: &CodeLattice) -> f64 {
    lattice.rho(index)
}

/// A token of the decoding graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphNode {
    Defect(usize),
    /// Virtual boundary node of an open-boundary code, one per class.
    Boundary(PauliType),
}

impl GraphNode {
    pub fn stabilizer(self) -> Option<usize> {
        match self {
            GraphNode::Defect(s) => Some(s),
            GraphNode::Boundary(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    pub class: PauliType,
}

#[derive(Clone, Debug)]
pub struct DecodingGraph {
    pub code: CodeKind,
    pub noise: NoiseKind,
    pub n_stabilizers: usize,
    /// Active tokens: X-class defects, the X boundary token (rotated code,
    /// nonempty class only), then the same for the Z class.
    pub nodes: Vec<GraphNode>,
    /// Node index range of each class, indexed by `PauliType::index`.
    pub class_nodes: [Range<usize>; 2],
    /// Undirected pair `u` owns directed edges `2u` (a -> b) and `2u + 1`
    /// (b -> a), with `a < b`.
    pub pairs: Vec<(usize, usize)>,
    /// Pair index range of each class.
    pub class_pairs: [Range<usize>; 2],
    pub edges: Vec<DirectedEdge>,
    /// `edges.len() x EDGE_FEATURES`, row-major.
    pub edge_features: Vec<f32>,
    /// Chain distance per directed edge, the index into the distance table.
    pub edge_distance: Vec<usize>,
    /// `n_stabilizers x NODE_FEATURES`, row-major. Inactive rows keep only
    /// their positional encoding.
    pub node_features: Vec<f32>,
    /// `2s - 1` per stabilizer.
    pub modulated: Vec<f32>,
}

impl DecodingGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_row(&self, s: usize) -> &[f32] {
        &self.node_features[s * NODE_FEATURES..(s + 1) * NODE_FEATURES]
    }

    pub fn edge_row(&self, e: usize) -> &[f32] {
        &self.edge_features[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES]
    }

    pub fn defects(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| n.stabilizer())
    }

    /// Index of the undirected pair joining nodes `a` and `b`, if any.
    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        let (a, b) = (a.min(b), a.max(b));
        if a == b || b >= self.nodes.len() {
            return None;
        }
        let class = self.class_of_node(a);
        let nodes = &self.class_nodes[class.index()];
        if !nodes.contains(&b) {
            return None;
        }
        let m = nodes.len();
        let (i, j) = (a - nodes.start, b - nodes.start);
        Some(self.class_pairs[class.index()].start + i * m - i * (i + 1) / 2 + (j - i - 1))
    }

    pub fn class_of_node(&self, node: usize) -> PauliType {
        if self.class_nodes[0].contains(&node) {
            PauliType::X
        } else {
            PauliType::Z
        }
    }

    /// Neighbors of each node (same class, all other nodes), in node order.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.pairs {
            nb[a].push(b);
            nb[b].push(a);
        }
        for list in &mut nb {
            list.sort_unstable();
        }
        nb
    }
}

pub fn build_graph(syndrome: &Syndrome, lattice: &CodeLattice, noise: NoiseKind) -> DecodingGraph {
    let n = lattice.n_stabilizers();
    debug_assert_eq!(syndrome.len(), n);

    let mut node_features = vec![0.0f32; n * NODE_FEATURES];
    for s in 0..n {
        let row = &mut node_features[s * NODE_FEATURES..(s + 1) * NODE_FEATURES];
        row[cols::PE].copy_from_slice(&positional_encoding(s, lattice));
        if syndrome.0[s] {
            let stab = &lattice.stabilizers[s];
            row[0] = stab.coord.0 as f32;
            row[1] = stab.coord.1 as f32;
            row[cols::TAU.start + stab.pauli_type.index()] = 1.0;
            row[cols::RHO.start] = lattice.rho(s) as f32;
        }
    }

    let mut nodes = Vec::new();
    let mut class_nodes = [0..0, 0..0];
    let mut class_pairs = [0..0, 0..0];
    let mut pairs = Vec::new();
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    let mut edge_distance = Vec::new();

    for class in PauliType::BOTH {
        let start = nodes.len();
        nodes.extend(
            lattice
                .type_range(class)
                .filter(|&s| syndrome.0[s])
                .map(GraphNode::Defect),
        );
        if lattice.has_boundary() && nodes.len() > start {
            nodes.push(GraphNode::Boundary(class));
        }
        let range = start..nodes.len();
        let pair_start = pairs.len();
        let tau_edge = class.index() as f32;
        for a in range.clone() {
            for b in a + 1..range.end {
                let (d, (dx, dy)) = match (nodes[a], nodes[b]) {
                    (GraphNode::Defect(sa), GraphNode::Defect(sb)) => {
                        (lattice.chain_distance(sa, sb), lattice.displacement(sa, sb))
                    }
                    (GraphNode::Defect(sa), GraphNode::Boundary(_)) => (
                        lattice.boundary_distance(sa).unwrap_or(0),
                        lattice.boundary_displacement(sa).unwrap_or((0, 0)),
                    ),
                    _ => unreachable!("boundary token is last in its class"),
                };
                pairs.push((a, b));
                for (src, dst, sign) in [(a, b, 1.0f32), (b, a, -1.0)] {
                    edges.push(DirectedEdge { src, dst, class });
                    edge_features.extend_from_slice(&[d as f32, sign * dx as f32, sign * dy as f32, tau_edge]);
                    edge_distance.push(d);
                }
            }
        }
        class_nodes[class.index()] = range;
        class_pairs[class.index()] = pair_start..pairs.len();
    }

    DecodingGraph {
        code: lattice.kind,
        noise,
        n_stabilizers: n,
        nodes,
        class_nodes,
        pairs,
        class_pairs,
        edges,
        edge_features,
        edge_distance,
        node_features,
        modulated: syndrome.modulated(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{extract_syndrome, sample_error_seeded, NoiseModel};

    fn toric(l: usize) -> CodeLattice {
        CodeLattice::build_toric(l).unwrap()
    }

    #[test]
    fn four_defects_give_twelve_edges() {
        let lat = toric(4);
        let z0 = lat.type_range(PauliType::Z).start;
        let s = Syndrome::from_defects(lat.n_stabilizers(), &[z0, z0 + 1, z0 + 5, z0 + 9]);
        let g = build_graph(&s, &lat, NoiseKind::Independent);
        assert_eq!(g.pairs.len(), 6);
        assert_eq!(g.n_edges(), 12);
        for (u, &(a, b)) in g.pairs.iter().enumerate() {
            assert_eq!((g.edges[2 * u].src, g.edges[2 * u].dst), (a, b));
            assert_eq!((g.edges[2 * u + 1].src, g.edges[2 * u + 1].dst), (b, a));
            assert_eq!(g.edge_row(2 * u)[0], g.edge_row(2 * u + 1)[0]);
            assert_eq!(g.edge_row(2 * u)[1], -g.edge_row(2 * u + 1)[1]);
            assert_eq!(g.edge_row(2 * u)[3], 1.0);
        }
    }

    #[test]
    fn wrapped_distance_feature() {
        let lat = toric(6);
        let z0 = lat.type_range(PauliType::Z).start;
        let s = Syndrome::from_defects(lat.n_stabilizers(), &[z0, z0 + 30]);
        let g = build_graph(&s, &lat, NoiseKind::Independent);
        assert_eq!(g.edge_row(0), &[1.0, 0.0, -1.0, 1.0]);
        assert_eq!(g.edge_distance, vec![1, 1]);
    }

    #[test]
    fn empty_syndrome() {
        let lat = toric(4);
        let g = build_graph(
            &Syndrome(vec![false; lat.n_stabilizers()]),
            &lat,
            NoiseKind::Depolarizing,
        );
        assert_eq!((g.n_nodes(), g.n_edges()), (0, 0));
        assert!(g.modulated.iter().all(|&m| m == -1.0));
        let rot = CodeLattice::build_rotated(3).unwrap();
        let g = build_graph(&Syndrome(vec![false; 8]), &rot, NoiseKind::Depolarizing);
        assert_eq!(g.n_nodes(), 0);
    }

    #[test]
    fn classes_do_not_mix() {
        let lat = toric(5);
        let m = NoiseModel::new(NoiseKind::Depolarizing, 0.15).unwrap();
        for i in 0..50 {
            let s = extract_syndrome(&sample_error_seeded(&m, &lat, 3, i), &lat);
            let g = build_graph(&s, &lat, NoiseKind::Depolarizing);
            let kx = lat.type_range(PauliType::X).filter(|&k| s.0[k]).count();
            let kz = s.defect_count() - kx;
            assert_eq!(g.n_edges(), kx * kx.saturating_sub(1) + kz * kz.saturating_sub(1));
            for (u, &(a, b)) in g.pairs.iter().enumerate() {
                assert_eq!(g.pair_index(a, b), Some(u));
                assert_eq!(g.pair_index(b, a), Some(u));
            }
            for e in &g.edges {
                assert_eq!(g.class_of_node(e.src), g.class_of_node(e.dst));
                assert_eq!(g.class_of_node(e.src), e.class);
            }
        }
    }

    #[test]
    fn rotated_boundary_tokens() {
        let lat = CodeLattice::build_rotated(5).unwrap();
        let z = lat.type_range(PauliType::Z).start;
        let s = Syndrome::from_defects(lat.n_stabilizers(), &[z, z + 3]);
        let g = build_graph(&s, &lat, NoiseKind::Independent);
        assert_eq!(
            g.nodes,
            vec![
                GraphNode::Defect(z),
                GraphNode::Defect(z + 3),
                GraphNode::Boundary(PauliType::Z)
            ]
        );
        assert_eq!(g.n_edges(), 6);
        let bd = lat.boundary_distance(z).unwrap() as f32;
        let u = g.pair_index(0, 2).unwrap();
        assert_eq!(g.edge_row(2 * u)[0], bd);
    }

    #[test]
    fn zeroing_rule_and_modulation() {
        let lat = toric(4);
        let m = NoiseModel::new(NoiseKind::Independent, 0.1).unwrap();
        let s = extract_syndrome(&sample_error_seeded(&m, &lat, 9, 2), &lat);
        let g = build_graph(&s, &lat, NoiseKind::Independent);
        for k in 0..lat.n_stabilizers() {
            let row = g.node_row(k);
            let geometry_zero = row[..cols::PE.start].iter().all(|&v| v == 0.0);
            if s.0[k] {
                assert_eq!(g.modulated[k], 1.0);
                assert_eq!(row[cols::TAU].iter().sum::<f32>(), 1.0);
            } else {
                assert_eq!(g.modulated[k], -1.0);
                assert!(geometry_zero);
            }
            assert!(row[cols::PE].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn pe_is_deterministic_and_injective() {
        for lat in (2..=10)
            .map(toric)
            .chain([3, 5, 7, 9].map(|l| CodeLattice::build_rotated(l).unwrap()))
        {
            let pes: Vec<_> = (0..lat.n_stabilizers()).map(|s| positional_encoding(s, &lat)).collect();
            assert_eq!(pes[0], positional_encoding(0, &lat));
            for i in 0..pes.len() {
                for j in i + 1..pes.len() {
                    let diff: f32 = pes[i].iter().zip(&pes[j]).map(|(a, b)| (a - b).abs()).sum();
                    assert!(diff > 1e-4, "{} {} collide on {:?}", i, j, lat.kind);
                }
            }
        }
    }

    #[test]
    fn torus_metric_matches_images() {
        for l in 2..=8 {
            let lat = toric(l);
            let li = l as i32;
            for ty in PauliType::BOTH {
                let r = lat.type_range(ty);
                for a in r.clone() {
                    for b in r.clone() {
                        let (pa, pb) = (lat.stabilizers[a].coord, lat.stabilizers[b].coord);
                        let mut best = i32::MAX;
                        for ox in [-li, 0, li] {
                            for oy in [-li, 0, li] {
                                let d = (pb.0 + ox - pa.0).abs() + (pb.1 + oy - pa.1).abs();
                                best = best.min(d);
                            }
                        }
                        assert_eq!(lat.chain_distance(a, b) as i32, best);
                        assert_eq!(lat.chain_distance(a, b), lat.chain_distance(b, a));
                        assert!(lat.chain_distance(a, b) <= lat.max_chain_distance());
                        for c in r.clone().step_by(3) {
                            assert!(lat.chain_distance(a, b) <= lat.chain_distance(a, c) + lat.chain_distance(c, b));
                        }
                    }
                }
            }
        }
    }
}
