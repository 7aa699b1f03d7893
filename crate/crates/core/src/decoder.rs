//! The matching back end shared by every weight source: per-class MWPM over
//! the defects (plus virtual boundary copies on open-boundary codes) and the
//! Pauli correction induced by the matched pairs.

use crate::blossom::{mwpm, MatchGraph};
use crate::error::Result;
use crate::graph::{DecodingGraph, GraphNode};
use crate::lattice::{CodeLattice, PauliType};
use crate::noise::{NoiseKind, PauliFrame, Syndrome};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before any log.
pub const P_CLAMP: f64 = 1e-7;

/// A decoder's answer: defect pairs (stabilizer indices, `a < b`) and
/// defects matched to the boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefectMatching {
    pub pairs: Vec<(usize, usize)>,
    pub boundary: Vec<usize>,
}

impl DefectMatching {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.boundary.is_empty()
    }

    fn normalize(&mut self) {
        for p in &mut self.pairs {
            *p = (p.0.min(p.1), p.0.max(p.1));
        }
        self.pairs.sort_unstable();
        self.boundary.sort_unstable();
    }

    /// Whether every defect of `syndrome` appears exactly once and nothing
    /// else appears.
    pub fn covers(&self, syndrome: &Syndrome) -> bool {
        let mut seen = vec![false; syndrome.len()];
        let members = self
            .pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .chain(self.boundary.iter().copied());
        for s in members {
            if s >= seen.len() || seen[s] || !syndrome.0[s] {
                return false;
            }
            seen[s] = true;
        }
        seen == syndrome.0
    }

    /// Flips along one shortest chain per matched pair, and along the
    /// shortest chain to the boundary per boundary-matched defect.
    pub fn correction(&self, lattice: &CodeLattice) -> PauliFrame {
        let mut frame = PauliFrame::identity(lattice.n_qubits);
        for &(a, b) in &self.pairs {
            let class = lattice.stabilizers[a].pauli_type;
            let bits = frame.detected_by_mut(class);
            for q in lattice.chain_path(a, b) {
                bits[q] ^= true;
            }
        }
        for &s in &self.boundary {
            let class = lattice.stabilizers[s].pauli_type;
            let path = lattice
                .boundary_path(s)
                .expect("boundary matches only exist on open-boundary codes");
            let bits = frame.detected_by_mut(class);
            for &q in path {
                bits[q] ^= true;
            }
        }
        frame
    }
}

/// Minimum-weight matching of one class. `weight(i, j)` gives the weight
/// between local defects `i < j`, and `weight(i, None)` the weight of
/// defect `i` to the boundary (only queried when `boundary` is set). With a
/// boundary, every defect gets its own zero-cost-to-each-other virtual copy,
/// so any number of defects may end on the boundary.
pub fn match_class(
    defects: &[usize],
    boundary: bool,
    mut weight: impl FnMut(usize, Option<usize>) -> f64,
) -> Result<DefectMatching> {
    let k = defects.len();
    let mut out = DefectMatching::default();
    if k == 0 {
        return Ok(out);
    }
    let n = if boundary { 2 * k } else { k };
    let mut g = MatchGraph::new(n);
    for i in 0..k {
        for j in i + 1..k {
            g.set(i, j, weight(i, Some(j)));
        }
    }
    if boundary {
        for i in 0..k {
            let wb = weight(i, None);
            for v in k..2 * k {
                g.set(i, v, wb);
            }
        }
    }
    for (a, b) in mwpm(&g)?.pairs {
        match (a < k, b < k) {
            (true, true) => out.pairs.push((defects[a], defects[b])),
            (true, false) => out.boundary.push(defects[a]),
            (false, true) => out.boundary.push(defects[b]),
            (false, false) => {}
        }
    }
    out.normalize();
    Ok(out)
}

/// Matches both classes of `graph` given one weight per undirected pair.
pub fn match_graph(graph: &DecodingGraph, pair_weights: &[f64]) -> Result<DefectMatching> {
    debug_assert_eq!(pair_weights.len(), graph.pairs.len());
    let mut out = DefectMatching::default();
    for class in PauliType::BOTH {
        let nodes = graph.class_nodes[class.index()].clone();
        let defects: Vec<usize> = graph.nodes[nodes.clone()]
            .iter()
            .filter_map(|n| n.stabilizer())
            .collect();
        let boundary_node = graph.nodes[nodes.clone()]
            .iter()
            .position(|n| matches!(n, GraphNode::Boundary(_)))
            .map(|i| nodes.start + i);
        let m = match_class(&defects, boundary_node.is_some(), |i, j| {
            let b = j.map_or_else(|| boundary_node.unwrap(), |j| nodes.start + j);
            pair_weights[graph.pair_index(nodes.start + i, b).unwrap()]
        })?;
        out.pairs.extend(m.pairs);
        out.boundary.extend(m.boundary);
    }
    out.normalize();
    Ok(out)
}

/// Chain-length weight per undirected pair of `graph`.
pub fn distance_weights(graph: &DecodingGraph) -> Vec<f64> {
    (0..graph.pairs.len())
        .map(|u| graph.edge_distance[2 * u] as f64)
        .collect()
}

/// Merges the two directed probabilities of each pair by their maximum and
/// maps it to `-ln p`.
pub fn edge_weights(directed_probs: &[f32]) -> Vec<f64> {
    directed_probs
        .chunks_exact(2)
        .map(|pq| probability_weight(pq[0].max(pq[1]) as f64))
        .collect()
}

pub fn probability_weight(p: f64) -> f64 {
    -p.clamp(P_CLAMP, 1.0 - P_CLAMP).ln()
}

/// Per-directed-edge labels (1 for both directions of a matched pair).
pub fn edge_labels(graph: &DecodingGraph, matching: &DefectMatching) -> Vec<f32> {
    let mut node_of = std::collections::HashMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if let GraphNode::Defect(s) = node {
            node_of.insert(*s, i);
        }
    }
    let mut labels = vec![0.0; graph.n_edges()];
    let mut mark = |a: usize, b: usize| {
        if let Some(u) = graph.pair_index(a, b) {
            labels[2 * u] = 1.0;
            labels[2 * u + 1] = 1.0;
        }
    };
    for &(a, b) in &matching.pairs {
        mark(node_of[&a], node_of[&b]);
    }
    for &s in &matching.boundary {
        let i = node_of[&s];
        let class = graph.class_of_node(i);
        let bnode = graph.class_nodes[class.index()].end - 1;
        mark(i, bnode);
    }
    labels
}

/// Recovers a matching from per-directed-edge labels.
pub fn matching_from_labels(graph: &DecodingGraph, labels: &[f32]) -> DefectMatching {
    let mut out = DefectMatching::default();
    for (u, &(a, b)) in graph.pairs.iter().enumerate() {
        if labels[2 * u] > 0.5 || labels[2 * u + 1] > 0.5 {
            match (graph.nodes[a], graph.nodes[b]) {
                (GraphNode::Defect(x), GraphNode::Defect(y)) => out.pairs.push((x, y)),
                (GraphNode::Defect(x), GraphNode::Boundary(_)) => out.boundary.push(x),
                _ => {}
            }
        }
    }
    out.normalize();
    out
}

/// Anything that turns a syndrome into a defect matching.
pub trait Decoder: Sync {
    fn tag(&self) -> &'static str;
    fn decode(&self, syndrome: &Syndrome, lattice: &CodeLattice) -> Result<DefectMatching>;
}

/// MWPM with chain-length (wrapped Manhattan) weights.
#[derive(Clone, Copy, Debug)]
pub struct MwpmDecoder;

impl MwpmDecoder {
    /// Shared with the ground-truth construction, which runs the same
    /// weights on arbitrary defect subsets.
    pub fn match_defects(lattice: &CodeLattice, defects: &[usize], boundary: bool) -> Result<DefectMatching> {
        match_class(defects, boundary, |i, j| match j {
            Some(j) => lattice.chain_distance(defects[i], defects[j]) as f64,
            None => lattice.boundary_distance(defects[i]).unwrap_or(0) as f64,
        })
    }
}

impl Decoder for MwpmDecoder {
    fn tag(&self) -> &'static str {
        "mwpm_manhattan"
    }

    fn decode(&self, syndrome: &Syndrome, lattice: &CodeLattice) -> Result<DefectMatching> {
        let mut out = DefectMatching::default();
        for class in PauliType::BOTH {
            let defects: Vec<usize> = lattice.type_range(class).filter(|&s| syndrome.0[s]).collect();
            let m = Self::match_defects(lattice, &defects, lattice.has_boundary())?;
            out.pairs.extend(m.pairs);
            out.boundary.extend(m.boundary);
        }
        out.normalize();
        Ok(out)
    }
}

/// The baseline routed through the full decoding graph; identical output to
/// `MwpmDecoder`, used to check that both paths agree.
pub fn decode_graph_baseline(syndrome: &Syndrome, lattice: &CodeLattice, noise: NoiseKind) -> Result<DefectMatching> {
    let g = crate::graph::build_graph(syndrome, lattice, noise);
    match_graph(&g, &distance_weights(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::noise::{extract_syndrome, is_logical_error, sample_error_seeded, NoiseModel};

    #[test]
    fn corrections_clear_the_syndrome() {
        let lattices = [
            CodeLattice::build_toric(4).unwrap(),
            CodeLattice::build_toric(7).unwrap(),
            CodeLattice::build_rotated(5).unwrap(),
        ];
        for lat in &lattices {
            for kind in [NoiseKind::Independent, NoiseKind::Depolarizing] {
                let m = NoiseModel::new(kind, 0.1).unwrap();
                for i in 0..200 {
                    let f = sample_error_seeded(&m, lat, 21, i);
                    let s = extract_syndrome(&f, lat);
                    let d = MwpmDecoder.decode(&s, lat).unwrap();
                    assert!(d.covers(&s));
                    let c = d.correction(lat);
                    assert_eq!(extract_syndrome(&c, lat), s);
                    is_logical_error(&f, &c, lat).unwrap();
                    assert_eq!(decode_graph_baseline(&s, lat, kind).unwrap(), d);
                }
            }
        }
    }

    #[test]
    fn two_defects_pair_regardless_of_weight() {
        let lat = CodeLattice::build_toric(4).unwrap();
        let s = Syndrome::from_defects(lat.n_stabilizers(), &[0, 5]);
        let g = build_graph(&s, &lat, NoiseKind::Independent);
        for w in [0.0, 3.0, 1e6] {
            assert_eq!(match_graph(&g, &[w]).unwrap().pairs, vec![(0, 5)]);
        }
    }

    #[test]
    fn rotated_single_defect_goes_to_boundary() {
        let lat = CodeLattice::build_rotated(3).unwrap();
        let z = lat.type_range(PauliType::Z).start;
        let s = Syndrome::from_defects(lat.n_stabilizers(), &[z]);
        let d = MwpmDecoder.decode(&s, &lat).unwrap();
        assert_eq!(d.boundary, vec![z]);
        assert_eq!(extract_syndrome(&d.correction(&lat), &lat), s);
    }

    #[test]
    fn edge_weight_examples() {
        let w = edge_weights(&[0.3, 0.7]);
        assert!((w[0] - 0.356_674_943_938_732_4).abs() < 1e-7);
        assert_eq!(probability_weight(1.0), -(1.0 - P_CLAMP).ln());
        assert!(probability_weight(1.0) < 1e-6);
        assert!((probability_weight(0.0) - 16.118_095_650_958_32).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let w = probability_weight(i as f64 / 100.0);
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn labels_round_trip() {
        let lat = CodeLattice::build_rotated(5).unwrap();
        let m = NoiseModel::new(NoiseKind::Depolarizing, 0.12).unwrap();
        for i in 0..100 {
            let s = extract_syndrome(&sample_error_seeded(&m, &lat, 4, i), &lat);
            let g = build_graph(&s, &lat, NoiseKind::Depolarizing);
            let d = MwpmDecoder.decode(&s, &lat).unwrap();
            let y = edge_labels(&g, &d);
            for u in 0..g.pairs.len() {
                assert_eq!(y[2 * u], y[2 * u + 1]);
            }
            assert_eq!(matching_from_labels(&g, &y), d);
        }
    }
}
