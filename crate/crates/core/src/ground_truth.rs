//! Ground-truth matchings for training labels.
//!
//! Given the physical error behind a syndrome, each matching class is split
//! into error clusters (errored qubits linked through shared stabilizers of
//! that class). Each cluster's odd-parity stabilizers are its endpoints and
//! are matched locally by chain-length MWPM; the result is kept when its
//! induced correction has the same logical effect as the cluster's errors.
//! Failing clusters go through cheapest-first alternative matchings and,
//! if still unresolved, a timed exhaustive search.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::decoder::{match_class, DefectMatching};
use crate::error::{QecError, Result};
use crate::lattice::{CodeLattice, PauliType};
use crate::noise::PauliFrame;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GtConfig {
    /// Wall-clock budget per shot for the exhaustive fallback.
    pub budget_ms: u64,
    /// Alternative matchings tried per failing cluster before escalating.
    pub max_candidates: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig {
            budget_ms: 100,
            max_candidates: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorCluster {
    pub class: PauliType,
    /// Sorted errored qubits.
    pub qubits: Vec<usize>,
    /// Sorted stabilizers of `class` touching an odd number of `qubits`.
    pub endpoints: Vec<usize>,
    /// Logical signature of the cluster's errors.
    pub signature: u32,
}

/// How a shot's labels were obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GtStats {
    pub clusters: usize,
    /// Clusters resolved by an alternative (non-minimal) matching.
    pub permuted: usize,
    pub brute_force: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub matching: DefectMatching,
    /// The correction induced by `matching`. It follows the decoder's
    /// deterministic chains except that a pair exactly half the torus apart
    /// may wrap the other way, which is equally short.
    pub correction: PauliFrame,
    pub stats: GtStats,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Per-qubit masks of the class-`ty` logical operators.
fn qubit_masks(lattice: &CodeLattice, ty: PauliType) -> Vec<u32> {
    let mut masks = vec![0u32; lattice.n_qubits];
    for (k, l) in lattice.logicals_of(ty).enumerate() {
        for &q in &l.support {
            masks[q] |= 1 << k;
        }
    }
    masks
}

fn class_clusters(frame: &PauliFrame, lattice: &CodeLattice, class: PauliType) -> Vec<ErrorCluster> {
    let bits = frame.detected_by(class);
    let mut uf = UnionFind::new(lattice.n_qubits);
    for stab in lattice.stabilizers_of(class) {
        let mut first = None;
        for &q in stab.support.iter().filter(|&&q| bits[q]) {
            match first {
                None => first = Some(q),
                Some(f) => uf.union(f, q),
            }
        }
    }
    let masks = qubit_masks(lattice, class);
    let mut by_root: Vec<Option<usize>> = vec![None; lattice.n_qubits];
    let mut clusters: Vec<ErrorCluster> = Vec::new();
    for q in (0..lattice.n_qubits).filter(|&q| bits[q]) {
        let r = uf.find(q);
        let idx = *by_root[r].get_or_insert_with(|| {
            clusters.push(ErrorCluster {
                class,
                qubits: Vec::new(),
                endpoints: Vec::new(),
                signature: 0,
            });
            clusters.len() - 1
        });
        clusters[idx].qubits.push(q);
        clusters[idx].signature ^= masks[q];
    }
    for c in &mut clusters {
        let mut touched: Vec<usize> = c
            .qubits
            .iter()
            .flat_map(|&q| lattice.checks_of(q, class).iter().copied())
            .collect();
        touched.sort_unstable();
        c.endpoints = touched
            .chunk_by(|a, b| a == b)
            .filter(|run| run.len() % 2 == 1)
            .map(|run| run[0])
            .collect();
    }
    clusters
}

/// Error clusters of both classes, X class first, each ordered by its
/// smallest qubit.
pub fn cluster_errors(frame: &PauliFrame, lattice: &CodeLattice) -> Vec<ErrorCluster> {
    PauliType::BOTH
        .iter()
        .flat_map(|&ty| class_clusters(frame, lattice, ty))
        .collect()
}

/// Wall-clock deadline. The browser build has no monotonic clock in `std`,
/// so there the budget is converted into a search-step allowance.
struct Deadline {
    budget_ms: u64,
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
    #[cfg(target_arch = "wasm32")]
    steps: std::cell::Cell<u64>,
}

impl Deadline {
    fn new(budget_ms: u64) -> Self {
        Deadline {
            budget_ms,
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
            #[cfg(target_arch = "wasm32")]
            steps: std::cell::Cell::new(0),
        }
    }

    #[cfg(not(target_arch = "wasm32"))]
    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    #[cfg(target_arch = "wasm32")]
    fn elapsed_ms(&self) -> u64 {
        self.steps.get() / 20_000
    }

    fn expired(&self) -> bool {
        #[cfg(target_arch = "wasm32")]
        self.steps.set(self.steps.get() + 1024);
        self.elapsed_ms() >= self.budget_ms
    }

    fn timeout(&self, exhausted: bool) -> QecError {
        QecError::GroundTruthTimeout {
            elapsed_ms: self.elapsed_ms(),
            exhausted,
        }
    }
}

/// A logical matching edge between local defect indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Link {
    Pair(usize, usize),
    Boundary(usize),
}

/// Geometry of one matching class, with the weights and logical
/// signatures of every candidate link between a fixed list of defects.
struct ClassCtx<'a> {
    lattice: &'a CodeLattice,
    class: PauliType,
    masks: Vec<u32>,
    /// Signature of the error loop along each axis (torus only).
    loop_sig: [u32; 2],
    boundary: bool,
}

impl<'a> ClassCtx<'a> {
    fn new(lattice: &'a CodeLattice, class: PauliType) -> Self {
        let masks = qubit_masks(lattice, class);
        let loop_sig = [0, 1].map(|axis| {
            lattice
                .error_loop(class, axis)
                .unwrap_or(&[])
                .iter()
                .fold(0, |acc, &q| acc ^ masks[q])
        });
        ClassCtx {
            lattice,
            class,
            masks,
            loop_sig,
            boundary: lattice.has_boundary(),
        }
    }

    fn tied(&self, defects: &[usize], link: Link) -> u8 {
        match link {
            Link::Pair(i, j) => self.lattice.tied_axes(defects[i], defects[j]),
            Link::Boundary(_) => 0,
        }
    }

    /// Loops (axis bitmask) within `axes` whose signatures XOR to `diff`.
    fn loops_for(&self, diff: u32, axes: u8) -> Option<u8> {
        (0u8..4).filter(|&c| c & !axes == 0).find(|&c| {
            let sig = (0..2)
                .filter(|&a| c & (1 << a) != 0)
                .fold(0, |acc, a| acc ^ self.loop_sig[a]);
            sig == diff
        })
    }

    /// Loops to add so that `m` reproduces `target`, or `None` when `m`
    /// cannot be made logically valid.
    fn validate(&self, m: &DefectMatching, target: u32) -> Option<u8> {
        let axes = m
            .pairs
            .iter()
            .fold(0, |acc, &(a, b)| acc | self.lattice.tied_axes(a, b));
        self.loops_for(self.matching_signature(m) ^ target, axes)
    }

    fn cost(&self, defects: &[usize], link: Link) -> u64 {
        match link {
            Link::Pair(i, j) => self.lattice.chain_distance(defects[i], defects[j]) as u64,
            Link::Boundary(i) => self.lattice.boundary_distance(defects[i]).unwrap_or(0) as u64,
        }
    }

    fn signature(&self, defects: &[usize], link: Link) -> u32 {
        match link {
            Link::Pair(i, j) => self
                .lattice
                .chain_path(defects[i], defects[j])
                .into_iter()
                .fold(0, |acc, q| acc ^ self.masks[q]),
            Link::Boundary(i) => self
                .lattice
                .boundary_path(defects[i])
                .unwrap_or(&[])
                .iter()
                .fold(0, |acc, &q| acc ^ self.masks[q]),
        }
    }

    fn matching_signature(&self, m: &DefectMatching) -> u32 {
        let pairs = m.pairs.iter().map(|&(a, b)| {
            self.lattice
                .chain_path(a, b)
                .into_iter()
                .fold(0, |acc, q| acc ^ self.masks[q])
        });
        let bnd = m.boundary.iter().map(|&s| {
            self.lattice
                .boundary_path(s)
                .unwrap_or(&[])
                .iter()
                .fold(0, |acc, &q| acc ^ self.masks[q])
        });
        pairs.chain(bnd).fold(0, |a, b| a ^ b)
    }

    /// MWPM over `defects` with exactly `v` virtual boundary nodes.
    fn match_with_virtuals(&self, defects: &[usize], v: usize) -> Result<DefectMatching> {
        let k = defects.len();
        let n = k + v;
        let mut g = crate::blossom::MatchGraph::new(n);
        for i in 0..k {
            for j in i + 1..k {
                g.set(i, j, self.cost(defects, Link::Pair(i, j)) as f64);
            }
            let wb = self.cost(defects, Link::Boundary(i)) as f64;
            for x in k..n {
                g.set(i, x, wb);
            }
        }
        let mut out = DefectMatching::default();
        for (a, b) in crate::blossom::mwpm(&g)?.pairs {
            match (a < k, b < k) {
                (true, true) => out.pairs.push((defects[a], defects[b])),
                (true, false) => out.boundary.push(defects[a]),
                _ => {}
            }
        }
        out.pairs.sort_unstable();
        out.boundary.sort_unstable();
        Ok(out)
    }

    /// Cheapest matching of `defects` with forced and forbidden links, or
    /// `None` when the constraints leave no perfect matching.
    fn constrained_best(
        &self,
        defects: &[usize],
        include: &[Link],
        exclude: &[Link],
    ) -> Result<Option<(u64, Vec<Link>)>> {
        const FORBIDDEN: f64 = 1e9;
        let mut used = vec![false; defects.len()];
        for &l in include {
            match l {
                Link::Pair(i, j) => {
                    used[i] = true;
                    used[j] = true;
                }
                Link::Boundary(i) => used[i] = true,
            }
        }
        let rest: Vec<usize> = (0..defects.len()).filter(|&i| !used[i]).collect();
        if !self.boundary && rest.len() % 2 == 1 {
            return Ok(None);
        }
        let rest_ids: Vec<usize> = rest.iter().map(|&i| defects[i]).collect();
        let m = match_class(&rest_ids, self.boundary, |a, b| {
            let link = match b {
                Some(b) => Link::Pair(rest[a], rest[b]),
                None => Link::Boundary(rest[a]),
            };
            if exclude.contains(&link) {
                FORBIDDEN
            } else {
                self.cost(defects, link) as f64
            }
        })?;
        let local = |s: usize| defects.iter().position(|&d| d == s).unwrap();
        let mut links: Vec<Link> = include.to_vec();
        for (a, b) in m.pairs {
            let (i, j) = (local(a), local(b));
            links.push(Link::Pair(i.min(j), i.max(j)));
        }
        links.extend(m.boundary.into_iter().map(|s| Link::Boundary(local(s))));
        if links.iter().any(|l| exclude.contains(l)) {
            return Ok(None);
        }
        links.sort_unstable();
        let cost = links.iter().map(|&l| self.cost(defects, l)).sum();
        Ok(Some((cost, links)))
    }

    fn to_matching(&self, defects: &[usize], links: &[Link]) -> DefectMatching {
        let mut m = DefectMatching::default();
        for &l in links {
            match l {
                Link::Pair(i, j) => m.pairs.push((defects[i].min(defects[j]), defects[i].max(defects[j]))),
                Link::Boundary(i) => m.boundary.push(defects[i]),
            }
        }
        m.pairs.sort_unstable();
        m.boundary.sort_unstable();
        m
    }

    /// Alternative matchings in nondecreasing total weight (edge-exclusion
    /// branching); returns the first whose signature equals `target`.
    fn k_best_valid(
        &self,
        defects: &[usize],
        target: u32,
        max_candidates: usize,
        deadline: &Deadline,
    ) -> Result<Option<(DefectMatching, u8)>> {
        type Node = (u64, Vec<Link>, Vec<Link>, Vec<Link>);
        let mut heap: BinaryHeap<Reverse<Node>> = BinaryHeap::new();
        if let Some((c, links)) = self.constrained_best(defects, &[], &[])? {
            heap.push(Reverse((c, links, Vec::new(), Vec::new())));
        }
        let mut produced = 0;
        while let Some(Reverse((_, links, include, exclude))) = heap.pop() {
            let m = self.to_matching(defects, &links);
            if let Some(loops) = self.validate(&m, target) {
                return Ok(Some((m, loops)));
            }
            produced += 1;
            if produced >= max_candidates || deadline.expired() {
                return Ok(None);
            }
            let free: Vec<Link> = links.iter().copied().filter(|l| !include.contains(l)).collect();
            for r in 0..free.len() {
                let mut inc = include.clone();
                inc.extend_from_slice(&free[..r]);
                let mut exc = exclude.clone();
                exc.push(free[r]);
                if let Some((c, l2)) = self.constrained_best(defects, &inc, &exc)? {
                    heap.push(Reverse((c, l2, inc, exc)));
                }
            }
        }
        Ok(None)
    }

    /// Exhaustive branch-and-bound for the cheapest matching of `defects`
    /// whose signature is `target`. `Ok(None)` means the space was
    /// exhausted without a valid matching.
    fn brute_force(&self, defects: &[usize], target: u32, deadline: &Deadline) -> Result<Option<(DefectMatching, u8)>> {
        let k = defects.len();
        let mut options: Vec<Vec<Opt>> = Vec::with_capacity(k);
        // Twice the cheapest share of each vertex: half a pair or a whole
        // boundary link.
        let mut floor2 = vec![u64::MAX; k];
        for i in 0..k {
            for j in i + 1..k {
                let c = self.cost(defects, Link::Pair(i, j));
                floor2[i] = floor2[i].min(c);
                floor2[j] = floor2[j].min(c);
            }
            if self.boundary {
                floor2[i] = floor2[i].min(2 * self.cost(defects, Link::Boundary(i)));
            }
        }
        for i in 0..k {
            let mut opts: Vec<Opt> = (i + 1..k)
                .map(|j| Link::Pair(i, j))
                .chain(self.boundary.then_some(Link::Boundary(i)))
                .map(|l| Opt {
                    cost: self.cost(defects, l),
                    sig: self.signature(defects, l),
                    tied: self.tied(defects, l),
                    link: l,
                })
                .collect();
            opts.sort_by_key(|o| o.cost);
            options.push(opts);
        }
        let mut search = BruteSearch {
            ctx: self,
            options: &options,
            floor2: &floor2,
            target,
            used: vec![false; k],
            current: Vec::with_capacity(k),
            best: None,
            steps: 0,
            deadline,
            timed_out: false,
        };
        let rest2 = floor2.iter().sum();
        search.run(0, 0, 0, rest2);
        if search.timed_out {
            return Err(deadline.timeout(false));
        }
        Ok(search
            .best
            .map(|(_, links, loops)| (self.to_matching(defects, &links), loops)))
    }
}

#[derive(Clone, Copy)]
struct Opt {
    cost: u64,
    sig: u32,
    tied: u8,
    link: Link,
}

struct BruteSearch<'s> {
    ctx: &'s ClassCtx<'s>,
    options: &'s [Vec<Opt>],
    floor2: &'s [u64],
    target: u32,
    used: Vec<bool>,
    current: Vec<Link>,
    best: Option<(u64, Vec<Link>, u8)>,
    steps: u64,
    deadline: &'s Deadline,
    timed_out: bool,
}

impl BruteSearch<'_> {
    /// `rest2` is twice the lower bound on the cost of covering every
    /// still-unused vertex.
    fn run(&mut self, cost: u64, sig: u32, tied: u8, rest2: u64) {
        if self.timed_out {
            return;
        }
        self.steps += 1;
        if self.steps.is_multiple_of(1024) && self.deadline.expired() {
            self.timed_out = true;
            return;
        }
        if self.best.as_ref().is_some_and(|(b, _, _)| 2 * cost + rest2 >= 2 * *b) {
            return;
        }
        let Some(i) = self.used.iter().position(|&u| !u) else {
            if let Some(loops) = self.ctx.loops_for(sig ^ self.target, tied) {
                self.best = Some((cost, self.current.clone(), loops));
            }
            return;
        };
        self.used[i] = true;
        for &opt in &self.options[i] {
            let partner = match opt.link {
                Link::Pair(_, j) => Some(j),
                Link::Boundary(_) => None,
            };
            if partner.is_some_and(|j| self.used[j]) {
                continue;
            }
            let mut rest = rest2 - self.floor2[i];
            if let Some(j) = partner {
                self.used[j] = true;
                rest -= self.floor2[j];
            }
            self.current.push(opt.link);
            self.run(cost + opt.cost, sig ^ opt.sig, tied | opt.tied, rest);
            self.current.pop();
            if let Some(j) = partner {
                self.used[j] = false;
            }
        }
        self.used[i] = false;
    }
}

/// Minimal virtual-node count for the rotated code: MWPM over `defects`
/// with `v = parity, parity + 2, ...` virtual boundary nodes until the
/// induced correction's logical signature equals `target`.
fn virtual_iteration(ctx: &ClassCtx<'_>, defects: &[usize], target: u32) -> Result<Option<(usize, DefectMatching)>> {
    let k = defects.len();
    let mut v = k % 2;
    while v <= k {
        let m = ctx.match_with_virtuals(defects, v)?;
        if ctx.matching_signature(&m) == target {
            return Ok(Some((v, m)));
        }
        v += 2;
    }
    Ok(None)
}

/// Rotated-code labels for a whole class without clustering: the smallest
/// virtual-node count whose MWPM is logically valid for `frame`.
pub fn rotated_virtual_matching(
    frame: &PauliFrame,
    lattice: &CodeLattice,
    class: PauliType,
) -> Result<(usize, DefectMatching)> {
    if !lattice.has_boundary() {
        return Err(QecError::InvalidArgument(
            "virtual boundary nodes need an open-boundary code".into(),
        ));
    }
    let ctx = ClassCtx::new(lattice, class);
    let bits = frame.detected_by(class);
    let target = (0..lattice.n_qubits)
        .filter(|&q| bits[q])
        .fold(0, |acc, q| acc ^ ctx.masks[q]);
    let syndrome = crate::noise::extract_syndrome(frame, lattice);
    let defects: Vec<usize> = lattice.type_range(class).filter(|&s| syndrome.0[s]).collect();
    virtual_iteration(&ctx, &defects, target)?.ok_or(QecError::GroundTruthTimeout {
        elapsed_ms: 0,
        exhausted: true,
    })
}

fn solve_cluster(
    ctx: &ClassCtx<'_>,
    cluster: &ErrorCluster,
    cfg: &GtConfig,
    deadline: &Deadline,
) -> Result<Option<(DefectMatching, u8, bool)>> {
    let defects = &cluster.endpoints;
    let first = if ctx.boundary {
        virtual_iteration(ctx, defects, cluster.signature)?.map(|(_, m)| (m, 0))
    } else {
        let m = match_class(defects, false, |i, j| {
            ctx.cost(defects, Link::Pair(i, j.unwrap())) as f64
        })?;
        ctx.validate(&m, cluster.signature).map(|loops| (m, loops))
    };
    if let Some((m, loops)) = first {
        return Ok(Some((m, loops, false)));
    }
    Ok(ctx
        .k_best_valid(defects, cluster.signature, cfg.max_candidates, deadline)?
        .map(|(m, loops)| (m, loops, true)))
}

/// Ground-truth matching for one shot, both classes.
pub fn ground_truth(frame: &PauliFrame, lattice: &CodeLattice, cfg: &GtConfig) -> Result<GroundTruth> {
    let deadline = Deadline::new(cfg.budget_ms);
    let mut matching = DefectMatching::default();
    let mut stats = GtStats::default();
    let mut loops: Vec<(PauliType, u8)> = Vec::new();

    for class in PauliType::BOTH {
        let ctx = ClassCtx::new(lattice, class);
        let clusters = class_clusters(frame, lattice, class);
        stats.clusters += clusters.len();

        let mut class_match = DefectMatching::default();
        let mut class_loops = 0u8;
        let mut failing: Vec<&ErrorCluster> = Vec::new();
        for c in &clusters {
            if c.endpoints.is_empty() {
                if c.signature != 0 {
                    failing.push(c);
                }
                continue;
            }
            match solve_cluster(&ctx, c, cfg, &deadline)? {
                Some((m, l, permuted)) => {
                    stats.permuted += permuted as usize;
                    class_loops ^= l;
                    class_match.pairs.extend(m.pairs);
                    class_match.boundary.extend(m.boundary);
                }
                None => failing.push(c),
            }
        }

        if !failing.is_empty() {
            stats.brute_force = true;
            let mut ends: Vec<usize> = failing.iter().flat_map(|c| c.endpoints.iter().copied()).collect();
            ends.sort_unstable();
            let target = failing.iter().fold(0, |a, c| a ^ c.signature);
            match ctx.brute_force(&ends, target, &deadline)? {
                Some((m, l)) => {
                    class_match.pairs.extend(m.pairs);
                    class_match.boundary.extend(m.boundary);
                    class_loops ^= l;
                }
                None => {
                    let mut all: Vec<usize> = clusters.iter().flat_map(|c| c.endpoints.iter().copied()).collect();
                    all.sort_unstable();
                    let target = clusters.iter().fold(0, |a, c| a ^ c.signature);
                    let (m, l) = ctx
                        .brute_force(&all, target, &deadline)?
                        .ok_or_else(|| deadline.timeout(true))?;
                    class_match = m;
                    class_loops = l;
                }
            }
        }
        loops.push((ctx.class, class_loops));
        matching.pairs.extend(class_match.pairs);
        matching.boundary.extend(class_match.boundary);
    }
    matching.pairs.sort_unstable();
    matching.boundary.sort_unstable();
    let mut correction = matching.correction(lattice);
    for (class, l) in loops {
        for axis in (0..2).filter(|a| l & (1 << a) != 0) {
            let bits = correction.detected_by_mut(class);
            for &q in lattice.error_loop(class, axis).unwrap_or(&[]) {
                bits[q] ^= true;
            }
        }
    }
    Ok(GroundTruth {
        matching,
        correction,
        stats,
    })
}

pub fn ground_truth_matching(frame: &PauliFrame, lattice: &CodeLattice, cfg: &GtConfig) -> Result<DefectMatching> {
    ground_truth(frame, lattice, cfg).map(|g| g.matching)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{extract_syndrome, is_logical_error, sample_error_seeded, NoiseKind, NoiseModel};

    fn check_valid(frame: &PauliFrame, lattice: &CodeLattice, m: &DefectMatching) {
        let s = extract_syndrome(frame, lattice);
        assert!(m.covers(&s));
        assert!(!is_logical_error(frame, &m.correction(lattice), lattice).unwrap());
    }

    fn check_gt(frame: &PauliFrame, lattice: &CodeLattice, gt: &GroundTruth) {
        let s = extract_syndrome(frame, lattice);
        assert!(gt.matching.covers(&s));
        assert!(!is_logical_error(frame, &gt.correction, lattice).unwrap());
    }

    #[test]
    fn single_error_is_one_cluster() {
        let lat = CodeLattice::build_toric(4).unwrap();
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[6] = true;
        let cl = cluster_errors(&f, &lat);
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].endpoints.len(), 2);
        assert_eq!(cl[0].class, PauliType::Z);
        let gt = ground_truth_matching(&f, &lat, &GtConfig::default()).unwrap();
        assert_eq!(gt.pairs, vec![(cl[0].endpoints[0], cl[0].endpoints[1])]);
    }

    #[test]
    fn separated_errors_are_separate_clusters() {
        let lat = CodeLattice::build_toric(6).unwrap();
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[0] = true; // h(0,0)
        f.x_bits[3 * 6 + 3] = true; // h(3,3)
        assert_eq!(cluster_errors(&f, &lat).len(), 2);
    }

    #[test]
    fn three_error_chain_has_four_endpoints() {
        // An L-shaped pair plus a separate error: two clusters whose
        // endpoints are the four defects of the syndrome.
        let lat = CodeLattice::build_toric(6).unwrap();
        let l = 6;
        let h = |x: usize, y: usize| y * l + x;
        let v = |x: usize, y: usize| l * l + y * l + x;
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[h(1, 1)] = true;
        f.x_bits[v(2, 1)] = true;
        f.x_bits[h(4, 4)] = true;
        let cl = cluster_errors(&f, &lat);
        let mut ends: Vec<usize> = cl.iter().flat_map(|c| c.endpoints.clone()).collect();
        ends.sort_unstable();
        let s = extract_syndrome(&f, &lat);
        assert_eq!(ends, s.defects().collect::<Vec<_>>());
        assert_eq!(ends.len(), 4);
        let gt = ground_truth(&f, &lat, &GtConfig::default()).unwrap();
        check_gt(&f, &lat, &gt);
        check_valid(&f, &lat, &gt.matching);
    }

    #[test]
    fn permutation_fixes_homology() {
        // Frame found by search on L=4: the distance-minimal matching of a
        // single cluster crosses a logical cycle.
        let lat = CodeLattice::build_toric(4).unwrap();
        let m = NoiseModel::new(NoiseKind::Independent, 0.2).unwrap();
        let ctx_masks = qubit_masks(&lat, PauliType::Z);
        let mut found = 0;
        for i in 0..5000 {
            let f = sample_error_seeded(&m, &lat, 99, i);
            let cl = class_clusters(&f, &lat, PauliType::Z);
            let Some(c) = cl.iter().find(|c| c.endpoints.len() >= 4) else {
                continue;
            };
            let ctx = ClassCtx::new(&lat, PauliType::Z);
            let d = &c.endpoints;
            let mw = match_class(d, false, |a, b| ctx.cost(d, Link::Pair(a, b.unwrap())) as f64).unwrap();
            if ctx.validate(&mw, c.signature).is_some() {
                continue;
            }
            let deadline = Deadline::new(1000);
            if let Some((alt, loops)) = ctx.k_best_valid(d, c.signature, 50, &deadline).unwrap() {
                assert!(ctx.validate(&alt, c.signature) == Some(loops));
                let cost = |m: &DefectMatching| m.pairs.iter().map(|&(a, b)| lat.chain_distance(a, b)).sum::<usize>();
                assert!(cost(&alt) >= cost(&mw));
                found += 1;
            }
            let _ = &ctx_masks;
        }
        assert!(found > 0);
    }

    #[test]
    fn k_best_enumerates_in_cost_order() {
        let lat = CodeLattice::build_toric(6).unwrap();
        let ctx = ClassCtx::new(&lat, PauliType::Z);
        let z = lat.type_range(PauliType::Z).start;
        let defects = vec![z, z + 1, z + 8, z + 15, z + 20, z + 33];
        // Enumerate all matchings by brute force with any signature.
        let deadline = Deadline::new(10_000);
        let mut seen = Vec::new();
        type Node = (u64, Vec<Link>, Vec<Link>, Vec<Link>);
        let mut inc_exc: BinaryHeap<Reverse<Node>> = BinaryHeap::new();
        let (c, l) = ctx.constrained_best(&defects, &[], &[]).unwrap().unwrap();
        inc_exc.push(Reverse((c, l, vec![], vec![])));
        while let Some(Reverse((c, links, inc, exc))) = inc_exc.pop() {
            seen.push((c, links.clone()));
            let free: Vec<Link> = links.iter().copied().filter(|x| !inc.contains(x)).collect();
            for r in 0..free.len() {
                let mut i2 = inc.clone();
                i2.extend_from_slice(&free[..r]);
                let mut e2 = exc.clone();
                e2.push(free[r]);
                if let Some((c2, l2)) = ctx.constrained_best(&defects, &i2, &e2).unwrap() {
                    inc_exc.push(Reverse((c2, l2, i2, e2)));
                }
            }
        }
        assert!(!deadline.expired());
        assert_eq!(seen.len(), 15);
        assert!(seen.windows(2).all(|w| w[0].0 <= w[1].0));
        let mut sets: Vec<_> = seen.iter().map(|s| s.1.clone()).collect();
        sets.sort();
        sets.dedup();
        assert_eq!(sets.len(), 15);
    }

    #[test]
    fn rotated_virtual_examples() {
        let lat = CodeLattice::build_rotated(5).unwrap();
        let ctx = ClassCtx::new(&lat, PauliType::Z);
        // one X error on the bottom row next to the boundary
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[2] = true; // qubit (2, 0)
        let cl = class_clusters(&f, &lat, PauliType::Z);
        assert_eq!(cl[0].endpoints.len(), 1);
        let (v, m) = virtual_iteration(&ctx, &cl[0].endpoints, cl[0].signature)
            .unwrap()
            .unwrap();
        assert_eq!(v, 1);
        assert_eq!(m.boundary, cl[0].endpoints);

        // two adjacent errors in the middle: v = 0, direct match
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[2 * 5 + 2] = true;
        let cl = class_clusters(&f, &lat, PauliType::Z);
        let (v, m) = virtual_iteration(&ctx, &cl[0].endpoints, cl[0].signature)
            .unwrap()
            .unwrap();
        assert_eq!((v, m.pairs.len()), (0, 1));

        // short chains into the bottom and the top boundary, same column:
        // pairing them would close a logical, so both go to the boundary
        let mut f = PauliFrame::identity(lat.n_qubits);
        f.x_bits[2] = true; // (2, 0)
        f.x_bits[4 * 5 + 2] = true; // (2, 4)
        let (v, m) = rotated_virtual_matching(&f, &lat, PauliType::Z).unwrap();
        assert_eq!(v, 2);
        assert_eq!(m.boundary.len(), 2);
        check_valid(&f, &lat, &m);
    }

    #[test]
    fn labels_are_valid_on_random_shots() {
        let cfg = GtConfig::default();
        let lattices = [
            CodeLattice::build_toric(4).unwrap(),
            CodeLattice::build_toric(6).unwrap(),
            CodeLattice::build_rotated(5).unwrap(),
        ];
        for lat in &lattices {
            for kind in [NoiseKind::Independent, NoiseKind::Depolarizing] {
                let m = NoiseModel::new(kind, 0.1).unwrap();
                let mut timeouts = 0;
                for i in 0..300 {
                    let f = sample_error_seeded(&m, lat, 1234, i);
                    match ground_truth(&f, lat, &cfg) {
                        Ok(gt) => check_gt(&f, lat, &gt),
                        Err(QecError::GroundTruthTimeout { .. }) => timeouts += 1,
                        Err(e) => panic!("{e}"),
                    }
                }
                assert!(timeouts < 30, "{:?} {:?}: {timeouts}", lat.kind, kind);
            }
        }
    }

    #[test]
    fn rotated_virtual_requires_boundary() {
        let lat = CodeLattice::build_toric(4).unwrap();
        let f = PauliFrame::identity(lat.n_qubits);
        assert!(rotated_virtual_matching(&f, &lat, PauliType::X).is_err());
    }
}
