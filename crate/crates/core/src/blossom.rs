//! Minimum-weight perfect matching on dense weighted graphs.
//!
//! The solver is the primal-dual blossom algorithm for maximum-weight
//! matching (Edmonds, in Galil's O(n^3) formulation). A minimum-weight
//! perfect matching of a complete graph is obtained by maximizing
//! `max_w - w` over maximum-cardinality matchings.
//!
//! `brute_force_mwpm` enumerates every perfect matching and is the test
//! oracle for small graphs.

use crate::error::{QecError, Result};

const NONE: usize = usize::MAX;

/// Symmetric dense weight matrix over `n` vertices; the diagonal is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchGraph {
    n: usize,
    weights: Vec<f64>,
}

impl MatchGraph {
    pub fn new(n: usize) -> Self {
        MatchGraph {
            n,
            weights: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = MatchGraph::new(n);
        for u in 0..n {
            for v in u + 1..n {
                g.set(u, v, f(u, v));
            }
        }
        g
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.n + v]
    }

    pub fn set(&mut self, u: usize, v: usize, w: f64) {
        self.weights[u * self.n + v] = w;
        self.weights[v * self.n + u] = w;
    }

    fn validate(&self) -> Result<()> {
        if self.n % 2 == 1 {
            return Err(QecError::OddVertexCount(self.n));
        }
        for u in 0..self.n {
            for v in u + 1..self.n {
                if !self.weight(u, v).is_finite() {
                    return Err(QecError::NonFiniteWeight(u, v));
                }
            }
        }
        Ok(())
    }
}

/// Vertex-disjoint pairs, each stored as `(small, large)` and sorted.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<_> = pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        Matching { pairs }
    }

    /// Sum of pair weights, accumulated in sorted pair order.
    pub fn total_weight(&self, graph: &MatchGraph) -> f64 {
        self.pairs.iter().map(|&(u, v)| graph.weight(u, v)).sum()
    }

    pub fn is_perfect(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &(u, v) in &self.pairs {
            if u == v || u >= n || v >= n || seen[u] || seen[v] {
                return false;
            }
            seen[u] = true;
            seen[v] = true;
        }
        seen.into_iter().all(|s| s)
    }

    pub fn partner(&self, v: usize) -> Option<usize> {
        self.pairs.iter().find_map(|&(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Exact minimum-weight perfect matching.
pub fn mwpm(graph: &MatchGraph) -> Result<Matching> {
    graph.validate()?;
    let n = graph.n;
    if n == 0 {
        return Ok(Matching::default());
    }
    let mut max_w = f64::NEG_INFINITY;
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            max_w = max_w.max(graph.weight(u, v));
            edges.push((u, v, graph.weight(u, v)));
        }
    }
    for e in &mut edges {
        e.2 = max_w - e.2;
    }
    let mate = max_weight_matching(n, &edges, true);
    let matching = Matching::from_pairs(
        mate.iter()
            .enumerate()
            .filter_map(|(u, m)| m.filter(|&v| u < v).map(|v| (u, v))),
    );
    debug_assert!(matching.is_perfect(n), "blossom returned a non-perfect matching");
    Ok(matching)
}

/// Largest graph `brute_force_mwpm` accepts.
pub const BRUTE_FORCE_MAX: usize = 14;

/// Exhaustive minimum; among equal totals the lexicographically smallest
/// sorted pair list wins.
pub fn brute_force_mwpm(graph: &MatchGraph) -> Result<Matching> {
    graph.validate()?;
    if graph.n > BRUTE_FORCE_MAX {
        return Err(QecError::TooManyVertices {
            n: graph.n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut used = vec![false; graph.n];
    let mut current = Vec::with_capacity(graph.n / 2);
    enumerate(graph, &mut used, &mut current, &mut best);
    Ok(Matching { pairs: best.1 })
}

fn enumerate(
    graph: &MatchGraph,
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    best: &mut (f64, Vec<(usize, usize)>),
) {
    let Some(u) = used.iter().position(|&b| !b) else {
        // Summed in pair order so totals match `Matching::total_weight`.
        let total: f64 = current.iter().map(|&(a, b)| graph.weight(a, b)).sum();
        if total < best.0 {
            *best = (total, current.clone());
        }
        return;
    };
    used[u] = true;
    for v in u + 1..graph.n {
        if !used[v] {
            used[v] = true;
            current.push((u, v));
            enumerate(graph, used, current, best);
            current.pop();
            used[v] = false;
        }
    }
    used[u] = false;
}

/// Maximum-weight matching on a general graph given as an edge list
/// `(i, j, weight)`, at most one edge per vertex pair. With
/// `max_cardinality` only maximum-cardinality matchings are considered.
/// Returns each vertex's mate.
pub fn max_weight_matching(
    n_vertices: usize,
    edges: &[(usize, usize, f64)],
    max_cardinality: bool,
) -> Vec<Option<usize>> {
    if edges.is_empty() {
        return vec![None; n_vertices];
    }
    let mut solver = Solver::new(n_vertices, edges, max_cardinality);
    solver.solve();
    solver
        .mate
        .iter()
        .map(|&p| (p != NONE).then(|| solver.endpoint[p]))
        .collect()
}

/// Solver state. Edge `k` has endpoints `2k` (its first vertex) and
/// `2k + 1` (its second); `p ^ 1` is the opposite endpoint. Blossom ids
/// `0..n` are the vertices themselves and `n..2n` non-trivial blossoms.
struct Solver<'a> {
    n: usize,
    edges: &'a [(usize, usize, f64)],
    max_cardinality: bool,
    endpoint: Vec<usize>,
    neighbend: Vec<Vec<usize>>,
    /// Remote endpoint of the matched edge per vertex.
    mate: Vec<usize>,
    /// 0 free, 1 S-labelled, 2 T-labelled; 5 marks a scan in progress.
    label: Vec<u8>,
    labelend: Vec<usize>,
    inblossom: Vec<usize>,
    blossomparent: Vec<usize>,
    blossomchilds: Vec<Vec<usize>>,
    blossombase: Vec<usize>,
    blossomendps: Vec<Vec<usize>>,
    bestedge: Vec<usize>,
    blossombestedges: Vec<Option<Vec<usize>>>,
    unusedblossoms: Vec<usize>,
    dualvar: Vec<f64>,
    allowedge: Vec<bool>,
    queue: Vec<usize>,
}

fn wrap_index(len: usize, j: isize) -> usize {
    j.rem_euclid(len as isize) as usize
}

impl<'a> Solver<'a> {
    fn new(n: usize, edges: &'a [(usize, usize, f64)], max_cardinality: bool) -> Self {
        let max_weight = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
        let mut endpoint = Vec::with_capacity(2 * edges.len());
        let mut neighbend = vec![Vec::new(); n];
        for (k, &(i, j, _)) in edges.iter().enumerate() {
            endpoint.push(i);
            endpoint.push(j);
            neighbend[i].push(2 * k + 1);
            neighbend[j].push(2 * k);
        }
        let mut dualvar = vec![max_weight; n];
        dualvar.resize(2 * n, 0.0);
        let mut blossombase: Vec<usize> = (0..n).collect();
        blossombase.resize(2 * n, NONE);
        Solver {
            n,
            edges,
            max_cardinality,
            endpoint,
            neighbend,
            mate: vec![NONE; n],
            label: vec![0; 2 * n],
            labelend: vec![NONE; 2 * n],
            inblossom: (0..n).collect(),
            blossomparent: vec![NONE; 2 * n],
            blossomchilds: vec![Vec::new(); 2 * n],
            blossombase,
            blossomendps: vec![Vec::new(); 2 * n],
            bestedge: vec![NONE; 2 * n],
            blossombestedges: vec![None; 2 * n],
            unusedblossoms: (n..2 * n).rev().collect(),
            dualvar,
            allowedge: vec![false; edges.len()],
            queue: Vec::new(),
        }
    }

    fn slack(&self, k: usize) -> f64 {
        let (i, j, w) = self.edges[k];
        self.dualvar[i] + self.dualvar[j] - 2.0 * w
    }

    fn leaves(&self, b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![b];
        while let Some(t) = stack.pop() {
            if t < self.n {
                out.push(t);
            } else {
                stack.extend(self.blossomchilds[t].iter().rev());
            }
        }
        out
    }

    fn assign_label(&mut self, w: usize, t: u8, p: usize) {
        let b = self.inblossom[w];
        debug_assert!(self.label[w] == 0 && self.label[b] == 0);
        self.label[w] = t;
        self.label[b] = t;
        self.labelend[w] = p;
        self.labelend[b] = p;
        self.bestedge[w] = NONE;
        self.bestedge[b] = NONE;
        if t == 1 {
            let leaves = self.leaves(b);
            self.queue.extend(leaves);
        } else {
            let base = self.blossombase[b];
            let m = self.mate[base];
            debug_assert!(m != NONE);
            self.assign_label(self.endpoint[m], 1, m ^ 1);
        }
    }

    /// Traces back from `v` and `w` to find a new blossom base, or `NONE`
    /// when the two trees are distinct (an augmenting path exists).
    fn scan_blossom(&mut self, mut v: usize, mut w: usize) -> usize {
        let mut path = Vec::new();
        let mut base = NONE;
        while v != NONE || w != NONE {
            let mut b = self.inblossom[v];
            if self.label[b] & 4 != 0 {
                base = self.blossombase[b];
                break;
            }
            path.push(b);
            self.label[b] = 5;
            if self.labelend[b] == NONE {
                v = NONE;
            } else {
                v = self.endpoint[self.labelend[b]];
                b = self.inblossom[v];
                v = self.endpoint[self.labelend[b]];
            }
            if w != NONE {
                std::mem::swap(&mut v, &mut w);
            }
        }
        for b in path {
            self.label[b] = 1;
        }
        base
    }

    fn add_blossom(&mut self, base: usize, k: usize) {
        let (mut v, mut w, _) = self.edges[k];
        let bb = self.inblossom[base];
        let mut bv = self.inblossom[v];
        let mut bw = self.inblossom[w];
        let b = self.unusedblossoms.pop().expect("blossom ids exhausted");
        self.blossombase[b] = base;
        self.blossomparent[b] = NONE;
        self.blossomparent[bb] = b;
        let mut path = Vec::new();
        let mut endps = Vec::new();
        while bv != bb {
            self.blossomparent[bv] = b;
            path.push(bv);
            endps.push(self.labelend[bv]);
            v = self.endpoint[self.labelend[bv]];
            bv = self.inblossom[v];
        }
        path.push(bb);
        path.reverse();
        endps.reverse();
        endps.push(2 * k);
        while bw != bb {
            self.blossomparent[bw] = b;
            path.push(bw);
            endps.push(self.labelend[bw] ^ 1);
            w = self.endpoint[self.labelend[bw]];
            bw = self.inblossom[w];
        }
        self.label[b] = 1;
        self.labelend[b] = self.labelend[bb];
        self.dualvar[b] = 0.0;
        for leaf in self.leaves_of_children(&path) {
            if self.label[self.inblossom[leaf]] == 2 {
                self.queue.push(leaf);
            }
            self.inblossom[leaf] = b;
        }

        let mut bestedgeto = vec![NONE; 2 * self.n];
        for &sub in &path {
            let lists: Vec<Vec<usize>> = match self.blossombestedges[sub].take() {
                Some(list) => vec![list],
                None => self
                    .leaves(sub)
                    .into_iter()
                    .map(|leaf| self.neighbend[leaf].iter().map(|p| p / 2).collect())
                    .collect(),
            };
            for list in lists {
                for k2 in list {
                    let (i, j, _) = self.edges[k2];
                    let j = if self.inblossom[j] == b { i } else { j };
                    let bj = self.inblossom[j];
                    if bj != b
                        && self.label[bj] == 1
                        && (bestedgeto[bj] == NONE || self.slack(k2) < self.slack(bestedgeto[bj]))
                    {
                        bestedgeto[bj] = k2;
                    }
                }
            }
            self.bestedge[sub] = NONE;
        }
        let best: Vec<usize> = bestedgeto.into_iter().filter(|&k2| k2 != NONE).collect();
        self.bestedge[b] = NONE;
        for &k2 in &best {
            if self.bestedge[b] == NONE || self.slack(k2) < self.slack(self.bestedge[b]) {
                self.bestedge[b] = k2;
            }
        }
        self.blossombestedges[b] = Some(best);
        self.blossomchilds[b] = path;
        self.blossomendps[b] = endps;
    }

    fn leaves_of_children(&self, children: &[usize]) -> Vec<usize> {
        children.iter().flat_map(|&c| self.leaves(c)).collect()
    }

    fn expand_blossom(&mut self, b: usize, endstage: bool) {
        let childs = self.blossomchilds[b].clone();
        for &s in &childs {
            self.blossomparent[s] = NONE;
            if s < self.n {
                self.inblossom[s] = s;
            } else if endstage && self.dualvar[s] == 0.0 {
                self.expand_blossom(s, endstage);
            } else {
                for leaf in self.leaves(s) {
                    self.inblossom[leaf] = s;
                }
            }
        }
        if !endstage && self.label[b] == 2 {
            let len = childs.len();
            let endps = self.blossomendps[b].clone();
            let entrychild = self.inblossom[self.endpoint[self.labelend[b] ^ 1]];
            let mut j = childs.iter().position(|&c| c == entrychild).unwrap() as isize;
            let (jstep, endptrick): (isize, usize) = if j & 1 == 1 {
                j -= len as isize;
                (1, 0)
            } else {
                (-1, 1)
            };
            let mut p = self.labelend[b];
            while j != 0 {
                self.label[self.endpoint[p ^ 1]] = 0;
                let e = endps[wrap_index(len, j - endptrick as isize)];
                self.label[self.endpoint[e ^ endptrick ^ 1]] = 0;
                self.assign_label(self.endpoint[p ^ 1], 2, p);
                self.allowedge[e / 2] = true;
                j += jstep;
                p = endps[wrap_index(len, j - endptrick as isize)] ^ endptrick;
                self.allowedge[p / 2] = true;
                j += jstep;
            }
            let bv = childs[wrap_index(len, j)];
            let ep = self.endpoint[p ^ 1];
            self.label[ep] = 2;
            self.label[bv] = 2;
            self.labelend[ep] = p;
            self.labelend[bv] = p;
            self.bestedge[bv] = NONE;
            j += jstep;
            while childs[wrap_index(len, j)] != entrychild {
                let bv = childs[wrap_index(len, j)];
                if self.label[bv] == 1 {
                    j += jstep;
                    continue;
                }
                if let Some(v) = self.leaves(bv).into_iter().find(|&v| self.label[v] != 0) {
                    self.label[v] = 0;
                    let m = self.mate[self.blossombase[bv]];
                    self.label[self.endpoint[m]] = 0;
                    self.assign_label(v, 2, self.labelend[v]);
                }
                j += jstep;
            }
        }
        self.label[b] = 0;
        self.labelend[b] = NONE;
        self.blossomchilds[b].clear();
        self.blossomendps[b].clear();
        self.blossombase[b] = NONE;
        self.blossombestedges[b] = None;
        self.bestedge[b] = NONE;
        self.unusedblossoms.push(b);
    }

    /// Swaps matched and unmatched edges inside blossom `b` so that vertex
    /// `v` becomes its base.
    fn augment_blossom(&mut self, b: usize, v: usize) {
        let mut t = v;
        while self.blossomparent[t] != b {
            t = self.blossomparent[t];
        }
        if t >= self.n {
            self.augment_blossom(t, v);
        }
        let len = self.blossomchilds[b].len();
        let i = self.blossomchilds[b].iter().position(|&c| c == t).unwrap();
        let mut j = i as isize;
        let (jstep, endptrick): (isize, usize) = if i & 1 == 1 {
            j -= len as isize;
            (1, 0)
        } else {
            (-1, 1)
        };
        while j != 0 {
            j += jstep;
            let t1 = self.blossomchilds[b][wrap_index(len, j)];
            let p = self.blossomendps[b][wrap_index(len, j - endptrick as isize)] ^ endptrick;
            if t1 >= self.n {
                self.augment_blossom(t1, self.endpoint[p]);
            }
            j += jstep;
            let t2 = self.blossomchilds[b][wrap_index(len, j)];
            if t2 >= self.n {
                self.augment_blossom(t2, self.endpoint[p ^ 1]);
            }
            self.mate[self.endpoint[p]] = p ^ 1;
            self.mate[self.endpoint[p ^ 1]] = p;
        }
        self.blossomchilds[b].rotate_left(i);
        self.blossomendps[b].rotate_left(i);
        self.blossombase[b] = self.blossombase[self.blossomchilds[b][0]];
        debug_assert_eq!(self.blossombase[b], v);
    }

    fn augment_matching(&mut self, k: usize) {
        let (v, w, _) = self.edges[k];
        for (mut s, mut p) in [(v, 2 * k + 1), (w, 2 * k)] {
            loop {
                let bs = self.inblossom[s];
                if bs >= self.n {
                    self.augment_blossom(bs, s);
                }
                self.mate[s] = p;
                if self.labelend[bs] == NONE {
                    break;
                }
                let t = self.endpoint[self.labelend[bs]];
                let bt = self.inblossom[t];
                s = self.endpoint[self.labelend[bt]];
                let j = self.endpoint[self.labelend[bt] ^ 1];
                if bt >= self.n {
                    self.augment_blossom(bt, j);
                }
                self.mate[j] = self.labelend[bt];
                p = self.labelend[bt] ^ 1;
            }
        }
    }

    fn solve(&mut self) {
        let n = self.n;
        for _stage in 0..n {
            self.label.iter_mut().for_each(|l| *l = 0);
            self.bestedge.iter_mut().for_each(|e| *e = NONE);
            for b in n..2 * n {
                self.blossombestedges[b] = None;
            }
            self.allowedge.iter_mut().for_each(|a| *a = false);
            self.queue.clear();
            for v in 0..n {
                if self.mate[v] == NONE && self.label[self.inblossom[v]] == 0 {
                    self.assign_label(v, 1, NONE);
                }
            }

            let mut augmented = false;
            loop {
                while !augmented {
                    let Some(v) = self.queue.pop() else { break };
                    for idx in 0..self.neighbend[v].len() {
                        let p = self.neighbend[v][idx];
                        let k = p / 2;
                        let w = self.endpoint[p];
                        if self.inblossom[v] == self.inblossom[w] {
                            continue;
                        }
                        let mut kslack = 0.0;
                        if !self.allowedge[k] {
                            kslack = self.slack(k);
                            if kslack <= 0.0 {
                                self.allowedge[k] = true;
                            }
                        }
                        if self.allowedge[k] {
                            if self.label[self.inblossom[w]] == 0 {
                                self.assign_label(w, 2, p ^ 1);
                            } else if self.label[self.inblossom[w]] == 1 {
                                let base = self.scan_blossom(v, w);
                                if base != NONE {
                                    self.add_blossom(base, k);
                                } else {
                                    self.augment_matching(k);
                                    augmented = true;
                                    break;
                                }
                            } else if self.label[w] == 0 {
                                self.label[w] = 2;
                                self.labelend[w] = p ^ 1;
                            }
                        } else if self.label[self.inblossom[w]] == 1 {
                            let b = self.inblossom[v];
                            if self.bestedge[b] == NONE || kslack < self.slack(self.bestedge[b]) {
                                self.bestedge[b] = k;
                            }
                        } else if self.label[w] == 0
                            && (self.bestedge[w] == NONE || kslack < self.slack(self.bestedge[w]))
                        {
                            self.bestedge[w] = k;
                        }
                    }
                }
                if augmented {
                    break;
                }

                // No augmenting path under the current duals: pick the
                // smallest dual change that makes progress.
                let mut deltatype = 0u8;
                let mut delta = 0.0f64;
                let mut deltaedge = NONE;
                let mut deltablossom = NONE;
                if !self.max_cardinality {
                    deltatype = 1;
                    delta = self.dualvar[..n].iter().copied().fold(f64::INFINITY, f64::min);
                }
                for v in 0..n {
                    if self.label[self.inblossom[v]] == 0 && self.bestedge[v] != NONE {
                        let d = self.slack(self.bestedge[v]);
                        if deltatype == 0 || d < delta {
                            delta = d;
                            deltatype = 2;
                            deltaedge = self.bestedge[v];
                        }
                    }
                }
                for b in 0..2 * n {
                    if self.blossomparent[b] == NONE && self.label[b] == 1 && self.bestedge[b] != NONE {
                        let d = self.slack(self.bestedge[b]) / 2.0;
                        if deltatype == 0 || d < delta {
                            delta = d;
                            deltatype = 3;
                            deltaedge = self.bestedge[b];
                        }
                    }
                }
                for b in n..2 * n {
                    if self.blossombase[b] != NONE
                        && self.blossomparent[b] == NONE
                        && self.label[b] == 2
                        && (deltatype == 0 || self.dualvar[b] < delta)
                    {
                        delta = self.dualvar[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }
                if deltatype == 0 {
                    deltatype = 1;
                    delta = self.dualvar[..n].iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
                }

                for v in 0..n {
                    match self.label[self.inblossom[v]] {
                        1 => self.dualvar[v] -= delta,
                        2 => self.dualvar[v] += delta,
                        _ => {}
                    }
                }
                for b in n..2 * n {
                    if self.blossombase[b] != NONE && self.blossomparent[b] == NONE {
                        match self.label[b] {
                            1 => self.dualvar[b] += delta,
                            2 => self.dualvar[b] -= delta,
                            _ => {}
                        }
                    }
                }

                match deltatype {
                    1 => break,
                    2 => {
                        self.allowedge[deltaedge] = true;
                        let (mut i, j, _) = self.edges[deltaedge];
                        if self.label[self.inblossom[i]] == 0 {
                            i = j;
                        }
                        self.queue.push(i);
                    }
                    3 => {
                        self.allowedge[deltaedge] = true;
                        let (i, _, _) = self.edges[deltaedge];
                        self.queue.push(i);
                    }
                    _ => self.expand_blossom(deltablossom, false),
                }
            }

            if !augmented {
                break;
            }
            for b in n..2 * n {
                if self.blossomparent[b] == NONE
                    && self.blossombase[b] != NONE
                    && self.label[b] == 1
                    && self.dualvar[b] == 0.0
                {
                    self.expand_blossom(b, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MatchGraph {
        MatchGraph::from_fn(n, |_, _| rng.random::<f64>())
    }

    #[test]
    fn two_vertices() {
        let mut g = MatchGraph::new(2);
        g.set(0, 1, 3.7);
        let m = mwpm(&g).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.total_weight(&g), 3.7);
        assert_eq!(brute_force_mwpm(&g).unwrap().pairs, vec![(0, 1)]);
    }

    #[test]
    fn four_vertex_example() {
        let g = MatchGraph::from_fn(4, |u, v| match (u, v) {
            (0, 1) | (2, 3) => 1.0,
            _ => 10.0,
        });
        for m in [mwpm(&g).unwrap(), brute_force_mwpm(&g).unwrap()] {
            assert_eq!(m.pairs, vec![(0, 1), (2, 3)]);
            assert_eq!(m.total_weight(&g), 2.0);
        }
    }

    #[test]
    fn odd_cycle_forces_blossom() {
        // Cheap triangle 0-1-2 and a cheap triangle 3-4-5 joined by one
        // moderate edge: the optimum must break both triangles.
        let g = MatchGraph::from_fn(6, |u, v| match (u, v) {
            (0, 1) | (1, 2) | (0, 2) | (3, 4) | (4, 5) | (3, 5) => 1.0,
            (2, 3) => 3.0,
            _ => 20.0,
        });
        let oracle = brute_force_mwpm(&g).unwrap();
        let m = mwpm(&g).unwrap();
        assert_eq!(m.total_weight(&g), oracle.total_weight(&g));
        assert_eq!(oracle.total_weight(&g), 5.0);
        assert!(m.is_perfect(6));
    }

    #[test]
    fn equal_weights_give_lexicographic_oracle() {
        let g = MatchGraph::from_fn(6, |_, _| 1.0);
        let m = brute_force_mwpm(&g).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 3), (4, 5)]);
        assert_eq!(mwpm(&g).unwrap().total_weight(&g), 3.0);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(mwpm(&MatchGraph::new(3)), Err(QecError::OddVertexCount(3))));
        let mut g = MatchGraph::new(4);
        g.set(1, 2, f64::NAN);
        assert!(matches!(mwpm(&g), Err(QecError::NonFiniteWeight(1, 2))));
        assert!(matches!(
            brute_force_mwpm(&MatchGraph::new(16)),
            Err(QecError::TooManyVertices { n: 16, max: 14 })
        ));
        assert!(mwpm(&MatchGraph::new(0)).unwrap().pairs.is_empty());
    }

    #[test]
    fn matches_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..2000 {
            let n = 2 * (1 + trial % 6);
            let g = random_graph(&mut rng, n);
            let m = mwpm(&g).unwrap();
            let o = brute_force_mwpm(&g).unwrap();
            assert!(m.is_perfect(n));
            assert_eq!(m.total_weight(&g), o.total_weight(&g), "trial {trial}");
        }
    }

    #[test]
    fn integer_weights_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..2000 {
            let n = 2 * (1 + trial % 6);
            let g = MatchGraph::from_fn(n, |_, _| rng.random_range(0..5) as f64);
            let m = mwpm(&g).unwrap();
            assert!(m.is_perfect(n));
            assert_eq!(m.total_weight(&g), brute_force_mwpm(&g).unwrap().total_weight(&g));
        }
    }

    #[test]
    fn larger_graphs_are_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [20, 40, 64] {
            let g = random_graph(&mut rng, n);
            assert!(mwpm(&g).unwrap().is_perfect(n));
        }
    }

    #[test]
    fn general_matching_without_cardinality() {
        // Path 0-1-2-3 with a heavy middle edge: max weight takes it alone.
        let edges = [(0, 1, 1.0), (1, 2, 5.0), (2, 3, 1.0)];
        let mate = max_weight_matching(4, &edges, false);
        assert_eq!(mate, vec![None, Some(2), Some(1), None]);
        let mate = max_weight_matching(4, &edges, true);
        assert_eq!(mate, vec![Some(1), Some(0), Some(3), Some(2)]);
    }

    proptest! {
        #[test]
        fn scaling_keeps_argmin(
            seed in any::<u64>(),
            half_n in 1usize..7,
            scale_exp in -4i32..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 * half_n;
            let g = random_graph(&mut rng, n);
            let c = 2f64.powi(scale_exp);
            let scaled = MatchGraph::from_fn(n, |u, v| g.weight(u, v) * c);
            prop_assert_eq!(mwpm(&g).unwrap().pairs, mwpm(&scaled).unwrap().pairs);
        }
    }
}
