//! The weight predictor: per-stabilizer feature encoders, gated graph
//! attention over each class's defects, and a Transformer encoder over the
//! directed edge tokens with a sigmoid head.
//!
//! Weight matrices are stored `[fan_in, fan_out]` and applied as `x * W`.
//! Every array is registered under a stable name (see [`manifest`]); loading
//! a checkpoint checks names and shapes against the manifest.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::decoder::{edge_weights, match_graph, Decoder, DefectMatching};
use crate::error::{QecError, Result};
use crate::graph::{build_graph, cols, DecodingGraph, GraphNode, D_PE};
use crate::lattice::{CodeKind, CodeLattice};
use crate::noise::{NoiseKind, Syndrome};
use crate::rng::{stream_rng, Substream};
use crate::tensor::{sigmoid, ParamStore, Real, Tape, Tensor, Var};

/// Standard deviation of embedding-table initialization.
pub const EMBED_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QwpConfig {
    pub d_hidden: usize,
    pub gnn_layers: usize,
    pub heads: usize,
    pub enc_layers: usize,
}

impl Default for QwpConfig {
    fn default() -> Self {
        QwpConfig {
            d_hidden: 128,
            gnn_layers: 4,
            heads: 4,
            enc_layers: 2,
        }
    }
}

impl QwpConfig {
    pub fn d_sub(&self) -> usize {
        self.d_hidden / 4
    }

    /// Width of an edge token, `2d + 3d/2`.
    pub fn d_token(&self) -> usize {
        7 * self.d_hidden / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QecError::InvalidArgument(msg));
        if self.d_hidden == 0 || !self.d_hidden.is_multiple_of(4) {
            return bad(format!("d_hidden {} must be a positive multiple of 4", self.d_hidden));
        }
        if self.gnn_layers == 0 || self.enc_layers == 0 || self.heads == 0 {
            return bad("layer counts and heads must be at least 1".into());
        }
        if !self.d_token().is_multiple_of(self.heads) {
            return bad(format!(
                "edge token width {} is not divisible by {} heads",
                self.d_token(),
                self.heads
            ));
        }
        Ok(())
    }
}

/// Lattice-dependent table sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeDims {
    pub code: CodeKind,
    pub distance: usize,
    pub n_stabilizers: usize,
    /// Stabilizer rows plus one virtual boundary row per class on
    /// open-boundary codes.
    pub n_rows: usize,
    /// Entries in the edge distance table.
    pub n_dist: usize,
}

impl LatticeDims {
    pub fn of(lattice: &CodeLattice) -> Self {
        let n = lattice.n_stabilizers();
        LatticeDims {
            code: lattice.kind,
            distance: lattice.distance,
            n_stabilizers: n,
            n_rows: n + if lattice.has_boundary() { 2 } else { 0 },
            n_dist: lattice.max_chain_distance() + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform with variance `1 / fan_in`.
    FanIn,
    Embedding,
    Zeros,
    Ones,
}

/// Every parameter with its shape and initializer, in registration order.
fn layout(cfg: &QwpConfig, dims: &LatticeDims) -> Vec<(String, [usize; 2], Init)> {
    let (d, ds, dt) = (cfg.d_hidden, cfg.d_sub(), cfg.d_token());
    let kd = cfg.heads * d;
    let mut out = Vec::new();
    let lin = |out: &mut Vec<_>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), [i, o], Init::FanIn));
        out.push((format!("{name}.b"), [1, o], Init::Zeros));
    };
    let norm = |out: &mut Vec<(String, [usize; 2], Init)>, name: &str, n: usize| {
        out.push((format!("{name}.g"), [1, n], Init::Ones));
        out.push((format!("{name}.b"), [1, n], Init::Zeros));
    };
    for (f, df) in [("pos", 2), ("rho", 1), ("pe", D_PE)] {
        lin(&mut out, &format!("node.{f}.l1"), df, d);
        lin(&mut out, &format!("node.{f}.l2"), d, ds);
    }
    lin(&mut out, "node.tau", 2, ds);
    out.push(("node.embed".into(), [dims.n_rows, d], Init::Embedding));
    lin(&mut out, "node.proj", 2 * d, d);
    norm(&mut out, "node.norm", d);
    for l in 0..cfg.gnn_layers {
        let p = format!("gnn.{l}");
        norm(&mut out, &format!("{p}.ln1"), d);
        lin(&mut out, &format!("{p}.self"), d, d);
        lin(&mut out, &format!("{p}.value"), d, kd);
        lin(&mut out, &format!("{p}.query"), d, kd);
        lin(&mut out, &format!("{p}.key"), d, kd);
        out.push((format!("{p}.gate.w"), [3 * d, 1], Init::FanIn));
        norm(&mut out, &format!("{p}.ln2"), d);
        lin(&mut out, &format!("{p}.ffn1"), d, 4 * d);
        lin(&mut out, &format!("{p}.ffn2"), 4 * d, d);
    }
    out.push(("edge.dist".into(), [dims.n_dist, d], Init::Embedding));
    lin(&mut out, "edge.geo1", 3, d / 2);
    norm(&mut out, "edge.geo_norm", d / 2);
    lin(&mut out, "edge.geo2", d / 2, d / 2);
    norm(&mut out, "enc.in_norm", dt);
    for l in 0..cfg.enc_layers {
        let p = format!("enc.{l}");
        norm(&mut out, &format!("{p}.ln1"), dt);
        for proj in ["q", "k", "v", "o"] {
            lin(&mut out, &format!("{p}.{proj}"), dt, dt);
        }
        norm(&mut out, &format!("{p}.ln2"), dt);
        lin(&mut out, &format!("{p}.ffn1"), dt, 4 * dt);
        lin(&mut out, &format!("{p}.ffn2"), 4 * dt, dt);
    }
    norm(&mut out, "enc.out_norm", dt);
    lin(&mut out, "head", dt, 1);
    out
}

/// Name and shape of every parameter.
pub fn manifest(cfg: &QwpConfig, dims: &LatticeDims) -> Vec<(String, [usize; 2])> {
    layout(cfg, dims).into_iter().map(|(n, s, _)| (n, s)).collect()
}

#[derive(Clone, Debug)]
pub struct QwpModel {
    pub config: QwpConfig,
    pub dims: LatticeDims,
    pub params: ParamStore,
}

impl QwpModel {
    pub fn new(config: QwpConfig, lattice: &CodeLattice, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = LatticeDims::of(lattice);
        let mut rng = stream_rng(seed, Substream::Init, 0);
        let normal = Normal::new(0.0, EMBED_STD).expect("valid std");
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config, &dims) {
            let t = match init {
                Init::FanIn => {
                    let bound = (3.0 / shape[0] as f64).sqrt();
                    Tensor::from_fn(shape, |_, _| rng.random_range(-bound..bound) as f32)
                }
                Init::Embedding => Tensor::from_fn(shape, |_, _| normal.sample(&mut rng) as f32),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
            };
            params.add(name, t)?;
        }
        Ok(QwpModel { config, dims, params })
    }

    /// Wraps loaded parameters, recovering the configuration from their
    /// shapes and checking every array against the manifest.
    pub fn from_params(params: ParamStore, lattice: &CodeLattice) -> Result<Self> {
        let fmt = |m: String| QecError::Format(m);
        let shape = |name: &str| {
            params
                .id(name)
                .map(|id| params.get(id).shape())
                .ok_or_else(|| fmt(format!("checkpoint lacks {name}")))
        };
        let d = shape("node.proj.w")?[1];
        let gnn_layers = (0..)
            .take_while(|l| params.id(&format!("gnn.{l}.self.w")).is_some())
            .count();
        let enc_layers = (0..)
            .take_while(|l| params.id(&format!("enc.{l}.q.w")).is_some())
            .count();
        let heads = shape("gnn.0.value.w")?[1] / d.max(1);
        let config = QwpConfig {
            d_hidden: d,
            gnn_layers,
            heads,
            enc_layers,
        };
        config.validate().map_err(|e| fmt(e.to_string()))?;
        let dims = LatticeDims::of(lattice);
        let want = manifest(&config, &dims);
        if want.len() != params.len() {
            return Err(fmt(format!(
                "checkpoint has {} arrays, model expects {}",
                params.len(),
                want.len()
            )));
        }
        for ((name, s), (have_name, t)) in want.iter().zip(params.iter()) {
            if name != have_name || *s != t.shape() {
                return Err(fmt(format!(
                    "{have_name} {:?} does not match expected {name} {s:?} for {} L={}",
                    t.shape(),
                    lattice.kind,
                    lattice.distance
                )));
            }
        }
        Ok(QwpModel { config, dims, params })
    }

    fn check_graph(&self, graph: &DecodingGraph) -> Result<()> {
        if graph.n_stabilizers != self.dims.n_stabilizers || graph.code != self.dims.code {
            return Err(QecError::SizeMismatch {
                what: "graph stabilizers vs model embedding rows",
                expected: self.dims.n_stabilizers,
                actual: graph.n_stabilizers,
            });
        }
        Ok(())
    }

    /// Row of the node table holding graph node `node`.
    pub fn node_row(&self, graph: &DecodingGraph, node: usize) -> usize {
        match graph.nodes[node] {
            GraphNode::Defect(s) => s,
            GraphNode::Boundary(class) => self.dims.n_stabilizers + class.index(),
        }
    }

    /// Initial node states `h0`, one row per stabilizer (plus boundary rows).
    pub fn encode_nodes<R: Real>(&self, tape: &Tape<R>, graph: &DecodingGraph) -> Result<Var> {
        self.check_graph(graph)?;
        let f = Fwd::new(tape, &self.params);
        let rows = self.dims.n_rows;
        let n = graph.n_stabilizers;
        let column = |range: std::ops::Range<usize>| {
            tape.constant(Tensor::from_fn([rows, range.len()], |r, c| {
                if r < n {
                    R::of(graph.node_row(r)[range.start + c] as f64)
                } else {
                    R::zero()
                }
            }))
        };
        let mut parts = Vec::with_capacity(5);
        let mlp = |x: Var, name: &str| -> Result<Var> {
            let h = tape.relu(f.linear(x, &format!("node.{name}.l1"))?);
            f.linear(h, &format!("node.{name}.l2"))
        };
        parts.push(mlp(column(cols::POS), "pos")?);
        parts.push(f.linear(column(cols::TAU), "node.tau")?);
        parts.push(mlp(column(cols::RHO), "rho")?);
        parts.push(mlp(column(cols::PE), "pe")?);
        parts.push(f.p("node.embed"));
        let a = tape.concat(&parts, 1)?;
        let s_hat = tape.constant(Tensor::from_fn([rows, 1], |r, _| {
            R::of(if r < n {
                graph.modulated[r] as f64
            } else {
                let present = graph
                    .nodes
                    .iter()
                    .any(|&g| matches!(g, GraphNode::Boundary(c) if n + c.index() == r));
                if present {
                    1.0
                } else {
                    -1.0
                }
            })
        }));
        let a = tape.mul(a, s_hat)?;
        let h = f.linear(a, "node.proj")?;
        f.norm(h, "node.norm")
    }

    /// One gated graph-attention layer. Only graph nodes attend, each over
    /// the other nodes of its class; every other row takes the self path.
    pub fn gnn_layer<R: Real>(&self, tape: &Tape<R>, h: Var, graph: &DecodingGraph, layer: usize) -> Result<Var> {
        let f = Fwd::new(tape, &self.params);
        let p = format!("gnn.{layer}");
        let (d, k) = (self.config.d_hidden, self.config.heads);
        let rows = self.dims.n_rows;
        let h_hat = f.norm(h, &format!("{p}.ln1"))?;
        let h_self = f.linear(h_hat, &format!("{p}.self"))?;

        let n_active = graph.n_nodes();
        let m = if n_active == 0 {
            tape.constant(Tensor::zeros([rows, d]))
        } else {
            let active: Vec<usize> = (0..n_active).map(|i| self.node_row(graph, i)).collect();
            let mask: Vec<bool> = (0..n_active * n_active)
                .map(|ij| {
                    let (i, j) = (ij / n_active, ij % n_active);
                    i != j && graph.class_of_node(i) == graph.class_of_node(j)
                })
                .collect();
            let ha = tape.gather_rows(h_hat, &active)?;
            let q = f.linear(ha, &format!("{p}.query"))?;
            let kk = f.linear(ha, &format!("{p}.key"))?;
            let v = f.linear(ha, &format!("{p}.value"))?;
            let scale = 1.0 / (d as f64).sqrt();
            let mut msg: Option<Var> = None;
            for head in 0..k {
                let qh = tape.slice(q, 1, head * d, d)?;
                let kh = tape.slice(kk, 1, head * d, d)?;
                let vh = tape.slice(v, 1, head * d, d)?;
                let scores = tape.scale(tape.matmul_t(qh, kh)?, scale);
                let alpha = tape.softmax_masked(scores, Some(&mask))?;
                let mh = tape.matmul(alpha, vh)?;
                msg = Some(match msg {
                    None => mh,
                    Some(acc) => tape.add(acc, mh)?,
                });
            }
            let ma = tape.scale(msg.expect("at least one head"), 1.0 / k as f64);
            tape.scatter_rows(ma, &active, rows)?
        };

        let diff = tape.sub(m, h_self)?;
        let gate_in = tape.concat(&[m, h_self, diff], 1)?;
        let beta = tape.sigmoid(tape.matmul(gate_in, f.p(&format!("{p}.gate.w")))?);
        // z = beta * h_self + (1 - beta) * m = m - beta * (m - h_self)
        let z = tape.sub(m, tape.mul(diff, beta)?)?;
        let h1 = tape.add(z, h)?;
        let x = f.norm(h1, &format!("{p}.ln2"))?;
        let x = tape.gelu(f.linear(x, &format!("{p}.ffn1"))?);
        let x = f.linear(x, &format!("{p}.ffn2"))?;
        tape.add(h1, x)
    }

    fn encoder_layer<R: Real>(&self, tape: &Tape<R>, x: Var, layer: usize) -> Result<Var> {
        let f = Fwd::new(tape, &self.params);
        let p = format!("enc.{layer}");
        let (dt, k) = (self.config.d_token(), self.config.heads);
        let dh = dt / k;
        let y = f.norm(x, &format!("{p}.ln1"))?;
        let q = f.linear(y, &format!("{p}.q"))?;
        let kk = f.linear(y, &format!("{p}.k"))?;
        let v = f.linear(y, &format!("{p}.v"))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = (0..k)
            .map(|head| {
                let qh = tape.slice(q, 1, head * dh, dh)?;
                let kh = tape.slice(kk, 1, head * dh, dh)?;
                let vh = tape.slice(v, 1, head * dh, dh)?;
                let alpha = tape.softmax(tape.scale(tape.matmul_t(qh, kh)?, scale));
                tape.matmul(alpha, vh)
            })
            .collect::<Result<Vec<_>>>()?;
        let att = f.linear(tape.concat(&heads, 1)?, &format!("{p}.o"))?;
        let x = tape.add(x, att)?;
        let y = f.norm(x, &format!("{p}.ln2"))?;
        let y = tape.gelu(f.linear(y, &format!("{p}.ffn1"))?);
        let y = f.linear(y, &format!("{p}.ffn2"))?;
        tape.add(x, y)
    }

    /// Edge-token logits `[n_edges, 1]`, or `None` for an edgeless graph.
    pub fn forward<R: Real>(&self, tape: &Tape<R>, graph: &DecodingGraph) -> Result<Option<Var>> {
        let mut h = self.encode_nodes(tape, graph)?;
        if graph.n_edges() == 0 {
            return Ok(None);
        }
        for l in 0..self.config.gnn_layers {
            h = self.gnn_layer(tape, h, graph, l)?;
        }
        let f = Fwd::new(tape, &self.params);
        let e = graph.n_edges();
        let src: Vec<usize> = graph.edges.iter().map(|ed| self.node_row(graph, ed.src)).collect();
        let dst: Vec<usize> = graph.edges.iter().map(|ed| self.node_row(graph, ed.dst)).collect();
        let dist: Vec<usize> = graph
            .edge_distance
            .iter()
            .map(|&dd| dd.min(self.dims.n_dist - 1))
            .collect();
        let geo = tape.constant(Tensor::from_fn([e, 3], |r, c| R::of(graph.edge_row(r)[1 + c] as f64)));
        let geo = f.linear(geo, "edge.geo1")?;
        let geo = tape.relu(f.norm(geo, "edge.geo_norm")?);
        let geo = f.linear(geo, "edge.geo2")?;
        let u = tape.concat(
            &[
                tape.gather_rows(h, &src)?,
                tape.gather_rows(h, &dst)?,
                tape.gather_rows(f.p("edge.dist"), &dist)?,
                geo,
            ],
            1,
        )?;
        let mut x = f.norm(u, "enc.in_norm")?;
        for l in 0..self.config.enc_layers {
            x = self.encoder_layer(tape, x, l)?;
        }
        let x = f.norm(x, "enc.out_norm")?;
        Ok(Some(f.linear(x, "head")?))
    }

    /// Probability per directed edge of `graph`.
    pub fn predict_edges(&self, graph: &DecodingGraph) -> Result<Vec<f32>> {
        let tape = Tape::<f32>::new();
        Ok(match self.forward(&tape, graph)? {
            None => Vec::new(),
            Some(logits) => tape.value(logits).data().iter().map(|&z| sigmoid(z)).collect(),
        })
    }
}

/// Parameter lookup and the two recurring blocks.
struct Fwd<'a, R: Real> {
    tape: &'a Tape<R>,
    store: &'a ParamStore,
}

impl<'a, R: Real> Fwd<'a, R> {
    fn new(tape: &'a Tape<R>, store: &'a ParamStore) -> Self {
        Fwd { tape, store }
    }

    fn p(&self, name: &str) -> Var {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated model"));
        self.tape.param(self.store, id)
    }

    fn linear(&self, x: Var, name: &str) -> Result<Var> {
        let y = self.tape.matmul(x, self.p(&format!("{name}.w")))?;
        self.tape.add(y, self.p(&format!("{name}.b")))
    }

    fn norm(&self, x: Var, name: &str) -> Result<Var> {
        self.tape
            .layer_norm(x, self.p(&format!("{name}.g")), self.p(&format!("{name}.b")))
    }
}

/// Neural MWPM: predicted probabilities, `-ln` weights, blossom matching.
#[derive(Clone, Debug)]
pub struct NeuralDecoder {
    pub model: QwpModel,
    pub noise: NoiseKind,
}

impl NeuralDecoder {
    pub fn new(model: QwpModel, noise: NoiseKind) -> Self {
        NeuralDecoder { model, noise }
    }

    /// Matching and the directed-edge probabilities behind it.
    pub fn decode_graph(&self, graph: &DecodingGraph) -> Result<(DefectMatching, Vec<f32>)> {
        let probs = self.model.predict_edges(graph)?;
        let matching = match_graph(graph, &edge_weights(&probs))?;
        Ok((matching, probs))
    }
}

impl Decoder for NeuralDecoder {
    fn tag(&self) -> &'static str {
        "nmwpm"
    }

    fn decode(&self, syndrome: &Syndrome, lattice: &CodeLattice) -> Result<DefectMatching> {
        let graph = build_graph(syndrome, lattice, self.noise);
        Ok(self.decode_graph(&graph)?.0)
    }
}
