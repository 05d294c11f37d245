//! Gated graph network over VFG sub-graphs and the character-trigram name
//! embedder that initializes its nodes.

use std::collections::HashMap;
use std::rc::Rc;

use crate::flow::{ValueFlowGraph, VfgSubgraph};

use super::tape::{Id, Pair, Tape};

/// Tape ids of the graph network. `trigram` is `buckets x g`; the GRU and
/// message weights are `g x g`, biases `1 x g`.
#[derive(Debug, Clone, Copy)]
pub struct GgnnParams {
    pub trigram: Id,
    pub wg: Id,
    pub bg: Id,
    pub wz: Id,
    pub uz: Id,
    pub bz: Id,
    pub wr: Id,
    pub ur: Id,
    pub br: Id,
    pub wh: Id,
    pub uh: Id,
    pub bh: Id,
}

/// A graph to embed: node names and directed edges over local node ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphInput {
    pub names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl GraphInput {
    pub fn from_subgraph(sg: &VfgSubgraph, vfg: &ValueFlowGraph) -> Self {
        let local: HashMap<usize, usize> =
            sg.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        Self {
            names: sg.nodes.iter().map(|&n| vfg.nodes[n].var.clone()).collect(),
            edges: sg.edges.iter().map(|(u, v)| (local[u], local[v])).collect(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Hashed trigram buckets of `<name>`.
pub fn trigram_ids(name: &str, buckets: usize) -> Vec<usize> {
    let padded: Vec<char> = std::iter::once('<')
        .chain(name.chars())
        .chain(std::iter::once('>'))
        .collect();
    padded
        .windows(3.min(padded.len()))
        .map(|w| (fnv1a(w.iter().collect::<String>().as_bytes()) % buckets as u64) as usize)
        .collect()
}

/// One embedding row per graph: trigram-initialized nodes, `steps` rounds of
/// GRU message passing, then the sum over nodes.
pub fn encode_subgraphs(
    tape: &mut Tape,
    graphs: &[GraphInput],
    p: &GgnnParams,
    steps: usize,
) -> Id {
    let buckets = tape.value(p.trigram).rows;
    let mut bags = Vec::new();
    let mut edges = Vec::new();
    let mut seg = Vec::new();
    for (g, graph) in graphs.iter().enumerate() {
        let base = bags.len();
        bags.extend(graph.names.iter().map(|n| trigram_ids(n, buckets)));
        seg.extend(std::iter::repeat_n(g, graph.names.len()));
        edges.extend(graph.edges.iter().map(|&(u, v)| (base + u, base + v)));
    }
    let edges = Rc::new(edges);
    let mut x = tape.gather_mean(p.trigram, Rc::new(bags));
    for _ in 0..steps {
        let gx = tape.matmul(x, p.wg);
        let gx = tape.add_row(gx, p.bg);
        let m = tape.sparse_agg(gx, edges.clone());
        let gate = |tape: &mut Tape, w: Id, u: Id, b: Id, h: Id| {
            let a = tape.matmul(m, w);
            let c = tape.matmul(h, u);
            let s = tape.add(a, c);
            tape.add_row(s, b)
        };
        let r = gate(tape, p.wr, p.ur, p.br, x);
        let r = tape.sigmoid(r);
        let z = gate(tape, p.wz, p.uz, p.bz, x);
        let z = tape.sigmoid(z);
        let rx = tape.mul(r, x);
        let cand = gate(tape, p.wh, p.uh, p.bh, rx);
        let cand = tape.tanh(cand);
        // x' = (1 - z) * cand + z * x
        let diff = tape.sub(x, cand);
        let keep = tape.mul(z, diff);
        x = tape.add(cand, keep);
    }
    tape.segment_sum(x, Rc::new(seg), graphs.len())
}

/// Embedding of a single sub-graph, `1 x g`.
pub fn encode_subgraph(
    tape: &mut Tape,
    sg: &VfgSubgraph,
    vfg: &ValueFlowGraph,
    p: &GgnnParams,
    steps: usize,
) -> Id {
    encode_subgraphs(tape, &[GraphInput::from_subgraph(sg, vfg)], p, steps)
}

/// Distinct sub-graphs of one input and where their embeddings go.
#[derive(Debug, Clone, Default)]
pub(crate) struct VfgFeatures {
    pub graphs: Vec<GraphInput>,
    /// Token row and graph of each variable occurrence.
    pub var_rows: Vec<usize>,
    pub abs_graph: Vec<usize>,
    /// (anchor token, target token, graph) for every ordered pair in one
    /// component whose relative sub-graph exists.
    pub pairs: Vec<Pair>,
}

/// Sub-graphs for the occurrences among the first `n` tokens. Identical
/// graphs are embedded once.
pub(crate) fn featurize(vfg: &ValueFlowGraph, n: usize) -> VfgFeatures {
    let vfg = vfg.remap(|o| (o.token < n).then(|| o.clone()));
    let mut f = VfgFeatures::default();
    let mut ids: HashMap<GraphInput, usize> = HashMap::new();
    let mut intern = |g: GraphInput, f: &mut VfgFeatures| {
        *ids.entry(g).or_insert_with_key(|g| {
            f.graphs.push(g.clone());
            f.graphs.len() - 1
        })
    };
    for a in 0..vfg.nodes.len() {
        let g = intern(
            GraphInput::from_subgraph(&vfg.absolute_subgraph(a), &vfg),
            &mut f,
        );
        f.var_rows.push(vfg.nodes[a].token);
        f.abs_graph.push(g);
    }
    let comp = vfg.components();
    for a in 0..vfg.nodes.len() {
        for b in 0..vfg.nodes.len() {
            if comp[a] != comp[b] {
                continue;
            }
            if let Some(sg) = vfg.relative_subgraph(a, b) {
                let g = intern(GraphInput::from_subgraph(&sg, &vfg), &mut f);
                f.pairs.push((vfg.nodes[a].token, vfg.nodes[b].token, g));
            }
        }
    }
    f
}
