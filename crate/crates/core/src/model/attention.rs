//! Self-attention with traditional and value-flow position terms.
//!
//! For head dimension `d`, query `i` and key `j`:
//!
//! ```text
//! a_ij = 1/sqrt(2d) * (x_i W^Q)(x_j W^K + r^K_ij + r^{K_VFG}_ij)^T
//!      + 1/sqrt(2d) * a^Q_i (a^K_j)^T
//!      + 1/sqrt(2d) * a^{Q_VFG}_i (a^{K_VFG}_j)^T
//! z_i  = sum_j softmax_j(a_ij) (x_j W^V + r^V_ij + r^{V_VFG}_ij)
//! ```

use std::rc::Rc;

use super::tape::{Id, Pair, Tape, Tensor};
use super::ModelError;

/// Tape ids of one layer's attention weights. `wq`, `wk`, `wv`, `aq` and
/// `ak` are `d x d`; `rk` and `rv` are `(2 clip + 1) x d`; the four VFG
/// projections are `graph_dim x d`. Heads split the columns.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Id,
    pub wk: Id,
    pub wv: Id,
    pub aq: Id,
    pub ak: Id,
    pub rk: Id,
    pub rv: Id,
    pub vaq: Id,
    pub vak: Id,
    pub vrk: Id,
    pub vrv: Id,
}

impl AttentionParams {
    fn named(&self) -> [(&'static str, Id); 11] {
        [
            ("W^Q", self.wq),
            ("W^K", self.wk),
            ("W^V", self.wv),
            ("A^Q", self.aq),
            ("A^K", self.ak),
            ("r^K", self.rk),
            ("r^V", self.rv),
            ("a^Q_VFG", self.vaq),
            ("a^K_VFG", self.vak),
            ("r^K_VFG", self.vrk),
            ("r^V_VFG", self.vrv),
        ]
    }
}

/// Sinusoidal absolute encodings, `n x d`.
pub fn sinusoids(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    for pos in 0..n {
        for k in 0..d {
            let rate = 10_000f64.powf((2 * (k / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            t.data[pos * d + k] = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Traditional position inputs for a sequence of length `n`.
#[derive(Debug, Clone)]
pub struct Positions {
    /// Constant sinusoid matrix, `n x d`.
    pub abs: Id,
    /// Row-major `n x n` relative-distance bucket of each (i, j).
    pub rel: Rc<Vec<usize>>,
    pub buckets: usize,
}

impl Positions {
    pub fn new(tape: &mut Tape, n: usize, d: usize, clip: usize) -> Self {
        let abs = tape.constant(sinusoids(n, d));
        let c = clip as isize;
        let rel = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| ((j as isize - i as isize).clamp(-c, c) + c) as usize)
            })
            .collect();
        Self {
            abs,
            rel: Rc::new(rel),
            buckets: 2 * clip + 1,
        }
    }
}

/// Value-flow inputs: absolute sub-graph embeddings for the variable rows
/// and relative sub-graph embeddings addressed by ordered token pairs. Rows
/// and pairs not listed are zero.
#[derive(Debug, Clone)]
pub struct VfgEncodings {
    /// Token row of each absolute embedding.
    pub var_rows: Rc<Vec<usize>>,
    /// `m x graph_dim`, one row per entry of `var_rows`.
    pub abs: Id,
    /// (query row, key row, row of `rel`).
    pub pairs: Rc<Vec<Pair>>,
    /// Relative sub-graph embeddings, `u x graph_dim`.
    pub rel: Id,
}

/// One multi-head attention block; returns the concatenated head outputs
/// (`n x d`) before any output projection.
pub fn attention_block(
    tape: &mut Tape,
    x: Id,
    pos: &Positions,
    vfg: Option<&VfgEncodings>,
    p: &AttentionParams,
    heads: usize,
) -> Result<Id, ModelError> {
    for (name, id) in p.named() {
        if !tape.value(id).is_finite() {
            return Err(ModelError::NonFinite(name.to_string()));
        }
    }
    let n = tape.value(x).rows;
    let d = tape.value(p.wq).cols;
    let dh = d / heads;
    let scale = 1.0 / ((2 * dh) as f64).sqrt();

    let q = tape.matmul(x, p.wq);
    let k = tape.matmul(x, p.wk);
    let v = tape.matmul(x, p.wv);
    let aq = tape.matmul(pos.abs, p.aq);
    let ak = tape.matmul(pos.abs, p.ak);
    let vfg = vfg.filter(|e| !e.var_rows.is_empty()).map(|e| {
        let qa = tape.matmul(e.abs, p.vaq);
        let ka = tape.matmul(e.abs, p.vak);
        (
            e,
            tape.scatter_rows(qa, e.var_rows.clone(), n),
            tape.scatter_rows(ka, e.var_rows.clone(), n),
            tape.matmul(e.rel, p.vrk),
            tape.matmul(e.rel, p.vrv),
        )
    });

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = |tape: &mut Tape, id| tape.slice_cols(id, h * dh, dh);
        let (qh, kh, vh) = (cols(tape, q), cols(tape, k), cols(tape, v));
        let (aqh, akh) = (cols(tape, aq), cols(tape, ak));
        let (rkh, rvh) = (cols(tape, p.rk), cols(tape, p.rv));

        let content = tape.matmul_t(qh, kh);
        let q_rel = tape.matmul_t(qh, rkh);
        let rel = tape.rel_gather(q_rel, pos.rel.clone());
        let absolute = tape.matmul_t(aqh, akh);
        let mut score = tape.add(content, rel);
        score = tape.add(score, absolute);
        if let Some((e, qa, ka, rk_vfg, _)) = &vfg {
            let rk_h = cols(tape, *rk_vfg);
            let vfg_rel = tape.pair_dot(qh, rk_h, e.pairs.clone());
            let (qah, kah) = (cols(tape, *qa), cols(tape, *ka));
            let vfg_abs = tape.matmul_t(qah, kah);
            score = tape.add(score, vfg_rel);
            score = tape.add(score, vfg_abs);
        }
        let score = tape.scale(score, scale);
        let attn = tape.softmax(score, false);

        let values = tape.matmul(attn, vh);
        let buckets = tape.rel_scatter(attn, pos.rel.clone(), pos.buckets);
        let rel_values = tape.matmul(buckets, rvh);
        let mut z = tape.add(values, rel_values);
        if let Some((e, _, _, _, rv_vfg)) = &vfg {
            let rv_h = cols(tape, *rv_vfg);
            let vfg_values = tape.pair_scatter(attn, rv_h, e.pairs.clone());
            z = tape.add(z, vfg_values);
        }
        outs.push(z);
    }
    Ok(if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(outs)
    })
}

/// Plain scaled dot-product multi-head attention (decoder side).
pub(crate) fn vanilla_attention(
    tape: &mut Tape,
    q_in: Id,
    kv_in: Id,
    w: [Id; 3],
    heads: usize,
    causal: bool,
) -> Id {
    let q = tape.matmul(q_in, w[0]);
    let k = tape.matmul(kv_in, w[1]);
    let v = tape.matmul(kv_in, w[2]);
    let d = tape.value(w[0]).cols;
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let s = tape.matmul_t(qh, kh);
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        let a = tape.softmax(s, causal);
        outs.push(tape.matmul(a, vh));
    }
    if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(outs)
    }
}
