//! Dense row-major matrices and a reverse-mode tape over the handful of ops
//! the context model needs. Values are f64 so finite-difference checks are
//! meaningful; checkpoints store f32.

use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data does not match its shape"
        );
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, o: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

/// `c += a' * b'` where the primes optionally transpose.
fn gemm_acc(a: &Tensor, ta: bool, b: &Tensor, tb: bool, c: &mut Tensor) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (k2, n) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape differs");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: strides and extents describe the owned buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut c = Tensor::zeros(a.rows, b.cols);
    gemm_acc(a, false, b, false, &mut c);
    c
}

pub fn matmul_t(a: &Tensor, b: &Tensor) -> Tensor {
    let mut c = Tensor::zeros(a.rows, b.rows);
    gemm_acc(a, false, b, true, &mut c);
    c
}

pub type Id = usize;

/// (query row, key row, pair-embedding row).
pub type Pair = (usize, usize, usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Id, Id),
    MatMulT(Id, Id),
    Add(Id, Id),
    Sub(Id, Id),
    AddRow(Id, Id),
    Mul(Id, Id),
    Scale(Id, f64),
    Sigmoid(Id),
    Tanh(Id),
    Relu(Id),
    Softmax(Id),
    LayerNorm {
        x: Id,
        g: Id,
        b: Id,
        norm: Tensor,
        inv: Vec<f64>,
    },
    Gather(Id, Rc<Vec<usize>>),
    GatherMean(Id, Rc<Vec<Vec<usize>>>),
    RelGather(Id, Rc<Vec<usize>>),
    RelScatter(Id, Rc<Vec<usize>>),
    PairDot(Id, Id, Rc<Vec<Pair>>),
    PairScatter(Id, Id, Rc<Vec<Pair>>),
    SparseAgg(Id, Rc<Vec<(usize, usize)>>),
    SegmentSum(Id, Rc<Vec<usize>>),
    ScatterRows(Id, Rc<Vec<usize>>),
    SliceCols(Id, usize),
    SliceRows(Id, usize),
    ConcatCols(Vec<Id>),
    MeanRows(Id),
    SumAll(Id),
    CrossEntropy {
        logits: Id,
        targets: Rc<Vec<usize>>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: Id) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Id]) -> Id {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, t: Tensor) -> Id {
        self.push(t, Op::Leaf, &[])
    }

    /// A trainable leaf; its gradient is reported under `pid`.
    pub fn param(&mut self, t: Tensor, pid: usize) -> Id {
        self.push(t, Op::Param(pid), &[])
    }

    fn v(&self, id: Id) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let out = matmul(self.v(a), self.v(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Id, b: Id) -> Id {
        let out = matmul_t(self.v(a), self.v(b));
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    fn zip(&mut self, a: Id, b: Id, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.v(a), self.v(b));
        assert_eq!(
            (x.rows, x.cols),
            (y.rows, y.cols),
            "elementwise shapes differ"
        );
        Tensor::from_vec(
            x.rows,
            x.cols,
            x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(),
        )
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        let out = self.zip(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        let out = self.zip(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        let out = self.zip(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the single row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Id, b: Id) -> Id {
        let (xv, bv) = (self.v(x), self.v(b));
        assert_eq!((bv.rows, bv.cols), (1, xv.cols), "bias shape");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        self.push(out, Op::AddRow(x, b), &[x, b])
    }

    pub fn scale(&mut self, a: Id, s: f64) -> Id {
        let x = self.v(a);
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| v * s).collect());
        self.push(out, Op::Scale(a, s), &[a])
    }

    fn map(&self, a: Id, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.v(a);
        Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| f(*v)).collect())
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        let out = self.map(a, |v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Id) -> Id {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let out = self.map(a, |v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns `..=i`.
    pub fn softmax(&mut self, a: Id, causal: bool) -> Id {
        let x = self.v(a);
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let lim = if causal { (r + 1).min(x.cols) } else { x.cols };
            let row = &x.row(r)[..lim];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, v) in out.row_mut(r)[..lim].iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in &mut out.row_mut(r)[..lim] {
                *o /= sum;
            }
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Id, g: Id, b: Id) -> Id {
        let xv = self.v(x);
        let (gv, bv) = (self.v(g), self.v(b));
        let c = xv.cols;
        let mut norm = Tensor::zeros(xv.rows, c);
        let mut inv = Vec::with_capacity(xv.rows);
        let mut out = Tensor::zeros(xv.rows, c);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv.push(s);
            for k in 0..c {
                let n = (row[k] - mean) * s;
                norm.data[r * c + k] = n;
                out.data[r * c + k] = n * gv.data[k] + bv.data[k];
            }
        }
        self.push(out, Op::LayerNorm { x, g, b, norm, inv }, &[x, g, b])
    }

    /// Rows `idx` of `table`.
    pub fn gather(&mut self, table: Id, idx: Rc<Vec<usize>>) -> Id {
        let t = self.v(table);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Gather(table, idx), &[table])
    }

    /// Mean of the rows of `table` in each bag.
    pub fn gather_mean(&mut self, table: Id, bags: Rc<Vec<Vec<usize>>>) -> Id {
        let t = self.v(table);
        let mut out = Tensor::zeros(bags.len(), t.cols);
        for (k, bag) in bags.iter().enumerate() {
            let w = 1.0 / bag.len().max(1) as f64;
            for &i in bag {
                for (o, v) in out.row_mut(k).iter_mut().zip(t.row(i)) {
                    *o += v * w;
                }
            }
        }
        self.push(out, Op::GatherMean(table, bags), &[table])
    }

    /// `out[i][j] = m[i][idx[i * n + j]]` for an `n x n` result.
    pub fn rel_gather(&mut self, m: Id, idx: Rc<Vec<usize>>) -> Id {
        let mv = self.v(m);
        let n = mv.rows;
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = mv.at(i, idx[i * n + j]);
            }
        }
        self.push(out, Op::RelGather(m, idx), &[m])
    }

    /// `out[i][idx[i * n + j]] += p[i][j]`, an `n x k` result.
    pub fn rel_scatter(&mut self, p: Id, idx: Rc<Vec<usize>>, k: usize) -> Id {
        let pv = self.v(p);
        let n = pv.rows;
        let mut out = Tensor::zeros(n, k);
        for i in 0..n {
            for j in 0..pv.cols {
                out.data[i * k + idx[i * n + j]] += pv.at(i, j);
            }
        }
        self.push(out, Op::RelScatter(p, idx), &[p])
    }

    /// `n x n` matrix with `q[i] . r[e]` at each pair, zero elsewhere.
    pub fn pair_dot(&mut self, q: Id, r: Id, pairs: Rc<Vec<Pair>>) -> Id {
        let (qv, rv) = (self.v(q), self.v(r));
        let n = qv.rows;
        let mut out = Tensor::zeros(n, n);
        for &(i, j, e) in pairs.iter() {
            out.data[i * n + j] += qv
                .row(i)
                .iter()
                .zip(rv.row(e))
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        self.push(out, Op::PairDot(q, r, pairs), &[q, r])
    }

    /// `out[i] += p[i][j] * r[e]` over the pairs.
    pub fn pair_scatter(&mut self, p: Id, r: Id, pairs: Rc<Vec<Pair>>) -> Id {
        let (pv, rv) = (self.v(p), self.v(r));
        let mut out = Tensor::zeros(pv.rows, rv.cols);
        for &(i, j, e) in pairs.iter() {
            let w = pv.at(i, j);
            for (o, v) in out.row_mut(i).iter_mut().zip(rv.row(e)) {
                *o += w * v;
            }
        }
        self.push(out, Op::PairScatter(p, r, pairs), &[p, r])
    }

    /// `out[v] += x[u]` for every edge `(u, v)`.
    pub fn sparse_agg(&mut self, x: Id, edges: Rc<Vec<(usize, usize)>>) -> Id {
        let xv = self.v(x);
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        for &(u, v) in edges.iter() {
            for k in 0..xv.cols {
                out.data[v * xv.cols + k] += xv.data[u * xv.cols + k];
            }
        }
        self.push(out, Op::SparseAgg(x, edges), &[x])
    }

    /// Sums rows into `nseg` segments.
    pub fn segment_sum(&mut self, x: Id, seg: Rc<Vec<usize>>, nseg: usize) -> Id {
        let xv = self.v(x);
        let mut out = Tensor::zeros(nseg, xv.cols);
        for (r, &s) in seg.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(x, seg), &[x])
    }

    /// Places row `k` of `x` at row `rows[k]` of an `n`-row zero matrix.
    pub fn scatter_rows(&mut self, x: Id, rows: Rc<Vec<usize>>, n: usize) -> Id {
        let xv = self.v(x);
        let mut out = Tensor::zeros(n, xv.cols);
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(k));
        }
        self.push(out, Op::ScatterRows(x, rows), &[x])
    }

    pub fn slice_cols(&mut self, x: Id, start: usize, len: usize) -> Id {
        let xv = self.v(x);
        let mut out = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    pub fn slice_rows(&mut self, x: Id, start: usize, len: usize) -> Id {
        let xv = self.v(x);
        let out = Tensor::from_vec(
            len,
            xv.cols,
            xv.data[start * xv.cols..(start + len) * xv.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(x, start), &[x])
    }

    pub fn concat_cols(&mut self, parts: Vec<Id>) -> Id {
        let rows = self.v(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.v(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pv = self.v(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        let inputs = parts.clone();
        self.push(out, Op::ConcatCols(parts), &inputs)
    }

    pub fn mean_rows(&mut self, x: Id) -> Id {
        let xv = self.v(x);
        let mut out = Tensor::zeros(1, xv.cols);
        for r in 0..xv.rows {
            for (o, v) in out.data.iter_mut().zip(xv.row(r)) {
                *o += v / xv.rows as f64;
            }
        }
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn sum_all(&mut self, x: Id) -> Id {
        let s = self.v(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// Mean token cross-entropy of `logits` rows against `targets`.
    pub fn cross_entropy(&mut self, logits: Id, targets: Rc<Vec<usize>>) -> Id {
        let lv = self.v(logits);
        assert_eq!(lv.rows, targets.len(), "one target per row");
        let mut probs = Tensor::zeros(lv.rows, lv.cols);
        let mut loss = 0.0;
        for r in 0..lv.rows {
            let row = lv.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - m).exp() / sum;
            }
            loss -= row[targets[r]] - m - sum.ln();
        }
        let n = lv.rows.max(1) as f64;
        self.push(
            Tensor::scalar(loss / n),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            &[logits],
        )
    }

    /// Back-propagates from the scalar `root`; returns `(param id, grad)`.
    pub fn backward(&self, root: Id) -> Vec<(usize, Tensor)> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        let mut out = Vec::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let send = |to: Id, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[to].needs_grad {
                    return;
                }
                match &mut grads[to] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let val = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => out.push((*pid, g)),
                Op::MatMul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        let mut da = Tensor::zeros(self.v(*a).rows, self.v(*a).cols);
                        gemm_acc(&g, false, self.v(*b), true, &mut da);
                        send(*a, da, &mut grads);
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = Tensor::zeros(self.v(*b).rows, self.v(*b).cols);
                        gemm_acc(self.v(*a), true, &g, false, &mut db);
                        send(*b, db, &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[*a].needs_grad {
                        let mut da = Tensor::zeros(self.v(*a).rows, self.v(*a).cols);
                        gemm_acc(&g, false, self.v(*b), false, &mut da);
                        send(*a, da, &mut grads);
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = Tensor::zeros(self.v(*b).rows, self.v(*b).cols);
                        gemm_acc(&g, true, self.v(*a), false, &mut db);
                        send(*b, db, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                    send(*a, g, &mut grads);
                    send(*b, neg, &mut grads);
                }
                Op::AddRow(x, b) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    send(*b, db, &mut grads);
                    send(*x, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.v(*a), self.v(*b));
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                    );
                    let db = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                    );
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Scale(a, s) => {
                    send(
                        *a,
                        Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * s).collect()),
                        &mut grads,
                    );
                }
                Op::Sigmoid(a) => {
                    let d = g
                        .data
                        .iter()
                        .zip(&val.data)
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    send(*a, Tensor::from_vec(g.rows, g.cols, d), &mut grads);
                }
                Op::Tanh(a) => {
                    let d = g
                        .data
                        .iter()
                        .zip(&val.data)
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    send(*a, Tensor::from_vec(g.rows, g.cols, d), &mut grads);
                }
                Op::Relu(a) => {
                    let d = g
                        .data
                        .iter()
                        .zip(&self.v(*a).data)
                        .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                        .collect();
                    send(*a, Tensor::from_vec(g.rows, g.cols, d), &mut grads);
                }
                Op::Softmax(a) => {
                    let mut d = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let (y, gy) = (val.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = y[k] * (gy[k] - dot);
                        }
                    }
                    send(*a, d, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    g: gamma,
                    b,
                    norm,
                    inv,
                } => {
                    let gv = self.v(*gamma);
                    let c = g.cols;
                    let mut dg = Tensor::zeros(1, c);
                    let mut db = Tensor::zeros(1, c);
                    let mut dx = Tensor::zeros(g.rows, c);
                    for r in 0..g.rows {
                        let gy = g.row(r);
                        let nr = norm.row(r);
                        let dn: Vec<f64> = (0..c).map(|k| gy[k] * gv.data[k]).collect();
                        let mean_dn = dn.iter().sum::<f64>() / c as f64;
                        let mean_dn_n =
                            dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for k in 0..c {
                            dg.data[k] += gy[k] * nr[k];
                            db.data[k] += gy[k];
                            dx.data[r * c + k] = inv[r] * (dn[k] - mean_dn - nr[k] * mean_dn_n);
                        }
                    }
                    send(*x, dx, &mut grads);
                    send(*gamma, dg, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Gather(t, idx) => {
                    let tv = self.v(*t);
                    let mut d = Tensor::zeros(tv.rows, tv.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    send(*t, d, &mut grads);
                }
                Op::GatherMean(t, bags) => {
                    let tv = self.v(*t);
                    let mut d = Tensor::zeros(tv.rows, tv.cols);
                    for (k, bag) in bags.iter().enumerate() {
                        let w = 1.0 / bag.len().max(1) as f64;
                        for &i in bag {
                            for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                                *o += v * w;
                            }
                        }
                    }
                    send(*t, d, &mut grads);
                }
                Op::RelGather(m, idx) => {
                    let mv = self.v(*m);
                    let n = g.rows;
                    let mut d = Tensor::zeros(mv.rows, mv.cols);
                    for i in 0..n {
                        for j in 0..n {
                            d.data[i * mv.cols + idx[i * n + j]] += g.data[i * n + j];
                        }
                    }
                    send(*m, d, &mut grads);
                }
                Op::RelScatter(p, idx) => {
                    let pv = self.v(*p);
                    let n = pv.rows;
                    let mut d = Tensor::zeros(pv.rows, pv.cols);
                    for i in 0..n {
                        for j in 0..pv.cols {
                            d.data[i * pv.cols + j] = g.at(i, idx[i * n + j]);
                        }
                    }
                    send(*p, d, &mut grads);
                }
                Op::PairDot(q, r, pairs) => {
                    let (qv, rv) = (self.v(*q), self.v(*r));
                    let n = g.cols;
                    let mut dq = Tensor::zeros(qv.rows, qv.cols);
                    let mut dr = Tensor::zeros(rv.rows, rv.cols);
                    for &(i, j, e) in pairs.iter() {
                        let w = g.data[i * n + j];
                        for k in 0..qv.cols {
                            dq.data[i * qv.cols + k] += w * rv.at(e, k);
                            dr.data[e * rv.cols + k] += w * qv.at(i, k);
                        }
                    }
                    send(*q, dq, &mut grads);
                    send(*r, dr, &mut grads);
                }
                Op::PairScatter(p, r, pairs) => {
                    let (pv, rv) = (self.v(*p), self.v(*r));
                    let mut dp = Tensor::zeros(pv.rows, pv.cols);
                    let mut dr = Tensor::zeros(rv.rows, rv.cols);
                    for &(i, j, e) in pairs.iter() {
                        let gi = g.row(i);
                        dp.data[i * pv.cols + j] +=
                            gi.iter().zip(rv.row(e)).map(|(a, b)| a * b).sum::<f64>();
                        let w = pv.at(i, j);
                        for (o, v) in dr.row_mut(e).iter_mut().zip(gi) {
                            *o += w * v;
                        }
                    }
                    send(*p, dp, &mut grads);
                    send(*r, dr, &mut grads);
                }
                Op::SparseAgg(x, edges) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    for &(u, v) in edges.iter() {
                        for k in 0..xv.cols {
                            d.data[u * xv.cols + k] += g.data[v * xv.cols + k];
                        }
                    }
                    send(*x, d, &mut grads);
                }
                Op::SegmentSum(x, seg) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    for (r, &s) in seg.iter().enumerate() {
                        d.row_mut(r).copy_from_slice(g.row(s));
                    }
                    send(*x, d, &mut grads);
                }
                Op::ScatterRows(x, rows) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    for (k, &r) in rows.iter().enumerate() {
                        d.row_mut(k).copy_from_slice(g.row(r));
                    }
                    send(*x, d, &mut grads);
                }
                Op::SliceCols(x, start) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    send(*x, d, &mut grads);
                }
                Op::SliceRows(x, start) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    d.data[start * xv.cols..(start + g.rows) * xv.cols].copy_from_slice(&g.data);
                    send(*x, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.v(p).cols;
                        let mut d = Tensor::zeros(g.rows, c);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        send(p, d, &mut grads);
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.v(*x);
                    let mut d = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for (o, v) in d.row_mut(r).iter_mut().zip(&g.data) {
                            *o = v / xv.rows as f64;
                        }
                    }
                    send(*x, d, &mut grads);
                }
                Op::SumAll(x) => {
                    let xv = self.v(*x);
                    send(
                        *x,
                        Tensor::from_vec(xv.rows, xv.cols, vec![g.data[0]; xv.data.len()]),
                        &mut grads,
                    );
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = probs.rows.max(1) as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d.data[r * d.cols + t] -= 1.0;
                    }
                    for v in &mut d.data {
                        *v *= g.data[0] / n;
                    }
                    send(*logits, d, &mut grads);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    /// Checks every op's backward against central differences through a
    /// scalar readout.
    fn check(build: impl Fn(&mut Tape, &[Id]) -> Id, shapes: &[(usize, usize)]) {
        let params: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| t(r, c, i as u64 + 3))
            .collect();
        let eval = |ps: &[Tensor]| {
            let mut tape = Tape::new();
            let ids: Vec<Id> = ps
                .iter()
                .enumerate()
                .map(|(i, p)| tape.param(p.clone(), i))
                .collect();
            let out = build(&mut tape, &ids);
            let (r, c) = (tape.value(out).rows, tape.value(out).cols);
            let w = tape.constant(t(r, c, 99));
            let m = tape.mul(out, w);
            let root = tape.sum_all(m);
            (tape.value(root).data[0], tape.backward(root))
        };
        let (_, grads) = eval(&params);
        for (pid, g) in grads {
            for k in 0..g.data.len() {
                let h = 1e-6;
                let mut plus = params.clone();
                plus[pid].data[k] += h;
                let mut minus = params.clone();
                minus[pid].data[k] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g.data[k];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs().max(an.abs()),
                    "param {pid}[{k}]: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn elementwise_and_matrix_ops() {
        check(
            |tp, p| {
                let m = tp.matmul(p[0], p[1]);
                let n = tp.matmul_t(m, p[2]);
                tp.tanh(n)
            },
            &[(3, 4), (4, 2), (5, 2)],
        );
        check(
            |tp, p| {
                let a = tp.add(p[0], p[1]);
                let s = tp.sub(a, p[1]);
                let m = tp.mul(s, p[1]);
                tp.sigmoid(m)
            },
            &[(2, 3), (2, 3)],
        );
        check(
            |tp, p| {
                let a = tp.add_row(p[0], p[1]);
                let r = tp.relu(a);
                tp.scale(r, 1.7)
            },
            &[(3, 3), (1, 3)],
        );
        check(
            |tp, p| {
                let s = tp.softmax(p[0], false);
                tp.matmul(s, p[1])
            },
            &[(4, 4), (4, 2)],
        );
        check(
            |tp, p| {
                let s = tp.softmax(p[0], true);
                tp.matmul(s, p[1])
            },
            &[(4, 4), (4, 2)],
        );
        check(
            |tp, p| tp.layer_norm(p[0], p[1], p[2]),
            &[(3, 5), (1, 5), (1, 5)],
        );
        check(
            |tp, p| {
                let m = tp.mean_rows(p[0]);
                let c = tp.concat_cols(vec![m, p[1]]);
                tp.slice_cols(c, 1, 3)
            },
            &[(3, 2), (1, 2)],
        );
        check(|tp, p| tp.slice_rows(p[0], 1, 2), &[(4, 2)]);
    }

    #[test]
    fn indexing_ops() {
        let idx = Rc::new(vec![0, 2, 2, 1]);
        check(move |tp, p| tp.gather(p[0], idx.clone()), &[(3, 2)]);
        let bags = Rc::new(vec![vec![0, 1], vec![2], vec![1, 1, 2]]);
        check(move |tp, p| tp.gather_mean(p[0], bags.clone()), &[(3, 2)]);
        let rel = Rc::new(vec![1, 2, 0, 0, 1, 2, 0, 0, 1]);
        check(move |tp, p| tp.rel_gather(p[0], rel.clone()), &[(3, 3)]);
        let rel = Rc::new(vec![1, 2, 2, 0, 1, 2, 0, 0, 1]);
        check(move |tp, p| tp.rel_scatter(p[0], rel.clone(), 3), &[(3, 3)]);
        let pairs = Rc::new(vec![(0, 1, 0), (2, 0, 1), (1, 1, 1)]);
        let pp = pairs.clone();
        check(
            move |tp, p| tp.pair_dot(p[0], p[1], pp.clone()),
            &[(3, 2), (2, 2)],
        );
        check(
            move |tp, p| tp.pair_scatter(p[0], p[1], pairs.clone()),
            &[(3, 3), (2, 2)],
        );
        let edges = Rc::new(vec![(0, 1), (1, 2), (2, 0), (0, 2)]);
        check(move |tp, p| tp.sparse_agg(p[0], edges.clone()), &[(3, 2)]);
        let seg = Rc::new(vec![0, 1, 0]);
        check(move |tp, p| tp.segment_sum(p[0], seg.clone(), 2), &[(3, 2)]);
        let rows = Rc::new(vec![2, 0]);
        check(
            move |tp, p| tp.scatter_rows(p[0], rows.clone(), 4),
            &[(2, 3)],
        );
    }

    #[test]
    fn cross_entropy_gradient() {
        let targets = Rc::new(vec![1, 0, 2]);
        check(
            move |tp, p| tp.cross_entropy(p[0], targets.clone()),
            &[(3, 4)],
        );
    }
}
