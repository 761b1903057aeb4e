//! Reverse-mode differentiation over an append-only node list.
//!
//! Nodes are created in evaluation order, so the list itself is a valid
//! topological order and `backward` is a single reverse sweep. Parameter
//! nodes borrow their values from a [`ParamStore`]; everything else owns
//! its output tensor.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{
    gemm_nn, gemm_nt, gemm_tn, log_sum_exp, sigmoid_scalar, softmax_in_place, Tensor,
};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    StackRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    Gather(NodeId, Vec<usize>),
    RowDots {
        query: NodeId,
        keys: Vec<NodeId>,
    },
    WeightedSum {
        weights: NodeId,
        values: Vec<NodeId>,
    },
    SoftmaxRows(NodeId),
    ScaleRows {
        scale: NodeId,
        input: NodeId,
    },
    Scale(NodeId, f64),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Tensor,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.params.get(p),
            _ => node
                .value
                .as_ref()
                .expect("non-parameter node without a value"),
        }
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let t = self.value(id);
        (t.rows(), t.cols())
    }

    fn push(&mut self, op: Op, value: Tensor, what: &str) -> Result<NodeId> {
        value.ensure_finite(what)?;
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(dim_err(format!("matmul inner dims {k} vs {k2}")));
        }
        let data = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, data)?, "matmul")
    }

    fn same_dims(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(dim_err(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_dims(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), Tensor::matrix(r, c, data)?, "add")
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(dim_err(format!(
                "add_row: {:?} onto {r}x{c}",
                self.dims(row)
            )));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), Tensor::matrix(r, c, data)?, "add_row")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_dims(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), Tensor::matrix(r, c, data)?, "mul")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), Tensor::matrix(r, c, data)?, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| sigmoid_scalar(x))
            .collect();
        self.push(Op::Sigmoid(a), Tensor::matrix(r, c, data)?, "sigmoid")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| dim_err("concat of nothing"))?;
        let rows = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(dim_err("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(rows, total, data)?,
            "concat",
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(dim_err(format!("slice_cols {start}..{end} of {c}")));
        }
        let t = self.value(a);
        let data = (0..r)
            .flat_map(|i| t.row_slice(i)[start..end].iter().copied())
            .collect();
        self.push(
            Op::SliceCols(a, start, end),
            Tensor::matrix(r, end - start, data)?,
            "slice_cols",
        )
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| dim_err("stack of nothing"))?;
        let cols = self.dims(first).1;
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(dim_err("stack_rows: column counts differ"));
        }
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        let rows = data.len() / cols;
        self.push(
            Op::StackRows(parts.to_vec()),
            Tensor::matrix(rows, cols, data)?,
            "stack_rows",
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if start >= end || end > r {
            return Err(dim_err(format!("slice_rows {start}..{end} of {r}")));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        self.push(
            Op::SliceRows(a, start, end),
            Tensor::matrix(end - start, c, data)?,
            "slice_rows",
        )
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (n, c) = self.dims(table);
        if ids.is_empty() {
            return Err(dim_err("gather of no rows"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        let t = self.value(table);
        let data = ids
            .iter()
            .flat_map(|&i| t.row_slice(i).iter().copied())
            .collect();
        self.push(
            Op::Gather(table, ids.to_vec()),
            Tensor::matrix(ids.len(), c, data)?,
            "gather",
        )
    }

    /// `out[r][j] = <query[r], keys[j][r]>`; one column per key matrix.
    pub fn row_dots(&mut self, query: NodeId, keys: &[NodeId]) -> Result<NodeId> {
        let (r, c) = self.dims(query);
        if keys.is_empty() {
            return Err(dim_err("row_dots with no keys"));
        }
        if keys.iter().any(|&k| self.dims(k) != (r, c)) {
            return Err(dim_err("row_dots: key shape differs from query"));
        }
        let q = self.value(query);
        let nk = keys.len();
        let mut data = vec![0.0; r * nk];
        for (j, &k) in keys.iter().enumerate() {
            let kt = self.value(k);
            for i in 0..r {
                data[i * nk + j] = q
                    .row_slice(i)
                    .iter()
                    .zip(kt.row_slice(i))
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        self.push(
            Op::RowDots {
                query,
                keys: keys.to_vec(),
            },
            Tensor::matrix(r, nk, data)?,
            "row_dots",
        )
    }

    /// `out[r] = sum_j weights[r][j] * values[j][r]`.
    pub fn weighted_sum(&mut self, weights: NodeId, values: &[NodeId]) -> Result<NodeId> {
        let (r, nv) = self.dims(weights);
        if nv != values.len() {
            return Err(dim_err(format!(
                "weighted_sum: {nv} weights for {} values",
                values.len()
            )));
        }
        let c = self.dims(values[0]).1;
        if values.iter().any(|&v| self.dims(v) != (r, c)) {
            return Err(dim_err("weighted_sum: value shapes differ"));
        }
        let w = self.value(weights);
        let mut data = vec![0.0; r * c];
        for (j, &v) in values.iter().enumerate() {
            let vt = self.value(v);
            for i in 0..r {
                let wij = w.get(i, j);
                for (o, x) in data[i * c..(i + 1) * c].iter_mut().zip(vt.row_slice(i)) {
                    *o += wij * x;
                }
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                values: values.to_vec(),
            },
            Tensor::matrix(r, c, data)?,
            "weighted_sum",
        )
    }

    /// Row-wise softmax with max-subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows(a), Tensor::matrix(r, c, data)?, "softmax")
    }

    /// Row-wise softmax over the entries where `keep` is true; the others
    /// get exactly zero weight. Every row must keep at least one entry.
    pub fn softmax_rows_masked(&mut self, a: NodeId, keep: &[bool]) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if keep.len() != r * c {
            return Err(dim_err(format!(
                "mask of {} entries for {r}x{c}",
                keep.len()
            )));
        }
        if keep.chunks(c).any(|row| !row.contains(&true)) {
            return Err(Error::Contract(
                "softmax row with every entry masked".into(),
            ));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for ((out, x), m) in data.chunks_mut(c).zip(src.chunks(c)).zip(keep.chunks(c)) {
            let max = x
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((o, v), &k) in out.iter_mut().zip(x).zip(m) {
                if k {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        self.push(Op::SoftmaxRows(a), Tensor::matrix(r, c, data)?, "softmax")
    }

    /// Multiplies row `i` of `input` by `scale[i]`, where `scale` is `r x 1`.
    pub fn scale_rows(&mut self, scale: NodeId, input: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(input);
        if self.dims(scale) != (r, 1) {
            return Err(dim_err(format!(
                "scale_rows: scale {:?} for {r} rows",
                self.dims(scale)
            )));
        }
        let s = self.value(scale).data();
        let mut data = self.value(input).data().to_vec();
        for (chunk, f) in data.chunks_mut(c).zip(s) {
            for x in chunk {
                *x *= f;
            }
        }
        self.push(
            Op::ScaleRows { scale, input },
            Tensor::matrix(r, c, data)?,
            "scale_rows",
        )
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        self.push(Op::Scale(a, factor), Tensor::matrix(r, c, data)?, "scale")
    }

    /// Per-row `-log softmax(logits[r])[targets[r]]` as an `r x 1` column.
    /// Rows with no target contribute zero loss and zero gradient.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(dim_err(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::Index {
                index: *bad,
                len: c,
            });
        }
        let lt = self.value(logits);
        let mut probs = lt.clone();
        let mut loss = vec![0.0; r];
        for (i, (row, target)) in probs.data_mut().chunks_mut(c).zip(targets).enumerate() {
            if let Some(t) = *target {
                loss[i] = log_sum_exp(lt.row_slice(i)) - lt.row_slice(i)[t];
            }
            softmax_in_place(row);
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::matrix(r, 1, loss)?,
            "cross_entropy",
        )
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn probabilities(&self, ce: NodeId) -> Option<&Tensor> {
        match &self.nodes[ce.0].op {
            Op::CrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    /// Gradients of a scalar node with respect to every parameter that
    /// contributed to it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.as_ref();
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    let t = self.params.get(*p);
                    out.accumulate(*p, Tensor::new(t.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let ga = gemm_nt(&g, self.value(*b).data(), m, n, k);
                    let gb = gemm_tn(self.value(*a).data(), &g, m, k, n);
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &g);
                    add_into(&mut grads, *b, &g);
                }
                Op::AddRow(a, row) => {
                    let c = self.dims(*a).1;
                    add_into(&mut grads, *a, &g);
                    let mut gr = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        for (s, x) in gr.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    add_into(&mut grads, *row, &gr);
                }
                Op::Mul(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Tanh(a) => {
                    let y = y.expect("tanh value").data();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect();
                    add_into(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let y = y.expect("sigmoid value").data();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                    add_into(&mut grads, *a, &ga);
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = self.dims(NodeId(i));
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        let slot = slot(&mut grads, p, r * c);
                        for row in 0..r {
                            let src = &g[row * total + offset..row * total + offset + c];
                            for (d, s) in slot[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (r, c) = self.dims(*a);
                    let w = end - start;
                    let slot = slot(&mut grads, *a, r * c);
                    for row in 0..r {
                        for (d, s) in slot[row * c + start..row * c + end]
                            .iter_mut()
                            .zip(&g[row * w..(row + 1) * w])
                        {
                            *d += s;
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(&mut grads, p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let (r, c) = self.dims(*a);
                    let slot = slot(&mut grads, *a, r * c);
                    for (d, s) in slot[start * c..end * c].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Gather(table, ids) => {
                    let (n, c) = self.dims(*table);
                    let slot = slot(&mut grads, *table, n * c);
                    for (row, &id) in ids.iter().enumerate() {
                        for (d, s) in slot[id * c..(id + 1) * c]
                            .iter_mut()
                            .zip(&g[row * c..(row + 1) * c])
                        {
                            *d += s;
                        }
                    }
                }
                Op::RowDots { query, keys } => {
                    let (r, c) = self.dims(*query);
                    let nk = keys.len();
                    let q = self.value(*query);
                    let mut gq = vec![0.0; r * c];
                    for (j, &k) in keys.iter().enumerate() {
                        let kt = self.value(k);
                        let mut gk = vec![0.0; r * c];
                        for row in 0..r {
                            let gij = g[row * nk + j];
                            for ((dq, dk), (qv, kv)) in gq[row * c..(row + 1) * c]
                                .iter_mut()
                                .zip(&mut gk[row * c..(row + 1) * c])
                                .zip(q.row_slice(row).iter().zip(kt.row_slice(row)))
                            {
                                *dq += gij * kv;
                                *dk += gij * qv;
                            }
                        }
                        add_into(&mut grads, k, &gk);
                    }
                    add_into(&mut grads, *query, &gq);
                }
                Op::WeightedSum { weights, values } => {
                    let (r, nv) = self.dims(*weights);
                    let c = self.dims(values[0]).1;
                    let w = self.value(*weights);
                    let mut gw = vec![0.0; r * nv];
                    for (j, &v) in values.iter().enumerate() {
                        let vt = self.value(v);
                        let mut gv = vec![0.0; r * c];
                        for row in 0..r {
                            let grow = &g[row * c..(row + 1) * c];
                            gw[row * nv + j] =
                                grow.iter().zip(vt.row_slice(row)).map(|(a, b)| a * b).sum();
                            let wij = w.get(row, j);
                            for (d, s) in gv[row * c..(row + 1) * c].iter_mut().zip(grow) {
                                *d = wij * s;
                            }
                        }
                        add_into(&mut grads, v, &gv);
                    }
                    add_into(&mut grads, *weights, &gw);
                }
                // masked entries have y = 0 and so receive no gradient
                Op::SoftmaxRows(a) => {
                    let c = self.dims(*a).1;
                    let y = y.expect("softmax value").data();
                    let mut ga = vec![0.0; g.len()];
                    for ((out, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    add_into(&mut grads, *a, &ga);
                }
                Op::ScaleRows { scale, input } => {
                    let (r, c) = self.dims(*input);
                    let s = self.value(*scale).data();
                    let x = self.value(*input).data();
                    let mut gi = g.clone();
                    let mut gs = vec![0.0; r];
                    for row in 0..r {
                        let gr = &g[row * c..(row + 1) * c];
                        gs[row] = gr
                            .iter()
                            .zip(&x[row * c..(row + 1) * c])
                            .map(|(a, b)| a * b)
                            .sum();
                        for v in &mut gi[row * c..(row + 1) * c] {
                            *v *= s[row];
                        }
                    }
                    add_into(&mut grads, *input, &gi);
                    add_into(&mut grads, *scale, &gs);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    add_into(&mut grads, *a, &ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = probs.cols();
                    let mut gl = vec![0.0; probs.len()];
                    for (row, target) in targets.iter().enumerate() {
                        if let Some(t) = *target {
                            let gr = g[row];
                            for (d, p) in gl[row * c..(row + 1) * c]
                                .iter_mut()
                                .zip(probs.row_slice(row))
                            {
                                *d = gr * p;
                            }
                            gl[row * c + t] -= gr;
                        }
                    }
                    add_into(&mut grads, *logits, &gl);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    add_into(&mut grads, *a, &vec![g[0]; n]);
                }
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(out)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        s @ None => *s = Some(g.to_vec()),
    }
}
