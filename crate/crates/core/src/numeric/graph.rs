//! Recorded computation graph with reverse-mode differentiation.
//!
//! Builder calls evaluate eagerly and append a node, so every graph always
//! holds the activations of its most recent forward pass. [`Graph::forward`]
//! replays the recorded structure with new input bindings. Relevance
//! propagation walks the same node list (see `crate::lrp`).

use std::collections::BTreeMap;

use crate::error::{invalid, shape, Error, Result};
use crate::numeric::ssm::Selective;
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which operand of a matrix product carries relevance during LRP.
///
/// `Lhs` is a linear layer `X W` (weights constant), `Rhs` is an attention
/// mixing `P V` (attention constant), `None` marks products on constant
/// paths such as query-key scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Carrier {
    Lhs,
    Rhs,
    None,
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
        carrier: Carrier,
    },
    Add(NodeId, NodeId),
    /// `x + bias` with a `1 x cols` bias broadcast over rows.
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Mul(NodeId, NodeId),
    Affine {
        x: NodeId,
        scale: f64,
        shift: f64,
    },
    /// Elementwise product with a fixed tensor (dropout).
    Mask {
        x: NodeId,
        mask: Tensor,
    },
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise `(x - mean) / (std + eps)`, population std, no affine part.
    LayerNorm {
        x: NodeId,
        eps: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Transpose(NodeId),
    SelectiveScan {
        x: NodeId,
        dt: NodeId,
        a_log: NodeId,
        b: NodeId,
        c: NodeId,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Mask { .. } => "mask",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Silu(_) => "silu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::SelectiveScan { .. } => "ssm_scan",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) => vec![],
            Op::MatMul { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::Affine { x, .. }
            | Op::Mask { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. } => vec![*x],
            Op::Tanh(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Silu(x)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Transpose(x) => vec![*x],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
            Op::SelectiveScan { x, dt, a_log, b, c } => vec![*x, *dt, *a_log, *b, *c],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    /// Extra cached state (scan states for `SelectiveScan`).
    pub aux: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    output: Option<NodeId>,
}

/// Per-node gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims();
    let mut out = x.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn layernorm_rows(x: &Tensor, eps: f64) -> Tensor {
    let (r, c) = x.dims();
    let mut out = x.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let denom = var.sqrt() + eps;
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
    out
}

fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    if parts.iter().any(|p| p.cols() != cols) {
        return shape("concat_rows: column counts differ");
    }
    let rows = parts.iter().map(|p| p.rows()).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::matrix(rows, cols, data)
}

fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts[0].rows();
    if parts.iter().any(|p| p.rows() != rows) {
        return shape("concat_cols: row counts differ");
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    Tensor::matrix(rows, cols, data)
}

fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = x.dims();
    if start + len > c {
        return shape(format!("slice_cols {}..{} of {} columns", start, start + len, c));
    }
    let mut data = Vec::with_capacity(r * len);
    for i in 0..r {
        data.extend_from_slice(&x.row_slice(i)[start..start + len]);
    }
    Tensor::matrix(r, len, data)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    /// Id of the input node bound to `name`.
    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| matches!(&n.op, Op::Input(s) if s == name))
            .map(NodeId)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let (value, aux) = self.eval(&op, self.nodes.len())?;
        self.nodes.push(Node { op, value, aux });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: self.nodes.len(),
                op: "input",
            });
        }
        self.nodes.push(Node {
            op: Op::Input(name.to_string()),
            value,
            aux: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            value,
            aux: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.matmul_with(lhs, rhs, Carrier::Lhs)
    }

    pub fn matmul_with(&mut self, lhs: NodeId, rhs: NodeId, carrier: Carrier) -> Result<NodeId> {
        self.push(Op::MatMul { lhs, rhs, carrier })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow { x, bias })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.push(Op::Affine { x, scale, shift })
    }

    pub fn mask(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        self.push(Op::Mask { x, mask })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Silu(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(x))
    }

    pub fn layernorm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        self.push(Op::LayerNorm { x, eps })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(x))
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return invalid("concat_rows of nothing");
        }
        self.push(Op::ConcatRows(xs.to_vec()))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return invalid("concat_cols of nothing");
        }
        self.push(Op::ConcatCols(xs.to_vec()))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceRows { x, start, len })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceCols { x, start, len })
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(x))
    }

    pub fn selective_scan(
        &mut self,
        x: NodeId,
        dt: NodeId,
        a_log: NodeId,
        b: NodeId,
        c: NodeId,
    ) -> Result<NodeId> {
        self.push(Op::SelectiveScan { x, dt, a_log, b, c })
    }

    fn eval(&self, op: &Op, at: usize) -> Result<(Tensor, Option<Tensor>)> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let mut aux = None;
        let out = match op {
            Op::Input(_) | Op::Param(_) => unreachable!("leaf nodes are not evaluated"),
            Op::MatMul { lhs, rhs, .. } => v(lhs).matmul(v(rhs))?,
            Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y)?,
            Op::AddRow { x, bias } => {
                let (x, b) = (v(x), v(bias));
                let (r, c) = x.dims();
                if b.len() != c {
                    return shape(format!("add_row: bias {:?} for {:?}", b.shape(), x.shape()));
                }
                let mut out = x.clone();
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[i * c + j] += b.data()[j];
                    }
                }
                out
            }
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y)?,
            Op::Affine { x, scale, shift } => v(x).map(|e| scale * e + shift),
            Op::Mask { x, mask } => v(x).zip_map(mask, |a, m| a * m)?,
            Op::Tanh(x) => v(x).map(f64::tanh),
            Op::Relu(x) => v(x).map(|e| e.max(0.0)),
            Op::Sigmoid(x) => v(x).map(sigmoid),
            Op::Silu(x) => silu(v(x)),
            Op::Softmax(x) => softmax_rows(v(x)),
            Op::LayerNorm { x, eps } => layernorm_rows(v(x), *eps),
            Op::Sum(x) => Tensor::scalar(v(x).sum()),
            Op::Mean(x) => {
                let t = v(x);
                if t.is_empty() {
                    return shape("mean of empty tensor");
                }
                Tensor::scalar(t.sum() / t.len() as f64)
            }
            Op::ConcatRows(xs) => concat_rows(&xs.iter().map(v).collect::<Vec<_>>())?,
            Op::ConcatCols(xs) => concat_cols(&xs.iter().map(v).collect::<Vec<_>>())?,
            Op::SliceRows { x, start, len } => {
                let t = v(x);
                if start + len > t.rows() {
                    return shape(format!(
                        "slice_rows {}..{} of {} rows",
                        start,
                        start + len,
                        t.rows()
                    ));
                }
                let c = t.cols();
                Tensor::matrix(*len, c, t.data()[start * c..(start + len) * c].to_vec())?
            }
            Op::SliceCols { x, start, len } => slice_cols(v(x), *start, *len)?,
            Op::Transpose(x) => v(x).transpose(),
            Op::SelectiveScan { x, dt, a_log, b, c } => {
                let sel = Selective {
                    x: v(x),
                    dt: v(dt),
                    a_log: v(a_log),
                    b: v(b),
                    c: v(c),
                };
                let (y, states) = sel.forward()?;
                aux = Some(states);
                y
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite {
                node: at,
                op: op.name(),
            });
        }
        Ok((out, aux))
    }

    /// Re-runs the recorded graph with new input bindings and returns the
    /// output node's value. Parameters keep their recorded values.
    pub fn forward(&mut self, inputs: &BTreeMap<String, Tensor>) -> Result<Tensor> {
        let out = self.output.ok_or(Error::NoForward)?;
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            match &op {
                Op::Param(_) => {}
                Op::Input(name) => {
                    let t = inputs
                        .get(name)
                        .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                    if !t.is_finite() {
                        return Err(Error::NonFinite { node: i, op: "input" });
                    }
                    self.nodes[i].value = t.clone();
                }
                _ => {
                    let (value, aux) = self.eval(&op, i)?;
                    self.nodes[i].value = value;
                    self.nodes[i].aux = aux;
                }
            }
        }
        Ok(self.nodes[out.0].value.clone())
    }

    /// Gradients of `sum_k <seed_k, node_k>` with respect to every node.
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::NoForward);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (id, seed) in seeds {
            let node = self.nodes.get(id.0).ok_or(Error::NoForward)?;
            if !node.value.same_shape(seed) {
                return shape(format!(
                    "seed {:?} for node {} of shape {:?}",
                    seed.shape(),
                    id.0,
                    node.value.shape()
                ));
            }
            accumulate(&mut grads, *id, seed.clone())?;
            top = top.max(id.0);
        }
        for i in (0..=top).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `<seed, output>` keyed by input name.
    pub fn backward_grad(&self, seed: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        let out = self.output.ok_or(Error::NoForward)?;
        let grads = self.backward(&[(out, seed.clone())])?;
        Ok(self.leaf_grads(&grads, |op| match op {
            Op::Input(n) => Some(n.as_str()),
            _ => None,
        }))
    }

    /// Parameter gradients keyed by parameter name; parameters that the seed
    /// does not reach get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.leaf_grads(grads, |op| match op {
            Op::Param(n) => Some(n.as_str()),
            _ => None,
        })
    }

    fn leaf_grads<'a>(
        &'a self,
        grads: &Gradients,
        pick: impl Fn(&'a Op) -> Option<&'a str>,
    ) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = pick(&node.op) {
                let g = grads.grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                match out.get_mut(name) {
                    Some(acc) => {
                        // same name bound twice: gradients add up
                        let _ = acc.add_assign(&g);
                    }
                    None => {
                        out.insert(name.to_string(), g);
                    }
                }
            }
        }
        out
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let y = &node.value;
        match &node.op {
            Op::Input(_) | Op::Param(_) => {}
            Op::MatMul { lhs, rhs, .. } => {
                accumulate(grads, *lhs, g.matmul(&v(rhs).transpose())?)?;
                accumulate(grads, *rhs, v(lhs).transpose().matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::AddRow { x, bias } => {
                accumulate(grads, *x, g.clone())?;
                let (r, c) = g.dims();
                let mut db = vec![0.0; c];
                for row in 0..r {
                    for (d, s) in db.iter_mut().zip(g.row_slice(row)) {
                        *d += s;
                    }
                }
                let db = Tensor::new(v(bias).shape().to_vec(), db)?;
                accumulate(grads, *bias, db)?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(v(b), |d, w| d * w)?)?;
                accumulate(grads, *b, g.zip_map(v(a), |d, w| d * w)?)?;
            }
            Op::Affine { x, scale, .. } => accumulate(grads, *x, g.scale(*scale))?,
            Op::Mask { x, mask } => accumulate(grads, *x, g.zip_map(mask, |d, m| d * m)?)?,
            Op::Tanh(x) => accumulate(grads, *x, g.zip_map(y, |d, t| d * (1.0 - t * t))?)?,
            Op::Relu(x) => {
                accumulate(grads, *x, g.zip_map(v(x), |d, a| if a > 0.0 { d } else { 0.0 })?)?
            }
            Op::Sigmoid(x) => accumulate(grads, *x, g.zip_map(y, |d, s| d * s * (1.0 - s))?)?,
            Op::Silu(x) => {
                let dx = g.zip_map(v(x), |d, a| {
                    let s = sigmoid(a);
                    d * (s + a * s * (1.0 - s))
                })?;
                accumulate(grads, *x, dx)?
            }
            Op::Softmax(x) => {
                let (r, c) = y.dims();
                let mut dx = Tensor::zeros(vec![r, c]);
                for row in 0..r {
                    let yr = y.row_slice(row);
                    let gr = g.row_slice(row);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx.set(row, j, yr[j] * (gr[j] - dot));
                    }
                }
                accumulate(grads, *x, dx)?
            }
            Op::LayerNorm { x, eps } => {
                let xin = v(x);
                let (r, c) = xin.dims();
                let n = c as f64;
                let mut dx = Tensor::zeros(vec![r, c]);
                for row in 0..r {
                    let xr = xin.row_slice(row);
                    let gr = g.row_slice(row);
                    let mean = xr.iter().sum::<f64>() / n;
                    let cen: Vec<f64> = xr.iter().map(|a| a - mean).collect();
                    let std = (cen.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
                    let denom = std + eps;
                    let gc: f64 = gr.iter().zip(&cen).map(|(a, b)| a * b).sum();
                    // d/dc_i of c_j / (s + eps), s = sqrt(mean c^2)
                    let mut dc: Vec<f64> = gr.iter().map(|a| a / denom).collect();
                    if std > 0.0 {
                        for (d, ci) in dc.iter_mut().zip(&cen) {
                            *d -= gc / (denom * denom) * ci / (n * std);
                        }
                    }
                    let mdc = dc.iter().sum::<f64>() / n;
                    for j in 0..c {
                        dx.set(row, j, dc[j] - mdc);
                    }
                }
                accumulate(grads, *x, dx)?
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(grads, *x, Tensor::filled(v(x).shape().to_vec(), s))?
            }
            Op::Mean(x) => {
                let t = v(x);
                let s = g.data()[0] / t.len() as f64;
                accumulate(grads, *x, Tensor::filled(t.shape().to_vec(), s))?
            }
            Op::ConcatRows(xs) => {
                let c = g.cols();
                let mut start = 0;
                for id in xs {
                    let r = v(id).rows();
                    let part = Tensor::matrix(r, c, g.data()[start * c..(start + r) * c].to_vec())?;
                    accumulate(grads, *id, part)?;
                    start += r;
                }
            }
            Op::ConcatCols(xs) => {
                let mut start = 0;
                for id in xs {
                    let w = v(id).cols();
                    accumulate(grads, *id, slice_cols(g, start, w)?)?;
                    start += w;
                }
            }
            Op::SliceRows { x, start, .. } => {
                let t = v(x);
                let mut dx = Tensor::zeros(vec![t.rows(), t.cols()]);
                let c = t.cols();
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx)?
            }
            Op::SliceCols { x, start, len } => {
                let t = v(x);
                let mut dx = Tensor::zeros(vec![t.rows(), t.cols()]);
                for row in 0..t.rows() {
                    for j in 0..*len {
                        dx.set(row, start + j, g.get(row, j));
                    }
                }
                accumulate(grads, *x, dx)?
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose())?,
            Op::SelectiveScan { x, dt, a_log, b, c } => {
                let sel = Selective {
                    x: v(x),
                    dt: v(dt),
                    a_log: v(a_log),
                    b: v(b),
                    c: v(c),
                };
                let states = node.aux.as_ref().ok_or(Error::NoForward)?;
                let [gx, gdt, ga, gb, gc] = sel.backward(states, g)?;
                accumulate(grads, *x, gx)?;
                accumulate(grads, *dt, gdt)?;
                accumulate(grads, *a_log, ga)?;
                accumulate(grads, *b, gb)?;
                accumulate(grads, *c, gc)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
