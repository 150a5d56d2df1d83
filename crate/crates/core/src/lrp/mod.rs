//! Layer-wise relevance propagation over recorded model graphs.
//!
//! Relevance is pushed from seed nodes towards the input in reverse node
//! order. Linear layers use the epsilon (optionally gamma) rule, attention
//! mixing the AH rule, normalisation the LN rule, gating nonlinearities and
//! products the identity and half-split rules, and the selective scan the
//! per-channel recurrence rule. Relevance reaching a parameter or a bias is
//! absorbed and recorded in the ledger.

mod rules;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::explainers::ExplanationTarget;
use crate::models::ForwardTrace;
use crate::numeric::ssm::Selective;
use crate::numeric::{Carrier, Graph, NodeId, Op, Tensor};

pub use rules::{lrp_add, lrp_attention_ah, lrp_gate, lrp_layernorm_ln, lrp_linear, lrp_silu, lrp_ssm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrpConfig {
    /// Signed stabiliser added to every denominator, relative to the largest
    /// denominator magnitude of the layer.
    pub epsilon: f64,
    /// Positive-weight boost of the linear rule; 0 gives the epsilon rule.
    pub gamma: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            gamma: 0.0,
        }
    }
}

/// Relevance total observed at one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub node: usize,
    pub op: &'static str,
    pub relevance: f64,
    /// Share dropped here (parameters, biases, constant shifts).
    pub absorbed: f64,
}

#[derive(Clone, Debug)]
pub struct RelevanceState {
    relevance: Vec<Option<Tensor>>,
    pub ledger: Vec<LedgerEntry>,
}

impl RelevanceState {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.relevance.get(id.index()).and_then(Option::as_ref)
    }

    pub fn absorbed(&self) -> f64 {
        self.ledger.iter().map(|e| e.absorbed).sum()
    }
}

#[derive(Clone, Debug)]
pub struct LrpResult {
    /// Per-instance relevance: row sums of the input relevance.
    pub scores: Vec<f64>,
    /// Total relevance injected at the seeds.
    pub seeded: f64,
    pub state: RelevanceState,
}

fn accumulate(slot: &mut Option<Tensor>, r: Tensor) -> Result<()> {
    match slot {
        Some(t) => t.add_assign(&r),
        None => {
            *slot = Some(r);
            Ok(())
        }
    }
}

fn scatter_rows(rows: usize, r: &Tensor, start: usize) -> Tensor {
    let cols = r.cols();
    let mut out = Tensor::zeros(vec![rows, cols]);
    out.data_mut()[start * cols..(start + r.rows()) * cols].copy_from_slice(r.data());
    out
}

fn scatter_cols(cols: usize, r: &Tensor, start: usize) -> Tensor {
    let rows = r.rows();
    let mut out = Tensor::zeros(vec![rows, cols]);
    for i in 0..rows {
        for (j, v) in r.row_slice(i).iter().enumerate() {
            out.set(i, start + j, *v);
        }
    }
    out
}

fn column(t: &Tensor, c: usize) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| vec![t.get(r, c)]).collect()
}

/// Per-channel recurrence rule for the selective scan.
fn ssm_relevance(graph: &Graph, op: &Op, r: &Tensor, eps: f64) -> Result<Tensor> {
    let Op::SelectiveScan { x, dt, a_log, b, c } = op else {
        unreachable!("called on a selective scan node");
    };
    let sel = Selective {
        x: graph.value(*x),
        dt: graph.value(*dt),
        a_log: graph.value(*a_log),
        b: graph.value(*b),
        c: graph.value(*c),
    };
    let (t_len, p_len, _) = sel.check()?;
    let mut out = Tensor::zeros(vec![t_len, p_len]);
    for p in 0..p_len {
        let steps = sel.channel_steps(p)?;
        let (r_x, _) = lrp_ssm(&steps, &column(sel.x, p), &column(r, p), None, eps)?;
        for (t, v) in r_x.iter().enumerate() {
            out.set(t, p, v[0]);
        }
    }
    Ok(out)
}

/// Propagates seed relevances to every node reachable through
/// relevance-carrying edges.
pub fn lrp_propagate(
    graph: &Graph,
    seeds: &[(NodeId, Tensor)],
    cfg: &LrpConfig,
) -> Result<RelevanceState> {
    let eps = cfg.epsilon;
    let mut rel: Vec<Option<Tensor>> = vec![None; graph.len()];
    for (id, t) in seeds {
        if id.index() >= graph.len() {
            return invalid(format!("seed node {} outside the graph", id.index()));
        }
        if t.shape() != graph.value(*id).shape() {
            return shape(format!(
                "seed {:?} for node value {:?}",
                t.shape(),
                graph.value(*id).shape()
            ));
        }
        accumulate(&mut rel[id.index()], t.clone())?;
    }
    let mut ledger = Vec::new();
    for i in (0..graph.len()).rev() {
        let Some(r) = rel[i].take() else { continue };
        let node = &graph.nodes()[i];
        let op = &node.op;
        let unsupported = || Error::UnsupportedNode {
            node: i,
            op: op.name(),
        };
        let val = |id: NodeId| graph.value(id);
        let r_sum = r.sum();
        let mut absorbed = 0.0;
        let mut out: Vec<(NodeId, Tensor)> = Vec::new();
        match op {
            Op::Input(_) => rel[i] = Some(r.clone()),
            Op::Param(_) => absorbed = r.sum(),
            Op::MatMul { lhs, rhs, carrier } => match carrier {
                Carrier::Lhs => {
                    out.push((*lhs, lrp_linear(val(*lhs), val(*rhs), &r, eps, cfg.gamma)?))
                }
                Carrier::Rhs => out.push((*rhs, lrp_attention_ah(val(*lhs), val(*rhs), &r, eps)?)),
                Carrier::None => return Err(unsupported()),
            },
            Op::Add(a, b) => {
                let (ra, rb) = lrp_add(val(*a), val(*b), &r, eps)?;
                out.push((*a, ra));
                out.push((*b, rb));
            }
            Op::AddRow { x, bias } => {
                let xv = val(*x);
                let rows = xv.rows();
                let bias_rows = Tensor::from_rows(&vec![val(*bias).data().to_vec(); rows])?;
                let (rx, rb) = lrp_add(xv, &bias_rows, &r, eps)?;
                absorbed = rb.sum();
                out.push((*x, rx));
            }
            Op::Mul(a, b) => {
                let (ra, rb) = lrp_gate(&r);
                out.push((*a, ra));
                out.push((*b, rb));
            }
            Op::Affine { x, scale, shift } => {
                let scaled = val(*x).scale(*scale);
                let shifts = Tensor::filled(scaled.shape().to_vec(), *shift);
                let (rx, rs) = lrp_add(&scaled, &shifts, &r, eps)?;
                absorbed = rs.sum();
                out.push((*x, rx));
            }
            Op::Mask { x, .. } | Op::Relu(x) => out.push((*x, r)),
            Op::Silu(x) => out.push((*x, lrp_silu(&r))),
            Op::Tanh(_) | Op::Sigmoid(_) | Op::Softmax(_) => return Err(unsupported()),
            Op::LayerNorm { x, .. } => {
                let rx = lrp_layernorm_ln(&val(*x).transpose(), &r.transpose(), eps)?;
                out.push((*x, rx.transpose()));
            }
            Op::Sum(x) | Op::Mean(x) => {
                let xv = val(*x);
                let total = stabilised_sum(xv, eps);
                let s = r.sum() / total;
                out.push((*x, xv.scale(s)));
            }
            Op::ConcatRows(xs) => {
                let mut start = 0;
                for x in xs {
                    let n = val(*x).rows();
                    let part = r.select_rows(&(start..start + n).collect::<Vec<_>>());
                    out.push((*x, part));
                    start += n;
                }
            }
            Op::ConcatCols(xs) => {
                let mut start = 0;
                for x in xs {
                    let (rows, n) = val(*x).dims();
                    let mut part = Tensor::zeros(vec![rows, n]);
                    for row in 0..rows {
                        for c in 0..n {
                            part.set(row, c, r.get(row, start + c));
                        }
                    }
                    out.push((*x, part));
                    start += n;
                }
            }
            Op::SliceRows { x, start, .. } => {
                out.push((*x, scatter_rows(val(*x).rows(), &r, *start)))
            }
            Op::SliceCols { x, start, .. } => {
                out.push((*x, scatter_cols(val(*x).cols(), &r, *start)))
            }
            Op::Transpose(x) => out.push((*x, r.transpose())),
            Op::SelectiveScan { x, .. } => out.push((*x, ssm_relevance(graph, op, &r, eps)?)),
        }
        for (id, t) in &out {
            if !t.is_finite() {
                return Err(Error::NonFinite {
                    node: id.index(),
                    op: op.name(),
                });
            }
        }
        ledger.push(LedgerEntry {
            node: i,
            op: op.name(),
            relevance: r_sum,
            absorbed,
        });
        for (id, t) in out {
            accumulate(&mut rel[id.index()], t)?;
        }
    }
    ledger.reverse();
    Ok(RelevanceState {
        relevance: rel,
        ledger,
    })
}

fn stabilised_sum(x: &Tensor, eps: f64) -> f64 {
    let total = x.sum();
    rules::stabilise(total, rules::relative_eps([&total], eps))
}

/// Survival seed: `R_k = l_k * d(risk)/d(l_k)` at the hazard logits.
pub fn lrp_survival_composite(trace: &ForwardTrace) -> Result<Tensor> {
    let Some(risk) = trace.risk else {
        return invalid("model has no survival risk");
    };
    let grads = trace.graph.backward(&[(risk, Tensor::scalar(1.0))])?;
    let logits = trace.graph.value(trace.head_pre);
    let g = grads
        .get(trace.head_pre)
        .ok_or_else(|| Error::Invalid("risk does not depend on the logits".into()))?;
    logits.zip_map(g, |l, d| l * d)
}

/// Seed relevance for a target: the selected logit, the difference output,
/// or the survival composite.
pub fn lrp_seed(trace: &ForwardTrace, target: ExplanationTarget) -> Result<(NodeId, Tensor)> {
    let pre = trace.graph.value(trace.head_pre);
    match target {
        ExplanationTarget::ClassLogit(c) => {
            if c >= pre.len() {
                return invalid(format!("class {c} with {} logits", pre.len()));
            }
            let mut seed = Tensor::zeros(pre.shape().to_vec());
            seed.data_mut()[c] = pre.data()[c];
            Ok((trace.head_pre, seed))
        }
        ExplanationTarget::RegressionDiff => Ok((trace.head_pre, pre.clone())),
        ExplanationTarget::SurvivalRisk => Ok((trace.head_pre, lrp_survival_composite(trace)?)),
    }
}

/// Relevance from an explicit seed, reduced to per-instance scores.
pub fn lrp_from_seed(
    trace: &ForwardTrace,
    node: NodeId,
    seed: Tensor,
    cfg: &LrpConfig,
) -> Result<LrpResult> {
    let seeded = seed.sum();
    let state = lrp_propagate(&trace.graph, &[(node, seed)], cfg)?;
    let x = trace.graph.value(trace.input);
    let scores = match state.get(trace.input) {
        Some(r) => r.row_sums(),
        None => vec![0.0; x.rows()],
    };
    Ok(LrpResult {
        scores,
        seeded,
        state,
    })
}

pub fn lrp_explain(
    trace: &ForwardTrace,
    target: ExplanationTarget,
    cfg: &LrpConfig,
) -> Result<LrpResult> {
    let (node, seed) = lrp_seed(trace, target)?;
    lrp_from_seed(trace, node, seed, cfg)
}

/// Ledger CSV: `node,op,relevance,absorbed`.
pub fn write_ledger(path: &Path, state: &RelevanceState) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &state.ledger {
        w.serialize(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::data::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests;
