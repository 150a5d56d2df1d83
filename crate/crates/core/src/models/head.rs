use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};
use crate::models::build::Builder;
use crate::models::TaskHeadSpec;
use crate::numeric::{sigmoid, softmax_rows, NodeId, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadOutput {
    Classification {
        logits: Vec<f64>,
        probs: Vec<f64>,
    },
    /// `diff` is the prediction minus `reference_value`.
    Regression { diff: f64, reference_value: f64 },
    Survival {
        logits: Vec<f64>,
        hazards: Vec<f64>,
        survival: Vec<f64>,
        risk: f64,
    },
}

impl HeadOutput {
    pub fn predicted_class(&self) -> Option<usize> {
        match self {
            HeadOutput::Classification { probs, .. } => probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i),
            _ => None,
        }
    }
}

/// `S_k = prod_{j<=k} (1 - h_j)` and `r = -sum_k S_k`.
pub fn survival_from_hazards(hazards: &[f64]) -> (Vec<f64>, f64) {
    let mut s = 1.0;
    let surv: Vec<f64> = hazards
        .iter()
        .map(|h| {
            s *= 1.0 - h;
            s
        })
        .collect();
    let risk = -surv.iter().sum::<f64>();
    (surv, risk)
}

/// Interprets head pre-activations.
pub fn head_forward(pre: &[f64], spec: &TaskHeadSpec) -> Result<HeadOutput> {
    if pre.len() != spec.outputs() {
        return shape(format!(
            "head expects {} values, got {}",
            spec.outputs(),
            pre.len()
        ));
    }
    Ok(match spec {
        TaskHeadSpec::Classification { .. } => HeadOutput::Classification {
            logits: pre.to_vec(),
            probs: softmax_rows(&Tensor::row(pre.to_vec())).into_data(),
        },
        TaskHeadSpec::Regression { reference_value } => HeadOutput::Regression {
            diff: pre[0],
            reference_value: *reference_value,
        },
        TaskHeadSpec::Survival { .. } => {
            let hazards: Vec<f64> = pre.iter().map(|&l| sigmoid(l)).collect();
            let (survival, risk) = survival_from_hazards(&hazards);
            HeadOutput::Survival {
                logits: pre.to_vec(),
                hazards,
                survival,
                risk,
            }
        }
    })
}

/// Appends the head; returns the pre-activation node and, for survival, the
/// risk node.
pub(crate) fn build(b: &mut Builder, z: NodeId) -> Result<(NodeId, Option<NodeId>)> {
    let z = b.dropout(z, b.spec.dropout.head)?;
    let pre = b.linear(z, "head")?;
    let TaskHeadSpec::Survival { intervals } = b.spec.head else {
        return Ok((pre, None));
    };
    let h = b.g.sigmoid(pre)?;
    let keep = b.g.affine(h, -1.0, 1.0)?;
    let mut surv = Vec::with_capacity(intervals);
    for k in 0..intervals {
        let f = b.g.slice_cols(keep, k, 1)?;
        let s = match surv.last() {
            Some(&prev) => b.g.mul(prev, f)?,
            None => f,
        };
        surv.push(s);
    }
    let all = b.g.concat_cols(&surv)?;
    let total = b.g.sum(all)?;
    let risk = b.g.affine(total, -1.0, 0.0)?;
    Ok((pre, Some(risk)))
}
