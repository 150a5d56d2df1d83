//! Instance-level heatmaps for MIL predictions.

mod heatmap;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lrp::{lrp_explain, LrpConfig};
use crate::models::{AttentionRecord, ForwardTrace, HeadOutput, MilModel, TaskHeadSpec};
use crate::numeric::{NodeId, Tensor};

pub use heatmap::{read_heatmaps, write_heatmaps, Heatmap};

/// Default quadrature steps for Integrated Gradients.
pub const IG_STEPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExplanationTarget {
    ClassLogit(usize),
    RegressionDiff,
    SurvivalRisk,
}

impl fmt::Display for ExplanationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplanationTarget::ClassLogit(c) => write!(f, "class_logit:{c}"),
            ExplanationTarget::RegressionDiff => f.write_str("regression_diff"),
            ExplanationTarget::SurvivalRisk => f.write_str("survival_risk"),
        }
    }
}

impl FromStr for ExplanationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression_diff" => Ok(Self::RegressionDiff),
            "survival_risk" => Ok(Self::SurvivalRisk),
            _ => s
                .strip_prefix("class_logit:")
                .and_then(|c| c.parse().ok())
                .map(Self::ClassLogit)
                .ok_or_else(|| Error::Invalid(format!("unknown explanation target {s:?}"))),
        }
    }
}

impl ExplanationTarget {
    /// Predicted class for classification, the task scalar otherwise.
    pub fn default_for(output: &HeadOutput) -> Self {
        match output {
            HeadOutput::Classification { .. } => {
                Self::ClassLogit(output.predicted_class().unwrap_or(0))
            }
            HeadOutput::Regression { .. } => Self::RegressionDiff,
            HeadOutput::Survival { .. } => Self::SurvivalRisk,
        }
    }

    pub fn check(&self, head: &TaskHeadSpec) -> Result<()> {
        match (self, head) {
            (Self::ClassLogit(c), TaskHeadSpec::Classification { classes }) if c < classes => {
                Ok(())
            }
            (Self::RegressionDiff, TaskHeadSpec::Regression { .. })
            | (Self::SurvivalRisk, TaskHeadSpec::Survival { .. }) => Ok(()),
            _ => invalid(format!("target {self} does not fit the model head")),
        }
    }

    /// Graph node and seed whose inner product is the target scalar.
    pub fn seed(&self, trace: &ForwardTrace) -> Result<(NodeId, Tensor)> {
        match self {
            Self::ClassLogit(c) => {
                let k = trace.graph.value(trace.head_pre).len();
                if *c >= k {
                    return invalid(format!("class {c} with {k} logits"));
                }
                let mut seed = vec![0.0; k];
                seed[*c] = 1.0;
                Ok((trace.head_pre, Tensor::row(seed)))
            }
            Self::RegressionDiff => Ok((trace.head_pre, Tensor::scalar(1.0))),
            Self::SurvivalRisk => trace
                .risk
                .map(|r| (r, Tensor::scalar(1.0)))
                .ok_or_else(|| Error::Invalid("model has no survival risk".into())),
        }
    }

    /// Target scalar of a head output: logit, difference output or risk.
    pub fn value(&self, out: &HeadOutput) -> Result<f64> {
        match (self, out) {
            (Self::ClassLogit(c), HeadOutput::Classification { logits, .. }) if *c < logits.len() => {
                Ok(logits[*c])
            }
            (Self::RegressionDiff, HeadOutput::Regression { diff, .. }) => Ok(*diff),
            (Self::SurvivalRisk, HeadOutput::Survival { risk, .. }) => Ok(*risk),
            _ => invalid(format!("target {self} does not fit the head output")),
        }
    }
}

/// Output tracked by perturbation methods for classification targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    #[default]
    Softmax,
    Logit,
}

impl FromStr for Track {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "logit" => Ok(Self::Logit),
            _ => invalid(format!("unknown tracked output {s:?}")),
        }
    }
}

/// Scalar followed during perturbation: the class probability (or logit),
/// the difference output, or the risk.
pub fn tracked_output(out: &HeadOutput, target: ExplanationTarget, track: Track) -> Result<f64> {
    match (target, out, track) {
        (ExplanationTarget::ClassLogit(c), HeadOutput::Classification { probs, .. }, Track::Softmax)
            if c < probs.len() =>
        {
            Ok(probs[c])
        }
        _ => target.value(out),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Attention,
    Gxi,
    Grad2,
    Ig,
    Single,
    Lrp,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Attention,
        Method::Gxi,
        Method::Grad2,
        Method::Ig,
        Method::Single,
        Method::Lrp,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::Gxi => "gxi",
            Method::Grad2 => "grad2",
            Method::Ig => "ig",
            Method::Single => "single",
            Method::Lrp => "lrp",
            Method::Random => "random",
        }
    }

    /// Whether scores can take both signs for this target.
    pub fn signed(self, target: ExplanationTarget) -> bool {
        match self {
            Method::Lrp | Method::Gxi | Method::Ig => true,
            Method::Single => !matches!(target, ExplanationTarget::ClassLogit(_)),
            Method::Attention | Method::Grad2 | Method::Random => false,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}")))
    }
}

/// Attention rollout: `prod_l (0.5 A_l + 0.5 I)` with later layers applied
/// on the left; returns the class-token row restricted to instances.
pub fn attention_rollout(layers: &[Tensor]) -> Result<Vec<f64>> {
    let Some(first) = layers.first() else {
        return invalid("rollout needs at least one layer");
    };
    let n = first.rows();
    let mut joint: Option<Tensor> = None;
    for a in layers {
        if a.dims() != (n, n) {
            return invalid("attention matrices differ in shape");
        }
        let mut mixed = a.scale(0.5);
        for i in 0..n {
            mixed.set(i, i, mixed.get(i, i) + 0.5);
        }
        joint = Some(match joint {
            None => mixed,
            Some(j) => mixed.matmul(&j)?,
        });
    }
    let joint = joint.expect("at least one layer");
    Ok(joint.row_slice(0)[1..].to_vec())
}

/// Pooling weights, or rollout for transformer models.
pub fn explain_attention(trace: &ForwardTrace) -> Result<Vec<f64>> {
    match &trace.attention {
        AttentionRecord::Pooling(w) => Ok(w.clone()),
        AttentionRecord::Layers(layers) => attention_rollout(layers),
    }
}

/// Gradient of the target with respect to the bag features.
pub fn input_gradient(trace: &ForwardTrace, target: ExplanationTarget) -> Result<Tensor> {
    let (node, seed) = target.seed(trace)?;
    let grads = trace.graph.backward(&[(node, seed)])?;
    let x = trace.graph.value(trace.input);
    Ok(grads
        .get(trace.input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
}

fn row_dots(a: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..a.rows())
        .map(|r| a.row_slice(r).iter().zip(b.row_slice(r)).map(|(u, v)| u * v).sum())
        .collect()
}

pub fn explain_gxi(trace: &ForwardTrace, target: ExplanationTarget) -> Result<Vec<f64>> {
    let g = input_gradient(trace, target)?;
    Ok(row_dots(&g, trace.graph.value(trace.input)))
}

pub fn explain_grad2(trace: &ForwardTrace, target: ExplanationTarget) -> Result<Vec<f64>> {
    let g = input_gradient(trace, target)?;
    Ok(row_dots(&g, &g))
}

/// Integrated Gradients from the zero baseline with the midpoint rule.
pub fn explain_ig(
    model: &MilModel,
    bag: &Tensor,
    target: ExplanationTarget,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut trace = model.forward(bag)?;
    ig_on_trace(&mut trace, target, steps)
}

/// IG by replaying a recorded graph at scaled inputs. The trace is left
/// holding the activations of the last quadrature point.
pub fn ig_on_trace(
    trace: &mut ForwardTrace,
    target: ExplanationTarget,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return invalid("IG needs at least one step");
    }
    let (node, seed) = target.seed(trace)?;
    let bag = trace.graph.value(trace.input).clone();
    let mut total = Tensor::zeros(bag.shape().to_vec());
    for i in 0..steps {
        let alpha = (i as f64 + 0.5) / steps as f64;
        let inputs = [("x".to_string(), bag.scale(alpha))].into_iter().collect();
        trace.graph.forward(&inputs)?;
        let grads = trace.graph.backward(&[(node, seed.clone())])?;
        if let Some(g) = grads.get(trace.input) {
            total.add_assign(g)?;
        }
    }
    let avg = total.scale(1.0 / steps as f64);
    Ok(row_dots(&avg, &bag))
}

/// Tracked model output on each singleton bag `{x_n}`.
pub fn explain_single(
    model: &MilModel,
    bag: &Tensor,
    target: ExplanationTarget,
    track: Track,
) -> Result<Vec<f64>> {
    (0..bag.rows())
        .into_par_iter()
        .map(|n| {
            let out = model.predict(&bag.select_rows(&[n]))?;
            tracked_output(&out, target, track)
        })
        .collect()
}

/// Seeded i.i.d. uniform scores in `[0, 1)`.
pub fn explain_random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Options shared by [`explain`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplainOptions {
    pub ig_steps: usize,
    pub track: Track,
    pub lrp: LrpConfig,
    /// Seed for the random baseline.
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            ig_steps: IG_STEPS,
            track: Track::Softmax,
            lrp: LrpConfig::default(),
            seed: 0,
        }
    }
}

/// Computes one heatmap; `target` defaults to the predicted class or the
/// task scalar.
pub fn explain(
    model: &MilModel,
    bag_id: &str,
    bag: &Tensor,
    method: Method,
    target: Option<ExplanationTarget>,
    opts: &ExplainOptions,
) -> Result<Heatmap> {
    let trace = model.forward(bag)?;
    let target = target.unwrap_or_else(|| ExplanationTarget::default_for(&trace.output));
    target.check(&model.spec.head)?;
    let scores = match method {
        Method::Attention => explain_attention(&trace)?,
        Method::Gxi => explain_gxi(&trace, target)?,
        Method::Grad2 => explain_grad2(&trace, target)?,
        Method::Ig => explain_ig(model, bag, target, opts.ig_steps)?,
        Method::Single => explain_single(model, bag, target, opts.track)?,
        Method::Lrp => lrp_explain(&trace, target, &opts.lrp)?.scores,
        Method::Random => explain_random(bag.rows(), random_seed(opts.seed, bag_id)),
    };
    if scores.iter().any(|s| !s.is_finite()) {
        return invalid(format!("{method} produced non-finite scores for {bag_id}"));
    }
    Ok(Heatmap {
        bag_id: bag_id.to_string(),
        method,
        target,
        signed: method.signed(target),
        scores,
    })
}

/// Per-bag seed for the random baseline, stable across runs.
pub fn random_seed(seed: u64, bag_id: &str) -> u64 {
    // FNV-1a over the id, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bag_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}
