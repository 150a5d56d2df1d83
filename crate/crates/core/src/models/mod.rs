//! MIL aggregators and task heads built on recorded graphs.
//!
//! Every forward pass returns a [`ForwardTrace`] holding the graph with its
//! activations, so gradients and relevance can be taken from the same
//! structure that produced the prediction.

mod attnmil;
mod build;
mod checkpoint;
mod head;
mod init;
mod mambamil;
mod transmil;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::error::{invalid, shape, Result};
use crate::numeric::{Graph, NodeId, Tensor};

pub use checkpoint::{CheckpointMeta, ModelCheckpoint, CHECKPOINT_MAGIC};
pub use head::{head_forward, survival_from_hazards, HeadOutput};

pub type Params = BTreeMap<String, Tensor>;

/// Variance offset of layer normalisation.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    AttnMil,
    TransMil,
    MambaMil,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::AttnMil => "attnmil",
            Architecture::TransMil => "transmil",
            Architecture::MambaMil => "mambamil",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskHeadSpec {
    Classification { classes: usize },
    /// The head predicts the difference to `reference_value`.
    Regression { reference_value: f64 },
    Survival { intervals: usize },
}

impl TaskHeadSpec {
    pub fn outputs(&self) -> usize {
        match self {
            TaskHeadSpec::Classification { classes } => *classes,
            TaskHeadSpec::Regression { .. } => 1,
            TaskHeadSpec::Survival { intervals } => *intervals,
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            TaskHeadSpec::Classification { .. } => TaskKind::Classification,
            TaskHeadSpec::Regression { .. } => TaskKind::Regression,
            TaskHeadSpec::Survival { .. } => TaskKind::Survival,
        }
    }
}

/// Dropout rates applied only while training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dropout {
    /// After the instance embedding.
    #[serde(default)]
    pub embedding: f64,
    /// Inside the attention network or the aggregation blocks.
    #[serde(default)]
    pub block: f64,
    /// On the bag embedding before the head.
    #[serde(default)]
    pub head: f64,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_state() -> usize {
    16
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub d_in: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_state")]
    pub state_size: usize,
    pub head: TaskHeadSpec,
    #[serde(default)]
    pub dropout: Dropout,
    /// Without biases relevance is conserved end to end.
    #[serde(default = "default_true")]
    pub bias: bool,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, d_in: usize, head: TaskHeadSpec) -> Self {
        Self {
            architecture,
            d_in,
            hidden: default_hidden(),
            layers: default_layers(),
            heads: default_heads(),
            state_size: default_state(),
            head,
            dropout: Dropout::default(),
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.hidden == 0 {
            return invalid("d_in and hidden must be positive");
        }
        match self.architecture {
            Architecture::TransMil => {
                if self.layers == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
                    return invalid(format!(
                        "transmil needs layers >= 1 and heads dividing hidden ({} / {})",
                        self.hidden, self.heads
                    ));
                }
            }
            Architecture::MambaMil if self.state_size == 0 => {
                return invalid("mambamil needs state_size >= 1");
            }
            _ => {}
        }
        match self.head {
            TaskHeadSpec::Classification { classes } if classes < 2 => {
                invalid("classification head needs at least 2 classes")
            }
            TaskHeadSpec::Survival { intervals } if intervals < 2 => {
                invalid("survival head needs at least 2 intervals")
            }
            TaskHeadSpec::Regression { reference_value } if !reference_value.is_finite() => {
                invalid("reference value must be finite")
            }
            _ => {
                for (name, p) in [
                    ("embedding", self.dropout.embedding),
                    ("block", self.dropout.block),
                    ("head", self.dropout.head),
                ] {
                    if !(0.0..1.0).contains(&p) {
                        return invalid(format!("{name} dropout {p} outside [0, 1)"));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Attention recorded during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionRecord {
    /// Pooling weights over instances.
    Pooling(Vec<f64>),
    /// Head-averaged `(N+1) x (N+1)` matrices per layer; token 0 is the
    /// class token.
    Layers(Vec<Tensor>),
}

pub struct ForwardTrace {
    pub graph: Graph,
    pub input: NodeId,
    /// Bag embedding fed to the head.
    pub embedding: NodeId,
    /// Head pre-activation: logits, difference output or hazard logits.
    pub head_pre: NodeId,
    /// Survival risk node.
    pub risk: Option<NodeId>,
    pub output: HeadOutput,
    pub attention: AttentionRecord,
}

impl ForwardTrace {
    /// Re-reads the head output after a [`Graph::forward`] replay.
    pub fn refresh(&mut self, head: &TaskHeadSpec) -> Result<()> {
        self.output = head_forward(self.graph.value(self.head_pre).data(), head)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilModel {
    pub spec: ModelSpec,
    pub params: Params,
}

impl MilModel {
    /// Seeded initialisation.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = init::init_params(&spec, seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        let expected = init::init_params(&spec, 0);
        for (name, t) in &expected {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return shape(format!(
                        "parameter {name}: expected {:?}, got {:?}",
                        t.shape(),
                        p.shape()
                    ))
                }
                None => return invalid(format!("missing parameter {name}")),
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return invalid(format!("unexpected parameter {extra}"));
        }
        Ok(Self { spec, params })
    }

    /// Inference forward pass.
    pub fn forward(&self, bag: &Tensor) -> Result<ForwardTrace> {
        self.run(bag, None)
    }

    /// Forward pass with dropout masks drawn from `rng`.
    pub fn forward_train(&self, bag: &Tensor, rng: &mut ChaCha8Rng) -> Result<ForwardTrace> {
        self.run(bag, Some(rng))
    }

    /// Head output only.
    pub fn predict(&self, bag: &Tensor) -> Result<HeadOutput> {
        Ok(self.forward(bag)?.output)
    }

    fn run(&self, bag: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<ForwardTrace> {
        if bag.cols() != self.spec.d_in || bag.rows() == 0 {
            return shape(format!(
                "bag {:?} does not match d_in {}",
                bag.shape(),
                self.spec.d_in
            ));
        }
        let mut b = build::Builder::new(&self.spec, &self.params, rng);
        let input = b.g.input("x", bag.clone())?;
        let (embedding, attention) = match self.spec.architecture {
            Architecture::AttnMil => attnmil::aggregate(&mut b, input)?,
            Architecture::TransMil => transmil::aggregate(&mut b, input)?,
            Architecture::MambaMil => mambamil::aggregate(&mut b, input)?,
        };
        let (head_pre, risk) = head::build(&mut b, embedding)?;
        let mut graph = b.g;
        graph.set_output(risk.unwrap_or(head_pre));
        let output = head_forward(graph.value(head_pre).data(), &self.spec.head)?;
        Ok(ForwardTrace {
            graph,
            input,
            embedding,
            head_pre,
            risk,
            output,
            attention,
        })
    }
}

pub fn attnmil_forward(bag: &Tensor, model: &MilModel) -> Result<ForwardTrace> {
    arch_forward(bag, model, Architecture::AttnMil)
}

pub fn transmil_forward(bag: &Tensor, model: &MilModel) -> Result<ForwardTrace> {
    arch_forward(bag, model, Architecture::TransMil)
}

pub fn mambamil_forward(bag: &Tensor, model: &MilModel) -> Result<ForwardTrace> {
    arch_forward(bag, model, Architecture::MambaMil)
}

fn arch_forward(bag: &Tensor, model: &MilModel, arch: Architecture) -> Result<ForwardTrace> {
    if model.spec.architecture != arch {
        return invalid(format!(
            "model is {}, not {}",
            model.spec.architecture.as_str(),
            arch.as_str()
        ));
    }
    model.forward(bag)
}

#[cfg(test)]
mod tests;
