use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{ModelSpec, Params};
use crate::numeric::{Carrier, Graph, NodeId, Tensor};

pub(crate) struct Builder<'a> {
    pub g: Graph,
    pub spec: &'a ModelSpec,
    params: &'a Params,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Builder<'a> {
    pub fn new(spec: &'a ModelSpec, params: &'a Params, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        Self {
            g: Graph::new(),
            spec,
            params,
            rng,
        }
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        let t = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing after validation"))
            .clone();
        self.g.param(name, t)
    }

    /// `x W (+ b)`; the bias is skipped on bias-free models.
    pub fn linear(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.w"));
        let y = self.g.matmul_with(x, w, Carrier::Lhs)?;
        if self.spec.bias {
            let b = self.param(&format!("{prefix}.b"));
            self.g.add_row(y, b)
        } else {
            Ok(y)
        }
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - rate);
        let data = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(shape, data)?;
        self.g.mask(x, mask)
    }

    /// Attention pooling `softmax(w^T tanh(V h_n)) . H`; returns the pooled
    /// `1 x hidden` row and the softmax node.
    pub fn attention_pool(&mut self, h: NodeId) -> Result<(NodeId, NodeId)> {
        let hid = self.linear(h, "pool.v")?;
        let t = self.g.tanh(hid)?;
        let t = self.dropout(t, self.spec.dropout.block)?;
        let w = self.param("pool.w");
        let s = self.g.matmul_with(t, w, Carrier::None)?;
        let s = self.g.transpose(s)?;
        let a = self.g.softmax(s)?;
        let z = self.g.matmul_with(a, h, Carrier::Rhs)?;
        Ok((z, a))
    }
}
