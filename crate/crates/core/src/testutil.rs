//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::models::{Architecture, MilModel, ModelSpec, TaskHeadSpec};
use crate::numeric::Tensor;

pub const ARCHS: [Architecture; 3] = [
    Architecture::AttnMil,
    Architecture::TransMil,
    Architecture::MambaMil,
];

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn toy_spec(arch: Architecture, head: TaskHeadSpec, d_in: usize, bias: bool) -> ModelSpec {
    ModelSpec {
        hidden: 8,
        layers: 2,
        heads: 2,
        state_size: 4,
        bias,
        ..ModelSpec::new(arch, d_in, head)
    }
}

/// Seeded toy model with every parameter perturbed, so biases are nonzero
/// on biased models. The class token is zeroed when `bias` is off.
pub fn toy_model(arch: Architecture, head: TaskHeadSpec, d_in: usize, bias: bool, seed: u64) -> MilModel {
    let mut model = MilModel::init(toy_spec(arch, head, d_in, bias), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        if !bias && name == "cls" {
            *t = Tensor::zeros(t.shape().to_vec());
        }
    }
    model
}

pub fn cls2() -> TaskHeadSpec {
    TaskHeadSpec::Classification { classes: 2 }
}
