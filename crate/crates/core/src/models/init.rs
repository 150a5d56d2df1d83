use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::models::{Architecture, ModelSpec, Params};
use crate::numeric::Tensor;

/// Standard deviation of the class token draw.
const CLS_STD: f64 = 0.02;
/// Initial bias of the step-size projection; sigmoid(-2) is about 0.12.
const DT_BIAS: f64 = -2.0;

struct Init<'a> {
    rng: ChaCha8Rng,
    params: &'a mut Params,
    bias: bool,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) {
        let data = (0..rows * cols)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * std)
            .collect();
        self.params
            .insert(name.into(), Tensor::matrix(rows, cols, data).unwrap());
    }

    /// Weights scaled by `1 / sqrt(fan_in)`, zero bias.
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.normal(&format!("{prefix}.w"), fan_in, fan_out, (fan_in as f64).sqrt().recip());
        if self.bias {
            self.params
                .insert(format!("{prefix}.b"), Tensor::zeros(vec![1, fan_out]));
        }
    }
}

/// Draws every parameter of `spec` in a fixed name order.
pub(crate) fn init_params(spec: &ModelSpec, seed: u64) -> Params {
    let mut params = Params::new();
    let mut it = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: &mut params,
        bias: spec.bias,
    };
    let h = spec.hidden;
    it.linear("embed", spec.d_in, h);
    match spec.architecture {
        Architecture::AttnMil => {}
        Architecture::TransMil => {
            // a bias-free model also has a zero class token: it is a constant
            // input that would otherwise absorb relevance
            if it.bias {
                it.normal("cls", 1, h, CLS_STD);
            } else {
                it.params.insert("cls".into(), Tensor::zeros(vec![1, h]));
            }
            let dh = h / spec.heads;
            for l in 0..spec.layers {
                for hd in 0..spec.heads {
                    for m in ["q", "k", "v"] {
                        let std = (h as f64).sqrt().recip();
                        it.normal(&format!("l{l}.h{hd}.{m}.w"), h, dh, std);
                    }
                }
                it.linear(&format!("l{l}.o"), h, h);
                it.linear(&format!("l{l}.ff1"), h, 2 * h);
                it.linear(&format!("l{l}.ff2"), 2 * h, h);
            }
        }
        Architecture::MambaMil => {
            let s = spec.state_size;
            it.linear("mamba.x", h, h);
            it.linear("mamba.z", h, h);
            it.normal("mamba.dt.w", h, h, (h as f64).sqrt().recip());
            it.params
                .insert("mamba.dt.b".into(), Tensor::filled(vec![1, h], DT_BIAS));
            it.normal("mamba.b.w", h, s, (h as f64).sqrt().recip());
            it.normal("mamba.c.w", h, s, (h as f64).sqrt().recip());
            let a_log = (0..h * s).map(|i| ((i % s) as f64 + 1.0).ln()).collect();
            it.params
                .insert("mamba.a_log".into(), Tensor::matrix(h, s, a_log).unwrap());
            it.linear("mamba.out", h, h);
        }
    }
    if spec.architecture != Architecture::TransMil {
        it.linear("pool.v", h, h);
        it.normal("pool.w", h, 1, (h as f64).sqrt().recip());
    }
    it.linear("head", h, spec.head.outputs());
    params
}
