//! Linear state-space recurrences.
//!
//! The general form, per step `t = 1..T` with `h(0) = 0`:
//!
//! ```text
//! h(t) = A(t) h(t-1) + B(t) x(t)
//! y(t) = C(t) h(t-1)
//! ```
//!
//! The output at step `t` reads the state *before* the update at `t`. The
//! selective variant used by the Mamba aggregator is the per-channel diagonal
//! special case with input-dependent `A`, `B`, `C`.

use crate::error::{shape, Result};
use crate::numeric::Tensor;

/// Parameters of one recurrence step. `a` is `S x S`, `b` is `S x P`,
/// `c` is `Q x S`.
#[derive(Clone, Debug)]
pub struct SsmStep {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

#[derive(Clone, Debug)]
pub struct SsmTrace {
    /// `T + 1` states, `states[0]` is the zero initial state.
    pub states: Vec<Vec<f64>>,
    /// `T` outputs.
    pub outputs: Vec<Vec<f64>>,
}

fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let (r, c) = m.dims();
    (0..r)
        .map(|i| (0..c).map(|j| m.get(i, j) * v[j]).sum())
        .collect()
}

/// Sequential scan of the general recurrence.
pub fn ssm_scan(steps: &[SsmStep], x: &[Vec<f64>]) -> Result<SsmTrace> {
    if steps.len() != x.len() {
        return shape(format!(
            "ssm_scan: {} parameter steps for {} inputs",
            steps.len(),
            x.len()
        ));
    }
    let Some(first) = steps.first() else {
        return Ok(SsmTrace {
            states: vec![Vec::new()],
            outputs: Vec::new(),
        });
    };
    let s = first.a.rows();
    let mut h = vec![0.0; s];
    let mut states = vec![h.clone()];
    let mut outputs = Vec::with_capacity(steps.len());
    for (t, (step, xt)) in steps.iter().zip(x).enumerate() {
        if step.a.dims() != (s, s)
            || step.b.dims() != (s, xt.len())
            || step.c.cols() != s
        {
            return shape(format!(
                "ssm_scan step {}: A {:?}, B {:?}, C {:?} with state {} and input {}",
                t + 1,
                step.a.shape(),
                step.b.shape(),
                step.c.shape(),
                s,
                xt.len()
            ));
        }
        outputs.push(matvec(&step.c, &h));
        let ah = matvec(&step.a, &h);
        let bx = matvec(&step.b, xt);
        h = ah.iter().zip(&bx).map(|(a, b)| a + b).collect();
        states.push(h.clone());
    }
    Ok(SsmTrace { states, outputs })
}

/// Inputs of the selective scan: `x`, `dt` are `T x P`, `a_log` is `P x S`,
/// `b`, `c` are `T x S`.
///
/// Channel `p` runs its own `S`-dimensional recurrence with
/// `A(t) = diag(exp(-dt[t,p] * exp(a_log[p,:])))`, `B(t) = dt[t,p] * b[t,:]`
/// and `C(t) = c[t,:]`.
pub(crate) struct Selective<'a> {
    pub x: &'a Tensor,
    pub dt: &'a Tensor,
    pub a_log: &'a Tensor,
    pub b: &'a Tensor,
    pub c: &'a Tensor,
}

impl Selective<'_> {
    pub fn check(&self) -> Result<(usize, usize, usize)> {
        let (t, p) = self.x.dims();
        let s = self.a_log.cols();
        if self.dt.dims() != (t, p)
            || self.a_log.dims() != (p, s)
            || self.b.dims() != (t, s)
            || self.c.dims() != (t, s)
        {
            return shape(format!(
                "selective scan: x {:?}, dt {:?}, a_log {:?}, b {:?}, c {:?}",
                self.x.shape(),
                self.dt.shape(),
                self.a_log.shape(),
                self.b.shape(),
                self.c.shape()
            ));
        }
        Ok((t, p, s))
    }

    fn decay(&self, t: usize, p: usize, s: usize) -> f64 {
        (-self.dt.get(t, p) * self.a_log.get(p, s).exp()).exp()
    }

    /// Returns `y` (`T x P`) and the states, laid out `(T + 1) x (P * S)`.
    pub fn forward(&self) -> Result<(Tensor, Tensor)> {
        let (t_len, p_len, s_len) = self.check()?;
        let mut y = Tensor::zeros(vec![t_len, p_len]);
        let mut states = Tensor::zeros(vec![t_len + 1, p_len * s_len]);
        let width = p_len * s_len;
        for t in 0..t_len {
            for p in 0..p_len {
                let xt = self.x.get(t, p);
                let dt = self.dt.get(t, p);
                let mut acc = 0.0;
                for s in 0..s_len {
                    let prev = states.data()[t * width + p * s_len + s];
                    acc += self.c.get(t, s) * prev;
                    let next = self.decay(t, p, s) * prev + dt * self.b.get(t, s) * xt;
                    states.data_mut()[(t + 1) * width + p * s_len + s] = next;
                }
                y.set(t, p, acc);
            }
        }
        Ok((y, states))
    }

    /// Reverse-mode pass. Returns gradients for `(x, dt, a_log, b, c)`.
    pub fn backward(&self, states: &Tensor, dy: &Tensor) -> Result<[Tensor; 5]> {
        let (t_len, p_len, s_len) = self.check()?;
        let width = p_len * s_len;
        let mut dx = Tensor::zeros(vec![t_len, p_len]);
        let mut ddt = Tensor::zeros(vec![t_len, p_len]);
        let mut da_log = Tensor::zeros(vec![p_len, s_len]);
        let mut db = Tensor::zeros(vec![t_len, s_len]);
        let mut dc = Tensor::zeros(vec![t_len, s_len]);
        for p in 0..p_len {
            // gradient w.r.t. h(t) for the current t, one entry per state
            let mut dh = vec![0.0; s_len];
            for t in (0..t_len).rev() {
                let xt = self.x.get(t, p);
                let dt = self.dt.get(t, p);
                let gy = dy.get(t, p);
                let mut gx = 0.0;
                let mut gdt = 0.0;
                for (s, dh_s) in dh.iter_mut().enumerate() {
                    let prev = states.data()[t * width + p * s_len + s];
                    let e = self.a_log.get(p, s).exp();
                    let a = (-dt * e).exp();
                    let bt = self.b.get(t, s);
                    let g = *dh_s;
                    // h(t) = a * prev + dt * b * x
                    let da = g * prev;
                    gdt += da * (-e * a) + g * bt * xt;
                    let v = da_log.get(p, s) + da * (-dt * e * a);
                    da_log.set(p, s, v);
                    let v = db.get(t, s) + g * dt * xt;
                    db.set(t, s, v);
                    gx += g * dt * bt;
                    // y(t) = sum_s c[t,s] * prev
                    let v = dc.get(t, s) + gy * prev;
                    dc.set(t, s, v);
                    *dh_s = g * a + gy * self.c.get(t, s);
                }
                dx.set(t, p, gx);
                ddt.set(t, p, gdt);
            }
        }
        Ok([dx, ddt, da_log, db, dc])
    }

    /// Expands channel `p` into explicit general-form steps.
    pub fn channel_steps(&self, p: usize) -> Result<Vec<SsmStep>> {
        let (t_len, _, s_len) = self.check()?;
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut a = Tensor::zeros(vec![s_len, s_len]);
            for s in 0..s_len {
                a.set(s, s, self.decay(t, p, s));
            }
            let dt = self.dt.get(t, p);
            let b = Tensor::matrix(
                s_len,
                1,
                (0..s_len).map(|s| dt * self.b.get(t, s)).collect(),
            )?;
            let c = Tensor::row((0..s_len).map(|s| self.c.get(t, s)).collect());
            steps.push(SsmStep { a, b, c });
        }
        Ok(steps)
    }
}
