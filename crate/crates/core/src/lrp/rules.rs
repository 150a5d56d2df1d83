//! Relevance rules on plain tensors.

use crate::error::{shape, Result};
use crate::numeric::{ssm_scan, SsmStep, Tensor};

/// Stabiliser relative to the largest denominator magnitude; absolute when
/// every denominator is zero.
pub(crate) fn relative_eps<'a>(z: impl IntoIterator<Item = &'a f64>, eps: f64) -> f64 {
    let m = z.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        eps * m
    } else {
        eps
    }
}

/// `z + eps * sign(z)` with `sign(0) = +1`.
pub(crate) fn stabilise(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Epsilon/gamma rule for `y = a W` with `a` of shape `N x K` and `W` of
/// shape `K x D`; each row of `a` is an independent sample.
pub fn lrp_linear(a: &Tensor, w: &Tensor, r: &Tensor, eps: f64, gamma: f64) -> Result<Tensor> {
    let (n, k) = a.dims();
    let (k2, d) = w.dims();
    if k != k2 || r.dims() != (n, d) {
        return shape(format!(
            "lrp_linear: a {:?}, w {:?}, R {:?}",
            a.shape(),
            w.shape(),
            r.shape()
        ));
    }
    let rho = if gamma == 0.0 {
        w.clone()
    } else {
        w.map(|v| v + gamma * v.max(0.0))
    };
    let z = a.matmul(&rho)?;
    let eps = relative_eps(z.data(), eps);
    let s = r.zip_map(&z, |r, z| r / stabilise(z, eps))?;
    let back = s.matmul(&rho.transpose())?;
    a.zip_map(&back, |a, b| a * b)
}

/// AH rule for attention mixing `y = P Z`: `P` (`M x N`, rows summing to
/// one) is held constant and relevance flows to the values `Z` (`N x D`).
pub fn lrp_attention_ah(p: &Tensor, z: &Tensor, r: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, n) = p.dims();
    let (n2, d) = z.dims();
    if n != n2 || r.dims() != (m, d) {
        return shape(format!(
            "lrp_attention_ah: p {:?}, z {:?}, R {:?}",
            p.shape(),
            z.shape(),
            r.shape()
        ));
    }
    let y = p.matmul(z)?;
    let eps = relative_eps(y.data(), eps);
    let s = r.zip_map(&y, |r, y| r / stabilise(y, eps))?;
    let back = p.transpose().matmul(&s)?;
    z.zip_map(&back, |z, b| z * b)
}

/// LN rule: normalisation over the rows of `z` (`N x D`, column-wise
/// centring) treated as the linear map `z - mean`, the scale held constant.
/// A single row passes relevance through unchanged.
pub fn lrp_layernorm_ln(z: &Tensor, r: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, d) = z.dims();
    if r.dims() != (n, d) {
        return shape(format!("lrp_layernorm_ln: z {:?}, R {:?}", z.shape(), r.shape()));
    }
    if n <= 1 {
        return Ok(r.clone());
    }
    let mut out = Tensor::zeros(vec![n, d]);
    for c in 0..d {
        let mean = (0..n).map(|j| z.get(j, c)).sum::<f64>() / n as f64;
        let centred: Vec<f64> = (0..n).map(|j| z.get(j, c) - mean).collect();
        let e = relative_eps(&centred, eps);
        let s: Vec<f64> = (0..n)
            .map(|j| r.get(j, c) / stabilise(centred[j], e))
            .collect();
        let s_mean = s.iter().sum::<f64>() / n as f64;
        for k in 0..n {
            out.set(k, c, z.get(k, c) * (s[k] - s_mean));
        }
    }
    Ok(out)
}

/// Identity rule for SiLU (and other gating nonlinearities).
pub fn lrp_silu(r: &Tensor) -> Tensor {
    r.clone()
}

/// Gate rule for `y = a * b`: each factor receives half.
pub fn lrp_gate(r: &Tensor) -> (Tensor, Tensor) {
    let half = r.scale(0.5);
    (half.clone(), half)
}

/// Proportional split for `y = a + b`; returns the shares of `a` and `b`.
pub fn lrp_add(a: &Tensor, b: &Tensor, r: &Tensor, eps: f64) -> Result<(Tensor, Tensor)> {
    let y = a.zip_map(b, |a, b| a + b)?;
    let eps = relative_eps(y.data(), eps);
    let s = r.zip_map(&y, |r, y| r / stabilise(y, eps))?;
    Ok((a.zip_map(&s, |a, s| a * s)?, b.zip_map(&s, |b, s| b * s)?))
}

/// Relevance of the general recurrence `h(t) = A h(t-1) + B x(t)`,
/// `y(t) = C h(t-1)`.
///
/// `r_y[t]` is the relevance of `y(t)` and `r_last` that of `h(T)`.
/// Returns the input relevances and the (zero-state) remainder at `h(0)`.
pub fn lrp_ssm(
    steps: &[SsmStep],
    x: &[Vec<f64>],
    r_y: &[Vec<f64>],
    r_last: Option<&[f64]>,
    eps: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let trace = ssm_scan(steps, x)?;
    if r_y.len() != steps.len() {
        return shape(format!("lrp_ssm: {} output relevances for {} steps", r_y.len(), steps.len()));
    }
    let s_len = trace.states[0].len();
    let eps = relative_eps(
        trace.states.iter().chain(&trace.outputs).flatten(),
        eps,
    );
    let mut rh = match r_last {
        Some(r) if r.len() == s_len => r.to_vec(),
        Some(r) => return shape(format!("lrp_ssm: state relevance of size {}", r.len())),
        None => vec![0.0; s_len],
    };
    let mut r_x = vec![Vec::new(); steps.len()];
    for t in (0..steps.len()).rev() {
        let step = &steps[t];
        let prev = &trace.states[t];
        let next = &trace.states[t + 1];
        let xt = &x[t];
        let mut r_prev = vec![0.0; s_len];
        let mut rx = vec![0.0; xt.len()];
        for (j, (&r, &z)) in rh.iter().zip(next).enumerate() {
            let s = r / stabilise(z, eps);
            for (i, rp) in r_prev.iter_mut().enumerate() {
                *rp += prev[i] * step.a.get(j, i) * s;
            }
            for (i, v) in rx.iter_mut().enumerate() {
                *v += xt[i] * step.b.get(j, i) * s;
            }
        }
        if r_y[t].len() != step.c.rows() {
            return shape(format!("lrp_ssm: output relevance of size {}", r_y[t].len()));
        }
        for (q, &r) in r_y[t].iter().enumerate() {
            let u = trace.outputs[t][q];
            let s = r / stabilise(u, eps);
            for (i, rp) in r_prev.iter_mut().enumerate() {
                *rp += prev[i] * step.c.get(q, i) * s;
            }
        }
        r_x[t] = rx;
        rh = r_prev;
    }
    Ok((r_x, rh))
}
