use crate::error::Result;
use crate::models::build::Builder;
use crate::models::{AttentionRecord, LN_EPS};
use crate::numeric::{Carrier, NodeId, Tensor};

/// Class token plus pre-norm transformer blocks with exact softmax
/// attention and no positional encoding. Returns the normalised class token.
pub(crate) fn aggregate(b: &mut Builder, x: NodeId) -> Result<(NodeId, AttentionRecord)> {
    let spec = b.spec;
    let h = b.linear(x, "embed")?;
    let h = b.g.relu(h)?;
    let h = b.dropout(h, spec.dropout.embedding)?;
    let cls = b.param("cls");
    let mut tokens = b.g.concat_rows(&[cls, h])?;
    let n = b.g.value(tokens).rows();
    let dh = spec.hidden / spec.heads;
    let scale = (dh as f64).sqrt().recip();
    let mut layers = Vec::with_capacity(spec.layers);

    for l in 0..spec.layers {
        let normed = b.g.layernorm(tokens, LN_EPS)?;
        let mut outs = Vec::with_capacity(spec.heads);
        let mut mean_attn = Tensor::zeros(vec![n, n]);
        for hd in 0..spec.heads {
            let wq = b.param(&format!("l{l}.h{hd}.q.w"));
            let wk = b.param(&format!("l{l}.h{hd}.k.w"));
            let wv = b.param(&format!("l{l}.h{hd}.v.w"));
            let q = b.g.matmul_with(normed, wq, Carrier::None)?;
            let k = b.g.matmul_with(normed, wk, Carrier::None)?;
            let v = b.g.matmul(normed, wv)?;
            let kt = b.g.transpose(k)?;
            let scores = b.g.matmul_with(q, kt, Carrier::None)?;
            let scores = b.g.affine(scores, scale, 0.0)?;
            let p = b.g.softmax(scores)?;
            mean_attn.add_assign(b.g.value(p))?;
            outs.push(b.g.matmul_with(p, v, Carrier::Rhs)?);
        }
        layers.push(mean_attn.scale(1.0 / spec.heads as f64));
        let cat = b.g.concat_cols(&outs)?;
        let attn = b.linear(cat, &format!("l{l}.o"))?;
        let attn = b.dropout(attn, spec.dropout.block)?;
        tokens = b.g.add(tokens, attn)?;

        let normed = b.g.layernorm(tokens, LN_EPS)?;
        let f = b.linear(normed, &format!("l{l}.ff1"))?;
        let f = b.g.relu(f)?;
        let f = b.linear(f, &format!("l{l}.ff2"))?;
        let f = b.dropout(f, spec.dropout.block)?;
        tokens = b.g.add(tokens, f)?;
    }
    let cls_out = b.g.slice_rows(tokens, 0, 1)?;
    let z = b.g.layernorm(cls_out, LN_EPS)?;
    Ok((z, AttentionRecord::Layers(layers)))
}
