use crate::error::Result;
use crate::models::build::Builder;
use crate::models::AttentionRecord;
use crate::numeric::{Carrier, NodeId};

/// One Mamba block over the instance sequence, then attention pooling.
///
/// Branch A is `silu(x W_x)` fed to the selective scan, whose step size,
/// input and readout projections are computed from the same activations.
/// Branch B is `silu(x W_z)`. The gated product goes through the output
/// projection. The block has no skip term and no residual.
pub(crate) fn aggregate(b: &mut Builder, x: NodeId) -> Result<(NodeId, AttentionRecord)> {
    let spec = b.spec;
    let h = b.linear(x, "embed")?;
    let h = b.g.relu(h)?;
    let h = b.dropout(h, spec.dropout.embedding)?;

    let xa = b.linear(h, "mamba.x")?;
    let xa = b.g.silu(xa)?;
    let w_dt = b.param("mamba.dt.w");
    let b_dt = b.param("mamba.dt.b");
    let dt = b.g.matmul_with(xa, w_dt, Carrier::None)?;
    let dt = b.g.add_row(dt, b_dt)?;
    let dt = b.g.sigmoid(dt)?;
    let w_b = b.param("mamba.b.w");
    let w_c = b.param("mamba.c.w");
    let bm = b.g.matmul_with(xa, w_b, Carrier::None)?;
    let cm = b.g.matmul_with(xa, w_c, Carrier::None)?;
    let a_log = b.param("mamba.a_log");
    let y = b.g.selective_scan(xa, dt, a_log, bm, cm)?;

    let zb = b.linear(h, "mamba.z")?;
    let zb = b.g.silu(zb)?;
    let gated = b.g.mul(y, zb)?;
    let m = b.linear(gated, "mamba.out")?;
    let m = b.dropout(m, spec.dropout.block)?;

    let (z, a) = b.attention_pool(m)?;
    let weights = b.g.value(a).data().to_vec();
    Ok((z, AttentionRecord::Pooling(weights)))
}
