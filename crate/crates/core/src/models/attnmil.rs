use crate::error::Result;
use crate::models::build::Builder;
use crate::models::AttentionRecord;
use crate::numeric::NodeId;

/// Linear+ReLU instance embedding followed by tanh attention pooling.
pub(crate) fn aggregate(b: &mut Builder, x: NodeId) -> Result<(NodeId, AttentionRecord)> {
    let h = b.linear(x, "embed")?;
    let h = b.g.relu(h)?;
    let h = b.dropout(h, b.spec.dropout.embedding)?;
    let (z, a) = b.attention_pool(h)?;
    let weights = b.g.value(a).data().to_vec();
    Ok((z, AttentionRecord::Pooling(weights)))
}
