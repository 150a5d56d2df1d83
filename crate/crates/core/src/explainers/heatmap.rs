use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExplanationTarget, Method};
use crate::error::{Error, Result};

/// Per-instance scores for one bag, one method and one target.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub bag_id: String,
    pub method: Method,
    pub target: ExplanationTarget,
    pub scores: Vec<f64>,
    pub signed: bool,
}

#[derive(Serialize, Deserialize)]
struct Row {
    bag_id: String,
    method: String,
    target: String,
    instance_index: usize,
    score: f64,
}

/// Long format, one row per instance; scores keep full precision.
pub fn write_heatmaps(path: &Path, maps: &[Heatmap]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in maps {
        for (i, s) in m.scores.iter().enumerate() {
            w.serialize(Row {
                bag_id: m.bag_id.clone(),
                method: m.method.to_string(),
                target: m.target.to_string(),
                instance_index: i,
                score: *s,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::data::io::write_atomic(path, &bytes)
}

/// Reads heatmaps back in first-appearance order. Instance indices must
/// run `0..N` within each heatmap.
pub fn read_heatmaps(path: &Path) -> Result<Vec<Heatmap>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut order: Vec<(String, Method, ExplanationTarget)> = Vec::new();
    let mut scores: BTreeMap<(String, Method, ExplanationTarget), Vec<f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        let key = (row.bag_id, row.method.parse()?, row.target.parse()?);
        let entry = scores.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if row.instance_index != entry.len() {
            return Err(Error::Format(format!(
                "heatmap rows out of order at instance {}",
                row.instance_index
            )));
        }
        entry.push(row.score);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let s = scores.remove(&key).unwrap_or_default();
            let (bag_id, method, target) = key;
            Heatmap {
                signed: method.signed(target),
                bag_id,
                method,
                target,
                scores: s,
            }
        })
        .collect())
}
