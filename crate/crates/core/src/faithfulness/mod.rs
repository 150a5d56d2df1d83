//! Patch flipping: remove instances in heatmap order and track the output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::write_atomic;
use crate::error::{invalid, Error, Result};
use crate::explainers::{tracked_output, ExplanationTarget, Heatmap, Method, Track};
use crate::models::MilModel;
use crate::numeric::Tensor;

/// Number of removal chunks; curves have `CHUNKS + 1` points.
pub const CHUNKS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipOrder {
    Ascending,
    Descending,
}

impl fmt::Display for FlipOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipOrder::Ascending => "ascending",
            FlipOrder::Descending => "descending",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub order: FlipOrder,
    /// `CHUNKS` disjoint index sets; chunk 0 holds the first instances
    /// removed.
    pub chunks: Vec<Vec<usize>>,
}

/// Stable sort by score under `order`, ties by instance index, then slice
/// into chunks with bounds `floor(N i / 100)`.
pub fn partition_patches(scores: &[f64], order: FlipOrder) -> Result<PartitionPlan> {
    let n = scores.len();
    if n == 0 {
        return invalid("cannot partition an empty heatmap");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("heatmap contains NaN");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let by_score = scores[a].total_cmp(&scores[b]);
        let by_score = match order {
            FlipOrder::Ascending => by_score,
            FlipOrder::Descending => by_score.reverse(),
        };
        by_score.then(a.cmp(&b))
    });
    let chunks = (0..CHUNKS)
        .map(|i| idx[n * i / CHUNKS..n * (i + 1) / CHUNKS].to_vec())
        .collect();
    Ok(PartitionPlan { order, chunks })
}

/// Tracked outputs for `m = 0..=100` removed chunks. Remaining instances
/// keep their original order; the empty bag is one all-zero instance.
pub fn flip_curve(
    model: &MilModel,
    bag: &Tensor,
    plan: &PartitionPlan,
    target: ExplanationTarget,
    track: Track,
) -> Result<Vec<f64>> {
    let n = bag.rows();
    let covered: usize = plan.chunks.iter().map(Vec::len).sum();
    if plan.chunks.len() != CHUNKS || covered != n {
        return invalid(format!("plan covers {covered} of {n} instances"));
    }
    let mut keep = vec![true; n];
    let mut curve = Vec::with_capacity(CHUNKS + 1);
    let mut last: Option<f64> = None;
    for m in 0..=CHUNKS {
        if m > 0 {
            for &i in &plan.chunks[m - 1] {
                keep[i] = false;
            }
        }
        let changed = m == 0 || !plan.chunks[m - 1].is_empty();
        let value = match last {
            Some(v) if !changed => v,
            _ => {
                let rows: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
                let x = if rows.is_empty() {
                    Tensor::zeros(vec![1, bag.cols()])
                } else {
                    bag.select_rows(&rows)
                };
                tracked_output(&model.predict(&x)?, target, track)?
            }
        };
        last = Some(value);
        curve.push(value);
    }
    Ok(curve)
}

/// Mean-style area: the sum of all 101 points divided by 100. The sum is
/// compensated, so a constant curve gives exactly `101 c / 100`.
pub fn aupc(curve: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in curve {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    (sum + comp) / CHUNKS as f64
}

pub fn srg(aupc_asc: f64, aupc_desc: f64) -> f64 {
    aupc_asc - aupc_desc
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationRecord {
    pub bag_id: String,
    pub method: Method,
    pub ascending: Vec<f64>,
    pub descending: Vec<f64>,
    pub aupc_asc: f64,
    pub aupc_desc: f64,
    pub srg: f64,
}

/// Both flip curves for one heatmap.
pub fn evaluate_heatmap(
    model: &MilModel,
    bag: &Tensor,
    heatmap: &Heatmap,
    track: Track,
) -> Result<PerturbationRecord> {
    if heatmap.scores.len() != bag.rows() {
        return invalid(format!(
            "heatmap {} has {} scores for {} instances",
            heatmap.bag_id,
            heatmap.scores.len(),
            bag.rows()
        ));
    }
    let curve = |order| -> Result<Vec<f64>> {
        let plan = partition_patches(&heatmap.scores, order)?;
        flip_curve(model, bag, &plan, heatmap.target, track)
    };
    let ascending = curve(FlipOrder::Ascending)?;
    let descending = curve(FlipOrder::Descending)?;
    let (a, d) = (aupc(&ascending), aupc(&descending));
    Ok(PerturbationRecord {
        bag_id: heatmap.bag_id.clone(),
        method: heatmap.method,
        ascending,
        descending,
        aupc_asc: a,
        aupc_desc: d,
        srg: srg(a, d),
    })
}

/// SRG per bag (rows, input order) and method (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SrgMatrix {
    pub bag_ids: Vec<String>,
    pub methods: Vec<Method>,
    pub srg: Vec<Vec<f64>>,
    /// Bag-major, then method order.
    pub records: Vec<PerturbationRecord>,
}

impl SrgMatrix {
    pub fn column(&self, method: Method) -> Option<Vec<f64>> {
        let j = self.methods.iter().position(|&m| m == method)?;
        Some(self.srg.iter().map(|row| row[j]).collect())
    }
}

/// Evaluates every (bag, method) cell in parallel; output order is fixed by
/// the input order of bags and methods.
pub fn evaluate_cohort(
    model: &MilModel,
    bags: &[(String, Tensor)],
    heatmaps: &[Heatmap],
    methods: &[Method],
    track: Track,
) -> Result<SrgMatrix> {
    let index: BTreeMap<(&str, Method), &Heatmap> = heatmaps
        .iter()
        .map(|h| ((h.bag_id.as_str(), h.method), h))
        .collect();
    let mut cells = Vec::with_capacity(bags.len() * methods.len());
    for (id, bag) in bags {
        for &m in methods {
            let h = index
                .get(&(id.as_str(), m))
                .ok_or_else(|| Error::Invalid(format!("missing {m} heatmap for {id}")))?;
            cells.push((bag, *h));
        }
    }
    let records = cells
        .into_par_iter()
        .map(|(bag, h)| evaluate_heatmap(model, bag, h, track))
        .collect::<Result<Vec<_>>>()?;
    let srg = records
        .chunks(methods.len().max(1))
        .map(|row| row.iter().map(|r| r.srg).collect())
        .collect();
    Ok(SrgMatrix {
        bag_ids: bags.iter().map(|(id, _)| id.clone()).collect(),
        methods: methods.to_vec(),
        srg,
        records,
    })
}

#[derive(Serialize)]
struct CurveRow<'a> {
    bag_id: &'a str,
    method: &'static str,
    ordering: String,
    m: usize,
    output: f64,
}

#[derive(Serialize)]
struct SrgRow<'a> {
    bag_id: &'a str,
    method: &'static str,
    aupc_asc: f64,
    aupc_desc: f64,
    srg: f64,
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Columns `bag_id,method,ordering,m,output`.
pub fn write_curves(path: &Path, records: &[PerturbationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        for (order, curve) in [
            (FlipOrder::Ascending, &r.ascending),
            (FlipOrder::Descending, &r.descending),
        ] {
            for (m, &output) in curve.iter().enumerate() {
                w.serialize(CurveRow {
                    bag_id: &r.bag_id,
                    method: r.method.as_str(),
                    ordering: order.to_string(),
                    m,
                    output,
                })?;
            }
        }
    }
    finish(path, w)
}

/// Columns `bag_id,method,aupc_asc,aupc_desc,srg`.
pub fn write_srg(path: &Path, records: &[PerturbationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(SrgRow {
            bag_id: &r.bag_id,
            method: r.method.as_str(),
            aupc_asc: r.aupc_asc,
            aupc_desc: r.aupc_desc,
            srg: r.srg,
        })?;
    }
    finish(path, w)
}

#[derive(Deserialize)]
struct CurveIn {
    bag_id: String,
    method: String,
    ordering: FlipOrder,
    m: usize,
    output: f64,
}

/// Rebuilds records from a curve CSV, recomputing AUPC and SRG. Records
/// keep their first-appearance order.
pub fn read_curves(path: &Path) -> Result<Vec<PerturbationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut keys: Vec<(String, Method)> = Vec::new();
    let mut curves: BTreeMap<(usize, FlipOrder), Vec<f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: CurveIn = row?;
        let method: Method = row.method.parse()?;
        let k = match keys.iter().position(|(b, m)| *b == row.bag_id && *m == method) {
            Some(k) => k,
            None => {
                keys.push((row.bag_id, method));
                keys.len() - 1
            }
        };
        let curve = curves.entry((k, row.ordering)).or_default();
        if row.m != curve.len() {
            return Err(Error::Format(format!(
                "curve {} {} {}: point {} out of sequence",
                keys[k].0, keys[k].1, row.ordering, row.m
            )));
        }
        curve.push(row.output);
    }
    keys.into_iter()
        .enumerate()
        .map(|(k, (bag_id, method))| {
            let mut take = |order| {
                curves
                    .remove(&(k, order))
                    .filter(|c| c.len() == CHUNKS + 1)
                    .ok_or_else(|| Error::Format(format!("incomplete {order} curve for {bag_id} {method}")))
            };
            let ascending = take(FlipOrder::Ascending)?;
            let descending = take(FlipOrder::Descending)?;
            let (a, d) = (aupc(&ascending), aupc(&descending));
            Ok(PerturbationRecord {
                bag_id,
                method,
                ascending,
                descending,
                aupc_asc: a,
                aupc_desc: d,
                srg: srg(a, d),
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct SrgIn {
    bag_id: String,
    method: String,
    srg: f64,
}

/// Reads an SRG CSV back into a matrix; bags and methods keep their
/// first-appearance order. Curves are not restored.
pub fn read_srg(path: &Path) -> Result<SrgMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let mut bag_ids: Vec<String> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for row in r.deserialize() {
        let row: SrgIn = row?;
        let m: Method = row.method.parse()?;
        let bi = match bag_ids.iter().position(|b| *b == row.bag_id) {
            Some(i) => i,
            None => {
                bag_ids.push(row.bag_id);
                bag_ids.len() - 1
            }
        };
        let mi = match methods.iter().position(|&x| x == m) {
            Some(i) => i,
            None => {
                methods.push(m);
                methods.len() - 1
            }
        };
        cells.insert((bi, mi), row.srg);
    }
    let mut srg = vec![vec![0.0; methods.len()]; bag_ids.len()];
    for (bi, row) in srg.iter_mut().enumerate() {
        for (mi, v) in row.iter_mut().enumerate() {
            *v = *cells.get(&(bi, mi)).ok_or_else(|| {
                Error::Format(format!("missing {} SRG for {}", methods[mi], bag_ids[bi]))
            })?;
        }
    }
    Ok(SrgMatrix {
        bag_ids,
        methods,
        srg,
        records: Vec::new(),
    })
}

#[cfg(test)]
mod tests;
