use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fdr_adjust, magnitude_class, mean_rank_scores, median_mad_effect, wilcoxon_effect};
use super::Magnitude;
use crate::data::io::write_atomic;
use crate::error::{Error, Result};
use crate::explainers::Method;
use crate::faithfulness::SrgMatrix;

/// Default significance level for FDR-adjusted p-values.
pub const ALPHA: f64 = 0.05;

/// JSON cannot hold infinities; the median/MAD sentinel is stored as a
/// string there.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One unordered method pair; `d = SRG(method_a) - SRG(method_b)` per bag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub method_a: Method,
    pub method_b: Method,
    /// Non-zero differences; 0 when the two methods never differ.
    pub n: usize,
    pub w_plus: f64,
    pub z: f64,
    pub r: f64,
    #[serde(with = "extended_f64")]
    pub median_mad: f64,
    pub p: f64,
    pub p_adj: f64,
    pub magnitude: Magnitude,
    pub significant: bool,
    pub exact: bool,
    pub unreliable: bool,
}

impl PairComparison {
    /// The same comparison with the roles of the two methods swapped.
    pub fn swapped(&self) -> Self {
        let nf = self.n as f64;
        PairComparison {
            method_a: self.method_b,
            method_b: self.method_a,
            w_plus: nf * (nf + 1.0) / 2.0 - self.w_plus,
            z: -self.z,
            r: -self.r,
            median_mad: -self.median_mad,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: Method,
    pub mrs: f64,
    /// Mean effect size against every other method.
    pub mean_effect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<Method>,
    pub n_bags: usize,
    pub alpha: f64,
    pub pairs: Vec<PairComparison>,
    pub ranks: Vec<MethodRank>,
    /// Lowest MRS; mean effect size breaks ties.
    pub best: Method,
}

/// Pairwise tests over every method pair of an SRG matrix, FDR-adjusted
/// jointly, plus Mean Rank Scores.
pub fn compare_methods(matrix: &SrgMatrix, alpha: f64) -> Result<ComparisonTable> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Stats(format!("alpha {alpha} outside (0, 1)")));
    }
    let methods = matrix.methods.clone();
    if methods.len() < 2 {
        return Err(Error::Stats("need at least two methods to compare".into()));
    }
    let mrs = mean_rank_scores(&matrix.srg)?;
    let cols: Vec<Vec<f64>> = (0..methods.len())
        .map(|j| matrix.srg.iter().map(|row| row[j]).collect())
        .collect();
    let mut pairs = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let d: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a - b).collect();
            let (n, w_plus, z, r, p, exact, unreliable) = match wilcoxon_effect(&d) {
                Ok(w) => (w.n, w.w_plus, w.z, w.r, w.p, w.exact, w.unreliable),
                Err(_) if d.iter().all(|&v| v == 0.0) => (0, 0.0, 0.0, 0.0, 1.0, true, true),
                Err(e) => return Err(e),
            };
            pairs.push(PairComparison {
                method_a: methods[i],
                method_b: methods[j],
                n,
                w_plus,
                z,
                r,
                median_mad: median_mad_effect(&d),
                p,
                p_adj: p,
                magnitude: magnitude_class(r),
                significant: false,
                exact,
                unreliable,
            });
        }
    }
    let adj = fdr_adjust(&pairs.iter().map(|p| p.p).collect::<Vec<_>>())?;
    for (pair, q) in pairs.iter_mut().zip(adj) {
        pair.p_adj = q;
        pair.significant = q < alpha;
    }
    let mut table = ComparisonTable {
        methods: methods.clone(),
        n_bags: matrix.srg.len(),
        alpha,
        pairs,
        ranks: Vec::new(),
        best: methods[0],
    };
    table.ranks = methods
        .iter()
        .zip(mrs)
        .map(|(&m, mrs)| {
            let others: Vec<f64> = methods
                .iter()
                .filter(|&&o| o != m)
                .filter_map(|&o| table.pair(m, o).map(|p| p.r))
                .collect();
            MethodRank {
                method: m,
                mrs,
                mean_effect: others.iter().sum::<f64>() / others.len() as f64,
            }
        })
        .collect();
    table.best = table
        .ranks
        .iter()
        .min_by(|x, y| {
            x.mrs
                .total_cmp(&y.mrs)
                .then(y.mean_effect.total_cmp(&x.mean_effect))
        })
        .map(|r| r.method)
        .unwrap_or(methods[0]);
    Ok(table)
}

#[derive(Serialize)]
struct MrsRow {
    method: &'static str,
    mrs: f64,
    mean_effect: f64,
}

impl ComparisonTable {
    /// The comparison oriented as `a` versus `b`.
    pub fn pair(&self, a: Method, b: Method) -> Option<PairComparison> {
        self.pairs.iter().find_map(|p| {
            if p.method_a == a && p.method_b == b {
                Some(p.clone())
            } else if p.method_a == b && p.method_b == a {
                Some(p.swapped())
            } else {
                None
            }
        })
    }

    pub fn mrs(&self, m: Method) -> Option<f64> {
        self.ranks.iter().find(|r| r.method == m).map(|r| r.mrs)
    }

    /// Antisymmetric matrix of `r`, rows and columns in method order.
    pub fn effect_matrix(&self) -> Vec<Vec<f64>> {
        self.methods
            .iter()
            .map(|&a| {
                self.methods
                    .iter()
                    .map(|&b| self.pair(a, b).map_or(0.0, |p| p.r))
                    .collect()
            })
            .collect()
    }

    pub fn verdict(&self) -> String {
        let mrs = self.mrs(self.best).unwrap_or(f64::NAN);
        format!("best method: {} (MRS {mrs:.3})", self.best)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// One row per pair.
    pub fn write_pairs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.pairs {
            w.serialize(p)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }

    /// Columns `method,mrs,mean_effect`.
    pub fn write_mrs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.ranks {
            w.serialize(MrsRow {
                method: r.method.as_str(),
                mrs: r.mrs,
                mean_effect: r.mean_effect,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

/// Identifies one experimental setting in an aggregation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingKey {
    pub task: String,
    pub architecture: String,
    pub dataset: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Overall,
    Task,
    Architecture,
    Dataset,
}

impl Grouping {
    fn key(self, s: &SettingKey) -> String {
        match self {
            Grouping::Overall => "all".into(),
            Grouping::Task => s.task.clone(),
            Grouping::Architecture => s.architecture.clone(),
            Grouping::Dataset => s.dataset.clone(),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Overall => "overall",
            Grouping::Task => "task",
            Grouping::Architecture => "architecture",
            Grouping::Dataset => "dataset",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEffects {
    pub group: String,
    pub settings: Vec<SettingKey>,
    /// Mean `r` over the group's settings, rows and columns in method order.
    pub effects: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedEffects {
    pub grouping: Grouping,
    pub methods: Vec<Method>,
    pub groups: Vec<GroupEffects>,
}

/// Arithmetic mean of pairwise effect sizes within each group. Every table
/// must cover the same methods; the first table fixes their order.
pub fn aggregate_effects(
    settings: &[(SettingKey, ComparisonTable)],
    grouping: Grouping,
) -> Result<AggregatedEffects> {
    let Some((_, first)) = settings.first() else {
        return Err(Error::Stats("no settings to aggregate".into()));
    };
    let methods = first.methods.clone();
    let mut sorted = methods.clone();
    sorted.sort();
    let mut groups: BTreeMap<String, (Vec<SettingKey>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (key, table) in settings {
        let mut theirs = table.methods.clone();
        theirs.sort();
        if theirs != sorted {
            return Err(Error::Stats(format!(
                "setting {}/{}/{} compares a different method set",
                key.task, key.architecture, key.dataset
            )));
        }
        let entry = groups
            .entry(grouping.key(key))
            .or_insert_with(|| (Vec::new(), vec![vec![0.0; methods.len()]; methods.len()]));
        entry.0.push(key.clone());
        for (i, &a) in methods.iter().enumerate() {
            for (j, &b) in methods.iter().enumerate() {
                if let Some(p) = table.pair(a, b) {
                    entry.1[i][j] += p.r;
                }
            }
        }
    }
    let groups = groups
        .into_iter()
        .map(|(group, (keys, sums))| {
            let k = keys.len() as f64;
            GroupEffects {
                group,
                effects: sums
                    .into_iter()
                    .map(|row| row.into_iter().map(|s| s / k).collect())
                    .collect(),
                settings: keys,
            }
        })
        .collect();
    Ok(AggregatedEffects {
        grouping,
        methods,
        groups,
    })
}
