use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::io::write_atomic;
use crate::data::{load_bag, save_bag, Dataset, GeneratorConfig, TaskKind, TaskLabel};
use crate::error::{invalid, Error, Result};

pub const FOLDS: usize = 5;

/// Train/val/test assignment for one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return invalid(format!("bag {id} appears in more than one split"));
            }
        }
        Ok(())
    }
}

/// Five cyclic partitions of the bag ids.
///
/// Fold `i` tests on partition `i`, validates on partition `i + 1 (mod 5)`
/// and trains on the remaining three.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub partitions: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn new(ids: &[String], seed: u64) -> Result<Self> {
        if ids.len() < FOLDS {
            return invalid(format!("{} bags cannot fill {FOLDS} folds", ids.len()));
        }
        let mut shuffled = ids.to_vec();
        shuffled.sort();
        shuffled.dedup();
        if shuffled.len() != ids.len() {
            return invalid("duplicate bag ids");
        }
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = shuffled.len();
        let partitions = (0..FOLDS)
            .map(|i| shuffled[n * i / FOLDS..n * (i + 1) / FOLDS].to_vec())
            .collect();
        Ok(Self { partitions })
    }

    pub fn fold(&self, fold: usize) -> Result<Splits> {
        let k = self.partitions.len();
        if fold >= k {
            return invalid(format!("fold {fold} out of range 0..{k}"));
        }
        let val_part = (fold + 1) % k;
        let train = (0..k)
            .filter(|&p| p != fold && p != val_part)
            .flat_map(|p| self.partitions[p].iter().cloned())
            .collect();
        Ok(Splits {
            fold,
            train,
            val: self.partitions[val_part].clone(),
            test: self.partitions[fold].clone(),
        })
    }
}

/// On-disk description of a dataset. Bag paths are relative to the
/// manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: TaskKind,
    pub dims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_value: Option<f64>,
    pub bags: BTreeMap<String, String>,
    pub labels: BTreeMap<String, TaskLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub positions: BTreeMap<String, Vec<[i32; 2]>>,
    pub splits: Splits,
    pub partitions: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl DatasetManifest {
    /// Builds a manifest for `ds` with bag files at `bags/<id>.bag`.
    /// Regression reference value defaults to the training-split median.
    pub fn for_dataset(ds: &Dataset, fold: usize, split_seed: u64) -> Result<Self> {
        let plan = FoldPlan::new(&ds.ids(), split_seed)?;
        let splits = plan.fold(fold)?;
        let mut labels = BTreeMap::new();
        let mut bags = BTreeMap::new();
        let mut positions = BTreeMap::new();
        for b in &ds.bags {
            let label = b
                .label
                .clone()
                .ok_or_else(|| Error::Invalid(format!("bag {} has no label", b.id)))?;
            labels.insert(b.id.clone(), label);
            bags.insert(b.id.clone(), format!("bags/{}.bag", b.id));
            if let Some(p) = &b.positions {
                positions.insert(b.id.clone(), p.clone());
            }
        }
        let reference_value = match ds.task {
            TaskKind::Regression => {
                let mut train: Vec<f64> = splits
                    .train
                    .iter()
                    .filter_map(|id| match labels[id] {
                        TaskLabel::Value(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                Some(median(&mut train))
            }
            _ => None,
        };
        let m = Self {
            task: ds.task,
            dims: ds.dim,
            num_classes: ds.num_classes,
            intervals: ds.intervals,
            reference_value,
            bags,
            labels,
            positions,
            splits,
            partitions: plan.partitions,
            generator: ds.generator.clone(),
            seed: ds.seed,
            direction: ds.direction.clone(),
        };
        m.check_structure()?;
        Ok(m)
    }

    pub fn fold_plan(&self) -> FoldPlan {
        FoldPlan {
            partitions: self.partitions.clone(),
        }
    }

    /// Structural checks that need no file access.
    pub fn check_structure(&self) -> Result<()> {
        self.splits.check_disjoint()?;
        if self.dims == 0 {
            return invalid("dims must be positive");
        }
        for id in self
            .splits
            .train
            .iter()
            .chain(&self.splits.val)
            .chain(&self.splits.test)
        {
            if !self.bags.contains_key(id) {
                return invalid(format!("split lists unknown bag {id}"));
            }
        }
        for (id, label) in &self.labels {
            if !self.bags.contains_key(id) {
                return invalid(format!("label for unknown bag {id}"));
            }
            if label.kind() != self.task {
                return invalid(format!(
                    "bag {id} has a {} label in a {} dataset",
                    label.kind().as_str(),
                    self.task.as_str()
                ));
            }
            match (label, self.num_classes, self.intervals) {
                (TaskLabel::Class(c), Some(n), _) if *c >= n => {
                    return invalid(format!("bag {id}: class {c} outside [0, {n})"));
                }
                (TaskLabel::Survival { interval, .. }, _, Some(k))
                    if *interval == 0 || *interval > k =>
                {
                    return invalid(format!("bag {id}: interval {interval} outside [1, {k}]"));
                }
                _ => {}
            }
        }
        for id in self.bags.keys() {
            if !self.labels.contains_key(id) {
                return invalid(format!("bag {id} has no label"));
            }
        }
        match self.task {
            TaskKind::Classification if self.num_classes.is_none_or(|c| c < 2) => {
                invalid("classification needs num_classes >= 2")
            }
            TaskKind::Survival if self.intervals.is_none_or(|k| k < 2) => {
                invalid("survival needs intervals >= 2")
            }
            TaskKind::Regression if !self.reference_value.is_some_and(f64::is_finite) => {
                invalid("regression needs a finite reference_value")
            }
            _ => Ok(()),
        }
    }

    pub fn bag_path(&self, base: &Path, id: &str) -> Result<PathBuf> {
        let rel = self
            .bags
            .get(id)
            .ok_or_else(|| Error::Invalid(format!("unknown bag {id}")))?;
        Ok(base.join(rel))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Parses and fully validates a manifest, including every bag file.
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.check_structure()?;
        m.load_bags(path)?;
        Ok(m)
    }

    fn load_bags(&self, path: &Path) -> Result<Dataset> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut bags = Vec::with_capacity(self.bags.len());
        for id in self.bags.keys() {
            let file = self.bag_path(base, id)?;
            let mut bag = load_bag(&file)
                .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
            if bag.dim() != self.dims {
                return Err(Error::Format(format!(
                    "{}: {} features, manifest says {}",
                    file.display(),
                    bag.dim(),
                    self.dims
                )));
            }
            if let Some(p) = self.positions.get(id) {
                if p.len() != bag.len() {
                    return invalid(format!("bag {id}: {} positions for {} instances", p.len(), bag.len()));
                }
                bag.positions = Some(p.clone());
            }
            bag.id = id.clone();
            bag.label = Some(self.labels[id].clone());
            bags.push(bag);
        }
        Ok(Dataset {
            task: self.task,
            dim: self.dims,
            bags,
            direction: self.direction.clone(),
            num_classes: self.num_classes,
            intervals: self.intervals,
            generator: self.generator.clone(),
            seed: self.seed,
        })
    }

    /// Loads the manifest at `path` together with all of its bags.
    pub fn load_dataset(path: &Path) -> Result<(Self, Dataset)> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.check_structure()?;
        let ds = m.load_bags(path)?;
        Ok((m, ds))
    }

    /// Writes every bag under `dir/bags/` and the manifest to
    /// `dir/manifest.json`.
    pub fn write_dataset(ds: &Dataset, dir: &Path, fold: usize, split_seed: u64) -> Result<Self> {
        let m = Self::for_dataset(ds, fold, split_seed)?;
        for b in &ds.bags {
            save_bag(&m.bag_path(dir, &b.id)?, b)?;
        }
        m.save(&dir.join("manifest.json"))?;
        Ok(m)
    }
}
