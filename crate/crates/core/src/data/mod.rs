//! Bags, labels, synthetic generators and on-disk formats.

mod generate;
pub(crate) mod io;
mod manifest;
mod survival;

use serde::{Deserialize, Serialize};

use crate::numeric::Tensor;

pub use generate::{
    generate, generate_classification_bags, generate_regression_bags, generate_survival_bags,
    ClassificationConfig, GeneratorConfig, RegressionConfig, SurvivalConfig,
};
pub use io::{load_bag, read_bag, save_bag, write_atomic, write_bag, BAG_MAGIC};
pub use manifest::{DatasetManifest, FoldPlan, Splits, FOLDS};
pub use survival::discretize_event_times;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
    Survival,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
            TaskKind::Survival => "survival",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabel {
    Class(usize),
    Value(f64),
    Survival {
        /// 1-based interval index in `[1, K]`.
        interval: usize,
        censored: bool,
        raw_time: f64,
    },
}

impl TaskLabel {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskLabel::Class(_) => TaskKind::Classification,
            TaskLabel::Value(_) => TaskKind::Regression,
            TaskLabel::Survival { .. } => TaskKind::Survival,
        }
    }
}

/// One sample: `N x D` instance features plus label and metadata.
///
/// `truth_mask` marks ground-truth signal instances of synthetic bags. It is
/// never read by models or explainers.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    pub features: Tensor,
    pub label: Option<TaskLabel>,
    pub positions: Option<Vec<[i32; 2]>>,
    pub truth_mask: Option<Vec<bool>>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// A generated or loaded collection of bags sharing one feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub dim: usize,
    pub bags: Vec<Bag>,
    /// Unit signal direction used by the generator, if synthetic.
    pub direction: Option<Vec<f64>>,
    pub num_classes: Option<usize>,
    pub intervals: Option<usize>,
    pub generator: Option<GeneratorConfig>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn bag(&self, id: &str) -> Option<&Bag> {
        self.bags.iter().find(|b| b.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.bags.iter().map(|b| b.id.clone()).collect()
    }
}
