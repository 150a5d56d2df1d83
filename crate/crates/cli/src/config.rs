//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xmil_core::data::{ClassificationConfig, GeneratorConfig};
use xmil_core::explainers::{Method, Track, IG_STEPS};
use xmil_core::lrp::LrpConfig;
use xmil_core::models::{Architecture, Dropout, ModelSpec, TaskHeadSpec};
use xmil_core::stats::ALPHA;
use xmil_core::training::TrainConfig;

use crate::{CliError, CliResult};

/// Environment variable that anchors relative output directories.
pub const OUT_ROOT_ENV: &str = "XMIL_OUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generator(GeneratorConfig),
    /// Existing manifest; its splits are used as stored.
    Manifest(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generator(GeneratorConfig::Classification(ClassificationConfig::default()))
    }
}

fn d_fold() -> usize {
    0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_state")]
    pub state_size: usize,
    #[serde(default)]
    pub dropout: Dropout,
    #[serde(default = "d_true")]
    pub bias: bool,
}

fn d_hidden() -> usize {
    64
}
fn d_layers() -> usize {
    2
}
fn d_heads() -> usize {
    4
}
fn d_state() -> usize {
    16
}
fn d_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::AttnMil,
            hidden: d_hidden(),
            layers: d_layers(),
            heads: d_heads(),
            state_size: d_state(),
            dropout: Dropout::default(),
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, d_in: usize, head: TaskHeadSpec) -> ModelSpec {
        ModelSpec {
            architecture: self.architecture,
            d_in,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            state_size: self.state_size,
            head,
            dropout: self.dropout,
            bias: self.bias,
        }
    }
}

/// Which bags are explained and flipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Val,
    All,
}

fn d_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn d_ig_steps() -> usize {
    IG_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub track: Track,
    /// Explained class for classification; the predicted class when absent.
    #[serde(default)]
    pub class: Option<usize>,
    #[serde(default = "d_ig_steps")]
    pub ig_steps: usize,
    #[serde(default)]
    pub lrp: LrpConfig,
    #[serde(default)]
    pub split: EvalSplit,
    /// Cap on evaluated bags, taken in split order.
    #[serde(default)]
    pub max_bags: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: d_methods(),
            track: Track::Softmax,
            class: None,
            ig_steps: IG_STEPS,
            lrp: LrpConfig::default(),
            split: EvalSplit::Test,
            max_bags: None,
        }
    }
}

fn d_alpha() -> f64 {
    ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    #[serde(default = "d_alpha")]
    pub alpha: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { alpha: ALPHA }
    }
}

fn d_curve_bags() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Bags that get a perturbation-curve plot, in evaluation order.
    #[serde(default = "d_curve_bags")]
    pub curve_bags: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            curve_bags: d_curve_bags(),
        }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
    /// Cross-validation fold for generated data.
    #[serde(default = "d_fold")]
    pub fold: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default = "d_out")]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::default(),
            fold: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvalConfig::default(),
            stats: StatsConfig::default(),
            report: ReportConfig::default(),
            out: d_out(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.evaluation.methods.is_empty() {
            return fail("evaluation.methods is empty".into());
        }
        let mut seen = self.evaluation.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.evaluation.methods.len() {
            return fail("evaluation.methods lists a method twice".into());
        }
        if self.evaluation.ig_steps == 0 {
            return fail("evaluation.ig_steps must be positive".into());
        }
        if self.evaluation.max_bags == Some(0) {
            return fail("evaluation.max_bags must be positive".into());
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return fail(format!("stats.alpha {} outside (0, 1)", self.stats.alpha));
        }
        if self.fold >= xmil_core::data::FOLDS {
            return fail(format!("fold {} outside [0, {})", self.fold, xmil_core::data::FOLDS));
        }
        self.train.validate()?;
        if let DataSource::Manifest(p) = &self.data {
            if !p.is_file() {
                return fail(format!("manifest {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Output directory; relative paths resolve against `XMIL_OUT_ROOT`
    /// when it is set.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if self.out.is_relative() => PathBuf::from(root).join(&self.out),
            _ => self.out.clone(),
        }
    }
}
