//! Pipeline stages. Each stage reads the previous stage's files from the run
//! directory, so the subcommands compose into `run-all`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xmil_core::data::{generate, write_atomic, Dataset, DatasetManifest, TaskKind};
use xmil_core::explainers::{
    explain, read_heatmaps, write_heatmaps, ExplainOptions, ExplanationTarget, Heatmap, Method,
};
use xmil_core::faithfulness::{evaluate_cohort, read_curves, read_srg, write_curves, write_srg};
use xmil_core::models::{ModelCheckpoint, TaskHeadSpec};
use xmil_core::numeric::Tensor;
use xmil_core::stats::{compare_methods, ComparisonTable};
use xmil_core::training::{train, write_training_log};

use crate::config::{DataSource, EvalSplit, RunConfig};
use crate::report;
use crate::{CliError, CliResult};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Fixed file locations inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.ckpt")
    }
    pub fn training_log(&self) -> PathBuf {
        self.root.join("model/training_log.csv")
    }
    pub fn heatmap_dir(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
    pub fn curves(&self) -> PathBuf {
        self.root.join("flip/curves.csv")
    }
    pub fn srg(&self) -> PathBuf {
        self.root.join("flip/srg.csv")
    }
    pub fn comparison_json(&self) -> PathBuf {
        self.root.join("stats/comparison.json")
    }
    pub fn pairs_csv(&self) -> PathBuf {
        self.root.join("stats/pairs.csv")
    }
    pub fn mrs_csv(&self) -> PathBuf {
        self.root.join("stats/mrs.csv")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    /// One file per (bag, method).
    pub fn heatmap(&self, method: Method, bag_id: &str) -> CliResult<PathBuf> {
        if bag_id.is_empty() || bag_id.contains(['/', '\\']) || bag_id.starts_with('.') {
            return Err(CliError::Config(format!("bag id {bag_id:?} is not usable as a file name")));
        }
        Ok(self.heatmap_dir().join(method.as_str()).join(format!("{bag_id}.csv")))
    }

    pub fn manifest(&self, cfg: &RunConfig) -> PathBuf {
        match &cfg.data {
            DataSource::Manifest(p) => p.clone(),
            DataSource::Generator(_) => self.data_dir().join("manifest.json"),
        }
    }
}

fn missing(path: &Path, stage: &str) -> CliError {
    CliError::MissingInput(format!("{} (run `{stage}` first)", path.display()))
}

fn load_data(cfg: &RunConfig, layout: &RunLayout) -> CliResult<(DatasetManifest, Dataset)> {
    let path = layout.manifest(cfg);
    if !path.is_file() {
        return Err(missing(&path, "gen-data"));
    }
    Ok(DatasetManifest::load_dataset(&path)?)
}

fn load_checkpoint(layout: &RunLayout) -> CliResult<ModelCheckpoint> {
    let path = layout.checkpoint();
    if !path.is_file() {
        return Err(missing(&path, "train"));
    }
    Ok(ModelCheckpoint::load(&path)?)
}

pub fn head_spec(m: &DatasetManifest) -> CliResult<TaskHeadSpec> {
    let need = |what: &str| CliError::Config(format!("manifest lacks {what}"));
    Ok(match m.task {
        TaskKind::Classification => TaskHeadSpec::Classification {
            classes: m.num_classes.ok_or_else(|| need("num_classes"))?,
        },
        TaskKind::Regression => TaskHeadSpec::Regression {
            reference_value: m.reference_value.ok_or_else(|| need("reference_value"))?,
        },
        TaskKind::Survival => TaskHeadSpec::Survival {
            intervals: m.intervals.ok_or_else(|| need("intervals"))?,
        },
    })
}

/// Bag ids explained and flipped, in split order.
pub fn eval_ids(cfg: &RunConfig, m: &DatasetManifest) -> Vec<String> {
    let ids: Vec<String> = match cfg.evaluation.split {
        EvalSplit::Test => m.splits.test.clone(),
        EvalSplit::Val => m.splits.val.clone(),
        EvalSplit::All => m.bags.keys().cloned().collect(),
    };
    match cfg.evaluation.max_bags {
        Some(k) => ids.into_iter().take(k).collect(),
        None => ids,
    }
}

fn target(cfg: &RunConfig, head: &TaskHeadSpec) -> CliResult<Option<ExplanationTarget>> {
    match (cfg.evaluation.class, head) {
        (None, _) => Ok(None),
        (Some(c), TaskHeadSpec::Classification { classes }) if c < *classes => {
            Ok(Some(ExplanationTarget::ClassLogit(c)))
        }
        (Some(c), TaskHeadSpec::Classification { classes }) => Err(CliError::Config(format!(
            "class {c} outside [0, {classes})"
        ))),
        (Some(_), _) => Err(CliError::Config("--class only applies to classification".into())),
    }
}

fn eval_bags(ds: &Dataset, ids: &[String]) -> CliResult<Vec<(String, Tensor)>> {
    ids.iter()
        .map(|id| {
            ds.bag(id)
                .map(|b| (id.clone(), b.features.clone()))
                .ok_or_else(|| CliError::Config(format!("evaluation bag {id} not in dataset")))
        })
        .collect()
}

pub fn gen_data(cfg: &RunConfig, layout: &RunLayout) -> CliResult<Vec<PathBuf>> {
    let DataSource::Generator(gen) = &cfg.data else {
        return Err(CliError::Config("gen-data needs a generator data source".into()));
    };
    let ds = generate(gen, cfg.seed)?;
    let dir = layout.data_dir();
    let m = DatasetManifest::write_dataset(&ds, &dir, cfg.fold, cfg.seed)?;
    let mut files = vec![dir.join("manifest.json")];
    for id in m.bags.keys() {
        files.push(m.bag_path(&dir, id)?);
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub files: Vec<PathBuf>,
    pub metric_name: Option<String>,
    pub val_metric: Option<f64>,
    pub best_epoch: usize,
}

pub fn train_stage(cfg: &RunConfig, layout: &RunLayout) -> CliResult<TrainOutcome> {
    let (m, ds) = load_data(cfg, layout)?;
    let spec = cfg.model.spec(m.dims, head_spec(&m)?);
    spec.validate()?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let result = train(&ds, &m.splits, spec, &tcfg)?;
    result.checkpoint.save(&layout.checkpoint())?;
    write_training_log(&layout.training_log(), &result.log)?;
    Ok(TrainOutcome {
        files: vec![layout.checkpoint(), layout.training_log()],
        metric_name: result.checkpoint.meta.metric_name.clone(),
        val_metric: result.checkpoint.meta.val_metric,
        best_epoch: result.checkpoint.meta.best_epoch,
    })
}

pub fn explain_stage(cfg: &RunConfig, layout: &RunLayout) -> CliResult<Vec<PathBuf>> {
    let (m, ds) = load_data(cfg, layout)?;
    let ckpt = load_checkpoint(layout)?;
    let model = ckpt.model()?;
    let target = target(cfg, &model.spec.head)?;
    let opts = ExplainOptions {
        ig_steps: cfg.evaluation.ig_steps,
        track: cfg.evaluation.track,
        lrp: cfg.evaluation.lrp,
        seed: cfg.seed,
    };
    let bags = eval_bags(&ds, &eval_ids(cfg, &m))?;
    let methods = &cfg.evaluation.methods;
    let maps: Vec<Heatmap> = bags
        .par_iter()
        .flat_map_iter(|(id, x)| {
            methods
                .iter()
                .map(|&method| explain(&model, id, x, method, target, &opts))
                .collect::<Vec<_>>()
        })
        .collect::<Result<_, _>>()?;
    let mut files = Vec::with_capacity(maps.len());
    for h in &maps {
        let path = layout.heatmap(h.method, &h.bag_id)?;
        write_heatmaps(&path, std::slice::from_ref(h))?;
        files.push(path);
    }
    Ok(files)
}

pub fn flip_stage(cfg: &RunConfig, layout: &RunLayout) -> CliResult<Vec<PathBuf>> {
    let (m, ds) = load_data(cfg, layout)?;
    let model = load_checkpoint(layout)?.model()?;
    let bags = eval_bags(&ds, &eval_ids(cfg, &m))?;
    let methods = &cfg.evaluation.methods;
    let mut maps = Vec::with_capacity(bags.len() * methods.len());
    for (id, _) in &bags {
        for &method in methods {
            let path = layout.heatmap(method, id)?;
            if !path.is_file() {
                return Err(missing(&path, "explain"));
            }
            maps.extend(read_heatmaps(&path)?);
        }
    }
    let matrix = evaluate_cohort(&model, &bags, &maps, methods, cfg.evaluation.track)?;
    write_curves(&layout.curves(), &matrix.records)?;
    write_srg(&layout.srg(), &matrix.records)?;
    Ok(vec![layout.curves(), layout.srg()])
}

pub fn stats_stage(cfg: &RunConfig, layout: &RunLayout) -> CliResult<(Vec<PathBuf>, ComparisonTable)> {
    let path = layout.srg();
    if !path.is_file() {
        return Err(missing(&path, "flip"));
    }
    let table = compare_methods(&read_srg(&path)?, cfg.stats.alpha)?;
    table.write_json(&layout.comparison_json())?;
    table.write_pairs_csv(&layout.pairs_csv())?;
    table.write_mrs_csv(&layout.mrs_csv())?;
    Ok((
        vec![layout.comparison_json(), layout.pairs_csv(), layout.mrs_csv()],
        table,
    ))
}

pub fn report_stage(cfg: &RunConfig, layout: &RunLayout) -> CliResult<Vec<PathBuf>> {
    for (path, stage) in [(layout.curves(), "flip"), (layout.comparison_json(), "stats")] {
        if !path.is_file() {
            return Err(missing(&path, stage));
        }
    }
    let records = read_curves(&layout.curves())?;
    let table = ComparisonTable::read_json(&layout.comparison_json())?;
    let dir = layout.report_dir();
    let mut out = Vec::new();
    let mut emit = |name: String, svg: String| -> CliResult<()> {
        let path = dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        out.push(path);
        Ok(())
    };
    let mut bag_order: Vec<&str> = Vec::new();
    for r in &records {
        if !bag_order.contains(&r.bag_id.as_str()) {
            bag_order.push(&r.bag_id);
        }
    }
    for id in bag_order.iter().take(cfg.report.curve_bags) {
        let rows: Vec<_> = records.iter().filter(|r| r.bag_id == *id).collect();
        emit(format!("curves_{id}.svg"), report::curve_plot(id, &rows))?;
    }
    emit("srg_strip.svg".into(), report::srg_strip(&table.methods, &records))?;
    emit("effects.svg".into(), report::effect_matrix(&table))?;
    emit("mrs.svg".into(), report::mrs_bars(&table))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub started_at: String,
    pub finished_at: String,
    pub config: RunConfig,
    pub train: TrainOutcome,
    pub best_method: Method,
    pub verdict: String,
    /// Stage name to emitted files, relative to the run directory.
    pub files: BTreeMap<String, Vec<PathBuf>>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// All stages in order, then `summary.json`.
pub fn run_all(cfg: &RunConfig, layout: &RunLayout) -> CliResult<Summary> {
    let started_at = now();
    let mut files = BTreeMap::new();
    if matches!(cfg.data, DataSource::Generator(_)) {
        files.insert("gen-data".to_string(), gen_data(cfg, layout)?);
    }
    let trained = train_stage(cfg, layout)?;
    files.insert("train".into(), trained.files.clone());
    files.insert("explain".into(), explain_stage(cfg, layout)?);
    files.insert("flip".into(), flip_stage(cfg, layout)?);
    let (stats_files, table) = stats_stage(cfg, layout)?;
    files.insert("stats".into(), stats_files);
    files.insert("report".into(), report_stage(cfg, layout)?);
    let rel = |p: PathBuf| p.strip_prefix(&layout.root).map(Path::to_path_buf).unwrap_or(p);
    let files = files
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(rel).collect()))
        .collect();
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        started_at,
        finished_at: now(),
        config: cfg.clone(),
        train: TrainOutcome {
            files: trained.files.into_iter().map(rel).collect(),
            ..trained
        },
        best_method: table.best,
        verdict: table.verdict(),
        files,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    write_atomic(&layout.summary(), &bytes)?;
    Ok(summary)
}
