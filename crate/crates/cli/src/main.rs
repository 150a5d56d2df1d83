use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xmil_cli::config::RunConfig;
use xmil_cli::pipeline::{self, RunLayout};
use xmil_cli::{CliError, CliResult};
use xmil_core::explainers::{Method, Track};

#[derive(Parser)]
#[command(name = "xmil", version, about = "Compare instance-level explanations of MIL models by patch flipping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(Common),
    /// Train a model and keep the best validation checkpoint.
    Train(Common),
    /// Write one heatmap per (bag, method).
    Explain(Common),
    /// Patch-flip every heatmap; writes curves and SRG.
    Flip(Common),
    /// Pairwise Wilcoxon effects, FDR and Mean Rank Scores from the SRG file.
    Stats(Common),
    /// SVG plots from the flip and stats outputs.
    Report(Common),
    /// Every stage in order plus summary.json.
    RunAll(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; relative paths resolve against XMIL_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated explanation methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Explained class for classification tasks.
    #[arg(long)]
    class: Option<usize>,
    /// Tracked output while flipping: softmax or logit.
    #[arg(long)]
    track: Option<Track>,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = &self.methods {
            cfg.evaluation.methods = m.clone();
        }
        if let Some(c) = self.class {
            cfg.evaluation.class = Some(c);
        }
        if let Some(t) = self.track {
            cfg.evaluation.track = t;
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        }
        Ok(cfg)
    }
}

fn report(stage: &str, files: &[PathBuf]) {
    eprintln!("{stage}: wrote {} file(s)", files.len());
}

fn run(cli: Cli) -> CliResult<()> {
    let (cmd, common) = match &cli.command {
        Command::GenData(c) => ("gen-data", c),
        Command::Train(c) => ("train", c),
        Command::Explain(c) => ("explain", c),
        Command::Flip(c) => ("flip", c),
        Command::Stats(c) => ("stats", c),
        Command::Report(c) => ("report", c),
        Command::RunAll(c) => ("run-all", c),
    };
    let cfg = common.resolve()?;
    let layout = RunLayout::new(cfg.out_dir());
    match cmd {
        "gen-data" => report(cmd, &pipeline::gen_data(&cfg, &layout)?),
        "train" => {
            let t = pipeline::train_stage(&cfg, &layout)?;
            report(cmd, &t.files);
            if let (Some(name), Some(v)) = (&t.metric_name, t.val_metric) {
                println!("validation {name}: {v:.4} (epoch {})", t.best_epoch);
            }
        }
        "explain" => report(cmd, &pipeline::explain_stage(&cfg, &layout)?),
        "flip" => report(cmd, &pipeline::flip_stage(&cfg, &layout)?),
        "stats" => {
            let (files, table) = pipeline::stats_stage(&cfg, &layout)?;
            report(cmd, &files);
            println!("{}", table.verdict());
        }
        "report" => report(cmd, &pipeline::report_stage(&cfg, &layout)?),
        _ => {
            let s = pipeline::run_all(&cfg, &layout)?;
            if let (Some(name), Some(v)) = (&s.train.metric_name, s.train.val_metric) {
                println!("validation {name}: {v:.4}");
            }
            println!("{}", s.verdict);
            println!("summary: {}", layout.summary().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
