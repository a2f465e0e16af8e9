use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sce_core::cv::{select_threshold, CvConfig, MatrixKind};
use sce_core::error::SceError;
use sce_core::io::{
    ingest_with, parse_dependence, parse_key_values, parse_structure, run_pipeline, screen_and_cluster, simulate_cmd,
    stage, PipelineConfig, SimulateConfig, StageError,
};
use sce_core::sim::IndexModel;

#[derive(Parser)]
#[command(name = "sce", version, about = "Thresholded covariance estimation and screen-cluster-estimate modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, screen, cluster and fit; writes reports to the output directory.
    Run(RunArgs),
    /// Generate a synthetic panel with a known sparse covariance.
    Simulate(SimulateArgs),
    /// Cross-validate the hard threshold of a covariance or Spearman matrix.
    Threshold(ThresholdArgs),
    /// Screen and cluster only.
    Cluster(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// forward or backward
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, env = "SCE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    t2: Option<usize>,
    /// Rescale the cross-validated threshold to the full sample (true/false).
    #[arg(long)]
    rescale: Option<bool>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// `rule_of_thumb` or comma-separated bandwidths, one per group.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    time_column: Option<String>,
    /// `label=code`, repeatable; codes are level, log, diff1, diff2,
    /// log_diff1, log_diff2 or 1-6.
    #[arg(long = "transform", value_name = "LABEL=CODE")]
    transforms: Vec<String>,
}

impl RunArgs {
    fn to_config(&self) -> Result<PipelineConfig, SceError> {
        let mut pairs = match &self.config {
            Some(path) => parse_key_values(&fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        set("input", self.input.as_ref().map(|p| p.display().to_string()));
        set("response", self.response.clone());
        set("output", self.output.as_ref().map(|p| p.display().to_string()));
        set("mode", self.mode.clone());
        set("seed", self.seed.map(|v| v.to_string()));
        set("splits", self.splits.map(|v| v.to_string()));
        set("grid_size", self.grid_size.map(|v| v.to_string()));
        set("t1", self.t1.map(|v| v.to_string()));
        set("t2", self.t2.map(|v| v.to_string()));
        set("rescale", self.rescale.map(|v| v.to_string()));
        set("tolerance", self.tolerance.map(|v| v.to_string()));
        set("max_iter", self.max_iter.map(|v| v.to_string()));
        set("bandwidth", self.bandwidth.clone());
        set("time_column", self.time_column.clone());
        for t in &self.transforms {
            let (label, code) = t
                .split_once('=')
                .ok_or_else(|| SceError::InvalidArgument(format!("transform `{t}` is not LABEL=CODE")))?;
            pairs.insert(format!("transform.{}", label.trim()), code.trim().to_string());
        }
        PipelineConfig::from_pairs(&pairs)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    dim: usize,
    /// diagonal, block:<sizes>, banded:<bandwidth>,<decay> or random_sparse:<density>
    #[arg(long, default_value = "diagonal")]
    structure: String,
    /// iid, m:<m> or var:<spectral radius>
    #[arg(long, default_value = "iid")]
    dependence: String,
    #[arg(long)]
    n_obs: usize,
    #[arg(long, env = "SCE_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON index model; appends a response column `y`.
    #[arg(long)]
    index_model: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Covariance,
    Spearman,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Spearman)]
    kind: Kind,
    #[arg(long, default_value_t = sce_core::cv::DEFAULT_N_SPLITS)]
    splits: usize,
    #[arg(long, default_value_t = sce_core::cv::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, env = "SCE_SEED", default_value_t = 0)]
    seed: u64,
    /// Apply the segment-level threshold unchanged to the full sample.
    #[arg(long)]
    no_rescale: bool,
    #[arg(long)]
    time_column: Option<String>,
    #[arg(long = "transform", value_name = "LABEL=CODE")]
    transforms: Vec<String>,
    /// Directory for cv.json and the thresholded matrix; stdout only if absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn config_error(e: SceError) -> StageError {
    StageError {
        stage: "config",
        error: e,
    }
}

fn run(cmd: Command) -> Result<serde_json::Value, StageError> {
    match cmd {
        Command::Run(args) => {
            let cfg = args.to_config().map_err(config_error)?;
            let out = run_pipeline(&cfg)?;
            Ok(json!({"status": "ok", "report": out.report, "output": cfg.output}))
        }
        Command::Cluster(args) => {
            let cfg = args.to_config().map_err(config_error)?;
            let panel = stage("ingest", ingest_with(&cfg.input, &cfg.transforms, cfg.time_column.as_deref()))?;
            let (sc, cl) = screen_and_cluster(&panel, &cfg)?;
            stage("output", fs::create_dir_all(&cfg.output).map_err(SceError::from))?;
            let write = |name: &str, bytes: Vec<u8>| -> Result<(), SceError> {
                fs::write(cfg.output.join(name), bytes)?;
                Ok(())
            };
            stage("output", serde_json::to_vec_pretty(&sc).map_err(SceError::from).and_then(|b| write("screen.json", b)))?;
            stage("output", serde_json::to_vec_pretty(&cl).map_err(SceError::from).and_then(|b| write("clusters.json", b)))?;
            let text = cl.render_text(&sc);
            stage("output", write("clusters.txt", text.clone().into_bytes()))?;
            Ok(json!({"status": "ok", "threshold": sc.threshold, "kept": sc.kept_labels, "sets": cl.set_labels}))
        }
        Command::Threshold(args) => {
            let mut map = BTreeMap::new();
            for t in &args.transforms {
                let (label, code) = t
                    .split_once('=')
                    .ok_or_else(|| config_error(SceError::InvalidArgument(format!("transform `{t}` is not LABEL=CODE"))))?;
                map.insert(label.trim().to_string(), code.parse().map_err(config_error)?);
            }
            let panel = stage("ingest", ingest_with(&args.input, &map, args.time_column.as_deref()))?;
            let kind = match args.kind {
                Kind::Covariance => MatrixKind::Covariance,
                Kind::Spearman => MatrixKind::Spearman,
            };
            let cfg = stage("threshold", CvConfig::for_panel(&panel, kind, args.splits, args.grid_size, args.seed).map(|c| c.with_rescale(!args.no_rescale)))?;
            let cv = stage("threshold", select_threshold(&panel, &cfg, kind))?;
            if let Some(dir) = &args.output {
                let est = stage("threshold", kind.estimate(&panel))?;
                let reg = stage("threshold", est.hard_threshold(cv.full_sample_threshold))?;
                stage("output", fs::create_dir_all(dir).map_err(SceError::from))?;
                stage(
                    "output",
                    serde_json::to_vec_pretty(&cv)
                        .map_err(SceError::from)
                        .and_then(|b| fs::write(dir.join("cv.json"), b).map_err(SceError::from)),
                )?;
                stage(
                    "output",
                    fs::File::create(dir.join("regularized.csv"))
                        .map_err(SceError::from)
                        .and_then(|f| reg.write_csv(f)),
                )?;
            }
            Ok(json!({"status": "ok", "selected": cv.selected, "full_sample_threshold": cv.full_sample_threshold, "t1": cv.t1, "t2": cv.t2, "n_splits": cv.n_splits}))
        }
        Command::Simulate(args) => {
            let index_model = match &args.index_model {
                Some(p) => Some(
                    fs::read_to_string(p)
                        .map_err(SceError::from)
                        .and_then(|s| serde_json::from_str::<IndexModel>(&s).map_err(SceError::from))
                        .map_err(config_error)?,
                ),
                None => None,
            };
            let cfg = SimulateConfig {
                dim: args.dim,
                structure: parse_structure(&args.structure).map_err(config_error)?,
                dependence: parse_dependence(&args.dependence, args.dim).map_err(config_error)?,
                n_obs: args.n_obs,
                seed: args.seed,
                index_model,
                output: args.output.clone(),
            };
            let panel = simulate_cmd(&cfg)?;
            Ok(json!({"status": "ok", "n_obs": panel.n_obs(), "n_vars": panel.n_vars(), "output": args.output}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
