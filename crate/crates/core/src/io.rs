//! CSV ingestion with stationarity transforms, run configuration, and the
//! end-to-end pipeline and simulation drivers that write report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covariance::{standardize, TimeSeriesPanel};
use crate::cv::{CvConfig, MatrixKind, DEFAULT_GRID_SIZE, DEFAULT_N_SPLITS};
use crate::error::{Result, SceError};
use crate::groupwise::{fit, BandwidthRule, FitConfig, GroupwiseFit};
use crate::matrix::format_f64;
use crate::pipeline::{build_model_spec, cluster_with, screen, ClusterMode, ClusterResult, ScreenResult};
use crate::sim::{gen_index_panel, gen_panel, make_sparse_cov, CovStructure, DependenceSpec, IndexModel};

/// Per-column stationarity transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformCode {
    Level,
    Log,
    Diff1,
    Diff2,
    LogDiff1,
    LogDiff2,
}

impl TransformCode {
    /// Leading rows lost to differencing.
    pub fn lag(self) -> usize {
        match self {
            TransformCode::Level | TransformCode::Log => 0,
            TransformCode::Diff1 | TransformCode::LogDiff1 => 1,
            TransformCode::Diff2 | TransformCode::LogDiff2 => 2,
        }
    }

    pub fn uses_log(self) -> bool {
        matches!(self, TransformCode::Log | TransformCode::LogDiff1 | TransformCode::LogDiff2)
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformCode::Level => "level",
            TransformCode::Log => "log",
            TransformCode::Diff1 => "diff1",
            TransformCode::Diff2 => "diff2",
            TransformCode::LogDiff1 => "log_diff1",
            TransformCode::LogDiff2 => "log_diff2",
        }
    }

    /// Applies the transform to a raw column. The output is `lag()` values
    /// shorter than the input. `first_row` is the file row of `raw[0]`,
    /// used in error locations.
    pub fn apply(self, raw: &[f64], label: &str, first_row: usize) -> Result<Vec<f64>> {
        let base: Vec<f64> = if self.uses_log() {
            raw.iter()
                .enumerate()
                .map(|(t, &v)| {
                    if v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(SceError::Data {
                            row: first_row + t,
                            column: label.to_string(),
                            message: format!("log transform needs a positive value, got {v}"),
                        })
                    }
                })
                .collect::<Result<_>>()?
        } else {
            raw.to_vec()
        };
        let mut out = base;
        for _ in 0..self.lag() {
            out = out.windows(2).map(|w| w[1] - w[0]).collect();
        }
        Ok(out)
    }
}

impl FromStr for TransformCode {
    type Err = SceError;

    /// Accepts the names above or the numeric codes 1 to 6 (level, diff1,
    /// diff2, log, log_diff1, log_diff2).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "level" | "1" => Ok(TransformCode::Level),
            "diff1" | "2" => Ok(TransformCode::Diff1),
            "diff2" | "3" => Ok(TransformCode::Diff2),
            "log" | "4" => Ok(TransformCode::Log),
            "log_diff1" | "5" => Ok(TransformCode::LogDiff1),
            "log_diff2" | "6" => Ok(TransformCode::LogDiff2),
            other => Err(SceError::invalid(format!("unknown transform code `{other}`"))),
        }
    }
}

/// Column label to transform; columns not listed stay in levels.
pub type TransformMap = BTreeMap<String, TransformCode>;

/// Reads a two-column `label,code` CSV into a transform map.
pub fn read_transform_map<R: Read>(reader: R) -> Result<TransformMap> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut map = TransformMap::new();
    for (ri, rec) in r.records().enumerate() {
        let rec = rec?;
        let (label, code) = match (rec.get(0), rec.get(1)) {
            (Some(l), Some(c)) => (l.trim(), c.trim()),
            _ => {
                return Err(SceError::Parse {
                    row: ri + 2,
                    column: "code".into(),
                    message: "expected `label,code`".into(),
                })
            }
        };
        let code = code.parse().map_err(|e: SceError| SceError::Parse {
            row: ri + 2,
            column: "code".into(),
            message: e.to_string(),
        })?;
        map.insert(label.to_string(), code);
    }
    Ok(map)
}

/// Raw numeric table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub time_index: Option<Vec<i64>>,
}

/// Reads a header row of labels followed by one numeric row per period.
/// When `time_column` is given that column is removed from the data and,
/// if its values are strictly increasing integers, kept as the time index.
pub fn read_table<R: Read>(reader: R, time_column: Option<&str>) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let time_pos = match time_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SceError::invalid(format!("time column `{name}` not found")))?,
        ),
        None => None,
    };
    let labels: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != time_pos)
        .map(|(_, h)| h.clone())
        .collect();
    let mut columns = vec![Vec::new(); labels.len()];
    let mut stamps = Vec::new();
    for (ri, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = ri + 2;
        let mut k = 0;
        for (ci, cell) in rec.iter().enumerate() {
            if Some(ci) == time_pos {
                stamps.push(cell.trim().parse::<i64>().ok());
                continue;
            }
            let v = cell.trim().parse::<f64>().map_err(|e| SceError::Parse {
                row,
                column: header[ci].clone(),
                message: format!("`{cell}` is not a number ({e})"),
            })?;
            if !v.is_finite() {
                return Err(SceError::Parse {
                    row,
                    column: header[ci].clone(),
                    message: format!("`{cell}` is not a finite number"),
                });
            }
            columns[k].push(v);
            k += 1;
        }
    }
    let time_index = time_pos
        .and_then(|_| stamps.into_iter().collect::<Option<Vec<i64>>>())
        .filter(|s| s.windows(2).all(|w| w[1] > w[0]));
    Ok(RawTable {
        labels,
        columns,
        time_index,
    })
}

/// Transforms each column, drops the leading rows lost to the largest lag
/// from every column so they stay aligned, and standardizes.
pub fn transform_table(table: &RawTable, map: &TransformMap) -> Result<TimeSeriesPanel> {
    for label in map.keys() {
        if !table.labels.contains(label) {
            return Err(SceError::invalid(format!("transform given for unknown column `{label}`")));
        }
    }
    let code = |l: &String| map.get(l).copied().unwrap_or(TransformCode::Level);
    let max_lag = table.labels.iter().map(|l| code(l).lag()).max().unwrap_or(0);
    let n_raw = table.columns.first().map_or(0, |c| c.len());
    let remaining = n_raw.saturating_sub(max_lag);
    if remaining < 2 {
        return Err(SceError::InsufficientData {
            required: max_lag + 2,
            actual: n_raw,
        });
    }
    let columns = table
        .labels
        .iter()
        .zip(&table.columns)
        .map(|(l, c)| {
            let c_code = code(l);
            let out = c_code.apply(c, l, 2)?;
            Ok(out[max_lag - c_code.lag()..].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut panel = TimeSeriesPanel::from_columns(table.labels.clone(), columns)?;
    if let Some(idx) = &table.time_index {
        panel = panel.with_time_index(idx[max_lag..].to_vec())?;
    }
    standardize(&panel)
}

/// Reads, transforms, trims and standardizes a CSV file.
pub fn ingest(path: &Path, map: &TransformMap) -> Result<TimeSeriesPanel> {
    ingest_with(path, map, None)
}

pub fn ingest_with(path: &Path, map: &TransformMap, time_column: Option<&str>) -> Result<TimeSeriesPanel> {
    let file = fs::File::open(path).map_err(|e| {
        SceError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    transform_table(&read_table(file, time_column)?, map)
}

/// Writes a panel as CSV with a header of labels (and a leading `t`
/// column when the panel carries a time index).
pub fn write_panel_csv<W: Write>(panel: &TimeSeriesPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let idx = panel.time_index();
    let mut header: Vec<String> = Vec::new();
    if idx.is_some() {
        header.push("t".into());
    }
    header.extend(panel.labels().iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.n_obs() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(idx) = idx {
            rec.push(idx[t].to_string());
        }
        rec.extend(panel.columns().iter().map(|c| format_f64(c[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored, later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SceError::Parse {
            row: n + 1,
            column: "config".into(),
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Everything needed for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub response: String,
    pub transforms: TransformMap,
    pub time_column: Option<String>,
    pub mode: ClusterMode,
    pub seed: u64,
    pub output: PathBuf,
    pub splits: usize,
    pub grid_size: usize,
    /// Overrides for the cross-validation segment lengths.
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    /// Rescale the cross-validated threshold to the full sample length.
    pub rescale: bool,
    pub fit: FitConfig,
}

impl PipelineConfig {
    pub fn new(input: PathBuf, response: String, output: PathBuf) -> Self {
        PipelineConfig {
            input,
            response,
            transforms: TransformMap::new(),
            time_column: None,
            mode: ClusterMode::Forward,
            seed: 0,
            output,
            splits: DEFAULT_N_SPLITS,
            grid_size: DEFAULT_GRID_SIZE,
            t1: None,
            t2: None,
            rescale: true,
            fit: FitConfig::default(),
        }
    }

    /// Builds a config from `key = value` pairs. Keys: `input`, `response`,
    /// `output`, `mode`, `seed`, `splits`, `grid_size`, `t1`, `t2`,
    /// `rescale` (true or false), `tolerance`, `max_iter`, `bandwidth` (comma-separated, one per
    /// group), `time_column`, and `transform.<label>`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| SceError::invalid(format!("missing required key `{k}`")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| SceError::invalid(format!("key `{k}`: cannot parse `{v}`")))
        }
        let mut cfg = PipelineConfig::new(need("input")?.into(), need("response")?.into(), need("output")?.into());
        for (k, v) in pairs {
            match k.as_str() {
                "input" | "response" | "output" => {}
                "mode" => cfg.mode = v.parse()?,
                "seed" => cfg.seed = num(k, v)?,
                "splits" => cfg.splits = num(k, v)?,
                "grid_size" => cfg.grid_size = num(k, v)?,
                "t1" => cfg.t1 = Some(num(k, v)?),
                "t2" => cfg.t2 = Some(num(k, v)?),
                "rescale" => cfg.rescale = num(k, v)?,
                "tolerance" => cfg.fit.tolerance = num(k, v)?,
                "max_iter" => cfg.fit.max_iter = num(k, v)?,
                "bandwidth" => {
                    cfg.fit.bandwidth = if v == "rule_of_thumb" {
                        BandwidthRule::RuleOfThumb
                    } else {
                        BandwidthRule::Fixed(v.split(',').map(|h| num(k, h.trim())).collect::<Result<_>>()?)
                    }
                }
                "time_column" => cfg.time_column = Some(v.clone()),
                other => match other.strip_prefix("transform.") {
                    Some(label) => {
                        cfg.transforms.insert(label.to_string(), v.parse()?);
                    }
                    None => return Err(SceError::invalid(format!("unknown config key `{other}`"))),
                },
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.response.is_empty() {
            return Err(SceError::invalid("response label is empty"));
        }
        if self.splits == 0 || self.grid_size == 0 {
            return Err(SceError::invalid("splits and grid_size must be positive"));
        }
        if self.t1.is_some() != self.t2.is_some() {
            return Err(SceError::invalid("t1 and t2 must be given together"));
        }
        if !(self.fit.tolerance > 0.0) || self.fit.max_iter == 0 {
            return Err(SceError::invalid("tolerance must be positive and max_iter at least 1"));
        }
        Ok(())
    }

    /// Cross-validation settings for the Spearman screen of `panel`.
    pub fn cv_config(&self, panel: &TimeSeriesPanel) -> Result<CvConfig> {
        let mut cfg = CvConfig::for_panel(panel, MatrixKind::Spearman, self.splits, self.grid_size, self.seed)?
            .with_rescale(self.rescale);
        if let (Some(t1), Some(t2)) = (self.t1, self.t2) {
            cfg.t1 = t1;
            cfg.t2 = t2;
        }
        cfg.validate_for(panel.n_obs())?;
        Ok(cfg)
    }
}

/// An error annotated with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: SceError,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// Machine-readable description; `row` and `column` are included for
    /// location-carrying errors.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "status": "error",
            "stage": self.stage,
            "kind": self.error.kind(),
            "message": self.error.to_string(),
        });
        if let SceError::Parse { row, column, .. } | SceError::Data { row, column, .. } = &self.error {
            v["row"] = json!(row);
            v["column"] = json!(column);
        }
        v
    }
}

pub fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|error| StageError { stage: name, error })
}

/// Summary written to `report.json`. Contains no timestamps so identical
/// runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub selected_threshold: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub r_squared: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub panel: TimeSeriesPanel,
    pub screen: ScreenResult,
    pub clusters: ClusterResult,
    pub fit: GroupwiseFit,
    pub report: RunReport,
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

/// Screens and clusters an already ingested panel.
pub fn screen_and_cluster(
    panel: &TimeSeriesPanel,
    cfg: &PipelineConfig,
) -> std::result::Result<(ScreenResult, ClusterResult), StageError> {
    let cv = stage("screen", cfg.cv_config(panel))?;
    let sc = stage("screen", screen(panel, &cfg.response, &cv))?;
    let cl = stage("cluster", cluster_with(&sc, cfg.mode))?;
    Ok((sc, cl))
}

/// Ingest, screen, cluster and fit, writing every artifact to
/// `cfg.output`.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineOutput, StageError> {
    stage("config", cfg.validate())?;
    stage("output", fs::create_dir_all(&cfg.output).map_err(SceError::from))?;
    let panel = stage(
        "ingest",
        ingest_with(&cfg.input, &cfg.transforms, cfg.time_column.as_deref()),
    )?;
    let (sc, cl) = screen_and_cluster(&panel, cfg)?;
    let out = &cfg.output;
    stage("screen", pretty(&sc).and_then(|b| write_file(out, "screen.json", &b)))?;
    stage("cluster", pretty(&cl).and_then(|b| write_file(out, "clusters.json", &b)))?;
    stage("cluster", write_file(out, "clusters.txt", cl.render_text(&sc).as_bytes()))?;
    let spec = stage("estimate", build_model_spec(&sc, &cl, panel.labels()))?;
    let gf = stage("estimate", fit(&panel, &spec, &cfg.fit))?;
    stage("estimate", pretty(&gf).and_then(|b| write_file(out, "fit.json", &b)))?;
    stage("estimate", gf.save_links_csv(&out.join("links.csv")))?;
    let report = RunReport {
        selected_threshold: sc.threshold,
        k: sc.n_kept(),
        s: cl.sets.len(),
        r_squared: gf.r_squared,
        converged: gf.converged,
        iterations: gf.iterations,
    };
    stage("report", pretty(&report).and_then(|b| write_file(out, "report.json", &b)))?;
    let meta = json!({
        "generated_at_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    stage("report", pretty(&meta).and_then(|b| write_file(out, "meta.json", &b)))?;
    Ok(PipelineOutput {
        panel,
        screen: sc,
        clusters: cl,
        fit: gf,
        report,
    })
}

/// Parses `diagonal`, `block:3,3,4`, `banded:<bandwidth>,<decay>` or
/// `random_sparse:<density>`.
pub fn parse_structure(s: &str) -> Result<CovStructure> {
    let (name, args) = s.split_once(':').unwrap_or((s, ""));
    let nums = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = args
            .split(',')
            .filter(|a| !a.trim().is_empty())
            .map(|a| a.trim().parse().map_err(|_| SceError::invalid(format!("bad number `{a}` in `{s}`"))))
            .collect::<Result<_>>()?;
        if n > 0 && v.len() != n {
            return Err(SceError::invalid(format!("`{s}` needs {n} argument(s)")));
        }
        Ok(v)
    };
    let as_count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(SceError::invalid(format!("`{v}` is not a count")))
        }
    };
    match name {
        "diagonal" => Ok(CovStructure::Diagonal),
        "block" => Ok(CovStructure::Block {
            sizes: nums(0)?.into_iter().map(as_count).collect::<Result<_>>()?,
        }),
        "banded" => {
            let v = nums(2)?;
            Ok(CovStructure::Banded {
                bandwidth: as_count(v[0])?,
                decay: v[1],
            })
        }
        "random_sparse" => Ok(CovStructure::RandomSparse { density: nums(1)?[0] }),
        other => Err(SceError::invalid(format!("unknown structure `{other}`"))),
    }
}

/// Parses `iid`, `m:<m>` or `var:<spectral radius>` (a scaled identity
/// coefficient matrix).
pub fn parse_dependence(s: &str, dim: usize) -> Result<DependenceSpec> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let bad = || SceError::invalid(format!("cannot parse dependence `{s}`"));
    match name {
        "iid" => Ok(DependenceSpec::Iid),
        "m" => Ok(DependenceSpec::MDependent {
            m: arg.trim().parse().map_err(|_| bad())?,
        }),
        "var" => DependenceSpec::var1_scaled_identity(dim, arg.trim().parse().map_err(|_| bad())?),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub dim: usize,
    pub structure: CovStructure,
    pub dependence: DependenceSpec,
    pub n_obs: usize,
    pub seed: u64,
    /// Appends a response column `y` drawn from this model.
    pub index_model: Option<IndexModel>,
    pub output: PathBuf,
}

/// Writes `panel.csv`, `truth_sigma.csv` and `model.json`.
pub fn simulate_cmd(cfg: &SimulateConfig) -> std::result::Result<TimeSeriesPanel, StageError> {
    let model = stage("simulate", make_sparse_cov(cfg.dim, cfg.structure.clone(), cfg.seed))?;
    let panel = stage(
        "simulate",
        match &cfg.index_model {
            Some(im) => gen_index_panel(&model, &cfg.dependence, im, cfg.n_obs, cfg.seed, "y"),
            None => gen_panel(&model, &cfg.dependence, cfg.n_obs, cfg.seed),
        },
    )?;
    let out = &cfg.output;
    stage("output", fs::create_dir_all(out).map_err(SceError::from))?;
    stage(
        "output",
        fs::File::create(out.join("panel.csv"))
            .map_err(SceError::from)
            .and_then(|f| write_panel_csv(&panel, f)),
    )?;
    stage(
        "output",
        fs::File::create(out.join("truth_sigma.csv"))
            .map_err(SceError::from)
            .and_then(|f| model.sigma.write_csv(f)),
    )?;
    let doc = json!({
        "model": model,
        "dependence": cfg.dependence,
        "n_obs": cfg.n_obs,
        "seed": cfg.seed,
        "index_model": cfg.index_model,
    });
    stage("output", pretty(&doc).and_then(|b| write_file(out, "model.json", &b)))?;
    Ok(panel)
}
