//! Browser bindings for the static demo page in `www/`. Every export takes
//! plain numbers and strings and returns a JSON string; failures come back
//! as `{"error": "..."}` so the page never has to catch exceptions.

use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sce_core::covariance::spearman_matrix;
use sce_core::cv::{select_threshold, CvConfig, MatrixKind};
use sce_core::error::SceError;
use sce_core::io::parse_structure;
use sce_core::matrix::SymMatrix;
use sce_core::pipeline::{cluster_with, ClusterMode, ScreenResult};
use sce_core::sim::{gen_index_panel, gen_panel, make_sparse_cov, DependenceSpec, IndexModel, Link};

type Result<T> = std::result::Result<T, SceError>;

const MAX_DIM: usize = 60;
const MAX_OBS: usize = 5000;

fn check_size(dim: usize, n_obs: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(SceError::InvalidArgument(format!("dimension must be in 1..={MAX_DIM}")));
    }
    if n_obs > MAX_OBS {
        return Err(SceError::InvalidArgument(format!("at most {MAX_OBS} observations")));
    }
    Ok(())
}

fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
}

fn off_diagonal_support(m: &SymMatrix) -> usize {
    (0..m.dim()).flat_map(|i| (0..m.dim()).map(move |j| (i, j))).filter(|&(i, j)| i != j && m.get(i, j) != 0.0).count()
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({"error": e.to_string()}).to_string()),
        Err(e) => json!({"error": e.to_string()}).to_string(),
    }
}

fn parse_kind(kind: &str) -> Result<MatrixKind> {
    match kind {
        "covariance" => Ok(MatrixKind::Covariance),
        "spearman" => Ok(MatrixKind::Spearman),
        other => Err(SceError::InvalidArgument(format!("unknown matrix kind `{other}`"))),
    }
}

/// Simulates a panel, estimates its covariance (or Spearman matrix) and
/// hard-thresholds it at `threshold`, reporting errors against the truth.
pub fn threshold_explorer_value(
    structure: &str,
    dim: usize,
    n_obs: usize,
    seed: u64,
    threshold: f64,
    kind: &str,
) -> Result<Value> {
    check_size(dim, n_obs)?;
    let model = make_sparse_cov(dim, parse_structure(structure)?, seed)?;
    let panel = gen_panel(&model, &DependenceSpec::Iid, n_obs, seed)?;
    let est = parse_kind(kind)?.estimate(&panel)?;
    let reg = est.hard_threshold(threshold)?;
    let diff = reg.sub(&model.sigma)?;
    Ok(json!({
        "labels": est.labels(),
        "truth": rows(&model.sigma),
        "estimate": rows(&est),
        "thresholded": rows(&reg),
        "support": off_diagonal_support(&reg),
        "true_support": off_diagonal_support(&model.sigma),
        "frobenius_error": diff.frobenius_norm(),
        "operator_error": diff.operator_norm(),
        "min_eigenvalue": reg.min_eigenvalue(),
    }))
}

/// Cross-validation loss curve over the default grid, alongside the true
/// Frobenius error of each grid threshold applied to the full sample.
pub fn cv_curve_value(
    structure: &str,
    dim: usize,
    n_obs: usize,
    seed: u64,
    splits: usize,
    grid_size: usize,
) -> Result<Value> {
    check_size(dim, n_obs)?;
    let model = make_sparse_cov(dim, parse_structure(structure)?, seed)?;
    let panel = gen_panel(&model, &DependenceSpec::Iid, n_obs, seed)?;
    let kind = MatrixKind::Covariance;
    let cfg = CvConfig::for_panel(&panel, kind, splits, grid_size, seed)?;
    let cv = select_threshold(&panel, &cfg, kind)?;
    let est = kind.estimate(&panel)?;
    let true_errors = cv
        .grid
        .iter()
        .map(|&s| Ok(est.hard_threshold(s)?.sub(&model.sigma)?.frobenius_norm()))
        .collect::<Result<Vec<f64>>>()?;
    let rescaled_error = est.hard_threshold(cv.full_sample_threshold)?.sub(&model.sigma)?.frobenius_norm();
    Ok(json!({
        "grid": cv.grid,
        "losses": cv.losses,
        "selected": cv.selected,
        "full_sample_threshold": cv.full_sample_threshold,
        "true_errors": true_errors,
        "rescaled_error": rescaled_error,
        "t1": cv.t1,
        "t2": cv.t2,
    }))
}

fn parse_sizes(blocks: &str) -> Result<Vec<usize>> {
    blocks
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| SceError::InvalidArgument(format!("bad block size `{s}`")))
        })
        .collect()
}

/// Block predictors with a response driven by the first two blocks; screens
/// the Spearman matrix at `threshold` and clusters the kept variables.
pub fn cluster_explorer_value(blocks: &str, n_obs: usize, seed: u64, threshold: f64, mode: &str) -> Result<Value> {
    let sizes = parse_sizes(blocks)?;
    let dim: usize = sizes.iter().sum();
    check_size(dim, n_obs)?;
    let mode = match mode {
        "forward" => ClusterMode::Forward,
        "backward" => ClusterMode::Backward,
        other => return Err(SceError::InvalidArgument(format!("unknown mode `{other}`"))),
    };
    let mut starts = vec![0];
    for s in &sizes {
        starts.push(starts.last().unwrap() + s);
    }
    let active = sizes.len().min(2);
    let groups: Vec<Vec<usize>> = (0..active).map(|b| (starts[b]..starts[b + 1]).collect()).collect();
    let betas = groups.iter().map(|g| vec![1.0 / (g.len() as f64).sqrt(); g.len()]).collect();
    let index = IndexModel {
        groups,
        betas,
        links: [Link::Tanh, Link::Identity][..active].to_vec(),
        noise_sd: 0.3,
    };
    let model = make_sparse_cov(dim, sce_core::sim::CovStructure::Block { sizes }, seed)?;
    let panel = gen_index_panel(&model, &DependenceSpec::Iid, &index, n_obs, seed, "y")?;
    let spearman = spearman_matrix(&panel)?;
    let screen = ScreenResult::from_regularized(&spearman.hard_threshold(threshold)?, dim, threshold)?;
    let clusters = cluster_with(&screen, mode)?;
    let mut order: Vec<usize> = Vec::new();
    for set in &clusters.sets {
        for v in set {
            if let Some(p) = screen.position_of(*v) {
                if !order.contains(&p) {
                    order.push(p);
                }
            }
        }
    }
    let pattern: Vec<Vec<f64>> = order.iter().map(|&i| order.iter().map(|&j| screen.regularized.get(i, j)).collect()).collect();
    Ok(json!({
        "kept": screen.kept_labels,
        "sets": clusters.set_labels,
        "scores": clusters.scores,
        "order": order.iter().map(|&p| screen.kept_labels[p].clone()).collect::<Vec<_>>(),
        "pattern": pattern,
        "response_correlations": screen.response_correlations,
        "text": clusters.render_text(&screen),
    }))
}

#[wasm_bindgen]
pub fn threshold_explorer(structure: &str, dim: usize, n_obs: usize, seed: u32, threshold: f64, kind: &str) -> String {
    to_json(threshold_explorer_value(structure, dim, n_obs, seed as u64, threshold, kind))
}

#[wasm_bindgen]
pub fn cv_curve(structure: &str, dim: usize, n_obs: usize, seed: u32, splits: usize, grid_size: usize) -> String {
    to_json(cv_curve_value(structure, dim, n_obs, seed as u64, splits, grid_size))
}

#[wasm_bindgen]
pub fn cluster_explorer(blocks: &str, n_obs: usize, seed: u32, threshold: f64, mode: &str) -> String {
    to_json(cluster_explorer_value(blocks, n_obs, seed as u64, threshold, mode))
}
