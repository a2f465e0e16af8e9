//! Threshold selection by time-series cross-validation.
//!
//! Each split draws a random consecutive window of `t1 + t2` rows; the first
//! `t1` rows give the estimate that gets thresholded and the following `t2`
//! rows give the unthresholded proxy target. The selected threshold
//! minimizes the mean squared Frobenius distance over all splits.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{sample_covariance, spearman_matrix, TimeSeriesPanel};
use crate::error::{Result, SceError};
use crate::matrix::SymMatrix;
use crate::par;

/// Which estimator the cross-validation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Covariance,
    Spearman,
}

impl MatrixKind {
    pub fn estimate(self, panel: &TimeSeriesPanel) -> Result<SymMatrix> {
        match self {
            MatrixKind::Covariance => sample_covariance(panel),
            MatrixKind::Spearman => spearman_matrix(panel),
        }
    }
}

impl std::str::FromStr for MatrixKind {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance" => Ok(MatrixKind::Covariance),
            "spearman" => Ok(MatrixKind::Spearman),
            other => Err(SceError::invalid(format!("unknown matrix kind `{other}`"))),
        }
    }
}

pub const DEFAULT_N_SPLITS: usize = 100;
pub const DEFAULT_GRID_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub t1: usize,
    pub t2: usize,
    pub n_splits: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    /// Rescale the selected threshold from the `t1`-row segment to the full
    /// sample by `sqrt(t1 / T)` before it is applied to a full-sample
    /// estimate.
    #[serde(default = "default_rescale")]
    pub rescale: bool,
}

fn default_rescale() -> bool {
    true
}

impl CvConfig {
    pub fn new(t1: usize, t2: usize, n_splits: usize, grid: Vec<f64>, seed: u64) -> Result<Self> {
        let cfg = CvConfig {
            t1,
            t2,
            n_splits,
            grid,
            seed,
            rescale: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the parts of the configuration that do not depend on a panel.
    pub fn validate(&self) -> Result<()> {
        if self.t1 < 2 || self.t2 < 2 {
            return Err(SceError::invalid(format!(
                "t1 and t2 must be at least 2 (got {} and {})",
                self.t1, self.t2
            )));
        }
        if self.n_splits == 0 {
            return Err(SceError::invalid("n_splits must be positive"));
        }
        if self.grid.is_empty() {
            return Err(SceError::invalid("threshold grid is empty"));
        }
        if !(self.grid[0] >= 0.0) || self.grid.iter().any(|v| !v.is_finite()) {
            return Err(SceError::invalid("threshold grid must be finite and non-negative"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SceError::invalid("threshold grid must be strictly increasing"));
        }
        Ok(())
    }

    pub fn with_rescale(mut self, rescale: bool) -> Self {
        self.rescale = rescale;
        self
    }

    pub fn validate_for(&self, n_obs: usize) -> Result<()> {
        self.validate()?;
        if self.t1 + self.t2 > n_obs {
            return Err(SceError::InsufficientData {
                required: self.t1 + self.t2,
                actual: n_obs,
            });
        }
        Ok(())
    }

    /// Default configuration for a panel: a window covering two thirds of
    /// the sample split one third / two thirds, and [`default_grid`] over
    /// the full-sample estimate.
    pub fn for_panel(
        panel: &TimeSeriesPanel,
        kind: MatrixKind,
        n_splits: usize,
        grid_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let (t1, t2) = default_segment_sizes(panel.n_obs())?;
        let grid = default_grid(&kind.estimate(panel)?, grid_size);
        Self::new(t1, t2, n_splits, grid, seed)
    }
}

/// `(t1, t2)` with `t2 = 2 t1` and `t1 + t2` about two thirds of `n_obs`.
pub fn default_segment_sizes(n_obs: usize) -> Result<(usize, usize)> {
    if n_obs < 4 {
        return Err(SceError::InsufficientData {
            required: 4,
            actual: n_obs,
        });
    }
    let t1 = ((2 * n_obs) as f64 / 9.0).round() as usize;
    if t1 >= 2 && 3 * t1 <= n_obs {
        return Ok((t1, 2 * t1));
    }
    let t1 = (n_obs / 3).max(2);
    Ok((t1, n_obs - t1))
}

/// `size` equally spaced thresholds from 0 to the largest absolute
/// off-diagonal entry of `estimate`. Collapses to `[0]` when there is no
/// off-diagonal mass.
pub fn default_grid(estimate: &SymMatrix, size: usize) -> Vec<f64> {
    let top = estimate.max_abs_off_diagonal();
    if size < 2 || top == 0.0 {
        return vec![0.0];
    }
    let step = top / (size - 1) as f64;
    let mut grid: Vec<f64> = (0..size).map(|k| k as f64 * step).collect();
    grid[size - 1] = top;
    grid
}

/// A pair of consecutive, disjoint row ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub first: Range<usize>,
    pub second: Range<usize>,
}

/// Draws split number `split_index`: a uniform offset `o` in
/// `0..=n_obs - t1 - t2`, then `first = o..o+t1`, `second = o+t1..o+t1+t2`.
/// Deterministic in `(cfg.seed, split_index)`.
pub fn draw_split(n_obs: usize, cfg: &CvConfig, split_index: usize) -> Result<SplitRanges> {
    let window = cfg.t1 + cfg.t2;
    if window > n_obs {
        return Err(SceError::InsufficientData {
            required: window,
            actual: n_obs,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(split_index as u64);
    let offset = rng.random_range(0..=n_obs - window);
    Ok(SplitRanges {
        first: offset..offset + cfg.t1,
        second: offset + cfg.t1..offset + window,
    })
}

pub fn draw_splits(n_obs: usize, cfg: &CvConfig) -> Result<Vec<SplitRanges>> {
    (0..cfg.n_splits).map(|v| draw_split(n_obs, cfg, v)).collect()
}

/// `||T_s(first) - second||_F^2` without materializing the thresholded matrix.
pub(crate) fn thresholded_distance_sq(first: &SymMatrix, second: &SymMatrix, s: f64) -> f64 {
    first
        .entries()
        .iter()
        .zip(second.entries().iter())
        .map(|(&a, &b)| {
            let t = if a.abs() >= s { a } else { 0.0 };
            (t - b) * (t - b)
        })
        .sum()
}

fn split_estimates(
    panel: &TimeSeriesPanel,
    splits: &[SplitRanges],
    kind: MatrixKind,
) -> Result<Vec<(SymMatrix, SymMatrix)>> {
    par::map_indexed(splits.len(), |v| {
        let sp = &splits[v];
        let est = |r: &Range<usize>| panel.slice_rows(r.clone()).and_then(|p| kind.estimate(&p));
        match (est(&sp.first), est(&sp.second)) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            (Err(e), _) | (_, Err(e)) => Err(SceError::Split {
                split: v,
                source: Box::new(e),
            }),
        }
    })
    .into_iter()
    .collect()
}

/// Mean over `splits` of `||T_s(est(first)) - est(second)||_F^2`.
pub fn empirical_loss(
    panel: &TimeSeriesPanel,
    s: f64,
    splits: &[SplitRanges],
    kind: MatrixKind,
) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(SceError::invalid(format!("threshold must be non-negative, got {s}")));
    }
    if splits.is_empty() {
        return Err(SceError::invalid("no splits given"));
    }
    let est = split_estimates(panel, splits, kind)?;
    let total: f64 = est.iter().map(|(a, b)| thresholded_distance_sq(a, b, s)).sum();
    Ok(total / est.len() as f64)
}

/// Outcome of threshold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
    /// Grid minimizer of the mean loss.
    pub selected: f64,
    /// Threshold to apply to an estimate from all `n_obs` rows: `selected`
    /// times `sqrt(t1 / n_obs)`, or `selected` itself when rescaling is
    /// off. The thresholding rate scales as `T^-1/2`, so a level tuned on
    /// `t1` rows overshoots on the full sample.
    pub full_sample_threshold: f64,
    pub n_obs: usize,
    pub seed: u64,
    pub t1: usize,
    pub t2: usize,
    pub n_splits: usize,
    /// `n_splits x grid.len()` individual losses.
    #[serde(skip)]
    pub per_split_losses: Vec<Vec<f64>>,
}

impl CvResult {
    pub fn selected_index(&self) -> usize {
        self.grid.iter().position(|g| *g == self.selected).unwrap_or(0)
    }
}

/// Evaluates every grid point on the same `n_splits` splits and returns the
/// minimizer of the mean loss. Exact ties go to the larger threshold.
pub fn select_threshold(panel: &TimeSeriesPanel, cfg: &CvConfig, kind: MatrixKind) -> Result<CvResult> {
    cfg.validate_for(panel.n_obs())?;
    let splits = draw_splits(panel.n_obs(), cfg)?;
    let est = split_estimates(panel, &splits, kind)?;
    let per_split_losses: Vec<Vec<f64>> = par::map_indexed(est.len(), |v| {
        let (a, b) = &est[v];
        cfg.grid.iter().map(|&s| thresholded_distance_sq(a, b, s)).collect()
    });
    let n = per_split_losses.len() as f64;
    let losses: Vec<f64> = (0..cfg.grid.len())
        .map(|g| per_split_losses.iter().map(|row| row[g]).sum::<f64>() / n)
        .collect();
    let mut best = 0;
    for (g, &l) in losses.iter().enumerate() {
        if l <= losses[best] {
            best = g;
        }
    }
    let selected = cfg.grid[best];
    let n_obs = panel.n_obs();
    Ok(CvResult {
        grid: cfg.grid.clone(),
        selected,
        full_sample_threshold: if cfg.rescale {
            selected * (cfg.t1 as f64 / n_obs as f64).sqrt()
        } else {
            selected
        },
        n_obs,
        losses,
        seed: cfg.seed,
        t1: cfg.t1,
        t2: cfg.t2,
        n_splits: cfg.n_splits,
        per_split_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::default_labels;

    fn cfg(t1: usize, t2: usize, n: usize, grid: Vec<f64>) -> CvConfig {
        CvConfig::new(t1, t2, n, grid, 7).unwrap()
    }

    #[test]
    fn single_admissible_split() {
        let c = cfg(10, 20, 5, vec![0.0]);
        let s = draw_split(30, &c, 3).unwrap();
        assert_eq!(s.first, 0..10);
        assert_eq!(s.second, 10..30);
        assert!(matches!(draw_split(29, &c, 0), Err(SceError::InsufficientData { .. })));
    }

    #[test]
    fn worked_example_sizes() {
        let c = cfg(120, 240, 50, vec![0.0]);
        let mut offsets = std::collections::BTreeSet::new();
        for v in 0..50 {
            let s = draw_split(540, &c, v).unwrap();
            assert_eq!(s.first.len(), 120);
            assert_eq!(s.second.len(), 240);
            assert_eq!(s.first.end, s.second.start);
            assert!(s.first.start <= 180);
            offsets.insert(s.first.start);
            assert_eq!(s, draw_split(540, &c, v).unwrap());
        }
        assert!(offsets.len() > 1);
    }

    #[test]
    fn config_validation() {
        assert!(CvConfig::new(10, 20, 1, vec![], 0).is_err());
        assert!(CvConfig::new(10, 20, 1, vec![0.2, 0.1], 0).is_err());
        assert!(CvConfig::new(10, 20, 1, vec![-0.1, 0.1], 0).is_err());
        assert!(CvConfig::new(10, 20, 0, vec![0.0], 0).is_err());
        assert!(CvConfig::new(1, 20, 1, vec![0.0], 0).is_err());
        assert!(CvConfig::new(10, 20, 1, vec![0.0, 0.5], 0).is_ok());
    }

    #[test]
    fn default_sizes() {
        assert_eq!(default_segment_sizes(540).unwrap(), (120, 240));
        let (a, b) = default_segment_sizes(6).unwrap();
        assert!(a >= 2 && b >= 2 && a + b <= 6);
        assert!(default_segment_sizes(3).is_err());
    }

    #[test]
    fn default_grid_spans_off_diagonal() {
        let m = SymMatrix::from_rows(default_labels(2), vec![vec![1.0, -0.4], vec![-0.4, 1.0]]).unwrap();
        let g = default_grid(&m, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[4], 0.4);
        let id = SymMatrix::identity(default_labels(3)).unwrap();
        assert_eq!(default_grid(&id, 50), vec![0.0]);
    }

    #[test]
    fn singleton_grid_selects_it() {
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| (0..30).map(|t| ((t * (j + 3)) % 7) as f64 + j as f64 * 0.1).collect())
            .collect();
        let p = TimeSeriesPanel::from_columns(default_labels(3), cols).unwrap();
        let r = select_threshold(&p, &cfg(6, 12, 4, vec![0.0]), MatrixKind::Covariance).unwrap();
        assert_eq!(r.selected, 0.0);
        assert_eq!(r.per_split_losses.len(), 4);
    }

    #[test]
    fn split_errors_name_the_split() {
        // second column constant on the first rows only
        let a: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let b: Vec<f64> = (0..20).map(|t| if t < 10 { 1.0 } else { t as f64 }).collect();
        let p = TimeSeriesPanel::from_columns(default_labels(2), vec![a, b]).unwrap();
        let c = cfg(5, 15, 1, vec![0.0]);
        match select_threshold(&p, &c, MatrixKind::Spearman) {
            Err(SceError::Split { split, source }) => {
                assert_eq!(split, 0);
                assert!(matches!(*source, SceError::DegenerateColumn { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
