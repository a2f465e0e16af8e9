//! Time-series panels and the covariance, Pearson and Spearman estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SceError};
use crate::matrix::{check_unique_labels, SymMatrix};

/// `T x J` observations: one row per period, one column per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_index: Option<Vec<i64>>,
}

impl TimeSeriesPanel {
    /// Builds a panel from column vectors. Requires `T >= 2`, `J >= 1`,
    /// equal column lengths, finite values and unique labels.
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(SceError::invalid("panel needs at least one column"));
        }
        if labels.len() != columns.len() {
            return Err(SceError::DimensionMismatch {
                expected: columns.len(),
                actual: labels.len(),
            });
        }
        check_unique_labels(&labels)?;
        let t = columns[0].len();
        if let Some(c) = columns.iter().find(|c| c.len() != t) {
            return Err(SceError::DimensionMismatch {
                expected: t,
                actual: c.len(),
            });
        }
        if t < 2 {
            return Err(SceError::InsufficientData {
                required: 2,
                actual: t,
            });
        }
        for (label, col) in labels.iter().zip(&columns) {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(SceError::Data {
                    row,
                    column: label.clone(),
                    message: "missing or non-finite value".into(),
                });
            }
        }
        Ok(TimeSeriesPanel {
            labels,
            columns,
            time_index: None,
        })
    }

    /// Builds a panel from row vectors (one per period).
    pub fn from_rows(labels: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let j = labels.len();
        if let Some(r) = rows.iter().find(|r| r.len() != j) {
            return Err(SceError::DimensionMismatch {
                expected: j,
                actual: r.len(),
            });
        }
        let columns = (0..j).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::from_columns(labels, columns)
    }

    /// Attaches strictly increasing timestamps, one per row.
    pub fn with_time_index(mut self, index: Vec<i64>) -> Result<Self> {
        if index.len() != self.n_obs() {
            return Err(SceError::DimensionMismatch {
                expected: self.n_obs(),
                actual: index.len(),
            });
        }
        if index.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SceError::invalid("time index must be strictly increasing"));
        }
        self.time_index = Some(index);
        Ok(self)
    }

    pub fn n_obs(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn time_index(&self) -> Option<&[i64]> {
        self.time_index.as_deref()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    /// Consecutive rows `range` as a new panel.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.n_obs() || range.start > range.end {
            return Err(SceError::invalid(format!(
                "row range {range:?} outside 0..{}",
                self.n_obs()
            )));
        }
        let columns = self.columns.iter().map(|c| c[range.clone()].to_vec()).collect();
        let mut p = Self::from_columns(self.labels.clone(), columns)?;
        p.time_index = self.time_index.as_ref().map(|ix| ix[range].to_vec());
        Ok(p)
    }

    /// Panel restricted to the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_vars()) {
            return Err(SceError::invalid(format!("column index {bad} out of range")));
        }
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        let columns = indices.iter().map(|&i| self.columns[i].clone()).collect();
        let mut p = Self::from_columns(labels, columns)?;
        p.time_index = self.time_index.clone();
        Ok(p)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rescales every column to sample mean 0 and sample standard deviation 1
/// (divisor `T - 1`).
pub fn standardize(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let n = panel.n_obs() as f64;
    let mut columns = Vec::with_capacity(panel.n_vars());
    for (label, col) in panel.labels.iter().zip(&panel.columns) {
        let c = centered(col);
        let sd = (dot(&c, &c) / (n - 1.0)).sqrt();
        let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(sd > 1e-12 * scale) {
            return Err(SceError::DegenerateColumn {
                label: label.clone(),
                reason: "zero sample standard deviation".into(),
            });
        }
        columns.push(c.into_iter().map(|v| v / sd).collect());
    }
    Ok(TimeSeriesPanel {
        labels: panel.labels.clone(),
        columns,
        time_index: panel.time_index.clone(),
    })
}

/// Cross-product matrix of already centered columns divided by `divisor`.
fn cross_products(labels: &[String], cols: &[Vec<f64>], divisor: f64) -> Result<SymMatrix> {
    SymMatrix::from_upper_fn(labels.to_vec(), |i, j| dot(&cols[i], &cols[j]) / divisor)
}

/// Sample covariance `T^-1 sum_t (X_t - Xbar)(X_t - Xbar)^T`.
pub fn sample_covariance(panel: &TimeSeriesPanel) -> Result<SymMatrix> {
    if panel.n_obs() < 2 {
        return Err(SceError::InsufficientData {
            required: 2,
            actual: panel.n_obs(),
        });
    }
    let cols: Vec<Vec<f64>> = panel.columns.iter().map(|c| centered(c)).collect();
    cross_products(&panel.labels, &cols, panel.n_obs() as f64)
}

fn rescale_to_correlation(cov: &SymMatrix) -> Result<SymMatrix> {
    let d: Vec<f64> = (0..cov.dim()).map(|i| cov.get(i, i)).collect();
    SymMatrix::from_upper_fn(cov.labels().to_vec(), |i, j| {
        if i == j {
            1.0
        } else {
            (cov.get(i, j) / (d[i] * d[j]).sqrt()).clamp(-1.0, 1.0)
        }
    })
}

/// Pearson correlation matrix: covariance of the standardized panel,
/// rescaled to unit diagonal.
pub fn pearson_matrix(panel: &TimeSeriesPanel) -> Result<SymMatrix> {
    let z = standardize(panel)?;
    rescale_to_correlation(&sample_covariance(&z)?)
}

/// 1-based ranks with ties receiving the average of the positions they span.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && x[order[end + 1]] == x[order[start]] {
            end += 1;
        }
        // positions start..=end share rank ((start + 1) + (end + 1)) / 2
        let r = (start + end + 2) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank-correlation matrix: Pearson correlation of column midranks.
///
/// Midranks are multiples of one half with mean `(T + 1) / 2`, so centering
/// and the cross products are exact in floating point for any realistic `T`.
/// Identical rank vectors therefore give a correlation of exactly 1.
pub fn spearman_matrix(panel: &TimeSeriesPanel) -> Result<SymMatrix> {
    if panel.n_obs() < 2 {
        return Err(SceError::InsufficientData {
            required: 2,
            actual: panel.n_obs(),
        });
    }
    let mid = (panel.n_obs() + 1) as f64 / 2.0;
    let mut cols = Vec::with_capacity(panel.n_vars());
    for (label, col) in panel.labels.iter().zip(&panel.columns) {
        let c: Vec<f64> = midranks(col).into_iter().map(|r| r - mid).collect();
        if c.iter().all(|v| *v == 0.0) {
            return Err(SceError::DegenerateColumn {
                label: label.clone(),
                reason: "all values tied".into(),
            });
        }
        cols.push(c);
    }
    let ss: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    SymMatrix::from_upper_fn(panel.labels.clone(), |i, j| {
        if i == j {
            1.0
        } else {
            (dot(&cols[i], &cols[j]) / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::default_labels;

    fn panel(cols: Vec<Vec<f64>>) -> TimeSeriesPanel {
        TimeSeriesPanel::from_columns(default_labels(cols.len()), cols).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(matches!(
            TimeSeriesPanel::from_columns(default_labels(1), vec![vec![1.0]]),
            Err(SceError::InsufficientData { .. })
        ));
        assert!(TimeSeriesPanel::from_columns(default_labels(1), vec![vec![1.0, f64::NAN]]).is_err());
        assert!(TimeSeriesPanel::from_columns(vec![], vec![]).is_err());
        let p = panel(vec![vec![1.0, 2.0, 3.0]]);
        assert!(p.clone().with_time_index(vec![1, 1, 2]).is_err());
        assert!(p.with_time_index(vec![1, 2, 3]).is_ok());
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(&panel(vec![vec![1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(z.column(0), &[-1.0, 0.0, 1.0]);
        let zz = standardize(&z).unwrap();
        for (a, b) in zz.column(0).iter().zip(z.column(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = TimeSeriesPanel::from_columns(
            vec!["ok".into(), "flat".into()],
            vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]],
        )
        .unwrap();
        match standardize(&p) {
            Err(SceError::DegenerateColumn { label, .. }) => assert_eq!(label, "flat"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn covariance_examples() {
        let c = sample_covariance(&panel(vec![vec![1.0, 2.0, 3.0]])).unwrap();
        assert!((c.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        let c = sample_covariance(&panel(vec![vec![4.0, 4.0], vec![-1.0, -1.0]])).unwrap();
        assert!(c.entries().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pearson_examples() {
        let x = vec![0.3, -1.2, 2.5, 0.7, 1.1];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let r = pearson_matrix(&panel(vec![x.clone(), x.clone()])).unwrap();
        assert!((r.get(0, 1) - 1.0).abs() < 1e-14);
        let r = pearson_matrix(&panel(vec![x, neg])).unwrap();
        assert!((r.get(0, 1) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(midranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        let r = spearman_matrix(&panel(vec![vec![1.0, 2.0, 3.0], vec![10.0, 100.0, 1000.0]])).unwrap();
        assert_eq!(r.get(0, 1), 1.0);
        let r = spearman_matrix(&panel(vec![vec![1.0, 2.0, 3.0], vec![9.0, 4.0, 1.0]])).unwrap();
        assert_eq!(r.get(0, 1), -1.0);
        let e = spearman_matrix(&panel(vec![vec![1.0, 2.0, 3.0], vec![7.0, 7.0, 7.0]]));
        assert!(matches!(e, Err(SceError::DegenerateColumn { .. })));
    }
}
