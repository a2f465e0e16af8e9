//! Labeled dense symmetric matrices and the hard-thresholding operator.
//!
//! [`SymMatrix`] is the carrier for population covariances, sample
//! estimates, their thresholded versions and rank-correlation matrices.
//! Values are immutable after construction; every transformation returns a
//! new matrix.

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceError};

/// Default variable names `x1, x2, ...` for unlabeled data.
pub fn default_labels(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

pub(crate) fn check_unique_labels(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(SceError::invalid(format!("duplicate label `{l}`")));
        }
    }
    Ok(())
}

/// A symmetric `J x J` real matrix with one unique label per row/column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRepr", into = "SymMatrixRepr")]
pub struct SymMatrix {
    labels: Vec<String>,
    entries: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    labels: Vec<String>,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<SymMatrixRepr> for SymMatrix {
    type Error = SceError;

    fn try_from(r: SymMatrixRepr) -> Result<Self> {
        SymMatrix::from_rows(r.labels, r.entries)
    }
}

impl From<SymMatrix> for SymMatrixRepr {
    fn from(m: SymMatrix) -> Self {
        let entries = (0..m.dim())
            .map(|i| (0..m.dim()).map(|j| m.entries[(i, j)]).collect())
            .collect();
        SymMatrixRepr {
            labels: m.labels,
            entries,
        }
    }
}

/// Row-wise summaries used to test membership in the uniformity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityDiagnostics {
    pub max_diag: f64,
    pub max_row_q_norm: f64,
}

/// Parameters `(q, c0, M)` of the uniformity class: diagonal bounded by `M`
/// and every row's `sum_j |sigma_ij|^q` bounded by `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityParams {
    pub q: f64,
    pub c0: f64,
    pub m: f64,
}

impl UniformityParams {
    pub fn new(q: f64, c0: f64, m: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(SceError::invalid(format!("q must lie in [0, 1), got {q}")));
        }
        if !(c0 > 0.0) || !(m > 0.0) {
            return Err(SceError::invalid(format!(
                "c0 and M must be positive, got c0 = {c0}, M = {m}"
            )));
        }
        Ok(UniformityParams { q, c0, m })
    }

    /// Whether `m` belongs to the class described by these parameters.
    pub fn contains(&self, m: &SymMatrix) -> bool {
        match m.uniformity_diagnostics(self.q) {
            Ok(d) => d.max_diag <= self.m && d.max_row_q_norm <= self.c0,
            Err(_) => false,
        }
    }
}

impl SymMatrix {
    /// Builds a matrix, rejecting non-square or asymmetric input and
    /// duplicate or missing labels. Symmetry is checked exactly.
    pub fn new(labels: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(SceError::invalid(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if labels.len() != n {
            return Err(SceError::DimensionMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        check_unique_labels(&labels)?;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (entries[(i, j)], entries[(j, i)]);
                if a != b && !(a.is_nan() && b.is_nan()) {
                    return Err(SceError::Asymmetric { row: i, col: j });
                }
            }
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(SceError::invalid("matrix entries must be finite"));
        }
        Ok(SymMatrix { labels, entries })
    }

    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(SceError::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(labels, entries)
    }

    /// Builds a symmetric matrix from a function evaluated on the upper
    /// triangle (`i <= j`) and mirrored.
    pub fn from_upper_fn(labels: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = labels.len();
        let mut entries = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = f(i, j);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Self::new(labels, entries)
    }

    pub fn identity(labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        Self::new(labels, DMatrix::identity(n, n))
    }

    pub fn diagonal(labels: Vec<String>, diag: &[f64]) -> Result<Self> {
        if labels.len() != diag.len() {
            return Err(SceError::DimensionMismatch {
                expected: labels.len(),
                actual: diag.len(),
            });
        }
        let n = diag.len();
        Self::new(labels, DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Principal submatrix on `indices`, in the given order. Passing a
    /// permutation of `0..dim` relabels the variables.
    pub fn submatrix(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(SceError::invalid(format!(
                "index {bad} out of range for a {}x{} matrix",
                self.dim(),
                self.dim()
            )));
        }
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        let n = indices.len();
        let entries = DMatrix::from_fn(n, n, |a, b| self.entries[(indices[a], indices[b])]);
        Self::new(labels, entries)
    }

    /// Entrywise hard thresholding: keeps `m_ij` when `|m_ij| >= s` and
    /// zeroes it otherwise. The diagonal is thresholded like any other entry.
    pub fn hard_threshold(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(SceError::invalid(format!(
                "threshold must be non-negative, got {s}"
            )));
        }
        let entries = self.entries.map(|v| if v.abs() >= s { v } else { 0.0 });
        Ok(SymMatrix {
            labels: self.labels.clone(),
            entries,
        })
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.entries.clone());
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Spectral norm `max_j |lambda_j|`.
    pub fn operator_norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev.first()
            .map(|a| a.abs())
            .into_iter()
            .chain(ev.last().map(|b| b.abs()))
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub(crate) fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Returns `(max_i sigma_ii, max_i sum_j |sigma_ij|^q)` with `0^0 = 0`,
    /// so `q = 0` counts the nonzero entries of each row.
    pub fn uniformity_diagnostics(&self, q: f64) -> Result<UniformityDiagnostics> {
        if !(0.0..1.0).contains(&q) {
            return Err(SceError::invalid(format!("q must lie in [0, 1), got {q}")));
        }
        let n = self.dim();
        let max_diag = (0..n)
            .map(|i| self.entries[(i, i)])
            .fold(f64::NEG_INFINITY, f64::max);
        let max_row_q_norm = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let a = self.entries[(i, j)].abs();
                        if a == 0.0 {
                            0.0
                        } else {
                            a.powf(q)
                        }
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        Ok(UniformityDiagnostics {
            max_diag,
            max_row_q_norm,
        })
    }

    /// Number of nonzero entries, diagonal included.
    pub fn support_size(&self) -> usize {
        self.entries.iter().filter(|v| **v != 0.0).count()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.entries[(i, j)] == 0.0))
    }

    /// Largest absolute off-diagonal entry (0 for a 1x1 matrix).
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0_f64;
        for j in 0..n {
            for i in 0..j {
                m = m.max(self.entries[(i, j)].abs());
            }
        }
        m
    }

    /// Entrywise difference `self - other`; labels are taken from `self`.
    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(SceError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(SymMatrix {
            labels: self.labels.clone(),
            entries: &self.entries - &other.entries,
        })
    }

    /// Writes the matrix as CSV: a header row of labels followed by `J`
    /// numeric rows. Numbers use the shortest representation that parses
    /// back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.labels)?;
        for i in 0..self.dim() {
            w.write_record((0..self.dim()).map(|j| format_f64(self.entries[(i, j)])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let labels: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (ri, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(ci, cell)| {
                    cell.trim().parse::<f64>().map_err(|e| SceError::Parse {
                        row: ri + 2,
                        column: labels.get(ci).cloned().unwrap_or_else(|| ci.to_string()),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(labels, rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Shortest round-trip decimal rendering of an `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64) -> SymMatrix {
        SymMatrix::from_rows(default_labels(2), vec![vec![a, b], vec![b, c]]).unwrap()
    }

    #[test]
    fn rejects_asymmetric_and_bad_labels() {
        let e = SymMatrix::from_rows(default_labels(2), vec![vec![1.0, 0.2], vec![0.3, 1.0]]);
        assert!(matches!(e, Err(SceError::Asymmetric { .. })));
        let e = SymMatrix::identity(vec!["a".into(), "a".into()]);
        assert!(matches!(e, Err(SceError::InvalidArgument(_))));
        let e = SymMatrix::new(default_labels(3), DMatrix::identity(2, 2));
        assert!(e.is_err());
    }

    #[test]
    fn threshold_examples() {
        let m = m2(1.0, 0.12, 1.0);
        assert_eq!(m.hard_threshold(0.0).unwrap(), m);
        assert_eq!(m.hard_threshold(0.13).unwrap(), m2(1.0, 0.0, 1.0));
        let id = SymMatrix::identity(default_labels(4)).unwrap();
        assert_eq!(id.hard_threshold(0.5).unwrap(), id);
        assert!(m.hard_threshold(-0.1).is_err());
        assert!(m.hard_threshold(f64::NAN).is_err());
    }

    #[test]
    fn threshold_hits_diagonal_too() {
        let m = m2(0.3, 0.1, 2.0);
        let t = m.hard_threshold(0.5).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
        assert_eq!(t.get(1, 1), 2.0);
    }

    #[test]
    fn norms() {
        let id = SymMatrix::identity(default_labels(5)).unwrap();
        assert!((id.operator_norm() - 1.0).abs() < 1e-14);
        assert!((id.frobenius_norm() - 5f64.sqrt()).abs() < 1e-14);
        assert!((id.min_eigenvalue() - 1.0).abs() < 1e-14);

        let d = SymMatrix::diagonal(default_labels(3), &[3.0, -5.0, 2.0]).unwrap();
        assert!((d.operator_norm() - 5.0).abs() < 1e-12);
        assert!((d.min_eigenvalue() + 5.0).abs() < 1e-12);

        let z = SymMatrix::new(default_labels(3), DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.frobenius_norm(), 0.0);
        assert_eq!(m2(1.0, 2.0, 1.0).frobenius_norm(), 10f64.sqrt());
    }

    #[test]
    fn uniformity() {
        let id = SymMatrix::identity(default_labels(4)).unwrap();
        let d = id.uniformity_diagnostics(0.0).unwrap();
        assert_eq!((d.max_diag, d.max_row_q_norm), (1.0, 1.0));
        let d = id.uniformity_diagnostics(0.5).unwrap();
        assert_eq!((d.max_diag, d.max_row_q_norm), (1.0, 1.0));

        let tri = SymMatrix::from_upper_fn(default_labels(5), |i, j| match j - i {
            0 => 1.0,
            1 => 0.25,
            _ => 0.0,
        })
        .unwrap();
        let d = tri.uniformity_diagnostics(0.5).unwrap();
        assert_eq!(d.max_diag, 1.0);
        assert!((d.max_row_q_norm - 2.0).abs() < 1e-15);
        assert!(tri.uniformity_diagnostics(1.0).is_err());
        assert!(tri.uniformity_diagnostics(-0.1).is_err());

        let p = UniformityParams::new(0.5, 2.0, 1.0).unwrap();
        assert!(p.contains(&tri));
        let tight = UniformityParams::new(0.5, 1.9, 1.0).unwrap();
        assert!(!tight.contains(&tri));
        assert!(UniformityParams::new(1.0, 1.0, 1.0).is_err());
        assert!(UniformityParams::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let m = SymMatrix::from_upper_fn(default_labels(3), |i, j| {
            (i as f64 + 1.0) / 3.0 + (j as f64).sqrt() * 0.1
        })
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = SymMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let json = m.to_json().unwrap();
        assert_eq!(SymMatrix::from_json(&json).unwrap(), m);
    }

    #[test]
    fn csv_parse_error_has_location() {
        let data = "a,b\n1,2\n2,oops\n";
        match SymMatrix::read_csv(data.as_bytes()) {
            Err(SceError::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
