//! Sign-constrained groupwise multiple-index estimation.
//!
//! The model is `E[y | x] = sum_s g_s(beta_s^T x_{A_s})`. Each iteration
//!
//! 1. evaluates the current indices `V^i = (beta_1^T x^i_{A_1}, ...)`,
//! 2. fits a local-linear surface in index space around every observation,
//!    giving a local level `a^i` and slopes `g'_s(V^i_s)`,
//! 3. pools the linearized residual regressions
//!    `y^j - a^i ~ R^{ij}^T beta` with `R^{ij}` stacking
//!    `g'_s(V^i_s) (x^j - x^i)_{A_s}` into one weighted least-squares problem
//!    and solves it under the sign constraints `sign_k beta_k >= 0`,
//! 4. rescales every group to unit norm.
//!
//! The links are then recovered by backfitting one-dimensional local-linear
//! smoothers on the final indices and tabulated on an evenly spaced grid.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constrained::sign_constrained_quadratic;
use crate::covariance::TimeSeriesPanel;
use crate::error::{Result, SceError};
use crate::matrix::format_f64;
use crate::par::map_indexed;
use crate::pipeline::ModelSpec;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_GRID_POINTS: usize = 100;
const BACKFIT_SWEEPS: usize = 100;
const BACKFIT_TOL: f64 = 1e-10;
const OBJECTIVE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "h", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h_s = 1.06 sd(V_s) T^(-1/(4+S))` for the index kernel and
    /// `1.06 sd(V_s) T^(-1/5)` for the link smoothers.
    RuleOfThumb,
    /// One bandwidth per group, used for both.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub bandwidth: BandwidthRule,
    pub tolerance: f64,
    pub max_iter: usize,
    pub grid_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bandwidth: BandwidthRule::RuleOfThumb,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_groups: usize) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(SceError::invalid("tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(SceError::invalid("max_iter must be at least 1"));
        }
        if self.grid_points < 2 {
            return Err(SceError::invalid("link grid needs at least two points"));
        }
        if let BandwidthRule::Fixed(h) = &self.bandwidth {
            if h.len() != n_groups {
                return Err(SceError::DimensionMismatch {
                    expected: n_groups,
                    actual: h.len(),
                });
            }
            if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(SceError::invalid("bandwidths must be positive"));
            }
        }
        Ok(())
    }
}

/// Product Gaussian kernel `prod_d phi(u_d / h_d) / h_d`.
pub fn kernel_weight(u: &[f64], h: &[f64]) -> Result<f64> {
    if u.len() != h.len() {
        return Err(SceError::DimensionMismatch {
            expected: h.len(),
            actual: u.len(),
        });
    }
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(SceError::invalid("bandwidth must be positive"));
    }
    Ok(product_kernel(u, h))
}

fn product_kernel(u: &[f64], h: &[f64]) -> f64 {
    let mut q = 0.0;
    let mut norm = 1.0;
    for (ud, hd) in u.iter().zip(h) {
        let z = ud / hd;
        q += z * z;
        norm *= hd * (2.0 * PI).sqrt();
    }
    (-0.5 * q).exp() / norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCoefficients {
    pub variables: Vec<usize>,
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
}

/// Link curve tabulated on an increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTable {
    pub v: Vec<f64>,
    pub g: Vec<f64>,
}

impl LinkTable {
    /// Linear interpolation; outside the grid the boundary slope is
    /// extended and the flag is set.
    pub fn eval(&self, x: f64) -> (f64, bool) {
        let n = self.v.len();
        let slope = |a: usize, b: usize| {
            let dv = self.v[b] - self.v[a];
            if dv > 0.0 {
                (self.g[b] - self.g[a]) / dv
            } else {
                0.0
            }
        };
        if x < self.v[0] {
            return (self.g[0] + slope(0, 1) * (x - self.v[0]), true);
        }
        if x > self.v[n - 1] {
            return (self.g[n - 1] + slope(n - 2, n - 1) * (x - self.v[n - 1]), true);
        }
        let k = self.v.partition_point(|&g| g <= x).clamp(1, n - 1);
        let (a, b) = (k - 1, k);
        (self.g[a] + slope(a, b) * (x - self.v[a]), false)
    }
}

/// One pass of the coefficient update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Kernel-weighted least-squares objective at the constrained update.
    pub objective: f64,
    /// Largest absolute coefficient change after normalization.
    pub max_change: f64,
    /// Unconstrained pooled solution.
    pub unconstrained: Vec<f64>,
    /// Constrained pooled solution before normalization.
    pub constrained: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
    pub ridge_applied: bool,
    /// Pooled design matrix (row-major); not serialized.
    #[serde(skip)]
    pub design: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupwiseFit {
    pub response_label: String,
    pub groups: Vec<GroupCoefficients>,
    /// Sign constraint of every coefficient, concatenated over groups.
    pub signs: Vec<i8>,
    pub links: Vec<LinkTable>,
    /// Final multipliers, concatenated over groups.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub r_squared: f64,
    pub index_bandwidths: Vec<f64>,
    pub link_bandwidths: Vec<f64>,
    /// A ridge was needed to factor a pooled design matrix.
    pub ridge_applied: bool,
    /// Number of iterations whose objective rose by more than `1e-10`
    /// (relative) over the previous one.
    pub objective_increases: usize,
    pub trace: Vec<IterationRecord>,
}

impl GroupwiseFit {
    /// All coefficients concatenated in group order.
    pub fn coefficients(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.beta.iter().copied()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with columns `group,v,g_hat`; groups are numbered from 1.
    pub fn write_links_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "v", "g_hat"])?;
        for (s, link) in self.links.iter().enumerate() {
            for (v, g) in link.v.iter().zip(&link.g) {
                w.write_record([(s + 1).to_string(), format_f64(*v), format_f64(*g)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_links_csv(&self, path: &Path) -> Result<()> {
        self.write_links_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    /// At least one index fell outside its tabulated range.
    pub extrapolated: bool,
}

/// Evaluates the fitted model at `x`, ordered as `spec.variables()`.
pub fn predict(fit: &GroupwiseFit, spec: &ModelSpec, x: &[f64]) -> Result<Prediction> {
    let vars = spec.variables();
    if x.len() != vars.len() {
        return Err(SceError::DimensionMismatch {
            expected: vars.len(),
            actual: x.len(),
        });
    }
    if fit.groups.len() != spec.groups.len() {
        return Err(SceError::DimensionMismatch {
            expected: spec.groups.len(),
            actual: fit.groups.len(),
        });
    }
    let mut value = 0.0;
    let mut extrapolated = false;
    for (group, link) in fit.groups.iter().zip(&fit.links) {
        let mut v = 0.0;
        for (&var, &b) in group.variables.iter().zip(&group.beta) {
            let pos = vars
                .iter()
                .position(|&u| u == var)
                .ok_or_else(|| SceError::Consistency(format!("fit variable {var} not in model")))?;
            v += b * x[pos];
        }
        let (g, e) = link.eval(v);
        value += g;
        extrapolated |= e;
    }
    Ok(Prediction { value, extrapolated })
}

/// `1 - SSE/SST` of the fitted model on `panel`.
pub fn explained_variation(fit: &GroupwiseFit, panel: &TimeSeriesPanel, spec: &ModelSpec) -> Result<f64> {
    let y = panel.column(spec.response);
    let vars = spec.variables();
    let n = panel.n_obs();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut x = vec![0.0; vars.len()];
    for t in 0..n {
        for (k, &v) in vars.iter().enumerate() {
            x[k] = panel.column(v)[t];
        }
        let p = predict(fit, spec, &x)?;
        sse += (y[t] - p.value).powi(2);
        sst += (y[t] - mean).powi(2);
    }
    if !(sst > 0.0) {
        return Err(SceError::DegenerateResponse);
    }
    Ok(1.0 - sse / sst)
}

/// Coefficient layout: the flat position of each group coefficient.
struct Layout {
    group_of: Vec<usize>,
    /// Column index into the predictor matrix for each coefficient.
    column_of: Vec<usize>,
    ranges: Vec<std::ops::Range<usize>>,
    signs: Vec<i8>,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Result<Layout> {
        let mut group_of = Vec::new();
        let mut column_of = Vec::new();
        let mut ranges = Vec::new();
        let mut signs = Vec::new();
        for (s, g) in spec.groups.iter().enumerate() {
            let start = column_of.len();
            for &v in g {
                group_of.push(s);
                column_of.push(v);
                signs.push(
                    spec.sign_of(v)
                        .ok_or_else(|| SceError::Consistency(format!("variable {v} has no sign")))?,
                );
            }
            ranges.push(start..column_of.len());
        }
        Ok(Layout {
            group_of,
            column_of,
            ranges,
            signs,
        })
    }

    fn len(&self) -> usize {
        self.column_of.len()
    }
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Weighted least squares `min sum_j w_j (y_j - a - b^T z_j)^2`, returning
/// `(a, b)`. A tiny ridge on the slopes is added when the system is
/// singular.
fn weighted_linear(z: &[Vec<f64>], y: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let d = z.first().map_or(0, |r| r.len());
    let mut m = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut r = DVector::<f64>::zeros(d + 1);
    let mut row = vec![0.0; d + 1];
    for ((zj, &yj), &wj) in z.iter().zip(y).zip(w) {
        if wj == 0.0 {
            continue;
        }
        row[0] = 1.0;
        row[1..].copy_from_slice(zj);
        for a in 0..=d {
            r[a] += wj * row[a] * yj;
            for b in a..=d {
                m[(a, b)] += wj * row[a] * row[b];
            }
        }
    }
    for a in 0..=d {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    let sol = match m.clone().cholesky() {
        Some(c) => c.solve(&r),
        None => {
            let ridge = 1e-8 * m.trace().max(f64::MIN_POSITIVE);
            let mut mr = m.clone();
            for a in 1..=d {
                mr[(a, a)] += ridge;
            }
            match mr.clone().cholesky() {
                Some(c) => c.solve(&r),
                None => {
                    let total: f64 = w.iter().sum();
                    let mean = if total > 0.0 {
                        y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
                    } else {
                        0.0
                    };
                    let mut s = DVector::zeros(d + 1);
                    s[0] = mean;
                    s
                }
            }
        }
    };
    (sol[0], sol.iter().skip(1).copied().collect())
}

/// One-dimensional local-linear smooth of `y` on `v`, evaluated at `at`.
fn smooth_1d(v: &[f64], y: &[f64], h: f64, at: &[f64]) -> Vec<f64> {
    map_indexed(at.len(), |k| {
        let x0 = at[k];
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&vj, &yj) in v.iter().zip(y) {
            let d = vj - x0;
            let w = (-0.5 * (d / h).powi(2)).exp();
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * yj;
            t1 += w * d * yj;
        }
        let det = s0 * s2 - s1 * s1;
        if det > 1e-12 * s0 * s2.max(f64::MIN_POSITIVE) && det > 0.0 {
            (s2 * t0 - s1 * t1) / det
        } else if s0 > 0.0 {
            t0 / s0
        } else {
            0.0
        }
    })
}

struct Data {
    /// Predictor columns, indexed by panel column.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    n: usize,
}

impl Data {
    fn indices(&self, layout: &Layout, beta: &[f64], n_groups: usize) -> Vec<Vec<f64>> {
        let mut v = vec![vec![0.0; self.n]; n_groups];
        for (p, &b) in beta.iter().enumerate() {
            let col = &self.x[layout.column_of[p]];
            let vs = &mut v[layout.group_of[p]];
            for t in 0..self.n {
                vs[t] += b * col[t];
            }
        }
        v
    }
}

/// Gradient-based starting directions: local-linear slopes of `y` in the
/// full predictor space, averaged as outer products within each group,
/// then oriented and projected onto the sign constraints.
fn initial_beta(data: &Data, layout: &Layout, vars: &[usize]) -> Vec<f64> {
    let p = vars.len();
    let n = data.n;
    let h: Vec<f64> = vars
        .iter()
        .map(|&v| 1.06 * std_dev(&data.x[v]) * (n as f64).powf(-1.0 / (4.0 + p as f64)))
        .collect();
    let grads: Vec<Vec<f64>> = map_indexed(n, |i| {
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut u = vec![0.0; p];
        for j in 0..n {
            let row: Vec<f64> = vars.iter().map(|&v| data.x[v][j] - data.x[v][i]).collect();
            u.copy_from_slice(&row);
            w.push(product_kernel(&u, &h));
            z.push(row);
        }
        weighted_linear(&z, &data.y, &w).1
    });
    let mut beta = vec![0.0; layout.len()];
    for range in &layout.ranges {
        let k = range.len();
        let pos: Vec<usize> = range
            .clone()
            .map(|q| vars.iter().position(|&v| v == layout.column_of[q]).expect("variable listed"))
            .collect();
        let signs: Vec<f64> = range.clone().map(|q| layout.signs[q] as f64).collect();
        if k == 1 {
            beta[range.start] = signs[0];
            continue;
        }
        let mut m = DMatrix::<f64>::zeros(k, k);
        for g in &grads {
            for a in 0..k {
                for b in 0..k {
                    m[(a, b)] += g[pos[a]] * g[pos[b]];
                }
            }
        }
        let eig = SymmetricEigen::new(m);
        let top = eig.eigenvalues.imax();
        let mut e: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        let agreement: f64 = e.iter().zip(&signs).map(|(a, s)| a * s).sum();
        if agreement < 0.0 {
            e.iter_mut().for_each(|v| *v = -*v);
        }
        for (v, s) in e.iter_mut().zip(&signs) {
            if *v * s < 0.0 {
                *v = 0.0;
            }
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for (a, v) in e.iter().enumerate() {
                beta[range.start + a] = v / norm;
            }
        } else {
            let r = (k as f64).sqrt();
            for (a, s) in signs.iter().enumerate() {
                beta[range.start + a] = s / r;
            }
        }
    }
    beta
}

fn index_bandwidths(cfg: &FitConfig, v: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let s = v.len() as f64;
    match &cfg.bandwidth {
        BandwidthRule::Fixed(h) => Ok(h.clone()),
        BandwidthRule::RuleOfThumb => v
            .iter()
            .enumerate()
            .map(|(k, vs)| {
                let sd = std_dev(vs);
                if !(sd > 0.0) {
                    return Err(SceError::DegenerateColumn {
                        label: format!("index {}", k + 1),
                        reason: "current index is constant".into(),
                    });
                }
                Ok(1.06 * sd * (n as f64).powf(-1.0 / (4.0 + s)))
            })
            .collect(),
    }
}

/// Per-observation pieces of the pooled update.
struct LocalPiece {
    design: DMatrix<f64>,
    rhs: DVector<f64>,
    base: f64,
}

fn pooled_update(data: &Data, layout: &Layout, v: &[Vec<f64>], h: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = data.n;
    let s = v.len();
    let k = layout.len();
    let pieces: Vec<LocalPiece> = map_indexed(n, |i| {
        let mut w = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut u = vec![0.0; s];
        for j in 0..n {
            for d in 0..s {
                u[d] = v[d][j] - v[d][i];
            }
            w.push(product_kernel(&u, h));
            z.push(u.clone());
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let (a, b) = weighted_linear(&z, &data.y, &w);
        let mut design = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut base = 0.0;
        let mut r = vec![0.0; k];
        for j in 0..n {
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            for q in 0..k {
                let col = &data.x[layout.column_of[q]];
                r[q] = b[layout.group_of[q]] * (col[j] - col[i]);
            }
            let e = data.y[j] - a;
            base += wj * e * e;
            for q in 0..k {
                rhs[q] += wj * e * r[q];
                for p in q..k {
                    design[(q, p)] += wj * r[q] * r[p];
                }
            }
        }
        for q in 0..k {
            for p in 0..q {
                design[(q, p)] = design[(p, q)];
            }
        }
        LocalPiece { design, rhs, base }
    });
    let mut design = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut base = 0.0;
    for p in pieces {
        design += p.design;
        rhs += p.rhs;
        base += p.base;
    }
    (design, rhs, base)
}

fn normalize(layout: &Layout, raw: &[f64], previous: &[f64]) -> Vec<f64> {
    let mut beta = raw.to_vec();
    for range in &layout.ranges {
        if range.len() == 1 {
            beta[range.start] = layout.signs[range.start] as f64;
            continue;
        }
        let norm = raw[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for q in range.clone() {
                beta[q] = raw[q] / norm;
            }
        } else {
            beta[range.clone()].copy_from_slice(&previous[range.clone()]);
        }
    }
    beta
}

/// Backfits centered links on the final indices and tabulates them; the
/// response mean is carried by the first link.
fn fit_links(data: &Data, v: &[Vec<f64>], h: &[f64], grid_points: usize) -> Vec<LinkTable> {
    let n = data.n;
    let s = v.len();
    let mean = data.y.iter().sum::<f64>() / n as f64;
    let mut f = vec![vec![0.0; n]; s];
    let mut partial = vec![0.0; n];
    for _ in 0..BACKFIT_SWEEPS {
        let mut change = 0.0_f64;
        for g in 0..s {
            for t in 0..n {
                partial[t] = data.y[t] - mean - (0..s).filter(|&o| o != g).map(|o| f[o][t]).sum::<f64>();
            }
            let mut next = smooth_1d(&v[g], &partial, h[g], &v[g]);
            let c = next.iter().sum::<f64>() / n as f64;
            next.iter_mut().for_each(|x| *x -= c);
            for t in 0..n {
                change = change.max((next[t] - f[g][t]).abs());
            }
            f[g] = next;
        }
        if s == 1 || change < BACKFIT_TOL {
            break;
        }
    }
    (0..s)
        .map(|g| {
            for t in 0..n {
                partial[t] = data.y[t] - mean - (0..s).filter(|&o| o != g).map(|o| f[o][t]).sum::<f64>();
            }
            let lo = v[g].iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v[g].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
            let grid: Vec<f64> = (0..grid_points)
                .map(|k| lo + (hi - lo) * k as f64 / (grid_points - 1) as f64)
                .collect();
            let at_data = smooth_1d(&v[g], &partial, h[g], &v[g]);
            let c = at_data.iter().sum::<f64>() / n as f64;
            let shift = if g == 0 { mean - c } else { -c };
            let values = smooth_1d(&v[g], &partial, h[g], &grid)
                .into_iter()
                .map(|x| x + shift)
                .collect();
            LinkTable { v: grid, g: values }
        })
        .collect()
}

/// Fits the groupwise index model described by `spec` to `panel`.
pub fn fit(panel: &TimeSeriesPanel, spec: &ModelSpec, cfg: &FitConfig) -> Result<GroupwiseFit> {
    cfg.validate(spec.n_groups())?;
    let layout = Layout::new(spec)?;
    let k = layout.len();
    let n = panel.n_obs();
    if n <= k {
        return Err(SceError::InsufficientData {
            required: k + 1,
            actual: n,
        });
    }
    let n_cols = panel.n_vars();
    if spec.response >= n_cols || layout.column_of.iter().any(|&c| c >= n_cols) {
        return Err(SceError::invalid("model refers to a column outside the panel"));
    }
    let labels = panel.labels();
    if labels[spec.response] != spec.response_label {
        return Err(SceError::Consistency(format!(
            "panel column {} is '{}', model expects response '{}'",
            spec.response, labels[spec.response], spec.response_label
        )));
    }
    let y = panel.column(spec.response).to_vec();
    if std_dev(&y) == 0.0 {
        return Err(SceError::DegenerateResponse);
    }
    let data = Data {
        x: panel.columns().to_vec(),
        y,
        n,
    };
    let vars = spec.variables();
    for &v in &vars {
        if !(std_dev(&data.x[v]) > 0.0) {
            return Err(SceError::DegenerateColumn {
                label: labels[v].clone(),
                reason: "zero sample standard deviation".into(),
            });
        }
    }
    let s = spec.n_groups();

    let mut beta = initial_beta(&data, &layout, &vars);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ridge_any = false;
    let mut increases = 0;
    let mut lambda = vec![0.0; k];
    let mut h = Vec::new();
    for iteration in 1..=cfg.max_iter {
        let v = data.indices(&layout, &beta, s);
        h = index_bandwidths(cfg, &v, n)?;
        let (design, rhs, base) = pooled_update(&data, &layout, &v, &h);
        let sol = sign_constrained_quadratic(&design, &rhs, &layout.signs)?;
        ridge_any |= sol.ridge_applied;
        let raw: Vec<f64> = sol.beta.iter().copied().collect();
        let objective = base - 2.0 * rhs.dot(&sol.beta) + sol.beta.dot(&(&design * &sol.beta));
        if let Some(prev) = trace.last().map(|r: &IterationRecord| r.objective) {
            if objective > prev + OBJECTIVE_SLACK * prev.abs().max(1.0) {
                increases += 1;
            }
        }
        let next = normalize(&layout, &raw, &beta);
        let max_change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = sol.lambda.iter().copied().collect();
        trace.push(IterationRecord {
            iteration,
            objective,
            max_change,
            unconstrained: sol.unconstrained.iter().copied().collect(),
            constrained: raw,
            lambda: lambda.clone(),
            active: sol.active,
            ridge_applied: sol.ridge_applied,
            design: (0..k).map(|r| design.row(r).iter().copied().collect()).collect(),
        });
        beta = next;
        if max_change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let v = data.indices(&layout, &beta, s);
    let link_h = match &cfg.bandwidth {
        BandwidthRule::Fixed(h) => h.clone(),
        BandwidthRule::RuleOfThumb => v
            .iter()
            .map(|vs| 1.06 * std_dev(vs).max(f64::MIN_POSITIVE) * (n as f64).powf(-0.2))
            .collect(),
    };
    let links = fit_links(&data, &v, &link_h, cfg.grid_points);

    let groups = spec
        .groups
        .iter()
        .zip(&spec.group_labels)
        .zip(&layout.ranges)
        .map(|((g, l), r)| GroupCoefficients {
            variables: g.clone(),
            labels: l.clone(),
            beta: beta[r.clone()].to_vec(),
        })
        .collect();
    let mut out = GroupwiseFit {
        response_label: spec.response_label.clone(),
        groups,
        signs: layout.signs.clone(),
        links,
        lambda,
        iterations: trace.len(),
        converged,
        r_squared: f64::NAN,
        index_bandwidths: h,
        link_bandwidths: link_h,
        ridge_applied: ridge_any,
        objective_increases: increases,
        trace,
    };
    out.r_squared = explained_variation(&out, panel, spec)?;
    Ok(out)
}
