//! Synthetic sparse covariance models, dependent panel generators and the
//! error-scaling experiment for thresholded estimates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{sample_covariance, TimeSeriesPanel};
use crate::cv::{default_grid, default_segment_sizes, select_threshold, CvConfig, MatrixKind};
use crate::error::{Result, SceError};
use crate::matrix::{default_labels, format_f64, SymMatrix, UniformityParams};
use crate::par;

/// Smallest eigenvalue every generated model is pushed to.
pub const MIN_EIGENVALUE: f64 = 0.1;

const BURN_IN: usize = 500;

/// SplitMix64 mixing of a base seed with a list of stream coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    coords.iter().fold(mix(seed), |acc, &c| mix(acc ^ mix(c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovStructure {
    Diagonal,
    /// Consecutive dense blocks; within-block correlation drawn per block
    /// from `U[0.3, 0.6]`.
    Block { sizes: Vec<usize> },
    /// `sigma_ij = decay^|i-j|` for `0 < |i-j| <= bandwidth`.
    Banded { bandwidth: usize, decay: f64 },
    /// Bernoulli(`density`) off-diagonal support with values `U(+-[0.2, 0.5])`.
    RandomSparse { density: f64 },
}

/// A positive definite, unit-diagonal covariance with known sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCovModel {
    pub sigma: SymMatrix,
    pub params: UniformityParams,
    pub structure: CovStructure,
}

/// Builds a model of the requested structure. The raw pattern `A` (unit
/// diagonal) is shifted and rescaled as `(A + dI) / (1 + d)` with the
/// smallest `d >= 0` that lifts the minimum eigenvalue to
/// [`MIN_EIGENVALUE`], which keeps the diagonal at exactly one.
pub fn make_sparse_cov(dim: usize, structure: CovStructure, seed: u64) -> Result<SparseCovModel> {
    if dim == 0 {
        return Err(SceError::invalid("dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::<f64>::identity(dim, dim);
    match &structure {
        CovStructure::Diagonal => {}
        CovStructure::Block { sizes } => {
            if sizes.contains(&0) || sizes.iter().sum::<usize>() != dim {
                return Err(SceError::invalid(format!(
                    "block sizes {sizes:?} must be positive and sum to {dim}"
                )));
            }
            let mut start = 0;
            for &size in sizes {
                let rho: f64 = rng.random_range(0.3..0.6);
                for i in start..start + size {
                    for j in start..start + size {
                        if i != j {
                            a[(i, j)] = rho;
                        }
                    }
                }
                start += size;
            }
        }
        CovStructure::Banded { bandwidth, decay } => {
            if !(decay.abs() < 1.0) {
                return Err(SceError::invalid(format!("decay must satisfy |decay| < 1, got {decay}")));
            }
            for i in 0..dim {
                for j in 0..dim {
                    let d = i.abs_diff(j);
                    if d > 0 && d <= *bandwidth {
                        a[(i, j)] = decay.powi(d as i32);
                    }
                }
            }
        }
        CovStructure::RandomSparse { density } => {
            if !(0.0..=1.0).contains(density) {
                return Err(SceError::invalid(format!("density must lie in [0, 1], got {density}")));
            }
            for j in 0..dim {
                for i in 0..j {
                    if rng.random_bool(*density) {
                        let mag: f64 = rng.random_range(0.2..=0.5);
                        let v = if rng.random_bool(0.5) { mag } else { -mag };
                        a[(i, j)] = v;
                        a[(j, i)] = v;
                    }
                }
            }
        }
    }
    let raw = SymMatrix::new(default_labels(dim), a.clone())?;
    let lambda = raw.min_eigenvalue();
    // small margin so the post-hoc eigenvalue check clears MIN_EIGENVALUE
    let target = MIN_EIGENVALUE + 1e-9;
    let sigma = if lambda >= target {
        raw
    } else {
        let delta = (target - lambda) / (1.0 - target);
        let shifted = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                1.0
            } else {
                a[(i, j)] / (1.0 + delta)
            }
        });
        SymMatrix::new(default_labels(dim), shifted)?
    };
    let d = sigma.uniformity_diagnostics(0.0)?;
    let params = UniformityParams::new(0.0, d.max_row_q_norm, d.max_diag)?;
    Ok(SparseCovModel {
        sigma,
        params,
        structure,
    })
}

/// Temporal dependence of a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DependenceSpec {
    Iid,
    /// Equal-weight moving average of `m + 1` innovations.
    MDependent { m: usize },
    /// Stable VAR(1) `X_t = A X_{t-1} + eta_t`; `coeff` holds the rows of `A`.
    Var1 { coeff: Vec<Vec<f64>> },
}

impl DependenceSpec {
    /// VAR(1) specification, rejecting coefficient matrices with spectral
    /// radius `>= 1`.
    pub fn var1(coeff: DMatrix<f64>) -> Result<Self> {
        let spec = DependenceSpec::Var1 {
            coeff: (0..coeff.nrows())
                .map(|i| coeff.row(i).iter().copied().collect())
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `A = radius * I`.
    pub fn var1_scaled_identity(dim: usize, radius: f64) -> Result<Self> {
        Self::var1(DMatrix::identity(dim, dim) * radius)
    }

    fn coeff_matrix(coeff: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let n = coeff.len();
        if n == 0 || coeff.iter().any(|r| r.len() != n) {
            return Err(SceError::invalid("VAR(1) coefficient matrix must be square and non-empty"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| coeff[i][j]))
    }

    pub fn validate(&self) -> Result<()> {
        if let DependenceSpec::Var1 { coeff } = self {
            let a = Self::coeff_matrix(coeff)?;
            let rho = spectral_radius(&a);
            if !(rho < 1.0) {
                return Err(SceError::InfeasibleDependence(format!(
                    "VAR(1) coefficient has spectral radius {rho} >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Scalar dependence level: `m` for moving averages, the spectral
    /// radius for VAR(1), 0 for iid.
    pub fn level(&self) -> f64 {
        match self {
            DependenceSpec::Iid => 0.0,
            DependenceSpec::MDependent { m } => *m as f64,
            DependenceSpec::Var1 { coeff } => Self::coeff_matrix(coeff).map(|a| spectral_radius(&a)).unwrap_or(f64::NAN),
        }
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

fn normal_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Draws `n_obs` rows with marginal covariance `model.sigma` and the given
/// temporal dependence. `m = 0` and iid share one code path and therefore
/// produce identical panels for the same seed.
pub fn gen_panel(
    model: &SparseCovModel,
    dep: &DependenceSpec,
    n_obs: usize,
    seed: u64,
) -> Result<TimeSeriesPanel> {
    if n_obs < 2 {
        return Err(SceError::InsufficientData {
            required: 2,
            actual: n_obs,
        });
    }
    let dim = model.sigma.dim();
    let sigma = model.sigma.entries();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<DVector<f64>> = match dep {
        DependenceSpec::Iid | DependenceSpec::MDependent { .. } => {
            let m = match dep {
                DependenceSpec::MDependent { m } => *m,
                _ => 0,
            };
            let l = cholesky_lower(sigma)
                .ok_or_else(|| SceError::invalid("model covariance is not positive definite"))?;
            let eps: Vec<DVector<f64>> = (0..n_obs + m).map(|_| normal_vector(&mut rng, dim)).collect();
            let w = 1.0 / ((m + 1) as f64).sqrt();
            (0..n_obs)
                .map(|t| {
                    let mut acc = eps[t].clone();
                    for e in &eps[t + 1..=t + m] {
                        acc += e;
                    }
                    &l * (acc * w)
                })
                .collect()
        }
        DependenceSpec::Var1 { coeff } => {
            dep.validate()?;
            let a = DependenceSpec::coeff_matrix(coeff)?;
            if a.nrows() != dim {
                return Err(SceError::DimensionMismatch {
                    expected: dim,
                    actual: a.nrows(),
                });
            }
            // stationary covariance Sigma = A Sigma A^T + Q
            let q = sigma - &a * sigma * a.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let lq = cholesky_lower(&q).ok_or_else(|| {
                SceError::InfeasibleDependence(
                    "innovation covariance Sigma - A Sigma A^T is not positive definite".into(),
                )
            })?;
            let mut x = DVector::zeros(dim);
            let mut out = Vec::with_capacity(n_obs);
            for step in 0..BURN_IN + n_obs {
                x = &a * &x + &lq * normal_vector(&mut rng, dim);
                if step >= BURN_IN {
                    out.push(x.clone());
                }
            }
            out
        }
    };
    let columns = (0..dim).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    TimeSeriesPanel::from_columns(model.sigma.labels().to_vec(), columns)
}

/// Fractional cover number of the time index set: 1 for independent rows,
/// `min(m + 1, T)` for `m`-dependent rows.
pub fn fractional_cover_size(dep: &DependenceSpec, n_obs: usize) -> Result<f64> {
    match dep {
        DependenceSpec::Iid => Ok(1.0),
        DependenceSpec::MDependent { m } => Ok(if m + 1 < n_obs { (m + 1) as f64 } else { n_obs as f64 }),
        DependenceSpec::Var1 { .. } => Err(SceError::NotApplicable(
            "VAR(1) processes have no finite proper fractional cover; use the mixing rate instead".into(),
        )),
    }
}

/// Link functions for synthetic index-model responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Square,
    Sine,
    Tanh,
    Cubic,
}

impl Link {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Link::Identity => v,
            Link::Square => v * v,
            Link::Sine => v.sin(),
            Link::Tanh => v.tanh(),
            Link::Cubic => v + 0.25 * v * v * v,
        }
    }
}

/// A response `y = sum_s g_s(beta_s^T x_{A_s}) + noise` over predictor
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexModel {
    pub groups: Vec<Vec<usize>>,
    pub betas: Vec<Vec<f64>>,
    pub links: Vec<Link>,
    pub noise_sd: f64,
}

impl IndexModel {
    pub fn mean_response(&self, x: &[f64]) -> f64 {
        self.groups
            .iter()
            .zip(&self.betas)
            .zip(&self.links)
            .map(|((g, b), link)| link.eval(g.iter().zip(b).map(|(&k, w)| x[k] * w).sum()))
            .sum()
    }
}

/// Generates predictors from `model` and appends a response column
/// `response_label` drawn from `index_model`.
pub fn gen_index_panel(
    model: &SparseCovModel,
    dep: &DependenceSpec,
    index_model: &IndexModel,
    n_obs: usize,
    seed: u64,
    response_label: &str,
) -> Result<TimeSeriesPanel> {
    let x = gen_panel(model, dep, n_obs, seed)?;
    let dim = x.n_vars();
    for (g, b) in index_model.groups.iter().zip(&index_model.betas) {
        if g.len() != b.len() || g.iter().any(|&k| k >= dim) {
            return Err(SceError::invalid("index model groups do not match the predictor panel"));
        }
    }
    if index_model.groups.len() != index_model.betas.len() || index_model.groups.len() != index_model.links.len() {
        return Err(SceError::invalid("index model needs one beta and one link per group"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eed]));
    let y: Vec<f64> = (0..n_obs)
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            index_model.mean_response(&x.row(t)) + index_model.noise_sd * e
        })
        .collect();
    let mut labels = x.labels().to_vec();
    labels.push(response_label.to_string());
    let mut columns = x.columns().to_vec();
    columns.push(y);
    TimeSeriesPanel::from_columns(labels, columns)
}

/// Cross-validation settings reused for every panel of an experiment; the
/// segment sizes and grid are derived per panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvTemplate {
    pub n_splits: usize,
    pub grid_size: usize,
}

impl Default for CvTemplate {
    fn default() -> Self {
        CvTemplate {
            n_splits: crate::cv::DEFAULT_N_SPLITS,
            grid_size: crate::cv::DEFAULT_GRID_SIZE,
        }
    }
}

impl CvTemplate {
    pub fn instantiate(&self, panel: &TimeSeriesPanel, estimate: &SymMatrix, seed: u64) -> Result<CvConfig> {
        let (t1, t2) = default_segment_sizes(panel.n_obs())?;
        CvConfig::new(t1, t2, self.n_splits, default_grid(estimate, self.grid_size), seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n_obs: usize,
    pub dependence: f64,
    pub rep: usize,
    pub threshold: f64,
    pub op_error: f64,
    pub frob_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n_obs: usize,
    pub median_op_error: f64,
    pub median_frob_error: f64,
    pub median_threshold: f64,
    /// `c0 (log J * cover / T)^((1 - q) / 2)`.
    pub theoretical_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub dim: usize,
    pub dependence: DependenceSpec,
    pub rows: Vec<RateRow>,
    pub summary: Vec<RateSummary>,
}

impl RateReport {
    /// CSV with columns `T, m_or_radius, rep, op_error, frob_error`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["T", "m_or_radius", "rep", "op_error", "frob_error"])?;
        for r in &self.rows {
            w.write_record([
                r.n_obs.to_string(),
                format_f64(r.dependence),
                r.rep.to_string(),
                format_f64(r.op_error),
                format_f64(r.frob_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn median_op_error(&self, n_obs: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.n_obs == n_obs).map(|s| s.median_op_error)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For each `T` and repetition: simulate a panel, choose the threshold by
/// cross-validation on the sample covariance, and record the operator-norm
/// error and the normalized Frobenius error `J^-1 ||.||_F^2` of the
/// thresholded estimate against the true covariance.
///
/// Repetition `r` at the `i`-th sample size uses the seed
/// `derive_seed(seed, [i, r])` whatever the dependence, so experiments that
/// differ only in `dep` see common random numbers.
pub fn rate_experiment(
    model: &SparseCovModel,
    dep: &DependenceSpec,
    t_list: &[usize],
    n_reps: usize,
    cv: &CvTemplate,
    seed: u64,
) -> Result<RateReport> {
    if n_reps == 0 {
        return Err(SceError::invalid("n_reps must be at least 1"));
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SceError::invalid("T list must be non-empty and strictly increasing"));
    }
    let dim = model.sigma.dim();
    let jobs: Vec<(usize, usize)> = (0..t_list.len()).flat_map(|i| (0..n_reps).map(move |r| (i, r))).collect();
    let rows = par::map_indexed(jobs.len(), |k| -> Result<RateRow> {
        let (i, r) = jobs[k];
        let n_obs = t_list[i];
        let rep_seed = derive_seed(seed, &[i as u64, r as u64]);
        let panel = gen_panel(model, dep, n_obs, rep_seed)?;
        let est = sample_covariance(&panel)?;
        let cfg = cv.instantiate(&panel, &est, derive_seed(rep_seed, &[1]))?;
        let cvr = select_threshold(&panel, &cfg, MatrixKind::Covariance)?;
        let err = est.hard_threshold(cvr.full_sample_threshold)?.sub(&model.sigma)?;
        let frob = err.frobenius_norm();
        Ok(RateRow {
            n_obs,
            dependence: dep.level(),
            rep: r,
            threshold: cvr.full_sample_threshold,
            op_error: err.operator_norm(),
            frob_error: frob * frob / dim as f64,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let log_j = (dim.max(2) as f64).ln();
    let summary = t_list
        .iter()
        .map(|&n_obs| {
            let sel: Vec<&RateRow> = rows.iter().filter(|r| r.n_obs == n_obs).collect();
            let pick = |f: fn(&RateRow) -> f64| median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            let cover = fractional_cover_size(dep, n_obs).unwrap_or(1.0);
            RateSummary {
                n_obs,
                median_op_error: pick(|r| r.op_error),
                median_frob_error: pick(|r| r.frob_error),
                median_threshold: pick(|r| r.threshold),
                theoretical_rate: model.params.c0 * (log_j * cover / n_obs as f64).powf((1.0 - model.params.q) / 2.0),
            }
        })
        .collect();
    Ok(RateReport {
        dim,
        dependence: dep.clone(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_model_is_identity() {
        let m = make_sparse_cov(5, CovStructure::Diagonal, 1).unwrap();
        assert_eq!(m.sigma, SymMatrix::identity(default_labels(5)).unwrap());
        assert_eq!(m.params.c0, 1.0);
    }

    #[test]
    fn block_model_has_zero_off_block() {
        let m = make_sparse_cov(6, CovStructure::Block { sizes: vec![3, 3] }, 3).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let same = (i < 3) == (j < 3);
                assert_eq!(m.sigma.get(i, j) != 0.0, same, "({i},{j})");
            }
        }
        assert!(make_sparse_cov(6, CovStructure::Block { sizes: vec![3, 2] }, 3).is_err());
        assert!(make_sparse_cov(6, CovStructure::Block { sizes: vec![6, 0] }, 3).is_err());
    }

    #[test]
    fn generated_models_are_valid() {
        let structures = [
            CovStructure::Diagonal,
            CovStructure::Block { sizes: vec![4, 1, 5] },
            CovStructure::Banded { bandwidth: 3, decay: 0.8 },
            CovStructure::RandomSparse { density: 0.3 },
            CovStructure::RandomSparse { density: 1.0 },
        ];
        for (k, s) in structures.into_iter().enumerate() {
            for seed in 0..5 {
                let m = make_sparse_cov(10, s.clone(), seed + 10 * k as u64).unwrap();
                assert!(m.sigma.min_eigenvalue() >= MIN_EIGENVALUE, "{s:?}");
                assert!(m.params.contains(&m.sigma));
                assert!((0..10).all(|i| m.sigma.get(i, i) == 1.0));
            }
        }
        assert!(make_sparse_cov(4, CovStructure::RandomSparse { density: 1.5 }, 0).is_err());
        assert!(make_sparse_cov(4, CovStructure::Banded { bandwidth: 1, decay: 1.0 }, 0).is_err());
    }

    #[test]
    fn m_zero_equals_iid() {
        let m = make_sparse_cov(4, CovStructure::Banded { bandwidth: 1, decay: 0.5 }, 0).unwrap();
        let a = gen_panel(&m, &DependenceSpec::Iid, 50, 9).unwrap();
        let b = gen_panel(&m, &DependenceSpec::MDependent { m: 0 }, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, gen_panel(&m, &DependenceSpec::Iid, 50, 9).unwrap());
        assert_ne!(a, gen_panel(&m, &DependenceSpec::Iid, 50, 10).unwrap());
    }

    #[test]
    fn cover_sizes() {
        assert_eq!(fractional_cover_size(&DependenceSpec::Iid, 10).unwrap(), 1.0);
        assert_eq!(fractional_cover_size(&DependenceSpec::MDependent { m: 3 }, 100).unwrap(), 4.0);
        assert_eq!(fractional_cover_size(&DependenceSpec::MDependent { m: 99 }, 50).unwrap(), 50.0);
        let v = DependenceSpec::var1_scaled_identity(2, 0.5).unwrap();
        assert!(matches!(fractional_cover_size(&v, 10), Err(SceError::NotApplicable(_))));
    }

    #[test]
    fn var1_rejects_unstable_and_infeasible() {
        assert!(DependenceSpec::var1_scaled_identity(3, 1.0).is_err());
        let diag = make_sparse_cov(2, CovStructure::Diagonal, 0).unwrap();
        let rot = DependenceSpec::var1(DMatrix::from_row_slice(2, 2, &[0.0, -0.95, 0.95, 0.0])).unwrap();
        assert!(gen_panel(&diag, &rot, 10, 0).is_ok());
        // with correlated Sigma the rotation flips the sign of the
        // off-diagonal, so Sigma - A Sigma A^T is indefinite
        let corr = make_sparse_cov(2, CovStructure::Block { sizes: vec![2] }, 0).unwrap();
        assert!(matches!(gen_panel(&corr, &rot, 10, 0), Err(SceError::InfeasibleDependence(_))));
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2]), derive_seed(5, &[2]));
    }
}
