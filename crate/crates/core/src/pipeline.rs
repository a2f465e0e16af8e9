//! Screening and clustering of predictors.
//!
//! Screening thresholds the full Spearman matrix (response included) at a
//! cross-validated level and keeps the predictors whose regularized
//! correlation with the response is nonzero. Clustering then groups the
//! kept predictors with the averaged non-zero score
//! `S_A = #{(i, j) in A x A : r_ij != 0} / |A|^2`, growing one index set at
//! a time from the highest-degree remaining variable.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::covariance::{spearman_matrix, standardize, TimeSeriesPanel};
use crate::cv::{select_threshold, CvConfig, CvResult, MatrixKind};
use crate::error::{Result, SceError};
use crate::matrix::SymMatrix;

/// Outcome of the screening step.
///
/// `regularized` is the thresholded Spearman matrix restricted to the kept
/// predictors (positions `0..K`, in `kept` order) followed by the response
/// at position `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub threshold: f64,
    pub response: usize,
    pub response_label: String,
    /// Panel column indices, ordered by `|r_kJ|` descending.
    pub kept: Vec<usize>,
    pub kept_labels: Vec<String>,
    pub regularized: SymMatrix,
    pub response_correlations: Vec<f64>,
    pub response_signs: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvResult>,
}

impl ScreenResult {
    /// Builds a screen from an already thresholded `J x J` matrix whose
    /// variable `response` is the response; matrix indices stand in for
    /// panel column indices.
    pub fn from_regularized(full: &SymMatrix, response: usize, threshold: f64) -> Result<Self> {
        let j = full.dim();
        if response >= j {
            return Err(SceError::invalid(format!("response index {response} out of range")));
        }
        let mut kept: Vec<usize> = (0..j).filter(|&k| k != response && full.get(k, response) != 0.0).collect();
        if kept.is_empty() {
            let max_abs = (0..j)
                .filter(|&k| k != response)
                .map(|k| full.get(k, response).abs())
                .fold(0.0, f64::max);
            return Err(SceError::EmptyScreen { threshold, max_abs });
        }
        kept.sort_by(|&a, &b| {
            full.get(b, response)
                .abs()
                .total_cmp(&full.get(a, response).abs())
                .then(a.cmp(&b))
        });
        let mut order = kept.clone();
        order.push(response);
        let regularized = full.submatrix(&order)?;
        let response_correlations: Vec<f64> = kept.iter().map(|&k| full.get(k, response)).collect();
        Ok(ScreenResult {
            threshold,
            response,
            response_label: full.labels()[response].clone(),
            kept_labels: kept.iter().map(|&k| full.labels()[k].clone()).collect(),
            response_signs: response_correlations.iter().map(|r| if *r > 0.0 { 1 } else { -1 }).collect(),
            response_correlations,
            kept,
            regularized,
            cv: None,
        })
    }

    pub fn n_kept(&self) -> usize {
        self.kept.len()
    }

    /// Position of panel column `var` among the kept predictors.
    pub fn position_of(&self, var: usize) -> Option<usize> {
        self.kept.iter().position(|&k| k == var)
    }
}

/// Screens the predictors of `panel` against `response_label` using the
/// Spearman matrix thresholded at the level chosen by `cv`.
pub fn screen(panel: &TimeSeriesPanel, response_label: &str, cv: &CvConfig) -> Result<ScreenResult> {
    let response = panel
        .index_of(response_label)
        .ok_or_else(|| SceError::invalid(format!("response `{response_label}` not found in panel")))?;
    if panel.n_vars() < 2 {
        return Err(SceError::invalid("screening needs at least one predictor besides the response"));
    }
    let z = standardize(panel)?;
    let cvr = select_threshold(&z, cv, MatrixKind::Spearman)?;
    let full = spearman_matrix(&z)?;
    let regularized = full.hard_threshold(cvr.full_sample_threshold)?;
    match ScreenResult::from_regularized(&regularized, response, cvr.full_sample_threshold) {
        Ok(mut s) => {
            s.cv = Some(cvr);
            Ok(s)
        }
        Err(SceError::EmptyScreen { threshold, .. }) => {
            // report the largest raw correlation, not the thresholded one
            let max_abs = (0..full.dim())
                .filter(|&k| k != response)
                .map(|k| full.get(k, response).abs())
                .fold(0.0, f64::max);
            Err(SceError::EmptyScreen { threshold, max_abs })
        }
        Err(e) => Err(e),
    }
}

/// Fraction of nonzero entries in the submatrix on `set` (diagonal included).
pub fn nz_score(set: &[usize], regularized: &SymMatrix) -> Result<f64> {
    if set.is_empty() {
        return Err(SceError::invalid("score of an empty index set"));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= regularized.dim()) {
        return Err(SceError::invalid(format!("index {bad} out of range")));
    }
    Ok(score_unchecked(set, regularized))
}

fn score_unchecked(set: &[usize], m: &SymMatrix) -> f64 {
    let nz = set
        .iter()
        .map(|&i| set.iter().filter(|&&j| m.get(i, j) != 0.0).count())
        .sum::<usize>();
    nz as f64 / (set.len() * set.len()) as f64
}

/// Orders the kept positions `candidates` by nonzero degree within the
/// candidate submatrix (descending), then by `|r_kJ|` descending, then by
/// panel column index ascending.
pub fn rank_by_degree(candidates: &[usize], screen: &ScreenResult) -> Vec<usize> {
    let m = &screen.regularized;
    let degree = |k: usize| candidates.iter().filter(|&&j| m.get(k, j) != 0.0).count();
    let mut keyed: Vec<(usize, usize)> = candidates.iter().map(|&k| (k, degree(k))).collect();
    keyed.sort_by(|&(a, da), &(b, db)| {
        db.cmp(&da)
            .then(
                screen.response_correlations[b]
                    .abs()
                    .total_cmp(&screen.response_correlations[a].abs()),
            )
            .then(screen.kept[a].cmp(&screen.kept[b]))
    });
    keyed.into_iter().map(|(k, _)| k).collect()
}

/// One admission into an index set, with the set's score right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub variable: usize,
    pub label: String,
    pub score: f64,
    /// Already a member of an earlier set (backward mode only).
    pub readmitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Forward,
    Backward,
}

impl std::str::FromStr for ClusterMode {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(ClusterMode::Forward),
            "backward" => Ok(ClusterMode::Backward),
            other => Err(SceError::invalid(format!("unknown cluster mode `{other}`"))),
        }
    }
}

/// Index sets over the kept predictors (panel column indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub sets: Vec<Vec<usize>>,
    pub set_labels: Vec<Vec<String>>,
    pub overlapping: bool,
    pub scores: Vec<f64>,
    /// Per set, the members in admission order (seed first).
    pub admissions: Vec<Vec<Admission>>,
}

impl ClusterResult {
    /// Plain-text layout: one line per set, then the nonzero pattern of the
    /// regularized matrix with variables permuted set by set.
    pub fn render_text(&self, screen: &ScreenResult) -> String {
        let mut out = String::new();
        for (s, (labels, score)) in self.set_labels.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(out, "A{} (S = {:.4}): {}", s + 1, score, labels.join(", "));
        }
        let mut order = Vec::new();
        let mut seen = BTreeSet::new();
        for set in &self.sets {
            for &v in set {
                if seen.insert(v) {
                    order.push(v);
                }
            }
        }
        let pos: Vec<usize> = order.iter().filter_map(|&v| screen.position_of(v)).collect();
        let width = pos
            .iter()
            .map(|&p| screen.kept_labels[p].len())
            .max()
            .unwrap_or(0);
        let _ = writeln!(out);
        for &p in &pos {
            let _ = write!(out, "{:>width$} ", screen.kept_labels[p]);
            for &q in &pos {
                out.push(if screen.regularized.get(p, q) != 0.0 { '*' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

fn grow_set(
    seed: usize,
    readmit: &[usize],
    candidates: &[usize],
    screen: &ScreenResult,
) -> (Vec<usize>, Vec<Admission>) {
    let m = &screen.regularized;
    let mut set = vec![seed];
    let mut log = vec![Admission {
        variable: screen.kept[seed],
        label: screen.kept_labels[seed].clone(),
        score: score_unchecked(&set, m),
        readmitted: false,
    }];
    let mut current = score_unchecked(&set, m);
    let scan = readmit.iter().map(|&x| (x, true)).chain(candidates.iter().map(|&x| (x, false)));
    for (x, readmitted) in scan {
        set.push(x);
        let s = score_unchecked(&set, m);
        if s >= current {
            current = s;
            log.push(Admission {
                variable: screen.kept[x],
                label: screen.kept_labels[x].clone(),
                score: s,
                readmitted,
            });
        } else {
            set.pop();
        }
    }
    (set, log)
}

fn cluster(screen: &ScreenResult, mode: ClusterMode) -> Result<ClusterResult> {
    let k = screen.n_kept();
    if k == 0 {
        return Err(SceError::invalid("clustering needs at least one kept variable"));
    }
    let global_rank = rank_by_degree(&(0..k).collect::<Vec<_>>(), screen);
    let mut assigned = vec![false; k];
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut admissions = Vec::new();
    while assigned.iter().any(|a| !a) {
        let remaining: Vec<usize> = (0..k).filter(|&i| !assigned[i]).collect();
        let ranked = rank_by_degree(&remaining, screen);
        let readmit: Vec<usize> = match mode {
            ClusterMode::Backward => global_rank.iter().copied().filter(|&i| assigned[i]).collect(),
            ClusterMode::Forward => Vec::new(),
        };
        let (set, log) = grow_set(ranked[0], &readmit, &ranked[1..], screen);
        for &i in &set {
            assigned[i] = true;
        }
        sets.push(set);
        admissions.push(log);
    }
    let scores = sets.iter().map(|s| score_unchecked(s, &screen.regularized)).collect();
    Ok(ClusterResult {
        set_labels: sets
            .iter()
            .map(|s| s.iter().map(|&p| screen.kept_labels[p].clone()).collect())
            .collect(),
        sets: sets
            .iter()
            .map(|s| s.iter().map(|&p| screen.kept[p]).collect())
            .collect(),
        overlapping: mode == ClusterMode::Backward,
        scores,
        admissions,
    })
}

/// Disjoint clustering: each new set is seeded with the top-ranked
/// unassigned variable and admits later variables (in rank order) whenever
/// that does not lower its score.
pub fn cluster_forward(screen: &ScreenResult) -> Result<ClusterResult> {
    cluster(screen, ClusterMode::Forward)
}

/// Overlapping clustering: like [`cluster_forward`], but every new set first
/// scans the already assigned variables (in global rank order) for
/// readmission under the same score rule.
pub fn cluster_backward(screen: &ScreenResult) -> Result<ClusterResult> {
    cluster(screen, ClusterMode::Backward)
}

pub fn cluster_with(screen: &ScreenResult, mode: ClusterMode) -> Result<ClusterResult> {
    cluster(screen, mode)
}

/// Required sign of a predictor's coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignConstraint {
    pub variable: usize,
    pub label: String,
    pub sign: i8,
}

/// Groupwise multiple-index model `E y = sum_s g_s(beta_s^T x_{A_s})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: usize,
    pub response_label: String,
    pub groups: Vec<Vec<usize>>,
    pub group_labels: Vec<Vec<String>>,
    /// One entry per predictor; this order defines the predictor vector
    /// accepted by prediction.
    pub sign_constraints: Vec<SignConstraint>,
}

impl ModelSpec {
    /// `labels` are the panel column labels. Every grouped variable needs a
    /// sign constraint and vice versa.
    pub fn new(labels: &[String], response: usize, groups: Vec<Vec<usize>>, signs: Vec<(usize, i8)>) -> Result<Self> {
        let n = labels.len();
        if response >= n {
            return Err(SceError::invalid(format!("response index {response} out of range")));
        }
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(SceError::invalid("model needs at least one group and no empty groups"));
        }
        for g in &groups {
            let uniq: BTreeSet<_> = g.iter().collect();
            if uniq.len() != g.len() {
                return Err(SceError::invalid("a group lists the same variable twice"));
            }
            if g.iter().any(|&v| v >= n || v == response) {
                return Err(SceError::invalid("group member out of range or equal to the response"));
            }
        }
        let covered: BTreeSet<usize> = groups.iter().flatten().copied().collect();
        let signed: BTreeSet<usize> = signs.iter().map(|(v, _)| *v).collect();
        if covered != signed || signed.len() != signs.len() {
            return Err(SceError::Consistency(
                "groups must cover exactly the sign-constrained variables".into(),
            ));
        }
        if signs.iter().any(|(_, s)| *s != 1 && *s != -1) {
            return Err(SceError::invalid("signs must be +1 or -1"));
        }
        Ok(ModelSpec {
            response,
            response_label: labels[response].clone(),
            group_labels: groups
                .iter()
                .map(|g| g.iter().map(|&v| labels[v].clone()).collect())
                .collect(),
            groups,
            sign_constraints: signs
                .into_iter()
                .map(|(variable, sign)| SignConstraint {
                    variable,
                    label: labels[variable].clone(),
                    sign,
                })
                .collect(),
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Predictor column indices in prediction order.
    pub fn variables(&self) -> Vec<usize> {
        self.sign_constraints.iter().map(|c| c.variable).collect()
    }

    pub fn sign_of(&self, var: usize) -> Option<i8> {
        self.sign_constraints.iter().find(|c| c.variable == var).map(|c| c.sign)
    }

    pub fn is_additive(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    pub fn is_single_index(&self) -> bool {
        self.groups.len() == 1
    }
}

/// One group per index set, with the screening signs attached.
pub fn build_model_spec(screen: &ScreenResult, cluster: &ClusterResult, labels: &[String]) -> Result<ModelSpec> {
    let kept: BTreeSet<usize> = screen.kept.iter().copied().collect();
    let covered: BTreeSet<usize> = cluster.sets.iter().flatten().copied().collect();
    if kept != covered {
        return Err(SceError::Consistency(format!(
            "clusters cover {covered:?} but screening kept {kept:?}"
        )));
    }
    let signs = screen.kept.iter().copied().zip(screen.response_signs.iter().copied()).collect();
    ModelSpec::new(labels, screen.response, cluster.sets.clone(), signs)
}
