//! Sign-constrained quadratic minimization.
//!
//! Solves `min_b 1/2 b^T A b - c^T b` subject to `sign_k * b_k >= 0` for a
//! symmetric positive definite `A`. Flipping coordinates by their signs
//! turns this into a non-negativity constrained problem, which is solved by
//! the Lawson-Hanson active-set iteration written directly in terms of
//! `A` and `c`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SceError};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    /// Constrained minimizer.
    pub beta: DVector<f64>,
    /// Unconstrained minimizer `A^-1 c`.
    pub unconstrained: DVector<f64>,
    /// Multipliers: `A beta - c = diag(lambda_k * sign_k)`, `lambda >= 0`,
    /// and `lambda_k = 0` for every coordinate not held at zero.
    pub lambda: DVector<f64>,
    /// Coordinates held at zero by their constraint.
    pub active: Vec<bool>,
    /// A ridge of `1e-8 * trace(A)` had to be added to factor `A`.
    pub ridge_applied: bool,
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

fn sub_system(h: &DMatrix<f64>, g: &DVector<f64>, idx: &[usize]) -> Option<DVector<f64>> {
    let n = idx.len();
    let hs = DMatrix::from_fn(n, n, |i, j| h[(idx[i], idx[j])]);
    let gs = DVector::from_fn(n, |i, _| g[idx[i]]);
    solve_spd(&hs, &gs)
}

/// Minimizes `1/2 b^T A b - c^T b` subject to `signs[k] * b[k] >= 0`.
/// `signs` entries must be `+1` or `-1`.
pub fn sign_constrained_quadratic(a: &DMatrix<f64>, c: &DVector<f64>, signs: &[i8]) -> Result<ConstrainedSolution> {
    let n = c.len();
    if a.nrows() != n || a.ncols() != n || signs.len() != n {
        return Err(SceError::DimensionMismatch {
            expected: n,
            actual: a.nrows().max(signs.len()),
        });
    }
    if signs.iter().any(|&s| s != 1 && s != -1) {
        return Err(SceError::invalid("signs must be +1 or -1"));
    }
    let mut a = (a + a.transpose()) * 0.5;
    let mut ridge_applied = false;
    if a.clone().cholesky().is_none() {
        let ridge = 1e-8 * a.trace().abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        ridge_applied = true;
        if a.clone().cholesky().is_none() {
            return Err(SceError::Consistency("quadratic form is not positive definite even after ridge".into()));
        }
    }
    let unconstrained = solve_spd(&a, c).expect("factored above");

    // u = D b, H = D A D, g = D c
    let d = |k: usize| signs[k] as f64;
    let h = DMatrix::from_fn(n, n, |i, j| d(i) * d(j) * a[(i, j)]);
    let g = DVector::from_fn(n, |i, _| d(i) * c[i]);

    let scale = g.amax().max(h.amax()).max(1.0);
    let tol = 1e-12 * scale;
    let mut passive = vec![false; n];
    let mut u = DVector::<f64>::zeros(n);
    let mut outer = 0;
    loop {
        let w = &g - &h * &u;
        let candidate = (0..n)
            .filter(|&k| !passive[k])
            .max_by(|&x, &y| w[x].total_cmp(&w[y]));
        let t = match candidate {
            Some(t) if w[t] > tol => t,
            _ => break,
        };
        passive[t] = true;
        outer += 1;
        if outer > 10 * n + 10 {
            break;
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let zp = sub_system(&h, &g, &idx)
                .ok_or_else(|| SceError::Consistency("passive subsystem is singular".into()))?;
            let mut z = DVector::<f64>::zeros(n);
            for (pos, &k) in idx.iter().enumerate() {
                z[k] = zp[pos];
            }
            if idx.iter().all(|&k| z[k] > 0.0) {
                u = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&k| z[k] <= 0.0)
                .map(|&k| u[k] / (u[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            u = &u + (&z - &u) * alpha;
            for &k in &idx {
                if u[k] <= tol.min(1e-14) || z[k] <= 0.0 && u[k] <= 1e-14 {
                    passive[k] = false;
                    u[k] = 0.0;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    for k in 0..n {
        if !passive[k] {
            u[k] = 0.0;
        }
    }
    let grad = &h * &u - &g;
    let lambda = DVector::from_fn(n, |k, _| if passive[k] { 0.0 } else { grad[k].max(0.0) });
    let beta = DVector::from_fn(n, |k, _| d(k) * u[k]);
    Ok(ConstrainedSolution {
        beta,
        unconstrained,
        lambda,
        active: passive.iter().map(|p| !p).collect(),
        ridge_applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every zero pattern and returns the KKT point.
    fn brute_force(a: &DMatrix<f64>, c: &DVector<f64>, signs: &[i8]) -> DVector<f64> {
        let n = c.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << n) {
            let free: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
            let mut b = DVector::zeros(n);
            if !free.is_empty() {
                let af = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
                let cf = DVector::from_fn(free.len(), |i, _| c[free[i]]);
                let sol = af.lu().solve(&cf).unwrap();
                for (p, &k) in free.iter().enumerate() {
                    b[k] = sol[p];
                }
            }
            let feasible = (0..n).all(|k| signs[k] as f64 * b[k] >= -1e-12);
            if !feasible {
                continue;
            }
            let obj = 0.5 * b.dot(&(a * &b)) - c.dot(&b);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, b));
            }
        }
        best.unwrap().1
    }

    fn spd(n: usize, vals: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| vals[(i * n + j) % vals.len()]);
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn agreeing_signs_leave_solution_unconstrained() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let s = sign_constrained_quadratic(&a, &c, &[1, 1]).unwrap();
        assert!((&s.beta - &s.unconstrained).amax() < 1e-14);
        assert_eq!(s.lambda.amax(), 0.0);
    }

    #[test]
    fn single_violator_matches_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let c = DVector::from_vec(vec![1.0, 0.5]);
        let s = sign_constrained_quadratic(&a, &c, &[1, 1]).unwrap();
        assert!(s.unconstrained[1] < 0.0);
        assert_eq!(s.beta[1], 0.0);
        assert!((s.beta[0] - 1.0).abs() < 1e-14);
        // lambda = minimal multiplier making beta_1 zero: (A beta - c)_1
        assert!((s.lambda[1] - 0.4).abs() < 1e-14);
        assert!(s.active[1] && !s.active[0]);
    }

    #[test]
    fn singular_matrix_gets_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let s = sign_constrained_quadratic(&a, &c, &[1, 1]).unwrap();
        assert!(s.ridge_applied);
    }

    #[test]
    fn rejects_bad_signs() {
        let a = DMatrix::identity(2, 2);
        let c = DVector::zeros(2);
        assert!(sign_constrained_quadratic(&a, &c, &[1, 0]).is_err());
        assert!(sign_constrained_quadratic(&a, &c, &[1]).is_err());
    }

    proptest! {
        #[test]
        fn matches_active_set_enumeration(
            n in 1usize..=8,
            vals in proptest::collection::vec(-1.0f64..1.0, 64),
            cv in proptest::collection::vec(-2.0f64..2.0, 8),
            sv in proptest::collection::vec(any::<bool>(), 8),
        ) {
            let a = spd(n, &vals);
            let c = DVector::from_fn(n, |i, _| cv[i]);
            let signs: Vec<i8> = sv[..n].iter().map(|&b| if b { 1 } else { -1 }).collect();
            let s = sign_constrained_quadratic(&a, &c, &signs).unwrap();
            let oracle = brute_force(&a, &c, &signs);
            prop_assert!((&s.beta - &oracle).amax() < 1e-8, "{} vs {}", s.beta, oracle);
            for k in 0..n {
                prop_assert!(signs[k] as f64 * s.beta[k] >= 0.0);
                prop_assert!(s.lambda[k] >= 0.0);
                prop_assert_eq!(s.lambda[k] * s.beta[k], 0.0);
            }
            // stationarity: A beta - c = diag(lambda * sign)
            let r = &a * &s.beta - &c;
            for k in 0..n {
                let expect = if s.active[k] { s.lambda[k] * signs[k] as f64 } else { 0.0 };
                prop_assert!((r[k] - expect).abs() < 1e-8);
            }
        }
    }
}
