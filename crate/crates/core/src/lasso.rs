//! Cyclical coordinate descent for `½ β'Gβ − β'l + λ‖β‖₁`.
//!
//! Both graphical estimators reduce to this quadratic form: the graphical
//! lasso with `G = W₁₁`, `l = s₁₂`, and nodewise regression with
//! `G = X'X/T`, `l = X'y/T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{FgmError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once a full sweep moves no coordinate by more than this.
    pub tol: f64,
    /// Maximum number of sweeps.
    pub max_iter: usize,
    /// After each unconverged full sweep, descend exactly on the current
    /// support and signs before sweeping again.
    pub active_set_solve: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 10_000,
            active_set_solve: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    pub gram: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl LassoProblem {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, lambda: f64) -> Result<Self> {
        let prob = Self {
            gram,
            linear,
            lambda,
        };
        prob.validate()?;
        Ok(prob)
    }

    fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        if self.gram.shape() != (n, n) {
            return Err(FgmError::InvalidInput(format!(
                "gram is {:?}, linear has length {n}",
                self.gram.shape()
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(FgmError::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        check_diagonal(&self.gram)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        0.5 * beta.dot(&(&self.gram * beta)) - beta.dot(&self.linear)
            + self.lambda * beta.lp_norm(1)
    }

    /// Largest violation of the subgradient optimality conditions.
    pub fn kkt_violation(&self, beta: &DVector<f64>) -> f64 {
        let grad = &self.gram * beta - &self.linear;
        grad.iter()
            .zip(beta.iter())
            .map(|(&g, &b)| {
                if b != 0.0 {
                    (g + self.lambda * b.signum()).abs()
                } else {
                    (g.abs() - self.lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

fn check_diagonal(gram: &DMatrix<f64>) -> Result<()> {
    for j in 0..gram.nrows() {
        let d = gram[(j, j)];
        if !(d > 0.0) {
            return Err(FgmError::DegenerateProblem(format!(
                "gram diagonal entry {j} is {d}, must be strictly positive"
            )));
        }
    }
    Ok(())
}

#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

pub fn solve_lasso(prob: &LassoProblem, opts: &LassoOptions) -> Result<LassoFit> {
    solve_lasso_warm(prob, opts, None)
}

/// Solves from `init` (zeros when `None`).
pub fn solve_lasso_warm(
    prob: &LassoProblem,
    opts: &LassoOptions,
    init: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    prob.validate()?;
    let mut beta = match init {
        Some(b) if b.len() == prob.dim() => b.clone(),
        Some(b) => {
            return Err(FgmError::InvalidInput(format!(
                "warm start has length {}, expected {}",
                b.len(),
                prob.dim()
            )))
        }
        None => DVector::zeros(prob.dim()),
    };
    let (converged, sweeps) =
        coordinate_descent(&prob.gram, &prob.linear, prob.lambda, &mut beta, opts);
    Ok(LassoFit {
        beta,
        converged,
        sweeps,
    })
}

/// In-place solver shared with the graphical estimators. The gram diagonal
/// must already be known to be positive. Returns `(converged, sweeps)`.
pub(crate) fn coordinate_descent(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    lambda: f64,
    beta: &mut DVector<f64>,
    opts: &LassoOptions,
) -> (bool, usize) {
    let n = linear.len();
    if n == 0 {
        return (true, 0);
    }
    let pen = vec![lambda; n];
    let mut grad = gram * &*beta;
    cd_core(
        gram,
        linear.as_slice(),
        &pen,
        None,
        None,
        beta,
        &mut grad,
        opts,
    )
}

/// Coordinate descent on `½β'Gβ − β'l + Σ pen_k|β_k|`.
///
/// `grad` must hold `Gβ` on entry and is kept current. Coordinate `skip`, if
/// any, is held at zero and never visited. The stopping rule compares
/// `|Δβ_k|·scale_k` (scale 1 when absent) with `opts.tol`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cd_core(
    gram: &DMatrix<f64>,
    linear: &[f64],
    pen: &[f64],
    scale: Option<&[f64]>,
    skip: Option<usize>,
    beta: &mut DVector<f64>,
    grad: &mut DVector<f64>,
    opts: &LassoOptions,
) -> (bool, usize) {
    let n = linear.len();
    let coords: Vec<usize> = (0..n).filter(|&k| Some(k) != skip).collect();
    let update = |k: usize, beta: &mut DVector<f64>, grad: &mut DVector<f64>| -> f64 {
        let gkk = gram[(k, k)];
        let old = beta[k];
        let partial = linear[k] - (grad[k] - gkk * old);
        let new = soft_threshold(partial, pen[k]) / gkk;
        let delta = new - old;
        if delta != 0.0 {
            beta[k] = new;
            grad.axpy(delta, &gram.column(k), 1.0);
        }
        match scale {
            Some(sc) => (delta * sc[k]).abs(),
            None => delta.abs(),
        }
    };

    let mut sweeps = 0;
    let mut active: Vec<usize> = Vec::with_capacity(n);
    while sweeps < opts.max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for &k in &coords {
            max_change = max_change.max(update(k, beta, grad));
        }
        if max_change < opts.tol {
            return (true, sweeps);
        }
        active.clear();
        active.extend(coords.iter().copied().filter(|&k| beta[k] != 0.0));
        // iterate on the current support until it settles; with the exact
        // step enabled, only for about as long as one reduced solve costs
        let budget = if opts.active_set_solve {
            sweeps + (active.len() / 3).max(5)
        } else {
            usize::MAX
        };
        let mut settled = false;
        while sweeps < opts.max_iter && sweeps < budget {
            sweeps += 1;
            let mut max_change = 0.0f64;
            for &k in &active {
                max_change = max_change.max(update(k, beta, grad));
            }
            if max_change < opts.tol {
                settled = true;
                break;
            }
        }
        if !settled && opts.active_set_solve {
            active.retain(|&k| beta[k] != 0.0);
            active_set_step(gram, linear, pen, &active, beta, grad);
        }
    }
    (false, sweeps)
}

/// Exact minimizer on the face fixed by the signs of the current support.
/// Commits and returns true only when that point is sign-consistent and no
/// coordinate off the support violates `|l_k − (Gβ)_k| ≤ pen_k + tol`.
#[allow(clippy::too_many_arguments)]
/// Active-set descent on the face fixed by the signs of the current support.
///
/// Moves from `β` toward the minimizer of the quadratic on that face, stopping
/// where the first coordinate reaches zero, dropping it and repeating. The
/// objective decreases along every such segment. Returns false, leaving `β`
/// untouched, when a reduced gram matrix is not positive definite.
fn active_set_step(
    gram: &DMatrix<f64>,
    linear: &[f64],
    pen: &[f64],
    active: &[usize],
    beta: &mut DVector<f64>,
    grad: &mut DVector<f64>,
) -> bool {
    let mut act: Vec<usize> = active.to_vec();
    let mut cur: Vec<f64> = act.iter().map(|&k| beta[k]).collect();
    let signs: Vec<f64> = cur.iter().map(|v| v.signum()).collect();
    let mut sgn = signs;
    let mut moved = false;
    while !act.is_empty() {
        let m = act.len();
        let sub = DMatrix::from_fn(m, m, |a, b| gram[(act[a], act[b])]);
        let rhs = DVector::from_fn(m, |a, _| linear[act[a]] - pen[act[a]] * sgn[a]);
        let Some(chol) = sub.cholesky() else {
            break;
        };
        let x = chol.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
        // largest step along cur → x that keeps every sign
        let mut step = 1.0;
        let mut hit = None;
        for a in 0..m {
            if x[a] * sgn[a] <= 0.0 {
                let t = cur[a] / (cur[a] - x[a]);
                if t < step {
                    step = t;
                    hit = Some(a);
                }
            }
        }
        for a in 0..m {
            cur[a] += step * (x[a] - cur[a]);
        }
        moved = true;
        match hit {
            None => break,
            Some(h) => {
                let k = act.remove(h);
                cur.remove(h);
                sgn.remove(h);
                beta[k] = 0.0;
                // anything else that landed on zero leaves too
                let mut a = 0;
                while a < act.len() {
                    if cur[a] * sgn[a] <= 0.0 {
                        beta[act[a]] = 0.0;
                        act.remove(a);
                        cur.remove(a);
                        sgn.remove(a);
                    } else {
                        a += 1;
                    }
                }
            }
        }
    }
    if !moved {
        return false;
    }
    for &k in active {
        beta[k] = 0.0;
    }
    for (a, &k) in act.iter().enumerate() {
        beta[k] = cur[a];
    }
    grad.fill(0.0);
    for &k in &act {
        grad.axpy(beta[k], &gram.column(k), 1.0);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n + 3, n, |_, _| rng.random_range(-1.0..1.0));
        a.tr_mul(&a) / (n + 3) as f64 + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn full_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gram = random_pd(4, &mut rng);
        let linear = DVector::from_vec(vec![0.3, -0.7, 0.1, 0.5]);
        let prob = LassoProblem::new(gram, linear, 0.7).unwrap();
        let fit = solve_lasso(&prob, &LassoOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identity_gram_is_soft_threshold() {
        for (rho, lambda) in [(0.9, 0.2), (-0.9, 0.2), (0.1, 0.2), (-3.0, 0.0)] {
            let prob = LassoProblem::new(
                DMatrix::identity(1, 1),
                DVector::from_element(1, rho),
                lambda,
            )
            .unwrap();
            let fit = solve_lasso(&prob, &LassoOptions::default()).unwrap();
            let expected = rho.signum() * (rho.abs() - lambda).max(0.0);
            assert!((fit.beta[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unpenalized_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gram = random_pd(5, &mut rng);
        let linear = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let direct = gram.clone().lu().solve(&linear).unwrap();
        let prob = LassoProblem::new(gram, linear, 0.0).unwrap();
        let opts = LassoOptions {
            tol: 1e-12,
            max_iter: 100_000,
            ..Default::default()
        };
        let fit = solve_lasso(&prob, &opts).unwrap();
        assert!(fit.converged);
        assert!((&fit.beta - direct).amax() < 1e-8);
    }

    #[test]
    fn zero_diagonal_is_degenerate() {
        let mut gram = DMatrix::identity(3, 3);
        gram[(1, 1)] = 0.0;
        let err = LassoProblem::new(gram, DVector::zeros(3), 0.1).unwrap_err();
        assert!(matches!(err, FgmError::DegenerateProblem(_)));
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // strongly correlated design converges slowly
        let a = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.999 });
        let linear = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let prob = LassoProblem::new(a, linear, 0.0).unwrap();
        let fit = solve_lasso(
            &prob,
            &LassoOptions {
                tol: 1e-14,
                max_iter: 3,
                active_set_solve: false,
            },
        )
        .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.sweeps, 3);
    }

    #[test]
    fn visiting_order_irrelevant_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let gram = random_pd(4, &mut rng);
        let linear = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let opts = LassoOptions {
            tol: 1e-13,
            max_iter: 100_000,
            ..Default::default()
        };
        let base = solve_lasso(
            &LassoProblem::new(gram.clone(), linear.clone(), 0.0).unwrap(),
            &opts,
        )
        .unwrap();
        // reversing the coordinates is a reversed visiting order
        let perm: Vec<usize> = (0..4).rev().collect();
        let g2 = DMatrix::from_fn(4, 4, |i, j| gram[(perm[i], perm[j])]);
        let l2 = DVector::from_fn(4, |i, _| linear[perm[i]]);
        let rev = solve_lasso(&LassoProblem::new(g2, l2, 0.0).unwrap(), &opts).unwrap();
        for i in 0..4 {
            assert!((rev.beta[i] - base.beta[perm[i]]).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kkt_and_monotone_objective(seed in 0u64..10_000, n in 1usize..8, lam in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gram = random_pd(n, &mut rng);
            let linear = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let prob = LassoProblem::new(gram, linear, lam).unwrap();

            // one sweep at a time from the previous iterate
            let step = LassoOptions { tol: 0.0, max_iter: 1, ..Default::default() };
            let mut beta = DVector::zeros(n);
            let mut last = prob.objective(&beta);
            for _ in 0..30 {
                beta = solve_lasso_warm(&prob, &step, Some(&beta)).unwrap().beta;
                let obj = prob.objective(&beta);
                prop_assert!(obj <= last + 1e-12);
                last = obj;
            }

            let fit = solve_lasso(&prob, &LassoOptions { tol: 1e-10, max_iter: 100_000, ..Default::default() }).unwrap();
            prop_assert!(fit.converged);
            prop_assert!(prob.kkt_violation(&fit.beta) < 1e-7);
        }
    }
}
