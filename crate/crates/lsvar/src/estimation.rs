//! Penalized least-squares estimation of transition matrices on an interval.
//!
//! The full model solves
//! `min (1/n) sum_t ||X_t - (L+S) X_{t-1}||^2 + lambda ||S||_1 + mu ||L||_*`
//! subject to the spikiness constraint on `L`, by alternating proximal
//! gradient steps: soft-thresholding for the sparse block and singular value
//! thresholding followed by the box projection for the low-rank block. The
//! weakly sparse surrogate drops the low-rank block and reduces to a lasso.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::series::{Interval, TimeSeriesData};
use crate::var_model::project_onto_omega;
use crate::{Error, Result};

/// Inclusive range allowed for the tuning constants `c0, c0', c1, c1'`.
pub const CONSTANT_RANGE: (f64, f64) = (0.001, 10.0);

/// Relative singular value threshold used when reporting rank estimates.
pub const RANK_REL_THRESHOLD: f64 = 0.01;

/// Absolute magnitude above which a sparse entry counts as support.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Regularization weights and tuning constants for the penalized fits.
///
/// `lambda`/`mu` are the weights applied directly by [`fit_lowrank_sparse`];
/// the `c` constants parameterize the search-phase and segment-phase
/// schedules that produce such weights from interval lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub mu: f64,
    pub alpha_l: f64,
    pub c0: f64,
    pub c0_prime: f64,
    pub c1: f64,
    pub c1_prime: f64,
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.lambda, self.mu, self.alpha_l];
        if nonneg.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid("lambda, mu, alpha_l must be nonnegative"));
        }
        let (lo, hi) = CONSTANT_RANGE;
        for (name, c) in [
            ("c0", self.c0),
            ("c0_prime", self.c0_prime),
            ("c1", self.c1),
            ("c1_prime", self.c1_prime),
        ] {
            if !(c >= lo && c <= hi) {
                return Err(Error::invalid(format!(
                    "constant {name} = {c} outside grid range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Copy with the direct weights replaced.
    pub fn with_weights(mut self, lambda: f64, mu: f64) -> Self {
        self.lambda = lambda;
        self.mu = mu;
        self
    }

    pub fn with_alpha_l(mut self, alpha_l: f64) -> Self {
        self.alpha_l = alpha_l;
        self
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mu: 0.0,
            alpha_l: f64::INFINITY,
            c0: 0.01,
            c0_prime: 0.01,
            c1: 0.003,
            c1_prime: 0.01,
        }
    }
}

impl PenaltyConfig {
    /// Default constants with the theoretical spikiness radius for a series
    /// of the given shape. The constants were selected by the prediction
    /// error grid search on the simulation scenario class; per-dataset grid
    /// search can replace them.
    pub fn recommended(p: usize, t_len: usize) -> Self {
        Self::default().with_alpha_l(alpha_l_theoretical(p, t_len, 0.5))
    }
}

/// Spikiness radius from its theoretical form `c * p * sqrt(log(p T) / T)`.
pub fn alpha_l_theoretical(p: usize, t_len: usize, c: f64) -> f64 {
    let p_f = p as f64;
    let t_f = t_len as f64;
    c * p_f * ((p_f * t_f).ln() / t_f).sqrt()
}

/// Step size selection for the proximal gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Inverse Lipschitz constant of the interval's quadratic loss.
    Auto,
    Fixed(f64),
}

/// Iteration controls for the proximal gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub step_size: StepSize,
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::invalid("rel_tolerance must be positive"));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::invalid("fixed step size must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tolerance: 1e-6,
            step_size: StepSize::Auto,
        }
    }
}

/// Output of a penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub l_hat: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// Effective transition estimate `L + S`.
    pub fn transition(&self) -> DMatrix<f64> {
        &self.l_hat + &self.s_hat
    }

    /// Rank estimate of the low-rank component at the default relative
    /// threshold.
    pub fn rank_estimate(&self) -> usize {
        estimate_rank(&self.l_hat, RANK_REL_THRESHOLD)
    }

    /// Sparse support size at the default magnitude threshold.
    pub fn sparse_support_size(&self) -> usize {
        linalg::support_size(&self.s_hat, SUPPORT_THRESHOLD)
    }
}

/// Scalar soft-thresholding `sign(x) max(|x| - threshold, 0)`, the proximal
/// map of the absolute value.
pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0);
    x.signum() * (x.abs() - threshold).max(0.0)
}

fn soft_threshold_matrix(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    m.map(|x| soft_threshold(x, threshold))
}

/// Singular value thresholding `U max(D - threshold, 0) V'`, the proximal map
/// of the nuclear norm.
pub fn singular_value_threshold(m: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    if threshold < 0.0 {
        return Err(Error::invalid("threshold must be nonnegative"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "singular value thresholding on non-finite input".into(),
        ));
    }
    if threshold == 0.0 {
        return Ok(m.clone());
    }
    let svd = nalgebra::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut shrunk = svd.singular_values.clone();
    shrunk.apply(|s| *s = (*s - threshold).max(0.0));
    Ok(u * DMatrix::from_diagonal(&shrunk) * v_t)
}

/// Count of singular values above `rel_threshold` times the largest one.
pub fn estimate_rank(l_hat: &DMatrix<f64>, rel_threshold: f64) -> usize {
    let sv = linalg::singular_values(l_hat);
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_threshold * top).count()
}

/// Sufficient statistics of the least-squares loss on a set of transition
/// pairs: `gram = sum z z'`, `cross = sum x z'`, `sum_sq = sum x'x` for
/// responses `x = X_t` and regressors `z = X_{t-1}`.
#[derive(Debug, Clone)]
pub struct RegressionSummary {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    sum_sq: f64,
    n: usize,
}

impl RegressionSummary {
    pub fn empty(p: usize) -> Self {
        Self {
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(p, p),
            sum_sq: 0.0,
            n: 0,
        }
    }

    /// Accumulates the pair `(X_{t-1}, X_t)`; `t` must be at least 1.
    pub fn add_response(&mut self, data: &TimeSeriesData, t: usize) {
        let z = data.row(t - 1);
        let x = data.row(t);
        self.gram.ger(1.0, &z, &z, 1.0);
        self.cross.ger(1.0, &x, &z, 1.0);
        self.sum_sq += x.norm_squared();
        self.n += 1;
    }

    pub fn from_interval(data: &TimeSeriesData, interval: Interval) -> Self {
        Self::from_responses(data, interval.responses())
    }

    pub fn from_responses(data: &TimeSeriesData, responses: impl Iterator<Item = usize>) -> Self {
        let mut s = Self::empty(data.dim());
        for t in responses {
            s.add_response(data, t);
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// Residual sum of squares at transition matrix `a`.
    pub fn sse(&self, a: &DMatrix<f64>) -> f64 {
        let quad = (a * &self.gram).component_mul(a).sum();
        let lin = a.component_mul(&self.cross).sum();
        (self.sum_sq - 2.0 * lin + quad).max(0.0)
    }

    /// Gradient of `(1/n) sse` with respect to the transition matrix.
    pub fn gradient(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        (a * &self.gram - &self.cross) * (2.0 / self.n as f64)
    }

    /// Lipschitz constant of the gradient, `(2/n) Lambda_max(gram)`.
    fn lipschitz(&self) -> f64 {
        let eig = SymmetricEigen::new(self.gram.clone());
        2.0 * eig.eigenvalues.max().max(0.0) / self.n as f64
    }

    /// Minimum-norm least-squares transition matrix (pseudoinverse solve).
    pub fn ols(&self) -> DMatrix<f64> {
        let pinv = self
            .gram
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .expect("pseudo inverse of a finite symmetric matrix");
        // A G = C  =>  A = C G^+
        &self.cross * pinv
    }
}

struct PenalizedProblem<'a> {
    summary: &'a RegressionSummary,
    lambda: f64,
    mu: f64,
    alpha_l: f64,
    /// When false the low-rank block is pinned to zero (lasso path).
    with_low_rank: bool,
}

impl PenalizedProblem<'_> {
    fn objective(&self, l: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
        let a = l + s;
        let mut obj =
            self.summary.sse(&a) / self.summary.n() as f64 + self.lambda * linalg::l1_norm(s);
        if self.with_low_rank && self.mu > 0.0 {
            obj += self.mu * linalg::nuclear_norm(l);
        }
        obj
    }
}

/// Consecutive objective increases tolerated before declaring divergence.
const DIVERGENCE_STREAK: usize = 10;

fn solve_penalized(problem: &PenalizedProblem, opts: &SolverOptions) -> Result<FitResult> {
    solve_penalized_warm(problem, opts, None)
}

fn solve_penalized_warm(
    problem: &PenalizedProblem,
    opts: &SolverOptions,
    init: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<FitResult> {
    opts.validate()?;
    let p = problem.summary.dim();
    if problem.summary.n() < 2 {
        return Err(Error::IntervalTooShort {
            start: 0,
            end: problem.summary.n() + 1,
            pairs: problem.summary.n(),
            required: 2,
        });
    }
    let lip = problem.summary.lipschitz();
    let step = match opts.step_size {
        StepSize::Fixed(s) => s,
        StepSize::Auto => {
            if lip > 0.0 {
                1.0 / lip
            } else {
                1.0
            }
        }
    };

    let (mut l, mut s) = match init {
        Some((l0, s0)) => (l0.clone(), s0.clone()),
        None => (DMatrix::zeros(p, p), DMatrix::zeros(p, p)),
    };
    let mut obj = problem.objective(&l, &s);
    let mut best = (l.clone(), s.clone(), obj, 0);
    let mut increases = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    // The low-rank step composes singular value thresholding with the box
    // projection, which is not the exact prox of the constrained penalty, so
    // a full step can overshoot once the box binds. Backtracking restores
    // monotone descent while keeping the same step structure.
    let mut step = step;
    const MAX_BACKTRACKS: usize = 30;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let grad = problem.summary.gradient(&(&l + &s));
            let s_new = soft_threshold_matrix(&(&s - step * &grad), step * problem.lambda);
            let l_new = if problem.with_low_rank {
                let grad = problem.summary.gradient(&(&l + &s_new));
                let shifted = &l - step * &grad;
                let thresholded = singular_value_threshold(&shifted, step * problem.mu)?;
                if problem.alpha_l.is_finite() {
                    project_onto_omega(&thresholded, problem.alpha_l)
                } else {
                    thresholded
                }
            } else {
                l.clone()
            };
            let new_obj = problem.objective(&l_new, &s_new);
            if !new_obj.is_finite() {
                return Err(Error::Numerical("objective became non-finite".into()));
            }
            if new_obj <= obj * (1.0 + 1e-12) + 1e-300 {
                l = l_new;
                s = s_new;
                obj = new_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // even the smallest step increases the objective
            increases += 1;
            if increases >= DIVERGENCE_STREAK {
                return Err(Error::Divergence {
                    partial: Box::new(FitResult {
                        l_hat: best.0,
                        s_hat: best.1,
                        objective_value: best.2,
                        iterations: iter,
                        converged: false,
                    }),
                });
            }
            continue;
        }
        increases = 0;
        let decrease = best.2 - obj;
        if obj < best.2 {
            best = (l.clone(), s.clone(), obj, iter);
        }
        if decrease.abs() <= opts.rel_tolerance * best.2.abs().max(1e-12) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        l_hat: l,
        s_hat: s,
        objective_value: obj,
        iterations,
        converged,
    })
}

/// Penalized low-rank plus sparse fit on `interval` (responses
/// `interval.start + 1 .. interval.end`).
pub fn fit_lowrank_sparse(
    data: &TimeSeriesData,
    interval: Interval,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<FitResult> {
    interval.validate(data.t_len(), 2)?;
    let summary = RegressionSummary::from_interval(data, interval);
    fit_lowrank_sparse_summary(&summary, penalty, opts)
}

/// Same as [`fit_lowrank_sparse`] but over precomputed sufficient statistics.
pub fn fit_lowrank_sparse_summary(
    summary: &RegressionSummary,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<FitResult> {
    fit_lowrank_sparse_summary_warm(summary, penalty, opts, None)
}

/// Warm-started variant used by iterative sweeps such as the DP recursion.
pub(crate) fn fit_lowrank_sparse_summary_warm(
    summary: &RegressionSummary,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
    init: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<FitResult> {
    if !(penalty.lambda >= 0.0) || !(penalty.mu >= 0.0) || !(penalty.alpha_l >= 0.0) {
        return Err(Error::invalid("penalty weights must be nonnegative"));
    }
    let problem = PenalizedProblem {
        summary,
        lambda: penalty.lambda,
        mu: penalty.mu,
        alpha_l: penalty.alpha_l,
        with_low_rank: penalty.alpha_l > 0.0,
    };
    solve_penalized_warm(&problem, opts, init)
}

/// Weakly sparse (lasso) fit of the full transition matrix on `interval`.
pub fn fit_weakly_sparse(
    data: &TimeSeriesData,
    interval: Interval,
    lambda_w: f64,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    Ok(fit_weakly_sparse_full(data, interval, lambda_w, opts)?.s_hat)
}

/// Lasso fit returning the full [`FitResult`] (the transition estimate is
/// stored in the sparse slot; the low-rank slot is zero).
pub fn fit_weakly_sparse_full(
    data: &TimeSeriesData,
    interval: Interval,
    lambda_w: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    interval.validate(data.t_len(), 2)?;
    let summary = RegressionSummary::from_interval(data, interval);
    fit_weakly_sparse_summary(&summary, lambda_w, opts)
}

pub fn fit_weakly_sparse_summary(
    summary: &RegressionSummary,
    lambda_w: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if !(lambda_w >= 0.0) {
        return Err(Error::invalid("lambda_w must be nonnegative"));
    }
    let problem = PenalizedProblem {
        summary,
        lambda: lambda_w,
        mu: 0.0,
        alpha_l: 0.0,
        with_low_rank: false,
    };
    solve_penalized(&problem, opts)
}

/// Search-phase tuning weights for splitting at `tau` within a stretch of
/// `t_len` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchTuning {
    pub lambda1: f64,
    pub mu1: f64,
    pub lambda2: f64,
    pub mu2: f64,
}

/// Search-phase schedule:
/// `lambda_{1,tau} = 4 c0 sqrt((log p + log(tau-1)) / (tau-1))`,
/// `mu_{1,tau} = 4 c0' sqrt((p + log(tau-1)) / (tau-1))`, and symmetric
/// right-side formulas with `T - tau`.
pub fn search_phase_tuning(
    tau: usize,
    t_len: usize,
    p: usize,
    config: &PenaltyConfig,
) -> Result<SearchTuning> {
    if tau <= 1 || tau >= t_len {
        return Err(Error::invalid(format!(
            "tau = {tau} must satisfy 1 < tau < {t_len}"
        )));
    }
    let p_f = p as f64;
    let left = (tau - 1) as f64;
    let right = (t_len - tau) as f64;
    Ok(SearchTuning {
        lambda1: 4.0 * config.c0 * ((p_f.ln() + left.ln()) / left).sqrt(),
        mu1: 4.0 * config.c0_prime * ((p_f + left.ln()) / left).sqrt(),
        lambda2: 4.0 * config.c0 * ((p_f.ln() + right.ln()) / right).sqrt(),
        mu2: 4.0 * config.c0_prime * ((p_f + right.ln()) / right).sqrt(),
    })
}

/// Segment-phase schedule:
/// `lambda_j = 4 c1 sqrt(log p / N_j) + 4 c1 alpha_l / p`,
/// `mu_j = 4 c1' sqrt(p / N_j)`.
pub fn segment_phase_tuning(
    n_j: usize,
    p: usize,
    alpha_l: f64,
    config: &PenaltyConfig,
) -> Result<(f64, f64)> {
    if n_j < 2 {
        return Err(Error::invalid("segment length N_j must be at least 2"));
    }
    let p_f = p as f64;
    let n = n_j as f64;
    let alpha = if alpha_l.is_finite() { alpha_l } else { 0.0 };
    let lambda = 4.0 * config.c1 * (p_f.ln() / n).sqrt() + 4.0 * config.c1 * alpha / p_f;
    let mu = 4.0 * config.c1_prime * (p_f / n).sqrt();
    Ok((lambda, mu))
}

/// Screening-phase schedule for a segment of `n` transition pairs (the
/// general case of the segment tuning used inside the information criterion,
/// identical in form to the search-phase formulas).
pub fn segment_case_c_tuning(n: usize, p: usize, config: &PenaltyConfig) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::invalid("segment length must be at least 2"));
    }
    let p_f = p as f64;
    let n_f = n as f64;
    let lambda = 4.0 * config.c0 * ((p_f.ln() + n_f.ln()) / n_f).sqrt();
    let mu = 4.0 * config.c0_prime * ((p_f + n_f.ln()) / n_f).sqrt();
    Ok((lambda, mu))
}

/// Lasso weight for the weakly sparse model on one side of a split:
/// `4 c sqrt((log p + log n) / n)` for a side of `n` transition pairs.
pub fn weakly_sparse_tuning(n: usize, p: usize, c: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("side length must be at least 1"));
    }
    let p_f = p as f64;
    let n_f = n as f64;
    Ok(4.0 * c * ((p_f.ln() + n_f.ln()) / n_f).sqrt())
}

/// Every-`k`-th response reserved for one-step-ahead validation.
pub const GRID_SEARCH_TEST_STRIDE: usize = 5;

/// Number of grid values per tuning constant.
pub const GRID_POINTS: usize = 20;

/// Equally spaced grid over [`CONSTANT_RANGE`] for one constant.
pub fn default_constant_grid() -> Vec<f64> {
    let (lo, hi) = CONSTANT_RANGE;
    (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

/// Outcome of the prediction-error grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSearchResult {
    pub c0: f64,
    pub c0_prime: f64,
    pub lambda: f64,
    pub mu: f64,
    pub test_error: f64,
}

/// Selects `(lambda, mu)` over a grid of `(c0, c0')` cells by one-step-ahead
/// prediction error on every 5th response of the interval, fitting on the
/// remaining responses. Ties go to the lexicographically smallest cell.
pub fn tuning_grid_search(
    data: &TimeSeriesData,
    interval: Interval,
    grid: &[(f64, f64)],
    base: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::invalid("tuning grid is empty"));
    }
    interval.validate(data.t_len(), GRID_SEARCH_TEST_STRIDE * 2)?;
    if interval.len() < 10 {
        return Err(Error::invalid("grid search needs an interval of length >= 10"));
    }

    let responses: Vec<usize> = interval.responses().collect();
    let mut train = Vec::with_capacity(responses.len());
    let mut test = Vec::with_capacity(responses.len() / GRID_SEARCH_TEST_STRIDE + 1);
    for (i, &t) in responses.iter().enumerate() {
        if (i + 1) % GRID_SEARCH_TEST_STRIDE == 0 {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    if test.is_empty() || train.len() < 2 {
        return Err(Error::invalid("interval too short to split for grid search"));
    }

    let train_summary = RegressionSummary::from_responses(data, train.iter().copied());
    let test_summary = RegressionSummary::from_responses(data, test.iter().copied());
    let n_train = train_summary.n();
    let p = data.dim();

    let mut best: Option<GridSearchResult> = None;
    for &(c0, c0_prime) in grid {
        let cfg = PenaltyConfig {
            c0,
            c0_prime,
            ..*base
        };
        let (lambda, mu) = segment_case_c_tuning(n_train, p, &cfg)?;
        let penalty = base.with_weights(lambda, mu);
        let fit = match fit_lowrank_sparse_summary(&train_summary, &penalty, opts) {
            Ok(f) => f,
            Err(Error::Divergence { partial }) => *partial,
            Err(e) => return Err(e),
        };
        let err = test_summary.sse(&fit.transition()) / test_summary.n() as f64;
        let candidate = GridSearchResult {
            c0,
            c0_prime,
            lambda,
            mu,
            test_error: err,
        };
        let replace = match &best {
            None => true,
            Some(b) => {
                err < b.test_error
                    || (err == b.test_error && (c0, c0_prime) < (b.c0, b.c0_prime))
            }
        };
        if replace {
            best = Some(candidate);
        }
    }
    Ok(best.expect("non-empty grid"))
}
