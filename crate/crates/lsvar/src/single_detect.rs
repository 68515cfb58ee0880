//! Single change point detection by exhaustive search over a restricted
//! domain.
//!
//! For every admissible split `tau` the left and right models are fitted with
//! the search-phase tuning schedule and the pooled residual objective is
//! recorded; the estimate is the smallest `tau` attaining the minimum of the
//! resulting curve.

use rayon::prelude::*;

use crate::estimation::{
    fit_lowrank_sparse_summary, fit_weakly_sparse_summary, search_phase_tuning,
    weakly_sparse_tuning, FitResult, PenaltyConfig, RegressionSummary, SolverOptions,
};
use crate::series::{Interval, TimeSeriesData};
use crate::{Error, Result};

/// Inclusive search range `[lower, upper]` of candidate change points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchDomain {
    pub lower: usize,
    pub upper: usize,
}

impl SearchDomain {
    /// Validates `1 <= lower < upper <= t_len - 1`.
    pub fn new(lower: usize, upper: usize, t_len: usize) -> Result<Self> {
        if lower < 1 || lower >= upper || upper > t_len.saturating_sub(1) {
            return Err(Error::invalid(format!(
                "search domain [{lower}, {upper}] invalid for series of length {t_len}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.upper - self.lower + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Exponent offset used by [`default_search_domain`].
pub const DEFAULT_DOMAIN_ETA: f64 = 0.1;

/// Search domain `[a, b]` with boundary margin
/// `(d_max + sqrt(r_max))^(1 + eta)`, falling back to the central 80% of the
/// series when the margins collide.
pub fn default_search_domain(
    t_len: usize,
    d_max: usize,
    r_max: usize,
    eta: f64,
) -> Result<SearchDomain> {
    if t_len < 10 {
        return Err(Error::invalid("need t_len >= 10 to build a search domain"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let t_f = t_len as f64;
    let margin = (d_max as f64 + (r_max as f64).sqrt()).powf(1.0 + eta);
    let a = margin.floor() as usize;
    let b = (t_f - margin).floor().max(0.0) as usize;
    let (a, b) = if a >= b {
        (
            (0.1 * t_f).ceil() as usize,
            (0.9 * t_f).floor() as usize,
        )
    } else {
        (a, b)
    };
    SearchDomain::new(a.max(1), b.min(t_len - 1), t_len)
}

/// One detected change point with the objective curve over the whole domain.
#[derive(Debug, Clone)]
pub struct SingleDetection {
    pub tau_hat: usize,
    /// `(tau, objective)` for every evaluated point, ascending in `tau`.
    pub objective_curve: Vec<(usize, f64)>,
    pub left_fit: FitResult,
    pub right_fit: FitResult,
    /// Candidate splits that failed to fit, with the failure reason.
    pub skipped: Vec<(usize, String)>,
}

impl SingleDetection {
    /// Minimum objective value on the curve.
    pub fn min_objective(&self) -> f64 {
        self.objective_curve
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Relative range `(max - min) / max` of the curve; a small value means
    /// the curve is flat and no split is clearly preferred.
    pub fn relative_range(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(_, v) in &self.objective_curve {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= 0.0 {
            0.0
        } else {
            (hi - lo) / hi
        }
    }
}

/// Relative curve range below which a detection is considered flat
/// (no clearly identified minimum).
pub const FLATNESS_THRESHOLD: f64 = 0.05;

/// Pooled split objective
/// `(1/(T-1)) (sum_{t=1}^{tau-1} ||X_t - A_1 X_{t-1}||^2 +
///             sum_{t=tau}^{T-1} ||X_t - A_2 X_{t-1}||^2)`.
pub fn split_objective(
    data: &TimeSeriesData,
    tau: usize,
    left: &FitResult,
    right: &FitResult,
) -> Result<f64> {
    let t_len = data.t_len();
    if tau <= 1 || tau >= t_len {
        return Err(Error::invalid(format!(
            "tau = {tau} must satisfy 1 < tau < {t_len}"
        )));
    }
    let left_summary = RegressionSummary::from_interval(data, Interval::new(0, tau));
    let right_summary = RegressionSummary::from_interval(data, Interval::new(tau - 1, t_len));
    let sse = left_summary.sse(&left.transition()) + right_summary.sse(&right.transition());
    Ok(sse / (t_len - 1) as f64)
}

/// Which penalized model the per-split fits use.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SplitModel<'a> {
    /// Low-rank plus sparse fits with the search-phase schedule.
    Full(&'a PenaltyConfig),
    /// Weakly sparse (lasso) fits with the surrogate schedule.
    WeaklySparse { c_left: f64, c_right: f64 },
}

impl SplitModel<'_> {
    fn fit_side(
        &self,
        summary: &RegressionSummary,
        lambda: f64,
        mu: f64,
        opts: &SolverOptions,
    ) -> Result<FitResult> {
        match self {
            SplitModel::Full(cfg) => {
                let penalty = cfg.with_weights(lambda, mu);
                fit_lowrank_sparse_summary(summary, &penalty, opts)
            }
            SplitModel::WeaklySparse { .. } => fit_weakly_sparse_summary(summary, lambda, opts),
        }
    }
}

/// Exhaustive search over `domain` treating the whole series as one window.
pub fn exhaustive_search(
    data: &TimeSeriesData,
    domain: SearchDomain,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<SingleDetection> {
    search_window(
        data,
        data.full_interval(),
        domain,
        SplitModel::Full(penalty),
        opts,
    )
}

/// Exhaustive search restricted to `window`, with `domain` given in absolute
/// observation indices.
pub(crate) fn search_window(
    data: &TimeSeriesData,
    window: Interval,
    domain: SearchDomain,
    model: SplitModel<'_>,
    opts: &SolverOptions,
) -> Result<SingleDetection> {
    window.validate(data.t_len(), 5)?;
    let p = data.dim();
    let t_loc = window.len();
    // both sides need at least 2 transition pairs
    let lo = domain.lower.max(window.start + 3);
    let hi = domain.upper.min(window.end.saturating_sub(2));
    if lo > hi {
        return Err(Error::DetectionFailed(format!(
            "no feasible split in window {window} for domain [{}, {}]",
            domain.lower, domain.upper
        )));
    }

    let taus: Vec<usize> = (lo..=hi).collect();
    let evaluated: Vec<(usize, std::result::Result<f64, String>)> = taus
        .par_iter()
        .map(|&tau| {
            let value = evaluate_split(data, window, tau, p, t_loc, &model, opts);
            (tau, value.map_err(|e| e.to_string()))
        })
        .collect();

    let mut curve = Vec::with_capacity(evaluated.len());
    let mut skipped = Vec::new();
    for (tau, res) in evaluated {
        match res {
            Ok(v) => curve.push((tau, v)),
            Err(msg) => skipped.push((tau, msg)),
        }
    }
    if curve.is_empty() {
        return Err(Error::DetectionFailed(format!(
            "every split failed in window {window}; first failure: {:?}",
            skipped.first()
        )));
    }
    let tau_hat = argmin_curve(&curve).expect("non-empty curve");

    // refit at the minimizer to expose the per-side estimates
    let (left_fit, right_fit) = fit_both_sides(data, window, tau_hat, p, t_loc, &model, opts)?;
    Ok(SingleDetection {
        tau_hat,
        objective_curve: curve,
        left_fit,
        right_fit,
        skipped,
    })
}

/// Smallest `tau` attaining the curve minimum.
pub(crate) fn argmin_curve(curve: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(tau, v) in curve {
        match best {
            None => best = Some((tau, v)),
            Some((bt, bv)) => {
                if v < bv || (v == bv && tau < bt) {
                    best = Some((tau, v));
                }
            }
        }
    }
    best.map(|(t, _)| t)
}

fn side_tuning(
    tau: usize,
    window: Interval,
    p: usize,
    t_loc: usize,
    model: &SplitModel<'_>,
) -> Result<(f64, f64, f64, f64)> {
    let tau_loc = tau - window.start;
    match model {
        SplitModel::Full(cfg) => {
            let t = search_phase_tuning(tau_loc, t_loc, p, cfg)?;
            Ok((t.lambda1, t.mu1, t.lambda2, t.mu2))
        }
        SplitModel::WeaklySparse { c_left, c_right } => {
            let l1 = weakly_sparse_tuning(tau_loc - 1, p, *c_left)?;
            let l2 = weakly_sparse_tuning(t_loc - tau_loc, p, *c_right)?;
            Ok((l1, 0.0, l2, 0.0))
        }
    }
}

fn fit_both_sides(
    data: &TimeSeriesData,
    window: Interval,
    tau: usize,
    p: usize,
    t_loc: usize,
    model: &SplitModel<'_>,
    opts: &SolverOptions,
) -> Result<(FitResult, FitResult)> {
    let (lambda1, mu1, lambda2, mu2) = side_tuning(tau, window, p, t_loc, model)?;
    let left_summary = RegressionSummary::from_interval(data, Interval::new(window.start, tau));
    let right_summary = RegressionSummary::from_interval(data, Interval::new(tau - 1, window.end));
    let left = model.fit_side(&left_summary, lambda1, mu1, opts)?;
    let right = model.fit_side(&right_summary, lambda2, mu2, opts)?;
    Ok((left, right))
}

fn evaluate_split(
    data: &TimeSeriesData,
    window: Interval,
    tau: usize,
    p: usize,
    t_loc: usize,
    model: &SplitModel<'_>,
    opts: &SolverOptions,
) -> Result<f64> {
    let (lambda1, mu1, lambda2, mu2) = side_tuning(tau, window, p, t_loc, model)?;
    let left_summary = RegressionSummary::from_interval(data, Interval::new(window.start, tau));
    let right_summary = RegressionSummary::from_interval(data, Interval::new(tau - 1, window.end));
    let left = model.fit_side(&left_summary, lambda1, mu1, opts)?;
    let right = model.fit_side(&right_summary, lambda2, mu2, opts)?;
    let sse = left_summary.sse(&left.transition()) + right_summary.sse(&right.transition());
    Ok(sse / (t_loc - 1) as f64)
}

/// Removes the `radius`-neighborhood of `tau_hat`, returning the two
/// stationary stretches used for the segment-phase refits.
///
/// The left interval keeps responses `1..tau_hat - radius` and the right one
/// `tau_hat + radius..t_len`.
pub fn remove_radius_neighborhood(
    tau_hat: usize,
    radius: usize,
    t_len: usize,
) -> Result<(Interval, Interval)> {
    if tau_hat <= 1 || tau_hat >= t_len {
        return Err(Error::invalid(format!(
            "tau_hat = {tau_hat} out of range for series of length {t_len}"
        )));
    }
    let left_end = tau_hat.saturating_sub(radius);
    let right_start = (tau_hat + radius).saturating_sub(1);
    let left = Interval::new(0, left_end);
    let right = Interval::new(right_start.min(t_len), t_len);
    if left.n_transitions() < 2 || right.n_transitions() < 2 {
        return Err(Error::IntervalTooShort {
            start: left.start,
            end: left.end.max(right.end),
            pairs: left.n_transitions().min(right.n_transitions()),
            required: 2,
        });
    }
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn fit_of(a: DMatrix<f64>) -> FitResult {
        FitResult {
            l_hat: DMatrix::zeros(a.nrows(), a.ncols()),
            s_hat: a,
            objective_value: 0.0,
            iterations: 0,
            converged: true,
        }
    }

    #[test]
    fn split_objective_scalar_toy() {
        // X = (0, 1, 2), tau = 2, left a = 0, right a = 2
        let data = TimeSeriesData::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let left = fit_of(DMatrix::from_element(1, 1, 0.0));
        let right = fit_of(DMatrix::from_element(1, 1, 2.0));
        let obj = split_objective(&data, 2, &left, &right).unwrap();
        assert_relative_eq!(obj, 0.5);
    }

    #[test]
    fn split_objective_zero_fits_sum_of_squares() {
        let data =
            TimeSeriesData::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let zero = fit_of(DMatrix::zeros(1, 1));
        let obj = split_objective(&data, 2, &zero, &zero).unwrap();
        // (2^2 + 3^2 + 4^2) / 3
        assert_relative_eq!(obj, 29.0 / 3.0);
    }

    #[test]
    fn split_objective_exact_fit_is_zero() {
        // noise-free single-regime data with the true matrix on both sides
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]);
        let mut rows = vec![vec![1.0, -1.0]];
        for t in 1..30 {
            let prev = nalgebra::DVector::from_vec(rows[t - 1].clone());
            let next = &a * prev;
            rows.push(vec![next[0], next[1]]);
        }
        let data = TimeSeriesData::from_rows(&rows).unwrap();
        let fit = fit_of(a);
        let obj = split_objective(&data, 15, &fit, &fit).unwrap();
        assert!(obj < 1e-20);
    }

    #[test]
    fn default_domain_margin_and_fallback() {
        // margin (1 + 1)^{1.1}
        let d = default_search_domain(100, 1, 1, 0.1).unwrap();
        let margin = 2.0_f64.powf(1.1);
        assert_eq!(d.lower, margin.floor() as usize);
        assert_eq!(d.upper, (100.0 - margin).floor() as usize);

        // fallback kicks in: 12^{1.1} > 15
        let d = default_search_domain(30, 10, 4, 0.1).unwrap();
        assert_eq!(d.lower, 3);
        assert_eq!(d.upper, 27);

        // midpoint of the non-fallback domain is T/2 up to flooring
        let d = default_search_domain(200, 2, 1, 0.1).unwrap();
        assert!((d.lower + d.upper).abs_diff(200) <= 1);

        assert!(default_search_domain(9, 1, 1, 0.1).is_err());
    }

    #[test]
    fn argmin_takes_smallest_on_ties() {
        let curve = vec![(5, 3.0), (6, 1.0), (7, 1.0), (8, 2.0)];
        assert_eq!(argmin_curve(&curve), Some(6));
        assert_eq!(argmin_curve(&[]), None);
    }

    #[test]
    fn exhaustive_search_recovers_noise_free_change() {
        // deterministic piecewise series from a nonzero start
        let a1 = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.3, 0.8]);
        let a2 = DMatrix::from_row_slice(2, 2, &[-0.2, 0.6, 0.0, -0.7]);
        let tau_star = 20;
        let mut rows = vec![vec![1.0, -0.5]];
        for t in 1..40 {
            let prev = nalgebra::DVector::from_vec(rows[t - 1].clone());
            let a = if t < tau_star { &a1 } else { &a2 };
            let next = a * prev;
            rows.push(vec![next[0], next[1]]);
        }
        let data = TimeSeriesData::from_rows(&rows).unwrap();
        let penalty = PenaltyConfig {
            c0: 0.001,
            c0_prime: 0.001,
            alpha_l: f64::INFINITY,
            ..PenaltyConfig::default()
        };
        let domain = SearchDomain::new(5, 35, 40).unwrap();
        let det = exhaustive_search(&data, domain, &penalty, &SolverOptions::default()).unwrap();
        assert_eq!(det.tau_hat, tau_star);
        assert_eq!(
            det.objective_curve.len() + det.skipped.len(),
            domain.len()
        );
        // the curve is strictly minimized at the true split
        let at_true = det
            .objective_curve
            .iter()
            .find(|&&(t, _)| t == tau_star)
            .unwrap()
            .1;
        for &(t, v) in &det.objective_curve {
            if t != tau_star {
                assert!(v > at_true);
            }
        }
    }

    #[test]
    fn remove_radius_examples() {
        let (l, r) = remove_radius_neighborhood(150, 0, 300).unwrap();
        assert_eq!(l.responses(), 1..150);
        assert_eq!(r.responses(), 150..300);

        let (l, r) = remove_radius_neighborhood(150, 10, 300).unwrap();
        assert_eq!(l.responses(), 1..140);
        assert_eq!(r.responses(), 160..300);

        // radius at least the distance to a boundary degenerates
        assert!(remove_radius_neighborhood(150, 149, 300).is_err());
        assert!(remove_radius_neighborhood(5, 4, 300).is_err());
    }
}
