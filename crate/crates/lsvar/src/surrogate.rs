//! Weakly sparse surrogate detection.
//!
//! Instead of decomposing each transition matrix, the surrogate treats it as
//! a single weakly sparse matrix inside an `l_q` ball, fits it by lasso, and
//! reuses the exhaustive-search and screening machinery. This skips every
//! SVD, trading some accuracy in low-rank-dominated regimes for a large
//! speedup. The combined strategy runs the surrogate first and then sweeps
//! the full model inside each resulting segment.

use nalgebra::DMatrix;

use crate::estimation::{PenaltyConfig, SolverOptions};
use crate::linalg;
use crate::multi_detect::{
    plan_windows, rolling_candidates_model, two_step_model, CandidateSet, MultiDetection,
    SegmentModel, TwoStepOutcome, WindowPlan,
};
use crate::series::TimeSeriesData;
use crate::single_detect::{search_window, SearchDomain, SingleDetection, SplitModel};
use crate::var_model::LowRankSparsePair;
use crate::{Error, Result};

/// Parameters of the weakly sparse surrogate path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeaklySparseConfig {
    /// `l_q` ball exponent, in (0, 1).
    pub q: f64,
    /// `l_q` ball radius used for the applicability check.
    pub r_q: f64,
    /// Support-thresholding level.
    pub eta: f64,
    /// Direct lasso weight for standalone fits.
    pub lambda_w: f64,
    /// Left-side search-phase constant.
    pub c0_w: f64,
    /// Right-side search-phase constant.
    pub c0_w_prime: f64,
}

impl WeaklySparseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::invalid("q must lie in (0, 1)"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !(self.lambda_w >= 0.0) || !(self.r_q > 0.0) {
            return Err(Error::invalid("lambda_w must be nonnegative and r_q positive"));
        }
        if !(self.c0_w > 0.0 && self.c0_w_prime > 0.0) {
            return Err(Error::invalid("surrogate constants must be positive"));
        }
        Ok(())
    }
}

impl Default for WeaklySparseConfig {
    fn default() -> Self {
        Self {
            q: 0.4,
            r_q: 1.0,
            eta: 0.05,
            lambda_w: 0.0,
            c0_w: 0.5,
            c0_w_prime: 0.5,
        }
    }
}

/// Fraction of the segment lasso weight used as the default support
/// threshold (midpoint of the recommended `[0.01, 0.1]` range).
pub const ETA_FRACTION_OF_LAMBDA: f64 = 0.05;

/// `sum |a_ij|^q` for `q` in (0, 1]; the `l_q` ball membership statistic.
pub fn lq_norm_q(a: &DMatrix<f64>, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid("q must lie in (0, 1]"));
    }
    Ok(a.iter().map(|x| x.abs().powf(q)).sum())
}

/// Lower bound on the `l_q` radius needed for transition matrices with the
/// given structural parameters to belong to the ball:
/// `d_max ((alpha_l/p)^q + m_s^q) + (p^2 - d_max) sigma_max^q`.
pub fn radius_lower_bound_parts(
    p: usize,
    d_max: usize,
    alpha_l: f64,
    m_s: f64,
    sigma_max: f64,
    q: f64,
) -> f64 {
    let p_f = p as f64;
    let d = d_max as f64;
    d * ((alpha_l / p_f).powf(q) + m_s.powf(q)) + (p_f * p_f - d) * sigma_max.abs().powf(q)
}

/// Radius bound evaluated on actual segment decompositions; the surrogate is
/// declared applicable when the configured radius meets this bound.
pub fn radius_lower_bound(pairs: &[LowRankSparsePair], q: f64, m_s: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("need at least one segment"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q must lie in (0, 1)"));
    }
    let p = pairs[0].dim();
    let d_max = pairs
        .iter()
        .map(|pr| linalg::support_size(pr.sparse(), 0.0))
        .max()
        .unwrap();
    let sigma_max = pairs
        .iter()
        .map(|pr| linalg::spectral_norm(pr.low_rank()))
        .fold(0.0_f64, f64::max);
    let alpha_l = pairs.iter().map(|pr| pr.alpha_l()).fold(0.0_f64, f64::max);
    Ok(radius_lower_bound_parts(p, d_max, alpha_l, m_s, sigma_max, q))
}

/// Index set `{(k, l): |a_kl| > eta}` in row-major order (0-based).
pub fn threshold_support(a_hat: &DMatrix<f64>, eta: f64) -> Result<Vec<(usize, usize)>> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let mut out = Vec::new();
    for i in 0..a_hat.nrows() {
        for j in 0..a_hat.ncols() {
            if a_hat[(i, j)].abs() > eta {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Exhaustive single change point search under the surrogate model, with the
/// lasso weights `4 c0_w sqrt((log p + log n)/n)` per side.
pub fn surrogate_detect_single(
    data: &TimeSeriesData,
    domain: SearchDomain,
    config: &WeaklySparseConfig,
    opts: &SolverOptions,
) -> Result<SingleDetection> {
    config.validate()?;
    search_window(
        data,
        data.full_interval(),
        domain,
        SplitModel::WeaklySparse {
            c_left: config.c0_w,
            c_right: config.c0_w_prime,
        },
        opts,
    )
}

/// Step-1 candidates under the surrogate model.
pub fn surrogate_candidates(
    data: &TimeSeriesData,
    plan: &WindowPlan,
    config: &WeaklySparseConfig,
    opts: &SolverOptions,
) -> Result<CandidateSet> {
    config.validate()?;
    rolling_candidates_model(
        data,
        plan,
        SplitModel::WeaklySparse {
            c_left: config.c0_w,
            c_right: config.c0_w_prime,
        },
        opts,
    )
}

/// Two-step surrogate pipeline: rolling-window candidates and backward
/// elimination under the weakly sparse information criterion.
pub fn surrogate_detect_multi(
    data: &TimeSeriesData,
    plan: &WindowPlan,
    config: &WeaklySparseConfig,
    omega_override: Option<f64>,
    opts: &SolverOptions,
) -> Result<TwoStepOutcome> {
    config.validate()?;
    two_step_model(
        data,
        plan,
        omega_override,
        SplitModel::WeaklySparse {
            c_left: config.c0_w,
            c_right: config.c0_w_prime,
        },
        SegmentModel::Weak { c0: config.c0_w },
        opts,
    )
}

/// Output of [`combined_strategy`].
#[derive(Debug, Clone)]
pub struct CombinedOutcome {
    pub detection: MultiDetection,
    /// Change points found by the surrogate pass (always retained).
    pub surrogate_points: Vec<usize>,
    /// Additional points contributed by the per-segment full-model passes.
    pub full_model_points: Vec<usize>,
    pub omega_t: f64,
}

/// Minimum segment length on which the full-model pass is attempted.
const MIN_COMBINED_SEGMENT: usize = 24;

/// Surrogate-first strategy: detect with the weakly sparse model, then run
/// the full two-step pipeline inside each resulting segment and merge the
/// point sets (surrogate points always survive deduplication).
pub fn combined_strategy(
    data: &TimeSeriesData,
    full: &PenaltyConfig,
    weak: &WeaklySparseConfig,
    h: usize,
    l: usize,
    opts: &SolverOptions,
) -> Result<CombinedOutcome> {
    let t_len = data.t_len();
    let plan = plan_windows(t_len, h, l)?;
    let surrogate = surrogate_detect_multi(data, &plan, weak, None, opts)?;
    let surrogate_points = surrogate.detection.change_points.clone();

    let mut boundaries = vec![0usize];
    boundaries.extend(&surrogate_points);
    boundaries.push(t_len);

    let mut extra: Vec<usize> = Vec::new();
    for pair in boundaries.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        let len = end - start;
        if len < MIN_COMBINED_SEGMENT {
            continue;
        }
        let seg_data = data.slice(crate::series::Interval::new(start, end))?;
        let h_seg = h.min(len);
        let l_seg = l.clamp(1, (h_seg / 2).max(1));
        let seg_plan = plan_windows(len, h_seg, l_seg)?;
        match two_step_model(
            &seg_data,
            &seg_plan,
            None,
            SplitModel::Full(full),
            SegmentModel::Full(full),
            opts,
        ) {
            Ok(outcome) => {
                extra.extend(outcome.detection.change_points.iter().map(|&c| c + start));
            }
            Err(Error::DetectionFailed(_)) => continue,
            Err(e) => return Err(e),
        }
    }

    // union, keeping every surrogate point and dropping full-model points
    // within the shift radius of a kept point
    let mut merged = surrogate_points.clone();
    extra.sort_unstable();
    let mut full_model_points = Vec::new();
    for c in extra {
        if merged
            .iter()
            .all(|&kept| kept.abs_diff(c) >= l.max(1))
        {
            merged.push(c);
            full_model_points.push(c);
        }
    }
    merged.sort_unstable();

    let detection = crate::multi_detect::detection_from_points(
        data,
        merged,
        SegmentModel::Full(full),
        opts,
        surrogate.detection.trace.clone(),
    )?;
    Ok(CombinedOutcome {
        detection,
        surrogate_points,
        full_model_points,
        omega_t: surrogate.omega_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lq_norm_examples() {
        let z = DMatrix::zeros(3, 3);
        assert_relative_eq!(lq_norm_q(&z, 0.5).unwrap(), 0.0);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.0]);
        assert_relative_eq!(lq_norm_q(&a, 1.0).unwrap(), linalg::l1_norm(&a));

        let single = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(lq_norm_q(&single, 0.5).unwrap(), 2.0_f64.sqrt());

        assert!(lq_norm_q(&a, 0.0).is_err());
        assert!(lq_norm_q(&a, 1.5).is_err());
    }

    #[test]
    fn radius_bound_parts() {
        // p = 2, d_max = 2, alpha_l = 1, m_s = 1, sigma_max = 0.5, q = 0.5
        let b = radius_lower_bound_parts(2, 2, 1.0, 1.0, 0.5, 0.5);
        assert_relative_eq!(
            b,
            2.0 * (0.5_f64.sqrt() + 1.0) + 2.0 * 0.5_f64.sqrt(),
            epsilon = 1e-12
        );
        // fully dense sparse part drops the second term
        let dense = radius_lower_bound_parts(3, 9, 0.6, 0.9, 0.4, 0.5);
        assert_relative_eq!(
            dense,
            9.0 * ((0.2_f64).sqrt() + 0.9_f64.sqrt()),
            epsilon = 1e-12
        );
        // zero structure gives zero
        assert_relative_eq!(radius_lower_bound_parts(4, 0, 0.0, 0.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn threshold_support_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.0, 0.2]);
        let sup = threshold_support(&a, 0.1).unwrap();
        assert_eq!(sup, vec![(0, 0), (1, 1)]);

        let above = threshold_support(&a, 0.31).unwrap();
        assert!(above.is_empty());

        let tiny = threshold_support(&a, 1e-300).unwrap();
        assert_eq!(tiny.len(), 3);
    }

    #[test]
    fn support_cardinality_bound() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.9, -0.4, 0.0, 0.02, 0.31, -0.15, 0.0, 0.0, 0.77],
        );
        for q in [0.2, 0.4, 0.7, 1.0] {
            let rq = lq_norm_q(&a, q).unwrap();
            for eta in [0.01, 0.1, 0.3, 0.8] {
                let count = threshold_support(&a, eta).unwrap().len() as f64;
                assert!(count <= rq * eta.powf(-q) + 1e-9);
            }
        }
    }
}
