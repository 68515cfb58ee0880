//! Piecewise VAR(1) models with low-rank plus sparse transition matrices:
//! construction, validation, and simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::series::TimeSeriesData;
use crate::{Error, Result};

/// Margin below one at which a spectral radius is still considered stable.
pub const STABILITY_MARGIN: f64 = 1e-8;

/// Number of pre-sample steps discarded before recording a simulated series,
/// so the first segment starts near its stationary distribution.
pub const SIMULATION_BURN_IN: usize = 200;

/// A transition matrix stored as a low-rank plus sparse decomposition
/// `A = L + S`, together with the spikiness radius `alpha_l` bounding
/// `max|L_ij| <= alpha_l / p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSparsePair {
    low_rank: DMatrix<f64>,
    sparse: DMatrix<f64>,
    alpha_l: f64,
}

impl LowRankSparsePair {
    /// Validates squareness, finiteness, and membership of `low_rank` in the
    /// spikiness ball of radius `alpha_l / p`.
    pub fn new(low_rank: DMatrix<f64>, sparse: DMatrix<f64>, alpha_l: f64) -> Result<Self> {
        let p = low_rank.nrows();
        if low_rank.ncols() != p || sparse.nrows() != p || sparse.ncols() != p {
            return Err(Error::invalid("L and S must be square with equal size"));
        }
        if alpha_l < 0.0 || !alpha_l.is_finite() {
            return Err(Error::invalid("alpha_l must be finite and nonnegative"));
        }
        if low_rank.iter().chain(sparse.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("L and S must be finite"));
        }
        let linf = linalg::max_abs(&low_rank);
        let bound = alpha_l / p as f64;
        if linf > bound * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::invalid(format!(
                "low-rank component violates the spikiness bound: max|L| = {linf:.6} > alpha_l/p = {bound:.6}"
            )));
        }
        Ok(Self {
            low_rank,
            sparse,
            alpha_l,
        })
    }

    pub fn low_rank(&self) -> &DMatrix<f64> {
        &self.low_rank
    }

    pub fn sparse(&self) -> &DMatrix<f64> {
        &self.sparse
    }

    pub fn alpha_l(&self) -> f64 {
        self.alpha_l
    }

    pub fn dim(&self) -> usize {
        self.low_rank.nrows()
    }

    /// Effective transition matrix `A = L + S`.
    pub fn transition(&self) -> DMatrix<f64> {
        &self.low_rank + &self.sparse
    }
}

/// Ordered change points with per-segment transition decompositions.
///
/// A change point `tau` splits time so that rows `t < tau` follow the segment
/// on its left and rows `t >= tau` the segment on its right.
#[derive(Debug, Clone)]
pub struct PiecewiseVarModel {
    change_points: Vec<usize>,
    segments: Vec<LowRankSparsePair>,
    noise_std: f64,
    max_sparse_magnitude: f64,
}

impl PiecewiseVarModel {
    /// Validates segment count, stability of every segment, and the uniform
    /// bound on sparse magnitudes.
    pub fn new(
        change_points: Vec<usize>,
        segments: Vec<LowRankSparsePair>,
        noise_std: f64,
        max_sparse_magnitude: f64,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("model needs at least one segment"));
        }
        if segments.len() != change_points.len() + 1 {
            return Err(Error::invalid(format!(
                "{} segments for {} change points; need change_points + 1",
                segments.len(),
                change_points.len()
            )));
        }
        if !change_points.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("change points must be strictly increasing"));
        }
        if let Some(&first) = change_points.first() {
            if first < 2 {
                return Err(Error::invalid("change points must be greater than 1"));
            }
        }
        let p = segments[0].dim();
        if segments.iter().any(|s| s.dim() != p) {
            return Err(Error::invalid("all segments must share the same dimension"));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be finite and nonnegative"));
        }
        if !(max_sparse_magnitude > 0.0) {
            return Err(Error::invalid("max_sparse_magnitude must be positive"));
        }
        for (j, seg) in segments.iter().enumerate() {
            let a = seg.transition();
            let radius = linalg::spectral_radius(&a);
            if radius >= 1.0 - STABILITY_MARGIN {
                return Err(Error::UnstableSegment {
                    segment: j,
                    spectral_radius: radius,
                });
            }
            let s_inf = linalg::max_abs(seg.sparse());
            if s_inf > max_sparse_magnitude * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "segment {j} sparse magnitude {s_inf:.6} exceeds bound {max_sparse_magnitude:.6}"
                )));
            }
        }
        Ok(Self {
            change_points,
            segments,
            noise_std,
            max_sparse_magnitude,
        })
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    pub fn segments(&self) -> &[LowRankSparsePair] {
        &self.segments
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn max_sparse_magnitude(&self) -> f64 {
        self.max_sparse_magnitude
    }

    pub fn dim(&self) -> usize {
        self.segments[0].dim()
    }

    /// Segment index generating response `X_t`.
    pub fn segment_index(&self, t: usize) -> usize {
        self.change_points.partition_point(|&cp| cp <= t)
    }

    /// Serializes to the interchange JSON document
    /// `{p, sigma, change_points, segments: [{L, S}], alpha_L}` with matrices
    /// flattened row-major.
    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            p: self.dim(),
            sigma: self.noise_std,
            change_points: self.change_points.clone(),
            segments: self
                .segments
                .iter()
                .map(|seg| SegmentJson {
                    l: row_major(seg.low_rank()),
                    s: row_major(seg.sparse()),
                })
                .collect(),
            alpha_l: self.segments[0].alpha_l(),
        }
    }

    /// Rebuilds a validated model from the interchange document.
    pub fn from_json(doc: &ModelJson) -> Result<Self> {
        let p = doc.p;
        let mut segments = Vec::with_capacity(doc.segments.len());
        let mut m_s = 0.0_f64;
        for seg in &doc.segments {
            if seg.l.len() != p * p || seg.s.len() != p * p {
                return Err(Error::invalid("segment matrix length must be p*p"));
            }
            let l = DMatrix::from_row_slice(p, p, &seg.l);
            let s = DMatrix::from_row_slice(p, p, &seg.s);
            m_s = m_s.max(linalg::max_abs(&s));
            segments.push(LowRankSparsePair::new(l, s, doc.alpha_l)?);
        }
        PiecewiseVarModel::new(
            doc.change_points.clone(),
            segments,
            doc.sigma,
            m_s.max(f64::MIN_POSITIVE),
        )
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// JSON interchange form of a [`PiecewiseVarModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub p: usize,
    pub sigma: f64,
    pub change_points: Vec<usize>,
    pub segments: Vec<SegmentJson>,
    #[serde(rename = "alpha_L")]
    pub alpha_l: f64,
}

/// One segment of [`ModelJson`], matrices flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentJson {
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
}

/// True iff the spectral radius of `a` is strictly below `1 - STABILITY_MARGIN`,
/// the VAR(1) stability condition `det(I - Az) != 0` on the unit circle.
pub fn check_stability(a: &DMatrix<f64>) -> Result<bool> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("stability check requires a square matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("stability check requires finite entries"));
    }
    Ok(linalg::spectral_radius(a) < 1.0 - STABILITY_MARGIN)
}

/// Information ratio `gamma = max|L| / max|S|`, the relative strength of the
/// low-rank signal against the sparse one.
pub fn information_ratio(pair: &LowRankSparsePair) -> Result<f64> {
    let s_inf = linalg::max_abs(pair.sparse());
    if s_inf == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(linalg::max_abs(pair.low_rank()) / s_inf)
}

/// Entrywise clip of `l` to the spikiness box `[-alpha_l/p, alpha_l/p]`.
///
/// This is the Euclidean projection onto the constraint space, hence
/// idempotent and nonexpansive in Frobenius norm.
pub fn project_onto_omega(l: &DMatrix<f64>, alpha_l: f64) -> DMatrix<f64> {
    let bound = alpha_l / l.nrows() as f64;
    l.map(|x| x.clamp(-bound, bound))
}

/// Symmetric rank-`rank` matrix `sum_l sigma_l u_l u_l'` built from a random
/// orthonormal basis drawn deterministically from `seed`.
pub fn build_low_rank_component(
    seed: u64,
    p: usize,
    rank: usize,
    singular_values: &[f64],
) -> Result<DMatrix<f64>> {
    if rank > p {
        return Err(Error::invalid(format!("rank {rank} exceeds dimension {p}")));
    }
    if singular_values.len() != rank {
        return Err(Error::invalid(format!(
            "got {} singular values for rank {rank}",
            singular_values.len()
        )));
    }
    if singular_values.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("singular values must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_orthonormal(&mut rng, p);
    let mut out = DMatrix::zeros(p, p);
    for (l, &sv) in singular_values.iter().enumerate() {
        let col = u.column(l);
        out += sv * &col * col.transpose();
    }
    Ok(out)
}

/// Orthonormal `p x p` matrix from the QR factorization of a Gaussian draw,
/// with column signs fixed so the factorization is canonical.
pub fn random_orthonormal(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Simulates `t_len` observations from the piecewise model.
///
/// The state starts at zero and runs [`SIMULATION_BURN_IN`] discarded steps
/// under the first segment; the burn-in endpoint is recorded as `X_0`.
/// Noise is i.i.d. Gaussian with covariance `sigma^2 I`, drawn from a stream
/// cipher RNG so the output is bit-identical for identical `(model, t_len,
/// seed)`.
pub fn simulate_piecewise_var(
    model: &PiecewiseVarModel,
    t_len: usize,
    seed: u64,
) -> Result<TimeSeriesData> {
    if t_len < 2 {
        return Err(Error::invalid("need t_len >= 2"));
    }
    if let Some(&last) = model.change_points().last() {
        if last >= t_len {
            return Err(Error::invalid(format!(
                "last change point {last} must be below t_len {t_len}"
            )));
        }
    }
    for (j, seg) in model.segments().iter().enumerate() {
        let a = seg.transition();
        let radius = linalg::spectral_radius(&a);
        if radius >= 1.0 - STABILITY_MARGIN {
            return Err(Error::UnstableSegment {
                segment: j,
                spectral_radius: radius,
            });
        }
    }

    let p = model.dim();
    let sigma = model.noise_std();
    let transitions: Vec<DMatrix<f64>> =
        model.segments().iter().map(|s| s.transition()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_noise = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_fn(p, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
    };

    let mut state: DVector<f64> = DVector::zeros(p);
    for _ in 0..SIMULATION_BURN_IN {
        state = &transitions[0] * &state + draw_noise(&mut rng);
    }

    let mut values = DMatrix::zeros(t_len, p);
    values.row_mut(0).copy_from(&state.transpose());
    for t in 1..t_len {
        let seg = model.segment_index(t);
        state = &transitions[seg] * &state + draw_noise(&mut rng);
        values.row_mut(t).copy_from(&state.transpose());
    }
    TimeSeriesData::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_pair(p: usize, scale: f64) -> LowRankSparsePair {
        let l = DMatrix::zeros(p, p);
        let s = DMatrix::identity(p, p) * scale;
        LowRankSparsePair::new(l, s, 1.0).unwrap()
    }

    #[test]
    fn stability_examples() {
        let a = DMatrix::identity(2, 2) * 0.9;
        assert!(check_stability(&a).unwrap());
        let unit = DMatrix::identity(2, 2);
        assert!(!check_stability(&unit).unwrap());
        // triangular matrix: eigenvalues on the diagonal
        let tri = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.0, 0.5]);
        assert!(check_stability(&tri).unwrap());
        let rect = DMatrix::zeros(2, 3);
        assert!(check_stability(&rect).is_err());
    }

    #[test]
    fn information_ratio_examples() {
        let p = 2;
        let zero_l = LowRankSparsePair::new(
            DMatrix::zeros(p, p),
            DMatrix::identity(p, p) * 0.2,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(information_ratio(&zero_l).unwrap(), 0.0);

        // the scenario-A ratio: max|L| = 0.05, max|S| = 0.2
        let l = DMatrix::identity(p, p) * 0.05;
        let s = DMatrix::identity(p, p) * 0.2;
        let pair = LowRankSparsePair::new(l, s, 1.0).unwrap();
        assert_relative_eq!(information_ratio(&pair).unwrap(), 0.25);

        let l = DMatrix::identity(p, p) * 0.3;
        let pair = LowRankSparsePair::new(l.clone(), l, 1.0).unwrap();
        assert_relative_eq!(information_ratio(&pair).unwrap(), 1.0);

        let zero_s =
            LowRankSparsePair::new(DMatrix::zeros(p, p), DMatrix::zeros(p, p), 1.0).unwrap();
        assert!(matches!(
            information_ratio(&zero_s),
            Err(Error::UndefinedRatio)
        ));
    }

    #[test]
    fn omega_projection_examples() {
        let l = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, 0.1, 0.3]);
        let clipped = project_onto_omega(&l, 1.0);
        assert_relative_eq!(clipped[(0, 0)], 0.5); // bound alpha_l / p = 0.5
        assert_relative_eq!(clipped[(0, 1)], -0.2);
        // already feasible input is unchanged
        let inside = DMatrix::from_row_slice(2, 2, &[0.4, -0.2, 0.1, 0.3]);
        assert_eq!(project_onto_omega(&inside, 1.0), inside);
        // zero radius collapses to the zero matrix
        assert_eq!(project_onto_omega(&l, 0.0), DMatrix::zeros(2, 2));
    }

    #[test]
    fn build_low_rank_rank_and_orthonormality() {
        // rank 0 gives the zero matrix
        let z = build_low_rank_component(7, 4, 0, &[]).unwrap();
        assert_eq!(z, DMatrix::zeros(4, 4));

        // rank p with unit singular values reconstructs the identity
        let full = build_low_rank_component(7, 4, 4, &[1.0; 4]).unwrap();
        assert_relative_eq!(
            (full - DMatrix::identity(4, 4)).norm(),
            0.0,
            epsilon = 1e-10
        );

        // requested rank is the numerical rank and singular values match inputs
        let m = build_low_rank_component(3, 5, 2, &[2.0, 0.5]).unwrap();
        let sv = crate::linalg::singular_values(&m);
        assert_eq!(sv.iter().filter(|&&s| s > 1e-10).count(), 2);
        assert_relative_eq!(sv[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sv[1], 0.5, epsilon = 1e-10);

        assert!(build_low_rank_component(1, 3, 4, &[1.0; 4]).is_err());
    }

    #[test]
    fn noise_free_zero_fixed_point() {
        let model =
            PiecewiseVarModel::new(vec![], vec![identity_pair(3, 0.5)], 0.0, 1.0).unwrap();
        let data = simulate_piecewise_var(&model, 20, 11).unwrap();
        assert_eq!(data.values().iter().filter(|x| **x != 0.0).count(), 0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let model =
            PiecewiseVarModel::new(vec![], vec![identity_pair(2, 0.5)], 0.1, 1.0).unwrap();
        let a = simulate_piecewise_var(&model, 50, 42).unwrap();
        let b = simulate_piecewise_var(&model, 50, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_piecewise_var(&model, 50, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn yule_walker_lag_one_relation() {
        // A = 0.5 I, p = 2: Gamma(1) = A Gamma(0), so the empirical lag-1
        // autocovariance must be about half the lag-0 one.
        let model =
            PiecewiseVarModel::new(vec![], vec![identity_pair(2, 0.5)], 0.1, 1.0).unwrap();
        let data = simulate_piecewise_var(&model, 10_000, 5).unwrap();
        let t = data.t_len();
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        for i in 0..t - 1 {
            let x = data.row(i);
            let y = data.row(i + 1);
            g0 += x.dot(&x);
            g1 += y.dot(&x);
        }
        let ratio = g1 / g0;
        assert!(
            (ratio - 0.5).abs() < 0.025,
            "lag-1/lag-0 ratio {ratio} departs from 0.5 by more than 5%"
        );
    }

    #[test]
    fn segment_purity_residual_variance() {
        let p = 2;
        let a1 = identity_pair(p, 0.5);
        let a2 = identity_pair(p, -0.4);
        let sigma = 0.1;
        let model = PiecewiseVarModel::new(vec![3000], vec![a1, a2], sigma, 1.0).unwrap();
        let data = simulate_piecewise_var(&model, 6000, 9).unwrap();
        for (range, trans) in [
            (1..3000usize, model.segments()[0].transition()),
            (3001..6000usize, model.segments()[1].transition()),
        ] {
            let mut sum_sq = 0.0;
            let mut count = 0.0;
            for t in range {
                let resid = data.row(t) - &trans * data.row(t - 1);
                sum_sq += resid.norm_squared();
                count += p as f64;
            }
            let var = sum_sq / count;
            assert!(
                (var - sigma * sigma).abs() < 0.1 * sigma * sigma,
                "residual variance {var} departs from {} by more than 10%",
                sigma * sigma
            );
        }
    }

    #[test]
    fn unstable_segment_is_rejected_with_index() {
        let p = 2;
        let good = identity_pair(p, 0.5);
        let bad = LowRankSparsePair::new(DMatrix::zeros(p, p), DMatrix::identity(p, p), 1.0)
            .unwrap();
        let err = PiecewiseVarModel::new(vec![5], vec![good, bad], 0.1, 1.0).unwrap_err();
        match err {
            Error::UnstableSegment { segment, .. } => assert_eq!(segment, 1),
            other => panic!("expected UnstableSegment, got {other:?}"),
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = PiecewiseVarModel::new(
            vec![10],
            vec![identity_pair(2, 0.5), identity_pair(2, -0.3)],
            0.1,
            1.0,
        )
        .unwrap();
        let doc = model.to_json();
        let text = serde_json::to_string(&doc).unwrap();
        let parsed: ModelJson = serde_json::from_str(&text).unwrap();
        let back = PiecewiseVarModel::from_json(&parsed).unwrap();
        assert_eq!(back.change_points(), model.change_points());
        assert_eq!(back.segments()[1].sparse(), model.segments()[1].sparse());
    }
}
