//! Gaussian-mixture prior over whole trajectories.
//!
//! Each mixture component is a composite curve sampled at the parameters of
//! its schedule. The stacked point means form the component mean and the
//! matrix-valued covariance function between curve points forms a block Gram
//! matrix. The covariance function has three cases depending on whether the
//! two points lie on the same segment, on neighbouring segments, or further
//! apart.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::curve::{basis, eval_point, local_param, segment_index, CompositeCurve, CurveSegment};
use crate::discretize::ParamSchedule;
use crate::error::{Error, Result};
use crate::gaussian::{
    cholesky_with_jitter, psd_factor, sample_labeled_with, GaussianMixture, MvGaussian,
};

const WEIGHT_TOL: f64 = 1e-9;

/// Stacked means `μ(t_1), ..., μ(t_N)`.
pub fn mean_vector(curve: &CompositeCurve, schedule: &ParamSchedule) -> Result<DVector<f64>> {
    let d = curve.dim();
    let mut out = DVector::zeros(d * schedule.len());
    for (i, &t) in schedule.params().iter().enumerate() {
        out.rows_mut(i * d, d)
            .copy_from(&eval_point(curve, t)?.mean);
    }
    Ok(out)
}

/// Covariance between the points at local parameters `u1` and `u2` of one
/// segment whose control points are independent:
/// `Σ_l b_l(u1) b_l(u2) Σ_l`.
pub fn kernel_same_segment(segment: &CurveSegment, u1: f64, u2: f64) -> Result<DMatrix<f64>> {
    check_local(u1)?;
    check_local(u2)?;
    let big_l = segment.degree();
    let d = segment.dim();
    let mut k = DMatrix::zeros(d, d);
    for (l, p) in segment.points().iter().enumerate() {
        k += p.covariance() * (basis(l, big_l, u1) * basis(l, big_l, u2));
    }
    Ok(k)
}

/// Covariance between a point on segment `joint` and a point on segment
/// `joint + 1` (0-based joint index).
///
/// Expands both points over their control points and sums the control point
/// cross-covariances: the shared connecting point contributes its own
/// covariance, and at C1/C2 joints the second control point of the later
/// segment contributes through its dependence on the two points before the
/// joint. Pairs of independent control points contribute nothing.
pub fn kernel_adjacent_segments(
    curve: &CompositeCurve,
    joint: usize,
    u1: f64,
    u2: f64,
) -> Result<DMatrix<f64>> {
    if joint + 1 >= curve.n_segments() {
        return Err(Error::domain(format!(
            "joint {joint} out of range for a curve with {} segments",
            curve.n_segments()
        )));
    }
    check_local(u1)?;
    check_local(u2)?;
    Ok(pairwise_kernel(curve, joint, u1, joint + 1, u2))
}

/// Covariance between points on segments with at least one segment in
/// between that share no control points: the second moment reduces to the
/// product of means and the covariance vanishes. [`curve_kernel`] only uses
/// this when the segments are uncoupled; a short middle segment followed by
/// a C1/C2 joint can tie them through a dependent point.
pub fn kernel_disconnected(
    seg1: &CurveSegment,
    seg2: &CurveSegment,
    u1: f64,
    u2: f64,
) -> Result<DMatrix<f64>> {
    check_local(u1)?;
    check_local(u2)?;
    if seg1.dim() != seg2.dim() {
        return Err(Error::domain("segments differ in dimension"));
    }
    Ok(DMatrix::zeros(seg1.dim(), seg2.dim()))
}

fn check_local(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!(
            "local parameter {u} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn pairwise_kernel(
    curve: &CompositeCurve,
    seg1: usize,
    u1: f64,
    seg2: usize,
    u2: f64,
) -> DMatrix<f64> {
    let (l1, l2) = (curve.degree(seg1), curve.degree(seg2));
    let d = curve.dim();
    let mut k = DMatrix::zeros(d, d);
    for a in 0..=l1 {
        let ba = basis(a, l1, u1);
        if ba == 0.0 {
            continue;
        }
        for b in 0..=l2 {
            let weight = ba * basis(b, l2, u2);
            if weight != 0.0 {
                k += curve.control_cross_covariance(seg1, a, seg2, b) * weight;
            }
        }
    }
    k
}

/// Matrix-valued covariance function `K(t1, t2)` of a composite curve.
pub fn curve_kernel(curve: &CompositeCurve, t1: f64, t2: f64) -> Result<DMatrix<f64>> {
    let n_seg = curve.n_segments();
    let (s1, s2) = (segment_index(t1, n_seg)?, segment_index(t2, n_seg)?);
    let (u1, u2) = (local_param(t1, n_seg)?, local_param(t2, n_seg)?);
    if s1 > s2 {
        return Ok(curve_kernel(curve, t2, t1)?.transpose());
    }
    match s2 - s1 {
        0 if curve.segment_is_independent(s1) => kernel_same_segment(&curve.segment(s1), u1, u2),
        0 => Ok(pairwise_kernel(curve, s1, u1, s1, u2)),
        1 => kernel_adjacent_segments(curve, s1, u1, u2),
        _ if curve.segments_coupled(s1, s2) => Ok(pairwise_kernel(curve, s1, u1, s2, u2)),
        _ => kernel_disconnected(&curve.segment(s1), &curve.segment(s2), u1, u2),
    }
}

/// Block Gram matrix over the schedule's curve points. Blocks are computed
/// for `t_i1 <= t_i2` and mirrored.
pub fn gram_matrix(curve: &CompositeCurve, schedule: &ParamSchedule) -> Result<DMatrix<f64>> {
    let d = curve.dim();
    let ts = schedule.params();
    let n = ts.len();
    let mut g = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in i..n {
            let block = curve_kernel(curve, ts[i], ts[j])?;
            g.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            if i != j {
                g.view_mut((j * d, i * d), (d, d))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(g)
}

/// Matrix `F` with `F Fᵀ = gram_matrix(curve, schedule)`, mapping one
/// standard normal draw per free control point coordinate to the stacked
/// curve points. Its rank never exceeds the number of free coordinates.
pub fn gram_factor(curve: &CompositeCurve, schedule: &ParamSchedule) -> Result<DMatrix<f64>> {
    let d = curve.dim();
    let n = schedule.len();
    let weights = schedule
        .params()
        .iter()
        .map(|&t| curve.free_weights(t))
        .collect::<Result<Vec<_>>>()?;
    let n_points = weights.first().map_or(0, Vec::len);
    let roots = (0..n_points)
        .map(|f| psd_factor(curve.free_point(f).covariance()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(n * d, n_points * d);
    for (i, w) in weights.iter().enumerate() {
        for (f, root) in roots.iter().enumerate() {
            if w[f] != 0.0 {
                out.view_mut((i * d, f * d), (d, d))
                    .copy_from(&(root * w[f]));
            }
        }
    }
    Ok(out)
}

/// Mixture prior over trajectories: one Gaussian per composite curve.
#[derive(Debug, Clone)]
pub struct TrajectoryPrior {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<MvGaussian>,
    factors: Vec<DMatrix<f64>>,
    schedules: Vec<ParamSchedule>,
    curves: Vec<CompositeCurve>,
}

impl TrajectoryPrior {
    /// Point dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component(&self, k: usize) -> &MvGaussian {
        &self.components[k]
    }

    pub fn components(&self) -> &[MvGaussian] {
        &self.components
    }

    pub fn schedule(&self, k: usize) -> &ParamSchedule {
        &self.schedules[k]
    }

    pub fn curve(&self, k: usize) -> &CompositeCurve {
        &self.curves[k]
    }

    /// Trajectory length `N_k` of component `k`.
    pub fn length(&self, k: usize) -> usize {
        self.components[k].dim() / self.dim
    }

    pub fn min_length(&self) -> usize {
        (0..self.n_components())
            .map(|k| self.length(k))
            .min()
            .unwrap_or(0)
    }

    /// Mean of time step `step` of component `k`.
    pub fn step_mean(&self, k: usize, step: usize) -> DVector<f64> {
        self.components[k]
            .mean()
            .rows(step * self.dim, self.dim)
            .into_owned()
    }

    /// Prior restricted to the first `n` steps of every component.
    pub fn truncated(&self, n: usize) -> Result<TrajectoryPrior> {
        if n == 0 || n > self.min_length() {
            return Err(Error::Window(format!(
                "cannot truncate to {n} steps; shortest component has {}",
                self.min_length()
            )));
        }
        let steps: Vec<usize> = (0..n).collect();
        let components = self
            .components
            .iter()
            .map(|c| c.marginalize(&steps, self.dim))
            .collect::<Result<Vec<_>>>()?;
        let factors = self
            .factors
            .iter()
            .map(|f| f.rows(0, n * self.dim).into_owned())
            .collect();
        Ok(TrajectoryPrior {
            components,
            factors,
            ..self.clone()
        })
    }

    /// Exact low-rank factor of component `k`'s covariance; see [`gram_factor`].
    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k]
    }

    /// Draws `(component, trajectory)` pairs keeping the first `cap` steps.
    /// Paths are generated from the control points, so every draw lies
    /// exactly in the span of its component's curve model.
    pub fn sample(
        &self,
        count: usize,
        seed: u64,
        cap: usize,
    ) -> Result<Vec<(usize, DVector<f64>)>> {
        if cap == 0 || cap > self.min_length() {
            return Err(Error::Window(format!(
                "cap length {cap} must lie in 1..={}",
                self.min_length()
            )));
        }
        let rows = cap * self.dim;
        sample_labeled_with(&self.weights, count, seed, |k, rng, n| {
            let f = self.factors[k].rows(0, rows);
            let mean = self.components[k].mean().rows(0, rows);
            Ok((0..n)
                .map(|_| {
                    let z = DVector::from_iterator(
                        f.ncols(),
                        (0..f.ncols()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
                    );
                    mean + f * z
                })
                .collect())
        })
    }

    /// The prior as a mixture; all components must have equal length.
    pub fn mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.weights.clone(), self.components.clone())
    }
}

/// Builds the trajectory prior for `curves` discretized by `schedules`.
pub fn build_prior(
    curves: Vec<CompositeCurve>,
    weights: Vec<f64>,
    schedules: Vec<ParamSchedule>,
) -> Result<TrajectoryPrior> {
    if curves.is_empty() {
        return Err(Error::spec(
            "components",
            "a prior needs at least one component",
        ));
    }
    if weights.len() != curves.len() || schedules.len() != curves.len() {
        return Err(Error::spec(
            "components",
            format!(
                "{} curves, {} weights and {} schedules",
                curves.len(),
                weights.len(),
                schedules.len()
            ),
        ));
    }
    if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::spec(
            format!("component {k} weight"),
            "weight must be finite and non-negative",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::spec(
            "weights",
            format!("weights sum to {total}, not 1"),
        ));
    }
    let dim = curves[0].dim();
    if let Some(k) = curves.iter().position(|c| c.dim() != dim) {
        return Err(Error::spec(
            format!("component {k}"),
            format!("dimension {} differs from {dim}", curves[k].dim()),
        ));
    }
    let mut components = Vec::with_capacity(curves.len());
    let mut factors = Vec::with_capacity(curves.len());
    for (curve, schedule) in curves.iter().zip(&schedules) {
        let mean = mean_vector(curve, schedule)?;
        let gram = gram_matrix(curve, schedule)?;
        cholesky_with_jitter(&gram)?;
        components.push(MvGaussian::new(mean, gram)?);
        factors.push(gram_factor(curve, schedule)?);
    }
    Ok(TrajectoryPrior {
        dim,
        weights: weights.iter().map(|w| w / total).collect(),
        components,
        factors,
        schedules,
        curves,
    })
}
