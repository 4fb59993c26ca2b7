//! Scores for predicted trajectory distributions: negative log-likelihood of
//! the true future points and the per-point sliced Wasserstein distance to
//! the ground-truth conditional.
//!
//! Sliced Wasserstein estimates sample both distributions with the same seed
//! and project them on the same directions. The estimate is therefore exactly
//! symmetric, exactly zero for identical inputs, and its sampling noise
//! largely cancels between the two sides.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMixture;
use crate::seed::derive_seed;

const TAG_SAMPLES: u64 = 1;
const TAG_DIRECTIONS: u64 = 2;
const TAG_EQUALIZE: u64 = 3;

/// Equally or unequally weighted point samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("a sample set needs at least one point"));
        }
        if weights.len() != points.len() {
            return Err(Error::domain(format!(
                "{} weights for {} samples",
                weights.len(),
                points.len()
            )));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::domain("samples differ in dimension"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain(
                "sample weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("sample weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let first = self.weights[0];
        self.weights.iter().all(|&w| w == first)
    }
}

/// Distribution of one predicted point.
#[derive(Debug, Clone, PartialEq)]
pub enum PointDistribution {
    Mixture(GaussianMixture),
    Samples(WeightedSamples),
}

impl PointDistribution {
    pub fn dim(&self) -> usize {
        match self {
            PointDistribution::Mixture(m) => m.dim(),
            PointDistribution::Samples(s) => s.points[0].len(),
        }
    }

    /// `count` equally weighted draws. Uniformly weighted sample sets are
    /// returned unchanged regardless of `count`.
    fn draws(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        match self {
            PointDistribution::Mixture(m) => m.sample(count, seed),
            PointDistribution::Samples(s) if s.is_uniform() => Ok(s.points.clone()),
            PointDistribution::Samples(s) => {
                let dist = WeightedIndex::new(&s.weights)
                    .map_err(|e| Error::Numerical(format!("invalid sample weights: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..count)
                    .map(|_| s.points[dist.sample(&mut rng)].clone())
                    .collect())
            }
        }
    }
}

/// Predicted distributions for each future time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    steps: Vec<PointDistribution>,
}

impl PredictionDistribution {
    pub fn new(steps: Vec<PointDistribution>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::domain("a prediction needs at least one time step"));
        }
        let d = steps[0].dim();
        if steps.iter().any(|s| s.dim() != d) {
            return Err(Error::domain("predicted steps differ in dimension"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[PointDistribution] {
        &self.steps
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    /// Whether every step carries a density (needed for NLL).
    pub fn has_density(&self) -> bool {
        self.steps
            .iter()
            .all(|s| matches!(s, PointDistribution::Mixture(_)))
    }

    /// Per-step marginals of a mixture over `horizon * d` coordinates.
    pub fn from_joint(joint: &GaussianMixture, dim: usize) -> Result<Self> {
        if dim == 0 || !joint.dim().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "joint dimension {} is not a multiple of {dim}",
                joint.dim()
            )));
        }
        let steps = (0..joint.dim() / dim)
            .map(|i| Ok(PointDistribution::Mixture(joint.marginalize(&[i], dim)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }
}

/// Sliced Wasserstein settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwConfig {
    pub projections: usize,
    pub samples_per_distribution: usize,
    pub p: f64,
    pub seed: u64,
}

impl Default for SwConfig {
    fn default() -> Self {
        Self {
            projections: 200,
            samples_per_distribution: 2048,
            p: 2.0,
            seed: 0,
        }
    }
}

impl SwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projections < 1 {
            return Err(Error::domain("at least one projection is required"));
        }
        if self.samples_per_distribution < 2 {
            return Err(Error::domain(
                "at least two samples per distribution are required",
            ));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::domain(format!("order p = {} must be >= 1", self.p)));
        }
        Ok(())
    }

    fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Mean negative log-likelihood of the true points under the per-step
/// predicted densities.
pub fn nll_score(
    prediction: &PredictionDistribution,
    ground_truth: &[DVector<f64>],
) -> Result<f64> {
    if ground_truth.len() != prediction.horizon() {
        return Err(Error::domain(format!(
            "prediction horizon {} but {} ground-truth points",
            prediction.horizon(),
            ground_truth.len()
        )));
    }
    let mut total = 0.0;
    for (i, (step, x)) in prediction.steps.iter().zip(ground_truth).enumerate() {
        match step {
            PointDistribution::Mixture(m) => total -= m.log_pdf(x)?,
            PointDistribution::Samples(_) => {
                return Err(Error::UnsupportedForm(format!(
                    "step {i} is a sample set; NLL needs a density"
                )))
            }
        }
    }
    Ok(total / prediction.horizon() as f64)
}

/// Order-`p` Wasserstein distance between two equal-size empirical
/// distributions on the line. Inputs are expected sorted; unsorted inputs
/// are sorted first.
pub fn wasserstein_1d(samples_p: &[f64], samples_q: &[f64], p: f64) -> Result<f64> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::domain("empty sample set"));
    }
    if samples_p.len() != samples_q.len() {
        return Err(Error::domain(format!(
            "sample counts differ ({} vs {})",
            samples_p.len(),
            samples_q.len()
        )));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::domain(format!("order p = {p} must be >= 1")));
    }
    let a = sorted(samples_p);
    let b = sorted(samples_q);
    Ok(transport_cost(&a, &b, p).powf(1.0 / p))
}

fn sorted(v: &[f64]) -> std::borrow::Cow<'_, [f64]> {
    if v.is_sorted() {
        std::borrow::Cow::Borrowed(v)
    } else {
        let mut owned = v.to_vec();
        owned.sort_by(f64::total_cmp);
        std::borrow::Cow::Owned(owned)
    }
}

/// `(1/n) Σ |a_i - b_i|^p` over sorted inputs.
fn transport_cost(a: &[f64], b: &[f64], p: f64) -> f64 {
    let sum: f64 = if p == 2.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else if p == 1.0 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum()
    };
    sum / a.len() as f64
}

/// Unit projection directions. In the plane the angles are a randomly
/// rotated evenly spaced fan over a half turn (each direction is uniform on
/// the circle); in higher dimension they are independent uniform draws.
fn directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dim {
        1 => vec![DVector::from_element(1, 1.0); count],
        2 => {
            let offset: f64 = rng.random();
            (0..count)
                .map(|i| {
                    let theta = (i as f64 + offset) * std::f64::consts::PI / count as f64;
                    DVector::from_vec(vec![theta.cos(), theta.sin()])
                })
                .collect()
        }
        _ => (0..count)
            .map(|_| loop {
                let v = DVector::from_iterator(
                    dim,
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                let n = v.norm();
                if n > 1e-12 {
                    break v / n;
                }
            })
            .collect(),
    }
}

/// Keeps `count` of `points`, chosen without replacement.
fn subsample(points: Vec<DVector<f64>>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, points.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i].clone()).collect()
}

/// Sliced Wasserstein distance between two point distributions.
pub fn sliced_wasserstein(
    dist_p: &PointDistribution,
    dist_q: &PointDistribution,
    config: &SwConfig,
) -> Result<f64> {
    config.validate()?;
    let d = dist_p.dim();
    if dist_q.dim() != d {
        return Err(Error::domain(format!(
            "dimension mismatch ({d} vs {})",
            dist_q.dim()
        )));
    }
    let sample_seed = derive_seed(config.seed, TAG_SAMPLES);
    let n = config.samples_per_distribution;
    let mut xs = dist_p.draws(n, sample_seed)?;
    let mut ys = dist_q.draws(n, sample_seed)?;
    let equalize_seed = derive_seed(config.seed, TAG_EQUALIZE);
    if xs.len() > ys.len() {
        xs = subsample(xs, ys.len(), equalize_seed);
    } else if ys.len() > xs.len() {
        ys = subsample(ys, xs.len(), equalize_seed);
    }
    let dirs = directions(
        d,
        config.projections,
        derive_seed(config.seed, TAG_DIRECTIONS),
    );
    let costs: Vec<f64> = dirs
        .par_iter()
        .map(|theta| {
            let mut a: Vec<f64> = xs.iter().map(|x| x.dot(theta)).collect();
            let mut b: Vec<f64> = ys.iter().map(|y| y.dot(theta)).collect();
            a.sort_unstable_by(f64::total_cmp);
            b.sort_unstable_by(f64::total_cmp);
            transport_cost(&a, &b, config.p)
        })
        .collect();
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    Ok(mean.powf(1.0 / config.p))
}

/// Mean over time steps of the sliced Wasserstein distance between the
/// predicted step distribution and the ground-truth marginal at that step.
pub fn per_point_swd(
    prediction: &PredictionDistribution,
    ground_truth: &GaussianMixture,
    config: &SwConfig,
) -> Result<f64> {
    let d = prediction.dim();
    if ground_truth.dim() != prediction.horizon() * d {
        return Err(Error::domain(format!(
            "ground truth covers {} coordinates but the prediction has {} steps of dimension {d}",
            ground_truth.dim(),
            prediction.horizon()
        )));
    }
    let mut total = 0.0;
    for (i, step) in prediction.steps.iter().enumerate() {
        let truth = PointDistribution::Mixture(ground_truth.marginalize(&[i], d)?);
        let step_config = config.with_seed(derive_seed(config.seed, 1000 + i as u64));
        total += sliced_wasserstein(step, &truth, &step_config)?;
    }
    Ok(total / prediction.horizon() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::MvGaussian;
    use nalgebra::DMatrix;

    fn gauss(mean: &[f64], var: f64) -> PointDistribution {
        let d = mean.len();
        PointDistribution::Mixture(GaussianMixture::single(
            MvGaussian::new(
                DVector::from_column_slice(mean),
                DMatrix::identity(d, d) * var,
            )
            .unwrap(),
        ))
    }

    #[test]
    fn w1d_examples() {
        let a = [0.0, 1.0, 2.0];
        assert_eq!(wasserstein_1d(&a, &a, 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[3.5], 1.0).unwrap(), 3.5);
        assert_eq!(wasserstein_1d(&[0.0], &[-3.5], 2.0).unwrap(), 3.5);
        assert_eq!(
            wasserstein_1d(&[2.0, 0.0, 1.0], &[0.0, 1.0, 2.0], 1.0).unwrap(),
            0.0
        );
        assert!(wasserstein_1d(&[], &[], 2.0).is_err());
        assert!(wasserstein_1d(&[1.0], &[1.0, 2.0], 2.0).is_err());
        assert!(wasserstein_1d(&[1.0], &[2.0], 0.5).is_err());
    }

    #[test]
    fn nll_of_standard_gaussian() {
        let pred = PredictionDistribution::new(vec![gauss(&[0.0, 0.0], 1.0)]).unwrap();
        let v = nll_score(&pred, &[DVector::zeros(2)]).unwrap();
        assert!((v - 1.837877).abs() < 1e-6);
        assert!(nll_score(&pred, &[]).is_err());
    }

    #[test]
    fn nll_decreases_with_variance_at_truth() {
        let mut last = f64::INFINITY;
        for var in [1.0, 1e-2, 1e-4, 1e-6] {
            let pred = PredictionDistribution::new(vec![gauss(&[0.5, 0.5], var)]).unwrap();
            let v = nll_score(&pred, &[DVector::from_vec(vec![0.5, 0.5])]).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < -10.0);
    }

    #[test]
    fn nll_rejects_sample_sets() {
        let s = WeightedSamples::uniform(vec![DVector::zeros(2); 3]).unwrap();
        let pred = PredictionDistribution::new(vec![PointDistribution::Samples(s)]).unwrap();
        assert!(!pred.has_density());
        assert!(matches!(
            nll_score(&pred, &[DVector::zeros(2)]),
            Err(Error::UnsupportedForm(_))
        ));
    }

    #[test]
    fn swd_identity_and_symmetry() {
        let cfg = SwConfig::default();
        let p = gauss(&[0.0, 0.0], 1.0);
        let q = gauss(&[1.0, -0.5], 0.5);
        assert_eq!(sliced_wasserstein(&p, &p, &cfg).unwrap(), 0.0);
        let pq = sliced_wasserstein(&p, &q, &cfg).unwrap();
        let qp = sliced_wasserstein(&q, &p, &cfg).unwrap();
        assert_eq!(pq, qp);
        assert!(pq > 0.5);
        assert!(sliced_wasserstein(&p, &gauss(&[0.0], 1.0), &cfg).is_err());
    }

    #[test]
    fn swd_of_translated_gaussians() {
        let cfg = SwConfig {
            samples_per_distribution: 10_000,
            ..SwConfig::default()
        };
        for m in [0.5, 1.0, 2.0] {
            let v =
                sliced_wasserstein(&gauss(&[0.0, 0.0], 1.0), &gauss(&[m, 0.0], 1.0), &cfg).unwrap();
            let expected = m / 2f64.sqrt();
            assert!((v - expected).abs() < 0.05 * expected, "m={m}: {v}");
        }
    }

    #[test]
    fn swd_handles_weighted_and_unequal_sample_sets() {
        let cfg = SwConfig::default();
        let pts: Vec<DVector<f64>> = (0..5000)
            .map(|i| DVector::from_vec(vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]))
            .collect();
        let full = PointDistribution::Samples(WeightedSamples::uniform(pts.clone()).unwrap());
        let half =
            PointDistribution::Samples(WeightedSamples::uniform(pts[..2500].to_vec()).unwrap());
        let v = sliced_wasserstein(&full, &half, &cfg).unwrap();
        assert_eq!(v, sliced_wasserstein(&half, &full, &cfg).unwrap());
        assert!(v < 0.1);
        let weights: Vec<f64> = (0..5000)
            .map(|i| if i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let weighted = PointDistribution::Samples(WeightedSamples::new(pts, weights).unwrap());
        assert!(sliced_wasserstein(&weighted, &full, &cfg)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn per_point_single_step_equals_sliced() {
        let cfg = SwConfig::default();
        let truth = GaussianMixture::single(
            MvGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap(),
        );
        let pred = PredictionDistribution::new(vec![gauss(&[0.3, 0.0], 1.0)]).unwrap();
        let per_point = per_point_swd(&pred, &truth, &cfg).unwrap();
        let direct = sliced_wasserstein(
            &pred.steps()[0],
            &PointDistribution::Mixture(truth.clone()),
            &cfg.with_seed(derive_seed(cfg.seed, 1000)),
        )
        .unwrap();
        assert_eq!(per_point, direct);
        let two_steps = PredictionDistribution::new(vec![gauss(&[0.0, 0.0], 1.0); 2]).unwrap();
        assert!(per_point_swd(&two_steps, &truth, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SwConfig {
            projections: 0,
            ..SwConfig::default()
        }
        .validate()
        .is_err());
        assert!(SwConfig {
            samples_per_distribution: 1,
            ..SwConfig::default()
        }
        .validate()
        .is_err());
        assert!(SwConfig {
            p: 0.5,
            ..SwConfig::default()
        }
        .validate()
        .is_err());
        assert!(SwConfig::default().validate().is_ok());
    }
}
