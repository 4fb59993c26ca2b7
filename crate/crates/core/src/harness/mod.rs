//! Evaluation pipeline: sample train/test trajectories from a dataset spec,
//! cut observation windows, build the exact conditional ground truth, query
//! a predictor and score it.

pub mod export;
pub mod spec;

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{normalize_log_weights, GaussianMixture, IndexPartition};
use crate::metrics::{
    nll_score, per_point_swd, PointDistribution, PredictionDistribution, SwConfig,
};
use crate::prior::TrajectoryPrior;
use crate::seed::derive_seed;

pub use spec::{parse_spec, ComponentSpec, DatasetSpec, FORMAT_VERSION, REFERENCE_SPEC};

const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_OFFSETS: u64 = 3;

pub const REPORT_VERSION: u32 = 1;

/// A sampled trajectory and the component it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub component: usize,
    pub points: Vec<DVector<f64>>,
}

/// Which metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nll,
    Swd,
    Both,
}

impl Metric {
    pub fn nll(self) -> bool {
        matches!(self, Metric::Nll | Metric::Both)
    }

    pub fn swd(self) -> bool {
        matches!(self, Metric::Swd | Metric::Both)
    }
}

/// Where the observation window starts inside each test trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetPolicy {
    /// One offset per trajectory, uniform over every window that fits.
    Uniform,
    Fixed(usize),
}

/// Evaluation settings (TOML). Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_obs: usize,
    pub n_pred: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// Overrides the dataset spec's seed when set.
    pub seed: Option<u64>,
    pub offset: OffsetPolicy,
    /// Standard deviation of the constant-velocity baseline.
    pub cv_sigma: f64,
    pub metric: Metric,
    pub swd: SwConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_obs: 4,
            n_pred: 6,
            train_count: 200,
            test_count: 20,
            seed: None,
            offset: OffsetPolicy::Uniform,
            cv_sigma: 0.1,
            metric: Metric::Both,
            swd: SwConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => format!(
                    "config line {}",
                    text[..span.start].matches('\n').count() + 1
                ),
                None => "config".to_string(),
            };
            Error::spec(location, e.message().trim().to_string())
        })
    }

    /// Checks the settings against trajectories of `length` points.
    pub fn validate(&self, length: usize) -> Result<()> {
        if self.n_obs == 0 || self.n_pred == 0 {
            return Err(Error::spec("config", "n_obs and n_pred must be at least 1"));
        }
        if self.n_obs + self.n_pred > length {
            return Err(Error::Window(format!(
                "n_obs + n_pred = {} exceeds the trajectory length {length}",
                self.n_obs + self.n_pred
            )));
        }
        if let OffsetPolicy::Fixed(o) = self.offset {
            if o + self.n_obs + self.n_pred > length {
                return Err(Error::Window(format!(
                    "fixed offset {o} leaves no room for {} + {} steps in {length}",
                    self.n_obs, self.n_pred
                )));
            }
        }
        if self.test_count == 0 {
            return Err(Error::spec("config.test_count", "must be at least 1"));
        }
        if !(self.cv_sigma.is_finite() && self.cv_sigma > 0.0) {
            return Err(Error::spec("config.cv_sigma", "must be positive"));
        }
        self.swd.validate()
    }
}

/// Draws `count` trajectories: a component by weight, then a path from its
/// Gaussian, keeping the first `cap_length` points.
pub fn sample_dataset(
    prior: &TrajectoryPrior,
    count: usize,
    seed: u64,
    cap_length: usize,
) -> Result<Vec<Trajectory>> {
    let d = prior.dim();
    Ok(prior
        .sample(count, seed, cap_length)?
        .into_iter()
        .map(|(component, x)| Trajectory {
            component,
            points: x
                .as_slice()
                .chunks(d)
                .map(DVector::from_column_slice)
                .collect(),
        })
        .collect())
}

/// Best-matching window start per component: the offset `j` minimizing
/// `sum_i |x_i - mu_{j+i}|^2`, smallest `j` on ties.
pub fn match_subsequence(
    prior: &TrajectoryPrior,
    observation: &[DVector<f64>],
) -> Result<Vec<usize>> {
    match_subsequence_within(prior, observation, 0)
}

/// Like [`match_subsequence`], restricted to offsets that leave `n_pred`
/// further steps inside each component.
pub fn match_subsequence_within(
    prior: &TrajectoryPrior,
    observation: &[DVector<f64>],
    n_pred: usize,
) -> Result<Vec<usize>> {
    check_observation(prior, observation)?;
    let d = prior.dim();
    let n_obs = observation.len();
    (0..prior.n_components())
        .map(|k| {
            let n_k = prior.length(k);
            if n_obs + n_pred > n_k {
                return Err(Error::Window(format!(
                    "component {k} has {n_k} steps, fewer than {n_obs} observed + {n_pred} predicted"
                )));
            }
            let mean = prior.component(k).mean();
            let mut best = (f64::INFINITY, 0);
            for j in 0..=n_k - n_obs - n_pred {
                let cost: f64 = observation
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x - mean.rows((j + i) * d, d)).norm_squared())
                    .sum();
                if cost < best.0 {
                    best = (cost, j);
                }
            }
            Ok(best.1)
        })
        .collect()
}

fn check_observation(prior: &TrajectoryPrior, observation: &[DVector<f64>]) -> Result<()> {
    if observation.is_empty() {
        return Err(Error::domain("observation is empty"));
    }
    if let Some(i) = observation.iter().position(|x| x.len() != prior.dim()) {
        return Err(Error::domain(format!(
            "observed point {i} has dimension {}, expected {}",
            observation[i].len(),
            prior.dim()
        )));
    }
    Ok(())
}

/// Conditional mixture over the `n_pred` steps following the observation,
/// with component `k` windowed at `offsets[k]` and reweighted by how well it
/// explains the observation.
pub fn ground_truth_posterior(
    prior: &TrajectoryPrior,
    observation: &[DVector<f64>],
    offsets: &[usize],
    n_pred: usize,
) -> Result<GaussianMixture> {
    check_observation(prior, observation)?;
    if offsets.len() != prior.n_components() {
        return Err(Error::domain(format!(
            "{} offsets for {} components",
            offsets.len(),
            prior.n_components()
        )));
    }
    let d = prior.dim();
    let n_obs = observation.len();
    let window = n_obs + n_pred;
    let observed = DVector::from_iterator(
        n_obs * d,
        observation.iter().flat_map(|x| x.iter().copied()),
    );
    let partition = IndexPartition::prefix(n_obs, window)?;
    let mut log_weights = Vec::with_capacity(offsets.len());
    let mut components = Vec::with_capacity(offsets.len());
    for (k, &j) in offsets.iter().enumerate() {
        if j + window > prior.length(k) {
            return Err(Error::Window(format!(
                "window [{j}, {}) overflows component {k} of length {}",
                j + window,
                prior.length(k)
            )));
        }
        let steps: Vec<usize> = (j..j + window).collect();
        let joint = prior.component(k).marginalize(&steps, d)?;
        let (posterior, evidence) = joint.condition_with_evidence(&partition, &observed, d)?;
        log_weights.push(prior.weights()[k].ln() + evidence);
        components.push(posterior);
    }
    GaussianMixture::new(normalize_log_weights(&log_weights)?, components)
}

/// A trajectory predictor under evaluation.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    /// Sees the training set once before any prediction.
    fn fit(&mut self, _train: &[Trajectory]) -> Result<()> {
        Ok(())
    }

    fn predict(
        &self,
        observation: &[DVector<f64>],
        horizon: usize,
    ) -> Result<PredictionDistribution>;

    /// Whether `predict` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Returns the exact conditional mixture of `prior`.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    prior: TrajectoryPrior,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(
        &self,
        observation: &[DVector<f64>],
        horizon: usize,
    ) -> Result<PredictionDistribution> {
        let offsets = match_subsequence_within(&self.prior, observation, horizon)?;
        let posterior = ground_truth_posterior(&self.prior, observation, &offsets, horizon)?;
        PredictionDistribution::from_joint(&posterior, self.prior.dim())
    }
}

pub fn baseline_oracle(prior: TrajectoryPrior) -> OraclePredictor {
    OraclePredictor { prior }
}

/// Repeats the last observed displacement, with isotropic noise `sigma`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantVelocity {
    pub sigma: f64,
}

impl Predictor for ConstantVelocity {
    fn name(&self) -> &str {
        "cv"
    }

    fn predict(
        &self,
        observation: &[DVector<f64>],
        horizon: usize,
    ) -> Result<PredictionDistribution> {
        let last = observation
            .last()
            .ok_or_else(|| Error::domain("observation is empty"))?;
        let d = last.len();
        let velocity = match observation.len() {
            1 => DVector::zeros(d),
            n => last - &observation[n - 2],
        };
        let cov = nalgebra::DMatrix::identity(d, d) * (self.sigma * self.sigma);
        let steps = (1..=horizon)
            .map(|h| {
                let g = crate::gaussian::MvGaussian::new(last + &velocity * h as f64, cov.clone())?;
                Ok(PointDistribution::Mixture(GaussianMixture::single(g)))
            })
            .collect::<Result<Vec<_>>>()?;
        PredictionDistribution::new(steps)
    }
}

pub fn baseline_constant_velocity(sigma: f64) -> ConstantVelocity {
    ConstantVelocity { sigma }
}

/// Settings echoed into a report, with every seed resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub seed: u64,
    pub trajectory_length: usize,
    pub n_obs: usize,
    pub n_pred: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub offset: OffsetPolicy,
    pub cv_sigma: f64,
    pub metric: Metric,
    pub swd: SwConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    /// Component the test trajectory was drawn from.
    pub component: usize,
    pub offset: usize,
    pub matched_offsets: Vec<usize>,
    pub posterior_weights: Vec<f64>,
    pub nll: Option<f64>,
    pub swd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub nll: Option<f64>,
    pub swd: Option<f64>,
}

/// Deterministic evaluation output. Wall-clock timings live in [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub predictor: String,
    pub settings: ReportSettings,
    pub records: Vec<EvalRecord>,
    pub aggregate: Aggregate,
}

/// Metric wall-clock, summed over records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub nll_seconds: f64,
    pub swd_seconds: f64,
}

impl Timing {
    /// SWD time over NLL time, when both were measured.
    pub fn ratio(&self) -> Option<f64> {
        (self.nll_seconds > 0.0 && self.swd_seconds > 0.0)
            .then(|| self.swd_seconds / self.nll_seconds)
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub timing: Timing,
}

/// Test trajectories with their observation offsets, as `run_eval` draws them.
pub fn test_set(
    prior: &TrajectoryPrior,
    config: &EvalConfig,
    seed: u64,
) -> Result<Vec<(Trajectory, usize)>> {
    let n = prior.min_length();
    config.validate(n)?;
    let test = sample_dataset(prior, config.test_count, derive_seed(seed, TAG_TEST), n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_OFFSETS));
    let last = n - config.n_obs - config.n_pred;
    Ok(test
        .into_iter()
        .map(|t| {
            let offset = match config.offset {
                OffsetPolicy::Uniform => rng.random_range(0..=last),
                OffsetPolicy::Fixed(o) => o,
            };
            (t, offset)
        })
        .collect())
}

/// Runs the full evaluation of `predictor` on `spec`.
///
/// Every component is cut to the shortest component length `N`. The
/// predictor is fitted on `train_count` trajectories and scored on
/// `test_count` independent ones.
pub fn run_eval(
    spec: &DatasetSpec,
    config: &EvalConfig,
    predictor: &mut dyn Predictor,
) -> Result<Evaluation> {
    let full = spec.prior()?;
    let n = full.min_length();
    config.validate(n)?;
    let prior = full.truncated(n)?;
    let seed = config.seed.unwrap_or(spec.seed);

    let train = sample_dataset(&prior, config.train_count, derive_seed(seed, TAG_TRAIN), n)?;
    predictor.fit(&train)?;
    let test = test_set(&prior, config, seed)?;

    let predictor: &dyn Predictor = predictor;
    let lock = Mutex::new(());
    let d = prior.dim();
    let scored = test
        .par_iter()
        .enumerate()
        .map(|(index, (trajectory, offset))| {
            let (obs, rest) = trajectory.points[*offset..].split_at(config.n_obs);
            let future = &rest[..config.n_pred];
            let matched = match_subsequence_within(&prior, obs, config.n_pred)?;
            let truth = ground_truth_posterior(&prior, obs, &matched, config.n_pred)?;
            let prediction = if predictor.concurrent() {
                predictor.predict(obs, config.n_pred)
            } else {
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                predictor.predict(obs, config.n_pred)
            }?;
            if prediction.horizon() != config.n_pred {
                return Err(Error::Predictor(format!(
                    "{} returned {} steps, expected {}",
                    predictor.name(),
                    prediction.horizon(),
                    config.n_pred
                )));
            }
            if prediction.dim() != d {
                return Err(Error::Predictor(format!(
                    "{} returned points of dimension {}, expected {d}",
                    predictor.name(),
                    prediction.dim()
                )));
            }
            let mut timing = (Duration::ZERO, Duration::ZERO);
            let nll = if config.metric.nll() {
                let start = Instant::now();
                let v = nll_score(&prediction, future)?;
                timing.0 = start.elapsed();
                Some(v)
            } else {
                None
            };
            let swd = if config.metric.swd() {
                let start = Instant::now();
                let sw = SwConfig {
                    seed: derive_seed(config.swd.seed, index as u64),
                    ..config.swd
                };
                let v = per_point_swd(&prediction, &truth, &sw)?;
                timing.1 = start.elapsed();
                Some(v)
            } else {
                None
            };
            let record = EvalRecord {
                index,
                component: trajectory.component,
                offset: *offset,
                matched_offsets: matched,
                posterior_weights: truth.weights().to_vec(),
                nll,
                swd,
            };
            Ok((record, timing))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut timing = Timing::default();
    let mut records = Vec::with_capacity(scored.len());
    for (record, (t_nll, t_swd)) in scored {
        timing.nll_seconds += t_nll.as_secs_f64();
        timing.swd_seconds += t_swd.as_secs_f64();
        records.push(record);
    }
    let mean = |f: fn(&EvalRecord) -> Option<f64>| -> Option<f64> {
        let values: Option<Vec<f64>> = records.iter().map(f).collect();
        values.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let aggregate = Aggregate {
        nll: mean(|r| r.nll),
        swd: mean(|r| r.swd),
    };
    Ok(Evaluation {
        report: EvalReport {
            format_version: REPORT_VERSION,
            predictor: predictor.name().to_string(),
            settings: ReportSettings {
                seed,
                trajectory_length: n,
                n_obs: config.n_obs,
                n_pred: config.n_pred,
                train_count: config.train_count,
                test_count: config.test_count,
                offset: config.offset,
                cv_sigma: config.cv_sigma,
                metric: config.metric,
                swd: config.swd,
            },
            records,
            aggregate,
        },
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{CompositeCurve, CurveSegment, GaussianControlPoint};
    use crate::discretize::uniform_schedule;
    use crate::prior::build_prior;

    #[test]
    fn config_with_every_key() {
        let cfg = EvalConfig::parse(
            r#"
n_obs = 3
n_pred = 5
train_count = 10
test_count = 2
seed = 7
offset = { fixed = 3 }
cv_sigma = 0.2
metric = "nll"

[swd]
projections = 50
samples_per_distribution = 100
p = 1.0
seed = 4
"#,
        )
        .unwrap();
        assert_eq!(cfg.offset, OffsetPolicy::Fixed(3));
        assert_eq!(cfg.metric, Metric::Nll);
        assert_eq!(cfg.swd.projections, 50);
        assert_eq!(
            EvalConfig::parse("offset = \"uniform\"").unwrap().offset,
            OffsetPolicy::Uniform
        );
        assert!(EvalConfig::parse("n_obz = 3").is_err());
    }

    fn line_prior(var: f64, n: usize) -> TrajectoryPrior {
        let seg = CurveSegment::new(vec![
            GaussianControlPoint::isotropic(&[0.0, 0.0], var).unwrap(),
            GaussianControlPoint::isotropic(&[9.0, 0.0], var).unwrap(),
        ])
        .unwrap();
        build_prior(
            vec![CompositeCurve::single(seg)],
            vec![1.0],
            vec![uniform_schedule(n).unwrap()],
        )
        .unwrap()
    }

    fn means(prior: &TrajectoryPrior, k: usize, from: usize, count: usize) -> Vec<DVector<f64>> {
        (from..from + count)
            .map(|s| prior.step_mean(k, s))
            .collect()
    }

    #[test]
    fn zero_covariance_sample_is_the_mean() {
        let prior = line_prior(0.0, 10);
        let t = sample_dataset(&prior, 1, 3, 10).unwrap();
        assert_eq!(t[0].points, means(&prior, 0, 0, 10));
        assert!(sample_dataset(&prior, 1, 3, 11).is_err());
    }

    #[test]
    fn matching_finds_the_mean_window() {
        let prior = line_prior(0.1, 10);
        let obs = means(&prior, 0, 3, 4);
        assert_eq!(match_subsequence(&prior, &obs).unwrap(), vec![3]);
        assert_eq!(match_subsequence_within(&prior, &obs, 3).unwrap(), vec![3]);
        assert_eq!(match_subsequence_within(&prior, &obs, 4).unwrap(), vec![2]);
        assert!(match_subsequence_within(&prior, &obs, 7).is_err());
    }

    #[test]
    fn constant_observation_matches_offset_zero() {
        let prior = line_prior(0.1, 10);
        let obs = vec![DVector::from_vec(vec![0.0, 0.0]); 3];
        assert_eq!(match_subsequence(&prior, &obs).unwrap(), vec![0]);
    }

    #[test]
    fn single_component_posterior_is_plain_conditioning() {
        let prior = line_prior(0.2, 10);
        let obs = means(&prior, 0, 2, 3);
        let post = ground_truth_posterior(&prior, &obs, &[2], 4).unwrap();
        let joint = prior
            .component(0)
            .marginalize(&[2, 3, 4, 5, 6, 7, 8], 2)
            .unwrap();
        let values = DVector::from_iterator(6, obs.iter().flat_map(|x| x.iter().copied()));
        let direct = joint
            .condition(&IndexPartition::prefix(3, 7).unwrap(), &values, 2)
            .unwrap();
        assert_eq!(post.weights(), &[1.0]);
        assert!((post.components()[0].mean() - direct.mean()).amax() < 1e-12);
        assert!(ground_truth_posterior(&prior, &obs, &[4], 4).is_err());
    }

    #[test]
    fn cv_extrapolates_a_line() {
        let obs: Vec<DVector<f64>> = (0..4)
            .map(|i| DVector::from_vec(vec![i as f64, 2.0]))
            .collect();
        let pred = baseline_constant_velocity(0.1).predict(&obs, 3).unwrap();
        match &pred.steps()[2] {
            PointDistribution::Mixture(m) => {
                assert_eq!(m.components()[0].mean().as_slice(), &[6.0, 2.0]);
                assert!((m.components()[0].covariance()[(0, 0)] - 0.01).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = EvalConfig::parse("").unwrap();
        assert_eq!(c, EvalConfig::default());
        let c = EvalConfig::parse(
            "offset = { fixed = 3 }\nmetric = \"swd\"\n[swd]\nprojections = 10\n",
        )
        .unwrap();
        assert_eq!(c.offset, OffsetPolicy::Fixed(3));
        assert_eq!(c.swd.projections, 10);
        assert!(c.validate(19).is_ok());
        assert!(c.validate(12).is_err());
        assert!(EvalConfig::parse("n_obz = 3")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    struct WrongHorizon;

    impl Predictor for WrongHorizon {
        fn name(&self) -> &str {
            "wrong"
        }

        fn predict(
            &self,
            observation: &[DVector<f64>],
            horizon: usize,
        ) -> Result<PredictionDistribution> {
            baseline_constant_velocity(0.1).predict(observation, horizon + 1)
        }

        fn concurrent(&self) -> bool {
            false
        }
    }

    #[test]
    fn contract_violation_is_a_predictor_error() {
        let config = EvalConfig {
            test_count: 2,
            train_count: 0,
            ..EvalConfig::default()
        };
        let err = run_eval(&DatasetSpec::reference(), &config, &mut WrongHorizon).unwrap_err();
        assert!(matches!(err, Error::Predictor(_)), "{err}");
    }
}
