//! Python module `ncurve`: scenes, priors, sampling, exact posteriors,
//! evaluation and the sliced Wasserstein distance.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ncurve_core::harness::export;
use ncurve_core::{
    baseline_constant_velocity, baseline_oracle, ground_truth_posterior, match_subsequence_within,
    parse_spec, run_eval, sample_dataset, sliced_wasserstein, DatasetSpec, EvalConfig,
    GaussianMixture, Metric, MvGaussian, PointDistribution, PredictionDistribution, Predictor,
    SwConfig, TrajectoryPrior, WeightedSamples,
};

create_exception!(ncurve, NcurveError, PyValueError);

fn err(e: ncurve_core::Error) -> PyErr {
    NcurveError::new_err(e.to_string())
}

fn points(rows: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    rows.into_iter().map(DVector::from_vec).collect()
}

fn rows(v: &DVector<f64>, d: usize) -> Vec<Vec<f64>> {
    v.as_slice().chunks(d).map(<[f64]>::to_vec).collect()
}

fn matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(NcurveError::new_err("covariance must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// A dataset spec together with its trajectory prior.
#[pyclass(module = "ncurve", frozen)]
struct Scene {
    spec: DatasetSpec,
    prior: TrajectoryPrior,
}

impl Scene {
    fn new(spec: DatasetSpec) -> PyResult<Self> {
        let prior = spec.prior().map_err(err)?;
        Ok(Self { spec, prior })
    }

    fn truncated(&self) -> PyResult<TrajectoryPrior> {
        self.prior.truncated(self.prior.min_length()).map_err(err)
    }
}

#[pymethods]
impl Scene {
    /// The bundled three-path reference scene.
    #[staticmethod]
    fn reference() -> PyResult<Self> {
        Self::new(DatasetSpec::reference())
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Self::new(DatasetSpec::load(&path).map_err(err)?)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::new(parse_spec(text).map_err(err)?)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.spec.seed
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.spec
            .components
            .iter()
            .map(|c| c.name.clone())
            .collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.prior.weights().to_vec()
    }

    #[getter]
    fn lengths(&self) -> Vec<usize> {
        (0..self.prior.n_components())
            .map(|k| self.prior.length(k))
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Curve parameters of component `k`'s time steps.
    fn params(&self, k: usize) -> PyResult<Vec<f64>> {
        self.check(k)?;
        Ok(self.prior.schedule(k).params().to_vec())
    }

    /// Mean path of component `k`, one point per step.
    fn mean(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(rows(self.prior.component(k).mean(), self.prior.dim()))
    }

    /// Full stacked Gram matrix of component `k`.
    fn covariance(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(matrix(self.prior.component(k).covariance()))
    }

    /// Prior export as the CLI writes it (JSON text).
    fn prior_json(&self) -> PyResult<String> {
        export::prior_json(&self.prior, &self.names()).map_err(err)
    }

    /// `count` trajectories as `(component, points)` pairs.
    #[pyo3(signature = (count, seed=None, length=None))]
    fn sample(
        &self,
        count: usize,
        seed: Option<u64>,
        length: Option<usize>,
    ) -> PyResult<Vec<(usize, Vec<Vec<f64>>)>> {
        let length = length.unwrap_or(self.prior.min_length());
        let data = sample_dataset(&self.prior, count, seed.unwrap_or(self.spec.seed), length)
            .map_err(err)?;
        Ok(data
            .into_iter()
            .map(|t| {
                (
                    t.component,
                    t.points
                        .iter()
                        .map(|p| p.iter().copied().collect())
                        .collect(),
                )
            })
            .collect())
    }

    /// Exact conditional over the `n_pred` steps after `observation`.
    #[pyo3(signature = (observation, n_pred=6))]
    fn posterior(&self, observation: Vec<Vec<f64>>, n_pred: usize) -> PyResult<Posterior> {
        let prior = self.truncated()?;
        let obs = points(observation);
        let offsets = match_subsequence_within(&prior, &obs, n_pred).map_err(err)?;
        let mixture = ground_truth_posterior(&prior, &obs, &offsets, n_pred).map_err(err)?;
        Ok(Posterior {
            offsets,
            mixture,
            dim: prior.dim(),
        })
    }

    /// Runs an evaluation and returns the report as a dict.
    ///
    /// `predictor` is "oracle" (default), "cv", or a callable
    /// `f(observation, horizon)` returning one entry per future step: either
    /// a list of sample points or a dict with "mean" and "cov".
    #[pyo3(signature = (
        predictor=None, config=None, seed=None, metric=None, projections=None, samples=None, p_order=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        predictor: Option<Py<PyAny>>,
        config: Option<&str>,
        seed: Option<u64>,
        metric: Option<&str>,
        projections: Option<usize>,
        samples: Option<usize>,
        p_order: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut cfg = match config {
            Some(text) => EvalConfig::parse(text).map_err(err)?,
            None => EvalConfig::default(),
        };
        if seed.is_some() {
            cfg.seed = seed;
        }
        if let Some(m) = metric {
            cfg.metric = match m {
                "nll" => Metric::Nll,
                "swd" => Metric::Swd,
                "both" => Metric::Both,
                other => return Err(NcurveError::new_err(format!("unknown metric {other:?}"))),
            };
        }
        if let Some(n) = projections {
            cfg.swd.projections = n;
        }
        if let Some(n) = samples {
            cfg.swd.samples_per_distribution = n;
        }
        if let Some(p) = p_order {
            cfg.swd.p = p;
        }
        let predictor = match predictor {
            Some(p) => p,
            None => "oracle".into_pyobject(py)?.into_any().unbind(),
        };
        let mut boxed: Box<dyn Predictor> = match predictor.extract::<String>(py) {
            Ok(name) if name == "oracle" => Box::new(baseline_oracle(self.truncated()?)),
            Ok(name) if name == "cv" => Box::new(baseline_constant_velocity(cfg.cv_sigma)),
            Ok(name) => return Err(NcurveError::new_err(format!("unknown predictor {name:?}"))),
            Err(_) => Box::new(PyPredictor {
                callable: predictor,
            }),
        };
        let spec = &self.spec;
        let evaluation = py
            .detach(|| run_eval(spec, &cfg, boxed.as_mut()))
            .map_err(err)?;
        let text = export::to_json(&evaluation.report).map_err(err)?;
        py.import("json")?.call_method1("loads", (text,))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(components={:?}, lengths={:?})",
            self.names(),
            self.lengths()
        )
    }
}

impl Scene {
    fn check(&self, k: usize) -> PyResult<()> {
        if k >= self.prior.n_components() {
            return Err(NcurveError::new_err(format!(
                "component {k} out of range ({} components)",
                self.prior.n_components()
            )));
        }
        Ok(())
    }
}

/// Gaussian mixture over the predicted steps.
#[pyclass(module = "ncurve", frozen)]
struct Posterior {
    offsets: Vec<usize>,
    mixture: GaussianMixture,
    dim: usize,
}

#[pymethods]
impl Posterior {
    /// Matched window start per component.
    #[getter]
    fn offsets(&self) -> Vec<usize> {
        self.offsets.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.mixture.weights().to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.mixture.dim() / self.dim
    }

    fn mean(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(self.component(k)?.mean(), self.dim))
    }

    fn covariance(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix(self.component(k)?.covariance()))
    }

    /// Mixture log density of a full future path.
    fn log_pdf(&self, path: Vec<Vec<f64>>) -> PyResult<f64> {
        let x = DVector::from_iterator(path.iter().map(Vec::len).sum(), path.into_iter().flatten());
        self.mixture.log_pdf(&x).map_err(err)
    }

    #[pyo3(signature = (count, seed=0))]
    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(self
            .mixture
            .sample(count, seed)
            .map_err(err)?
            .iter()
            .map(|x| rows(x, self.dim))
            .collect())
    }
}

impl Posterior {
    fn component(&self, k: usize) -> PyResult<&MvGaussian> {
        self.mixture
            .components()
            .get(k)
            .ok_or_else(|| NcurveError::new_err(format!("component {k} out of range")))
    }
}

/// Predictor backed by a Python callable; calls are serialized.
struct PyPredictor {
    callable: Py<PyAny>,
}

fn step_distribution(item: &Bound<'_, PyAny>) -> PyResult<PointDistribution> {
    if let Ok(d) = item.cast::<PyDict>() {
        let mean: Vec<f64> = d
            .get_item("mean")?
            .ok_or_else(|| NcurveError::new_err("step dict lacks \"mean\""))?
            .extract()?;
        let cov: Vec<Vec<f64>> = d
            .get_item("cov")?
            .ok_or_else(|| NcurveError::new_err("step dict lacks \"cov\""))?
            .extract()?;
        let g = MvGaussian::new(DVector::from_vec(mean), from_rows(&cov)?).map_err(err)?;
        return Ok(PointDistribution::Mixture(GaussianMixture::single(g)));
    }
    let samples: Vec<Vec<f64>> = item.extract()?;
    Ok(PointDistribution::Samples(
        WeightedSamples::uniform(points(samples)).map_err(err)?,
    ))
}

impl Predictor for PyPredictor {
    fn name(&self) -> &str {
        "python"
    }

    fn predict(
        &self,
        observation: &[DVector<f64>],
        horizon: usize,
    ) -> ncurve_core::Result<PredictionDistribution> {
        Python::attach(|py| {
            let obs: Vec<Vec<f64>> = observation
                .iter()
                .map(|p| p.iter().copied().collect())
                .collect();
            let out = self.callable.call1(py, (obs, horizon))?;
            let steps = out
                .bind(py)
                .cast::<PyList>()?
                .iter()
                .map(|item| step_distribution(&item))
                .collect::<PyResult<Vec<_>>>()?;
            Ok::<_, PyErr>(steps)
        })
        .map_err(|e| ncurve_core::Error::Predictor(e.to_string()))
        .and_then(PredictionDistribution::new)
    }

    fn concurrent(&self) -> bool {
        false
    }
}

/// Sliced Wasserstein distance between two Gaussians.
#[pyfunction]
#[pyo3(signature = (mean_p, cov_p, mean_q, cov_q, projections=200, samples=2048, p=2.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn sliced_wasserstein_gaussian(
    mean_p: Vec<f64>,
    cov_p: Vec<Vec<f64>>,
    mean_q: Vec<f64>,
    cov_q: Vec<Vec<f64>>,
    projections: usize,
    samples: usize,
    p: f64,
    seed: u64,
) -> PyResult<f64> {
    let dist = |m: Vec<f64>, c: &[Vec<f64>]| -> PyResult<PointDistribution> {
        Ok(PointDistribution::Mixture(GaussianMixture::single(
            MvGaussian::new(DVector::from_vec(m), from_rows(c)?).map_err(err)?,
        )))
    };
    let cfg = SwConfig {
        projections,
        samples_per_distribution: samples,
        p,
        seed,
    };
    sliced_wasserstein(&dist(mean_p, &cov_p)?, &dist(mean_q, &cov_q)?, &cfg).map_err(err)
}

/// Sliced Wasserstein distance between two point sets.
#[pyfunction]
#[pyo3(signature = (xs, ys, projections=200, p=2.0, seed=0))]
fn sliced_wasserstein_samples(
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    projections: usize,
    p: f64,
    seed: u64,
) -> PyResult<f64> {
    let n = xs.len().max(ys.len());
    let a = PointDistribution::Samples(WeightedSamples::uniform(points(xs)).map_err(err)?);
    let b = PointDistribution::Samples(WeightedSamples::uniform(points(ys)).map_err(err)?);
    let cfg = SwConfig {
        projections,
        samples_per_distribution: n.max(2),
        p,
        seed,
    };
    sliced_wasserstein(&a, &b, &cfg).map_err(err)
}

#[pymodule]
fn ncurve(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NcurveError", m.py().get_type::<NcurveError>())?;
    m.add("REFERENCE_SPEC", ncurve_core::harness::REFERENCE_SPEC)?;
    m.add_class::<Scene>()?;
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(sliced_wasserstein_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_wasserstein_samples, m)?)?;
    Ok(())
}
