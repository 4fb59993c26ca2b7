//! Multivariate Gaussians and Gaussian mixtures over stacked d-dimensional
//! points: sampling, densities, marginals and conditionals.
//!
//! Index sets passed to [`MvGaussian::marginalize`] and [`IndexPartition`]
//! address time steps; `block_size` is the point dimension `d`, so time step
//! `i` covers coordinates `i * d .. (i + 1) * d`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::curve::symmetrize;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter levels tried, in order, when a covariance fails to factor.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

const WEIGHT_TOL: f64 = 1e-9;

/// Cholesky factor of `m + jitter * I`, escalating the jitter along
/// [`JITTER_LADDER`] until the factorization succeeds.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let n = m.nrows();
    for &jitter in &JITTER_LADDER {
        let candidate = if jitter == 0.0 {
            m.clone()
        } else {
            m + DMatrix::identity(n, n) * jitter
        };
        if let Some(factor) = candidate.cholesky() {
            return Ok(JitteredCholesky { factor, jitter });
        }
    }
    Err(Error::Numerical(format!(
        "{n}x{n} covariance is not positive definite even with jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Lower-triangular `L` with `L Lᵀ = m` for a positive semi-definite `m`.
///
/// Pivots that vanish up to round-off zero their column, so singular
/// covariances (including the zero matrix) factor without jitter. A clearly
/// negative pivot falls back to [`cholesky_with_jitter`].
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let zero_tol = 1e-13 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= zero_tol {
            if d < -1e-8 * scale {
                return Ok(cholesky_with_jitter(m)?.factor.unpack());
            }
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Ok(l)
}

/// Observed (`A`) and hidden (`B`) time steps of a stacked Gaussian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    observed: Vec<usize>,
    hidden: Vec<usize>,
}

impl IndexPartition {
    /// Validates that `observed` and `hidden` split `0..n_steps` exactly.
    pub fn new(observed: Vec<usize>, hidden: Vec<usize>, n_steps: usize) -> Result<Self> {
        let mut seen = vec![false; n_steps];
        for &i in observed.iter().chain(&hidden) {
            if i >= n_steps {
                return Err(Error::domain(format!(
                    "time step {i} out of range for {n_steps} steps"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!("time step {i} listed twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::domain(format!(
                "time step {missing} is neither observed nor hidden"
            )));
        }
        Ok(Self { observed, hidden })
    }

    /// Observes `observed`; every other step is hidden, in ascending order.
    pub fn from_observed(observed: Vec<usize>, n_steps: usize) -> Result<Self> {
        let hidden = (0..n_steps).filter(|i| !observed.contains(i)).collect();
        Self::new(observed, hidden, n_steps)
    }

    /// The first `n_obs` of `n_steps` steps are observed.
    pub fn prefix(n_obs: usize, n_steps: usize) -> Result<Self> {
        if n_obs > n_steps {
            return Err(Error::domain(format!(
                "cannot observe {n_obs} of {n_steps} steps"
            )));
        }
        Self::new((0..n_obs).collect(), (n_obs..n_steps).collect(), n_steps)
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }
}

fn expand(steps: &[usize], block_size: usize) -> Vec<usize> {
    steps
        .iter()
        .flat_map(|&i| i * block_size..(i + 1) * block_size)
        .collect()
}

fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn select_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// A multivariate normal distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MvGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl MvGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::domain(format!(
                "covariance is {}x{} but mean has length {n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.amax().max(1.0);
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::domain(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `count` draws from a generator seeded with `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
    ) -> Result<Vec<DVector<f64>>> {
        let l = psd_factor(&self.covariance)?;
        let n = self.dim();
        Ok((0..count)
            .map(|_| {
                let z =
                    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                &self.mean + &l * z
            })
            .collect())
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!(
                "point has dimension {} but the Gaussian has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let chol = cholesky_with_jitter(&self.covariance)?;
        Ok(log_density(&chol.factor, &self.mean, x))
    }

    /// Marginal over the listed time steps, in the order given.
    pub fn marginalize(&self, steps: &[usize], block_size: usize) -> Result<MvGaussian> {
        check_block_size(self.dim(), block_size)?;
        let n_steps = self.dim() / block_size;
        let mut seen = vec![false; n_steps];
        for &i in steps {
            if i >= n_steps {
                return Err(Error::domain(format!(
                    "time step {i} out of range for {n_steps} steps"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!("time step {i} listed twice")));
            }
        }
        let idx = expand(steps, block_size);
        Ok(MvGaussian {
            mean: select_vec(&self.mean, &idx),
            covariance: select_mat(&self.covariance, &idx, &idx),
        })
    }

    /// Conditional of the hidden steps given concrete values for the
    /// observed steps.
    pub fn condition(
        &self,
        partition: &IndexPartition,
        observed_values: &DVector<f64>,
        block_size: usize,
    ) -> Result<MvGaussian> {
        Ok(self
            .condition_with_evidence(partition, observed_values, block_size)?
            .0)
    }

    /// Like [`condition`](Self::condition), also returning the log density of
    /// the observed values under the observed-step marginal (0 when nothing
    /// is observed).
    pub fn condition_with_evidence(
        &self,
        partition: &IndexPartition,
        observed_values: &DVector<f64>,
        block_size: usize,
    ) -> Result<(MvGaussian, f64)> {
        check_block_size(self.dim(), block_size)?;
        let n_steps = self.dim() / block_size;
        let steps = partition.observed.len() + partition.hidden.len();
        if steps != n_steps {
            return Err(Error::domain(format!(
                "partition covers {steps} steps but the Gaussian has {n_steps}"
            )));
        }
        let a = expand(&partition.observed, block_size);
        let b = expand(&partition.hidden, block_size);
        if observed_values.len() != a.len() {
            return Err(Error::domain(format!(
                "expected {} observed values, got {}",
                a.len(),
                observed_values.len()
            )));
        }
        let mu_b = select_vec(&self.mean, &b);
        let s_bb = select_mat(&self.covariance, &b, &b);
        if a.is_empty() {
            return Ok((
                MvGaussian {
                    mean: mu_b,
                    covariance: s_bb,
                },
                0.0,
            ));
        }
        let mu_a = select_vec(&self.mean, &a);
        let s_aa = select_mat(&self.covariance, &a, &a);
        let s_ab = select_mat(&self.covariance, &a, &b);
        let chol = cholesky_with_jitter(&s_aa)?;
        let evidence = log_density(&chol.factor, &mu_a, observed_values);
        // gain_t = Σ_AA⁻¹ Σ_AB
        let gain_t = chol.factor.solve(&s_ab);
        let mean = mu_b + gain_t.transpose() * (observed_values - &mu_a);
        let covariance = symmetrize(s_bb - s_ab.transpose() * &gain_t);
        Ok((MvGaussian { mean, covariance }, evidence))
    }
}

fn check_block_size(dim: usize, block_size: usize) -> Result<()> {
    if block_size == 0 || !dim.is_multiple_of(block_size) {
        return Err(Error::domain(format!(
            "dimension {dim} is not a multiple of block size {block_size}"
        )));
    }
    Ok(())
}

fn log_density(factor: &Cholesky<f64, Dyn>, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let l = factor.l_dirty();
    let diff = x - mean;
    let z = l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (mean.len() as f64 * LN_2PI + log_det + z.norm_squared())
}

/// Normalizes log-weights with log-sum-exp.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::Numerical("mixture log-weight is NaN".into()));
    }
    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateObservation);
    }
    let shifted: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|w| w / total).collect())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draws `(component, point)` pairs from weighted components, which may
/// differ in dimension. Component labels come from the main stream of `seed`;
/// component `k` draws its points from stream `k + 1`, so the output does not
/// depend on evaluation order.
pub fn sample_components(
    weights: &[f64],
    components: &[MvGaussian],
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, DVector<f64>)>> {
    sample_labeled_with(weights, count, seed, |k, rng, n| {
        components[k].sample_with(rng, n)
    })
}

/// Labeled mixture sampling with a caller-supplied per-component sampler
/// `draw(k, rng, n)`, using the stream layout of [`sample_components`].
pub fn sample_labeled_with<F>(
    weights: &[f64],
    count: usize,
    seed: u64,
    mut draw: F,
) -> Result<Vec<(usize, DVector<f64>)>>
where
    F: FnMut(usize, &mut ChaCha8Rng, usize) -> Result<Vec<DVector<f64>>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = if weights.len() == 1 {
        vec![0; count]
    } else {
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::Numerical(format!("invalid mixture weights: {e}")))?;
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    };
    let mut per_component = Vec::with_capacity(weights.len());
    for k in 0..weights.len() {
        let n_k = labels.iter().filter(|&&l| l == k).count();
        let mut stream = ChaCha8Rng::seed_from_u64(seed);
        stream.set_stream(k as u64 + 1);
        per_component.push(draw(k, &mut stream, n_k)?.into_iter());
    }
    Ok(labels
        .into_iter()
        .map(|k| {
            let x = per_component[k].next().expect("one draw per label");
            (k, x)
        })
        .collect())
}

/// Finite mixture of equal-dimension Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<MvGaussian>,
}

impl GaussianMixture {
    /// Weights must be non-negative and sum to 1 within 1e-9; they are
    /// renormalized exactly.
    pub fn new(weights: Vec<f64>, components: Vec<MvGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::domain(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::domain("mixture components differ in dimension"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain(
                "mixture weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn single(component: MvGaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MvGaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Draws `(component, point)` pairs; see [`sample_components`].
    pub fn sample_labeled(&self, count: usize, seed: u64) -> Result<Vec<(usize, DVector<f64>)>> {
        sample_components(&self.weights, &self.components, count, seed)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        Ok(self
            .sample_labeled(count, seed)?
            .into_iter()
            .map(|(_, x)| x)
            .collect())
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let terms = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.log_pdf(x)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn marginalize(&self, steps: &[usize], block_size: usize) -> Result<GaussianMixture> {
        let components = self
            .components
            .iter()
            .map(|c| c.marginalize(steps, block_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights: self.weights.clone(),
            components,
        })
    }

    /// Conditions every component and reweights by each component's
    /// likelihood of the observation.
    pub fn condition(
        &self,
        partition: &IndexPartition,
        observed_values: &DVector<f64>,
        block_size: usize,
    ) -> Result<GaussianMixture> {
        let mut log_weights = Vec::with_capacity(self.len());
        let mut components = Vec::with_capacity(self.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            let (post, evidence) =
                c.condition_with_evidence(partition, observed_values, block_size)?;
            log_weights.push(w.ln() + evidence);
            components.push(post);
        }
        Ok(Self {
            weights: normalize_log_weights(&log_weights)?,
            components,
        })
    }
}

/// Mixture conditioning; see [`GaussianMixture::condition`].
pub fn mixture_condition(
    m: &GaussianMixture,
    partition: &IndexPartition,
    observed_values: &DVector<f64>,
    block_size: usize,
) -> Result<GaussianMixture> {
    m.condition(partition, observed_values, block_size)
}
