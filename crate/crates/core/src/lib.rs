//! Ground-truth trajectory distributions built from mixtures of composite
//! probabilistic Bézier curves, with exact conditionals and scoring tools
//! for probabilistic trajectory predictors.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod cli;
pub mod curve;
pub mod discretize;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod metrics;
pub mod prior;
pub mod seed;

pub use curve::{
    bernstein, eval_point, local_param, s_factor, segment_index, validate_continuity,
    CompositeCurve, Continuity, CurveSegment, GaussianControlPoint, GaussianCurvePoint,
    JointViolation, ViolationKind,
};
pub use discretize::{
    arc_length, constant_speed_schedule, uniform_schedule, ArcLength, ParamSchedule, Profile,
};
pub use error::{Error, Result};
pub use gaussian::{
    mixture_condition, normalize_log_weights, sample_components, sample_labeled_with,
    GaussianMixture, IndexPartition, MvGaussian,
};
pub use harness::{
    baseline_constant_velocity, baseline_oracle, ground_truth_posterior, match_subsequence,
    match_subsequence_within, parse_spec, run_eval, sample_dataset, DatasetSpec, EvalConfig,
    EvalReport, Evaluation, Metric, OffsetPolicy, Predictor, Trajectory,
};
pub use metrics::{
    nll_score, per_point_swd, sliced_wasserstein, wasserstein_1d, PointDistribution,
    PredictionDistribution, SwConfig, WeightedSamples,
};
pub use prior::{
    build_prior, curve_kernel, gram_factor, gram_matrix, kernel_adjacent_segments,
    kernel_disconnected, kernel_same_segment, mean_vector, TrajectoryPrior,
};
