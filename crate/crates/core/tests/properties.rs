//! Property-based checks over randomly generated curves and distributions.

mod common;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ncurve_core::{
    bernstein, constant_speed_schedule, gram_factor, gram_matrix, match_subsequence_within,
    sliced_wasserstein, Continuity, DatasetSpec, Error, GaussianMixture, IndexPartition,
    MvGaussian, PointDistribution, SwConfig,
};
use proptest::prelude::*;

use common::TestCurve;

fn point() -> impl Strategy<Value = ([f64; 2], f64)> {
    ([-5.0..5.0f64, -5.0..5.0f64], 0.001..0.2f64).prop_map(|(m, v)| (m, v))
}

/// Random planar curves of 1 to 3 segments with degrees 1 to 4. Tangent
/// joints get their dependent point placed on the line through the last two.
fn curve() -> impl Strategy<Value = TestCurve> {
    (prop::collection::vec(
        (
            prop::collection::vec(point(), 2..=5),
            0usize..3,
            0.5..2.0f64,
        ),
        1..=3,
    ),)
        .prop_map(|(segs,)| {
            let mut segments: Vec<Vec<([f64; 2], f64)>> = Vec::new();
            let mut joints = Vec::new();
            for (mut pts, class, s) in segs {
                if let Some(prev) = segments.last() {
                    let class = [Continuity::C0, Continuity::C1, Continuity::C2][class];
                    let (pj, vj) = prev[prev.len() - 1];
                    let pb = prev[prev.len() - 2].0;
                    pts[0] = (pj, vj);
                    if class != Continuity::C0 {
                        // C2 needs equal legs; C1 accepts any positive ratio.
                        let s = if class == Continuity::C2 { 1.0 } else { s };
                        pts[1].0 = [pj[0] + s * (pj[0] - pb[0]), pj[1] + s * (pj[1] - pb[1])];
                    }
                    joints.push(class);
                }
                segments.push(pts);
            }
            TestCurve { segments, joints }
        })
        .prop_filter("joint legs must not vanish", |c| {
            c.segments.windows(2).all(|w| {
                let a = w[0][w[0].len() - 1].0;
                let b = w[0][w[0].len() - 2].0;
                (a[0] - b[0]).hypot(a[1] - b[1]) > 0.1
            })
        })
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        let a = DMatrix::from_vec(n, n, v);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    })
}

fn mixture(d: usize) -> impl Strategy<Value = PointDistribution> {
    (prop::collection::vec(-3.0..3.0f64, d), spd(d)).prop_map(move |(m, c)| {
        PointDistribution::Mixture(GaussianMixture::single(
            MvGaussian::new(DVector::from_vec(m), c).unwrap(),
        ))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bernstein_partition_of_unity(degree in 0usize..12, t in 0.0..=1.0f64) {
        let sum: f64 = (0..=degree).map(|l| bernstein(l, degree, t).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd(tc in curve(), n in 2usize..16) {
        let c = tc.build();
        let Ok(sched) = constant_speed_schedule(&c, n) else {
            // Degenerate geometry (e.g. zero length) is allowed to fail.
            return Ok(());
        };
        let k = gram_matrix(&c, &sched).unwrap();
        prop_assert!((&k - k.transpose()).amax() == 0.0);
        let e = SymmetricEigen::new(k.clone());
        prop_assert!(e.eigenvalues.min() >= -1e-10 * k.amax().max(1.0), "{}", e.eigenvalues.min());
    }

    #[test]
    fn gram_matches_control_point_factor(tc in curve(), n in 2usize..16) {
        let c = tc.build();
        let sched = ncurve_core::uniform_schedule(n).unwrap();
        let g = gram_matrix(&c, &sched).unwrap();
        let f = gram_factor(&c, &sched).unwrap();
        prop_assert!((&f * f.transpose() - &g).amax() < 1e-12 * g.amax().max(1.0));
    }

    #[test]
    fn sliced_wasserstein_symmetric_nonnegative(p in mixture(2), q in mixture(2), seed in any::<u64>()) {
        let cfg = SwConfig { projections: 32, samples_per_distribution: 256, seed, ..SwConfig::default() };
        let pq = sliced_wasserstein(&p, &q, &cfg).unwrap();
        let qp = sliced_wasserstein(&q, &p, &cfg).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(pq, qp);
        prop_assert_eq!(sliced_wasserstein(&p, &p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn matched_windows_stay_inside(n_obs in 1usize..25, n_pred in 0usize..25, shift in -1.0..1.0f64) {
        let prior = DatasetSpec::reference().prior().unwrap();
        let obs: Vec<DVector<f64>> = (0..n_obs)
            .map(|i| DVector::from_vec(vec![0.7 * i as f64 + shift, shift]))
            .collect();
        match match_subsequence_within(&prior, &obs, n_pred) {
            Ok(offsets) => {
                for (k, j) in offsets.into_iter().enumerate() {
                    prop_assert!(j + n_obs + n_pred <= prior.length(k));
                }
            }
            Err(Error::Window(_)) => {
                prop_assert!((0..prior.n_components()).any(|k| n_obs + n_pred > prior.length(k)));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn conditioning_matches_schur_complement(cov in spd(6), mean in prop::collection::vec(-2.0..2.0f64, 6), x in prop::collection::vec(-2.0..2.0f64, 2)) {
        // Three 2-d steps, the middle one observed.
        let g = MvGaussian::new(DVector::from_vec(mean.clone()), cov.clone()).unwrap();
        let part = IndexPartition::from_observed(vec![1], 3).unwrap();
        let post = g.condition(&part, &DVector::from_vec(x.clone()), 2).unwrap();

        let a = [2, 3];
        let b = [0, 1, 4, 5];
        let saa = DMatrix::from_fn(2, 2, |i, j| cov[(a[i], a[j])]);
        let sba = DMatrix::from_fn(4, 2, |i, j| cov[(b[i], a[j])]);
        let sbb = DMatrix::from_fn(4, 4, |i, j| cov[(b[i], b[j])]);
        let inv = saa.try_inverse().unwrap();
        let dx = DVector::from_fn(2, |i, _| x[i] - mean[a[i]]);
        let m = DVector::from_fn(4, |i, _| mean[b[i]]) + &sba * &inv * dx;
        let c = &sbb - &sba * &inv * sba.transpose();
        prop_assert!((post.mean() - m).amax() < 1e-8);
        prop_assert!((post.covariance() - c).amax() < 1e-8);
    }

    #[test]
    fn sequential_conditioning_is_consistent(cov in spd(6), x in prop::collection::vec(-2.0..2.0f64, 4)) {
        let g = MvGaussian::new(DVector::zeros(6), cov).unwrap();
        let both = g
            .condition(&IndexPartition::from_observed(vec![0, 1], 3).unwrap(), &DVector::from_vec(x.clone()), 2)
            .unwrap();
        let first = g
            .condition(&IndexPartition::from_observed(vec![0], 3).unwrap(), &DVector::from_vec(x[..2].to_vec()), 2)
            .unwrap();
        let second = first
            .condition(&IndexPartition::from_observed(vec![0], 2).unwrap(), &DVector::from_vec(x[2..].to_vec()), 2)
            .unwrap();
        prop_assert!((both.mean() - second.mean()).amax() < 1e-8);
        prop_assert!((both.covariance() - second.covariance()).amax() < 1e-8);
    }
}
