//! Independent reference implementations used as test oracles: de Casteljau
//! evaluation and Monte-Carlo sampling of constrained control points. Nothing
//! here calls the library's Bernstein or dependency code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ncurve_core::{CompositeCurve, Continuity, CurveSegment, GaussianControlPoint};
use rand::Rng;
use rand_distr::StandardNormal;

/// Plain description of a planar composite curve with isotropic points.
/// Every segment lists all of its points, including the shared first one.
#[derive(Clone, Debug)]
pub struct TestCurve {
    pub segments: Vec<Vec<([f64; 2], f64)>>,
    pub joints: Vec<Continuity>,
}

impl TestCurve {
    pub fn build(&self) -> CompositeCurve {
        let segs = self
            .segments
            .iter()
            .map(|pts| {
                CurveSegment::new(
                    pts.iter()
                        .map(|(m, v)| GaussianControlPoint::isotropic(m, *v).unwrap())
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        CompositeCurve::new(segs, self.joints.clone()).unwrap()
    }
}

/// Three segments of degrees 2, 3, 2 with the given joint class at both
/// joints. Tangent-constrained joints get collinear means; C2 joints get
/// equal legs, C1 joints a length ratio of 1.5.
pub fn three_segment_curve(class: Continuity) -> TestCurve {
    let s = match class {
        Continuity::C2 => 1.0,
        _ => 1.5,
    };
    let p0 = [0.0, 0.0];
    let p1 = [1.0, 1.0];
    let p2 = [2.0, 1.0];
    let q1 = match class {
        Continuity::C0 => [3.0, 2.0],
        _ => [p2[0] + s * (p2[0] - p1[0]), p2[1] + s * (p2[1] - p1[1])],
    };
    let q2 = [4.5, 0.5];
    let q3 = [5.5, 0.0];
    let r1 = match class {
        Continuity::C0 => [6.0, -1.5],
        _ => [q3[0] + s * (q3[0] - q2[0]), q3[1] + s * (q3[1] - q2[1])],
    };
    let r2 = [8.0, -1.0];
    TestCurve {
        segments: vec![
            vec![(p0, 0.02), (p1, 0.05), (p2, 0.04)],
            vec![(p2, 0.04), (q1, 0.06), (q2, 0.05), (q3, 0.03)],
            vec![(q3, 0.03), (r1, 0.05), (r2, 0.08)],
        ],
        joints: vec![class, class],
    }
}

/// Same layout read back from a library curve (declared points and joints).
pub fn from_curve(curve: &CompositeCurve) -> TestCurve {
    TestCurve {
        segments: (0..curve.n_segments())
            .map(|j| {
                curve
                    .segment_points(j)
                    .iter()
                    .map(|p| {
                        let c = p.covariance();
                        assert!(c[(0, 1)] == 0.0 && c[(0, 0)] == c[(1, 1)], "isotropic only");
                        ([p.mean()[0], p.mean()[1]], c[(0, 0)])
                    })
                    .collect()
            })
            .collect(),
        joints: curve.joints().to_vec(),
    }
}

fn de_casteljau(points: &[[f64; 2]], u: f64) -> [f64; 2] {
    let mut work = points.to_vec();
    for r in 1..work.len() {
        for i in 0..work.len() - r {
            work[i] = [
                (1.0 - u) * work[i][0] + u * work[i + 1][0],
                (1.0 - u) * work[i][1] + u * work[i + 1][1],
            ];
        }
    }
    work[0]
}

/// Segment and local parameter of global `t` (the joint itself belongs to
/// the earlier segment).
pub fn locate(t: f64, n_seg: usize) -> (usize, f64) {
    let x = t * n_seg as f64;
    let mut j = x.ceil() as usize;
    j = j.clamp(1, n_seg) - 1;
    (j, (x - j as f64).clamp(0.0, 1.0))
}

/// One realization of the control points: free points drawn independently,
/// shared points reused, the point after a C1/C2 joint placed on the line
/// through the last two points with the length ratio of the declared means.
pub fn draw_points<R: Rng>(curve: &TestCurve, rng: &mut R) -> Vec<Vec<[f64; 2]>> {
    let mut out: Vec<Vec<[f64; 2]>> = Vec::new();
    for (j, seg) in curve.segments.iter().enumerate() {
        let mut pts = Vec::with_capacity(seg.len());
        for (l, (m, v)) in seg.iter().enumerate() {
            let p = if j > 0 && l == 0 {
                *out[j - 1].last().unwrap()
            } else if j > 0 && l == 1 && curve.joints[j - 1] != Continuity::C0 {
                let prev = &curve.segments[j - 1];
                let mj = prev[prev.len() - 1].0;
                let mb = prev[prev.len() - 2].0;
                let s =
                    ((m[0] - mj[0]).hypot(m[1] - mj[1])) / ((mj[0] - mb[0]).hypot(mj[1] - mb[1]));
                let pj = out[j - 1][out[j - 1].len() - 1];
                let pb = out[j - 1][out[j - 1].len() - 2];
                [pj[0] + s * (pj[0] - pb[0]), pj[1] + s * (pj[1] - pb[1])]
            } else {
                let sd = v.sqrt();
                [
                    m[0] + sd * rng.sample::<f64, _>(StandardNormal),
                    m[1] + sd * rng.sample::<f64, _>(StandardNormal),
                ]
            };
            pts.push(p);
        }
        out.push(pts);
    }
    out
}

/// Stacked curve points at `params` for one control point realization.
pub fn trajectory(points: &[Vec<[f64; 2]>], params: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(2 * params.len());
    for (i, &t) in params.iter().enumerate() {
        let (j, u) = locate(t, points.len());
        let p = de_casteljau(&points[j], u);
        x[2 * i] = p[0];
        x[2 * i + 1] = p[1];
    }
    x
}

/// Sample mean and covariance of `n` Monte-Carlo trajectories.
pub fn mc_moments<R: Rng>(
    curve: &TestCurve,
    params: &[f64],
    n: usize,
    rng: &mut R,
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = 2 * params.len();
    let mut data = DMatrix::zeros(dim, n);
    for s in 0..n {
        let pts = draw_points(curve, rng);
        data.set_column(s, &trajectory(&pts, params));
    }
    sample_moments(&data)
}

/// Column-sample mean and unbiased covariance.
pub fn sample_moments(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.ncols();
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let cov = &centered * centered.transpose() / (n as f64 - 1.0);
    (mean, cov)
}
