//! Probabilistic Bézier curves with Gaussian control points.
//!
//! A [`CompositeCurve`] chains segments end to end. Connecting control points
//! are stored once and shared by both neighbouring segments. At C1 and C2
//! joints the second control point of the following segment is not an
//! independent random variable: it is the affine image
//! `P_next = P_joint + s * (P_joint - P_before)` of the two control points that
//! precede the joint. The curve keeps a sparse linear model that expresses
//! every control point in terms of the independent ("free") control points, so
//! all moments below are exact for that dependency structure.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const CONTINUITY_TOL: f64 = 1e-9;

/// A d-dimensional Gaussian describing one control point.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianControlPoint {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianControlPoint {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::domain("control point dimension must be at least 1"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::domain(format!(
                "covariance is {}x{} but mean has dimension {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        check_symmetric_psd(&covariance)?;
        Ok(Self { mean, covariance })
    }

    /// Control point with covariance `variance * I`.
    pub fn isotropic(mean: &[f64], variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::identity(d, d) * variance,
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn check_symmetric_psd(m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::domain(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if m.nrows() > 0 {
        let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::domain(format!(
                "covariance is not positive semi-definite (smallest eigenvalue {min_eig:e})"
            )));
        }
    }
    Ok(())
}

/// One Bézier segment: `L + 1` control points, `L >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    points: Vec<GaussianControlPoint>,
}

impl CurveSegment {
    pub fn new(points: Vec<GaussianControlPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain(format!(
                "a segment needs at least 2 control points, got {}",
                points.len()
            )));
        }
        let d = points[0].dim();
        if let Some(bad) = points.iter().position(|p| p.dim() != d) {
            return Err(Error::domain(format!(
                "control point {bad} has dimension {} but the segment has dimension {d}",
                points[bad].dim()
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[GaussianControlPoint] {
        &self.points
    }

    /// Polynomial degree `L`.
    pub fn degree(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Gaussian curve point at segment-local parameter `u`, treating the
    /// control points as independent.
    pub fn eval(&self, u: f64) -> Result<GaussianCurvePoint> {
        check_unit(u, "segment parameter")?;
        let big_l = self.degree();
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut covariance = DMatrix::zeros(d, d);
        for (l, p) in self.points.iter().enumerate() {
            let b = basis(l, big_l, u);
            mean.axpy(b, &p.mean, 1.0);
            covariance += &p.covariance * (b * b);
        }
        Ok(GaussianCurvePoint {
            mean,
            covariance,
            t: u,
        })
    }
}

/// Smoothness class of a joint between two segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Continuity {
    C0,
    C1,
    C2,
}

impl Continuity {
    /// Whether the joint ties the following segment's second control point to
    /// the two points before the joint.
    pub fn constrains_tangent(self) -> bool {
        !matches!(self, Continuity::C0)
    }
}

impl fmt::Display for Continuity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Continuity::C0 => "C0",
            Continuity::C1 => "C1",
            Continuity::C2 => "C2",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Continuity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C0" => Ok(Continuity::C0),
            "C1" => Ok(Continuity::C1),
            "C2" => Ok(Continuity::C2),
            other => Err(Error::domain(format!(
                "unknown continuity class {other:?} (expected C0, C1 or C2)"
            ))),
        }
    }
}

/// Gaussian distribution of a single curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCurvePoint {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub t: f64,
}

/// Sparse linear combination of free control points.
type Combination = Vec<(usize, f64)>;

/// Segments chained end to end and traversed by a single parameter in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct CompositeCurve {
    /// Control points in traversal order; connecting points appear once.
    points: Vec<GaussianControlPoint>,
    /// Index into `points` of the first control point of each segment.
    starts: Vec<usize>,
    degrees: Vec<usize>,
    joints: Vec<Continuity>,
    /// Per control point: its expression in terms of free control points.
    model: Vec<Combination>,
    /// `free[i]` is true when control point `i` is an independent Gaussian.
    free: Vec<bool>,
    /// Moments of every control point under the dependency model.
    effective: Vec<GaussianControlPoint>,
}

impl CompositeCurve {
    /// Builds a composite curve. Consecutive segments must share their
    /// connecting control point (identical mean and covariance).
    pub fn new(segments: Vec<CurveSegment>, joints: Vec<Continuity>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::domain(
                "a composite curve needs at least one segment",
            ));
        }
        if joints.len() + 1 != segments.len() {
            return Err(Error::domain(format!(
                "{} segments need {} joint classes, got {}",
                segments.len(),
                segments.len() - 1,
                joints.len()
            )));
        }
        let d = segments[0].dim();
        let mut points: Vec<GaussianControlPoint> = Vec::new();
        let mut starts = Vec::with_capacity(segments.len());
        let mut degrees = Vec::with_capacity(segments.len());
        for (j, seg) in segments.into_iter().enumerate() {
            if seg.dim() != d {
                return Err(Error::domain(format!(
                    "segment {j} has dimension {} but the curve has dimension {d}",
                    seg.dim()
                )));
            }
            degrees.push(seg.degree());
            let mut pts = seg.points.into_iter();
            let first = pts.next().expect("segment has at least two points");
            if let Some(last) = points.last() {
                if *last != first {
                    return Err(Error::domain(format!(
                        "segment {j} does not start at the last control point of segment {}",
                        j - 1
                    )));
                }
                starts.push(points.len() - 1);
            } else {
                starts.push(0);
                points.push(first);
            }
            points.extend(pts);
        }
        Self::assemble(points, starts, degrees, joints)
    }

    /// A curve made of one segment.
    pub fn single(segment: CurveSegment) -> Self {
        Self::new(vec![segment], Vec::new()).expect("single segment is always valid")
    }

    fn assemble(
        points: Vec<GaussianControlPoint>,
        starts: Vec<usize>,
        degrees: Vec<usize>,
        joints: Vec<Continuity>,
    ) -> Result<Self> {
        let n = points.len();
        let mut model: Vec<Combination> = Vec::with_capacity(n);
        let mut free = vec![true; n];
        let mut dependent = vec![None; n];
        for (j, class) in joints.iter().enumerate() {
            let joint_idx = starts[j + 1];
            let before = joint_idx - 1;
            let after = joint_idx + 1;
            let leg_in = (points[joint_idx].mean() - points[before].mean()).norm();
            let leg_out = (points[after].mean() - points[joint_idx].mean()).norm();
            if leg_in == 0.0 && leg_out == 0.0 {
                return Err(Error::DegenerateJoint {
                    joint: j,
                    reason: "both joint legs have zero length".into(),
                });
            }
            if class.constrains_tangent() {
                if leg_in == 0.0 {
                    return Err(Error::DegenerateJoint {
                        joint: j,
                        reason: "incoming leg has zero length so the tangent is undefined".into(),
                    });
                }
                free[after] = false;
                dependent[after] = Some((joint_idx, before, leg_out / leg_in));
            }
        }
        for (i, dep) in dependent.iter().enumerate() {
            let combo = match *dep {
                None => vec![(i, 1.0)],
                Some((joint_idx, before, s)) => {
                    let mut acc = Vec::new();
                    add_scaled(&mut acc, &model[joint_idx], 1.0 + s);
                    add_scaled(&mut acc, &model[before], -s);
                    acc
                }
            };
            model.push(combo);
        }
        let effective = model
            .iter()
            .map(|combo| {
                let d = points[0].dim();
                let mut mean = DVector::zeros(d);
                let mut cov = DMatrix::zeros(d, d);
                for &(f, c) in combo {
                    mean.axpy(c, points[f].mean(), 1.0);
                    cov += points[f].covariance() * (c * c);
                }
                GaussianControlPoint {
                    mean,
                    covariance: symmetrize(cov),
                }
            })
            .collect();
        Ok(Self {
            points,
            starts,
            degrees,
            joints,
            model,
            free,
            effective,
        })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn n_segments(&self) -> usize {
        self.degrees.len()
    }

    pub fn joints(&self) -> &[Continuity] {
        &self.joints
    }

    pub fn degree(&self, segment: usize) -> usize {
        self.degrees[segment]
    }

    /// Declared control points of `segment` (0-based).
    pub fn segment_points(&self, segment: usize) -> &[GaussianControlPoint] {
        let start = self.starts[segment];
        &self.points[start..=start + self.degrees[segment]]
    }

    /// Declared control points of `segment` as an owned segment.
    pub fn segment(&self, segment: usize) -> CurveSegment {
        CurveSegment {
            points: self.segment_points(segment).to_vec(),
        }
    }

    /// Control points of `segment` under the dependency model. Differs from
    /// the declared points only for points fixed by a C1/C2 joint.
    pub fn effective_points(&self, segment: usize) -> &[GaussianControlPoint] {
        let start = self.starts[segment];
        &self.effective[start..=start + self.degrees[segment]]
    }

    /// True when every control point of `segment` is an independent Gaussian.
    pub fn segment_is_independent(&self, segment: usize) -> bool {
        let start = self.starts[segment];
        self.free[start..=start + self.degrees[segment]]
            .iter()
            .all(|&f| f)
    }

    /// True when some free control point enters both segments, so their
    /// points are correlated.
    pub fn segments_coupled(&self, seg_a: usize, seg_b: usize) -> bool {
        let span = |s: usize| &self.model[self.starts[s]..=self.starts[s] + self.degrees[s]];
        span(seg_a)
            .iter()
            .flatten()
            .any(|&(fa, _)| span(seg_b).iter().flatten().any(|&(fb, _)| fa == fb))
    }

    /// Cross-covariance `Cov(P_a, P_b)` between two control points of
    /// `seg_a` and `seg_b`, given by their local indices.
    pub fn control_cross_covariance(
        &self,
        seg_a: usize,
        local_a: usize,
        seg_b: usize,
        local_b: usize,
    ) -> DMatrix<f64> {
        let a = &self.model[self.starts[seg_a] + local_a];
        let b = &self.model[self.starts[seg_b] + local_b];
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for &(fa, ca) in a {
            for &(fb, cb) in b {
                if fa == fb {
                    out += self.points[fa].covariance() * (ca * cb);
                }
            }
        }
        out
    }

    /// Weights of each free control point in the curve point at `t`; entries
    /// for dependent control points are zero.
    pub(crate) fn free_weights(&self, t: f64) -> Result<Vec<f64>> {
        let seg = segment_index(t, self.n_segments())?;
        let u = local_param(t, self.n_segments())?;
        let big_l = self.degrees[seg];
        let mut w = vec![0.0; self.points.len()];
        for l in 0..=big_l {
            let b = basis(l, big_l, u);
            for &(f, c) in &self.model[self.starts[seg] + l] {
                w[f] += b * c;
            }
        }
        Ok(w)
    }

    pub(crate) fn free_point(&self, f: usize) -> &GaussianControlPoint {
        &self.points[f]
    }

    /// Deterministic mean curve `μ(t)`.
    pub fn mean_at(&self, t: f64) -> Result<DVector<f64>> {
        let seg = segment_index(t, self.n_segments())?;
        let u = local_param(t, self.n_segments())?;
        Ok(self.segment_mean(seg, u))
    }

    pub(crate) fn segment_mean(&self, seg: usize, u: f64) -> DVector<f64> {
        let big_l = self.degrees[seg];
        let mut mean = DVector::zeros(self.dim());
        for (l, p) in self.effective_points(seg).iter().enumerate() {
            mean.axpy(basis(l, big_l, u), p.mean(), 1.0);
        }
        mean
    }

    /// Curve parameter at which joint `joint` (0-based) sits.
    pub fn joint_param(&self, joint: usize) -> f64 {
        (joint + 1) as f64 / self.n_segments() as f64
    }
}

fn add_scaled(acc: &mut Combination, combo: &Combination, scale: f64) {
    for &(f, c) in combo {
        match acc.iter_mut().find(|(g, _)| *g == f) {
            Some((_, v)) => *v += scale * c,
            None => acc.push((f, scale * c)),
        }
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn check_unit(t: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("{what} {t} is outside [0, 1]")));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis without range checks; `l <= big_l` is assumed.
pub(crate) fn basis(l: usize, big_l: usize, t: f64) -> f64 {
    binomial(big_l, l) * (1.0 - t).powi((big_l - l) as i32) * t.powi(l as i32)
}

/// Bernstein polynomial `C(L, l) (1 - t)^(L - l) t^l`.
pub fn bernstein(l: usize, big_l: usize, t: f64) -> Result<f64> {
    if l > big_l {
        return Err(Error::domain(format!(
            "basis index {l} exceeds degree {big_l}"
        )));
    }
    check_unit(t, "curve parameter")?;
    Ok(basis(l, big_l, t))
}

/// Segment containing curve parameter `t` (0-based). Joints belong to the
/// segment on their left; `t = 0` maps to the first segment.
pub fn segment_index(t: f64, n_seg: usize) -> Result<usize> {
    if n_seg == 0 {
        return Err(Error::domain("number of segments must be at least 1"));
    }
    check_unit(t, "curve parameter")?;
    let j = (t * n_seg as f64).ceil() as usize;
    Ok(j.clamp(1, n_seg) - 1)
}

/// Position of `t` within its segment, in `[0, 1]`.
pub fn local_param(t: f64, n_seg: usize) -> Result<f64> {
    let j = segment_index(t, n_seg)?;
    let u = t * n_seg as f64 - j as f64;
    Ok(u.clamp(0.0, 1.0))
}

/// Gaussian curve point at `t`.
pub fn eval_point(curve: &CompositeCurve, t: f64) -> Result<GaussianCurvePoint> {
    let w = curve.free_weights(t)?;
    let d = curve.dim();
    let mut mean = DVector::zeros(d);
    let mut covariance = DMatrix::zeros(d, d);
    for (f, &c) in w.iter().enumerate() {
        if c != 0.0 {
            let p = curve.free_point(f);
            mean.axpy(c, p.mean(), 1.0);
            covariance += p.covariance() * (c * c);
        }
    }
    Ok(GaussianCurvePoint {
        mean,
        covariance,
        t,
    })
}

/// Which geometric condition a joint fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The three points around the joint are not on one line.
    Collinearity,
    /// The outgoing leg points back along the incoming leg.
    Direction,
    /// C2 joint whose two legs differ in length.
    Equidistance,
    /// A leg has zero length so the tangent is undefined.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointViolation {
    pub joint: usize,
    pub declared: Continuity,
    pub kind: ViolationKind,
    pub residual: f64,
}

impl fmt::Display for JointViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "joint {} declared {} fails {:?} (residual {:e})",
            self.joint, self.declared, self.kind, self.residual
        )
    }
}

/// Checks every joint against its declared continuity class, using the
/// declared control point means.
pub fn validate_continuity(curve: &CompositeCurve) -> Vec<JointViolation> {
    let mut out = Vec::new();
    for (j, &class) in curve.joints.iter().enumerate() {
        if !class.constrains_tangent() {
            continue;
        }
        let joint_idx = curve.starts[j + 1];
        let p_before = curve.points[joint_idx - 1].mean();
        let p_joint = curve.points[joint_idx].mean();
        let p_after = curve.points[joint_idx + 1].mean();
        let v_in = p_joint - p_before;
        let v_out = p_after - p_joint;
        let (n_in, n_out) = (v_in.norm(), v_out.norm());
        let scale = n_in.max(n_out);
        let violation = |kind, residual| JointViolation {
            joint: j,
            declared: class,
            kind,
            residual,
        };
        if n_in == 0.0 || n_out == 0.0 {
            out.push(violation(ViolationKind::Degenerate, 0.0));
            continue;
        }
        let dir = &v_in / n_in;
        let along = v_out.dot(&dir);
        let off_line = (&v_out - &dir * along).norm() / scale;
        if off_line > CONTINUITY_TOL {
            out.push(violation(ViolationKind::Collinearity, off_line));
            continue;
        }
        if along <= 0.0 {
            out.push(violation(ViolationKind::Direction, along / scale));
            continue;
        }
        if class == Continuity::C2 {
            let mismatch = (n_in - n_out).abs() / scale;
            if mismatch > CONTINUITY_TOL {
                out.push(violation(ViolationKind::Equidistance, mismatch));
            }
        }
    }
    out
}

/// Length ratio coupling the first control point after joint `joint` to the
/// last two before it, computed on the declared means.
pub fn s_factor(curve: &CompositeCurve, joint: usize) -> Result<f64> {
    let class = *curve.joints.get(joint).ok_or_else(|| {
        Error::domain(format!(
            "joint {joint} out of range for a curve with {} joints",
            curve.joints.len()
        ))
    })?;
    if !class.constrains_tangent() {
        return Err(Error::domain(format!(
            "joint {joint} is C0; the length ratio is only defined for C1/C2 joints"
        )));
    }
    let joint_idx = curve.starts[joint + 1];
    let leg_in = (curve.points[joint_idx].mean() - curve.points[joint_idx - 1].mean()).norm();
    let leg_out = (curve.points[joint_idx + 1].mean() - curve.points[joint_idx].mean()).norm();
    if leg_in == 0.0 {
        return Err(Error::DegenerateJoint {
            joint,
            reason: "last two control points before the joint coincide".into(),
        });
    }
    Ok(leg_out / leg_in)
}
