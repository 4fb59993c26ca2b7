//! Curve-parameter schedules that turn a continuous curve into a finite
//! trajectory with a chosen velocity profile.

use serde::{Deserialize, Serialize};

use crate::curve::{local_param, segment_index, CompositeCurve};
use crate::error::{Error, Result};

/// How a schedule's parameters were placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    UniformParam,
    ConstantSpeed,
    Custom,
}

/// Strictly increasing curve parameters from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSchedule {
    params: Vec<f64>,
    profile: Profile,
}

impl ParamSchedule {
    pub fn new(params: Vec<f64>, profile: Profile) -> Result<Self> {
        if params.len() < 2 {
            return Err(Error::domain(format!(
                "a schedule needs at least 2 parameters, got {}",
                params.len()
            )));
        }
        if params[0] != 0.0 || *params.last().unwrap() != 1.0 {
            return Err(Error::domain("a schedule must start at 0 and end at 1"));
        }
        if let Some(i) = params
            .windows(2)
            .position(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::domain(format!(
                "schedule is not strictly increasing at position {}",
                i + 1
            )));
        }
        Ok(Self { params, profile })
    }

    /// User-supplied parameters.
    pub fn custom(params: Vec<f64>) -> Result<Self> {
        Self::new(params, Profile::Custom)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// `n` equally spaced parameters including both ends.
pub fn uniform_schedule(n: usize) -> Result<ParamSchedule> {
    if n < 2 {
        return Err(Error::domain(format!(
            "a schedule needs at least 2 parameters, got {n}"
        )));
    }
    let last = (n - 1) as f64;
    let params = (0..n).map(|i| i as f64 / last).collect();
    ParamSchedule::new(params, Profile::UniformParam)
}

/// Adaptive polyline quadrature for the length of the mean curve.
#[derive(Debug, Clone, Copy)]
pub struct ArcLength {
    /// Local relative tolerance between successive refinements.
    pub tolerance: f64,
    /// Initial uniform pieces per segment-local interval.
    pub min_pieces: usize,
}

impl Default for ArcLength {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            min_pieces: 8,
        }
    }
}

const MAX_DEPTH: u32 = 40;

impl ArcLength {
    pub fn between(&self, curve: &CompositeCurve, t0: f64, t1: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(&t1) || t0 > t1 {
            return Err(Error::domain(format!(
                "invalid arc length interval [{t0}, {t1}]"
            )));
        }
        if t0 == t1 {
            return Ok(0.0);
        }
        let n_seg = curve.n_segments();
        let first = segment_index(t0, n_seg)?;
        let last = segment_index(t1, n_seg)?;
        let mut total = 0.0;
        for seg in first..=last {
            // t0 may sit exactly on the end of `first`, giving an empty piece
            let u0 = if seg == first {
                local_param(t0, n_seg)?
            } else {
                0.0
            };
            let u1 = if seg == last {
                local_param(t1, n_seg)?
            } else {
                1.0
            };
            if u1 > u0 {
                total += self.segment_piece(curve, seg, u0, u1);
            }
        }
        Ok(total)
    }

    fn segment_piece(&self, curve: &CompositeCurve, seg: usize, u0: f64, u1: f64) -> f64 {
        let pieces = self.min_pieces.max(1);
        let h = (u1 - u0) / pieces as f64;
        let mut a = u0;
        let mut pa = curve.segment_mean(seg, a);
        let mut sum = 0.0;
        for k in 1..=pieces {
            let b = if k == pieces { u1 } else { u0 + h * k as f64 };
            let pb = curve.segment_mean(seg, b);
            sum += self.refine(curve, seg, a, &pa, b, &pb, 0);
            a = b;
            pa = pb;
        }
        sum
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        curve: &CompositeCurve,
        seg: usize,
        a: f64,
        pa: &nalgebra::DVector<f64>,
        b: f64,
        pb: &nalgebra::DVector<f64>,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let pm = curve.segment_mean(seg, m);
        let coarse = (pb - pa).norm();
        let fine = (&pm - pa).norm() + (pb - &pm).norm();
        if depth >= MAX_DEPTH || fine - coarse <= self.tolerance * fine {
            // chord error shrinks fourfold per halving
            return fine + (fine - coarse) / 3.0;
        }
        self.refine(curve, seg, a, pa, m, &pm, depth + 1)
            + self.refine(curve, seg, m, &pm, b, pb, depth + 1)
    }
}

/// Length of the mean curve between `t0` and `t1`.
pub fn arc_length(curve: &CompositeCurve, t0: f64, t1: f64) -> Result<f64> {
    ArcLength::default().between(curve, t0, t1)
}

const OUTER_ITERATIONS: usize = 200;
const INNER_ITERATIONS: usize = 80;

/// `n` parameters whose consecutive mean-curve points are equally far apart.
///
/// Bisects on the common chord length: marching from `t = 0` with chord `c`
/// either places all `n - 1` points before the end (chord too short) or runs
/// out of curve (too long). The bracket starts at `[0, S / (n - 1)]`, where
/// `S` is the arc length, since a chord never exceeds its arc.
pub fn constant_speed_schedule(curve: &CompositeCurve, n: usize) -> Result<ParamSchedule> {
    if n < 2 {
        return Err(Error::domain(format!(
            "a schedule needs at least 2 parameters, got {n}"
        )));
    }
    let total = arc_length(curve, 0.0, 1.0)?;
    if total <= 0.0 {
        return Err(Error::DegenerateCurve(
            "mean curve has zero arc length".into(),
        ));
    }
    if n == 2 {
        return ParamSchedule::new(vec![0.0, 1.0], Profile::ConstantSpeed);
    }
    let mut lo = 0.0;
    let mut hi = total / (n - 1) as f64;
    let mut best = None;
    for _ in 0..OUTER_ITERATIONS {
        let c = 0.5 * (lo + hi);
        if c <= lo || c >= hi {
            break;
        }
        match march(curve, c, n)? {
            Some(params) => {
                lo = c;
                best = Some(params);
            }
            None => hi = c,
        }
    }
    let mut params = match best {
        Some(p) => p,
        None => march(curve, lo, n)?.ok_or_else(|| {
            Error::Numerical("constant-speed search did not bracket a chord length".into())
        })?,
    };
    *params.last_mut().unwrap() = 1.0;
    ParamSchedule::new(params, Profile::ConstantSpeed)
}

/// Places `n - 1` successive points at chord distance `c`. Returns `None`
/// when the curve ends first.
fn march(curve: &CompositeCurve, c: f64, n: usize) -> Result<Option<Vec<f64>>> {
    let mut params = Vec::with_capacity(n);
    params.push(0.0);
    let mut t = 0.0;
    let mut p = curve.mean_at(0.0)?;
    for _ in 1..n {
        let end = curve.mean_at(1.0)?;
        if (&end - &p).norm() <= c {
            return Ok(None);
        }
        let (mut a, mut b) = (t, 1.0);
        for _ in 0..INNER_ITERATIONS {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if (curve.mean_at(m)? - &p).norm() < c {
                a = m;
            } else {
                b = m;
            }
        }
        t = b;
        if t >= 1.0 {
            return Ok(None);
        }
        p = curve.mean_at(t)?;
        params.push(t);
    }
    Ok(Some(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{Continuity, CurveSegment, GaussianControlPoint};

    fn seg(points: &[(f64, f64)]) -> CurveSegment {
        CurveSegment::new(
            points
                .iter()
                .map(|&(x, y)| GaussianControlPoint::isotropic(&[x, y], 0.01).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn line() -> CompositeCurve {
        CompositeCurve::single(seg(&[(0.0, 0.0), (2.0, 0.0)]))
    }

    fn chords(curve: &CompositeCurve, s: &ParamSchedule) -> Vec<f64> {
        s.params()
            .windows(2)
            .map(|w| (curve.mean_at(w[1]).unwrap() - curve.mean_at(w[0]).unwrap()).norm())
            .collect()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_schedule(3).unwrap().params(), &[0.0, 0.5, 1.0]);
        assert_eq!(uniform_schedule(2).unwrap().params(), &[0.0, 1.0]);
        assert_eq!(
            uniform_schedule(5).unwrap().params(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert!(uniform_schedule(1).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(ParamSchedule::custom(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(ParamSchedule::custom(vec![0.1, 1.0]).is_err());
        assert!(ParamSchedule::custom(vec![0.0, 0.9]).is_err());
        assert!(ParamSchedule::custom(vec![0.0]).is_err());
        assert!(ParamSchedule::custom(vec![0.0, 0.3, 1.0]).is_ok());
    }

    #[test]
    fn arc_length_of_straight_line() {
        let c = line();
        assert!((arc_length(&c, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(arc_length(&c, 0.3, 0.3).unwrap(), 0.0);
        assert!(arc_length(&c, 0.6, 0.3).is_err());
        assert!(arc_length(&c, 0.0, 1.1).is_err());
    }

    #[test]
    fn arc_length_is_additive_across_joints() {
        let c = CompositeCurve::new(
            vec![
                seg(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]),
                seg(&[(2.0, 1.0), (3.0, 2.0), (3.0, 4.0)]),
            ],
            vec![Continuity::C1],
        )
        .unwrap();
        let whole = arc_length(&c, 0.0, 1.0).unwrap();
        let parts = arc_length(&c, 0.0, 0.3).unwrap()
            + arc_length(&c, 0.3, 0.5).unwrap()
            + arc_length(&c, 0.5, 0.8).unwrap()
            + arc_length(&c, 0.8, 1.0).unwrap();
        assert!((whole - parts).abs() <= 1e-8 * whole);
    }

    #[test]
    fn constant_speed_on_line() {
        let s = constant_speed_schedule(&line(), 5).unwrap();
        for (got, want) in s.params().iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert_eq!(s.profile(), Profile::ConstantSpeed);
        assert_eq!(
            constant_speed_schedule(&line(), 2).unwrap().params(),
            &[0.0, 1.0]
        );
    }

    #[test]
    fn constant_speed_on_uneven_parametrisation() {
        // control points bunched at the start: uniform parameters are not uniform speed
        let c = CompositeCurve::single(seg(&[(0.0, 0.0), (0.2, 0.0), (3.0, 1.0), (4.0, 3.0)]));
        let s = constant_speed_schedule(&c, 12).unwrap();
        let ch = chords(&c, &s);
        let max = ch.iter().cloned().fold(f64::MIN, f64::max);
        let min = ch.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min - 1.0 < 1e-9, "{ch:?}");
    }

    #[test]
    fn degenerate_curve_rejected() {
        let c = CompositeCurve::single(seg(&[(1.0, 1.0), (1.0, 1.0)]));
        assert!(matches!(
            constant_speed_schedule(&c, 4),
            Err(Error::DegenerateCurve(_))
        ));
    }

    #[test]
    fn schedules_are_deterministic() {
        let c = CompositeCurve::single(seg(&[(0.0, 0.0), (1.0, 2.0), (3.0, 0.0)]));
        let a = constant_speed_schedule(&c, 9).unwrap();
        let b = constant_speed_schedule(&c, 9).unwrap();
        let bits = |s: &ParamSchedule| s.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
