//! Dataset spec documents (TOML).
//!
//! ```toml
//! format_version = 1
//! seed = 7
//!
//! [[component]]
//! name = "straight"
//! weight = 1.0
//! profile = "constant_speed"   # or "uniform_param", "custom" (+ params)
//! length = 19
//! joints = ["C2"]
//!
//! [[component.segment]]
//! points = [
//!   { mean = [0.0, 0.0], var = 0.01 },
//!   { mean = [2.0, 0.0], cov = [[0.04, 0.0], [0.0, 0.04]] },
//!   { mean = [4.0, 0.0], var = 0.06 },
//! ]
//!
//! [[component.segment]]   # starts at the previous segment's last point
//! points = [{ mean = [6.0, 0.0] }, { mean = [8.0, 0.0], var = 0.1 }]
//! ```
//!
//! Segments after the first list only their new control points. The point
//! right after a C1/C2 joint is determined by the joint, so its covariance
//! may be omitted.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::curve::{
    validate_continuity, CompositeCurve, Continuity, CurveSegment, GaussianControlPoint,
};
use crate::discretize::{constant_speed_schedule, uniform_schedule, ParamSchedule, Profile};
use crate::error::{Error, Result};
use crate::prior::{build_prior, TrajectoryPrior};

pub const FORMAT_VERSION: u32 = 1;

/// Text of the bundled three-path reference scene.
pub const REFERENCE_SPEC: &str = include_str!("../../data/reference.toml");

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    format_version: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    component: Vec<RawComponent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    name: Option<String>,
    weight: f64,
    profile: Profile,
    length: usize,
    params: Option<Vec<f64>>,
    #[serde(default)]
    joints: Vec<Continuity>,
    #[serde(default)]
    segment: Vec<RawSegment>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    points: Vec<RawPoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    mean: Vec<f64>,
    cov: Option<Vec<Vec<f64>>>,
    var: Option<f64>,
}

/// One mixture component of a dataset.
#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub name: String,
    pub weight: f64,
    pub curve: CompositeCurve,
    pub schedule: ParamSchedule,
}

/// A validated dataset description.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub seed: u64,
    pub components: Vec<ComponentSpec>,
}

impl DatasetSpec {
    pub fn reference() -> Self {
        parse_spec(REFERENCE_SPEC).expect("bundled reference spec is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_spec(&text)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn prior(&self) -> Result<TrajectoryPrior> {
        build_prior(
            self.components.iter().map(|c| c.curve.clone()).collect(),
            self.weights(),
            self.components.iter().map(|c| c.schedule.clone()).collect(),
        )
    }
}

pub fn parse_spec(text: &str) -> Result<DatasetSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let line = text[..span.start].matches('\n').count() + 1;
                format!("line {line}")
            }
            None => "document".to_string(),
        };
        Error::spec(location, e.message().trim().to_string())
    })?;
    if raw.format_version != FORMAT_VERSION {
        return Err(Error::spec(
            "format_version",
            format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                raw.format_version
            ),
        ));
    }
    if raw.component.is_empty() {
        return Err(Error::spec(
            "component",
            "at least one component is required",
        ));
    }
    let components = raw
        .component
        .into_iter()
        .enumerate()
        .map(|(k, c)| build_component(k, c))
        .collect::<Result<Vec<_>>>()?;

    let total: f64 = components.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::spec(
            "component[*].weight",
            format!("weights sum to {total}, expected 1"),
        ));
    }
    let d = components[0].curve.dim();
    if let Some(k) = components.iter().position(|c| c.curve.dim() != d) {
        return Err(Error::spec(
            format!("component[{k}]"),
            format!(
                "dimension {} differs from component[0] ({d})",
                components[k].curve.dim()
            ),
        ));
    }
    Ok(DatasetSpec {
        seed: raw.seed,
        components,
    })
}

fn build_component(k: usize, raw: RawComponent) -> Result<ComponentSpec> {
    let at = |rest: &str| format!("component[{k}]{rest}");
    if !(raw.weight.is_finite() && raw.weight >= 0.0) {
        return Err(Error::spec(
            at(".weight"),
            "weight must be finite and non-negative",
        ));
    }
    if raw.segment.is_empty() {
        return Err(Error::spec(
            at(".segment"),
            "at least one segment is required",
        ));
    }
    if raw.joints.len() + 1 != raw.segment.len() {
        return Err(Error::spec(
            at(".joints"),
            format!(
                "{} segments need {} joint classes, got {}",
                raw.segment.len(),
                raw.segment.len() - 1,
                raw.joints.len()
            ),
        ));
    }
    let d = raw.segment[0]
        .points
        .first()
        .map(|p| p.mean.len())
        .unwrap_or(0);
    if d == 0 {
        return Err(Error::spec(
            at(".segment[0].points[0]"),
            "missing or empty mean",
        ));
    }

    let mut segments: Vec<CurveSegment> = Vec::with_capacity(raw.segment.len());
    let mut carried: Option<GaussianControlPoint> = None;
    for (s, seg) in raw.segment.iter().enumerate() {
        let mut points = Vec::with_capacity(seg.points.len() + 1);
        points.extend(carried.take());
        for (p, point) in seg.points.iter().enumerate() {
            let loc = at(&format!(".segment[{s}].points[{p}]"));
            let dependent = s > 0 && p == 0 && raw.joints[s - 1].constrains_tangent();
            points.push(build_point(point, d, dependent, &loc)?);
        }
        if points.len() < 2 {
            return Err(Error::spec(
                at(&format!(".segment[{s}]")),
                "a segment needs at least two control points",
            ));
        }
        carried = points.last().cloned();
        segments.push(
            CurveSegment::new(points)
                .map_err(|e| Error::spec(at(&format!(".segment[{s}]")), e.to_string()))?,
        );
    }
    let curve = CompositeCurve::new(segments, raw.joints.clone()).map_err(|e| match e {
        Error::DegenerateJoint { joint, reason } => {
            Error::spec(at(&format!(".joints[{joint}]")), reason)
        }
        other => Error::spec(at(""), other.to_string()),
    })?;
    if let Some(v) = validate_continuity(&curve).first() {
        return Err(Error::spec(
            at(&format!(".joints[{}]", v.joint)),
            format!(
                "declared {} but {:?} check fails (residual {:e})",
                v.declared, v.kind, v.residual
            ),
        ));
    }

    if raw.length < 2 {
        return Err(Error::spec(
            at(".length"),
            "trajectory length must be at least 2",
        ));
    }
    let schedule = match (raw.profile, raw.params) {
        (Profile::Custom, Some(params)) => {
            if params.len() != raw.length {
                return Err(Error::spec(
                    at(".params"),
                    format!("{} parameters for length {}", params.len(), raw.length),
                ));
            }
            ParamSchedule::custom(params).map_err(|e| Error::spec(at(".params"), e.to_string()))?
        }
        (Profile::Custom, None) => {
            return Err(Error::spec(
                at(".params"),
                "custom profile needs explicit params",
            ))
        }
        (_, Some(_)) => {
            return Err(Error::spec(
                at(".params"),
                "params are only allowed with the custom profile",
            ))
        }
        (Profile::UniformParam, None) => uniform_schedule(raw.length)?,
        (Profile::ConstantSpeed, None) => constant_speed_schedule(&curve, raw.length)
            .map_err(|e| Error::spec(at(".profile"), e.to_string()))?,
    };

    Ok(ComponentSpec {
        name: raw.name.unwrap_or_else(|| format!("component{k}")),
        weight: raw.weight,
        curve,
        schedule,
    })
}

fn build_point(
    raw: &RawPoint,
    d: usize,
    dependent: bool,
    loc: &str,
) -> Result<GaussianControlPoint> {
    if raw.mean.len() != d {
        return Err(Error::spec(
            loc,
            format!("mean has {} entries, expected {d}", raw.mean.len()),
        ));
    }
    let mean = DVector::from_column_slice(&raw.mean);
    let cov = match (&raw.cov, raw.var) {
        (Some(_), Some(_)) => return Err(Error::spec(loc, "give either cov or var, not both")),
        (None, Some(v)) => DMatrix::identity(d, d) * v,
        (Some(rows), None) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::spec(loc, format!("cov must be {d}x{d}")));
            }
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
        (None, None) if dependent => DMatrix::zeros(d, d),
        (None, None) => return Err(Error::spec(loc, "cov or var is required")),
    };
    GaussianControlPoint::new(mean, cov).map_err(|e| Error::spec(loc, e.to_string()))
}
