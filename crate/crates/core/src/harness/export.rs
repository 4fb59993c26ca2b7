//! File exports: JSON documents with 17 significant digits per float and
//! delimiter-separated plot data (means, 2-sigma ellipses, samples).

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMixture, MvGaussian};
use crate::harness::{EvalReport, Trajectory};
use crate::prior::TrajectoryPrior;

/// Pretty JSON where every float is written as `{:.16e}`, which round-trips
/// `f64` exactly and does not depend on shortest-representation heuristics.
struct PreciseFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for PreciseFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` as pretty JSON with full-precision floats.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    EvalReport::deserialize(&mut de)
        .map_err(|e| Error::spec(path.display().to_string(), e.to_string()))
}

#[derive(Debug, serde::Serialize)]
struct GaussianExport {
    weight: f64,
    /// One row per time step.
    mean: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
}

impl GaussianExport {
    fn new(weight: f64, g: &MvGaussian, d: usize) -> Self {
        Self {
            weight,
            mean: g.mean().as_slice().chunks(d).map(<[f64]>::to_vec).collect(),
            covariance: rows(g.covariance()),
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, serde::Serialize)]
struct PriorComponentExport<'a> {
    name: &'a str,
    length: usize,
    params: &'a [f64],
    #[serde(flatten)]
    gaussian: GaussianExport,
}

#[derive(Debug, serde::Serialize)]
struct PriorExport<'a> {
    format_version: u32,
    kind: &'static str,
    dim: usize,
    components: Vec<PriorComponentExport<'a>>,
}

/// JSON document describing every prior component over its full length.
pub fn prior_json(prior: &TrajectoryPrior, names: &[String]) -> Result<String> {
    let d = prior.dim();
    let components = (0..prior.n_components())
        .map(|k| PriorComponentExport {
            name: names.get(k).map(String::as_str).unwrap_or(""),
            length: prior.length(k),
            params: prior.schedule(k).params(),
            gaussian: GaussianExport::new(prior.weights()[k], prior.component(k), d),
        })
        .collect();
    to_json(&PriorExport {
        format_version: 1,
        kind: "prior",
        dim: d,
        components,
    })
}

#[derive(Debug, serde::Serialize)]
struct MixtureExport {
    format_version: u32,
    kind: &'static str,
    dim: usize,
    horizon: usize,
    components: Vec<GaussianExport>,
}

/// JSON document for a mixture over `horizon` stacked `d`-dimensional points.
pub fn mixture_json(mixture: &GaussianMixture, d: usize) -> Result<String> {
    to_json(&MixtureExport {
        format_version: 1,
        kind: "mixture",
        dim: d,
        horizon: mixture.dim() / d,
        components: mixture
            .weights()
            .iter()
            .zip(mixture.components())
            .map(|(&w, g)| GaussianExport::new(w, g, d))
            .collect(),
    })
}

/// A 2-sigma covariance ellipse: full axis lengths `2 sqrt(lambda)` and the
/// angle of the major axis in radians, in `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
}

pub fn ellipse(cov: &DMatrix<f64>) -> Result<Ellipse> {
    if cov.shape() != (2, 2) {
        return Err(Error::domain(format!(
            "ellipses need a 2x2 covariance, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let v = eig.eigenvectors.column(hi);
    let mut angle = v[1].atan2(v[0]);
    if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    } else if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    if eig.eigenvalues[hi] == eig.eigenvalues[lo] {
        angle = 0.0;
    }
    Ok(Ellipse {
        major: 2.0 * eig.eigenvalues[hi].max(0.0).sqrt(),
        minor: 2.0 * eig.eigenvalues[lo].max(0.0).sqrt(),
        angle,
    })
}

fn coord_header(prefix: &str, d: usize) -> String {
    (0..d)
        .map(|i| format!("{prefix}{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Per-step mean and spread columns. Planar points get ellipse columns,
/// other dimensions get `2 sigma` per coordinate.
fn spread_header(d: usize) -> String {
    if d == 2 {
        "axis_major,axis_minor,angle".into()
    } else {
        coord_header("two_sigma_", d)
    }
}

fn spread_row(cov: &DMatrix<f64>) -> Result<String> {
    if cov.nrows() == 2 {
        let e = ellipse(cov)?;
        Ok(join(&[e.major, e.minor, e.angle]))
    } else {
        Ok(join(
            &cov.diagonal()
                .iter()
                .map(|v| 2.0 * v.max(0.0).sqrt())
                .collect::<Vec<_>>(),
        ))
    }
}

/// Rows `step,<extra>,mean_*,<spread>` for each step of a stacked Gaussian.
fn steps_csv(
    g: &MvGaussian,
    d: usize,
    extra_header: &str,
    extra: &dyn Fn(usize) -> String,
) -> Result<String> {
    let mut out = format!(
        "step,{extra_header},{},{}\n",
        coord_header("mean_", d),
        spread_header(d)
    );
    for i in 0..g.dim() / d {
        let mean = g.mean().rows(i * d, d);
        let cov = g.covariance().view((i * d, i * d), (d, d)).into_owned();
        writeln!(
            out,
            "{i},{},{},{}",
            extra(i),
            join(mean.as_slice()),
            spread_row(&cov)?
        )
        .unwrap();
    }
    Ok(out)
}

/// One CSV per prior component with a row per trajectory point.
pub fn prior_csv(prior: &TrajectoryPrior, k: usize) -> Result<String> {
    let params = prior.schedule(k).params();
    steps_csv(prior.component(k), prior.dim(), "t", &|i| {
        params[i].to_string()
    })
}

/// Rows `trajectory,component,step,x_*` for every sampled point.
pub fn samples_csv(trajectories: &[Trajectory]) -> String {
    let d = trajectories
        .first()
        .and_then(|t| t.points.first())
        .map_or(0, |p| p.len());
    let mut out = format!("trajectory,component,step,{}\n", coord_header("x", d));
    for (n, t) in trajectories.iter().enumerate() {
        for (i, p) in t.points.iter().enumerate() {
            writeln!(out, "{n},{},{i},{}", t.component, join(p.as_slice())).unwrap();
        }
    }
    out
}

/// Per-step moments of the whole mixture (one row per predicted step).
pub fn posterior_csv(mixture: &GaussianMixture, d: usize) -> Result<String> {
    let n = mixture.dim();
    let mut mean = DVector::zeros(n);
    for (w, g) in mixture.weights().iter().zip(mixture.components()) {
        mean.axpy(*w, g.mean(), 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, g) in mixture.weights().iter().zip(mixture.components()) {
        let dm = g.mean() - &mean;
        cov += (g.covariance() + &dm * dm.transpose()) * *w;
    }
    let moments = MvGaussian::new(mean, crate::curve::symmetrize(cov))?;
    steps_csv(&moments, d, "weight", &|_| "1".into())
}

/// Per-step marginals of mixture component `k`.
pub fn posterior_component_csv(mixture: &GaussianMixture, k: usize, d: usize) -> Result<String> {
    let w = mixture.weights()[k];
    steps_csv(&mixture.components()[k], d, "weight", &|_| w.to_string())
}

/// One row per evaluation record.
pub fn report_csv(report: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out =
        String::from("index,component,offset,matched_offsets,posterior_weights,nll,swd\n");
    for r in &report.records {
        let offsets = r
            .matched_offsets
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        let weights = r
            .posterior_weights
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            out,
            "{},{},{},{offsets},{weights},{},{}",
            r.index,
            r.component,
            r.offset,
            opt(r.nll),
            opt(r.swd)
        )
        .unwrap();
    }
    out
}

/// What to write into a plot-data directory.
pub struct PlotData<'a> {
    pub prior: &'a TrajectoryPrior,
    pub names: &'a [String],
    pub samples: &'a [Trajectory],
    pub posterior: Option<&'a GaussianMixture>,
    pub report: Option<&'a EvalReport>,
}

/// Writes the plot files into `dir` (created if missing) and returns their
/// paths in a fixed order.
pub fn export_plot_data(dir: &Path, data: &PlotData<'_>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    for k in 0..data.prior.n_components() {
        let name = data.names.get(k).cloned().unwrap_or_else(|| k.to_string());
        put(format!("prior_{k}_{name}.csv"), prior_csv(data.prior, k)?)?;
    }
    put("samples.csv".into(), samples_csv(data.samples))?;
    if let Some(mixture) = data.posterior {
        let d = data.prior.dim();
        put("posterior.csv".into(), posterior_csv(mixture, d)?)?;
        for k in 0..mixture.len() {
            put(
                format!("posterior_component_{k}.csv"),
                posterior_component_csv(mixture, k, d)?,
            )?;
        }
    }
    if let Some(report) = data.report {
        put("report_records.csv".into(), report_csv(report))?;
    }
    Ok(written)
}
