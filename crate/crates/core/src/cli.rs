//! The `ncurve` command line.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on any other error.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::export::{self, PlotData};
use crate::harness::{
    baseline_constant_velocity, baseline_oracle, ground_truth_posterior, match_subsequence_within,
    run_eval, sample_dataset, DatasetSpec, EvalConfig, Metric, Predictor,
};

#[derive(Debug, Parser)]
#[command(
    name = "ncurve",
    version,
    about = "Ground-truth trajectory distributions and predictor evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Dataset spec (TOML). Defaults to the bundled three-path reference scene.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,

    /// Seed override. Defaults to the seed in the spec (or config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample trajectories from the spec and write them as CSV.
    Generate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Number of trajectories.
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Points per trajectory. Defaults to the shortest component length.
        #[arg(long)]
        length: Option<usize>,
        /// Output file; standard output when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Export the trajectory prior (means and covariances) as JSON.
    Prior {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output file; standard output when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Condition the prior on an observed sub-trajectory and export the
    /// resulting mixture over the next steps as JSON.
    Posterior {
        #[command(flatten)]
        spec: SpecArgs,
        /// Observed points, one per line, comma separated coordinates.
        #[arg(long, value_name = "FILE")]
        observation: PathBuf,
        /// Number of future steps.
        #[arg(long, default_value_t = 6)]
        n_pred: usize,
        /// Output file; standard output when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Evaluate a predictor against the exact conditional ground truth.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Evaluation config (TOML); built-in defaults when omitted.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PredictorKind::Oracle)]
        predictor: PredictorKind,
        /// Metrics to compute (overrides the config).
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        /// Sliced Wasserstein projections (overrides the config).
        #[arg(long)]
        projections: Option<usize>,
        /// Sliced Wasserstein samples per distribution (overrides the config).
        #[arg(long)]
        samples: Option<usize>,
        /// Sliced Wasserstein order p (overrides the config).
        #[arg(long)]
        p_order: Option<f64>,
        /// Report file; standard output when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Also write metric wall-clock times (JSON) here.
        #[arg(long, value_name = "FILE")]
        timing_out: Option<PathBuf>,
    },
    /// Write CSV plot data: prior means and 2-sigma ellipses, samples, and
    /// optionally a posterior and report records.
    ExportPlotData {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of sampled trajectories.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Observed points for a posterior export.
        #[arg(long, value_name = "FILE")]
        observation: Option<PathBuf>,
        /// Future steps of the posterior export.
        #[arg(long, default_value_t = 6)]
        n_pred: usize,
        /// Evaluation report (JSON) to flatten into CSV.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    /// Exact conditional mixture.
    Oracle,
    /// Constant-velocity Gaussian baseline.
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Nll,
    Swd,
    Both,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Nll => Metric::Nll,
            MetricArg::Swd => Metric::Swd,
            MetricArg::Both => Metric::Both,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_spec(args: &SpecArgs) -> Result<DatasetSpec> {
    let mut spec = match &args.spec {
        Some(path) => DatasetSpec::load(path)?,
        None => DatasetSpec::reference(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn names(spec: &DatasetSpec) -> Vec<String> {
    spec.components.iter().map(|c| c.name.clone()).collect()
}

/// Refuses to write over any input file.
fn check_output(out: &Path, inputs: &[Option<&PathBuf>]) -> Result<()> {
    let Ok(target) = out.canonicalize() else {
        return Ok(());
    };
    for input in inputs.iter().flatten() {
        if input.canonicalize().is_ok_and(|p| p == target) {
            return Err(Error::spec(
                out.display().to_string(),
                "output path is also an input file",
            ));
        }
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str, inputs: &[Option<&PathBuf>]) -> Result<()> {
    match out {
        Some(path) => {
            check_output(path, inputs)?;
            export::write_text(path, text)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
            {
                // A closed pipe (e.g. `| head`) just ends the output.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

/// Reads observed points: one point per line, comma separated. Blank lines,
/// `#` comments and a non-numeric header line are skipped.
pub fn read_observation(path: &Path) -> Result<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => points.push(DVector::from_vec(v)),
            Err(_) if points.is_empty() && n == 0 => continue,
            Err(e) => {
                return Err(Error::spec(
                    format!("{}:{}", path.display(), n + 1),
                    format!("not a list of numbers ({e})"),
                ))
            }
        }
    }
    if points.is_empty() {
        return Err(Error::spec(
            path.display().to_string(),
            "no observed points",
        ));
    }
    Ok(points)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            spec,
            count,
            length,
            out,
        } => {
            let ds = load_spec(&spec)?;
            let prior = ds.prior()?;
            let length = length.unwrap_or(prior.min_length());
            let trajectories = sample_dataset(&prior, count, ds.seed, length)?;
            emit(
                out.as_deref(),
                &export::samples_csv(&trajectories),
                &[spec.spec.as_ref()],
            )
        }
        Command::Prior { spec, out } => {
            let ds = load_spec(&spec)?;
            let text = export::prior_json(&ds.prior()?, &names(&ds))?;
            emit(out.as_deref(), &text, &[spec.spec.as_ref()])
        }
        Command::Posterior {
            spec,
            observation,
            n_pred,
            out,
        } => {
            let ds = load_spec(&spec)?;
            let prior = ds.prior()?;
            let obs = read_observation(&observation)?;
            let offsets = match_subsequence_within(&prior, &obs, n_pred)?;
            let posterior = ground_truth_posterior(&prior, &obs, &offsets, n_pred)?;
            let text = export::mixture_json(&posterior, prior.dim())?;
            emit(
                out.as_deref(),
                &text,
                &[spec.spec.as_ref(), Some(&observation)],
            )
        }
        Command::Evaluate {
            spec,
            config,
            predictor,
            metric,
            projections,
            samples,
            p_order,
            out,
            timing_out,
        } => {
            let ds = load_spec(&spec)?;
            let mut cfg = match &config {
                Some(path) => EvalConfig::load(path)?,
                None => EvalConfig::default(),
            };
            if spec.seed.is_some() {
                cfg.seed = spec.seed;
            }
            if let Some(m) = metric {
                cfg.metric = m.into();
            }
            if let Some(v) = projections {
                cfg.swd.projections = v;
            }
            if let Some(v) = samples {
                cfg.swd.samples_per_distribution = v;
            }
            if let Some(v) = p_order {
                cfg.swd.p = v;
            }
            let mut model: Box<dyn Predictor> = match predictor {
                PredictorKind::Oracle => {
                    let prior = ds.prior()?;
                    Box::new(baseline_oracle(prior.truncated(prior.min_length())?))
                }
                PredictorKind::Cv => Box::new(baseline_constant_velocity(cfg.cv_sigma)),
            };
            let eval = run_eval(&ds, &cfg, model.as_mut())?;
            let inputs = [spec.spec.as_ref(), config.as_ref()];
            emit(out.as_deref(), &export::to_json(&eval.report)?, &inputs)?;
            let t = eval.timing;
            eprintln!(
                "{}: aggregate nll {} swd {}; metric time nll {:.6} s, swd {:.6} s{}",
                eval.report.predictor,
                fmt_opt(eval.report.aggregate.nll),
                fmt_opt(eval.report.aggregate.swd),
                t.nll_seconds,
                t.swd_seconds,
                t.ratio()
                    .map(|r| format!(" (swd/nll {r:.1}x)"))
                    .unwrap_or_default()
            );
            if let Some(path) = timing_out {
                check_output(&path, &inputs)?;
                export::write_text(&path, &export::to_json(&t)?)?;
            }
            Ok(())
        }
        Command::ExportPlotData {
            spec,
            out,
            count,
            observation,
            n_pred,
            report,
        } => {
            let ds = load_spec(&spec)?;
            let prior = ds.prior()?;
            let samples = sample_dataset(&prior, count, ds.seed, prior.min_length())?;
            let posterior = match &observation {
                Some(path) => {
                    let obs = read_observation(path)?;
                    let offsets = match_subsequence_within(&prior, &obs, n_pred)?;
                    Some(ground_truth_posterior(&prior, &obs, &offsets, n_pred)?)
                }
                None => None,
            };
            let report = report.as_deref().map(export::read_report).transpose()?;
            let names = names(&ds);
            let written = export::export_plot_data(
                &out,
                &PlotData {
                    prior: &prior,
                    names: &names,
                    samples: &samples,
                    posterior: posterior.as_ref(),
                    report: report.as_ref(),
                },
            )?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}
