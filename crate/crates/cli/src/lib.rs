//! Command-line front end: simulation, functional evaluation, zero finding,
//! disentanglement and full experiments with reproducible artifacts.
//!
//! Exit codes: 0 success, 1 a tolerance check failed, 2 configuration or
//! input error, 3 numerical failure.

pub mod experiment;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgf_disentangle::disentangle::{disentangle, factor_at, DisentangleOptions};
use pgf_disentangle::model::{indicator, GroundSpace, ProcessModel, TestFunction};
use pgf_disentangle::pgf::PgfOracle;
use pgf_disentangle::samplers::{sample_batch, RngState, SampleBatch};
use pgf_disentangle::Error as CoreError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use experiment::{
    disentangle_options, run_experiment, write_json, ExperimentConfig, ExperimentFile, Overrides, Tolerances,
    UncertaintyMode,
};
use output::{emit_values, write_zeros};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "PGF_DISENTANGLE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("tolerance exceeded: {0}")]
    ToleranceExceeded(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ToleranceExceeded(_) => 1,
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(msg) => CliError::Config(msg),
            CoreError::InvalidSpace(_)
            | CoreError::IndexOutOfRange { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::InvalidIntensity(_)
            | CoreError::InvalidKernel(_)
            | CoreError::InvalidModel(_)
            | CoreError::TooLarge { .. }
            | CoreError::EmptyBatch
            | CoreError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Empirical,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pgf-disentangle", version, about = "Separate Poisson and determinantal parts of a superposed point process")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Model file, or experiment file with an embedded model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of samples drawn in empirical mode.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Tolerance or algorithm override, repeatable.
    #[arg(long = "tolerance", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub tolerance: Vec<(String, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples from a model and write them as CSV.
    Simulate(Common),
    /// Evaluate z -> B(z phi) with its standard error over a z-grid.
    Pgf {
        #[command(flatten)]
        common: Common,
        /// Comma-separated test function values (default: all ones).
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<String>,
        /// Sample CSV for empirical mode.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Grid as RE_MIN:RE_MAX:RE_STEPS,IM_MIN:IM_MAX:IM_STEPS (default: the
        /// config's z_grid).
        #[arg(long, allow_hyphen_values = true, value_parser = output::parse_grid)]
        z_grid: Option<output::ZGrid>,
    },
    /// Zeros of z -> B(z phi) as CSV.
    Zeros {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<String>,
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Recover both component laws from the functional.
    Disentangle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long, value_enum)]
        uncertainty: Option<UncertaintyMode>,
    },
    /// Full experiment: samples, functional grid, zeros, result and report.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        uncertainty: Option<UncertaintyMode>,
        /// Force tolerance checks on.
        #[arg(long, conflicts_with = "no_checks")]
        checks: bool,
        /// Force tolerance checks off.
        #[arg(long)]
        no_checks: bool,
    },
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("{v:?} is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// Parses arguments, runs, prints diagnostics and returns the exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        Err(_) => flag,
    };
    if let Some(t) = threads {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(c) => simulate(&c, out),
        Command::Pgf { common, phi, batch, z_grid } => pgf(&common, phi.as_deref(), batch.as_deref(), z_grid, out),
        Command::Zeros { common, phi, batch } => zeros(&common, phi.as_deref(), batch.as_deref(), out),
        Command::Disentangle { common, batch, uncertainty } => disentangle_cmd(&common, batch.as_deref(), uncertainty, out),
        Command::Experiment { common, uncertainty, checks, no_checks } => {
            let checks = if checks {
                Some(true)
            } else if no_checks {
                Some(false)
            } else {
                None
            };
            experiment_cmd(&common, uncertainty, checks, out)
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Model, space and file settings from `--config`, and the batch from
/// `--batch`, checked against each other.
struct Inputs {
    file: Option<ExperimentFile>,
    space: GroundSpace,
    model: Option<ProcessModel>,
    batch: Option<SampleBatch>,
}

fn load_inputs(common: &Common, batch: Option<&Path>) -> Result<Inputs, CliError> {
    let file = match &common.config {
        Some(p) => Some(ExperimentFile::parse(&read_text(p)?).map_err(|e| prefix(p, e))?),
        None => None,
    };
    let built = match &file {
        Some(f) => Some(f.model.build().map_err(|e| prefix(common.config.as_ref().expect("set"), e.into()))?),
        None => None,
    };
    let batch = match batch {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let (labels, b) = SampleBatch::read_csv(f).map_err(|e| prefix(p, e.into()))?;
            Some((labels, b))
        }
        None => None,
    };
    let (space, model) = match (built, &batch) {
        (Some((space, model)), Some((labels, _))) => {
            if labels.as_slice() != space.labels() {
                return Err(CliError::Config(format!(
                    "sample labels {labels:?} do not match the model labels {:?}",
                    space.labels()
                )));
            }
            (space, Some(model))
        }
        (Some((space, model)), None) => (space, Some(model)),
        (None, Some((labels, b))) => (GroundSpace::new(labels.clone(), vec![1.0; b.dim()])?, None),
        (None, None) => return Err(CliError::Config("--config or --batch is required".into())),
    };
    Ok(Inputs { file, space, model, batch: batch.map(|(_, b)| b) })
}

fn prefix(path: &Path, e: CliError) -> CliError {
    match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

impl Inputs {
    fn mode(&self, common: &Common) -> Mode {
        common.mode.or(self.file.as_ref().and_then(|f| f.mode)).unwrap_or(if self.model.is_none() {
            Mode::Empirical
        } else {
            Mode::Exact
        })
    }

    fn seed(&self, common: &Common) -> Result<u64, CliError> {
        common
            .seed
            .or(self.file.as_ref().and_then(|f| f.seed))
            .ok_or_else(|| CliError::Config("--seed is required for sampling".into()))
    }

    fn samples(&self, common: &Common) -> Result<usize, CliError> {
        match common.samples.or(self.file.as_ref().and_then(|f| f.samples)) {
            Some(m) if m >= 1 => Ok(m),
            _ => Err(CliError::Config("--samples must be at least 1 for sampling".into())),
        }
    }

    fn model(&self) -> Result<&ProcessModel, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("this command needs a model (--config)".into()))
    }

    fn draw(&self, common: &Common) -> Result<SampleBatch, CliError> {
        Ok(sample_batch(self.model()?, self.samples(common)?, &RngState::new(self.seed(common)?, 0))?)
    }

    fn oracle(&self, common: &Common) -> Result<PgfOracle, CliError> {
        match self.mode(common) {
            Mode::Exact => Ok(PgfOracle::from_model(self.model()?)),
            Mode::Empirical => match &self.batch {
                Some(b) => Ok(PgfOracle::empirical(b)?),
                None => Ok(PgfOracle::empirical(&self.draw(common)?)?),
            },
        }
    }

    fn tolerances(&self, common: &Common) -> Result<Tolerances, CliError> {
        let mut t = Tolerances::default();
        let from_file = self.file.iter().flat_map(|f| f.tolerances.iter().map(|(k, v)| (k.clone(), *v)));
        for (k, v) in from_file.chain(common.tolerance.iter().cloned()) {
            t.set(&k, v)?;
        }
        Ok(t)
    }

    fn options(&self, common: &Common, uncertainty: Option<UncertaintyMode>) -> Result<DisentangleOptions, CliError> {
        let grid = self.file.as_ref().map(|f| f.phi_grid.clone()).unwrap_or_default();
        let u = match uncertainty.or(self.file.as_ref().map(|f| f.uncertainty)).unwrap_or_default() {
            UncertaintyMode::None => pgf_disentangle::disentangle::Uncertainty::None,
            UncertaintyMode::Delta => pgf_disentangle::disentangle::Uncertainty::Delta,
            UncertaintyMode::Bootstrap => pgf_disentangle::disentangle::Uncertainty::Bootstrap {
                resamples: self.file.as_ref().and_then(|f| f.bootstrap_resamples).unwrap_or(200),
                seed: common.seed.unwrap_or(0),
            },
        };
        Ok(disentangle_options(&self.tolerances(common)?, &grid, u, common.seed.unwrap_or(0)))
    }

    fn phi(&self, spec: Option<&str>) -> Result<TestFunction, CliError> {
        let n = self.space.len();
        match spec {
            None => Ok(indicator(&self.space, &(0..n).collect::<Vec<_>>())?),
            Some(s) => {
                let values = s
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--phi: {v:?} is not a number"))))
                    .collect::<Result<Vec<f64>, _>>()?;
                if values.len() != n {
                    return Err(CliError::Config(format!("--phi has {} values for {n} atoms", values.len())));
                }
                Ok(TestFunction::from_real(&values)?)
            }
        }
    }
}

fn out_dir(common: &Common) -> Result<Option<PathBuf>, CliError> {
    match &common.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| CliError::Output(format!("{}: {e}", d.display())))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>, CliError> {
    let p = dir.join(name);
    fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
}

fn simulate(common: &Common, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = load_inputs(common, None)?;
    let batch = inputs.draw(common)?;
    match out_dir(common)? {
        Some(dir) => {
            batch.write_csv(inputs.space.labels(), create(&dir, experiment::SAMPLES_FILE)?)?;
            writeln!(out, "wrote {} samples to {}", batch.len(), dir.join(experiment::SAMPLES_FILE).display())?;
        }
        None => batch.write_csv(inputs.space.labels(), &mut *out)?,
    }
    Ok(())
}

fn pgf(
    common: &Common,
    phi: Option<&str>,
    batch: Option<&Path>,
    grid: Option<output::ZGrid>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let inputs = load_inputs(common, batch)?;
    let oracle = inputs.oracle(common)?;
    let phi = inputs.phi(phi)?;
    let grid = grid.or_else(|| inputs.file.as_ref().map(|f| f.z_grid.clone())).unwrap_or_default();
    match out_dir(common)? {
        Some(dir) => emit_values(&oracle, &phi, &grid, create(&dir, experiment::PGF_FILE)?),
        None => emit_values(&oracle, &phi, &grid, out),
    }
}

fn zeros(common: &Common, phi: Option<&str>, batch: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = load_inputs(common, batch)?;
    let oracle = inputs.oracle(common)?;
    let phi = inputs.phi(phi)?;
    let opts = inputs.options(common, Some(UncertaintyMode::None))?;
    let fac = factor_at(&oracle, &phi, Some(phi.support().len()), &opts)?;
    match out_dir(common)? {
        Some(dir) => write_zeros(&fac.zeros, create(&dir, experiment::ZEROS_FILE)?),
        None => write_zeros(&fac.zeros, out),
    }
}

fn disentangle_cmd(
    common: &Common,
    batch: Option<&Path>,
    uncertainty: Option<UncertaintyMode>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let inputs = load_inputs(common, batch)?;
    let oracle = inputs.oracle(common)?;
    let opts = inputs.options(common, uncertainty)?;
    let result = disentangle(&oracle, &inputs.space, &opts)?;
    match out_dir(common)? {
        Some(dir) => {
            write_json(&result, create(&dir, experiment::RESULT_FILE)?)?;
            writeln!(out, "wrote {}", dir.join(experiment::RESULT_FILE).display())?;
        }
        None => write_json(&result, &mut *out)?,
    }
    Ok(())
}

fn experiment_cmd(
    common: &Common,
    uncertainty: Option<UncertaintyMode>,
    checks: Option<bool>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let path = common.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let file = ExperimentFile::parse(&read_text(path)?).map_err(|e| prefix(path, e))?;
    let overrides = Overrides {
        mode: common.mode,
        samples: common.samples,
        seed: common.seed,
        out: common.out.clone(),
        tolerances: common.tolerance.clone(),
        checks,
        uncertainty,
    };
    let config = ExperimentConfig::resolve(file, overrides).map_err(|e| prefix(path, e))?;
    let report = run_experiment(&config)?;
    out.write_all(report.summary.as_bytes())?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::ToleranceExceeded(failed.join(", ")))
    }
}
