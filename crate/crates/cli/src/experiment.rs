use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pgf_disentangle::config::{json_error, ModelFile};
use pgf_disentangle::disentangle::{
    disentangle, factor_at, model_principal_minor, model_window_spectrum, DisentangleOptions, DisentangleResult,
    Uncertainty,
};
use pgf_disentangle::model::{indicator, GroundSpace, ProcessModel};
use pgf_disentangle::pgf::PgfOracle;
use pgf_disentangle::samplers::{sample_batch, RngState, SampleBatch};
use pgf_disentangle::zeros::multiset_distance;
use serde::{Deserialize, Serialize};

use crate::output::{emit_grid, num, write_zeros, ZGrid};
use crate::{CliError, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiGridSpec {
    pub size: usize,
    pub low: f64,
    pub high: f64,
    pub seed: u64,
}

impl Default for PhiGridSpec {
    fn default() -> Self {
        let d = DisentangleOptions::default();
        Self { size: d.grid_size, low: d.grid_low, high: d.grid_high, seed: d.grid_seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMode {
    None,
    #[default]
    Delta,
    Bootstrap,
}

/// Check thresholds and algorithm overrides, settable as `key=value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    /// Exact mode: absolute error of each recovered density.
    pub nu: f64,
    /// Exact mode: distance between recovered and true window spectra.
    pub spectra: f64,
    /// Exact mode: absolute error of each principal minor.
    pub minors: f64,
    /// Exact mode: largest factorization residual on the grid.
    pub residual: f64,
    /// Empirical mode: allowed error in units of the reported standard error.
    pub sigmas: f64,
    pub stderr_cap: f64,
    pub quadrature_tol: f64,
    pub winding_tol: f64,
    pub merge_tol: f64,
    pub max_radius: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = DisentangleOptions::default();
        Self {
            nu: 1e-7,
            spectra: 1e-6,
            minors: 1e-7,
            residual: 1e-8,
            sigmas: 5.0,
            stderr_cap: d.stderr_cap,
            quadrature_tol: d.contour.quadrature_tol,
            winding_tol: d.contour.winding_tol,
            merge_tol: d.contour.merge_tol,
            max_radius: d.max_radius,
        }
    }
}

impl Tolerances {
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), CliError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(CliError::Config(format!("tolerance {key}: {value} is not a positive number")));
        }
        let slot = match key {
            "nu" => &mut self.nu,
            "spectra" => &mut self.spectra,
            "minors" => &mut self.minors,
            "residual" => &mut self.residual,
            "sigmas" => &mut self.sigmas,
            "stderr_cap" => &mut self.stderr_cap,
            "quadrature_tol" => &mut self.quadrature_tol,
            "winding_tol" => &mut self.winding_tol,
            "merge_tol" => &mut self.merge_tol,
            "max_radius" => &mut self.max_radius,
            _ => return Err(CliError::Config(format!("unknown tolerance key {key:?}"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Experiment file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: ModelFile,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub phi_grid: PhiGridSpec,
    #[serde(default)]
    pub z_grid: ZGrid,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Tolerance checks; on by default in exact mode only.
    #[serde(default)]
    pub checks: Option<bool>,
    #[serde(default)]
    pub uncertainty: UncertaintyMode,
    #[serde(default)]
    pub bootstrap_resamples: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentFile {
    /// An experiment file, or a bare model file with default settings.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::from(json_error(&e)))?;
        if value.get("process").is_some() {
            let model = ModelFile::parse(text)?;
            return Ok(Self::bare(model));
        }
        serde_json::from_str(text).map_err(|e| json_error(&e).into())
    }

    fn bare(model: ModelFile) -> Self {
        Self {
            model,
            mode: None,
            samples: None,
            seed: None,
            phi_grid: PhiGridSpec::default(),
            z_grid: ZGrid::default(),
            tolerances: BTreeMap::new(),
            checks: None,
            uncertainty: UncertaintyMode::default(),
            bootstrap_resamples: None,
            out: None,
        }
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tolerances: Vec<(String, f64)>,
    pub checks: Option<bool>,
    pub uncertainty: Option<UncertaintyMode>,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub space: GroundSpace,
    pub model: ProcessModel,
    pub mode: Mode,
    pub samples: usize,
    pub seed: u64,
    pub phi_grid: PhiGridSpec,
    pub z_grid: ZGrid,
    pub out: PathBuf,
    pub tolerances: Tolerances,
    pub checks: bool,
    pub uncertainty: Uncertainty,
}

impl ExperimentConfig {
    pub fn resolve(file: ExperimentFile, o: Overrides) -> Result<Self, CliError> {
        let (space, model) = file.model.build()?;
        let mode = o.mode.or(file.mode).unwrap_or(Mode::Exact);
        let seed = o.seed.or(file.seed).ok_or_else(|| CliError::Config("seed: a seed is required".into()))?;
        let samples = o.samples.or(file.samples).unwrap_or(0);
        if mode == Mode::Empirical && samples == 0 {
            return Err(CliError::Config("samples: empirical mode needs at least one sample".into()));
        }
        let out = o.out.or(file.out).ok_or_else(|| CliError::Config("out: an output directory is required".into()))?;
        let mut tolerances = Tolerances::default();
        for (k, v) in file.tolerances.iter().map(|(k, v)| (k.clone(), *v)).chain(o.tolerances) {
            tolerances.set(&k, v)?;
        }
        if file.phi_grid.low > file.phi_grid.high || !file.phi_grid.low.is_finite() || !file.phi_grid.high.is_finite() {
            return Err(CliError::Config("phi_grid: need finite low <= high".into()));
        }
        file.z_grid.validate()?;
        let uncertainty = match o.uncertainty.unwrap_or(file.uncertainty) {
            UncertaintyMode::None => Uncertainty::None,
            UncertaintyMode::Delta => Uncertainty::Delta,
            UncertaintyMode::Bootstrap => {
                Uncertainty::Bootstrap { resamples: file.bootstrap_resamples.unwrap_or(200), seed }
            }
        };
        let checks = o.checks.or(file.checks).unwrap_or(mode == Mode::Exact);
        Ok(Self {
            space,
            model,
            mode,
            samples,
            seed,
            phi_grid: file.phi_grid,
            z_grid: file.z_grid,
            out,
            tolerances,
            checks,
            uncertainty,
        })
    }

    pub fn options(&self) -> DisentangleOptions {
        disentangle_options(&self.tolerances, &self.phi_grid, self.uncertainty, self.seed)
    }
}

pub fn disentangle_options(t: &Tolerances, grid: &PhiGridSpec, uncertainty: Uncertainty, seed: u64) -> DisentangleOptions {
    let mut opts = DisentangleOptions {
        stderr_cap: t.stderr_cap,
        max_radius: t.max_radius,
        grid_size: grid.size,
        grid_low: grid.low,
        grid_high: grid.high,
        grid_seed: grid.seed,
        uncertainty,
        uncertainty_seed: seed,
        ..DisentangleOptions::default()
    };
    opts.contour.quadrature_tol = t.quadrature_tol;
    opts.contour.winding_tol = t.winding_tol;
    opts.contour.merge_tol = t.merge_tol;
    opts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub result: DisentangleResult,
    pub checks: Vec<CheckRow>,
    pub summary: String,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const SAMPLES_FILE: &str = "samples.csv";
pub const PGF_FILE: &str = "pgf.csv";
pub const ZEROS_FILE: &str = "zeros.csv";
pub const RESULT_FILE: &str = "result.json";
pub const SUMMARY_FILE: &str = "summary.txt";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Runs the experiment and writes every artifact under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    fs::create_dir_all(&config.out).map_err(|e| CliError::Output(format!("{}: {e}", config.out.display())))?;
    let n = config.space.len();
    let (oracle, batch) = match config.mode {
        Mode::Exact => (PgfOracle::from_model(&config.model), None),
        Mode::Empirical => {
            let batch = sample_batch(&config.model, config.samples, &RngState::new(config.seed, 0))?;
            batch.write_csv(config.space.labels(), create(&config.out, SAMPLES_FILE)?)?;
            (PgfOracle::empirical(&batch)?, Some(batch))
        }
    };
    let full = indicator(&config.space, &(0..n).collect::<Vec<_>>())?;
    emit_grid(&oracle, &full, &config.z_grid, create(&config.out, PGF_FILE)?)?;

    let opts = config.options();
    let result = disentangle(&oracle, &config.space, &opts)?;
    let all: Vec<usize> = (0..n).collect();
    let zeros = match result.window_spectra.iter().find(|s| s.window == all) {
        Some(s) => s.zeros.clone(),
        None => factor_at(&oracle, &full, Some(n), &opts)?.zeros,
    };
    write_zeros(&zeros, create(&config.out, ZEROS_FILE)?)?;
    write_json(&result, create(&config.out, RESULT_FILE)?)?;

    let checks = if config.checks { run_checks(config, &result) } else { Vec::new() };
    let summary = summary(config, batch.as_ref(), &result, &checks);
    std::io::Write::write_all(&mut create(&config.out, SUMMARY_FILE)?, summary.as_bytes())?;
    Ok(ExperimentReport { result, checks, summary })
}

pub fn write_json<T: Serialize, W: std::io::Write>(value: &T, mut out: W) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Output(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Truth-versus-recovered checks. Exact mode compares absolute errors with
/// the tolerances; empirical mode compares errors with `sigmas` standard
/// errors.
pub fn run_checks(config: &ExperimentConfig, result: &DisentangleResult) -> Vec<CheckRow> {
    let t = &config.tolerances;
    let empirical = config.mode == Mode::Empirical;
    let mut rows = Vec::new();
    let mut push = |name: String, error: f64, tolerance: f64| {
        rows.push(CheckRow { passed: error <= tolerance, name, error, tolerance });
    };
    for field in result.diagnostics.failures.keys() {
        push(format!("failure:{field}"), f64::INFINITY, 0.0);
    }

    let truth_nu = config.model.poisson_part().map(|nu| nu.density().to_vec()).ok();
    match (&result.recovered_nu, truth_nu) {
        (Some(nu), Some(truth)) => {
            for (i, (v, tv)) in nu.iter().zip(&truth).enumerate() {
                let err = (v - tv).abs();
                let name = format!("nu[{}]", config.space.labels()[i]);
                match (empirical, &result.nu_stderr) {
                    (false, _) => push(name, err, t.nu),
                    (true, Some(se)) => push(name, z_score(err, se[i]), t.sigmas),
                    (true, None) => push(name, f64::INFINITY, t.sigmas),
                }
            }
        }
        _ => push("nu".into(), f64::INFINITY, t.nu),
    }

    for s in &result.window_spectra {
        let name = format!("spectrum{:?}", s.window);
        let Ok(truth) = model_window_spectrum(&config.model, &s.window) else {
            push(name, f64::INFINITY, t.spectra);
            continue;
        };
        if !empirical {
            push(name, multiset_distance(&s.eigenvalues, &truth).unwrap_or(f64::INFINITY), t.spectra);
            continue;
        }
        let z = match (&s.stderr, s.eigenvalues.len() == truth.len()) {
            (Some(se), true) => {
                s.eigenvalues.iter().zip(&truth).zip(se).map(|((v, tv), e)| z_score((v - tv).norm(), *e)).fold(0.0, f64::max)
            }
            _ => f64::INFINITY,
        };
        push(name, z, t.sigmas);
    }

    if let Some(minors) = &result.principal_minors {
        let mut worst = 0.0f64;
        let mut comparable = true;
        for m in minors {
            let Some(truth) = model_principal_minor(&config.model, &m.subset) else {
                comparable = false;
                break;
            };
            let err = (m.value - truth).norm();
            worst = worst.max(if empirical { m.stderr.map_or(f64::INFINITY, |se| z_score(err, se)) } else { err });
        }
        if comparable {
            push("principal_minors".into(), worst, if empirical { t.sigmas } else { t.minors });
        }
    }

    if !empirical {
        push("factorization_residual".into(), result.diagnostics.max_residual, t.residual);
    }
    rows
}

fn z_score(err: f64, stderr: f64) -> f64 {
    if err == 0.0 {
        0.0
    } else if stderr > 0.0 {
        err / stderr
    } else {
        f64::INFINITY
    }
}

/// Relative standard error above which the report calls the uncertainty wide.
pub const WIDE_UNCERTAINTY: f64 = 0.25;

fn summary(config: &ExperimentConfig, batch: Option<&SampleBatch>, r: &DisentangleResult, checks: &[CheckRow]) -> String {
    let mut s = String::new();
    let labels = config.space.labels();
    let _ = writeln!(s, "mode: {}", config.mode.as_str());
    let _ = writeln!(s, "model digest: {}", config.model.digest());
    let _ = writeln!(s, "seed: {}", config.seed);
    if let Some(b) = batch {
        let _ = writeln!(s, "samples: {}", b.len());
    }
    let _ = writeln!(s);

    let truth_nu = config.model.poisson_part().ok();
    let _ = writeln!(s, "intensity (density per atom)");
    let _ = writeln!(s, "{:<12} {:>24} {:>24} {:>24} {:>24}", "atom", "true", "recovered", "abs error", "stderr");
    match &r.recovered_nu {
        Some(nu) => {
            for (i, v) in nu.iter().enumerate() {
                let tv = truth_nu.as_ref().map(|t| t.density()[i]);
                let se = r.nu_stderr.as_ref().map(|se| se[i]);
                let err = tv.map(|t| (v - t).abs());
                let _ = writeln!(s, "{:<12} {:>24} {:>24} {:>24} {:>24}", labels[i], opt(tv), num(*v), opt(err), opt(se));
            }
        }
        None => {
            let _ = writeln!(s, "not recovered");
        }
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "window spectra");
    let _ = writeln!(s, "  {:>24} {:>24} {:>24} {:>24}", "true", "recovered re", "recovered im", "stderr");
    for w in &r.window_spectra {
        let names: Vec<&str> = w.window.iter().map(|&i| labels[i].as_str()).collect();
        let truth = model_window_spectrum(&config.model, &w.window).unwrap_or_default();
        let _ = writeln!(s, "window {{{}}}", names.join(", "));
        for (k, ev) in w.eigenvalues.iter().enumerate() {
            let tv = truth.get(k).map_or("n/a".to_string(), |t| num(t.re));
            let se = w.stderr.as_ref().map(|se| se[k]);
            let _ = writeln!(s, "  {:>24} {:>24} {:>24} {:>24}", tv, num(ev.re), num(ev.im), opt(se));
        }
        if w.eigenvalues.is_empty() {
            let _ = writeln!(s, "  (empty)");
        }
    }
    let _ = writeln!(s);

    if let Some(minors) = &r.principal_minors {
        let _ = writeln!(s, "principal minors");
        let _ = writeln!(s, "{:<24} {:>24} {:>24} {:>24} {:>24}", "subset", "true", "recovered", "abs error", "stderr");
        for m in minors {
            let names: Vec<&str> = m.subset.iter().map(|&i| labels[i].as_str()).collect();
            let truth = model_principal_minor(&config.model, &m.subset);
            let (tv, err) = truth.map_or(("n/a".to_string(), "n/a".to_string()), |t| (num(t.re), num((m.value - t).norm())));
            let _ = writeln!(
                s,
                "{:<24} {:>24} {:>24} {:>24} {:>24}",
                format!("{{{}}}", names.join(",")),
                tv,
                num(m.value.re),
                err,
                opt(m.stderr)
            );
        }
        let _ = writeln!(s);
    }

    let d = &r.diagnostics;
    let _ = writeln!(s, "diagnostics");
    let _ = writeln!(s, "  max factorization residual: {}", num(d.max_residual));
    let _ = writeln!(s, "  max |Im log B_N|: {}", num(d.max_log_imag));
    let _ = writeln!(s, "  max winding residual: {}", num(d.max_winding_residual));
    let _ = writeln!(s, "  uncertainty replicates: {}", d.uncertainty_replicates);
    if d.variance_warning {
        let _ = writeln!(s, "  warning: some evaluations left the variance-safe region");
    }
    if !d.negative_nu.is_empty() {
        let _ = writeln!(s, "  warning: negative recovered density at atoms {:?}", d.negative_nu);
    }
    for (field, msg) in &d.failures {
        let _ = writeln!(s, "  failed {field}: {msg}");
    }
    if config.mode == Mode::Empirical && wide_uncertainty(r) {
        let _ = writeln!(s, "  WIDE UNCERTAINTY: some recovered quantity has relative stderr above {WIDE_UNCERTAINTY}, no error estimate, or an evaluation outside the variance-safe region");
    }
    let _ = writeln!(s);

    if checks.is_empty() {
        let _ = writeln!(s, "checks: disabled");
    } else {
        let _ = writeln!(s, "checks");
        for c in checks {
            let _ = writeln!(
                s,
                "  {:<6} {:<32} {:>24} <= {:>24}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                num(c.error),
                num(c.tolerance)
            );
        }
        let _ = writeln!(s, "overall: {}", if checks.iter().all(|c| c.passed) { "PASS" } else { "FAIL" });
    }
    s
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".to_string(), num)
}

fn wide_uncertainty(r: &DisentangleResult) -> bool {
    let rel = |v: f64, se: f64| !(se.is_finite()) || se > WIDE_UNCERTAINTY * v.abs().max(1e-3);
    let nu_wide = match (&r.recovered_nu, &r.nu_stderr) {
        (Some(nu), Some(se)) => nu.iter().zip(se).any(|(v, e)| rel(*v, *e)),
        _ => true,
    };
    let spectra_wide = r.window_spectra.iter().any(|w| match &w.stderr {
        Some(se) => w.eigenvalues.iter().zip(se).any(|(v, e)| rel(v.norm(), *e)),
        None => !w.eigenvalues.is_empty(),
    });
    nu_wide || spectra_wide || r.diagnostics.variance_warning || !r.diagnostics.failures.is_empty()
}
