use std::io::Write;

use pgf_disentangle::model::TestFunction;
use pgf_disentangle::pgf::PgfOracle;
use pgf_disentangle::zeros::ZeroSet;
use pgf_disentangle::C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Fixed-width scientific notation with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rectangular grid of complex `z`, traversed row by row (rows are imaginary
/// parts, ascending; columns are real parts, ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZGrid {
    pub re_min: f64,
    pub re_max: f64,
    pub re_steps: usize,
    pub im_min: f64,
    pub im_max: f64,
    pub im_steps: usize,
}

impl Default for ZGrid {
    fn default() -> Self {
        Self { re_min: -5.0, re_max: 1.0, re_steps: 61, im_min: -2.0, im_max: 2.0, im_steps: 41 }
    }
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect(),
    }
}

impl ZGrid {
    pub fn validate(&self) -> Result<(), CliError> {
        let finite = [self.re_min, self.re_max, self.im_min, self.im_max].iter().all(|v| v.is_finite());
        if !finite {
            return Err(CliError::Config("z_grid: bounds must be finite".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<C64> {
        let re = linspace(self.re_min, self.re_max, self.re_steps);
        linspace(self.im_min, self.im_max, self.im_steps)
            .into_iter()
            .flat_map(|im| re.iter().map(move |&re| C64::new(re, im)))
            .collect()
    }
}

/// CSV of `(z_re, z_im, |B|, arg B)` for `B(zφ)` over the grid.
pub fn emit_grid<W: Write>(oracle: &PgfOracle, phi: &TestFunction, grid: &ZGrid, out: W) -> Result<(), CliError> {
    grid.validate()?;
    let mut w = csv_writer(out);
    w.write_record(["z_re", "z_im", "abs_B", "arg_B"]).map_err(csv_err)?;
    for z in grid.points() {
        let b = oracle.evaluate(&phi.scaled(z))?;
        w.write_record([num(z.re), num(z.im), num(b.norm()), num(b.arg())]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV of `(z_re, z_im, B_re, B_im, stderr)` for `B(zφ)` over the grid; the
/// standard error is zero for exact functionals.
pub fn emit_values<W: Write>(oracle: &PgfOracle, phi: &TestFunction, grid: &ZGrid, out: W) -> Result<(), CliError> {
    grid.validate()?;
    let mut w = csv_writer(out);
    w.write_record(["z_re", "z_im", "B_re", "B_im", "stderr"]).map_err(csv_err)?;
    for z in grid.points() {
        let e = oracle.estimate(&phi.scaled(z))?;
        w.write_record([num(z.re), num(z.im), num(e.value.re), num(e.value.im), num(e.stderr)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `RE_MIN:RE_MAX:RE_STEPS,IM_MIN:IM_MAX:IM_STEPS`.
pub fn parse_grid(spec: &str) -> Result<ZGrid, String> {
    let axis = |part: &str| -> Result<(f64, f64, usize), String> {
        let f: Vec<&str> = part.split(':').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format!("expected MIN:MAX:STEPS, got {part:?}"));
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{v:?} is not a number"));
        let steps = f[2].parse::<usize>().map_err(|_| format!("{:?} is not a step count", f[2]))?;
        Ok((num(f[0])?, num(f[1])?, steps))
    };
    let (re, im) = spec.split_once(',').ok_or_else(|| format!("expected two axes separated by ',', got {spec:?}"))?;
    let (re_min, re_max, re_steps) = axis(re)?;
    let (im_min, im_max, im_steps) = axis(im)?;
    Ok(ZGrid { re_min, re_max, re_steps, im_min, im_max, im_steps })
}

/// CSV of `(zero_re, zero_im, multiplicity, residual)`.
pub fn write_zeros<W: Write>(zeros: &ZeroSet, out: W) -> Result<(), CliError> {
    let mut w = csv_writer(out);
    w.write_record(["zero_re", "zero_im", "multiplicity", "residual"]).map_err(csv_err)?;
    for z in &zeros.zeros {
        w.write_record([num(z.value.re), num(z.value.im), z.multiplicity.to_string(), num(z.residual)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Output(e.to_string())
}
