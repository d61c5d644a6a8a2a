//! Probability generating functionals `B(φ) = E ∏ (1 + φ(x))^{ξ({x})}`,
//! exact and empirical, and their restriction to rays `z ↦ B(zφ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::linalg;
use crate::model::{IntensityMeasure, Kernel, PointConfiguration, ProcessModel, TestFunction};
use crate::samplers::SampleBatch;
use crate::zeros::AnalyticFunction;
use crate::{Error, Result, C64};

/// Default slack `η` of the variance-safe region `|1 + φ| ≤ 1 + η`.
pub const DEFAULT_VARIANCE_SLACK: f64 = 0.2;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// `exp(Σ φ(i) ν({i}))`.
pub fn pgf_poisson(nu: &IntensityMeasure, phi: &TestFunction) -> C64 {
    poisson_exponent(nu, phi).exp()
}

fn poisson_exponent(nu: &IntensityMeasure, phi: &TestFunction) -> C64 {
    phi.support().iter().map(|&i| phi.values()[i] * nu.mass(i)).sum()
}

/// `det(I + φ K 1_S)` over the essential support `S` of `φ`.
pub fn pgf_dpp(k: &Kernel, phi: &TestFunction) -> C64 {
    let t = k.compressed(phi);
    let n = t.nrows();
    linalg::determinant(&(DMatrix::identity(n, n) + t))
}

/// Product of the factor functionals at `φ`.
pub fn pgf_superposition(factors: &[PgfOracle], phi: &TestFunction) -> Result<C64> {
    if factors.is_empty() {
        return Err(Error::InvalidModel("superposition needs at least one factor".into()));
    }
    factors.iter().try_fold(ONE, |acc, f| Ok(acc * f.evaluate(phi)?))
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgfEstimate {
    pub value: C64,
    pub stderr: f64,
    /// Set when `φ` leaves the variance-safe region.
    pub variance_warning: bool,
}

/// Sample mean of `∏ (1 + φ(i))^{counts[i]}` over the batch.
pub fn pgf_empirical(batch: &SampleBatch, phi: &TestFunction) -> Result<PgfEstimate> {
    EmpiricalPgf::from_batch(batch)?.estimate(phi)
}

/// Empirical law of a batch, stored as distinct configurations with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPgf {
    configs: Vec<PointConfiguration>,
    weights: Vec<f64>,
    sample_count: usize,
    dim: usize,
    variance_slack: f64,
}

impl EmpiricalPgf {
    pub fn from_batch(batch: &SampleBatch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let m = batch.len() as f64;
        let (configs, weights) = batch.distinct().into_iter().map(|(c, k)| (c, k as f64 / m)).unzip();
        Ok(Self {
            configs,
            weights,
            sample_count: batch.len(),
            dim: batch.dim(),
            variance_slack: DEFAULT_VARIANCE_SLACK,
        })
    }

    pub fn with_variance_slack(mut self, eta: f64) -> Self {
        self.variance_slack = eta;
        self
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn configs(&self) -> &[PointConfiguration] {
        &self.configs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same configurations under new (normalised) weights; used by the
    /// influence-function and bootstrap error estimates.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.configs.len() {
            return Err(Error::DimensionMismatch { expected: self.configs.len(), actual: weights.len() });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { weights: weights.into_iter().map(|w| w / total).collect(), ..self.clone() })
    }

    fn term(config: &PointConfiguration, phi: &TestFunction) -> C64 {
        phi.support().iter().fold(ONE, |acc, &i| {
            let c = config.counts[i];
            if c == 0 {
                acc
            } else {
                acc * (ONE + phi.values()[i]).powu(c)
            }
        })
    }

    pub fn value(&self, phi: &TestFunction) -> C64 {
        if phi.support().is_empty() {
            return ONE;
        }
        let terms: Vec<C64> = self
            .configs
            .par_iter()
            .zip(self.weights.par_iter())
            .map(|(c, &w)| Self::term(c, phi) * w)
            .collect();
        pairwise_sum(&terms)
    }

    pub fn estimate(&self, phi: &TestFunction) -> Result<PgfEstimate> {
        if phi.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: phi.len() });
        }
        let variance_warning = phi.values().iter().any(|p| (ONE + p).norm() > 1.0 + self.variance_slack);
        if phi.support().is_empty() {
            return Ok(PgfEstimate { value: ONE, stderr: 0.0, variance_warning });
        }
        let value = self.value(phi);
        let dev: Vec<C64> = self
            .configs
            .par_iter()
            .zip(self.weights.par_iter())
            .map(|(c, &w)| C64::new((Self::term(c, phi) - value).norm_sqr() * w, 0.0))
            .collect();
        let m = self.sample_count as f64;
        let var = if self.sample_count > 1 { pairwise_sum(&dev).re * m / (m - 1.0) } else { 0.0 };
        Ok(PgfEstimate { value, stderr: (var / m).sqrt(), variance_warning })
    }

    /// `(X(z), X'(z))` for the `idx`-th configuration, where
    /// `X(z) = ∏ (1 + zφ(i))^{counts[i]}`.
    pub fn term_with_derivative(&self, idx: usize, phi: &TestFunction, z: C64) -> (C64, C64) {
        let c = &self.configs[idx];
        // product rule, safe when a factor vanishes
        let mut value = ONE;
        let mut deriv = ZERO;
        for &i in phi.support() {
            let k = c.counts[i];
            if k == 0 {
                continue;
            }
            let base = ONE + z * phi.values()[i];
            let p = base.powu(k);
            let dp = phi.values()[i] * k as f64 * base.powu(k - 1);
            deriv = deriv * p + value * dp;
            value *= p;
        }
        (value, deriv)
    }

    /// `d/dz log B(zφ)`; `None` when some factor `1 + zφ(i)` vanishes.
    fn log_derivative(&self, phi: &TestFunction, z: C64) -> Option<C64> {
        let mut num = Vec::with_capacity(self.configs.len());
        let mut den = Vec::with_capacity(self.configs.len());
        for (c, &w) in self.configs.iter().zip(&self.weights) {
            let mut p = C64::new(w, 0.0);
            let mut d = ZERO;
            for &i in phi.support() {
                let k = c.counts[i];
                if k == 0 {
                    continue;
                }
                let base = ONE + z * phi.values()[i];
                if base == ZERO {
                    return None;
                }
                p *= base.powu(k);
                d += phi.values()[i] * k as f64 / base;
            }
            den.push(p);
            num.push(p * d);
        }
        Some(pairwise_sum(&num) / pairwise_sum(&den))
    }
}

/// Fixed-tree summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[C64]) -> C64 {
    match xs.len() {
        0 => ZERO,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

type BlackBoxFn = dyn Fn(&TestFunction) -> C64 + Send + Sync;

/// Functional known only through evaluation.
#[derive(Clone)]
pub struct BlackBox {
    f: Arc<BlackBoxFn>,
    dim: Option<usize>,
}

impl BlackBox {
    pub fn new<F>(dim: Option<usize>, f: F) -> Self
    where
        F: Fn(&TestFunction) -> C64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), dim }
    }
}

impl fmt::Debug for BlackBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBox").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// An evaluable functional `φ ↦ B(φ)`.
#[derive(Debug, Clone)]
pub enum PgfOracle {
    ExactPoisson(IntensityMeasure),
    ExactDpp(Kernel),
    ExactProduct(Vec<PgfOracle>),
    Empirical(EmpiricalPgf),
    BlackBox(BlackBox),
}

impl PgfOracle {
    /// Exact functional of a process model.
    pub fn from_model(model: &ProcessModel) -> Self {
        match model {
            ProcessModel::Poisson(nu) => PgfOracle::ExactPoisson(nu.clone()),
            ProcessModel::Determinantal(k) => PgfOracle::ExactDpp(k.clone()),
            ProcessModel::Superposition(parts) => PgfOracle::ExactProduct(parts.iter().map(Self::from_model).collect()),
        }
    }

    pub fn empirical(batch: &SampleBatch) -> Result<Self> {
        Ok(PgfOracle::Empirical(EmpiricalPgf::from_batch(batch)?))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            PgfOracle::ExactPoisson(nu) => Some(nu.len()),
            PgfOracle::ExactDpp(k) => Some(k.dim()),
            PgfOracle::ExactProduct(parts) => parts.iter().find_map(|p| p.dim()),
            PgfOracle::Empirical(e) => Some(e.dim()),
            PgfOracle::BlackBox(b) => b.dim,
        }
    }

    pub fn is_empirical(&self) -> bool {
        match self {
            PgfOracle::Empirical(_) => true,
            PgfOracle::ExactProduct(parts) => parts.iter().any(|p| p.is_empirical()),
            _ => false,
        }
    }

    /// Upper bound on the number of zeros of `z ↦ B(zφ)`, when one is known.
    pub fn degree_bound(&self, phi: &TestFunction) -> Option<usize> {
        match self {
            PgfOracle::ExactPoisson(_) => Some(0),
            PgfOracle::ExactDpp(_) => Some(phi.support().len()),
            PgfOracle::ExactProduct(parts) => parts.iter().map(|p| p.degree_bound(phi)).sum(),
            PgfOracle::Empirical(_) | PgfOracle::BlackBox(_) => None,
        }
    }

    fn check_dim(&self, phi: &TestFunction) -> Result<()> {
        match self.dim() {
            Some(n) if n != phi.len() => Err(Error::DimensionMismatch { expected: n, actual: phi.len() }),
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, phi: &TestFunction) -> Result<C64> {
        self.check_dim(phi)?;
        Ok(self.value(phi))
    }

    pub(crate) fn value(&self, phi: &TestFunction) -> C64 {
        match self {
            PgfOracle::ExactPoisson(nu) => pgf_poisson(nu, phi),
            PgfOracle::ExactDpp(k) => pgf_dpp(k, phi),
            PgfOracle::ExactProduct(parts) => parts.iter().map(|p| p.value(phi)).product(),
            PgfOracle::Empirical(e) => e.value(phi),
            PgfOracle::BlackBox(b) => (b.f)(phi),
        }
    }

    /// Value plus standard error (zero for exact functionals).
    pub fn estimate(&self, phi: &TestFunction) -> Result<PgfEstimate> {
        self.check_dim(phi)?;
        match self {
            PgfOracle::Empirical(e) => e.estimate(phi),
            PgfOracle::ExactProduct(parts) => {
                // first-order propagation through the product
                let mut value = ONE;
                let mut rel_var = 0.0;
                let mut variance_warning = false;
                for p in parts {
                    let e = p.estimate(phi)?;
                    value *= e.value;
                    if e.stderr > 0.0 {
                        rel_var += (e.stderr / e.value.norm()).powi(2);
                    }
                    variance_warning |= e.variance_warning;
                }
                Ok(PgfEstimate { value, stderr: value.norm() * rel_var.sqrt(), variance_warning })
            }
            _ => Ok(PgfEstimate { value: self.value(phi), stderr: 0.0, variance_warning: false }),
        }
    }

    /// Analytic `d/dz log B(zφ)` when the functional provides it.
    pub fn log_derivative(&self, phi: &TestFunction, z: C64) -> Option<C64> {
        match self {
            PgfOracle::ExactPoisson(nu) => Some(poisson_exponent(nu, phi)),
            PgfOracle::ExactDpp(k) => {
                let t = k.compressed(phi);
                let n = t.nrows();
                let a = DMatrix::identity(n, n) + &t * z;
                linalg::trace_solve(&a, &t)
            }
            PgfOracle::ExactProduct(parts) => parts.iter().map(|p| p.log_derivative(phi, z)).sum(),
            PgfOracle::Empirical(e) => e.log_derivative(phi, z),
            PgfOracle::BlackBox(_) => None,
        }
    }

    /// The entire function `z ↦ B(zφ)`.
    pub fn ray<'a>(&'a self, phi: &'a TestFunction) -> Result<Ray<'a>> {
        self.check_dim(phi)?;
        Ok(Ray { oracle: self, phi, form: Arc::new(RayForm::new(self, phi)) })
    }
}

/// `B(z·φ)`.
pub fn evaluate_entire(oracle: &PgfOracle, phi: &TestFunction, z: C64) -> Result<C64> {
    oracle.check_dim(phi)?;
    Ok(oracle.value(&phi.scaled(z)))
}

/// Per-ray precomputation of the exact factors: `B(zφ) = exp(z·a)` for
/// Poisson and `det(I + zH)` for determinantal factors, with `H` a
/// Hessenberg form of the compressed kernel.
#[derive(Debug)]
enum RayForm {
    Exponential(C64),
    Determinant(DMatrix<C64>),
    Product(Vec<RayForm>),
    Direct,
}

impl RayForm {
    fn new(oracle: &PgfOracle, phi: &TestFunction) -> Self {
        match oracle {
            PgfOracle::ExactPoisson(nu) => RayForm::Exponential(poisson_exponent(nu, phi)),
            PgfOracle::ExactDpp(k) => RayForm::Determinant(linalg::hessenberg(&k.compressed(phi))),
            PgfOracle::ExactProduct(parts) => RayForm::Product(parts.iter().map(|p| RayForm::new(p, phi)).collect()),
            PgfOracle::Empirical(_) | PgfOracle::BlackBox(_) => RayForm::Direct,
        }
    }

    fn value(&self, oracle: &PgfOracle, phi: &TestFunction, z: C64) -> C64 {
        match (self, oracle) {
            (RayForm::Exponential(a), _) => (a * z).exp(),
            (RayForm::Determinant(h), _) => linalg::hessenberg_det_log_derivative(h, z).0,
            (RayForm::Product(forms), PgfOracle::ExactProduct(parts)) => {
                forms.iter().zip(parts).map(|(f, p)| f.value(p, phi, z)).product()
            }
            _ => oracle.value(&phi.scaled(z)),
        }
    }

    fn log_derivative(&self, oracle: &PgfOracle, phi: &TestFunction, z: C64) -> Option<C64> {
        match (self, oracle) {
            (RayForm::Exponential(a), _) => Some(*a),
            (RayForm::Determinant(h), _) => linalg::hessenberg_det_log_derivative(h, z).1,
            (RayForm::Product(forms), PgfOracle::ExactProduct(parts)) => {
                forms.iter().zip(parts).map(|(f, p)| f.log_derivative(p, phi, z)).sum()
            }
            _ => oracle.log_derivative(phi, z),
        }
    }
}

/// Restriction of a functional to the complex line through `φ`.
#[derive(Debug, Clone)]
pub struct Ray<'a> {
    oracle: &'a PgfOracle,
    phi: &'a TestFunction,
    form: Arc<RayForm>,
}

impl Ray<'_> {
    pub fn oracle(&self) -> &PgfOracle {
        self.oracle
    }

    pub fn phi(&self) -> &TestFunction {
        self.phi
    }

    /// Relative standard error of the estimate at `z`.
    pub fn relative_stderr(&self, z: C64) -> f64 {
        match self.oracle.estimate(&self.phi.scaled(z)) {
            Ok(e) if e.stderr == 0.0 => 0.0,
            Ok(e) => e.stderr / e.value.norm(),
            Err(_) => f64::INFINITY,
        }
    }
}

impl AnalyticFunction for Ray<'_> {
    fn value(&self, z: C64) -> C64 {
        self.form.value(self.oracle, self.phi, z)
    }

    fn log_derivative(&self, z: C64) -> Option<C64> {
        self.form.log_derivative(self.oracle, self.phi, z)
    }
}
