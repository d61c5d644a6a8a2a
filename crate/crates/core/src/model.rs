//! Domain types: finite ground spaces, intensities, kernels, test functions
//! and configurations.
//!
//! Kernels act on `L²(E, μ)`. On a finite space with weights `μ` the operator
//! with integral kernel `K(x, y)` has matrix `D^{1/2} K D^{1/2}` in the
//! orthonormal basis `δ_x / √μ(x)`, where `D = diag(μ)`. [`Kernel`] always
//! stores that operator matrix, so every determinant downstream is a plain
//! matrix determinant; [`Kernel::from_values_on`] performs the rescaling.
//! With counting measure (the default) the two coincide.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::linalg;
use crate::{Error, Result, C64};

/// Default nesting limit for superposition models.
pub const DEFAULT_MAX_DEPTH: usize = 4;

/// Numerical thresholds used when classifying kernels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelTolerances {
    /// Entrywise absolute tolerance for `K = K*`.
    pub hermitian: f64,
    /// Slack allowed outside `[0, 1]` before an eigenvalue is a violation.
    pub spectral: f64,
}

impl Default for KernelTolerances {
    fn default() -> Self {
        Self { hermitian: 1e-12, spectral: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSpace {
    labels: Vec<String>,
    mu: Vec<f64>,
}

impl GroundSpace {
    pub fn new(labels: Vec<String>, mu: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidSpace("a ground space needs at least one atom".into()));
        }
        if labels.len() != mu.len() {
            return Err(Error::InvalidSpace(format!(
                "{} labels but {} weights",
                labels.len(),
                mu.len()
            )));
        }
        if let Some((i, w)) = mu.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidSpace(format!("mu[{i}] = {w} must be finite and positive")));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, mu })
    }

    /// `n` atoms labelled `x1..xn` with unit weights.
    pub fn counting(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| format!("x{i}")).collect(), vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn is_counting(&self) -> bool {
        self.mu.iter().all(|&w| w == 1.0)
    }
}

/// Intensity `ν` given as a density against `μ`; the expected number of
/// points at atom `i` is `nu[i] * mu[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMeasure {
    nu: Vec<f64>,
    mu: Vec<f64>,
}

impl IntensityMeasure {
    /// Intensity on a counting-measure space.
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        let mu = vec![1.0; nu.len()];
        Self::with_weights(nu, mu)
    }

    pub fn on(space: &GroundSpace, nu: Vec<f64>) -> Result<Self> {
        Self::with_weights(nu, space.mu().to_vec())
    }

    fn with_weights(nu: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if nu.len() != mu.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), actual: nu.len() });
        }
        if nu.is_empty() {
            return Err(Error::InvalidIntensity("empty intensity".into()));
        }
        if let Some((i, v)) = nu.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidIntensity(format!("nu[{i}] = {v} must be finite and nonnegative")));
        }
        Ok(Self { nu, mu })
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn density(&self) -> &[f64] {
        &self.nu
    }

    pub fn weights(&self) -> &[f64] {
        &self.mu
    }

    /// `ν({i})`.
    pub fn mass(&self, i: usize) -> f64 {
        self.nu[i] * self.mu[i]
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.len()).map(|i| self.mass(i)).sum()
    }

    /// Intensity scaled by `factor` (used for n-th roots of Poisson laws).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_weights(self.nu.iter().map(|v| v * factor).collect(), self.mu.clone())
    }

    /// Sum of two intensities on the same space.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: other.len() });
        }
        let nu = (0..self.len()).map(|i| (self.mass(i) + other.mass(i)) / self.mu[i]).collect();
        Self::with_weights(nu, self.mu.clone())
    }
}

/// Correlation operator on a finite space, with cached validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    matrix: DMatrix<C64>,
    is_hermitian: bool,
    /// Eigenvalues in ascending order, present when Hermitian.
    spectrum: Option<Vec<f64>>,
    is_psd_contraction: bool,
    tolerances: KernelTolerances,
}

impl Kernel {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        Self::with_tolerances(matrix, KernelTolerances::default())
    }

    pub fn with_tolerances(matrix: DMatrix<C64>, tolerances: KernelTolerances) -> Result<Self> {
        if !(tolerances.hermitian >= 0.0 && tolerances.spectral >= 0.0)
            || !tolerances.hermitian.is_finite()
            || !tolerances.spectral.is_finite()
        {
            return Err(Error::InvalidArgument("kernel tolerances must be finite and non-negative".into()));
        }
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidModel(format!(
                "kernel must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidModel("kernel must have at least one row".into()));
        }
        if matrix.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidModel("kernel entries must be finite".into()));
        }
        let n = matrix.nrows();
        let is_hermitian = (0..n)
            .all(|i| (i..n).all(|j| (matrix[(i, j)] - matrix[(j, i)].conj()).norm() <= tolerances.hermitian));
        let spectrum = is_hermitian.then(|| linalg::hermitian_eigen(&matrix).0);
        let is_psd_contraction = spectrum.as_ref().is_some_and(|s| {
            s.iter().all(|&l| l >= -tolerances.spectral && l <= 1.0 + tolerances.spectral)
        });
        Ok(Self { matrix, is_hermitian, spectrum, is_psd_contraction, tolerances })
    }

    /// Real kernel from row-major entries.
    pub fn from_real(n: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, actual: row_major.len() });
        }
        Self::new(DMatrix::from_row_iterator(n, n, row_major.iter().map(|&v| C64::new(v, 0.0))))
    }

    /// Kernel from its integral-kernel values `K(x, y)` on a weighted space.
    pub fn from_values_on(space: &GroundSpace, values: DMatrix<C64>) -> Result<Self> {
        Self::from_values_on_with(space, values, KernelTolerances::default())
    }

    pub fn from_values_on_with(
        space: &GroundSpace,
        values: DMatrix<C64>,
        tolerances: KernelTolerances,
    ) -> Result<Self> {
        if values.nrows() != space.len() {
            return Err(Error::DimensionMismatch { expected: space.len(), actual: values.nrows() });
        }
        let sqrt_mu: Vec<f64> = space.mu().iter().map(|w| w.sqrt()).collect();
        let m = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            values[(i, j)] * (sqrt_mu[i] * sqrt_mu.get(j).copied().unwrap_or(1.0))
        });
        Self::with_tolerances(m, tolerances)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.is_hermitian
    }

    pub fn is_psd_contraction(&self) -> bool {
        self.is_psd_contraction
    }

    pub fn tolerances(&self) -> KernelTolerances {
        self.tolerances
    }

    /// Raw eigenvalues (ascending) when the kernel is Hermitian.
    pub fn spectrum(&self) -> Option<&[f64]> {
        self.spectrum.as_deref()
    }

    /// Eigenvalues clamped to `[0, 1]`, available for valid sampling kernels.
    pub fn clamped_spectrum(&self) -> Option<Vec<f64>> {
        if !self.is_psd_contraction {
            return None;
        }
        self.spectrum.as_ref().map(|s| s.iter().map(|l| l.clamp(0.0, 1.0)).collect())
    }

    /// The compression `diag(φ) K diag(1_S)` restricted to its support block
    /// `S × S`; the remaining rows and columns of the full operator vanish.
    pub fn compressed(&self, phi: &TestFunction) -> DMatrix<C64> {
        let s = phi.support();
        let block = linalg::principal_block(&self.matrix, s);
        DMatrix::from_fn(s.len(), s.len(), |r, c| phi.values()[s[r]] * block[(r, c)])
    }

    /// Same kernel with atoms relabelled: entry `(i, j)` of the result is
    /// entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim();
        check_permutation(perm, n)?;
        Self::with_tolerances(DMatrix::from_fn(n, n, |i, j| self.matrix[(perm[i], perm[j])]), self.tolerances)
    }
}

/// Outcome of [`validate_kernel_for_sampling`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingCheck {
    pub valid: bool,
    pub violations: Vec<String>,
}

/// A kernel can be sampled when it is a Hermitian positive contraction.
pub fn validate_kernel_for_sampling(k: &Kernel) -> SamplingCheck {
    let mut violations = Vec::new();
    if !k.is_hermitian() {
        let n = k.dim();
        let dev = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (k.matrix[(i, j)] - k.matrix[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        violations.push(format!("non-Hermitian: max |K - K*| = {dev:.3e}"));
    } else if let Some(spec) = k.spectrum() {
        let tol = k.tolerances().spectral;
        for &l in spec {
            if l < -tol {
                violations.push(format!("eigenvalue {l} < 0"));
            } else if l > 1.0 + tol {
                violations.push(format!("eigenvalue {l} > 1"));
            }
        }
    }
    SamplingCheck { valid: violations.is_empty(), violations }
}

/// Bounded test function `φ` on the atoms. The essential support is the set
/// of atoms where `φ ≠ 0` and is always derived from the values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    phi: Vec<C64>,
    support: Vec<usize>,
}

impl TestFunction {
    pub fn new(phi: Vec<C64>) -> Result<Self> {
        if let Some(i) = phi.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidModel(format!("phi[{i}] is not finite")));
        }
        let support = phi.iter().enumerate().filter(|(_, z)| **z != C64::new(0.0, 0.0)).map(|(i, _)| i).collect();
        Ok(Self { phi, support })
    }

    pub fn from_real(phi: &[f64]) -> Result<Self> {
        Self::new(phi.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn zero(n: usize) -> Self {
        Self { phi: vec![C64::new(0.0, 0.0); n], support: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.phi
    }

    /// Essential support, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn max_abs(&self) -> f64 {
        self.phi.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self) -> bool {
        self.phi.iter().all(|z| z.im == 0.0)
    }

    /// `z·φ`. Scaling by zero empties the support.
    pub fn scaled(&self, z: C64) -> Self {
        if z == C64::new(0.0, 0.0) {
            return Self::zero(self.len());
        }
        Self { phi: self.phi.iter().map(|p| p * z).collect(), support: self.support.clone() }
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Self::new(perm.iter().map(|&p| self.phi[p]).collect())
    }
}

/// `φ = 1_B`.
pub fn indicator(space: &GroundSpace, subset: &[usize]) -> Result<TestFunction> {
    indicator_n(space.len(), subset)
}

pub(crate) fn indicator_n(n: usize, subset: &[usize]) -> Result<TestFunction> {
    let mut phi = vec![C64::new(0.0, 0.0); n];
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        phi[i] = C64::new(1.0, 0.0);
    }
    TestFunction::new(phi)
}

/// A realisation `ξ` of a point process: the number of points at each atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointConfiguration {
    pub counts: Vec<u32>,
}

impl PointConfiguration {
    pub fn empty(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// No atom carries more than one point.
    pub fn is_simple(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessModel {
    Poisson(IntensityMeasure),
    Determinantal(Kernel),
    Superposition(Vec<ProcessModel>),
}

impl ProcessModel {
    pub fn dim(&self) -> usize {
        match self {
            ProcessModel::Poisson(nu) => nu.len(),
            ProcessModel::Determinantal(k) => k.dim(),
            ProcessModel::Superposition(parts) => parts.first().map_or(0, |p| p.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_depth(DEFAULT_MAX_DEPTH)
    }

    /// Checks non-empty superpositions, consistent dimensions and nesting depth.
    pub fn validate_depth(&self, max_depth: usize) -> Result<()> {
        fn walk(m: &ProcessModel, depth: usize, max_depth: usize, n: usize) -> Result<()> {
            if m.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: m.dim() });
            }
            if let ProcessModel::Superposition(parts) = m {
                if parts.is_empty() {
                    return Err(Error::InvalidModel("empty superposition".into()));
                }
                if depth >= max_depth {
                    return Err(Error::InvalidModel(format!("superposition nested deeper than {max_depth}")));
                }
                for p in parts {
                    walk(p, depth + 1, max_depth, n)?;
                }
            }
            Ok(())
        }
        walk(self, 0, max_depth, self.dim())
    }

    /// Poisson and determinantal components in depth-first order.
    pub fn leaves(&self) -> Vec<&ProcessModel> {
        let mut out = Vec::new();
        fn walk<'a>(m: &'a ProcessModel, out: &mut Vec<&'a ProcessModel>) {
            match m {
                ProcessModel::Superposition(parts) => parts.iter().for_each(|p| walk(p, out)),
                leaf => out.push(leaf),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Total Poisson intensity (zero if there is no Poisson component).
    pub fn poisson_part(&self) -> Result<IntensityMeasure> {
        let n = self.dim();
        let mut acc: Option<IntensityMeasure> = None;
        for leaf in self.leaves() {
            if let ProcessModel::Poisson(nu) = leaf {
                acc = Some(match acc {
                    Some(a) => a.add(nu)?,
                    None => nu.clone(),
                });
            }
        }
        acc.map_or_else(|| IntensityMeasure::new(vec![0.0; n]), Ok)
    }

    pub fn kernels(&self) -> Vec<&Kernel> {
        self.leaves()
            .into_iter()
            .filter_map(|l| match l {
                ProcessModel::Determinantal(k) => Some(k),
                _ => None,
            })
            .collect()
    }

    /// Content hash of the model (SHA-256 over a canonical byte encoding).
    pub fn digest(&self) -> String {
        fn feed(m: &ProcessModel, h: &mut Sha256) {
            match m {
                ProcessModel::Poisson(nu) => {
                    h.update(b"P");
                    h.update((nu.len() as u64).to_le_bytes());
                    for i in 0..nu.len() {
                        h.update(nu.density()[i].to_bits().to_le_bytes());
                        h.update(nu.weights()[i].to_bits().to_le_bytes());
                    }
                }
                ProcessModel::Determinantal(k) => {
                    h.update(b"D");
                    h.update((k.dim() as u64).to_le_bytes());
                    for z in k.matrix().row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()) {
                        h.update(z.re.to_bits().to_le_bytes());
                        h.update(z.im.to_bits().to_le_bytes());
                    }
                }
                ProcessModel::Superposition(parts) => {
                    h.update(b"S");
                    h.update((parts.len() as u64).to_le_bytes());
                    for p in parts {
                        feed(p, h);
                    }
                }
            }
        }
        let mut h = Sha256::new();
        feed(self, &mut h);
        hex::encode(h.finalize())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: perm.len() });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidModel("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}
