//! Separation of a superposition into its non-vanishing (Poisson) factor and
//! its zero-carrying (determinantal) factor.
//!
//! Along the ray `z ↦ F(zφ)` the determinantal factor is the polynomial
//! `∏(1 - z/x)` over the zeros `x` of the ray, so locating those zeros gives
//! `B_Π(φ) = ∏(1 - 1/x)` and the quotient `B_N(φ) = F(φ)/B_Π(φ)`.
//!
//! Exact oracles are factored to quadrature precision. Empirical oracles
//! are only trusted on circles where the relative standard error stays below
//! [`DisentangleOptions::stderr_cap`]; zeros beyond that circle are fitted
//! from the Taylor coefficients of the deflated logarithm, and every output
//! carries a first-order (delta method) standard error.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{GroundSpace, ProcessModel, TestFunction, indicator_n};
use crate::pgf::{EmpiricalPgf, PgfOracle, Ray, pgf_poisson};
use crate::samplers::RngState;
use crate::zeros::{
    AnalyticFunction, BlindSearch, CircleSamples, ContourOptions, ContourOutcome, ZeroSet, exterior_points_prony,
    exterior_power_sums, exterior_zero, polynomial_from_zeros, refine_exterior_points, zeros_blind,
};
use crate::{C64, Error, Result};

const ONE: C64 = C64::new(1.0, 0.0);

/// `|B_Π(φ)|` below this cannot be divided by.
pub const DIVISION_FLOOR: f64 = 1e-12;
/// A zero this close to `z = 1` triggers a rescaling of `φ`.
pub const UNIT_ZERO_TOL: f64 = 1e-9;
pub const MAX_RESCALES: usize = 3;
pub const RESCALE_FACTOR: f64 = 0.9;
/// Principal minors need all `2^n - 1` subsets.
pub const MINORS_MAX_ATOMS: usize = 12;
/// Above this many distinct configurations the delta method projects onto
/// random directions instead of summing every influence value.
pub const EXACT_INFLUENCE_MAX_CONFIGS: usize = 400;
pub const RANDOM_DIRECTIONS: usize = 64;
const INFLUENCE_STEP: f64 = 1e-4;
const SAFE_RADIUS_NODES: usize = 64;

/// Standard-error propagation for empirical oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Uncertainty {
    None,
    /// First-order propagation of the multinomial sampling noise.
    Delta,
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleOptions {
    pub contour: ContourOptions,
    /// First circle radius, relative to `1 / max|φ|`.
    pub start_radius: f64,
    /// Largest circle radius, relative to `1 / max|φ|`.
    pub max_radius: f64,
    /// Empirical oracles: circles keep `stderr / |F|` below this everywhere.
    pub stderr_cap: f64,
    /// Zero-carrying factors per atom of the support; the degree bound of
    /// a ray is this times `|supp φ|`. `None` searches without a bound.
    pub zero_factors: Option<usize>,
    pub grid_size: usize,
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_seed: u64,
    /// Windows whose spectra are reported; singletons plus the full space
    /// when `None`.
    pub windows: Option<Vec<Vec<usize>>>,
    pub uncertainty: Uncertainty,
    /// Seed for the random-direction delta method.
    pub uncertainty_seed: u64,
    /// Recovered densities below `-nu_tolerance` are flagged.
    pub nu_tolerance: f64,
    /// `|Im log B_N|` above this is flagged.
    pub log_imag_tol: f64,
    /// Exterior power sums count as signal above this many standard errors.
    pub exterior_significance: f64,
    /// On rays through nonnegative `φ`, fitted exterior zeros must be real
    /// and at most `-1` (every zero of a Hermitian contraction kernel is).
    pub hermitian_exterior: bool,
}

impl Default for DisentangleOptions {
    fn default() -> Self {
        Self {
            contour: ContourOptions::default(),
            start_radius: 0.5,
            max_radius: 1e9,
            stderr_cap: 0.02,
            zero_factors: Some(1),
            grid_size: 20,
            grid_low: -0.9,
            grid_high: -0.1,
            grid_seed: 0,
            windows: None,
            uncertainty: Uncertainty::Delta,
            uncertainty_seed: 0,
            nu_tolerance: 1e-6,
            log_imag_tol: 1e-8,
            exterior_significance: 4.0,
            hermitian_exterior: true,
        }
    }
}

impl DisentangleOptions {
    fn degree_bound(&self, phi: &TestFunction) -> Option<usize> {
        self.zero_factors.map(|k| k * phi.support().len())
    }
}

/// `F(φ) = B_N(φ)·B_Π(φ)` at one test function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Factorization {
    pub phi: Vec<C64>,
    /// The factorization is evaluated at `scale·φ`; `scale < 1` only after a
    /// zero was found too close to `z = 1`.
    pub scale: f64,
    /// `F(scale·φ)`.
    pub value: C64,
    /// `B_N(scale·φ)`.
    pub nonvanishing: C64,
    /// `B_Π(scale·φ)`.
    pub zero_factor: C64,
    /// Zeros of `z ↦ F(zφ)`, in the parametrization of the unscaled `φ`.
    pub zeros: ZeroSet,
    /// How many of the zeros were fitted outside the last contour.
    pub exterior_zeros: usize,
    /// Radius of the last contour, unscaled parametrization.
    pub contour_radius: f64,
}

impl Factorization {
    /// `B_Π(φ)` at the unscaled `φ`.
    pub fn zero_factor_at_unit(&self) -> Result<C64> {
        Ok(polynomial_from_zeros(&self.zeros)?.eval(ONE))
    }
}

/// Frozen search decisions of a ray, replayed when the empirical weights are
/// perturbed so that the perturbed outputs stay comparable.
#[derive(Debug, Clone, PartialEq)]
struct RayPlan {
    max_radius: f64,
    /// Fitted exterior points `ν = -r/x` and the weights of the fit.
    exterior: Vec<C64>,
    sigma: Vec<f64>,
    scale: f64,
}

impl RayPlan {
    fn trivial() -> Self {
        Self { max_radius: 0.0, exterior: Vec::new(), sigma: Vec::new(), scale: 1.0 }
    }
}

/// Factor `F` at `φ`: zeros of `z ↦ F(zφ)` (at most `degree_bound` of them),
/// `B_Π(φ) = ∏(1 - 1/x)` and `B_N(φ) = F(φ)/B_Π(φ)`.
pub fn factor_at(
    f: &PgfOracle,
    phi: &TestFunction,
    degree_bound: Option<usize>,
    opts: &DisentangleOptions,
) -> Result<Factorization> {
    factor_planned(f, phi, degree_bound, opts, None, true).map(|(fac, _)| fac)
}

fn factor_planned(
    f: &PgfOracle,
    phi: &TestFunction,
    degree_bound: Option<usize>,
    opts: &DisentangleOptions,
    plan: Option<&RayPlan>,
    with_uncertainty: bool,
) -> Result<(Factorization, RayPlan)> {
    if phi.support().is_empty() {
        let value = f.evaluate(phi)?;
        let fac = Factorization {
            phi: phi.values().to_vec(),
            scale: 1.0,
            value,
            nonvanishing: value,
            zero_factor: ONE,
            zeros: ZeroSet::empty(0.0),
            exterior_zeros: 0,
            contour_radius: 0.0,
        };
        return Ok((fac, RayPlan::trivial()));
    }
    let mut scale = plan.map_or(1.0, |p| p.scale);
    let mut rescales = 0;
    loop {
        let eff = phi.scaled(C64::new(scale, 0.0));
        let ray = f.ray(&eff)?;
        let (mut zeros, ray_plan, radius) = locate(&ray, degree_bound, opts, plan)?;
        let near_unit = zeros.zeros.iter().any(|z| (z.value - ONE).norm() < UNIT_ZERO_TOL);
        if near_unit && plan.is_none() && rescales < MAX_RESCALES {
            scale *= RESCALE_FACTOR;
            rescales += 1;
            continue;
        }
        let value = f.evaluate(&eff)?;
        let zero_factor = polynomial_from_zeros(&zeros)?.eval(ONE);
        if zero_factor.norm() < DIVISION_FLOOR {
            return Err(Error::DivisionNearZero { modulus: zero_factor.norm() });
        }
        if with_uncertainty && f.is_empirical() {
            attach_uncertainty(&ray, &mut zeros, radius);
        }
        for z in &mut zeros.zeros {
            z.value *= scale;
            z.uncertainty = z.uncertainty.map(|u| u * scale);
        }
        zeros.search_radius *= scale;
        let fac = Factorization {
            phi: phi.values().to_vec(),
            scale,
            value,
            nonvanishing: value / zero_factor,
            zero_factor,
            zeros,
            exterior_zeros: ray_plan.exterior.len(),
            contour_radius: radius * scale,
        };
        return Ok((fac, RayPlan { scale, ..ray_plan }));
    }
}

/// Contour search on the ray, completed by an exterior fit when the search
/// stopped at its radius cap short of the degree bound. Returns the zeros in
/// the ray's own parametrization and the radius of the last contour.
fn locate(
    ray: &Ray<'_>,
    degree_bound: Option<usize>,
    opts: &DisentangleOptions,
    plan: Option<&RayPlan>,
) -> Result<(ZeroSet, RayPlan, f64)> {
    let unit = 1.0 / ray.phi().max_abs();
    let start = opts.start_radius * unit;
    let cap = opts.max_radius * unit;
    let max_radius = match plan {
        Some(p) => p.max_radius,
        None if ray.oracle().is_empirical() => safe_radius(ray, start * 1e-3, cap, opts.stderr_cap),
        None => cap,
    };
    let search = BlindSearch { start_radius: start.min(max_radius), max_radius, degree_bound };
    let outcome = zeros_blind(ray, &search, &opts.contour)?;
    let radius = outcome.outer.radius;
    let mut zeros = outcome.zeros.clone();
    let (mut exterior, mut sigma) = (Vec::new(), Vec::new());
    if let (true, Some(bound)) = (outcome.capped, degree_bound) {
        let missing = bound.saturating_sub(zeros.total_count);
        (exterior, sigma) = match plan {
            Some(p) if p.exterior.is_empty() => (Vec::new(), Vec::new()),
            Some(p) => {
                let t = exterior_power_sums(&outcome.outer, &outcome.zeros, p.sigma.len() + 1);
                let (nu, _) = refine_exterior_points(&t, &p.sigma, &p.exterior)
                    .ok_or_else(|| Error::Numerical(format!("exterior refit failed at radius {radius:.6e}")))?;
                (nu, p.sigma.clone())
            }
            None => exterior_fit(ray, &outcome, missing, opts),
        };
        if !exterior.is_empty() {
            let points: Vec<C64> = exterior.iter().map(|nu| exterior_zero(*nu, radius)).collect();
            zeros = zeros.union(&ZeroSet::from_points(ray, &points, radius));
        }
    }
    Ok((zeros, RayPlan { max_radius, exterior, sigma, scale: 1.0 }, radius))
}

/// Largest radius in `[lo, hi]` (by bisection in `log r`) on which the
/// relative standard error of the oracle stays below `cap`.
fn safe_radius(ray: &Ray<'_>, lo: f64, hi: f64, cap: f64) -> f64 {
    let ok = |r: f64| {
        (0..SAFE_RADIUS_NODES)
            .into_par_iter()
            .all(|j| ray.relative_stderr(C64::from_polar(r, 2.0 * PI * j as f64 / SAFE_RADIUS_NODES as f64)) < cap)
    };
    if ok(hi) {
        return hi;
    }
    if !ok(lo) {
        return lo;
    }
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.exp()
}

/// Exterior points `ν` and fit weights: none unless some exterior power sum
/// stands out of its noise, then the largest order up to `missing` that
/// admits a fit inside the unit disk.
fn exterior_fit(ray: &Ray<'_>, outcome: &ContourOutcome, missing: usize, opts: &DisentangleOptions) -> (Vec<C64>, Vec<f64>) {
    if missing == 0 {
        return (Vec::new(), Vec::new());
    }
    let kmax = 2 * missing + 1;
    let t = exterior_power_sums(&outcome.outer, &outcome.zeros, kmax);
    let sigma = power_sum_noise(ray, &outcome.outer, kmax);
    let significant = t.iter().zip(&sigma).any(|(t, s)| t.norm() > opts.exterior_significance * s);
    if !significant {
        return (Vec::new(), Vec::new());
    }
    let rules = FitRules {
        noisy: ray.oracle().is_empirical(),
        positive: opts.hermitian_exterior
            && ray.phi().values().iter().all(|p| p.im == 0.0 && p.re >= 0.0),
        radius: outcome.outer.radius,
    };
    for m in (1..=missing).rev() {
        if let Some((nu, _)) = fit_points(&t, &sigma, m, &rules) {
            return (nu, sigma);
        }
    }
    (Vec::new(), Vec::new())
}

/// Seeds for a new exterior point when the Prony system gives no answer.
const EXTERIOR_SEEDS: [f64; 6] = [0.6, 0.3, 0.1, -0.1, -0.3, -0.6];

struct FitRules {
    /// Noisy data may grow the fit of order `m - 1` by one seeded point;
    /// exact data must admit a Prony solution.
    noisy: bool,
    /// Points restricted to `0 < ν ≤ r`, i.e. real zeros `x ≤ -1`.
    positive: bool,
    radius: f64,
}

impl FitRules {
    fn admits(&self, nu: &[C64]) -> bool {
        nu.iter().all(|v| {
            v.norm() > 0.0 && (!self.positive || (v.im.abs() <= 1e-9 * v.norm() && v.re > 0.0 && v.re <= self.radius))
        })
    }
}

/// Best admissible weighted fit of `m` points.
fn fit_points(t: &[C64], sigma: &[f64], m: usize, rules: &FitRules) -> Option<(Vec<C64>, f64)> {
    if m == 0 {
        return refine_exterior_points(t, sigma, &[]);
    }
    let mut candidates: Vec<Vec<C64>> = exterior_points_prony(&t[..2 * m], m).into_iter().collect();
    if rules.noisy {
        if let Some((lower, _)) = fit_points(t, sigma, m - 1, rules) {
            for seed in EXTERIOR_SEEDS.iter().filter(|s| !rules.positive || **s > 0.0) {
                let mut c = lower.clone();
                c.push(C64::new(*seed, 0.0));
                candidates.push(c);
            }
        }
    }
    candidates
        .iter()
        .filter_map(|init| refine_exterior_points(t, sigma, init))
        .filter(|(nu, _)| rules.admits(nu))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Standard errors of the exterior power sums `T_2..T_kmax`.
///
/// For an empirical oracle the influence of a configuration `ξ` on `F'/F`
/// at `z` is `(X'(z) - g(z)X(z)) / F(z)` with `X(z) = ∏(1 + zφ)^ξ`; the
/// power sums are linear in `F'/F`, so their variance is the weighted mean
/// square of the transformed influences over `M`. Exact oracles get a
/// quadrature-level floor.
fn power_sum_noise(ray: &Ray<'_>, outer: &CircleSamples, kmax: usize) -> Vec<f64> {
    let PgfOracle::Empirical(e) = ray.oracle() else {
        let mean_g = outer.log_derivative.iter().map(|g| g.norm()).sum::<f64>() / outer.nodes() as f64;
        return vec![1e-9 * (outer.radius * mean_g).max(1.0); kmax - 1];
    };
    let phi = ray.phi();
    let nodes: Vec<C64> = (0..outer.nodes()).map(|j| outer.node(j)).collect();
    let values: Vec<C64> = nodes.par_iter().map(|&z| ray.value(z)).collect();
    let empty = ZeroSet::empty(outer.radius);
    let per_config: Vec<Vec<f64>> = (0..e.configs().len())
        .into_par_iter()
        .map(|idx| {
            let influence: Vec<C64> = nodes
                .iter()
                .zip(&values)
                .zip(&outer.log_derivative)
                .map(|((&z, &fz), &g)| {
                    let (x, dx) = e.term_with_derivative(idx, phi, z);
                    (dx - g * x) / fz
                })
                .collect();
            let samples = CircleSamples { radius: outer.radius, log_derivative: influence, count: 0, winding_residual: 0.0 };
            exterior_power_sums(&samples, &empty, kmax).iter().map(|t| t.norm_sqr()).collect()
        })
        .collect();
    let mut var = vec![0.0; kmax - 1];
    for (sq, w) in per_config.iter().zip(e.weights()) {
        for (v, s) in var.iter_mut().zip(sq) {
            *v += w * s;
        }
    }
    let m = e.sample_count() as f64;
    var.into_iter().map(|v| (v / m).sqrt()).collect()
}

/// `δx ≈ stderr(F(x)) / |F'(x)|` for zeros inside the contour.
fn attach_uncertainty(ray: &Ray<'_>, zeros: &mut ZeroSet, radius: f64) {
    for z in zeros.zeros.iter_mut().filter(|z| z.value.norm() < radius) {
        let h = 1e-6 * z.value.norm().max(1.0);
        let slope = (ray.value(z.value + h) - ray.value(z.value - h)) / (2.0 * h);
        let stderr = ray.oracle().estimate(&ray.phi().scaled(z.value)).map(|e| e.stderr).unwrap_or(f64::NAN);
        z.uncertainty = Some(stderr / slope.norm());
    }
}

/// Density of the Poisson intensity at atom `i` from the factorization at
/// `1_{i}`, plus `|Im log B_N|`.
fn density_from(space: &GroundSpace, i: usize, fac: &Factorization) -> Result<(f64, f64)> {
    let b = fac.nonvanishing;
    if !(b.re > 0.0) {
        return Err(Error::NonPositiveFactorValue { value: format!("{b}") });
    }
    let log = b.ln();
    Ok((log.re / (fac.scale * space.mu()[i]), log.im.abs()))
}

/// `λ = -1/x` over the zeros, with multiplicity, in descending real part.
fn spectrum_from(fac: &Factorization) -> Vec<C64> {
    let mut out: Vec<C64> = fac.zeros.expanded().iter().map(|x| -ONE / x).collect();
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    out
}

/// `det K_S = Σ_{T⊆S} (-1)^{|S∖T|} B_Π(1_T)`, indexed by bit mask.
fn minors_from(b_pi: &[C64]) -> Vec<C64> {
    let mut f = b_pi.to_vec();
    let size = f.len();
    let mut bit = 1;
    while bit < size {
        for mask in 0..size {
            if mask & bit != 0 {
                let lower = f[mask ^ bit];
                f[mask] -= lower;
            }
        }
        bit <<= 1;
    }
    f
}

fn mask_subset(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|i| mask >> i & 1 == 1).collect()
}


fn normalise_subset(subset: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&i) = s.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    Ok(s)
}

fn check_space(f: &PgfOracle, space: &GroundSpace) -> Result<()> {
    match f.dim() {
        Some(d) if d != space.len() => Err(Error::DimensionMismatch { expected: space.len(), actual: d }),
        _ => Ok(()),
    }
}

/// Poisson intensity of the non-vanishing factor, atom by atom.
pub fn recover_intensity(
    f: &PgfOracle,
    space: &GroundSpace,
    opts: &DisentangleOptions,
) -> Result<crate::model::IntensityMeasure> {
    check_space(f, space)?;
    let n = space.len();
    let nu = (0..n)
        .into_par_iter()
        .map(|i| {
            let phi = indicator_n(n, &[i])?;
            let fac = factor_at(f, &phi, opts.degree_bound(&phi), opts)?;
            let (nu, _) = density_from(space, i, &fac)?;
            if nu < -opts.nu_tolerance {
                return Err(Error::InvalidIntensity(format!(
                    "recovered density {nu:.6e} at atom {i} is negative; the input is not a Poisson superposition"
                )));
            }
            Ok(nu.max(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    crate::model::IntensityMeasure::on(space, nu)
}

/// Nonzero eigenvalues of `1_B K 1_B` for each window `B`.
pub fn recover_window_spectra(
    f: &PgfOracle,
    space: &GroundSpace,
    windows: &[Vec<usize>],
    opts: &DisentangleOptions,
) -> Result<BTreeMap<Vec<usize>, Vec<C64>>> {
    check_space(f, space)?;
    let n = space.len();
    windows
        .par_iter()
        .map(|w| {
            let w = normalise_subset(w, n)?;
            let phi = indicator_n(n, &w)?;
            let fac = factor_at(f, &phi, opts.degree_bound(&phi), opts)?;
            Ok((w, spectrum_from(&fac)))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

/// `det K_S` for every nonempty `S`.
pub fn recover_principal_minors(
    f: &PgfOracle,
    space: &GroundSpace,
    opts: &DisentangleOptions,
) -> Result<BTreeMap<Vec<usize>, C64>> {
    check_space(f, space)?;
    let n = space.len();
    if n > MINORS_MAX_ATOMS {
        return Err(Error::TooLarge { what: "principal minor recovery", max: MINORS_MAX_ATOMS, n });
    }
    let mut b_pi = vec![ONE; 1 << n];
    let values = (1..1usize << n)
        .into_par_iter()
        .map(|mask| {
            let phi = indicator_n(n, &mask_subset(mask))?;
            factor_at(f, &phi, opts.degree_bound(&phi), opts)?.zero_factor_at_unit()
        })
        .collect::<Result<Vec<C64>>>()?;
    b_pi[1..].copy_from_slice(&values);
    let minors = minors_from(&b_pi);
    Ok((1..1usize << n).map(|m| (mask_subset(m), minors[m])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSpectrum {
    pub window: Vec<usize>,
    /// Nonzero eigenvalues of `1_B K 1_B`, descending real part.
    pub eigenvalues: Vec<C64>,
    pub stderr: Option<Vec<f64>>,
    pub zeros: ZeroSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorEntry {
    pub subset: Vec<usize>,
    /// `det K_S`.
    pub value: C64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiFactor {
    #[serde(flatten)]
    pub factorization: Factorization,
    /// `|F - B_N·B_Π| / |F|`, with `B_N` rebuilt from the recovered intensity
    /// when one is available.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_residual: f64,
    pub max_log_imag: f64,
    /// Atoms whose recovered density is below `-nu_tolerance`.
    pub negative_nu: Vec<usize>,
    /// Field name to error message for every field that could not be
    /// recovered.
    pub failures: BTreeMap<String, String>,
    /// Some empirical evaluation left the variance-safe region.
    pub variance_warning: bool,
    pub uncertainty: Option<Uncertainty>,
    /// Perturbed recoveries that entered the error estimate.
    pub uncertainty_replicates: usize,
    pub max_winding_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisentangleResult {
    pub labels: Vec<String>,
    /// Density of the recovered Poisson intensity against the atom weights;
    /// `None` for the general (non-parametric) disentangler or on failure.
    pub recovered_nu: Option<Vec<f64>>,
    pub nu_stderr: Option<Vec<f64>>,
    pub window_spectra: Vec<WindowSpectrum>,
    /// Only for spaces of at most [`MINORS_MAX_ATOMS`] atoms.
    pub principal_minors: Option<Vec<MinorEntry>>,
    pub per_phi_factors: Vec<PhiFactor>,
    pub diagnostics: Diagnostics,
}

impl DisentangleResult {
    /// The recovered intensity, with densities inside the tolerance band
    /// clamped to zero.
    pub fn intensity(&self, space: &GroundSpace, tolerance: f64) -> Result<crate::model::IntensityMeasure> {
        let nu = self.recovered_nu.as_ref().ok_or_else(|| Error::Numerical("intensity was not recovered".into()))?;
        if let Some((i, v)) = nu.iter().enumerate().find(|(_, v)| **v < -tolerance) {
            return Err(Error::InvalidIntensity(format!("recovered density {v:.6e} at atom {i} is negative")));
        }
        crate::model::IntensityMeasure::on(space, nu.iter().map(|v| v.max(0.0)).collect())
    }

    pub fn minor(&self, subset: &[usize]) -> Option<C64> {
        let mut s = subset.to_vec();
        s.sort_unstable();
        self.principal_minors.as_ref()?.iter().find(|m| m.subset == s).map(|m| m.value)
    }

    pub fn spectrum(&self, window: &[usize]) -> Option<&[C64]> {
        let mut w = window.to_vec();
        w.sort_unstable();
        self.window_spectra.iter().find(|s| s.window == w).map(|s| s.eigenvalues.as_slice())
    }
}

/// The seeded diagnostic grid of real test functions.
pub fn phi_grid(n: usize, opts: &DisentangleOptions) -> Vec<TestFunction> {
    let mut rng = RngState::new(opts.grid_seed, 0).rng();
    (0..opts.grid_size)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(opts.grid_low..=opts.grid_high)).collect();
            TestFunction::from_real(&v).expect("finite grid values")
        })
        .collect()
}

/// Subsets whose indicator rays are factored, and where each output reads.
struct Layout {
    n: usize,
    targets: Vec<Vec<usize>>,
    index: BTreeMap<Vec<usize>, usize>,
    windows: Vec<Vec<usize>>,
    minors: bool,
    parametric: bool,
}

impl Layout {
    fn new(space: &GroundSpace, opts: &DisentangleOptions, parametric: bool) -> Result<Self> {
        let n = space.len();
        let windows = match &opts.windows {
            Some(ws) => ws.iter().map(|w| normalise_subset(w, n)).collect::<Result<Vec<_>>>()?,
            None => {
                let mut ws: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
                if n > 1 {
                    ws.push((0..n).collect());
                }
                ws
            }
        };
        let minors = n <= MINORS_MAX_ATOMS;
        let mut targets: Vec<Vec<usize>> = Vec::new();
        if minors {
            targets.extend((1..1usize << n).map(mask_subset));
        } else {
            targets.extend((0..n).map(|i| vec![i]));
        }
        for w in &windows {
            if !w.is_empty() && (!minors) && !targets.contains(w) {
                targets.push(w.clone());
            }
        }
        let index = targets.iter().enumerate().map(|(k, t)| (t.clone(), k)).collect();
        Ok(Self { n, targets, index, windows, minors, parametric })
    }

    fn fac<'a>(&self, facs: &'a [Result<Factorization>], subset: &[usize]) -> Result<Option<&'a Factorization>> {
        if subset.is_empty() {
            return Ok(None);
        }
        match &facs[self.index[subset]] {
            Ok(f) => Ok(Some(f)),
            Err(e) => Err(e.clone()),
        }
    }
}

/// Per-field recovered values.
struct Fields {
    nu: Option<Result<(Vec<f64>, f64)>>,
    spectra: Vec<Result<(Vec<C64>, ZeroSet)>>,
    minors: Option<Result<Vec<C64>>>,
}

fn derive_fields(space: &GroundSpace, layout: &Layout, facs: &[Result<Factorization>]) -> Fields {
    let nu = layout.parametric.then(|| {
        let mut nu = Vec::with_capacity(layout.n);
        let mut imag: f64 = 0.0;
        for i in 0..layout.n {
            let fac = layout.fac(facs, &[i])?.expect("nonempty");
            let (v, im) = density_from(space, i, fac)?;
            nu.push(v);
            imag = imag.max(im);
        }
        Ok((nu, imag))
    });
    let spectra = layout
        .windows
        .iter()
        .map(|w| match layout.fac(facs, w)? {
            Some(fac) => Ok((spectrum_from(fac), fac.zeros.clone())),
            None => Ok((Vec::new(), ZeroSet::empty(0.0))),
        })
        .collect();
    let minors = layout.minors.then(|| {
        let mut b_pi = vec![ONE; 1 << layout.n];
        for mask in 1..1usize << layout.n {
            b_pi[mask] = layout.fac(facs, &mask_subset(mask))?.expect("nonempty").zero_factor_at_unit()?;
        }
        Ok(minors_from(&b_pi))
    });
    Fields { nu, spectra, minors }
}

/// Which base outputs enter the error estimate, in flattening order.
struct Selection {
    nu: bool,
    spectra: Vec<Option<usize>>,
    minors: bool,
}

impl Selection {
    fn of(fields: &Fields) -> Self {
        Self {
            nu: matches!(fields.nu, Some(Ok(_))),
            spectra: fields.spectra.iter().map(|s| s.as_ref().ok().map(|(ev, _)| ev.len())).collect(),
            minors: matches!(fields.minors, Some(Ok(_))),
        }
    }

    /// Selected outputs as one vector; `None` when a selected field failed
    /// or changed shape.
    fn flatten(&self, fields: &Fields) -> Option<Vec<C64>> {
        let mut out = Vec::new();
        if self.nu {
            let (nu, _) = fields.nu.as_ref()?.as_ref().ok()?;
            out.extend(nu.iter().map(|v| C64::new(*v, 0.0)));
        }
        for (sel, field) in self.spectra.iter().zip(&fields.spectra) {
            if let Some(len) = sel {
                let (ev, _) = field.as_ref().ok()?;
                if ev.len() != *len {
                    return None;
                }
                out.extend_from_slice(ev);
            }
        }
        if self.minors {
            let m = fields.minors.as_ref()?.as_ref().ok()?;
            out.extend_from_slice(&m[1..]);
        }
        Some(out)
    }

    fn split(&self, fields: &Fields, stderr: &[f64]) -> (Option<Vec<f64>>, Vec<Option<Vec<f64>>>, Option<Vec<f64>>) {
        let mut rest = stderr;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head.to_vec()
        };
        let nu = self.nu.then(|| take(fields.nu.as_ref().map_or(0, |r| r.as_ref().map_or(0, |(v, _)| v.len()))));
        let spectra = self.spectra.iter().map(|sel| sel.map(&mut take)).collect();
        let minors = fields.minors.as_ref().and_then(|r| r.as_ref().ok()).filter(|_| self.minors).map(|m| take(m.len() - 1));
        (nu, spectra, minors)
    }
}

fn factor_targets(
    f: &PgfOracle,
    layout: &Layout,
    opts: &DisentangleOptions,
    plans: Option<&[Option<RayPlan>]>,
    with_uncertainty: bool,
) -> Vec<Result<(Factorization, RayPlan)>> {
    layout
        .targets
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let phi = indicator_n(layout.n, t)?;
            let plan = match plans {
                Some(p) => Some(p[k].as_ref().ok_or_else(|| Error::Numerical("no plan for a failed target".into()))?),
                None => None,
            };
            factor_planned(f, &phi, opts.degree_bound(&phi), opts, plan, with_uncertainty)
        })
        .collect()
}

/// Recovers both laws from `F`: the Poisson intensity, window spectra and
/// principal minors of the determinantal part, and factor checks on the
/// diagnostic grid. Fields that fail are reported in the diagnostics rather
/// than aborting the whole recovery.
pub fn disentangle(f: &PgfOracle, space: &GroundSpace, opts: &DisentangleOptions) -> Result<DisentangleResult> {
    run(f, space, opts, true)
}

/// As [`disentangle`], without assuming the non-vanishing factor is Poisson:
/// it is reported only through its values `F(φ)/B_Ξ(φ)` on the grid.
pub fn disentangle_general(f: &PgfOracle, space: &GroundSpace, opts: &DisentangleOptions) -> Result<DisentangleResult> {
    run(f, space, opts, false)
}

fn run(f: &PgfOracle, space: &GroundSpace, opts: &DisentangleOptions, parametric: bool) -> Result<DisentangleResult> {
    check_space(f, space)?;
    let layout = Layout::new(space, opts, parametric)?;
    let base = factor_targets(f, &layout, opts, None, true);
    let plans: Vec<Option<RayPlan>> = base.iter().map(|r| r.as_ref().ok().map(|(_, p)| p.clone())).collect();
    let facs: Vec<Result<Factorization>> = base.into_iter().map(|r| r.map(|(fac, _)| fac)).collect();
    let fields = derive_fields(space, &layout, &facs);

    let mut diagnostics = Diagnostics::default();
    for fac in facs.iter().flatten() {
        diagnostics.max_winding_residual = diagnostics.max_winding_residual.max(fac.zeros.winding_residual);
    }

    let (mut nu_stderr, mut spectra_stderr, mut minors_stderr) = (None, vec![None; layout.windows.len()], None);
    if let PgfOracle::Empirical(e) = f {
        let selection = Selection::of(&fields);
        if let Some(stderr) = propagate(e, space, &layout, opts, &plans, &selection, &fields, &mut diagnostics) {
            (nu_stderr, spectra_stderr, minors_stderr) = selection.split(&fields, &stderr);
        }
    }

    let recovered_nu = match &fields.nu {
        Some(Ok((nu, imag))) => {
            diagnostics.max_log_imag = *imag;
            if *imag >= opts.log_imag_tol {
                diagnostics
                    .failures
                    .insert("recovered_nu.log_imaginary".into(), format!("|Im log B_N| = {imag:.3e}"));
            }
            diagnostics.negative_nu = nu.iter().enumerate().filter(|(_, v)| **v < -opts.nu_tolerance).map(|(i, _)| i).collect();
            Some(nu.clone())
        }
        Some(Err(e)) => {
            diagnostics.failures.insert("recovered_nu".into(), e.to_string());
            None
        }
        None => None,
    };

    let window_spectra = layout
        .windows
        .iter()
        .zip(&fields.spectra)
        .zip(spectra_stderr)
        .map(|((w, s), stderr)| match s {
            Ok((ev, zeros)) => WindowSpectrum { window: w.clone(), eigenvalues: ev.clone(), stderr, zeros: zeros.clone() },
            Err(e) => {
                diagnostics.failures.insert(format!("window_spectra{w:?}"), e.to_string());
                WindowSpectrum { window: w.clone(), eigenvalues: Vec::new(), stderr: None, zeros: ZeroSet::empty(0.0) }
            }
        })
        .collect();

    let principal_minors = match &fields.minors {
        Some(Ok(m)) => Some(
            (1..1usize << layout.n)
                .map(|mask| MinorEntry {
                    subset: mask_subset(mask),
                    value: m[mask],
                    stderr: minors_stderr.as_ref().map(|s| s[mask - 1]),
                })
                .collect(),
        ),
        Some(Err(e)) => {
            diagnostics.failures.insert("principal_minors".into(), e.to_string());
            None
        }
        None => None,
    };

    let per_phi_factors = match grid_factors(f, space, opts, recovered_nu.as_deref()) {
        Ok(v) => v,
        Err(e) => {
            diagnostics.failures.insert("per_phi_factors".into(), e.to_string());
            Vec::new()
        }
    };
    diagnostics.max_residual = per_phi_factors.iter().map(|p| p.residual).fold(0.0, f64::max);
    if let PgfOracle::Empirical(e) = f {
        let warns = |phi: &[C64]| {
            TestFunction::new(phi.to_vec()).and_then(|p| e.estimate(&p)).is_ok_and(|s| s.variance_warning)
        };
        diagnostics.variance_warning = per_phi_factors.iter().any(|p| warns(&p.factorization.phi))
            || facs.iter().flatten().any(|fac| warns(&fac.phi));
    }

    Ok(DisentangleResult {
        labels: space.labels().to_vec(),
        recovered_nu,
        nu_stderr,
        window_spectra,
        principal_minors,
        per_phi_factors,
        diagnostics,
    })
}

fn grid_factors(
    f: &PgfOracle,
    space: &GroundSpace,
    opts: &DisentangleOptions,
    nu: Option<&[f64]>,
) -> Result<Vec<PhiFactor>> {
    phi_grid(space.len(), opts)
        .par_iter()
        .map(|phi| {
            let fac = factor_at(f, phi, opts.degree_bound(phi), opts)?;
            let nonvanishing = match nu {
                Some(nu) => {
                    let exponent: C64 = phi
                        .values()
                        .iter()
                        .zip(nu.iter().zip(space.mu()))
                        .map(|(p, (v, m))| p * (fac.scale * v * m))
                        .sum();
                    exponent.exp()
                }
                None => fac.nonvanishing,
            };
            let residual = (fac.value - nonvanishing * fac.zero_factor).norm() / fac.value.norm();
            Ok(PhiFactor { factorization: fac, residual })
        })
        .collect()
}

/// Standard errors of the selected outputs, or `None` when uncertainty is
/// off or no perturbed recovery succeeded.
#[allow(clippy::too_many_arguments)]
fn propagate(
    e: &EmpiricalPgf,
    space: &GroundSpace,
    layout: &Layout,
    opts: &DisentangleOptions,
    plans: &[Option<RayPlan>],
    selection: &Selection,
    fields: &Fields,
    diagnostics: &mut Diagnostics,
) -> Option<Vec<f64>> {
    diagnostics.uncertainty = Some(opts.uncertainty);
    let base = selection.flatten(fields)?;
    let outputs = |weights: Vec<f64>| -> Option<Vec<C64>> {
        let oracle = PgfOracle::Empirical(e.reweighted(weights).ok()?);
        let facs: Vec<Result<Factorization>> =
            factor_targets(&oracle, layout, opts, Some(plans), false).into_iter().map(|r| r.map(|(f, _)| f)).collect();
        selection.flatten(&derive_fields(space, layout, &facs))
    };
    let w = e.weights();
    let m = e.sample_count() as f64;
    let (sum_sq, used) = match opts.uncertainty {
        Uncertainty::None => return None,
        Uncertainty::Delta if w.len() <= EXACT_INFLUENCE_MAX_CONFIGS => {
            // Var ≈ (1/M) Σ_ξ p̂(ξ) IF(ξ)², IF from a step towards δ_ξ
            let influences: Vec<Option<Vec<C64>>> = (0..w.len())
                .into_par_iter()
                .map(|x| {
                    let mut wx: Vec<f64> = w.iter().map(|v| v * (1.0 - INFLUENCE_STEP)).collect();
                    wx[x] += INFLUENCE_STEP;
                    let out = outputs(wx)?;
                    Some(out.iter().zip(&base).map(|(o, b)| (o - b) / INFLUENCE_STEP).collect())
                })
                .collect();
            let mut acc = vec![0.0; base.len()];
            let mut used = 0;
            for (inf, wx) in influences.iter().zip(w) {
                if let Some(inf) = inf {
                    used += 1;
                    for (a, v) in acc.iter_mut().zip(inf) {
                        *a += wx * v.norm_sqr() / m;
                    }
                }
            }
            (acc, used)
        }
        Uncertainty::Delta => {
            // directions with the multinomial covariance (diag p̂ - p̂p̂ᵀ)/M
            let state = RngState::new(opts.uncertainty_seed, 0);
            let results: Vec<Option<Vec<C64>>> = (0..RANDOM_DIRECTIONS as u64)
                .into_par_iter()
                .map(|d| {
                    let mut rng = state.substream(d).rng();
                    let g: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
                    let proj: f64 = w.iter().zip(&g).map(|(p, g)| p.sqrt() * g).sum();
                    let dir: Vec<f64> = w.iter().zip(&g).map(|(p, g)| (p.sqrt() * g - p * proj) / m.sqrt()).collect();
                    let t = INFLUENCE_STEP * m.sqrt();
                    let out = outputs(w.iter().zip(&dir).map(|(p, d)| p + t * d).collect())?;
                    Some(out.iter().zip(&base).map(|(o, b)| (o - b) / t).collect())
                })
                .collect();
            mean_square(&results, None, base.len())
        }
        Uncertainty::Bootstrap { resamples, seed } => {
            let state = RngState::new(seed, 1);
            let dist = WeightedIndex::new(w).ok()?;
            let total = e.sample_count();
            let results: Vec<Option<Vec<C64>>> = (0..resamples as u64)
                .into_par_iter()
                .map(|b| {
                    let mut rng = state.substream(b).rng();
                    let mut counts = vec![0.0; w.len()];
                    for _ in 0..total {
                        counts[dist.sample(&mut rng)] += 1.0;
                    }
                    outputs(counts)
                })
                .collect();
            let mean = centre(&results, base.len());
            mean_square(&results, Some(&mean), base.len())
        }
    };
    diagnostics.uncertainty_replicates = used;
    if used == 0 {
        diagnostics.failures.insert("uncertainty".into(), "no perturbed recovery succeeded".into());
        return None;
    }
    Some(sum_sq.into_iter().map(f64::sqrt).collect())
}

fn centre(results: &[Option<Vec<C64>>], len: usize) -> Vec<C64> {
    let mut mean = vec![C64::new(0.0, 0.0); len];
    let ok: Vec<&Vec<C64>> = results.iter().flatten().collect();
    for r in &ok {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    let k = ok.len().max(1) as f64;
    mean.iter().map(|m| m / k).collect()
}

/// Mean of `|r - centre|²` over the successful replicates.
fn mean_square(results: &[Option<Vec<C64>>], centre: Option<&[C64]>, len: usize) -> (Vec<f64>, usize) {
    let mut acc = vec![0.0; len];
    let mut used = 0;
    for r in results.iter().flatten() {
        used += 1;
        for (j, (a, v)) in acc.iter_mut().zip(r).enumerate() {
            *a += (v - centre.map_or(C64::new(0.0, 0.0), |c| c[j])).norm_sqr();
        }
    }
    let denom = match centre {
        Some(_) if used > 1 => (used - 1) as f64,
        _ => used.max(1) as f64,
    };
    (acc.into_iter().map(|a| a / denom).collect(), used)
}

/// Nonzero eigenvalues (beyond `1e-10`) of `1_B K 1_B` over every
/// determinantal component of `model`, in the order of
/// [`DisentangleResult::window_spectra`].
pub fn model_window_spectrum(model: &ProcessModel, window: &[usize]) -> Result<Vec<C64>> {
    let w = normalise_subset(window, model.dim())?;
    let mut out = Vec::new();
    for k in model.kernels() {
        let block = crate::linalg::principal_block(k.matrix(), &w);
        out.extend(crate::linalg::eigenvalues(&block)?.into_iter().filter(|l| l.norm() > 1e-10));
    }
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(out)
}

/// `det K_S` when `model` has at most one determinantal component (zero
/// when it has none); `None` otherwise, since a superposition of several
/// determinantal processes has no single kernel.
pub fn model_principal_minor(model: &ProcessModel, subset: &[usize]) -> Option<C64> {
    let s = normalise_subset(subset, model.dim()).ok()?;
    match model.kernels().as_slice() {
        [] => Some(C64::new(if s.is_empty() { 1.0 } else { 0.0 }, 0.0)),
        [k] => Some(crate::linalg::determinant(&crate::linalg::principal_block(k.matrix(), &s))),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NthRootEntry {
    pub phi: Vec<C64>,
    pub value: f64,
    /// `F(φ)^{1/n}`.
    pub root: f64,
    /// `B(φ)` of the Poisson process with intensity `ν/n`, for Poisson inputs.
    pub poisson_root: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NthRootReport {
    pub n: usize,
    pub entries: Vec<NthRootEntry>,
    pub max_relative_error: Option<f64>,
    /// Only decided for Poisson inputs.
    pub passed: Option<bool>,
}

/// Relative tolerance of [`nth_root_check`].
pub const NTH_ROOT_TOL: f64 = 1e-10;

/// `F(φ)^{1/n}` over the grid; for a Poisson `F` each root is compared with
/// the functional of the intensity divided by `n`.
pub fn nth_root_check(f: &PgfOracle, n: usize, grid: &[TestFunction]) -> Result<NthRootReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("root order must be at least 1".into()));
    }
    let divided = match f {
        PgfOracle::ExactPoisson(nu) => Some(nu.scaled(1.0 / n as f64)?),
        _ => None,
    };
    let mut entries = Vec::with_capacity(grid.len());
    for phi in grid {
        let v = f.evaluate(phi)?;
        if !(v.re > 0.0) || v.im.abs() > 1e-12 * v.re {
            return Err(Error::NonPositiveValue { value: format!("{v}") });
        }
        let root = v.re.powf(1.0 / n as f64);
        let poisson_root = divided.as_ref().map(|nu| pgf_poisson(nu, phi).re);
        let relative_error = poisson_root.map(|p| (root - p).abs() / p.abs());
        entries.push(NthRootEntry { phi: phi.values().to_vec(), value: v.re, root, poisson_root, relative_error });
    }
    let max_relative_error = divided.as_ref().map(|_| entries.iter().filter_map(|e| e.relative_error).fold(0.0, f64::max));
    let passed = max_relative_error.map(|e| e <= NTH_ROOT_TOL);
    Ok(NthRootReport { n, entries, max_relative_error, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IntensityMeasure, Kernel};
    use crate::zeros::ZeroPolynomial;

    fn worked_kernel() -> Kernel {
        Kernel::from_real(2, &[0.5, 0.25, 0.25, 0.5]).unwrap()
    }

    fn worked() -> PgfOracle {
        PgfOracle::from_model(&ProcessModel::Superposition(vec![
            ProcessModel::Poisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap()),
            ProcessModel::Determinantal(worked_kernel()),
        ]))
    }

    fn close(a: C64, b: f64, tol: f64) -> bool {
        (a - C64::new(b, 0.0)).norm() <= tol
    }

    #[test]
    fn factors_the_worked_product() {
        let phi = TestFunction::from_real(&[1.0, 1.0]).unwrap();
        let fac = factor_at(&worked(), &phi, Some(2), &DisentangleOptions::default()).unwrap();
        let zs = fac.zeros.expanded();
        assert_eq!(zs.len(), 2);
        assert!(close(zs[0], -4.0 / 3.0, 1e-9) && close(zs[1], -4.0, 1e-9));
        assert!(close(fac.zero_factor, 2.1875, 1e-10));
        assert!((fac.nonvanishing - C64::new(3f64.exp(), 0.0)).norm() < 1e-9 * 3f64.exp());
    }

    #[test]
    fn pure_dpp_has_unit_nonvanishing_factor() {
        let f = PgfOracle::ExactDpp(worked_kernel());
        let phi = TestFunction::from_real(&[0.7, -0.3]).unwrap();
        let fac = factor_at(&f, &phi, Some(2), &DisentangleOptions::default()).unwrap();
        assert!(close(fac.nonvanishing, 1.0, 1e-12));
    }

    #[test]
    fn pure_poisson_passes_through() {
        let f = PgfOracle::ExactPoisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap());
        let phi = TestFunction::from_real(&[1.0, 1.0]).unwrap();
        let fac = factor_at(&f, &phi, Some(2), &DisentangleOptions::default()).unwrap();
        assert!(fac.zeros.is_empty());
        assert_eq!(fac.zero_factor, ONE);
        assert!(close(fac.nonvanishing, 3f64.exp(), 1e-9));
    }

    #[test]
    fn zero_at_unit_triggers_rescaling() {
        // F(z) = 1 - z: the ray through φ = 1 vanishes at z = 1
        let f = PgfOracle::ExactDpp(Kernel::from_real(1, &[-1.0]).unwrap());
        let phi = TestFunction::from_real(&[1.0]).unwrap();
        let fac = factor_at(&f, &phi, Some(1), &DisentangleOptions::default()).unwrap();
        assert!((fac.scale - 0.9).abs() < 1e-15);
        assert!(close(fac.zeros.expanded()[0], 1.0, 1e-9));
        assert!(close(fac.zero_factor, 0.1, 1e-9));
        assert!(close(fac.nonvanishing, 1.0, 1e-9));
    }

    #[test]
    fn recovers_worked_intensity_spectra_and_minors() {
        let space = GroundSpace::counting(2).unwrap();
        let opts = DisentangleOptions::default();
        let nu = recover_intensity(&worked(), &space, &opts).unwrap();
        assert!((nu.density()[0] - 1.0).abs() < 1e-8 && (nu.density()[1] - 2.0).abs() < 1e-8);
        let spectra = recover_window_spectra(&worked(), &space, &[vec![0, 1], vec![0]], &opts).unwrap();
        let full = &spectra[&vec![0, 1]];
        assert!(close(full[0], 0.75, 1e-9) && close(full[1], 0.25, 1e-9));
        assert!(close(spectra[&vec![0]][0], 0.5, 1e-9));
        let minors = recover_principal_minors(&worked(), &space, &opts).unwrap();
        assert!(close(minors[&vec![0]], 0.5, 1e-9));
        assert!(close(minors[&vec![1]], 0.5, 1e-9));
        assert!(close(minors[&vec![0, 1]], 0.1875, 1e-9));
    }

    #[test]
    fn zero_kernel_recovers_nothing() {
        let space = GroundSpace::counting(2).unwrap();
        let f = PgfOracle::ExactDpp(Kernel::zeros(2).unwrap());
        let res = disentangle(&f, &space, &DisentangleOptions::default()).unwrap();
        assert!(res.window_spectra.iter().all(|s| s.eigenvalues.is_empty()));
        assert!(res.principal_minors.unwrap().iter().all(|m| m.value.norm() < 1e-12));
        assert!(res.recovered_nu.unwrap().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn moebius_inversion() {
        // B_Π(1_T) for the worked kernel
        let b = [ONE, C64::new(1.5, 0.0), C64::new(1.5, 0.0), C64::new(2.1875, 0.0)];
        let m = minors_from(&b);
        assert!(close(m[1], 0.5, 1e-15) && close(m[2], 0.5, 1e-15) && close(m[3], 0.1875, 1e-15));
    }

    #[test]
    fn disentangle_bundles_fields() {
        let space = GroundSpace::counting(2).unwrap();
        let res = disentangle(&worked(), &space, &DisentangleOptions::default()).unwrap();
        assert!(res.diagnostics.failures.is_empty(), "{:?}", res.diagnostics.failures);
        assert_eq!(res.window_spectra.len(), 3);
        assert_eq!(res.per_phi_factors.len(), 20);
        assert!(res.diagnostics.max_residual < 1e-8);
        assert!(close(res.minor(&[0, 1]).unwrap(), 0.1875, 1e-9));
    }

    #[test]
    fn general_reports_values_only() {
        let space = GroundSpace::counting(2).unwrap();
        let res = disentangle_general(&worked(), &space, &DisentangleOptions::default()).unwrap();
        assert!(res.recovered_nu.is_none());
        for p in &res.per_phi_factors {
            let phi = TestFunction::new(p.factorization.phi.clone()).unwrap();
            let expected = pgf_poisson(&IntensityMeasure::new(vec![1.0, 2.0]).unwrap(), &phi);
            assert!((p.factorization.nonvanishing - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn nth_root_examples() {
        let f = PgfOracle::ExactPoisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap());
        let grid = [TestFunction::from_real(&[1.0, 1.0]).unwrap(), TestFunction::zero(2)];
        let r = nth_root_check(&f, 2, &grid).unwrap();
        assert!((r.entries[0].root - 1.5f64.exp()).abs() < 1e-12);
        assert_eq!(r.entries[1].root, 1.0);
        assert_eq!(r.passed, Some(true));
        let r1 = nth_root_check(&f, 1, &grid).unwrap();
        assert_eq!(r1.entries[0].root, r1.entries[0].value);
        let neg = PgfOracle::ExactDpp(Kernel::from_real(1, &[0.5]).unwrap());
        let bad = TestFunction::from_real(&[-3.0]).unwrap();
        assert!(matches!(nth_root_check(&neg, 2, &[bad]), Err(Error::NonPositiveValue { .. })));
    }

    #[test]
    fn exterior_fit_recovers_capped_zeros() {
        let f = worked();
        let phi = TestFunction::from_real(&[1.0, 1.0]).unwrap();
        let opts = DisentangleOptions { max_radius: 1.0, ..Default::default() };
        let fac = factor_at(&f, &phi, Some(2), &opts).unwrap();
        assert_eq!(fac.exterior_zeros, 2);
        let poly: ZeroPolynomial = polynomial_from_zeros(&fac.zeros).unwrap();
        assert!((poly.eval(ONE) - C64::new(2.1875, 0.0)).norm() < 1e-6);
    }
}
