//! Zeros of entire functions `z ↦ B(zφ)`.
//!
//! Two independent routes:
//!
//! * [`zeros_from_kernel`]: when the kernel is known, the zeros of
//!   `det(I + zT)` are `-1/λ` over the nonzero eigenvalues `λ` of `T`.
//! * [`zeros_by_contour`] / [`zeros_blind`]: when only evaluations are
//!   available. Winding numbers and power sums `Σ x^k` of the zeros come from
//!   trapezoidal quadrature of `z^k f'/f` on circles; Newton's identities turn
//!   the power sums into a monic polynomial whose companion eigenvalues are the
//!   zeros, which are then polished by deflated Newton steps on `f` itself.
//!
//! The disk is cut into annuli whose radii grow by a factor of two, and each
//! annulus is solved separately from the difference of its two boundary
//! integrals. Within an annulus the zeros have comparable moduli, which keeps
//! the power-sum to coefficient conversion well conditioned even when the
//! zeros spread over many orders of magnitude.
//!
//! Only the logarithmic derivative `f'/f` is integrated, so functions whose
//! modulus overflows on large circles (an exponential factor `e^{cz}`) are
//! handled as long as they supply `f'/f` analytically.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::linalg;
use crate::{Error, Result, C64};

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// A function analytic on the region of interest.
pub trait AnalyticFunction: Sync {
    fn value(&self, z: C64) -> C64;

    /// `f'(z)/f(z)`, if the function can provide it without differencing.
    fn log_derivative(&self, _z: C64) -> Option<C64> {
        None
    }
}

impl<F> AnalyticFunction for F
where
    F: Fn(C64) -> C64 + Sync,
{
    fn value(&self, z: C64) -> C64 {
        self(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourOptions {
    /// Node count of the first trapezoidal rule on each circle.
    pub initial_nodes: usize,
    /// Node-doubling cap.
    pub max_nodes: usize,
    /// Relative agreement required between successive node doublings.
    pub quadrature_tol: f64,
    /// Largest admissible distance of the winding integral from an integer.
    pub winding_tol: f64,
    /// Radius perturbations tried when a circle fails.
    pub radius_retries: usize,
    pub retry_factor: f64,
    /// Zeros closer than `merge_tol * radius` are merged.
    pub merge_tol: f64,
    pub newton_iters: usize,
    /// Central-difference step for `f'`, relative to the radius.
    pub fd_step: f64,
    /// Ratio between consecutive circles.
    pub growth: f64,
}

impl Default for ContourOptions {
    fn default() -> Self {
        Self {
            initial_nodes: 64,
            max_nodes: 8192,
            quadrature_tol: 1e-9,
            winding_tol: 0.01,
            radius_retries: 5,
            retry_factor: 1.07,
            merge_tol: 1e-7,
            newton_iters: 10,
            fd_step: 1e-6,
            growth: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Zero {
    pub value: C64,
    pub multiplicity: usize,
    /// `|f(value)|` after polishing.
    pub residual: f64,
    /// Standard error of the location, when the function is an estimate.
    pub uncertainty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroSet {
    pub zeros: Vec<Zero>,
    pub search_radius: f64,
    /// Sum of multiplicities.
    pub total_count: usize,
    /// Distance of the outermost winding integral from its integer value.
    pub winding_residual: f64,
}

impl ZeroSet {
    pub fn empty(search_radius: f64) -> Self {
        Self { zeros: Vec::new(), search_radius, total_count: 0, winding_residual: 0.0 }
    }

    fn from_clusters(clusters: Vec<(C64, usize)>, search_radius: f64, winding_residual: f64) -> Self {
        let mut zeros: Vec<Zero> = clusters
            .into_iter()
            .map(|(value, multiplicity)| Zero { value, multiplicity, residual: f64::NAN, uncertainty: None })
            .collect();
        sort_zeros(&mut zeros);
        let total_count = zeros.iter().map(|z| z.multiplicity).sum();
        Self { zeros, search_radius, total_count, winding_residual }
    }

    /// Simple zeros at the given points, with residuals `|f(x)|`.
    pub fn from_points<F: AnalyticFunction + ?Sized>(f: &F, points: &[C64], search_radius: f64) -> Self {
        let mut set = Self::from_clusters(points.iter().map(|&p| (p, 1)).collect(), search_radius, 0.0);
        for z in &mut set.zeros {
            z.residual = f.value(z.value).norm();
        }
        set
    }

    pub fn is_empty(&self) -> bool {
        self.zeros.is_empty()
    }

    /// Zeros repeated according to multiplicity.
    pub fn expanded(&self) -> Vec<C64> {
        self.zeros.iter().flat_map(|z| std::iter::repeat_n(z.value, z.multiplicity)).collect()
    }

    /// Union of two multisets of zeros.
    pub fn union(&self, other: &ZeroSet) -> ZeroSet {
        let mut zeros = self.zeros.clone();
        zeros.extend(other.zeros.iter().cloned());
        sort_zeros(&mut zeros);
        ZeroSet {
            total_count: self.total_count + other.total_count,
            search_radius: self.search_radius.max(other.search_radius),
            winding_residual: self.winding_residual.max(other.winding_residual),
            zeros,
        }
    }
}

/// Ascending modulus, then argument.
fn sort_zeros(zeros: &mut [Zero]) {
    zeros.sort_by(|a, b| {
        a.value.norm().total_cmp(&b.value.norm()).then(a.value.arg().total_cmp(&b.value.arg()))
    });
}

/// Zeros of `det(I + zT)` with `T = diag(φ) K diag(1_S)`: the points `-1/λ`
/// for the nonzero eigenvalues `λ` of `T`. Eigenvalues below `1e-10·‖T‖`
/// count as zero.
pub fn zeros_from_kernel(k: &crate::model::Kernel, phi: &crate::model::TestFunction) -> Result<ZeroSet> {
    let t = k.compressed(phi);
    let scale = linalg::frobenius(&t);
    let eig = linalg::eigenvalues(&t)?;
    let zs: Vec<C64> = eig.into_iter().filter(|l| l.norm() > 1e-10 * scale).map(|l| -ONE / l).collect();
    let radius = 2.0 * zs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let clusters = merge_close(zs.into_iter().map(|z| (z, 1)).collect(), |a, b| {
        (a - b).norm() <= 1e-9 * a.norm().max(b.norm())
    });
    Ok(ZeroSet::from_clusters(clusters, radius, 0.0))
}

/// Trapezoidal samples of `f'/f` on a circle.
#[derive(Debug, Clone)]
pub struct CircleSamples {
    pub radius: f64,
    /// Values of `f'/f` at `radius · e^{2πij/N}`.
    pub log_derivative: Vec<C64>,
    pub count: usize,
    pub winding_residual: f64,
}

impl CircleSamples {
    pub fn nodes(&self) -> usize {
        self.log_derivative.len()
    }

    pub fn node(&self, j: usize) -> C64 {
        node(self.radius, j, self.nodes())
    }

    /// `(1/2πi) ∮ (z/scale)^k f'/f dz`; `k` may be negative.
    pub fn moment(&self, k: i32, scale: f64) -> C64 {
        moment(&self.log_derivative, self.radius, k, scale)
    }
}

fn node(radius: f64, j: usize, n: usize) -> C64 {
    C64::from_polar(radius, 2.0 * PI * j as f64 / n as f64)
}

fn moment(g: &[C64], radius: f64, k: i32, scale: f64) -> C64 {
    let n = g.len();
    let terms: Vec<C64> = g
        .iter()
        .enumerate()
        .map(|(j, gj)| {
            let z = node(radius, j, n);
            (z / scale).powi(k) * gj * z
        })
        .collect();
    crate::pgf::pairwise_sum(&terms) / n as f64
}

fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// `f'/f` from the function, by central differences of `log f` when no
/// analytic form is supplied.
fn log_derivative_at<F: AnalyticFunction + ?Sized>(f: &F, z: C64, h: f64) -> C64 {
    if let Some(g) = f.log_derivative(z) {
        if g.re.is_finite() && g.im.is_finite() {
            return g;
        }
    }
    let lp = f.value(z + h).ln();
    let lm = f.value(z - h).ln();
    let d = lp - lm;
    C64::new(d.re, wrap_phase(d.im)) / (2.0 * h)
}

/// `(f, f')` by central differences of the value, for polishing near zeros.
fn value_and_derivative<F: AnalyticFunction + ?Sized>(f: &F, z: C64, h: f64) -> (C64, C64) {
    let v = f.value(z);
    if let Some(g) = f.log_derivative(z) {
        if g.re.is_finite() && g.im.is_finite() && v != ZERO {
            return (v, g * v);
        }
    }
    (v, (f.value(z + h) - f.value(z - h)) / (2.0 * h))
}

fn is_finite(z: C64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

fn try_circle<F: AnalyticFunction + ?Sized>(f: &F, radius: f64, opts: &ContourOptions) -> Result<CircleSamples> {
    let h = opts.fd_step * radius;
    let eval = |n: usize, idx: Vec<usize>| -> Result<Vec<C64>> {
        let vals: Vec<C64> = idx.par_iter().map(|&j| log_derivative_at(f, node(radius, j, n), h)).collect();
        if vals.iter().any(|g| !is_finite(*g)) {
            return Err(Error::ContourThroughZero { radius });
        }
        Ok(vals)
    };
    let mut n = opts.initial_nodes.max(8);
    let mut g = eval(n, (0..n).collect())?;
    loop {
        if 2 * n > opts.max_nodes {
            return Err(Error::QuadratureNotConverged { radius, nodes: n });
        }
        let odd = eval(2 * n, (0..n).map(|j| 2 * j + 1).collect())?;
        let mut fine = Vec::with_capacity(2 * n);
        for (a, b) in g.iter().zip(&odd) {
            fine.push(*a);
            fine.push(*b);
        }
        let m0 = moment(&fine, radius, 0, radius);
        let kmax = (m0.re.round().max(0.0) as i32 + 1).min(opts.max_nodes as i32 / 4);
        let l1 = fine.iter().map(|x| x.norm()).sum::<f64>() * radius / fine.len() as f64;
        let floor = 64.0 * f64::EPSILON * l1;
        let converged = (0..=kmax).all(|k| {
            let coarse = moment(&g, radius, k, radius);
            let refined = moment(&fine, radius, k, radius);
            (coarse - refined).norm() <= opts.quadrature_tol * refined.norm().max(1.0) + floor
        });
        g = fine;
        n *= 2;
        if converged {
            let count = m0.re.round();
            let winding_residual = (m0 - C64::new(count, 0.0)).norm();
            if winding_residual >= opts.winding_tol || count < 0.0 {
                return Err(Error::NonIntegerWindingNumber { value: m0.re, residue: winding_residual });
            }
            return Ok(CircleSamples { radius, log_derivative: g, count: count as usize, winding_residual });
        }
    }
}

/// Quadrature on one circle, perturbing the radius outward when the circle
/// runs too close to a zero.
pub fn resolve_circle<F: AnalyticFunction + ?Sized>(f: &F, radius: f64, opts: &ContourOptions) -> Result<CircleSamples> {
    let mut last = None;
    for attempt in 0..=opts.radius_retries {
        let r = radius * opts.retry_factor.powi(attempt as i32);
        match try_circle(f, r, opts) {
            Ok(c) => return Ok(c),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `e_0..e_m` from power sums `p_1..p_m` by Newton's identities.
pub fn power_sums_to_elementary(p: &[C64]) -> Vec<C64> {
    let m = p.len();
    let mut e = vec![ONE; m + 1];
    for k in 1..=m {
        let mut acc = ZERO;
        for i in 1..=k {
            let term = e[k - i] * p[i - 1];
            acc += if i % 2 == 1 { term } else { -term };
        }
        e[k] = acc / k as f64;
    }
    e
}

/// Roots of `∏ (w - w_i)` given the power sums of the `w_i`.
pub fn roots_from_power_sums(p: &[C64]) -> Result<Vec<C64>> {
    let m = p.len();
    let e = power_sums_to_elementary(p);
    // coefficient of w^j is (-1)^{m-j} e_{m-j}
    let lower: Vec<C64> = (0..m).map(|j| if (m - j) % 2 == 0 { e[m - j] } else { -e[m - j] }).collect();
    linalg::monic_roots(&lower)
}

fn merge_close(points: Vec<(C64, usize)>, close: impl Fn(C64, C64) -> bool) -> Vec<(C64, usize)> {
    let mut clusters: Vec<(C64, usize)> = Vec::new();
    for (z, m) in points {
        if let Some(c) = clusters.iter_mut().find(|(c, _)| close(*c, z)) {
            let total = c.1 + m;
            c.0 = (c.0 * c.1 as f64 + z * m as f64) / total as f64;
            c.1 = total;
        } else {
            clusters.push((z, m));
        }
    }
    clusters
}

/// Deflated Newton: each zero is refined against `f` with the other zeros
/// divided out, stepping by its multiplicity.
fn polish<F: AnalyticFunction + ?Sized>(f: &F, zeros: &mut [(C64, usize)], radius: f64, opts: &ContourOptions) {
    let h = opts.fd_step * radius;
    for _pass in 0..2 {
        for i in 0..zeros.len() {
            let (start, mult) = zeros[i];
            let mut x = start;
            for _ in 0..opts.newton_iters {
                let (v, d) = value_and_derivative(f, x, h);
                if v == ZERO {
                    break;
                }
                let g = d / v;
                let deflation: C64 = zeros
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (xj, mj))| C64::new(*mj as f64, 0.0) / (x - xj))
                    .sum();
                let gd = g - deflation;
                if !is_finite(gd) || gd == ZERO {
                    break;
                }
                let step = C64::new(mult as f64, 0.0) / gd;
                if !is_finite(step) {
                    break;
                }
                x -= step;
                if step.norm() <= 4.0 * f64::EPSILON * x.norm().max(1.0) {
                    break;
                }
            }
            // a step that leaves the neighbourhood means Newton diverged
            if is_finite(x) && (x - start).norm() <= 0.25 * start.norm().max(f64::MIN_POSITIVE) {
                zeros[i].0 = x;
            }
        }
    }
}

/// Zeros inside the outermost of `circles` (ascending radii, innermost
/// circle enclosing no zero).
fn solve_annuli<F: AnalyticFunction + ?Sized>(f: &F, circles: &[CircleSamples], opts: &ContourOptions) -> Result<ZeroSet> {
    let outer = circles.last().expect("at least one circle");
    let mut raw: Vec<(C64, usize)> = Vec::new();
    for pair in circles.windows(2) {
        let (inner, outer_c) = (&pair[0], &pair[1]);
        if outer_c.count < inner.count {
            return Err(Error::Numerical(format!(
                "winding numbers decrease outward ({} at r={:.6e}, {} at r={:.6e})",
                inner.count, inner.radius, outer_c.count, outer_c.radius
            )));
        }
        let m = outer_c.count - inner.count;
        if m == 0 {
            continue;
        }
        let rho = outer_c.radius;
        let p: Vec<C64> = (1..=m as i32).map(|k| outer_c.moment(k, rho) - inner.moment(k, rho)).collect();
        for w in roots_from_power_sums(&p)? {
            raw.push((w * rho, 1));
        }
    }
    let tol = opts.merge_tol * outer.radius;
    let mut clusters = merge_close(raw, |a, b| (a - b).norm() <= tol);
    polish(f, &mut clusters, outer.radius, opts);
    let clusters = merge_close(clusters, |a, b| (a - b).norm() <= tol);
    let mut set = ZeroSet::from_clusters(clusters, outer.radius, outer.winding_residual);
    for z in &mut set.zeros {
        z.residual = f.value(z.value).norm();
    }
    if set.total_count != outer.count {
        return Err(Error::Numerical("zero count lost while merging".into()));
    }
    Ok(set)
}

/// Prepends circles of shrinking radius until one encloses no zero.
fn descend<F: AnalyticFunction + ?Sized>(f: &F, circles: &mut Vec<CircleSamples>, opts: &ContourOptions) -> Result<()> {
    let mut guard = 0;
    while circles[0].count > 0 {
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("zeros accumulate at the origin".into()));
        }
        let r = circles[0].radius / opts.growth;
        if r < f64::MIN_POSITIVE * 1e10 {
            return Err(Error::ZeroAtOrigin);
        }
        let c = resolve_circle(f, r, opts)?;
        circles.insert(0, c);
    }
    Ok(())
}

/// All zeros of `f` in the disk `|z| < radius`; `f(0)` must be nonzero.
pub fn zeros_by_contour<F: AnalyticFunction + ?Sized>(
    f: &F,
    radius: f64,
    degree_hint: Option<usize>,
    opts: &ContourOptions,
) -> Result<ZeroSet> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Numerical(format!("contour radius {radius} must be positive")));
    }
    if f.value(ZERO) == ZERO {
        return Err(Error::ZeroAtOrigin);
    }
    let outer = resolve_circle(f, radius, opts)?;
    check_degree(outer.count, degree_hint)?;
    let mut circles = vec![outer];
    descend(f, &mut circles, opts)?;
    if circles.len() == 1 {
        return Ok(ZeroSet::empty(circles[0].radius));
    }
    solve_annuli(f, &circles, opts)
}

fn check_degree(count: usize, bound: Option<usize>) -> Result<()> {
    match bound {
        Some(d) if count > d => Err(Error::Numerical(format!("found {count} zeros but the degree bound is {d}"))),
        _ => Ok(()),
    }
}

/// Radius schedule for a search without a known zero-free radius.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindSearch {
    pub start_radius: f64,
    /// Circles never exceed this radius.
    pub max_radius: f64,
    /// Stop as soon as this many zeros are enclosed.
    pub degree_bound: Option<usize>,
}

/// Result of [`zeros_blind`], keeping the outermost circle for exterior
/// analysis.
#[derive(Debug, Clone)]
pub struct ContourOutcome {
    pub zeros: ZeroSet,
    pub outer: CircleSamples,
    /// The search ended at `max_radius` short of the degree bound.
    pub capped: bool,
}

/// Escalating search: circles grow from `start_radius` until the degree
/// bound is met, or (without a bound) until a nonzero winding number repeats
/// on two consecutive circles, or `max_radius` is reached.
pub fn zeros_blind<F: AnalyticFunction + ?Sized>(f: &F, search: &BlindSearch, opts: &ContourOptions) -> Result<ContourOutcome> {
    if f.value(ZERO) == ZERO {
        return Err(Error::ZeroAtOrigin);
    }
    if !(search.max_radius > 0.0) {
        return Err(Error::Numerical("search radius cap must be positive".into()));
    }
    let start = search.start_radius.min(search.max_radius);
    let mut circles = vec![resolve_circle(f, start, opts)?];
    let mut capped = false;
    loop {
        let cur = circles.last().expect("non-empty");
        check_degree(cur.count, search.degree_bound)?;
        match search.degree_bound {
            Some(d) if cur.count == d => break,
            None if cur.count > 0 && circles.len() >= 2 && circles[circles.len() - 2].count == cur.count => break,
            _ => {}
        }
        if cur.radius >= search.max_radius {
            capped = search.degree_bound.is_some();
            break;
        }
        let next = (cur.radius * opts.growth).min(search.max_radius);
        let c = resolve_circle(f, next, opts)?;
        circles.push(c);
    }
    descend(f, &mut circles, opts)?;
    let outer = circles.last().expect("non-empty").clone();
    let zeros = if circles.len() == 1 { ZeroSet::empty(outer.radius) } else { solve_annuli(f, &circles, opts)? };
    Ok(ContourOutcome { zeros, outer, capped })
}

/// Power sums `T_k = Σ ν^k` with `ν = -r/x`, `k = 2..=kmax`, over the zeros
/// `x` of `f` lying outside the circle, where `r` is its radius. They are read off the
/// Taylor coefficients of `log(f / ∏_{interior}(1 - z/x))`; the exponential
/// part only affects the linear coefficient and drops out for `k ≥ 2`.
pub fn exterior_power_sums(outer: &CircleSamples, interior: &ZeroSet, kmax: usize) -> Vec<C64> {
    let deflated = deflated_log_derivative(outer, interior);
    (2..=kmax)
        .map(|k| {
            // the moment is k·a_k·r^k for the Taylor coefficient a_k of the log,
            // and a_k = (-1)^{k-1} Σ μ^k / k with μ = -1/x
            let m = moment(&deflated, outer.radius, -(k as i32), outer.radius);
            if k % 2 == 0 {
                -m
            } else {
                m
            }
        })
        .collect()
}

/// `f'/f` on the circle with the interior zeros divided out.
pub fn deflated_log_derivative(outer: &CircleSamples, interior: &ZeroSet) -> Vec<C64> {
    outer
        .log_derivative
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let z = outer.node(j);
            g - interior.zeros.iter().map(|x| C64::new(x.multiplicity as f64, 0.0) / (z - x.value)).sum::<C64>()
        })
        .collect()
}

/// Prony fit of `m` exterior zeros from `T_2..T_{2m+1}` (as returned by
/// [`exterior_power_sums`] with `kmax ≥ 2m+1`). Returns the zeros `x`, or
/// `None` when the Hankel system is singular or a fitted zero falls inside
/// the circle.
pub fn exterior_zeros_from_power_sums(t: &[C64], m: usize, radius: f64) -> Option<Vec<C64>> {
    Some(exterior_points_prony(t, m)?.iter().map(|nu| exterior_zero(*nu, radius)).collect())
}

/// The points `ν = -r/x` of a Prony fit, all inside the unit disk.
pub fn exterior_points_prony(t: &[C64], m: usize) -> Option<Vec<C64>> {
    if m == 0 {
        return Some(Vec::new());
    }
    if t.len() < 2 * m {
        return None;
    }
    // t[i] holds T_{i+2}
    let h = nalgebra::DMatrix::from_fn(m, m, |i, j| t[i + j]);
    let rhs = nalgebra::DVector::from_fn(m, |i, _| -t[i + m]);
    let svals = h.clone().singular_values();
    let (smax, smin) = (svals.max(), svals.min());
    if !(smin > 1e-12 * smax) || smax == 0.0 {
        return None;
    }
    let q = h.lu().solve(&rhs)?;
    let nus = linalg::monic_roots(q.as_slice()).ok()?;
    // |x| > r means |ν| < 1
    nus.iter().all(|nu| nu.norm() < 1.0 && *nu != ZERO).then_some(nus)
}

/// `x = -r/ν`.
pub fn exterior_zero(nu: C64, radius: f64) -> C64 {
    -C64::new(radius, 0.0) / nu
}

/// Weighted least-squares refinement of exterior points `ν` (as in
/// [`exterior_zeros_from_power_sums`]): Gauss–Newton on
/// `Σ_k |T_k - Σ_j ν_j^k|² / σ_k²` from `init`, with step halving. Returns
/// the points and the final weighted residual, or `None` if the iteration
/// leaves the unit disk or does not settle.
pub fn refine_exterior_points(t: &[C64], sigma: &[f64], init: &[C64]) -> Option<(Vec<C64>, f64)> {
    let m = init.len();
    if m == 0 {
        return Some((Vec::new(), chi_square(t, sigma, init)));
    }
    if t.len() < m || sigma.len() != t.len() || sigma.iter().any(|s| !(*s > 0.0)) {
        return None;
    }
    let mut nu = init.to_vec();
    let mut chi2 = chi_square(t, sigma, &nu);
    for _ in 0..100 {
        let resid = nalgebra::DVector::from_fn(t.len(), |i, _| (t[i] - power_sum(&nu, i + 2)) / sigma[i]);
        let jac = nalgebra::DMatrix::from_fn(t.len(), m, |i, j| {
            let k = (i + 2) as f64;
            nu[j].powu(i as u32 + 1) * k / sigma[i]
        });
        let step = jac.svd(true, true).solve(&resid, 1e-12).ok()?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<C64> = nu.iter().zip(step.iter()).map(|(v, d)| v + d * scale).collect();
            let c = chi_square(t, sigma, &trial);
            if trial.iter().all(|v| v.norm() < 1.0) && c <= chi2 {
                let moved = step.norm() * scale;
                nu = trial;
                let converged = moved < 1e-13 || chi2 - c <= 1e-15 * chi2.max(1e-300);
                chi2 = c;
                accepted = true;
                if converged {
                    return Some((nu, chi2));
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Some((nu, chi2));
        }
    }
    Some((nu, chi2))
}

fn power_sum(nu: &[C64], k: usize) -> C64 {
    nu.iter().map(|v| v.powu(k as u32)).sum()
}

fn chi_square(t: &[C64], sigma: &[f64], nu: &[C64]) -> f64 {
    t.iter().zip(sigma).enumerate().map(|(i, (t, s))| ((t - power_sum(nu, i + 2)) / s).norm_sqr()).sum()
}

/// `z ↦ ∏ (1 - z/x)^{mult(x)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroPolynomial {
    zeros: Vec<(C64, usize)>,
}

impl ZeroPolynomial {
    pub fn eval(&self, z: C64) -> C64 {
        self.zeros.iter().fold(ONE, |acc, (x, m)| acc * (ONE - z / x).powu(*m as u32))
    }

    pub fn degree(&self) -> usize {
        self.zeros.iter().map(|(_, m)| m).sum()
    }
}

impl AnalyticFunction for ZeroPolynomial {
    fn value(&self, z: C64) -> C64 {
        self.eval(z)
    }

    fn log_derivative(&self, z: C64) -> Option<C64> {
        Some(self.zeros.iter().map(|(x, m)| C64::new(*m as f64, 0.0) / (z - x)).sum())
    }
}

/// The canonical product normalised to one at the origin.
pub fn polynomial_from_zeros(zs: &ZeroSet) -> Result<ZeroPolynomial> {
    if zs.zeros.iter().any(|z| z.value == ZERO) {
        return Err(Error::ZeroAtOrigin);
    }
    Ok(ZeroPolynomial { zeros: zs.zeros.iter().map(|z| (z.value, z.multiplicity)).collect() })
}

/// Largest distance between matched points of two multisets of equal size,
/// pairing globally nearest points first; `None` when the sizes differ.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut pairs: Vec<(f64, usize, usize)> =
        a.iter().enumerate().flat_map(|(i, x)| b.iter().enumerate().map(move |(j, y)| ((x - y).norm(), i, j))).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for (d, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            worst = worst.max(d);
        }
    }
    Some(worst)
}
