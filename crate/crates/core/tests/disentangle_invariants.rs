mod common;

use common::{c, kernel, rng, worked_kernel, worked_model};
use pgf_disentangle::disentangle::{
    disentangle, disentangle_general, factor_at, model_principal_minor, model_window_spectrum, nth_root_check, phi_grid,
    DisentangleOptions, DisentangleResult, Uncertainty,
};
use pgf_disentangle::model::{GroundSpace, IntensityMeasure, ProcessModel, TestFunction};
use pgf_disentangle::pgf::{pgf_poisson, PgfOracle};
use pgf_disentangle::zeros::{multiset_distance, zeros_from_kernel};
use pgf_disentangle::{Error, C64};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn exact() -> DisentangleOptions {
    DisentangleOptions { uncertainty: Uncertainty::None, ..DisentangleOptions::default() }
}

fn run(model: &ProcessModel) -> DisentangleResult {
    let space = GroundSpace::counting(model.dim()).unwrap();
    disentangle(&PgfOracle::from_model(model), &space, &exact()).unwrap()
}

fn permute(model: &ProcessModel, perm: &[usize]) -> ProcessModel {
    match model {
        ProcessModel::Poisson(nu) => {
            ProcessModel::Poisson(IntensityMeasure::new(perm.iter().map(|&i| nu.density()[i]).collect()).unwrap())
        }
        ProcessModel::Determinantal(k) => ProcessModel::Determinantal(k.permuted(perm).unwrap()),
        ProcessModel::Superposition(parts) => ProcessModel::Superposition(parts.iter().map(|p| permute(p, perm)).collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_recovery_and_factorization_residual(n in 2usize..=5, seed in any::<u64>()) {
        let model = common::superposition(n, &mut rng(seed));
        let res = run(&model);
        prop_assert!(res.diagnostics.failures.is_empty(), "{:?}", res.diagnostics.failures);
        prop_assert!(res.diagnostics.max_residual < 1e-8);
        let truth = model.poisson_part().unwrap();
        for (a, b) in res.recovered_nu.as_ref().unwrap().iter().zip(truth.density()) {
            prop_assert!((a - b).abs() < 1e-7);
        }
        for w in &res.window_spectra {
            let want = model_window_spectrum(&model, &w.window).unwrap();
            prop_assert!(multiset_distance(&w.eigenvalues, &want).is_some_and(|d| d < 1e-6));
        }
        for m in res.principal_minors.as_ref().unwrap() {
            prop_assert!((m.value - model_principal_minor(&model, &m.subset).unwrap()).norm() < 1e-7);
        }
        prop_assert!(res.per_phi_factors.iter().all(|f| f.residual < 1e-8));
    }

    #[test]
    fn relabelling_atoms_permutes_the_result(n in 2usize..=5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = common::superposition(n, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let (a, b) = (run(&model), run(&permute(&model, &perm)));
        let (na, nb) = (a.recovered_nu.clone().unwrap(), b.recovered_nu.clone().unwrap());
        // single-atom rays do not see the labelling; multi-atom blocks are
        // factored in permuted order and agree to rounding only
        for i in 0..n {
            prop_assert_eq!(nb[i].to_bits(), na[perm[i]].to_bits());
        }
        for m in b.principal_minors.as_ref().unwrap() {
            let image: Vec<usize> = m.subset.iter().map(|&i| perm[i]).collect();
            prop_assert!((m.value - a.minor(&image).unwrap()).norm() < 1e-10);
        }
        for i in 0..n {
            let d = multiset_distance(b.spectrum(&[i]).unwrap(), a.spectrum(&[perm[i]]).unwrap());
            prop_assert!(d.is_some_and(|d| d < 1e-10));
        }
    }

    #[test]
    fn poisson_roots_are_poisson_functionals(n in 1usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let nu = common::intensity(n, &mut r);
        let f = PgfOracle::ExactPoisson(nu.clone());
        let grid = phi_grid(n, &DisentangleOptions::default());
        for k in [2, 3, 5] {
            let rep = nth_root_check(&f, k, &grid).unwrap();
            prop_assert_eq!(rep.passed, Some(true));
            prop_assert!(rep.entries.iter().all(|e| e.root > 0.0));
        }
        // multiplicative over disjoint supports
        let split = r.random_range(1..=n);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let left = TestFunction::from_real(&v.iter().enumerate().map(|(i, x)| if i < split { *x } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let right = TestFunction::from_real(&v.iter().enumerate().map(|(i, x)| if i < split { 0.0 } else { *x }).collect::<Vec<_>>()).unwrap();
        let whole = TestFunction::from_real(&v).unwrap();
        for k in [2, 3, 5] {
            let roots = nth_root_check(&f, k, &[left.clone(), right.clone(), whole.clone()]).unwrap();
            let (a, b, w) = (roots.entries[0].root, roots.entries[1].root, roots.entries[2].root);
            prop_assert!((a * b - w).abs() <= 1e-10 * w);
        }
    }
}

#[test]
fn worked_factorization() {
    let f = PgfOracle::from_model(&worked_model());
    let ones = TestFunction::from_real(&[1.0, 1.0]).unwrap();
    let fac = factor_at(&f, &ones, Some(2), &exact()).unwrap();
    assert!(multiset_distance(&fac.zeros.expanded(), &[c(-4.0 / 3.0), c(-4.0)]).unwrap() < 1e-9);
    assert!((fac.zero_factor - c(2.1875)).norm() < 1e-10);
    assert!((fac.nonvanishing - c(3f64.exp())).norm() < 1e-9);

    let dpp = PgfOracle::ExactDpp(worked_kernel());
    let pois = PgfOracle::ExactPoisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap());
    for phi in phi_grid(2, &DisentangleOptions::default()) {
        assert!((factor_at(&dpp, &phi, Some(2), &exact()).unwrap().nonvanishing - c(1.0)).norm() < 1e-10);
        let p = factor_at(&pois, &phi, Some(2), &exact()).unwrap();
        assert!(p.zeros.is_empty() && p.zero_factor == c(1.0));
        assert!((p.nonvanishing - pois.evaluate(&phi).unwrap()).norm() < 1e-14);
    }
}

#[test]
fn worked_recovery() {
    let res = run(&worked_model());
    let nu = res.recovered_nu.as_ref().unwrap();
    assert!((nu[0] - 1.0).abs() < 1e-8 && (nu[1] - 2.0).abs() < 1e-8);
    let full = res.spectrum(&[0, 1]).unwrap();
    assert!(multiset_distance(full, &[c(0.75), c(0.25)]).unwrap() < 1e-9);
    assert!(multiset_distance(res.spectrum(&[0]).unwrap(), &[c(0.5)]).unwrap() < 1e-9);
    assert!((res.minor(&[0]).unwrap() - c(0.5)).norm() < 1e-9);
    assert!((res.minor(&[0, 1]).unwrap() - c(0.1875)).norm() < 1e-9);

    let pure = run(&ProcessModel::Determinantal(worked_kernel()));
    assert!(pure.recovered_nu.unwrap().iter().all(|v| v.abs() < 1e-8));
    let empty = run(&ProcessModel::Determinantal(pgf_disentangle::model::Kernel::zeros(3).unwrap()));
    assert!(empty.window_spectra.iter().all(|w| w.eigenvalues.is_empty()));
    assert!(empty.principal_minors.unwrap().iter().all(|m| m.value.norm() < 1e-12));
}

#[test]
fn distinct_models_give_distinct_results() {
    let mut r = rng(99);
    let (m1, m2) = (common::superposition(4, &mut r), common::superposition(4, &mut r));
    let (a, b) = (run(&m1), run(&m2));
    let dnu = a.recovered_nu.unwrap().iter().zip(b.recovered_nu.unwrap()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let dminor = a
        .principal_minors
        .unwrap()
        .iter()
        .zip(b.principal_minors.unwrap())
        .map(|(x, y)| (x.value - y.value).norm())
        .fold(0.0, f64::max);
    assert!(dnu.max(dminor) > 1e-6);
}

#[test]
fn general_mode_reports_the_nonvanishing_factor_by_value() {
    let space = GroundSpace::counting(2).unwrap();
    let (nu1, nu2) = (IntensityMeasure::new(vec![0.5, 1.0]).unwrap(), IntensityMeasure::new(vec![0.25, 0.75]).unwrap());
    let theta = ProcessModel::Superposition(vec![
        ProcessModel::Poisson(nu1.clone()),
        ProcessModel::Poisson(nu2.clone()),
        ProcessModel::Determinantal(worked_kernel()),
    ]);
    let res = disentangle_general(&PgfOracle::from_model(&theta), &space, &exact()).unwrap();
    assert!(res.recovered_nu.is_none());
    let summed = nu1.add(&nu2).unwrap();
    for f in &res.per_phi_factors {
        let phi = TestFunction::new(f.factorization.phi.clone()).unwrap();
        assert!((f.factorization.nonvanishing - pgf_poisson(&summed, &phi)).norm() < 1e-10);
    }

    let mut r = rng(5);
    let (k1, k2) = (kernel(2, 0.05, 0.95, &mut r), kernel(2, 0.05, 0.95, &mut r));
    let xi = ProcessModel::Superposition(vec![ProcessModel::Determinantal(k1.clone()), ProcessModel::Determinantal(k2.clone())]);
    let opts = DisentangleOptions { zero_factors: Some(2), ..exact() };
    let res = disentangle_general(&PgfOracle::from_model(&xi), &space, &opts).unwrap();
    for f in &res.per_phi_factors {
        let phi = TestFunction::new(f.factorization.phi.clone()).unwrap();
        let want = zeros_from_kernel(&k1, &phi).unwrap().union(&zeros_from_kernel(&k2, &phi).unwrap());
        assert!(multiset_distance(&f.factorization.zeros.expanded(), &want.expanded()).unwrap() < 1e-6);
        assert!((f.factorization.nonvanishing - c(1.0)).norm() < 1e-10);
    }

    let trivial = disentangle_general(&PgfOracle::ExactDpp(worked_kernel()), &space, &exact()).unwrap();
    assert!(trivial.per_phi_factors.iter().all(|f| (f.factorization.nonvanishing - c(1.0)).norm() < 1e-10));
}

#[test]
fn nth_root_examples() {
    let f = PgfOracle::ExactPoisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap());
    let ones = TestFunction::from_real(&[1.0, 1.0]).unwrap();
    let rep = nth_root_check(&f, 2, &[ones.clone()]).unwrap();
    assert!((rep.entries[0].root - 1.5f64.exp()).abs() < 1e-12 * 1.5f64.exp());
    let id = nth_root_check(&f, 1, &[ones]).unwrap();
    assert_eq!(id.entries[0].root, id.entries[0].value);
    let zero = nth_root_check(&f, 3, &[TestFunction::zero(2)]).unwrap();
    assert_eq!(zero.entries[0].root, 1.0);

    let dpp = PgfOracle::ExactDpp(pgf_disentangle::model::Kernel::from_real(1, &[1.0]).unwrap());
    let hit = nth_root_check(&dpp, 2, &[TestFunction::from_real(&[-1.0]).unwrap()]);
    assert!(matches!(hit, Err(Error::NonPositiveValue { .. })));
}

#[test]
fn unit_zero_triggers_rescaling() {
    // det(1 - z) vanishes at z = 1 on the ray through φ = 1
    let f = PgfOracle::ExactDpp(pgf_disentangle::model::Kernel::from_real(1, &[-1.0]).unwrap());
    let fac = factor_at(&f, &TestFunction::from_real(&[1.0]).unwrap(), Some(1), &exact()).unwrap();
    assert!(fac.scale < 1.0);
    assert!((fac.zeros.expanded()[0] - C64::new(1.0, 0.0)).norm() < 1e-9);
}
