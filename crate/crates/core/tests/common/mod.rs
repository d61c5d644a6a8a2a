#![allow(dead_code)]

use pgf_disentangle::linalg::random_hermitian_with_spectrum;
use pgf_disentangle::model::{IntensityMeasure, Kernel, ProcessModel, TestFunction};
use pgf_disentangle::samplers::RngState;
use pgf_disentangle::C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    RngState::new(seed, 7).rng()
}

/// Hermitian kernel with eigenvalues uniform in `[lo, hi)`.
pub fn kernel(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Kernel {
    let spectrum: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Kernel::new(random_hermitian_with_spectrum(&spectrum, r)).unwrap()
}

pub fn intensity(n: usize, r: &mut ChaCha8Rng) -> IntensityMeasure {
    IntensityMeasure::new((0..n).map(|_| r.random_range(0.0..2.0)).collect()).unwrap()
}

pub fn superposition(n: usize, r: &mut ChaCha8Rng) -> ProcessModel {
    ProcessModel::Superposition(vec![
        ProcessModel::Poisson(intensity(n, r)),
        ProcessModel::Determinantal(kernel(n, 0.0, 0.95, r)),
    ])
}

/// Complex test function with some entries zeroed.
pub fn sparse_phi(n: usize, r: &mut ChaCha8Rng) -> TestFunction {
    let v = (0..n)
        .map(|_| if r.random_bool(0.25) { C64::new(0.0, 0.0) } else { C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) })
        .collect();
    TestFunction::new(v).unwrap()
}

pub fn worked_kernel() -> Kernel {
    Kernel::from_real(2, &[0.5, 0.25, 0.25, 0.5]).unwrap()
}

pub fn worked_model() -> ProcessModel {
    ProcessModel::Superposition(vec![
        ProcessModel::Poisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap()),
        ProcessModel::Determinantal(worked_kernel()),
    ])
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}
