mod common;

use common::{kernel, rng};
use pgf_disentangle::linalg::hermitian_eigen;
use pgf_disentangle::model::{indicator, validate_kernel_for_sampling, GroundSpace, Kernel};
use pgf_disentangle::{DMatrix, C64};
use proptest::prelude::*;

proptest! {
    #[test]
    fn valid_kernels_have_unit_interval_spectra_and_unitary_eigenvectors(n in 1usize..=8, seed in any::<u64>()) {
        let k = kernel(n, 0.0, 1.0, &mut rng(seed));
        prop_assert!(k.is_psd_contraction());
        let clamped = k.clamped_spectrum().unwrap();
        prop_assert!(clamped.iter().all(|l| (0.0..=1.0).contains(l)));
        let (_, v) = hermitian_eigen(k.matrix());
        let gram = v.adjoint() * &v;
        let dev = (gram - DMatrix::<C64>::identity(n, n)).norm();
        prop_assert!(dev < 1e-10, "columns deviate from orthonormal by {dev:e}");
    }

    #[test]
    fn indicator_support_round_trips(mask in 0u32..256) {
        let space = GroundSpace::counting(8).unwrap();
        let subset: Vec<usize> = (0..8).filter(|i| mask >> i & 1 == 1).collect();
        let phi = indicator(&space, &subset).unwrap();
        prop_assert_eq!(phi.support(), subset.as_slice());
    }
}

#[test]
fn sampling_validation_examples() {
    assert!(validate_kernel_for_sampling(&common::worked_kernel()).valid);
    assert!(validate_kernel_for_sampling(&Kernel::zeros(3).unwrap()).valid);
    let bad = validate_kernel_for_sampling(&Kernel::from_real(1, &[1.5]).unwrap());
    assert!(!bad.valid);
    assert!(bad.violations.iter().any(|v| v.contains("1.5")), "{:?}", bad.violations);
}

#[test]
fn indicator_examples() {
    let space = GroundSpace::counting(3).unwrap();
    let phi = indicator(&space, &[0, 2]).unwrap();
    assert_eq!(phi.values(), [common::c(1.0), common::c(0.0), common::c(1.0)]);
    assert!(indicator(&space, &[]).unwrap().support().is_empty());
    assert!(indicator(&space, &[3]).is_err());
}
