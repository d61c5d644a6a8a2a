mod common;

use common::{kernel, rng, worked_kernel};
use pgf_disentangle::model::{IntensityMeasure, Kernel, ProcessModel};
use pgf_disentangle::samplers::{brute_force_dpp_distribution, sample_batch, RngState, SampleBatch};
use proptest::prelude::*;

fn mean_count(b: &SampleBatch, i: usize) -> f64 {
    b.configs().iter().map(|c| c.counts[i] as f64).sum::<f64>() / b.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_state_gives_identical_batch(seed in any::<u64>(), stream in 0u64..4, n in 1usize..=5) {
        let model = common::superposition(n, &mut rng(seed));
        let state = RngState::new(seed, stream);
        let a = sample_batch(&model, 200, &state).unwrap();
        let b = sample_batch(&model, 200, &state).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn brute_force_distribution_is_normalised_and_matches_avoidance(n in 1usize..=6, seed in any::<u64>()) {
        let k = kernel(n, 0.0, 0.95, &mut rng(seed));
        let d = brute_force_dpp_distribution(&k).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for window in 0..(1usize << n) {
            let idx: Vec<usize> = (0..n).filter(|i| window >> i & 1 == 1).collect();
            let block = pgf_disentangle::linalg::principal_block(k.matrix(), &idx);
            let m = idx.len();
            let det = pgf_disentangle::linalg::determinant(&(pgf_disentangle::DMatrix::identity(m, m) - block));
            prop_assert!((d.avoidance(window) - det.re).abs() < 1e-10);
        }
    }
}

#[test]
fn poisson_examples() {
    let zero = ProcessModel::Poisson(IntensityMeasure::new(vec![0.0; 3]).unwrap());
    assert!(sample_batch(&zero, 1000, &RngState::new(1, 0)).unwrap().configs().iter().all(|c| c.total() == 0));

    let m = 100_000;
    let b = sample_batch(&ProcessModel::Poisson(IntensityMeasure::new(vec![1.0, 2.0]).unwrap()), m, &RngState::new(2, 0)).unwrap();
    assert!((mean_count(&b, 0) - 1.0).abs() < 0.02);
    let p0 = b.configs().iter().filter(|c| c.counts[1] == 0).count() as f64 / m as f64;
    assert!((p0 - (-2f64).exp()).abs() < 0.006, "{p0}");
}

#[test]
fn poisson_disjoint_windows_are_uncorrelated() {
    let m = 100_000;
    let nu = IntensityMeasure::new(vec![0.5, 1.0, 1.5, 2.0]).unwrap();
    let b = sample_batch(&ProcessModel::Poisson(nu), m, &RngState::new(3, 0)).unwrap();
    let windows = |c: &pgf_disentangle::model::PointConfiguration| {
        ((c.counts[0] + c.counts[1]) as f64, (c.counts[2] + c.counts[3]) as f64)
    };
    let (ma, mb) = (1.5, 3.5);
    let cov = b.configs().iter().map(|c| {
        let (a, bb) = windows(c);
        (a - ma) * (bb - mb)
    }).sum::<f64>() / m as f64;
    // Var((A - EA)(B - EB)) = Var A · Var B for independent Poisson counts
    let band = 5.0 * (ma * mb / m as f64).sqrt();
    assert!(cov.abs() < band, "covariance {cov} outside {band}");
}

#[test]
fn dpp_examples() {
    let empty = sample_batch(&ProcessModel::Determinantal(Kernel::zeros(2).unwrap()), 500, &RngState::new(4, 0)).unwrap();
    assert!(empty.configs().iter().all(|c| c.total() == 0));
    let full = Kernel::from_real(2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = sample_batch(&ProcessModel::Determinantal(full), 500, &RngState::new(5, 0)).unwrap();
    assert!(b.configs().iter().all(|c| c.counts == [1, 1]));

    let m = 100_000;
    let b = sample_batch(&ProcessModel::Determinantal(worked_kernel()), m, &RngState::new(6, 0)).unwrap();
    let p_empty = b.configs().iter().filter(|c| c.total() == 0).count() as f64 / m as f64;
    assert!((p_empty - 0.1875).abs() < 0.007, "{p_empty}");
    assert!(b.configs().iter().all(|c| c.is_simple()));
}

#[test]
fn brute_force_examples() {
    let d = brute_force_dpp_distribution(&Kernel::from_real(1, &[0.5]).unwrap()).unwrap();
    assert!((d.prob(&[]) - 0.5).abs() < 1e-15 && (d.prob(&[0]) - 0.5).abs() < 1e-15);
    let d = brute_force_dpp_distribution(&worked_kernel()).unwrap();
    assert!((d.prob(&[]) - 0.1875).abs() < 1e-12);
    let d = brute_force_dpp_distribution(&Kernel::zeros(3).unwrap()).unwrap();
    assert_eq!(d.prob(&[]), 1.0);
    assert!(brute_force_dpp_distribution(&Kernel::zeros(13).unwrap()).is_err());
}

#[test]
fn superposition_examples() {
    let nothing = ProcessModel::Superposition(vec![
        ProcessModel::Poisson(IntensityMeasure::new(vec![0.0]).unwrap()),
        ProcessModel::Determinantal(Kernel::zeros(1).unwrap()),
    ]);
    assert!(sample_batch(&nothing, 500, &RngState::new(7, 0)).unwrap().configs().iter().all(|c| c.total() == 0));

    let m = 100_000;
    let two = ProcessModel::Superposition(vec![
        ProcessModel::Poisson(IntensityMeasure::new(vec![0.5, 1.0]).unwrap()),
        ProcessModel::Poisson(IntensityMeasure::new(vec![1.5, 0.25]).unwrap()),
    ]);
    let b = sample_batch(&two, m, &RngState::new(8, 0)).unwrap();
    for (i, total) in [2.0, 1.25].into_iter().enumerate() {
        let band = 5.0 * (total / m as f64).sqrt();
        assert!((mean_count(&b, i) - total).abs() < band);
    }

    let sure = ProcessModel::Superposition(vec![
        ProcessModel::Poisson(IntensityMeasure::new(vec![1.0]).unwrap()),
        ProcessModel::Determinantal(Kernel::from_real(1, &[1.0]).unwrap()),
    ]);
    assert!(sample_batch(&sure, 2000, &RngState::new(9, 0)).unwrap().configs().iter().all(|c| c.counts[0] >= 1));
}

#[test]
fn batches_round_trip_through_csv() {
    let b = sample_batch(&common::worked_model(), 300, &RngState::new(10, 0)).unwrap();
    let labels = vec!["a".to_string(), "b".to_string()];
    let mut buf = Vec::new();
    b.write_csv(&labels, &mut buf).unwrap();
    let (l, back) = SampleBatch::read_csv(buf.as_slice()).unwrap();
    assert_eq!(l, labels);
    assert_eq!(back.configs(), b.configs());
}
