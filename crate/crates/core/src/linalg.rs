//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, DVector, Hessenberg, Schur, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result, C64};

const SCHUR_MAX_ITER: usize = 10_000;

/// Determinant by partial-pivoting LU. The empty matrix has determinant one.
pub fn determinant(m: &DMatrix<C64>) -> C64 {
    if m.nrows() == 0 {
        return C64::new(1.0, 0.0);
    }
    m.clone().lu().determinant()
}

/// `tr(A^{-1} B)`, or `None` when `A` is singular.
pub fn trace_solve(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Option<C64> {
    if a.nrows() == 0 {
        return Some(C64::new(0.0, 0.0));
    }
    let x = a.clone().lu().solve(b)?;
    Some(x.trace())
}

/// Upper Hessenberg matrix unitarily similar to `m`.
pub fn hessenberg(m: &DMatrix<C64>) -> DMatrix<C64> {
    if m.nrows() < 3 {
        return m.clone();
    }
    Hessenberg::new(m.clone()).h()
}

/// `det(I + zH)` and `d/dz log det(I + zH)` for upper Hessenberg `H`, by
/// pivoted elimination carried with its `z`-derivative. The derivative is
/// `None` when `I + zH` is singular.
pub fn hessenberg_det_log_derivative(h: &DMatrix<C64>, z: C64) -> (C64, Option<C64>) {
    let n = h.nrows();
    let one = C64::new(1.0, 0.0);
    let mut a = h * z;
    for i in 0..n {
        a[(i, i)] += one;
    }
    let mut da = h.clone();
    let mut det = one;
    let mut dlog = C64::new(0.0, 0.0);
    for k in 0..n {
        if k + 1 < n && a[(k + 1, k)].norm() > a[(k, k)].norm() {
            a.swap_rows(k, k + 1);
            da.swap_rows(k, k + 1);
            det = -det;
        }
        let p = a[(k, k)];
        if p == C64::new(0.0, 0.0) {
            return (p, None);
        }
        det *= p;
        dlog += da[(k, k)] / p;
        if k + 1 < n {
            let m = a[(k + 1, k)] / p;
            let dm = (da[(k + 1, k)] - m * da[(k, k)]) / p;
            for j in k + 1..n {
                let (akj, dakj) = (a[(k, j)], da[(k, j)]);
                a[(k + 1, j)] -= m * akj;
                da[(k + 1, j)] -= dm * akj + m * dakj;
            }
        }
    }
    (det, Some(dlog))
}

/// All eigenvalues of a general complex square matrix via the complex Schur form.
pub fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    match m.nrows() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![m[(0, 0)]]),
        _ => {
            let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
                .ok_or_else(|| Error::Numerical("complex Schur iteration did not converge".into()))?;
            let (_, t) = schur.unpack();
            Ok(t.diagonal().iter().copied().collect())
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned in
/// ascending order with eigenvectors as matching columns.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Roots of the monic polynomial `t^m + c[m-1] t^{m-1} + ... + c[0]`, as the
/// eigenvalues of its companion matrix.
pub fn monic_roots(lower_coeffs: &[C64]) -> Result<Vec<C64>> {
    let m = lower_coeffs.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut companion = DMatrix::<C64>::zeros(m, m);
    for i in 1..m {
        companion[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for (i, c) in lower_coeffs.iter().enumerate() {
        companion[(i, m - 1)] = -c;
    }
    eigenvalues(&companion)
}

/// Frobenius norm.
pub fn frobenius(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Principal submatrix on the given (sorted) indices.
pub fn principal_block(m: &DMatrix<C64>, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Haar-distributed unitary matrix from the QR factorisation of a complex
/// Ginibre matrix, with the phases of `R`'s diagonal divided out.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / C64::from_real(d.norm()) } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Hermitian matrix `U diag(values) U*` for a random unitary `U`.
pub fn random_hermitian_with_spectrum<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> DMatrix<C64> {
    let n = values.len();
    let u = random_unitary(n, rng);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(n, values.iter().map(|&v| C64::new(v, 0.0))));
    let m = &u * d * u.adjoint();
    // exact Hermitian symmetry
    DMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn empty_determinant_is_one() {
        assert_eq!(determinant(&DMatrix::zeros(0, 0)), c(1.0));
    }

    #[test]
    fn two_by_two_determinant() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.5), c(0.25), c(0.25), c(1.5)]);
        assert!((determinant(&m) - c(2.1875)).norm() < 1e-15);
    }

    #[test]
    fn hessenberg_path_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 0..=8 {
            let t = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let h = hessenberg(&t);
            for i in 0..n {
                for j in 0..i.saturating_sub(1) {
                    assert!(h[(i, j)].norm() < 1e-14);
                }
            }
            let z = C64::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let a = DMatrix::identity(n, n) + &t * z;
            let (det, dlog) = hessenberg_det_log_derivative(&h, z);
            assert!((det - determinant(&a)).norm() < 1e-12 * det.norm().max(1.0), "n = {n}");
            assert!((dlog.unwrap() - trace_solve(&a, &t).unwrap()).norm() < 1e-11 * dlog.unwrap().norm().max(1.0));
        }
        let singular = DMatrix::from_row_slice(1, 1, &[c(1.0)]);
        assert_eq!(hessenberg_det_log_derivative(&singular, c(-1.0)), (c(0.0), None));
    }

    #[test]
    fn eigenvalues_satisfy_characteristic_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=8 {
            for _ in 0..20 {
                let m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
                let ev = eigenvalues(&m).unwrap();
                assert_eq!(ev.len(), n);
                let scale = frobenius(&m);
                for l in ev {
                    let shifted = &m - DMatrix::from_diagonal_element(n, n, l);
                    let smin = shifted.singular_values().min();
                    assert!(smin < 1e-10 * scale.max(1.0), "n={n} smin={smin}");
                }
                let tr: C64 = m.trace();
                let sum: C64 = eigenvalues(&m).unwrap().iter().sum();
                assert!((tr - sum).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn companion_roots() {
        // (t - 1)(t - 2)(t + 3) = t^3 - 7t + 6
        let mut roots = monic_roots(&[c(6.0), c(-7.0), c(0.0)]).unwrap();
        roots.sort_by(|a, b| a.re.total_cmp(&b.re));
        for (r, e) in roots.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((r - c(e)).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_eigenvectors_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = random_hermitian_with_spectrum(&[0.1, 0.5, 0.9, 0.3], &mut rng);
        let (vals, vecs) = hermitian_eigen(&k);
        let gram = vecs.adjoint() * &vecs;
        assert!((gram - DMatrix::identity(4, 4)).iter().all(|z| z.norm() < 1e-10));
        for (v, e) in vals.iter().zip([0.1, 0.3, 0.5, 0.9]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}
