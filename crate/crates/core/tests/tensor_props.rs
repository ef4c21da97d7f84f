use proptest::prelude::*;

use sncert_core::linalg::{
    cr, flatten_bipartite, heisenberg_weyl_set, identity, kron, kron_vec, max_abs_diff,
    partial_trace, partial_transpose, schmidt_decompose, CMatrix, CVector, SystemDims,
};
use sncert_core::random;

fn dim() -> impl Strategy<Value = usize> {
    2usize..=4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kron_is_associative_with_mixed_products(seed in any::<u64>(), a in dim(), b in dim(), c in dim()) {
        let mut rng = random::rng(seed);
        let (x, y, z) = (random::ginibre(a, a, &mut rng), random::ginibre(b, b, &mut rng), random::ginibre(c, c, &mut rng));
        let left = kron(&kron(&x, &y), &z);
        let right = kron(&x, &kron(&y, &z));
        prop_assert!(max_abs_diff(&left, &right) < 1e-12);
        let (x2, y2) = (random::ginibre(a, a, &mut rng), random::ginibre(b, b, &mut rng));
        let lhs = kron(&x, &y) * kron(&x2, &y2);
        let rhs = kron(&(&x * &x2), &(&y * &y2));
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn partial_trace_recovers_factors(seed in any::<u64>(), a in dim(), b in dim()) {
        let mut rng = random::rng(seed);
        let x = random::random_density(a, a, &mut rng);
        let y = random::random_hermitian(b, &mut rng);
        let xy = kron(&x, &y);
        let got_y = partial_trace(&xy, &[a, b], &[1]).unwrap();
        prop_assert!(max_abs_diff(&got_y, &y) < 1e-12);
        let got_x = partial_trace(&xy, &[a, b], &[0]).unwrap();
        prop_assert!(max_abs_diff(&got_x, &(&x * y.trace())) < 1e-12);
    }

    #[test]
    fn partial_transpose_properties(seed in any::<u64>(), a in dim(), b in dim(), sys in 0usize..2) {
        let mut rng = random::rng(seed);
        let m = random::random_hermitian(a * b, &mut rng);
        let t = partial_transpose(&m, &[a, b], sys).unwrap();
        prop_assert!((t.trace() - m.trace()).norm() < 1e-12);
        prop_assert!(max_abs_diff(&t, &t.adjoint()) < 1e-12);
        let back = partial_transpose(&t, &[a, b], sys).unwrap();
        prop_assert!(max_abs_diff(&back, &m) == 0.0);
    }

    #[test]
    fn schmidt_decomposition_reconstructs(seed in any::<u64>(), a in dim(), b in dim()) {
        let mut rng = random::rng(seed);
        let psi = random::random_unit_vector(a * b, &mut rng);
        let dec = schmidt_decompose(&psi, &SystemDims::bipartite(a, b).unwrap()).unwrap();
        prop_assert!((dec.reconstruct() - &psi).norm() < 1e-10);
        let mut total = CVector::zeros(a * b);
        for i in 0..dec.coefficients.len() {
            total += kron_vec(&dec.left[i], &dec.right[i]) * cr(dec.coefficients[i]);
            prop_assert!((dec.left[i].norm() - 1.0).abs() < 1e-10);
        }
        prop_assert!((total - &psi).norm() < 1e-10);
        let c2: f64 = dec.coefficients.iter().map(|l| l * l).sum();
        prop_assert!((c2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heisenberg_weyl_twirl_is_depolarizing(seed in any::<u64>(), d in 2usize..=4) {
        let mut rng = random::rng(seed);
        let m = random::ginibre(d, d, &mut rng);
        let us = heisenberg_weyl_set(d);
        let twirl = us.iter().fold(CMatrix::zeros(d, d), |acc, u| acc + u * &m * u.adjoint()) / cr(d as f64);
        let want = identity(d) * m.trace();
        prop_assert!(max_abs_diff(&twirl, &want) < 1e-10);
    }
}

#[test]
fn flatten_and_kron_vec_agree() {
    let mut rng = random::rng(1);
    let a = random::random_unit_vector(2, &mut rng);
    let b = random::random_unit_vector(3, &mut rng);
    let m = &a * b.transpose();
    assert!((flatten_bipartite(&m) - kron_vec(&a, &b)).norm() < 1e-15);
}
