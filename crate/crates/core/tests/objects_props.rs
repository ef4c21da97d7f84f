use proptest::prelude::*;

use sncert_core::cone::{inner_decomposition, outer_cone_margin, witness_value_k, DecompositionBudget, SeesawOptions};
use sncert_core::linalg::{self, cr, max_abs_diff, outer, partial_transpose, schmidt_coefficients, CMatrix, SystemDims};
use sncert_core::objects::{
    apply_choi, apply_choi_adjoint, choi_of, distributed_elements, distributed_measurement_from, BipartiteState, ChoiMatrix, Povm,
};
use sncert_core::random;

fn random_povm(outcomes: usize, d1: usize, d2: usize, rng: &mut random::SeededRng) -> Povm {
    Povm::new(random::random_povm(outcomes, d1 * d2, rng), SystemDims::bipartite(d1, d2).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn choi_matrix_inverts_to_the_map(seed in any::<u64>(), d_in in 2usize..=3, d_out in 2usize..=3, kraus in 1usize..=4) {
        let mut rng = random::rng(seed);
        let j = random::random_channel_choi(d_in, d_out, kraus, &mut rng);
        let choi = ChoiMatrix::from_matrix(linalg::hermitize(&j), d_in, d_out).unwrap();
        prop_assert!(choi.trace_preservation_deviation() < 1e-10);
        let again = choi_of(|x| apply_choi(&choi, x).unwrap(), d_in).unwrap();
        prop_assert!(max_abs_diff(again.matrix(), choi.matrix()) < 1e-12);
        // ⟨Y, Λ(X)⟩ = ⟨Λ†(Y), X⟩
        let x = random::ginibre(d_in, d_in, &mut rng);
        let y = random::ginibre(d_out, d_out, &mut rng);
        let lhs = (y.adjoint() * apply_choi(&choi, &x).unwrap()).trace();
        let rhs = (apply_choi_adjoint(&choi, &y).unwrap().adjoint() * &x).trace();
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn distributed_elements_are_linear_and_complete(seed in any::<u64>(), a in 2usize..=3, b in 2usize..=3, oa in 2usize..=3, ob in 2usize..=3) {
        let mut rng = random::rng(seed);
        let (da, db) = (2usize, 2usize);
        let pa = random_povm(oa, a, da, &mut rng);
        let pb = random_povm(ob, b, db, &mut rng);
        let x = random::ginibre(da * db, da * db, &mut rng);
        let y = random::ginibre(da * db, da * db, &mut rng);
        let s = linalg::c(0.3, -1.1);
        let combo = distributed_elements(&(&x + &y * s), &pa, &pb).unwrap();
        let parts = (distributed_elements(&x, &pa, &pb).unwrap(), distributed_elements(&y, &pa, &pb).unwrap());
        for ((c, p), q) in combo.iter().zip(&parts.0).zip(&parts.1) {
            prop_assert!(max_abs_diff(c, &(p + q * s)) < 1e-12);
        }
        // A state yields a POVM on A ⊗ B.
        let rho = BipartiteState::from_matrix(random::random_density(da * db, 4, &mut rng), da, db).unwrap();
        let dm = distributed_measurement_from(&rho, &pa, &pb).unwrap();
        let total = dm.elements.iter().fold(CMatrix::zeros(a * b, a * b), |acc, m| acc + m);
        prop_assert!(max_abs_diff(&total, &linalg::identity(a * b)) < 1e-10);
        prop_assert!(dm.elements.iter().all(|m| linalg::min_eigenvalue(m) > -1e-12));
    }

    #[test]
    fn distributed_measurement_of_a_mixture_is_the_mixture(seed in any::<u64>(), k in 1usize..=2, terms in 1usize..=4) {
        let mut rng = random::rng(seed);
        let (rho, items) = random::random_sn_mixture(2, 2, k, terms, &mut rng);
        let pa = random_povm(2, 2, 2, &mut rng);
        let pb = random_povm(3, 2, 2, &mut rng);
        let whole = distributed_elements(&rho, &pa, &pb).unwrap();
        let mut summed = vec![CMatrix::zeros(4, 4); whole.len()];
        for (w, v) in &items {
            for (acc, m) in summed.iter_mut().zip(distributed_elements(&outer(v), &pa, &pb).unwrap()) {
                *acc += m * cr(*w);
            }
        }
        for (x, y) in whole.iter().zip(&summed) {
            prop_assert!(max_abs_diff(x, y) < 1e-12);
        }
    }

    #[test]
    fn outer_cone_contains_schmidt_number_k_mixtures(seed in any::<u64>(), case in 0usize..5, terms in 1usize..=6) {
        let (d_a, d_b, k) = [(2, 2, 1), (2, 3, 1), (3, 3, 1), (3, 3, 2), (3, 4, 2)][case];
        let mut rng = random::rng(seed);
        let (rho, _) = random::random_sn_mixture(d_a, d_b, k, terms, &mut rng);
        prop_assert!(outer_cone_margin(&rho, d_a, d_b, k).unwrap() > -1e-10);
        // Cones are nested in k.
        for kk in k..=d_a.min(d_b) {
            prop_assert!(outer_cone_margin(&rho, d_a, d_b, kk).unwrap() > -1e-10);
        }
    }

    #[test]
    fn witness_values_are_attained_and_ordered(seed in any::<u64>(), d in 2usize..=3) {
        let mut rng = random::rng(seed);
        let a = random::random_hermitian(d * d, &mut rng);
        let opts = SeesawOptions { restarts: 8, ..SeesawOptions::default() };
        let top = linalg::max_eigenvalue(&a);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=d {
            let w = witness_value_k(&a, d, d, k, &opts, seed).unwrap();
            let v = &w.vector;
            prop_assert!((v.norm() - 1.0).abs() < 1e-10);
            let attained = (v.adjoint() * &a * v)[(0, 0)].re;
            prop_assert!((attained - w.value).abs() < 1e-9);
            let rank = schmidt_coefficients(v, d, d).unwrap().iter().filter(|&&s| s > 1e-8).count();
            prop_assert!(rank <= k);
            prop_assert!(w.value <= top + 1e-10);
            prop_assert!(w.value >= prev - 1e-7, "k={k}: {} < {prev}", w.value);
            prev = w.value;
        }
        prop_assert!((prev - top).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn decomposition_agrees_with_partial_transpose(seed in any::<u64>(), d_b in 2usize..=3, p in 0.0f64..1.0) {
        // Family with a sharp PPT threshold: Φ⁺-like pure state mixed with a
        // random full-rank separable state.
        let mut rng = random::rng(seed);
        let (sep, _) = random::random_sn_mixture(2, d_b, 1, 2 * d_b * 2, &mut rng);
        let noise = (&sep + linalg::identity(2 * d_b) * cr(1.0 / (2 * d_b) as f64)) * cr(0.5);
        let mut psi = linalg::CVector::zeros(2 * d_b);
        psi[0] = cr(std::f64::consts::FRAC_1_SQRT_2);
        psi[d_b + 1] = cr(std::f64::consts::FRAC_1_SQRT_2);
        let m = outer(&psi) * cr(p) + noise * cr(1.0 - p);
        let ppt = linalg::min_eigenvalue(&partial_transpose(&m, &[2, d_b], 1).unwrap());
        prop_assume!(ppt.abs() > 2e-3);
        let state = BipartiteState::from_matrix_hermitized(m, 2, d_b).unwrap();
        let dec = inner_decomposition(&state, 1, &DecompositionBudget::default(), seed);
        if ppt > 0.0 {
            let dec = dec.unwrap();
            prop_assert!(dec.residual <= 1e-7);
            prop_assert!(dec.max_schmidt_rank() <= 1);
            prop_assert!(dec.weights.iter().all(|&w| w >= 0.0));
            let err = linalg::trace_norm(&(dec.reconstruct() - state.matrix())).unwrap();
            prop_assert!(err <= 1e-7, "reconstruction error {err}");
        } else {
            prop_assert!(dec.is_err());
        }
    }
}
