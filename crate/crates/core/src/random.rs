//! Seeded random generation of test objects (Haar unitaries, Ginibre states,
//! POVMs, channels, Schmidt-number-bounded mixtures).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, cr, outer, CMatrix, CVector};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for sub-task `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> SeededRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index.wrapping_add(1));
    r
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn complex_gaussian_vector(n: usize, rng: &mut impl Rng) -> CVector {
    CVector::from_fn(n, |_, _| c(gaussian(rng), gaussian(rng)))
}

pub fn ginibre(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c(gaussian(rng), gaussian(rng)))
}

pub fn random_unit_vector(n: usize, rng: &mut impl Rng) -> CVector {
    let v = complex_gaussian_vector(n, rng);
    let norm = v.norm();
    v / cr(norm)
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn random_unitary(d: usize, rng: &mut impl Rng) -> CMatrix {
    let g = ginibre(d, d, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = q.clone();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / cr(rjj.norm()) } else { cr(1.0) };
        for i in 0..d {
            out[(i, j)] = q[(i, j)] * phase;
        }
    }
    out
}

/// Random density matrix `G G† / tr` with `G` of shape `n × rank`.
pub fn random_density(n: usize, rank: usize, rng: &mut impl Rng) -> CMatrix {
    let g = ginibre(n, rank.max(1), rng);
    let m = &g * g.adjoint();
    let t = m.trace().re;
    m / cr(t)
}

pub fn random_hermitian(n: usize, rng: &mut impl Rng) -> CMatrix {
    let g = ginibre(n, n, rng);
    (&g + g.adjoint()) / cr(2.0)
}

/// Random POVM with `outcomes` elements on an `n`-dimensional space:
/// `S^{-1/2} W_i S^{-1/2}` with `W_i` Wishart and `S = Σ W_i`.
pub fn random_povm(outcomes: usize, n: usize, rng: &mut impl Rng) -> Vec<CMatrix> {
    let ws: Vec<CMatrix> = (0..outcomes)
        .map(|_| {
            let g = ginibre(n, n, rng);
            &g * g.adjoint()
        })
        .collect();
    let s = ws.iter().fold(CMatrix::zeros(n, n), |acc, w| acc + w);
    let s_inv_half = crate::linalg::spectral_map(&s, |x| 1.0 / x.sqrt());
    ws.iter()
        .map(|w| crate::linalg::hermitize(&(&s_inv_half * w * &s_inv_half)))
        .collect()
}

/// Random unit vector of Schmidt rank at most `k`.
pub fn random_schmidt_rank_vector(d_a: usize, d_b: usize, k: usize, rng: &mut impl Rng) -> CVector {
    let u = ginibre(d_a, k, rng);
    let v = ginibre(d_b, k, rng);
    let m = u * v.transpose();
    let psi = crate::linalg::flatten_bipartite(&m);
    let n = psi.norm();
    psi / cr(n)
}

/// Mixture of `terms` random Schmidt-rank-≤k pure states with random weights.
/// Returns the state and its explicit ensemble.
pub fn random_sn_mixture(
    d_a: usize,
    d_b: usize,
    k: usize,
    terms: usize,
    rng: &mut impl Rng,
) -> (CMatrix, Vec<(f64, CVector)>) {
    let mut weights: Vec<f64> = (0..terms).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let items: Vec<(f64, CVector)> = weights
        .into_iter()
        .map(|w| (w, random_schmidt_rank_vector(d_a, d_b, k, rng)))
        .collect();
    let n = d_a * d_b;
    let rho = items
        .iter()
        .fold(CMatrix::zeros(n, n), |acc, (w, v)| acc + outer(v) * cr(*w));
    (rho, items)
}

/// Normalized Choi matrix (input copy first) of a random channel with
/// `kraus` Kraus operators, `d_in → d_out`.
pub fn random_channel_choi(d_in: usize, d_out: usize, kraus: usize, rng: &mut impl Rng) -> CMatrix {
    // Isometry d_in → d_out ⊗ env from a Haar unitary column block.
    let kraus = kraus.max(d_in.div_ceil(d_out));
    let big = d_out * kraus;
    let u = random_unitary(big, rng);
    let iso = u.columns(0, d_in).into_owned();
    let ks: Vec<CMatrix> = (0..kraus)
        .map(|e| CMatrix::from_fn(d_out, d_in, |o, i| iso[(o * kraus + e, i)]))
        .collect();
    crate::objects::choi_from_kraus(&ks)
}
