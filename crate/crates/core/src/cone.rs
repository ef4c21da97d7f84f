//! The cone of (unnormalized) bipartite operators with Schmidt number at most
//! `k`: an SDP-representable outer approximation, an explicit inner
//! decomposition search, and maximization of linear functionals over
//! Schmidt-rank-`k` vectors.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, cr, eigh, flatten_bipartite, identity, kron_vec, outer, partial_transpose,
    reshape_bipartite, trace_norm, CMatrix, CVector,
};
use crate::objects::BipartiteState;
use crate::random;
use crate::sdp::{AffineMatrix, Problem};

/// How tightly the constraints imposed by [`constrain_outer`] describe the
/// Schmidt-number cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeApprox {
    /// `k ≥ min(d_A, d_B)`: the cone is the full PSD cone.
    ExactPsd,
    /// `k = 1` with `d_A·d_B ≤ 6`: the separable cone equals the PPT cone.
    ExactPpt,
    /// PSD, partial-transpose trace norm (or PPT for `k = 1`), maximally
    /// entangled fidelity and realignment bounds.
    Outer,
}

impl ConeApprox {
    pub fn is_exact(self) -> bool {
        !matches!(self, ConeApprox::Outer)
    }

    pub fn for_dims(d_a: usize, d_b: usize, k: usize) -> ConeApprox {
        if k >= d_a.min(d_b) {
            ConeApprox::ExactPsd
        } else if k == 1 && d_a * d_b <= 6 {
            ConeApprox::ExactPpt
        } else {
            ConeApprox::Outer
        }
    }
}

pub fn check_k(d_a: usize, d_b: usize, k: usize) -> Result<()> {
    let max = d_a.min(d_b);
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    Ok(())
}

/// Projector onto `(1/√m) Σ_{i<m} |ii⟩`, `m = min(d_A, d_B)`.
fn embedded_max_entangled(d_a: usize, d_b: usize) -> CMatrix {
    let m = d_a.min(d_b);
    let mut v = CVector::zeros(d_a * d_b);
    for i in 0..m {
        v[i * d_b + i] = cr(1.0 / (m as f64).sqrt());
    }
    outer(&v)
}

/// Adds constraints forcing `x` (on `d_A ⊗ d_B`) into a convex cone that
/// contains every operator of Schmidt number at most `k`. All constraints are
/// homogeneous in `x`. Constraint names are prefixed by `tag`.
pub fn constrain_outer(
    p: &mut Problem,
    tag: &str,
    x: &AffineMatrix,
    d_a: usize,
    d_b: usize,
    k: usize,
) -> Result<ConeApprox> {
    check_k(d_a, d_b, k)?;
    if x.dim() != d_a * d_b {
        return Err(Error::Dimension("cone variable does not match dims".into()));
    }
    let approx = ConeApprox::for_dims(d_a, d_b, k);
    p.add_psd(&format!("{tag}:psd"), x.clone());
    if approx == ConeApprox::ExactPsd {
        return Ok(approx);
    }
    let dims = [d_a, d_b];
    let n = d_a * d_b;
    let tr = x.trace();
    let pt = x.partial_transpose(&dims, 1)?;
    if k == 1 {
        p.add_psd(&format!("{tag}:ppt"), pt);
        if approx == ConeApprox::ExactPpt {
            return Ok(approx);
        }
    } else {
        let pos = p.psd_variable(&format!("{tag}:pt+"), n);
        let neg = p.psd_variable(&format!("{tag}:pt-"), n);
        let split = pt - &pos.expr() + &neg.expr();
        p.add_zero_hermitian(&format!("{tag}:pt-split"), split);
        let slack = tr.clone() * k as f64 - pos.expr().trace() - neg.expr().trace();
        p.add_nonneg(&format!("{tag}:pt-norm"), slack);
        let fid = x.inner_constant(&embedded_max_entangled(d_a, d_b));
        let bound = tr.clone() * (k as f64 / d_a.min(d_b) as f64) - fid;
        p.add_nonneg(&format!("{tag}:fidelity"), bound);
    }
    let (na, nb) = (d_a * d_a, d_b * d_b);
    let w1 = p.hermitian(&format!("{tag}:re-w1"), na);
    let w2 = p.hermitian(&format!("{tag}:re-w2"), nb);
    let block = AffineMatrix::block2(
        &w1.expr(),
        |r, col| {
            let (i, j) = linalg::realign_index(d_a, d_b, r, col);
            x.get(i, j).clone()
        },
        &w2.expr(),
    );
    p.add_psd(&format!("{tag}:realign"), block);
    let slack = tr * (2.0 * k as f64) - w1.expr().trace() - w2.expr().trace();
    p.add_nonneg(&format!("{tag}:realign-norm"), slack);
    Ok(approx)
}

/// Smallest slack of the outer-cone conditions at a numeric operator,
/// relative to `tr X`. Negative values mean `X` violates a condition.
pub fn outer_cone_margin(x: &CMatrix, d_a: usize, d_b: usize, k: usize) -> Result<f64> {
    check_k(d_a, d_b, k)?;
    let t = x.trace().re.abs().max(1e-300);
    let mut margin = linalg::min_eigenvalue(x) / t;
    if k >= d_a.min(d_b) {
        return Ok(margin);
    }
    let pt = partial_transpose(x, &[d_a, d_b], 1)?;
    if k == 1 {
        margin = margin.min(linalg::min_eigenvalue(&pt) / t);
    } else {
        margin = margin.min(k as f64 - trace_norm(&pt)? / t);
        let fid = linalg::trace_product(&embedded_max_entangled(d_a, d_b), x) / t;
        margin = margin.min(k as f64 / d_a.min(d_b) as f64 - fid);
    }
    if !(k == 1 && d_a * d_b <= 6) {
        let r = linalg::realign(x, d_a, d_b);
        margin = margin.min(k as f64 - trace_norm(&r)? / t);
    }
    Ok(margin)
}

/// Best value of `⟨ψ|A|ψ⟩` found over unit vectors of Schmidt rank `≤ k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessMax {
    pub value: f64,
    #[serde(with = "crate::serde_complex::vector")]
    pub vector: CVector,
    /// True when `k ≥ min(d_A, d_B)` and the value is an exact eigenvalue.
    pub exact: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeesawOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub stall_tol: f64,
}

impl Default for SeesawOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            max_iter: 500,
            stall_tol: 1e-9,
        }
    }
}

fn random_isometry(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    let g = random::ginibre(rows, cols, rng);
    g.qr().q().columns(0, cols).into_owned()
}

/// `k` orthonormal columns spanning the top left (`side = 0`) or right
/// (`side = 1`) Schmidt vectors of `psi`, so that `psi ∈ span(U) ⊗ span(V)`.
fn schmidt_subspace(psi: &CVector, d_a: usize, d_b: usize, k: usize, side: usize, rng: &mut impl Rng) -> CMatrix {
    let m = reshape_bipartite(psi, d_a, d_b);
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    // Singular values from nalgebra are sorted descending.
    let base = if side == 0 {
        u.columns(0, k).into_owned()
    } else {
        vt.rows(0, k).transpose()
    };
    // Guard against numerically rank-deficient blocks with a random completion.
    let dim = base.nrows();
    let mut full = base.clone();
    let fill = random_isometry(dim, k, rng);
    for j in 0..k {
        if full.column(j).norm() < 0.5 {
            full.set_column(j, &fill.column(j));
        }
    }
    full.qr().q().columns(0, k).into_owned()
}

fn seesaw_once(a: &CMatrix, d_a: usize, d_b: usize, k: usize, opts: &SeesawOptions, rng: &mut impl Rng) -> (f64, CVector) {
    let mut v = random_isometry(d_b, k, rng);
    let mut best = (f64::NEG_INFINITY, CVector::zeros(d_a * d_b));
    let mut side = 1;
    for _ in 0..opts.max_iter {
        let (val, psi) = if side == 1 {
            // ψ ∈ C^{d_A} ⊗ span(V).
            let iso = linalg::kron(&identity(d_a), &v);
            let (val, phi) = linalg::top_eigenpair(&(iso.adjoint() * a * &iso));
            (val, &iso * phi)
        } else {
            let iso = linalg::kron(&v, &identity(d_b));
            let (val, phi) = linalg::top_eigenpair(&(iso.adjoint() * a * &iso));
            (val, &iso * phi)
        };
        let psi = &psi / cr(psi.norm());
        let improved = val > best.0 + opts.stall_tol * val.abs().max(1.0);
        if val > best.0 {
            best = (val, psi.clone());
        }
        if !improved && side == 0 {
            break;
        }
        side = 1 - side;
        v = schmidt_subspace(&psi, d_a, d_b, k, side, rng);
    }
    best
}

/// Maximizes `⟨ψ|A|ψ⟩` over unit vectors of Schmidt rank at most `k` by
/// alternating eigenproblems with random restarts. The result is a lower
/// bound on the true maximum unless `exact` is set.
pub fn witness_value_k(a: &CMatrix, d_a: usize, d_b: usize, k: usize, opts: &SeesawOptions, seed: u64) -> Result<WitnessMax> {
    check_k(d_a, d_b, k)?;
    if a.nrows() != d_a * d_b {
        return Err(Error::Dimension("witness does not match dims".into()));
    }
    let a = linalg::hermitize(a);
    if k >= d_a.min(d_b) {
        let (value, vector) = linalg::top_eigenpair(&a);
        return Ok(WitnessMax { value, vector, exact: true });
    }
    let runs: Vec<(f64, CVector)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = random::substream(seed, r as u64);
            seesaw_once(&a, d_a, d_b, k, opts, &mut rng)
        })
        .collect();
    let (value, vector) = runs
        .into_iter()
        .reduce(|x, y| if y.0 > x.0 { y } else { x })
        .expect("at least one restart");
    Ok(WitnessMax { value, vector, exact: false })
}

/// Explicit ensemble `X = Σ w_i |ψ_i⟩⟨ψ_i|` with every `ψ_i` of Schmidt rank
/// at most `k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnDecomposition {
    pub dims: linalg::SystemDims,
    pub k: usize,
    pub weights: Vec<f64>,
    #[serde(with = "vector_list")]
    pub vectors: Vec<CVector>,
    /// Trace norm of the reconstruction error.
    pub residual: f64,
}

mod vector_list {
    use super::CVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::serde_complex::vector")] CVector);

    pub fn serialize<S: Serializer>(v: &[CVector], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| Wrap(x.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVector>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

impl SnDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.dims.total();
        self.weights
            .iter()
            .zip(&self.vectors)
            .fold(CMatrix::zeros(n, n), |acc, (w, v)| acc + outer(v) * cr(*w))
    }

    pub fn max_schmidt_rank(&self) -> usize {
        let (d_a, d_b) = self.dims.pair().expect("bipartite");
        self.vectors
            .iter()
            .map(|v| {
                let s = linalg::singular_values(&reshape_bipartite(v, d_a, d_b)).unwrap_or_default();
                s.iter().filter(|&&x| x > 1e-8).count()
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionBudget {
    /// Greedy pricing rounds before local refinement.
    pub greedy_rounds: usize,
    /// Levenberg–Marquardt iterations.
    pub lm_iterations: usize,
    /// Accepted trace-norm reconstruction error.
    pub tol: f64,
    pub seesaw_restarts: usize,
}

impl Default for DecompositionBudget {
    fn default() -> Self {
        Self {
            greedy_rounds: 60,
            lm_iterations: 8000,
            tol: 1e-7,
            seesaw_restarts: 4,
        }
    }
}

/// Lawson–Hanson non-negative least squares `min ‖Aw − b‖₂, w ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let bv = nalgebra::DVector::from_column_slice(b);
    let mut w = nalgebra::DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm().max(1.0);
    for _outer in 0..3 * n + 10 {
        let grad = a.transpose() * (&bv - a * &w);
        let cand = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&x, &y| grad[x].total_cmp(&grad[y]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(m, idx.len(), |r, c| a[(r, idx[c])]);
            let z = match sub.clone().svd(true, true).solve(&bv, 1e-14) {
                Ok(z) => z,
                Err(_) => return w.iter().copied().collect(),
            };
            if z.iter().all(|&v| v > 0.0) {
                for (c, &j) in idx.iter().enumerate() {
                    w[j] = z[c];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (c, &j) in idx.iter().enumerate() {
                if z[c] <= 0.0 {
                    alpha = alpha.min(w[j] / (w[j] - z[c]));
                }
            }
            for (c, &j) in idx.iter().enumerate() {
                w[j] += alpha * (z[c] - w[j]);
                if w[j] <= 1e-15 {
                    w[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    w.iter().copied().collect()
}

/// Real vector whose Euclidean norm is the Frobenius norm of Hermitian `m`.
fn herm_to_real(m: &CMatrix, out: &mut Vec<f64>) {
    let n = m.nrows();
    out.clear();
    for i in 0..n {
        out.push(m[(i, i)].re);
    }
    let s = std::f64::consts::SQRT_2;
    for i in 0..n {
        for j in i + 1..n {
            out.push(s * m[(i, j)].re);
            out.push(s * m[(i, j)].im);
        }
    }
}

/// One term `ψ = vec(U Vᵀ)` of the factored model.
#[derive(Clone)]
struct Factor {
    u: CMatrix,
    v: CMatrix,
}

impl Factor {
    fn psi(&self) -> CVector {
        flatten_bipartite(&(&self.u * self.v.transpose()))
    }
}

/// Flattens a Hermitian matrix given in the eigenbasis of the target,
/// skipping the block on the target's kernel (the last `n − r` coordinates).
fn flatten_off_kernel(m: &CMatrix, r: usize, out: &mut Vec<f64>) {
    let n = m.nrows();
    let s = std::f64::consts::SQRT_2;
    for p in 0..r {
        out.push(m[(p, p)].re);
    }
    for p in 0..n {
        for q in p + 1..n {
            if p >= r {
                break;
            }
            out.push(s * m[(p, q)].re);
            out.push(s * m[(p, q)].im);
        }
    }
}

/// Least-squares residual of the factored model in the target's eigenbasis.
/// The block on the kernel of the target is replaced by the kernel
/// components of every term, which vanish exactly when that block does and
/// keep the Jacobian of full row rank at singular targets.
fn lm_residual(psis: &[CVector], target: &CMatrix, r: usize, out: &mut Vec<f64>) -> f64 {
    let n = target.nrows();
    out.clear();
    let g = psis.iter().fold(CMatrix::zeros(n, n), |acc, v| acc + outer(v)) - target;
    flatten_off_kernel(&g, r, out);
    for v in psis {
        for q in r..n {
            out.push(v[q].re);
            out.push(v[q].im);
        }
    }
    out.iter().map(|x| x * x).sum()
}

const KERNEL_TOL: f64 = 1e-11;

fn lm_refine(target: &CMatrix, factors: &mut Vec<Factor>, d_a: usize, d_b: usize, iters: usize, stop: f64) {
    let n = d_a * d_b;
    let k = factors[0].u.ncols();
    let pf = 2 * k * (d_a + d_b);
    let np = pf * factors.len();
    // Eigenbasis of the target with the range first.
    let (vals, vecs) = eigh(target);
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut order: Vec<usize> = (0..n).filter(|&i| vals[i] > KERNEL_TOL * scale).collect();
    let r = order.len();
    order.extend((0..n).filter(|&i| vals[i] <= KERNEL_TOL * scale));
    let qh = CMatrix::from_fn(n, n, |i, j| vecs[(j, order[i])].conj());
    let t_rot = &qh * target * qh.adjoint();
    let rotated = |fs: &[Factor]| -> Vec<CVector> { fs.iter().map(|f| &qh * f.psi()).collect() };
    let mut resid = Vec::new();
    let mut f_cur = lm_residual(&rotated(factors), &t_rot, r, &mut resid);
    // Rows split into the matrix part and 2(n − r) kernel rows per term; the
    // latter touch only their own term's parameters, so the normal system is
    // solved through its Schur complement on the matrix rows.
    let q = 2 * (n - r);
    let m = resid.len() - q * factors.len();
    let mut mu = 1e-3 * f_cur.max(1e-12);
    let mut jac = DMatrix::<f64>::zeros(m, np);
    let mut kern: Vec<DMatrix<f64>> = vec![DMatrix::zeros(q, pf); factors.len()];
    let mut col = Vec::with_capacity(m);
    for _ in 0..iters {
        // Frobenius bound on the trace norm of the mismatch.
        if (n as f64 * f_cur).sqrt() <= stop {
            break;
        }
        // Jacobian columns: δG = δψ ψ† + ψ δψ† for each real parameter,
        // followed by the kernel components of δψ.
        let psis = rotated(factors);
        for (fi, f) in factors.iter().enumerate() {
            let psi = &psis[fi];
            let mut lc = 0;
            for side in 0..2 {
                let (len, other) = if side == 0 { (d_a, &f.v) } else { (d_b, &f.u) };
                for a in 0..len {
                    for b in 0..k {
                        for phase in [cr(1.0), linalg::c(0.0, 1.0)] {
                            let mut dpsi = CVector::zeros(n);
                            if side == 0 {
                                for j in 0..d_b {
                                    dpsi[a * d_b + j] = phase * other[(j, b)];
                                }
                            } else {
                                for i in 0..d_a {
                                    dpsi[i * d_b + a] = phase * other[(i, b)];
                                }
                            }
                            let dpsi = &qh * dpsi;
                            let dg = &dpsi * psi.adjoint() + psi * dpsi.adjoint();
                            col.clear();
                            flatten_off_kernel(&dg, r, &mut col);
                            jac.column_mut(fi * pf + lc).copy_from_slice(&col);
                            for (t, z) in dpsi.iter().skip(r).enumerate() {
                                kern[fi][(2 * t, lc)] = z.re;
                                kern[fi][(2 * t + 1, lc)] = z.im;
                            }
                            lc += 1;
                        }
                    }
                }
            }
        }
        let r1 = nalgebra::DVector::from_column_slice(&resid[..m]);
        let r2: Vec<nalgebra::DVector<f64>> =
            (0..factors.len()).map(|fi| nalgebra::DVector::from_column_slice(&resid[m + q * fi..m + q * (fi + 1)])).collect();
        let aat = &jac * jac.transpose();
        let cross: Vec<DMatrix<f64>> = (0..factors.len()).map(|fi| jac.columns(fi * pf, pf) * kern[fi].transpose()).collect();
        let kkt: Vec<DMatrix<f64>> = kern.iter().map(|b| b * b.transpose()).collect();
        let solve = |mu: f64| -> Option<nalgebra::DVector<f64>> {
            let mut sys = aat.clone();
            let mut rhs = r1.clone();
            let mut blocks = Vec::with_capacity(factors.len());
            for fi in 0..factors.len() {
                if q == 0 {
                    break;
                }
                let mut d = kkt[fi].clone();
                for i in 0..q {
                    d[(i, i)] += mu;
                }
                let chol = d.cholesky()?;
                let dinv_ct = chol.solve(&cross[fi].transpose());
                sys -= &cross[fi] * &dinv_ct;
                rhs -= &cross[fi] * chol.solve(&r2[fi]);
                blocks.push(chol);
            }
            for i in 0..m {
                sys[(i, i)] += mu;
            }
            let y1 = sys.cholesky()?.solve(&rhs);
            let mut step = -(jac.transpose() * &y1);
            for (fi, chol) in blocks.iter().enumerate() {
                let y2 = chol.solve(&(&r2[fi] - cross[fi].transpose() * &y1));
                let part = kern[fi].transpose() * y2;
                let mut seg = step.rows_mut(fi * pf, pf);
                seg -= part;
            }
            Some(step)
        };
        let mut accepted = false;
        for _ in 0..20 {
            let Some(step) = solve(mu) else {
                mu *= 10.0;
                continue;
            };
            let mut trial = factors.clone();
            let mut c = 0;
            for f in trial.iter_mut() {
                for side in 0..2 {
                    let (len, mm) = if side == 0 { (d_a, &mut f.u) } else { (d_b, &mut f.v) };
                    for a in 0..len {
                        for b in 0..k {
                            mm[(a, b)] += linalg::c(step[c], step[c + 1]);
                            c += 2;
                        }
                    }
                }
            }
            let mut buf = Vec::new();
            let f_new = lm_residual(&rotated(&trial), &t_rot, r, &mut buf);
            if f_new < f_cur {
                *factors = trial;
                resid = buf;
                f_cur = f_new;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
}

fn factor_from(psi: &CVector, weight: f64, d_a: usize, d_b: usize, k: usize) -> Factor {
    let m = reshape_bipartite(psi, d_a, d_b) * cr(weight.max(0.0).sqrt());
    let svd = m.svd(true, true);
    let (u, vt, s) = (svd.u.expect("u"), svd.v_t.expect("v_t"), svd.singular_values);
    let uk = CMatrix::from_fn(d_a, k, |i, j| u[(i, j)] * cr(s[j].sqrt()));
    let vk = CMatrix::from_fn(d_b, k, |i, j| vt[(j, i)] * cr(s[j].sqrt()));
    Factor { u: uk, v: vk }
}

/// Searches for an explicit Schmidt-number-`k` ensemble reproducing `state`.
/// Greedy pricing with non-negative refitting builds a starting pool, which
/// is then refined by Levenberg–Marquardt on low-rank factors.
pub fn inner_decomposition(state: &BipartiteState, k: usize, budget: &DecompositionBudget, seed: u64) -> Result<SnDecomposition> {
    let dec = fit_decomposition(state, k, budget, seed)?;
    if dec.residual > budget.tol {
        return Err(Error::DecompositionFailed { residual: dec.residual });
    }
    Ok(dec)
}

/// Best ensemble of Schmidt rank `≤ k` found for `state`, whatever its
/// residual.
pub fn fit_decomposition(state: &BipartiteState, k: usize, budget: &DecompositionBudget, seed: u64) -> Result<SnDecomposition> {
    let (d_a, d_b) = (state.d_a(), state.d_b());
    check_k(d_a, d_b, k)?;
    let rho = state.matrix();
    let n = d_a * d_b;
    let dims = state.dims().clone();
    if k >= d_a.min(d_b) {
        let (vals, vecs) = eigh(rho);
        let mut weights = Vec::new();
        let mut vectors = Vec::new();
        for (i, &w) in vals.iter().enumerate() {
            if w > 0.0 {
                weights.push(w);
                vectors.push(vecs.column(i).into_owned());
            }
        }
        let mut dec = SnDecomposition { dims, k, weights, vectors, residual: 0.0 };
        dec.residual = trace_norm(&(dec.reconstruct() - rho))?;
        return Ok(dec);
    }
    let opts = SeesawOptions { restarts: budget.seesaw_restarts, ..SeesawOptions::default() };
    let mut pool: Vec<CVector> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut target = Vec::new();
    herm_to_real(rho, &mut target);
    let mut buf = Vec::new();
    for round in 0..budget.greedy_rounds {
        let g = pool
            .iter()
            .zip(&weights)
            .fold(CMatrix::zeros(n, n), |acc, (v, w)| acc + outer(v) * cr(*w));
        let resid = rho - &g;
        if trace_norm(&resid)? <= budget.tol {
            break;
        }
        let best = witness_value_k(&resid, d_a, d_b, k, &opts, seed.wrapping_add(round as u64))?;
        if best.value <= 1e-14 {
            break;
        }
        pool.push(best.vector);
        let a = DMatrix::from_fn(target.len(), pool.len(), |_, _| 0.0);
        let mut a = a;
        for (j, v) in pool.iter().enumerate() {
            herm_to_real(&outer(v), &mut buf);
            for (i, x) in buf.iter().enumerate() {
                a[(i, j)] = *x;
            }
        }
        weights = nnls(&a, &target);
        let keep: Vec<usize> = (0..pool.len()).filter(|&j| weights[j] > 0.0).collect();
        pool = keep.iter().map(|&j| pool[j].clone()).collect();
        weights = keep.iter().map(|&j| weights[j]).collect();
    }
    let mut rng = random::substream(seed, u64::MAX);
    let mut factors: Vec<Factor> = pool
        .iter()
        .zip(&weights)
        .map(|(v, &w)| factor_from(v, w, d_a, d_b, k))
        .collect();
    // Spare low-weight terms give the refinement room to move.
    for _ in 0..n {
        let v = random::random_schmidt_rank_vector(d_a, d_b, k, &mut rng);
        factors.push(factor_from(&v, 1e-4, d_a, d_b, k));
    }
    lm_refine(rho, &mut factors, d_a, d_b, budget.lm_iterations, 1e-2 * budget.tol);
    let mut weights = Vec::new();
    let mut vectors = Vec::new();
    for f in &factors {
        let psi = f.psi();
        let w = psi.norm_squared();
        if w > 0.0 {
            weights.push(w);
            vectors.push(&psi / cr(w.sqrt()));
        }
    }
    let mut dec = SnDecomposition { dims, k, weights, vectors, residual: 0.0 };
    dec.residual = trace_norm(&(dec.reconstruct() - rho))?;
    Ok(dec)
}

/// `|a⟩ ⊗ |b⟩` helper for product ensembles.
pub fn product_vector(a: &CVector, b: &CVector) -> CVector {
    kron_vec(a, b)
}
