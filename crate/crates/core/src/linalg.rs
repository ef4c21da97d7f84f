//! Dense complex linear algebra on tensor-product spaces.
//!
//! Subsystems are ordered left to right; a bipartite index `(i, j)` flattens
//! to `i * d_B + j`, matching the Kronecker product.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const RANK_TOL: f64 = 1e-8;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Local dimensions of a composite system.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SystemDims(Vec<usize>);

impl SystemDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("no subsystems".into()));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::Dimension(format!("local dimension {d} < 2")));
        }
        Ok(Self(dims))
    }

    pub fn bipartite(d_a: usize, d_b: usize) -> Result<Self> {
        Self::new(vec![d_a, d_b])
    }

    pub fn single(d: usize) -> Result<Self> {
        Self::new(vec![d])
    }

    pub fn total(&self) -> usize {
        self.0.iter().product()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn is_bipartite(&self) -> bool {
        self.0.len() == 2
    }

    /// `(d_A, d_B)` for a bipartite system.
    pub fn pair(&self) -> Result<(usize, usize)> {
        if self.0.len() != 2 {
            return Err(Error::Dimension(format!(
                "expected bipartite dims, got {:?}",
                self.0
            )));
        }
        Ok((self.0[0], self.0[1]))
    }

    pub fn concat(&self, other: &SystemDims) -> SystemDims {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        SystemDims(v)
    }
}

impl TryFrom<Vec<usize>> for SystemDims {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SystemDims> for Vec<usize> {
    fn from(d: SystemDims) -> Self {
        d.0
    }
}

/// Hermitian matrix annotated with its subsystem structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHermitian", into = "RawHermitian")]
pub struct HermitianOperator {
    matrix: CMatrix,
    dims: SystemDims,
}

#[derive(Serialize, Deserialize)]
struct RawHermitian {
    dims: SystemDims,
    #[serde(with = "crate::serde_complex::matrix")]
    matrix: CMatrix,
}

impl TryFrom<RawHermitian> for HermitianOperator {
    type Error = Error;
    fn try_from(r: RawHermitian) -> Result<Self> {
        HermitianOperator::new(r.matrix, r.dims)
    }
}

impl From<HermitianOperator> for RawHermitian {
    fn from(h: HermitianOperator) -> Self {
        RawHermitian {
            dims: h.dims,
            matrix: h.matrix,
        }
    }
}

impl HermitianOperator {
    /// Validates shape, finiteness and Hermiticity (to `HERMITIAN_TOL`). The
    /// stored matrix is exactly what was passed in.
    pub fn new(matrix: CMatrix, dims: SystemDims) -> Result<Self> {
        check_finite(&matrix)?;
        if !matrix.is_square() || matrix.nrows() != dims.total() {
            return Err(Error::Dimension(format!(
                "matrix {}x{} does not match dims {:?}",
                matrix.nrows(),
                matrix.ncols(),
                dims.as_slice()
            )));
        }
        let dev = hermiticity_deviation(&matrix);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self { matrix, dims })
    }

    /// Symmetrizes `(M + M†)/2` first; for results of exact Hermitian-preserving
    /// operations that picked up rounding asymmetry.
    pub fn hermitized(matrix: CMatrix, dims: SystemDims) -> Result<Self> {
        Self::new(hermitize(&matrix), dims)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dims(&self) -> &SystemDims {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.matrix).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        max_eigenvalue(&self.matrix)
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<HermitianOperator> {
        let m = partial_trace(&self.matrix, self.dims.as_slice(), keep)?;
        let kept: Vec<usize> = sorted_unique(keep)
            .into_iter()
            .map(|i| self.dims.get(i))
            .collect();
        HermitianOperator::hermitized(m, SystemDims::new(kept)?)
    }

    pub fn partial_transpose(&self, subsystem: usize) -> Result<HermitianOperator> {
        let m = partial_transpose(&self.matrix, self.dims.as_slice(), subsystem)?;
        HermitianOperator::new(m, self.dims.clone())
    }

    pub fn realign(&self) -> Result<CMatrix> {
        let (a, b) = self.dims.pair()?;
        Ok(realign(&self.matrix, a, b))
    }

    pub fn scale(&self, s: f64) -> HermitianOperator {
        HermitianOperator {
            matrix: self.matrix.map(|z| z * s),
            dims: self.dims.clone(),
        }
    }

    /// Inner product `tr(self · other)`.
    pub fn dot(&self, other: &HermitianOperator) -> f64 {
        trace_product(&self.matrix, &other.matrix)
    }
}

pub fn check_finite(m: &CMatrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `tr(A B)` real part; exact for Hermitian arguments.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            let x = a[(i, j)] * b[(j, i)];
            acc += x.re;
        }
    }
    acc
}

/// `⟨v|A|v⟩` real part.
pub fn expectation(a: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(a * v)).re
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_all(ms: &[&CMatrix]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for m in ms {
        out = out.kronecker(*m);
    }
    out
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

fn sorted_unique(idx: &[usize]) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn check_dims(m: &CMatrix, dims: &[usize]) -> Result<()> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.nrows() != total {
        return Err(Error::Dimension(format!(
            "matrix {}x{} does not match dims {dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Flat-index map for reordering subsystems: entry `n` of the result is the
/// old flat index of new flat index `n`. New subsystem `i` is old subsystem
/// `perm[i]`.
pub fn permutation_index_map(dims: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    let s = dims.len();
    if perm.len() != s || sorted_unique(perm) != (0..s).collect::<Vec<_>>() {
        return Err(Error::Dimension(format!(
            "{perm:?} is not a permutation of {s} subsystems"
        )));
    }
    let total: usize = dims.iter().product();
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut old_strides = vec![1usize; s];
    for i in (0..s.saturating_sub(1)).rev() {
        old_strides[i] = old_strides[i + 1] * dims[i + 1];
    }
    let mut map = Vec::with_capacity(total);
    let mut digits = vec![0usize; s];
    for _ in 0..total {
        let old: usize = (0..s).map(|i| digits[i] * old_strides[perm[i]]).sum();
        map.push(old);
        for i in (0..s).rev() {
            digits[i] += 1;
            if digits[i] < new_dims[i] {
                break;
            }
            digits[i] = 0;
        }
    }
    Ok(map)
}

pub fn permute_systems(m: &CMatrix, dims: &[usize], perm: &[usize]) -> Result<CMatrix> {
    check_dims(m, dims)?;
    let map = permutation_index_map(dims, perm)?;
    let n = map.len();
    Ok(CMatrix::from_fn(n, n, |r, c| m[(map[r], map[c])]))
}

pub fn permute_vector(v: &CVector, dims: &[usize], perm: &[usize]) -> Result<CVector> {
    let map = permutation_index_map(dims, perm)?;
    if v.len() != map.len() {
        return Err(Error::Dimension("vector length does not match dims".into()));
    }
    Ok(CVector::from_fn(map.len(), |r, _| v[map[r]]))
}

/// Traces out every subsystem not listed in `keep`; kept subsystems stay in
/// ascending order.
pub fn partial_trace(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    check_dims(m, dims)?;
    let keep = sorted_unique(keep);
    if let Some(&bad) = keep.iter().find(|&&i| i >= dims.len()) {
        return Err(Error::SubsystemIndex {
            index: bad,
            count: dims.len(),
        });
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let perm: Vec<usize> = keep.iter().chain(traced.iter()).copied().collect();
    let p = permute_systems(m, dims, &perm)?;
    let dk: usize = keep.iter().map(|&i| dims[i]).product();
    let dt: usize = traced.iter().map(|&i| dims[i]).product();
    Ok(CMatrix::from_fn(dk, dk, |i, j| {
        (0..dt).map(|t| p[(i * dt + t, j * dt + t)]).sum()
    }))
}

/// Source entry of the partial transpose on `subsystem` for target `(r, c)`.
/// The map is an involution.
pub fn partial_transpose_index(
    dims: &[usize],
    subsystem: usize,
    r: usize,
    c: usize,
) -> (usize, usize) {
    let stride: usize = dims[subsystem + 1..].iter().product();
    let d = dims[subsystem];
    let dr = (r / stride) % d;
    let dc = (c / stride) % d;
    (r + dc * stride - dr * stride, c + dr * stride - dc * stride)
}

pub fn partial_transpose(m: &CMatrix, dims: &[usize], subsystem: usize) -> Result<CMatrix> {
    check_dims(m, dims)?;
    if subsystem >= dims.len() {
        return Err(Error::SubsystemIndex {
            index: subsystem,
            count: dims.len(),
        });
    }
    let n = m.nrows();
    Ok(CMatrix::from_fn(n, n, |r, c| {
        let (sr, sc) = partial_transpose_index(dims, subsystem, r, c);
        m[(sr, sc)]
    }))
}

/// Source entry `(row, col)` of the operator for realigned entry `(r, c)`:
/// `R[(i,j),(k,l)] = X[(i,k),(j,l)]`.
pub fn realign_index(d_a: usize, d_b: usize, r: usize, c: usize) -> (usize, usize) {
    let (i, j) = (r / d_a, r % d_a);
    let (k, l) = (c / d_b, c % d_b);
    (i * d_b + k, j * d_b + l)
}

/// Realignment, a `d_A² × d_B²` matrix.
pub fn realign(m: &CMatrix, d_a: usize, d_b: usize) -> CMatrix {
    CMatrix::from_fn(d_a * d_a, d_b * d_b, |r, c| {
        let (sr, sc) = realign_index(d_a, d_b, r, c);
        m[(sr, sc)]
    })
}

/// Inverse of [`realign`].
pub fn unrealign(r: &CMatrix, d_a: usize, d_b: usize) -> CMatrix {
    let n = d_a * d_b;
    let mut out = CMatrix::zeros(n, n);
    for row in 0..d_a * d_a {
        for col in 0..d_b * d_b {
            let (sr, sc) = realign_index(d_a, d_b, row, col);
            out[(sr, sc)] = r[(row, col)];
        }
    }
    out
}

pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    let svd = m.clone().try_svd(false, false, 1e-14, 10_000);
    match svd {
        Some(s) => Ok(s.singular_values.iter().copied().collect()),
        None => Err(Error::Numerical("SVD".into())),
    }
}

/// Sum of singular values.
pub fn trace_norm(m: &CMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = hermitize(m);
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (vals, vecs)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).0[0]
}

pub fn max_eigenvalue(m: &CMatrix) -> f64 {
    *eigh(m).0.last().expect("non-empty matrix")
}

/// Eigenvector of the largest eigenvalue.
pub fn top_eigenpair(m: &CMatrix) -> (f64, CVector) {
    let (vals, vecs) = eigh(m);
    let n = vals.len();
    (vals[n - 1], vecs.column(n - 1).into_owned())
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn spectral_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| cr(f(x))),
    ));
    &vecs * d * vecs.adjoint()
}

/// Largest `λ` with `λ·P ⪯ Δ` violated, i.e. the smallest `c ≥ 0` such that
/// `Δ ⪯ c·P`, computed on the support of `P`. Returns `None` when `Δ` has a
/// positive part outside that support (beyond `tol`).
pub fn domination_factor(delta: &CMatrix, p: &CMatrix, tol: f64) -> Option<f64> {
    let (vals, vecs) = eigh(p);
    let scale = vals.last().copied().unwrap_or(0.0).abs().max(1.0);
    let cut = 1e-10 * scale;
    let support: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > cut).collect();
    let kernel: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= cut).collect();
    let n = delta.nrows();
    if !kernel.is_empty() {
        let k = CMatrix::from_fn(n, kernel.len(), |r, c| vecs[(r, kernel[c])]);
        let on_kernel = k.adjoint() * delta * &k;
        if max_eigenvalue(&on_kernel) > tol {
            return None;
        }
    }
    if support.is_empty() {
        return Some(0.0);
    }
    let s = CMatrix::from_fn(n, support.len(), |r, c| {
        vecs[(r, support[c])] / vals[support[c]].sqrt()
    });
    let reduced = s.adjoint() * delta * &s;
    Some(max_eigenvalue(&reduced).max(0.0))
}

/// Row-major reshape of a bipartite vector into a `d_A × d_B` matrix.
pub fn reshape_bipartite(psi: &CVector, d_a: usize, d_b: usize) -> CMatrix {
    CMatrix::from_fn(d_a, d_b, |i, j| psi[i * d_b + j])
}

pub fn flatten_bipartite(m: &CMatrix) -> CVector {
    let (a, b) = (m.nrows(), m.ncols());
    CVector::from_fn(a * b, |r, _| m[(r / b, r % b)])
}

/// Schmidt decomposition `ψ = Σ λ_i |a_i⟩ ⊗ |b_i⟩`, coefficients descending.
#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    pub coefficients: Vec<f64>,
    pub left: Vec<CVector>,
    pub right: Vec<CVector>,
}

impl SchmidtDecomposition {
    pub fn rank(&self, tol: f64) -> usize {
        self.coefficients.iter().filter(|&&l| l > tol).count()
    }

    pub fn reconstruct(&self) -> CVector {
        let n = self.left[0].len() * self.right[0].len();
        let mut out = CVector::zeros(n);
        for ((l, a), b) in self.coefficients.iter().zip(&self.left).zip(&self.right) {
            out += kron_vec(a, b).map(|z| z * *l);
        }
        out
    }
}

/// Schmidt coefficients (singular values of the reshaped vector), no
/// normalization requirement.
pub fn schmidt_coefficients(psi: &CVector, d_a: usize, d_b: usize) -> Result<Vec<f64>> {
    singular_values(&reshape_bipartite(psi, d_a, d_b))
}

pub fn schmidt_decompose(psi: &CVector, dims: &SystemDims) -> Result<SchmidtDecomposition> {
    let (d_a, d_b) = dims.pair()?;
    if psi.len() != d_a * d_b {
        return Err(Error::Dimension(format!(
            "vector of length {} for dims {d_a}x{d_b}",
            psi.len()
        )));
    }
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm });
    }
    let m = reshape_bipartite(psi, d_a, d_b);
    let svd = m
        .try_svd(true, true, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("SVD".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = SchmidtDecomposition {
        coefficients: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
    };
    for i in order {
        out.coefficients.push(svd.singular_values[i]);
        out.left.push(u.column(i).into_owned());
        // M = U Σ V†, so the right factor of term i is row i of V†.
        out.right.push(vt.row(i).transpose());
    }
    Ok(out)
}

/// `(1/√d) Σ_i |ii⟩`.
pub fn max_entangled(d: usize) -> CVector {
    let s = 1.0 / (d as f64).sqrt();
    CVector::from_fn(d * d, |r, _| if r / d == r % d { cr(s) } else { cr(0.0) })
}

/// Projector onto [`max_entangled`].
pub fn max_entangled_projector(d: usize) -> CMatrix {
    outer(&max_entangled(d))
}

/// Shift `X|j⟩ = |j+1 mod d⟩`.
pub fn shift(d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |r, c| if r == (c + 1) % d { cr(1.0) } else { cr(0.0) })
}

/// Clock `Z|j⟩ = ω^j |j⟩`.
pub fn clock(d: usize) -> CMatrix {
    let w = 2.0 * std::f64::consts::PI / d as f64;
    CMatrix::from_fn(d, d, |r, c| {
        if r == c {
            C64::from_polar(1.0, w * r as f64)
        } else {
            cr(0.0)
        }
    })
}

/// The `d²` operators `X^s Z^t`, index `s·d + t`.
pub fn heisenberg_weyl_set(d: usize) -> Vec<CMatrix> {
    let x = shift(d);
    let z = clock(d);
    let mut xs = vec![identity(d)];
    let mut zs = vec![identity(d)];
    for i in 1..d {
        xs.push(&xs[i - 1] * &x);
        zs.push(&zs[i - 1] * &z);
    }
    let mut out = Vec::with_capacity(d * d);
    for xs_s in &xs {
        for zs_t in &zs {
            out.push(xs_s * zs_t);
        }
    }
    out
}

/// `U X U†`.
pub fn conjugate(u: &CMatrix, x: &CMatrix) -> CMatrix {
    u * x * u.adjoint()
}

/// Entrywise transpose (no conjugation) in the computational basis.
pub fn transpose(m: &CMatrix) -> CMatrix {
    m.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_z() -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.0), cr(-1.0)]))
    }

    #[test]
    fn kron_of_identities_is_identity() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
    }

    #[test]
    fn kron_of_pauli_z() {
        let zz = kron(&pauli_z(), &pauli_z());
        let expected =
            CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.), cr(-1.), cr(-1.), cr(1.)]));
        assert_eq!(zz, expected);
    }

    #[test]
    fn kron_rectangular_matches_elementwise_definition() {
        let a = CMatrix::from_fn(2, 3, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
        let b = CMatrix::from_fn(3, 2, |i, j| c(0.3 * i as f64, 1.0 + j as f64));
        let k = kron(&a, &b);
        assert_eq!((k.nrows(), k.ncols()), (6, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..3 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 3 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn bell_marginal_is_maximally_mixed() {
        let phi = max_entangled_projector(2);
        let m = partial_trace(&phi, &[2, 2], &[0]).unwrap();
        assert!(max_abs_diff(&m, &identity(2).map(|z| z * 0.5)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_index() {
        let phi = max_entangled_projector(2);
        assert!(matches!(
            partial_trace(&phi, &[2, 2], &[2]),
            Err(Error::SubsystemIndex { index: 2, count: 2 })
        ));
    }

    #[test]
    fn bell_partial_transpose_is_half_swap() {
        let pt = partial_transpose(&max_entangled_projector(2), &[2, 2], 1).unwrap();
        let swap = CMatrix::from_fn(4, 4, |r, c| {
            let (i, j) = (r / 2, r % 2);
            if c == j * 2 + i {
                cr(0.5)
            } else {
                cr(0.0)
            }
        });
        assert!(max_abs_diff(&pt, &swap) < 1e-15);
        let (vals, _) = eigh(&pt);
        let expected = [-0.5, 0.5, 0.5, 0.5];
        for (v, e) in vals.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!((trace_norm(&pt).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn realignment_of_bell_state_has_trace_norm_two() {
        let r = realign(&max_entangled_projector(2), 2, 2);
        assert!((trace_norm(&r).unwrap() - 2.0).abs() < 1e-12);
        let back = unrealign(&r, 2, 2);
        assert_eq!(back, max_entangled_projector(2));
    }

    #[test]
    fn trace_norm_of_identity() {
        assert!((trace_norm(&identity(3)).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn schmidt_of_product_and_bell() {
        let mut e00 = CVector::zeros(4);
        e00[0] = cr(1.0);
        let dims = SystemDims::bipartite(2, 2).unwrap();
        let s = schmidt_decompose(&e00, &dims).unwrap();
        assert_eq!(s.rank(RANK_TOL), 1);
        assert!((s.coefficients[0] - 1.0).abs() < 1e-14);

        let s = schmidt_decompose(&max_entangled(2), &dims).unwrap();
        assert_eq!(s.rank(RANK_TOL), 2);
        for l in &s.coefficients {
            assert!((l - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        }
        assert!((s.reconstruct() - max_entangled(2)).norm() < 1e-14);
    }

    #[test]
    fn schmidt_rejects_unnormalized() {
        let v = CVector::from_element(4, cr(1.0));
        let dims = SystemDims::bipartite(2, 2).unwrap();
        assert!(matches!(
            schmidt_decompose(&v, &dims),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn max_entangled_d2_and_d3() {
        let v = max_entangled(2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = CVector::from_vec(vec![cr(s), cr(0.), cr(0.), cr(s)]);
        assert!((v - expected).norm() < 1e-15);
        let dims = SystemDims::bipartite(3, 3).unwrap();
        let sd = schmidt_decompose(&max_entangled(3), &dims).unwrap();
        for l in sd.coefficients {
            assert!((l - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        }
        assert!((max_entangled(3).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn heisenberg_weyl_d2_is_pauli_set() {
        let hw = heisenberg_weyl_set(2);
        let x = shift(2);
        let z = pauli_z();
        assert!(max_abs_diff(&hw[0], &identity(2)) < 1e-15);
        assert!(max_abs_diff(&hw[1], &z) < 1e-15);
        assert!(max_abs_diff(&hw[2], &x) < 1e-15);
        assert!(max_abs_diff(&hw[3], &(&x * &z)) < 1e-15);
    }

    #[test]
    fn heisenberg_weyl_orthogonality_d3() {
        let hw = heisenberg_weyl_set(3);
        assert_eq!(hw.len(), 9);
        for (a, ua) in hw.iter().enumerate() {
            assert!(max_abs_diff(&(ua.adjoint() * ua), &identity(3)) < 1e-14);
            for (b, ub) in hw.iter().enumerate() {
                let t = (ua.adjoint() * ub).trace();
                let expected = if a == b { 3.0 } else { 0.0 };
                assert!((t - cr(expected)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn generalized_bell_basis_is_orthonormal() {
        for d in [2, 3] {
            let omega = max_entangled(d);
            let basis: Vec<CVector> = heisenberg_weyl_set(d)
                .iter()
                .map(|u| kron(&identity(d), u) * &omega)
                .collect();
            for (i, a) in basis.iter().enumerate() {
                for (j, b) in basis.iter().enumerate() {
                    let g = a.dotc(b);
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((g - cr(e)).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn permutation_swaps_factors() {
        let a = CMatrix::from_fn(2, 2, |i, j| c(i as f64, j as f64 + 1.0));
        let b = CMatrix::from_fn(3, 3, |i, j| c(1.0 + (i * j) as f64, -(i as f64)));
        let ab = kron(&a, &b);
        let ba = permute_systems(&ab, &[2, 3], &[1, 0]).unwrap();
        assert!(max_abs_diff(&ba, &kron(&b, &a)) < 1e-15);
    }

    #[test]
    fn domination_factor_on_support() {
        let p = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(2.0), cr(0.0)]));
        let delta = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.0), cr(0.0)]));
        assert!((domination_factor(&delta, &p, 1e-12).unwrap() - 0.5).abs() < 1e-14);
        let off = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(0.0), cr(1.0)]));
        assert!(domination_factor(&off, &p, 1e-12).is_none());
    }
}
