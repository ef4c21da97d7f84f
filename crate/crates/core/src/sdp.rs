//! Small conic modeling layer for complex Hermitian semidefinite programs,
//! lowered to a real conic program and solved with Clarabel.
//!
//! Every variable is real. A Hermitian `n × n` block uses `n²` of them
//! (diagonal, then real and imaginary parts of the strict upper triangle).
//! Matrix expressions are affine in the variables with complex coefficients.
//! A Hermitian PSD constraint `H ⪰ 0` becomes `[[Re H, −Im H], [Im H, Re H]] ⪰ 0`.
//!
//! Dual variables are reported as Hermitian matrices `W_k`, `W_k ⪰ 0` for PSD
//! constraints and free for equalities. At dual stationarity the identity
//! `objective(x) = dual_objective ± Σ_k tr(W_k·H_k(x))` holds for every `x`,
//! with `+` for minimization and `−` for maximization.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, cr, CMatrix, C64};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Affine scalar expression `constant + Σ coeff·x_var`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: C64,
    pub terms: Vec<(usize, C64)>,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(v: C64) -> Self {
        Self {
            constant: v,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            constant: cr(0.0),
            terms: vec![(i, cr(1.0))],
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(i, v)| (i, v * s)).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            constant: self.constant.conj(),
            terms: self.terms.iter().map(|&(i, v)| (i, v.conj())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: C64) {
        self.constant += other.constant * s;
        self.terms.extend(other.terms.iter().map(|&(i, v)| (i, v * s)));
    }

    /// Sorts terms by variable, merges duplicates and drops exact zeros.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|t| t.1 != cr(0.0));
            return;
        }
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, C64)> = Vec::with_capacity(self.terms.len());
        for &(i, v) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|t| t.1 != cr(0.0));
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(i, v)| acc + v * x[i])
    }

    fn real_part(&self) -> (f64, Vec<(usize, f64)>) {
        (
            self.constant.re,
            self.terms
                .iter()
                .filter(|t| t.1.re != 0.0)
                .map(|&(i, v)| (i, v.re))
                .collect(),
        )
    }

    fn imag_part(&self) -> (f64, Vec<(usize, f64)>) {
        (
            self.constant.im,
            self.terms
                .iter()
                .filter(|t| t.1.im != 0.0)
                .map(|&(i, v)| (i, v.im))
                .collect(),
        )
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, cr(1.0));
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, cr(-1.0));
        self
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(cr(rhs))
    }
}

/// Square matrix whose entries are affine expressions, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMatrix {
    n: usize,
    entries: Vec<LinExpr>,
}

impl AffineMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![LinExpr::zero(); n * n],
        }
    }

    pub fn constant(m: &CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "affine matrices are square");
        let n = m.nrows();
        Self {
            n,
            entries: (0..n * n).map(|k| LinExpr::constant(m[(k / n, k % n)])).collect(),
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> LinExpr) -> Self {
        Self {
            n,
            entries: (0..n * n).map(|k| f(k / n, k % n)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> &LinExpr {
        &self.entries[r * self.n + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut LinExpr {
        &mut self.entries[r * self.n + c]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|e| e.scaled(cr(s))).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &AffineMatrix, s: f64) {
        assert_eq!(self.n, other.n, "dimension mismatch in affine sum");
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.add_scaled(b, cr(s));
        }
    }

    pub fn add_constant(&mut self, m: &CMatrix, s: f64) {
        assert_eq!(self.n, m.nrows(), "dimension mismatch in affine sum");
        for r in 0..self.n {
            for col in 0..self.n {
                self.entries[r * self.n + col].constant += m[(r, col)] * s;
            }
        }
    }

    /// `new[r][c] = self[f(r, c)]` on an `n_out × n_out` grid.
    pub fn gather(&self, n_out: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        Self::from_fn(n_out, |r, col| {
            let (i, j) = f(r, col);
            self.get(i, j).clone()
        })
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |r, col| self.get(col, r).conj())
    }

    pub fn trace(&self) -> LinExpr {
        let mut t = LinExpr::zero();
        for i in 0..self.n {
            t.add_scaled(self.get(i, i), cr(1.0));
        }
        t.compact();
        t
    }

    /// `tr(C · self)`.
    pub fn inner_constant(&self, m: &CMatrix) -> LinExpr {
        let mut t = LinExpr::zero();
        for r in 0..self.n {
            for col in 0..self.n {
                let w = m[(col, r)];
                if w != cr(0.0) {
                    t.add_scaled(self.get(r, col), w);
                }
            }
        }
        t.compact();
        t
    }

    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if total != self.n {
            return Err(Error::Dimension("partial trace dims do not match".into()));
        }
        // Reuse the numeric partial trace on index labels: trace out by
        // permuting kept systems first, then summing diagonal blocks.
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.iter().any(|&i| i >= dims.len()) {
            return Err(Error::Dimension("partial trace keeps a missing subsystem".into()));
        }
        let mut perm: Vec<usize> = keep.clone();
        perm.extend((0..dims.len()).filter(|i| !keep.contains(i)));
        let map = linalg::permutation_index_map(dims, &perm)?;
        let kept: usize = keep.iter().map(|&i| dims[i]).product();
        let rest = total / kept;
        Ok(Self::from_fn(kept, |r, col| {
            let mut e = LinExpr::zero();
            for t in 0..rest {
                let (i, j) = (map[r * rest + t], map[col * rest + t]);
                e.add_scaled(self.get(i, j), cr(1.0));
            }
            e.compact();
            e
        }))
    }

    pub fn partial_transpose(&self, dims: &[usize], subsystem: usize) -> Result<Self> {
        let total: usize = dims.iter().product();
        if total != self.n || subsystem >= dims.len() {
            return Err(Error::Dimension("partial transpose dims do not match".into()));
        }
        Ok(self.gather(self.n, |r, col| {
            linalg::partial_transpose_index(dims, subsystem, r, col)
        }))
    }

    pub fn permute(&self, dims: &[usize], perm: &[usize]) -> Result<Self> {
        let map = linalg::permutation_index_map(dims, perm)?;
        if map.len() != self.n {
            return Err(Error::Dimension("permutation dims do not match".into()));
        }
        Ok(self.gather(self.n, |r, col| (map[r], map[col])))
    }

    /// Realignment `R[(i,j),(k,l)] = X[(i,k),(j,l)]`, returned as a
    /// rectangular block embedded in the Hermitian dilation
    /// `[[0, R], [R†, 0]]` of size `d_a² + d_b²`.
    pub fn realign_dilation(&self, d_a: usize, d_b: usize) -> Self {
        let (na, nb) = (d_a * d_a, d_b * d_b);
        let n = na + nb;
        Self::from_fn(n, |r, col| {
            if r < na && col >= na {
                let (i, j) = linalg::realign_index(d_a, d_b, r, col - na);
                self.get(i, j).clone()
            } else if r >= na && col < na {
                let (i, j) = linalg::realign_index(d_a, d_b, col, r - na);
                self.get(i, j).conj()
            } else {
                LinExpr::zero()
            }
        })
    }

    /// `C ⊗ self`.
    pub fn kron_constant_left(&self, m: &CMatrix) -> Self {
        let (k, n) = (m.nrows(), self.n);
        Self::from_fn(k * n, |r, col| {
            let w = m[(r / n, col / n)];
            if w == cr(0.0) {
                LinExpr::zero()
            } else {
                self.get(r % n, col % n).scaled(w)
            }
        })
    }

    /// `U · self · U†` for a constant (not necessarily square) `U`.
    pub fn congruence(&self, u: &CMatrix) -> Self {
        let n_out = u.nrows();
        Self::from_fn(n_out, |r, col| {
            let mut e = LinExpr::zero();
            for i in 0..self.n {
                let a = u[(r, i)];
                if a == cr(0.0) {
                    continue;
                }
                for j in 0..self.n {
                    let b = u[(col, j)].conj();
                    if b != cr(0.0) {
                        e.add_scaled(self.get(i, j), a * b);
                    }
                }
            }
            e.compact();
            e
        })
    }

    /// Block matrix `[[a, b], [b†, d]]`.
    pub fn block2(a: &AffineMatrix, b_entries: impl Fn(usize, usize) -> LinExpr, d: &AffineMatrix) -> Self {
        let (na, nd) = (a.n, d.n);
        Self::from_fn(na + nd, |r, col| match (r < na, col < na) {
            (true, true) => a.get(r, col).clone(),
            (false, false) => d.get(r - na, col - na).clone(),
            (true, false) => b_entries(r, col - na),
            (false, true) => b_entries(col, r - na).conj(),
        })
    }

    pub fn compact(&mut self) {
        self.entries.iter_mut().for_each(LinExpr::compact);
    }

    pub fn eval(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |r, col| self.get(r, col).eval(x))
    }
}

impl Add<&AffineMatrix> for AffineMatrix {
    type Output = AffineMatrix;
    fn add(mut self, rhs: &AffineMatrix) -> AffineMatrix {
        self.add_scaled(rhs, 1.0);
        self
    }
}

impl Sub<&AffineMatrix> for AffineMatrix {
    type Output = AffineMatrix;
    fn sub(mut self, rhs: &AffineMatrix) -> AffineMatrix {
        self.add_scaled(rhs, -1.0);
        self
    }
}

impl Neg for AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self.scaled(-1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Psd,
    ZeroHermitian,
    ZeroScalar,
    NonnegScalar,
}

#[derive(Clone, Debug)]
enum Body {
    Matrix(AffineMatrix),
    Scalar(LinExpr),
}

#[derive(Clone, Debug)]
struct Constraint {
    name: String,
    kind: ConstraintKind,
    body: Body,
}

#[derive(Clone, Debug)]
struct Block {
    name: String,
    n: usize,
}

/// Handle to a Hermitian matrix variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HermVar {
    pub index: usize,
    pub n: usize,
    offset: usize,
}

impl HermVar {
    /// Real variable indices `(re, im)` of entry `(r, c)`; `im` is `None` on
    /// the diagonal.
    fn slot(&self, r: usize, col: usize) -> (usize, Option<usize>, f64) {
        let n = self.n;
        if r == col {
            return (self.offset + r, None, 1.0);
        }
        let (i, j, sign) = if r < col { (r, col, 1.0) } else { (col, r, -1.0) };
        // Strict upper triangle enumerated row by row.
        let k = i * n - i * (i + 1) / 2 + (j - i - 1);
        let m = n * (n - 1) / 2;
        (self.offset + n + k, Some(self.offset + n + m + k), sign)
    }

    pub fn expr(&self) -> AffineMatrix {
        AffineMatrix::from_fn(self.n, |r, col| {
            let (re, im, sign) = self.slot(r, col);
            let mut terms = vec![(re, cr(1.0))];
            if let Some(im) = im {
                terms.push((im, c(0.0, sign)));
            }
            LinExpr {
                constant: cr(0.0),
                terms,
            }
        })
    }

    pub fn value(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |r, col| {
            let (re, im, sign) = self.slot(r, col);
            c(x[re], im.map_or(0.0, |i| sign * x[i]))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            max_iter: 500,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol_feas: tol,
            tol_gap_abs: tol,
            tol_gap_rel: tol,
            ..Self::default()
        }
    }
}

/// Semidefinite program: minimize (or maximize) a real affine objective.
#[derive(Clone, Debug, Default)]
pub struct Problem {
    nvars: usize,
    blocks: Vec<Block>,
    scalars: Vec<(String, usize)>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    maximize: bool,
}

/// Real conic standard form `min qᵀx s.t. Ax + s = b, s ∈ K`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConicForm {
    pub nvars: usize,
    pub q: Vec<f64>,
    pub objective_constant: f64,
    pub maximize: bool,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    pub blocks: Vec<(String, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeSpec {
    pub constraint: String,
    pub kind: ConstraintKind,
    /// Real cone dimension: number of rows for zero/nonnegative cones, side
    /// length of the real embedding for PSD cones.
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// Solved at Clarabel's reduced accuracy level.
    Inaccurate,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalError,
}

impl SolveStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlaterDiagnostic {
    /// Smallest eigenvalue over PSD constraints at the supplied interior point.
    pub min_psd_margin: f64,
    /// Largest equality violation at the interior point.
    pub max_equality_violation: f64,
    pub strictly_feasible: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub status: SolveStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub settings: SolverSettings,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slater: Option<SlaterDiagnostic>,
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    duals: BTreeMap<String, DualValue>,
}

#[derive(Clone, Debug)]
pub enum DualValue {
    Matrix(CMatrix),
    Scalar(f64),
}

impl SolveReport {
    pub fn value(&self, v: &HermVar) -> CMatrix {
        linalg::hermitize(&v.value(&self.x))
    }

    pub fn scalar(&self, i: usize) -> f64 {
        self.x[i]
    }

    pub fn dual_matrix(&self, name: &str) -> Result<&CMatrix> {
        match self.duals.get(name) {
            Some(DualValue::Matrix(m)) => Ok(m),
            _ => Err(Error::Contract(format!("no matrix dual named {name}"))),
        }
    }

    pub fn dual_scalar(&self, name: &str) -> Result<f64> {
        match self.duals.get(name) {
            Some(DualValue::Scalar(v)) => Ok(*v),
            _ => Err(Error::Contract(format!("no scalar dual named {name}"))),
        }
    }

    pub fn ensure_usable(&self) -> Result<()> {
        if self.status.is_usable() {
            Ok(())
        } else {
            Err(Error::Solver(format!("solver status {:?}", self.status)))
        }
    }
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn hermitian(&mut self, name: &str, n: usize) -> HermVar {
        let v = HermVar {
            index: self.blocks.len(),
            n,
            offset: self.nvars,
        };
        self.blocks.push(Block { name: name.into(), n });
        self.nvars += n * n;
        v
    }

    /// Hermitian variable constrained to be PSD (constraint named after it).
    pub fn psd_variable(&mut self, name: &str, n: usize) -> HermVar {
        let v = self.hermitian(name, n);
        self.add_psd(&format!("{name}:psd"), v.expr());
        v
    }

    pub fn scalar(&mut self, name: &str) -> usize {
        let i = self.nvars;
        self.nvars += 1;
        self.scalars.push((name.into(), i));
        i
    }

    pub fn add_psd(&mut self, name: &str, mut m: AffineMatrix) {
        m.compact();
        self.push(name, ConstraintKind::Psd, Body::Matrix(m));
    }

    pub fn add_zero_hermitian(&mut self, name: &str, mut m: AffineMatrix) {
        m.compact();
        self.push(name, ConstraintKind::ZeroHermitian, Body::Matrix(m));
    }

    pub fn add_zero(&mut self, name: &str, mut e: LinExpr) {
        e.compact();
        self.push(name, ConstraintKind::ZeroScalar, Body::Scalar(e));
    }

    /// `e ≥ 0` (real part).
    pub fn add_nonneg(&mut self, name: &str, mut e: LinExpr) {
        e.compact();
        self.push(name, ConstraintKind::NonnegScalar, Body::Scalar(e));
    }

    fn push(&mut self, name: &str, kind: ConstraintKind, body: Body) {
        assert!(
            !self.constraints.iter().any(|c| c.name == name),
            "duplicate constraint name {name}"
        );
        self.constraints.push(Constraint {
            name: name.into(),
            kind,
            body,
        });
    }

    pub fn minimize(&mut self, mut e: LinExpr) {
        e.compact();
        self.objective = e;
        self.maximize = false;
    }

    pub fn maximize(&mut self, mut e: LinExpr) {
        e.compact();
        self.objective = e;
        self.maximize = true;
    }

    /// Lowers to real conic form. Each constraint body `H(x)` becomes rows
    /// `s = b − A x` with `s` the (scaled) vectorization of `H(x)`.
    pub fn conic_form(&self) -> ConicForm {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut emit = |b: &mut Vec<f64>, constant: f64, terms: &[(usize, f64)], scale: f64| {
            let r = b.len();
            b.push(scale * constant);
            for &(j, v) in terms {
                rows.push(r);
                cols.push(j);
                vals.push(-scale * v);
            }
        };
        for con in &self.constraints {
            match (&con.body, con.kind) {
                (Body::Scalar(e), _) => {
                    let (k, t) = e.real_part();
                    emit(&mut b, k, &t, 1.0);
                    cones.push(ConeSpec {
                        constraint: con.name.clone(),
                        kind: con.kind,
                        size: 1,
                    });
                }
                (Body::Matrix(m), ConstraintKind::ZeroHermitian) => {
                    let n = m.dim();
                    for i in 0..n {
                        let (k, t) = m.get(i, i).real_part();
                        emit(&mut b, k, &t, 1.0);
                    }
                    for i in 0..n {
                        for j in i + 1..n {
                            let (k, t) = m.get(i, j).real_part();
                            emit(&mut b, k, &t, 1.0);
                            let (k, t) = m.get(i, j).imag_part();
                            emit(&mut b, k, &t, 1.0);
                        }
                    }
                    cones.push(ConeSpec {
                        constraint: con.name.clone(),
                        kind: con.kind,
                        size: n * n,
                    });
                }
                (Body::Matrix(m), _) => {
                    let n = m.dim();
                    // Upper triangle of the real embedding, column-major.
                    for col in 0..2 * n {
                        for r in 0..=col {
                            let (k, t) = embedded_entry(m, r, col);
                            let scale = if r == col { 1.0 } else { SQRT2 };
                            emit(&mut b, k, &t, scale);
                        }
                    }
                    cones.push(ConeSpec {
                        constraint: con.name.clone(),
                        kind: con.kind,
                        size: 2 * n,
                    });
                }
            }
        }
        let (objective_constant, terms) = self.objective.real_part();
        let sign = if self.maximize { -1.0 } else { 1.0 };
        let mut q = vec![0.0; self.nvars];
        for (j, v) in terms {
            q[j] += sign * v;
        }
        ConicForm {
            nvars: self.nvars,
            q,
            objective_constant,
            maximize: self.maximize,
            a_rows: rows,
            a_cols: cols,
            a_vals: vals,
            b,
            cones,
            blocks: self.blocks.iter().map(|bl| (bl.name.clone(), bl.n)).collect(),
        }
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<SolveReport> {
        self.solve_with_hint(settings, None)
    }

    /// Solves, and if `interior` is given evaluates a Slater diagnostic there.
    pub fn solve_with_hint(
        &self,
        settings: &SolverSettings,
        interior: Option<&[f64]>,
    ) -> Result<SolveReport> {
        let start = Instant::now();
        let form = self.conic_form();
        let m = form.b.len();
        let n = form.nvars;
        let a = CscMatrix::new_from_triplets(
            m,
            n,
            form.a_rows.clone(),
            form.a_cols.clone(),
            form.a_vals.clone(),
        );
        let p = CscMatrix::<f64>::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = merge_cones(&form.cones);
        let cs = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(settings.tol_feas)
            .tol_gap_abs(settings.tol_gap_abs)
            .tol_gap_rel(settings.tol_gap_rel)
            .max_iter(settings.max_iter)
            .direct_solve_method("faer".into())
            .presolve_enable(false)
            .chordal_decomposition_enable(false)
            .build()
            .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &form.q, &a, &form.b, &cones, cs)
            .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let info = &solver.info;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::DualInfeasible
            }
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
            _ => SolveStatus::NumericalError,
        };
        let sign = if self.maximize { -1.0 } else { 1.0 };
        let k0 = form.objective_constant;
        let primal = sign * info.cost_primal + k0;
        let dual = sign * info.cost_dual + k0;
        let duals = self.extract_duals(&sol.z);
        let slater = interior.map(|x| self.slater(x));
        Ok(SolveReport {
            solver: "clarabel".into(),
            status,
            primal_objective: primal,
            dual_objective: dual,
            gap: (primal - dual).abs(),
            primal_residual: info.res_primal,
            dual_residual: info.res_dual,
            iterations: info.iterations,
            settings: *settings,
            slater,
            wall_time_s: start.elapsed().as_secs_f64(),
            x: sol.x.clone(),
            duals,
        })
    }

    fn extract_duals(&self, z: &[f64]) -> BTreeMap<String, DualValue> {
        let mut out = BTreeMap::new();
        let mut pos = 0;
        for con in &self.constraints {
            match (&con.body, con.kind) {
                (Body::Scalar(_), _) => {
                    out.insert(con.name.clone(), DualValue::Scalar(z[pos]));
                    pos += 1;
                }
                (Body::Matrix(m), ConstraintKind::ZeroHermitian) => {
                    let n = m.dim();
                    let mut w = CMatrix::zeros(n, n);
                    for i in 0..n {
                        w[(i, i)] = cr(z[pos]);
                        pos += 1;
                    }
                    for i in 0..n {
                        for j in i + 1..n {
                            let v = c(z[pos], z[pos + 1]) * 0.5;
                            w[(i, j)] = v;
                            w[(j, i)] = v.conj();
                            pos += 2;
                        }
                    }
                    out.insert(con.name.clone(), DualValue::Matrix(w));
                }
                (Body::Matrix(m), _) => {
                    let n = m.dim();
                    let big = 2 * n;
                    let mut zr = nalgebra::DMatrix::<f64>::zeros(big, big);
                    for col in 0..big {
                        for r in 0..=col {
                            let v = if r == col { z[pos] } else { z[pos] / SQRT2 };
                            zr[(r, col)] = v;
                            zr[(col, r)] = v;
                            pos += 1;
                        }
                    }
                    let w = CMatrix::from_fn(n, n, |r, col| {
                        c(
                            zr[(r, col)] + zr[(n + r, n + col)],
                            zr[(n + r, col)] - zr[(r, n + col)],
                        )
                    });
                    out.insert(con.name.clone(), DualValue::Matrix(linalg::hermitize(&w)));
                }
            }
        }
        out
    }

    fn slater(&self, x: &[f64]) -> SlaterDiagnostic {
        let mut margin = f64::INFINITY;
        let mut viol: f64 = 0.0;
        for con in &self.constraints {
            match &con.body {
                Body::Matrix(m) => {
                    let v = linalg::hermitize(&m.eval(x));
                    match con.kind {
                        ConstraintKind::Psd => margin = margin.min(linalg::min_eigenvalue(&v)),
                        _ => viol = viol.max(v.iter().map(|z| z.norm()).fold(0.0, f64::max)),
                    }
                }
                Body::Scalar(e) => {
                    let v = e.eval(x).re;
                    match con.kind {
                        ConstraintKind::NonnegScalar => margin = margin.min(v),
                        _ => viol = viol.max(v.abs()),
                    }
                }
            }
        }
        SlaterDiagnostic {
            min_psd_margin: margin,
            max_equality_violation: viol,
            strictly_feasible: margin > 0.0 && viol < 1e-9,
        }
    }

    /// Evaluates the objective at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.eval(x).re
    }
}

fn embedded_entry(m: &AffineMatrix, r: usize, col: usize) -> (f64, Vec<(usize, f64)>) {
    let n = m.dim();
    let (bi, bj) = (r / n, col / n);
    let (i, j) = (r % n, col % n);
    let e = m.get(i, j);
    match (bi, bj) {
        (0, 0) | (1, 1) => e.real_part(),
        (1, 0) => e.imag_part(),
        _ => {
            let (k, t) = e.imag_part();
            (-k, t.into_iter().map(|(v, w)| (v, -w)).collect())
        }
    }
}

fn merge_cones(specs: &[ConeSpec]) -> Vec<SupportedConeT<f64>> {
    let mut out: Vec<SupportedConeT<f64>> = Vec::new();
    for s in specs {
        match s.kind {
            ConstraintKind::Psd => out.push(SupportedConeT::PSDTriangleConeT(s.size)),
            ConstraintKind::ZeroHermitian | ConstraintKind::ZeroScalar => match out.last_mut() {
                Some(SupportedConeT::ZeroConeT(k)) => *k += s.size,
                _ => out.push(SupportedConeT::ZeroConeT(s.size)),
            },
            ConstraintKind::NonnegScalar => match out.last_mut() {
                Some(SupportedConeT::NonnegativeConeT(k)) => *k += s.size,
                _ => out.push(SupportedConeT::NonnegativeConeT(s.size)),
            },
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_eigenvalue, trace_product};
    use crate::random;

    #[test]
    fn largest_eigenvalue_by_sdp() {
        // max tr(C X) s.t. X ⪰ 0, tr X = 1  =  λmax(C); dual is min t s.t. tI ⪰ C.
        let mut rng = random::rng(5);
        for n in [2usize, 3, 4] {
            let cm = random::random_hermitian(n, &mut rng);
            let mut p = Problem::new();
            let x = p.psd_variable("X", n);
            p.add_zero("tr", x.expr().trace() - LinExpr::constant(cr(1.0)));
            p.maximize(x.expr().inner_constant(&cm));
            let rep = p.solve(&SolverSettings::default()).unwrap();
            assert_eq!(rep.status, SolveStatus::Optimal);
            let lmax = max_eigenvalue(&cm);
            assert!((rep.primal_objective - lmax).abs() < 1e-7, "{} vs {lmax}", rep.primal_objective);
            assert!((rep.dual_objective - lmax).abs() < 1e-7);
            // Complex off-diagonals must be honored: check the optimizer itself.
            let xv = rep.value(&x);
            assert!((trace_product(&cm, &xv) - lmax).abs() < 1e-6);
        }
    }

    #[test]
    fn psd_dual_matches_lagrangian() {
        // min tr X s.t. X − ρ ⪰ 0 has X = ρ and dual W = I on the dominance
        // constraint, with dual objective tr(W ρ) = 1.
        let mut rng = random::rng(6);
        let rho = random::random_density(3, 3, &mut rng);
        let mut p = Problem::new();
        let x = p.hermitian("X", 3);
        let mut dom = x.expr();
        dom.add_constant(&rho, -1.0);
        p.add_psd("dom", dom);
        p.minimize(x.expr().trace());
        let rep = p.solve(&SolverSettings::default()).unwrap();
        assert!((rep.primal_objective - 1.0).abs() < 1e-7);
        let w = rep.dual_matrix("dom").unwrap();
        assert!(linalg::max_abs_diff(w, &identity(3)) < 1e-6);
        assert!((trace_product(w, &rho) - rep.dual_objective).abs() < 1e-7);
    }

    #[test]
    fn equality_dual_sign_and_scaling() {
        // max tr(C X) s.t. X ⪰ 0, tr_B X = I/2 on 2⊗2. For every X,
        // tr(C X) = D − tr(K (tr_B X − I/2)) − tr(W X), hence C = −K⊗I − W
        // and D = −tr(K)/2.
        let mut rng = random::rng(8);
        let cm = random::random_hermitian(4, &mut rng);
        let mut p = Problem::new();
        let x = p.psd_variable("X", 4);
        let mut eq = x.expr().partial_trace(&[2, 2], &[0]).unwrap();
        eq.add_constant(&(identity(2) * cr(0.5)), -1.0);
        p.add_zero_hermitian("marg", eq);
        p.maximize(x.expr().inner_constant(&cm));
        let rep = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        let k = rep.dual_matrix("marg").unwrap();
        let w = rep.dual_matrix("X:psd").unwrap();
        assert!(linalg::min_eigenvalue(w) > -1e-7);
        let recon = -(linalg::kron(k, &identity(2)) + w);
        assert!(linalg::max_abs_diff(&recon, &cm) < 1e-6, "{recon} vs {cm}");
        let d = -k.trace().re / 2.0;
        assert!((d - rep.dual_objective).abs() < 1e-6, "{d} vs {}", rep.dual_objective);
        assert!((rep.primal_objective - rep.dual_objective).abs() < 1e-6);
    }

    #[test]
    fn realign_and_partial_transpose_match_numeric() {
        let mut rng = random::rng(9);
        let m = random::random_density(6, 6, &mut rng);
        let mut p = Problem::new();
        let x = p.hermitian("X", 6);
        let mut xs = vec![0.0; p.nvars()];
        // Values for the variable: diagonal, Re upper, Im upper.
        let n = 6;
        let mut k = 0;
        for i in 0..n {
            xs[i] = m[(i, i)].re;
        }
        let cnt = n * (n - 1) / 2;
        for i in 0..n {
            for j in i + 1..n {
                xs[n + k] = m[(i, j)].re;
                xs[n + cnt + k] = m[(i, j)].im;
                k += 1;
            }
        }
        assert!(linalg::max_abs_diff(&x.value(&xs), &m) < 1e-15);
        let e = x.expr();
        let pt = e.partial_transpose(&[2, 3], 1).unwrap().eval(&xs);
        assert!(linalg::max_abs_diff(&pt, &linalg::partial_transpose(&m, &[2, 3], 1).unwrap()) < 1e-15);
        let ptr = e.partial_trace(&[2, 3], &[1]).unwrap().eval(&xs);
        assert!(linalg::max_abs_diff(&ptr, &linalg::partial_trace(&m, &[2, 3], &[1]).unwrap()) < 1e-15);
        let dil = e.realign_dilation(2, 3).eval(&xs);
        let r = linalg::realign(&m, 2, 3);
        assert!(linalg::max_abs_diff(&dil.view((0, 4), (4, 9)).into_owned(), &r) < 1e-15);
        let perm = e.permute(&[2, 3], &[1, 0]).unwrap().eval(&xs);
        assert!(linalg::max_abs_diff(&perm, &linalg::permute_systems(&m, &[2, 3], &[1, 0]).unwrap()) < 1e-15);
        let u = random::random_unitary(6, &mut rng);
        let cg = e.congruence(&u).eval(&xs);
        assert!(linalg::max_abs_diff(&cg, &linalg::conjugate(&u, &m)) < 1e-13);
        let kl = e.kron_constant_left(&identity(2)).eval(&xs);
        assert!(linalg::max_abs_diff(&kl, &linalg::kron(&identity(2), &m)) < 1e-15);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        let mut p = Problem::new();
        let x = p.psd_variable("X", 2);
        p.add_zero("tr", x.expr().trace() + LinExpr::constant(cr(1.0)));
        p.minimize(x.expr().trace());
        let rep = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::PrimalInfeasible);
        assert!(rep.ensure_usable().is_err());
    }

    #[test]
    fn slater_diagnostic() {
        let mut p = Problem::new();
        let x = p.psd_variable("X", 2);
        p.add_zero("tr", x.expr().trace() - LinExpr::constant(cr(1.0)));
        p.minimize(x.expr().get(0, 0).clone());
        let hint = vec![0.5, 0.5, 0.0, 0.0];
        let rep = p.solve_with_hint(&SolverSettings::default(), Some(&hint)).unwrap();
        let s = rep.slater.unwrap();
        assert!(s.strictly_feasible);
        assert!((s.min_psd_margin - 0.5).abs() < 1e-12);
        assert!(rep.primal_objective.abs() < 1e-7);
    }
}
