//! Schmidt-number robustness of states, distributed measurements and
//! teleportation instruments, computed as brackets `[lower, upper]`.
//!
//! Lower bounds come from dual solutions of outer-relaxed conic programs and
//! are reported together with the witness operators that certify them.
//! Upper bounds come from explicit ensembles of Schmidt-rank-`k` vectors
//! found by column generation, made exactly feasible by a final correction
//! with the (separable) identity.

use serde::{Deserialize, Serialize};

use crate::cone::{
    check_k, constrain_outer, fit_decomposition, inner_decomposition, witness_value_k, ConeApprox,
    DecompositionBudget, SeesawOptions, SnDecomposition,
};
use crate::error::{Error, Result};
use crate::linalg::{
    self, cr, domination_factor, hermitize, identity, kron, max_eigenvalue, min_eigenvalue, outer,
    spectral_map, trace_product, CMatrix, CVector, SystemDims,
};
use crate::objects::{
    distributed_elements, distributed_measurement_from, instrument_chois, simulate_npeb,
    teleportation_instrument_from, BipartiteState, ChoiMatrix, DistributedMeasurement, Povm,
    ResponseKernel, TeleportationInstrument, npeb_order_bound,
};
use crate::sdp::{AffineMatrix, HermVar, LinExpr, Problem, SolveReport, SolverSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "R_ke")]
    Rke,
    #[serde(rename = "R_kDM")]
    Rkdm,
    #[serde(rename = "R_sc")]
    Rsc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessRole {
    /// `A` with `tr(Aτ) ≤ tr τ` on the cone; bound `tr(Aρ) − 1`.
    StateWitness,
    /// `{Y_ab}` with normalizer `K`, `tr K = 1`; bound `Σ tr(Y_ab M_ab) − 1`.
    DmWitness,
    /// `{Y_a}` with normalizer `M`, `tr_V M ⪯ d·I`; bound `Σ tr(Y_a J_a) − 1`.
    TeleWitness,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessValidation {
    /// Largest `⟨ψ|·|ψ⟩` found over Schmidt-rank-`k` vectors for the
    /// condition the dual program imposes (`≤ 1` for state witnesses,
    /// `≤ 0` for the `Y − normalizer` conditions).
    pub max_found: f64,
    pub restarts: usize,
    /// Factor the raw dual solution was divided by to restore validity.
    pub rescaled_by: f64,
    /// Smallest eigenvalue among the operators that must be PSD.
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessOperator {
    pub role: WitnessRole,
    pub dims: SystemDims,
    #[serde(with = "crate::serde_complex::matrix_list")]
    pub ops: Vec<CMatrix>,
    #[serde(with = "opt_matrix", default)]
    pub normalizer: Option<CMatrix>,
    pub validation: WitnessValidation,
}

mod opt_matrix {
    use super::CMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::serde_complex::matrix")] CMatrix);

    pub fn serialize<S: Serializer>(m: &Option<CMatrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|x| Wrap(x.clone())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CMatrix>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

impl WitnessOperator {
    /// `Σ_i tr(ops_i · objects_i) − 1`.
    pub fn bound_on(&self, objects: &[CMatrix]) -> Result<f64> {
        if objects.len() != self.ops.len() {
            return Err(Error::Contract("witness/object count mismatch".into()));
        }
        Ok(self
            .ops
            .iter()
            .zip(objects)
            .map(|(y, m)| trace_product(y, m))
            .sum::<f64>()
            - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperMethod {
    /// Free ensemble pushed through the object's generating map.
    ColumnGeneration,
    /// Coin-flip free object with trivial (identity) elements.
    ProductNoise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpperCertificate {
    pub method: UpperMethod,
    pub value: f64,
    /// Unnormalized free operator `γ' = Σ w_i |ψ_i⟩⟨ψ_i|` with `L(γ') ⪰ L(ρ)`.
    pub decomposition: Option<SnDecomposition>,
    /// Smallest eigenvalue of `L(γ') − L(ρ)` over blocks.
    pub slack: f64,
    pub rounds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub quantity: Quantity,
    pub k: usize,
    /// Dimensions of the space on which the cone constraints act.
    pub dims: SystemDims,
    pub relaxation: ConeApprox,
    /// Set for distributed measurements: the lower bound relaxes the free
    /// set to POVMs whose elements each lie in the outer cone.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lift: Option<String>,
    /// The lower bound equals the robustness: only for states, when the
    /// cone is exact. Measurement and instrument free sets are relaxed even
    /// then.
    pub exact_mode: bool,
    pub lower: f64,
    pub upper: Option<f64>,
    pub gap: Option<f64>,
    /// Optimal value of the relaxed primal program, as robustness.
    pub relaxed_primal: f64,
    pub witness: WitnessOperator,
    pub upper_certificate: Option<UpperCertificate>,
    pub solve: SolveReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perturbation: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl RobustnessReport {
    pub fn value_estimate(&self) -> f64 {
        self.upper.map_or(self.lower, |u| 0.5 * (self.lower + u))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessOptions {
    pub solver: SolverSettings,
    pub seed: u64,
    pub seesaw: SeesawOptions,
    pub validation_restarts: usize,
    pub compute_upper: bool,
    pub max_rounds: usize,
    pub decomposition: DecompositionBudget,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            seed: 0,
            seesaw: SeesawOptions::default(),
            validation_restarts: 64,
            compute_upper: true,
            max_rounds: 40,
            decomposition: DecompositionBudget::default(),
        }
    }
}

const PERTURBATION: f64 = 1e-12;
const PRICING_TOL: f64 = 1e-9;
const CLOSE_TOL: f64 = 1e-9;

/// Linear map from operators on `d_A ⊗ d_B` to a list of square blocks,
/// stored by its images of the matrix units `E_ij`.
#[derive(Clone, Debug)]
pub struct StateMap {
    pub d_a: usize,
    pub d_b: usize,
    images: Vec<Vec<CMatrix>>,
}

impl StateMap {
    pub fn from_fn(d_a: usize, d_b: usize, f: impl Fn(&CMatrix) -> Result<Vec<CMatrix>>) -> Result<Self> {
        let n = d_a * d_b;
        let mut images = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let e = CMatrix::from_fn(n, n, |r, c| if (r, c) == (i, j) { cr(1.0) } else { cr(0.0) });
                images.push(f(&e)?);
            }
        }
        Ok(Self { d_a, d_b, images })
    }

    pub fn identity(d_a: usize, d_b: usize) -> Self {
        Self::from_fn(d_a, d_b, |x| Ok(vec![x.clone()])).expect("identity map")
    }

    pub fn n(&self) -> usize {
        self.d_a * self.d_b
    }

    pub fn apply(&self, x: &CMatrix) -> Vec<CMatrix> {
        let n = self.n();
        let mut out: Vec<CMatrix> = self.images[0].iter().map(|b| CMatrix::zeros(b.nrows(), b.ncols())).collect();
        for i in 0..n {
            for j in 0..n {
                let v = x[(i, j)];
                if v == cr(0.0) {
                    continue;
                }
                for (o, img) in out.iter_mut().zip(&self.images[i * n + j]) {
                    *o += img * v;
                }
            }
        }
        out
    }

    /// `L*(Y)` with `tr(L*(Y) X) = Σ_b tr(Y_b L(X)_b)`.
    pub fn adjoint(&self, ys: &[CMatrix]) -> CMatrix {
        let n = self.n();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = cr(0.0);
                for (y, img) in ys.iter().zip(&self.images[i * n + j]) {
                    s += (y * img).trace();
                }
                out[(j, i)] = s;
            }
        }
        hermitize(&out)
    }
}

fn blocks_dominate(map: &StateMap, gamma: &CMatrix, target: &[CMatrix]) -> f64 {
    map.apply(gamma)
        .iter()
        .zip(target)
        .map(|(g, t)| min_eigenvalue(&hermitize(&(g - t))))
        .fold(f64::INFINITY, f64::min)
}

fn gram(vectors: &[CVector], weights: &[f64], n: usize) -> CMatrix {
    vectors
        .iter()
        .zip(weights)
        .fold(CMatrix::zeros(n, n), |acc, (v, w)| acc + outer(v) * cr(*w))
}

/// Turns a nearly feasible free operator `G` into an exactly feasible one by
/// adding `c·I`, the smallest such multiple on the support of `L(I)`.
fn fix_up(map: &StateMap, vectors: &[CVector], weights: &[f64], target: &[CMatrix], k: usize) -> Option<(f64, SnDecomposition, f64)> {
    let n = map.n();
    let g = gram(vectors, weights, n);
    let lg = map.apply(&g);
    let li = map.apply(&identity(n));
    let mut c: f64 = 0.0;
    for ((t, l), p) in target.iter().zip(&lg).zip(&li) {
        let delta = hermitize(&(t - l));
        c = c.max(domination_factor(&delta, p, 1e-12)?);
    }
    // Guard against rounding in the domination factor.
    if c > 0.0 {
        c = c * (1.0 + 1e-9) + 1e-15;
    }
    let mut ws: Vec<f64> = weights.to_vec();
    let mut vs: Vec<CVector> = vectors.to_vec();
    if c > 0.0 {
        for i in 0..n {
            let mut e = CVector::zeros(n);
            e[i] = cr(1.0);
            vs.push(e);
            ws.push(c);
        }
    }
    let keep: Vec<usize> = (0..ws.len()).filter(|&i| ws[i] > 0.0).collect();
    let dec = SnDecomposition {
        dims: SystemDims::bipartite(map.d_a, map.d_b).ok()?,
        k,
        weights: keep.iter().map(|&i| ws[i]).collect(),
        vectors: keep.iter().map(|&i| vs[i].clone()).collect(),
        residual: 0.0,
    };
    let total: f64 = dec.weights.iter().sum();
    let slack = blocks_dominate(map, &dec.reconstruct(), target);
    Some((total - 1.0, dec, slack))
}

fn master_problem(map: &StateMap, pool: &[CVector], target: &[CMatrix], settings: &SolverSettings) -> Result<(Vec<f64>, Vec<CMatrix>, SolveReport)> {
    let mut p = Problem::new();
    let ws: Vec<usize> = (0..pool.len()).map(|i| p.scalar(&format!("w{i}"))).collect();
    let images: Vec<Vec<CMatrix>> = pool.iter().map(|v| map.apply(&outer(v))).collect();
    for &w in &ws {
        p.add_nonneg(&format!("w{w}:nonneg"), LinExpr::var(w));
    }
    for (b, t) in target.iter().enumerate() {
        let m = AffineMatrix::from_fn(t.nrows(), |r, c| LinExpr {
            constant: -t[(r, c)],
            terms: ws
                .iter()
                .zip(&images)
                .filter_map(|(&w, img)| {
                    let v = img[b][(r, c)];
                    (v != cr(0.0)).then_some((w, v))
                })
                .collect(),
        });
        p.add_psd(&format!("blk{b}"), m);
    }
    let mut obj = LinExpr::zero();
    for &w in &ws {
        obj.add_scaled(&LinExpr::var(w), cr(1.0));
    }
    p.minimize(obj);
    let rep = p.solve(settings)?;
    rep.ensure_usable()?;
    let weights = ws.iter().map(|&w| rep.scalar(w).max(0.0)).collect();
    let duals = (0..target.len())
        .map(|b| rep.dual_matrix(&format!("blk{b}")).cloned())
        .collect::<Result<Vec<_>>>()?;
    Ok((weights, duals, rep))
}

fn product_basis(d_a: usize, d_b: usize) -> Vec<CVector> {
    let n = d_a * d_b;
    (0..n)
        .map(|i| {
            let mut e = CVector::zeros(n);
            e[i] = cr(1.0);
            e
        })
        .collect()
}

/// Column generation for `min tr γ' − 1` over free `γ'` with `L(γ') ⪰ T`.
/// Stops early once a certificate is within `CLOSE_TOL` of the known lower
/// bound `floor`.
fn column_generation(
    map: &StateMap,
    target: &[CMatrix],
    k: usize,
    seeds: &[(f64, CVector)],
    floor: f64,
    opts: &RobustnessOptions,
) -> Result<UpperCertificate> {
    let (d_a, d_b) = (map.d_a, map.d_b);
    let mut best: Option<UpperCertificate> = None;
    let consider = |cand: Option<(f64, SnDecomposition, f64)>, rounds: usize, best: &mut Option<UpperCertificate>| {
        if let Some((value, dec, slack)) = cand {
            if slack >= -1e-10 && best.as_ref().is_none_or(|b| value < b.value) {
                *best = Some(UpperCertificate {
                    method: UpperMethod::ColumnGeneration,
                    value,
                    decomposition: Some(dec),
                    slack,
                    rounds,
                });
            }
        }
    };
    if !seeds.is_empty() {
        let (w, v): (Vec<f64>, Vec<CVector>) = seeds.iter().cloned().unzip();
        consider(fix_up(map, &v, &w, target, k), 0, &mut best);
        if let Some(b) = &best {
            if b.value <= floor + CLOSE_TOL {
                return Ok(best.unwrap());
            }
        }
    }
    let mut pool = product_basis(d_a, d_b);
    pool.extend(seeds.iter().map(|s| s.1.clone()));
    let mut rounds = 0;
    for round in 0..opts.max_rounds {
        rounds = round + 1;
        let (weights, duals) = match master_problem(map, &pool, target, &opts.solver) {
            Ok((w, y, _)) => (w, y),
            // A certificate from an earlier round or the seeds stays valid.
            Err(_) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let w_op = map.adjoint(&duals);
        let priced = witness_value_k(&w_op, d_a, d_b, k, &opts.seesaw, opts.seed.wrapping_add(1000 + round as u64))?;
        let done = priced.value <= 1.0 + PRICING_TOL;
        if done || round + 1 == opts.max_rounds {
            consider(fix_up(map, &pool, &weights, target, k), rounds, &mut best);
            break;
        }
        // Drop columns that have been idle, keep the product basis for feasibility.
        let nb = d_a * d_b;
        let mut next: Vec<CVector> = pool[..nb].to_vec();
        for (v, w) in pool[nb..].iter().zip(&weights[nb..]) {
            if *w > 1e-12 {
                next.push(v.clone());
            }
        }
        next.push(priced.vector);
        pool = next;
    }
    best.ok_or_else(|| Error::Numerical(format!("column generation produced no certificate after {rounds} rounds")))
}

fn clamp_psd(m: &CMatrix) -> CMatrix {
    spectral_map(m, |x| x.max(0.0))
}

struct StateSdp {
    witness: CMatrix,
    x: CMatrix,
    solve: SolveReport,
    approx: ConeApprox,
    perturbation: Option<f64>,
}

/// Relaxed robustness program for a state: `min tr X` s.t. `X ⪰ ρ`, `X`
/// in the outer cone. The dominance constraint is named `dom`.
pub fn state_problem(rho: &CMatrix, d_a: usize, d_b: usize, k: usize) -> Result<(Problem, HermVar, ConeApprox)> {
    let n = d_a * d_b;
    if rho.nrows() != n {
        return Err(Error::Dimension("state does not match dims".into()));
    }
    let mut p = Problem::new();
    let x = p.hermitian("X", n);
    let mut dom = x.expr();
    dom.add_constant(rho, -1.0);
    p.add_psd("dom", dom);
    let approx = constrain_outer(&mut p, "cone", &x.expr(), d_a, d_b, k)?;
    p.minimize(x.expr().trace());
    Ok((p, x, approx))
}

fn solve_state_sdp(rho: &CMatrix, d_a: usize, d_b: usize, k: usize, opts: &RobustnessOptions) -> Result<StateSdp> {
    let n = d_a * d_b;
    let mut rho_s = rho.clone();
    let mut perturbation = None;
    if min_eigenvalue(rho) < PERTURBATION {
        rho_s += identity(n) * cr(PERTURBATION);
        perturbation = Some(PERTURBATION);
    }
    let (p, x, approx) = state_problem(&rho_s, d_a, d_b, k)?;
    let solve = p.solve(&opts.solver)?;
    solve.ensure_usable()?;
    let witness = clamp_psd(solve.dual_matrix("dom")?);
    let xv = solve.value(&x);
    Ok(StateSdp {
        witness,
        x: xv,
        solve,
        approx,
        perturbation,
    })
}

/// Schmidt-number robustness of a state: least `r` with `ρ + rσ ∝ γ`, `γ`
/// of Schmidt number at most `k`.
pub fn r_ke(rho: &BipartiteState, k: usize, opts: &RobustnessOptions) -> Result<RobustnessReport> {
    let (d_a, d_b) = (rho.d_a(), rho.d_b());
    check_k(d_a, d_b, k)?;
    let sdp = solve_state_sdp(rho.matrix(), d_a, d_b, k, opts)?;
    let mut a = sdp.witness.clone();
    let check = witness_value_k(
        &a,
        d_a,
        d_b,
        k,
        &SeesawOptions { restarts: opts.validation_restarts, ..opts.seesaw },
        opts.seed,
    )?;
    let mut rescale = 1.0;
    if check.value > 1.0 {
        rescale = check.value;
        a /= cr(rescale);
    }
    let raw = trace_product(&a, rho.matrix()) - 1.0;
    let lower = raw.max(0.0);
    let relaxed_primal = sdp.solve.primal_objective - 1.0;
    let mut notes = Vec::new();
    if let Some(e) = sdp.perturbation {
        notes.push(format!("rank-deficient input shifted by {e:e}·I for the solver only"));
    }
    let witness = WitnessOperator {
        role: WitnessRole::StateWitness,
        dims: rho.dims().clone(),
        ops: vec![a.clone()],
        normalizer: None,
        validation: WitnessValidation {
            max_found: check.value / rescale,
            restarts: opts.validation_restarts,
            rescaled_by: rescale,
            min_eigenvalue: min_eigenvalue(&a),
        },
    };
    let upper_certificate = if opts.compute_upper {
        let map = StateMap::identity(d_a, d_b);
        let seeds = state_seeds(rho, &sdp, &a, k, lower, opts);
        Some(column_generation(&map, &[rho.matrix().clone()], k, &seeds, lower, opts)?)
    } else {
        None
    };
    let upper = upper_certificate.as_ref().map(|c| c.value.max(lower));
    Ok(RobustnessReport {
        quantity: Quantity::Rke,
        k,
        dims: rho.dims().clone(),
        relaxation: sdp.approx,
        lift: None,
        exact_mode: sdp.approx.is_exact(),
        lower,
        upper,
        gap: upper.map(|u| u - lower),
        relaxed_primal,
        witness,
        upper_certificate,
        solve: sdp.solve,
        perturbation: sdp.perturbation,
        notes,
    })
}

/// Candidate free ensembles for the upper bound: a direct decomposition of
/// the state when it looks free, otherwise a decomposition of the relaxed
/// optimum, plus maximizers of the witness.
fn state_seeds(rho: &BipartiteState, sdp: &StateSdp, a: &CMatrix, k: usize, lower: f64, opts: &RobustnessOptions) -> Vec<(f64, CVector)> {
    let mut seeds = Vec::new();
    let (d_a, d_b) = (rho.d_a(), rho.d_b());
    if lower <= 1e-7 {
        if let Ok(dec) = fit_decomposition(rho, k, &opts.decomposition, opts.seed) {
            seeds.extend(dec.weights.iter().copied().zip(dec.vectors.iter().cloned()));
            if dec.residual <= opts.decomposition.tol {
                return seeds;
            }
        }
    }
    let t = sdp.x.trace().re;
    if t > 0.0 {
        if let Ok(xs) = BipartiteState::from_matrix_hermitized(&sdp.x / cr(t), d_a, d_b) {
            if let Ok(dec) = inner_decomposition(&xs, k, &opts.decomposition, opts.seed) {
                seeds.extend(dec.weights.iter().map(|w| w * t).zip(dec.vectors.iter().cloned()));
            }
        }
    }
    if seeds.is_empty() {
        if let Ok(w) = witness_value_k(a, d_a, d_b, k, &opts.seesaw, opts.seed.wrapping_add(7)) {
            seeds.push((0.0, w.vector));
        }
    }
    seeds
}

fn psd_block_bound(blocks: &[CMatrix]) -> f64 {
    blocks.iter().map(max_eigenvalue).map(|v| v.max(0.0)).sum()
}

/// Relaxed program for a distributed measurement: `min r` s.t.
/// `Õ_ab ⪰ M_ab` (`dom{i}`), `Õ_ab` in the outer cone, `Σ Õ_ab = (1 + r) I`
/// (`marg`). Returns the index of `r`.
pub fn dm_problem(m: &DistributedMeasurement, k: usize) -> Result<(Problem, usize, ConeApprox)> {
    let (d_a, d_b) = m.dims.pair()?;
    let k_ab = k.min(d_a.min(d_b));
    let n = d_a * d_b;
    let mut p = Problem::new();
    let r = p.scalar("r");
    let mut sum = AffineMatrix::zeros(n);
    let mut approx = ConeApprox::ExactPsd;
    for (i, mab) in m.elements.iter().enumerate() {
        let o = p.hermitian(&format!("O{i}"), n);
        let mut dom = o.expr();
        dom.add_constant(mab, -1.0);
        p.add_psd(&format!("dom{i}"), dom);
        approx = constrain_outer(&mut p, &format!("cone{i}"), &o.expr(), d_a, d_b, k_ab)?;
        sum.add_scaled(&o.expr(), 1.0);
    }
    // Σ Õ_ab − (1 + r) I = 0.
    sum.add_constant(&identity(n), -1.0);
    for i in 0..n {
        sum.get_mut(i, i).add_scaled(&LinExpr::var(r), cr(-1.0));
    }
    p.add_zero_hermitian("marg", sum);
    p.minimize(LinExpr::var(r));
    Ok((p, r, approx))
}

/// Schmidt-number robustness of a distributed measurement. The lower bound
/// relaxes the free set to POVMs `{Õ_ab}` with every element in the outer
/// cone on `A ⊗ B`; the upper bound uses free measurements generated by the
/// provenance POVMs from free shared states, or a coin-flip measurement.
pub fn r_kdm(m: &DistributedMeasurement, k: usize, opts: &RobustnessOptions) -> Result<RobustnessReport> {
    m.validate()?;
    if k == 0 {
        return Err(Error::InvalidK { k, max: 0 });
    }
    let (d_a, d_b) = m.dims.pair()?;
    let k_ab = k.min(d_a.min(d_b));
    let (p, _, approx) = dm_problem(m, k_ab)?;
    let solve = p.solve(&opts.solver)?;
    solve.ensure_usable()?;
    let ys: Vec<CMatrix> = (0..m.len())
        .map(|i| solve.dual_matrix(&format!("dom{i}")).map(clamp_psd))
        .collect::<Result<_>>()?;
    let kmat = -solve.dual_matrix("marg")?.clone();
    let raw = ys.iter().zip(&m.elements).map(|(y, e)| trace_product(y, e)).sum::<f64>() - 1.0;
    let lower = raw.max(0.0);
    let validation = validate_normalized_family(&ys, &kmat, d_a, d_b, k_ab, opts)?;
    let witness = WitnessOperator {
        role: WitnessRole::DmWitness,
        dims: m.dims.clone(),
        ops: ys,
        normalizer: Some(kmat),
        validation,
    };
    let mut notes = Vec::new();
    let trivial = psd_block_bound(&m.elements) - 1.0;
    let mut cert = UpperCertificate {
        method: UpperMethod::ProductNoise,
        value: trivial,
        decomposition: None,
        slack: 0.0,
        rounds: 0,
    };
    if opts.compute_upper {
        if let Some(prov) = &m.provenance {
            let (pa, pb) = (prov.povm_a.clone(), prov.povm_b.clone());
            let st = &prov.state;
            let k_st = k.min(st.d_a().min(st.d_b()));
            let map = StateMap::from_fn(st.d_a(), st.d_b(), |x| distributed_elements(x, &pa, &pb))?;
            let seeds = provenance_seeds(st, k_st, opts);
            match column_generation(&map, &m.elements, k_st, &seeds, lower, opts) {
                Ok(c) if c.value < cert.value => cert = c,
                Ok(_) => {}
                Err(e) => notes.push(format!("provenance upper bound failed: {e}")),
            }
        } else {
            notes.push("no provenance: upper bound from coin-flip free measurement".into());
        }
    }
    let upper = opts.compute_upper.then(|| cert.value.max(lower));
    Ok(RobustnessReport {
        quantity: Quantity::Rkdm,
        k,
        dims: m.dims.clone(),
        relaxation: approx,
        lift: Some("element-wise-outer-cone-povm".into()),
        exact_mode: false,
        lower,
        upper,
        gap: upper.map(|u| u - lower),
        relaxed_primal: solve.primal_objective,
        witness,
        upper_certificate: opts.compute_upper.then_some(cert),
        solve,
        perturbation: None,
        notes,
    })
}

/// Checks `Y_i ⪰ 0` and `normalizer − Y_i` nonnegative on Schmidt-rank-`k`
/// vectors (by see-saw).
fn validate_normalized_family(ys: &[CMatrix], norm: &CMatrix, d_a: usize, d_b: usize, k: usize, opts: &RobustnessOptions) -> Result<WitnessValidation> {
    let restarts = opts.validation_restarts.min(16);
    let so = SeesawOptions { restarts, ..opts.seesaw };
    let mut max_found = f64::NEG_INFINITY;
    let mut min_eig = f64::INFINITY;
    // The witness families can be long; validate a bounded, evenly spread subset.
    let step = (ys.len() / 16).max(1);
    for (i, y) in ys.iter().enumerate() {
        min_eig = min_eig.min(min_eigenvalue(y));
        if i % step == 0 {
            let w = witness_value_k(&(y - norm), d_a, d_b, k, &so, opts.seed.wrapping_add(i as u64))?;
            max_found = max_found.max(w.value);
        }
    }
    Ok(WitnessValidation {
        max_found,
        restarts,
        rescaled_by: 1.0,
        min_eigenvalue: min_eig,
    })
}

fn provenance_seeds(st: &BipartiteState, k: usize, opts: &RobustnessOptions) -> Vec<(f64, CVector)> {
    let sub = RobustnessOptions { compute_upper: false, ..*opts };
    let Ok(sdp) = solve_state_sdp(st.matrix(), st.d_a(), st.d_b(), k, &sub) else {
        return Vec::new();
    };
    let lower = (trace_product(&sdp.witness, st.matrix()) - 1.0).max(0.0);
    let a = sdp.witness.clone();
    state_seeds(st, &sdp, &a, k, lower, opts)
}

/// Relaxed program for an instrument, constraints `dom{i}` and `marg`.
pub fn instrument_problem(inst: &TeleportationInstrument, k: usize) -> Result<(Problem, ConeApprox)> {
    let (d_v, d_b) = (inst.d_in(), inst.d_out());
    let k_vb = k.min(d_v.min(d_b));
    let n = d_v * d_b;
    let mut p = Problem::new();
    let sigma = p.psd_variable("sigma", d_b);
    let mut sum = AffineMatrix::zeros(n);
    let mut approx = ConeApprox::ExactPsd;
    for (i, j) in inst.choi_list.iter().enumerate() {
        let o = p.hermitian(&format!("O{i}"), n);
        let mut dom = o.expr();
        dom.add_constant(j.matrix(), -1.0);
        p.add_psd(&format!("dom{i}"), dom);
        approx = constrain_outer(&mut p, &format!("cone{i}"), &o.expr(), d_v, d_b, k_vb)?;
        sum.add_scaled(&o.expr(), 1.0);
    }
    let rhs = sigma.expr().kron_constant_left(&(identity(d_v) / cr(d_v as f64)));
    p.add_zero_hermitian("marg", sum - &rhs);
    p.minimize(sigma.expr().trace());
    Ok((p, approx))
}

/// Schmidt-number robustness of a teleportation instrument:
/// `min tr σ̃ − 1` s.t. `J_a ⪯ O_a`, `O_a` in the cone on `V ⊗ B`,
/// `Σ_a O_a = (I/d_V) ⊗ σ̃`.
pub fn r_sc(inst: &TeleportationInstrument, k: usize, opts: &RobustnessOptions) -> Result<RobustnessReport> {
    inst.validate()?;
    let (d_v, d_b) = (inst.d_in(), inst.d_out());
    if k == 0 {
        return Err(Error::InvalidK { k, max: d_v.min(d_b) });
    }
    let k_vb = k.min(d_v.min(d_b));
    let (p, approx) = instrument_problem(inst, k_vb)?;
    let solve = p.solve(&opts.solver)?;
    solve.ensure_usable()?;
    let ys: Vec<CMatrix> = (0..inst.len())
        .map(|i| solve.dual_matrix(&format!("dom{i}")).map(clamp_psd))
        .collect::<Result<_>>()?;
    let mmat = -solve.dual_matrix("marg")?.clone();
    let chois: Vec<CMatrix> = inst.choi_list.iter().map(|j| j.matrix().clone()).collect();
    let raw = ys.iter().zip(&chois).map(|(y, j)| trace_product(y, j)).sum::<f64>() - 1.0;
    let lower = raw.max(0.0);
    let validation = validate_normalized_family(&ys, &mmat, d_v, d_b, k_vb, opts)?;
    let witness = WitnessOperator {
        role: WitnessRole::TeleWitness,
        dims: SystemDims::bipartite(d_v, d_b)?,
        ops: ys,
        normalizer: Some(mmat),
        validation,
    };
    let mut notes = Vec::new();
    // Measure-and-prepare noise with maximally mixed output.
    let trivial = (d_v * d_b) as f64 * psd_block_bound(&chois) - 1.0;
    let mut cert = UpperCertificate {
        method: UpperMethod::ProductNoise,
        value: trivial,
        decomposition: None,
        slack: 0.0,
        rounds: 0,
    };
    if opts.compute_upper {
        if let Some(prov) = &inst.provenance {
            let st = &prov.state;
            let povm = prov.povm.clone();
            let k_st = k.min(st.d_a().min(st.d_b()));
            let map = StateMap::from_fn(st.d_a(), st.d_b(), |x| instrument_chois(x, &povm, d_b))?;
            let seeds = provenance_seeds(st, k_st, opts);
            match column_generation(&map, &chois, k_st, &seeds, lower, opts) {
                Ok(c) if c.value < cert.value => cert = c,
                Ok(_) => {}
                Err(e) => notes.push(format!("provenance upper bound failed: {e}")),
            }
        } else {
            notes.push("no provenance: upper bound from measure-and-prepare instrument".into());
        }
    }
    let upper = opts.compute_upper.then(|| cert.value.max(lower));
    Ok(RobustnessReport {
        quantity: Quantity::Rsc,
        k,
        dims: SystemDims::bipartite(d_v, d_b)?,
        relaxation: approx,
        lift: None,
        exact_mode: false,
        lower,
        upper,
        gap: upper.map(|u| u - lower),
        relaxed_primal: solve.primal_objective - 1.0,
        witness,
        upper_certificate: opts.compute_upper.then_some(cert),
        solve,
        perturbation: None,
        notes,
    })
}

/// Generalized Bell POVM `{(U_a ⊗ I)|Ω⟩⟨Ω|(U_a ⊗ I)†}` on `A ⊗ A'` and the
/// matching per-outcome dual operators `Y_a = (Ū_a ⊗ I) A (Ū_a ⊗ I)†` on
/// `V ⊗ B`, for which `Σ_a tr(Y_a J_a) = tr(A ρ)` whenever `J_a` is the
/// instrument generated from `ρ` by this POVM.
pub fn theorem2_measurements_from_witness(a: &CMatrix, d: usize) -> Result<(Povm, Vec<CMatrix>)> {
    if d < 2 || !a.nrows().is_multiple_of(d) || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "witness of dimension {} is not an operator on {d} ⊗ d_B",
            a.nrows()
        )));
    }
    let d_b = a.nrows() / d;
    let ys = linalg::heisenberg_weyl_set(d)
        .iter()
        .map(|u| {
            let w = kron(&u.map(|z| z.conj()), &identity(d_b));
            hermitize(&linalg::conjugate(&w, a))
        })
        .collect();
    Ok((Povm::bell(d), ys))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem2Record {
    pub k: usize,
    pub exact_mode: bool,
    pub r_ke: RobustnessReport,
    pub r_sc: RobustnessReport,
    pub r_kdm: RobustnessReport,
    /// `|Σ_a tr(Y_a J_a) − tr(Aρ)|` for the constructed family.
    pub chain_residual: f64,
    pub max_deviation: f64,
    pub passed: Option<bool>,
}

pub const THEOREM2_TOL: f64 = 1e-4;

fn side_deviation(x: &RobustnessReport, y: &RobustnessReport) -> f64 {
    let mut d = (x.lower - y.lower).abs();
    if let (Some(a), Some(b)) = (x.upper, y.upper) {
        d = d.max((a - b).abs());
    }
    d
}

/// Computes `R_ke(ρ)`, the instrument and distributed measurement induced by
/// generalized Bell measurements on Alice's (and Bob's) side, and compares
/// the three robustness values.
pub fn verify_theorem2(rho: &BipartiteState, k: usize, opts: &RobustnessOptions) -> Result<Theorem2Record> {
    let (d_a, d_b) = (rho.d_a(), rho.d_b());
    let rke = r_ke(rho, k, opts)?;
    let (bell_a, ys) = theorem2_measurements_from_witness(&rke.witness.ops[0], d_a)?;
    let inst = teleportation_instrument_from(rho, &bell_a)?;
    let chois: Vec<CMatrix> = inst.choi_list.iter().map(|j| j.matrix().clone()).collect();
    let chain: f64 = ys.iter().zip(&chois).map(|(y, j)| trace_product(y, j)).sum();
    let chain_residual = (chain - trace_product(&rke.witness.ops[0], rho.matrix())).abs();
    let rsc = r_sc(&inst, k, opts)?;
    let dm = distributed_measurement_from(rho, &bell_a, &Povm::bell(d_b))?;
    let rkdm = r_kdm(&dm, k, opts)?;
    let max_deviation = side_deviation(&rke, &rsc).max(side_deviation(&rke, &rkdm));
    let exact_mode = rke.exact_mode && rsc.relaxation.is_exact() && rkdm.relaxation.is_exact();
    let passed = exact_mode.then_some(max_deviation <= THEOREM2_TOL && chain_residual <= 1e-8);
    Ok(Theorem2Record {
        k,
        exact_mode,
        r_ke: rke,
        r_sc: rsc,
        r_kdm: rkdm,
        chain_residual,
        max_deviation,
        passed,
    })
}

/// Local channel pair `E_A ⊗ E_B` used in a simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalChannels {
    pub alice: ChoiMatrix,
    pub bob: ChoiMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityRecord {
    pub k: usize,
    /// Certified `(n_A, n_B)` for each channel pair.
    pub certified_orders: Vec<(usize, usize)>,
    pub original: RobustnessReport,
    pub simulated: RobustnessReport,
    pub lower_holds: bool,
    /// Present when both reports carry upper bounds.
    pub upper_holds: Option<bool>,
    pub passed: bool,
}

pub const MONOTONICITY_TOL: f64 = 1e-7;

fn certified_order(ch: &ChoiMatrix, max: usize, seed: u64) -> Result<Option<usize>> {
    for n in 1..=max {
        if npeb_order_bound(ch, n, seed)?.is_certified() {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Simulates `M` with local channels `E_λ = E_A^λ ⊗ E_B^λ` and a response
/// kernel, then compares the robustness of the simulated measurement with
/// the original on the lower-bound side. Every channel must be certified
/// `n`-partially entanglement breaking with `n_A·n_B ≤ k`.
pub fn check_monotonicity(
    m: &DistributedMeasurement,
    weights: &[f64],
    response: &ResponseKernel,
    channels: &[LocalChannels],
    k: usize,
    opts: &RobustnessOptions,
) -> Result<MonotonicityRecord> {
    let mut orders = Vec::new();
    let mut joint = Vec::new();
    for (i, lc) in channels.iter().enumerate() {
        let seed = opts.seed.wrapping_add(i as u64);
        let na = certified_order(&lc.alice, k, seed)?;
        let nb = certified_order(&lc.bob, k, seed)?;
        match (na, nb) {
            (Some(a), Some(b)) if a * b <= k => orders.push((a, b)),
            _ => {
                return Err(Error::Contract(format!(
                    "channel pair {i} is not certified n-PEB with n_A·n_B ≤ {k}"
                )))
            }
        }
        joint.push(ChoiMatrix::local_product(&lc.alice, &lc.bob)?);
    }
    let n = simulate_npeb(m, weights, response, &joint)?;
    let original = r_kdm(m, k, opts)?;
    let simulated = r_kdm(&n, k, opts)?;
    let lower_holds = simulated.lower <= original.lower + MONOTONICITY_TOL;
    let upper_holds = match (
        simulated.upper_certificate.as_ref(),
        original.upper_certificate.as_ref(),
    ) {
        (Some(a), Some(b)) if a.method == b.method => Some(a.value <= b.value + MONOTONICITY_TOL),
        _ => None,
    };
    Ok(MonotonicityRecord {
        k,
        certified_orders: orders,
        passed: lower_holds && upper_holds.unwrap_or(true),
        original,
        simulated,
        lower_holds,
        upper_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_entangled_projector;
    use crate::random;

    fn quick() -> RobustnessOptions {
        RobustnessOptions::default()
    }

    #[test]
    fn bell_state_robustness_is_one() {
        let rho = BipartiteState::max_entangled(2);
        let rep = r_ke(&rho, 1, &quick()).unwrap();
        assert!(rep.exact_mode);
        assert!((rep.lower - 1.0).abs() < 1e-6, "lower {}", rep.lower);
        let u = rep.upper.unwrap();
        assert!((u - 1.0).abs() < 1e-6, "upper {u}");
        assert!(rep.solve.gap <= 1e-6);
        // Fidelity witness 2Φ⁺ gives the same value.
        let a = max_entangled_projector(2) * cr(2.0);
        assert!((trace_product(&a, rho.matrix()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn separable_state_has_zero_robustness() {
        let mut rng = random::rng(3);
        let (m, _) = random::random_sn_mixture(2, 3, 1, 5, &mut rng);
        let rho = BipartiteState::from_matrix_hermitized(m, 2, 3).unwrap();
        let rep = r_ke(&rho, 1, &quick()).unwrap();
        assert!(rep.lower <= 1e-7);
        assert!(rep.upper.unwrap() <= 1e-7, "upper {:?}", rep.upper);
        let cert = rep.upper_certificate.unwrap();
        assert!(cert.slack >= -1e-10);
    }

    #[test]
    fn state_map_adjoint_is_dual() {
        let povm = Povm::bell(2);
        let map = StateMap::from_fn(2, 2, |x| instrument_chois(x, &povm, 2)).unwrap();
        let mut rng = random::rng(4);
        let x = random::random_hermitian(4, &mut rng);
        let ys: Vec<CMatrix> = (0..4).map(|_| random::random_hermitian(4, &mut rng)).collect();
        let lhs: f64 = ys.iter().zip(map.apply(&x)).map(|(y, l)| trace_product(y, &l)).sum();
        let rhs = trace_product(&map.adjoint(&ys), &x);
        assert!((lhs - rhs).abs() < 1e-12);
        let direct = instrument_chois(&x, &povm, 2).unwrap();
        for (a, b) in map.apply(&x).iter().zip(&direct) {
            assert!(linalg::max_abs_diff(a, b) < 1e-12);
        }
        let pb = Povm::bell(2);
        let dm = StateMap::from_fn(2, 2, |x| distributed_elements(x, &povm, &pb)).unwrap();
        let direct = distributed_elements(&x, &povm, &pb).unwrap();
        for (a, b) in dm.apply(&x).iter().zip(&direct) {
            assert!(linalg::max_abs_diff(a, b) < 1e-12);
        }
    }

    #[test]
    fn theorem2_family_reproduces_witness_value() {
        let mut rng = random::rng(5);
        for d in [2usize, 3] {
            let rho = BipartiteState::from_matrix_hermitized(random::random_density(d * d, d * d, &mut rng), d, d).unwrap();
            let a = random::random_hermitian(d * d, &mut rng);
            let (povm, ys) = theorem2_measurements_from_witness(&a, d).unwrap();
            let inst = teleportation_instrument_from(&rho, &povm).unwrap();
            let chain: f64 = ys.iter().zip(&inst.choi_list).map(|(y, j)| trace_product(y, j.matrix())).sum();
            assert!((chain - trace_product(&a, rho.matrix())).abs() < 1e-12);
        }
        let (_, ys) = theorem2_measurements_from_witness(&identity(4), 2).unwrap();
        for y in ys {
            assert!(linalg::max_abs_diff(&y, &identity(4)) < 1e-14);
        }
    }

    #[test]
    fn three_quantities_agree_on_two_qubits() {
        let mut rng = random::rng(11);
        for _ in 0..2 {
            let rho = BipartiteState::from_matrix_hermitized(random::random_density(4, 4, &mut rng), 2, 2).unwrap();
            let rec = verify_theorem2(&rho, 1, &quick()).unwrap();
            assert!(rec.max_deviation < 1e-6, "{}", rec.max_deviation);
            assert_eq!(rec.passed, Some(true));
        }
    }
}
