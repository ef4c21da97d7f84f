//! Entanglement-assisted state discrimination.
//!
//! Alice and Bob share `ρ` on `A ⊗ B` and receive `σ_xy` on `A' ⊗ B'` with
//! probability `p_xy`. Each measures her or his half (`A ⊗ A'`, `B ⊗ B'`)
//! and wins when the outcome pair equals the label `(x, y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{
    check_k, constrain_outer, inner_decomposition, witness_value_k, ConeApprox,
    DecompositionBudget, SeesawOptions, SnDecomposition,
};
use crate::error::{Error, Result};
use crate::linalg::{
    cr, hermitize, heisenberg_weyl_set, identity, kron, max_entangled, min_eigenvalue, outer,
    partial_trace, permute_systems, spectral_map, trace_product, CMatrix, CVector, SystemDims,
};
use crate::objects::{
    apply_choi, distributed_elements, BipartiteState, Ensemble, EnsembleItem, Povm,
    TeleportationInstrument,
};
use crate::random;
use crate::robustness::{r_ke, RobustnessOptions, RobustnessReport, WitnessOperator, WitnessRole};
use crate::sdp::{AffineMatrix, LinExpr, Problem, SolveStatus, SolverSettings};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameInstance {
    pub ensemble: Ensemble,
    pub shared: BipartiteState,
    pub k: usize,
}

impl GameInstance {
    pub fn new(ensemble: Ensemble, shared: BipartiteState, k: usize) -> Result<Self> {
        let g = Self { ensemble, shared, k };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        self.ensemble.dims().pair()?;
        check_k(self.shared.d_a(), self.shared.d_b(), self.k)
    }

    /// `(d_A, d_A', d_B, d_B')`.
    fn registers(&self) -> Result<(usize, usize, usize, usize)> {
        let (ap, bp) = self.ensemble.dims().pair()?;
        Ok((self.shared.d_a(), ap, self.shared.d_b(), bp))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Strategy {
    pub povm_a: Povm,
    pub povm_b: Povm,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PgkBounds {
    pub bracket: Bracket,
    pub relaxation: ConeApprox,
    /// Shared state (Schmidt rank ≤ k) and strategy attaining the lower bound.
    pub lower_state: SnDecomposition,
    pub lower_strategy: Strategy,
    pub upper_status: SolveStatus,
    pub upper_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameResult {
    pub p_g_value: f64,
    pub strategy: Strategy,
    pub p_g_k: PgkBounds,
    /// `[p_g / p_g_k upper, p_g / p_g_k lower]`.
    pub ratio: Bracket,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameOptions {
    pub solver: SolverSettings,
    pub restarts: usize,
    pub max_iter: usize,
    pub stall_tol: f64,
    pub seed: u64,
}

impl Default for GameOptions {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            restarts: 16,
            max_iter: 60,
            stall_tol: 1e-9,
            seed: 0,
        }
    }
}

fn check_povm_dims(povm: &Povm, d_sh: usize, d_in: usize, who: &str) -> Result<()> {
    let (a, b) = povm.dims().pair()?;
    if (a, b) != (d_sh, d_in) {
        return Err(Error::Dimension(format!(
            "{who}'s POVM acts on {a}x{b}, expected {d_sh}x{d_in}"
        )));
    }
    Ok(())
}

/// Exact winning probability `Σ p_xy tr[(M_x ⊗ M_y)(ρ ⊗ σ_xy)]`. Outcomes
/// beyond the label range count as losses; labels beyond the outcome range
/// are never guessed.
pub fn play(g: &GameInstance, povm_a: &Povm, povm_b: &Povm) -> Result<f64> {
    g.ensemble.validate()?;
    let (a, ap, b, bp) = g.registers()?;
    check_povm_dims(povm_a, a, ap, "Alice")?;
    check_povm_dims(povm_b, b, bp, "Bob")?;
    // Effective measurement on A'B' induced by the shared state.
    let eff = distributed_elements(g.shared.matrix(), &povm_a.swapped()?, &povm_b.swapped()?)?;
    let nb = povm_b.len();
    Ok(g.ensemble
        .items
        .iter()
        .filter(|it| it.x < povm_a.len() && it.y < nb)
        .map(|it| it.probability * trace_product(&eff[it.x * nb + it.y], it.state.matrix()))
        .sum())
}

/// Joint operator `ρ ⊗ σ` on `A A' B B'`.
fn joint(rho: &CMatrix, sigma: &CMatrix, dims: (usize, usize, usize, usize)) -> Result<CMatrix> {
    let (a, ap, b, bp) = dims;
    permute_systems(&kron(rho, sigma), &[a, b, ap, bp], &[0, 2, 1, 3])
}

struct Work {
    dims: (usize, usize, usize, usize),
    labels: (usize, usize),
    /// `(x, y, p_xy ρ ⊗ σ_xy)` on `A A' B B'`.
    terms: Vec<(usize, usize, CMatrix)>,
}

impl Work {
    fn new(g: &GameInstance, rho: &CMatrix) -> Result<Self> {
        let dims = g.registers()?;
        let terms = g
            .ensemble
            .items
            .iter()
            .filter(|it| it.probability > 0.0)
            .map(|it| Ok((it.x, it.y, joint(rho, it.state.matrix(), dims)? * cr(it.probability))))
            .collect::<Result<_>>()?;
        Ok(Self { dims, labels: g.ensemble.labels, terms })
    }

    fn full(&self) -> [usize; 4] {
        let (a, ap, b, bp) = self.dims;
        [a, ap, b, bp]
    }

    /// `G_x = Σ_y tr_{BB'}[(I ⊗ Q_y) R_xy]`.
    fn alice_gradient(&self, q: &[CMatrix]) -> Result<Vec<CMatrix>> {
        let (a, ap, _, _) = self.dims;
        let mut g = vec![CMatrix::zeros(a * ap, a * ap); self.labels.0];
        for (x, y, r) in &self.terms {
            let op = kron(&identity(a * ap), &q[*y]) * r;
            g[*x] += partial_trace(&op, &self.full(), &[0, 1])?;
        }
        Ok(g)
    }

    fn bob_gradient(&self, p: &[CMatrix]) -> Result<Vec<CMatrix>> {
        let (_, _, b, bp) = self.dims;
        let mut g = vec![CMatrix::zeros(b * bp, b * bp); self.labels.1];
        for (x, y, r) in &self.terms {
            let op = kron(&p[*x], &identity(b * bp)) * r;
            g[*y] += partial_trace(&op, &self.full(), &[2, 3])?;
        }
        Ok(g)
    }

    fn value(&self, p: &[CMatrix], q: &[CMatrix]) -> f64 {
        self.terms
            .iter()
            .map(|(x, y, r)| trace_product(&kron(&p[*x], &q[*y]), r))
            .sum()
    }
}

/// Restores exact positivity and completeness after an approximate solve.
fn repair_povm(ms: &[CMatrix]) -> Vec<CMatrix> {
    let ms: Vec<CMatrix> = ms.iter().map(|m| spectral_map(&hermitize(m), |v| v.max(0.0))).collect();
    let n = ms[0].nrows();
    let s = ms.iter().fold(CMatrix::zeros(n, n), |acc, m| acc + m);
    let s_inv = spectral_map(&s, |v| 1.0 / v.max(1e-300).sqrt());
    ms.iter().map(|m| hermitize(&(&s_inv * m * &s_inv))).collect()
}

/// `max Σ_x tr(M_x G_x)` over POVMs.
fn best_povm(grads: &[CMatrix], settings: &SolverSettings) -> Result<Vec<CMatrix>> {
    let n = grads[0].nrows();
    let mut p = Problem::new();
    let vars: Vec<_> = (0..grads.len()).map(|i| p.psd_variable(&format!("M{i}"), n)).collect();
    let mut sum = AffineMatrix::zeros(n);
    let mut obj = LinExpr::zero();
    for (v, g) in vars.iter().zip(grads) {
        sum.add_scaled(&v.expr(), 1.0);
        obj.add_scaled(&v.expr().inner_constant(g), cr(1.0));
    }
    sum.add_constant(&identity(n), -1.0);
    p.add_zero_hermitian("complete", sum);
    p.maximize(obj);
    let rep = p.solve(settings)?;
    rep.ensure_usable()?;
    Ok(repair_povm(&vars.iter().map(|v| rep.value(v)).collect::<Vec<_>>()))
}

fn seesaw_povms(work: &Work, mut q: Vec<CMatrix>, opts: &GameOptions) -> Result<(f64, Vec<CMatrix>, Vec<CMatrix>)> {
    let mut last = f64::NEG_INFINITY;
    let mut p = best_povm(&work.alice_gradient(&q)?, &opts.solver)?;
    for _ in 0..opts.max_iter {
        q = best_povm(&work.bob_gradient(&p)?, &opts.solver)?;
        p = best_povm(&work.alice_gradient(&q)?, &opts.solver)?;
        let v = work.value(&p, &q);
        if v - last < opts.stall_tol {
            last = v;
            break;
        }
        last = v;
    }
    Ok((last, p, q))
}

fn to_strategy(work: &Work, p: Vec<CMatrix>, q: Vec<CMatrix>) -> Result<Strategy> {
    let (a, ap, b, bp) = work.dims;
    Ok(Strategy {
        povm_a: Povm::new(p, SystemDims::bipartite(a, ap)?)?,
        povm_b: Povm::new(q, SystemDims::bipartite(b, bp)?)?,
    })
}

/// See-saw over both POVMs for the fixed shared state. Returns the best
/// value found (a lower bound on the optimal winning probability).
pub fn optimize_play(g: &GameInstance, opts: &GameOptions) -> Result<(f64, Strategy)> {
    g.validate()?;
    let work = Work::new(g, g.shared.matrix())?;
    let (_, _, b, bp) = work.dims;
    let runs: Vec<Result<(f64, Vec<CMatrix>, Vec<CMatrix>)>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = random::substream(opts.seed, r as u64);
            let q = random::random_povm(work.labels.1, b * bp, &mut rng);
            seesaw_povms(&work, q, opts)
        })
        .collect();
    let (v, p, q) = best_run(runs)?;
    let strategy = to_strategy(&work, p, q)?;
    Ok((v.min(1.0), strategy))
}

fn best_run<T>(runs: Vec<Result<(f64, T, T)>>) -> Result<(f64, T, T)> {
    let mut best: Option<(f64, T, T)> = None;
    let mut err = None;
    for r in runs {
        match r {
            Ok(c) if best.as_ref().is_none_or(|b| c.0 > b.0) => best = Some(c),
            Ok(_) => {}
            Err(e) => err = Some(e),
        }
    }
    best.ok_or_else(|| err.unwrap_or_else(|| Error::Numerical("no restart finished".into())))
}

/// Upper bound on the winning probability over shared states of Schmidt
/// number at most `k`: every such state induces an effective measurement on
/// `A'B'` whose elements lie in the cone, so maximize over all POVMs with
/// elements in the outer relaxation.
fn pgk_upper(g: &GameInstance, opts: &GameOptions) -> Result<(f64, ConeApprox, SolveStatus, f64)> {
    let (ap, bp) = g.ensemble.dims().pair()?;
    let n = ap * bp;
    let k = g.k.min(ap.min(bp));
    let (nx, ny) = g.ensemble.labels;
    let mut p = Problem::new();
    let mut sum = AffineMatrix::zeros(n);
    let mut obj = LinExpr::zero();
    let mut approx = ConeApprox::ExactPsd;
    let mut targets = vec![CMatrix::zeros(n, n); nx * ny];
    for it in &g.ensemble.items {
        targets[it.x * ny + it.y] += it.state.matrix() * cr(it.probability);
    }
    for (i, t) in targets.iter().enumerate() {
        let e = p.hermitian(&format!("E{i}"), n);
        approx = constrain_outer(&mut p, &format!("cone{i}"), &e.expr(), ap, bp, k)?;
        sum.add_scaled(&e.expr(), 1.0);
        obj.add_scaled(&e.expr().inner_constant(t), cr(1.0));
    }
    sum.add_constant(&identity(n), -1.0);
    p.add_zero_hermitian("complete", sum);
    p.maximize(obj);
    let rep = p.solve(&opts.solver)?;
    rep.ensure_usable()?;
    Ok((rep.dual_objective.max(rep.primal_objective).min(1.0), approx, rep.status, rep.gap))
}

fn schmidt_state_seesaw(g: &GameInstance, opts: &GameOptions) -> Result<(f64, CVector, Vec<CMatrix>, Vec<CMatrix>)> {
    let (a, ap, b, bp) = g.registers()?;
    let k = g.k;
    let full = [a, ap, b, bp];
    // σ-dependent part on A A' B B', with identity on the shared registers.
    let terms: Vec<(usize, usize, CMatrix)> = g
        .ensemble
        .items
        .iter()
        .filter(|it| it.probability > 0.0)
        .map(|it| Ok((it.x, it.y, joint(&identity(a * b), it.state.matrix(), (a, ap, b, bp))? * cr(it.probability))))
        .collect::<Result<_>>()?;
    let state_operator = |p: &[CMatrix], q: &[CMatrix]| -> Result<CMatrix> {
        let mut kop = CMatrix::zeros(a * b, a * b);
        for (x, y, s) in &terms {
            let op = kron(&p[*x], &q[*y]) * s;
            kop += partial_trace(&op, &full, &[0, 2])?;
        }
        Ok(hermitize(&kop))
    };
    let so = SeesawOptions { restarts: 4, ..SeesawOptions::default() };
    let runs: Vec<Result<(f64, (CVector, Vec<CMatrix>), (CVector, Vec<CMatrix>))>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = random::substream(opts.seed ^ 0x5eed, r as u64);
            let mut p = random::random_povm(g.ensemble.labels.0, a * ap, &mut rng);
            let mut q = random::random_povm(g.ensemble.labels.1, b * bp, &mut rng);
            let mut best = f64::NEG_INFINITY;
            let mut psi = CVector::zeros(a * b);
            for it in 0..opts.max_iter {
                let w = witness_value_k(&state_operator(&p, &q)?, a, b, k, &so, opts.seed.wrapping_add((r * 1000 + it) as u64))?;
                psi = w.vector;
                let work = Work::new(g, &outer(&psi))?;
                p = best_povm(&work.alice_gradient(&q)?, &opts.solver)?;
                q = best_povm(&work.bob_gradient(&p)?, &opts.solver)?;
                let v = work.value(&p, &q);
                let stalled = v - best < opts.stall_tol;
                best = best.max(v);
                if stalled {
                    break;
                }
            }
            // Re-evaluate exactly for the final triple.
            let work = Work::new(g, &outer(&psi))?;
            let v = work.value(&p, &q);
            Ok((v, (psi.clone(), p), (psi, q)))
        })
        .collect();
    let (v, (psi, p), (_, q)) = best_run(runs)?;
    Ok((v, psi, p, q))
}

/// Bracket on the best winning probability with shared states of Schmidt
/// number at most `k`.
pub fn p_g_k_bounds(g: &GameInstance, opts: &GameOptions) -> Result<PgkBounds> {
    g.validate()?;
    let (upper, relaxation, status, gap) = pgk_upper(g, opts)?;
    let (lower, psi, p, q) = schmidt_state_seesaw(g, opts)?;
    let (a, ap, b, bp) = g.registers()?;
    let lower_state = SnDecomposition {
        dims: SystemDims::bipartite(a, b)?,
        k: g.k,
        weights: vec![1.0],
        vectors: vec![psi],
        residual: 0.0,
    };
    let lower_strategy = Strategy {
        povm_a: Povm::new(p, SystemDims::bipartite(a, ap)?)?,
        povm_b: Povm::new(q, SystemDims::bipartite(b, bp)?)?,
    };
    Ok(PgkBounds {
        bracket: Bracket { lower: lower.min(upper), upper },
        relaxation,
        lower_state,
        lower_strategy,
        upper_status: status,
        upper_gap: gap,
    })
}

/// Evaluates `play` for the given strategy (or an optimized one) together
/// with the `p_g^(k)` bracket and the ratio bracket.
pub fn evaluate(g: &GameInstance, strategy: Option<Strategy>, opts: &GameOptions) -> Result<GameResult> {
    let (p_g_value, strategy) = match strategy {
        Some(s) => (play(g, &s.povm_a, &s.povm_b)?, s),
        None => optimize_play(g, opts)?,
    };
    let p_g_k = p_g_k_bounds(g, opts)?;
    let ratio = ratio_bracket(p_g_value, p_g_k.bracket);
    Ok(GameResult { p_g_value, strategy, p_g_k, ratio })
}

fn ratio_bracket(value: f64, b: Bracket) -> Bracket {
    let lo = value / b.upper;
    let hi = if b.lower > 0.0 { value / b.lower } else { f64::INFINITY };
    Bracket { lower: lo, upper: hi.max(lo) }
}

/// Bell measurement `{(I ⊗ U_k)|Ω⟩⟨Ω|(I ⊗ U_k)†}` with the unitary on the
/// second factor.
pub fn bell_povm_second(d: usize) -> Povm {
    let omega = max_entangled(d);
    let elements = heisenberg_weyl_set(d)
        .iter()
        .map(|u| outer(&(kron(&identity(d), u) * &omega)))
        .collect();
    Povm::new(elements, SystemDims::bipartite(d, d).expect("d >= 2")).expect("Bell POVM")
}

/// Ensemble `σ_kl = (U_k ⊗ U_l) F̄ (U_k ⊗ U_l)† / tr F` with uniform weights
/// over the full `d_A² × d_B²` label grid, and the Bell measurements for
/// which the winning probability is `tr(ρF) / (d_A d_B tr F)`.
pub fn ensemble_from_operator(f: &CMatrix, d_a: usize, d_b: usize) -> Result<(Ensemble, Povm, Povm)> {
    if f.nrows() != d_a * d_b || f.ncols() != f.nrows() {
        return Err(Error::Dimension("witness does not match dims".into()));
    }
    let f = hermitize(f);
    let scale = f.norm().max(1.0);
    let me = min_eigenvalue(&f);
    if me < -1e-9 * scale {
        return Err(Error::NotPositive { what: "witness".into(), min_eigenvalue: me });
    }
    let f = spectral_map(&f, |v| v.max(0.0));
    let t = f.trace().re;
    if t <= 0.0 {
        return Err(Error::Trace { what: "witness".into(), trace: t });
    }
    let base = f.map(|z| z.conj()) / cr(t);
    let (ua, ub) = (heisenberg_weyl_set(d_a), heisenberg_weyl_set(d_b));
    let p = 1.0 / (ua.len() * ub.len()) as f64;
    let mut items = Vec::with_capacity(ua.len() * ub.len());
    for (x, u) in ua.iter().enumerate() {
        for (y, v) in ub.iter().enumerate() {
            let w = kron(u, v);
            let s = hermitize(&(&w * &base * w.adjoint()));
            items.push(EnsembleItem {
                x,
                y,
                probability: p,
                state: BipartiteState::from_matrix(s, d_a, d_b)?,
            });
        }
    }
    let ens = Ensemble::new((ua.len(), ub.len()), items)?;
    Ok((ens, bell_povm_second(d_a), bell_povm_second(d_b)))
}

pub fn ensemble_from_witness(f: &WitnessOperator) -> Result<(Ensemble, Povm, Povm)> {
    if f.role != WitnessRole::StateWitness || f.ops.len() != 1 {
        return Err(Error::Contract("ensemble construction needs a state witness".into()));
    }
    let (d_a, d_b) = f.dims.pair()?;
    ensemble_from_operator(&f.ops[0], d_a, d_b)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem5Record {
    pub k: usize,
    pub exact_mode: bool,
    pub r_ke: RobustnessReport,
    pub play: f64,
    /// `|play − tr(ρF)/(d_A d_B tr F)|`.
    pub analytic_residual: f64,
    pub p_g_k: Bracket,
    pub ratio: Bracket,
    pub contains_robustness: bool,
    /// Largest `play / p_g_k upper − (1 + R_ke upper)` over the random ensembles.
    pub random_max_excess: Option<f64>,
    pub random_checked: usize,
    pub passed: Option<bool>,
}

pub const THEOREM5_TOL: f64 = 1e-4;
pub const THEOREM5_UPPER_TOL: f64 = 1e-6;

/// Random ensemble with `labels` and states on `d_a ⊗ d_b`.
pub fn random_ensemble(labels: (usize, usize), d_a: usize, d_b: usize, rng: &mut random::SeededRng) -> Result<Ensemble> {
    let n = labels.0 * labels.1;
    let mut w: Vec<f64> = (0..n).map(|_| random::gaussian(rng).abs() + 0.05).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let items = (0..n)
        .map(|i| {
            let rank = 1 + i % (d_a * d_b);
            Ok(EnsembleItem {
                x: i / labels.1,
                y: i % labels.1,
                probability: w[i],
                state: BipartiteState::from_matrix_hermitized(random::random_density(d_a * d_b, rank, rng), d_a, d_b)?,
            })
        })
        .collect::<Result<_>>()?;
    Ensemble::new(labels, items)
}

/// Builds the discrimination game from the optimal robustness witness of
/// `ρ`, brackets the advantage ratio, and checks that random ensembles do
/// not exceed `1 + R_ke`.
pub fn verify_theorem5(rho: &BipartiteState, k: usize, random_ensembles: usize, ropts: &RobustnessOptions, gopts: &GameOptions) -> Result<Theorem5Record> {
    let (d_a, d_b) = (rho.d_a(), rho.d_b());
    let rke = r_ke(rho, k, ropts)?;
    let mut f = rke.witness.ops[0].clone();
    if f.trace().re < 1e-9 {
        f = identity(d_a * d_b);
    }
    let (ens, pa, pb) = ensemble_from_operator(&f, d_a, d_b)?;
    let g = GameInstance::new(ens, rho.clone(), k)?;
    let value = play(&g, &pa, &pb)?;
    let analytic = trace_product(rho.matrix(), &f) / ((d_a * d_b) as f64 * f.trace().re);
    let bounds = p_g_k_bounds(&g, gopts)?;
    let ratio = ratio_bracket(value, bounds.bracket);
    let target = 1.0 + rke.lower;
    let contains_robustness = ratio.lower - THEOREM5_TOL <= target && target <= ratio.upper + THEOREM5_TOL;
    let cap = 1.0 + rke.upper.unwrap_or(f64::INFINITY);
    let mut excess: Option<f64> = None;
    for i in 0..random_ensembles {
        let mut rng = random::substream(gopts.seed ^ 0xe75, i as u64);
        let ens = random_ensemble((2, 2), d_a, d_b, &mut rng)?;
        let gi = GameInstance::new(ens, rho.clone(), k)?;
        let o = GameOptions { restarts: 2, max_iter: 20, seed: gopts.seed.wrapping_add(i as u64), ..*gopts };
        let (v, _) = optimize_play(&gi, &o)?;
        let (up, ..) = pgk_upper(&gi, &o)?;
        let e = v / up - cap;
        excess = Some(excess.map_or(e, |x: f64| x.max(e)));
    }
    let exact_mode = rke.exact_mode && bounds.relaxation.is_exact();
    let random_ok = excess.is_none_or(|e| e <= THEOREM5_UPPER_TOL);
    Ok(Theorem5Record {
        k,
        exact_mode,
        play: value,
        analytic_residual: (value - analytic).abs(),
        p_g_k: bounds.bracket,
        ratio,
        contains_robustness,
        random_max_excess: excess,
        random_checked: random_ensembles,
        passed: exact_mode.then_some(contains_robustness && random_ok),
        r_ke: rke,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Assemblage {
    /// `τ[x][i]`: unnormalized conditional state on `B` for input `x`, outcome `i`.
    #[serde(with = "assemblage_serde")]
    pub members: Vec<Vec<CMatrix>>,
    /// Smallest `n` for which the generating state was certified to have
    /// Schmidt number at most `n`, if provenance is known.
    pub n_preparable: Option<usize>,
}

mod assemblage_serde {
    use super::CMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row(#[serde(with = "crate::serde_complex::matrix_list")] Vec<CMatrix>);

    pub fn serialize<S: Serializer>(m: &[Vec<CMatrix>], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|r| Row(r.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<CMatrix>>, D::Error> {
        Ok(Vec::<Row>::deserialize(d)?.into_iter().map(|r| r.0).collect())
    }
}

/// `τ_{i|x} = Λ_i(ω_x)` for an instrument and a list of input states on `V`.
pub fn assemblage_from_instrument(inst: &TeleportationInstrument, inputs: &[CMatrix], seed: u64) -> Result<Assemblage> {
    inst.validate()?;
    let members = inputs
        .iter()
        .map(|w| inst.choi_list.iter().map(|j| apply_choi(j, w)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n_preparable = match &inst.provenance {
        Some(prov) => {
            let st = &prov.state;
            let max = st.d_a().min(st.d_b());
            (1..=max).find(|&n| n == max || inner_decomposition(st, n, &DecompositionBudget::default(), seed).is_ok())
        }
        None => None,
    };
    Ok(Assemblage { members, n_preparable })
}
