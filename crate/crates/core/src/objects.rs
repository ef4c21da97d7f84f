//! States, POVMs, Choi matrices, distributed measurements, teleportation
//! instruments and ensembles, together with the formulas that assemble one
//! from another.
//!
//! Register conventions:
//! - a Choi matrix lives on `V ⊗ out` (input copy first) and is built from the
//!   normalized maximally entangled state, so channels have trace-one Choi
//!   matrices and `Λ(ρ) = d_in · tr_V[(ρᵀ ⊗ I) J]`;
//! - the full register order is `V ⊗ A ⊗ A' ⊗ B' ⊗ B`; Alice's POVM acts on
//!   `A ⊗ A'`, Bob's on `B ⊗ B'` (in that order), the shared state on `A' ⊗ B'`;
//! - transposes are taken in the computational basis.

use serde::{Deserialize, Serialize};

use crate::cone::{inner_decomposition, outer_cone_margin, DecompositionBudget, SnDecomposition};
use crate::error::{Error, Result};
use crate::linalg::{
    self, cr, hermitize, identity, kron, kron_all, max_abs_diff, max_entangled_projector,
    min_eigenvalue, partial_trace, permute_systems, CMatrix, HermitianOperator, SystemDims,
};

pub const PSD_TOL: f64 = 1e-9;
pub const TRACE_TOL: f64 = 1e-9;
pub const COMPLETENESS_TOL: f64 = 1e-9;

/// Density matrix (or substate) of a bipartite system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct BipartiteState {
    op: HermitianOperator,
    is_substate: bool,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    op: HermitianOperator,
    #[serde(default)]
    is_substate: bool,
}

impl TryFrom<RawState> for BipartiteState {
    type Error = Error;
    fn try_from(r: RawState) -> Result<Self> {
        if r.is_substate {
            BipartiteState::substate(r.op)
        } else {
            BipartiteState::new(r.op)
        }
    }
}

impl From<BipartiteState> for RawState {
    fn from(s: BipartiteState) -> Self {
        RawState {
            op: s.op,
            is_substate: s.is_substate,
        }
    }
}

fn check_psd(what: &str, m: &CMatrix) -> Result<()> {
    let lmin = min_eigenvalue(m);
    if lmin < -PSD_TOL {
        return Err(Error::NotPositive {
            what: what.into(),
            min_eigenvalue: lmin,
        });
    }
    Ok(())
}

impl BipartiteState {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        op.dims().pair()?;
        check_psd("state", op.matrix())?;
        let t = op.trace();
        if (t - 1.0).abs() > TRACE_TOL {
            return Err(Error::Trace {
                what: "state".into(),
                trace: t,
            });
        }
        Ok(Self {
            op,
            is_substate: false,
        })
    }

    pub fn substate(op: HermitianOperator) -> Result<Self> {
        op.dims().pair()?;
        check_psd("substate", op.matrix())?;
        let t = op.trace();
        if t > 1.0 + TRACE_TOL {
            return Err(Error::Trace {
                what: "substate".into(),
                trace: t,
            });
        }
        Ok(Self {
            op,
            is_substate: true,
        })
    }

    pub fn from_matrix(m: CMatrix, d_a: usize, d_b: usize) -> Result<Self> {
        Self::new(HermitianOperator::new(m, SystemDims::bipartite(d_a, d_b)?)?)
    }

    /// Symmetrizes first; use for matrices produced by arithmetic.
    pub fn from_matrix_hermitized(m: CMatrix, d_a: usize, d_b: usize) -> Result<Self> {
        Self::new(HermitianOperator::hermitized(
            m,
            SystemDims::bipartite(d_a, d_b)?,
        )?)
    }

    pub fn pure(psi: &linalg::CVector, d_a: usize, d_b: usize) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized { norm: n });
        }
        Self::from_matrix_hermitized(linalg::outer(psi), d_a, d_b)
    }

    /// `(|Ω⟩⟨Ω|)` on `d ⊗ d`.
    pub fn max_entangled(d: usize) -> Self {
        Self::from_matrix(max_entangled_projector(d), d, d).expect("valid projector")
    }

    pub fn maximally_mixed(d_a: usize, d_b: usize) -> Self {
        let n = d_a * d_b;
        Self::from_matrix(identity(n) / cr(n as f64), d_a, d_b).expect("valid state")
    }

    /// `p·Φ⁺ + (1-p)·I/d²`.
    pub fn isotropic(d: usize, p: f64) -> Result<Self> {
        let n = d * d;
        let m = max_entangled_projector(d) * cr(p) + identity(n) * cr((1.0 - p) / n as f64);
        Self::from_matrix(m, d, d)
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn dims(&self) -> &SystemDims {
        self.op.dims()
    }

    pub fn d_a(&self) -> usize {
        self.op.dims().get(0)
    }

    pub fn d_b(&self) -> usize {
        self.op.dims().get(1)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn is_substate(&self) -> bool {
        self.is_substate
    }

    pub fn mix(&self, other: &BipartiteState, p: f64) -> Result<BipartiteState> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension("mixing states of different dims".into()));
        }
        let m = self.matrix() * cr(p) + other.matrix() * cr(1.0 - p);
        Self::from_matrix_hermitized(m, self.d_a(), self.d_b())
    }
}

/// Outcome-indexed POVM on a declared register.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPovm", into = "RawPovm")]
pub struct Povm {
    dims: SystemDims,
    elements: Vec<CMatrix>,
}

#[derive(Serialize, Deserialize)]
struct RawPovm {
    dims: SystemDims,
    #[serde(with = "crate::serde_complex::matrix_list")]
    elements: Vec<CMatrix>,
}

impl TryFrom<RawPovm> for Povm {
    type Error = Error;
    fn try_from(r: RawPovm) -> Result<Self> {
        Povm::new(r.elements, r.dims)
    }
}

impl From<Povm> for RawPovm {
    fn from(p: Povm) -> Self {
        RawPovm {
            dims: p.dims,
            elements: p.elements,
        }
    }
}

fn check_completeness(elements: &[CMatrix], n: usize) -> Result<()> {
    let sum = elements.iter().fold(CMatrix::zeros(n, n), |acc, e| acc + e);
    let dev = max_abs_diff(&sum, &identity(n));
    if dev > COMPLETENESS_TOL {
        return Err(Error::Completeness { deviation: dev });
    }
    Ok(())
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>, dims: SystemDims) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Contract("POVM without outcomes".into()));
        }
        let n = dims.total();
        for (i, e) in elements.iter().enumerate() {
            linalg::check_finite(e)?;
            if e.nrows() != n || e.ncols() != n {
                return Err(Error::Dimension(format!(
                    "POVM element {i} is {}x{}, register has dimension {n}",
                    e.nrows(),
                    e.ncols()
                )));
            }
            let dev = linalg::hermiticity_deviation(e);
            if dev > linalg::HERMITIAN_TOL {
                return Err(Error::NotHermitian { deviation: dev });
            }
            check_psd(&format!("POVM element {i}"), e)?;
        }
        check_completeness(&elements, n)?;
        Ok(Self { dims, elements })
    }

    pub fn trivial(dims: SystemDims) -> Self {
        let n = dims.total();
        Self {
            dims,
            elements: vec![identity(n)],
        }
    }

    /// Generalized Bell measurement on `d ⊗ d`: elements
    /// `(U_a ⊗ I)|Ω⟩⟨Ω|(U_a ⊗ I)†` over the Heisenberg–Weyl set.
    pub fn bell(d: usize) -> Self {
        let omega = max_entangled_projector(d);
        let elements = linalg::heisenberg_weyl_set(d)
            .iter()
            .map(|u| linalg::conjugate(&kron(u, &identity(d)), &omega))
            .collect();
        Self {
            dims: SystemDims::bipartite(d, d).expect("d >= 2"),
            elements,
        }
    }

    /// Computational-basis measurement on a register.
    pub fn computational(dims: SystemDims) -> Self {
        let n = dims.total();
        let elements = (0..n)
            .map(|i| CMatrix::from_fn(n, n, |r, c| if r == i && c == i { cr(1.0) } else { cr(0.0) }))
            .collect();
        Self { dims, elements }
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn dims(&self) -> &SystemDims {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Same POVM with its two tensor factors swapped.
    pub fn swapped(&self) -> Result<Povm> {
        let (a, b) = self.dims.pair()?;
        let elements = self
            .elements
            .iter()
            .map(|e| permute_systems(e, &[a, b], &[1, 0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Povm {
            dims: SystemDims::bipartite(b, a)?,
            elements,
        })
    }

    /// Merges outcome groups: `groups[j]` lists the outcomes summed into new
    /// outcome `j`.
    pub fn coarse_grained(&self, groups: &[Vec<usize>]) -> Result<Povm> {
        let n = self.dims.total();
        let elements = groups
            .iter()
            .map(|g| g.iter().fold(CMatrix::zeros(n, n), |acc, &i| acc + &self.elements[i]))
            .collect();
        Povm::new(elements, self.dims.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiNormalization {
    /// `J = (id ⊗ Λ)(|Ω⟩⟨Ω|)` with `|Ω⟩ = d^{-1/2} Σ|ii⟩`.
    NormalizedOmega,
}

/// Choi matrix of a (sub)channel on `V ⊗ out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiMatrix {
    pub op: HermitianOperator,
    pub normalization: ChoiNormalization,
}

impl ChoiMatrix {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        op.dims().pair()?;
        check_psd("Choi matrix", op.matrix())?;
        Ok(Self {
            op,
            normalization: ChoiNormalization::NormalizedOmega,
        })
    }

    pub fn from_matrix(m: CMatrix, d_in: usize, d_out: usize) -> Result<Self> {
        Self::new(HermitianOperator::hermitized(
            m,
            SystemDims::bipartite(d_in, d_out)?,
        )?)
    }

    pub fn identity_channel(d: usize) -> Self {
        Self::from_matrix(max_entangled_projector(d), d, d).expect("valid")
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn d_in(&self) -> usize {
        self.op.dims().get(0)
    }

    pub fn d_out(&self) -> usize {
        self.op.dims().get(1)
    }

    /// `max |tr_out J − I/d_in|`; zero for trace-preserving maps.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let m = partial_trace(self.matrix(), &[self.d_in(), self.d_out()], &[0])
            .expect("bipartite");
        max_abs_diff(&m, &(identity(self.d_in()) / cr(self.d_in() as f64)))
    }

    /// Choi matrix of `E_A ⊗ E_B`, registers reordered to
    /// `(V_A V_B) ⊗ (out_A out_B)`.
    pub fn local_product(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<ChoiMatrix> {
        let j = kron(a.matrix(), b.matrix());
        let dims = [a.d_in(), a.d_out(), b.d_in(), b.d_out()];
        let p = permute_systems(&j, &dims, &[0, 2, 1, 3])?;
        Self::from_matrix(p, a.d_in() * b.d_in(), a.d_out() * b.d_out())
    }
}

/// Normalized Choi matrix of the map with the given Kraus operators
/// (`d_out × d_in` each).
pub fn choi_from_kraus(kraus: &[CMatrix]) -> CMatrix {
    let d_in = kraus[0].ncols();
    let action = |x: &CMatrix| {
        kraus
            .iter()
            .fold(CMatrix::zeros(kraus[0].nrows(), kraus[0].nrows()), |acc, k| {
                acc + k * x * k.adjoint()
            })
    };
    choi_matrix_of(&action, d_in)
}

fn unit(n: usize, i: usize, j: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |r, c| if r == i && c == j { cr(1.0) } else { cr(0.0) })
}

fn choi_matrix_of(map_action: &dyn Fn(&CMatrix) -> CMatrix, d_in: usize) -> CMatrix {
    let d_out = map_action(&unit(d_in, 0, 0)).nrows();
    let mut j = CMatrix::zeros(d_in * d_out, d_in * d_out);
    for a in 0..d_in {
        for b in 0..d_in {
            let img = map_action(&unit(d_in, a, b));
            j += kron(&unit(d_in, a, b), &img);
        }
    }
    j / cr(d_in as f64)
}

/// Choi matrix `(id ⊗ Λ)(|Ω⟩⟨Ω|)` of a linear map given by its action.
pub fn choi_of(map_action: impl Fn(&CMatrix) -> CMatrix, d_in: usize) -> Result<ChoiMatrix> {
    if d_in < 2 {
        return Err(Error::Dimension("input dimension < 2".into()));
    }
    // Linearity spot check on a fixed non-trivial combination of basis elements.
    let e00 = unit(d_in, 0, 0);
    let e01 = unit(d_in, 0, 1);
    let e10 = unit(d_in, 1, 0);
    let combo = &e00 * cr(0.7) + &e01 * linalg::c(0.2, -1.3) + &e10 * cr(-2.1);
    let lhs = map_action(&combo);
    let rhs = map_action(&e00) * cr(0.7)
        + map_action(&e01) * linalg::c(0.2, -1.3)
        + map_action(&e10) * cr(-2.1);
    let scale = lhs.norm().max(1.0);
    let dev = max_abs_diff(&lhs, &rhs) / scale;
    if dev > 1e-10 {
        return Err(Error::NonLinearMap { deviation: dev });
    }
    let j = choi_matrix_of(&map_action, d_in);
    let d_out = j.nrows() / d_in;
    let op = HermitianOperator::new(j, SystemDims::bipartite(d_in, d_out)?)?;
    ChoiMatrix::new(op)
}

/// `Λ(ρ) = d_in · tr_V[(ρᵀ ⊗ I) J]`.
pub fn apply_choi(choi: &ChoiMatrix, rho: &CMatrix) -> Result<CMatrix> {
    let (d_in, d_out) = (choi.d_in(), choi.d_out());
    if rho.nrows() != d_in || rho.ncols() != d_in {
        return Err(Error::Dimension(format!(
            "input {}x{} for a channel with input dimension {d_in}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let prod = kron(&rho.transpose(), &identity(d_out)) * choi.matrix();
    Ok(partial_trace(&prod, &[d_in, d_out], &[1])? * cr(d_in as f64))
}

/// Heisenberg-picture map `Λ†(Y) = d_in · (tr_out[(I ⊗ Y) J])ᵀ`.
pub fn apply_choi_adjoint(choi: &ChoiMatrix, y: &CMatrix) -> Result<CMatrix> {
    let (d_in, d_out) = (choi.d_in(), choi.d_out());
    if y.nrows() != d_out || y.ncols() != d_out {
        return Err(Error::Dimension("operator does not match channel output".into()));
    }
    let prod = kron(&identity(d_in), y) * choi.matrix();
    Ok(partial_trace(&prod, &[d_in, d_out], &[0])?.transpose() * cr(d_in as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmProvenance {
    pub state: BipartiteState,
    pub povm_a: Povm,
    pub povm_b: Povm,
}

/// Joint measurement `{M_ab}` on `A ⊗ B`, elements stored row-major in `(a, b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedMeasurement {
    pub dims: SystemDims,
    pub outcomes: (usize, usize),
    #[serde(with = "crate::serde_complex::matrix_list")]
    pub elements: Vec<CMatrix>,
    #[serde(default)]
    pub provenance: Option<DmProvenance>,
}

impl DistributedMeasurement {
    pub fn new(
        elements: Vec<CMatrix>,
        outcomes: (usize, usize),
        dims: SystemDims,
        provenance: Option<DmProvenance>,
    ) -> Result<Self> {
        let dm = Self {
            dims,
            outcomes,
            elements,
            provenance,
        };
        dm.validate()?;
        Ok(dm)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.pair()?;
        if self.elements.len() != self.outcomes.0 * self.outcomes.1 {
            return Err(Error::Dimension(format!(
                "{} elements for {}x{} outcomes",
                self.elements.len(),
                self.outcomes.0,
                self.outcomes.1
            )));
        }
        Povm::new(self.elements.clone(), self.dims.clone())?;
        Ok(())
    }

    pub fn element(&self, a: usize, b: usize) -> &CMatrix {
        &self.elements[a * self.outcomes.1 + b]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `p·self + (1-p)·other`; provenance is dropped.
    pub fn mix(&self, other: &Self, p: f64) -> Result<Self> {
        if self.dims != other.dims || self.outcomes != other.outcomes {
            return Err(Error::Dimension("mixing incompatible measurements".into()));
        }
        let elements = self
            .elements
            .iter()
            .zip(&other.elements)
            .map(|(x, y)| hermitize(&(x * cr(p) + y * cr(1.0 - p))))
            .collect();
        Self::new(elements, self.outcomes, self.dims.clone(), None)
    }
}

/// The linear map `X ↦ {tr_{A'B'}[(M_a ⊗ M_b)(I_A ⊗ X ⊗ I_B)]}` for fixed
/// local POVMs, with `X` an operator on `A' ⊗ B'`.
pub fn distributed_elements(x: &CMatrix, povm_a: &Povm, povm_b: &Povm) -> Result<Vec<CMatrix>> {
    let (d_a, d_ap) = povm_a.dims().pair()?;
    let (d_b, d_bp) = povm_b.dims().pair()?;
    if x.nrows() != d_ap * d_bp {
        return Err(Error::Dimension(format!(
            "shared operator of dimension {} for registers {d_ap}x{d_bp}",
            x.nrows()
        )));
    }
    let dims = [d_a, d_ap, d_bp, d_b];
    let middle = kron_all(&[&identity(d_a), x, &identity(d_b)]);
    let bob: Vec<CMatrix> = povm_b
        .elements()
        .iter()
        .map(|e| permute_systems(e, &[d_b, d_bp], &[1, 0]))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(povm_a.len() * povm_b.len());
    for ma in povm_a.elements() {
        for mb in &bob {
            let prod = kron(ma, mb) * &middle;
            out.push(partial_trace(&prod, &dims, &[0, 3])?);
        }
    }
    Ok(out)
}

/// `M_ab = tr_{A'B'}[(M_a^{AA'} ⊗ M_b^{BB'})(I_A ⊗ ρ^{A'B'} ⊗ I_B)]`.
pub fn distributed_measurement_from(
    rho: &BipartiteState,
    povm_a: &Povm,
    povm_b: &Povm,
) -> Result<DistributedMeasurement> {
    let (d_a, d_ap) = povm_a.dims().pair()?;
    let (d_b, d_bp) = povm_b.dims().pair()?;
    if (d_ap, d_bp) != (rho.d_a(), rho.d_b()) {
        return Err(Error::Dimension(format!(
            "POVM registers A'={d_ap}, B'={d_bp} do not match state dims {:?}",
            rho.dims().as_slice()
        )));
    }
    let elements: Vec<CMatrix> = distributed_elements(rho.matrix(), povm_a, povm_b)?
        .iter()
        .map(hermitize)
        .collect();
    DistributedMeasurement::new(
        elements,
        (povm_a.len(), povm_b.len()),
        SystemDims::bipartite(d_a, d_b)?,
        Some(DmProvenance {
            state: rho.clone(),
            povm_a: povm_a.clone(),
            povm_b: povm_b.clone(),
        }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProvenance {
    pub state: BipartiteState,
    pub povm: Povm,
}

/// Outcome-indexed subchannels `A → B`, stored as Choi matrices on `V ⊗ B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleportationInstrument {
    pub choi_list: Vec<ChoiMatrix>,
    #[serde(default)]
    pub provenance: Option<InstrumentProvenance>,
}

impl TeleportationInstrument {
    pub fn new(choi_list: Vec<ChoiMatrix>, provenance: Option<InstrumentProvenance>) -> Result<Self> {
        let inst = Self {
            choi_list,
            provenance,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .choi_list
            .first()
            .ok_or_else(|| Error::Contract("instrument without outcomes".into()))?;
        let (d_in, d_out) = (first.d_in(), first.d_out());
        for j in &self.choi_list {
            if (j.d_in(), j.d_out()) != (d_in, d_out) {
                return Err(Error::Dimension("subchannels with different dims".into()));
            }
            check_psd("subchannel Choi matrix", j.matrix())?;
        }
        let dev = self.aggregate().trace_preservation_deviation();
        if dev > TRACE_TOL {
            return Err(Error::Trace {
                what: format!("aggregate instrument (tr_out deviation {dev:.3e})"),
                trace: self.choi_list.iter().map(|j| j.op.trace()).sum(),
            });
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.choi_list[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.choi_list[0].d_out()
    }

    pub fn len(&self) -> usize {
        self.choi_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choi_list.is_empty()
    }

    /// Choi matrix of `Σ_a Λ_a`.
    pub fn aggregate(&self) -> ChoiMatrix {
        let n = self.choi_list[0].matrix().nrows();
        let sum = self
            .choi_list
            .iter()
            .fold(CMatrix::zeros(n, n), |acc, j| acc + j.matrix());
        ChoiMatrix::from_matrix(sum, self.d_in(), self.d_out()).expect("sum of PSD Choi matrices")
    }

    pub fn mix(&self, other: &Self, p: f64) -> Result<Self> {
        if self.len() != other.len() || self.d_in() != other.d_in() || self.d_out() != other.d_out() {
            return Err(Error::Dimension("mixing incompatible instruments".into()));
        }
        let list = self
            .choi_list
            .iter()
            .zip(&other.choi_list)
            .map(|(x, y)| {
                ChoiMatrix::from_matrix(
                    x.matrix() * cr(p) + y.matrix() * cr(1.0 - p),
                    self.d_in(),
                    self.d_out(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(list, None)
    }
}

/// Choi matrices `J_a = tr_{AA'}[(I_V ⊗ M_a ⊗ I_B)(|Ω⟩⟨Ω|_{VA} ⊗ X_{A'B})]`
/// of the subchannels generated by an operator `X` on `A' ⊗ B`.
pub fn instrument_chois(x: &CMatrix, povm: &Povm, d_b: usize) -> Result<Vec<CMatrix>> {
    let (d_a, d_ap) = povm.dims().pair()?;
    if x.nrows() != d_ap * d_b {
        return Err(Error::Dimension("shared operator does not match POVM".into()));
    }
    let dims = [d_a, d_a, d_ap, d_b];
    let right = kron(&max_entangled_projector(d_a), x);
    povm.elements()
        .iter()
        .map(|m| {
            let left = kron_all(&[&identity(d_a), m, &identity(d_b)]);
            partial_trace(&(left * &right), &dims, &[0, 3])
        })
        .collect()
}

/// Subchannels `Λ_a(φ) = tr_{AA'}[(M_a^{AA'} ⊗ I_B)(φ_A ⊗ ρ^{A'B})]`.
pub fn teleportation_instrument_from(
    rho: &BipartiteState,
    povm: &Povm,
) -> Result<TeleportationInstrument> {
    let (d_a, d_ap) = povm.dims().pair()?;
    if d_ap != rho.d_a() {
        return Err(Error::Dimension(format!(
            "POVM register A'={d_ap} does not match state dims {:?}",
            rho.dims().as_slice()
        )));
    }
    let d_b = rho.d_b();
    let list = instrument_chois(rho.matrix(), povm, d_b)?
        .into_iter()
        .map(|j| ChoiMatrix::from_matrix(hermitize(&j), d_a, d_b))
        .collect::<Result<Vec<_>>>()?;
    TeleportationInstrument::new(
        list,
        Some(InstrumentProvenance {
            state: rho.clone(),
            povm: povm.clone(),
        }),
    )
}

/// Response kernel `p(m, n | i, j, λ)`: `table[λ][i·J + j][m·N + n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseKernel {
    pub input_outcomes: (usize, usize),
    pub output_outcomes: (usize, usize),
    pub table: Vec<Vec<Vec<f64>>>,
}

impl ResponseKernel {
    /// Deterministic relabeling `(i, j) ↦ f(i, j)` for every `λ`.
    pub fn deterministic(
        input_outcomes: (usize, usize),
        output_outcomes: (usize, usize),
        lambdas: usize,
        f: impl Fn(usize, usize, usize) -> (usize, usize),
    ) -> Self {
        let nin = input_outcomes.0 * input_outcomes.1;
        let nout = output_outcomes.0 * output_outcomes.1;
        let table = (0..lambdas)
            .map(|l| {
                (0..nin)
                    .map(|ij| {
                        let (m, n) = f(l, ij / input_outcomes.1, ij % input_outcomes.1);
                        let mut row = vec![0.0; nout];
                        row[m * output_outcomes.1 + n] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self {
            input_outcomes,
            output_outcomes,
            table,
        }
    }

    pub fn validate(&self, lambdas: usize) -> Result<()> {
        let nin = self.input_outcomes.0 * self.input_outcomes.1;
        let nout = self.output_outcomes.0 * self.output_outcomes.1;
        if self.table.len() != lambdas {
            return Err(Error::Contract(format!(
                "response kernel has {} hidden values, expected {lambdas}",
                self.table.len()
            )));
        }
        for rows in &self.table {
            if rows.len() != nin {
                return Err(Error::Contract("response kernel input size mismatch".into()));
            }
            for row in rows {
                if row.len() != nout || row.iter().any(|&p| !(p >= -1e-12)) {
                    return Err(Error::Contract("response kernel row is not a distribution".into()));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Contract(format!(
                        "response kernel row sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `N_mn = Σ_{ijλ} p_λ p(m,n|i,j,λ) E_λ†[M_ij]` with `E_λ` given by Choi
/// matrices of channels on the joint register `A ⊗ B`.
pub fn simulate_npeb(
    m: &DistributedMeasurement,
    weights: &[f64],
    response: &ResponseKernel,
    channels: &[ChoiMatrix],
) -> Result<DistributedMeasurement> {
    if weights.len() != channels.len() {
        return Err(Error::Contract("one weight per channel required".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract("weights are not a probability distribution".into()));
    }
    if response.input_outcomes != m.outcomes {
        return Err(Error::Contract("response kernel inputs do not match outcomes".into()));
    }
    response.validate(channels.len())?;
    let n = m.dims.total();
    for (l, e) in channels.iter().enumerate() {
        if e.d_in() != n || e.d_out() != n {
            return Err(Error::Dimension(format!(
                "channel {l} is {}→{}, measurement register has dimension {n}",
                e.d_in(),
                e.d_out()
            )));
        }
        let dev = e.trace_preservation_deviation();
        if dev > TRACE_TOL {
            return Err(Error::Contract(format!(
                "channel {l} is not trace preserving (deviation {dev:.3e})"
            )));
        }
    }
    let nout = response.output_outcomes.0 * response.output_outcomes.1;
    let mut out = vec![CMatrix::zeros(n, n); nout];
    for (l, (w, e)) in weights.iter().zip(channels).enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (ij, mij) in m.elements.iter().enumerate() {
            let pulled = apply_choi_adjoint(e, mij)?;
            for (mn, p) in response.table[l][ij].iter().enumerate() {
                if *p != 0.0 {
                    out[mn] += &pulled * cr(w * p);
                }
            }
        }
    }
    let out = out.iter().map(hermitize).collect();
    DistributedMeasurement::new(out, response.output_outcomes, m.dims.clone(), None)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum NpebVerdict {
    Certified { n: usize, decomposition: SnDecomposition },
    NotCertified { n: usize, residual: f64 },
    /// The normalized Choi matrix lies outside the outer cone at `n`, so the
    /// channel is not `n`-PEB.
    Excluded { n: usize, margin: f64 },
}

impl NpebVerdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, NpebVerdict::Certified { .. })
    }
}

const EXCLUSION_TOL: f64 = 1e-9;

/// Certifies `SN(J) ≤ n` for a channel Choi matrix by an explicit ensemble.
/// `NotCertified` is not a proof that the channel is not `n`-PEB.
pub fn npeb_order_bound(channel: &ChoiMatrix, n: usize, seed: u64) -> Result<NpebVerdict> {
    if n == 0 {
        return Err(Error::InvalidK {
            k: 0,
            max: channel.d_in().min(channel.d_out()),
        });
    }
    let t = channel.op.trace();
    if t <= 0.0 {
        return Err(Error::Trace {
            what: "channel Choi matrix".into(),
            trace: t,
        });
    }
    let state = BipartiteState::from_matrix_hermitized(
        channel.matrix() / cr(t),
        channel.d_in(),
        channel.d_out(),
    )?;
    let k = n.min(channel.d_in().min(channel.d_out()));
    let margin = outer_cone_margin(state.matrix(), channel.d_in(), channel.d_out(), k)?;
    if margin < -EXCLUSION_TOL {
        return Ok(NpebVerdict::Excluded { n, margin });
    }
    match inner_decomposition(&state, k, &DecompositionBudget::default(), seed) {
        Ok(decomposition) => Ok(NpebVerdict::Certified { n, decomposition }),
        Err(Error::DecompositionFailed { residual }) => Ok(NpebVerdict::NotCertified { n, residual }),
        Err(e) => Err(e),
    }
}

/// Labeled ensemble `{p_xy, σ_xy}` on `A' ⊗ B'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub labels: (usize, usize),
    pub items: Vec<EnsembleItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleItem {
    pub x: usize,
    pub y: usize,
    pub probability: f64,
    pub state: BipartiteState,
}

impl Ensemble {
    pub fn new(labels: (usize, usize), items: Vec<EnsembleItem>) -> Result<Self> {
        let e = Self { labels, items };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .items
            .first()
            .ok_or_else(|| Error::Contract("empty ensemble".into()))?;
        let dims = first.state.dims().clone();
        let mut total = 0.0;
        for it in &self.items {
            if it.x >= self.labels.0 || it.y >= self.labels.1 {
                return Err(Error::Contract(format!(
                    "label ({}, {}) outside {}x{}",
                    it.x, it.y, self.labels.0, self.labels.1
                )));
            }
            if !(it.probability >= 0.0) {
                return Err(Error::Contract("negative probability".into()));
            }
            if it.state.dims() != &dims {
                return Err(Error::Dimension("ensemble states with different dims".into()));
            }
            total += it.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &SystemDims {
        self.items[0].state.dims()
    }
}

/// Reconstructs `Σ w_i |ψ_i⟩⟨ψ_i|` as a state on the decomposition's dims.
pub fn state_from_decomposition(dec: &SnDecomposition) -> Result<BipartiteState> {
    let (d_a, d_b) = dec.dims.pair()?;
    BipartiteState::from_matrix_hermitized(dec.reconstruct(), d_a, d_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, conjugate, heisenberg_weyl_set};
    use crate::random;

    fn depolarize(x: &CMatrix) -> CMatrix {
        let d = x.nrows();
        identity(d) * (x.trace() / cr(d as f64))
    }

    #[test]
    fn identity_channel_choi_is_bell_projector() {
        let j = choi_of(|x| x.clone(), 2).unwrap();
        assert!(max_abs_diff(j.matrix(), &max_entangled_projector(2)) < 1e-15);
        assert!((j.op.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn depolarizing_choi_is_maximally_mixed() {
        let j = choi_of(depolarize, 3).unwrap();
        assert!(max_abs_diff(j.matrix(), &(identity(9) / cr(9.0))) < 1e-15);
        let mut rng = random::rng(1);
        let rho = random::random_density(3, 3, &mut rng);
        let out = apply_choi(&j, &rho).unwrap();
        assert!(max_abs_diff(&out, &(identity(3) / cr(3.0))) < 1e-14);
    }

    #[test]
    fn unitary_channel_choi_is_rank_one() {
        let mut rng = random::rng(2);
        let u = random::random_unitary(3, &mut rng);
        let j = choi_of(|x| conjugate(&u, x), 3).unwrap();
        // Input copy first: (I ⊗ U)|Ω⟩⟨Ω|(I ⊗ U)†.
        let expected = conjugate(&kron(&identity(3), &u), &max_entangled_projector(3));
        assert!(max_abs_diff(j.matrix(), &expected) < 1e-14);
        let eig = j.op.eigenvalues();
        assert!(eig[..8].iter().all(|v| v.abs() < 1e-12));
        let rho = random::random_density(3, 2, &mut rng);
        let out = apply_choi(&j, &rho).unwrap();
        assert!(max_abs_diff(&out, &conjugate(&u, &rho)) < 1e-13);
    }

    #[test]
    fn nonlinear_map_is_rejected() {
        let r = choi_of(|x| x.map(|z| cr(z.norm_sqr())), 2);
        assert!(matches!(r, Err(Error::NonLinearMap { .. })));
    }

    #[test]
    fn apply_choi_rejects_dim_mismatch() {
        let j = ChoiMatrix::identity_channel(2);
        assert!(apply_choi(&j, &identity(3)).is_err());
    }

    #[test]
    fn trivial_povms_give_identity() {
        let mut rng = random::rng(3);
        let tau = random::random_density(2, 2, &mut rng);
        let omega = random::random_density(3, 3, &mut rng);
        let rho = BipartiteState::from_matrix_hermitized(kron(&tau, &omega), 2, 3).unwrap();
        let pa = Povm::trivial(SystemDims::bipartite(2, 2).unwrap());
        let pb = Povm::trivial(SystemDims::bipartite(2, 3).unwrap());
        let dm = distributed_measurement_from(&rho, &pa, &pb).unwrap();
        assert_eq!(dm.len(), 1);
        assert!(max_abs_diff(&dm.elements[0], &identity(4)) < 1e-14);
    }

    #[test]
    fn bell_distributed_measurement_matches_direct_contraction() {
        let rho = BipartiteState::max_entangled(2);
        let bell = Povm::bell(2);
        let dm = distributed_measurement_from(&rho, &bell, &bell).unwrap();
        assert_eq!(dm.len(), 16);
        // Direct index contraction over A', B'.
        let idx = |a: usize, ap: usize, bp: usize, b: usize| ((a * 2 + ap) * 2 + bp) * 2 + b;
        for (ia, ma) in bell.elements().iter().enumerate() {
            for (ib, mb) in bell.elements().iter().enumerate() {
                let mut direct = CMatrix::zeros(4, 4);
                for a in 0..2 {
                    for b in 0..2 {
                        for a2 in 0..2 {
                            for b2 in 0..2 {
                                let mut s = cr(0.0);
                                for ap in 0..2 {
                                    for bp in 0..2 {
                                        for ap2 in 0..2 {
                                            for bp2 in 0..2 {
                                                let _ = idx;
                                                let x = ma[(a * 2 + ap, a2 * 2 + ap2)]
                                                    * mb[(b * 2 + bp, b2 * 2 + bp2)]
                                                    * rho.matrix()[(ap2 * 2 + bp2, ap * 2 + bp)];
                                                s += x;
                                            }
                                        }
                                    }
                                }
                                direct[(a * 2 + b, a2 * 2 + b2)] = s;
                            }
                        }
                    }
                }
                assert!(max_abs_diff(dm.element(ia, ib), &direct) < 1e-14);
            }
        }
        for e in &dm.elements {
            assert!(min_eigenvalue(e) > -1e-12);
        }
    }

    #[test]
    fn distributed_measurement_rejects_dim_mismatch() {
        let rho = BipartiteState::max_entangled(3);
        let bell = Povm::bell(2);
        assert!(distributed_measurement_from(&rho, &bell, &bell).is_err());
    }

    #[test]
    fn povm_rejects_incomplete_elements() {
        let dims = SystemDims::single(2).unwrap();
        let r = Povm::new(vec![identity(2) * cr(0.5)], dims);
        assert!(matches!(r, Err(Error::Completeness { .. })));
    }

    #[test]
    fn bell_teleportation_is_conjugation() {
        for d in [2usize, 3] {
            let rho = BipartiteState::max_entangled(d);
            let inst = teleportation_instrument_from(&rho, &Povm::bell(d)).unwrap();
            let hw = heisenberg_weyl_set(d);
            let mut rng = random::rng(7 + d as u64);
            let phi = random::random_density(d, d, &mut rng);
            for (a, j) in inst.choi_list.iter().enumerate() {
                let out = apply_choi(j, &phi).unwrap();
                let w = hw[a].adjoint();
                let expected = conjugate(&w, &phi) / cr((d * d) as f64);
                assert!(max_abs_diff(&out, &expected) < 1e-13, "d={d} a={a}");
            }
            assert!(inst.aggregate().trace_preservation_deviation() < 1e-13);
        }
    }

    #[test]
    fn maximally_mixed_resource_gives_no_signal() {
        let rho = BipartiteState::maximally_mixed(2, 2);
        let inst = teleportation_instrument_from(&rho, &Povm::bell(2)).unwrap();
        let phi = CMatrix::from_fn(2, 2, |r, c2| if r == 0 && c2 == 0 { cr(1.0) } else { cr(0.0) });
        for j in &inst.choi_list {
            let out = apply_choi(j, &phi).unwrap();
            assert!(max_abs_diff(&out, &(identity(2) * cr(out.trace().re / 2.0))) < 1e-14);
        }
    }

    #[test]
    fn trivial_povm_instrument_outputs_marginal() {
        let mut rng = random::rng(9);
        let rho = BipartiteState::from_matrix_hermitized(random::random_density(6, 6, &mut rng), 2, 3)
            .unwrap();
        let inst =
            teleportation_instrument_from(&rho, &Povm::trivial(SystemDims::bipartite(2, 2).unwrap()))
                .unwrap();
        let marginal = partial_trace(rho.matrix(), &[2, 3], &[1]).unwrap();
        let phi = random::random_density(2, 1, &mut rng);
        let out = apply_choi(&inst.choi_list[0], &phi).unwrap();
        assert!(max_abs_diff(&out, &marginal) < 1e-14);
    }

    #[test]
    fn adjoint_matches_trace_duality() {
        let mut rng = random::rng(11);
        let j = ChoiMatrix::from_matrix(random::random_channel_choi(2, 3, 2, &mut rng), 2, 3).unwrap();
        let rho = random::random_density(2, 2, &mut rng);
        let y = random::random_hermitian(3, &mut rng);
        let lhs = linalg::trace_product(&y, &apply_choi(&j, &rho).unwrap());
        let rhs = linalg::trace_product(&apply_choi_adjoint(&j, &y).unwrap(), &rho);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn simulation_identity_and_coarse_graining() {
        let rho = BipartiteState::max_entangled(2);
        let bell = Povm::bell(2);
        let dm = distributed_measurement_from(&rho, &bell, &bell).unwrap();
        let id = ChoiMatrix::identity_channel(4);
        let same = ResponseKernel::deterministic((4, 4), (4, 4), 1, |_, i, j| (i, j));
        let n = simulate_npeb(&dm, &[1.0], &same, std::slice::from_ref(&id)).unwrap();
        for (x, y) in n.elements.iter().zip(&dm.elements) {
            assert!(max_abs_diff(x, y) < 1e-13);
        }
        let coarse = ResponseKernel::deterministic((4, 4), (1, 1), 1, |_, _, _| (0, 0));
        let n = simulate_npeb(&dm, &[1.0], &coarse, &[id]).unwrap();
        assert!(max_abs_diff(&n.elements[0], &identity(4)) < 1e-13);
    }

    #[test]
    fn simulation_matches_brute_force_sum() {
        let mut rng = random::rng(12);
        let rho = BipartiteState::max_entangled(2);
        let bell = Povm::bell(2);
        let dm = distributed_measurement_from(&rho, &bell, &bell).unwrap();
        let chans: Vec<ChoiMatrix> = (0..2)
            .map(|_| ChoiMatrix::from_matrix(random::random_channel_choi(4, 4, 3, &mut rng), 4, 4).unwrap())
            .collect();
        let kernel = ResponseKernel::deterministic((4, 4), (2, 2), 2, |l, i, j| ((i + l) % 2, (j * 3 + l) % 2));
        let w = [0.3, 0.7];
        let n = simulate_npeb(&dm, &w, &kernel, &chans).unwrap();
        for mn in 0..4 {
            let mut direct = CMatrix::zeros(4, 4);
            for l in 0..2 {
                for ij in 0..16 {
                    let p = kernel.table[l][ij][mn];
                    if p > 0.0 {
                        // Heisenberg picture via the Kraus-free trace-duality oracle:
                        // entries of E†(M) are tr(M E(|q⟩⟨p|)).
                        let e = &chans[l];
                        let mij = &dm.elements[ij];
                        let pulled = CMatrix::from_fn(4, 4, |r, s| {
                            let unit = CMatrix::from_fn(4, 4, |a, b| {
                                if a == s && b == r { cr(1.0) } else { cr(0.0) }
                            });
                            (mij * apply_choi(e, &unit).unwrap()).trace()
                        });
                        direct += pulled * cr(w[l] * p);
                    }
                }
            }
            assert!(max_abs_diff(&n.elements[mn], &direct) < 1e-12);
        }
    }

    #[test]
    fn simulation_rejects_bad_kernel() {
        let rho = BipartiteState::max_entangled(2);
        let bell = Povm::bell(2);
        let dm = distributed_measurement_from(&rho, &bell, &bell).unwrap();
        let mut k = ResponseKernel::deterministic((4, 4), (1, 1), 1, |_, _, _| (0, 0));
        k.table[0][3][0] = 0.5;
        let id = ChoiMatrix::identity_channel(4);
        assert!(simulate_npeb(&dm, &[1.0], &k, &[id]).is_err());
    }

    #[test]
    fn local_product_choi_is_trace_preserving() {
        let mut rng = random::rng(13);
        let a = ChoiMatrix::from_matrix(random::random_channel_choi(2, 2, 2, &mut rng), 2, 2).unwrap();
        let b = ChoiMatrix::from_matrix(random::random_channel_choi(2, 2, 3, &mut rng), 2, 2).unwrap();
        let ab = ChoiMatrix::local_product(&a, &b).unwrap();
        assert!(ab.trace_preservation_deviation() < 1e-13);
        let x = random::random_density(2, 2, &mut rng);
        let y = random::random_density(2, 2, &mut rng);
        let lhs = apply_choi(&ab, &kron(&x, &y)).unwrap();
        let rhs = kron(&apply_choi(&a, &x).unwrap(), &apply_choi(&b, &y).unwrap());
        assert!(max_abs_diff(&lhs, &rhs) < 1e-13);
    }

    #[test]
    fn state_validation() {
        let bad = CMatrix::from_diagonal(&linalg::CVector::from_vec(vec![cr(1.2), cr(-0.2)]));
        let r = BipartiteState::from_matrix(kron(&bad, &(identity(2) * cr(0.5))), 2, 2);
        assert!(matches!(r, Err(Error::NotPositive { .. })));
        let r = BipartiteState::from_matrix(identity(4) * cr(0.5), 2, 2);
        assert!(matches!(r, Err(Error::Trace { .. })));
        let sub = BipartiteState::substate(
            HermitianOperator::new(identity(4) * cr(0.1), SystemDims::bipartite(2, 2).unwrap()).unwrap(),
        );
        assert!(sub.is_ok());
        let _ = c(0.0, 0.0);
    }
}
