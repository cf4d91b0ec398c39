//! Lindblad dynamics of the damped atom-cavity system.
//!
//! The master equation is
//!
//! ```text
//! drho/dt = -i[H, rho] + kappa (2 a rho a' - a'a rho - rho a'a)
//!           + gamma sum_j (2 s-^j rho s+^j - s+^j s-^j rho - rho s+^j s-^j)
//! ```
//!
//! so a collapse channel with prefactor `p` contributes
//! `(p/2)(2 L rho L' - L'L rho - rho L'L)`: the cavity channel carries
//! prefactor `2 kappa` (field amplitude decays at `kappa`, photon number at
//! `2 kappa`), atomic channels carry `2 gamma`.
//!
//! Without atomic decay the atomic singlet (x) cavity subspace and its
//! complement evolve independently; the dark-projector weight
//! `P = Tr[rho (|D><D| (x) I)]` is conserved and the steady state is the
//! P-weighted mixture of the per-sector steady states. The sectorized solver
//! exploits exactly that structure instead of extracting a nullspace from the
//! degenerate full Liouvillian.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{self, HilbertSpace, StateLabel, SystemParams};
use crate::numerics::{
    self, adjoint, frobenius_norm, identity, kron, linear_solve, matmul, trace, unvectorize,
    vectorize, CMatrix, CVector, NumericsError, I, ONE, ZERO,
};

const HERMITICITY_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const POSITIVITY_TOL: f64 = -1e-9;
const TOP_FOCK_TOL: f64 = 1e-8;
const TRACE_DRIFT_TOL: f64 = 1e-8;
const STEADY_RESIDUAL_TOL: f64 = 1e-8;
const CROSS_SECTOR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("time step {dt} exceeds stability limit {limit:.3e}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("top Fock level populated to {population:.3e} at t = {time:.3} (limit {TOP_FOCK_TOL:.0e}); raise n_max")]
    TruncationBreach { time: f64, population: f64 },
    #[error("trace drifted by {drift:.3e} at t = {time:.3}; reduce dt")]
    TraceDrift { time: f64, drift: f64 },
    #[error("initial state has cross-sector coherences of magnitude {magnitude:.3e}; they decay to zero, pass discard_cross = true to drop them")]
    SectorLeak { magnitude: f64 },
    #[error("sectorized steady state requires gamma = 0 (atomic decay couples the sectors)")]
    GammaNonzero,
    #[error("steady-state residual {residual:.3e} exceeds {STEADY_RESIDUAL_TOL:.0e}")]
    ResidualTooLarge { residual: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Density matrix on the composite space. Construction checks Hermiticity,
/// unit trace and positivity, so a value of this type can be trusted
/// downstream.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self, EvolutionError> {
        if matrix.nrows() != matrix.ncols() {
            return Err(EvolutionError::InvalidState(format!(
                "density matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(EvolutionError::InvalidState(
                "density matrix has non-finite entries".into(),
            ));
        }
        let herm_defect = frobenius_norm(&(&matrix - &adjoint(&matrix)));
        if herm_defect > HERMITICITY_TOL {
            return Err(EvolutionError::InvalidState(format!(
                "density matrix not Hermitian (defect {herm_defect:.3e})"
            )));
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(EvolutionError::InvalidState(format!(
                "density matrix trace {tr} is not 1"
            )));
        }
        let symmetrized = (&matrix + &adjoint(&matrix)).mapv(|z| z * 0.5);
        let (eigs, _) = numerics::hermitian_eig(&symmetrized)?;
        if eigs.first().copied().unwrap_or(0.0) < POSITIVITY_TOL {
            return Err(EvolutionError::InvalidState(format!(
                "density matrix has negative eigenvalue {:.3e}",
                eigs[0]
            )));
        }
        Ok(Self { matrix: symmetrized })
    }

    pub fn from_pure(psi: &CVector) -> Result<Self, EvolutionError> {
        let norm = numerics::vector_norm(psi);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(EvolutionError::InvalidState(format!(
                "pure state norm {norm} is not 1"
            )));
        }
        let normalized = psi.mapv(|z| z / norm);
        Ok(Self {
            matrix: numerics::outer(&normalized),
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn purity(&self) -> f64 {
        trace(&matmul(&self.matrix, &self.matrix)).re
    }
}

/// Which physical decay a collapse operator models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Cavity photon loss; jumps on this channel are detector clicks.
    Cavity,
    /// Spontaneous emission of atom j.
    AtomicDecay(usize),
}

/// One collapse channel `(p/2)(2 L rho L' - L'L rho - rho L'L)`.
#[derive(Debug, Clone)]
pub struct LindbladChannel {
    pub operator: CMatrix,
    pub prefactor: f64,
    pub kind: ChannelKind,
}

/// Hamiltonian plus collapse channels, with cached products for the
/// integrator inner loop.
#[derive(Debug, Clone)]
pub struct LindbladSpec {
    hamiltonian: CMatrix,
    channels: Vec<LindbladChannel>,
    /// Cached L'L per channel.
    ldl: Vec<CMatrix>,
    /// Fastest rate appearing in the generator; bounds the stable RK4 step.
    rate_scale: f64,
}

impl LindbladSpec {
    pub fn new(
        hamiltonian: CMatrix,
        channels: Vec<LindbladChannel>,
        rate_scale: f64,
    ) -> Result<Self, EvolutionError> {
        let dim = hamiltonian.nrows();
        if hamiltonian.ncols() != dim {
            return Err(EvolutionError::InvalidState(
                "hamiltonian must be square".into(),
            ));
        }
        for ch in &channels {
            if ch.operator.nrows() != dim || ch.operator.ncols() != dim {
                return Err(EvolutionError::InvalidState(
                    "collapse operator dimension differs from hamiltonian".into(),
                ));
            }
            if ch.prefactor < 0.0 {
                return Err(EvolutionError::InvalidState(format!(
                    "negative channel prefactor {}",
                    ch.prefactor
                )));
            }
        }
        let ldl = channels
            .iter()
            .map(|ch| matmul(&adjoint(&ch.operator), &ch.operator))
            .collect();
        Ok(Self {
            hamiltonian,
            channels,
            ldl,
            rate_scale,
        })
    }

    /// Rotating-frame generator for the given parameters: cavity channel
    /// `(a, 2 kappa)` always, atomic channels `(sigma-^j, 2 gamma)` when
    /// gamma > 0.
    pub fn from_params(params: &SystemParams, space: &HilbertSpace) -> Self {
        let mut channels = vec![LindbladChannel {
            operator: model::annihilation(space),
            prefactor: 2.0 * params.kappa,
            kind: ChannelKind::Cavity,
        }];
        if params.gamma > 0.0 {
            for atom in 0..2 {
                channels.push(LindbladChannel {
                    operator: model::single_atom_sigma_minus(space, atom),
                    prefactor: 2.0 * params.gamma,
                    kind: ChannelKind::AtomicDecay(atom),
                });
            }
        }
        let rate_scale = params
            .kappa
            .max(params.g)
            .max(params.delta_p.abs())
            .max(params.epsilon)
            .max(params.gamma);
        Self::new(model::hamiltonian_rotating(params, space), channels, rate_scale)
            .expect("dimensions are consistent by construction")
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[LindbladChannel] {
        &self.channels
    }

    pub fn rate_scale(&self) -> f64 {
        self.rate_scale
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn has_atomic_decay(&self) -> bool {
        self.channels
            .iter()
            .any(|ch| matches!(ch.kind, ChannelKind::AtomicDecay(_)))
    }

    /// Non-Hermitian generator of the no-jump evolution,
    /// H_eff = H - (i/2) sum_k p_k L_k' L_k.
    pub fn effective_hamiltonian(&self) -> CMatrix {
        let mut h = self.hamiltonian.clone();
        for (ch, ldl) in self.channels.iter().zip(&self.ldl) {
            h = h + ldl.mapv(|z| z * Complex64::new(0.0, -0.5 * ch.prefactor));
        }
        h
    }

    /// Upper bound on the total jump rate, sum_k p_k ||L_k'L_k||_inf.
    /// Used by the trajectory step guard.
    pub fn jump_rate_bound(&self) -> f64 {
        self.channels
            .iter()
            .zip(&self.ldl)
            .map(|(ch, ldl)| {
                let max_row = ldl
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
                    .fold(0.0f64, f64::max);
                ch.prefactor * max_row
            })
            .sum()
    }
}

/// Right-hand side of the master equation. The output is traceless to
/// machine precision for any Hermitian input.
pub fn liouvillian_apply(spec: &LindbladSpec, rho: &CMatrix) -> CMatrix {
    assert_eq!(
        rho.nrows(),
        spec.dim(),
        "liouvillian_apply: state dimension differs from generator"
    );
    let h = &spec.hamiltonian;
    let comm = &matmul(h, rho) - &matmul(rho, h);
    let mut out = comm.mapv(|z| -I * z);
    for (ch, ldl) in spec.channels.iter().zip(&spec.ldl) {
        if ch.prefactor == 0.0 {
            continue;
        }
        let l_rho = matmul(&ch.operator, rho);
        let sandwich = matmul(&l_rho, &adjoint(&ch.operator));
        let left = matmul(ldl, rho);
        let right = matmul(rho, ldl);
        let half = 0.5 * ch.prefactor;
        out = out
            + sandwich.mapv(|z| z * ch.prefactor)
            - left.mapv(|z| z * half)
            - right.mapv(|z| z * half);
    }
    out
}

/// Fixed-step RK4 integration controls.
#[derive(Debug, Clone, Copy)]
pub struct IntegrationOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Steps between recorded snapshots.
    pub record_stride: usize,
}

impl IntegrationOptions {
    pub fn new(t_end: f64, dt: f64, record_stride: usize) -> Self {
        Self {
            t_end,
            dt,
            record_stride: record_stride.max(1),
        }
    }
}

/// Time series of validated density matrices.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub flags: Vec<String>,
}

impl EvolutionResult {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("integration records at least t=0")
    }
}

/// Classic fixed-step RK4 for the master equation.
///
/// Every recorded state is renormalized in trace (drift beyond 1e-8 is an
/// error) and re-validated; the top Fock population is checked each step.
pub fn integrate(
    spec: &LindbladSpec,
    rho0: &DensityMatrix,
    opts: &IntegrationOptions,
) -> Result<EvolutionResult, EvolutionError> {
    if rho0.dim() != spec.dim() {
        return Err(EvolutionError::InvalidState(
            "initial state dimension differs from generator".into(),
        ));
    }
    let limit = 0.01 / spec.rate_scale.max(f64::MIN_POSITIVE);
    if !(opts.dt > 0.0) || opts.dt > limit {
        return Err(EvolutionError::StepTooLarge {
            dt: opts.dt,
            limit,
        });
    }
    let space = HilbertSpace::from_dim(spec.dim());
    let steps = (opts.t_end / opts.dt).round().max(0.0) as usize;

    let mut rho = rho0.matrix().clone();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut flags = Vec::new();
    let mut record =
        |t: f64, rho: &CMatrix, flags: &mut Vec<String>| -> Result<(), EvolutionError> {
            let tr = trace(rho).re;
            let drift = (tr - 1.0).abs();
            if drift > TRACE_DRIFT_TOL {
                return Err(EvolutionError::TraceDrift { time: t, drift });
            }
            if drift > 1e-11 {
                flags.push(format!("trace renormalized by {drift:.2e} at t = {t:.3}"));
            }
            let normalized = rho.mapv(|z| z / tr);
            times.push(t);
            states.push(DensityMatrix::new(normalized)?);
            Ok(())
        };

    record(0.0, &rho, &mut flags)?;
    let dt = opts.dt;
    let half = dt / 2.0;
    for step in 0..steps {
        let k1 = liouvillian_apply(spec, &rho);
        let k2 = liouvillian_apply(spec, &(&rho + &k1.mapv(|z| z * half)));
        let k3 = liouvillian_apply(spec, &(&rho + &k2.mapv(|z| z * half)));
        let k4 = liouvillian_apply(spec, &(&rho + &k3.mapv(|z| z * dt)));
        let incr = (&(&k1 + &k4) + &(&k2 + &k3).mapv(|z| z * 2.0)).mapv(|z| z * (dt / 6.0));
        rho = &rho + &incr;

        let t = (step + 1) as f64 * dt;
        if let Some(space) = space {
            let top = top_fock_population(&rho, &space);
            if top > TOP_FOCK_TOL {
                return Err(EvolutionError::TruncationBreach {
                    time: t,
                    population: top,
                });
            }
        }
        if (step + 1) % opts.record_stride == 0 || step + 1 == steps {
            record(t, &rho, &mut flags)?;
        }
    }
    Ok(EvolutionResult {
        times,
        states,
        flags,
    })
}

fn top_fock_population(rho: &CMatrix, space: &HilbertSpace) -> f64 {
    (0..4)
        .map(|a| rho[(space.basis_index(a / 2, a % 2, space.n_max()), space.basis_index(a / 2, a % 2, space.n_max()))].re)
        .sum()
}

/// The two dynamically disconnected subspaces at gamma = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    /// span{ |D> (x) |n> }: atoms locked in the dark singlet.
    Singlet,
    /// The orthogonal complement, span{ |G>, |B>, |E> } (x) cavity.
    Triplet,
}

/// Isometry whose columns form an orthonormal basis of the sector.
pub fn sector_isometry(space: &HilbertSpace, sector: Sector) -> CMatrix {
    let nc = space.fock_dim();
    let labels: &[StateLabel] = match sector {
        Sector::Singlet => &[StateLabel::D],
        Sector::Triplet => &[StateLabel::G, StateLabel::B, StateLabel::E],
    };
    let mut iso = CMatrix::zeros((space.dim(), labels.len() * nc));
    for (b, &label) in labels.iter().enumerate() {
        let atomic = model::atomic_state(label);
        for n in 0..nc {
            let col = b * nc + n;
            for a in 0..4 {
                iso[(a * nc + n, col)] = atomic[a];
            }
        }
    }
    iso
}

fn restrict(m: &CMatrix, iso: &CMatrix) -> CMatrix {
    matmul(&adjoint(iso), &matmul(m, iso))
}

/// Dense superoperator of the master equation in row-major vectorization.
pub fn liouvillian_superoperator(h: &CMatrix, channels: &[(CMatrix, f64)]) -> CMatrix {
    let d = h.nrows();
    let eye = identity(d);
    let mut sup = (&kron(h, &eye) - &kron(&eye, &h.t().to_owned())).mapv(|z| -I * z);
    for (l, prefactor) in channels {
        let ldl = matmul(&adjoint(l), l);
        let jump = kron(l, &l.mapv(|z| z.conj()));
        let left = kron(&ldl, &eye);
        let right = kron(&eye, &ldl.t().to_owned());
        sup = sup
            + jump.mapv(|z| z * *prefactor)
            - left.mapv(|z| z * (0.5 * prefactor))
            - right.mapv(|z| z * (0.5 * prefactor));
    }
    sup
}

/// Unique steady state of an irreducible Lindblad generator, found by
/// replacing the first row of the vectorized Liouvillian with the trace-one
/// constraint.
pub fn solve_steady_state(
    h: &CMatrix,
    channels: &[(CMatrix, f64)],
) -> Result<CMatrix, EvolutionError> {
    let d = h.nrows();
    let sup = liouvillian_superoperator(h, channels);
    let mut system = sup.clone();
    for col in 0..d * d {
        system[(0, col)] = ZERO;
    }
    for i in 0..d {
        system[(0, i * d + i)] = ONE;
    }
    let mut rhs = CVector::zeros(d * d);
    rhs[0] = ONE;
    let x = linear_solve(&system, &rhs)?;
    let rho = unvectorize(&x, d);
    let rho = (&rho + &adjoint(&rho)).mapv(|z| z * 0.5);
    let tr = trace(&rho).re;
    let rho = rho.mapv(|z| z / tr);
    let residual = numerics::vector_norm(&numerics::matvec(&sup, &vectorize(&rho)));
    if residual > STEADY_RESIDUAL_TOL {
        return Err(EvolutionError::ResidualTooLarge { residual });
    }
    Ok(rho)
}

/// Steady state resolved by sector weights.
///
/// Computes `P = Tr[rho0 (|D><D| (x) I)]`, solves each sector's restricted
/// Liouvillian separately and returns `(1-P) rho_triplet + P rho_singlet`.
/// Cross-sector coherences in `rho0` decay and carry no weight; they are
/// discarded with a warning when `discard_cross` is set and rejected
/// otherwise.
pub fn steady_state_sectorized(
    spec: &LindbladSpec,
    rho0: &DensityMatrix,
    discard_cross: bool,
) -> Result<DensityMatrix, EvolutionError> {
    if spec.has_atomic_decay() {
        return Err(EvolutionError::GammaNonzero);
    }
    if rho0.dim() != spec.dim() {
        return Err(EvolutionError::InvalidState(
            "initial state dimension differs from generator".into(),
        ));
    }
    let space = HilbertSpace::from_dim(spec.dim()).ok_or_else(|| {
        EvolutionError::InvalidState("generator dimension is not 4 (n_max + 1)".into())
    })?;
    let iso_s = sector_isometry(&space, Sector::Singlet);
    let iso_t = sector_isometry(&space, Sector::Triplet);

    let cross = matmul(&adjoint(&iso_s), &matmul(rho0.matrix(), &iso_t));
    let cross_norm = frobenius_norm(&cross);
    if cross_norm > CROSS_SECTOR_TOL {
        if !discard_cross {
            return Err(EvolutionError::SectorLeak {
                magnitude: cross_norm,
            });
        }
        log::warn!(
            "discarding cross-sector coherences of magnitude {cross_norm:.3e}; they decay to zero"
        );
    }

    let weight = trace(&restrict(rho0.matrix(), &iso_s)).re.clamp(0.0, 1.0);
    let mut out = CMatrix::zeros((spec.dim(), spec.dim()));
    for (iso, w) in [(&iso_s, weight), (&iso_t, 1.0 - weight)] {
        if w < 1e-14 {
            continue;
        }
        let h_r = restrict(&spec.hamiltonian, iso);
        let channels: Vec<(CMatrix, f64)> = spec
            .channels
            .iter()
            .map(|ch| (restrict(&ch.operator, iso), ch.prefactor))
            .collect();
        let rho_r = solve_steady_state(&h_r, &channels)?;
        let embedded = matmul(iso, &matmul(&rho_r, &adjoint(iso)));
        out = out + embedded.mapv(|z| z * w);
    }
    let residual = frobenius_norm(&liouvillian_apply(spec, &out));
    if residual > STEADY_RESIDUAL_TOL {
        return Err(EvolutionError::ResidualTooLarge { residual });
    }
    DensityMatrix::new(out)
}

/// Which steady-state branch a run has collapsed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Atoms in the dark singlet |D>; the cavity transmits like an empty one.
    Dark,
    /// Atoms relaxed toward |G>; probe interference blocks all transmission.
    Ground,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Dark => write!(f, "dark"),
            Branch::Ground => write!(f, "ground"),
        }
    }
}

/// Driven steady state of one branch, embedded on the composite space.
///
/// The dark branch restricts to the singlet ladder (exact for any g). The
/// ground branch restricts to the triplet sector; for g = 0 the atoms
/// decouple entirely and the atomic state is pinned to |G> instead, which
/// keeps the restricted generator irreducible.
pub fn branch_steady_state(
    params: &SystemParams,
    space: &HilbertSpace,
    branch: Branch,
) -> Result<DensityMatrix, EvolutionError> {
    if params.gamma > 0.0 {
        return Err(EvolutionError::GammaNonzero);
    }
    let spec = LindbladSpec::from_params(params, space);
    let iso = match branch {
        Branch::Dark => sector_isometry(space, Sector::Singlet),
        Branch::Ground if params.g > 0.0 => sector_isometry(space, Sector::Triplet),
        Branch::Ground => {
            // atoms frozen in |G>; cavity behaves as an empty driven cavity
            let nc = space.fock_dim();
            let atomic = model::atomic_state(StateLabel::G);
            let mut iso = CMatrix::zeros((space.dim(), nc));
            for n in 0..nc {
                for a in 0..4 {
                    iso[(a * nc + n, n)] = atomic[a];
                }
            }
            iso
        }
    };
    let h_r = restrict(&spec.hamiltonian, &iso);
    let channels: Vec<(CMatrix, f64)> = spec
        .channels
        .iter()
        .map(|ch| (restrict(&ch.operator, &iso), ch.prefactor))
        .collect();
    let rho_r = solve_steady_state(&h_r, &channels)?;
    let embedded = matmul(&iso, &matmul(&rho_r, &adjoint(&iso)));
    DensityMatrix::new(embedded)
}

/// Closed-form weak-drive transmission of each branch.
///
/// Dark branch: empty-cavity Lorentzian `k^2 / (k^2 + Dp^2)`. Ground branch:
/// the two one-excitation absorption channels interfere, giving
/// `k^2 / (k^2 + (Dp - 2 g^2 / Dp)^2)`, zero at Dp = 0 by continuity.
pub fn linear_response_transmission(params: &SystemParams, branch: Branch, delta_p: f64) -> f64 {
    let k2 = params.kappa * params.kappa;
    match branch {
        Branch::Dark => k2 / (k2 + delta_p * delta_p),
        Branch::Ground => {
            if delta_p == 0.0 {
                if params.g == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                let detuning = delta_p - 2.0 * params.g * params.g / delta_p;
                k2 / (k2 + detuning * detuning)
            }
        }
    }
}

/// The undriven steady-state mixture
/// `(1 - p) |G,0><G,0| + p |D,0><D,0|`.
pub fn dark_mixture_state(space: &HilbertSpace, p: f64) -> Result<DensityMatrix, EvolutionError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EvolutionError::InvalidState(format!(
            "mixture weight {p} outside [0, 1]"
        )));
    }
    let g0 = model::atom_fock(space, StateLabel::G, 0);
    let d0 = model::atom_fock(space, StateLabel::D, 0);
    let m = numerics::outer(&g0).mapv(|z| z * (1.0 - p)) + numerics::outer(&d0).mapv(|z| z * p);
    DensityMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{atom_fock, build_space, coherent_state};
    use crate::numerics::{inner, matvec, vector_norm};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_density(rng: &mut impl Rng, dim: usize) -> DensityMatrix {
        let m = CMatrix::from_shape_fn((dim, dim), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let psd = matmul(&m, &adjoint(&m));
        let tr = trace(&psd).re;
        DensityMatrix::new(psd.mapv(|z| z / tr)).unwrap()
    }

    #[test]
    fn ground_state_is_stationary() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        assert!(frobenius_norm(&liouvillian_apply(&spec, rho.matrix())) < 1e-14);
    }

    #[test]
    fn dark_one_photon_decays_at_twice_kappa() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let d1 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 1)).unwrap();
        let deriv = liouvillian_apply(&spec, d1.matrix());
        let d0 = atom_fock(&space, StateLabel::D, 0);
        let expect = numerics::outer(&d0).mapv(|z| z * 2.0) - d1.matrix().mapv(|z| z * 2.0);
        assert!(frobenius_norm(&(&deriv - &expect)) < 1e-12);
    }

    #[test]
    fn liouvillian_is_traceless() {
        let params = SystemParams::new(0.3, 0.2, 0.1)
            .with_gamma(0.05)
            .with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let rho = random_density(&mut rng, space.dim());
            let deriv = liouvillian_apply(&spec, rho.matrix());
            assert!(trace(&deriv).norm() < 1e-12);
        }
    }

    #[test]
    fn dark_vacuum_is_steady_under_integration() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 0)).unwrap();
        let out = integrate(&spec, &rho0, &IntegrationOptions::new(5.0, 0.005, 200)).unwrap();
        let diff = frobenius_norm(&(out.final_state().matrix() - rho0.matrix()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn empty_cavity_drives_to_coherent_state() {
        let params = SystemParams::new(0.0, 0.1, 0.0);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let vac = atom_fock(&space, StateLabel::G, 0);
        let rho0 = DensityMatrix::from_pure(&vac).unwrap();
        let out = integrate(&spec, &rho0, &IntegrationOptions::new(25.0, 0.005, 1000)).unwrap();
        let rho = out.final_state();

        let nbar = crate::observables::mean_photon(rho);
        let expect = (params.epsilon / params.kappa).powi(2);
        assert!((nbar - expect).abs() < 1e-6 * expect.max(1e-12) + 1e-12);

        let alpha = Complex64::new(0.0, -params.epsilon / params.kappa);
        let target = model::composite_state(
            &model::atomic_state(StateLabel::G),
            &coherent_state(&space, alpha),
        );
        let overlap = inner(&target, &matvec(rho.matrix(), &target)).re;
        assert!(overlap > 1.0 - 1e-9);
    }

    #[test]
    fn sectorized_matches_mixture_for_undriven_system() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        // |ge,0> has P = 1/2 and a cross-sector coherence that must be discarded.
        let mut psi = CVector::zeros(space.dim());
        psi[space.basis_index(0, 1, 0)] = ONE;
        let rho0 = DensityMatrix::from_pure(&psi).unwrap();
        assert!(matches!(
            steady_state_sectorized(&spec, &rho0, false),
            Err(EvolutionError::SectorLeak { .. })
        ));
        let ss = steady_state_sectorized(&spec, &rho0, true).unwrap();
        let expect = dark_mixture_state(&space, 0.5).unwrap();
        assert!(frobenius_norm(&(ss.matrix() - expect.matrix())) < 1e-10);
    }

    #[test]
    fn sectorized_rejects_atomic_decay() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_gamma(0.01).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        assert!(matches!(
            steady_state_sectorized(&spec, &rho0, true),
            Err(EvolutionError::GammaNonzero)
        ));
    }

    #[test]
    fn driven_dark_branch_is_displaced_vacuum() {
        let params = SystemParams::new(0.5, 0.01, 0.0);
        let space = build_space(&params);
        let ss = branch_steady_state(&params, &space, Branch::Dark).unwrap();
        let alpha = Complex64::new(0.0, -params.epsilon / params.kappa);
        let target = model::composite_state(
            &model::atomic_state(StateLabel::D),
            &coherent_state(&space, alpha),
        );
        let overlap = inner(&target, &matvec(ss.matrix(), &target)).re;
        assert!(overlap > 1.0 - 1e-10);
    }

    #[test]
    fn driven_ground_branch_is_trapped_and_dim() {
        let params = SystemParams::new(0.5, 0.005, 0.0);
        let space = build_space(&params);
        let ss = branch_steady_state(&params, &space, Branch::Ground).unwrap();
        assert!(crate::observables::mean_photon(&ss) < 1e-10);
        // agrees with a long direct integration
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        let out = integrate(&spec, &rho0, &IntegrationOptions::new(60.0, 0.005, 2000)).unwrap();
        assert!(frobenius_norm(&(ss.matrix() - out.final_state().matrix())) < 1e-7);
    }

    #[test]
    fn ground_branch_with_decoupled_atoms_is_empty_cavity() {
        let params = SystemParams::new(0.0, 0.05, 0.2);
        let space = build_space(&params);
        let ss = branch_steady_state(&params, &space, Branch::Ground).unwrap();
        let t = crate::observables::transmission(&ss, &params).unwrap();
        let lorentzian = linear_response_transmission(&params, Branch::Dark, params.delta_p);
        assert!((t - lorentzian).abs() < 1e-4);
    }

    #[test]
    fn steady_state_is_a_fixed_point_of_integration() {
        let params = SystemParams::new(0.5, 0.02, 0.0).with_n_max(3);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = dark_mixture_state(&space, 0.3).unwrap();
        let ss = steady_state_sectorized(&spec, &rho0, true).unwrap();
        let out = integrate(&spec, &ss, &IntegrationOptions::new(10.0, 0.005, 2000)).unwrap();
        assert!(frobenius_norm(&(out.final_state().matrix() - ss.matrix())) < 1e-7);
    }

    #[test]
    fn dark_projection_is_conserved_with_probe_on() {
        let params = SystemParams::new(0.5, 0.05, 0.1).with_n_max(4);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let mut psi = CVector::zeros(space.dim());
        psi[space.basis_index(0, 1, 0)] = ONE; // |ge,0>
        let rho0 = DensityMatrix::from_pure(&psi).unwrap();
        let out = integrate(&spec, &rho0, &IntegrationOptions::new(8.0, 0.004, 100)).unwrap();
        let p0 = crate::observables::dark_projection(&out.states[0]);
        for s in &out.states {
            assert!((crate::observables::dark_projection(s) - p0).abs() < 1e-9);
        }
    }

    #[test]
    fn atomic_decay_empties_everything() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_gamma(0.05).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 0)).unwrap();
        // t = 20/gamma
        let out = integrate(&spec, &rho0, &IntegrationOptions::new(400.0, 0.01, 4000)).unwrap();
        let g0 = atom_fock(&space, StateLabel::G, 0);
        let fid = inner(&g0, &matvec(out.final_state().matrix(), &g0)).re;
        assert!(fid > 1.0 - 1e-6);
    }

    #[test]
    fn step_guard_rejects_large_dt() {
        let params = SystemParams::new(0.5, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        assert!(matches!(
            integrate(&spec, &rho0, &IntegrationOptions::new(1.0, 0.5, 1)),
            Err(EvolutionError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn truncation_breach_is_detected() {
        // a strong resonant drive floods the truncated Fock space
        let mut params = SystemParams::new(0.0, 1.5, 0.0).with_n_max(2);
        params.epsilon = 1.5;
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let rho0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        let err = integrate(&spec, &rho0, &IntegrationOptions::new(10.0, 0.005, 100));
        assert!(matches!(err, Err(EvolutionError::TruncationBreach { .. })));
    }

    #[test]
    fn linear_response_closed_forms() {
        let params = SystemParams::new(0.1, 0.01, 0.0);
        assert!((linear_response_transmission(&params, Branch::Dark, 0.0) - 1.0).abs() < 1e-15);
        assert!(linear_response_transmission(&params, Branch::Ground, 0.0).abs() < 1e-15);
        let peak = std::f64::consts::SQRT_2 * params.g;
        for sign in [-1.0, 1.0] {
            let t = linear_response_transmission(&params, Branch::Ground, sign * peak);
            assert!((t - 1.0).abs() < 1e-12);
        }
        // dark branch half-width at kappa
        let t = linear_response_transmission(&params, Branch::Dark, params.kappa);
        assert!((t - 0.5).abs() < 1e-15);
    }

    #[test]
    fn superoperator_matches_direct_application() {
        let params = SystemParams::new(0.4, 0.1, 0.2).with_n_max(2);
        let space = build_space(&params);
        let spec = LindbladSpec::from_params(&params, &space);
        let channels: Vec<(CMatrix, f64)> = spec
            .channels()
            .iter()
            .map(|c| (c.operator.clone(), c.prefactor))
            .collect();
        let sup = liouvillian_superoperator(spec.hamiltonian(), &channels);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(&mut rng, space.dim());
        let direct = liouvillian_apply(&spec, rho.matrix());
        let via_sup = unvectorize(&matvec(&sup, &vectorize(rho.matrix())), space.dim());
        assert!(frobenius_norm(&(&direct - &via_sup)) < 1e-10);
    }
}
