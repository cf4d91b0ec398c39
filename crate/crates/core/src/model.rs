//! Physical model: two identical two-level atoms resonantly coupled to one
//! cavity mode.
//!
//! Lab frame (hbar = 1, kappa = 1 units):
//!
//! ```text
//! H = omega a'a + (omega/2) Sz + g (a S+ + a' S-)
//! ```
//!
//! with collective spin operators S+- = sum_j sigma+-^j, Sz = sum_j sigma_z^j.
//! The weak probe eps(a e^{i wp t} + a' e^{-i wp t}) is handled in the frame
//! rotating at the probe frequency, where the generator becomes
//! time-independent:
//!
//! ```text
//! H~ = -Dp a'a - (Dp/2) Sz + g (a S+ + a' S-) + eps (a + a')
//! ```
//!
//! with Dp = wp - omega. Mean photon number and transmission are invariant
//! under this transformation; `omega` is kept only so lab-frame energies can
//! be reported.
//!
//! Basis ordering is fixed once and for all as atom1 (x) atom2 (x) cavity
//! with the cavity index fastest-varying; every partial trace in the crate
//! relies on it. Atomic levels are ordered {|g>, |e>}.

use std::collections::HashMap;
use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::{adjoint, kron, matmul, matvec, CMatrix, CVector, ONE};

/// All physical rates and truncation settings, in units of kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Degenerate cavity/atom frequency omega. Only enters lab-frame energy
    /// reporting; the rotating-frame dynamics cancel it.
    pub omega: f64,
    /// Atom-field coupling g.
    pub g: f64,
    /// Cavity field decay rate; the unit, fixed to 1.
    pub kappa: f64,
    /// Probe strength eps.
    pub epsilon: f64,
    /// Probe-cavity detuning Dp = wp - omega.
    pub delta_p: f64,
    /// Spontaneous-emission rate per atom. Zero unless explicitly enabled.
    pub gamma: f64,
    /// Fock-space truncation: photon numbers 0..=n_max.
    pub n_max: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("kappa must be positive (and 1.0 for the CLI unit convention), got {0}")]
    InvalidKappa(f64),
    #[error("{name} must be nonnegative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("n_max must be at least 2, got {0}")]
    TruncationTooSmall(usize),
    #[error("{name} must be finite")]
    NonFinite { name: &'static str },
}

impl SystemParams {
    /// Parameters with the common defaults: kappa = 1, omega = 1, gamma = 0,
    /// n_max = 4.
    pub fn new(g: f64, epsilon: f64, delta_p: f64) -> Self {
        Self {
            omega: 1.0,
            g,
            kappa: 1.0,
            epsilon,
            delta_p,
            gamma: 0.0,
            n_max: 4,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    /// Check invariants. A probe stronger than the coupling is allowed but
    /// breaks the weak-probe assumptions, so it only warns.
    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, value) in [
            ("omega", self.omega),
            ("g", self.g),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("delta_p", self.delta_p),
            ("gamma", self.gamma),
        ] {
            if !value.is_finite() {
                return Err(ParamsError::NonFinite { name });
            }
        }
        if self.kappa <= 0.0 {
            return Err(ParamsError::InvalidKappa(self.kappa));
        }
        for (name, value) in [("g", self.g), ("epsilon", self.epsilon), ("gamma", self.gamma)] {
            if value < 0.0 {
                return Err(ParamsError::NegativeRate { name, value });
            }
        }
        if self.n_max < 2 {
            return Err(ParamsError::TruncationTooSmall(self.n_max));
        }
        if self.g > 0.0 && self.epsilon > self.g {
            log::warn!(
                "probe epsilon = {} exceeds coupling g = {}; the weak-probe readout regime needs eps << g",
                self.epsilon,
                self.g
            );
        }
        Ok(())
    }
}

/// Composite Hilbert space atom1 (x) atom2 (x) cavity, cavity index fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertSpace {
    n_max: usize,
}

impl HilbertSpace {
    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Subsystem dimensions `[2, 2, n_max + 1]`.
    pub fn dims(&self) -> [usize; 3] {
        [2, 2, self.n_max + 1]
    }

    /// Cavity factor dimension.
    pub fn fock_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        4 * self.fock_dim()
    }

    /// Index of the product basis state |a1 a2 n> (atomic levels g = 0,
    /// e = 1).
    pub fn basis_index(&self, a1: usize, a2: usize, n: usize) -> usize {
        debug_assert!(a1 < 2 && a2 < 2 && n <= self.n_max);
        (a1 * 2 + a2) * self.fock_dim() + n
    }

    /// Recover the truncation from a composite-space operator dimension.
    pub fn from_dim(dim: usize) -> Option<Self> {
        if dim % 4 == 0 && dim >= 4 {
            Some(Self { n_max: dim / 4 - 1 })
        } else {
            None
        }
    }
}

pub fn build_space(params: &SystemParams) -> HilbertSpace {
    HilbertSpace::new(params.n_max)
}

/// Labels for the states the dynamics singles out.
///
/// `G`, `B`, `D`, `E` name atomic states (ground, bright triplet, dark
/// singlet, doubly excited); `Plus`/`Minus` the one-excitation dressed
/// states; `Fock(n)` a cavity number state; `DarkN(n)` the decoupled
/// |D> (x) |n> ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateLabel {
    G,
    B,
    D,
    E,
    Plus,
    Minus,
    Fock(usize),
    DarkN(usize),
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateLabel::G => write!(f, "G"),
            StateLabel::B => write!(f, "B"),
            StateLabel::D => write!(f, "D"),
            StateLabel::E => write!(f, "E"),
            StateLabel::Plus => write!(f, "+"),
            StateLabel::Minus => write!(f, "-"),
            StateLabel::Fock(n) => write!(f, "Fock({n})"),
            StateLabel::DarkN(n) => write!(f, "D,{n}"),
        }
    }
}

/// A labeled unit-norm state vector.
#[derive(Debug, Clone)]
pub struct NamedState {
    pub label: StateLabel,
    pub vector: CVector,
}

/// A named eigenstate of the coupled system together with its lab-frame
/// energy.
#[derive(Debug, Clone)]
pub struct DressedState {
    pub label: StateLabel,
    pub vector: CVector,
    pub energy: f64,
}

/// Atomic basis states on the 4-dimensional atom1 (x) atom2 factor.
pub fn atomic_state(label: StateLabel) -> CVector {
    let mut v = CVector::zeros(4);
    let s = 1.0 / SQRT_2;
    match label {
        StateLabel::G => v[0] = ONE,                       // |gg>
        StateLabel::E => v[3] = ONE,                       // |ee>
        StateLabel::B => {
            v[1] = Complex64::new(s, 0.0);                 // |ge>
            v[2] = Complex64::new(s, 0.0);                 // |eg>
        }
        StateLabel::D => {
            v[1] = Complex64::new(s, 0.0);
            v[2] = Complex64::new(-s, 0.0);
        }
        other => panic!("{other} is not an atomic state"),
    }
    v
}

/// Cavity number state |n>.
pub fn fock_state(space: &HilbertSpace, n: usize) -> CVector {
    assert!(n <= space.n_max(), "Fock index {n} above truncation");
    let mut v = CVector::zeros(space.fock_dim());
    v[n] = ONE;
    v
}

/// Coherent state |alpha> truncated to the Fock cutoff and renormalized.
pub fn coherent_state(space: &HilbertSpace, alpha: Complex64) -> CVector {
    let mut v = CVector::zeros(space.fock_dim());
    let mut amp = ONE;
    v[0] = amp;
    for n in 1..space.fock_dim() {
        amp *= alpha / Complex64::new((n as f64).sqrt(), 0.0);
        v[n] = amp;
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / norm)
}

/// |atomic> (x) |cavity> on the composite space.
pub fn composite_state(atomic: &CVector, cavity: &CVector) -> CVector {
    assert_eq!(atomic.len(), 4);
    let mut out = CVector::zeros(4 * cavity.len());
    for a in 0..4 {
        for n in 0..cavity.len() {
            out[a * cavity.len() + n] = atomic[a] * cavity[n];
        }
    }
    out
}

/// |label> (x) |n> for an atomic label.
pub fn atom_fock(space: &HilbertSpace, label: StateLabel, n: usize) -> CVector {
    composite_state(&atomic_state(label), &fock_state(space, n))
}

fn identity2() -> CMatrix {
    CMatrix::eye(2)
}

fn sigma_minus_2x2() -> CMatrix {
    let mut m = CMatrix::zeros((2, 2));
    m[(0, 1)] = ONE; // |g><e|
    m
}

fn sigma_z_2x2() -> CMatrix {
    let mut m = CMatrix::zeros((2, 2));
    m[(0, 0)] = -ONE;
    m[(1, 1)] = ONE;
    m
}

/// Cavity annihilation operator embedded on the composite space.
pub fn annihilation(space: &HilbertSpace) -> CMatrix {
    let nc = space.fock_dim();
    let mut a = CMatrix::zeros((nc, nc));
    for n in 1..nc {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    kron(&kron(&identity2(), &identity2()), &a)
}

/// Number operator a'a embedded on the composite space.
pub fn number_operator(space: &HilbertSpace) -> CMatrix {
    let a = annihilation(space);
    matmul(&adjoint(&a), &a)
}

/// sigma-^j for atom j (0 or 1), embedded on the composite space.
pub fn single_atom_sigma_minus(space: &HilbertSpace, atom: usize) -> CMatrix {
    let ic = CMatrix::eye(space.fock_dim());
    match atom {
        0 => kron(&kron(&sigma_minus_2x2(), &identity2()), &ic),
        1 => kron(&kron(&identity2(), &sigma_minus_2x2()), &ic),
        _ => panic!("atom index must be 0 or 1"),
    }
}

/// Collective lowering operator S- = sigma-^1 + sigma-^2.
pub fn collective_lower(space: &HilbertSpace) -> CMatrix {
    &single_atom_sigma_minus(space, 0) + &single_atom_sigma_minus(space, 1)
}

/// Collective inversion Sz = sigma_z^1 + sigma_z^2.
pub fn collective_sz(space: &HilbertSpace) -> CMatrix {
    let ic = CMatrix::eye(space.fock_dim());
    let s1 = kron(&kron(&sigma_z_2x2(), &identity2()), &ic);
    let s2 = kron(&kron(&identity2(), &sigma_z_2x2()), &ic);
    &s1 + &s2
}

/// Lab-frame Tavis-Cummings Hamiltonian
/// H = omega a'a + (omega/2) Sz + g (a S+ + a' S-).
pub fn hamiltonian_lab(params: &SystemParams, space: &HilbertSpace) -> CMatrix {
    let a = annihilation(space);
    let ad = adjoint(&a);
    let n = matmul(&ad, &a);
    let sm = collective_lower(space);
    let sp = adjoint(&sm);
    let sz = collective_sz(space);
    let coupling = &matmul(&a, &sp) + &matmul(&ad, &sm);
    let mut h = n.mapv(|z| z * params.omega);
    h = h + sz.mapv(|z| z * (params.omega / 2.0));
    h + coupling.mapv(|z| z * params.g)
}

/// Rotating-frame Hamiltonian with the probe drive folded in:
/// H~ = -Dp a'a - (Dp/2) Sz + g (a S+ + a' S-) + eps (a + a').
pub fn hamiltonian_rotating(params: &SystemParams, space: &HilbertSpace) -> CMatrix {
    let a = annihilation(space);
    let ad = adjoint(&a);
    let n = matmul(&ad, &a);
    let sm = collective_lower(space);
    let sp = adjoint(&sm);
    let sz = collective_sz(space);
    let coupling = &matmul(&a, &sp) + &matmul(&ad, &sm);
    let drive = &a + &ad;
    let mut h = n.mapv(|z| z * (-params.delta_p));
    h = h + sz.mapv(|z| z * (-params.delta_p / 2.0));
    h = h + coupling.mapv(|z| z * params.g);
    h + drive.mapv(|z| z * params.epsilon)
}

/// The eigenstates the cavity decay connects: |G,0> at energy -omega, the
/// one-excitation dressed pair |+-> = (|B,0> +- |G,1>)/sqrt(2) at +-sqrt(2) g,
/// and the decoupled ladder |D,n> at n omega.
///
/// The listed energies are exact lab-frame eigenvalues of
/// [`hamiltonian_lab`]: the omega contributions of a'a and Sz/2 cancel for
/// the one-excitation triplet states.
pub fn dressed_states(params: &SystemParams, space: &HilbertSpace) -> Vec<DressedState> {
    let mut states = Vec::with_capacity(3 + space.fock_dim());
    states.push(DressedState {
        label: StateLabel::G,
        vector: atom_fock(space, StateLabel::G, 0),
        energy: -params.omega,
    });
    let b0 = atom_fock(space, StateLabel::B, 0);
    let g1 = atom_fock(space, StateLabel::G, 1);
    let scale = Complex64::new(1.0 / SQRT_2, 0.0);
    let plus = (&b0 + &g1).mapv(|z| z * scale);
    let minus = (&b0 - &g1).mapv(|z| z * scale);
    states.push(DressedState {
        label: StateLabel::Plus,
        vector: plus,
        energy: SQRT_2 * params.g,
    });
    states.push(DressedState {
        label: StateLabel::Minus,
        vector: minus,
        energy: -SQRT_2 * params.g,
    });
    for n in 0..=space.n_max() {
        states.push(DressedState {
            label: StateLabel::DarkN(n),
            vector: atom_fock(space, StateLabel::D, n),
            energy: n as f64 * params.omega,
        });
    }
    states
}

/// Cavity-decay transition rates between the dressed states from the Fermi
/// golden rule, Gamma_{i->f} = kappa |<f| a |i>|^2.
///
/// The dark ladder and the {|G,0>, |+->} triplet sector are disconnected:
/// every cross-sector rate is exactly zero. Note these are golden-rule rates;
/// the master equation's population decay out of |D,n> is 2 kappa n (see the
/// dissipator convention in [`crate::evolution`]).
pub fn transition_rates(
    params: &SystemParams,
    space: &HilbertSpace,
) -> HashMap<(StateLabel, StateLabel), f64> {
    let states = dressed_states(params, space);
    let a = annihilation(space);
    let mut rates = HashMap::new();
    for initial in &states {
        let lowered = matvec(&a, &initial.vector);
        for target in &states {
            if target.label == initial.label {
                continue;
            }
            let amp: Complex64 = target
                .vector
                .iter()
                .zip(lowered.iter())
                .map(|(f, v)| f.conj() * v)
                .sum();
            rates.insert((initial.label, target.label), params.kappa * amp.norm_sqr());
        }
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{frobenius_norm, identity, inner, vector_norm};

    fn params_demo() -> SystemParams {
        SystemParams::new(0.5, 0.0, 0.0)
    }

    #[test]
    fn space_dimensions() {
        assert_eq!(HilbertSpace::new(1).dim(), 8);
        assert_eq!(HilbertSpace::new(2).dim(), 12);
        assert_eq!(HilbertSpace::new(4).dim(), 20);
        assert_eq!(HilbertSpace::new(4).dims(), [2, 2, 5]);
        assert_eq!(HilbertSpace::from_dim(20), Some(HilbertSpace::new(4)));
    }

    #[test]
    fn params_validation() {
        assert!(params_demo().validate().is_ok());
        let mut p = params_demo();
        p.kappa = 0.0;
        assert!(matches!(p.validate(), Err(ParamsError::InvalidKappa(_))));
        let mut p = params_demo();
        p.n_max = 1;
        assert!(matches!(
            p.validate(),
            Err(ParamsError::TruncationTooSmall(1))
        ));
        let mut p = params_demo();
        p.gamma = -0.1;
        assert!(matches!(p.validate(), Err(ParamsError::NegativeRate { .. })));
    }

    #[test]
    fn annihilation_lowers_fock() {
        let space = HilbertSpace::new(3);
        let a = annihilation(&space);
        let g1 = atom_fock(&space, StateLabel::G, 1);
        let g0 = atom_fock(&space, StateLabel::G, 0);
        assert!(vector_norm(&(&matvec(&a, &g1) - &g0)) < 1e-15);
        // a sqrt(n) ladder factor
        let g2 = atom_fock(&space, StateLabel::G, 2);
        let lowered = matvec(&a, &g2);
        let expect = g1.mapv(|z| z * std::f64::consts::SQRT_2);
        assert!(vector_norm(&(&lowered - &expect)) < 1e-15);
    }

    #[test]
    fn collective_lowering_on_named_states() {
        let space = HilbertSpace::new(2);
        let sm = collective_lower(&space);
        let d0 = atom_fock(&space, StateLabel::D, 0);
        assert!(vector_norm(&matvec(&sm, &d0)) < 1e-15); // dark state annihilated

        let b0 = atom_fock(&space, StateLabel::B, 0);
        let g0 = atom_fock(&space, StateLabel::G, 0);
        let expect = g0.mapv(|z| z * SQRT_2);
        assert!(vector_norm(&(&matvec(&sm, &b0) - &expect)) < 1e-14);

        let sp = adjoint(&sm);
        let expect = b0.mapv(|z| z * SQRT_2);
        assert!(vector_norm(&(&matvec(&sp, &g0) - &expect)) < 1e-14);
    }

    #[test]
    fn named_states_orthonormal() {
        let b = atomic_state(StateLabel::B);
        let d = atomic_state(StateLabel::D);
        assert!((vector_norm(&b) - 1.0).abs() < 1e-12);
        assert!((vector_norm(&d) - 1.0).abs() < 1e-12);
        assert!(inner(&d, &b).norm() < 1e-15);
    }

    #[test]
    fn lab_hamiltonian_energies() {
        let params = SystemParams {
            omega: 0.9,
            ..params_demo()
        };
        let space = build_space(&params);
        let h = hamiltonian_lab(&params, &space);
        assert!(frobenius_norm(&(&h - &adjoint(&h))) < 1e-12);

        let g0 = atom_fock(&space, StateLabel::G, 0);
        let e = inner(&g0, &matvec(&h, &g0));
        assert!((e.re + params.omega).abs() < 1e-12 && e.im.abs() < 1e-15);

        for d in dressed_states(&params, &space) {
            let hv = matvec(&h, &d.vector);
            let ev = d.vector.mapv(|z| z * d.energy);
            assert!(
                vector_norm(&(&hv - &ev)) < 1e-10,
                "{} is not an H eigenstate at its listed energy",
                d.label
            );
        }
    }

    #[test]
    fn excitation_number_is_conserved_without_drive() {
        let params = params_demo();
        let space = build_space(&params);
        let h = hamiltonian_lab(&params, &space);
        // N = a'a + (Sz + 2 I)/2
        let n_exc = &number_operator(&space)
            + &(&collective_sz(&space) + &identity(space.dim()).mapv(|z| z * 2.0))
                .mapv(|z| z * 0.5);
        let comm = &matmul(&h, &n_exc) - &matmul(&n_exc, &h);
        assert!(frobenius_norm(&comm) < 1e-12);
    }

    #[test]
    fn rotating_hamiltonian_limits() {
        // g = 0, Dp = 0: pure displaced-oscillator drive on the cavity factor.
        let params = SystemParams::new(0.0, 0.3, 0.0);
        let space = build_space(&params);
        let h = hamiltonian_rotating(&params, &space);
        let a = annihilation(&space);
        let expect = (&a + &adjoint(&a)).mapv(|z| z * params.epsilon);
        assert!(frobenius_norm(&(&h - &expect)) < 1e-14);

        // Dp = 0, eps = 0: one-excitation eigenvalues 0, +-sqrt(2) g.
        let params = SystemParams::new(0.25, 0.0, 0.0).with_n_max(2);
        let space = build_space(&params);
        let h = hamiltonian_rotating(&params, &space);
        let (vals, _) = crate::numerics::hermitian_eig(&h).unwrap();
        let split = SQRT_2 * params.g;
        assert!(vals.iter().any(|&v| (v + split).abs() < 1e-12));
        assert!(vals.iter().any(|&v| (v - split).abs() < 1e-12));
        assert!(vals.iter().any(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn probe_interference_traps_the_ground_branch() {
        // At Dp = 0 the drive amplitude into |G,1> from |G,0> cancels the
        // coupling amplitude from -(eps/sqrt(2)g)|B,0> exactly; the residual
        // of the two-component trapped state is eps^2/(sqrt(2) g) on |B,1>.
        let g = 0.5;
        for epsilon in [1e-7, 0.01] {
            let params = SystemParams::new(g, epsilon, 0.0).with_n_max(3);
            let space = build_space(&params);
            let h = hamiltonian_rotating(&params, &space);
            let g0 = atom_fock(&space, StateLabel::G, 0);
            let b0 = atom_fock(&space, StateLabel::B, 0);
            let trapped = &g0 - &b0.mapv(|z| z * (epsilon / (SQRT_2 * g)));
            let residual = matvec(&h, &trapped);

            let g1 = atom_fock(&space, StateLabel::G, 1);
            assert!(inner(&g1, &residual).norm() < 1e-12, "no photon injection");

            let expected_norm = epsilon * epsilon / (SQRT_2 * g);
            assert!((vector_norm(&residual) - expected_norm).abs() < 1e-12);
        }
        // For a vanishing probe the trapped state is an exact null vector.
        let params = SystemParams::new(0.5, 1e-7, 0.0).with_n_max(3);
        let space = build_space(&params);
        let h = hamiltonian_rotating(&params, &space);
        let trapped = &atom_fock(&space, StateLabel::G, 0)
            - &atom_fock(&space, StateLabel::B, 0)
                .mapv(|z| z * (params.epsilon / (SQRT_2 * params.g)));
        assert!(vector_norm(&matvec(&h, &trapped)) < 1e-12);
    }

    #[test]
    fn dressed_states_structure() {
        let params = params_demo();
        let space = build_space(&params);
        let states = dressed_states(&params, &space);
        let plus = states.iter().find(|s| s.label == StateLabel::Plus).unwrap();
        let minus = states.iter().find(|s| s.label == StateLabel::Minus).unwrap();
        assert!(inner(&plus.vector, &minus.vector).norm() < 1e-14);
        assert!((plus.energy - SQRT_2 * params.g).abs() < 1e-15);

        // |+> matches the numerically diagonalized one-excitation eigenvector
        // up to phase.
        let h = hamiltonian_lab(&params, &space);
        let (vals, vecs) = crate::numerics::hermitian_eig(&h).unwrap();
        let target = SQRT_2 * params.g;
        let k = vals
            .iter()
            .position(|&v| (v - target).abs() < 1e-9)
            .expect("dressed energy present in spectrum");
        let overlap = inner(&vecs.column(k).to_owned(), &plus.vector).norm();
        assert!((overlap - 1.0).abs() < 1e-9);
    }

    #[test]
    fn golden_rule_rates() {
        let params = params_demo();
        let space = build_space(&params);
        let rates = transition_rates(&params, &space);
        let half = params.kappa / 2.0;
        assert!((rates[&(StateLabel::Plus, StateLabel::G)] - half).abs() < 1e-12);
        assert!((rates[&(StateLabel::Minus, StateLabel::G)] - half).abs() < 1e-12);
        assert!(
            (rates[&(StateLabel::DarkN(1), StateLabel::DarkN(0))] - params.kappa).abs() < 1e-12
        );
        // no cross-sector transitions
        assert!(rates[&(StateLabel::DarkN(1), StateLabel::G)].abs() < 1e-15);
        assert!(rates[&(StateLabel::Plus, StateLabel::DarkN(0))].abs() < 1e-15);
        // the only open channel out of |+-> is to |G,0>
        let leak: f64 = rates
            .iter()
            .filter(|((i, f), _)| *i == StateLabel::Plus && *f != StateLabel::G)
            .map(|(_, r)| r)
            .sum();
        assert!(leak < 1e-15);
    }

    #[test]
    fn rotating_frame_commutes_with_dark_projector_without_drive() {
        let params = SystemParams::new(0.4, 0.0, 0.3).with_n_max(2);
        let space = build_space(&params);
        let h = hamiltonian_rotating(&params, &space);
        let d = atomic_state(StateLabel::D);
        let proj_at = crate::numerics::outer(&d);
        let proj = kron(&proj_at, &identity(space.fock_dim()));
        let comm = &matmul(&h, &proj) - &matmul(&proj, &h);
        assert!(frobenius_norm(&comm) < 1e-12);
    }
}
