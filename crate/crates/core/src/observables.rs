//! Measurement layer: partial traces, Wootters concurrence, photon number,
//! normalized transmission, dark-state projection and fidelity.
//!
//! The normalized transmission is `T = <a'a> / (eps/kappa)^2`, so the empty
//! driven cavity (and the decoupled dark branch) sits at T = 1.

use num_complex::Complex64;
use thiserror::Error;

use crate::evolution::DensityMatrix;
use crate::model::{self, HilbertSpace, StateLabel, SystemParams};
use crate::numerics::{
    self, adjoint, frobenius_norm, kron, matmul, sqrtm_psd, trace, CMatrix, CVector,
    NumericsError, ZERO,
};

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("transmission is undefined for epsilon = 0")]
    ZeroProbe,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Reduced state of the two atoms, ordered atom1 (x) atom2 over {|g>, |e>}.
#[derive(Debug, Clone)]
pub struct TwoQubitState {
    matrix: CMatrix,
}

impl TwoQubitState {
    pub fn new(matrix: CMatrix) -> Result<Self, ObservableError> {
        if matrix.dim() != (4, 4) {
            return Err(ObservableError::DimensionMismatch(format!(
                "two-qubit state must be 4x4, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = frobenius_norm(&(&matrix - &adjoint(&matrix)));
        if defect > 1e-9 {
            return Err(ObservableError::DimensionMismatch(format!(
                "two-qubit state not Hermitian (defect {defect:.3e})"
            )));
        }
        let tr = trace(&matrix).re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(ObservableError::DimensionMismatch(format!(
                "two-qubit state trace {tr} is not 1"
            )));
        }
        Ok(Self {
            matrix: (&matrix + &adjoint(&matrix)).mapv(|z| z * 0.5),
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// Trace out the cavity mode. Relies on the fixed atom1 (x) atom2 (x) cavity
/// ordering with the cavity index fastest.
pub fn partial_trace_cavity(rho: &DensityMatrix) -> Result<TwoQubitState, ObservableError> {
    let space = HilbertSpace::from_dim(rho.dim()).ok_or_else(|| {
        ObservableError::DimensionMismatch(format!(
            "state dimension {} is not 4 (n_max + 1)",
            rho.dim()
        ))
    })?;
    let nc = space.fock_dim();
    let m = rho.matrix();
    let mut out = CMatrix::zeros((4, 4));
    for a in 0..4 {
        for b in 0..4 {
            let mut acc = ZERO;
            for n in 0..nc {
                acc += m[(a * nc + n, b * nc + n)];
            }
            out[(a, b)] = acc;
        }
    }
    TwoQubitState::new(out)
}

/// Trace out both atoms, leaving the cavity state.
pub fn partial_trace_atoms(rho: &DensityMatrix) -> Result<CMatrix, ObservableError> {
    let space = HilbertSpace::from_dim(rho.dim()).ok_or_else(|| {
        ObservableError::DimensionMismatch(format!(
            "state dimension {} is not 4 (n_max + 1)",
            rho.dim()
        ))
    })?;
    let nc = space.fock_dim();
    let m = rho.matrix();
    let mut out = CMatrix::zeros((nc, nc));
    for n in 0..nc {
        for k in 0..nc {
            let mut acc = ZERO;
            for a in 0..4 {
                acc += m[(a * nc + n, a * nc + k)];
            }
            out[(n, k)] = acc;
        }
    }
    Ok(out)
}

/// Atomic reduced density matrix of a pure composite state, without building
/// the full outer product. Used per-snapshot by the trajectory runner.
pub fn atomic_state_of_pure(psi: &CVector) -> Result<TwoQubitState, ObservableError> {
    if psi.len() % 4 != 0 {
        return Err(ObservableError::DimensionMismatch(format!(
            "composite state length {} is not 4 (n_max + 1)",
            psi.len()
        )));
    }
    let nc = psi.len() / 4;
    let mut out = CMatrix::zeros((4, 4));
    for a in 0..4 {
        for b in 0..4 {
            let mut acc = ZERO;
            for n in 0..nc {
                acc += psi[a * nc + n] * psi[b * nc + n].conj();
            }
            out[(a, b)] = acc;
        }
    }
    TwoQubitState::new(out)
}

fn sigma_y() -> CMatrix {
    // {|g>, |e>} ordering: off-diagonal (-i, i); conjugation below is taken
    // in this fixed product basis.
    let mut m = CMatrix::zeros((2, 2));
    m[(0, 1)] = Complex64::new(0.0, -1.0);
    m[(1, 0)] = Complex64::new(0.0, 1.0);
    m
}

/// Wootters concurrence of a two-qubit state.
///
/// C = max(0, l1 - l2 - l3 - l4) with l_i the decreasing square roots of the
/// eigenvalues of rho (sy (x) sy) rho* (sy (x) sy). Evaluated through the
/// Hermitian form sqrt(rho) rho~ sqrt(rho), whose spectrum matches that of
/// rho rho~; near-zero negative eigenvalues from roundoff clamp to zero.
pub fn concurrence(state: &TwoQubitState) -> f64 {
    let rho = state.matrix();
    let flip = kron(&sigma_y(), &sigma_y());
    let rho_tilde = matmul(&flip, &matmul(&rho.mapv(|z| z.conj()), &flip));
    let root = sqrtm_psd(rho).expect("validated two-qubit state is PSD");
    let m = matmul(&root, &matmul(&rho_tilde, &root));
    let m = (&m + &adjoint(&m)).mapv(|z| z * 0.5);
    let (eigs, _) = numerics::hermitian_eig(&m).expect("product of PSD matrices");
    // the sqrt would amplify |eig| ~ 1e-16 roundoff to 1e-8, so clamp first
    let mut lambdas: Vec<f64> = eigs
        .iter()
        .map(|&l| if l.abs() < 1e-10 { 0.0 } else { l.max(0.0).sqrt() })
        .collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
}

/// Mean intracavity photon number <a'a>.
pub fn mean_photon(rho: &DensityMatrix) -> f64 {
    let space = HilbertSpace::from_dim(rho.dim()).expect("composite-space state");
    let nc = space.fock_dim();
    let m = rho.matrix();
    let mut acc = 0.0;
    for a in 0..4 {
        for n in 1..nc {
            acc += n as f64 * m[(a * nc + n, a * nc + n)].re;
        }
    }
    acc
}

/// <a'a> of a pure composite state.
pub fn mean_photon_pure(psi: &CVector) -> f64 {
    let nc = psi.len() / 4;
    let mut acc = 0.0;
    for a in 0..4 {
        for n in 1..nc {
            acc += n as f64 * psi[a * nc + n].norm_sqr();
        }
    }
    acc
}

/// Normalized transmission T = <a'a> / (eps/kappa)^2.
pub fn transmission(rho: &DensityMatrix, params: &SystemParams) -> Result<f64, ObservableError> {
    if params.epsilon == 0.0 {
        return Err(ObservableError::ZeroProbe);
    }
    Ok(mean_photon(rho) / (params.epsilon / params.kappa).powi(2))
}

/// Weight of the atomic dark singlet, P = Tr[rho (|D><D| (x) I)].
pub fn dark_projection(rho: &DensityMatrix) -> f64 {
    let space = HilbertSpace::from_dim(rho.dim()).expect("composite-space state");
    let nc = space.fock_dim();
    let d = model::atomic_state(StateLabel::D);
    let m = rho.matrix();
    let mut acc = 0.0;
    for n in 0..nc {
        // <D,n| rho |D,n>
        let mut amp = ZERO;
        for a in 0..4 {
            for b in 0..4 {
                amp += d[a].conj() * m[(a * nc + n, b * nc + n)] * d[b];
            }
        }
        acc += amp.re;
    }
    acc
}

/// Dark-singlet weight of a pure composite state.
pub fn dark_projection_pure(psi: &CVector) -> f64 {
    let nc = psi.len() / 4;
    let d = model::atomic_state(StateLabel::D);
    let mut acc = 0.0;
    for n in 0..nc {
        let mut amp = ZERO;
        for a in 0..4 {
            amp += d[a].conj() * psi[a * nc + n];
        }
        acc += amp.norm_sqr();
    }
    acc
}

/// Uhlmann fidelity F(rho, sigma) = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2,
/// taking the cheaper overlap route when one argument is (numerically) pure.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, ObservableError> {
    if rho.dim() != sigma.dim() {
        return Err(ObservableError::DimensionMismatch(format!(
            "fidelity of a {}-dim and a {}-dim state",
            rho.dim(),
            sigma.dim()
        )));
    }
    for (pure, other) in [(rho, sigma), (sigma, rho)] {
        if pure.purity() > 1.0 - 1e-12 {
            let (_, vecs) = numerics::hermitian_eig(pure.matrix())?;
            let psi = vecs.column(pure.dim() - 1).to_owned();
            return Ok(fidelity_with_pure(&psi, other).clamp(0.0, 1.0));
        }
    }
    let root = sqrtm_psd(rho.matrix())?;
    let inner = matmul(&root, &matmul(sigma.matrix(), &root));
    let inner = (&inner + &adjoint(&inner)).mapv(|z| z * 0.5);
    let (eigs, _) = numerics::hermitian_eig(&inner)?;
    let tr: f64 = eigs
        .iter()
        .map(|&l| if l.abs() < 1e-12 { 0.0 } else { l.max(0.0).sqrt() })
        .sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// F(|psi><psi|, rho) = <psi| rho |psi>.
pub fn fidelity_with_pure(psi: &CVector, rho: &DensityMatrix) -> f64 {
    numerics::inner(psi, &numerics::matvec(rho.matrix(), psi)).re
}

/// Overlap fidelity |<psi|phi>|^2 of two pure states.
pub fn fidelity_pure_pure(psi: &CVector, phi: &CVector) -> f64 {
    numerics::inner(psi, phi).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::dark_mixture_state;
    use crate::model::{atom_fock, atomic_state, composite_state, fock_state};
    use crate::numerics::{expm, identity, outer, I};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_qubit(m: CMatrix) -> TwoQubitState {
        TwoQubitState::new(m).unwrap()
    }

    fn random_two_qubit(rng: &mut impl Rng) -> TwoQubitState {
        let m = CMatrix::from_shape_fn((4, 4), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let psd = matmul(&m, &adjoint(&m));
        let tr = trace(&psd).re;
        two_qubit(psd.mapv(|z| z / tr))
    }

    fn random_single_qubit_unitary(rng: &mut impl Rng) -> CMatrix {
        let h = CMatrix::from_shape_fn((2, 2), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let h = (&h + &adjoint(&h)).mapv(|z| z * 0.5);
        expm(&h.mapv(|z| I * z))
    }

    #[test]
    fn partial_trace_of_product_state() {
        let space = HilbertSpace::new(2);
        let rho = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 0)).unwrap();
        let at = partial_trace_cavity(&rho).unwrap();
        let expect = outer(&atomic_state(StateLabel::D));
        assert!(frobenius_norm(&(at.matrix() - &expect)) < 1e-12);
    }

    #[test]
    fn partial_trace_of_dark_mixture() {
        let space = HilbertSpace::new(2);
        for p in [0.0, 0.25, 0.5, 1.0] {
            let rho = dark_mixture_state(&space, p).unwrap();
            let at = partial_trace_cavity(&rho).unwrap();
            let expect = outer(&atomic_state(StateLabel::G)).mapv(|z| z * (1.0 - p))
                + outer(&atomic_state(StateLabel::D)).mapv(|z| z * p);
            assert!(frobenius_norm(&(at.matrix() - &expect)) < 1e-12);
            assert!((concurrence(&at) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_trace_of_maximally_mixed() {
        let space = HilbertSpace::new(1);
        let dim = space.dim();
        let rho = DensityMatrix::new(identity(dim).mapv(|z| z / dim as f64)).unwrap();
        let at = partial_trace_cavity(&rho).unwrap();
        assert!(frobenius_norm(&(at.matrix() - &identity(4).mapv(|z| z / 4.0))) < 1e-12);
        let cav = partial_trace_atoms(&rho).unwrap();
        assert!(
            frobenius_norm(&(&cav - &identity(space.fock_dim()).mapv(|z| z / 2.0))) < 1e-12
        );
    }

    #[test]
    fn concurrence_of_named_states() {
        let d = two_qubit(outer(&atomic_state(StateLabel::D)));
        assert!((concurrence(&d) - 1.0).abs() < 1e-10);
        let g = two_qubit(outer(&atomic_state(StateLabel::G)));
        assert!(concurrence(&g) < 1e-10);
        let b = two_qubit(outer(&atomic_state(StateLabel::B)));
        assert!((concurrence(&b) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn concurrence_of_werner_states() {
        let d = outer(&atomic_state(StateLabel::D));
        for p in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.8, 1.0] {
            let rho = d.mapv(|z| z * p) + identity(4).mapv(|z| z * ((1.0 - p) / 4.0));
            let c = concurrence(&two_qubit(rho));
            let expect = (0.0f64).max((3.0 * p - 1.0) / 2.0);
            assert!(
                (c - expect).abs() < 1e-9,
                "werner p = {p}: got {c}, expected {expect}"
            );
        }
    }

    #[test]
    fn concurrence_invariant_under_local_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let rho = random_two_qubit(&mut rng);
            let c0 = concurrence(&rho);
            let u = kron(
                &random_single_qubit_unitary(&mut rng),
                &random_single_qubit_unitary(&mut rng),
            );
            let rotated = matmul(&u, &matmul(rho.matrix(), &adjoint(&u)));
            let c1 = concurrence(&two_qubit(rotated));
            assert!((c0 - c1).abs() < 1e-9);
        }
    }

    #[test]
    fn concurrence_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let c = concurrence(&random_two_qubit(&mut rng));
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn photon_number_and_transmission() {
        let space = HilbertSpace::new(2);
        let params = SystemParams::new(0.5, 0.1, 0.0).with_n_max(2);
        let vacuum = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        assert_eq!(mean_photon(&vacuum), 0.0);
        assert_eq!(transmission(&vacuum, &params).unwrap(), 0.0);

        let one = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 1)).unwrap();
        assert!((mean_photon(&one) - 1.0).abs() < 1e-12);

        let no_probe = SystemParams::new(0.5, 0.0, 0.0);
        assert!(matches!(
            transmission(&vacuum, &no_probe),
            Err(ObservableError::ZeroProbe)
        ));
    }

    #[test]
    fn transmission_is_linear_in_the_state() {
        let space = HilbertSpace::new(2);
        let params = SystemParams::new(0.5, 0.1, 0.0).with_n_max(2);
        let r1 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 1)).unwrap();
        let r2 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        let lambda = 0.3;
        let mix = DensityMatrix::new(
            r1.matrix().mapv(|z| z * lambda) + r2.matrix().mapv(|z| z * (1.0 - lambda)),
        )
        .unwrap();
        let t1 = transmission(&r1, &params).unwrap();
        let t2 = transmission(&r2, &params).unwrap();
        let tm = transmission(&mix, &params).unwrap();
        assert!((tm - (lambda * t1 + (1.0 - lambda) * t2)).abs() < 1e-12);
    }

    #[test]
    fn dark_projection_examples() {
        let space = HilbertSpace::new(2);
        // |ge,0>: P = 1/2
        let psi = composite_state(
            &{
                let mut v = CVector::zeros(4);
                v[1] = crate::numerics::ONE;
                v
            },
            &fock_state(&space, 0),
        );
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        assert!((dark_projection(&rho) - 0.5).abs() < 1e-12);
        assert!((dark_projection_pure(&psi) - 0.5).abs() < 1e-12);

        // maximally mixed atoms (x) vacuum: P = 1/4
        let vac = fock_state(&space, 0);
        let mut m = CMatrix::zeros((space.dim(), space.dim()));
        for a in 0..4 {
            let mut at = CVector::zeros(4);
            at[a] = crate::numerics::ONE;
            let v = composite_state(&at, &vac);
            m = m + outer(&v).mapv(|z| z * 0.25);
        }
        let rho = DensityMatrix::new(m).unwrap();
        assert!((dark_projection(&rho) - 0.25).abs() < 1e-12);

        // dark mixture: P equals the mixture weight exactly
        for p in [0.0, 0.3, 1.0] {
            let rho = dark_mixture_state(&space, p).unwrap();
            assert!((dark_projection(&rho) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn fidelity_properties() {
        let space = HilbertSpace::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = CMatrix::from_shape_fn((space.dim(), space.dim()), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let psd = matmul(&m, &adjoint(&m));
        let tr = trace(&psd).re;
        let rho = DensityMatrix::new(psd.mapv(|z| z / tr)).unwrap();
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-9);

        // orthogonal pure states
        let d0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::D, 0)).unwrap();
        let g0 = DensityMatrix::from_pure(&atom_fock(&space, StateLabel::G, 0)).unwrap();
        assert!(fidelity(&d0, &g0).unwrap() < 1e-12);

        // mixed-mixed agrees with the closed form for commuting states
        let a = dark_mixture_state(&space, 0.3).unwrap();
        let b = dark_mixture_state(&space, 0.7).unwrap();
        let expect = ((0.3f64 * 0.7).sqrt() + (0.7f64 * 0.3).sqrt()).powi(2);
        assert!((fidelity(&a, &b).unwrap() - expect).abs() < 1e-9);
    }
}
