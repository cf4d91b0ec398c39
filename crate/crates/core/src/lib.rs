//! Two two-level atoms in a leaking cavity: dissipative preparation of the
//! maximally entangled dark state, and its nondemolition readout through the
//! cavity transmission of a weak probe.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense complex linear algebra (Jacobi eigensolver, LU,
//!   matrix exponential). No physics.
//! - [`model`]: Hilbert-space layout, Tavis-Cummings Hamiltonians in the lab
//!   and probe-rotating frames, dressed states and cavity-decay transition
//!   rates.
//! - [`evolution`]: Lindblad dynamics; RK4 integration, sector-resolved
//!   steady states, and the weak-drive linear-response transmission.
//! - [`trajectories`]: quantum-jump unraveling with reproducible per-stream
//!   RNG and parallel ensembles.
//! - [`observables`]: partial traces, Wootters concurrence, mean photon
//!   number, normalized transmission, dark-state projection, fidelity.
//! - [`experiments`]: transmission spectra, the heralded preparation
//!   protocol, the transmission = concurrence identity, and the validity
//!   window; everything the CLI exposes.
//!
//! Units: the cavity field decay rate kappa is the frequency unit and
//! 1/kappa the time unit throughout.

pub mod evolution;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod observables;
pub mod trajectories;

pub use evolution::{
    branch_steady_state, dark_mixture_state, integrate, linear_response_transmission,
    liouvillian_apply, liouvillian_superoperator, solve_steady_state, steady_state_sectorized,
    Branch, ChannelKind, DensityMatrix, EvolutionError, EvolutionResult, IntegrationOptions,
    LindbladChannel, LindbladSpec, Sector,
};
pub use experiments::{
    concurrence_via_transmission, delta_grid, protocol_ensemble, protocol_run, spectrum_scan,
    validity_window, ExperimentError, PhaseBoundaries, ProtocolResult, ProtocolSchedule,
    SpectrumMethod, SpectrumRow, ValidityReport, DEFAULT_DECAY_BUDGET,
    DEFAULT_STABILIZATION_CONSTANT,
};
pub use model::{
    annihilation, atom_fock, atomic_state, build_space, coherent_state, collective_lower,
    collective_sz, composite_state, dressed_states, fock_state, hamiltonian_lab,
    hamiltonian_rotating, number_operator, single_atom_sigma_minus, transition_rates,
    DressedState, HilbertSpace, NamedState, ParamsError, StateLabel, SystemParams,
};
pub use numerics::{CMatrix, CVector, NumericsError};
pub use observables::{
    atomic_state_of_pure, concurrence, dark_projection, dark_projection_pure, fidelity,
    fidelity_pure_pure, fidelity_with_pure, mean_photon, mean_photon_pure, partial_trace_atoms,
    partial_trace_cavity, transmission, ObservableError, TwoQubitState,
};
pub use trajectories::{
    click_statistics, evolve_trajectory, run_ensemble, trajectory_stream, ClickStatistics,
    EnsembleResult, JumpEvent, MeanCurve, TrajectoryConfig, TrajectoryError, TrajectoryRecord,
};

/// Type alias for operators on the composite Hilbert space.
pub type Operator = numerics::CMatrix;
/// Type alias for pure states on the composite Hilbert space.
pub type StateVector = numerics::CVector;
