//! Scripted experiments on top of the solver stack: transmission spectra,
//! the heralded entanglement-preparation protocol, the direct
//! transmission-equals-concurrence readout, and the validity window against
//! atomic decay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evolution::{
    branch_steady_state, dark_mixture_state, steady_state_sectorized, Branch, ChannelKind,
    DensityMatrix, EvolutionError, LindbladSpec,
};
use crate::model::{build_space, ParamsError, SystemParams};
use crate::numerics::{self, CVector, NumericsError};
use crate::observables::{
    concurrence, dark_projection, dark_projection_pure, partial_trace_cavity, transmission,
    ObservableError,
};
use crate::trajectories::{trajectory_stream, PhaseRunner, TrajectoryConfig, TrajectoryError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How a spectrum point is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    /// Sector-restricted steady state of the full master equation.
    MasterEquation,
    /// Closed-form weak-drive response.
    LinearResponse,
}

/// One spectrum point: normalized transmission of each branch at a probe
/// detuning, plus the P-weighted mixture when requested.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumRow {
    pub delta_p: f64,
    pub t_ground: f64,
    pub t_dark: f64,
    pub t_mixed: Option<f64>,
}

/// Inclusive detuning grid from `dmin` to `dmax` in steps of `dstep`.
pub fn delta_grid(dmin: f64, dmax: f64, dstep: f64) -> Vec<f64> {
    assert!(dstep > 0.0 && dmax >= dmin, "bad detuning grid");
    let n = ((dmax - dmin) / dstep).round() as usize;
    (0..=n).map(|i| dmin + i as f64 * dstep).collect()
}

/// Transmission versus probe detuning for both branches.
///
/// Points are independent and solved in parallel; the output order follows
/// the grid. `mixture_weight` adds a `T_mixed = (1-P) T_ground + P T_dark`
/// column (transmission is linear in the state).
pub fn spectrum_scan(
    params: &SystemParams,
    grid: &[f64],
    method: SpectrumMethod,
    mixture_weight: Option<f64>,
) -> Result<Vec<SpectrumRow>, ExperimentError> {
    params.validate()?;
    if let Some(p) = mixture_weight {
        if !(0.0..=1.0).contains(&p) {
            return Err(ExperimentError::InvalidConfig(format!(
                "mixture weight {p} outside [0, 1]"
            )));
        }
    }
    if grid.iter().any(|d| !d.is_finite()) {
        return Err(ExperimentError::InvalidConfig(
            "detuning grid contains non-finite values".into(),
        ));
    }
    match method {
        SpectrumMethod::LinearResponse => Ok(grid
            .iter()
            .map(|&delta_p| {
                let t_ground =
                    crate::evolution::linear_response_transmission(params, Branch::Ground, delta_p);
                let t_dark =
                    crate::evolution::linear_response_transmission(params, Branch::Dark, delta_p);
                SpectrumRow {
                    delta_p,
                    t_ground,
                    t_dark,
                    t_mixed: mixture_weight.map(|p| (1.0 - p) * t_ground + p * t_dark),
                }
            })
            .collect()),
        SpectrumMethod::MasterEquation => {
            if params.epsilon == 0.0 {
                return Err(ObservableError::ZeroProbe.into());
            }
            grid.par_iter()
                .map(|&delta_p| {
                    let point = SystemParams {
                        delta_p,
                        ..params.clone()
                    };
                    let space = build_space(&point);
                    let t_ground = transmission(
                        &branch_steady_state(&point, &space, Branch::Ground)?,
                        &point,
                    )?;
                    let t_dark = transmission(
                        &branch_steady_state(&point, &space, Branch::Dark)?,
                        &point,
                    )?;
                    Ok(SpectrumRow {
                        delta_p,
                        t_ground,
                        t_dark,
                        t_mixed: mixture_weight.map(|p| (1.0 - p) * t_ground + p * t_dark),
                    })
                })
                .collect()
        }
    }
}

/// Phase durations of one protocol run: relax with the probe off, let the
/// driven system stabilize, then monitor for clicks.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolSchedule {
    pub t_relax: f64,
    pub t_stabilize: f64,
    pub t_monitor: f64,
}

impl ProtocolSchedule {
    pub fn new(t_relax: f64, t_stabilize: f64, t_monitor: f64) -> Self {
        Self {
            t_relax,
            t_stabilize,
            t_monitor,
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let ok = self.t_relax >= 0.0
            && self.t_stabilize >= 0.0
            && self.t_monitor > 0.0
            && [self.t_relax, self.t_stabilize, self.t_monitor]
                .iter()
                .all(|t| t.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::InvalidConfig(format!(
                "schedule phases must be ordered and finite: {self:?}"
            )))
        }
    }
}

impl Default for ProtocolSchedule {
    /// Relaxation and stabilization long enough that residual transients sit
    /// far below every tolerance used here, with a monitoring window sized
    /// for the dark-branch click rate 2 eps^2 / kappa.
    fn default() -> Self {
        Self::new(60.0, 20.0, 1e4)
    }
}

/// Absolute timestamps of the phase boundaries.
#[derive(Debug, Clone, Copy)]
pub struct PhaseBoundaries {
    pub prepare: f64,
    pub probe_on: f64,
    pub monitor_start: f64,
    pub end: f64,
}

/// Outcome of one heralding run.
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    /// Sector the trajectory collapsed into.
    pub branch: Branch,
    /// Cavity clicks inside the monitoring window.
    pub clicks: usize,
    /// Heralding rule: entangled iff at least one click in the window.
    pub heralded: bool,
    /// Atomic fidelity with |D> right after the first monitored click.
    pub post_click_fidelity: Option<f64>,
    /// (t, concurrence) snapshots across all phases.
    pub concurrence_timeline: Vec<(f64, f64)>,
    pub boundaries: PhaseBoundaries,
}

/// One simulated experimental run: prepare `rho0`, relax with the probe off,
/// switch the probe on, stabilize, monitor for clicks.
///
/// Mixed initial states are realized by sampling a pure state from the
/// eigendecomposition of `rho0` (jump evolution is defined on pure states).
pub fn protocol_run(
    params: &SystemParams,
    rho0: &DensityMatrix,
    schedule: &ProtocolSchedule,
    cfg: &TrajectoryConfig,
) -> Result<ProtocolResult, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    protocol_with_rng(params, rho0, schedule, cfg, &mut rng)
}

/// Deterministic parallel batch of protocol runs on streams
/// `(base_seed, run index)`.
pub fn protocol_ensemble(
    params: &SystemParams,
    rho0: &DensityMatrix,
    schedule: &ProtocolSchedule,
    cfg: &TrajectoryConfig,
    runs: usize,
    base_seed: u64,
) -> Result<Vec<ProtocolResult>, ExperimentError> {
    if runs == 0 {
        return Err(ExperimentError::InvalidConfig("runs must be >= 1".into()));
    }
    (0..runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_stream(base_seed, k);
            protocol_with_rng(params, rho0, schedule, cfg, &mut rng)
        })
        .collect()
}

fn protocol_with_rng(
    params: &SystemParams,
    rho0: &DensityMatrix,
    schedule: &ProtocolSchedule,
    cfg: &TrajectoryConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ProtocolResult, ExperimentError> {
    params.validate()?;
    schedule.validate()?;
    let space = build_space(params);
    if rho0.dim() != space.dim() {
        return Err(ExperimentError::InvalidConfig(
            "initial state dimension differs from the configured space".into(),
        ));
    }

    let probe_off = SystemParams {
        epsilon: 0.0,
        ..params.clone()
    };
    let spec_off = LindbladSpec::from_params(&probe_off, &space);
    let spec_on = LindbladSpec::from_params(params, &space);
    cfg.validate(&spec_on)?;
    cfg.validate(&spec_off)?;

    let mut psi = sample_pure_state(rho0, rng)?;

    let boundaries = PhaseBoundaries {
        prepare: 0.0,
        probe_on: schedule.t_relax,
        monitor_start: schedule.t_relax + schedule.t_stabilize,
        end: schedule.t_relax + schedule.t_stabilize + schedule.t_monitor,
    };

    let mut timeline: Vec<(f64, f64)> = Vec::new();
    let mut snap = |t: f64, psi: &CVector| {
        let atomic = crate::observables::atomic_state_of_pure(psi)
            .expect("unit-norm composite state");
        timeline.push((t, concurrence(&atomic)));
    };
    snap(0.0, &psi);

    let mut clicks = 0usize;
    let mut post_click_fidelity = None;
    let monitor_start = boundaries.monitor_start;
    let mut on_jump = |t: f64, kind: ChannelKind, psi: &CVector| {
        if kind == ChannelKind::Cavity && t >= monitor_start {
            clicks += 1;
            if post_click_fidelity.is_none() {
                post_click_fidelity = Some(dark_projection_pure(psi));
            }
        }
    };

    let steps_of = |t: f64| (t / cfg.dt).round() as usize;
    let relax_runner = PhaseRunner::new(&spec_off, cfg.dt);
    relax_runner.advance(
        &mut psi,
        0.0,
        steps_of(schedule.t_relax),
        rng,
        cfg.record_stride,
        &mut snap,
        &mut on_jump,
    )?;
    let driven_runner = PhaseRunner::new(&spec_on, cfg.dt);
    driven_runner.advance(
        &mut psi,
        boundaries.probe_on,
        steps_of(schedule.t_stabilize + schedule.t_monitor),
        rng,
        cfg.record_stride,
        &mut snap,
        &mut on_jump,
    )?;

    let branch = if dark_projection_pure(&psi) > 0.5 {
        Branch::Dark
    } else {
        Branch::Ground
    };
    Ok(ProtocolResult {
        branch,
        clicks,
        heralded: clicks >= 1,
        post_click_fidelity,
        concurrence_timeline: timeline,
        boundaries,
    })
}

/// Draw a pure state from the eigendecomposition of a density matrix.
fn sample_pure_state(
    rho: &DensityMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<CVector, ExperimentError> {
    let (vals, vecs) = numerics::hermitian_eig(rho.matrix())?;
    let weights: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        pick -= w;
        if pick <= 0.0 {
            chosen = i;
            break;
        }
    }
    let psi = vecs.column(chosen).to_owned();
    let norm = numerics::vector_norm(&psi);
    Ok(psi.mapv(|z| z / norm))
}

/// Read the concurrence off the driven steady-state transmission.
///
/// Returns `(T, C, |T - C|)`: `T` from the driven sectorized steady state,
/// `C` from the undriven steady-state mixture with the same dark weight.
/// Requires the resonant probe (`delta_p = 0`) and no atomic decay.
pub fn concurrence_via_transmission(
    params: &SystemParams,
    rho0: &DensityMatrix,
) -> Result<(f64, f64, f64), ExperimentError> {
    params.validate()?;
    if params.gamma > 0.0 {
        return Err(EvolutionError::GammaNonzero.into());
    }
    if params.delta_p != 0.0 {
        return Err(ExperimentError::InvalidConfig(format!(
            "the transmission readout runs at delta_p = 0, got {}",
            params.delta_p
        )));
    }
    let space = build_space(params);
    let spec = LindbladSpec::from_params(params, &space);
    let driven = steady_state_sectorized(&spec, rho0, true)?;
    let t = transmission(&driven, params)?;

    let p = dark_projection(rho0);
    let undriven = dark_mixture_state(&space, p.clamp(0.0, 1.0))?;
    let c = concurrence(&partial_trace_cavity(&undriven)?);
    Ok((t, c, (t - c).abs()))
}

/// Default stabilization constant c1 in `t_min = c1 kappa / g^2`.
pub const DEFAULT_STABILIZATION_CONSTANT: f64 = 10.0;
/// Default decoherence budget c2 in `t_max = c2 / gamma`.
pub const DEFAULT_DECAY_BUDGET: f64 = 1.0;

/// The monitoring window only exists when the dark state outlives the
/// relaxation transient: `t_min = c1 kappa / g^2 < t_max = c2 / gamma`.
#[derive(Debug, Clone, Copy)]
pub struct ValidityReport {
    /// Earliest usable monitoring time, `c1 kappa / g^2`.
    pub t_min: f64,
    /// Latest usable time, `c2 / gamma`; infinite without atomic decay.
    pub t_max: f64,
    pub window_ok: bool,
    /// Separation of scales `g^2 / (kappa gamma)`.
    pub ratio: f64,
}

pub fn validity_window(params: &SystemParams, c1: f64, c2: f64) -> ValidityReport {
    let t_min = if params.g > 0.0 {
        c1 * params.kappa / (params.g * params.g)
    } else {
        f64::INFINITY
    };
    let (t_max, ratio) = if params.gamma > 0.0 {
        (
            c2 / params.gamma,
            params.g * params.g / (params.kappa * params.gamma),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    ValidityReport {
        t_min,
        t_max,
        window_ok: t_min < t_max,
        ratio,
    }
}
