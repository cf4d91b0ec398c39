//! Quantum-jump (Monte Carlo wave function) unraveling of the master
//! equation.
//!
//! Between jumps the state evolves under the non-Hermitian generator
//! `H_eff = H - (i/2) sum_k p_k L_k'L_k`, so the norm decays; each step the
//! norm loss `1 - |psi|^2` is the jump probability. On a jump the channel is
//! drawn proportional to `p_k <psi|L_k'L_k|psi>` and the state collapses to
//! `L_k psi / |L_k psi|`. Cavity-channel jumps are the detector clicks.
//!
//! The per-step propagator `exp(-i H_eff dt)` is built once, so the no-jump
//! flow carries no integrator error; the only discretization effect is the
//! first-order jump sampling, bounded by the `dt * max_rate <= 0.01` guard.
//!
//! Trajectories draw from counter-mode ChaCha streams keyed by
//! `(base_seed, trajectory index)`: ensembles are bitwise reproducible for a
//! fixed base seed no matter how many workers run them or in which order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evolution::{ChannelKind, EvolutionError, LindbladChannel, LindbladSpec};
use crate::model::SystemParams;
use crate::numerics::{self, expm, matvec_into, CMatrix, CVector, I};
use crate::observables;

const TOP_FOCK_TOL: f64 = 1e-8;
const JUMP_PROBABILITY_BUDGET: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid trajectory config: {0}")]
    InvalidConfig(String),
    #[error("top Fock level populated to {population:.3e} at t = {time:.3} (limit {TOP_FOCK_TOL:.0e}); raise n_max")]
    TruncationBreach { time: f64, population: f64 },
    #[error("click window is empty")]
    EmptyWindow,
    #[error("no trajectory records supplied")]
    NoRecords,
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

/// Stepping controls for one stochastic run.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryConfig {
    pub seed: u64,
    /// Step, constrained by `dt * max_rate <= 0.01` with
    /// `max_rate = 2 kappa n_max + 4 gamma` (the worst-case jump rate).
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded snapshots.
    pub record_stride: usize,
}

impl TrajectoryConfig {
    pub fn new(seed: u64, dt: f64, t_end: f64, record_stride: usize) -> Self {
        Self {
            seed,
            dt,
            t_end,
            record_stride: record_stride.max(1),
        }
    }

    pub fn validate(&self, spec: &LindbladSpec) -> Result<(), TrajectoryError> {
        if !(self.dt > 0.0) || !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(TrajectoryError::InvalidConfig(format!(
                "dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        let max_rate = spec.jump_rate_bound();
        if self.dt * max_rate > JUMP_PROBABILITY_BUDGET * (1.0 + 1e-12) {
            return Err(TrajectoryError::InvalidConfig(format!(
                "dt * max_rate = {:.3e} exceeds the jump-probability budget {JUMP_PROBABILITY_BUDGET}; \
                 use dt <= {:.3e}",
                self.dt * max_rate,
                JUMP_PROBABILITY_BUDGET / max_rate
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// One recorded jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: usize,
    pub kind: ChannelKind,
}

/// One stochastic realization with per-snapshot observables.
///
/// `transmission` entries are NaN when the probe is off (the normalization
/// `(eps/kappa)^2` does not exist).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
    pub jump_events: Vec<JumpEvent>,
    pub mean_photon: Vec<f64>,
    pub concurrence: Vec<f64>,
    pub transmission: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn clicks(&self) -> usize {
        self.jump_events
            .iter()
            .filter(|j| j.kind == ChannelKind::Cavity)
            .count()
    }
}

/// One diagonal block of the no-jump propagator, stored column-major as
/// separate real/imaginary planes so the matvec autovectorizes.
struct PropagatorBlock {
    offset: usize,
    size: usize,
    col_re: Vec<f64>,
    col_im: Vec<f64>,
}

impl PropagatorBlock {
    fn from_matrix(offset: usize, u: &CMatrix) -> Self {
        let size = u.nrows();
        let mut col_re = vec![0.0; size * size];
        let mut col_im = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                col_re[j * size + i] = u[(i, j)].re;
                col_im[j * size + i] = u[(i, j)].im;
            }
        }
        Self {
            offset,
            size,
            col_re,
            col_im,
        }
    }

    /// `out = U v` on this block's slice; returns the block's |out|^2.
    #[inline]
    fn apply(&self, v_re: &[f64], v_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) -> f64 {
        let (o, n) = (self.offset, self.size);
        let (v_re, v_im) = (&v_re[o..o + n], &v_im[o..o + n]);
        let (out_re, out_im) = (&mut out_re[o..o + n], &mut out_im[o..o + n]);
        out_re.fill(0.0);
        out_im.fill(0.0);
        for j in 0..n {
            let (vr, vi) = (v_re[j], v_im[j]);
            let cr = &self.col_re[j * n..(j + 1) * n];
            let ci = &self.col_im[j * n..(j + 1) * n];
            for i in 0..n {
                out_re[i] += cr[i] * vr - ci[i] * vi;
                out_im[i] += cr[i] * vi + ci[i] * vr;
            }
        }
        let mut norm_sqr = 0.0;
        for i in 0..n {
            norm_sqr += out_re[i] * out_re[i] + out_im[i] * out_im[i];
        }
        norm_sqr
    }
}

/// Shared no-jump propagator for stepping pure states through one phase of
/// constant generator. Built once per (spec, dt) pair.
///
/// Without atomic decay the generator never mixes the atomic singlet with
/// its complement, so in the sector-ordered basis the propagator splits into
/// a (n_max+1) and a 3(n_max+1) block; stepping costs shrink accordingly.
/// The state is carried in that basis as separate real/imaginary planes
/// (the interleaved complex layout defeats the autovectorizer and this loop
/// runs millions of times per protocol run); the sector transform is real,
/// so each plane transforms independently, and it is only applied at phase
/// boundaries, snapshots and jumps.
pub(crate) struct PhaseRunner<'a> {
    /// Columns of the sector-ordered orthonormal basis (real entries);
    /// `None` means the computational basis is used directly.
    basis: Option<Vec<f64>>,
    blocks: Vec<PropagatorBlock>,
    channels: &'a [LindbladChannel],
    dt: f64,
    dim: usize,
    /// Rows (in stepping basis) that carry Fock index n_max.
    top_rows: Vec<usize>,
}

impl<'a> PhaseRunner<'a> {
    pub fn new(spec: &'a LindbladSpec, dt: f64) -> Self {
        let dim = spec.dim();
        let fock_dim = dim / 4;
        let h_eff = spec.effective_hamiltonian();

        let sector_basis = (!spec.has_atomic_decay())
            .then(|| {
                let space = crate::model::HilbertSpace::from_dim(dim)?;
                let iso_s = crate::evolution::sector_isometry(&space, crate::evolution::Sector::Singlet);
                let iso_t = crate::evolution::sector_isometry(&space, crate::evolution::Sector::Triplet);
                let mut w = CMatrix::zeros((dim, dim));
                for (col, src) in iso_s.columns().into_iter().chain(iso_t.columns()).enumerate() {
                    for r in 0..dim {
                        w[(r, col)] = src[r];
                    }
                }
                // H' = W^dag H_eff W must be exactly block diagonal
                let rotated = crate::numerics::matmul(
                    &crate::numerics::adjoint(&w),
                    &crate::numerics::matmul(&h_eff, &w),
                );
                let leak: f64 = (0..fock_dim)
                    .flat_map(|i| (fock_dim..dim).map(move |j| (i, j)))
                    .map(|(i, j)| rotated[(i, j)].norm() + rotated[(j, i)].norm())
                    .sum();
                (leak < 1e-12).then_some((w, rotated))
            })
            .flatten();

        let (basis, blocks, top_rows) = match sector_basis {
            Some((w, rotated)) => {
                let bounds = [(0, fock_dim), (fock_dim, 3 * fock_dim)];
                let blocks = bounds
                    .iter()
                    .map(|&(off, n)| {
                        let mut sub = CMatrix::zeros((n, n));
                        for i in 0..n {
                            for j in 0..n {
                                sub[(i, j)] = rotated[(off + i, off + j)];
                            }
                        }
                        PropagatorBlock::from_matrix(off, &expm(&sub.mapv(|z| -I * z * dt)))
                    })
                    .collect();
                // sector basis states are |D,n>, |G,n>, |B,n>, |E,n>: the
                // cavity index still advances fastest within each group
                let top_rows = (0..4).map(|b| (b + 1) * fock_dim - 1).collect();
                let w_real: Vec<f64> = w.iter().map(|z| z.re).collect();
                (Some(w_real), blocks, top_rows)
            }
            None => {
                let u = expm(&h_eff.mapv(|z| -I * z * dt));
                let blocks = vec![PropagatorBlock::from_matrix(0, &u)];
                let top_rows = (0..4).map(|a| (a + 1) * fock_dim - 1).collect();
                (None, blocks, top_rows)
            }
        };

        Self {
            basis,
            blocks,
            channels: spec.channels(),
            dt,
            dim,
            top_rows,
        }
    }

    /// Stepping-basis planes from a computational-basis state.
    fn to_stepping(&self, psi: &CVector, re: &mut [f64], im: &mut [f64]) {
        match &self.basis {
            None => {
                for (i, z) in psi.iter().enumerate() {
                    re[i] = z.re;
                    im[i] = z.im;
                }
            }
            Some(w) => {
                let dim = self.dim;
                for c in 0..dim {
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for r in 0..dim {
                        let wv = w[r * dim + c];
                        if wv != 0.0 {
                            ar += wv * psi[r].re;
                            ai += wv * psi[r].im;
                        }
                    }
                    re[c] = ar;
                    im[c] = ai;
                }
            }
        }
    }

    /// Computational-basis state from stepping-basis planes.
    fn from_stepping(&self, re: &[f64], im: &[f64]) -> CVector {
        match &self.basis {
            None => CVector::from_iter(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i))),
            Some(w) => {
                let dim = self.dim;
                CVector::from_shape_fn(dim, |r| {
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for c in 0..dim {
                        let wv = w[r * dim + c];
                        if wv != 0.0 {
                            ar += wv * re[c];
                            ai += wv * im[c];
                        }
                    }
                    Complex64::new(ar, ai)
                })
            }
        }
    }

    /// Advance `steps` steps from absolute time `t0`. `psi` must be unit
    /// norm on entry and is unit norm on exit. `snap` fires every
    /// `snapshot_stride` steps (not at step 0), `jump` after every collapse.
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &self,
        psi: &mut CVector,
        t0: f64,
        steps: usize,
        rng: &mut ChaCha8Rng,
        snapshot_stride: usize,
        snap: &mut dyn FnMut(f64, &CVector),
        jump: &mut dyn FnMut(f64, ChannelKind, &CVector),
    ) -> Result<(), TrajectoryError> {
        let dim = self.dim;
        debug_assert_eq!(psi.len(), dim);
        let mut re = vec![0.0; dim];
        let mut im = vec![0.0; dim];
        self.to_stepping(psi, &mut re, &mut im);
        let mut next_re = vec![0.0; dim];
        let mut next_im = vec![0.0; dim];
        let stride = snapshot_stride.max(1);

        for step in 0..steps {
            let t = t0 + (step + 1) as f64 * self.dt;
            let mut norm_sqr = 0.0;
            for block in &self.blocks {
                norm_sqr += block.apply(&re, &im, &mut next_re, &mut next_im);
            }
            let jump_probability = (1.0 - norm_sqr).max(0.0);
            if rng.random::<f64>() < jump_probability {
                let phi = self.from_stepping(&next_re, &next_im);
                let (kind, collapsed) = self.collapse(&phi, rng);
                self.to_stepping(&collapsed, &mut re, &mut im);
                jump(t, kind, &collapsed);
            } else {
                let inv = 1.0 / norm_sqr.sqrt();
                for v in next_re.iter_mut() {
                    *v *= inv;
                }
                for v in next_im.iter_mut() {
                    *v *= inv;
                }
                std::mem::swap(&mut re, &mut next_re);
                std::mem::swap(&mut im, &mut next_im);
            }
            let top: f64 = self
                .top_rows
                .iter()
                .map(|&r| re[r] * re[r] + im[r] * im[r])
                .sum();
            if top > TOP_FOCK_TOL {
                return Err(TrajectoryError::TruncationBreach {
                    time: t,
                    population: top,
                });
            }
            if (step + 1) % stride == 0 {
                let current = self.from_stepping(&re, &im);
                snap(t, &current);
            }
        }
        *psi = self.from_stepping(&re, &im);
        Ok(())
    }

    /// Apply a jump to the pre-jump (unnormalized) state `phi`: draw the
    /// channel proportional to `p_k <phi|L_k'L_k|phi>` and return the
    /// collapsed, normalized `L_k phi`.
    fn collapse(&self, phi: &CVector, rng: &mut ChaCha8Rng) -> (ChannelKind, CVector) {
        let phi_s = phi.as_slice().expect("contiguous state");
        let mut lowered: Vec<(ChannelKind, Vec<Complex64>, f64)> =
            Vec::with_capacity(self.channels.len());
        let mut total = 0.0;
        for ch in self.channels {
            let mut out = vec![Complex64::default(); phi.len()];
            let nsq = matvec_into(&ch.operator, phi_s, &mut out);
            let weight = ch.prefactor * nsq;
            total += weight;
            lowered.push((ch.kind, out, weight));
        }
        debug_assert!(total > 0.0, "jump fired with zero total jump rate");
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = lowered.len() - 1;
        for (i, (_, _, weight)) in lowered.iter().enumerate() {
            pick -= weight;
            if pick <= 0.0 {
                chosen = i;
                break;
            }
        }
        let (kind, collapsed, _) = lowered.swap_remove(chosen);
        let norm = collapsed.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        (
            kind,
            CVector::from_iter(collapsed.iter().map(|z| z / norm)),
        )
    }
}

/// Single stochastic realization, deterministic for a fixed `cfg.seed`.
pub fn evolve_trajectory(
    spec: &LindbladSpec,
    params: &SystemParams,
    psi0: &CVector,
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryRecord, TrajectoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    evolve_with_rng(spec, params, psi0, cfg, &mut rng)
}

fn evolve_with_rng(
    spec: &LindbladSpec,
    params: &SystemParams,
    psi0: &CVector,
    cfg: &TrajectoryConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryRecord, TrajectoryError> {
    cfg.validate(spec)?;
    let norm = numerics::vector_norm(psi0);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(TrajectoryError::InvalidConfig(format!(
            "initial state norm {norm} is not 1"
        )));
    }
    if psi0.len() != spec.dim() {
        return Err(TrajectoryError::InvalidConfig(
            "initial state dimension differs from generator".into(),
        ));
    }
    let runner = PhaseRunner::new(spec, cfg.dt);
    let mut psi = psi0.mapv(|z| z / norm);

    let mut record = TrajectoryRecord {
        times: Vec::new(),
        states: Vec::new(),
        jump_events: Vec::new(),
        mean_photon: Vec::new(),
        concurrence: Vec::new(),
        transmission: Vec::new(),
    };
    let probe_norm = if params.epsilon > 0.0 {
        Some((params.epsilon / params.kappa).powi(2))
    } else {
        None
    };
    let snapshot = |t: f64, psi: &CVector, rec: &mut TrajectoryRecord| {
        let nbar = observables::mean_photon_pure(psi);
        let atomic = observables::atomic_state_of_pure(psi).expect("unit-norm composite state");
        rec.times.push(t);
        rec.states.push(psi.clone());
        rec.mean_photon.push(nbar);
        rec.concurrence.push(observables::concurrence(&atomic));
        rec.transmission
            .push(probe_norm.map_or(f64::NAN, |p| nbar / p));
    };
    snapshot(0.0, &psi, &mut record);

    let channel_kinds: Vec<ChannelKind> = spec.channels().iter().map(|c| c.kind).collect();
    let mut jump_events = Vec::new();
    runner.advance(
        &mut psi,
        0.0,
        cfg.steps(),
        rng,
        cfg.record_stride,
        &mut |t, psi| snapshot(t, psi, &mut record),
        &mut |t, kind, _psi| {
            let channel = channel_kinds.iter().position(|&k| k == kind).unwrap_or(0);
            jump_events.push(JumpEvent { time: t, channel, kind });
        },
    )?;
    record.jump_events = jump_events;
    Ok(record)
}

/// Per-snapshot sample mean with its standard error.
#[derive(Debug, Clone)]
pub struct MeanCurve {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Reduction of many trajectories; identical bit-for-bit for a fixed
/// `(base_seed, n_traj)` regardless of worker count.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub mean_photon: MeanCurve,
    pub concurrence: MeanCurve,
    pub transmission: MeanCurve,
    /// Mean cumulative cavity clicks at each snapshot time.
    pub mean_clicks_so_far: Vec<f64>,
    pub clicks_per_trajectory: Vec<usize>,
}

impl EnsembleResult {
    pub fn total_clicks(&self) -> usize {
        self.clicks_per_trajectory.iter().sum()
    }
}

/// Run `n_traj` trajectories on independent RNG streams and reduce them in
/// index order.
pub fn run_ensemble(
    spec: &LindbladSpec,
    params: &SystemParams,
    psi0: &CVector,
    cfg: &TrajectoryConfig,
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleResult, TrajectoryError> {
    if n_traj == 0 {
        return Err(TrajectoryError::InvalidConfig("n_traj must be >= 1".into()));
    }
    let records: Vec<TrajectoryRecord> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_stream(base_seed, k);
            evolve_with_rng(spec, params, psi0, cfg, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(reduce_records(&records))
}

/// RNG stream for trajectory `index` under `base_seed`: one keyed ChaCha
/// cipher, one counter stream per trajectory.
pub fn trajectory_stream(base_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng
}

fn reduce_records(records: &[TrajectoryRecord]) -> EnsembleResult {
    let n = records.len();
    let times = records[0].times.clone();
    let snapshots = times.len();
    let reduce = |select: &dyn Fn(&TrajectoryRecord) -> &[f64]| -> MeanCurve {
        let mut mean = vec![0.0; snapshots];
        let mut m2 = vec![0.0; snapshots];
        for rec in records {
            let vals = select(rec);
            for (i, &v) in vals.iter().enumerate() {
                mean[i] += v;
                m2[i] += v * v;
            }
        }
        for i in 0..snapshots {
            mean[i] /= n as f64;
        }
        let std_error = m2
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| {
                if n > 1 {
                    let var = ((sq - n as f64 * m * m) / (n as f64 - 1.0)).max(0.0);
                    (var / n as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        MeanCurve { mean, std_error }
    };

    let mean_photon = reduce(&|r| &r.mean_photon);
    let concurrence = reduce(&|r| &r.concurrence);
    let transmission = reduce(&|r| &r.transmission);

    let mut mean_clicks_so_far = vec![0.0; snapshots];
    for rec in records {
        let clicks: Vec<f64> = rec
            .times
            .iter()
            .map(|&t| {
                rec.jump_events
                    .iter()
                    .filter(|j| j.kind == ChannelKind::Cavity && j.time <= t)
                    .count() as f64
            })
            .collect();
        for (i, c) in clicks.iter().enumerate() {
            mean_clicks_so_far[i] += c;
        }
    }
    for c in &mut mean_clicks_so_far {
        *c /= n as f64;
    }

    EnsembleResult {
        n_traj: n,
        times,
        mean_photon,
        concurrence,
        transmission,
        mean_clicks_so_far,
        clicks_per_trajectory: records.iter().map(|r| r.clicks()).collect(),
    }
}

/// Click (cavity-jump) statistics restricted to a monitoring window.
#[derive(Debug, Clone)]
pub struct ClickStatistics {
    pub window: (f64, f64),
    pub clicks_per_record: Vec<usize>,
    pub total_clicks: usize,
    pub mean_clicks: f64,
    /// Empirical click rate per record per unit time.
    pub rate: f64,
    /// 95% Poisson confidence interval on the rate.
    pub rate_ci: (f64, f64),
    pub inter_click_times: Vec<f64>,
    pub first_click_times: Vec<Option<f64>>,
}

/// Count cavity clicks inside `window = (start, end)` across records.
pub fn click_statistics(
    records: &[TrajectoryRecord],
    window: (f64, f64),
) -> Result<ClickStatistics, TrajectoryError> {
    if records.is_empty() {
        return Err(TrajectoryError::NoRecords);
    }
    let (start, end) = window;
    if !(end > start) {
        return Err(TrajectoryError::EmptyWindow);
    }
    let mut clicks_per_record = Vec::with_capacity(records.len());
    let mut inter_click_times = Vec::new();
    let mut first_click_times = Vec::with_capacity(records.len());
    for rec in records {
        let times: Vec<f64> = rec
            .jump_events
            .iter()
            .filter(|j| j.kind == ChannelKind::Cavity && j.time >= start && j.time < end)
            .map(|j| j.time)
            .collect();
        clicks_per_record.push(times.len());
        first_click_times.push(times.first().copied());
        for pair in times.windows(2) {
            inter_click_times.push(pair[1] - pair[0]);
        }
    }
    let total_clicks: usize = clicks_per_record.iter().sum();
    let exposure = (end - start) * records.len() as f64;
    let rate = total_clicks as f64 / exposure;
    let rate_ci = poisson_rate_ci(total_clicks, exposure);
    Ok(ClickStatistics {
        window,
        mean_clicks: total_clicks as f64 / records.len() as f64,
        clicks_per_record,
        total_clicks,
        rate,
        rate_ci,
        inter_click_times,
        first_click_times,
    })
}

/// Byar's approximation to the 95% Poisson interval for a count over a known
/// exposure.
fn poisson_rate_ci(count: usize, exposure: f64) -> (f64, f64) {
    const Z: f64 = 1.959964;
    let n = count as f64;
    let lower = if count == 0 {
        0.0
    } else {
        n * (1.0 - 1.0 / (9.0 * n) - Z / (3.0 * n.sqrt())).powi(3)
    };
    let np = n + 1.0;
    let upper = np * (1.0 - 1.0 / (9.0 * np) + Z / (3.0 * np.sqrt())).powi(3);
    (lower / exposure, upper / exposure)
}
