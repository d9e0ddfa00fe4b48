//! Spin-wave phase grating: imprinting, ballistic dephasing, π-pulse phase
//! bookkeeping and collective retrieval efficiency.
//!
//! Phases are tracked in the frame of the read-out mode. After imprinting,
//! atom `j` carries `k_s·r_j(0)`; free evolution adds `k_s·v_j·dt`; a π pulse
//! adds `sign·(-2)·k_pi·r_j(t)`. The mismatch read out at time `T` is the
//! accumulated phase minus the imprinted one, which for the standard
//! two-pulse sequence (signs -1 then +1) is `(k_s·T - 2·k_pi·Δt)·v_j`.
//!
//! Pulse imperfection removes population from the coherent sum: a pulse with
//! imperfection `ε` leaves a fraction `ε` of the population behind, so each
//! atom's coherent amplitude is multiplied by `sqrt(1 - ε)` and the retrieved
//! intensity by `1 - ε`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::{mode_weight, thermal_sigma_v, AtomSample, EnsembleSpec};
use crate::error::{in_range, invalid, Error, Result};
use crate::geometry::{spinwave_wavevector, BeamGeometry, Vec3, Wavevector};
use crate::parallel::chunked_sum;

/// Which mode weight enters the collective read-out sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeWeighting {
    /// Weight fixed at the imprint positions.
    #[default]
    Imprint,
    /// Geometric mean of the weight at imprint and at read-out positions,
    /// which accounts for atoms drifting out of the mode during storage.
    Readout,
}

/// Which ground-state pattern the collective terms occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// `|g...s_j...g>`
    Original,
    /// `|s...g_j...s>`
    Flipped,
}

impl Pattern {
    fn flipped(self) -> Self {
        match self {
            Pattern::Original => Pattern::Flipped,
            Pattern::Flipped => Pattern::Original,
        }
    }
}

/// An instantaneous Raman π pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    pub time: f64,
    pub k_pi: Wavevector,
    pub epsilon: f64,
    /// +1 or -1.
    pub sign: f64,
}

impl PulseEvent {
    pub fn new(time: f64, k_pi: Wavevector, epsilon: f64, sign: f64) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(invalid("time", format!("pulse time must be >= 0, got {time}")));
        }
        in_range("epsilon", epsilon, 0.0, 0.5 + f64::EPSILON)?;
        if sign != 1.0 && sign != -1.0 {
            return Err(invalid("sign", "must be +1 or -1"));
        }
        Ok(PulseEvent {
            time,
            k_pi,
            epsilon,
            sign,
        })
    }

    /// The standard rephasing pair at `t1 <= t2` (signs -1, +1).
    pub fn pair(t1: f64, t2: f64, k_pi: Wavevector, epsilon: f64) -> Result<[PulseEvent; 2]> {
        Ok([
            PulseEvent::new(t1, k_pi, epsilon, -1.0)?,
            PulseEvent::new(t2, k_pi, epsilon, 1.0)?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinWaveState {
    phases: Vec<f64>,
    reference: Vec<f64>,
    amplitudes: Vec<f64>,
    residual: Vec<f64>,
    weights: Vec<f64>,
    read_weights: Option<Vec<f64>>,
    mode_waist: f64,
    pattern: Pattern,
    k_s: Wavevector,
    t_now: f64,
}

impl SpinWaveState {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Accumulated phase minus the imprinted phase, per atom.
    pub fn mismatch(&self) -> Vec<f64> {
        self.phases.iter().zip(&self.reference).map(|(p, r)| p - r).collect()
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Per-atom coherent amplitude `a_j`.
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Per-atom surviving coherent population `a_j^2`.
    pub fn coherent_population(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn k_s(&self) -> Wavevector {
        self.k_s
    }

    pub fn t_now(&self) -> f64 {
        self.t_now
    }

    pub fn weighting(&self) -> ModeWeighting {
        if self.read_weights.is_some() {
            ModeWeighting::Readout
        } else {
            ModeWeighting::Imprint
        }
    }

    fn check_atoms(&self, atoms: &AtomSample) -> Result<()> {
        if atoms.len() != self.len() {
            return Err(invalid("atoms", "sample size does not match the state"));
        }
        Ok(())
    }
}

/// Write the grating `k_s` onto the sample at t = 0.
pub fn imprint(atoms: &AtomSample, k_s: Wavevector) -> Result<SpinWaveState> {
    imprint_with(atoms, k_s, ModeWeighting::Imprint)
}

pub fn imprint_with(atoms: &AtomSample, k_s: Wavevector, weighting: ModeWeighting) -> Result<SpinWaveState> {
    if atoms.is_empty() {
        return Err(invalid("atoms", "cannot imprint on an empty sample"));
    }
    let phases: Vec<f64> = atoms.positions().iter().map(|r| k_s.dot(r)).collect();
    let n = phases.len();
    Ok(SpinWaveState {
        reference: phases.clone(),
        phases,
        amplitudes: vec![1.0; n],
        residual: vec![0.0; n],
        weights: atoms.weights().to_vec(),
        read_weights: (weighting == ModeWeighting::Readout).then(|| atoms.weights().to_vec()),
        mode_waist: atoms.mode_waist(),
        pattern: Pattern::Original,
        k_s,
        t_now: 0.0,
    })
}

/// Ballistic free evolution for `dt` seconds.
pub fn free_evolve(state: SpinWaveState, atoms: &AtomSample, dt: f64) -> Result<SpinWaveState> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(invalid("dt", format!("must be >= 0, got {dt}")));
    }
    let t = state.t_now + dt;
    evolve_impl(state, atoms, dt, t)
}

/// Free evolution up to absolute time `t` (sets the clock exactly).
pub fn free_evolve_to(state: SpinWaveState, atoms: &AtomSample, t: f64) -> Result<SpinWaveState> {
    if !(t.is_finite() && t >= state.t_now) {
        return Err(Error::Sequencing(format!(
            "cannot evolve from t = {} back to t = {t}",
            state.t_now
        )));
    }
    let dt = t - state.t_now;
    evolve_impl(state, atoms, dt, t)
}

fn evolve_impl(mut state: SpinWaveState, atoms: &AtomSample, dt: f64, t_new: f64) -> Result<SpinWaveState> {
    state.check_atoms(atoms)?;
    if dt > 0.0 {
        let k = state.k_s.components();
        state
            .phases
            .par_iter_mut()
            .zip(atoms.velocities().par_iter())
            .for_each(|(p, v)| *p += k.dot(v) * dt);
    }
    state.t_now = t_new;
    if let Some(rw) = state.read_weights.as_mut() {
        let waist = state.mode_waist;
        rw.par_iter_mut().enumerate().for_each(|(j, w)| {
            *w = mode_weight(&atoms.position_at(j, t_new), waist);
        });
    }
    Ok(state)
}

/// Tolerance for matching a pulse time to the state clock.
fn time_tolerance(t: f64) -> f64 {
    1e-12 * t.abs().max(1e-6)
}

/// Apply an instantaneous π pulse at `pulse.time`, which must equal the
/// state's clock: evolve the state to the pulse time first.
pub fn apply_pi_pulse(mut state: SpinWaveState, atoms: &AtomSample, pulse: &PulseEvent) -> Result<SpinWaveState> {
    state.check_atoms(atoms)?;
    let tol = time_tolerance(pulse.time);
    if pulse.time < state.t_now - tol {
        return Err(Error::Sequencing(format!(
            "pulse at t = {} precedes the state clock t = {}",
            pulse.time, state.t_now
        )));
    }
    if pulse.time > state.t_now + tol {
        return Err(Error::Sequencing(format!(
            "state at t = {} has not been evolved to the pulse at t = {}",
            state.t_now, pulse.time
        )));
    }
    let k = pulse.k_pi.components() * (-2.0 * pulse.sign);
    let t = pulse.time;
    state
        .phases
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, p)| *p += k.dot(&atoms.position_at(j, t)));
    let eps = pulse.epsilon;
    let survive = (1.0 - eps).sqrt();
    state.residual.iter_mut().for_each(|r| *r += (1.0 - *r) * eps);
    state.amplitudes.iter_mut().for_each(|a| *a *= survive);
    state.pattern = state.pattern.flipped();
    Ok(state)
}

/// A value with its Monte Carlo standard error (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    z: Complex64,
    w: f64,
    r: f64,
}

impl std::ops::Add for Sums {
    type Output = Sums;
    fn add(self, o: Sums) -> Sums {
        Sums {
            z: self.z + o.z,
            w: self.w + o.w,
            r: self.r + o.r,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Spread {
    dev2: f64,
    proj2: f64,
}

impl std::ops::Add for Spread {
    type Output = Spread;
    fn add(self, o: Spread) -> Spread {
        Spread {
            dev2: self.dev2 + o.dev2,
            proj2: self.proj2 + o.proj2,
        }
    }
}

/// `|Σ_j u_j a_j e^{iΔφ_j}|² / D²` with a delta-method standard error that
/// also covers the `1/N_eff` bias floor of the squared modulus. With imprint
/// weighting `u_j = w_j` and `D = Σ w_j`; with read-out weighting
/// `u_j = √(w_j r_j)` and `D = √(Σ w_j · Σ r_j)`, the normalized overlap of
/// the stored spin wave with the read-out mode, which cannot exceed one.
pub fn retrieval_efficiency_mc(state: &SpinWaveState) -> Estimate {
    let n = state.len();
    let read = |j: usize| state.read_weights.as_ref().map_or(state.weights[j], |rw| rw[j]);
    let term = |j: usize| -> Complex64 {
        let w = match &state.read_weights {
            Some(rw) => (state.weights[j] * rw[j]).sqrt(),
            None => state.weights[j],
        };
        Complex64::from_polar(w * state.amplitudes[j], state.phases[j] - state.reference[j])
    };
    let sums = chunked_sum(n, |r| {
        r.fold(Sums::default(), |acc, j| Sums {
            z: acc.z + term(j),
            w: acc.w + state.weights[j],
            r: acc.r + read(j),
        })
    });
    if sums.w <= 0.0 || sums.r <= 0.0 {
        return Estimate {
            value: 0.0,
            stderr: 0.0,
        };
    }
    let d = (sums.w * sums.r).sqrt();
    let s = sums.z / d;
    let spread = chunked_sum(n, |r| {
        r.fold(Spread::default(), |acc, j| {
            let share = (sums.r * state.weights[j] + sums.w * read(j)) / (2.0 * d);
            let dev = term(j) - s * share;
            let proj = (s.conj() * dev).re;
            Spread {
                dev2: acc.dev2 + dev.norm_sqr(),
                proj2: acc.proj2 + proj * proj,
            }
        })
    });
    let d2 = d * d;
    let var_s = spread.dev2 / d2;
    let var_lin = 4.0 * spread.proj2 / d2;
    Estimate {
        value: s.norm_sqr(),
        stderr: (var_lin + var_s * var_s).sqrt(),
    }
}

fn check_pulses(pulses: &[PulseEvent], readout_t: f64) -> Result<()> {
    if !(readout_t.is_finite() && readout_t >= 0.0) {
        return Err(invalid("readout_t", format!("must be >= 0, got {readout_t}")));
    }
    let mut last = 0.0;
    for p in pulses {
        if p.time < last {
            return Err(Error::Sequencing("pulses are not in time order".into()));
        }
        if p.time > readout_t + time_tolerance(readout_t) {
            return Err(Error::Sequencing(format!(
                "pulse at t = {} is after read-out at T = {readout_t}",
                p.time
            )));
        }
        last = p.time;
    }
    Ok(())
}

/// Run imprint -> (evolve, pulse)* -> evolve to `readout_t` -> retrieve.
pub fn simulate_retrieval(
    atoms: &AtomSample,
    k_s: Wavevector,
    pulses: &[PulseEvent],
    readout_t: f64,
    weighting: ModeWeighting,
) -> Result<Estimate> {
    check_pulses(pulses, readout_t)?;
    let mut state = imprint_with(atoms, k_s, weighting)?;
    for p in pulses {
        state = free_evolve_to(state, atoms, p.time)?;
        state = apply_pi_pulse(state, atoms, p)?;
    }
    let t_end = readout_t.max(state.t_now);
    state = free_evolve_to(state, atoms, t_end)?;
    Ok(retrieval_efficiency_mc(&state))
}

/// Velocity coefficient `c` and position coefficient `d` of the read-out
/// mismatch phase `c·v + d·r(0)`.
pub fn mismatch_coefficients(k_s: Wavevector, pulses: &[PulseEvent], readout_t: f64) -> (Vec3, Vec3) {
    let mut c = k_s.components() * readout_t;
    let mut d = Vec3::zeros();
    for p in pulses {
        let k = p.k_pi.components() * (-2.0 * p.sign);
        c += k * p.time;
        d += k;
    }
    (c, d)
}

/// Per-axis Gaussian average of the weighted phase factor, normalized by the
/// mean imprint weight (or, with read-out weighting, by the geometric mean of
/// the mean imprint and read-out weights). `waist = None` means the axis carries no weight.
fn axis_factor(sigma: f64, sv: f64, waist: Option<f64>, t: f64, readout: bool, d: f64, c: f64) -> f64 {
    let Some(m) = waist else {
        return (-0.5 * (d * d * sigma * sigma + c * c * sv * sv)).exp();
    };
    let m2 = m * m;
    let a = 1.0 / (sigma * sigma) + 2.0 / m2;
    let (m12, m22) = if readout {
        (t / m2, 1.0 / (sv * sv) + t * t / m2)
    } else {
        (0.0, 1.0 / (sv * sv))
    };
    let det = a * m22 - m12 * m12;
    let quad = (d * d * m22 - 2.0 * d * c * m12 + c * c * a) / det;
    let numerator = (-0.5 * quad).exp() / (sigma * sv * det.sqrt());
    let mean_imprint = 1.0 / (1.0 + 2.0 * sigma * sigma / m2).sqrt();
    let denominator = if readout {
        let spread2 = sigma * sigma + sv * sv * t * t;
        (mean_imprint / (1.0 + 2.0 * spread2 / m2).sqrt()).sqrt()
    } else {
        mean_imprint
    };
    numerator / denominator
}

/// Closed-form efficiency for a Gaussian cloud with Gaussian velocities:
/// `η = Π_axes R_axis² · Π_pulses (1 - ε)`. With imprint weighting and no
/// pulses this is `exp(-(k_s σ_v T)²)`.
pub fn retrieval_efficiency_closed_form(
    geom: &BeamGeometry,
    spec: &EnsembleSpec,
    pulses: &[PulseEvent],
    readout_t: f64,
    weighting: ModeWeighting,
) -> Result<f64> {
    spec.validate()?;
    check_pulses(pulses, readout_t)?;
    let (c, d) = mismatch_coefficients(spinwave_wavevector(geom), pulses, readout_t);
    let sv = thermal_sigma_v(spec);
    let readout = weighting == ModeWeighting::Readout;
    let mut amp = 1.0;
    for axis in 0..3 {
        let waist = (axis < 2).then_some(spec.mode_waist);
        amp *= axis_factor(spec.cloud_sigma[axis], sv, waist, readout_t, readout, d[axis], c[axis]);
    }
    let survival: f64 = pulses.iter().map(|p| 1.0 - p.epsilon).product();
    Ok(amp * amp * survival)
}

/// Motional dephasing time `1/(|k_s| σ_v)`.
pub fn dephasing_time(geom: &BeamGeometry, spec: &EnsembleSpec) -> f64 {
    1.0 / (spinwave_wavevector(geom).magnitude() * thermal_sigma_v(spec))
}

/// Selects how retrieval efficiencies are computed.
#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    ClosedForm(&'a EnsembleSpec),
    MonteCarlo(&'a AtomSample),
}

#[derive(Debug, Clone, Copy)]
pub struct EfficiencyModel<'a> {
    pub backend: Backend<'a>,
    pub weighting: ModeWeighting,
}

impl<'a> EfficiencyModel<'a> {
    pub fn closed_form(spec: &'a EnsembleSpec) -> Self {
        EfficiencyModel {
            backend: Backend::ClosedForm(spec),
            weighting: ModeWeighting::Imprint,
        }
    }

    pub fn monte_carlo(atoms: &'a AtomSample) -> Self {
        EfficiencyModel {
            backend: Backend::MonteCarlo(atoms),
            weighting: ModeWeighting::Imprint,
        }
    }

    pub fn with_weighting(mut self, weighting: ModeWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// One-dimensional RMS velocity of the underlying ensemble.
    pub fn velocity_spread(&self) -> f64 {
        match self.backend {
            Backend::ClosedForm(spec) => thermal_sigma_v(spec),
            Backend::MonteCarlo(atoms) => {
                let n = atoms.len().max(1) as f64;
                let sum: f64 = chunked_sum(atoms.len(), |r| r.map(|j| atoms.velocities()[j].norm_squared()).sum());
                (sum / (3.0 * n)).sqrt()
            }
        }
    }

    pub fn evaluate(&self, geom: &BeamGeometry, pulses: &[PulseEvent], readout_t: f64) -> Result<Estimate> {
        match self.backend {
            Backend::ClosedForm(spec) => Ok(Estimate {
                value: retrieval_efficiency_closed_form(geom, spec, pulses, readout_t, self.weighting)?,
                stderr: 0.0,
            }),
            Backend::MonteCarlo(atoms) => {
                simulate_retrieval(atoms, spinwave_wavevector(geom), pulses, readout_t, self.weighting)
            }
        }
    }
}
