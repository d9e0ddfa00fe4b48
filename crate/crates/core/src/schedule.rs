//! Two-pulse rephasing schedules and Δt scans.

use rayon::prelude::*;

use crate::error::{invalid, positive, Error, Result};
use crate::geometry::{raman_wavevector, rephasing_ratio, BeamGeometry};
use crate::spinwave::{EfficiencyModel, Estimate, PulseEvent};

/// Placement of the pulse pair inside the storage window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SchedulePolicy {
    /// `t1 = (T - Δt)/2`.
    #[default]
    Centered,
    /// First pulse at a fixed time (seconds).
    FixedT1(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoSchedule {
    pub t1: f64,
    pub t2: f64,
    pub readout_t: f64,
    pub pulses: Vec<PulseEvent>,
}

impl EchoSchedule {
    /// Pulse pair at `t1 < t2 <= readout_t` carrying the geometry's `k_pi`.
    pub fn new(geom: &BeamGeometry, t1: f64, t2: f64, readout_t: f64, epsilon: f64) -> Result<Self> {
        if !(t1 >= 0.0 && t1 < t2 && t2 <= readout_t * (1.0 + 1e-12)) {
            return Err(invalid(
                "schedule",
                format!("need 0 <= t1 < t2 <= T, got t1 = {t1}, t2 = {t2}, T = {readout_t}"),
            ));
        }
        let pulses = PulseEvent::pair(t1, t2, raman_wavevector(geom), epsilon)?.to_vec();
        Ok(EchoSchedule {
            t1,
            t2,
            readout_t,
            pulses,
        })
    }

    pub fn delta_t(&self) -> f64 {
        self.t2 - self.t1
    }

    /// Same times, with every pulse carrying imperfection `epsilon`.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        for p in &mut self.pulses {
            *p = PulseEvent::new(p.time, p.k_pi, epsilon, p.sign)?;
        }
        Ok(self)
    }
}

/// Smallest θ_pi (radians) that keeps the rephasing ratio at or below one.
pub fn min_theta_pi(geom: &BeamGeometry) -> Result<f64> {
    let ratio_at = |theta: f64| -> Result<f64> { rephasing_ratio(&geom.with_theta_pi(theta)?) };
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::FRAC_PI_2 * (1.0 - 1e-9));
    if ratio_at(hi)? > 1.0 {
        return Err(Error::Infeasible("no π-pulse angle satisfies the rephasing condition".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = match ratio_at(mid) {
            Ok(r) => r,
            Err(Error::DegenerateGeometry(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(hi)
}

/// Pulse interval and placement meeting `2 k_pi Δt = k_s T`.
pub fn schedule_with(geom: &BeamGeometry, readout_t: f64, epsilon: f64, policy: SchedulePolicy) -> Result<EchoSchedule> {
    positive("T", readout_t)?;
    let ratio = rephasing_ratio(geom)?;
    if ratio > 1.0 {
        let min = min_theta_pi(geom)?;
        return Err(Error::Infeasible(format!(
            "rephasing needs Δt = {ratio:.3}·T > T; increase θ_pi to at least {:.4} deg",
            min.to_degrees()
        )));
    }
    let dt = ratio * readout_t;
    let t1 = match policy {
        SchedulePolicy::Centered => 0.5 * (readout_t - dt),
        SchedulePolicy::FixedT1(t1) => {
            if !(t1 >= 0.0) {
                return Err(invalid("t1", format!("must be >= 0, got {t1}")));
            }
            if t1 + dt > readout_t * (1.0 + 1e-12) {
                return Err(Error::Infeasible(format!(
                    "t1 = {t1} s leaves no room for Δt = {dt} s before T = {readout_t} s"
                )));
            }
            t1
        }
    };
    EchoSchedule::new(geom, t1, (t1 + dt).min(readout_t), readout_t, epsilon)
}

/// Centered schedule with perfect pulses.
pub fn schedule_for(geom: &BeamGeometry, readout_t: f64) -> Result<EchoSchedule> {
    schedule_with(geom, readout_t, 0.0, SchedulePolicy::Centered)
}

/// 1/e half-width of the Δt scan, `1/(2|k_pi|σ_v)`.
pub fn scan_half_width(geom: &BeamGeometry, sigma_v: f64) -> f64 {
    1.0 / (2.0 * raman_wavevector(geom).magnitude() * sigma_v)
}

/// Default Δt window: optimum ± 3 half-widths, clipped to `(0, T]`.
pub fn default_scan_range(geom: &BeamGeometry, sigma_v: f64, readout_t: f64) -> Result<(f64, f64)> {
    let center = rephasing_ratio(geom)? * readout_t;
    let w = scan_half_width(geom, sigma_v);
    let lo = (center - 3.0 * w).max(readout_t * 1e-3);
    let hi = (center + 3.0 * w).min(readout_t);
    if lo >= hi {
        return Err(Error::Infeasible("scan window is empty inside (0, T]".into()));
    }
    Ok((lo, hi))
}

pub const DEFAULT_SCAN_POINTS: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub delta_t: f64,
    pub eta: Estimate,
}

/// Location and shape of a scan maximum from a three-point parabola in
/// `log η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub delta_t: f64,
    pub eta: f64,
    /// 1/e half-width of the local Gaussian, if the curvature is negative.
    pub half_width: Option<f64>,
    /// The maximum sits on the first or last grid point.
    pub at_edge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanCurve {
    pub readout_t: f64,
    pub points: Vec<ScanPoint>,
    pub peak: Peak,
}

pub fn find_peak(xs: &[f64], ys: &[f64]) -> Peak {
    assert!(xs.len() == ys.len() && !xs.is_empty());
    let (i, _) = ys
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, by), (i, &y)| if y > by { (i, y) } else { (bi, by) });
    if i == 0 || i + 1 == xs.len() {
        return Peak {
            delta_t: xs[i],
            eta: ys[i],
            half_width: None,
            at_edge: true,
        };
    }
    let ln = |y: f64| y.max(1e-300).ln();
    let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
    let (l0, l1, l2) = (ln(ys[i - 1]), ln(ys[i]), ln(ys[i + 1]));
    // parabola l(x) = l1 + b (x - x1) + c (x - x1)^2 through three points
    let (h0, h2) = (x0 - x1, x2 - x1);
    let d0 = (l0 - l1) / h0;
    let d2 = (l2 - l1) / h2;
    let c = (d2 - d0) / (h2 - h0);
    let b = d0 - c * h0;
    if !(c < 0.0) {
        return Peak {
            delta_t: x1,
            eta: ys[i],
            half_width: None,
            at_edge: false,
        };
    }
    let shift = (-b / (2.0 * c)).clamp(h0, h2);
    Peak {
        delta_t: x1 + shift,
        eta: (l1 + b * shift + c * shift * shift).exp(),
        half_width: Some((-1.0 / c).sqrt()),
        at_edge: false,
    }
}

/// Efficiency versus pulse interval at fixed read-out time, pulses centered.
pub fn scan_delta_t(
    geom: &BeamGeometry,
    model: &EfficiencyModel,
    readout_t: f64,
    dt_range: (f64, f64),
    n_points: usize,
    epsilon: f64,
) -> Result<ScanCurve> {
    positive("T", readout_t)?;
    let (lo, hi) = dt_range;
    if n_points < 3 {
        return Err(invalid("n_points", format!("need at least 3, got {n_points}")));
    }
    if !(lo > 0.0 && lo < hi && hi <= readout_t * (1.0 + 1e-12)) {
        return Err(invalid(
            "dt_range",
            format!("need 0 < dt_min < dt_max <= T, got ({lo}, {hi}) with T = {readout_t}"),
        ));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let points: Vec<ScanPoint> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let dt = if i + 1 == n_points { hi } else { lo + step * i as f64 };
            let t1 = 0.5 * (readout_t - dt);
            let sched = EchoSchedule::new(geom, t1, (t1 + dt).min(readout_t), readout_t, epsilon)?;
            let eta = model.evaluate(geom, &sched.pulses, readout_t)?;
            Ok(ScanPoint { delta_t: dt, eta })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.delta_t).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.eta.value).collect();
    let peak = find_peak(&xs, &ys);
    Ok(ScanCurve {
        readout_t,
        points,
        peak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPoint {
    pub theta_pi: f64,
    /// Located optimum over T.
    pub ratio: f64,
    /// `|k_s|/(2|k_pi|)` for the same geometry.
    pub theory: f64,
    /// Grid spacing over T.
    pub resolution: f64,
}

/// For each θ_pi, scan Δt over the default window and report `Δt*/T`.
pub fn ratio_vs_angle(
    geom_base: &BeamGeometry,
    theta_pi_list: &[f64],
    model: &EfficiencyModel,
    readout_t: f64,
    n_points: usize,
) -> Result<Vec<RatioPoint>> {
    let sigma_v = model.velocity_spread();
    theta_pi_list
        .iter()
        .map(|&theta| {
            if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
                return Err(invalid("theta_pi", format!("must lie in (0, 90) deg, got {}", theta.to_degrees())));
            }
            let geom = geom_base.with_theta_pi(theta)?;
            let range = default_scan_range(&geom, sigma_v, readout_t)?;
            let curve = scan_delta_t(&geom, model, readout_t, range, n_points, 0.0)?;
            Ok(RatioPoint {
                theta_pi: theta,
                ratio: curve.peak.delta_t / readout_t,
                theory: rephasing_ratio(&geom)?,
                resolution: (range.1 - range.0) / (n_points - 1) as f64 / readout_t,
            })
        })
        .collect()
}
