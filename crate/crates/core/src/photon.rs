//! DLCZ click statistics and the write/read cross-correlation.
//!
//! Per trial a write-out click happens with `p_w = χ·η_w + dark_w`. Given a
//! heralded spin wave, read-out retrieves and detects it with
//! `q = η_r·η_deph`; the read channel also sees uncorrelated background
//! `dark_r` and, with echo pulses, π-pulse noise `n_pi`. To leading order in
//! `χ`:
//!
//! ```text
//! p_r  = χ·q + dark_r + n_pi
//! p_wr = χ·η_w·(q + p_r) + dark_w·p_r
//! g2   = p_wr/(p_w·p_r) = 1 + χ·η_w·q/(p_w·p_r)
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::atom_rng;
use crate::error::{in_range, invalid, Error, Result};
use crate::geometry::BeamGeometry;
use crate::schedule::{schedule_with, SchedulePolicy};
use crate::spinwave::EfficiencyModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DlczParams {
    pub chi: f64,
    pub eta_w: f64,
    pub eta_r: f64,
    pub dark_w: f64,
    pub dark_r: f64,
    pub n_pi: f64,
}

impl DlczParams {
    pub fn validate(&self) -> Result<()> {
        in_range("chi", self.chi, 0.0, 1.0)?;
        in_range("eta_w", self.eta_w, 0.0, 1.0)?;
        in_range("eta_r", self.eta_r, 0.0, 1.0)?;
        in_range("dark_w", self.dark_w, 0.0, 1.0)?;
        in_range("dark_r", self.dark_r, 0.0, 1.0)?;
        in_range("n_pi", self.n_pi, 0.0, 1.0)?;
        if self.chi * self.eta_r + self.dark_r + self.n_pi >= 1.0 {
            return Err(invalid("dlcz", "chi·eta_r + dark_r + n_pi must stay below 1"));
        }
        Ok(())
    }

    pub fn with_n_pi(mut self, n_pi: f64) -> Result<Self> {
        self.n_pi = n_pi;
        self.validate()?;
        Ok(self)
    }
}

/// Background attribution for the echo-off read channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReadBackground {
    /// `dark_r` is this fraction of the measured `p_r`.
    FractionOfPr(f64),
    /// `dark_r` equals the long-time asymptote of `p_r`.
    Asymptote(f64),
}

impl Default for ReadBackground {
    fn default() -> Self {
        ReadBackground::FractionOfPr(0.1)
    }
}

/// Solve for `(χ, η_w, η_r, dark_r)` from echo-off `(p_w, p_r, g2)` at
/// T = 0 with `dark_w = 0`:
///
/// ```text
/// η_r = (g2 - 1)·p_r,   χ = (p_r - dark_r)/η_r,   η_w = p_w/χ
/// ```
pub fn calibrate(p_w: f64, p_r: f64, g2: f64, background: ReadBackground, n_pi: f64) -> Result<DlczParams> {
    in_range("p_w", p_w, f64::MIN_POSITIVE, 1.0)?;
    in_range("p_r", p_r, f64::MIN_POSITIVE, 1.0)?;
    if !(g2 > 1.0 && g2.is_finite()) {
        return Err(invalid("g2", format!("calibration needs g2 > 1, got {g2}")));
    }
    let dark_r = match background {
        ReadBackground::FractionOfPr(f) => {
            in_range("dark fraction", f, 0.0, 1.0)?;
            f * p_r
        }
        ReadBackground::Asymptote(a) => {
            if !(a >= 0.0 && a < p_r) {
                return Err(invalid("p_r asymptote", format!("must lie in [0, p_r), got {a}")));
            }
            a
        }
    };
    let eta_r = (g2 - 1.0) * p_r;
    let chi = (p_r - dark_r) / eta_r;
    let eta_w = p_w / chi;
    let params = DlczParams {
        chi,
        eta_w,
        eta_r,
        dark_w: 0.0,
        dark_r,
        n_pi,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClickProbabilities {
    pub p_w: f64,
    pub p_r: f64,
    pub p_wr: f64,
}

pub fn model_probabilities(params: &DlczParams, eta_deph: f64, echo_on: bool) -> Result<ClickProbabilities> {
    params.validate()?;
    if !(0.0..=1.0).contains(&eta_deph) {
        return Err(invalid("eta_deph", format!("must lie in [0, 1], got {eta_deph}")));
    }
    let noise = if echo_on { params.n_pi } else { 0.0 };
    let p_w = params.chi * params.eta_w + params.dark_w;
    let q = params.eta_r * eta_deph;
    let p_r = params.chi * q + params.dark_r + noise;
    let p_wr = params.chi * params.eta_w * (q + p_r) + params.dark_w * p_r;
    if p_w > 1.0 || p_r > 1.0 || p_w + p_r - p_wr > 1.0 {
        return Err(invalid("dlcz", "click probabilities exceed one"));
    }
    if p_wr > p_w.min(p_r) {
        return Err(invalid(
            "dlcz",
            "coincidence probability exceeds a single-channel probability; parameters are outside the low-excitation regime",
        ));
    }
    Ok(ClickProbabilities { p_w, p_r, p_wr })
}

/// `p_wr/(p_w·p_r)`.
pub fn g2_estimate(p_w: f64, p_r: f64, p_wr: f64) -> Result<f64> {
    if !(p_w > 0.0 && p_r > 0.0) {
        return Err(Error::UndefinedEstimate(format!(
            "g2 needs p_w > 0 and p_r > 0, got p_w = {p_w}, p_r = {p_r}"
        )));
    }
    Ok(p_wr / (p_w * p_r))
}

/// Delta-method standard error of `g2` estimated from `n_trials` trials,
/// using `Var(ln g2) = (1/n)(1/p_wr - 1/p_w - 1/p_r + 2 g2 - 1)`.
pub fn g2_stderr(p: &ClickProbabilities, n_trials: u64) -> Result<f64> {
    let g2 = g2_estimate(p.p_w, p.p_r, p.p_wr)?;
    if n_trials == 0 {
        return Err(Error::UndefinedEstimate("no trials".into()));
    }
    if p.p_wr <= 0.0 {
        // one coincidence as the resolution limit
        return Ok(1.0 / (n_trials as f64 * p.p_w * p.p_r));
    }
    let var = (1.0 / p.p_wr - 1.0 / p.p_w - 1.0 / p.p_r + 2.0 * g2 - 1.0).max(0.0) / n_trials as f64;
    Ok(g2 * var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub n_trials: u64,
    pub n_w: u64,
    pub n_r: u64,
    pub n_wr: u64,
}

impl Counts {
    pub fn probabilities(&self) -> ClickProbabilities {
        let n = self.n_trials.max(1) as f64;
        ClickProbabilities {
            p_w: self.n_w as f64 / n,
            p_r: self.n_r as f64 / n,
            p_wr: self.n_wr as f64 / n,
        }
    }

    /// Count-level `g2` with its standard error.
    pub fn g2(&self) -> Result<(f64, f64)> {
        let p = self.probabilities();
        let g2 = g2_estimate(p.p_w, p.p_r, p.p_wr)?;
        Ok((g2, g2_stderr(&p, self.n_trials)?))
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            n_trials: self.n_trials + o.n_trials,
            n_w: self.n_w + o.n_w,
            n_r: self.n_r + o.n_r,
            n_wr: self.n_wr + o.n_wr,
        }
    }
}

/// Trials per random stream in `simulate_counts`.
pub const TRIAL_BLOCK: u64 = 1 << 16;

/// Bernoulli emulation of `n_trials` trials. Block `b` of `TRIAL_BLOCK`
/// trials draws from stream `b` of the seed, one uniform per trial.
pub fn simulate_counts(params: &DlczParams, eta_deph: f64, echo_on: bool, n_trials: u64, seed: u64) -> Result<Counts> {
    if n_trials == 0 {
        return Err(invalid("n_trials", "must be >= 1"));
    }
    let p = model_probabilities(params, eta_deph, echo_on)?;
    let c_wr = p.p_wr;
    let c_w = p.p_w;
    let c_r = p.p_w + p.p_r - p.p_wr;
    let n_blocks = n_trials.div_ceil(TRIAL_BLOCK);
    let counts = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = atom_rng(seed, b);
            let len = TRIAL_BLOCK.min(n_trials - b * TRIAL_BLOCK);
            let mut c = Counts {
                n_trials: len,
                n_w: 0,
                n_r: 0,
                n_wr: 0,
            };
            for _ in 0..len {
                let u: f64 = rng.random();
                if u < c_wr {
                    c.n_wr += 1;
                    c.n_w += 1;
                    c.n_r += 1;
                } else if u < c_w {
                    c.n_w += 1;
                } else if u < c_r {
                    c.n_r += 1;
                }
            }
            c
        })
        .reduce(
            || Counts {
                n_trials: 0,
                n_w: 0,
                n_r: 0,
                n_wr: 0,
            },
            |a, b| a + b,
        );
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationPoint {
    /// Storage time (seconds).
    pub t: f64,
    pub p_w: f64,
    pub p_r: f64,
    pub p_wr: f64,
    pub g2: f64,
    pub stderr_g2: f64,
    pub eta_deph: f64,
    pub echo_on: bool,
}

/// Build a point from model probabilities, with the standard error expected
/// after `n_trials` trials.
pub fn correlation_point(
    params: &DlczParams,
    t: f64,
    eta_deph: f64,
    echo_on: bool,
    n_trials: u64,
) -> Result<CorrelationPoint> {
    let p = model_probabilities(params, eta_deph, echo_on)?;
    Ok(CorrelationPoint {
        t,
        p_w: p.p_w,
        p_r: p.p_r,
        p_wr: p.p_wr,
        g2: g2_estimate(p.p_w, p.p_r, p.p_wr)?,
        stderr_g2: g2_stderr(&p, n_trials)?,
        eta_deph,
        echo_on,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margin {
    /// `g2 - 2`.
    pub margin: f64,
    /// `g2 - sigmas·stderr > 2`.
    pub nonclassical: bool,
}

pub fn nonclassicality_margin(point: &CorrelationPoint, sigmas: f64) -> Margin {
    Margin {
        margin: point.g2 - 2.0,
        nonclassical: point.g2 - sigmas * point.stderr_g2 > 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPoint {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Curve {
    pub points: Vec<CorrelationPoint>,
    pub skipped: Vec<SkippedPoint>,
}

/// Options for `g2_curve` beyond the model inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveOptions {
    pub echo_on: bool,
    pub epsilon: f64,
    pub policy: SchedulePolicy,
    pub n_trials: u64,
}

/// `g2` versus storage time. Echo-on points use the rephasing schedule for
/// each `T`; points whose schedule is infeasible are listed in `skipped`.
pub fn g2_curve(
    params: &DlczParams,
    geom: &BeamGeometry,
    model: &EfficiencyModel,
    t_list: &[f64],
    opts: &CurveOptions,
) -> Result<G2Curve> {
    params.validate()?;
    let mut points = Vec::with_capacity(t_list.len());
    let mut skipped = Vec::new();
    for &t in t_list {
        let eta = if opts.echo_on {
            match schedule_with(geom, t, opts.epsilon, opts.policy) {
                Ok(s) => model.evaluate(geom, &s.pulses, t)?,
                Err(e @ (Error::Infeasible(_) | Error::InvalidParameter { .. })) => {
                    skipped.push(SkippedPoint { t, reason: e.to_string() });
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            model.evaluate(geom, &[], t)?
        };
        let eta_deph = eta.value.clamp(0.0, 1.0);
        points.push(correlation_point(params, t, eta_deph, opts.echo_on, opts.n_trials)?);
    }
    Ok(G2Curve { points, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::scale_noise;
    use approx::assert_relative_eq;

    fn reference() -> DlczParams {
        calibrate(0.0035, 0.0028, 24.3, ReadBackground::default(), 0.008).unwrap()
    }

    #[test]
    fn estimate_basics() {
        assert_relative_eq!(g2_estimate(0.1, 0.2, 0.02).unwrap(), 1.0, max_relative = 1e-14);
        // oracle: p_wr = 24.3·0.0035·0.0028
        assert_relative_eq!(g2_estimate(0.0035, 0.0028, 2.3814e-4).unwrap(), 24.3, max_relative = 1e-12);
        assert_eq!(g2_estimate(0.1, 0.1, 0.0).unwrap(), 0.0);
        assert!(matches!(g2_estimate(0.0, 0.1, 0.0), Err(Error::UndefinedEstimate(_))));
    }

    #[test]
    fn calibration_closed_form() {
        let p = reference();
        assert_relative_eq!(p.eta_r, 23.3 * 0.0028, max_relative = 1e-12);
        assert_relative_eq!(p.chi, 0.9 * 0.0028 / (23.3 * 0.0028), max_relative = 1e-12);
        assert_relative_eq!(p.chi, 0.0386, max_relative = 2e-3);
        assert_relative_eq!(p.eta_w, 0.0906, max_relative = 2e-3);
        let c = model_probabilities(&p, 1.0, false).unwrap();
        assert_relative_eq!(c.p_w, 0.0035, max_relative = 1e-12);
        assert_relative_eq!(c.p_r, 0.0028, max_relative = 1e-12);
        assert_relative_eq!(g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap(), 24.3, max_relative = 1e-12);
        let asym = calibrate(0.0035, 0.0028, 24.3, ReadBackground::Asymptote(0.0005), 0.0).unwrap();
        assert_relative_eq!(asym.dark_r, 0.0005);
        assert!(calibrate(0.0035, 0.0028, 0.9, ReadBackground::default(), 0.0).is_err());
    }

    #[test]
    fn echo_on_predictions() {
        let p = reference();
        let c = model_probabilities(&p, 0.97 * 0.97, true).unwrap();
        let g2 = g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap();
        // oracle: 1 + q/p_r with q = η_r·0.9409, p_r = χq + dark_r + 0.008
        let q = p.eta_r * 0.9409;
        assert_relative_eq!(g2, 1.0 + q / (p.chi * q + p.dark_r + 0.008), max_relative = 1e-12);
        assert!((4.0..=8.0).contains(&g2), "{g2}");
        let n01 = scale_noise(0.008, 0.03, 0.01).unwrap();
        let c = model_probabilities(&p.with_n_pi(n01).unwrap(), 0.99 * 0.99, true).unwrap();
        assert!(g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap() > 10.0);
    }

    #[test]
    fn no_pairs_no_correlation() {
        let p = DlczParams {
            chi: 0.0,
            eta_w: 0.1,
            eta_r: 0.1,
            dark_w: 0.01,
            dark_r: 0.002,
            n_pi: 0.008,
        };
        let c = model_probabilities(&p, 0.8, true).unwrap();
        assert_relative_eq!(c.p_wr, c.p_w * (p.dark_r + p.n_pi), max_relative = 1e-14);
        assert_relative_eq!(g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn invalid_params() {
        let mut p = reference();
        p.n_pi = 0.999;
        assert!(p.validate().is_err());
        assert!(model_probabilities(&reference(), 1.5, false).is_err());
    }

    #[test]
    fn margins() {
        let mut pt = correlation_point(&reference(), 0.0, 1.0, false, 1_000_000).unwrap();
        let m = nonclassicality_margin(&pt, 1.0);
        assert_relative_eq!(m.margin, 22.3, max_relative = 1e-9);
        assert!(m.nonclassical);
        pt.g2 = 2.0;
        let m = nonclassicality_margin(&pt, 1.0);
        assert_eq!(m.margin, 0.0);
        assert!(!m.nonclassical);
        pt.g2 = 5.2;
        pt.stderr_g2 = 0.1;
        assert!(nonclassicality_margin(&pt, 1.0).nonclassical);
    }

    #[test]
    fn zero_probabilities_give_zero_counts() {
        let p = DlczParams {
            chi: 0.0,
            eta_w: 0.0,
            eta_r: 0.0,
            dark_w: 0.0,
            dark_r: 0.0,
            n_pi: 0.0,
        };
        let c = simulate_counts(&p, 1.0, true, 100_000, 3).unwrap();
        assert_eq!((c.n_w, c.n_r, c.n_wr), (0, 0, 0));
        assert_eq!(c.n_trials, 100_000);
    }

    #[test]
    fn counts_are_reproducible_and_pool_independent() {
        let p = reference();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_counts(&p, 1.0, false, 300_001, 9).unwrap())
        };
        assert_eq!(run(1), run(3));
        assert_ne!(run(1), simulate_counts(&p, 1.0, false, 300_001, 10).unwrap());
    }

    #[test]
    fn count_estimator_matches_model() {
        let p = reference();
        let c = simulate_counts(&p, 1.0, false, 2_000_000, 4).unwrap();
        let (g2, se) = c.g2().unwrap();
        assert!((g2 - 24.3).abs() < 3.0 * se, "{g2} ± {se}");
    }

    #[test]
    fn stderr_scaling() {
        let p = model_probabilities(&reference(), 1.0, false).unwrap();
        let a = g2_stderr(&p, 1_000_000).unwrap();
        let b = g2_stderr(&p, 2_000_000).unwrap();
        assert_relative_eq!(a / b, 2f64.sqrt(), max_relative = 1e-12);
    }
}
