//! Least-squares fits for the damped cosine, Gaussian peak and 1/e decay
//! models.
//!
//! All fits run Levenberg-Marquardt with Marquardt's diagonal scaling on
//! internally rescaled data (x divided by its span, y by its largest
//! magnitude), so parameters of very different size stay well conditioned.
//! Standard errors are the linearized estimate `s²(JᵀJ)⁻¹`, or `(JᵀWJ)⁻¹`
//! when per-point errors are supplied.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::atom_rng;
use crate::error::{invalid, Error, Result};

pub const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-10;
const GRADIENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    DampedCosine,
    GaussianPeak,
    ExponentialDecay,
    GaussianDecay,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::DampedCosine => "damped_cosine",
            FitModel::GaussianPeak => "gaussian_peak",
            FitModel::ExponentialDecay => "exponential_decay",
            FitModel::GaussianDecay => "gaussian_decay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    NotConverged,
    PeakNotBracketed,
    NonDecaying,
    /// Fewer than one full oscillation period inside the data.
    ShortSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: FitModel,
    pub parameters: BTreeMap<String, f64>,
    pub stderrs: BTreeMap<String, f64>,
    pub residual_rms: f64,
    /// Residual RMS at the starting point.
    pub initial_rms: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub flag: Option<FitFlag>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> f64 {
        self.parameters.get(name).copied().unwrap_or(f64::NAN)
    }

    /// Model value at `x` with the fitted parameters.
    pub fn predict(&self, x: f64) -> f64 {
        let p = |k: &str| self.get(k);
        match self.model {
            FitModel::DampedCosine => p("A") * (2.0 * PI * p("omega") * x).cos() * (-p("gamma") * x).exp() + p("B"),
            FitModel::GaussianPeak => {
                let d = (x - p("center")) / p("half_width");
                p("amplitude") * (-d * d).exp() + p("offset")
            }
            FitModel::ExponentialDecay => p("y0") * (-x / p("tau")).exp() + p("offset"),
            FitModel::GaussianDecay => p("y0") * (-(x / p("tau")).powi(2)).exp() + p("offset"),
        }
    }
}

/// Model value and gradient with respect to the parameters at one point.
type ModelFn<'a> = dyn Fn(&[f64], f64, &mut [f64]) -> f64 + 'a;

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    /// Inverse standard deviations, if known.
    inv_sigma: Option<Vec<f64>>,
    model: &'a ModelFn<'a>,
}

struct Solution {
    p: Vec<f64>,
    cov: Option<DMatrix<f64>>,
    rss: f64,
    initial_rss: f64,
    n_iter: usize,
    converged: bool,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64], jac: Option<&mut DMatrix<f64>>) -> (DVector<f64>, f64) {
        let n = self.x.len();
        let np = p.len();
        let mut r = DVector::zeros(n);
        let mut g = vec![0.0; np];
        let mut jac = jac;
        for i in 0..n {
            let s = self.inv_sigma.as_ref().map_or(1.0, |w| w[i]);
            let f = (self.model)(p, self.x[i], &mut g);
            r[i] = (self.y[i] - f) * s;
            if let Some(j) = jac.as_deref_mut() {
                for k in 0..np {
                    j[(i, k)] = g[k] * s;
                }
            }
        }
        let rss = r.norm_squared();
        (r, rss)
    }

    fn rss(&self, p: &[f64]) -> f64 {
        self.residuals(p, None).1
    }

    fn solve(&self, p0: &[f64]) -> Solution {
        let n = self.x.len();
        let np = p0.len();
        let mut p = p0.to_vec();
        let mut jac = DMatrix::zeros(n, np);
        let (mut r, mut rss) = self.residuals(&p, Some(&mut jac));
        let initial_rss = rss;
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut n_iter = 0;
        while n_iter < MAX_ITERATIONS {
            n_iter += 1;
            let a = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            if g.amax() < GRADIENT_TOLERANCE || rss == 0.0 {
                converged = true;
                break;
            }
            let mut accepted = None;
            while lambda < 1e16 {
                let mut damped = a.clone();
                for k in 0..np {
                    damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&g);
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let trial_rss = self.rss(&trial);
                if trial_rss.is_finite() && trial_rss <= rss {
                    accepted = Some((trial, step));
                    lambda = (lambda * 0.1).max(1e-12);
                    break;
                }
                lambda *= 10.0;
            }
            let Some((trial, step)) = accepted else {
                // no downhill step left at working precision
                converged = true;
                break;
            };
            let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small = step.norm() <= STEP_TOLERANCE * (p_norm + STEP_TOLERANCE);
            p = trial;
            (r, rss) = self.residuals(&p, Some(&mut jac));
            if small {
                converged = true;
                break;
            }
        }
        let cov = (jac.transpose() * &jac).try_inverse().map(|inv| {
            if self.inv_sigma.is_some() {
                inv
            } else {
                let dof = n.saturating_sub(np).max(1) as f64;
                inv * (rss / dof)
            }
        });
        Solution {
            p,
            cov,
            rss,
            initial_rss,
            n_iter,
            converged,
        }
    }
}

fn check_data(x: &[f64], y: &[f64], yerr: Option<&[f64]>, min_points: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("data", "x and y lengths differ"));
    }
    if x.len() < min_points {
        return Err(invalid("data", format!("need at least {min_points} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("data", "non-finite value"));
    }
    if let Some(e) = yerr {
        if e.len() != x.len() || e.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("yerr", "need one positive finite error per point"));
        }
    }
    Ok(())
}

/// Affine rescaling of the data to order-one numbers.
struct Scaling {
    x_shift: f64,
    x_scale: f64,
    y_scale: f64,
}

impl Scaling {
    fn new(x: &[f64], y: &[f64], shift_x: bool) -> Self {
        let (lo, hi) = min_max(x);
        let span = hi - lo;
        let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Scaling {
            x_shift: if shift_x { 0.5 * (lo + hi) } else { 0.0 },
            x_scale: if span > 0.0 { span } else { 1.0 },
            y_scale: if y_max > 0.0 { y_max } else { 1.0 },
        }
    }

    fn apply(&self, x: &[f64], y: &[f64], yerr: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        (
            x.iter().map(|v| (v - self.x_shift) / self.x_scale).collect(),
            y.iter().map(|v| v / self.y_scale).collect(),
            yerr.map(|e| e.iter().map(|s| self.y_scale / s).collect()),
        )
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Unscale {
    name: &'static str,
    /// Converts a normalized value to data units; linear, so it also maps
    /// standard errors via its absolute slope.
    value: f64,
    slope: f64,
}

fn finish(
    model: FitModel,
    sol: &Solution,
    n: usize,
    y_scale: f64,
    unscale: Vec<Unscale>,
    free: &[usize],
    flag: Option<FitFlag>,
) -> FitResult {
    let mut parameters = BTreeMap::new();
    let mut stderrs = BTreeMap::new();
    for (k, u) in unscale.iter().enumerate() {
        parameters.insert(u.name.to_string(), u.value);
        let se = match (free.iter().position(|&f| f == k), &sol.cov) {
            (Some(i), Some(cov)) => cov[(i, i)].max(0.0).sqrt() * u.slope.abs(),
            (Some(_), None) => f64::NAN,
            (None, _) => 0.0,
        };
        stderrs.insert(u.name.to_string(), se);
    }
    let rms = |rss: f64| (rss / n as f64).sqrt() * y_scale;
    let flag = flag.or((!sol.converged).then_some(FitFlag::NotConverged));
    FitResult {
        model,
        parameters,
        stderrs,
        residual_rms: rms(sol.rss),
        initial_rms: rms(sol.initial_rss),
        converged: sol.converged,
        n_iter: sol.n_iter,
        flag,
    }
}

fn damped_cosine(p: &[f64], x: f64, g: &mut [f64]) -> f64 {
    let (a, b, om, ga) = (p[0], p[1], p[2], p[3]);
    let e = (-ga * x).exp();
    let (s, c) = (2.0 * PI * om * x).sin_cos();
    g[0] = c * e;
    g[1] = 1.0;
    g[2] = -a * s * e * 2.0 * PI * x;
    g[3] = -x * a * c * e;
    a * c * e + b
}

/// Frequency with the largest periodogram power, refined by golden section.
fn dominant_frequency(x: &[f64], y: &[f64]) -> f64 {
    let m = mean(y);
    let power = |f: f64| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (xi, yi) in x.iter().zip(y) {
            let (s, c) = (2.0 * PI * f * xi).sin_cos();
            re += (yi - m) * c;
            im += (yi - m) * s;
        }
        re * re + im * im
    };
    let (lo, hi) = min_max(x);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let f_max = 0.5 * x.len() as f64 / span;
    let df = 0.125 / span;
    let mut best = (df, f64::NEG_INFINITY);
    let mut f = df;
    while f <= f_max {
        let pw = power(f);
        if pw > best.1 {
            best = (f, pw);
        }
        f += df;
    }
    let (mut a, mut b) = ((best.0 - df).max(0.25 * df), best.0 + df);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Linear least squares for `y ≈ a·u + b`.
fn linear_fit(u: &[f64], y: &[f64]) -> (f64, f64) {
    let (mu, my) = (mean(u), mean(y));
    let suu: f64 = u.iter().map(|v| (v - mu) * (v - mu)).sum();
    let suy: f64 = u.iter().zip(y).map(|(a, b)| (a - mu) * (b - my)).sum();
    let a = if suu > 0.0 { suy / suu } else { 0.0 };
    (a, my - a * mu)
}

/// Fit `A cos(2πΩx) e^{-γx} + B`; parameters `A`, `B`, `omega`, `gamma`.
pub fn fit_damped_cosine(x: &[f64], y: &[f64], yerr: Option<&[f64]>) -> Result<FitResult> {
    check_data(x, y, yerr, 8)?;
    let sc = Scaling::new(x, y, false);
    let (u, v, w) = sc.apply(x, y, yerr);
    let om0 = dominant_frequency(&u, &v);
    let (lo, hi) = min_max(&u);
    let span = hi - lo;
    let mut start = [0.0; 4];
    let mut best = f64::INFINITY;
    for gamma in [0.0, 0.1, 0.3, 1.0, 3.0, 10.0].map(|g| g / span) {
        let basis: Vec<f64> = u.iter().map(|t| (2.0 * PI * om0 * t).cos() * (-gamma * t).exp()).collect();
        let (a, b) = linear_fit(&basis, &v);
        let rss: f64 = basis.iter().zip(&v).map(|(c, yv)| (yv - a * c - b).powi(2)).sum();
        if rss < best {
            best = rss;
            start = [a, b, om0, gamma];
        }
    }
    let problem = Problem {
        x: &u,
        y: &v,
        inv_sigma: w,
        model: &damped_cosine,
    };
    let sol = problem.solve(&start);
    let p = &sol.p;
    let (xs, ys) = (sc.x_scale, sc.y_scale);
    let omega = p[2] / xs;
    let flag = ((omega * (hi - lo) * xs).abs() < 1.0).then_some(FitFlag::ShortSpan);
    let unscale = vec![
        Unscale { name: "A", value: p[0] * ys, slope: ys },
        Unscale { name: "B", value: p[1] * ys, slope: ys },
        Unscale { name: "omega", value: omega, slope: 1.0 / xs },
        Unscale { name: "gamma", value: p[3] / xs, slope: 1.0 / xs },
    ];
    Ok(finish(FitModel::DampedCosine, &sol, x.len(), ys, unscale, &[0, 1, 2, 3], flag))
}

/// Single π-pulse transfer `(1 + e^{-γ τ_π})/2` with `τ_π = 1/(2Ω)`, the
/// population moved at the first minimum of the fitted Rabi curve relative
/// to its undamped swing.
pub fn pi_pulse_fidelity(fit: &FitResult) -> Result<f64> {
    if fit.model != FitModel::DampedCosine {
        return Err(Error::Fit(format!("expected a damped-cosine fit, got {}", fit.model.name())));
    }
    if !fit.converged {
        return Err(Error::Fit("damped-cosine fit did not converge".into()));
    }
    let omega = fit.get("omega");
    let gamma = fit.get("gamma");
    if !(omega > 0.0) || !gamma.is_finite() {
        return Err(Error::Fit(format!("need Ω > 0 and finite γ, got Ω = {omega}, γ = {gamma}")));
    }
    let tau_pi = 0.5 / omega;
    Ok((0.5 * (1.0 + (-gamma * tau_pi).exp())).clamp(0.0, 1.0))
}

/// Population transferred by a Raman pulse of duration `tau`:
/// `(1 - cos(2πΩτ) e^{-γτ})/2`.
pub fn rabi_population(omega: f64, gamma: f64, tau: f64) -> f64 {
    0.5 * (1.0 - (2.0 * PI * omega * tau).cos() * (-gamma * tau).exp())
}

/// Rabi curve at `taus` with additive Gaussian noise of standard deviation
/// `noise`; point `i` draws from stream `i` of `seed`.
pub fn synthetic_rabi(omega: f64, gamma: f64, taus: &[f64], noise: f64, seed: u64) -> Result<Vec<f64>> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid("noise", format!("must be finite and >= 0, got {noise}")));
    }
    Ok(taus
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let e: f64 = StandardNormal.sample(&mut atom_rng(seed, i as u64));
            rabi_population(omega, gamma, t) + noise * e
        })
        .collect())
}

fn gaussian_peak(p: &[f64], x: f64, g: &mut [f64]) -> f64 {
    let (c, a, w, b) = (p[0], p[1], p[2], p[3]);
    let d = x - c;
    let e = (-(d * d) / (w * w)).exp();
    g[0] = a * e * 2.0 * d / (w * w);
    g[1] = e;
    g[2] = a * e * 2.0 * d * d / (w * w * w);
    g[3] = 1.0;
    a * e + b
}

/// Fit `amplitude·exp(-((x - center)/half_width)²) + offset`.
pub fn fit_gaussian_peak(x: &[f64], y: &[f64]) -> Result<FitResult> {
    fit_gaussian_peak_weighted(x, y, None)
}

pub fn fit_gaussian_peak_weighted(x: &[f64], y: &[f64], yerr: Option<&[f64]>) -> Result<FitResult> {
    check_data(x, y, yerr, 5)?;
    let sc = Scaling::new(x, y, true);
    let (u, v, w) = sc.apply(x, y, yerr);
    let imax = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    let imin_x = (0..u.len()).fold(0, |b, i| if u[i] < u[b] { i } else { b });
    let imax_x = (0..u.len()).fold(0, |b, i| if u[i] > u[b] { i } else { b });
    let base = v[imin_x].min(v[imax_x]);
    let amp = v[imax] - base;
    let (sw, sm) = u.iter().zip(&v).fold((0.0, 0.0), |(sw, sm), (t, y)| {
        let wt = (y - base).max(0.0);
        (sw + wt, sm + wt * (t - u[imax]).powi(2))
    });
    let (lo, hi) = min_max(&u);
    let width0 = if sw > 0.0 { (2.0 * sm / sw).sqrt() } else { 0.25 * (hi - lo) };
    let width0 = width0.clamp(1e-3 * (hi - lo), hi - lo);
    let start = [u[imax], amp, width0, base];
    let problem = Problem {
        x: &u,
        y: &v,
        inv_sigma: w,
        model: &gaussian_peak,
    };
    let sol = problem.solve(&start);
    let p = &sol.p;
    let center = p[0] * sc.x_scale + sc.x_shift;
    let (xlo, xhi) = min_max(x);
    let edge = imax == imin_x || imax == imax_x;
    let flag = (edge || center < xlo || center > xhi).then_some(FitFlag::PeakNotBracketed);
    let unscale = vec![
        Unscale { name: "center", value: center, slope: sc.x_scale },
        Unscale { name: "amplitude", value: p[1] * sc.y_scale, slope: sc.y_scale },
        Unscale { name: "half_width", value: p[2].abs() * sc.x_scale, slope: sc.x_scale },
        Unscale { name: "offset", value: p[3] * sc.y_scale, slope: sc.y_scale },
    ];
    Ok(finish(FitModel::GaussianPeak, &sol, x.len(), sc.y_scale, unscale, &[0, 1, 2, 3], flag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    Exponential,
    Gaussian,
}

/// Fit `y0·exp(-t/τ) + c` or `y0·exp(-(t/τ)²) + c`; `tau` is the 1/e time.
/// With `offset = Some(c)` the offset is held fixed.
pub fn fit_lifetime_1e(x: &[f64], y: &[f64], form: DecayForm, offset: Option<f64>) -> Result<FitResult> {
    check_data(x, y, None, 5)?;
    let sc = Scaling::new(x, y, false);
    let (u, v, _) = sc.apply(x, y, None);
    let model_kind = match form {
        DecayForm::Exponential => FitModel::ExponentialDecay,
        DecayForm::Gaussian => FitModel::GaussianDecay,
    };
    let fixed = offset.map(|c| c / sc.y_scale);
    let (vmin, vmax) = min_max(&v);
    let spread = vmax - vmin;

    // log-linear start on (y - c) against t or t²
    let c0 = fixed.unwrap_or(vmin - 0.05 * spread);
    let pts: Vec<(f64, f64)> = u
        .iter()
        .zip(&v)
        .filter(|(_, y)| **y - c0 > 1e-12)
        .map(|(t, y)| {
            let arg = match form {
                DecayForm::Exponential => *t,
                DecayForm::Gaussian => t * t,
            };
            (arg, (y - c0).ln())
        })
        .collect();
    let (args, logs): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, icpt) = if args.len() >= 2 { linear_fit(&args, &logs) } else { (0.0, 0.0) };
    let non_decaying_start = !(spread > 1e-12 * vmax.abs().max(1e-300)) || !(slope < 0.0);

    let names: Vec<&'static str> = vec!["y0", "tau", "offset"];
    if non_decaying_start {
        let sol = Solution {
            p: vec![vmax - c0, f64::INFINITY, c0],
            cov: None,
            rss: v.iter().map(|y| (y - mean(&v)).powi(2)).sum(),
            initial_rss: v.iter().map(|y| (y - mean(&v)).powi(2)).sum(),
            n_iter: 0,
            converged: false,
        };
        let unscale = vec![
            Unscale { name: names[0], value: sol.p[0] * sc.y_scale, slope: sc.y_scale },
            Unscale { name: names[1], value: f64::INFINITY, slope: sc.x_scale },
            Unscale { name: names[2], value: c0 * sc.y_scale, slope: sc.y_scale },
        ];
        return Ok(finish(model_kind, &sol, x.len(), sc.y_scale, unscale, &[], Some(FitFlag::NonDecaying)));
    }
    let tau0 = match form {
        DecayForm::Exponential => -1.0 / slope,
        DecayForm::Gaussian => (-1.0 / slope).sqrt(),
    };
    let y00 = icpt.exp();

    let full = move |p: &[f64], t: f64, g: &mut [f64]| -> f64 {
        let (y0, tau, c) = (p[0], p[1], p[2]);
        let (e, dtau) = match form {
            DecayForm::Exponential => {
                let e = (-t / tau).exp();
                (e, y0 * e * t / (tau * tau))
            }
            DecayForm::Gaussian => {
                let e = (-(t / tau).powi(2)).exp();
                (e, y0 * e * 2.0 * t * t / (tau * tau * tau))
            }
        };
        g[0] = e;
        g[1] = dtau;
        if g.len() > 2 {
            g[2] = 1.0;
        }
        y0 * e + c
    };

    let (sol, free): (Solution, Vec<usize>) = match fixed {
        Some(c) => {
            let f = move |p: &[f64], t: f64, g: &mut [f64]| full(&[p[0], p[1], c], t, g);
            let problem = Problem {
                x: &u,
                y: &v,
                inv_sigma: None,
                model: &f,
            };
            let mut s = problem.solve(&[y00, tau0]);
            s.p.push(c);
            (s, vec![0, 1])
        }
        None => {
            let problem = Problem {
                x: &u,
                y: &v,
                inv_sigma: None,
                model: &full,
            };
            (problem.solve(&[y00, tau0, c0]), vec![0, 1, 2])
        }
    };
    let p = &sol.p;
    let flag = (!(p[1] > 0.0 && p[0] > 0.0)).then_some(FitFlag::NonDecaying);
    let unscale = vec![
        Unscale { name: names[0], value: p[0] * sc.y_scale, slope: sc.y_scale },
        Unscale { name: names[1], value: p[1].abs() * sc.x_scale, slope: sc.x_scale },
        Unscale { name: names[2], value: p[2] * sc.y_scale, slope: sc.y_scale },
    ];
    Ok(finish(model_kind, &sol, x.len(), sc.y_scale, unscale, &free, flag))
}

/// Both decay forms and the one with the smaller residual RMS.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayComparison {
    pub exponential: FitResult,
    pub gaussian: FitResult,
    pub better: DecayForm,
}

pub fn compare_decay_forms(x: &[f64], y: &[f64], offset: Option<f64>) -> Result<DecayComparison> {
    let exponential = fit_lifetime_1e(x, y, DecayForm::Exponential, offset)?;
    let gaussian = fit_lifetime_1e(x, y, DecayForm::Gaussian, offset)?;
    let better = if gaussian.residual_rms < exponential.residual_rms {
        DecayForm::Gaussian
    } else {
        DecayForm::Exponential
    };
    Ok(DecayComparison {
        exponential,
        gaussian,
        better,
    })
}
