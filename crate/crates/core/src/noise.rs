//! Read-out noise from imperfect π pulses.
//!
//! After the pulse pair a fraction `ρ = 1 - (1 - ε)²` of the population is
//! left in the wrong ground state. Every such atom scatters independently
//! during read-out, which gives an isotropic floor, and the residual
//! population also carries a collective excitation with wavevector `k_pi`,
//! which emits a phase-matched lobe around `k_c + k_pi`.
//!
//! Per grid cell of solid angle `dΩ` the expected photon number is
//! `dΩ/4π · ρ·(ρ·N_mode + (1 - ρ)·|S|²)`, where `N_mode = Σ w_j²` and
//! `S = Σ w_j exp(iΔk·r_j)` with `Δk = k_c + k_pi - k n̂` for detection
//! direction `n̂`. Far from the lobe `|S|²` averages to `N_mode` and the
//! floor is `ρ·N_mode·dΩ/4π`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::{AtomSample, EnsembleSpec};
use crate::error::{in_range, invalid, positive, Result};
use crate::fit::{fit_gaussian_peak, FitFlag};
use crate::geometry::{raman_wavevector, BeamGeometry, Vec3};

/// Atoms with a smaller mode weight do not contribute to the map.
const WEIGHT_CUTOFF: f64 = 1e-8;

/// `2·ε·N·ΔΩ/(4π)`.
pub fn incoherent_noise_floor(epsilon: f64, n_atoms: f64, solid_angle: f64) -> Result<f64> {
    in_range("epsilon", epsilon, 0.0, 1.0)?;
    if !(n_atoms >= 1.0) {
        return Err(invalid("n_atoms", format!("must be >= 1, got {n_atoms}")));
    }
    if !(solid_angle > 0.0 && solid_angle <= 4.0 * PI) {
        return Err(invalid("solid_angle", format!("must lie in (0, 4π], got {solid_angle}")));
    }
    Ok(2.0 * epsilon * n_atoms * solid_angle / (4.0 * PI))
}

/// Population left behind by two pulses of imperfection `ε`.
pub fn residual_population(epsilon: f64) -> f64 {
    1.0 - (1.0 - epsilon) * (1.0 - epsilon)
}

/// Full far-field angle between the intensity 1/e² points of a Gaussian
/// mode with field waist `waist`: `2λ/(π w)`.
pub fn lobe_full_width(wavelength: f64, waist: f64) -> f64 {
    2.0 * wavelength / (PI * waist)
}

/// Rescale a noise probability measured at `eps_ref` to `eps` in
/// proportion to the residual population.
pub fn scale_noise(p_ref: f64, eps_ref: f64, eps: f64) -> Result<f64> {
    in_range("epsilon", eps, 0.0, 1.0)?;
    in_range("epsilon_ref", eps_ref, 0.0, 1.0)?;
    if eps_ref == 0.0 {
        return Err(invalid("epsilon_ref", "must be > 0 to scale from"));
    }
    Ok(p_ref * residual_population(eps) / residual_population(eps_ref))
}

/// A Gaussian collection mode.
///
/// A mode with field waist `w` at the ensemble has far-field half-angle
/// `θ_d = λ/(π w)` at the intensity 1/e² point, angular acceptance
/// `exp(-2 δ²/θ_d²)` and solid angle `π θ_d²/2 = λ²/(2π w²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMode {
    direction: Vec3,
    solid_angle: f64,
    wavelength: f64,
    efficiency: f64,
}

impl DetectionMode {
    pub fn new(direction: Vec3, solid_angle: f64, wavelength: f64, efficiency: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("direction", "must be a nonzero finite vector"));
        }
        if !(solid_angle > 0.0 && solid_angle <= 4.0 * PI) {
            return Err(invalid("solid_angle", format!("must lie in (0, 4π], got {solid_angle}")));
        }
        positive("wavelength", wavelength)?;
        in_range("efficiency", efficiency, 0.0, 1.0 + f64::EPSILON)?;
        Ok(DetectionMode {
            direction: direction / norm,
            solid_angle,
            wavelength,
            efficiency,
        })
    }

    pub fn from_waist(direction: Vec3, waist: f64, wavelength: f64, efficiency: f64) -> Result<Self> {
        positive("waist", waist)?;
        Self::new(direction, wavelength * wavelength / (2.0 * PI * waist * waist), wavelength, efficiency)
    }

    /// The read-out mode: along the probe, at the probe wavelength.
    pub fn readout(geom: &BeamGeometry, waist: f64, efficiency: f64) -> Result<Self> {
        let d = geom.directions().probe;
        Self::from_waist(Vec3::new(d[0], d[1], d[2]), waist, geom.lambda_p(), efficiency)
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }
    pub fn solid_angle(&self) -> f64 {
        self.solid_angle
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Acceptance half-angle `θ_d` (intensity 1/e²).
    pub fn half_angle(&self) -> f64 {
        (2.0 * self.solid_angle / PI).sqrt()
    }

    /// Equivalent field waist at the ensemble.
    pub fn waist(&self) -> f64 {
        self.wavelength / (PI * self.half_angle())
    }
}

/// Wavevector that the π-pulse grating radiates into during read-out.
pub fn noise_emission_wavevector(geom: &BeamGeometry) -> Vec3 {
    (geom.k_coupling() + raman_wavevector(geom)).components()
}

/// Angles `(θx, θy)` of a direction, with `sin θx = n̂·x̂`, `sin θy = n̂·ŷ`.
pub fn direction_angles(d: &Vec3) -> (f64, f64) {
    let u = d.normalize();
    (u.x.asin(), u.y.asin())
}

fn direction_from_angles(tx: f64, ty: f64) -> Vec3 {
    let (sx, sy) = (tx.sin(), ty.sin());
    Vec3::new(sx, sy, (1.0 - sx * sx - sy * sy).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGrid {
    /// Grid center `(θx, θy)` in radians; `None` centers on the lobe.
    pub center: Option<(f64, f64)>,
    /// Half extent along each axis (radians).
    pub half_span: (f64, f64),
    pub n: (usize, usize),
}

impl NoiseGrid {
    pub const DEFAULT_POINTS: usize = 101;

    /// 101×101 cells over ±5 lobe widths around the lobe.
    pub fn around_lobe(wavelength: f64, mode_waist: f64) -> Self {
        let span = 5.0 * lobe_full_width(wavelength, mode_waist);
        NoiseGrid {
            center: None,
            half_span: (span, span),
            n: (Self::DEFAULT_POINTS, Self::DEFAULT_POINTS),
        }
    }

    fn axes(&self, lobe: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
        let (nx, ny) = self.n;
        if nx < 2 || ny < 2 {
            return Err(invalid("grid", "need at least 2 points per axis"));
        }
        positive("grid half_span", self.half_span.0)?;
        positive("grid half_span", self.half_span.1)?;
        let (cx, cy) = self.center.unwrap_or(lobe);
        let axis = |c: f64, h: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| c - h + 2.0 * h * i as f64 / (n - 1) as f64).collect()
        };
        let xs = axis(cx, self.half_span.0, nx);
        let ys = axis(cy, self.half_span.1, ny);
        let bad = |v: &[f64]| v.iter().any(|t| t.abs() >= 0.5 * PI);
        if bad(&xs) || bad(&ys) {
            return Err(invalid("grid", "angles must stay inside (-90, 90) deg"));
        }
        Ok((xs, ys))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    /// Radians, strictly increasing.
    pub theta_x: Vec<f64>,
    /// Radians, strictly increasing.
    pub theta_y: Vec<f64>,
    /// Photons per shot per cell, row-major: `intensity[iy * nx + ix]`.
    pub intensity: Vec<f64>,
    /// Solid angle of one cell.
    pub cell_solid_angle: f64,
    /// Expected incoherent floor per cell.
    pub floor: f64,
    /// Phase-matched lobe direction `(θx, θy)`.
    pub lobe_center: (f64, f64),
    /// The lobe center lies at least one lobe width inside the grid.
    pub lobe_covered: bool,
    pub lobe_width: f64,
}

/// Gaussian-fit summary of the lobe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobeShape {
    pub peak_theta: (f64, f64),
    pub peak_intensity: f64,
    /// Full angles between intensity 1/e² points along x and y.
    pub full_width: (f64, f64),
}

impl NoiseMap {
    pub fn nx(&self) -> usize {
        self.theta_x.len()
    }

    pub fn ny(&self) -> usize {
        self.theta_y.len()
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.intensity[iy * self.nx() + ix]
    }

    /// Grid cell with the largest intensity.
    pub fn argmax(&self) -> (usize, usize) {
        let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
        for (i, &v) in self.intensity.iter().enumerate() {
            if v > best {
                best = v;
                bi = i;
            }
        }
        (bi % self.nx(), bi / self.nx())
    }

    pub fn row(&self, iy: usize) -> &[f64] {
        &self.intensity[iy * self.nx()..(iy + 1) * self.nx()]
    }

    pub fn column(&self, ix: usize) -> Vec<f64> {
        (0..self.ny()).map(|iy| self.at(ix, iy)).collect()
    }

    /// Mean intensity over cells farther than `exclusion` (radians) from
    /// the lobe center.
    pub fn far_floor(&self, exclusion: f64) -> Option<f64> {
        let (cx, cy) = self.lobe_center;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (iy, ty) in self.theta_y.iter().enumerate() {
            for (ix, tx) in self.theta_x.iter().enumerate() {
                if (tx - cx).hypot(ty - cy) > exclusion {
                    sum += self.at(ix, iy);
                    count += 1;
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Gaussian fits to the x and y cuts through the brightest cell.
    pub fn lobe_shape(&self) -> Result<LobeShape> {
        let (ix, iy) = self.argmax();
        let fx = fit_gaussian_peak(&self.theta_x, self.row(iy))?;
        let fy = fit_gaussian_peak(&self.theta_y, &self.column(ix))?;
        for f in [&fx, &fy] {
            if f.flag == Some(FitFlag::PeakNotBracketed) {
                return Err(invalid("noise map", "lobe peak is not bracketed by the grid"));
            }
        }
        let k = 2.0 * 2f64.sqrt();
        Ok(LobeShape {
            peak_theta: (fx.parameters["center"], fy.parameters["center"]),
            peak_intensity: self.at(ix, iy),
            full_width: (k * fx.parameters["half_width"], k * fy.parameters["half_width"]),
        })
    }
}

/// Cell-wise mean of maps on identical grids (shot averaging).
pub fn average_maps(maps: &[NoiseMap]) -> Result<NoiseMap> {
    let Some(first) = maps.first() else {
        return Err(invalid("maps", "need at least one map"));
    };
    if maps.iter().any(|m| m.theta_x != first.theta_x || m.theta_y != first.theta_y) {
        return Err(invalid("maps", "grids differ"));
    }
    let n = maps.len() as f64;
    let mut out = first.clone();
    for (i, v) in out.intensity.iter_mut().enumerate() {
        *v = maps.iter().map(|m| m.intensity[i]).sum::<f64>() / n;
    }
    out.floor = maps.iter().map(|m| m.floor).sum::<f64>() / n;
    Ok(out)
}

/// Angular distribution of the π-pulse noise for one atom sample.
///
/// The longitudinal phase uses `n_z ≈ cos θx + cos θy - 1`, which separates
/// the sum into per-axis factors; the error is of order `θx²θy²·k·z`.
pub fn directional_noise_map(
    atoms: &AtomSample,
    geom: &BeamGeometry,
    epsilon: f64,
    grid: &NoiseGrid,
) -> Result<NoiseMap> {
    in_range("epsilon", epsilon, 0.0, 1.0)?;
    if atoms.is_empty() {
        return Err(invalid("atoms", "empty sample"));
    }
    let k0 = noise_emission_wavevector(geom);
    let k = geom.k_probe().magnitude();
    let lobe_center = direction_angles(&k0);
    let (xs, ys) = grid.axes(lobe_center)?;
    let (nx, ny) = (xs.len(), ys.len());
    let dx = xs[1] - xs[0];
    let dy = ys[1] - ys[0];
    let cell = dx * dy;
    let lobe_width = lobe_full_width(geom.lambda_p(), atoms.mode_waist());
    let inside = |v: &[f64], c: f64| c - lobe_width >= v[0] && c + lobe_width <= v[v.len() - 1];
    let lobe_covered = inside(&xs, lobe_center.0) && inside(&ys, lobe_center.1);

    let idx: Vec<usize> = (0..atoms.len()).filter(|&j| atoms.weights()[j] >= WEIGHT_CUTOFF).collect();
    let pos: Vec<Vec3> = idx.iter().map(|&j| atoms.positions()[j]).collect();
    let w: Vec<f64> = idx.iter().map(|&j| atoms.weights()[j]).collect();
    let n_mode: f64 = w.iter().map(|v| v * v).sum();

    let rho = residual_population(epsilon);
    let floor = rho * n_mode * cell / (4.0 * PI);
    if rho == 0.0 {
        return Ok(NoiseMap {
            intensity: vec![0.0; nx * ny],
            theta_x: xs,
            theta_y: ys,
            cell_solid_angle: cell,
            floor: 0.0,
            lobe_center,
            lobe_covered,
            lobe_width,
        });
    }

    let m = pos.len();
    // X[ix][j] = exp(i((K0x - k sx) x_j - k cos θx z_j))
    let xmat: Vec<Complex64> = xs
        .par_iter()
        .flat_map_iter(|&tx| {
            let (sx, cx) = tx.sin_cos();
            let qx = k0.x - k * sx;
            pos.iter().map(move |r| Complex64::from_polar(1.0, qx * r.x - k * cx * r.z))
        })
        .collect();
    let base: Vec<Complex64> = pos
        .iter()
        .zip(&w)
        .map(|(r, wj)| Complex64::from_polar(*wj, (k0.z + k) * r.z))
        .collect();

    let intensity: Vec<f64> = ys
        .par_iter()
        .flat_map_iter(|&ty| {
            let (sy, cy) = ty.sin_cos();
            let qy = k0.y - k * sy;
            let a: Vec<Complex64> = pos
                .iter()
                .zip(&base)
                .map(|(r, b)| b * Complex64::from_polar(1.0, qy * r.y - k * cy * r.z))
                .collect();
            let xmat = &xmat;
            (0..nx)
                .map(move |ix| {
                    let row = &xmat[ix * m..(ix + 1) * m];
                    let s: Complex64 = row.iter().zip(&a).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y);
                    rho * (rho * n_mode + (1.0 - rho) * s.norm_sqr()) * cell / (4.0 * PI)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(NoiseMap {
        theta_x: xs,
        theta_y: ys,
        intensity,
        cell_solid_angle: cell,
        floor,
        lobe_center,
        lobe_covered,
        lobe_width,
    })
}

/// Closed-form lobe for a Gaussian cloud in a Gaussian mode weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// `n·E[w²]`.
    pub n_mode: f64,
    /// `n·E[w]²/E[w²]`.
    pub n_eff: f64,
    pub residual: f64,
    /// Lobe direction.
    pub lobe_direction: Vec3,
    /// Lobe half-angle at the intensity 1/e² point.
    pub lobe_half_angle: f64,
    /// Peak suppression from the longitudinal phase mismatch.
    pub longitudinal_factor: f64,
}

impl NoiseModel {
    pub fn new(geom: &BeamGeometry, spec: &EnsembleSpec, epsilon: f64) -> Result<Self> {
        spec.validate()?;
        in_range("epsilon", epsilon, 0.0, 1.0)?;
        let n = spec.n_atoms as f64;
        let ew = spec.mean_weight();
        let ew2 = spec.mean_weight_sq();
        let k0 = noise_emission_wavevector(geom);
        let k = geom.k_probe().magnitude();
        // transverse extent of the radiating grating: mode weight times cloud
        let sx = spec.cloud_sigma[0].min(spec.cloud_sigma[1]);
        let m_eff = 1.0 / (1.0 / (spec.mode_waist * spec.mode_waist) + 1.0 / (2.0 * sx * sx)).sqrt();
        let dk_par = k0.norm() - k;
        Ok(NoiseModel {
            n_mode: n * ew2,
            n_eff: n * ew * ew / ew2,
            residual: residual_population(epsilon),
            lobe_direction: k0.normalize(),
            lobe_half_angle: geom.lambda_p() / (PI * m_eff),
            longitudinal_factor: (-(dk_par * spec.cloud_sigma[2]).powi(2)).exp(),
        })
    }

    /// Expected photons per shot collected by `det` (before its efficiency).
    pub fn collected(&self, det: &DetectionMode) -> f64 {
        let rho = self.residual;
        let incoherent = rho * self.n_mode * det.solid_angle() / (4.0 * PI);
        let tl2 = self.lobe_half_angle.powi(2);
        let td2 = det.half_angle().powi(2);
        let sep = self.lobe_direction.angle(&det.direction());
        let overlap = 0.5 * PI * (tl2 * td2 / (tl2 + td2)) * (-2.0 * sep * sep / (tl2 + td2)).exp();
        let coherent = rho * (1.0 - rho) * self.n_mode * self.n_eff * self.longitudinal_factor * overlap / (4.0 * PI);
        incoherent + coherent
    }
}

pub enum NoiseSource<'a> {
    Map(&'a NoiseMap),
    Params {
        geom: &'a BeamGeometry,
        spec: &'a EnsembleSpec,
        epsilon: f64,
    },
}

/// Expected noise photons per shot detected in `det`.
pub fn noise_into_readout_mode(source: NoiseSource, det: &DetectionMode) -> Result<f64> {
    let collected = match source {
        NoiseSource::Params { geom, spec, epsilon } => NoiseModel::new(geom, spec, epsilon)?.collected(det),
        NoiseSource::Map(map) => {
            let td2 = det.half_angle().powi(2);
            let mut sum = 0.0;
            for (iy, &ty) in map.theta_y.iter().enumerate() {
                for (ix, &tx) in map.theta_x.iter().enumerate() {
                    let sep = direction_from_angles(tx, ty).angle(&det.direction());
                    sum += map.at(ix, iy) * (-2.0 * sep * sep / td2).exp();
                }
            }
            sum
        }
    };
    Ok(collected * det.efficiency())
}

/// Scale factor mapping the model onto a measured noise probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    pub kappa: f64,
}

impl NoiseCalibration {
    pub fn fit(target: f64, model_value: f64) -> Result<Self> {
        positive("model noise", model_value)?;
        in_range("target noise", target, 0.0, 1.0)?;
        Ok(NoiseCalibration {
            kappa: target / model_value,
        })
    }

    pub fn apply(&self, model_value: f64) -> f64 {
        self.kappa * model_value
    }
}
