//! Beam geometry and wavevector arithmetic.
//!
//! Convention: the coupling (read) beam propagates along +z. The probe /
//! write-out direction is tilted by `theta_s` in the x-z plane, optionally
//! rotated about z by an azimuth. The two Raman beams lie in the plane that
//! contains the unrotated spin-wave wavevector and the z axis; they are placed
//! symmetrically about a bisector and then rotated inside that plane until
//! `k2 - k1` is exactly collinear with the unrotated spin-wave wavevector.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{in_range, invalid, positive, Error, Result};

pub type Vec3 = Vector3<f64>;

/// Wavenumber `2π/λ` in rad/m.
pub fn wavenumber(wavelength: f64) -> f64 {
    2.0 * PI / wavelength
}

/// A wavevector in rad/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavevector(Vec3);

impl Wavevector {
    pub fn new(components: Vec3) -> Self {
        Wavevector(components)
    }

    pub fn zero() -> Self {
        Wavevector(Vec3::zeros())
    }

    /// Plane wave of wavelength `wavelength` along `direction` (normalized here).
    pub fn along(direction: &Vec3, wavelength: f64) -> Self {
        Wavevector(direction.normalize() * wavenumber(wavelength))
    }

    pub fn components(&self) -> Vec3 {
        self.0
    }

    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, r: &Vec3) -> f64 {
        self.0.dot(r)
    }

    pub fn unit(&self) -> Option<Vec3> {
        let m = self.magnitude();
        (m > 0.0).then(|| self.0 / m)
    }
}

impl Add for Wavevector {
    type Output = Wavevector;
    fn add(self, rhs: Wavevector) -> Wavevector {
        Wavevector(self.0 + rhs.0)
    }
}

impl Sub for Wavevector {
    type Output = Wavevector;
    fn sub(self, rhs: Wavevector) -> Wavevector {
        Wavevector(self.0 - rhs.0)
    }
}

impl Neg for Wavevector {
    type Output = Wavevector;
    fn neg(self) -> Wavevector {
        Wavevector(-self.0)
    }
}

impl Mul<f64> for Wavevector {
    type Output = Wavevector;
    fn mul(self, s: f64) -> Wavevector {
        Wavevector(self.0 * s)
    }
}

/// Unit propagation directions of the four beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamDirections {
    pub raman1: [f64; 3],
    pub raman2: [f64; 3],
    pub coupling: [f64; 3],
    pub probe: [f64; 3],
}

/// Inputs for [`BeamGeometry::from_params`]. Angles in radians, lengths in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_c: f64,
    /// Probe / write-out wavelength; defaults to `lambda2` (both drive g-e).
    pub lambda_p: Option<f64>,
    pub theta_s: f64,
    pub theta_pi: f64,
    /// Rotation of the probe about z relative to the Raman plane.
    pub signal_azimuth: f64,
    pub directions: Option<BeamDirections>,
}

impl GeometryParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda_c: f64, theta_s: f64, theta_pi: f64) -> Self {
        GeometryParams {
            lambda1,
            lambda2,
            lambda_c,
            lambda_p: None,
            theta_s,
            theta_pi,
            signal_azimuth: 0.0,
            directions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamGeometry {
    lambda1: f64,
    lambda2: f64,
    lambda_c: f64,
    lambda_p: f64,
    theta_s: f64,
    theta_pi: f64,
    signal_azimuth: f64,
    dir1: Vec3,
    dir2: Vec3,
    dir_c: Vec3,
    dir_p: Vec3,
    explicit_directions: bool,
}

fn unit_from(name: &'static str, v: [f64; 3]) -> Result<Vec3> {
    let v = Vec3::new(v[0], v[1], v[2]);
    let n = v.norm();
    if !n.is_finite() || n == 0.0 {
        return Err(invalid(name, "direction must be a finite non-zero vector"));
    }
    Ok(v / n)
}

/// Rotate `v` about the z axis by `phi`.
fn rotate_z(v: &Vec3, phi: f64) -> Vec3 {
    let (s, c) = phi.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

impl BeamGeometry {
    /// Coplanar geometry with the probe wavelength equal to `lambda2`.
    pub fn new(lambda1: f64, lambda2: f64, lambda_c: f64, theta_s: f64, theta_pi: f64) -> Result<Self> {
        Self::from_params(&GeometryParams::new(lambda1, lambda2, lambda_c, theta_s, theta_pi))
    }

    /// All four wavelengths equal; handy for small-angle checks.
    pub fn degenerate_wavelength(lambda: f64, theta_s: f64, theta_pi: f64) -> Result<Self> {
        let mut p = GeometryParams::new(lambda, lambda, lambda, theta_s, theta_pi);
        p.lambda_p = Some(lambda);
        Self::from_params(&p)
    }

    pub fn from_params(p: &GeometryParams) -> Result<Self> {
        let lambda1 = positive("lambda1", p.lambda1)?;
        let lambda2 = positive("lambda2", p.lambda2)?;
        let lambda_c = positive("lambda_c", p.lambda_c)?;
        let lambda_p = positive("lambda_p", p.lambda_p.unwrap_or(p.lambda2))?;
        let theta_s = in_range("theta_s", p.theta_s, 0.0, FRAC_PI_2)?;
        let theta_pi = in_range("theta_pi", p.theta_pi, 0.0, FRAC_PI_2)?;
        if !p.signal_azimuth.is_finite() {
            return Err(invalid("signal_azimuth", "must be finite"));
        }

        let (dir1, dir2, dir_c, dir_p) = match &p.directions {
            Some(d) => (
                unit_from("raman1", d.raman1)?,
                unit_from("raman2", d.raman2)?,
                unit_from("coupling", d.coupling)?,
                unit_from("probe", d.probe)?,
            ),
            None => {
                let dir_c = Vec3::z();
                let probe0 = Vec3::new(theta_s.sin(), 0.0, theta_s.cos());
                let k_s0 = probe0 * wavenumber(lambda_p) - dir_c * wavenumber(lambda_c);
                let u = if k_s0.norm() > 0.0 { k_s0.normalize() } else { Vec3::x() };
                let (dir1, dir2) = raman_pair(&u, theta_pi, wavenumber(lambda1), wavenumber(lambda2));
                (dir1, dir2, dir_c, rotate_z(&probe0, p.signal_azimuth))
            }
        };

        Ok(BeamGeometry {
            lambda1,
            lambda2,
            lambda_c,
            lambda_p,
            theta_s,
            theta_pi,
            signal_azimuth: p.signal_azimuth,
            dir1,
            dir2,
            dir_c,
            dir_p,
            explicit_directions: p.directions.is_some(),
        })
    }

    /// Same geometry with a different Raman intersection angle.
    pub fn with_theta_pi(&self, theta_pi: f64) -> Result<Self> {
        if self.explicit_directions {
            return Err(invalid(
                "theta_pi",
                "cannot re-derive Raman directions for an explicit-direction geometry",
            ));
        }
        let mut p = self.params();
        p.theta_pi = theta_pi;
        Self::from_params(&p)
    }

    pub fn params(&self) -> GeometryParams {
        GeometryParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_c: self.lambda_c,
            lambda_p: Some(self.lambda_p),
            theta_s: self.theta_s,
            theta_pi: self.theta_pi,
            signal_azimuth: self.signal_azimuth,
            directions: self.explicit_directions.then(|| self.directions()),
        }
    }

    pub fn directions(&self) -> BeamDirections {
        let a = |v: &Vec3| [v.x, v.y, v.z];
        BeamDirections {
            raman1: a(&self.dir1),
            raman2: a(&self.dir2),
            coupling: a(&self.dir_c),
            probe: a(&self.dir_p),
        }
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
    pub fn lambda_c(&self) -> f64 {
        self.lambda_c
    }
    pub fn lambda_p(&self) -> f64 {
        self.lambda_p
    }
    pub fn theta_s(&self) -> f64 {
        self.theta_s
    }
    pub fn theta_pi(&self) -> f64 {
        self.theta_pi
    }

    pub fn k1(&self) -> Wavevector {
        Wavevector::along(&self.dir1, self.lambda1)
    }
    pub fn k2(&self) -> Wavevector {
        Wavevector::along(&self.dir2, self.lambda2)
    }
    pub fn k_coupling(&self) -> Wavevector {
        Wavevector::along(&self.dir_c, self.lambda_c)
    }
    pub fn k_probe(&self) -> Wavevector {
        Wavevector::along(&self.dir_p, self.lambda_p)
    }
}

/// Raman beam directions at full angle `theta_pi`, rotated so that
/// `k2*dir2 - k1*dir1` points exactly along `u`.
fn raman_pair(u: &Vec3, theta_pi: f64, k1: f64, k2: f64) -> (Vec3, Vec3) {
    let z = Vec3::z();
    let mut b = z - u * z.dot(u);
    if b.norm() < 1e-12 {
        b = Vec3::x() - u * u.x;
    }
    let b = b.normalize();
    let (sh, ch) = (0.5 * theta_pi).sin_cos();
    // (u, b) components before alignment
    let d1 = (-sh, ch);
    let d2 = (sh, ch);
    let du = k2 * d2.0 - k1 * d1.0;
    let db = k2 * d2.1 - k1 * d1.1;
    let beta = db.atan2(du);
    let (sb, cb) = beta.sin_cos();
    let rot = |(a, c): (f64, f64)| u * (a * cb + c * sb) + b * (-a * sb + c * cb);
    (rot(d1), rot(d2))
}

/// `k_s = k_p - k_c`, the exact vector difference.
pub fn spinwave_wavevector(geom: &BeamGeometry) -> Wavevector {
    geom.k_probe() - geom.k_coupling()
}

/// `k_pi = k2 - k1`, the exact vector difference.
pub fn raman_wavevector(geom: &BeamGeometry) -> Wavevector {
    geom.k2() - geom.k1()
}

/// Small-angle magnitude `k_c * theta_s`.
pub fn spinwave_small_angle(geom: &BeamGeometry) -> f64 {
    wavenumber(geom.lambda_c) * geom.theta_s
}

/// Small-angle magnitude `k1 * theta_pi`.
pub fn raman_small_angle(geom: &BeamGeometry) -> f64 {
    wavenumber(geom.lambda1) * geom.theta_pi
}

/// Pulse-spacing fraction `dt/T = |k_s| / (2 |k_pi|)` from exact magnitudes.
pub fn rephasing_ratio(geom: &BeamGeometry) -> Result<f64> {
    let k_pi = raman_wavevector(geom).magnitude();
    if k_pi <= 0.0 || !k_pi.is_finite() {
        return Err(Error::DegenerateGeometry(
            "Raman wavevector has zero magnitude".into(),
        ));
    }
    Ok(spinwave_wavevector(geom).magnitude() / (2.0 * k_pi))
}
