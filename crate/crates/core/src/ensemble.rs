//! Thermal atom cloud: parameters, reproducible sampling, mode weights.
//!
//! Every atom draws from its own ChaCha8 stream: the generator is seeded
//! with the run seed and `set_stream(atom_index)` selects the substream. An
//! atom's draws therefore do not depend on how sampling is partitioned
//! across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::constants::{Species, BOLTZMANN};
use crate::error::{invalid, positive, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub n_atoms: usize,
    /// Kelvin.
    pub temperature: f64,
    /// Gaussian standard deviations of the cloud along x, y, z (meters).
    pub cloud_sigma: [f64; 3],
    /// 1/e field radius of the effective write x read mode weight (meters).
    pub mode_waist: f64,
    /// Kilograms.
    pub atom_mass: f64,
}

impl EnsembleSpec {
    pub fn new(
        n_atoms: usize,
        temperature: f64,
        cloud_sigma: [f64; 3],
        mode_waist: f64,
        atom_mass: f64,
    ) -> Result<Self> {
        let spec = EnsembleSpec {
            n_atoms,
            temperature,
            cloud_sigma,
            mode_waist,
            atom_mass,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rubidium-87 cloud.
    pub fn rb87(n_atoms: usize, temperature: f64, cloud_sigma: [f64; 3], mode_waist: f64) -> Result<Self> {
        Self::new(n_atoms, temperature, cloud_sigma, mode_waist, Species::Rb87.mass())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms < 1 {
            return Err(invalid("n_atoms", "must be >= 1"));
        }
        positive("temperature", self.temperature)?;
        for s in self.cloud_sigma {
            positive("cloud_sigma", s)?;
        }
        positive("mode_waist", self.mode_waist)?;
        positive("atom_mass", self.atom_mass)?;
        Ok(())
    }

    /// Expected mode weight `E[w]` over the cloud.
    pub fn mean_weight(&self) -> f64 {
        let m2 = self.mode_waist * self.mode_waist;
        self.cloud_sigma[..2]
            .iter()
            .map(|s| 1.0 / (1.0 + 2.0 * s * s / m2).sqrt())
            .product()
    }

    /// Expected squared mode weight `E[w^2]` over the cloud.
    pub fn mean_weight_sq(&self) -> f64 {
        let m2 = self.mode_waist * self.mode_waist;
        self.cloud_sigma[..2]
            .iter()
            .map(|s| 1.0 / (1.0 + 4.0 * s * s / m2).sqrt())
            .product()
    }
}

/// One-dimensional RMS thermal velocity `sqrt(k_B T / m)`.
pub fn thermal_sigma_v(spec: &EnsembleSpec) -> f64 {
    (BOLTZMANN * spec.temperature / spec.atom_mass).sqrt()
}

/// Mean thermal speed `sqrt(8 k_B T / (π m))` of the 3D Maxwell-Boltzmann law.
pub fn mean_thermal_speed(spec: &EnsembleSpec) -> f64 {
    (8.0 * BOLTZMANN * spec.temperature / (std::f64::consts::PI * spec.atom_mass)).sqrt()
}

/// Gaussian mode weight `exp(-(x^2 + y^2)/w^2)` at transverse position `r`.
pub fn mode_weight(r: &Vec3, waist: f64) -> f64 {
    (-(r.x * r.x + r.y * r.y) / (waist * waist)).exp()
}

/// The random stream owned by atom `index` under `seed`.
pub fn atom_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSample {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
    weights: Vec<f64>,
    mode_waist: f64,
}

impl AtomSample {
    /// Build a sample from explicit positions and velocities; weights are
    /// evaluated from `mode_waist` at the given positions.
    pub fn from_parts(positions: Vec<Vec3>, velocities: Vec<Vec3>, mode_waist: f64) -> Result<Self> {
        positive("mode_waist", mode_waist)?;
        if positions.is_empty() {
            return Err(invalid("positions", "sample must contain at least one atom"));
        }
        if positions.len() != velocities.len() {
            return Err(invalid("velocities", "length must match positions"));
        }
        let weights = positions.iter().map(|r| mode_weight(r, mode_waist)).collect();
        Ok(AtomSample {
            positions,
            velocities,
            weights,
            mode_waist,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode_waist(&self) -> f64 {
        self.mode_waist
    }

    /// Ballistic position of atom `j` at time `t`.
    pub fn position_at(&self, j: usize, t: f64) -> Vec3 {
        self.positions[j] + self.velocities[j] * t
    }

    /// Rigidly shifted copy; weights are re-evaluated at the new positions.
    pub fn translated(&self, d: &Vec3) -> Self {
        let positions = self.positions.iter().map(|r| r + d).collect();
        AtomSample::from_parts(positions, self.velocities.clone(), self.mode_waist)
            .expect("translation preserves validity")
    }

    /// Copy with atoms reordered as `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(invalid("order", "permutation length must match sample"));
        }
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(invalid("order", "not a permutation"));
            }
        }
        Ok(AtomSample {
            positions: order.iter().map(|&i| self.positions[i]).collect(),
            velocities: order.iter().map(|&i| self.velocities[i]).collect(),
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            mode_waist: self.mode_waist,
        })
    }

    /// `(sum w)^2 / sum w^2`, the number of atoms that act coherently.
    pub fn effective_atom_number(&self) -> f64 {
        let s1: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            s1 * s1 / s2
        } else {
            0.0
        }
    }
}

/// Draw a reproducible thermal sample: Gaussian cloud positions, Gaussian
/// velocity components of standard deviation [`thermal_sigma_v`], and
/// mode weights at the initial transverse position.
pub fn sample_atoms(spec: &EnsembleSpec, seed: u64) -> Result<AtomSample> {
    spec.validate()?;
    let sigma_v = thermal_sigma_v(spec);
    let [sx, sy, sz] = spec.cloud_sigma;
    let draws: Vec<(Vec3, Vec3)> = (0..spec.n_atoms as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = atom_rng(seed, j);
            let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
            let r = Vec3::new(sx * n(), sy * n(), sz * n());
            let v = Vec3::new(sigma_v * n(), sigma_v * n(), sigma_v * n());
            (r, v)
        })
        .collect();
    let (positions, velocities) = draws.into_iter().unzip();
    AtomSample::from_parts(positions, velocities, spec.mode_waist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rb87(n: usize, t_uk: f64) -> EnsembleSpec {
        EnsembleSpec::rb87(n, t_uk * 1e-6, [500e-6, 500e-6, 500e-6], 100e-6).unwrap()
    }

    #[test]
    fn rb87_mass_matches_table() {
        assert_relative_eq!(Species::Rb87.mass(), 1.44316e-25, max_relative = 1e-5);
    }

    #[test]
    fn sigma_v_values() {
        let oracle = |t: f64| (1.380649e-23 * t / 1.44316e-25).sqrt();
        assert_relative_eq!(thermal_sigma_v(&rb87(1, 15.0)), oracle(15e-6), max_relative = 1e-5);
        assert_relative_eq!(thermal_sigma_v(&rb87(1, 15.0)), 0.0379, max_relative = 1e-3);
        assert_relative_eq!(thermal_sigma_v(&rb87(1, 10.0)), 0.0309, max_relative = 1e-3);
        assert_relative_eq!(
            thermal_sigma_v(&rb87(1, 60.0)),
            2.0 * thermal_sigma_v(&rb87(1, 15.0)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn mean_speed_exceeds_rms_component() {
        let s = rb87(1, 15.0);
        assert_relative_eq!(
            mean_thermal_speed(&s) / thermal_sigma_v(&s),
            (8.0 / std::f64::consts::PI).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(EnsembleSpec::rb87(0, 1e-5, [1e-4; 3], 1e-4).is_err());
        assert!(EnsembleSpec::rb87(1, 0.0, [1e-4; 3], 1e-4).is_err());
        assert!(EnsembleSpec::rb87(1, 1e-5, [1e-4, -1.0, 1e-4], 1e-4).is_err());
        assert!(EnsembleSpec::rb87(1, 1e-5, [1e-4; 3], 0.0).is_err());
    }

    #[test]
    fn single_atom_shape() {
        let s = sample_atoms(&rb87(1, 15.0), 99).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.velocities().len(), 1);
        assert_eq!(s.weights().len(), 1);
    }

    #[test]
    fn determinism_contract() {
        let spec = rb87(1000, 15.0);
        let a = sample_atoms(&spec, 7).unwrap();
        let b = sample_atoms(&spec, 7).unwrap();
        let c = sample_atoms(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn per_atom_streams_are_prefix_stable() {
        // atom j's draws do not depend on how many atoms are sampled
        let small = sample_atoms(&rb87(10, 15.0), 3).unwrap();
        let large = sample_atoms(&rb87(5000, 15.0), 3).unwrap();
        assert_eq!(small.positions(), &large.positions()[..10]);
        assert_eq!(small.velocities(), &large.velocities()[..10]);
    }

    #[test]
    fn worker_count_does_not_change_sample() {
        let spec = rb87(20_000, 15.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_atoms(&spec, 11).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn velocity_and_position_moments() {
        let n = 100_000;
        let spec = rb87(n, 15.0);
        let s = sample_atoms(&spec, 2024).unwrap();
        let sv = thermal_sigma_v(&spec);
        for axis in 0..3 {
            let mean: f64 = s.velocities().iter().map(|v| v[axis]).sum::<f64>() / n as f64;
            let rms = (s.velocities().iter().map(|v| v[axis] * v[axis]).sum::<f64>() / n as f64).sqrt();
            // chi estimator: relative sd of the RMS is 1/sqrt(2n) = 0.22%; 1% is > 3 sd
            assert!((rms - sv).abs() / sv < 0.01, "axis {axis}: rms {rms}");
            assert!(mean.abs() < 5.0 * sv / (n as f64).sqrt());

            let sig = spec.cloud_sigma[axis];
            let pm: f64 = s.positions().iter().map(|r| r[axis]).sum::<f64>() / n as f64;
            let var = s.positions().iter().map(|r| (r[axis] - pm).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var - sig * sig).abs() / (sig * sig) < 0.05);
        }
        assert!(s.weights().iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn weights_ignore_longitudinal_shift() {
        let s = sample_atoms(&rb87(100, 15.0), 5).unwrap();
        let t = s.translated(&Vec3::new(0.0, 0.0, 3e-3));
        assert_eq!(s.weights(), t.weights());
    }

    #[test]
    fn permutation_validation() {
        let s = sample_atoms(&rb87(3, 15.0), 5).unwrap();
        assert!(s.permuted(&[2, 0, 1]).is_ok());
        assert!(s.permuted(&[0, 0, 1]).is_err());
        assert!(s.permuted(&[0, 1]).is_err());
    }

    #[test]
    fn analytic_weight_moments_match_sample() {
        let spec = rb87(100_000, 15.0);
        let s = sample_atoms(&spec, 1).unwrap();
        let n = s.len() as f64;
        let m1 = s.weights().iter().sum::<f64>() / n;
        let m2 = s.weights().iter().map(|w| w * w).sum::<f64>() / n;
        assert!((m1 - spec.mean_weight()).abs() / spec.mean_weight() < 0.05);
        assert!((m2 - spec.mean_weight_sq()).abs() / spec.mean_weight_sq() < 0.07);
    }
}
