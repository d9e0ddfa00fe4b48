//! Physical constants (CODATA 2018 exact SI values and CODATA 2022 for the
//! atomic mass unit) and the atomic species table.

use serde::{Deserialize, Serialize};

/// Boltzmann constant, J/K (exact).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_068_92e-27;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Atomic species with tabulated masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Species {
    Rb87,
    Rb85,
    Cs133,
}

impl Species {
    /// Atomic mass in kilograms.
    pub fn mass(self) -> f64 {
        let u = match self {
            Species::Rb87 => 86.909_180_531,
            Species::Rb85 => 84.911_789_738,
            Species::Cs133 => 132.905_451_961,
        };
        u * ATOMIC_MASS_UNIT
    }

    /// Ground-state hyperfine splitting in Hz.
    pub fn hyperfine_splitting(self) -> f64 {
        match self {
            Species::Rb87 => 6.834_682_610_904e9,
            Species::Rb85 => 3.035_732_439e9,
            Species::Cs133 => 9.192_631_770e9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::Rb87 => "Rb87",
            Species::Rb85 => "Rb85",
            Species::Cs133 => "Cs133",
        }
    }

    pub fn from_name(name: &str) -> Option<Species> {
        match name {
            "Rb87" => Some(Species::Rb87),
            "Rb85" => Some(Species::Rb85),
            "Cs133" => Some(Species::Cs133),
            _ => None,
        }
    }
}
