//! Spin-echo rephasing of single-excitation spin waves in a thermal atomic
//! ensemble: geometry, Monte Carlo and closed-form retrieval efficiency,
//! rephasing schedules, π-pulse noise, DLCZ photon statistics and the fits
//! used to analyse them.

pub mod constants;
pub mod ensemble;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod noise;
pub mod parallel;
pub mod photon;
pub mod schedule;
pub mod spinwave;

pub use ensemble::{sample_atoms, AtomSample, EnsembleSpec};
pub use error::{Error, Result};
pub use geometry::{raman_wavevector, rephasing_ratio, spinwave_wavevector, BeamGeometry, GeometryParams, Vec3, Wavevector};
pub use schedule::{schedule_for, schedule_with, EchoSchedule, SchedulePolicy};
pub use spinwave::{EfficiencyModel, Estimate, ModeWeighting, PulseEvent, SpinWaveState};
