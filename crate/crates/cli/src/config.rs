//! Run configuration: TOML with strict keys and laboratory units (nm, deg, uK,
//! um, us, percent), converted to SI at this boundary.

use serde::Deserialize;
use spin_echo::constants::Species;
use spin_echo::photon::{calibrate, DlczParams, ReadBackground};
use spin_echo::{BeamGeometry, EnsembleSpec, GeometryParams, ModeWeighting, SchedulePolicy};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryBlock,
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub pulses: PulsesBlock,
    pub dlcz: Option<DlczBlock>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub scan: ScanBlock,
    #[serde(default)]
    pub dephase: DephaseBlock,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub g2: G2Block,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub lambda1_nm: f64,
    pub lambda2_nm: f64,
    pub lambda_c_nm: f64,
    pub lambda_p_nm: Option<f64>,
    pub theta_s_deg: f64,
    pub theta_pi_deg: f64,
    #[serde(default)]
    pub signal_azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    #[serde(default = "default_species")]
    pub species: String,
    pub n_atoms: usize,
    #[serde(rename = "temperature_uK")]
    pub temperature_uk: f64,
    pub cloud_sigma_um: [f64; 3],
    pub mode_waist_um: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_species() -> String {
    "Rb87".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    #[default]
    Centered,
    FixedT1,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsesBlock {
    pub epsilon: f64,
    pub policy: PolicyName,
    pub t1_us: Option<f64>,
    #[serde(rename = "rabi_omega_kHz")]
    pub rabi_omega_khz: f64,
    #[serde(rename = "rabi_gamma_kHz")]
    pub rabi_gamma_khz: f64,
    pub rabi_t_max_us: f64,
    pub rabi_points: usize,
    /// Standard deviation of additive noise on the synthetic Rabi curve.
    pub rabi_noise: f64,
}

impl Default for PulsesBlock {
    fn default() -> Self {
        PulsesBlock {
            epsilon: 0.0,
            policy: PolicyName::Centered,
            t1_us: None,
            rabi_omega_khz: 87.1,
            rabi_gamma_khz: 13.4,
            rabi_t_max_us: 60.0,
            rabi_points: 61,
            rabi_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlczBlock {
    /// Calibrate from echo-off `(p_w, p_r, g2)` at T = 0 ...
    pub p_w_percent: Option<f64>,
    pub p_r_percent: Option<f64>,
    pub g2: Option<f64>,
    pub dark_fraction: Option<f64>,
    pub p_r_asymptote_percent: Option<f64>,
    /// ... or give the model parameters directly.
    pub chi: Option<f64>,
    pub eta_w: Option<f64>,
    pub eta_r: Option<f64>,
    pub dark_w: Option<f64>,
    pub dark_r: Option<f64>,
    /// π-pulse noise in the read-out mode, measured at `n_pi_epsilon`.
    pub n_pi_percent: f64,
    pub n_pi_epsilon: f64,
    /// Raman angle for the correlation runs; defaults to the geometry's.
    pub theta_pi_deg: Option<f64>,
    pub mode_waist_um: Option<f64>,
    #[serde(default)]
    pub readout_reweight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Cf,
    Mc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cf => "cf",
            Mode::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n_trials: u64,
    pub out_dir: String,
    pub mode: Mode,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            n_trials: 1_000_000,
            out_dir: "out".into(),
            mode: Mode::Cf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    #[serde(rename = "T_us")]
    pub t_us: f64,
    pub dt_min_us: Option<f64>,
    pub dt_max_us: Option<f64>,
    pub points: usize,
    pub theta_pi_list_deg: Vec<f64>,
}

impl Default for ScanBlock {
    fn default() -> Self {
        ScanBlock {
            t_us: 600.0,
            dt_min_us: None,
            dt_max_us: None,
            points: 61,
            theta_pi_list_deg: vec![1.5, 1.9, 2.1, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephaseBlock {
    #[serde(rename = "T_max_us")]
    pub t_max_us: f64,
    pub points: usize,
}

impl Default for DephaseBlock {
    fn default() -> Self {
        DephaseBlock {
            t_max_us: 600.0,
            points: 31,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Raman angle for the map; defaults to the geometry's.
    pub theta_pi_deg: Option<f64>,
    pub grid_points: usize,
    pub span_widths: f64,
    pub shots: usize,
    pub detection_waist_um: f64,
    pub detection_efficiency: f64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        NoiseBlock {
            theta_pi_deg: None,
            grid_points: 101,
            span_widths: 5.0,
            shots: 1,
            detection_waist_um: 100.0,
            detection_efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Block {
    #[serde(rename = "T_max_off_us")]
    pub t_max_off_us: f64,
    pub points_off: usize,
    #[serde(rename = "T_max_on_us")]
    pub t_max_on_us: f64,
    pub points_on: usize,
}

impl Default for G2Block {
    fn default() -> Self {
        G2Block {
            t_max_off_us: 800.0,
            points_off: 17,
            t_max_on_us: 3000.0,
            points_on: 31,
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {msg}"))
}

fn check_positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be a positive number, got {v}")))
    }
}

fn check_fraction(key: &str, v: f64) -> Result<(), CliError> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(bad(key, format!("must lie in [0, 1), got {v}")))
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.geometry()?;
        self.ensemble_spec()?;
        let p = &self.pulses;
        if !(0.0..=0.5).contains(&p.epsilon) {
            return Err(bad("pulses.epsilon", format!("must lie in [0, 0.5], got {}", p.epsilon)));
        }
        match (p.policy, p.t1_us) {
            (PolicyName::FixedT1, None) => return Err(bad("pulses.t1_us", "required by policy fixed-t1")),
            (PolicyName::FixedT1, Some(t)) if !(t >= 0.0) => return Err(bad("pulses.t1_us", "must be >= 0")),
            (PolicyName::Centered, Some(_)) => return Err(bad("pulses.t1_us", "only valid with policy fixed-t1")),
            _ => {}
        }
        check_positive("pulses.rabi_omega_kHz", p.rabi_omega_khz)?;
        if !(p.rabi_gamma_khz >= 0.0 && p.rabi_gamma_khz.is_finite()) {
            return Err(bad("pulses.rabi_gamma_kHz", "must be >= 0"));
        }
        check_positive("pulses.rabi_t_max_us", p.rabi_t_max_us)?;
        if p.rabi_points < 8 {
            return Err(bad("pulses.rabi_points", "need at least 8"));
        }
        if !(p.rabi_noise >= 0.0 && p.rabi_noise.is_finite()) {
            return Err(bad("pulses.rabi_noise", "must be >= 0"));
        }
        if self.dlcz.is_some() {
            self.dlcz_params(p.epsilon)?;
        }
        if self.run.n_trials == 0 {
            return Err(bad("run.n_trials", "must be >= 1"));
        }
        if self.run.out_dir.is_empty() {
            return Err(bad("run.out_dir", "must not be empty"));
        }
        let s = &self.scan;
        check_positive("scan.T_us", s.t_us)?;
        if s.points < 3 {
            return Err(bad("scan.points", "need at least 3"));
        }
        for (k, v) in [("scan.dt_min_us", s.dt_min_us), ("scan.dt_max_us", s.dt_max_us)] {
            if let Some(v) = v {
                check_positive(k, v)?;
            }
        }
        if s.theta_pi_list_deg.is_empty() {
            return Err(bad("scan.theta_pi_list_deg", "must not be empty"));
        }
        for &t in &s.theta_pi_list_deg {
            if !(t > 0.0 && t < 90.0) {
                return Err(bad("scan.theta_pi_list_deg", format!("angles must lie in (0, 90), got {t}")));
            }
        }
        check_positive("dephase.T_max_us", self.dephase.t_max_us)?;
        if self.dephase.points < 5 {
            return Err(bad("dephase.points", "need at least 5"));
        }
        let n = &self.noise;
        if let Some(t) = n.theta_pi_deg {
            if !(t > 0.0 && t < 90.0) {
                return Err(bad("noise.theta_pi_deg", format!("must lie in (0, 90), got {t}")));
            }
        }
        if n.grid_points < 5 {
            return Err(bad("noise.grid_points", "need at least 5"));
        }
        check_positive("noise.span_widths", n.span_widths)?;
        if n.shots == 0 {
            return Err(bad("noise.shots", "must be >= 1"));
        }
        check_positive("noise.detection_waist_um", n.detection_waist_um)?;
        if !(n.detection_efficiency > 0.0 && n.detection_efficiency <= 1.0) {
            return Err(bad("noise.detection_efficiency", "must lie in (0, 1]"));
        }
        let g = &self.g2;
        check_positive("g2.T_max_off_us", g.t_max_off_us)?;
        check_positive("g2.T_max_on_us", g.t_max_on_us)?;
        if g.points_off < 5 || g.points_on < 5 {
            return Err(bad("g2.points_off/points_on", "need at least 5 points each"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<BeamGeometry, CliError> {
        let g = &self.geometry;
        for (k, v) in [
            ("geometry.lambda1_nm", g.lambda1_nm),
            ("geometry.lambda2_nm", g.lambda2_nm),
            ("geometry.lambda_c_nm", g.lambda_c_nm),
        ] {
            check_positive(k, v)?;
        }
        if let Some(v) = g.lambda_p_nm {
            check_positive("geometry.lambda_p_nm", v)?;
        }
        for (k, v) in [("geometry.theta_s_deg", g.theta_s_deg), ("geometry.theta_pi_deg", g.theta_pi_deg)] {
            if !(0.0..90.0).contains(&v) {
                return Err(bad(k, format!("must lie in [0, 90), got {v}")));
            }
        }
        let mut p = GeometryParams::new(
            g.lambda1_nm * 1e-9,
            g.lambda2_nm * 1e-9,
            g.lambda_c_nm * 1e-9,
            g.theta_s_deg.to_radians(),
            g.theta_pi_deg.to_radians(),
        );
        p.lambda_p = g.lambda_p_nm.map(|l| l * 1e-9);
        p.signal_azimuth = g.signal_azimuth_deg.to_radians();
        BeamGeometry::from_params(&p).map_err(|e| CliError::Config(format!("geometry: {e}")))
    }

    pub fn species(&self) -> Result<Species, CliError> {
        Species::from_name(&self.ensemble.species)
            .ok_or_else(|| bad("ensemble.species", format!("unknown species {:?}", self.ensemble.species)))
    }

    fn spec_with_waist(&self, waist_um: f64) -> Result<EnsembleSpec, CliError> {
        let e = &self.ensemble;
        if e.n_atoms == 0 {
            return Err(bad("ensemble.n_atoms", "must be >= 1"));
        }
        check_positive("ensemble.temperature_uK", e.temperature_uk)?;
        for s in e.cloud_sigma_um {
            check_positive("ensemble.cloud_sigma_um", s)?;
        }
        check_positive("ensemble.mode_waist_um", waist_um)?;
        EnsembleSpec::new(
            e.n_atoms,
            e.temperature_uk * 1e-6,
            e.cloud_sigma_um.map(|s| s * 1e-6),
            waist_um * 1e-6,
            self.species()?.mass(),
        )
        .map_err(|err| CliError::Config(format!("ensemble: {err}")))
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec, CliError> {
        self.spec_with_waist(self.ensemble.mode_waist_um)
    }

    /// Ensemble as seen by the DLCZ read-out (its own mode waist, if given).
    pub fn dlcz_spec(&self) -> Result<EnsembleSpec, CliError> {
        let w = self.dlcz.as_ref().and_then(|d| d.mode_waist_um).unwrap_or(self.ensemble.mode_waist_um);
        self.spec_with_waist(w)
    }

    /// Geometry for the correlation runs.
    pub fn dlcz_geometry(&self) -> Result<BeamGeometry, CliError> {
        let g = self.geometry()?;
        match self.dlcz.as_ref().and_then(|d| d.theta_pi_deg) {
            Some(t) => g.with_theta_pi(t.to_radians()).map_err(|e| CliError::Config(format!("dlcz.theta_pi_deg: {e}"))),
            None => Ok(g),
        }
    }

    pub fn dlcz_weighting(&self) -> ModeWeighting {
        match &self.dlcz {
            Some(d) if d.readout_reweight => ModeWeighting::Readout,
            _ => ModeWeighting::Imprint,
        }
    }

    pub fn policy(&self) -> SchedulePolicy {
        match self.pulses.policy {
            PolicyName::Centered => SchedulePolicy::Centered,
            PolicyName::FixedT1 => SchedulePolicy::FixedT1(self.pulses.t1_us.unwrap_or(0.0) * 1e-6),
        }
    }

    /// DLCZ parameters with `n_pi` rescaled to pulse imperfection `epsilon`.
    pub fn dlcz_params(&self, epsilon: f64) -> Result<DlczParams, CliError> {
        let d = self.dlcz.as_ref().ok_or_else(|| CliError::Config("missing [dlcz] block".into()))?;
        check_fraction("dlcz.n_pi_percent", d.n_pi_percent / 100.0)?;
        if !(d.n_pi_epsilon > 0.0 && d.n_pi_epsilon < 1.0) {
            return Err(bad("dlcz.n_pi_epsilon", "must lie in (0, 1)"));
        }
        if let Some(w) = d.mode_waist_um {
            check_positive("dlcz.mode_waist_um", w)?;
        }
        if let Some(t) = d.theta_pi_deg {
            if !(t > 0.0 && t < 90.0) {
                return Err(bad("dlcz.theta_pi_deg", format!("must lie in (0, 90), got {t}")));
            }
        }
        let n_pi = spin_echo::noise::scale_noise(d.n_pi_percent / 100.0, d.n_pi_epsilon, epsilon)
            .map_err(|e| CliError::Config(format!("dlcz: {e}")))?;
        let calib = [d.p_w_percent, d.p_r_percent, d.g2];
        let direct = [d.chi, d.eta_w, d.eta_r, d.dark_w, d.dark_r];
        let any_calib = calib.iter().any(Option::is_some) || d.dark_fraction.is_some() || d.p_r_asymptote_percent.is_some();
        let any_direct = direct.iter().any(Option::is_some);
        let params = match (any_calib, any_direct) {
            (true, true) => return Err(bad("dlcz", "give either calibration keys or model parameters, not both")),
            (false, false) => return Err(bad("dlcz", "needs p_w_percent/p_r_percent/g2 or chi/eta_w/eta_r/dark_w/dark_r")),
            (true, false) => {
                let [Some(p_w), Some(p_r), Some(g2)] = calib else {
                    return Err(bad("dlcz", "calibration needs p_w_percent, p_r_percent and g2"));
                };
                let bg = match (d.dark_fraction, d.p_r_asymptote_percent) {
                    (Some(_), Some(_)) => {
                        return Err(bad("dlcz", "give dark_fraction or p_r_asymptote_percent, not both"))
                    }
                    (Some(f), None) => ReadBackground::FractionOfPr(f),
                    (None, Some(a)) => ReadBackground::Asymptote(a / 100.0),
                    (None, None) => ReadBackground::default(),
                };
                calibrate(p_w / 100.0, p_r / 100.0, g2, bg, n_pi)
            }
            (false, true) => {
                let [Some(chi), Some(eta_w), Some(eta_r), Some(dark_w), Some(dark_r)] = direct else {
                    return Err(bad("dlcz", "model parameters need chi, eta_w, eta_r, dark_w and dark_r"));
                };
                let p = DlczParams {
                    chi,
                    eta_w,
                    eta_r,
                    dark_w,
                    dark_r,
                    n_pi,
                };
                p.validate().map(|_| p)
            }
        };
        params.map_err(|e| CliError::Config(format!("dlcz: {e}")))
    }
}
