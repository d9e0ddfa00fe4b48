use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spin_echo::fit::{
    compare_decay_forms, fit_damped_cosine, fit_gaussian_peak, fit_gaussian_peak_weighted, fit_lifetime_1e,
    pi_pulse_fidelity, synthetic_rabi, DecayForm, FitResult,
};
use spin_echo::noise::{
    average_maps, directional_noise_map, lobe_full_width, noise_into_readout_mode, DetectionMode, NoiseGrid,
    NoiseSource,
};
use spin_echo::photon::{g2_curve, CurveOptions, G2Curve};
use spin_echo::schedule::{
    default_scan_range, min_theta_pi, ratio_vs_angle, scan_delta_t, scan_half_width, schedule_with,
};
use spin_echo::spinwave::dephasing_time;
use spin_echo::{
    rephasing_ratio, sample_atoms, spinwave_wavevector, AtomSample, BeamGeometry, EfficiencyModel, EnsembleSpec,
    ModeWeighting,
};

use crate::artifact::{csv_artifact, json_artifact, num, sha256_hex, Artifact, Provenance, TOOL_VERSION};
use crate::config::{parse_config, Mode, RunConfig};
use crate::data::{read_xy_columns, Columns};
use crate::error::CliError;
use crate::{Command, Common, FitArgs, FitModelArg, ModeArg, RangeArgs, Switch};

/// Everything a command produced, not yet written.
pub(crate) struct Report {
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub stdout: String,
    pub warning: Option<CliError>,
}

pub(crate) fn dispatch(cmd: &Command) -> Result<Report, CliError> {
    match cmd {
        Command::Rabi(c) => rabi(&Ctx::load(c, "rabi")?),
        Command::Dephase { common, t_max_us, points } => dephase(&Ctx::load(common, "dephase")?, *t_max_us, *points),
        Command::EchoScan { common, range } => echo_scan(&Ctx::load(common, "echo-scan")?, range),
        Command::RatioScan { common, t_us, points } => ratio_scan(&Ctx::load(common, "ratio-scan")?, *t_us, *points),
        Command::NoiseMap { common, points } => noise_map(&Ctx::load(common, "noise-map")?, *points),
        Command::G2Curve { common, echo } => g2(&Ctx::load(common, "g2-curve")?, *echo),
        Command::Schedule { common, t_us } => schedule(&Ctx::load(common, "schedule")?, *t_us),
        Command::Fit(args) => fit(args),
    }
}

fn read_text(path: &Path, what: &str) -> Result<(Vec<u8>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{what} {} is not UTF-8", path.display())))?;
    Ok((bytes, text))
}

struct Ctx {
    cfg: RunConfig,
    prov: Provenance,
    out_dir: PathBuf,
    seed: u64,
    mode: Mode,
    geom: BeamGeometry,
    spec: EnsembleSpec,
}

impl Ctx {
    fn load(c: &Common, subcommand: &str) -> Result<Ctx, CliError> {
        let (bytes, text) = read_text(&c.config, "config")?;
        let cfg = parse_config(&text)?;
        let seed = c.seed.unwrap_or(cfg.ensemble.seed);
        let mode = match c.mode {
            Some(ModeArg::Mc) => Mode::Mc,
            Some(ModeArg::Cf) => Mode::Cf,
            None => cfg.run.mode,
        };
        let out_dir = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir));
        let prov = Provenance {
            tool: TOOL_VERSION.into(),
            subcommand: subcommand.into(),
            config_sha256: sha256_hex(&bytes),
            seed,
            mode: mode.name().into(),
        };
        let geom = cfg.geometry()?;
        let spec = cfg.ensemble_spec()?;
        Ok(Ctx {
            cfg,
            prov,
            out_dir,
            seed,
            mode,
            geom,
            spec,
        })
    }

    fn atoms(&self, spec: &EnsembleSpec) -> Result<Option<AtomSample>, CliError> {
        match self.mode {
            Mode::Mc => Ok(Some(sample_atoms(spec, self.seed)?)),
            Mode::Cf => Ok(None),
        }
    }

    fn report(&self, artifacts: Vec<Artifact>, warning: Option<CliError>) -> Report {
        let stdout = artifacts
            .iter()
            .map(|a| format!("{}\n", self.out_dir.join(&a.name).display()))
            .collect();
        Report {
            out_dir: self.out_dir.clone(),
            artifacts,
            stdout,
            warning,
        }
    }
}

fn model<'a>(spec: &'a EnsembleSpec, atoms: &'a Option<AtomSample>, weighting: ModeWeighting) -> EfficiencyModel<'a> {
    match atoms {
        Some(a) => EfficiencyModel::monte_carlo(a),
        None => EfficiencyModel::closed_form(spec),
    }
    .with_weighting(weighting)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn positive_flag(name: &str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!("`{name}` must be > 0, got {x}"))),
        _ => Ok(v),
    }
}

fn points_flag(v: Option<usize>, default: usize, min: usize) -> Result<usize, CliError> {
    let n = v.unwrap_or(default);
    if n < min {
        return Err(CliError::Config(format!("`--points` needs at least {min}, got {n}")));
    }
    Ok(n)
}

fn not_converged(what: &str, f: &FitResult) -> Option<CliError> {
    (!f.converged).then(|| CliError::NonConvergence(format!("{what} ({} iterations)", f.n_iter)))
}

fn fit_json(f: &FitResult) -> Value {
    json!(f)
}

fn rabi(ctx: &Ctx) -> Result<Report, CliError> {
    let p = &ctx.cfg.pulses;
    let taus_us = linspace(0.0, p.rabi_t_max_us, p.rabi_points);
    let taus: Vec<f64> = taus_us.iter().map(|t| t * 1e-6).collect();
    let y = synthetic_rabi(p.rabi_omega_khz * 1e3, p.rabi_gamma_khz * 1e3, &taus, p.rabi_noise, ctx.seed)?;
    let f = fit_damped_cosine(&taus, &y, None)?;
    let fidelity = pi_pulse_fidelity(&f).ok();
    let rows = taus_us
        .iter()
        .zip(&taus)
        .zip(&y)
        .map(|((tu, t), v)| vec![num(*tu), num(*v), num(f.predict(*t))]);
    let csv = csv_artifact("rabi.csv", &ctx.prov, &[], &["tau_us", "population", "fit"], rows)?;
    let summary = json!({
        "omega_kHz": f.get("omega") * 1e-3,
        "omega_stderr_kHz": f.stderrs.get("omega").map(|s| s * 1e-3),
        "gamma_kHz": f.get("gamma") * 1e-3,
        "gamma_stderr_kHz": f.stderrs.get("gamma").map(|s| s * 1e-3),
        "pi_time_us": 0.5 / f.get("omega") * 1e6,
        "pi_pulse_fidelity": fidelity,
        "input": {
            "omega_kHz": p.rabi_omega_khz,
            "gamma_kHz": p.rabi_gamma_khz,
            "noise": p.rabi_noise,
        },
        "fit": fit_json(&f),
    });
    let js = json_artifact("rabi_fit.json", &ctx.prov, &summary)?;
    Ok(ctx.report(vec![csv, js], not_converged("damped-cosine fit", &f)))
}

fn dephase(ctx: &Ctx, t_max_us: Option<f64>, points: Option<usize>) -> Result<Report, CliError> {
    let t_max = positive_flag("--T-max-us", t_max_us)?.unwrap_or(ctx.cfg.dephase.t_max_us);
    let n = points_flag(points, ctx.cfg.dephase.points, 5)?;
    let atoms = ctx.atoms(&ctx.spec)?;
    let m = model(&ctx.spec, &atoms, ModeWeighting::Imprint);
    let ts_us = linspace(0.0, t_max, n);
    let etas = ts_us
        .iter()
        .map(|t| m.evaluate(&ctx.geom, &[], t * 1e-6))
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<f64> = etas.iter().map(|e| e.value).collect();
    let f = fit_lifetime_1e(&ts_us, &values, DecayForm::Gaussian, Some(0.0))?;
    let rows = ts_us
        .iter()
        .zip(&etas)
        .map(|(t, e)| vec![num(*t), num(e.value), num(e.stderr)]);
    let csv = csv_artifact("dephase.csv", &ctx.prov, &[], &["T_us", "eta", "stderr"], rows)?;
    let summary = json!({
        "lifetime_us": f.get("tau"),
        "lifetime_theory_us": dephasing_time(&ctx.geom, &ctx.spec) * 1e6,
        "k_s_per_m": spinwave_wavevector(&ctx.geom).magnitude(),
        "sigma_v_m_per_s": m.velocity_spread(),
        "fit": fit_json(&f),
    });
    let js = json_artifact("dephase.json", &ctx.prov, &summary)?;
    Ok(ctx.report(vec![csv, js], not_converged("Gaussian decay fit", &f)))
}

fn echo_scan(ctx: &Ctx, range: &RangeArgs) -> Result<Report, CliError> {
    let s = &ctx.cfg.scan;
    let t_us = positive_flag("--T-us", range.t_us)?.unwrap_or(s.t_us);
    let n = points_flag(range.points, s.points, 5)?;
    let lo_flag = positive_flag("--dt-min-us", range.dt_min_us)?.or(s.dt_min_us);
    let hi_flag = positive_flag("--dt-max-us", range.dt_max_us)?.or(s.dt_max_us);
    let t = t_us * 1e-6;
    let eps = ctx.cfg.pulses.epsilon;
    let atoms = ctx.atoms(&ctx.spec)?;
    let m = model(&ctx.spec, &atoms, ModeWeighting::Imprint);
    let sigma_v = m.velocity_spread();
    let (lo, hi) = match (lo_flag, hi_flag) {
        (Some(a), Some(b)) => (a * 1e-6, b * 1e-6),
        (a, b) => {
            let (dlo, dhi) = default_scan_range(&ctx.geom, sigma_v, t)?;
            (a.map_or(dlo, |v| v * 1e-6), b.map_or(dhi, |v| v * 1e-6))
        }
    };
    let curve = scan_delta_t(&ctx.geom, &m, t, (lo, hi), n, eps)?;
    let dts_us: Vec<f64> = curve.points.iter().map(|p| p.delta_t * 1e6).collect();
    let etas: Vec<f64> = curve.points.iter().map(|p| p.eta.value).collect();
    let errs: Vec<f64> = curve.points.iter().map(|p| p.eta.stderr).collect();
    let f = if errs.iter().all(|e| *e > 0.0) {
        fit_gaussian_peak_weighted(&dts_us, &etas, Some(&errs))?
    } else {
        fit_gaussian_peak(&dts_us, &etas)?
    };
    let rows = curve
        .points
        .iter()
        .map(|p| vec![num(p.delta_t * 1e6), num(p.eta.value), num(p.eta.stderr)]);
    let extra = [("T_us", num(t_us)), ("epsilon", num(eps))];
    let csv = csv_artifact("echo_scan.csv", &ctx.prov, &extra, &["dt_us", "eta", "stderr"], rows)?;
    let summary = json!({
        "T_us": t_us,
        "epsilon": eps,
        "center_us": f.get("center"),
        "half_width_us": f.get("half_width"),
        "peak": {
            "dt_us": curve.peak.delta_t * 1e6,
            "eta": curve.peak.eta,
            "half_width_us": curve.peak.half_width.map(|w| w * 1e6),
            "at_edge": curve.peak.at_edge,
        },
        "theory": {
            "center_us": rephasing_ratio(&ctx.geom)? * t_us,
            "half_width_us": scan_half_width(&ctx.geom, sigma_v) * 1e6,
        },
        "fit": fit_json(&f),
    });
    let js = json_artifact("echo_scan.json", &ctx.prov, &summary)?;
    Ok(ctx.report(vec![csv, js], not_converged("Gaussian peak fit", &f)))
}

fn ratio_scan(ctx: &Ctx, t_us: Option<f64>, points: Option<usize>) -> Result<Report, CliError> {
    let s = &ctx.cfg.scan;
    let t_us = positive_flag("--T-us", t_us)?.unwrap_or(s.t_us);
    let n = points_flag(points, s.points, 3)?;
    let thetas: Vec<f64> = s.theta_pi_list_deg.iter().map(|d| d.to_radians()).collect();
    let atoms = ctx.atoms(&ctx.spec)?;
    let m = model(&ctx.spec, &atoms, ModeWeighting::Imprint);
    let pts = ratio_vs_angle(&ctx.geom, &thetas, &m, t_us * 1e-6, n)?;
    let theta_s = ctx.geom.theta_s();
    let table: Vec<Value> = pts
        .iter()
        .map(|p| {
            json!({
                "theta_pi_deg": p.theta_pi.to_degrees(),
                "ratio": p.ratio,
                "theory": p.theory,
                "small_angle": theta_s / (2.0 * p.theta_pi),
                "relative_error": p.ratio / p.theory - 1.0,
                "resolution": p.resolution,
            })
        })
        .collect();
    let rows = pts.iter().map(|p| {
        vec![
            num(p.theta_pi.to_degrees()),
            num(p.ratio),
            num(p.theory),
            num(theta_s / (2.0 * p.theta_pi)),
            num(p.resolution),
        ]
    });
    let extra = [("T_us", num(t_us))];
    let csv = csv_artifact(
        "ratio_scan.csv",
        &ctx.prov,
        &extra,
        &["theta_pi_deg", "ratio", "theory", "small_angle", "resolution"],
        rows,
    )?;
    let js = json_artifact("ratio_scan.json", &ctx.prov, &json!({ "T_us": t_us, "points": table }))?;
    Ok(ctx.report(vec![csv, js], None))
}

fn noise_map(ctx: &Ctx, points: Option<usize>) -> Result<Report, CliError> {
    let nb = &ctx.cfg.noise;
    let eps = ctx.cfg.pulses.epsilon;
    if eps <= 0.0 {
        return Err(CliError::Config("`pulses.epsilon` must be > 0 for noise-map".into()));
    }
    let n = points_flag(points, nb.grid_points, 5)?;
    let geom = match nb.theta_pi_deg {
        Some(d) => ctx.geom.with_theta_pi(d.to_radians())?,
        None => ctx.geom.clone(),
    };
    let lambda = geom.lambda_p();
    let width = lobe_full_width(lambda, ctx.spec.mode_waist);
    let span = nb.span_widths * width;
    let grid = NoiseGrid {
        center: None,
        half_span: (span, span),
        n: (n, n),
    };
    let maps = (0..nb.shots as u64)
        .map(|s| {
            let atoms = sample_atoms(&ctx.spec, ctx.seed.wrapping_add(s))?;
            directional_noise_map(&atoms, &geom, eps, &grid)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let map = average_maps(&maps)?;
    let det = DetectionMode::readout(&geom, nb.detection_waist_um * 1e-6, nb.detection_efficiency)?;
    let readout_map = noise_into_readout_mode(NoiseSource::Map(&map), &det)?;
    let readout_model = noise_into_readout_mode(
        NoiseSource::Params {
            geom: &geom,
            spec: &ctx.spec,
            epsilon: eps,
        },
        &det,
    )?;
    let shape = map.lobe_shape().ok();
    let far = map.far_floor(3.0 * width);
    let mut rows = Vec::with_capacity(map.intensity.len());
    for (iy, ty) in map.theta_y.iter().enumerate() {
        for (ix, tx) in map.theta_x.iter().enumerate() {
            rows.push(vec![num(tx.to_degrees()), num(ty.to_degrees()), num(map.at(ix, iy))]);
        }
    }
    let extra = [
        ("epsilon", num(eps)),
        ("theta_pi_deg", num(geom.theta_pi().to_degrees())),
        ("shots", nb.shots.to_string()),
    ];
    let csv = csv_artifact("noise_map.csv", &ctx.prov, &extra, &["theta_x_deg", "theta_y_deg", "photons"], rows)?;
    let (ix, iy) = map.argmax();
    let summary = json!({
        "epsilon": eps,
        "theta_pi_deg": geom.theta_pi().to_degrees(),
        "shots": nb.shots,
        "lobe_center_deg": [map.lobe_center.0.to_degrees(), map.lobe_center.1.to_degrees()],
        "lobe_covered": map.lobe_covered,
        "expected_full_width_deg": width.to_degrees(),
        "fitted_full_width_deg": shape.map(|s| [s.full_width.0.to_degrees(), s.full_width.1.to_degrees()]),
        "fitted_peak_deg": shape.map(|s| [s.peak_theta.0.to_degrees(), s.peak_theta.1.to_degrees()]),
        "peak_photons": map.at(ix, iy),
        "floor_photons": map.floor,
        "far_floor_photons": far,
        "peak_to_floor": map.at(ix, iy) / map.floor,
        "cell_solid_angle_sr": map.cell_solid_angle,
        "readout_noise": {
            "detection_waist_um": nb.detection_waist_um,
            "from_map": readout_map,
            "closed_form": readout_model,
        },
    });
    let js = json_artifact("noise_map.json", &ctx.prov, &summary)?;
    let warning = shape
        .is_none()
        .then(|| CliError::NonConvergence("lobe Gaussian fit failed or peak not bracketed".into()));
    Ok(ctx.report(vec![csv, js], warning))
}

struct CurveSummary {
    value: Value,
    lifetime_us: Option<f64>,
    warning: Option<CliError>,
}

fn summarize_curve(curve: &G2Curve, label: &str) -> Result<CurveSummary, CliError> {
    let ts: Vec<f64> = curve.points.iter().map(|p| p.t * 1e6).collect();
    let g2: Vec<f64> = curve.points.iter().map(|p| p.g2).collect();
    let max_t_above_2 = curve.points.iter().filter(|p| p.g2 > 2.0).map(|p| p.t * 1e6).fold(None, |a: Option<f64>, t| {
        Some(a.map_or(t, |a| a.max(t)))
    });
    let (fits, lifetime, warning) = if ts.len() >= 5 {
        let c = compare_decay_forms(&ts, &g2, Some(1.0))?;
        let better = match c.better {
            DecayForm::Exponential => &c.exponential,
            DecayForm::Gaussian => &c.gaussian,
        };
        let w = not_converged(&format!("{label} lifetime fit"), better);
        let tau = better.get("tau");
        (Some(c.clone()), Some(tau), w)
    } else {
        (None, None, Some(CliError::NonConvergence(format!("{label}: fewer than 5 points to fit"))))
    };
    let value = json!({
        "initial_g2": curve.points.first().map(|p| p.g2),
        "initial_T_us": curve.points.first().map(|p| p.t * 1e6),
        "lifetime_us": lifetime,
        "lifetime_form": fits.as_ref().map(|c| c.better),
        "lifetime_exponential_us": fits.as_ref().map(|c| c.exponential.get("tau")),
        "lifetime_gaussian_us": fits.as_ref().map(|c| c.gaussian.get("tau")),
        "max_T_us_g2_above_2": max_t_above_2,
        "skipped": curve.skipped,
        "fits": fits,
    });
    Ok(CurveSummary {
        value,
        lifetime_us: lifetime,
        warning,
    })
}

fn g2(ctx: &Ctx, echo: Option<Switch>) -> Result<Report, CliError> {
    let eps = ctx.cfg.pulses.epsilon;
    let params = ctx.cfg.dlcz_params(eps)?;
    let spec = ctx.cfg.dlcz_spec()?;
    let geom = ctx.cfg.dlcz_geometry()?;
    let gb = &ctx.cfg.g2;
    let atoms = ctx.atoms(&spec)?;
    let m = model(&spec, &atoms, ctx.cfg.dlcz_weighting());
    let which: Vec<bool> = match echo {
        Some(Switch::On) => vec![true],
        Some(Switch::Off) => vec![false],
        None => vec![false, true],
    };
    let mut artifacts = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut lifetimes = [None, None];
    let mut warning = None;
    for echo_on in which {
        let (t_max, n) = if echo_on {
            (gb.t_max_on_us, gb.points_on)
        } else {
            (gb.t_max_off_us, gb.points_off)
        };
        let ts: Vec<f64> = linspace(0.0, t_max, n).into_iter().map(|t| t * 1e-6).collect();
        let opts = CurveOptions {
            echo_on,
            epsilon: eps,
            policy: ctx.cfg.policy(),
            n_trials: ctx.cfg.run.n_trials,
        };
        let curve = g2_curve(&params, &geom, &m, &ts, &opts)?;
        let label = if echo_on { "echo_on" } else { "echo_off" };
        let rows = curve.points.iter().map(|p| {
            vec![
                num(p.t * 1e6),
                num(p.p_w),
                num(p.p_r),
                num(p.p_wr),
                num(p.g2),
                num(p.stderr_g2),
                p.echo_on.to_string(),
                num(p.eta_deph),
            ]
        });
        let extra = [
            ("echo", if echo_on { "on" } else { "off" }.to_string()),
            ("epsilon", num(eps)),
            ("n_pi", num(params.n_pi)),
            ("n_trials", ctx.cfg.run.n_trials.to_string()),
        ];
        artifacts.push(csv_artifact(
            &format!("g2_{label}.csv"),
            &ctx.prov,
            &extra,
            &["T_us", "p_w", "p_r", "p_wr", "g2", "stderr", "echo_on", "eta_deph"],
            rows,
        )?);
        let s = summarize_curve(&curve, label)?;
        lifetimes[echo_on as usize] = s.lifetime_us;
        warning = warning.or(s.warning);
        summary.insert(label.into(), s.value);
    }
    if let [Some(off), Some(on)] = lifetimes {
        summary.insert("lifetime_ratio".into(), json!(on / off));
    }
    summary.insert(
        "params".into(),
        json!({
            "chi": params.chi,
            "eta_w": params.eta_w,
            "eta_r": params.eta_r,
            "dark_w": params.dark_w,
            "dark_r": params.dark_r,
            "n_pi": params.n_pi,
            "epsilon": eps,
            "theta_pi_deg": geom.theta_pi().to_degrees(),
        }),
    );
    artifacts.push(json_artifact("g2_summary.json", &ctx.prov, &Value::Object(summary))?);
    Ok(ctx.report(artifacts, warning))
}

fn schedule(ctx: &Ctx, t_us: Option<f64>) -> Result<Report, CliError> {
    let t_us = positive_flag("--T-us", t_us)?.unwrap_or(ctx.cfg.scan.t_us);
    let eps = ctx.cfg.pulses.epsilon;
    let s = schedule_with(&ctx.geom, t_us * 1e-6, eps, ctx.cfg.policy())?;
    let pulses: Vec<Value> = s
        .pulses
        .iter()
        .map(|p| {
            let k = p.k_pi.components();
            json!({ "t_us": p.time * 1e6, "sign": p.sign, "epsilon": p.epsilon, "k_pi_per_m": [k.x, k.y, k.z] })
        })
        .collect();
    let result = json!({
        "T_us": t_us,
        "t1_us": s.t1 * 1e6,
        "t2_us": s.t2 * 1e6,
        "dt_us": s.delta_t() * 1e6,
        "ratio": rephasing_ratio(&ctx.geom)?,
        "theta_s_deg": ctx.geom.theta_s().to_degrees(),
        "theta_pi_deg": ctx.geom.theta_pi().to_degrees(),
        "min_theta_pi_deg": min_theta_pi(&ctx.geom)?.to_degrees(),
        "pulses": pulses,
    });
    let js = json_artifact("schedule.json", &ctx.prov, &result)?;
    let mut report = ctx.report(vec![], None);
    report.stdout = js.contents.clone();
    report.artifacts.push(js);
    Ok(report)
}

fn fit(args: &FitArgs) -> Result<Report, CliError> {
    let config_sha256 = match &args.config {
        Some(p) => {
            let (bytes, text) = read_text(p, "config")?;
            parse_config(&text)?;
            sha256_hex(&bytes)
        }
        None => "none".into(),
    };
    let (bytes, text) = read_text(&args.input, "input").map_err(|e| CliError::Input(e.to_string()))?;
    let cols = Columns {
        x: args.x_col.clone(),
        y: args.y_col.clone(),
        yerr: args.yerr_col.clone(),
    };
    let d = read_xy_columns(&text, Some(&cols)).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(c) = args.offset {
        if !c.is_finite() {
            return Err(CliError::Config("`--offset` must be finite".into()));
        }
    }
    let yerr = d.yerr.as_deref();
    let (f, extra) = match args.model {
        FitModelArg::DampedCosine => {
            let f = fit_damped_cosine(&d.x, &d.y, yerr)?;
            let fid = pi_pulse_fidelity(&f).ok();
            (f, json!({ "pi_pulse_fidelity": fid }))
        }
        FitModelArg::GaussianPeak => (fit_gaussian_peak_weighted(&d.x, &d.y, yerr)?, json!({})),
        FitModelArg::ExpDecay => (fit_lifetime_1e(&d.x, &d.y, DecayForm::Exponential, args.offset)?, json!({})),
        FitModelArg::GaussDecay => (fit_lifetime_1e(&d.x, &d.y, DecayForm::Gaussian, args.offset)?, json!({})),
    };
    let prov = Provenance {
        tool: TOOL_VERSION.into(),
        subcommand: "fit".into(),
        config_sha256,
        seed: 0,
        mode: "none".into(),
    };
    let result = json!({
        "input_sha256": sha256_hex(&bytes),
        "n_points": d.x.len(),
        "derived": extra,
        "fit": fit_json(&f),
    });
    let js = json_artifact("fit.json", &prov, &result)?;
    let warning = not_converged("fit", &f);
    let stdout = format!("{}\n", args.out.join("fit.json").display());
    Ok(Report {
        out_dir: args.out.clone(),
        artifacts: vec![js],
        stdout,
        warning,
    })
}
