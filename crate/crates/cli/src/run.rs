//! Subcommand dispatch and file output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nvtorque::inverse::{fit_field_from_dips, fit_polarized_spins, SpinModel};
use nvtorque::mech::{self, detection_limits, thermal_rms, thermal_spectrum};
use nvtorque::nvcore::{self, odmr_spectrum};
use nvtorque::signal::{
    self, displacement_response, fmmdmr_sweep, power_scan, quadratures_at_resonance, time_domain_quadratures,
    torque_map, DriveConfig, TimeDomainOptions, TorqueSweep,
};
use nvtorque::spindyn::{integrate_bloch, max_bloch_step, steady_state, DetuningWaveform, TwoLevelState};
use nvtorque::trace::linspace;
use nvtorque::{SignalTrace, TWO_PI};

use crate::config::{config_hash, serialize_config, Format, RunConfig};
use crate::output::{read_trace_csv, Output, Record};
use crate::CliError;

/// Relative mismatch above which `oracle-check` fails.
pub const ORACLE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Odmr,
    TorqueMap,
    Fmmdmr,
    Quadratures,
    PowerScan,
    Psd,
    FitField,
    FitSpins,
    Sensitivity,
    OracleCheck,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Odmr => "odmr",
            Subcommand::TorqueMap => "torque-map",
            Subcommand::Fmmdmr => "fmmdmr",
            Subcommand::Quadratures => "quadratures",
            Subcommand::PowerScan => "power-scan",
            Subcommand::Psd => "psd",
            Subcommand::FitField => "fit-field",
            Subcommand::FitSpins => "fit-spins",
            Subcommand::Sensitivity => "sensitivity",
            Subcommand::OracleCheck => "oracle-check",
        }
    }
}

/// Files written by one run and a human-readable summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output: Output,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    subcommand: &'a str,
    config_sha256: &'a str,
    seed: u64,
    format: Format,
    files: Vec<String>,
    config: &'a str,
}

/// Runs `sub`, writes its output file and metadata sidecar into `out_dir`.
///
/// Relative data paths in the config resolve against `base_dir`. An
/// `oracle-check` mismatch or a non-converged field fit still writes the
/// files and then reports a numerical failure.
pub fn run(sub: Subcommand, cfg: &RunConfig, out_dir: &Path, base_dir: &Path) -> Result<RunReport, CliError> {
    let (mut output, verdict) = compute(sub, cfg, base_dir)?;
    let hash = config_hash(cfg);
    let canonical = serialize_config(cfg);
    let meta = output.metadata_mut();
    meta.insert("config_sha256".into(), hash.clone());
    meta.insert("subcommand".into(), sub.name().into());
    meta.insert("seed".into(), cfg.seed.to_string());
    echo_config(&canonical, meta);

    let format = cfg.output.format;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let data_name = format!("{}.{}", sub.name(), format.extension());
    let meta_name = format!("{data_name}.meta.json");
    let sidecar = Sidecar {
        subcommand: sub.name(),
        config_sha256: &hash,
        seed: cfg.seed,
        format,
        files: vec![data_name.clone()],
        config: &canonical,
    };
    let mut sidecar_text = serde_json::to_string_pretty(&sidecar).expect("sidecar is serializable");
    sidecar_text.push('\n');

    let data_path = out_dir.join(&data_name);
    let meta_path = out_dir.join(&meta_name);
    for (path, text) in [(&data_path, output.render(format)), (&meta_path, sidecar_text)] {
        fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    }

    let mut summary = summarize(&output);
    summary.push_str(&format!("wrote {}\nwrote {}\n", data_path.display(), meta_path.display()));
    if let Some(msg) = verdict {
        return Err(CliError::Numerical(format!("{msg}\n{summary}")));
    }
    Ok(RunReport {
        output,
        files: vec![data_path, meta_path],
        summary,
    })
}

fn summarize(output: &Output) -> String {
    match output {
        Output::Record(r) => r.fields.iter().map(|f| format!("{} = {:e} {}\n", f.name, f.value, f.unit)).collect(),
        Output::Trace(t) => format!(
            "{} points of {} ({})\n",
            t.len(),
            t.abscissa.name,
            t.channels.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Flattens the canonical TOML into `config.<section>.<key>` entries.
fn echo_config(canonical: &str, meta: &mut BTreeMap<String, String>) {
    fn walk(prefix: &str, value: &toml::Value, meta: &mut BTreeMap<String, String>) {
        match value {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    walk(&format!("{prefix}.{k}"), v, meta);
                }
            }
            other => {
                meta.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let table: toml::Value = toml::from_str(canonical).expect("canonical config reparses");
    walk("config", &table, meta);
}

/// Output plus an optional failure verdict for checks that must still be
/// written out.
pub fn compute(sub: Subcommand, cfg: &RunConfig, base_dir: &Path) -> Result<(Output, Option<String>), CliError> {
    let out = match sub {
        Subcommand::Odmr => Output::Trace(odmr(cfg)?),
        Subcommand::TorqueMap => Output::Trace(torque(cfg)?),
        Subcommand::Fmmdmr => Output::Trace(fmmdmr(cfg)?),
        Subcommand::Quadratures => Output::Record(quadratures(cfg)?),
        Subcommand::PowerScan => Output::Trace(power(cfg)?),
        Subcommand::Psd => Output::Trace(psd(cfg)?),
        Subcommand::FitField => {
            let r = fit_field(cfg)?;
            let verdict = (r.get("converged") != Some(1.0)).then(|| {
                format!(
                    "field fit did not reach the tolerance: residual {:e} Hz > {:e} Hz",
                    r.get("residual").unwrap_or(f64::NAN),
                    cfg.fit.tolerance_hz
                )
            });
            return Ok((Output::Record(r), verdict));
        }
        Subcommand::FitSpins => Output::Record(fit_spins(cfg, base_dir)?),
        Subcommand::Sensitivity => Output::Record(sensitivity(cfg)?),
        Subcommand::OracleCheck => {
            let r = oracle_check(cfg)?;
            let verdict = (r.get("passed") != Some(1.0)).then(|| {
                format!(
                    "oracle mismatch {:.3}% exceeds {}%",
                    100.0 * r.get("max_rel_error").unwrap_or(f64::NAN),
                    100.0 * ORACLE_TOLERANCE
                )
            });
            return Ok((Output::Record(r), verdict));
        }
    };
    Ok((out, None))
}

/// Sweep grid in user units; `allowed` lists `(abscissa, unit)` pairs and
/// the first one is the default with the given range.
fn sweep_grid(
    cfg: &RunConfig,
    sub: Subcommand,
    allowed: &[(&'static str, &'static str)],
    default: (f64, f64, usize),
) -> Result<(&'static str, &'static str, Vec<f64>), CliError> {
    match &cfg.sweep {
        None => Ok((allowed[0].0, allowed[0].1, linspace(default.0, default.1, default.2))),
        Some(s) => {
            let (name, unit) = allowed.iter().find(|(n, _)| *n == s.abscissa).ok_or_else(|| {
                let names: Vec<_> = allowed.iter().map(|(n, u)| format!("{n} [{u}]")).collect();
                CliError::Config(format!(
                    "invalid value for `sweep.abscissa`: `{}` is not a sweep of {}; expected one of {}",
                    s.abscissa,
                    sub.name(),
                    names.join(", ")
                ))
            })?;
            Ok((name, unit, linspace(s.start, s.stop, s.points)))
        }
    }
}

fn relabel(trace: &mut SignalTrace, name: &str, unit: &str, grid: Vec<f64>) {
    trace.abscissa.name = name.into();
    trace.abscissa.unit = unit.into();
    trace.abscissa.values = grid;
}

fn odmr(cfg: &RunConfig) -> Result<SignalTrace, CliError> {
    let (name, unit, grid) = sweep_grid(cfg, Subcommand::Odmr, &[("mw_frequency", "Hz")], (2.5e9, 3.25e9, 1501))?;
    let mut t = odmr_spectrum(&cfg.nv_params(), &cfg.static_field(), &grid, cfg.odmr.contrast, cfg.odmr.linewidth_hz)?;
    relabel(&mut t, name, unit, grid);
    Ok(t)
}

fn torque(cfg: &RunConfig) -> Result<SignalTrace, CliError> {
    let (name, unit, grid) = sweep_grid(
        cfg,
        Subcommand::TorqueMap,
        &[("theta", "deg"), ("field", "mT")],
        (0.0, 90.0, 91),
    )?;
    let (sweep, internal): (TorqueSweep, Vec<f64>) = if name == "theta" {
        let amplitude = cfg.field.amplitude_mt / 1e3;
        (TorqueSweep::Angle { amplitude }, grid.iter().map(|d| d.to_radians()).collect())
    } else {
        let theta = cfg.field.theta_deg.to_radians();
        (TorqueSweep::Field { theta }, grid.iter().map(|b| b / 1e3).collect())
    };
    let mut t = torque_map(&cfg.nv_params(), cfg.field.class_index, sweep, &internal)?;
    relabel(&mut t, name, unit, grid);
    Ok(t)
}

fn fmmdmr(cfg: &RunConfig) -> Result<SignalTrace, CliError> {
    let (name, unit, grid) = sweep_grid(cfg, Subcommand::Fmmdmr, &[("mw_frequency", "Hz")], (2.5e9, 3.25e9, 1501))?;
    let bg = cfg.background();
    let mut t = fmmdmr_sweep(
        &cfg.nv_params(),
        &cfg.static_field(),
        &cfg.rates(),
        &cfg.drive(),
        &cfg.cantilever(),
        &grid,
        bg.as_ref(),
    )?;
    relabel(&mut t, name, unit, grid);
    Ok(t)
}

/// Force on the cantilever when the driven class fully transfers its
/// population on the driven transition.
fn drive_force(cfg: &RunConfig, drive: &DriveConfig) -> Result<f64, CliError> {
    let nv = cfg.nv_params();
    let sol = nvcore::solve_class(&nv, &cfg.static_field(), drive.class_index)?;
    let axis = nv.projection_axis(drive.class_index)?;
    Ok(signal::transition_force(&sol, drive.transition, nv.spins_per_class, &axis, cfg.cantilever().le))
}

fn quadratures(cfg: &RunConfig) -> Result<Record, CliError> {
    let drive = cfg.drive();
    let cant = cfg.cantilever();
    let rates = cfg.rates();
    let f_y = drive_force(cfg, &drive)?;
    let q = quadratures_at_resonance(&rates, &drive, f_y, &cant)?;
    let dx = displacement_response(TWO_PI * drive.mod_freq, &rates, &drive, f_y, &cant)?;
    let mut r = Record::new();
    r.push("F_y", "N", f_y);
    r.push("X", "m", q.x);
    r.push("Y", "m", q.y);
    r.push("magnitude", "m", q.magnitude());
    r.push("phase", "deg", q.y.atan2(q.x).to_degrees());
    r.push("Y_over_X", "1", if q.x != 0.0 { q.y / q.x } else { f64::NAN });
    r.push("gamma_tot", "Hz", rates.gamma_tot() / TWO_PI);
    r.push("X_at_detuning", "m", dx.re);
    r.push("Y_at_detuning", "m", dx.im);
    r.metadata.insert("transition".into(), drive.transition.name().into());
    r.metadata.insert("class_index".into(), drive.class_index.to_string());
    Ok(r)
}

fn power(cfg: &RunConfig) -> Result<SignalTrace, CliError> {
    let (name, unit, grid) = sweep_grid(cfg, Subcommand::PowerScan, &[("rabi_frequency", "Hz")], (0.0, 10e6, 50))?;
    let drive = cfg.drive();
    let f_y = drive_force(cfg, &drive)?;
    let omegas: Vec<f64> = grid.iter().map(|f| TWO_PI * f).collect();
    let mut t = power_scan(&cfg.rates(), &drive, &omegas, f_y, &cfg.cantilever())?;
    relabel(&mut t, name, unit, grid);
    t.set_meta("F_y_N", f_y);
    Ok(t)
}

fn psd(cfg: &RunConfig) -> Result<SignalTrace, CliError> {
    let (name, unit, grid) = sweep_grid(cfg, Subcommand::Psd, &[("frequency", "Hz")], (1000.0, 5000.0, 4001))?;
    let cant = cfg.cantilever();
    let mut t = thermal_spectrum(&cant, &grid)?;
    relabel(&mut t, name, unit, grid);
    t.set_meta("thermal_rms_m", thermal_rms(&cant));
    Ok(t)
}

fn fit_field(cfg: &RunConfig) -> Result<Record, CliError> {
    let nv = cfg.nv_params();
    let class = cfg.field.class_index;
    let mut r = Record::new();
    let (f_minus, f_plus) = match (cfg.fit.f_minus_hz, cfg.fit.f_plus_hz) {
        (Some(m), Some(p)) => {
            r.metadata.insert("dips_source".into(), "fit".into());
            (m, p)
        }
        (None, None) => {
            let sol = nvcore::solve_class(&nv, &cfg.static_field(), class)?;
            let tp = nvcore::transition_frequencies(&sol);
            r.metadata.insert("dips_source".into(), "field".into());
            (tp.f_minus, tp.f_plus)
        }
        _ => {
            return Err(CliError::Config(
                "invalid value for `fit.f_plus_hz`: set both fit.f_minus_hz and fit.f_plus_hz or neither".into(),
            ))
        }
    };
    let fit = fit_field_from_dips(f_minus, f_plus, &nv, class, cfg.fit.tolerance_hz)?;
    r.push("f_minus", "Hz", f_minus);
    r.push("f_plus", "Hz", f_plus);
    r.push("B0", "mT", fit.b0 * 1e3);
    r.push("theta", "deg", fit.theta.to_degrees());
    r.push("residual", "Hz", fit.residual);
    r.push("iterations", "1", fit.iterations as f64);
    r.push("converged", "1", if fit.converged { 1.0 } else { 0.0 });
    r.metadata.insert("class_index".into(), class.to_string());
    Ok(r)
}

fn load_trace(path: &Path) -> Result<SignalTrace, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("invalid value for `fit.data`: cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let t: SignalTrace = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid value for `fit.data`: {e}")))?;
        t.validate()?;
        Ok(t)
    } else {
        read_trace_csv(&text)
    }
}

fn fit_spins(cfg: &RunConfig, base_dir: &Path) -> Result<Record, CliError> {
    let rel = cfg
        .fit
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `fit.data`: fit-spins needs a torque curve".into()))?;
    let mut data = load_trace(&base_dir.join(rel))?;
    let sweep = match (data.abscissa.name.as_str(), data.abscissa.unit.as_str()) {
        ("theta", unit @ ("deg" | "rad")) => {
            if unit == "deg" {
                data.abscissa.values.iter_mut().for_each(|v| *v = v.to_radians());
            }
            TorqueSweep::Angle { amplitude: cfg.field.amplitude_mt / 1e3 }
        }
        ("field", unit @ ("mT" | "T")) => {
            if unit == "mT" {
                data.abscissa.values.iter_mut().for_each(|v| *v /= 1e3);
            }
            TorqueSweep::Field { theta: cfg.field.theta_deg.to_radians() }
        }
        (name, unit) => {
            return Err(CliError::Config(format!(
                "invalid value for `fit.data`: abscissa `{name}[{unit}]` must be theta[deg] or field[mT]"
            )))
        }
    };
    let model = SpinModel::new(cfg.nv_params(), cfg.field.class_index, cfg.transition(), sweep)?;
    let fit = fit_polarized_spins(&data, &cfg.fit.channel, &model)?;
    let mut r = Record::new();
    r.push("n_fit", "1", fit.n_fit);
    r.push("standard_error", "1", fit.standard_error);
    r.push("residual", "N m", fit.residual);
    r.push("points", "1", data.len() as f64);
    r.metadata.insert("channel".into(), cfg.fit.channel.clone());
    r.metadata.insert("transition".into(), cfg.transition().name().into());
    Ok(r)
}

fn sensitivity(cfg: &RunConfig) -> Result<Record, CliError> {
    let cant = cfg.cantilever();
    cant.validate()?;
    let (f_min, tau_min) = detection_limits(&cant);
    let mut r = Record::new();
    r.push("F_min", "N/sqrt(Hz)", f_min);
    r.push("tau_min", "N m/sqrt(Hz)", tau_min);
    r.push("thermal_rms", "m", thermal_rms(&cant));
    r.push("added_mass", "kg", mech::added_mass(cant.f0, cant.fm, cant.me)?);
    r.push("le", "m", cant.le);
    Ok(r)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn oracle_check(cfg: &RunConfig) -> Result<Record, CliError> {
    let mut rates = cfg.rates();
    rates.delta = rates.gamma2_star;
    let cant = cfg.cantilever();
    let mut r = Record::new();

    let analytic = steady_state(&rates)?;
    let waveform = DetuningWaveform::Constant(rates.delta);
    let settle = 40.0 / rates.gamma_tot_at(rates.delta);
    let traj = integrate_bloch(
        &rates,
        &waveform,
        TwoLevelState::ground(),
        (0.0, settle),
        max_bloch_step(&rates, &waveform),
        usize::MAX,
    )?;
    let e_rho = rel(traj.last().rho_ee, analytic.rho_ee);
    r.push("rho_ee_analytic", "1", analytic.rho_ee);
    r.push("rho_ee_integrated", "1", traj.last().rho_ee);
    r.push("rho_ee_rel_error", "1", e_rho);

    let base = cfg.drive();
    let drive = DriveConfig {
        fm_depth: rates.gamma2_star / (TWO_PI * 100.0),
        ..base
    };
    let f_y = drive_force(cfg, &drive)?;
    let lin = quadratures_at_resonance(&rates, &drive, f_y, &cant)?;
    if lin.x == 0.0 || lin.y == 0.0 {
        return Err(CliError::Numerical(
            "analytic quadratures vanish at this field; the comparison is undefined".into(),
        ));
    }
    let td = time_domain_quadratures(&rates, &drive, f_y, &cant, &TimeDomainOptions::default())?;
    let (e_x, e_y) = (rel(td.x, lin.x), rel(td.y, lin.y));
    r.push("X_analytic", "m", lin.x);
    r.push("X_time_domain", "m", td.x);
    r.push("X_rel_error", "1", e_x);
    r.push("Y_analytic", "m", lin.y);
    r.push("Y_time_domain", "m", td.y);
    r.push("Y_rel_error", "1", e_y);

    let worst = e_rho.max(e_x).max(e_y);
    r.push("max_rel_error", "1", worst);
    r.push("tolerance", "1", ORACLE_TOLERANCE);
    r.push("passed", "1", if worst <= ORACLE_TOLERANCE { 1.0 } else { 0.0 });
    Ok(r)
}
