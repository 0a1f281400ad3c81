//! Run configuration: a strict TOML schema in user units (Hz, mT, degrees).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nvtorque::mech::CantileverParams;
use nvtorque::nvcore::{NvParams, StaticField, Transition};
use nvtorque::signal::{DriveConfig, RabiDrive, SpuriousBackground};
use nvtorque::spindyn::RateSet;
use nvtorque::{Vector3, TWO_PI};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub nv: NvSection,
    pub field: FieldSection,
    pub rates: RatesSection,
    pub cantilever: CantileverSection,
    pub drive: DriveSection,
    pub odmr: OdmrSection,
    pub background: BackgroundSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub fit: FitSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            nv: NvSection::default(),
            field: FieldSection::default(),
            rates: RatesSection::default(),
            cantilever: CantileverSection::default(),
            drive: DriveSection::default(),
            odmr: OdmrSection::default(),
            background: BackgroundSection::default(),
            sweep: None,
            fit: FitSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvSection {
    pub zero_field_splitting_hz: f64,
    pub gyromagnetic_ratio_hz_per_t: f64,
    pub spins_per_class: f64,
    pub class_axes: [[f64; 3]; 4],
    /// Any non-zero vector; normalized on use.
    pub reference_direction: [f64; 3],
}

impl Default for NvSection {
    fn default() -> Self {
        let p = NvParams::default();
        Self {
            zero_field_splitting_hz: p.zero_field_splitting / TWO_PI,
            gyromagnetic_ratio_hz_per_t: p.gyromagnetic_ratio / TWO_PI,
            spins_per_class: p.spins_per_class,
            class_axes: p.class_axes.map(|a| [a.x, a.y, a.z]),
            reference_direction: [-1.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub amplitude_mt: f64,
    pub theta_deg: f64,
    pub class_index: usize,
    /// Lab-frame vector; replaces amplitude and angle when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lab_mt: Option<[f64; 3]>,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            amplitude_mt: 18.0,
            theta_deg: 60.0,
            class_index: 0,
            lab_mt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub gamma1_hz: f64,
    pub gamma2_star_hz: f64,
    pub gamma_las_hz: f64,
    /// Working-point detuning; defaults to the blue-side point `G2*`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning_hz: Option<f64>,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            gamma1_hz: 1e3,
            gamma2_star_hz: 5e6,
            gamma_las_hz: 1e3,
            detuning_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CantileverSection {
    pub length_um: f64,
    pub width_um: f64,
    pub thickness_um: f64,
    pub f0_hz: f64,
    pub fm_hz: f64,
    pub quality_factor: f64,
    pub km_n_per_m: f64,
    pub me_kg: f64,
    pub beta: f64,
    /// Defaults to `length / beta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub le_um: Option<f64>,
    pub temperature_k: f64,
    pub noise_floor_m2_per_hz: f64,
}

impl Default for CantileverSection {
    fn default() -> Self {
        let p = CantileverParams::default();
        Self {
            length_um: p.length * 1e6,
            width_um: p.width * 1e6,
            thickness_um: p.thickness * 1e6,
            f0_hz: p.f0,
            fm_hz: p.fm,
            quality_factor: p.q,
            km_n_per_m: p.km,
            me_kg: p.me,
            beta: p.beta,
            le_um: None,
            temperature_k: p.temperature,
            noise_floor_m2_per_hz: p.noise_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    pub mw_center_hz: f64,
    pub fm_depth_hz: f64,
    /// Defaults to the loaded cantilever frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mod_freq_hz: Option<f64>,
    /// Rabi frequency `Omega / 2 pi`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rabi_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_dbm: Option<f64>,
    /// `Omega = kappa 10^(P/20)`, rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_rad_per_s: Option<f64>,
    pub transition: String,
    pub class_index: usize,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            mw_center_hz: 2.87e9,
            fm_depth_hz: 8e6,
            mod_freq_hz: None,
            rabi_hz: None,
            power_dbm: None,
            kappa_rad_per_s: None,
            transition: "minus".into(),
            class_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdmrSection {
    pub contrast: f64,
    pub linewidth_hz: f64,
}

impl Default for OdmrSection {
    fn default() -> Self {
        Self {
            contrast: 0.015,
            linewidth_hz: 10e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSection {
    pub enabled: bool,
    pub x_amplitude_m: f64,
    pub y_amplitude_m: f64,
}

impl Default for BackgroundSection {
    fn default() -> Self {
        Self {
            enabled: false,
            x_amplitude_m: 1e-11,
            y_amplitude_m: 5e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub abscissa: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_minus_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_plus_hz: Option<f64>,
    pub tolerance_hz: f64,
    /// Torque curve for spin-count fits, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    pub channel: String,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            f_minus_hz: None,
            f_plus_hz: None,
            tolerance_hz: 1e3,
            data: None,
            channel: "dtau_minus".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub format: Format,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            format: Format::Csv,
        }
    }
}

/// Parses, applies defaults and checks every invariant.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.resolve();
    cfg.validate(text)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Canonical TOML form of a resolved config.
pub fn serialize_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config is always representable as TOML")
}

/// Hex sha256 of the canonical form.
pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(serialize_config(cfg).as_bytes()))
}

/// 1-based line of `key` inside `[section]` (or at top level for "").
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn require(&self, ok: bool, section: &str, key: &str, msg: &str) -> Result<(), CliError> {
        if ok {
            return Ok(());
        }
        let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        let at = match key_line(self.text, section, key) {
            Some(l) => format!(" (line {l})"),
            None => String::new(),
        };
        Err(CliError::Config(format!("invalid value for `{name}`{at}: {msg}")))
    }
}

impl RunConfig {
    fn resolve(&mut self) {
        let c = &mut self.cantilever;
        if c.le_um.is_none() && c.beta != 0.0 {
            c.le_um = Some(c.length_um / c.beta);
        }
        if self.drive.mod_freq_hz.is_none() {
            self.drive.mod_freq_hz = Some(self.cantilever.fm_hz);
        }
        if self.drive.rabi_hz.is_none() && self.drive.power_dbm.is_none() {
            self.drive.rabi_hz = Some(1e6);
        }
        if self.rates.detuning_hz.is_none() {
            self.rates.detuning_hz = Some(self.rates.gamma2_star_hz);
        }
    }

    fn validate(&self, text: &str) -> Result<(), CliError> {
        let ck = Checker { text };
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();

        let nv = &self.nv;
        ck.require(pos(nv.zero_field_splitting_hz), "nv", "zero_field_splitting_hz", "must be > 0")?;
        ck.require(
            nv.gyromagnetic_ratio_hz_per_t < 0.0 && nv.gyromagnetic_ratio_hz_per_t.is_finite(),
            "nv",
            "gyromagnetic_ratio_hz_per_t",
            "must be negative",
        )?;
        ck.require(nv.spins_per_class >= 1.0 && nv.spins_per_class.is_finite(), "nv", "spins_per_class", "must be >= 1")?;
        for a in &nv.class_axes {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            ck.require((n - 1.0).abs() <= 1e-12, "nv", "class_axes", "every axis must be a unit vector")?;
        }
        let r = nv.reference_direction;
        ck.require(
            r.iter().all(|v| v.is_finite()) && r.iter().any(|&v| v != 0.0),
            "nv",
            "reference_direction",
            "must be a finite non-zero vector",
        )?;

        let f = &self.field;
        ck.require(nonneg(f.amplitude_mt), "field", "amplitude_mt", "must be >= 0")?;
        ck.require((0.0..=180.0).contains(&f.theta_deg), "field", "theta_deg", "must be in [0, 180]")?;
        ck.require(f.class_index < 4, "field", "class_index", "must be in 0..4")?;
        if let Some(b) = f.lab_mt {
            ck.require(b.iter().all(|v| v.is_finite()), "field", "lab_mt", "must be finite")?;
        }

        let rt = &self.rates;
        ck.require(nonneg(rt.gamma1_hz), "rates", "gamma1_hz", "must be >= 0")?;
        ck.require(pos(rt.gamma2_star_hz), "rates", "gamma2_star_hz", "must be > 0")?;
        ck.require(nonneg(rt.gamma_las_hz), "rates", "gamma_las_hz", "must be >= 0")?;
        ck.require(rt.detuning_hz.is_some_and(f64::is_finite), "rates", "detuning_hz", "must be finite")?;

        let c = &self.cantilever;
        for (key, v) in [
            ("length_um", c.length_um),
            ("width_um", c.width_um),
            ("thickness_um", c.thickness_um),
            ("f0_hz", c.f0_hz),
            ("fm_hz", c.fm_hz),
            ("quality_factor", c.quality_factor),
            ("km_n_per_m", c.km_n_per_m),
            ("me_kg", c.me_kg),
            ("beta", c.beta),
        ] {
            ck.require(pos(v), "cantilever", key, "must be > 0")?;
        }
        ck.require(c.fm_hz <= c.f0_hz, "cantilever", "fm_hz", "loaded frequency must not exceed f0_hz")?;
        let le = c.le_um.unwrap_or(f64::NAN);
        ck.require(
            ((le - c.length_um / c.beta) / (c.length_um / c.beta)).abs() <= 1e-6,
            "cantilever",
            "le_um",
            "must equal length_um / beta",
        )?;
        ck.require(nonneg(c.temperature_k), "cantilever", "temperature_k", "must be >= 0")?;
        ck.require(nonneg(c.noise_floor_m2_per_hz), "cantilever", "noise_floor_m2_per_hz", "must be >= 0")?;

        let d = &self.drive;
        ck.require(pos(d.mw_center_hz), "drive", "mw_center_hz", "must be > 0")?;
        ck.require(nonneg(d.fm_depth_hz), "drive", "fm_depth_hz", "must be >= 0")?;
        ck.require(d.mod_freq_hz.is_some_and(pos), "drive", "mod_freq_hz", "must be > 0")?;
        ck.require(
            !(d.rabi_hz.is_some() && d.power_dbm.is_some()),
            "drive",
            "power_dbm",
            "set either rabi_hz or power_dbm, not both",
        )?;
        if let Some(w) = d.rabi_hz {
            ck.require(nonneg(w), "drive", "rabi_hz", "must be >= 0")?;
        }
        if let Some(p) = d.power_dbm {
            ck.require(p.is_finite(), "drive", "power_dbm", "must be finite")?;
            ck.require(d.kappa_rad_per_s.is_some_and(pos), "drive", "kappa_rad_per_s", "must be > 0 when power_dbm is set")?;
        }
        ck.require(d.transition.parse::<Transition>().is_ok(), "drive", "transition", "must be \"minus\" or \"plus\"")?;
        ck.require(d.class_index < 4, "drive", "class_index", "must be in 0..4")?;

        ck.require(self.odmr.contrast > 0.0 && self.odmr.contrast < 1.0, "odmr", "contrast", "must be in (0, 1)")?;
        ck.require(pos(self.odmr.linewidth_hz), "odmr", "linewidth_hz", "must be > 0")?;

        ck.require(nonneg(self.background.x_amplitude_m), "background", "x_amplitude_m", "must be >= 0")?;
        ck.require(nonneg(self.background.y_amplitude_m), "background", "y_amplitude_m", "must be >= 0")?;

        if let Some(s) = &self.sweep {
            ck.require(s.points >= 2, "sweep", "points", "must be >= 2")?;
            ck.require(s.start.is_finite() && s.stop.is_finite(), "sweep", "start", "must be finite")?;
            ck.require(s.start < s.stop, "sweep", "stop", "must be greater than start")?;
        }

        let fit = &self.fit;
        ck.require(pos(fit.tolerance_hz), "fit", "tolerance_hz", "must be > 0")?;
        if let (Some(m), Some(p)) = (fit.f_minus_hz, fit.f_plus_hz) {
            ck.require(pos(m), "fit", "f_minus_hz", "must be > 0")?;
            ck.require(m <= p, "fit", "f_plus_hz", "must not be below f_minus_hz")?;
        }

        self.nv_params()
            .validate()
            .map_err(|e| CliError::Config(format!("[nv]: {e}")))?;
        Ok(())
    }

    pub fn nv_params(&self) -> NvParams {
        let r = self.nv.reference_direction;
        NvParams {
            zero_field_splitting: TWO_PI * self.nv.zero_field_splitting_hz,
            gyromagnetic_ratio: TWO_PI * self.nv.gyromagnetic_ratio_hz_per_t,
            gamma1: TWO_PI * self.rates.gamma1_hz,
            gamma2_star: TWO_PI * self.rates.gamma2_star_hz,
            gamma_las: TWO_PI * self.rates.gamma_las_hz,
            spins_per_class: self.nv.spins_per_class,
            class_axes: self.nv.class_axes.map(|a| Vector3::new(a[0], a[1], a[2])),
            reference_direction: Vector3::new(r[0], r[1], r[2]).normalize(),
        }
    }

    pub fn static_field(&self) -> StaticField {
        match self.field.lab_mt {
            Some(b) => StaticField::Lab(Vector3::new(b[0], b[1], b[2]) / 1e3),
            None => StaticField::angular(
                self.field.amplitude_mt / 1e3,
                self.field.theta_deg.to_radians(),
                self.field.class_index,
            ),
        }
    }

    pub fn rates(&self) -> RateSet {
        RateSet {
            gamma1: TWO_PI * self.rates.gamma1_hz,
            gamma2_star: TWO_PI * self.rates.gamma2_star_hz,
            gamma_las: TWO_PI * self.rates.gamma_las_hz,
            omega: self.drive().omega(),
            delta: TWO_PI * self.rates.detuning_hz.unwrap_or(self.rates.gamma2_star_hz),
        }
    }

    pub fn cantilever(&self) -> CantileverParams {
        let c = &self.cantilever;
        CantileverParams {
            length: c.length_um / 1e6,
            width: c.width_um / 1e6,
            thickness: c.thickness_um / 1e6,
            f0: c.f0_hz,
            fm: c.fm_hz,
            q: c.quality_factor,
            km: c.km_n_per_m,
            me: c.me_kg,
            le: c.le_um.unwrap_or(c.length_um / c.beta) / 1e6,
            beta: c.beta,
            temperature: c.temperature_k,
            noise_floor: c.noise_floor_m2_per_hz,
        }
    }

    pub fn transition(&self) -> Transition {
        self.drive.transition.parse().unwrap_or(Transition::Minus)
    }

    pub fn drive(&self) -> DriveConfig {
        let d = &self.drive;
        let rabi = match (d.power_dbm, d.kappa_rad_per_s) {
            (Some(dbm), Some(kappa)) => RabiDrive::PowerDbm { dbm, kappa },
            _ => RabiDrive::Omega(TWO_PI * d.rabi_hz.unwrap_or(1e6)),
        };
        DriveConfig {
            mw_center: d.mw_center_hz,
            fm_depth: d.fm_depth_hz,
            mod_freq: d.mod_freq_hz.unwrap_or(self.cantilever.fm_hz),
            rabi,
            transition: self.transition(),
            class_index: d.class_index,
        }
    }

    pub fn background(&self) -> Option<SpuriousBackground> {
        self.background.enabled.then(|| SpuriousBackground {
            x_amplitude: self.background.x_amplitude_m,
            y_amplitude: self.background.y_amplitude_m,
            seed: self.seed,
        })
    }
}
