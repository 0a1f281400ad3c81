//! First flexural mode of the cantilever.

use num_complex::Complex64;

use crate::trace::SignalTrace;
use crate::{Error, Result, BOLTZMANN, TWO_PI};

#[derive(Debug, Clone, PartialEq)]
pub struct CantileverParams {
    /// Length, width and thickness, m.
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    /// Unloaded resonance, Hz.
    pub f0: f64,
    /// Loaded resonance, Hz.
    pub fm: f64,
    pub q: f64,
    /// Effective stiffness, N/m.
    pub km: f64,
    /// Effective mass, kg.
    pub me: f64,
    /// Effective lever arm, m.
    pub le: f64,
    pub beta: f64,
    /// Bath temperature, K.
    pub temperature: f64,
    /// White detection floor added to the displacement PSD, m^2/Hz.
    pub noise_floor: f64,
}

impl Default for CantileverParams {
    fn default() -> Self {
        let length = 350e-6;
        let beta = 1.875;
        Self {
            length,
            width: 32.5e-6,
            thickness: 1e-6,
            f0: 14_480.0,
            fm: 2_860.0,
            q: 160.0,
            km: 0.03,
            me: 1e-11,
            le: length / beta,
            beta,
            temperature: 300.0,
            noise_floor: 1e-21,
        }
    }
}

impl CantileverParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
            ("f0", self.f0),
            ("fm", self.fm),
            ("q", self.q),
            ("km", self.km),
            ("me", self.me),
            ("le", self.le),
            ("beta", self.beta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.fm > self.f0 {
            return Err(Error::Config(format!(
                "loaded frequency {} Hz exceeds unloaded frequency {} Hz",
                self.fm, self.f0
            )));
        }
        if !(self.temperature >= 0.0) || !(self.noise_floor >= 0.0) {
            return Err(Error::Config("temperature and noise floor must be >= 0".into()));
        }
        let le = self.length / self.beta;
        if ((self.le - le) / le).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "le = {} m differs from length/beta = {le} m",
                self.le
            )));
        }
        Ok(())
    }

    /// Loaded angular frequency.
    pub fn omega_m(&self) -> f64 {
        TWO_PI * self.fm
    }

    /// Mass that reproduces `km` at the loaded resonance, `km / omega_m^2`.
    pub fn dynamic_mass(&self) -> f64 {
        self.km / self.omega_m().powi(2)
    }
}

/// Mass load that shifts `f0` down to `fm`: `((f0/fm)^2 - 1) me`.
pub fn added_mass(f0: f64, fm: f64, me: f64) -> Result<f64> {
    if !(fm > 0.0) || !(f0 > 0.0) {
        return Err(Error::Domain("frequencies must be positive".into()));
    }
    if fm > f0 {
        return Err(Error::Domain(format!(
            "loaded frequency {fm} Hz above unloaded {f0} Hz implies a negative mass"
        )));
    }
    Ok(((f0 / fm).powi(2) - 1.0) * me)
}

/// Inverse of [`added_mass`].
pub fn frequency_from_added_mass(f0: f64, m_add: f64, me: f64) -> Result<f64> {
    if !(m_add >= 0.0) || !(me > 0.0) {
        return Err(Error::Domain("masses must be positive".into()));
    }
    Ok(f0 / (1.0 + m_add / me).sqrt())
}

/// Thermally limited force and torque sensitivities, N/sqrt(Hz) and
/// N m/sqrt(Hz).
pub fn detection_limits(params: &CantileverParams) -> (f64, f64) {
    let f_min = (4.0 * BOLTZMANN * params.temperature / std::f64::consts::PI * params.km
        / (params.q * params.fm))
        .sqrt();
    (f_min, f_min * params.le)
}

fn susceptibility_with_mass(omega: f64, params: &CantileverParams, mass: f64) -> Complex64 {
    let wm = params.omega_m();
    Complex64::new(1.0, 0.0) / (mass * Complex64::new(wm * wm - omega * omega, omega * wm / params.q))
}

/// `chi(w) = 1 / (me ((wm^2 - w^2) + i w wm / Q))`, m/N.
pub fn mechanical_susceptibility(omega: f64, params: &CantileverParams) -> Complex64 {
    susceptibility_with_mass(omega, params, params.me)
}

/// One-sided thermal displacement PSD at `f` (Hz), m^2/Hz, without the
/// detection floor. Uses the dynamic mass so that it integrates to
/// `kB T / km`.
pub fn thermal_psd(params: &CantileverParams, f: f64) -> f64 {
    let m = params.dynamic_mass();
    let chi = susceptibility_with_mass(TWO_PI * f, params, m);
    4.0 * BOLTZMANN * params.temperature * (params.omega_m() / params.q) * m * chi.norm_sqr()
}

/// Displacement PSD on `grid` (Hz): channels `thermal`, `floor` and their sum `S_x`.
pub fn thermal_spectrum(params: &CantileverParams, grid: &[f64]) -> Result<SignalTrace> {
    params.validate()?;
    if grid.is_empty() {
        return Err(Error::Input("frequency grid is empty".into()));
    }
    if grid[0] < 0.0 {
        return Err(Error::Input("frequency grid must be non-negative".into()));
    }
    let thermal: Vec<f64> = grid.iter().map(|&f| thermal_psd(params, f)).collect();
    let floor = vec![params.noise_floor; grid.len()];
    let total = thermal.iter().map(|s| s + params.noise_floor).collect();
    let mut t = SignalTrace::new("frequency", "Hz", grid.to_vec())?
        .with_channel("S_x", "m^2/Hz", total)?
        .with_channel("thermal", "m^2/Hz", thermal)?
        .with_channel("floor", "m^2/Hz", floor)?;
    t.set_meta("thermal_rms_m", thermal_rms(params));
    t.set_meta("temperature_K", params.temperature);
    Ok(t)
}

/// Equipartition rms displacement `sqrt(kB T / km)`.
pub fn thermal_rms(params: &CantileverParams) -> f64 {
    (BOLTZMANN * params.temperature / params.km).sqrt()
}

pub fn torque_to_force(tau: f64, le: f64) -> Result<f64> {
    if !(le > 0.0) {
        return Err(Error::Input(format!("lever arm must be positive, got {le}")));
    }
    Ok(tau / le)
}

/// Displacement amplitude for a force applied at resonance, `F Q / km`.
pub fn force_to_displacement_at_resonance(force: f64, params: &CantileverParams) -> f64 {
    force * params.q / params.km
}

/// `tau = km le x_res / Q`.
pub fn torque_from_displacement(x_res: f64, params: &CantileverParams) -> Result<f64> {
    if !(x_res >= 0.0) {
        return Err(Error::Input(format!("displacement must be >= 0, got {x_res}")));
    }
    Ok(params.km * params.le * x_res / params.q)
}

/// Clamped-free first-mode deflection at `x`, normalized to 1 at the tip.
pub fn mode_shape(x: f64, params: &CantileverParams) -> Result<f64> {
    if !(0.0..=params.length).contains(&x) {
        return Err(Error::Domain(format!(
            "position {x} m is outside [0, {}] m",
            params.length
        )));
    }
    let b = params.beta;
    let sigma = (b.cosh() + b.cos()) / (b.sinh() + b.sin());
    let w = |u: f64| u.cosh() - u.cos() - sigma * (u.sinh() - u.sin());
    Ok(w(b * x / params.length) / w(b))
}
