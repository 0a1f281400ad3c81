//! Mechanical readout of the spin torque: FM-MDMR sweeps, quadratures at
//! the mechanical resonance, power scans, a software lock-in and a
//! time-domain reference pipeline.
//!
//! The microwave frequency is modulated as `delta_omega(t) = 2 pi fm_depth
//! cos(w t)`; the in-phase quadrature `X` is referenced to this waveform and
//! a displacement `x(t) = X cos(w t) - Y sin(w t)` has `X + iY = dx[w]`.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mech::{mechanical_susceptibility, CantileverParams};
use crate::nvcore::{self, Eigenstate, EigenSolution, NvParams, StaticField, Transition};
use crate::ode::rk4_step;
use crate::spindyn::{self, bloch_rhs, fm_population_response, RateSet};
use crate::trace::SignalTrace;
use crate::{Error, Result, TWO_PI};

/// Microwave drive strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RabiDrive {
    /// Rabi frequency, rad/s.
    Omega(f64),
    /// Source power with the calibration `Omega = kappa 10^(P/20)`.
    PowerDbm { dbm: f64, kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    /// Microwave carrier, Hz.
    pub mw_center: f64,
    /// Peak frequency deviation, Hz.
    pub fm_depth: f64,
    /// Modulation frequency, Hz.
    pub mod_freq: f64,
    pub rabi: RabiDrive,
    pub transition: Transition,
    pub class_index: usize,
}

impl DriveConfig {
    pub fn new(cantilever: &CantileverParams) -> Self {
        Self {
            mw_center: 2.87e9,
            fm_depth: 8e6,
            mod_freq: cantilever.fm,
            rabi: RabiDrive::Omega(TWO_PI * 1e6),
            transition: Transition::Minus,
            class_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fm_depth >= 0.0) || !self.fm_depth.is_finite() {
            return Err(Error::Input(format!("fm_depth must be >= 0, got {}", self.fm_depth)));
        }
        if !(self.mod_freq > 0.0) || !self.mod_freq.is_finite() {
            return Err(Error::Input(format!("mod_freq must be > 0, got {}", self.mod_freq)));
        }
        match self.rabi {
            RabiDrive::Omega(w) if !(w >= 0.0) || !w.is_finite() => {
                Err(Error::Input(format!("Rabi frequency must be >= 0, got {w}")))
            }
            RabiDrive::PowerDbm { kappa, .. } if !(kappa > 0.0) => {
                Err(Error::Input(format!("kappa must be > 0, got {kappa}")))
            }
            _ => Ok(()),
        }
    }

    /// Rabi frequency, rad/s.
    pub fn omega(&self) -> f64 {
        match self.rabi {
            RabiDrive::Omega(w) => w,
            RabiDrive::PowerDbm { dbm, kappa } => kappa * 10f64.powf(dbm / 20.0),
        }
    }

    /// Modulation depth as an angular frequency.
    pub fn delta_omega(&self) -> f64 {
        TWO_PI * self.fm_depth
    }
}

/// In-phase and quadrature displacement amplitudes, m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePair {
    pub x: f64,
    pub y: f64,
}

impl QuadraturePair {
    pub fn magnitude(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

/// Transverse force `N (tau_e - tau_g).axis / le` at full population
/// transfer from `|0'>` to the excited state of `transition`.
pub fn transition_force(
    sol: &EigenSolution,
    transition: Transition,
    spins: f64,
    axis: &Vector3<f64>,
    le: f64,
) -> f64 {
    let dtau = sol.torque(transition.excited()) - sol.torque(Eigenstate::Zero);
    spins * dtau.dot(&axis.normalize()) / le
}

/// Complex displacement `dx[omega]` for a modulation of depth
/// `drive.fm_depth` around the detuning in `rates`.
pub fn displacement_response(
    omega: f64,
    rates: &RateSet,
    drive: &DriveConfig,
    f_y: f64,
    params: &CantileverParams,
) -> Result<Complex64> {
    let h = fm_population_response(rates, omega)?;
    Ok(h * mechanical_susceptibility(omega, params) * (f_y * drive.delta_omega()))
}

/// Closed-form quadratures at `omega_m` for the blue-side working point
/// `Delta = G2`. The detuning stored in `rates` is ignored.
pub fn quadratures_at_resonance(
    rates: &RateSet,
    drive: &DriveConfig,
    f_y: f64,
    params: &CantileverParams,
) -> Result<QuadraturePair> {
    rates.validate()?;
    let gt = rates.gamma_tot();
    if !(gt > 0.0) {
        return Err(Error::Degenerate("total polarization rate is zero".into()));
    }
    let wm = params.omega_m();
    let common = f_y * params.q / (2.0 * params.me) * rates.gamma_las * rates.gamma0()
        / (gt * gt + wm * wm)
        * drive.delta_omega()
        / rates.gamma2_star;
    Ok(QuadraturePair {
        x: common / (wm * gt),
        y: common / (wm * wm),
    })
}

/// Additive microwave background that does not depend on the optical
/// pumping, as seeded Gaussian noise per grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpuriousBackground {
    pub x_amplitude: f64,
    pub y_amplitude: f64,
    pub seed: u64,
}

impl SpuriousBackground {
    pub fn sample(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x.push(self.x_amplitude * a);
            y.push(self.y_amplitude * b);
        }
        (x, y)
    }
}

struct Line {
    frequency: f64,
    force: f64,
}

fn all_lines(nv: &NvParams, field: &StaticField, axis: &Vector3<f64>, le: f64) -> Result<Vec<Line>> {
    let b = StaticField::Lab(field.to_lab(nv)?);
    let mut lines = Vec::with_capacity(8);
    for class in 0..4 {
        let sol = nvcore::solve_class(nv, &b, class)?;
        let tp = nvcore::transition_frequencies(&sol);
        for t in Transition::ALL {
            lines.push(Line {
                frequency: tp.get(t),
                force: transition_force(&sol, t, nv.spins_per_class, axis, le),
            });
        }
    }
    Ok(lines)
}

/// FM-MDMR spectrum versus microwave carrier (Hz): the quadratures at
/// `drive.mod_freq` summed over the eight transitions of the four classes.
///
/// Forces are projected on the projection axis of `drive.class_index`.
pub fn fmmdmr_sweep(
    nv: &NvParams,
    field: &StaticField,
    rates_base: &RateSet,
    drive: &DriveConfig,
    cantilever: &CantileverParams,
    center_grid: &[f64],
    background: Option<&SpuriousBackground>,
) -> Result<SignalTrace> {
    nv.validate()?;
    cantilever.validate()?;
    drive.validate()?;
    let mut trace = SignalTrace::new("mw_frequency", "Hz", center_grid.to_vec())?;
    let axis = nv.projection_axis(drive.class_index)?;
    let lines = all_lines(nv, field, &axis, cantilever.le)?;
    let rates = rates_base.with_omega(drive.omega());
    let w = TWO_PI * drive.mod_freq;

    let mut xs = Vec::with_capacity(center_grid.len());
    let mut ys = Vec::with_capacity(center_grid.len());
    for &f in center_grid {
        let mut dx = Complex64::new(0.0, 0.0);
        for line in &lines {
            let r = rates.with_delta(TWO_PI * (f - line.frequency));
            dx += displacement_response(w, &r, drive, line.force, cantilever)?;
        }
        xs.push(dx.re);
        ys.push(dx.im);
    }
    if let Some(bg) = background {
        let (bx, by) = bg.sample(center_grid.len());
        xs.iter_mut().zip(&bx).for_each(|(a, b)| *a += b);
        ys.iter_mut().zip(&by).for_each(|(a, b)| *a += b);
        trace.set_meta("background_seed", bg.seed);
    }
    trace.push_channel("X", "m", xs)?;
    trace.push_channel("Y", "m", ys)?;
    for (i, line) in lines.iter().enumerate() {
        trace.set_meta(format!("line{i}_Hz"), line.frequency);
    }
    Ok(trace)
}

/// Quadratures at resonance across a grid of Rabi frequencies (rad/s).
///
/// The `ratio` channel is `Y/X`; where `X` vanishes (no drive) it takes the
/// limiting value `gamma_tot / omega_m`.
pub fn power_scan(
    rates_base: &RateSet,
    drive: &DriveConfig,
    omega_grid: &[f64],
    f_y: f64,
    cantilever: &CantileverParams,
) -> Result<SignalTrace> {
    cantilever.validate()?;
    let mut trace = SignalTrace::new("omega_rabi", "rad/s", omega_grid.to_vec())?;
    if omega_grid[0] < 0.0 {
        return Err(Error::Input("Rabi frequencies must be >= 0".into()));
    }
    let wm = cantilever.omega_m();
    let mut xs = Vec::with_capacity(omega_grid.len());
    let mut ys = Vec::with_capacity(omega_grid.len());
    let mut ratio = Vec::with_capacity(omega_grid.len());
    for &om in omega_grid {
        let r = rates_base.with_omega(om);
        let q = quadratures_at_resonance(&r, drive, f_y, cantilever)?;
        xs.push(q.x);
        ys.push(q.y);
        ratio.push(if q.x != 0.0 { q.y / q.x } else { r.gamma_tot() / wm });
    }
    trace.push_channel("X", "m", xs)?;
    trace.push_channel("Y", "m", ys)?;
    trace.push_channel("ratio", "1", ratio)?;
    Ok(trace)
}

/// Software lock-in.
///
/// Mixes `x` with `2 cos(2 pi f t)` and `-2 sin(2 pi f t)`, low-passes each
/// with a single-pole filter of time constant `time_constant` (0 disables
/// the filter) initialized at the first-period mean, and returns the filter
/// output averaged over the last whole reference period.
pub fn demodulate(times: &[f64], x: &[f64], ref_freq: f64, time_constant: f64) -> Result<QuadraturePair> {
    let n = times.len();
    if n != x.len() {
        return Err(Error::Input(format!("{n} times for {} samples", x.len())));
    }
    if !(ref_freq > 0.0) || !(time_constant >= 0.0) {
        return Err(Error::Input("reference frequency must be > 0 and time constant >= 0".into()));
    }
    if n < 2 {
        return Err(Error::Input("trace is shorter than 10 reference periods".into()));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Input("samples are not uniformly spaced".into()));
    }
    let period = 1.0 / ref_freq;
    if (n - 1) as f64 * dt < 10.0 * period * (1.0 - 1e-9) {
        return Err(Error::Input("trace is shorter than 10 reference periods".into()));
    }
    let per = ((period / dt).round() as usize).max(1);

    let w = TWO_PI * ref_freq;
    let mixed: Vec<(f64, f64)> = times
        .iter()
        .zip(x)
        .map(|(&t, &v)| (2.0 * v * (w * t).cos(), -2.0 * v * (w * t).sin()))
        .collect();
    let mean = |s: &[(f64, f64)]| {
        let k = s.len() as f64;
        s.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0 / k, a.1 + b.1 / k))
    };
    let alpha = if time_constant == 0.0 {
        1.0
    } else {
        1.0 - (-dt / time_constant).exp()
    };
    let mut y = mean(&mixed[..per]);
    let mut filtered = Vec::with_capacity(n);
    for &(a, b) in &mixed {
        y.0 += alpha * (a - y.0);
        y.1 += alpha * (b - y.1);
        filtered.push(y);
    }
    let (qx, qy) = mean(&filtered[n - per..]);
    Ok(QuadraturePair { x: qx, y: qy })
}

/// Channel-wise difference of two traces on the same grid.
pub fn background_subtraction(trace_on: &SignalTrace, trace_off: &SignalTrace) -> Result<SignalTrace> {
    if trace_on.grid() != trace_off.grid() {
        return Err(Error::Input("traces are not on the same grid".into()));
    }
    let mut out = SignalTrace::new(
        trace_on.abscissa.name.clone(),
        trace_on.abscissa.unit.clone(),
        trace_on.grid().to_vec(),
    )?;
    for c in &trace_on.channels {
        let off = trace_off
            .channel(&c.name)
            .ok_or_else(|| Error::Input(format!("channel `{}` missing from the reference trace", c.name)))?;
        let diff = c.values.iter().zip(off).map(|(a, b)| a - b).collect();
        out.push_channel(c.name.clone(), c.unit.clone(), diff)?;
    }
    out.metadata = trace_on.metadata.clone();
    out.set_meta("background_subtracted", true);
    Ok(out)
}

/// Abscissa of a torque sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TorqueSweep {
    /// Polar angle varies (rad) at fixed amplitude (T).
    Angle { amplitude: f64 },
    /// Amplitude varies (T) at fixed polar angle (rad).
    Field { theta: f64 },
}

/// Ensemble torques of one class along a sweep, projected on the class
/// projection axis: the three eigenstates and the two driven changes.
pub fn torque_map(nv: &NvParams, class_index: usize, sweep: TorqueSweep, grid: &[f64]) -> Result<SignalTrace> {
    nv.validate()?;
    let (name, unit) = match sweep {
        TorqueSweep::Angle { .. } => ("theta", "rad"),
        TorqueSweep::Field { .. } => ("field", "T"),
    };
    let mut trace = SignalTrace::new(name, unit, grid.to_vec())?;
    let axis = nv.projection_axis(class_index)?;
    let mut cols: [Vec<f64>; 5] = Default::default();
    for &g in grid {
        let field = match sweep {
            TorqueSweep::Angle { amplitude } => StaticField::angular(amplitude, g, class_index),
            TorqueSweep::Field { theta } => StaticField::angular(g, theta, class_index),
        };
        let sol = nvcore::solve_class(nv, &field, class_index)?;
        let t = nvcore::eigenstate_torques(&sol, nv.spins_per_class, &axis)?;
        for l in Eigenstate::ALL {
            cols[l.index()].push(t.projection(l));
        }
        for (k, tr) in Transition::ALL.iter().enumerate() {
            cols[3 + k].push(nvcore::driven_torque_change_of(&sol, nv.spins_per_class, *tr).dot(&axis));
        }
    }
    let [t0, tm, tp, dm, dp] = cols;
    trace.push_channel("tau_0", "N m", t0)?;
    trace.push_channel("tau_m1", "N m", tm)?;
    trace.push_channel("tau_p1", "N m", tp)?;
    trace.push_channel("dtau_minus", "N m", dm)?;
    trace.push_channel("dtau_plus", "N m", dp)?;
    match sweep {
        TorqueSweep::Angle { amplitude } => trace.set_meta("field_T", amplitude),
        TorqueSweep::Field { theta } => trace.set_meta("theta_rad", theta),
    }
    trace.set_meta("class_index", class_index);
    Ok(trace)
}

/// Settings of the time-domain reference pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDomainOptions {
    /// Periods integrated and demodulated after the periodic state is found.
    pub periods: usize,
    /// Samples kept per period for the lock-in.
    pub samples_per_period: usize,
    /// Lock-in time constant in periods.
    pub time_constant_periods: f64,
}

impl Default for TimeDomainOptions {
    fn default() -> Self {
        Self {
            periods: 12,
            samples_per_period: 200,
            time_constant_periods: 2.0,
        }
    }
}

/// Quadratures from direct integration of the master equation, driven at
/// the blue-side point with a sinusoidal detuning modulation, co-integrated
/// with the mechanical mode and demodulated.
///
/// The spin is first run to its periodic regime; the periodic mechanical
/// state is then found by a one-period shooting step so the lock-in sees no
/// ring-down transient.
pub fn time_domain_quadratures(
    rates: &RateSet,
    drive: &DriveConfig,
    f_y: f64,
    cantilever: &CantileverParams,
    options: &TimeDomainOptions,
) -> Result<QuadraturePair> {
    rates.validate()?;
    drive.validate()?;
    cantilever.validate()?;
    if options.periods < 10 || options.samples_per_period < 4 {
        return Err(Error::Input("need at least 10 periods and 4 samples per period".into()));
    }
    let working = rates.with_delta(rates.gamma2_star);
    let rho_s = spindyn::steady_state(&working)?.rho_ee;
    let wave = spindyn::DetuningWaveform::Sinusoid {
        offset: rates.gamma2_star,
        amplitude: drive.delta_omega(),
        omega: TWO_PI * drive.mod_freq,
        phase: 0.0,
    };
    let period = 1.0 / drive.mod_freq;
    let dt_max = spindyn::max_bloch_step(&working, &wave);
    let per = ((period / dt_max).ceil() as usize).div_ceil(options.samples_per_period)
        * options.samples_per_period;
    let h = period / per as f64;
    let decimate = per / options.samples_per_period;

    let wm = cantilever.omega_m();
    let damping = wm / cantilever.q;
    let me = cantilever.me;
    let coupled = |t: f64, y: &[f64; 5]| -> [f64; 5] {
        let s = bloch_rhs(&working, wave.value(t), &[y[0], y[1], y[2]]);
        let force = f_y * (y[0] - rho_s);
        [s[0], s[1], s[2], y[4], force / me - damping * y[4] - wm * wm * y[3]]
    };
    let free = |_t: f64, y: &[f64; 2]| -> [f64; 2] { [y[1], -damping * y[1] - wm * wm * y[0]] };

    let run_period = |t0: f64, y: [f64; 5]| -> Result<[f64; 5]> {
        let mut y = y;
        for k in 0..per {
            y = rk4_step(&coupled, t0 + h * k as f64, &y, h);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { t: t0 + period });
        }
        Ok(y)
    };

    let settle_time = 15.0 / working.gamma_tot_at(rates.gamma2_star);
    let settle_periods = ((settle_time / period).ceil() as usize).max(1);
    let g = spindyn::steady_state(&working)?;
    let mut y = [g.rho_ee, g.rho_eg.re, g.rho_eg.im, 0.0, 0.0];
    let mut t = 0.0;
    for _ in 0..settle_periods {
        y = run_period(t, y)?;
        t += period;
    }

    // one period from rest gives the forced part b; the free map gives M
    let spin0 = [y[0], y[1], y[2]];
    let forced = run_period(t, [spin0[0], spin0[1], spin0[2], 0.0, 0.0])?;
    let b = [forced[3], forced[4]];
    let mut m = [[0.0; 2]; 2];
    for (col, init) in [[1.0, 0.0], [0.0, 1.0]].into_iter().enumerate() {
        let mut z = init;
        for k in 0..per {
            z = rk4_step(&free, t + h * k as f64, &z, h);
        }
        m[0][col] = z[0];
        m[1][col] = z[1];
    }
    let a = [[1.0 - m[0][0], -m[0][1]], [-m[1][0], 1.0 - m[1][1]]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return Err(Error::Degenerate("mechanical monodromy has a unit eigenvalue".into()));
    }
    let x0 = (a[1][1] * b[0] - a[0][1] * b[1]) / det;
    let v0 = (a[0][0] * b[1] - a[1][0] * b[0]) / det;

    let mut y = [spin0[0], spin0[1], spin0[2], x0, v0];
    let total = per * options.periods;
    let mut times = Vec::with_capacity(total / decimate + 1);
    let mut xs = Vec::with_capacity(total / decimate + 1);
    times.push(t);
    xs.push(y[3]);
    for k in 0..total {
        y = rk4_step(&coupled, t + h * k as f64, &y, h);
        if (k + 1) % decimate == 0 {
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { t: t + h * (k + 1) as f64 });
            }
            times.push(t + h * (k + 1) as f64);
            xs.push(y[3]);
        }
    }
    demodulate(&times, &xs, drive.mod_freq, options.time_constant_periods * period)
}
