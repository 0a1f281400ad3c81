//! Driven two-level dynamics of one `|0'> -> |e>` transition under optical
//! repolarization, and the torque bookkeeping along a moment trajectory.
//!
//! State variables are `rho_ee` and the rotating-frame coherence `rho_eg`;
//! `rho_gg = 1 - rho_ee` is implied. The master equation is
//!
//! ```text
//! d rho_ee/dt = -G1/2 (rho_ee - rho_gg) - g_las rho_ee - Omega Im rho_eg
//! d rho_eg/dt = (-G2 + i Delta) rho_eg + i Omega/2 (rho_ee - rho_gg)
//! ```

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::ode::rk4_step;
use crate::{Error, Result};

/// Rates of the two-level master equation, all angular (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSet {
    pub gamma1: f64,
    pub gamma2_star: f64,
    pub gamma_las: f64,
    /// Rabi frequency.
    pub omega: f64,
    /// Signed detuning of the drive from the transition.
    pub delta: f64,
}

impl RateSet {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma_las", self.gamma_las),
            ("omega", self.omega),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Input(format!("{name} must be a finite rate >= 0, got {v}")));
            }
        }
        if !(self.gamma2_star > 0.0) || !self.gamma2_star.is_finite() {
            return Err(Error::Input(format!(
                "gamma2_star must be finite and > 0, got {}",
                self.gamma2_star
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::Input("detuning is not finite".into()));
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    /// Blue-side working-point saturation rate `Omega^2 / (2 G2)`.
    pub fn gamma0(&self) -> f64 {
        self.omega * self.omega / (2.0 * self.gamma2_star)
    }

    /// Total polarization rate at the blue-side working point,
    /// `G1 + g_las + Omega^2/(2 G2)`.
    pub fn gamma_tot(&self) -> f64 {
        self.gamma1 + self.gamma_las + self.gamma0()
    }

    /// Drive-induced transfer rate `Omega^2 G2 / (2 (G2^2 + Delta^2))` in
    /// each direction at detuning `delta`.
    pub fn pump_rate(&self, delta: f64) -> f64 {
        let g2 = self.gamma2_star;
        self.omega * self.omega * g2 / (2.0 * (g2 * g2 + delta * delta))
    }

    /// Population relaxation rate at detuning `delta`; equals
    /// [`gamma_tot`](Self::gamma_tot) at `delta = G2`.
    pub fn gamma_tot_at(&self, delta: f64) -> f64 {
        self.gamma1 + self.gamma_las + 2.0 * self.pump_rate(delta)
    }

    fn pump_rate_slope(&self, delta: f64) -> f64 {
        let g2 = self.gamma2_star;
        let d = g2 * g2 + delta * delta;
        -self.omega * self.omega * g2 * delta / (d * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelState {
    pub rho_ee: f64,
    pub rho_eg: Complex64,
}

impl TwoLevelState {
    pub fn ground() -> Self {
        Self {
            rho_ee: 0.0,
            rho_eg: Complex64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        Self {
            rho_ee: 1.0,
            rho_eg: Complex64::new(0.0, 0.0),
        }
    }

    pub fn rho_gg(&self) -> f64 {
        1.0 - self.rho_ee
    }

    /// Population inversion `rho_ee - rho_gg`.
    pub fn inversion(&self) -> f64 {
        2.0 * self.rho_ee - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1e-9..=1.0 + 1e-9).contains(&self.rho_ee) {
            return Err(Error::Input(format!("rho_ee = {} is outside [0, 1]", self.rho_ee)));
        }
        if !(self.rho_eg.norm() <= 0.5 + 1e-9) {
            return Err(Error::Input(format!("|rho_eg| = {} exceeds 1/2", self.rho_eg.norm())));
        }
        Ok(())
    }

    fn to_array(self) -> [f64; 3] {
        [self.rho_ee, self.rho_eg.re, self.rho_eg.im]
    }

    fn from_array(y: [f64; 3]) -> Self {
        Self {
            rho_ee: y[0],
            rho_eg: Complex64::new(y[1], y[2]),
        }
    }
}

/// Stationary state at the detuning stored in `rates`.
pub fn steady_state(rates: &RateSet) -> Result<TwoLevelState> {
    rates.validate()?;
    let delta = rates.delta;
    let g0 = rates.pump_rate(delta);
    let denom = rates.gamma_tot_at(delta);
    if !(denom > 0.0) {
        return Err(Error::Degenerate(
            "all population rates vanish; the stationary state is undefined".into(),
        ));
    }
    let rho_ee = (0.5 * rates.gamma1 + g0) / denom;
    let w = 2.0 * rho_ee - 1.0;
    let g2 = rates.gamma2_star;
    let rho_eg = Complex64::new(-delta, g2) * (rates.omega * w / (2.0 * (g2 * g2 + delta * delta)));
    Ok(TwoLevelState { rho_ee, rho_eg })
}

/// Derivative of the stationary `rho_ee` with respect to the detuning (s).
pub fn steady_state_slope(rates: &RateSet) -> Result<f64> {
    rates.validate()?;
    let gt = rates.gamma_tot_at(rates.delta);
    if !(gt > 0.0) {
        return Err(Error::Degenerate(
            "all population rates vanish; the stationary state is undefined".into(),
        ));
    }
    Ok(rates.gamma_las / (gt * gt) * rates.pump_rate_slope(rates.delta))
}

/// Linear response `delta rho_ee[w] / delta omega_mu[w]` (units of s) to a
/// small modulation of the detuning around `rates.delta`, with the
/// coherence adiabatically eliminated.
pub fn fm_population_response(rates: &RateSet, omega: f64) -> Result<Complex64> {
    let slope = steady_state_slope(rates)?;
    let gt = rates.gamma_tot_at(rates.delta);
    Ok(Complex64::new(slope * gt, 0.0) / Complex64::new(gt, omega))
}

/// Detuning as a function of time, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetuningWaveform {
    Constant(f64),
    /// `offset + amplitude cos(omega t + phase)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
}

impl DetuningWaveform {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            DetuningWaveform::Constant(d) => d,
            DetuningWaveform::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => offset + amplitude * (omega * t + phase).cos(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match *self {
            DetuningWaveform::Constant(d) => d.abs(),
            DetuningWaveform::Sinusoid {
                offset, amplitude, ..
            } => offset.abs() + amplitude.abs(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            DetuningWaveform::Constant(d) => d.is_finite(),
            DetuningWaveform::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => [offset, amplitude, omega, phase].iter().all(|v| v.is_finite()),
        }
    }
}

/// Right-hand side of the master equation for `[rho_ee, Re rho_eg, Im rho_eg]`.
pub fn bloch_rhs(rates: &RateSet, delta: f64, y: &[f64; 3]) -> [f64; 3] {
    let [p, re, im] = *y;
    let w = 2.0 * p - 1.0;
    let g2 = rates.gamma2_star;
    [
        -0.5 * rates.gamma1 * w - rates.gamma_las * p - rates.omega * im,
        -g2 * re - delta * im,
        -g2 * im + delta * re + 0.5 * rates.omega * w,
    ]
}

/// Largest step accepted by [`integrate_bloch`] for a given waveform.
pub fn max_bloch_step(rates: &RateSet, waveform: &DetuningWaveform) -> f64 {
    let mut limit = 1.0 / rates.gamma2_star;
    let dmax = waveform.max_abs();
    if dmax > 0.0 {
        limit = limit.min(crate::TWO_PI / dmax);
    }
    limit / 20.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<TwoLevelState>,
}

impl BlochTrajectory {
    pub fn last(&self) -> &TwoLevelState {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn populations(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.rho_ee).collect()
    }
}

/// Fixed-step RK4 integration of the full master equation.
///
/// The step is shrunk so that a whole number of steps spans `t_span`; every
/// `record_every`-th state is kept, plus the initial and final ones.
pub fn integrate_bloch(
    rates: &RateSet,
    waveform: &DetuningWaveform,
    initial: TwoLevelState,
    t_span: (f64, f64),
    dt: f64,
    record_every: usize,
) -> Result<BlochTrajectory> {
    rates.validate()?;
    if !waveform.is_finite() {
        return Err(Error::Input("detuning waveform is not finite".into()));
    }
    let (t0, t1) = t_span;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Input(format!("invalid time span ({t0}, {t1})")));
    }
    if !(dt > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    let required = max_bloch_step(rates, waveform);
    if dt > required {
        return Err(Error::StepTooLarge { dt, required });
    }
    let record_every = record_every.max(1);
    let n = ((t1 - t0) / dt).ceil() as usize;
    let h = (t1 - t0) / n as f64;

    let f = |t: f64, y: &[f64; 3]| bloch_rhs(rates, waveform.value(t), y);
    let mut y = initial.to_array();
    let mut times = vec![t0];
    let mut states = vec![initial];
    for k in 0..n {
        let t = t0 + h * k as f64;
        y = rk4_step(&f, t, &y, h);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { t: t + h });
        }
        if (k + 1) % record_every == 0 || k + 1 == n {
            times.push(t0 + h * (k + 1) as f64);
            states.push(TwoLevelState::from_array(y));
        }
    }
    Ok(BlochTrajectory { times, states })
}

/// Population-weighted moment `rho_gg mu_g + rho_ee mu_e` along a trajectory.
pub fn moment_trajectory(
    traj: &BlochTrajectory,
    mu_g: Vector3<f64>,
    mu_e: Vector3<f64>,
) -> Vec<Vector3<f64>> {
    traj.states
        .iter()
        .map(|s| mu_g * s.rho_gg() + mu_e * s.rho_ee)
        .collect()
}

/// Angular-momentum balance of the spin-carrying lattice:
/// `dL/dt = mu x B0 + mu x B1(t) - (1/gamma_e) dmu/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueDecomposition {
    pub times: Vec<f64>,
    pub tau_static: Vec<Vector3<f64>>,
    pub tau_mw: Vec<Vector3<f64>>,
    /// Einstein-de Haas term.
    pub tau_edh: Vec<Vector3<f64>>,
    pub tau_total: Vec<Vector3<f64>>,
}

pub fn torque_decomposition<F>(
    times: &[f64],
    moments: &[Vector3<f64>],
    b0: Vector3<f64>,
    b1: F,
    gamma_e: f64,
) -> Result<TorqueDecomposition>
where
    F: Fn(f64) -> Vector3<f64>,
{
    let n = moments.len();
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 samples, got {n}")));
    }
    if times.len() != n {
        return Err(Error::Input(format!(
            "{} times for {n} moment samples",
            times.len()
        )));
    }
    if !(gamma_e != 0.0) || !gamma_e.is_finite() {
        return Err(Error::Input("gyromagnetic ratio must be finite and non-zero".into()));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Input("time grid must be ascending".into()));
    }
    if times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt)
    {
        return Err(Error::Input("time grid is not uniform".into()));
    }
    if moments.iter().any(|m| !m.iter().all(|c| c.is_finite())) {
        return Err(Error::Input("moment trajectory is not finite".into()));
    }

    let derivative = |i: usize| -> Vector3<f64> {
        if i == 0 {
            (moments[1] - moments[0]) / dt
        } else if i == n - 1 {
            (moments[n - 1] - moments[n - 2]) / dt
        } else {
            (moments[i + 1] - moments[i - 1]) / (2.0 * dt)
        }
    };

    let mut out = TorqueDecomposition {
        times: times.to_vec(),
        tau_static: Vec::with_capacity(n),
        tau_mw: Vec::with_capacity(n),
        tau_edh: Vec::with_capacity(n),
        tau_total: Vec::with_capacity(n),
    };
    for (i, (&t, mu)) in times.iter().zip(moments).enumerate() {
        let s = mu.cross(&b0);
        let m = mu.cross(&b1(t));
        let e = -derivative(i) / gamma_e;
        out.tau_static.push(s);
        out.tau_mw.push(m);
        out.tau_edh.push(e);
        out.tau_total.push(s + m + e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TWO_PI;
    use approx::assert_relative_eq;

    fn nominal() -> RateSet {
        RateSet {
            gamma1: TWO_PI * 1e3,
            gamma2_star: TWO_PI * 5e6,
            gamma_las: TWO_PI * 1e3,
            omega: TWO_PI * 1e6,
            delta: TWO_PI * 5e6,
        }
    }

    #[test]
    fn gamma_tot_examples() {
        let r = nominal();
        assert_relative_eq!(r.gamma_tot(), TWO_PI * 1.02e5, max_relative = 1e-12);
        assert_relative_eq!(r.with_omega(0.0).gamma_tot(), TWO_PI * 2e3, max_relative = 1e-15);
        assert_relative_eq!(r.gamma_tot_at(r.gamma2_star), r.gamma_tot(), max_relative = 1e-15);
        // millisecond scale at weak drive
        let weak = r.with_omega(TWO_PI * 1e4);
        assert!(1.0 / weak.gamma_tot() > 1e-5 && 1.0 / weak.gamma_tot() < 1e-3 * 2.0);
    }

    #[test]
    fn steady_state_limits() {
        let r = nominal().with_omega(0.0);
        assert_relative_eq!(steady_state(&r).unwrap().rho_ee, 0.25, max_relative = 1e-15);

        let pumped = RateSet { gamma_las: 1e12, ..nominal() };
        assert!(steady_state(&pumped).unwrap().rho_ee < 1e-6);

        let saturated = RateSet { omega: TWO_PI * 1e9, ..nominal() };
        assert_relative_eq!(steady_state(&saturated).unwrap().rho_ee, 0.5, epsilon = 1e-6);

        let dead = RateSet { gamma1: 0.0, gamma_las: 0.0, omega: 0.0, ..nominal() };
        assert!(matches!(steady_state(&dead), Err(Error::Degenerate(_))));
        let bad = RateSet { gamma2_star: 0.0, ..nominal() };
        assert!(steady_state(&bad).is_err());
    }

    #[test]
    fn response_is_a_single_pole() {
        let r = nominal();
        let h0 = fm_population_response(&r, 0.0).unwrap();
        let expected = -r.gamma_las * r.gamma0() / (2.0 * r.gamma2_star * r.gamma_tot().powi(2));
        assert_relative_eq!(h0.re, expected, max_relative = 1e-12);
        assert_eq!(h0.im, 0.0);
        let hc = fm_population_response(&r, r.gamma_tot()).unwrap();
        assert_relative_eq!((hc / h0).arg().to_degrees(), -45.0, epsilon = 1e-9);
        assert!(fm_population_response(&r, 1e12).unwrap().norm() < 1e-6 * h0.norm());
    }

    #[test]
    fn step_limit_is_enforced() {
        let r = nominal();
        let wf = DetuningWaveform::Constant(r.gamma2_star);
        let err = integrate_bloch(&r, &wf, TwoLevelState::ground(), (0.0, 1e-6), 1e-7, 1).unwrap_err();
        match err {
            Error::StepTooLarge { required, .. } => {
                assert_relative_eq!(required, max_bloch_step(&r, &wf), max_relative = 1e-15)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pure_relaxation_is_monotone() {
        let r = nominal().with_omega(0.0);
        let wf = DetuningWaveform::Constant(0.0);
        let dt = max_bloch_step(&r, &wf);
        let traj = integrate_bloch(&r, &wf, TwoLevelState::excited(), (0.0, 5e-4), dt, 50).unwrap();
        let pops = traj.populations();
        assert!(pops.windows(2).all(|w| w[1] <= w[0]));
        assert!(pops.last().unwrap() > &0.25);
    }

    #[test]
    fn decomposition_needs_three_samples() {
        let t = [0.0, 1.0];
        let m = [Vector3::zeros(); 2];
        assert!(torque_decomposition(&t, &m, Vector3::x(), |_| Vector3::zeros(), -1.0).is_err());
    }
}
