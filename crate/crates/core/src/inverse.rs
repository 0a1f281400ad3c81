//! Field recovery from one ODMR dip pair and spin-count fits.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::nvcore::{self, NvParams, StaticField, Transition};
use crate::signal::TorqueSweep;
use crate::trace::SignalTrace;
use crate::{Error, Result};

const FIELD_SCALE: f64 = 0.1;
const ANGLE_SCALE: f64 = std::f64::consts::FRAC_PI_2;
const MAX_FIELD: f64 = 1.0;
const LATTICE: usize = 20;
const STARTS: usize = 4;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldFitResult {
    /// Tesla.
    pub b0: f64,
    /// Polar angle to the class axis, rad, in `[0, pi/2]`.
    pub theta: f64,
    /// Rms transition-frequency mismatch, Hz.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Recovers `(B0, theta)` for one class from its transition pair (Hz).
///
/// A 20x20 lattice over `B0 in [0, 0.1] T`, `theta in [0, pi/2]` seeds a
/// Levenberg-Marquardt refinement of the best few starts; the smallest
/// residual wins. `converged` means the residual is within `tol` (Hz).
pub fn fit_field_from_dips(
    f_minus: f64,
    f_plus: f64,
    params: &NvParams,
    class_index: usize,
    tol: f64,
) -> Result<FieldFitResult> {
    if !(f_minus > 0.0) || !f_plus.is_finite() {
        return Err(Error::Input(format!(
            "transition frequencies must be finite and positive, got {f_minus}, {f_plus}"
        )));
    }
    if f_minus > f_plus {
        return Err(Error::Input(format!("f_minus {f_minus} Hz exceeds f_plus {f_plus} Hz")));
    }
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    params.validate()?;
    params.class_axis(class_index)?;

    let model = PairModel {
        params,
        class_index,
        target: Vector2::new(f_minus, f_plus),
    };

    let mut lattice = Vec::with_capacity(LATTICE * LATTICE);
    for i in 0..LATTICE {
        for j in 0..LATTICE {
            let p = Vector2::new(i as f64, j as f64) / (LATTICE - 1) as f64;
            lattice.push((model.cost(&p)?, p));
        }
    }
    lattice.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, Vector2<f64>, usize)> = None;
    let mut iterations = 0;
    // the zero-field row ties for every angle; keep one start per distinct cost
    let mut starts: Vec<(f64, Vector2<f64>)> = Vec::with_capacity(STARTS);
    for &(c, p) in &lattice {
        if starts.len() == STARTS {
            break;
        }
        if starts.iter().all(|(s, _)| (s - c).abs() > 1e-12 * c.abs().max(1.0)) {
            starts.push((c, p));
        }
    }
    for (_, start) in &starts {
        let (cost, p, it) = model.refine(*start)?;
        iterations += it;
        if best.is_none_or(|b| cost < b.0) {
            best = Some((cost, p, it));
        }
    }
    let (cost, p, _) = best.expect("at least one start");
    let residual = (cost / 2.0).sqrt();
    Ok(FieldFitResult {
        b0: p.x * FIELD_SCALE,
        theta: p.y * ANGLE_SCALE,
        residual,
        iterations,
        converged: residual <= tol,
    })
}

struct PairModel<'a> {
    params: &'a NvParams,
    class_index: usize,
    target: Vector2<f64>,
}

impl PairModel<'_> {
    /// Residual in Hz at scaled coordinates; both coordinates are folded
    /// through their mirror symmetries so finite differences may straddle
    /// the bounds.
    fn residual(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        let b = (p.x * FIELD_SCALE).abs();
        let mut theta = (p.y * ANGLE_SCALE).abs() % std::f64::consts::PI;
        if theta > std::f64::consts::FRAC_PI_2 {
            theta = std::f64::consts::PI - theta;
        }
        let field = StaticField::angular(b, theta, self.class_index);
        let sol = nvcore::solve_class(self.params, &field, self.class_index)?;
        let tp = nvcore::transition_frequencies(&sol);
        Ok(Vector2::new(tp.f_minus, tp.f_plus) - self.target)
    }

    fn cost(&self, p: &Vector2<f64>) -> Result<f64> {
        Ok(self.residual(p)?.norm_squared())
    }

    /// Central differences, one-sided at the lower bounds where the folded
    /// residual is even and a central stencil would see a zero slope.
    fn jacobian(&self, p: &Vector2<f64>) -> Result<Matrix2<f64>> {
        let r0 = self.residual(p)?;
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut hi = *p;
            hi[k] += FD_STEP;
            let d = if p[k] < FD_STEP {
                (self.residual(&hi)? - r0) / FD_STEP
            } else {
                let mut lo = *p;
                lo[k] -= FD_STEP;
                (self.residual(&hi)? - self.residual(&lo)?) / (2.0 * FD_STEP)
            };
            j.set_column(k, &d);
        }
        Ok(j)
    }

    fn clamp(p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x.clamp(0.0, MAX_FIELD / FIELD_SCALE), p.y.clamp(0.0, 1.0))
    }

    fn refine(&self, start: Vector2<f64>) -> Result<(f64, Vector2<f64>, usize)> {
        let mut p = start;
        let mut r = self.residual(&p)?;
        let mut cost = r.norm_squared();
        let mut lambda = 1e-3;
        let mut it = 0;
        while it < 200 && cost > 0.0 {
            it += 1;
            let j = self.jacobian(&p)?;
            let jtj = j.transpose() * j;
            let g = j.transpose() * r;
            let floor = 1e-12 * jtj.diagonal().max().max(1.0);
            let mut accepted = false;
            while lambda < 1e16 {
                let mut a = jtj;
                for k in 0..2 {
                    a[(k, k)] += lambda * jtj[(k, k)].max(floor);
                }
                let Some(step) = a.lu().solve(&(-g)) else {
                    lambda *= 4.0;
                    continue;
                };
                let trial = Self::clamp(p + step);
                let rt = self.residual(&trial)?;
                let ct = rt.norm_squared();
                if ct < cost {
                    let moved = (trial - p).norm();
                    p = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = moved > 1e-15;
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        Ok((cost, p, it))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinFitResult {
    pub n_fit: f64,
    /// Rms of data minus fit, N m.
    pub residual: f64,
    pub standard_error: f64,
}

/// Forward model of a torque curve with the spin count as the only free
/// parameter: the driven torque change of one transition, projected on
/// `axis`, along a field or angle sweep of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinModel {
    pub params: NvParams,
    pub class_index: usize,
    pub transition: Transition,
    pub sweep: TorqueSweep,
    pub axis: Vector3<f64>,
}

impl SpinModel {
    pub fn new(params: NvParams, class_index: usize, transition: Transition, sweep: TorqueSweep) -> Result<Self> {
        let axis = params.projection_axis(class_index)?;
        Ok(Self {
            params,
            class_index,
            transition,
            sweep,
            axis,
        })
    }

    /// Torque per spin at each abscissa value (rad or T, per the sweep).
    pub fn per_spin(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter()
            .map(|&g| {
                let field = match self.sweep {
                    TorqueSweep::Angle { amplitude } => StaticField::angular(amplitude, g, self.class_index),
                    TorqueSweep::Field { theta } => StaticField::angular(g, theta, self.class_index),
                };
                let sol = nvcore::solve_class(&self.params, &field, self.class_index)?;
                Ok(nvcore::driven_torque_change_of(&sol, 1.0, self.transition).dot(&self.axis))
            })
            .collect()
    }
}

/// Linear least squares for the spin count scaling `model` onto the
/// `channel` of `data`.
pub fn fit_polarized_spins(data: &SignalTrace, channel: &str, model: &SpinModel) -> Result<SpinFitResult> {
    let d = data
        .channel(channel)
        .ok_or_else(|| Error::Input(format!("trace has no channel `{channel}`")))?;
    let n = d.len();
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 data points, got {n}")));
    }
    let m = model.per_spin(data.grid())?;
    let smm: f64 = m.iter().map(|v| v * v).sum();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(smm > 0.0) || scale < 1e-300 {
        return Err(Error::Degenerate(
            "model torque vanishes on every data point; the spin count is unidentifiable".into(),
        ));
    }
    let sdm: f64 = d.iter().zip(&m).map(|(a, b)| a * b).sum();
    let n_fit = sdm / smm;
    let ss: f64 = d.iter().zip(&m).map(|(a, b)| (a - n_fit * b).powi(2)).sum();
    Ok(SpinFitResult {
        n_fit,
        residual: (ss / n as f64).sqrt(),
        standard_error: (ss / (n - 1) as f64 / smm).sqrt(),
    })
}
