//! Ground-state spin Hamiltonian of a single NV center and the magnetic
//! moments and torques of its eigenstates.
//!
//! Each NV class is described in its own frame: `e3` is the N-V axis and
//! `e1` lies in the plane spanned by `e3` and the static field, so the field
//! has no `e2` component and every eigenstate torque points along `+-e2`.
//! Spin operators use the basis `{|+1>, |0>, |-1>}` quantized along `e3`.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

use crate::trace::SignalTrace;
use crate::{Error, Result, HBAR, TWO_PI};

/// Relative gap below which two eigenvalues are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-6;

const AXIS_NORM_TOL: f64 = 1e-12;
const AXIS_ANGLE_TOL: f64 = 1e-9;

/// Ensemble constants. Rates and frequencies are angular (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct NvParams {
    /// Zero-field splitting `D`.
    pub zero_field_splitting: f64,
    /// Electron gyromagnetic ratio, rad/(s T). Negative for the electron.
    pub gyromagnetic_ratio: f64,
    pub gamma1: f64,
    pub gamma2_star: f64,
    /// Optical repolarization rate into `|0'>`.
    pub gamma_las: f64,
    pub spins_per_class: f64,
    /// N-V directions of the four crystallographic classes, lab frame.
    pub class_axes: [Vector3<f64>; 4],
    /// Lab direction that, together with a class axis, spans the plane of an
    /// angle-specified field. Must not be parallel to any class axis.
    pub reference_direction: Vector3<f64>,
}

impl Default for NvParams {
    fn default() -> Self {
        let s = 1.0 / 3f64.sqrt();
        Self {
            zero_field_splitting: TWO_PI * 2.87e9,
            gyromagnetic_ratio: -TWO_PI * 28.0e9,
            gamma1: TWO_PI * 1e3,
            gamma2_star: TWO_PI * 5e6,
            gamma_las: TWO_PI * 1e3,
            spins_per_class: 5e9,
            class_axes: [
                Vector3::new(s, s, s),
                Vector3::new(s, -s, -s),
                Vector3::new(-s, s, -s),
                Vector3::new(-s, -s, s),
            ],
            reference_direction: Vector3::new(-1.0, 0.0, 1.0) / 2f64.sqrt(),
        }
    }
}

impl NvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zero_field_splitting > 0.0) {
            return Err(Error::Config("zero-field splitting must be positive".into()));
        }
        if !(self.gyromagnetic_ratio < 0.0) {
            return Err(Error::Config("gyromagnetic ratio must be negative".into()));
        }
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2_star", self.gamma2_star),
            ("gamma_las", self.gamma_las),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite rate >= 0")));
            }
        }
        if !(self.spins_per_class > 0.0) {
            return Err(Error::Config("spins per class must be positive".into()));
        }
        for (i, a) in self.class_axes.iter().enumerate() {
            if (a.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(Error::Config(format!(
                    "class axis {i} is not a unit vector (norm {})",
                    a.norm()
                )));
            }
        }
        let tetra = (-1.0f64 / 3.0).acos();
        for i in 0..4 {
            for j in i + 1..4 {
                let c = self.class_axes[i].dot(&self.class_axes[j]).clamp(-1.0, 1.0);
                if (c.acos() - tetra).abs() > AXIS_ANGLE_TOL {
                    return Err(Error::Config(format!(
                        "class axes {i} and {j} are not at the tetrahedral angle"
                    )));
                }
            }
        }
        let r = self.reference_direction;
        if !(r.norm() > 0.0) {
            return Err(Error::Config("reference direction must be non-zero".into()));
        }
        for (i, a) in self.class_axes.iter().enumerate() {
            if a.cross(&r).norm() < 1e-9 * r.norm() {
                return Err(Error::Config(format!(
                    "reference direction is parallel to class axis {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn class_axis(&self, class_index: usize) -> Result<Vector3<f64>> {
        self.class_axes
            .get(class_index)
            .copied()
            .ok_or_else(|| Error::Input(format!("class index {class_index} is not in 0..4")))
    }

    /// Unit vector perpendicular to the class axis, in the plane of the axis
    /// and the reference direction.
    pub fn in_plane_direction(&self, class_index: usize) -> Result<Vector3<f64>> {
        let a = self.class_axis(class_index)?;
        let r = self.reference_direction;
        let p = r - a * r.dot(&a);
        let n = p.norm();
        if n < 1e-9 * r.norm() {
            return Err(Error::Config(format!(
                "reference direction is parallel to class axis {class_index}"
            )));
        }
        Ok(p / n)
    }

    /// Default torque projection axis for a class: the normal of the plane
    /// holding the class axis and any angle-specified field.
    pub fn projection_axis(&self, class_index: usize) -> Result<Vector3<f64>> {
        let a = self.class_axis(class_index)?;
        Ok(a.cross(&self.in_plane_direction(class_index)?))
    }
}

/// Homogeneous static field, either as a lab vector or as an amplitude and
/// polar angle measured from one class axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticField {
    /// Lab-frame vector, Tesla.
    Lab(Vector3<f64>),
    /// `amplitude` (T) at `theta` (rad, 0..=pi) from the axis of
    /// `class_index`, in the plane of that axis and the reference direction.
    Angular {
        amplitude: f64,
        theta: f64,
        class_index: usize,
    },
}

impl StaticField {
    pub fn angular(amplitude: f64, theta: f64, class_index: usize) -> Self {
        StaticField::Angular {
            amplitude,
            theta,
            class_index,
        }
    }

    pub fn to_lab(&self, params: &NvParams) -> Result<Vector3<f64>> {
        match *self {
            StaticField::Lab(b) => {
                if b.iter().all(|c| c.is_finite()) {
                    Ok(b)
                } else {
                    Err(Error::Input("field vector is not finite".into()))
                }
            }
            StaticField::Angular {
                amplitude,
                theta,
                class_index,
            } => {
                if !(amplitude >= 0.0) || !amplitude.is_finite() {
                    return Err(Error::Input(format!(
                        "field amplitude must be finite and >= 0, got {amplitude}"
                    )));
                }
                if !(0.0..=std::f64::consts::PI).contains(&theta) {
                    return Err(Error::Input(format!("field angle {theta} rad is outside [0, pi]")));
                }
                let a = params.class_axis(class_index)?;
                let p = params.in_plane_direction(class_index)?;
                Ok((a * theta.cos() + p * theta.sin()) * amplitude)
            }
        }
    }

    /// Amplitude and polar angle relative to the axis of `class_index`.
    ///
    /// Only the polar angle survives; the azimuth about the axis is dropped,
    /// so the conversion is lossless only for fields in the reference plane.
    pub fn to_angular(&self, params: &NvParams, class_index: usize) -> Result<StaticField> {
        let b = self.to_lab(params)?;
        let a = params.class_axis(class_index)?;
        let amplitude = b.norm();
        let theta = if amplitude == 0.0 {
            0.0
        } else {
            (b.dot(&a) / amplitude).clamp(-1.0, 1.0).acos()
        };
        Ok(StaticField::angular(amplitude, theta, class_index))
    }
}

/// Orthonormal class frame expressed in lab coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
}

impl ClassFrame {
    /// Frame with `e1` along the field component transverse to `axis`.
    /// Falls back to `fallback_e1` when the field has no transverse part.
    pub fn aligned(axis: Vector3<f64>, field: Vector3<f64>, fallback_e1: Vector3<f64>) -> Self {
        let e3 = axis;
        let perp = field - e3 * field.dot(&e3);
        let e1 = if perp.norm() > 1e-14 * field.norm().max(f64::MIN_POSITIVE) && perp.norm() > 0.0
        {
            perp.normalize()
        } else {
            let f = fallback_e1 - e3 * fallback_e1.dot(&e3);
            f.normalize()
        };
        let e2 = e3.cross(&e1);
        Self { e1, e2, e3 }
    }

    /// Same frame with `e1`, `e2` rotated by `phi` about `e3`.
    pub fn rotated(&self, phi: f64) -> Self {
        let e1 = self.e1 * phi.cos() + self.e2 * phi.sin();
        let e2 = self.e3.cross(&e1);
        Self { e1, e2, e3: self.e3 }
    }

    pub fn components(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(v.dot(&self.e1), v.dot(&self.e2), v.dot(&self.e3))
    }

    pub fn to_lab(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.e1 * c.x + self.e2 * c.y + self.e3 * c.z
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn spin_x() -> Matrix3<Complex64> {
    let s = c(std::f64::consts::FRAC_1_SQRT_2);
    let z = c(0.0);
    Matrix3::new(z, s, z, s, z, s, z, s, z)
}

pub fn spin_y() -> Matrix3<Complex64> {
    let s = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    let z = c(0.0);
    Matrix3::new(z, -s, z, s, z, -s, z, s, z)
}

pub fn spin_z() -> Matrix3<Complex64> {
    Matrix3::from_diagonal(&Vector3::new(c(1.0), c(0.0), c(-1.0)))
}

fn expectation(v: &Vector3<Complex64>, op: &Matrix3<Complex64>) -> f64 {
    (v.adjoint() * op * v)[(0, 0)].re
}

/// Spin Hamiltonian `H/hbar` of one class, together with the frame it is
/// written in.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    pub matrix: Matrix3<Complex64>,
    pub frame: ClassFrame,
    /// Lab-frame field, Tesla.
    pub field: Vector3<f64>,
    pub class_index: usize,
}

impl Hamiltonian {
    /// `H/hbar = D S_z^2 - gamma_e B.S` with `B` expressed in `frame`.
    pub fn in_frame(
        params: &NvParams,
        field: Vector3<f64>,
        frame: ClassFrame,
        class_index: usize,
    ) -> Self {
        let b = frame.components(&field);
        let g = params.gyromagnetic_ratio;
        let sz = spin_z();
        let matrix = sz * sz * c(params.zero_field_splitting)
            - (spin_x() * c(b.x) + spin_y() * c(b.y) + sz * c(b.z)) * c(g);
        Self {
            matrix,
            frame,
            field,
            class_index,
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.matrix - self.matrix.adjoint()).norm() / self.matrix.norm().max(f64::MIN_POSITIVE)
    }
}

pub fn build_hamiltonian(
    params: &NvParams,
    field: &StaticField,
    class_index: usize,
) -> Result<Hamiltonian> {
    params.validate()?;
    let axis = params.class_axis(class_index)?;
    let b = field.to_lab(params)?;
    let frame = ClassFrame::aligned(axis, b, params.in_plane_direction(class_index)?);
    Ok(Hamiltonian::in_frame(params, b, frame, class_index))
}

/// Eigenstate label: `|0'>`, `|-1'>`, `|+1'>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Eigenstate {
    Zero,
    Minus,
    Plus,
}

impl Eigenstate {
    pub const ALL: [Eigenstate; 3] = [Eigenstate::Zero, Eigenstate::Minus, Eigenstate::Plus];

    pub fn index(self) -> usize {
        match self {
            Eigenstate::Zero => 0,
            Eigenstate::Minus => 1,
            Eigenstate::Plus => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Eigenstate::Zero => "0'",
            Eigenstate::Minus => "-1'",
            Eigenstate::Plus => "+1'",
        }
    }
}

/// Driven transition out of `|0'>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    Minus,
    Plus,
}

impl Transition {
    pub const ALL: [Transition; 2] = [Transition::Minus, Transition::Plus];

    pub fn excited(self) -> Eigenstate {
        match self {
            Transition::Minus => Eigenstate::Minus,
            Transition::Plus => Eigenstate::Plus,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transition::Minus => "minus",
            Transition::Plus => "plus",
        }
    }
}

impl std::str::FromStr for Transition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minus" | "-" | "-1" => Ok(Transition::Minus),
            "plus" | "+" | "+1" => Ok(Transition::Plus),
            other => Err(Error::Input(format!("unknown transition `{other}`"))),
        }
    }
}

/// Labelled eigensystem of one class.
///
/// `energies` and `vectors` are in ascending energy order; the per-label
/// accessors map through the labelling. Moments (J/T) and single-spin
/// torques (N m) are lab-frame vectors indexed by [`Eigenstate::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    pub energies: [f64; 3],
    pub vectors: [Vector3<Complex64>; 3],
    labels: [usize; 3],
    pub moments: [Vector3<f64>; 3],
    pub torques: [Vector3<f64>; 3],
    pub field: Vector3<f64>,
    pub frame: ClassFrame,
    /// Set when a degenerate pair was resolved by diagonalizing `S_z`.
    pub degenerate: bool,
}

impl EigenSolution {
    pub fn position(&self, label: Eigenstate) -> usize {
        self.labels[label.index()]
    }

    pub fn energy(&self, label: Eigenstate) -> f64 {
        self.energies[self.position(label)]
    }

    pub fn vector(&self, label: Eigenstate) -> &Vector3<Complex64> {
        &self.vectors[self.position(label)]
    }

    pub fn moment(&self, label: Eigenstate) -> Vector3<f64> {
        self.moments[label.index()]
    }

    /// Single-spin `mu x B0`.
    pub fn torque(&self, label: Eigenstate) -> Vector3<f64> {
        self.torques[label.index()]
    }
}

/// Diagonalizes `h` and labels the eigenstates.
///
/// Labels follow energy order: `|0'>` is the lowest level, `|-1'>` the
/// middle and `|+1'>` the highest. This is the level ordering reached
/// adiabatically from zero field for any field with a transverse component.
/// Inside a degenerate cluster the vectors are rotated to diagonalize `S_z`
/// and ordered by `|<0|v>|^2` (descending), then `<S_z>` (ascending).
pub fn solve_eigensystem(h: &Hamiltonian, params: &NvParams) -> Result<EigenSolution> {
    if h.hermiticity_error() > 1e-12 {
        return Err(Error::Input(format!(
            "Hamiltonian is not Hermitian (relative error {:e})",
            h.hermiticity_error()
        )));
    }
    let eig = h.matrix.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let energies = order.map(|i| eig.eigenvalues[i]);
    let mut vectors: [Vector3<Complex64>; 3] =
        order.map(|i| eig.eigenvectors.column(i).into_owned());

    let gap = DEGENERACY_GAP * params.zero_field_splitting;
    let mut degenerate = false;
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && energies[end] - energies[end - 1] < gap {
            end += 1;
        }
        if end - start > 1 {
            degenerate = true;
            resolve_cluster(&mut vectors[start..end]);
        }
        start = end;
    }
    for v in vectors.iter_mut() {
        fix_phase(v);
    }

    let sx = spin_x();
    let sy = spin_y();
    let sz = spin_z();
    let labels = [0, 1, 2];
    let scale = HBAR * params.gyromagnetic_ratio;
    let moments = labels.map(|pos| {
        let v = &vectors[pos];
        let s = Vector3::new(expectation(v, &sx), expectation(v, &sy), expectation(v, &sz));
        h.frame.to_lab(&(s * scale))
    });
    let torques = moments.map(|m| m.cross(&h.field));

    Ok(EigenSolution {
        energies,
        vectors,
        labels,
        moments,
        torques,
        field: h.field,
        frame: h.frame,
        degenerate,
    })
}

fn resolve_cluster(vs: &mut [Vector3<Complex64>]) {
    let k = vs.len();
    let sz = spin_z();
    let m = DMatrix::from_fn(k, k, |i, j| (vs[i].adjoint() * sz * vs[j])[(0, 0)]);
    let eig = m.symmetric_eigen();
    let mut rotated: Vec<Vector3<Complex64>> = (0..k)
        .map(|col| {
            let mut w = Vector3::zeros();
            for (i, v) in vs.iter().enumerate() {
                w += v * eig.eigenvectors[(i, col)];
            }
            w.normalize()
        })
        .collect();
    rotated.sort_by(|a, b| {
        let oa = a[1].norm_sqr();
        let ob = b[1].norm_sqr();
        if (oa - ob).abs() > 1e-9 {
            ob.total_cmp(&oa)
        } else {
            expectation(a, &sz).total_cmp(&expectation(b, &sz))
        }
    });
    vs.copy_from_slice(&rotated);
}

/// Makes the largest-magnitude component real and positive.
fn fix_phase(v: &mut Vector3<Complex64>) {
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 + 1e-12 { (i, z.norm()) } else { acc });
    let z = v[imax];
    if z.norm() > 0.0 {
        let phase = z.conj() / z.norm();
        *v *= phase;
    }
}

/// Build and solve in one go.
pub fn solve_class(
    params: &NvParams,
    field: &StaticField,
    class_index: usize,
) -> Result<EigenSolution> {
    let h = build_hamiltonian(params, field, class_index)?;
    solve_eigensystem(&h, params)
}

/// ODMR transition frequencies of one class, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPair {
    /// `|0'> -> |-1'>`.
    pub f_minus: f64,
    /// `|0'> -> |+1'>`.
    pub f_plus: f64,
}

impl TransitionPair {
    pub fn get(&self, t: Transition) -> f64 {
        match t {
            Transition::Minus => self.f_minus,
            Transition::Plus => self.f_plus,
        }
    }
}

pub fn transition_frequencies(sol: &EigenSolution) -> TransitionPair {
    let e0 = sol.energy(Eigenstate::Zero);
    TransitionPair {
        f_minus: (sol.energy(Eigenstate::Minus) - e0) / TWO_PI,
        f_plus: (sol.energy(Eigenstate::Plus) - e0) / TWO_PI,
    }
}

/// Transition pairs of all four classes for one lab field.
pub fn all_transitions(params: &NvParams, field: &StaticField) -> Result<[TransitionPair; 4]> {
    let b = StaticField::Lab(field.to_lab(params)?);
    let mut out = [TransitionPair {
        f_minus: 0.0,
        f_plus: 0.0,
    }; 4];
    for (class, slot) in out.iter_mut().enumerate() {
        *slot = transition_frequencies(&solve_class(params, &b, class)?);
    }
    Ok(out)
}

/// Ensemble torques of the three eigenstates (full population in each).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenstateTorques {
    /// N m, lab frame, indexed by [`Eigenstate::index`].
    pub torques: [Vector3<f64>; 3],
    pub norms: [f64; 3],
    /// Component along `axis`.
    pub projections: [f64; 3],
    pub axis: Vector3<f64>,
}

impl EigenstateTorques {
    pub fn torque(&self, label: Eigenstate) -> Vector3<f64> {
        self.torques[label.index()]
    }

    pub fn norm(&self, label: Eigenstate) -> f64 {
        self.norms[label.index()]
    }

    pub fn projection(&self, label: Eigenstate) -> f64 {
        self.projections[label.index()]
    }
}

/// `tau = N mu x B0` for each eigenstate, plus norms and a projection onto
/// `axis` (normalized here).
pub fn eigenstate_torques(
    sol: &EigenSolution,
    spins: f64,
    axis: &Vector3<f64>,
) -> Result<EigenstateTorques> {
    if !(spins >= 1.0) {
        return Err(Error::Input(format!("spin count must be >= 1, got {spins}")));
    }
    let n = axis.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Input("projection axis must be a non-zero vector".into()));
    }
    let axis = axis / n;
    let torques = sol.torques.map(|t| t * spins);
    Ok(EigenstateTorques {
        torques,
        norms: torques.map(|t| t.norm()),
        projections: torques.map(|t| t.dot(&axis)),
        axis,
    })
}

/// Torque change between full `|0'>` polarization and a 50/50 saturated
/// transition: `N (mu_e - mu_0)/2 x B0`.
pub fn driven_torque_change(
    params: &NvParams,
    field: &StaticField,
    class_index: usize,
    transition: Transition,
) -> Result<Vector3<f64>> {
    let sol = solve_class(params, field, class_index)?;
    Ok(driven_torque_change_of(&sol, params.spins_per_class, transition))
}

pub fn driven_torque_change_of(sol: &EigenSolution, spins: f64, transition: Transition) -> Vector3<f64> {
    let dmu = (sol.moment(transition.excited()) - sol.moment(Eigenstate::Zero)) * 0.5;
    dmu.cross(&sol.field) * spins
}

/// Unit-peak Lorentzian with full width at half maximum `fwhm`.
pub fn lorentzian(f: f64, center: f64, fwhm: f64) -> f64 {
    let x = 2.0 * (f - center) / fwhm;
    1.0 / (1.0 + x * x)
}

/// Photoluminescence `1 - sum contrast L(f)` over the eight transitions of
/// the four classes. `linewidth` is the FWHM in Hz.
pub fn odmr_spectrum(
    params: &NvParams,
    field: &StaticField,
    grid: &[f64],
    contrast: f64,
    linewidth: f64,
) -> Result<SignalTrace> {
    if grid.is_empty() {
        return Err(Error::Input("frequency grid is empty".into()));
    }
    if !(contrast > 0.0 && contrast < 1.0) {
        return Err(Error::Input(format!("contrast must be in (0, 1), got {contrast}")));
    }
    if !(linewidth > 0.0) {
        return Err(Error::Input(format!("linewidth must be positive, got {linewidth}")));
    }
    let pairs = all_transitions(params, field)?;
    let centers: Vec<f64> = pairs.iter().flat_map(|p| [p.f_minus, p.f_plus]).collect();
    let pl = grid
        .iter()
        .map(|&f| 1.0 - centers.iter().map(|&f0| contrast * lorentzian(f, f0, linewidth)).sum::<f64>())
        .collect();
    let mut trace = SignalTrace::new("frequency", "Hz", grid.to_vec())?.with_channel("PL", "a.u.", pl)?;
    let b = field.to_lab(params)?;
    trace.set_meta("field_lab_T", format!("{:e},{:e},{:e}", b.x, b.y, b.z));
    trace.set_meta("contrast", contrast);
    trace.set_meta("linewidth_Hz", linewidth);
    for (i, p) in pairs.iter().enumerate() {
        trace.set_meta(format!("class{i}_f_minus_Hz"), p.f_minus);
        trace.set_meta(format!("class{i}_f_plus_Hz"), p.f_plus);
    }
    Ok(trace)
}
