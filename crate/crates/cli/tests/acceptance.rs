//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nvtorque::inverse::{fit_field_from_dips, fit_polarized_spins, SpinModel};
use nvtorque::mech::{added_mass, detection_limits, thermal_rms, CantileverParams};
use nvtorque::nvcore::{
    self, eigenstate_torques, odmr_spectrum, solve_class, Eigenstate, NvParams, StaticField, Transition,
};
use nvtorque::signal::{
    background_subtraction, fmmdmr_sweep, power_scan, quadratures_at_resonance, time_domain_quadratures,
    torque_map, transition_force, DriveConfig, RabiDrive, SpuriousBackground, TimeDomainOptions, TorqueSweep,
};
use nvtorque::spindyn::{integrate_bloch, max_bloch_step, steady_state, DetuningWaveform, RateSet, TwoLevelState};
use nvtorque::trace::linspace;
use nvtorque::{SignalTrace, Vector3, BOLTZMANN, HBAR, TWO_PI};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn base_rates() -> RateSet {
    RateSet {
        gamma1: TWO_PI * 1e3,
        gamma2_star: TWO_PI * 5e6,
        gamma_las: TWO_PI * 1e3,
        omega: TWO_PI * 1e6,
        delta: TWO_PI * 5e6,
    }
}

fn regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn added_mass_ratio() -> Outcome {
    let me = CantileverParams::default().me;
    let ratio = added_mass(14_480.0, 2_860.0, me).unwrap() / me;
    let oracle = (14_480.0f64 / 2_860.0).powi(2) - 1.0;
    let ok = rel(ratio, 24.63) <= 0.005 && rel(ratio, oracle) <= 1e-12;
    (ok, format!("m_add/me = {ratio:.4} (target 24.63 +- 0.5%)"))
}

fn sensitivities() -> Outcome {
    let p = CantileverParams::default();
    let (f_min, tau_min) = detection_limits(&p);
    let formula = (4.0 * BOLTZMANN * p.temperature * p.km / (std::f64::consts::PI * p.q * p.fm)).sqrt();
    let two_digits = (f_min / 1e-15).round() / 10.0;
    let ok = rel(f_min, formula) <= 0.01
        && two_digits == 1.9
        && (0.5..=2.0).contains(&(f_min / 1e-14))
        && rel(tau_min, f_min * p.le) <= 1e-12
        && (0.25..=4.0).contains(&(tau_min / 1e-18));
    (ok, format!("F_min = {f_min:.3e} N/sqrt(Hz), tau_min = {tau_min:.3e} N m/sqrt(Hz)"))
}

fn thermal_amplitude() -> Outcome {
    let p = CantileverParams::default();
    let x = thermal_rms(&p);
    let formula = (BOLTZMANN * p.temperature / p.km).sqrt();
    let ok = rel(x, formula) <= 0.01 && rel(x, 0.37e-9) <= 0.01 && rel(x, 0.4e-9) <= 0.10;
    (ok, format!("x_rms = {:.4} nm", x * 1e9))
}

fn torque_algebra() -> Outcome {
    let p = NvParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sum, mut worst_perp) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let ct: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..TWO_PI);
        let st = (1.0 - ct * ct).sqrt();
        let b = Vector3::new(st * phi.cos(), st * phi.sin(), ct) * rng.random_range(0.0..0.5);
        let class = rng.random_range(0..4);
        let sol = solve_class(&p, &StaticField::Lab(b), class).unwrap();
        let scale = HBAR * p.gyromagnetic_ratio.abs() * b.norm();
        if scale == 0.0 {
            continue;
        }
        let sum: Vector3<f64> = Eigenstate::ALL.iter().map(|&l| sol.torque(l)).sum();
        worst_sum = worst_sum.max(sum.norm() / scale);
        for l in Eigenstate::ALL {
            worst_perp = worst_perp.max(sol.torque(l).dot(&b.normalize()).abs() / scale);
        }
    }
    (
        worst_sum <= 1e-12 && worst_perp <= 1e-12,
        format!("max |sum tau| = {worst_sum:.1e}, max |tau.B| = {worst_perp:.1e} (relative, 1000 fields)"),
    )
}

fn driven_change_magnitude() -> Outcome {
    let p = NvParams::default();
    let at = |b: f64, t: Transition| {
        nvcore::driven_torque_change(&p, &StaticField::angular(b, 60f64.to_radians(), 0), 0, t)
            .unwrap()
            .norm()
    };
    let d10 = at(0.010, Transition::Minus);
    let (m18, p18) = (at(0.018, Transition::Minus), at(0.018, Transition::Plus));
    let ok = (3e-16..=3e-15).contains(&d10) && m18 > p18;
    (ok, format!("|dtau| = {d10:.3e} N m at 10 mT; minus {m18:.3e} > plus {p18:.3e} at 18 mT"))
}

fn asymptotics() -> Outcome {
    let p = NvParams::default();
    let theta = 60f64.to_radians();
    let axis = p.projection_axis(0).unwrap();
    let at = |b: f64| {
        let sol = solve_class(&p, &StaticField::angular(b, theta, 0), 0).unwrap();
        eigenstate_torques(&sol, p.spins_per_class, &axis).unwrap()
    };
    let hi = at(0.3);
    let half = hi.norm(Eigenstate::Minus) / 2.0;
    let (r0, rp) = (hi.norm(Eigenstate::Zero) / half, hi.norm(Eigenstate::Plus) / half);
    let scale = hi.norm(Eigenstate::Minus) / (HBAR * p.spins_per_class * p.zero_field_splitting);
    let (lo1, lo2) = (at(1e-4), at(1e-3));
    let slope = |l: Eigenstate| (lo2.norm(l) / lo1.norm(l)).log10();
    let (s0, sm, sp) = (slope(Eigenstate::Zero), slope(Eigenstate::Minus), slope(Eigenstate::Plus));
    let ok = (r0 - 1.0).abs() <= 0.25
        && (rp - 1.0).abs() <= 0.25
        && (1.0 / 3.0..=3.0).contains(&scale)
        && (s0 - 2.0).abs() <= 0.1
        && (sm - 1.0).abs() <= 0.1
        && (sp - 1.0).abs() <= 0.1;
    (
        ok,
        format!(
            "0.3 T: |tau_0|, |tau_+1| = {r0:.3}, {rp:.3} x |tau_-1|/2, |tau_-1|/(hbar N D) = {scale:.3}; \
             slopes 0: {s0:.3}, -1: {sm:.3}, +1: {sp:.3}"
        ),
    )
}

fn stationary_state_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g2 = TWO_PI * rng.random_range(2e6..8e6);
        let r = RateSet {
            gamma1: TWO_PI * rng.random_range(0.5e3..5e3),
            gamma2_star: g2,
            gamma_las: TWO_PI * rng.random_range(0.5e3..5e3),
            omega: TWO_PI * rng.random_range(1e6..3e6),
            delta: g2,
        };
        // stationary values from the blue-side closed forms
        let g0 = r.omega * r.omega / (2.0 * g2);
        let gt = r.gamma1 + r.gamma_las + g0;
        let ee = 0.5 * (1.0 - r.gamma_las / gt);
        let eg = nvtorque::Complex64::new(-1.0, 1.0) / 2.0 * (r.omega / (2.0 * g2)) * (2.0 * ee - 1.0);
        let s = steady_state(&r).unwrap();
        let wf = DetuningWaveform::Constant(g2);
        let traj =
            integrate_bloch(&r, &wf, TwoLevelState::ground(), (0.0, 40.0 / gt), max_bloch_step(&r, &wf), usize::MAX)
                .unwrap();
        let end = traj.last();
        worst = worst
            .max((end.rho_ee - ee).abs())
            .max((end.rho_eg - eg).norm())
            .max((s.rho_ee - ee).abs())
            .max((s.rho_eg - eg).norm());
    }
    (worst <= 1e-6, format!("max terminal deviation {worst:.2e} over 100 rate sets"))
}

fn linear_response_oracle() -> Outcome {
    let nv = NvParams::default();
    let cant = CantileverParams::default();
    let r = base_rates();
    let drive = DriveConfig {
        fm_depth: r.gamma2_star / (TWO_PI * 100.0),
        ..DriveConfig::new(&cant)
    };
    let sol = solve_class(&nv, &StaticField::angular(0.018, 60f64.to_radians(), 0), 0).unwrap();
    let f_y = transition_force(&sol, Transition::Minus, nv.spins_per_class, &nv.projection_axis(0).unwrap(), cant.le);
    let lin = quadratures_at_resonance(&r, &drive, f_y, &cant).unwrap();
    let td = time_domain_quadratures(&r, &drive, f_y, &cant, &TimeDomainOptions::default()).unwrap();
    let (ex, ey) = (rel(td.x, lin.x), rel(td.y, lin.y));
    (ex <= 0.02 && ey <= 0.02, format!("X off by {:.3}%, Y off by {:.3}%", 100.0 * ex, 100.0 * ey))
}

fn quadrature_ratio() -> Outcome {
    let cant = CantileverParams::default();
    let drive = DriveConfig::new(&cant);
    let wm = cant.omega_m();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = RateSet {
            gamma1: rng.random_range(1e2..1e5),
            gamma2_star: rng.random_range(1e6..1e8),
            gamma_las: rng.random_range(1e2..1e5),
            omega: rng.random_range(1e5..1e8),
            delta: 0.0,
        };
        let q = quadratures_at_resonance(&r, &drive, 1e-12, &cant).unwrap();
        let gt = r.gamma1 + r.gamma_las + r.omega * r.omega / (2.0 * r.gamma2_star);
        worst = worst.max(rel(q.y / q.x, gt / wm));
    }
    let r = base_rates();
    let grid = linspace(0.0, TWO_PI * 10e6, 50);
    let scan = power_scan(&r, &drive, &grid, 1e-12, &cant).unwrap();
    let xs: Vec<f64> = grid.iter().map(|w| w * w).collect();
    let (slope, r2) = regression(&xs, scan.channel("ratio").unwrap());
    let e_slope = rel(slope, 1.0 / (2.0 * r.gamma2_star * wm));
    let ok = worst <= 1e-12 && e_slope <= 1e-3 && r2 > 0.999;
    (ok, format!("Y/X error {worst:.1e}; slope error {:.3}%, R^2 = {r2:.6}", 100.0 * e_slope))
}

fn sweep_x(nv: &NvParams, field: &StaticField, omega: f64, grid: &[f64]) -> Vec<f64> {
    let cant = CantileverParams::default();
    let drive = DriveConfig {
        rabi: RabiDrive::Omega(omega),
        ..DriveConfig::new(&cant)
    };
    let t = fmmdmr_sweep(nv, field, &base_rates(), &drive, &cant, grid, None).unwrap();
    t.channel("X").unwrap().to_vec()
}

fn line_shapes() -> Outcome {
    let nv = NvParams::default();
    let field = StaticField::angular(0.018, 60f64.to_radians(), 0);
    let pairs = nvcore::all_transitions(&nv, &field).unwrap();

    // a weak drive keeps the lines unsaturated so that every one is resolved
    let weak = TWO_PI * 0.1e6;
    let mut crossings_ok = true;
    let mut flips_ok = true;
    for p in &pairs {
        let mut lobes = Vec::new();
        for t in Transition::ALL {
            let f0 = p.get(t);
            let x = sweep_x(&nv, &field, weak, &linspace(f0 - 2e6, f0 + 2e6, 401));
            crossings_ok &= x.windows(2).any(|w| w[0] * w[1] <= 0.0);
            lobes.push(sweep_x(&nv, &field, weak, &[f0 - 5e6])[0]);
        }
        flips_ok &= lobes[0] * lobes[1] < 0.0;
    }

    let peak = |deg: f64| {
        let field = StaticField::angular(0.018, deg.to_radians(), 0);
        let p = nvcore::all_transitions(&nv, &field).unwrap()[0];
        [p.f_minus, p.f_plus]
            .iter()
            .flat_map(|&f0| sweep_x(&nv, &field, TWO_PI * 1e6, &linspace(f0 - 20e6, f0 + 20e6, 801)))
            .fold(0.0f64, |a, v| a.max(v.abs()))
    };
    let null = peak(1.0) / peak(60.0);

    let fields = linspace(5e-3, 20e-3, 16);
    let map = torque_map(&nv, 0, TorqueSweep::Field { theta: 70f64.to_radians() }, &fields).unwrap();
    let (_, r2) = regression(&fields, map.channel("dtau_minus").unwrap());

    let ok = crossings_ok && flips_ok && null < 0.05 && r2 > 0.99;
    (
        ok,
        format!(
            "zero crossings {crossings_ok}, sign flips {flips_ok}, 1deg/60deg peak = {null:.4}, torque-vs-B R^2 = {r2:.5}"
        ),
    )
}

fn power_scan_maximum() -> Outcome {
    let cant = CantileverParams::default();
    let grid = linspace(0.0, TWO_PI * 10e6, 50);
    let scan = power_scan(&base_rates(), &DriveConfig::new(&cant), &grid, 1e-12, &cant).unwrap();
    let x = scan.channel("X").unwrap();
    let imax = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
    let ok = imax > 0 && imax < x.len() - 1;
    (ok, format!("X peaks at Omega/2pi = {:.2} MHz (index {imax} of 50)", grid[imax] / TWO_PI / 1e6))
}

fn inverse_fits() -> Outcome {
    let p = NvParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_b, mut worst_t) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let b = rng.random_range(1e-3..0.1);
        let theta = rng.random_range(2f64..88.0).to_radians();
        let sol = solve_class(&p, &StaticField::angular(b, theta, 0), 0).unwrap();
        let tp = nvcore::transition_frequencies(&sol);
        let fit = fit_field_from_dips(tp.f_minus, tp.f_plus, &p, 0, 1e3).unwrap();
        worst_b = worst_b.max(rel(fit.b0, b));
        worst_t = worst_t.max((fit.theta - theta).abs().to_degrees());
    }

    let model = SpinModel::new(p.clone(), 0, Transition::Minus, TorqueSweep::Field { theta: 70f64.to_radians() }).unwrap();
    let grid = linspace(0.005, 0.02, 16);
    let per_spin = model.per_spin(&grid).unwrap();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_n = 0.0f64;
    for _ in 0..20 {
        let data: Vec<f64> = per_spin.iter().map(|m| 5e9 * m * (1.0 + noise.sample(&mut rng))).collect();
        let trace = SignalTrace::new("field", "T", grid.clone()).unwrap().with_channel("tau", "N m", data).unwrap();
        let fit = fit_polarized_spins(&trace, "tau", &model).unwrap();
        worst_n = worst_n.max(rel(fit.n_fit, 5e9));
    }
    let ok = worst_b <= 1e-3 && worst_t <= 0.1 && worst_n <= 0.03;
    (
        ok,
        format!(
            "B0 error {:.2e}%, theta error {worst_t:.2e} deg (500 points); N_fit error {:.2}% (20 noisy sets)",
            100.0 * worst_b,
            100.0 * worst_n
        ),
    )
}

fn odmr_structure() -> Outcome {
    let p = NvParams::default();
    let grid = linspace(2.2e9, 3.55e9, 27_001);
    let minima = |field: StaticField| {
        let t = odmr_spectrum(&p, &field, &grid, 0.015, 5e6).unwrap();
        t.channel("PL").unwrap().windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
    };
    let generic = minima(StaticField::angular(0.018, 25f64.to_radians(), 0));
    let zero = minima(StaticField::Lab(Vector3::zeros()));
    (generic == 8 && zero == 1, format!("{generic} minima at 18 mT, {zero} at zero field"))
}

fn background_removal() -> Outcome {
    let nv = NvParams::default();
    let cant = CantileverParams::default();
    let drive = DriveConfig::new(&cant);
    let field = StaticField::angular(0.018, 60f64.to_radians(), 0);
    let grid = linspace(2.6e9, 3.2e9, 1201);
    let bg = SpuriousBackground {
        x_amplitude: 1e-11,
        y_amplitude: 5e-11,
        seed: 42,
    };
    let lit = base_rates();
    let dark = RateSet { gamma_las: 0.0, ..lit };
    let on = fmmdmr_sweep(&nv, &field, &lit, &drive, &cant, &grid, Some(&bg)).unwrap();
    let off = fmmdmr_sweep(&nv, &field, &dark, &drive, &cant, &grid, Some(&bg)).unwrap();
    let spin = fmmdmr_sweep(&nv, &field, &lit, &drive, &cant, &grid, None).unwrap();
    let diff = background_subtraction(&on, &off).unwrap();
    let mut worst = 0.0f64;
    for name in ["X", "Y"] {
        let truth = spin.channel(name).unwrap();
        let scale = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in diff.channel(name).unwrap().iter().zip(truth) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let peak = |t: &SignalTrace| t.channel("X").unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dark_only = fmmdmr_sweep(&nv, &field, &dark, &drive, &cant, &grid, None).unwrap();
    let dark_ratio = peak(&dark_only) / peak(&spin);
    (
        worst <= 1e-12 && dark_ratio < 1e-3,
        format!("recovery error {worst:.1e}, laser-off/on peak = {dark_ratio:.1e}"),
    )
}

fn run_all(dir: &Path, out: &str) -> Vec<(String, Vec<u8>)> {
    let subs = [
        "odmr",
        "torque-map",
        "fmmdmr",
        "quadratures",
        "power-scan",
        "psd",
        "fit-field",
        "sensitivity",
        "oracle-check",
    ];
    for format in ["csv", "json"] {
        for sub in subs {
            let status = Command::new(env!("CARGO_BIN_EXE_nvtorque"))
                .current_dir(dir)
                .args([sub, "--config", "run.toml", "--seed", "42", "--format", format, "--out", out])
                .output()
                .unwrap()
                .status;
            assert!(status.success(), "{sub} --format {format} exited with {status}");
        }
    }
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join(out))
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[background]\nenabled = true\n").unwrap();
    let first = run_all(dir.path(), "first");
    let second = run_all(dir.path(), "second");
    let ok = first.len() == 36 && first == second;
    (ok, format!("{} files over 9 subcommands in 2 formats, identical: {}", first.len(), first == second))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 15] = [
        ("added mass", added_mass_ratio),
        ("sensitivities", sensitivities),
        ("thermal rms", thermal_amplitude),
        ("torque algebra", torque_algebra),
        ("driven torque magnitude", driven_change_magnitude),
        ("torque asymptotics", asymptotics),
        ("stationary-state oracle", stationary_state_oracle),
        ("linear-response oracle", linear_response_oracle),
        ("quadrature ratio", quadrature_ratio),
        ("line-shape structure", line_shapes),
        ("power scan maximum", power_scan_maximum),
        ("inverse fits", inverse_fits),
        ("ODMR structure", odmr_structure),
        ("background subtraction", background_removal),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.2} s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
