use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nvtorque::mech::detection_limits;
use nvtorque::nvcore::StaticField;
use nvtorque::signal::fmmdmr_sweep;
use nvtorque::trace::linspace;
use nvtorque_cli::output::read_trace_csv;
use nvtorque_cli::{config_hash, parse_config};

fn tool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvtorque"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "ok.toml", "");
    write(d, "bad.toml", "[cantilever]\nquality_factor = -1\n");
    write(d, "aligned.toml", "[field]\ntheta_deg = 0\n");

    assert_eq!(tool(d, &["sensitivity", "--config", "ok.toml"]).status.code(), Some(0));
    assert_eq!(tool(d, &["wobble", "--config", "ok.toml"]).status.code(), Some(1));
    assert_eq!(tool(d, &["psd"]).status.code(), Some(1));
    assert_eq!(tool(d, &["psd", "--config", "ok.toml", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(tool(d, &["psd", "--config", "ok.toml", "--seed", "-1"]).status.code(), Some(1));
    assert_eq!(tool(d, &["--help"]).status.code(), Some(0));

    let bad = tool(d, &["psd", "--config", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cantilever.quality_factor"));
    assert_eq!(tool(d, &["psd", "--config", "missing.toml"]).status.code(), Some(2));
    assert_eq!(tool(d, &["fit-spins", "--config", "ok.toml"]).status.code(), Some(2));

    // an aligned field gives no transverse force, so the oracle comparison is undefined
    assert_eq!(tool(d, &["oracle-check", "--config", "aligned.toml"]).status.code(), Some(3));
}

#[test]
fn unwritable_output_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "ok.toml", "");
    write(d, "blocker", "a file, not a directory");
    let out = tool(d, &["psd", "--config", "ok.toml", "--out", "blocker/sub"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}

#[test]
fn every_output_embeds_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = "seed = 11\n[sweep]\nabscissa = \"mw_frequency\"\nstart = 2.7e9\nstop = 3.0e9\npoints = 31\n";
    write(d, "run.toml", text);
    let hash = config_hash(&parse_config(text).unwrap());
    for format in ["csv", "json"] {
        for sub in ["odmr", "fmmdmr", "sensitivity"] {
            let out = tool(d, &[sub, "--config", "run.toml", "--format", format, "--out", format]);
            assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        }
        for entry in fs::read_dir(d.join(format)).unwrap() {
            let body = fs::read_to_string(entry.unwrap().path()).unwrap();
            let resolved = if format == "json" {
                parse_config(&text.replace("\n[sweep]", "\n[output]\nformat = \"json\"\n[sweep]")).unwrap()
            } else {
                parse_config(text).unwrap()
            };
            assert!(body.contains(&config_hash(&resolved)));
        }
    }
    assert!(fs::read_to_string(d.join("csv/odmr.csv")).unwrap().contains(&format!("# config_sha256 = {hash}")));
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("csv/odmr.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config_sha256"], hash.as_str());
    assert_eq!(sidecar["files"][0], "odmr.csv");
    assert_eq!(parse_config(sidecar["config"].as_str().unwrap()).unwrap(), parse_config(text).unwrap());
}

#[test]
fn fmmdmr_file_matches_the_library_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", "");
    assert!(tool(d, &["fmmdmr", "--config", "run.toml", "--out", "o"]).status.success());
    let file = read_trace_csv(&fs::read_to_string(d.join("o/fmmdmr.csv")).unwrap()).unwrap();

    let cfg = parse_config("").unwrap();
    let grid = linspace(2.5e9, 3.25e9, 1501);
    assert_eq!(cfg.static_field(), StaticField::angular(0.018, 60f64.to_radians(), 0));
    let lib = fmmdmr_sweep(&cfg.nv_params(), &cfg.static_field(), &cfg.rates(), &cfg.drive(), &cfg.cantilever(), &grid, None).unwrap();
    assert_eq!(file.grid(), &grid[..]);
    for name in ["X", "Y"] {
        let a = file.channel(name).unwrap();
        let b = lib.channel(name).unwrap();
        assert!(a.iter().zip(b).all(|(u, v)| u == v), "{name}");
    }
    assert_eq!(file.abscissa.unit, "Hz");
}

#[test]
fn sensitivity_prints_the_detection_limits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.toml", "[cantilever]\ntemperature_k = 4.2\n");
    let out = tool(d, &["sensitivity", "--config", "run.toml", "--out", "o"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let (f_min, tau_min) = detection_limits(&parse_config("[cantilever]\ntemperature_k = 4.2\n").unwrap().cantilever());
    assert!(stdout.contains(&format!("F_min = {f_min:e} N/sqrt(Hz)")), "{stdout}");
    assert!(stdout.contains(&format!("tau_min = {tau_min:e} N m/sqrt(Hz)")), "{stdout}");
}

#[test]
fn torque_map_feeds_the_spin_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "map.toml", "[nv]\nspins_per_class = 2e9\n[sweep]\nabscissa = \"field\"\nstart = 5\nstop = 20\npoints = 16\n");
    assert!(tool(d, &["torque-map", "--config", "map.toml", "--out", "data"]).status.success());
    write(d, "fit.toml", "[field]\ntheta_deg = 60\n[fit]\ndata = \"data/torque-map.csv\"\nchannel = \"dtau_minus\"\n");
    let out = tool(d, &["fit-spins", "--config", "fit.toml", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(d.join("o/fit-spins.csv")).unwrap();
    let values = body.lines().last().unwrap();
    let n_fit: f64 = values.split(',').next().unwrap().parse().unwrap();
    assert!((n_fit / 2e9 - 1.0).abs() < 1e-9, "{n_fit}");
}

#[test]
fn non_converged_field_fit_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "fit.toml", "[fit]\nf_minus_hz = 1e6\nf_plus_hz = 9e11\n");
    let out = tool(d, &["fit-field", "--config", "fit.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(d.join("o/fit-field.csv").exists());
}
