//! End-to-end runs of the `serfloop` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn serfloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serfloop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_config(command: &str, toml: &str, dir: &Path) -> (Output, PathBuf) {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.join("out");
    let o = serfloop(&[command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

fn run_preset(command: &str, preset: &str, out: &Path) -> Output {
    serfloop(&[command, "--preset", preset, "--out", out.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn assert_success(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

const LOOP_BLOCK: &str = r#"
[loop]
k_pid = 162.0
t_i_s = 111e-6
t_d_s = 28e-6
vccs_corner_hz = 10.5e3
amplifier_corner_hz = 100e3
transformer_damping = 110.9
transformer_omega_rad_per_s = 27.8
t_m_s = 1.1e-3
bode_ideal_pid = true
"#;

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_config("sql", "scenario = \"sql\"\n[magnetometer]\nwarp_factor = 9.0\n", dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("warp_factor"));
}

#[test]
fn scenario_must_match_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_preset("bode", "sql", &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn first_order_plant_cannot_be_tuned() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_preset("tune", "tune-first-order", &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("NoPhaseCrossover"), "{}", stderr(&o));
}

#[test]
fn third_order_tuning_reports_gain_and_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_success(&run_preset("tune", "tune-third-order", &out));
    let t = json(&out.join("tune.json"));
    assert!((t["k_u"].as_f64().unwrap() - 8.0).abs() < 1e-6);
    assert!((t["omega_180_rad_per_s"].as_f64().unwrap() - 3f64.sqrt()).abs() < 1e-6);
}

#[test]
fn empty_frequency_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("scenario = \"bode_closed\"\n{LOOP_BLOCK}points = 0\n");
    let (o, _) = run_config("bode", &toml, dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn zero_sweep_gives_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "scenario = \"dc_response\"\n[magnetometer]\nsweep_amplitude_t = 0.0\n";
    let (o, out) = run_config("dc-response", toml, dir.path());
    assert_success(&o);
    let csv = std::fs::read_to_string(out.join("dc_response.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
}

fn strip_phase(csv: &str) -> String {
    csv.lines()
        .map(|l| l.splitn(3, ',').take(2).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn thin(csv: &str, step: usize) -> String {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().to_string();
    std::iter::once(header)
        .chain(lines.step_by(step).map(str::to_string))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn fit_accepts_magnitude_only_files() {
    let dir = tempfile::tempdir().unwrap();
    let bode_dir = dir.path().join("bode");
    std::fs::create_dir(&bode_dir).unwrap();
    let toml = format!("scenario = \"bode_open\"\n{LOOP_BLOCK}f_min_hz = 0.005\nf_max_hz = 2e5\npoints = 401\n");
    let (o, bode_out) = run_config("bode", &toml, &bode_dir);
    assert_success(&o);
    for name in ["bode_open", "bode_closed"] {
        let csv = std::fs::read_to_string(bode_out.join(format!("{name}.csv"))).unwrap();
        std::fs::write(dir.path().join(format!("{name}.csv")), strip_phase(&thin(&csv, 4))).unwrap();
    }
    let toml = format!(
        "scenario = \"fit\"\n{LOOP_BLOCK}\n[sysid]\nopen_csv = \"bode_open.csv\"\nclosed_csv = \"bode_closed.csv\"\nrestarts = 10\n"
    );
    let (o, out) = run_config("fit", &toml, dir.path());
    assert_success(&o);
    let fit = json(&out.join("fit.json"));
    assert_eq!(fit["source"], "files");
    for p in fit["phase_columns"].as_array().unwrap() {
        assert_eq!(p["has_phase"], false);
    }
    for (name, want) in [("d_t", 110.9), ("omega_t", 27.8), ("t_m", 1.1e-3)] {
        let got = fit["parameters"][name].as_f64().unwrap_or_else(|| panic!("missing {name}: {}", fit["parameters"]));
        assert!((got / want - 1.0).abs() < 0.02, "{name}: {got} vs {want}");
    }
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("open.csv"),
        "frequency_hz,magnitude,phase_rad\n1.0,2.0,0.1\n2.0,abc,0.2\n",
    )
    .unwrap();
    let toml = format!("scenario = \"fit\"\n{LOOP_BLOCK}\n[sysid]\nopen_csv = \"open.csv\"\n");
    let (o, _) = run_config("fit", &toml, dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("open.csv") && msg.contains('3'), "{msg}");
}

#[test]
fn doubling_probe_volume_lowers_sql_by_root_two() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base");
    assert_success(&run_preset("sql", "sql", &base));
    let toml = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/presets/sql.toml"))
        .unwrap()
        .replace("probe_volume_m3 = 1e-6", "probe_volume_m3 = 2e-6");
    let (o, doubled) = run_config("sql", &toml, dir.path());
    assert_success(&o);
    let a = json(&base.join("sql.json"))["asd_tesla_per_rthz"].as_f64().unwrap();
    let b = json(&doubled.join("sql.json"))["asd_tesla_per_rthz"].as_f64().unwrap();
    assert!((a / b - 2f64.sqrt()).abs() < 1e-9, "{a} {b}");
}

#[test]
fn quantum_only_floor_reaches_sql() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_success(&run_preset("sensitivity", "sensitivity-quantum", &out));
    let s = json(&out.join("summary.json"));
    let ratio = s["floor_over_sql"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.1, "floor/SQL {ratio}");
}

#[test]
fn every_csv_has_sidecar_and_manifest_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_success(&run_preset("bode", "bode-closed", &out));
    let manifest = json(&out.join("manifest.json"));
    let listed: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap().to_string())
        .collect();
    assert!(listed.contains(&"summary.json".to_string()));
    let mut csvs = 0;
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name == "manifest.json" {
            continue;
        }
        assert!(listed.contains(&name), "{name} not in manifest");
        if let Some(stem) = name.strip_suffix(".csv") {
            csvs += 1;
            let meta = json(&out.join(format!("{stem}.meta.json")));
            assert_eq!(meta["file"], name.as_str());
        }
    }
    assert!(csvs >= 3);
    for f in manifest["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}
