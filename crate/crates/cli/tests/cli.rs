use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
[array]
elements = 16
spacing = 0.5

[desired_pattern]
theta0_deg = 0.0
half_width_deg = 12.0
level_db = -30.0

[scenario]
interferences = [{ theta_deg = -40.0, inr = 1000.0 }, { theta_deg = 45.0, inr = 1000.0 }]
snapshots = 2000
seed = 3

[solver]
grid_step_deg = 0.1
"#;

const TASKS: &str = r#"
[[task]]
theta_deg = -40.0
level_db = -45.0

[[task]]
theta_deg = 25.0
level_db = -35.0

[[task]]
theta_deg = 50.0
level_db = -30.0
"#;

fn workspace(files: &[(&str, &str)]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in files {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    dir
}

fn oparc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oparc")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn pattern_rows(csv: &str) -> Vec<(f64, f64)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("theta_deg,level_db"));
    lines
        .map(|l| {
            let (t, v) = l.split_once(',').unwrap();
            for field in [t, v] {
                assert_eq!(field.split('.').nth(1).map(str::len), Some(6), "{l}");
            }
            (t.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn synth_writes_pattern_weights_ledger_and_report() {
    let ws = workspace(&[("cfg.toml", CONFIG)]);
    ok(&oparc(ws.path(), &["synth", "--config", "cfg.toml", "--out-dir", "out", "--trace"]));
    let rows = pattern_rows(&read(ws.path(), "out/pattern.csv"));
    assert_eq!(rows.first().unwrap().0, -90.0);
    assert_eq!(rows.last().unwrap().0, 90.0);
    assert!(read(ws.path(), "out/weights.csv").starts_with("index,re,im\n"));
    let r = report(ws.path(), "out/report.json");
    assert_eq!(r["metrics"]["outcome"], "qualified");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    let steps = r["metrics"]["steps"].as_u64().unwrap() as usize;
    assert_eq!(r["traces"].as_array().unwrap().len(), steps);
    for out in r["outputs"].as_array().unwrap() {
        assert!(ws.path().join(out.as_str().unwrap()).exists(), "{out}");
    }
    assert!(ws.path().join("out/pattern_step_001.csv").exists());
    // Sidelobe peaks outside the transition band lie within tolerance of the target.
    for w in rows.windows(3) {
        let (t, l) = w[1];
        if l > w[0].1 && l > w[2].1 && t.abs() >= 14.0 {
            assert!((l + 30.0).abs() <= 0.5, "{l} dB peak at {t}");
        }
    }
}

#[test]
fn runs_are_reproducible_byte_for_byte() {
    let a = workspace(&[("cfg.toml", CONFIG)]);
    let b = workspace(&[("cfg.toml", CONFIG)]);
    for ws in [&a, &b] {
        ok(&oparc(ws.path(), &["synth", "--config", "cfg.toml", "--out-dir", "out"]));
        ok(&oparc(ws.path(), &["sim", "--config", "cfg.toml", "--snapshots", "20", "--seed", "9", "--out", "sim.csv"]));
    }
    for f in ["out/report.json", "out/pattern.csv", "out/weights.csv", "out/ledger.json", "sim.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn solver_flag_selects_cadmm() {
    let cfg = CONFIG.replace("elements = 16", "elements = 10").replace("half_width_deg = 12.0", "half_width_deg = 20.0").replace("-30.0\n\n[scenario]", "-20.0\n\n[scenario]");
    let ws = workspace(&[("cfg.toml", &cfg)]);
    let out = oparc(ws.path(), &["synth", "--config", "cfg.toml", "--out-dir", "out", "--solver", "cadmm"]);
    let r = report(ws.path(), "out/report.json");
    assert_eq!(r["metrics"]["solver"], "cadmm");
    let failed = r["metrics"]["outcome"].as_str().unwrap().starts_with("solver_failed");
    assert_eq!(out.status.success(), !failed);
}

#[test]
fn control_step_meets_every_task() {
    let ws = workspace(&[("cfg.toml", CONFIG), ("tasks.toml", TASKS)]);
    ok(&oparc(ws.path(), &["control", "--config", "cfg.toml", "--tasks", "tasks.toml", "--out-dir", "out"]));
    let r = report(ws.path(), "out/report.json");
    let achieved = r["metrics"]["achieved_levels_db"].as_array().unwrap();
    for (a, t) in achieved.iter().zip([-45.0, -35.0, -30.0]) {
        assert!((a.as_f64().unwrap() - t).abs() < 1e-8);
    }
    assert_eq!(r["metrics"]["converged"], true);
    assert!(r["metrics"]["j_linear"].as_f64().unwrap() > 0.0);
    let ledger: Vec<serde_json::Value> = serde_json::from_str(&read(ws.path(), "out/ledger.json")).unwrap();
    assert_eq!(ledger.len(), 3);
    assert!(ledger.iter().all(|e| e.get("theta_deg").is_some() && e.get("inr_linear").is_some()));
    pattern_rows(&read(ws.path(), "out/pattern_before.csv"));
}

#[test]
fn control_rejects_an_unreachable_level() {
    let tasks = "[[task]]\ntheta_deg = 2.0\nlevel_db = 10.0\n";
    let ws = workspace(&[("cfg.toml", CONFIG), ("tasks.toml", tasks)]);
    let out = oparc(ws.path(), &["control", "--config", "cfg.toml", "--tasks", "tasks.toml", "--out-dir", "out"]);
    assert!(!out.status.success());
    assert!(!ws.path().join("out/report.json").exists());
}

#[test]
fn beamform_meets_null_and_level_constraints() {
    let cons = "[[constraint]]\ntheta_deg = 30.0\nlevel_db = -inf\n\n[[constraint]]\ntheta_deg = -20.0\nlevel_db = -30.0\n";
    let ws = workspace(&[("cfg.toml", CONFIG), ("cons.toml", cons)]);
    ok(&oparc(ws.path(), &["beamform", "--config", "cfg.toml", "--constraints", "cons.toml", "--snapshots", "1000", "--seed", "7", "--out-dir", "out"]));
    let r = report(ws.path(), "out/report.json");
    let levels = r["metrics"]["achieved_levels_db"].as_array().unwrap();
    assert!(levels[0].is_null() || levels[0].as_f64().unwrap() < -150.0);
    assert!((levels[1].as_f64().unwrap() + 30.0).abs() < 1e-6);
    assert!(r["metrics"]["sinr_qcmv_db"].as_f64().unwrap() > 15.0);
    let command: Vec<&str> = r["command"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(command[0], "beamform");
}

#[test]
fn quiescent_design_then_adapt() {
    let ws = workspace(&[("cfg.toml", CONFIG)]);
    ok(&oparc(ws.path(), &["quiescent", "design", "--config", "cfg.toml", "--design", "design.json", "--out-dir", "q"]));
    let design = report(ws.path(), "design.json");
    assert_eq!(design["theta0_deg"], 0.0);
    assert!(design["ledger"].as_array().unwrap().len() > 0);
    ok(&oparc(ws.path(), &["quiescent", "adapt", "--config", "cfg.toml", "--design", "design.json", "--out-dir", "a"]));
    let r = report(ws.path(), "a/report.json");
    for s in r["metrics"]["suppression_db"].as_array().unwrap() {
        assert!(s.as_f64().unwrap() >= 25.0, "{s}");
    }

    let extra = "[[task]]\ntheta_deg = 60.0\nlevel_db = -50.0\n";
    std::fs::write(ws.path().join("extra.toml"), extra).unwrap();
    ok(&oparc(ws.path(), &["quiescent", "adapt", "--config", "cfg.toml", "--design", "design.json", "--out-dir", "e", "--extra-constraints", "extra.toml"]));
    let r = report(ws.path(), "e/report.json");
    assert!((r["metrics"]["extra_levels_db"][0].as_f64().unwrap() + 50.0).abs() < 1e-6);
}

#[test]
fn quiescent_adapt_refuses_a_different_geometry() {
    let ws = workspace(&[("cfg.toml", CONFIG), ("other.toml", &CONFIG.replace("spacing = 0.5", "spacing = 0.45"))]);
    ok(&oparc(ws.path(), &["quiescent", "design", "--config", "cfg.toml", "--design", "design.json", "--out-dir", "q"]));
    let out = oparc(ws.path(), &["quiescent", "adapt", "--config", "other.toml", "--design", "design.json", "--out-dir", "a"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
    assert!(!ws.path().join("a").exists());
}

#[test]
fn sim_writes_requested_snapshots() {
    let ws = workspace(&[("cfg.toml", CONFIG)]);
    ok(&oparc(ws.path(), &["sim", "--config", "cfg.toml", "--snapshots", "5", "--seed", "1", "--out", "x/sim.csv"]));
    let csv = read(ws.path(), "x/sim.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snapshot,element,re,im"));
    assert_eq!(lines.count(), 5 * 16);
    ok(&oparc(ws.path(), &["sim", "--config", "cfg.toml", "--snapshots", "5", "--seed", "2", "--out", "y.csv"]));
    assert_ne!(read(ws.path(), "y.csv"), csv);
}

#[test]
fn malformed_inputs_are_rejected() {
    let ws = workspace(&[
        ("unknown.toml", "[array]\nelements = 8\ncolour = 1\n"),
        ("nodesired.toml", "[array]\nelements = 8\n"),
        ("both.toml", "[array]\nelements = 8\npositions = [[0.0], [0.5]]\n"),
    ]);
    for cfg in ["unknown.toml", "nodesired.toml", "both.toml", "missing.toml"] {
        let out = oparc(ws.path(), &["synth", "--config", cfg, "--out-dir", "o"]);
        assert!(!out.status.success(), "{cfg}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{cfg}");
    }
    assert!(!oparc(ws.path(), &["quiescent", "tune", "--config", "a", "--design", "b", "--out-dir", "c"]).status.success());
}

#[test]
fn meters_and_wavelength_positions_agree() {
    let lambda = 2.997_924_58e8 * 2.0 * std::f64::consts::PI / (6.0 * std::f64::consts::PI * 1e8);
    let pos = |scale: f64| (0..8).map(|i| format!("[{}]", i as f64 * 0.5 * scale)).collect::<Vec<_>>().join(", ");
    let base = "\n[desired_pattern]\ntheta0_deg = 10.0\nhalf_width_deg = 20.0\nlevel_db = -25.0\n";
    let wl = format!("[array]\npositions = [{}]\n{base}", pos(1.0));
    let m = format!("[array]\nunits = \"meters\"\npositions = [{}]\n{base}", pos(lambda));
    let ws = workspace(&[("wl.toml", &wl), ("m.toml", &m)]);
    ok(&oparc(ws.path(), &["synth", "--config", "wl.toml", "--out-dir", "a"]));
    ok(&oparc(ws.path(), &["synth", "--config", "m.toml", "--out-dir", "b"]));
    let a = pattern_rows(&read(ws.path(), "a/pattern.csv"));
    let b = pattern_rows(&read(ws.path(), "b/pattern.csv"));
    for (x, y) in a.iter().zip(&b) {
        assert!((x.1 - y.1).abs() < 1e-4 || x.1 < -100.0, "{x:?} {y:?}");
    }
}
