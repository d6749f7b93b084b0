use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcw"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENARIO: &str = r#"
seed = 3
[[emitter]]
id = "fast"
wavelength_nm = 981.0
lattice_nm = 256.0
rates = [1.34, 0.05]

[[emitter]]
id = "slow"
wavelength_nm = 1012.0
lattice_nm = 256.0
rates = [0.05]
"#;

const QUICK: &str = r#"
[geometry]
n_rows = 7

[solver]
bulk_cutoff = 6
supercell_cutoff = 5
bulk_k_per_segment = 8
waveguide_k_uniform = 16
waveguide_k_cluster = 6

[emission]
n_points = 40
"#;

fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let config = dir.join("quick.toml");
    std::fs::write(&config, QUICK).unwrap();
    (scenario, config)
}

#[test]
fn synth_fit_analyze_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (scenario, config) = setup(tmp.path());
    let data = tmp.path().join("data");
    let o = pcw(&["synth", s(&scenario), "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed 3"));
    assert!(data.join("fast.csv").exists() && data.join("slow.json").exists());

    let o = pcw(&["fit", s(&data.join("fast.csv"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rate = v["rate_ns"].as_f64().unwrap();
    assert!((rate - 1.34).abs() < 0.07, "{rate}");

    let out = tmp.path().join("report");
    let o = pcw(&[
        "analyze",
        s(&data),
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--seed",
        "3",
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "rates.csv", "theory.csv", "rates.svg", "beta.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seed"], 3);
    assert!(report["provenance"]["config_toml"]
        .as_str()
        .unwrap()
        .contains("n_rows = 7"));
}

#[test]
fn bands_and_emission_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = setup(tmp.path());
    let out = tmp.path().join("bands");
    let o = pcw(&["bands", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bulk = std::fs::read_to_string(out.join("bulk_bands.csv")).unwrap();
    assert!(bulk.starts_with("kx_a_2pi,ky_a_2pi,band_index,nu"));
    assert_eq!(bulk.lines().count(), 1 + 25 * 6);
    assert!(out.join("w1_bands.csv").exists() && out.join("guided_mode.csv").exists());

    let out = tmp.path().join("emission");
    let o = pcw(&["emission", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let theory = std::fs::read_to_string(out.join("theory.csv")).unwrap();
    assert_eq!(theory.lines().count(), 41);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("theory.json")).unwrap()).unwrap();
    let [lo, hi] = [0, 1].map(|i| summary["band_edge_interval"][i].as_f64().unwrap());
    let edge = summary["band_edge"].as_f64().unwrap();
    assert!(lo < edge && edge < hi);
}

#[test]
fn config_errors_carry_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[geometry]\nlattice_nm = 256.0\nr_over_a = 0.5\n").unwrap();
    let o = pcw(&["emission", "--config", s(&bad), "--out", s(tmp.path())]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");
    assert!(err.contains("r_over_a"), "{err}");
}

#[test]
fn empty_campaign_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = pcw(&["analyze", s(&empty), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}
