use std::path::Path;

use pcw_pipeline::config::Config;
use pcw_pipeline::report::{analyze, emit_report, CampaignReport};
use pcw_pipeline::synth::{synthesize_campaign, Scenario};

fn scenario() -> Scenario {
    toml::from_str(
        r#"
        [[emitter]]
        id = "a<&>"
        wavelength_nm = 990.0
        lattice_nm = 256.0
        rates = [0.12]

        [[emitter]]
        id = "b"
        wavelength_nm = 1000.0
        lattice_nm = 256.0
        rates = [0.18]

        [[emitter]]
        id = "c"
        wavelength_nm = 984.0
        lattice_nm = 256.0
        rates = [1.2, 0.05]

        [[emitter]]
        id = "d"
        wavelength_nm = 975.0
        lattice_nm = 256.0
        rates = [0.9, 0.05]
        "#,
    )
    .unwrap()
}

fn quick_config(theory: bool) -> Config {
    let mut cfg = Config::default();
    cfg.solver.enabled = theory;
    cfg.geometry.n_rows = 7;
    cfg.solver.bulk_cutoff = 6;
    cfg.solver.supercell_cutoff = 5;
    cfg.solver.bulk_k_per_segment = 8;
    cfg.solver.waveguide_k_uniform = 16;
    cfg.solver.waveguide_k_cluster = 6;
    cfg.emission.n_points = 60;
    cfg
}

fn campaign(dir: &Path, cfg: &Config) -> CampaignReport {
    let data = dir.join("data");
    synthesize_campaign(&scenario(), cfg, 5, &data).unwrap();
    analyze(&data, cfg, Some(5)).unwrap()
}

fn count_class(doc: &roxmltree::Document, class: &str) -> usize {
    doc.descendants()
        .filter(|n| {
            n.attribute("class")
                .is_some_and(|c| c.split_whitespace().any(|w| w == class))
        })
        .count()
}

#[test]
fn report_round_trips_and_files_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(true);
    let report = campaign(tmp.path(), &cfg);
    let out = tmp.path().join("out");
    let files = emit_report(&report, &out).unwrap();
    assert_eq!(files.len(), 5);

    let back = CampaignReport::load(&out.join("report.json")).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.provenance.config, cfg);
    assert_eq!(
        Config::from_toml_str(&back.provenance.config_toml, Path::new("embedded")).unwrap(),
        cfg
    );

    let csv = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.records.len() + 1);
    assert!(csv.contains("\"a<&>\"") || csv.contains("a<&>"));
    let theory = std::fs::read_to_string(out.join("theory.csv")).unwrap();
    assert_eq!(theory.lines().count(), 61);

    assert_eq!(report.records.iter().filter(|r| r.coupled).count(), 2);
    let mean = report.gamma_tot_mean.unwrap();
    assert!((mean - 0.15).abs() < 0.01, "{mean}");
    for r in &report.records {
        assert_eq!(r.beta.is_some(), r.coupled);
        assert!((r.scaled_freq - r.lattice_nm / r.wavelength_nm).abs() < 1e-15);
    }
}

#[test]
fn svg_plots_parse_with_one_marker_per_record() {
    let tmp = tempfile::tempdir().unwrap();
    let report = campaign(tmp.path(), &quick_config(true));
    let out = tmp.path().join("out");
    emit_report(&report, &out).unwrap();

    let rates = std::fs::read_to_string(out.join("rates.svg")).unwrap();
    let doc = roxmltree::Document::parse(&rates).unwrap();
    assert_eq!(count_class(&doc, "record"), report.records.len());
    assert_eq!(count_class(&doc, "coupled"), 2);
    assert_eq!(count_class(&doc, "band-edge"), 1);
    assert_eq!(count_class(&doc, "gamma-tot-mean"), 1);
    assert!(count_class(&doc, "theory") >= 1);
    assert!(
        doc.descendants()
            .any(|n| n.text() == Some("a<&>: a/λ 0.25859, Γ 0.1224 ns⁻¹"))
            || rates.contains("a&lt;&amp;&gt;")
    );

    let beta = std::fs::read_to_string(out.join("beta.svg")).unwrap();
    let doc = roxmltree::Document::parse(&beta).unwrap();
    let with_beta = report.records.iter().filter(|r| r.beta.is_some()).count();
    assert_eq!(count_class(&doc, "record"), with_beta);
    assert_eq!(count_class(&doc, "beta-threshold"), 1);
}

#[test]
fn analysis_without_theory_skips_theory_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let report = campaign(tmp.path(), &quick_config(false));
    assert!(report.theory.is_none() && report.theory_curve.is_empty());
    let out = tmp.path().join("out");
    let files = emit_report(&report, &out).unwrap();
    assert_eq!(files.len(), 4);
    assert!(!out.join("theory.csv").exists());
    let doc_text = std::fs::read_to_string(out.join("rates.svg")).unwrap();
    let doc = roxmltree::Document::parse(&doc_text).unwrap();
    assert_eq!(count_class(&doc, "record"), 4);
    assert_eq!(count_class(&doc, "band-edge"), 0);
}

#[test]
fn malformed_files_are_listed_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(false);
    let data = tmp.path().join("data");
    synthesize_campaign(&scenario(), &cfg, 5, &data).unwrap();
    std::fs::write(data.join("broken.csv"), "time_ps,counts\n0,1\n50,-2\n").unwrap();
    std::fs::copy(data.join("b.json"), data.join("broken.json")).unwrap();
    let report = analyze(&data, &cfg, None).unwrap();
    assert_eq!(report.records.len(), 4);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].path.ends_with("broken.csv"));
}
