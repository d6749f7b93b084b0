//! Campaign analysis and its output files.

use std::path::{Path, PathBuf};

use pcw_core::emission::EmissionPoint;
use pcw_core::tcspc::CHI2_MIN_EXPECTED;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    beta_spectrum, classify, fit_campaign, gamma_tot_mean, measured_beta_bandwidth, Classification, EmitterRecord,
};
use crate::config::Config;
use crate::error::{io_err, FileError, PipelineError, Result};
use crate::ingest::ingest;
use crate::plot;
use crate::theory::{theory_chain, write_curve_csv, TheorySummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Effective configuration, all defaults filled in, as TOML text.
    pub config_toml: String,
    pub config: Config,
    /// Sparse bins are merged until their expectation reaches this before
    /// the reduced χ² is formed.
    pub chi2_min_expected: f64,
    /// Wall-clock time of the run; the only field that differs between
    /// otherwise identical runs.
    pub timestamp: String,
}

impl Provenance {
    pub fn new(cfg: &Config, seed: Option<u64>) -> Self {
        Self {
            tool: "pcw".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_toml: cfg.to_toml_string(),
            config: cfg.clone(),
            chi2_min_expected: CHI2_MIN_EXPECTED,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub records: Vec<EmitterRecord>,
    pub classification: Classification,
    /// Mean rate of the uncoupled emitters (ns⁻¹).
    pub gamma_tot_mean: Option<f64>,
    pub beta_max: Option<f64>,
    /// Relative a/λ width of the measured β > threshold region.
    pub beta_bandwidth: f64,
    pub theory_curve: Vec<EmissionPoint>,
    pub theory: Option<TheorySummary>,
    /// Input files that were skipped.
    pub skipped: Vec<FileError>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl CampaignReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Full analysis of the histograms in `dir`.
pub fn analyze(dir: &Path, cfg: &Config, seed: Option<u64>) -> Result<CampaignReport> {
    cfg.validate()?;
    let campaign = ingest(dir)?;
    let mut skipped = campaign.errors;
    let mut warnings = Vec::new();
    for h in campaign.histograms.iter().filter(|h| h.t0_estimated) {
        warnings.push(format!(
            "{}: no t0_ps in sidecar, estimated {:.1} ps from the rising edge",
            h.id, h.histogram.t0
        ));
    }
    let (mut records, fit_errors) = fit_campaign(&campaign.histograms, cfg);
    skipped.extend(fit_errors);
    if records.is_empty() {
        return Err(PipelineError::EmptyCampaign {
            dir: dir.to_path_buf(),
            errors: skipped,
        });
    }
    let (classification, w) = classify(&mut records, &cfg.classify);
    warnings.extend(w);
    let mean = match gamma_tot_mean(&records) {
        Ok(m) => {
            warnings.extend(beta_spectrum(&mut records, m)?);
            Some(m)
        }
        Err(e) => {
            warnings.push(format!("{e}; no beta-factors computed"));
            None
        }
    };
    let beta_max = records
        .iter()
        .filter_map(|r| r.beta)
        .fold(None, |m: Option<f64>, b| Some(m.map_or(b, |m| m.max(b))));
    let beta_bandwidth = mean.map_or(0.0, |m| {
        measured_beta_bandwidth(&records, m, cfg.emission.beta_threshold)
    });
    let (theory_curve, theory) = if cfg.solver.enabled {
        let run = theory_chain(cfg)?;
        (run.curve, Some(run.summary))
    } else {
        (Vec::new(), None)
    };
    Ok(CampaignReport {
        records,
        classification,
        gamma_tot_mean: mean,
        beta_max,
        beta_bandwidth,
        theory_curve,
        theory,
        skipped,
        warnings,
        provenance: Provenance::new(cfg, seed),
    })
}

/// CSV rows `id,scaled_freq,rate_ns,model,chi2_red,coupled,beta`.
pub fn rates_csv(report: &CampaignReport) -> String {
    let mut out = String::from("id,scaled_freq,rate_ns,model,chi2_red,coupled,beta\n");
    for r in &report.records {
        let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.id),
            r.scaled_freq,
            r.rate(),
            r.fit.kind(),
            r.fit.chi2_red,
            r.coupled,
            beta
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes report.json, rates.csv, theory.csv (when a theory curve exists),
/// rates.svg and beta.svg. Returns the written paths.
pub fn emit_report(report: &CampaignReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    put(
        "report.json",
        (serde_json::to_string_pretty(report)? + "\n").into_bytes(),
    )?;
    put("rates.csv", rates_csv(report).into_bytes())?;
    if !report.theory_curve.is_empty() {
        let mut buf = Vec::new();
        write_curve_csv(&report.theory_curve, &mut buf).expect("writing to memory");
        put("theory.csv", buf)?;
    }
    put("rates.svg", plot::rates_svg(report).into_bytes())?;
    put("beta.svg", plot::beta_svg(report).into_bytes())?;
    Ok(written)
}
