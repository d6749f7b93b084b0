//! Synthetic campaigns: one histogram per emitter from a scenario file.
//!
//! ```toml
//! seed = 7
//! [[emitter]]
//! id = "qd-fast"
//! wavelength_nm = 981.0
//! lattice_nm = 256.0
//! rates = [1.34, 0.05]        # ns⁻¹, fast first
//! amplitudes = [1000.0, 30.0] # optional
//! ```

use std::path::Path;

use pcw_core::tcspc::{synthesize, DecayModel, ExpComponent, HistogramShape};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{io_err, PipelineError, Result};
use crate::ingest::{write_histogram, Sidecar};

/// Default background of a synthetic emitter, in the same units as the
/// amplitudes (counts per bin before scaling to the requested total).
pub const DEFAULT_BACKGROUND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "emitter")]
    pub emitters: Vec<EmitterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub id: String,
    pub wavelength_nm: f64,
    pub lattice_nm: f64,
    /// One rate (mono) or fast and slow rates (bi), ns⁻¹.
    pub rates: Vec<f64>,
    /// Defaults to 1000 for the first component and 30 for a second one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_counts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_ps: Option<f64>,
}

impl EmitterSpec {
    pub fn model(&self, irf_fwhm: f64) -> std::result::Result<DecayModel, String> {
        let amps = self.amplitudes.clone().unwrap_or_else(|| match self.rates.len() {
            1 => vec![1000.0],
            _ => vec![1000.0, 30.0],
        });
        if amps.len() != self.rates.len() {
            return Err(format!("{} rates but {} amplitudes", self.rates.len(), amps.len()));
        }
        let bg = self.background.unwrap_or(DEFAULT_BACKGROUND);
        let model = match self.rates.as_slice() {
            [r] => DecayModel::mono(*r, amps[0], bg, irf_fwhm),
            [f, s] => DecayModel::bi(
                ExpComponent {
                    rate: *f,
                    amplitude: amps[0],
                },
                ExpComponent {
                    rate: *s,
                    amplitude: amps[1],
                },
                bg,
                irf_fwhm,
            ),
            _ => return Err(format!("expected one or two rates, got {}", self.rates.len())),
        };
        model.validate().map_err(|e| e.to_string())?;
        Ok(model)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let sc: Scenario = toml::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
            message: e.message().trim().to_string(),
        })?;
        sc.validate().map_err(|message| PipelineError::Input {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(sc)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.emitters.is_empty() {
            return Err("scenario lists no emitters".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.emitters {
            if e.id.is_empty() || e.id.contains(['/', '\\']) {
                return Err(format!("emitter id `{}` is not a valid file name", e.id));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(format!("duplicate emitter id `{}`", e.id));
            }
            if !(e.wavelength_nm > 0.0 && e.lattice_nm > 0.0) {
                return Err(format!("{}: wavelength and lattice must be positive", e.id));
            }
            e.model(0.0).map_err(|m| format!("{}: {m}", e.id))?;
        }
        Ok(())
    }
}

/// Seed of the `index`-th emitter of a campaign.
pub fn emitter_seed(campaign_seed: u64, index: usize) -> u64 {
    campaign_seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Writes one CSV/JSON pair per emitter into `out_dir` and returns the ids.
/// The background per bin is written to the sidecar as known.
pub fn synthesize_campaign(scenario: &Scenario, cfg: &Config, seed: u64, out_dir: &Path) -> Result<Vec<String>> {
    scenario.validate().map_err(|message| PipelineError::Input {
        path: out_dir.to_path_buf(),
        message,
    })?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let t = &cfg.tcspc;
    let n_bins = (t.rep_period_ps / t.bin_width_ps + 1e-9).floor() as usize;
    let mut ids = Vec::with_capacity(scenario.emitters.len());
    for (i, e) in scenario.emitters.iter().enumerate() {
        let model = e.model(t.irf_fwhm_ps).map_err(|message| PipelineError::Input {
            path: out_dir.join(&e.id),
            message,
        })?;
        let t0 = e.t0_ps.unwrap_or(t.t0_ps);
        let shape = HistogramShape {
            n_bins,
            bin_width: t.bin_width_ps,
            t0,
            rep_period: t.rep_period_ps,
        };
        let hist = synthesize(
            &model,
            &shape,
            e.total_counts.unwrap_or(t.total_counts),
            emitter_seed(seed, i),
        )?;
        let meta = Sidecar {
            bin_width: hist.bin_width,
            rep_period: hist.rep_period,
            irf_fwhm: hist.irf_fwhm,
            wavelength_nm: e.wavelength_nm,
            lattice_nm: e.lattice_nm,
            t0_ps: Some(t0),
            background_per_bin: hist.background,
        };
        write_histogram(out_dir, &e.id, &hist, &meta)?;
        ids.push(e.id.clone());
    }
    let truth = out_dir.join("scenario.json");
    let text = serde_json::to_string_pretty(scenario)? + "\n";
    std::fs::write(&truth, text).map_err(io_err(&truth))?;
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest;

    fn scenario() -> Scenario {
        toml::from_str(
            r#"
            [[emitter]]
            id = "fast"
            wavelength_nm = 981.0
            lattice_nm = 256.0
            rates = [1.34, 0.05]

            [[emitter]]
            id = "slow"
            wavelength_nm = 969.7
            lattice_nm = 256.0
            rates = [0.05]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn campaign_round_trips_through_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let ids = synthesize_campaign(&scenario(), &Config::default(), 9, dir.path()).unwrap();
        assert_eq!(ids, ["fast", "slow"]);
        let c = ingest(dir.path()).unwrap();
        assert!(c.errors.is_empty());
        assert_eq!(c.histograms.len(), 2);
        let slow = &c.histograms[1];
        assert_eq!(slow.id, "slow");
        assert_eq!(slow.histogram.counts.len(), 266);
        let total = slow.histogram.total() as f64;
        assert!((total - 50_000.0).abs() < 5.0 * 50_000f64.sqrt());
        assert_eq!(slow.histogram.t0, 1500.0);
    }

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synthesize_campaign(&scenario(), &Config::default(), 4, a.path()).unwrap();
        synthesize_campaign(&scenario(), &Config::default(), 4, b.path()).unwrap();
        for f in ["fast.csv", "fast.json", "slow.csv", "scenario.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn bad_scenarios_are_rejected() {
        let mut s = scenario();
        s.emitters[1].id = "fast".into();
        assert!(s.validate().unwrap_err().contains("duplicate"));
        let mut s = scenario();
        s.emitters[0].rates = vec![0.05, 1.34];
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.emitters[0].amplitudes = Some(vec![1.0]);
        assert!(s.validate().is_err());
    }
}
