//! Per-emitter records, coupled/uncoupled classification and β estimates.

use pcw_core::emission::{beta_bandwidth, beta_from_measurement, EmissionPoint};
use pcw_core::tcspc::{select_model_with, DecayFit};
use pcw_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifyConfig, ClassifyMode, Config};
use crate::error::{FileError, PipelineError, Result};
use crate::ingest::IngestedHistogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterRecord {
    pub id: String,
    pub wavelength_nm: f64,
    pub lattice_nm: f64,
    pub fit: DecayFit,
    /// lattice / wavelength.
    pub scaled_freq: f64,
    pub coupled: bool,
    pub beta: Option<f64>,
    /// Why a coupled record has no β.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EmitterRecord {
    pub fn new(id: impl Into<String>, wavelength_nm: f64, lattice_nm: f64, mut fit: DecayFit) -> Self {
        fit.nll_trace.clear();
        Self {
            id: id.into(),
            wavelength_nm,
            lattice_nm,
            fit,
            scaled_freq: lattice_nm / wavelength_nm,
            coupled: false,
            beta: None,
            note: None,
        }
    }

    /// The reported (fast) rate in ns⁻¹.
    pub fn rate(&self) -> f64 {
        self.fit.rate()
    }
}

/// Fits every histogram with the χ² model-selection rule, in parallel.
/// Failed fits are returned as file errors.
pub fn fit_campaign(histograms: &[IngestedHistogram], cfg: &Config) -> (Vec<EmitterRecord>, Vec<FileError>) {
    let opts = cfg.fit_options();
    let results: Vec<_> = histograms
        .par_iter()
        .map(|h| {
            select_model_with(&h.histogram, cfg.tcspc.chi2_threshold, &opts)
                .map(|fit| EmitterRecord::new(&h.id, h.meta.wavelength_nm, h.meta.lattice_nm, fit))
                .map_err(|e| FileError {
                    path: h.path.clone(),
                    message: format!("fit failed: {e}"),
                })
        })
        .collect();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("{}: {}", e.path.display(), e.message);
                errors.push(e);
            }
        }
    }
    (records, errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMethod {
    Fixed,
    /// Two-cluster split of the log-rates.
    Auto,
    /// Clusters too close; the fixed threshold was used.
    AutoFallback,
    /// All rates equal; everything is uncoupled.
    AutoSingleCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub method: ClassifyMethod,
    /// Rates strictly above this are coupled (ns⁻¹). Absent when no
    /// threshold applies.
    pub threshold: Option<f64>,
}

/// Best two-cluster split of `rates` on a log scale, maximising the
/// between-cluster variance. Returns the split threshold (geometric mean of
/// the neighbouring rates) and the ratio of the cluster geometric means,
/// or `None` when all rates are equal.
pub fn two_cluster_split(rates: &[f64]) -> Option<(f64, f64)> {
    let mut logs: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = logs.len();
    if n < 2 || logs[n - 1] - logs[0] <= 1e-12 * logs[0].abs().max(1.0) {
        return None;
    }
    let total: f64 = logs.iter().sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut low_sum = 0.0;
    for s in 1..n {
        low_sum += logs[s - 1];
        if logs[s] == logs[s - 1] {
            continue;
        }
        let (n0, n1) = (s as f64, (n - s) as f64);
        let (m0, m1) = (low_sum / n0, (total - low_sum) / n1);
        let between = n0 * n1 * (m1 - m0).powi(2);
        if best.is_none_or(|b| between > b.1) {
            best = Some((s, between, m1 - m0));
        }
    }
    let (s, _, gap) = best?;
    Some(((0.5 * (logs[s - 1] + logs[s])).exp(), gap.exp()))
}

/// Sets `coupled` on every record and returns how the split was made,
/// plus warnings.
pub fn classify(records: &mut [EmitterRecord], cfg: &ClassifyConfig) -> (Classification, Vec<String>) {
    let mut warnings = Vec::new();
    let rates: Vec<f64> = records.iter().map(|r| r.rate()).collect();
    let class = match cfg.mode {
        ClassifyMode::Fixed => Classification {
            method: ClassifyMethod::Fixed,
            threshold: Some(cfg.threshold),
        },
        ClassifyMode::Auto => match two_cluster_split(&rates) {
            None => {
                warnings.push("all decay rates are equal; every emitter is classified as uncoupled".into());
                Classification {
                    method: ClassifyMethod::AutoSingleCluster,
                    threshold: None,
                }
            }
            Some((t, ratio)) if ratio >= cfg.min_cluster_ratio => Classification {
                method: ClassifyMethod::Auto,
                threshold: Some(t),
            },
            Some((_, ratio)) => {
                warnings.push(format!(
                    "rate clusters differ by only {ratio:.2}x (< {}x); using the fixed threshold {} ns^-1",
                    cfg.min_cluster_ratio, cfg.threshold
                ));
                Classification {
                    method: ClassifyMethod::AutoFallback,
                    threshold: Some(cfg.threshold),
                }
            }
        },
    };
    for (r, rate) in records.iter_mut().zip(rates) {
        r.coupled = class.threshold.is_some_and(|t| rate > t);
    }
    (class, warnings)
}

/// Mean reported rate of the uncoupled records (ns⁻¹).
pub fn gamma_tot_mean(records: &[EmitterRecord]) -> Result<f64> {
    let uncoupled: Vec<f64> = records.iter().filter(|r| !r.coupled).map(|r| r.rate()).collect();
    if uncoupled.is_empty() {
        return Err(PipelineError::NoUncoupled);
    }
    Ok(uncoupled.iter().sum::<f64>() / uncoupled.len() as f64)
}

/// β for every coupled record. Coupled records slower than the mean get a
/// note and no β; their warnings are returned.
pub fn beta_spectrum(records: &mut [EmitterRecord], gamma_tot_mean: f64) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for r in records.iter_mut() {
        r.beta = None;
        r.note = None;
        if !r.coupled {
            continue;
        }
        match beta_from_measurement(r.rate(), gamma_tot_mean) {
            Ok(b) => r.beta = Some(b),
            Err(e @ CoreError::NotCoupled { .. }) => {
                let msg = format!("{}: {e}", r.id);
                log::warn!("{msg}");
                r.note = Some(e.to_string());
                warnings.push(msg);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(warnings)
}

/// Measured β points, sorted by a/λ.
pub fn measured_beta_points(records: &[EmitterRecord], gamma_tot_mean: f64) -> Vec<EmissionPoint> {
    let mut pts: Vec<EmissionPoint> = records
        .iter()
        .filter_map(|r| {
            r.beta.map(|beta| EmissionPoint {
                scaled_freq: r.scaled_freq,
                gamma_wg: r.rate() - gamma_tot_mean,
                beta,
            })
        })
        .collect();
    pts.sort_by(|a, b| a.scaled_freq.partial_cmp(&b.scaled_freq).unwrap());
    pts
}

pub fn measured_beta_bandwidth(records: &[EmitterRecord], gamma_tot_mean: f64, threshold: f64) -> f64 {
    beta_bandwidth(&measured_beta_points(records, gamma_tot_mean), threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcw_core::tcspc::{DecayModel, ModelKind};
    use proptest::prelude::*;

    fn record(id: &str, rate: f64, wavelength: f64) -> EmitterRecord {
        let fit = DecayFit {
            model: DecayModel::mono(rate, 100.0, 0.0, 280.0),
            chi2_red: 1.0,
            rate_uncertainties: vec![0.01 * rate],
            converged: true,
            n_iterations: 5,
            nll: 0.0,
            background_fitted: false,
            degenerate: false,
            nll_trace: vec![1.0, 0.0],
        };
        EmitterRecord::new(id, wavelength, 256.0, fit)
    }

    fn records(rates: &[f64]) -> Vec<EmitterRecord> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| record(&format!("e{i}"), r, 980.0))
            .collect()
    }

    fn coupled(rs: &[EmitterRecord]) -> Vec<bool> {
        rs.iter().map(|r| r.coupled).collect()
    }

    #[test]
    fn fixed_threshold_splits_paper_pair() {
        let mut rs = records(&[0.05, 1.34]);
        let (c, w) = classify(&mut rs, &ClassifyConfig::default());
        assert_eq!(c.method, ClassifyMethod::Fixed);
        assert!(w.is_empty());
        assert_eq!(coupled(&rs), [false, true]);
        assert_eq!(rs[0].fit.model.kind(), ModelKind::Mono);
        assert!(rs[0].fit.nll_trace.is_empty());
    }

    /// Every split point tried directly, scored by between-cluster variance.
    fn brute_force_split(rates: &[f64]) -> f64 {
        let mut s: Vec<f64> = rates.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..s.len() {
            let lo: Vec<f64> = s[..k].iter().map(|r| r.ln()).collect();
            let hi: Vec<f64> = s[k..].iter().map(|r| r.ln()).collect();
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let score = lo.len() as f64 * hi.len() as f64 * (m1 - m0).powi(2);
            if score > best.0 {
                best = (score, (s[k - 1] * s[k]).sqrt());
            }
        }
        best.1
    }

    #[test]
    fn auto_split_matches_brute_force() {
        let rates = [0.2, 0.3, 3.0, 3.5];
        let (t, ratio) = two_cluster_split(&rates).unwrap();
        assert!(t > 0.3 && t < 3.0);
        assert!((t - brute_force_split(&rates)).abs() < 1e-12);
        assert!(ratio > 3.0);
        let mut rs = records(&rates);
        let cfg = ClassifyConfig {
            mode: ClassifyMode::Auto,
            ..ClassifyConfig::default()
        };
        let (c, _) = classify(&mut rs, &cfg);
        assert_eq!(c.method, ClassifyMethod::Auto);
        assert_eq!(coupled(&rs), [false, false, true, true]);
    }

    #[test]
    fn equal_rates_fall_back_to_all_uncoupled() {
        let mut rs = records(&[0.8, 0.8, 0.8]);
        let cfg = ClassifyConfig {
            mode: ClassifyMode::Auto,
            ..ClassifyConfig::default()
        };
        let (c, w) = classify(&mut rs, &cfg);
        assert_eq!(c.method, ClassifyMethod::AutoSingleCluster);
        assert_eq!(w.len(), 1);
        assert_eq!(coupled(&rs), [false, false, false]);
    }

    #[test]
    fn close_clusters_use_fixed_threshold() {
        let mut rs = records(&[0.3, 0.35, 0.6, 0.7]);
        let cfg = ClassifyConfig {
            mode: ClassifyMode::Auto,
            ..ClassifyConfig::default()
        };
        let (c, w) = classify(&mut rs, &cfg);
        assert_eq!(c.method, ClassifyMethod::AutoFallback);
        assert_eq!(w.len(), 1);
        assert_eq!(coupled(&rs), [false, false, true, true]);
    }

    #[test]
    fn total_rate_mean_and_beta() {
        let mut rs = records(&[0.1, 0.2, 0.15, 1.34]);
        classify(&mut rs, &ClassifyConfig::default());
        let mean = gamma_tot_mean(&rs).unwrap();
        assert!((mean - 0.15).abs() < 1e-12);
        beta_spectrum(&mut rs, mean).unwrap();
        assert!((rs[3].beta.unwrap() - 0.888_059_701_492_537_3).abs() < 1e-12);
        assert!(rs[..3].iter().all(|r| r.beta.is_none()));

        let mut single = records(&[0.3]);
        assert_eq!(gamma_tot_mean(&single).unwrap(), 0.3);
        single[0].coupled = true;
        assert!(matches!(gamma_tot_mean(&single), Err(PipelineError::NoUncoupled)));
    }

    #[test]
    fn excited_state_example_beta() {
        let mut rs = records(&[0.4, 3.5]);
        classify(&mut rs, &ClassifyConfig::default());
        beta_spectrum(&mut rs, 0.4).unwrap();
        assert!((rs[1].beta.unwrap() - 0.885_714).abs() < 1e-6);
    }

    #[test]
    fn slow_coupled_record_is_flagged_not_fatal() {
        let mut rs = records(&[0.2]);
        rs[0].coupled = true;
        let w = beta_spectrum(&mut rs, 0.4).unwrap();
        assert_eq!(w.len(), 1);
        assert!(rs[0].beta.is_none());
        assert!(rs[0].note.is_some());
    }

    #[test]
    fn measured_bandwidth_uses_points_above_threshold() {
        let mut rs: Vec<EmitterRecord> = [
            (1.34, 256.0 / 0.258),
            (1.0, 256.0 / 0.263),
            (0.9, 256.0 / 0.260),
            (0.2, 256.0 / 0.27),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(r, w))| record(&format!("e{i}"), r, w))
        .collect();
        classify(&mut rs, &ClassifyConfig::default());
        rs[3].coupled = false;
        let bw = measured_beta_bandwidth(&rs, 0.15, 0.5);
        beta_spectrum(&mut rs, 0.15).unwrap();
        let bw_after = measured_beta_bandwidth(&rs, 0.15, 0.5);
        assert_eq!(bw, 0.0);
        assert!((bw_after - 0.005 / 0.2605).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn auto_classification_is_scale_invariant(
            rates in proptest::collection::vec(0.01f64..10.0, 2..20),
            scale in 0.01f64..100.0
        ) {
            let cfg = ClassifyConfig { mode: ClassifyMode::Auto, ..ClassifyConfig::default() };
            let mut a = records(&rates);
            let (ca, _) = classify(&mut a, &cfg);
            prop_assume!(ca.method != ClassifyMethod::AutoFallback);
            let scaled: Vec<f64> = rates.iter().map(|r| r * scale).collect();
            let mut b = records(&scaled);
            let (cb, _) = classify(&mut b, &cfg);
            prop_assert_eq!(ca.method, cb.method);
            prop_assert_eq!(coupled(&a), coupled(&b));
        }

        #[test]
        fn beta_stays_in_unit_interval(
            rates in proptest::collection::vec(0.01f64..10.0, 2..20)
        ) {
            let mut rs = records(&rates);
            classify(&mut rs, &ClassifyConfig::default());
            if let Ok(mean) = gamma_tot_mean(&rs) {
                beta_spectrum(&mut rs, mean).unwrap();
                for r in &rs {
                    if let Some(b) = r.beta {
                        prop_assert!((0.0..=1.0).contains(&b));
                    }
                    prop_assert!(r.beta.is_none() || r.coupled);
                }
            }
        }

        #[test]
        fn dropping_uncoupled_records_only_changes_beta(
            log_rates in proptest::collection::vec(-2.0f64..1.0, 3..15),
            drop in proptest::collection::vec(any::<bool>(), 15)
        ) {
            let rates: Vec<f64> = log_rates.iter().map(|e| 10f64.powf(*e)).collect();
            let mut full = records(&rates);
            classify(&mut full, &ClassifyConfig::default());
            let n_uncoupled = full.iter().filter(|r| !r.coupled).count();
            prop_assume!(n_uncoupled >= 2);
            let mut first_kept = false;
            let mut reduced: Vec<EmitterRecord> = full
                .iter()
                .zip(&drop)
                .filter(|(r, &d)| {
                    if r.coupled { return true; }
                    if !first_kept { first_kept = true; return true; }
                    !d
                })
                .map(|(r, _)| r.clone())
                .collect();
            classify(&mut reduced, &ClassifyConfig::default());
            let mean = gamma_tot_mean(&reduced).unwrap();
            beta_spectrum(&mut reduced, mean).unwrap();
            for r in full.iter().filter(|r| r.coupled) {
                let same = reduced.iter().find(|x| x.id == r.id).unwrap();
                prop_assert!(same.coupled);
                prop_assert_eq!(same.rate(), r.rate());
            }
        }
    }
}
