//! Histogram files: `<id>.csv` with header `time_ps,counts` (bin start
//! times) and a JSON sidecar `<id>.json`.

use std::path::{Path, PathBuf};

use pcw_core::tcspc::DecayHistogram;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, FileError, PipelineError, Result};

/// Metadata accompanying each histogram. Times in ps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub bin_width: f64,
    pub rep_period: f64,
    pub irf_fwhm: f64,
    pub wavelength_nm: f64,
    pub lattice_nm: f64,
    /// Excitation time on the `time_ps` axis. Estimated from the rising
    /// edge when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_ps: Option<f64>,
    /// Known background per bin; fitted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_per_bin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedHistogram {
    pub id: String,
    pub path: PathBuf,
    pub histogram: DecayHistogram,
    pub meta: Sidecar,
    pub t0_estimated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub histograms: Vec<IngestedHistogram>,
    /// Files that were skipped.
    pub errors: Vec<FileError>,
}

/// Reads every `*.csv` in `dir` (sorted by name) with its sidecar.
/// Malformed pairs are skipped and listed in `errors`.
pub fn ingest(dir: &Path) -> Result<Campaign> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut csvs = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "csv") && path.is_file() {
            csvs.push(path);
        }
    }
    csvs.sort();
    let mut histograms = Vec::new();
    let mut errors = Vec::new();
    for path in csvs {
        match read_histogram(&path) {
            Ok(h) => histograms.push(h),
            Err(message) => {
                log::warn!("skipping {}: {message}", path.display());
                errors.push(FileError { path, message });
            }
        }
    }
    if histograms.is_empty() {
        return Err(PipelineError::EmptyCampaign {
            dir: dir.to_path_buf(),
            errors,
        });
    }
    Ok(Campaign { histograms, errors })
}

/// Reads one CSV and its sidecar. Errors are plain messages so that the
/// caller can collect them per file.
pub fn read_histogram(csv_path: &Path) -> std::result::Result<IngestedHistogram, String> {
    let id = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or("file name is not valid UTF-8")?
        .to_string();
    let json_path = csv_path.with_extension("json");
    let meta_text = std::fs::read_to_string(&json_path).map_err(|e| format!("sidecar {}: {e}", json_path.display()))?;
    let meta: Sidecar =
        serde_json::from_str(&meta_text).map_err(|e| format!("sidecar {}: {e}", json_path.display()))?;
    for (name, v) in [
        ("bin_width", meta.bin_width),
        ("rep_period", meta.rep_period),
        ("wavelength_nm", meta.wavelength_nm),
        ("lattice_nm", meta.lattice_nm),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("sidecar field {name} = {v} must be positive"));
        }
    }

    let (times, counts) = read_counts(csv_path)?;
    if counts.len() < 2 {
        return Err("histogram needs at least two bins".into());
    }
    for (i, t) in times.iter().enumerate() {
        let expect = times[0] + i as f64 * meta.bin_width;
        if (t - expect).abs() > 1e-6 * meta.bin_width.max(1.0) {
            return Err(format!(
                "time_ps at row {} is {t}, expected {expect} for bin width {}",
                i + 2,
                meta.bin_width
            ));
        }
    }
    let (t0, t0_estimated) = match meta.t0_ps {
        Some(t) => (t - times[0], false),
        None => (estimate_t0(&counts, meta.bin_width), true),
    };
    let histogram = DecayHistogram {
        bin_width: meta.bin_width,
        counts,
        t0,
        rep_period: meta.rep_period,
        irf_fwhm: meta.irf_fwhm,
        background: meta.background_per_bin,
    };
    histogram.validate().map_err(|e| e.to_string())?;
    if histogram.total() == 0 {
        return Err("histogram has no counts".into());
    }
    Ok(IngestedHistogram {
        id,
        path: csv_path.to_path_buf(),
        histogram,
        meta,
        t0_estimated,
    })
}

fn read_counts(path: &Path) -> std::result::Result<(Vec<f64>, Vec<u64>), String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.len() != 2 || &headers[0] != "time_ps" || &headers[1] != "counts" {
        return Err(format!(
            "expected header `time_ps,counts`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut times = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| format!("row {row}: {e}"))?;
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| format!("row {row}: bad time `{}`", &rec[0]))?;
        if !t.is_finite() {
            return Err(format!("row {row}: time must be finite"));
        }
        let c: i64 = rec[1]
            .parse()
            .map_err(|_| format!("row {row}: counts `{}` is not an integer", &rec[1]))?;
        if c < 0 {
            return Err(format!("row {row}: negative counts {c}"));
        }
        times.push(t);
        counts.push(c as u64);
    }
    Ok((times, counts))
}

/// Excitation time (ps from the start of bin 0): the half-maximum crossing
/// of the rising edge, between the pre-pulse floor and the peak.
pub fn estimate_t0(counts: &[u64], bin_width: f64) -> f64 {
    let smooth: Vec<f64> = (0..counts.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(counts.len());
            counts[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
        })
        .collect();
    let peak = smooth
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > smooth[best] { i } else { best });
    let floor = smooth[..=peak].iter().cloned().fold(f64::INFINITY, f64::min);
    let half = 0.5 * (floor + smooth[peak]);
    let mut i = peak;
    while i > 0 && smooth[i - 1] >= half {
        i -= 1;
    }
    if i == 0 {
        return 0.5 * bin_width;
    }
    // linear interpolation between bin centres i-1 and i
    let (y0, y1) = (smooth[i - 1], smooth[i]);
    let frac = if y1 > y0 { (half - y0) / (y1 - y0) } else { 0.5 };
    (i as f64 - 0.5 + frac) * bin_width
}

/// Writes `<id>.csv` and `<id>.json` into `dir`.
pub fn write_histogram(dir: &Path, id: &str, hist: &DecayHistogram, meta: &Sidecar) -> Result<()> {
    use std::fmt::Write as _;
    let mut csv = String::from("time_ps,counts\n");
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(csv, "{},{c}", i as f64 * hist.bin_width).unwrap();
    }
    let csv_path = dir.join(format!("{id}.csv"));
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    let json_path = dir.join(format!("{id}.json"));
    let text = serde_json::to_string_pretty(meta)? + "\n";
    std::fs::write(&json_path, text).map_err(io_err(&json_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcw_core::tcspc::{synthesize, DecayModel, HistogramShape};

    fn meta(t0: Option<f64>) -> Sidecar {
        Sidecar {
            bin_width: 50.0,
            rep_period: 1e6 / 75.0,
            irf_fwhm: 280.0,
            wavelength_nm: 981.0,
            lattice_nm: 256.0,
            t0_ps: t0,
            background_per_bin: Some(0.5),
        }
    }

    fn sample(t0: f64, seed: u64) -> DecayHistogram {
        let model = DecayModel::mono(0.3, 100.0, 0.5, 280.0);
        synthesize(&model, &HistogramShape::default_with_t0(t0), 50_000, seed).unwrap()
    }

    #[test]
    fn written_files_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let h = sample(1500.0, 1);
        let mut m = meta(Some(1500.0));
        m.background_per_bin = h.background;
        write_histogram(dir.path(), "qd01", &h, &m).unwrap();
        let back = read_histogram(&dir.path().join("qd01.csv")).unwrap();
        assert_eq!(back.id, "qd01");
        assert_eq!(back.histogram, h);
        assert_eq!(back.meta, m);
        assert!(!back.t0_estimated);
    }

    #[test]
    fn negative_counts_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_histogram(dir.path(), "good", &sample(1500.0, 2), &meta(Some(1500.0))).unwrap();
        std::fs::write(dir.path().join("bad.csv"), "time_ps,counts\n0,5\n50,-3\n100,4\n").unwrap();
        std::fs::write(dir.path().join("bad.json"), serde_json::to_string(&meta(None)).unwrap()).unwrap();
        std::fs::write(dir.path().join("orphan.csv"), "time_ps,counts\n0,5\n50,3\n").unwrap();
        let c = ingest(dir.path()).unwrap();
        assert_eq!(c.histograms.len(), 1);
        assert_eq!(c.errors.len(), 2);
        let bad = c.errors.iter().find(|e| e.path.ends_with("bad.csv")).unwrap();
        assert!(bad.message.contains("negative"), "{}", bad.message);
        assert!(c.errors.iter().any(|e| e.path.ends_with("orphan.csv")));
    }

    #[test]
    fn empty_directory_is_an_empty_campaign() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest(dir.path()), Err(PipelineError::EmptyCampaign { .. })));
        let missing = dir.path().join("nope");
        assert!(matches!(ingest(&missing), Err(PipelineError::Io { .. })));
    }

    #[test]
    fn irregular_time_axis_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.csv"), "time_ps,counts\n0,5\n50,3\n120,4\n").unwrap();
        std::fs::write(
            dir.path().join("x.json"),
            serde_json::to_string(&meta(Some(0.0))).unwrap(),
        )
        .unwrap();
        let err = read_histogram(&dir.path().join("x.csv")).unwrap_err();
        assert!(err.contains("row 4"), "{err}");
    }

    #[test]
    fn time_axis_offset_moves_t0() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.csv"), "time_ps,counts\n200,5\n250,30\n300,4\n").unwrap();
        std::fs::write(
            dir.path().join("x.json"),
            serde_json::to_string(&meta(Some(260.0))).unwrap(),
        )
        .unwrap();
        let h = read_histogram(&dir.path().join("x.csv")).unwrap();
        assert!((h.histogram.t0 - 60.0).abs() < 1e-12);
    }

    #[test]
    fn rising_edge_estimate_finds_excitation_time() {
        for (t0, seed) in [(1500.0, 3), (2230.0, 4), (640.0, 5)] {
            let est = estimate_t0(&sample(t0, seed).counts, 50.0);
            assert!((est - t0).abs() < 60.0, "{t0} vs {est}");
        }
    }
}
