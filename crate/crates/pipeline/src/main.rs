use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pcw_core::tcspc::DecayFit;
use pcw_pipeline::config::Config;
use pcw_pipeline::ingest::read_histogram;
use pcw_pipeline::report::{analyze, emit_report};
use pcw_pipeline::synth::{synthesize_campaign, Scenario};
use pcw_pipeline::theory::{solve_bulk, solve_waveguide, theory_chain, write_curve_csv};

/// Photonic-crystal waveguide emitter analysis.
#[derive(Debug, Parser)]
#[command(name = "pcw", version)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Campaign seed for `synth`; recorded in reports.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Structure {
    Bulk,
    W1,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Band structures as CSV: bulk_bands.csv, w1_bands.csv, guided_mode.csv.
    Bands {
        #[arg(long, value_enum, default_value = "both")]
        structure: Structure,
    },
    /// Theory curve Γ_wg(a/λ), β(a/λ) as theory.csv plus theory.json.
    Emission,
    /// Synthetic campaign from a scenario file.
    Synth { scenario: PathBuf },
    /// Fit one histogram (`<id>.csv` with its `<id>.json` sidecar).
    Fit { histogram: PathBuf },
    /// Full campaign analysis of a directory of histograms.
    Analyze { dir: PathBuf },
}

#[derive(Serialize)]
struct FitSummary<'a> {
    id: &'a str,
    scaled_freq: f64,
    rate_ns: f64,
    rate_uncertainty_ns: f64,
    fit: &'a DecayFit,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.validate()?;
    let out = &cli.out;
    match cli.command {
        Command::Bands { structure } => bands(&cfg, structure, out),
        Command::Emission => {
            let run = theory_chain(&cfg)?;
            create_dir(out)?;
            write_curve_csv(&run.curve, create(&out.join("theory.csv"))?)?;
            write_json(&out.join("theory.json"), &run.summary)?;
            println!(
                "band edge a/λ = {:.5} in [{:.5}, {:.5}], peak Γ_wg = {:.3} ns⁻¹",
                run.summary.band_edge,
                run.summary.band_edge_interval[0],
                run.summary.band_edge_interval[1],
                run.curve.iter().map(|p| p.gamma_wg).fold(0.0, f64::max)
            );
            Ok(())
        }
        Command::Synth { scenario } => {
            let sc = Scenario::load(&scenario)?;
            let seed = cli.seed.or(sc.seed).unwrap_or(0);
            let ids = synthesize_campaign(&sc, &cfg, seed, out)?;
            println!("wrote {} histograms to {} (seed {seed})", ids.len(), out.display());
            Ok(())
        }
        Command::Fit { histogram } => {
            let h = read_histogram(&histogram).map_err(|m| anyhow::anyhow!("{}: {m}", histogram.display()))?;
            let fit = pcw_core::tcspc::select_model_with(&h.histogram, cfg.tcspc.chi2_threshold, &cfg.fit_options())?;
            let summary = FitSummary {
                id: &h.id,
                scaled_freq: h.meta.lattice_nm / h.meta.wavelength_nm,
                rate_ns: fit.rate(),
                rate_uncertainty_ns: fit.rate_uncertainty(),
                fit: &fit,
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Analyze { dir } => {
            let report = analyze(&dir, &cfg, cli.seed)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            for s in &report.skipped {
                log::warn!("skipped {}: {}", s.path.display(), s.message);
            }
            let files = emit_report(&report, out)?;
            println!(
                "{} records, {} coupled, Γ_tot mean {}, β max {}; wrote {} files to {}",
                report.records.len(),
                report.records.iter().filter(|r| r.coupled).count(),
                opt(report.gamma_tot_mean),
                opt(report.beta_max),
                files.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn bands(cfg: &Config, structure: Structure, out: &Path) -> Result<()> {
    let geom = cfg.crystal()?;
    create_dir(out)?;
    let bulk = solve_bulk(cfg, &geom)?;
    if matches!(structure, Structure::Bulk | Structure::Both) {
        bulk.bands.write_csv(create(&out.join("bulk_bands.csv"))?)?;
        println!("bulk gap a/λ = [{:.5}, {:.5}]", bulk.gap.nu_low, bulk.gap.nu_high);
    }
    if matches!(structure, Structure::W1 | Structure::Both) {
        let wg = solve_waveguide(cfg, &geom, &bulk.gap)?;
        wg.bands.write_csv(create(&out.join("w1_bands.csv"))?)?;
        wg.mode.write_csv(create(&out.join("guided_mode.csv"))?)?;
        println!("guided band edge a/λ = {:.5}", wg.mode.nu(wg.mode.len() - 1));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(p).with_context(|| format!("creating {}", p.display()))?,
    ))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    std::fs::write(p, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", p.display()))
}
