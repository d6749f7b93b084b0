//! Geometry → bands → guided mode → emission spectrum.

use std::f64::consts::PI;

use pcw_core::dispersion::{
    bulk_gap, extract_guided_mode, waveguide_k_samples, GapWindow, GuidedModeOptions, WaveguideMode,
};
use pcw_core::emission::{decay_rate_spectrum, EmissionPoint};
use pcw_core::geometry::{make_bulk_cell, make_w1_supercell, CrystalGeometry, ReciprocalBasis};
use pcw_core::pwe::{bulk_k_path, BandStructure, PweSolver};
use pcw_core::{Result, C_LIGHT};
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Scalar results of a theory run, embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub lattice_nm: f64,
    pub n_eff: f64,
    pub gap: GapWindow,
    /// a/λ of the guided-mode band edge.
    pub band_edge: f64,
    /// Band edge on the nominal a/λ axis when the true lattice parameter is
    /// a ± δ: [ν a/(a+δ), ν a/(a−δ)].
    pub band_edge_interval: [f64; 2],
    pub lattice_uncertainty_nm: f64,
    /// Group velocity at k = π/a in units of c.
    pub vg_edge_c: f64,
    pub branch_samples: usize,
    pub bulk_plane_waves: usize,
    pub supercell_plane_waves: usize,
}

pub struct BulkRun {
    pub bands: BandStructure,
    pub gap: GapWindow,
}

pub struct WaveguideRun {
    pub solver: PweSolver,
    pub bands: BandStructure,
    pub mode: WaveguideMode,
}

pub struct TheoryRun {
    pub bulk: BulkRun,
    pub waveguide: WaveguideRun,
    pub curve: Vec<EmissionPoint>,
    pub summary: TheorySummary,
}

pub fn solve_bulk(cfg: &Config, geom: &CrystalGeometry) -> Result<BulkRun> {
    let cell = make_bulk_cell(geom)?;
    let basis = ReciprocalBasis::new(&cell, cfg.solver.bulk_cutoff);
    let solver = PweSolver::new(&cell, &basis, cfg.solver.rule)?;
    let bands = solver.solve_bands(&bulk_k_path(geom.a, cfg.solver.bulk_k_per_segment), 6)?;
    let gap = bulk_gap(&bands)?;
    log::info!(
        "bulk gap a/λ = [{:.5}, {:.5}] with {} plane waves",
        gap.nu_low,
        gap.nu_high,
        basis.len()
    );
    Ok(BulkRun { bands, gap })
}

pub fn guided_mode_options(cfg: &Config, geom: &CrystalGeometry) -> GuidedModeOptions {
    GuidedModeOptions {
        strip_half_width_rows: cfg.solver.strip_half_width_rows,
        localization_threshold: cfg.solver.localization_threshold,
        field_resolution: cfg.solver.field_resolution,
        t_slab: geom.t_slab,
    }
}

pub fn solve_waveguide(cfg: &Config, geom: &CrystalGeometry, gap: &GapWindow) -> Result<WaveguideRun> {
    let n_rows = cfg.geometry.n_rows;
    let cell = make_w1_supercell(geom, n_rows)?;
    let basis = ReciprocalBasis::new(&cell, cfg.solver.supercell_cutoff);
    let solver = PweSolver::new(&cell, &basis, cfg.solver.rule)?;
    let ks: Vec<[f64; 2]> = waveguide_k_samples(geom.a, cfg.solver.waveguide_k_uniform, cfg.solver.waveguide_k_cluster)
        .into_iter()
        .map(|k| [k, 0.0])
        .collect();
    let bands = solver.solve_bands(&ks, n_rows + 5)?;
    let mode = extract_guided_mode(&solver, &bands, gap, &guided_mode_options(cfg, geom))?;
    log::info!(
        "guided branch: {} samples, band edge a/λ = {:.5}, {} plane waves",
        mode.len(),
        nu_of(geom.a, mode.omega_edge),
        basis.len()
    );
    Ok(WaveguideRun { solver, bands, mode })
}

fn nu_of(a: f64, omega: f64) -> f64 {
    omega * a / (2.0 * PI * C_LIGHT)
}

/// Band-edge interval on the nominal axis for a lattice uncertainty δ.
pub fn band_edge_interval(band_edge: f64, a: f64, delta: f64) -> [f64; 2] {
    [band_edge * a / (a + delta), band_edge * a / (a - delta)]
}

pub fn theory_chain(cfg: &Config) -> Result<TheoryRun> {
    let geom = cfg.crystal()?;
    let bulk = solve_bulk(cfg, &geom)?;
    let waveguide = solve_waveguide(cfg, &geom, &bulk.gap)?;
    let params = cfg.emission_params(&geom);
    let curve = decay_rate_spectrum(&waveguide.mode, &params, cfg.emission.n_points)?;
    let band_edge = nu_of(geom.a, waveguide.mode.omega_edge);
    let delta = cfg.geometry.lattice_uncertainty_nm * 1e-9;
    let summary = TheorySummary {
        lattice_nm: cfg.geometry.lattice_nm,
        n_eff: cfg.geometry.n_eff,
        gap: bulk.gap,
        band_edge,
        band_edge_interval: band_edge_interval(band_edge, geom.a, delta),
        lattice_uncertainty_nm: cfg.geometry.lattice_uncertainty_nm,
        vg_edge_c: waveguide.mode.v_g.last().copied().unwrap_or(f64::NAN) / C_LIGHT,
        branch_samples: waveguide.mode.len(),
        bulk_plane_waves: ReciprocalBasis::new(&make_bulk_cell(&geom)?, cfg.solver.bulk_cutoff).len(),
        supercell_plane_waves: waveguide.solver.basis().len(),
    };
    Ok(TheoryRun {
        bulk,
        waveguide,
        curve,
        summary,
    })
}

/// CSV rows `scaled_freq,gamma_wg_ns,beta`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[EmissionPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scaled_freq,gamma_wg_ns,beta")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.scaled_freq, p.gamma_wg, p.beta)?;
    }
    Ok(())
}
