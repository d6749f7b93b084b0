//! Run configuration, read from TOML with sections [geometry], [solver],
//! [emission], [tcspc] and [classify]. Every key is optional.

use std::path::Path;

use pcw_core::emission::EmissionParams;
use pcw_core::geometry::CrystalGeometry;
use pcw_core::pwe::CoefficientRule;
use pcw_core::tcspc::{self, FitOptions, RateSpace};
use pcw_core::C_LIGHT;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub solver: SolverConfig,
    pub emission: EmissionConfig,
    pub tcspc: TcspcConfig,
    pub classify: ClassifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub lattice_nm: f64,
    pub r_over_a: f64,
    /// Effective index of the membrane; ε_bg = n_eff².
    pub n_eff: f64,
    pub slab_nm: f64,
    /// Rows in the W1 supercell (odd, ≥ 7).
    pub n_rows: usize,
    /// ± uncertainty of the lattice parameter for the band-edge interval.
    pub lattice_uncertainty_nm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            lattice_nm: 256.0,
            r_over_a: 0.286,
            n_eff: 2.70,
            slab_nm: 150.0,
            n_rows: 11,
            lattice_uncertainty_nm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Run the theory chain during `analyze`.
    pub enabled: bool,
    pub rule: CoefficientRule,
    pub bulk_cutoff: usize,
    pub supercell_cutoff: usize,
    /// k-points per segment of the Γ–M–K–Γ path.
    pub bulk_k_per_segment: usize,
    /// Uniform waveguide k-samples on [0, π/a].
    pub waveguide_k_uniform: usize,
    /// Extra samples clustered geometrically towards π/a.
    pub waveguide_k_cluster: usize,
    pub localization_threshold: f64,
    pub strip_half_width_rows: f64,
    pub field_resolution: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rule: CoefficientRule::Inverse,
            bulk_cutoff: 9,
            supercell_cutoff: 7,
            bulk_k_per_segment: 20,
            waveguide_k_uniform: 64,
            waveguide_k_cluster: 32,
            localization_threshold: 0.5,
            strip_half_width_rows: 1.5,
            field_resolution: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionConfig {
    /// ns⁻¹.
    pub gamma0: f64,
    /// Permittivity in the rate expression; defaults to n_eff².
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Group-velocity floor as a fraction of c.
    pub vg_floor_c: f64,
    /// Γ_tot used for the theoretical β curve (ns⁻¹).
    pub gamma_tot: f64,
    pub n_points: usize,
    pub beta_threshold: f64,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            gamma0: pcw_core::emission::DEFAULT_GAMMA0,
            eps: None,
            vg_floor_c: 1e-3,
            gamma_tot: pcw_core::emission::DEFAULT_GAMMA_TOT,
            n_points: 400,
            beta_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcspcConfig {
    pub bin_width_ps: f64,
    pub rep_period_ps: f64,
    pub irf_fwhm_ps: f64,
    pub chi2_threshold: f64,
    pub rate_space: RateSpace,
    /// Fit the background even when the sidecar states it.
    pub free_background: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Default photon count per synthetic histogram.
    pub total_counts: u64,
    /// Default excitation time of synthetic histograms (ps).
    pub t0_ps: f64,
}

impl Default for TcspcConfig {
    fn default() -> Self {
        Self {
            bin_width_ps: tcspc::DEFAULT_BIN_WIDTH_PS,
            rep_period_ps: tcspc::DEFAULT_REP_PERIOD_PS,
            irf_fwhm_ps: tcspc::DEFAULT_IRF_FWHM_PS,
            chi2_threshold: tcspc::DEFAULT_CHI2_THRESHOLD,
            rate_space: RateSpace::Log,
            free_background: false,
            max_iterations: 300,
            tolerance: 1e-9,
            total_counts: 50_000,
            t0_ps: 1500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassifyMode {
    #[default]
    Fixed,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub mode: ClassifyMode,
    /// ns⁻¹; also the fallback of `auto`.
    pub threshold: f64,
    /// `auto` falls back to `threshold` when the two clusters' geometric
    /// means are closer than this ratio.
    pub min_cluster_ratio: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            mode: ClassifyMode::Fixed,
            threshold: 0.5,
            min_cluster_ratio: 3.0,
        }
    }
}

/// A problem with one key, reported against its line in the source.
struct KeyProblem {
    section: &'static str,
    key: &'static str,
    message: String,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text, path)
    }

    /// Parses and validates; `path` only labels errors.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0),
            message: e.message().trim().to_string(),
        })?;
        if let Some(p) = cfg.problems().into_iter().next() {
            return Err(PipelineError::Config {
                path: path.to_path_buf(),
                line: find_key_line(text, p.section, p.key).unwrap_or(0),
                message: format!("{}.{}: {}", p.section, p.key, p.message),
            });
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some(p) => Err(PipelineError::Config {
                path: "<config>".into(),
                line: 0,
                message: format!("{}.{}: {}", p.section, p.key, p.message),
            }),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    fn problems(&self) -> Vec<KeyProblem> {
        let mut out = Vec::new();
        let mut check = |ok: bool, section: &'static str, key: &'static str, message: String| {
            if !ok {
                out.push(KeyProblem { section, key, message });
            }
        };
        let g = &self.geometry;
        check(
            g.lattice_nm > 0.0 && g.lattice_nm.is_finite(),
            "geometry",
            "lattice_nm",
            format!("{} must be positive", g.lattice_nm),
        );
        check(
            (0.0..0.5).contains(&g.r_over_a),
            "geometry",
            "r_over_a",
            format!("{} must lie in [0, 0.5); holes touch at 0.5", g.r_over_a),
        );
        check(
            g.n_eff > 1.0 && g.n_eff.is_finite(),
            "geometry",
            "n_eff",
            format!("{} must exceed 1", g.n_eff),
        );
        check(
            g.slab_nm > 0.0 && g.slab_nm.is_finite(),
            "geometry",
            "slab_nm",
            format!("{} must be positive", g.slab_nm),
        );
        check(
            g.n_rows >= 7 && g.n_rows % 2 == 1,
            "geometry",
            "n_rows",
            format!("{} must be odd and at least 7", g.n_rows),
        );
        check(
            g.lattice_uncertainty_nm >= 0.0 && g.lattice_uncertainty_nm < g.lattice_nm,
            "geometry",
            "lattice_uncertainty_nm",
            format!("{} must lie in [0, lattice_nm)", g.lattice_uncertainty_nm),
        );
        let s = &self.solver;
        check(s.bulk_cutoff >= 1, "solver", "bulk_cutoff", "must be at least 1".into());
        check(
            s.supercell_cutoff >= 1,
            "solver",
            "supercell_cutoff",
            "must be at least 1".into(),
        );
        check(
            s.bulk_k_per_segment >= 2,
            "solver",
            "bulk_k_per_segment",
            "must be at least 2".into(),
        );
        check(
            s.waveguide_k_uniform >= 2,
            "solver",
            "waveguide_k_uniform",
            "must be at least 2".into(),
        );
        check(
            s.localization_threshold > 0.0 && s.localization_threshold < 1.0,
            "solver",
            "localization_threshold",
            format!("{} must lie in (0, 1)", s.localization_threshold),
        );
        check(
            s.strip_half_width_rows > 0.0,
            "solver",
            "strip_half_width_rows",
            "must be positive".into(),
        );
        check(
            s.field_resolution >= 8,
            "solver",
            "field_resolution",
            "must be at least 8".into(),
        );
        let e = &self.emission;
        check(
            e.gamma0 > 0.0,
            "emission",
            "gamma0",
            format!("{} must be positive", e.gamma0),
        );
        if let Some(eps) = e.eps {
            check(eps >= 1.0, "emission", "eps", format!("{eps} must be at least 1"));
        }
        check(
            e.vg_floor_c > 0.0 && e.vg_floor_c < 1.0,
            "emission",
            "vg_floor_c",
            format!("{} must lie in (0, 1)", e.vg_floor_c),
        );
        check(
            e.gamma_tot >= 0.0,
            "emission",
            "gamma_tot",
            format!("{} must be non-negative", e.gamma_tot),
        );
        check(e.n_points >= 2, "emission", "n_points", "must be at least 2".into());
        check(
            e.beta_threshold > 0.0 && e.beta_threshold < 1.0,
            "emission",
            "beta_threshold",
            format!("{} must lie in (0, 1)", e.beta_threshold),
        );
        let t = &self.tcspc;
        check(
            t.bin_width_ps > 0.0,
            "tcspc",
            "bin_width_ps",
            format!("{} must be positive", t.bin_width_ps),
        );
        check(
            t.rep_period_ps >= t.bin_width_ps,
            "tcspc",
            "rep_period_ps",
            format!("{} must be at least one bin", t.rep_period_ps),
        );
        check(
            t.irf_fwhm_ps >= 0.0,
            "tcspc",
            "irf_fwhm_ps",
            format!("{} must be non-negative", t.irf_fwhm_ps),
        );
        check(
            t.chi2_threshold > 0.0,
            "tcspc",
            "chi2_threshold",
            format!("{} must be positive", t.chi2_threshold),
        );
        check(
            t.max_iterations >= 1,
            "tcspc",
            "max_iterations",
            "must be at least 1".into(),
        );
        check(t.tolerance > 0.0, "tcspc", "tolerance", "must be positive".into());
        check(t.total_counts > 0, "tcspc", "total_counts", "must be positive".into());
        let c = &self.classify;
        check(
            c.threshold > 0.0,
            "classify",
            "threshold",
            format!("{} must be positive", c.threshold),
        );
        check(
            c.min_cluster_ratio >= 1.0,
            "classify",
            "min_cluster_ratio",
            format!("{} must be at least 1", c.min_cluster_ratio),
        );
        out
    }

    pub fn crystal(&self) -> pcw_core::Result<CrystalGeometry> {
        self.crystal_at(self.geometry.lattice_nm * 1e-9)
    }

    /// The crystal with lattice parameter `a` (m), r/a fixed.
    pub fn crystal_at(&self, a: f64) -> pcw_core::Result<CrystalGeometry> {
        let mut g = CrystalGeometry::new(a, self.geometry.r_over_a, self.geometry.n_eff)?;
        g.t_slab = self.geometry.slab_nm * 1e-9;
        g.validate()?;
        Ok(g)
    }

    pub fn emission_params(&self, geom: &CrystalGeometry) -> EmissionParams {
        EmissionParams {
            gamma0: self.emission.gamma0,
            eps: self.emission.eps.unwrap_or(geom.eps_bg),
            a: geom.a,
            vg_floor: self.emission.vg_floor_c * C_LIGHT,
            gamma_tot: self.emission.gamma_tot,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            rate_space: self.tcspc.rate_space,
            force_free_background: self.tcspc.free_background,
            max_iterations: self.tcspc.max_iterations,
            tolerance: self.tcspc.tolerance,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key` inside `[section]`.
fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim();
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config> {
        Config::from_toml_str(text, Path::new("run.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.solver.bulk_cutoff, 9);
        assert_eq!(c.solver.supercell_cutoff, 7);
        assert_eq!(c.geometry.n_rows, 11);
    }

    #[test]
    fn overrides_are_applied() {
        let c = parse("[geometry]\nlattice_nm = 248.0\nr_over_a = 0.292\n[classify]\nmode = \"auto\"\n").unwrap();
        assert_eq!(c.geometry.lattice_nm, 248.0);
        assert_eq!(c.geometry.r_over_a, 0.292);
        assert_eq!(c.classify.mode, ClassifyMode::Auto);
        assert_eq!(c.geometry.n_eff, 2.70);
    }

    #[test]
    fn invalid_radius_reports_its_line() {
        let err = parse("# run\n[geometry]\nlattice_nm = 256.0\nr_over_a = 0.5\n").unwrap_err();
        match err {
            PipelineError::Config { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("r_over_a"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let shown = parse("[geometry]\nr_over_a = 0.5\n").unwrap_err().to_string();
        assert!(shown.starts_with("run.toml:2:"), "{shown}");
    }

    #[test]
    fn syntax_and_unknown_keys_report_their_line() {
        match parse("[solver]\nbulk_cutoff = 9\nbulk_cutof = 3\n").unwrap_err() {
            PipelineError::Config { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        match parse("[tcspc]\nbin_width_ps = \n").unwrap_err() {
            PipelineError::Config { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.emission.eps = Some(12.25);
        c.classify.mode = ClassifyMode::Auto;
        let back = parse(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn emission_permittivity_defaults_to_effective_index() {
        let c = Config::default();
        let g = c.crystal().unwrap();
        assert!((c.emission_params(&g).eps - 7.29).abs() < 1e-12);
        assert!((g.t_slab - 150e-9).abs() < 1e-20);
    }
}
