//! Guided-mode extraction from W1 supercell band structures: branch
//! tracking, group velocity, effective mode volume and band edge.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::SQRT3;
use crate::interp::Pchip;
use crate::linalg::dot;
use crate::pwe::{reconstruct_field, BandStructure, ModeField, Parity, PweSolver};
use crate::{Error, Result, C_LIGHT};

/// Bulk TE gap in scaled frequency ν = ωa/2πc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapWindow {
    pub nu_low: f64,
    pub nu_high: f64,
}

impl GapWindow {
    pub fn contains(&self, nu: f64) -> bool {
        nu > self.nu_low && nu < self.nu_high
    }

    pub fn width(&self) -> f64 {
        self.nu_high - self.nu_low
    }

    pub fn midgap(&self) -> f64 {
        0.5 * (self.nu_low + self.nu_high)
    }
}

/// Gap between the maximum of band 1 and the minimum of band 2 over the
/// sampled path.
pub fn bulk_gap(bs: &BandStructure) -> Result<GapWindow> {
    if bs.n_bands() < 2 || bs.bands.is_empty() {
        return Err(Error::param("bulk gap needs at least two bands on a non-empty path"));
    }
    let band1_max = bs.bands.iter().map(|b| b[0]).fold(f64::NEG_INFINITY, f64::max);
    let band2_min = bs.bands.iter().map(|b| b[1]).fold(f64::INFINITY, f64::min);
    if band2_min <= band1_max {
        return Err(Error::NoGap { band1_max, band2_min });
    }
    Ok(GapWindow {
        nu_low: band1_max,
        nu_high: band2_min,
    })
}

/// k-points along the propagation axis: `n_uniform` evenly spaced points on
/// [0, π/a] plus `n_cluster` points approaching π/a geometrically, the
/// closest at a distance of 10⁻³ of the uniform spacing.
pub fn waveguide_k_samples(a: f64, n_uniform: usize, n_cluster: usize) -> Vec<f64> {
    let kmax = PI / a;
    let n_uniform = n_uniform.max(2);
    let step = 1.0 / (n_uniform - 1) as f64;
    let mut frac: Vec<f64> = (0..n_uniform).map(|i| i as f64 * step).collect();
    for j in 0..n_cluster {
        let delta = step * 1e-3f64.powf((j + 1) as f64 / n_cluster as f64);
        frac.push(1.0 - delta);
    }
    frac.sort_by(|x, y| x.partial_cmp(y).unwrap());
    frac.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    frac.into_iter().map(|f| f * kmax).collect()
}

/// Settings for guided-mode extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedModeOptions {
    /// Half-width of the localization strip in units of the row spacing a√3/2.
    pub strip_half_width_rows: f64,
    /// Minimum energy fraction inside the strip.
    pub localization_threshold: f64,
    /// Field grid points per lattice period.
    pub field_resolution: usize,
    /// Membrane thickness used to promote mode areas to volumes (m).
    pub t_slab: f64,
}

impl Default for GuidedModeOptions {
    fn default() -> Self {
        Self {
            strip_half_width_rows: 1.5,
            localization_threshold: 0.5,
            field_resolution: 32,
            t_slab: crate::geometry::DEFAULT_SLAB_THICKNESS,
        }
    }
}

/// The fundamental guided branch, ordered by increasing k and ending at the
/// zone boundary k = π/a.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveguideMode {
    /// k along x (rad/m), strictly increasing.
    pub k_samples: Vec<f64>,
    /// ω (rad/s).
    pub omega: Vec<f64>,
    /// Group velocity (m/s) multiplied by `orientation`, so it is
    /// non-negative along the branch.
    pub v_g: Vec<f64>,
    /// Effective mode volume (m³).
    pub v_eff: Vec<f64>,
    /// ω at k = π/a (rad/s).
    pub omega_edge: f64,
    /// Energy fraction in the strip around the defect row.
    pub localization: Vec<f64>,
    /// Band index of the branch at each sample.
    pub band_indices: Vec<usize>,
    /// Sign of dω/dk on the branch (−1 for the usual W1 even mode).
    pub orientation: f64,
    /// Mirror parity of the branch, `Mixed` when the solver did not split.
    pub parity: Parity,
    pub lattice_constant: f64,
    pub t_slab: f64,
    #[serde(skip)]
    pub vectors: Vec<Vec<Complex64>>,
}

impl WaveguideMode {
    pub fn len(&self) -> usize {
        self.k_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_samples.is_empty()
    }

    pub fn nu(&self, i: usize) -> f64 {
        self.omega[i] * self.lattice_constant / (2.0 * PI * C_LIGHT)
    }

    /// (min, max) of ω on the branch.
    pub fn omega_range(&self) -> (f64, f64) {
        let lo = self.omega.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// The same mode for a crystal with lattice parameter `a` (r/a and the
    /// slab thickness fixed). The 2D problem is scale invariant, so k and ω
    /// scale as 1/a, v_g is unchanged and the mode area scales as a².
    pub fn rescaled(&self, a: f64) -> Self {
        let s = self.lattice_constant / a;
        Self {
            k_samples: self.k_samples.iter().map(|k| k * s).collect(),
            omega: self.omega.iter().map(|w| w * s).collect(),
            v_g: self.v_g.clone(),
            v_eff: self.v_eff.iter().map(|v| v / (s * s)).collect(),
            omega_edge: self.omega_edge * s,
            localization: self.localization.clone(),
            band_indices: self.band_indices.clone(),
            orientation: self.orientation,
            parity: self.parity,
            lattice_constant: a,
            t_slab: self.t_slab,
            vectors: self.vectors.clone(),
        }
    }

    /// CSV rows `k_a_pi,nu,vg_c,veff_a2t`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let a = self.lattice_constant;
        writeln!(w, "k_a_pi,nu,vg_c,veff_a2t")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.10},{:.12},{:.10e},{:.10}",
                self.k_samples[i] * a / PI,
                self.nu(i),
                self.v_g[i] / C_LIGHT,
                self.v_eff[i] / (a * a * self.t_slab)
            )?;
        }
        Ok(())
    }
}

/// Peak-normalised mode volume [∫ε|E|² dA / max ε|E|²] · t_slab.
pub fn effective_mode_volume(field: &ModeField, t_slab: f64) -> Result<f64> {
    let peak = field.max_energy_density();
    if !(peak > 0.0) {
        return Err(Error::Undefined("effective mode volume of a zero field".into()));
    }
    Ok(field.energy_integral() / peak * t_slab)
}

fn row_spacing(a: f64) -> f64 {
    0.5 * SQRT3 * a
}

/// Follows the lowest localized in-gap band from k = π/a back towards Γ.
///
/// `bs` must be solved at k = (k_x, 0) with k_x increasing and ending at π/a.
/// Band continuity between neighbouring k-points is decided by the largest
/// eigenvector overlap. The walk stops when the followed band leaves the gap
/// or delocalizes; only the segment on which ω(k) is monotone (ending at the
/// zone boundary) is returned.
pub fn extract_guided_mode(
    solver: &PweSolver,
    bs: &BandStructure,
    gap: &GapWindow,
    opts: &GuidedModeOptions,
) -> Result<WaveguideMode> {
    let n_k = bs.k_points.len();
    let a = bs.cell.lattice_constant;
    if n_k < 2 {
        return Err(Error::param("guided-mode extraction needs at least two k-points"));
    }
    for w in bs.k_points.windows(2) {
        if !(w[1][0] > w[0][0]) {
            return Err(Error::param("k-points must be strictly increasing along x"));
        }
    }
    if bs.k_points.iter().any(|k| k[1] != 0.0) {
        return Err(Error::param("guided-mode extraction needs k_y = 0"));
    }
    let half_width = opts.strip_half_width_rows * row_spacing(a);
    let localization = |ki: usize, band: usize| -> Result<(f64, ModeField)> {
        let field = reconstruct_field(bs, ki, band, opts.field_resolution)?;
        Ok((field.energy_fraction_within(half_width), field))
    };

    let last = n_k - 1;
    let mut start = None;
    for (band, &nu) in bs.bands[last].iter().enumerate() {
        if !gap.contains(nu) {
            continue;
        }
        let (loc, field) = localization(last, band)?;
        if loc >= opts.localization_threshold {
            start = Some((band, loc, field));
            break;
        }
    }
    let Some((band, loc, field)) = start else {
        return Err(Error::NoGuidedMode {
            nu_low: gap.nu_low,
            nu_high: gap.nu_high,
        });
    };

    // Walk from the zone boundary towards Γ.
    let mut rev: Vec<(usize, usize, f64, ModeField)> = vec![(last, band, loc, field)];
    let mut current = band;
    for ki in (0..last).rev() {
        let h = &bs.eigenvectors[ki + 1][current];
        let (next, _) = bs.eigenvectors[ki]
            .iter()
            .enumerate()
            .map(|(b, v)| (b, dot(h, v).norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !gap.contains(bs.bands[ki][next]) {
            break;
        }
        let (loc, field) = localization(ki, next)?;
        if loc < opts.localization_threshold {
            break;
        }
        rev.push((ki, next, loc, field));
        current = next;
    }
    if rev.len() < 2 {
        return Err(Error::NoGuidedMode {
            nu_low: gap.nu_low,
            nu_high: gap.nu_high,
        });
    }
    rev.reverse();

    // Orientation from the overall trend, then keep the monotone tail.
    let omega_at = |e: &(usize, usize, f64, ModeField)| bs.omega(e.0, e.1);
    let trend = omega_at(rev.last().unwrap()) - omega_at(&rev[0]);
    let orientation = if trend < 0.0 { -1.0 } else { 1.0 };
    let mut first = rev.len() - 1;
    while first > 0 && orientation * (omega_at(&rev[first]) - omega_at(&rev[first - 1])) >= 0.0 {
        first -= 1;
    }
    let branch = &rev[first..];
    if branch.len() < 2 {
        return Err(Error::NoGuidedMode {
            nu_low: gap.nu_low,
            nu_high: gap.nu_high,
        });
    }

    let mut mode = WaveguideMode {
        k_samples: Vec::with_capacity(branch.len()),
        omega: Vec::with_capacity(branch.len()),
        v_g: Vec::with_capacity(branch.len()),
        v_eff: Vec::with_capacity(branch.len()),
        omega_edge: omega_at(branch.last().unwrap()),
        localization: Vec::with_capacity(branch.len()),
        band_indices: Vec::with_capacity(branch.len()),
        orientation,
        parity: bs.parities[branch.last().unwrap().0][branch.last().unwrap().1],
        lattice_constant: a,
        t_slab: opts.t_slab,
        vectors: Vec::with_capacity(branch.len()),
    };
    for (ki, b, loc, field) in branch {
        let k = bs.k_points[*ki];
        let h = &bs.eigenvectors[*ki][*b];
        let vg = solver.group_velocity(k, bs.bands[*ki][*b], h, [1.0, 0.0])?;
        mode.k_samples.push(k[0]);
        mode.omega.push(bs.omega(*ki, *b));
        mode.v_g.push(orientation * vg);
        mode.v_eff.push(effective_mode_volume(field, opts.t_slab)?);
        mode.localization.push(*loc);
        mode.band_indices.push(*b);
        mode.vectors.push(h.clone());
    }
    Ok(mode)
}

/// Signed Hellmann–Feynman group velocity dω/dk (m/s) at sample `k_index`.
pub fn group_velocity(solver: &PweSolver, mode: &WaveguideMode, k_index: usize) -> Result<f64> {
    if k_index >= mode.len() {
        return Err(Error::param(format!("sample index {k_index} out of range")));
    }
    let nu = mode.nu(k_index);
    solver.group_velocity([mode.k_samples[k_index], 0.0], nu, &mode.vectors[k_index], [1.0, 0.0])
}

/// Central finite-difference dω/dk (m/s) at sample `k_index` with step `dk`;
/// the band at k ± dk is the one overlapping most with the sample's mode.
pub fn finite_difference_velocity(solver: &PweSolver, mode: &WaveguideMode, k_index: usize, dk: f64) -> Result<f64> {
    if k_index >= mode.len() {
        return Err(Error::param(format!("sample index {k_index} out of range")));
    }
    let k = mode.k_samples[k_index];
    let h = &mode.vectors[k_index];
    let n_bands = mode.band_indices[k_index] + 4;
    let track = |kx: f64| -> Result<f64> {
        let sol = solver.solve_k_parity([kx, 0.0], n_bands, mode.parity)?;
        let (best, _) = sol
            .vectors
            .iter()
            .enumerate()
            .map(|(b, v)| (b, dot(h, v).norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        Ok(2.0 * PI * C_LIGHT * sol.nu[best] / mode.lattice_constant)
    };
    Ok((track(k + dk)? - track(k - dk)?) / (2.0 * dk))
}

/// ω at the zone boundary (rad/s).
pub fn band_edge(mode: &WaveguideMode) -> f64 {
    mode.omega_edge
}

/// ν of the lowest localized in-gap mode of `parity` at k = π/a, found
/// without a branch sweep. Picks the same mode as [`extract_guided_mode`]
/// when `parity` is that branch's parity.
pub fn zone_boundary_guided_nu(
    solver: &PweSolver,
    gap: &GapWindow,
    opts: &GuidedModeOptions,
    parity: Parity,
    n_bands: usize,
) -> Result<f64> {
    let cell = solver.cell();
    let a = cell.lattice_constant;
    let k = [PI / a, 0.0];
    let sol = solver.solve_k_parity(k, n_bands, parity)?;
    let bs = BandStructure {
        k_points: vec![k],
        bands: vec![sol.nu],
        eigenvectors: vec![sol.vectors],
        parities: vec![sol.parity],
        cell: cell.clone(),
        basis: solver.basis().clone(),
        rule: solver.rule(),
    };
    let half_width = opts.strip_half_width_rows * row_spacing(a);
    for (band, &nu) in bs.bands[0].iter().enumerate() {
        if !gap.contains(nu) {
            continue;
        }
        let field = reconstruct_field(&bs, 0, band, opts.field_resolution)?;
        if field.energy_fraction_within(half_width) >= opts.localization_threshold {
            return Ok(nu);
        }
    }
    Err(Error::NoGuidedMode {
        nu_low: gap.nu_low,
        nu_high: gap.nu_high,
    })
}

/// Monotone cubic interpolant of ω(k) on the branch.
pub fn dispersion_interpolant(mode: &WaveguideMode) -> Result<Pchip> {
    Pchip::new(&mode.k_samples, &mode.omega)
}

/// k (rad/m) on the branch where ω(k) = `omega`.
pub fn invert_dispersion(mode: &WaveguideMode, omega: f64) -> Result<f64> {
    let (min, max) = mode.omega_range();
    if !(omega >= min && omega <= max) {
        return Err(Error::OutOfBand { omega, min, max });
    }
    if let Some(i) = mode.omega.iter().position(|&w| w == omega) {
        return Ok(mode.k_samples[i]);
    }
    let p = dispersion_interpolant(mode)?;
    p.inverse(omega).ok_or(Error::OutOfBand { omega, min, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_bulk_cell, make_row_supercell, make_w1_supercell, CrystalGeometry, ReciprocalBasis};
    use crate::pwe::{bulk_k_path, CoefficientRule};

    const A: f64 = 256e-9;

    #[test]
    fn k_samples_cover_the_half_zone() {
        let k = waveguide_k_samples(A, 64, 32);
        assert_eq!(k.len(), 96);
        assert_eq!(k[0], 0.0);
        assert!((k[95] - PI / A).abs() < 1e-6);
        assert!(k.windows(2).all(|w| w[1] > w[0]));
        let closest = PI / A - k[94];
        assert!((closest / (PI / A) - 1e-3 / 63.0).abs() < 1e-12);
    }

    #[test]
    fn empty_lattice_has_no_gap() {
        let g = CrystalGeometry::new(A, 0.0, 2.7).unwrap();
        let cell = make_bulk_cell(&g).unwrap();
        let basis = ReciprocalBasis::new(&cell, 3);
        let bs = PweSolver::new(&cell, &basis, CoefficientRule::Inverse)
            .unwrap()
            .solve_bands(&bulk_k_path(A, 6), 4)
            .unwrap();
        assert!(matches!(bulk_gap(&bs), Err(Error::NoGap { .. })));
    }

    #[test]
    fn uniform_field_volume_is_cell_volume() {
        let g = CrystalGeometry::new(A, 0.0, 2.7).unwrap();
        let cell = make_bulk_cell(&g).unwrap();
        let basis = ReciprocalBasis::new(&cell, 2);
        let bs = PweSolver::new(&cell, &basis, CoefficientRule::Inverse)
            .unwrap()
            .solve_bands(&[[0.3 * PI / A, 0.0]], 1)
            .unwrap();
        let f = reconstruct_field(&bs, 0, 0, 16).unwrap();
        let v = effective_mode_volume(&f, 150e-9).unwrap();
        assert!((v / (cell.area() * 150e-9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn defect_free_supercell_has_no_guided_mode() {
        let g = CrystalGeometry::new(A, 0.286, 2.7).unwrap();
        let cell = make_row_supercell(&g, 7, false).unwrap();
        let basis = ReciprocalBasis::new(&cell, 2);
        let solver = PweSolver::new(&cell, &basis, CoefficientRule::Inverse).unwrap();
        let k: Vec<[f64; 2]> = waveguide_k_samples(A, 8, 0).into_iter().map(|k| [k, 0.0]).collect();
        let bs = solver.solve_bands(&k, 12).unwrap();
        let gap = GapWindow {
            nu_low: 0.25,
            nu_high: 0.32,
        };
        let r = extract_guided_mode(&solver, &bs, &gap, &GuidedModeOptions::default());
        assert!(matches!(r, Err(Error::NoGuidedMode { .. })));
    }

    #[test]
    fn boundary_search_matches_branch_edge() {
        let g = CrystalGeometry::new(A, 0.286, 2.7).unwrap();
        let cell = make_w1_supercell(&g, 7).unwrap();
        let basis = ReciprocalBasis::new(&cell, 5);
        let solver = PweSolver::new(&cell, &basis, CoefficientRule::Inverse).unwrap();
        let k: Vec<[f64; 2]> = [0.8, 0.9, 1.0].iter().map(|f| [f * PI / A, 0.0]).collect();
        let bs = solver.solve_bands(&k, 12).unwrap();
        let gap = GapWindow {
            nu_low: 0.255,
            nu_high: 0.32,
        };
        let opts = GuidedModeOptions::default();
        let mode = extract_guided_mode(&solver, &bs, &gap, &opts).unwrap();
        let nu = zone_boundary_guided_nu(&solver, &gap, &opts, mode.parity, 12).unwrap();
        assert!((nu - mode.nu(mode.len() - 1)).abs() < 1e-12);
    }

    fn synthetic_mode() -> WaveguideMode {
        let k: Vec<f64> = (0..20).map(|i| i as f64 / 19.0 * PI / A).collect();
        let omega: Vec<f64> = k.iter().map(|k| 2.0e15 + 1.0e14 * (k * A).cos()).collect();
        WaveguideMode {
            v_g: k.iter().map(|k| 1.0e14 * A * (k * A).sin()).collect(),
            v_eff: vec![1e-20; k.len()],
            omega_edge: *omega.last().unwrap(),
            localization: vec![0.9; k.len()],
            band_indices: vec![0; k.len()],
            orientation: -1.0,
            parity: Parity::Even,
            lattice_constant: A,
            t_slab: 150e-9,
            vectors: Vec::new(),
            k_samples: k,
            omega,
        }
    }

    #[test]
    fn inversion_round_trips_and_hits_samples() {
        let m = synthetic_mode();
        assert_eq!(invert_dispersion(&m, m.omega[7]).unwrap(), m.k_samples[7]);
        assert!((invert_dispersion(&m, m.omega_edge).unwrap() - PI / A).abs() < 1e-9 * PI / A);
        let p = dispersion_interpolant(&m).unwrap();
        for t in [0.1, 0.37, 0.5, 0.93, 0.999] {
            let (lo, hi) = m.omega_range();
            let w = lo + t * (hi - lo);
            let k = invert_dispersion(&m, w).unwrap();
            assert!(((p.eval(k) - w) / w).abs() < 1e-6);
        }
        assert!(matches!(invert_dispersion(&m, 1.0e15), Err(Error::OutOfBand { .. })));
    }

    #[test]
    fn rescaling_keeps_scaled_quantities() {
        let m = synthetic_mode();
        let r = m.rescaled(248e-9);
        for i in 0..m.len() {
            assert!((m.nu(i) - r.nu(i)).abs() < 1e-14);
            assert!((r.k_samples[i] * 248e-9 - m.k_samples[i] * A).abs() < 1e-9);
            assert!((r.v_eff[i] / (248e-9f64).powi(2) / (m.v_eff[i] / A.powi(2)) - 1.0).abs() < 1e-12);
        }
    }
}
