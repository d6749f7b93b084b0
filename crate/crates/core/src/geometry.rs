//! Photonic-crystal geometry: triangular lattice of circular holes, W1
//! supercells, reciprocal bases and analytic dielectric Fourier coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::{Error, Result};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Close-packing hole area fraction of the triangular lattice, π/(2√3).
pub const MAX_FILL_FRACTION: f64 = PI / (2.0 * SQRT3);

/// Default membrane thickness (m).
pub const DEFAULT_SLAB_THICKNESS: f64 = 150e-9;

/// Bulk crystal parameters. Lengths are in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalGeometry {
    /// Lattice parameter.
    pub a: f64,
    /// Hole radius.
    pub r: f64,
    /// Background (membrane) permittivity; the effective index squared.
    pub eps_bg: f64,
    /// Permittivity inside the holes.
    pub eps_hole: f64,
    /// Membrane thickness, used to promote 2D mode areas to volumes.
    pub t_slab: f64,
}

impl CrystalGeometry {
    /// Air holes in a membrane of effective index `n_eff`, with the default
    /// 150 nm thickness.
    pub fn new(a: f64, r_over_a: f64, n_eff: f64) -> Result<Self> {
        let geom = Self {
            a,
            r: r_over_a * a,
            eps_bg: n_eff * n_eff,
            eps_hole: 1.0,
            t_slab: DEFAULT_SLAB_THICKNESS,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// `r = 0` is accepted and describes the empty (homogeneous) lattice.
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::param(format!(
                "lattice parameter a = {} must be positive",
                self.a
            )));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(Error::param(format!("hole radius r = {} must be non-negative", self.r)));
        }
        if self.r >= 0.5 * self.a {
            return Err(Error::param(format!(
                "hole radius r = {:.4}a must be below a/2 (holes touch or overlap)",
                self.r / self.a
            )));
        }
        if !(self.eps_hole >= 1.0) {
            return Err(Error::param(format!(
                "hole permittivity {} must be >= 1",
                self.eps_hole
            )));
        }
        if !(self.eps_bg > self.eps_hole) {
            return Err(Error::param(format!(
                "background permittivity {} must exceed hole permittivity {}",
                self.eps_bg, self.eps_hole
            )));
        }
        if !(self.t_slab.is_finite() && self.t_slab > 0.0) {
            return Err(Error::param(format!("slab thickness {} must be positive", self.t_slab)));
        }
        Ok(())
    }

    /// Hole area fraction (2π/√3)(r/a)².
    pub fn fill_fraction(&self) -> f64 {
        2.0 * PI / SQRT3 * (self.r / self.a).powi(2)
    }

    pub fn n_eff(&self) -> f64 {
        self.eps_bg.sqrt()
    }

    /// Same crystal with a different lattice parameter; r/a and the slab
    /// thickness are kept.
    pub fn with_lattice(&self, a: f64) -> Self {
        Self {
            a,
            r: self.r / self.a * a,
            ..*self
        }
    }
}

/// A lattice site of a (super)cell. Defect sites mark removed holes and do
/// not contribute to the dielectric function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSite {
    pub center: [f64; 2],
    pub radius: f64,
    pub is_defect: bool,
}

/// Periodic cell with circular holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supercell {
    pub lattice_vectors: [[f64; 2]; 2],
    pub sites: Vec<LatticeSite>,
    pub eps_bg: f64,
    pub eps_hole: f64,
    /// Lattice parameter of the underlying triangular lattice.
    pub lattice_constant: f64,
    /// Number of lattice rows stacked along the second lattice vector.
    pub n_rows: usize,
}

impl Supercell {
    pub fn area(&self) -> f64 {
        let [a1, a2] = self.lattice_vectors;
        (a1[0] * a2[1] - a1[1] * a2[0]).abs()
    }

    /// Sites that carry a hole.
    pub fn holes(&self) -> impl Iterator<Item = &LatticeSite> {
        self.sites.iter().filter(|s| !s.is_defect && s.radius > 0.0)
    }

    pub fn reciprocal_vectors(&self) -> [[f64; 2]; 2] {
        let [a1, a2] = self.lattice_vectors;
        let det = a1[0] * a2[1] - a1[1] * a2[0];
        let s = 2.0 * PI / det;
        [[a2[1] * s, -a2[0] * s], [-a1[1] * s, a1[0] * s]]
    }

    pub fn to_fractional(&self, p: [f64; 2]) -> [f64; 2] {
        let [a1, a2] = self.lattice_vectors;
        let det = a1[0] * a2[1] - a1[1] * a2[0];
        [(p[0] * a2[1] - p[1] * a2[0]) / det, (a1[0] * p[1] - a1[1] * p[0]) / det]
    }

    pub fn to_cartesian(&self, f: [f64; 2]) -> [f64; 2] {
        let [a1, a2] = self.lattice_vectors;
        [f[0] * a1[0] + f[1] * a2[0], f[0] * a1[1] + f[1] * a2[1]]
    }

    /// Shortest periodic displacement from `q` to `p`.
    fn min_image(&self, p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
        let f = self.to_fractional([p[0] - q[0], p[1] - q[1]]);
        let base = [f[0] - f[0].round(), f[1] - f[1].round()];
        let mut best = self.to_cartesian(base);
        let mut best_d = best[0] * best[0] + best[1] * best[1];
        for n1 in -2..=2 {
            for n2 in -1..=1 {
                let d = self.to_cartesian([base[0] + n1 as f64, base[1] + n2 as f64]);
                let dd = d[0] * d[0] + d[1] * d[1];
                if dd < best_d {
                    best_d = dd;
                    best = d;
                }
            }
        }
        best
    }

    /// Permittivity at a point (point sampling, periodic).
    pub fn eps_at(&self, p: [f64; 2]) -> f64 {
        for hole in self.holes() {
            let d = self.min_image(p, hole.center);
            if d[0] * d[0] + d[1] * d[1] < hole.radius * hole.radius {
                return self.eps_hole;
            }
        }
        self.eps_bg
    }

    /// Cell-averaged permittivity.
    pub fn mean_eps(&self) -> f64 {
        let hole_area: f64 = self.holes().map(|h| PI * h.radius * h.radius).sum();
        let f = hole_area / self.area();
        self.eps_bg + f * (self.eps_hole - self.eps_bg)
    }

    /// Checks that no two holes (including periodic images) overlap or touch.
    pub fn validate(&self) -> Result<()> {
        let holes: Vec<_> = self.holes().copied().collect();
        let tol = 1e-12 * self.lattice_constant;
        for (i, hi) in holes.iter().enumerate() {
            for (j, hj) in holes.iter().enumerate().skip(i) {
                let limit = hi.radius + hj.radius;
                let f = self.to_fractional([hi.center[0] - hj.center[0], hi.center[1] - hj.center[1]]);
                for n1 in -2i32..=2 {
                    for n2 in -2i32..=2 {
                        if i == j && n1 == 0 && n2 == 0 {
                            continue;
                        }
                        let d = self.to_cartesian([f[0] + n1 as f64, f[1] + n2 as f64]);
                        if (d[0] * d[0] + d[1] * d[1]).sqrt() <= limit + tol {
                            return Err(Error::param(format!(
                                "holes {i} and {j} overlap or touch (separation {:.4e} m <= {:.4e} m)",
                                (d[0] * d[0] + d[1] * d[1]).sqrt(),
                                limit
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the structure maps onto itself under y → −y.
    pub fn is_y_mirror_symmetric(&self) -> bool {
        let tol = 1e-9;
        let holes: Vec<_> = self.holes().collect();
        let lattice_ok = {
            // the mirrored lattice vectors must still generate the lattice
            let [a1, a2] = self.lattice_vectors;
            [[a1[0], -a1[1]], [a2[0], -a2[1]]].iter().all(|v| {
                let f = self.to_fractional(*v);
                (f[0] - f[0].round()).abs() < tol && (f[1] - f[1].round()).abs() < tol
            })
        };
        lattice_ok
            && holes.iter().all(|h| {
                let m = [h.center[0], -h.center[1]];
                holes.iter().any(|o| {
                    let f = self.to_fractional([m[0] - o.center[0], m[1] - o.center[1]]);
                    (f[0] - f[0].round()).abs() < tol
                        && (f[1] - f[1].round()).abs() < tol
                        && (o.radius - h.radius).abs() <= tol * self.lattice_constant
                })
            })
    }
}

/// Primitive triangular cell with one hole at the origin.
pub fn make_bulk_cell(geom: &CrystalGeometry) -> Result<Supercell> {
    geom.validate()?;
    let a = geom.a;
    let cell = Supercell {
        lattice_vectors: [[a, 0.0], [0.5 * a, 0.5 * SQRT3 * a]],
        sites: vec![LatticeSite {
            center: [0.0, 0.0],
            radius: geom.r,
            is_defect: false,
        }],
        eps_bg: geom.eps_bg,
        eps_hole: geom.eps_hole,
        lattice_constant: a,
        n_rows: 1,
    };
    cell.validate()?;
    Ok(cell)
}

/// Rectangular supercell of `n_rows` stacked lattice rows, one period long
/// along x: a1 = (a, 0), a2 = (0, n·a√3/2).
///
/// Rows sit at y = j·a√3/2, each shifted by j·a/2 along x, with j running
/// over −(n−1)/2 … (n−1)/2 for odd n and −n/2 … n/2−1 for even n. An even
/// row count tiles the bulk lattice exactly. An odd count cannot: the two
/// rows meeting at the cell boundary are then aligned instead of staggered,
/// which leaves a stacking fault half a cell away from the centre row. With
/// `remove_center` (odd n only) the j = 0 row is a defect row.
pub fn make_row_supercell(geom: &CrystalGeometry, n_rows: usize, remove_center: bool) -> Result<Supercell> {
    geom.validate()?;
    if n_rows == 0 {
        return Err(Error::param("supercell needs at least one row"));
    }
    if remove_center && n_rows % 2 == 0 {
        return Err(Error::param(format!(
            "a centred defect row needs an odd row count, got {n_rows}"
        )));
    }
    let a = geom.a;
    let first = -(n_rows as i64 / 2);
    let sites = (first..first + n_rows as i64)
        .map(|j| {
            let x = (0.5 * j as f64).rem_euclid(1.0) * a;
            LatticeSite {
                center: [x, j as f64 * 0.5 * SQRT3 * a],
                radius: geom.r,
                is_defect: remove_center && j == 0,
            }
        })
        .collect();
    let cell = Supercell {
        lattice_vectors: [[a, 0.0], [0.0, n_rows as f64 * 0.5 * SQRT3 * a]],
        sites,
        eps_bg: geom.eps_bg,
        eps_hole: geom.eps_hole,
        lattice_constant: a,
        n_rows,
    };
    cell.validate()?;
    Ok(cell)
}

/// W1 waveguide supercell: `n_rows` rows (odd, at least 7) with the centre
/// row of holes left out.
pub fn make_w1_supercell(geom: &CrystalGeometry, n_rows: usize) -> Result<Supercell> {
    if n_rows % 2 == 0 || n_rows < 7 {
        return Err(Error::param(format!(
            "W1 supercell needs an odd row count of at least 7, got {n_rows}"
        )));
    }
    make_row_supercell(geom, n_rows, true)
}

/// Plane-wave basis: all reciprocal vectors of a cell inside a disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalBasis {
    pub g1: [f64; 2],
    pub g2: [f64; 2],
    /// Disc radius in units of the bulk reciprocal lattice constant 4π/(√3a).
    pub cutoff: usize,
    /// Integer coordinates (m1, m2) of each G = m1·g1 + m2·g2.
    pub indices: Vec<[i32; 2]>,
    pub g_list: Vec<[f64; 2]>,
}

impl ReciprocalBasis {
    /// All G with |G| ≤ cutoff · 4π/(√3a), where a is the lattice constant of
    /// the underlying triangular lattice. For the bulk cell this keeps
    /// `cutoff` shells of reciprocal vectors along every primitive direction.
    pub fn new(cell: &Supercell, cutoff: usize) -> Self {
        let [g1, g2] = cell.reciprocal_vectors();
        let b = 4.0 * PI / (SQRT3 * cell.lattice_constant);
        let radius = cutoff as f64 * b;
        let [a1, a2] = cell.lattice_vectors;
        let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        let m1_max = (radius * norm(a1) / (2.0 * PI)).ceil() as i32 + 1;
        let m2_max = (radius * norm(a2) / (2.0 * PI)).ceil() as i32 + 1;
        let tol = 1e-9 * b;
        let mut entries: Vec<([i32; 2], [f64; 2], f64)> = Vec::new();
        for m1 in -m1_max..=m1_max {
            for m2 in -m2_max..=m2_max {
                let g = [
                    m1 as f64 * g1[0] + m2 as f64 * g2[0],
                    m1 as f64 * g1[1] + m2 as f64 * g2[1],
                ];
                let len = norm(g);
                if len <= radius + tol {
                    entries.push(([m1, m2], g, len));
                }
            }
        }
        entries.sort_by(|x, y| x.2.partial_cmp(&y.2).unwrap().then_with(|| x.0.cmp(&y.0)));
        Self {
            g1,
            g2,
            cutoff,
            indices: entries.iter().map(|e| e.0).collect(),
            g_list: entries.iter().map(|e| e.1).collect(),
        }
    }

    /// Basis from an explicit list of reciprocal vectors of `cell`.
    pub fn from_vectors(cell: &Supercell, vectors: &[[f64; 2]]) -> Result<Self> {
        let [g1, g2] = cell.reciprocal_vectors();
        let [a1, a2] = cell.lattice_vectors;
        let mut indices = Vec::with_capacity(vectors.len());
        for g in vectors {
            let f1 = (g[0] * a1[0] + g[1] * a1[1]) / (2.0 * PI);
            let f2 = (g[0] * a2[0] + g[1] * a2[1]) / (2.0 * PI);
            if (f1 - f1.round()).abs() > 1e-8 || (f2 - f2.round()).abs() > 1e-8 {
                return Err(Error::param(format!("vector {g:?} is not on the reciprocal lattice")));
            }
            indices.push([f1.round() as i32, f2.round() as i32]);
        }
        let g_list = indices
            .iter()
            .map(|&[m1, m2]| {
                [
                    m1 as f64 * g1[0] + m2 as f64 * g2[0],
                    m1 as f64 * g1[1] + m2 as f64 * g2[1],
                ]
            })
            .collect();
        Ok(Self {
            g1,
            g2,
            cutoff: 0,
            indices,
            g_list,
        })
    }

    pub fn len(&self) -> usize {
        self.g_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_list.is_empty()
    }

    pub fn index_map(&self) -> HashMap<[i32; 2], usize> {
        self.indices.iter().enumerate().map(|(i, &m)| (m, i)).collect()
    }

    pub fn is_closed_under_negation(&self) -> bool {
        let map = self.index_map();
        self.indices.iter().all(|&[m1, m2]| map.contains_key(&[-m1, -m2]))
    }

    pub fn vector(&self, m: [i32; 2]) -> [f64; 2] {
        [
            m[0] as f64 * self.g1[0] + m[1] as f64 * self.g2[0],
            m[0] as f64 * self.g1[1] + m[1] as f64 * self.g2[1],
        ]
    }
}

/// Disc form factor 2J₁(x)/x, with value 1 at x = 0.
fn disc_form_factor(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 8.0
    } else {
        2.0 * libm::j1(x) / x
    }
}

/// Analytic Fourier coefficient of ε(r) (or of 1/ε(r) when `of_inverse`)
/// at reciprocal vector `g`:
///
/// ```text
/// F(G) = f_bg δ_G0 + Σ_j (f_hole − f_bg) (πr_j²/A) · 2J₁(|G|r_j)/(|G|r_j) · exp(−iG·R_j)
/// ```
pub fn fourier_coefficient(cell: &Supercell, g: [f64; 2], of_inverse: bool) -> Complex64 {
    let (bg, hole) = if of_inverse {
        (1.0 / cell.eps_bg, 1.0 / cell.eps_hole)
    } else {
        (cell.eps_bg, cell.eps_hole)
    };
    let glen = (g[0] * g[0] + g[1] * g[1]).sqrt();
    let area = cell.area();
    let scale = 2.0 * PI / (SQRT3 * cell.lattice_constant);
    let mut sum = if glen < 1e-12 * scale {
        Complex64::new(bg, 0.0)
    } else {
        Complex64::new(0.0, 0.0)
    };
    for h in cell.holes() {
        let form = (hole - bg) * PI * h.radius * h.radius / area * disc_form_factor(glen * h.radius);
        let phase = -(g[0] * h.center[0] + g[1] * h.center[1]);
        sum += Complex64::from_polar(form, phase);
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom(r_over_a: f64) -> CrystalGeometry {
        CrystalGeometry {
            a: 256e-9,
            r: r_over_a * 256e-9,
            eps_bg: 7.29,
            eps_hole: 1.0,
            t_slab: 150e-9,
        }
    }

    #[test]
    fn bulk_cell_area_and_vectors() {
        let cell = make_bulk_cell(&geom(0.286)).unwrap();
        assert_relative_eq!(cell.area(), 3f64.sqrt() / 2.0 * 256e-9f64.powi(2), max_relative = 1e-14);
        assert_relative_eq!(cell.area(), 5.675e-14, max_relative = 1e-3);
        let [a1, a2] = cell.lattice_vectors;
        let n1 = (a1[0] * a1[0] + a1[1] * a1[1]).sqrt();
        let n2 = (a2[0] * a2[0] + a2[1] * a2[1]).sqrt();
        assert_relative_eq!(n1, 256e-9, max_relative = 1e-14);
        assert_relative_eq!(n2, 256e-9, max_relative = 1e-14);
        let cos = (a1[0] * a2[0] + a1[1] * a2[1]) / (n1 * n2);
        assert_relative_eq!(cos, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn reciprocal_vectors_are_dual() {
        let cell = make_w1_supercell(&geom(0.286), 11).unwrap();
        let g = cell.reciprocal_vectors();
        for i in 0..2 {
            for j in 0..2 {
                let a = cell.lattice_vectors[j];
                let dot = g[i][0] * a[0] + g[i][1] * a[1];
                let expect = if i == j { 2.0 * PI } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn touching_holes_are_rejected() {
        assert!(matches!(
            CrystalGeometry::new(256e-9, 0.5, 2.7),
            Err(Error::Parameter(_))
        ));
        let mut g = geom(0.286);
        g.r = 0.5 * g.a;
        assert!(make_bulk_cell(&g).is_err());
    }

    #[test]
    fn empty_lattice_cell_averages_to_background() {
        let cell = make_bulk_cell(&geom(0.0)).unwrap();
        assert_eq!(cell.mean_eps(), 7.29);
        let c = fourier_coefficient(&cell, [1.3e7, -2.0e6], false);
        assert_eq!(c, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn w1_supercell_counts_and_extent() {
        let g = geom(0.286);
        let w1 = make_w1_supercell(&g, 11).unwrap();
        assert_eq!(w1.holes().count(), 10);
        assert_eq!(w1.sites.len(), 11);
        assert_relative_eq!(
            w1.lattice_vectors[1][1],
            11.0 * 256e-9 * SQRT3 / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(w1.lattice_vectors[1][1], 2.439e-6, max_relative = 1e-3);
        // the centre row carries no hole
        assert!(w1.holes().all(|h| h.center[1].abs() > 1e-12));
        assert_eq!(make_w1_supercell(&g, 7).unwrap().holes().count(), 6);
        assert!(make_w1_supercell(&g, 6).is_err());
        assert!(make_w1_supercell(&g, 5).is_err());
        assert!(w1.is_y_mirror_symmetric());
    }

    #[test]
    fn mean_permittivity_matches_worked_value() {
        let cell = make_bulk_cell(&geom(0.286)).unwrap();
        let f = 2.0 * PI / SQRT3 * 0.286f64.powi(2);
        assert_relative_eq!(f, 0.29672, max_relative = 1e-4);
        let c0 = fourier_coefficient(&cell, [0.0, 0.0], false);
        assert_relative_eq!(c0.re, 7.29 + f * (1.0 - 7.29), max_relative = 1e-14);
        assert_relative_eq!(c0.re, 5.424, max_relative = 1e-3);
        assert_eq!(c0.im, 0.0);
    }

    #[test]
    fn basis_is_closed_under_negation() {
        let cell = make_w1_supercell(&geom(0.286), 7).unwrap();
        let basis = ReciprocalBasis::new(&cell, 3);
        assert!(basis.is_closed_under_negation());
        assert_eq!(basis.g_list[0], [0.0, 0.0]);
    }

    /// ∫_disc exp(−iG·x) d²x by slicing along x and substituting x = r sin θ;
    /// the periodic integrand makes the trapezoid rule spectrally accurate.
    fn disc_transform_by_quadrature(r: f64, g: [f64; 2]) -> Complex64 {
        let n = 400;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let theta = -PI / 2.0 + PI * (i as f64 + 0.5) / n as f64;
            let x = r * theta.sin();
            let half = r * theta.cos();
            let chord = if g[1].abs() < 1e-300 {
                2.0 * half
            } else {
                2.0 * (g[1] * half).sin() / g[1]
            };
            acc += Complex64::from_polar(chord, -g[0] * x) * (r * theta.cos());
        }
        acc * (PI / n as f64)
    }

    #[test]
    fn coefficients_match_direct_quadrature() {
        let g = geom(0.286);
        let mut cell = make_w1_supercell(&g, 7).unwrap();
        // break the inversion symmetry so the phases matter
        cell.sites[0].center[0] += 0.11 * g.a;
        let rec = cell.reciprocal_vectors();
        for m in [[0, 0], [1, 0], [0, 3], [2, -5], [-3, 7]] {
            let gv = [
                m[0] as f64 * rec[0][0] + m[1] as f64 * rec[1][0],
                m[0] as f64 * rec[0][1] + m[1] as f64 * rec[1][1],
            ];
            let mut expect = if m == [0, 0] {
                Complex64::new(g.eps_bg, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            for h in cell.holes() {
                let phase = Complex64::from_polar(1.0, -(gv[0] * h.center[0] + gv[1] * h.center[1]));
                expect += (g.eps_hole - g.eps_bg) / cell.area() * disc_transform_by_quadrature(h.radius, gv) * phase;
            }
            let got = fourier_coefficient(&cell, gv, false);
            assert!((got - expect).norm() < 1e-10 * g.eps_bg, "{m:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn coefficients_are_conjugate_symmetric() {
        let g = geom(0.3);
        let mut cell = make_w1_supercell(&g, 9).unwrap();
        cell.sites[2].center[0] += 0.2 * g.a;
        let basis = ReciprocalBasis::new(&cell, 3);
        let mut worst_im: f64 = 0.0;
        for m in &basis.indices {
            let f = fourier_coefficient(&cell, basis.vector(*m), true);
            let fm = fourier_coefficient(&cell, basis.vector([-m[0], -m[1]]), true);
            assert!((f - fm.conj()).norm() < 1e-15);
            worst_im = worst_im.max(f.im.abs());
        }
        assert!(worst_im > 1e-6, "shifted cell should have complex coefficients");
    }

    #[test]
    fn bulk_supercell_coefficients_fold_onto_bulk() {
        let g = geom(0.286);
        let bulk = make_bulk_cell(&g).unwrap();
        let sc = make_row_supercell(&g, 6, false).unwrap();
        let bulk_rec = bulk.reciprocal_vectors();
        let basis = ReciprocalBasis::new(&sc, 3);
        let mut on_lattice = 0;
        for m in &basis.indices {
            let gv = basis.vector(*m);
            let n1 = (gv[0] * bulk.lattice_vectors[0][0] + gv[1] * bulk.lattice_vectors[0][1]) / (2.0 * PI);
            let n2 = (gv[0] * bulk.lattice_vectors[1][0] + gv[1] * bulk.lattice_vectors[1][1]) / (2.0 * PI);
            let integral = (n1 - n1.round()).abs() < 1e-9 && (n2 - n2.round()).abs() < 1e-9;
            let got = fourier_coefficient(&sc, gv, false);
            if integral {
                on_lattice += 1;
                let gb = [
                    n1.round() * bulk_rec[0][0] + n2.round() * bulk_rec[1][0],
                    n1.round() * bulk_rec[0][1] + n2.round() * bulk_rec[1][1],
                ];
                let expect = fourier_coefficient(&bulk, gb, false);
                assert!((got - expect).norm() < 1e-12 * g.eps_bg, "{m:?}");
            } else {
                assert!(got.norm() < 1e-12 * g.eps_bg, "{m:?}: {got}");
            }
        }
        assert!(on_lattice > 1);
    }
}
