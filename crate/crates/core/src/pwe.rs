//! Plane-wave expansion for the out-of-plane magnetic field H_z.
//!
//! Bloch modes H(r) = Σ_G h_G exp(i(k+G)·r) of −∇·(ε⁻¹∇H) = (ω/c)² H turn
//! into the Hermitian eigenproblem Θ h = (ω/c)² h with
//!
//! ```text
//! Θ_{GG'} = (k+G)·(k+G') η_{GG'}
//! ```
//!
//! where η is either the inverse of the Toeplitz matrix [ε(G−G')] (inverse
//! rule, the default) or the matrix of 1/ε coefficients (direct rule).
//!
//! η does not depend on k, so it is computed once per cell. When the cell and
//! the basis are symmetric under y → −y and k_y = 0, the problem splits into
//! even and odd blocks of half the size; both η and Θ are then only ever held
//! in block form.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::geometry::{fourier_coefficient, ReciprocalBasis, Supercell};
use crate::linalg::{lowest_eigenpairs, CMatrix};
use crate::{Error, Result, C_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientRule {
    /// η = [ε(G−G')]⁻¹.
    #[default]
    Inverse,
    /// η = [(1/ε)(G−G')].
    Direct,
}

/// Mirror parity of a mode under y → −y (only defined when k_y = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

/// Fourier coefficients tabulated on index differences Δm = m − m'.
struct CoefficientTable {
    offset: [i32; 2],
    width: usize,
    values: Vec<Complex64>,
}

impl CoefficientTable {
    fn new(cell: &Supercell, basis: &ReciprocalBasis, of_inverse: bool) -> Self {
        let max1 = basis.indices.iter().map(|m| m[0].abs()).max().unwrap_or(0);
        let max2 = basis.indices.iter().map(|m| m[1].abs()).max().unwrap_or(0);
        let (r1, r2) = (2 * max1, 2 * max2);
        let width = (2 * r1 + 1) as usize;
        let height = (2 * r2 + 1) as usize;
        let mut values = Vec::with_capacity(width * height);
        for d2 in -r2..=r2 {
            for d1 in -r1..=r1 {
                values.push(fourier_coefficient(cell, basis.vector([d1, d2]), of_inverse));
            }
        }
        Self {
            offset: [r1, r2],
            width,
            values,
        }
    }

    #[inline]
    fn get(&self, m: [i32; 2], n: [i32; 2]) -> Complex64 {
        let d1 = (m[0] - n[0] + self.offset[0]) as usize;
        let d2 = (m[1] - n[1] + self.offset[1]) as usize;
        self.values[d2 * self.width + d1]
    }
}

/// Symmetry-adapted basis for y → −y.
///
/// Each plane wave belongs to exactly one even function and, unless it is its
/// own mirror image, to one odd function. `coeff_*` hold the (real)
/// expansion coefficient of plane wave `i` in that function.
#[derive(Debug, Clone)]
struct MirrorSectors {
    even: Vec<Vec<(usize, f64)>>,
    odd: Vec<Vec<(usize, f64)>>,
    even_of: Vec<usize>,
    odd_of: Vec<Option<usize>>,
    coeff_even: Vec<f64>,
    coeff_odd: Vec<f64>,
}

impl MirrorSectors {
    fn build(basis: &ReciprocalBasis, cell: &Supercell) -> Option<Self> {
        let map = basis.index_map();
        let [a1, a2] = cell.lattice_vectors;
        let n = basis.len();
        let mut partner = vec![0usize; n];
        for (i, g) in basis.g_list.iter().enumerate() {
            let m = [g[0], -g[1]];
            let f1 = (m[0] * a1[0] + m[1] * a1[1]) / (2.0 * PI);
            let f2 = (m[0] * a2[0] + m[1] * a2[1]) / (2.0 * PI);
            if (f1 - f1.round()).abs() > 1e-8 || (f2 - f2.round()).abs() > 1e-8 {
                return None;
            }
            partner[i] = *map.get(&[f1.round() as i32, f2.round() as i32])?;
        }
        let mut s = MirrorSectors {
            even: Vec::new(),
            odd: Vec::new(),
            even_of: vec![0; n],
            odd_of: vec![None; n],
            coeff_even: vec![0.0; n],
            coeff_odd: vec![0.0; n],
        };
        for i in 0..n {
            let j = partner[i];
            if j == i {
                s.even_of[i] = s.even.len();
                s.coeff_even[i] = 1.0;
                s.even.push(vec![(i, 1.0)]);
            } else if i < j {
                s.even_of[i] = s.even.len();
                s.even_of[j] = s.even.len();
                s.coeff_even[i] = FRAC_1_SQRT_2;
                s.coeff_even[j] = FRAC_1_SQRT_2;
                s.even.push(vec![(i, FRAC_1_SQRT_2), (j, FRAC_1_SQRT_2)]);
                s.odd_of[i] = Some(s.odd.len());
                s.odd_of[j] = Some(s.odd.len());
                s.coeff_odd[i] = FRAC_1_SQRT_2;
                s.coeff_odd[j] = -FRAC_1_SQRT_2;
                s.odd.push(vec![(i, FRAC_1_SQRT_2), (j, -FRAC_1_SQRT_2)]);
            }
        }
        Some(s)
    }

    fn functions(&self, parity: Parity) -> &[Vec<(usize, f64)>] {
        match parity {
            Parity::Even => &self.even,
            _ => &self.odd,
        }
    }

    /// Block of a full-basis operator given entrywise by `entry`.
    fn project(&self, parity: Parity, entry: impl Fn(usize, usize) -> Complex64) -> CMatrix {
        let funcs = self.functions(parity);
        CMatrix::hermitian_from_lower(funcs.len(), |p, q| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(a, ca) in &funcs[p] {
                for &(b, cb) in &funcs[q] {
                    acc += entry(a, b) * (ca * cb);
                }
            }
            acc
        })
    }

    fn to_sector(&self, parity: Parity, h: &[Complex64]) -> Vec<Complex64> {
        self.functions(parity)
            .iter()
            .map(|f| f.iter().map(|&(a, c)| h[a] * c).sum())
            .collect()
    }

    fn from_sector(&self, parity: Parity, v: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for (f, &vp) in self.functions(parity).iter().zip(v) {
            for &(a, c) in f {
                h[a] += vp * c;
            }
        }
        h
    }
}

enum EtaStorage {
    Full(CMatrix),
    Mirror {
        sectors: MirrorSectors,
        even: CMatrix,
        odd: CMatrix,
    },
}

/// Solver bound to one cell and one plane-wave basis. Immutable after
/// construction, so k-points can be solved concurrently.
pub struct PweSolver {
    cell: Supercell,
    basis: ReciprocalBasis,
    rule: CoefficientRule,
    eta: EtaStorage,
}

/// Eigenpairs at a single k-point.
#[derive(Debug, Clone)]
pub struct KSolution {
    /// Dimensionless frequencies ν = ωa/2πc, ascending.
    pub nu: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
    pub parity: Vec<Parity>,
}

impl PweSolver {
    /// Uses the mirror-split representation whenever the cell and basis allow it.
    pub fn new(cell: &Supercell, basis: &ReciprocalBasis, rule: CoefficientRule) -> Result<Self> {
        Self::build(cell, basis, rule, true)
    }

    /// Always works with full-size matrices.
    pub fn new_unsplit(cell: &Supercell, basis: &ReciprocalBasis, rule: CoefficientRule) -> Result<Self> {
        Self::build(cell, basis, rule, false)
    }

    fn build(cell: &Supercell, basis: &ReciprocalBasis, rule: CoefficientRule, allow_split: bool) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::param("plane-wave basis is empty"));
        }
        let table = CoefficientTable::new(cell, basis, rule == CoefficientRule::Direct);
        let idx = &basis.indices;
        let sectors = if allow_split && cell.is_y_mirror_symmetric() {
            MirrorSectors::build(basis, cell)
        } else {
            None
        };
        let finish = |mut m: CMatrix, label: &str| -> Result<CMatrix> {
            if rule == CoefficientRule::Inverse {
                m.invert_hpd().map_err(|e| {
                    Error::Numerical(format!(
                        "dielectric Toeplitz matrix ({label}) is singular or not positive definite: {e}"
                    ))
                })?;
            }
            Ok(m)
        };
        let eta = match sectors {
            Some(sectors) => {
                let even = sectors.project(Parity::Even, |a, b| table.get(idx[a], idx[b]));
                let odd = sectors.project(Parity::Odd, |a, b| table.get(idx[a], idx[b]));
                EtaStorage::Mirror {
                    even: finish(even, "even block")?,
                    odd: finish(odd, "odd block")?,
                    sectors,
                }
            }
            None => {
                let full = CMatrix::hermitian_from_lower(basis.len(), |a, b| table.get(idx[a], idx[b]));
                EtaStorage::Full(finish(full, "full")?)
            }
        };
        Ok(Self {
            cell: cell.clone(),
            basis: basis.clone(),
            rule,
            eta,
        })
    }

    pub fn cell(&self) -> &Supercell {
        &self.cell
    }

    pub fn basis(&self) -> &ReciprocalBasis {
        &self.basis
    }

    pub fn rule(&self) -> CoefficientRule {
        self.rule
    }

    pub fn is_mirror_split(&self) -> bool {
        matches!(self.eta, EtaStorage::Mirror { .. })
    }

    /// Entry η_{ab} in the plane-wave basis.
    #[inline]
    fn eta_entry(&self, a: usize, b: usize) -> Complex64 {
        match &self.eta {
            EtaStorage::Full(m) => m.get(a, b),
            EtaStorage::Mirror { sectors, even, odd } => {
                let mut v =
                    even.get(sectors.even_of[a], sectors.even_of[b]) * (sectors.coeff_even[a] * sectors.coeff_even[b]);
                if let (Some(p), Some(q)) = (sectors.odd_of[a], sectors.odd_of[b]) {
                    v += odd.get(p, q) * (sectors.coeff_odd[a] * sectors.coeff_odd[b]);
                }
                v
            }
        }
    }

    /// η·h in the plane-wave basis.
    pub fn apply_eta(&self, h: &[Complex64]) -> Vec<Complex64> {
        match &self.eta {
            EtaStorage::Full(m) => m.matvec(h),
            EtaStorage::Mirror { sectors, even, odd } => {
                let n = h.len();
                let e = even.matvec(&sectors.to_sector(Parity::Even, h));
                let o = odd.matvec(&sectors.to_sector(Parity::Odd, h));
                let mut out = sectors.from_sector(Parity::Even, &e, n);
                for (x, y) in out.iter_mut().zip(sectors.from_sector(Parity::Odd, &o, n)) {
                    *x += y;
                }
                out
            }
        }
    }

    fn kg(&self, k: [f64; 2]) -> Vec<[f64; 2]> {
        self.basis.g_list.iter().map(|g| [k[0] + g[0], k[1] + g[1]]).collect()
    }

    /// Full Θ(k) in the plane-wave basis (SI units, m⁻²).
    pub fn assemble_operator(&self, k: [f64; 2]) -> CMatrix {
        let kg = self.kg(k);
        let n = kg.len();
        CMatrix::from_fn(n, |a, b| {
            let dot = kg[a][0] * kg[b][0] + kg[a][1] * kg[b][1];
            self.eta_entry(a, b) * dot
        })
    }

    fn nu_from_lambda(&self, lambda: f64, k: [f64; 2]) -> Result<f64> {
        let scale = (2.0 * PI / self.cell.lattice_constant).powi(2);
        if lambda < -1e-8 * scale {
            return Err(Error::Numerical(format!(
                "negative eigenvalue {lambda:.3e} at k = ({:.4e}, {:.4e}) rad/m",
                k[0], k[1]
            )));
        }
        Ok(lambda.max(0.0).sqrt() * self.cell.lattice_constant / (2.0 * PI))
    }

    /// Lowest `n_bands` eigenpairs at Bloch vector `k` (rad/m).
    pub fn solve_k(&self, k: [f64; 2], n_bands: usize) -> Result<KSolution> {
        self.solve_impl(k, n_bands, None)
    }

    /// Lowest `n_bands` eigenpairs of one mirror parity. Falls back to the
    /// unrestricted solve when the problem does not split at this k.
    pub fn solve_k_parity(&self, k: [f64; 2], n_bands: usize, parity: Parity) -> Result<KSolution> {
        self.solve_impl(k, n_bands, Some(parity))
    }

    fn splits_at(&self, k: [f64; 2]) -> Option<&MirrorSectors> {
        let scale = 2.0 * PI / self.cell.lattice_constant;
        match &self.eta {
            EtaStorage::Mirror { sectors, .. } if k[1].abs() <= 1e-12 * scale => Some(sectors),
            _ => None,
        }
    }

    fn solve_impl(&self, k: [f64; 2], n_bands: usize, only: Option<Parity>) -> Result<KSolution> {
        if n_bands > self.basis.len() {
            return Err(Error::param(format!(
                "{n_bands} bands requested but the basis has only {} plane waves",
                self.basis.len()
            )));
        }
        let tag = |e: Error| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "eigensolve failed at k = ({:.6e}, {:.6e}) rad/m: {msg}",
                k[0], k[1]
            )),
            other => other,
        };
        let kg = self.kg(k);
        let n = kg.len();
        let theta = |a: usize, b: usize| self.eta_entry(a, b) * (kg[a][0] * kg[b][0] + kg[a][1] * kg[b][1]);
        let mut pairs: Vec<(f64, Vec<Complex64>, Parity)> = Vec::with_capacity(2 * n_bands);
        match self.splits_at(k) {
            Some(sectors) => {
                let parities = match only {
                    Some(p @ (Parity::Even | Parity::Odd)) => vec![p],
                    _ => vec![Parity::Even, Parity::Odd],
                };
                for parity in parities {
                    let block = sectors.project(parity, theta);
                    let count = n_bands.min(block.dim());
                    let eig = lowest_eigenpairs(block, count).map_err(tag)?;
                    for (l, v) in eig.values.into_iter().zip(eig.vectors) {
                        pairs.push((l, sectors.from_sector(parity, &v, n), parity));
                    }
                }
            }
            None => {
                let full = CMatrix::hermitian_from_lower(n, theta);
                let eig = lowest_eigenpairs(full, n_bands).map_err(tag)?;
                for (l, v) in eig.values.into_iter().zip(eig.vectors) {
                    pairs.push((l, v, Parity::Mixed));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        pairs.truncate(n_bands);
        let mut sol = KSolution {
            nu: Vec::with_capacity(n_bands),
            vectors: Vec::with_capacity(n_bands),
            parity: Vec::with_capacity(n_bands),
        };
        for (l, v, p) in pairs {
            sol.nu.push(self.nu_from_lambda(l, k)?);
            sol.vectors.push(v);
            sol.parity.push(p);
        }
        Ok(sol)
    }

    /// Lowest `n_bands` bands along `k_path`; k-points are solved in parallel.
    pub fn solve_bands(&self, k_path: &[[f64; 2]], n_bands: usize) -> Result<BandStructure> {
        let sols: Vec<KSolution> = k_path
            .par_iter()
            .map(|&k| self.solve_k(k, n_bands))
            .collect::<Result<_>>()?;
        let mut bs = BandStructure {
            k_points: k_path.to_vec(),
            bands: Vec::with_capacity(sols.len()),
            eigenvectors: Vec::with_capacity(sols.len()),
            parities: Vec::with_capacity(sols.len()),
            cell: self.cell.clone(),
            basis: self.basis.clone(),
            rule: self.rule,
        };
        for s in sols {
            bs.bands.push(s.nu);
            bs.eigenvectors.push(s.vectors);
            bs.parities.push(s.parity);
        }
        Ok(bs)
    }

    /// ⟨h|∂Θ/∂k_d|h⟩ for a normalised eigenvector h at Bloch vector k.
    pub fn operator_derivative(&self, k: [f64; 2], h: &[Complex64], direction: [f64; 2]) -> f64 {
        let kg = self.kg(k);
        let eta_h = self.apply_eta(h);
        let mut acc = 0.0;
        for ((hg, ehg), kgv) in h.iter().zip(&eta_h).zip(&kg) {
            let proj = kgv[0] * direction[0] + kgv[1] * direction[1];
            acc += (hg.conj() * ehg).re * proj;
        }
        2.0 * acc
    }

    /// Group velocity dω/dk along `direction` (unit vector) by the
    /// Hellmann–Feynman theorem, v = (c²/2ω)⟨h|∂Θ/∂k|h⟩.
    pub fn group_velocity(&self, k: [f64; 2], nu: f64, h: &[Complex64], direction: [f64; 2]) -> Result<f64> {
        if nu <= 0.0 {
            return Err(Error::Undefined("group velocity of a zero-frequency mode".into()));
        }
        let omega = 2.0 * PI * C_LIGHT * nu / self.cell.lattice_constant;
        let norm: f64 = h.iter().map(|x| x.norm_sqr()).sum();
        Ok(C_LIGHT * C_LIGHT / (2.0 * omega) * self.operator_derivative(k, h, direction) / norm)
    }
}

/// Θ(k) for `cell` with the default inverse rule.
pub fn assemble_operator(cell: &Supercell, k: [f64; 2], basis: &ReciprocalBasis) -> Result<CMatrix> {
    Ok(PweSolver::new(cell, basis, CoefficientRule::Inverse)?.assemble_operator(k))
}

/// Band structure along a k-path.
#[derive(Debug, Clone)]
pub struct BandStructure {
    pub k_points: Vec<[f64; 2]>,
    /// ν = ωa/2πc indexed [k][band], ascending per k.
    pub bands: Vec<Vec<f64>>,
    /// Plane-wave coefficients indexed [k][band][G].
    pub eigenvectors: Vec<Vec<Vec<Complex64>>>,
    pub parities: Vec<Vec<Parity>>,
    pub cell: Supercell,
    pub basis: ReciprocalBasis,
    pub rule: CoefficientRule,
}

impl BandStructure {
    pub fn n_bands(&self) -> usize {
        self.bands.first().map_or(0, |b| b.len())
    }

    pub fn omega(&self, k_index: usize, band: usize) -> f64 {
        2.0 * PI * C_LIGHT * self.bands[k_index][band] / self.cell.lattice_constant
    }

    /// CSV rows `kx_a_2pi,ky_a_2pi,band_index,nu`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let a = self.cell.lattice_constant;
        writeln!(w, "kx_a_2pi,ky_a_2pi,band_index,nu")?;
        for (k, row) in self.k_points.iter().zip(&self.bands) {
            for (b, nu) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{:.10},{:.10},{},{:.12}",
                    k[0] * a / (2.0 * PI),
                    k[1] * a / (2.0 * PI),
                    b,
                    nu
                )?;
            }
        }
        Ok(())
    }
}

/// Sorted empty-lattice frequencies ω = c|k+G|/√ε (rad/s).
pub fn empty_lattice_reference(k: [f64; 2], g_set: &[[f64; 2]], eps: f64) -> Vec<f64> {
    let mut w: Vec<f64> = g_set
        .iter()
        .map(|g| C_LIGHT * ((k[0] + g[0]).powi(2) + (k[1] + g[1]).powi(2)).sqrt() / eps.sqrt())
        .collect();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    w
}

/// Γ–M–K–Γ path of the bulk triangular lattice with `per_segment` points per
/// leg (the closing Γ is included once).
pub fn bulk_k_path(a: f64, per_segment: usize) -> Vec<[f64; 2]> {
    let gamma = [0.0, 0.0];
    let m = [0.0, 2.0 * PI / (3f64.sqrt() * a)];
    let k = [4.0 * PI / (3.0 * a), 0.0];
    let mut path = Vec::with_capacity(3 * per_segment + 1);
    for (from, to) in [(gamma, m), (m, k), (k, gamma)] {
        for i in 0..per_segment {
            let t = i as f64 / per_segment as f64;
            path.push([from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])]);
        }
    }
    path.push(gamma);
    path
}

/// Real-space field of one mode on a grid over the cell.
#[derive(Debug, Clone)]
pub struct ModeField {
    /// Grid points along the first and second lattice vectors.
    pub shape: [usize; 2],
    pub points: Vec<[f64; 2]>,
    pub eps: Vec<f64>,
    pub h_field: Vec<Complex64>,
    pub e_field: Vec<[Complex64; 2]>,
    /// ε|E|² per grid point.
    pub energy_density: Vec<f64>,
    /// Area per grid point (m²).
    pub cell_area_element: f64,
    pub omega: f64,
    pub k: [f64; 2],
}

impl ModeField {
    /// ∫ ε|E|² dA over the cell.
    pub fn energy_integral(&self) -> f64 {
        self.energy_density.iter().sum::<f64>() * self.cell_area_element
    }

    pub fn max_energy_density(&self) -> f64 {
        self.energy_density.iter().cloned().fold(0.0, f64::max)
    }

    /// Fraction of ∫ε|E|² within |y| ≤ half_width.
    pub fn energy_fraction_within(&self, half_width: f64) -> f64 {
        let total: f64 = self.energy_density.iter().sum();
        let inside: f64 = self
            .points
            .iter()
            .zip(&self.energy_density)
            .filter(|(p, _)| p[1].abs() <= half_width)
            .map(|(_, u)| u)
            .sum();
        inside / total
    }
}

/// Evaluates the H field and E = D/ε of mode (k_index, band_index) on a grid
/// with `resolution` points per lattice period along the first lattice vector
/// (proportionally more along the second). Fields are scaled so that
/// ∫ε|E|² dA = 1.
pub fn reconstruct_field(
    bs: &BandStructure,
    k_index: usize,
    band_index: usize,
    resolution: usize,
) -> Result<ModeField> {
    if k_index >= bs.k_points.len() || band_index >= bs.n_bands() {
        return Err(Error::param(format!(
            "mode index (k {k_index}, band {band_index}) out of range"
        )));
    }
    if resolution == 0 {
        return Err(Error::param("grid resolution must be positive"));
    }
    let nu = bs.bands[k_index][band_index];
    if nu < 1e-10 {
        return Err(Error::DegenerateMode {
            k_index,
            band: band_index,
        });
    }
    let omega = bs.omega(k_index, band_index);
    let k = bs.k_points[k_index];
    let h = &bs.eigenvectors[k_index][band_index];
    field_from_coefficients(&bs.cell, &bs.basis, k, omega, h, resolution)
}

pub(crate) fn field_from_coefficients(
    cell: &Supercell,
    basis: &ReciprocalBasis,
    k: [f64; 2],
    omega: f64,
    h: &[Complex64],
    resolution: usize,
) -> Result<ModeField> {
    let [a1, a2] = cell.lattice_vectors;
    let len = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
    let n1 = resolution;
    let n2 = ((resolution as f64 * len(a2) / len(a1)).round() as usize).max(1);
    let s1: Vec<f64> = (0..n1).map(|i| (i as f64 + 0.5) / n1 as f64).collect();
    let s2: Vec<f64> = (0..n2).map(|j| (j as f64 + 0.5) / n2 as f64 - 0.5).collect();

    // D = (i/ω)∇×H, i.e. D_G = −(1/ω)((k+G)_y, −(k+G)_x) h_G (ε₀ dropped).
    let coeffs: Vec<[Complex64; 3]> = basis
        .g_list
        .iter()
        .zip(h)
        .map(|(g, &hg)| {
            let kx = k[0] + g[0];
            let ky = k[1] + g[1];
            [hg, -hg * ky / omega, hg * kx / omega]
        })
        .collect();

    // Separable sum: exp(iG·r) = exp(2πi m1 s1) exp(2πi m2 s2).
    let mut by_m1: HashMap<i32, Vec<usize>> = HashMap::new();
    for (i, m) in basis.indices.iter().enumerate() {
        by_m1.entry(m[0]).or_default().push(i);
    }
    let mut m1_values: Vec<i32> = by_m1.keys().copied().collect();
    m1_values.sort_unstable();
    let zero = Complex64::new(0.0, 0.0);
    let mut fields = vec![[zero; 3]; n1 * n2];
    for &m1 in &m1_values {
        let members = &by_m1[&m1];
        let mut partial = vec![[zero; 3]; n2];
        for (j, &t2) in s2.iter().enumerate() {
            let mut acc = [zero; 3];
            for &g in members {
                let ph = Complex64::from_polar(1.0, 2.0 * PI * basis.indices[g][1] as f64 * t2);
                for c in 0..3 {
                    acc[c] += coeffs[g][c] * ph;
                }
            }
            partial[j] = acc;
        }
        for (i, &t1) in s1.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, 2.0 * PI * m1 as f64 * t1);
            for j in 0..n2 {
                let cell_field = &mut fields[j * n1 + i];
                for c in 0..3 {
                    cell_field[c] += partial[j][c] * ph;
                }
            }
        }
    }

    let mut points = Vec::with_capacity(n1 * n2);
    let mut eps = Vec::with_capacity(n1 * n2);
    let mut h_field = Vec::with_capacity(n1 * n2);
    let mut e_field = Vec::with_capacity(n1 * n2);
    let mut energy = Vec::with_capacity(n1 * n2);
    for (j, &t2) in s2.iter().enumerate() {
        for (i, &t1) in s1.iter().enumerate() {
            let p = [t1 * a1[0] + t2 * a2[0], t1 * a1[1] + t2 * a2[1]];
            let bloch = Complex64::from_polar(1.0, k[0] * p[0] + k[1] * p[1]);
            let f = fields[j * n1 + i];
            let e_local = cell.eps_at(p);
            let ex = f[1] * bloch / e_local;
            let ey = f[2] * bloch / e_local;
            points.push(p);
            eps.push(e_local);
            h_field.push(f[0] * bloch);
            e_field.push([ex, ey]);
            energy.push(e_local * (ex.norm_sqr() + ey.norm_sqr()));
        }
    }
    let d_area = cell.area() / (n1 * n2) as f64;
    let total: f64 = energy.iter().sum::<f64>() * d_area;
    if !(total > 0.0) {
        return Err(Error::Undefined("mode field has zero energy".into()));
    }
    let s = 1.0 / total.sqrt();
    for v in &mut h_field {
        *v *= s;
    }
    for e in &mut e_field {
        e[0] *= s;
        e[1] *= s;
    }
    for u in &mut energy {
        *u *= s * s;
    }
    Ok(ModeField {
        shape: [n1, n2],
        points,
        eps,
        h_field,
        e_field,
        energy_density: energy,
        cell_area_element: d_area,
        omega,
        k,
    })
}
