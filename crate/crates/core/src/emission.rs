//! Emission rate into the waveguide mode and the β-factor.
//!
//! Rates cross the API in ns⁻¹; everything else is SI.
//!
//! ```text
//! Γ = Γ₀ · 3πc³a / (V_eff ω² ε^{3/2} v_g)
//! β = Γ_wg / (Γ_wg + Γ_tot)
//! ```

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dispersion::{dispersion_interpolant, WaveguideMode};
use crate::interp::Pchip;
use crate::{Error, Result, C_LIGHT};

/// Default homogeneous-medium decay rate (ns⁻¹).
pub const DEFAULT_GAMMA0: f64 = 1.1;

/// Default total rate of radiative plus non-radiative decay used for
/// theoretical β spectra (ns⁻¹).
pub const DEFAULT_GAMMA_TOT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    /// Decay rate in a homogeneous medium (ns⁻¹).
    pub gamma0: f64,
    /// Permittivity entering the rate expression.
    pub eps: f64,
    /// Lattice parameter (m).
    pub a: f64,
    /// Lower clamp on the group velocity (m/s).
    pub vg_floor: f64,
    /// Γ_rad + Γ_nr used to turn Γ_wg into β (ns⁻¹).
    pub gamma_tot: f64,
}

impl EmissionParams {
    /// Defaults for a crystal of lattice parameter `a` and permittivity `eps`.
    pub fn new(a: f64, eps: f64) -> Self {
        Self {
            gamma0: DEFAULT_GAMMA0,
            eps,
            a,
            vg_floor: C_LIGHT / 1000.0,
            gamma_tot: DEFAULT_GAMMA_TOT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::param(format!("gamma0 = {} must be positive", self.gamma0)));
        }
        if !(self.eps >= 1.0 && self.eps.is_finite()) {
            return Err(Error::param(format!("eps = {} must be at least 1", self.eps)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::param(format!(
                "lattice parameter a = {} must be positive",
                self.a
            )));
        }
        if !(self.vg_floor > 0.0 && self.vg_floor.is_finite()) {
            return Err(Error::param(format!("vg_floor = {} must be positive", self.vg_floor)));
        }
        if !(self.gamma_tot >= 0.0 && self.gamma_tot.is_finite()) {
            return Err(Error::param(format!(
                "gamma_tot = {} must be non-negative",
                self.gamma_tot
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionPoint {
    /// a/λ.
    pub scaled_freq: f64,
    /// Γ_wg (ns⁻¹).
    pub gamma_wg: f64,
    pub beta: f64,
}

/// Decay rate into the waveguide (ns⁻¹). `v_g` is clamped to
/// `p.vg_floor` from below.
pub fn decay_rate(omega: f64, v_g: f64, v_eff: f64, p: &EmissionParams) -> Result<f64> {
    p.validate()?;
    for (name, v) in [("omega", omega), ("v_g", v_g), ("v_eff", v_eff)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(format!("{name} = {v} must be positive")));
        }
    }
    let vg = v_g.max(p.vg_floor);
    let ratio = 3.0 * PI * C_LIGHT.powi(3) * p.a / (v_eff * omega * omega * p.eps.powf(1.5) * vg);
    Ok(p.gamma0 * ratio)
}

/// a/λ.
pub fn scaled_frequency(a: f64, lambda: f64) -> f64 {
    a / lambda
}

/// a/λ for angular frequency ω.
pub fn scaled_frequency_of_omega(a: f64, omega: f64) -> f64 {
    omega * a / (2.0 * PI * C_LIGHT)
}

/// Γ_wg/(Γ_wg + Γ_tot).
pub fn beta_factor(gamma_wg: f64, gamma_tot: f64) -> Result<f64> {
    if !(gamma_wg >= 0.0 && gamma_tot >= 0.0) {
        return Err(Error::param(format!(
            "rates must be non-negative (gamma_wg = {gamma_wg}, gamma_tot = {gamma_tot})"
        )));
    }
    if gamma_wg == 0.0 && gamma_tot == 0.0 {
        return Err(Error::Undefined("beta with both rates zero".into()));
    }
    Ok(gamma_wg / (gamma_wg + gamma_tot))
}

/// β = 1 − Γ_tot/Γ_fast for an emitter whose fast rate contains the
/// waveguide channel on top of the mean uncoupled rate.
pub fn beta_from_measurement(gamma_fast: f64, gamma_tot_mean: f64) -> Result<f64> {
    if !(gamma_tot_mean >= 0.0) {
        return Err(Error::param(format!(
            "mean uncoupled rate {gamma_tot_mean} must be non-negative"
        )));
    }
    if !(gamma_fast > gamma_tot_mean) {
        return Err(Error::NotCoupled {
            gamma_fast,
            gamma_tot: gamma_tot_mean,
        });
    }
    Ok(1.0 - gamma_tot_mean / gamma_fast)
}

/// Γ_wg and β at `n_points` frequencies spread evenly over the branch,
/// sorted by increasing a/λ. v_g and V_eff are interpolated at the k that
/// the dispersion inversion returns.
pub fn decay_rate_spectrum(mode: &WaveguideMode, p: &EmissionParams, n_points: usize) -> Result<Vec<EmissionPoint>> {
    p.validate()?;
    if mode.len() < 2 {
        return Err(Error::param(
            "emission spectrum needs a branch with at least two samples",
        ));
    }
    if n_points < 2 {
        return Err(Error::param("emission spectrum needs at least two points"));
    }
    let omega_k = dispersion_interpolant(mode)?;
    let vg_k = Pchip::new(&mode.k_samples, &mode.v_g)?;
    let veff_k = Pchip::new(&mode.k_samples, &mode.v_eff)?;
    let (lo, hi) = mode.omega_range();
    let mut out = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let omega = lo + (hi - lo) * i as f64 / (n_points - 1) as f64;
        let k = omega_k.inverse(omega).ok_or(Error::OutOfBand {
            omega,
            min: lo,
            max: hi,
        })?;
        let vg = vg_k.eval(k).max(p.vg_floor);
        let veff = veff_k.eval(k);
        let gamma_wg = decay_rate(omega, vg, veff, p)?;
        out.push(EmissionPoint {
            scaled_freq: scaled_frequency_of_omega(p.a, omega),
            gamma_wg,
            beta: beta_factor(gamma_wg, p.gamma_tot)?,
        });
    }
    Ok(out)
}

/// Relative width (max − min)/midpoint of the a/λ values whose β exceeds
/// `threshold`; 0 when fewer than two points do.
pub fn beta_bandwidth(points: &[EmissionPoint], threshold: f64) -> f64 {
    let above = points.iter().filter(|p| p.beta > threshold).map(|p| p.scaled_freq);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in above {
        lo = lo.min(f);
        hi = hi.max(f);
    }
    if !(hi > lo) {
        return 0.0;
    }
    (hi - lo) / (0.5 * (hi + lo))
}
