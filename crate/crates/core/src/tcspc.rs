//! Time-resolved photon-counting histograms: forward model, synthesis,
//! Poisson maximum-likelihood fitting and reduced-χ² model selection.
//!
//! Times are in ps and rates in ns⁻¹ at the API. A component of amplitude A
//! and rate Γ contributes A·exp(−Γt) counts per bin before convolution with
//! a Gaussian instrument response; the decay train repeats every
//! `rep_period`, so slow components leak into the following periods.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::{Error, Result};

/// 10⁶/75 ps, one period of a 75 MHz pulse train.
pub const DEFAULT_REP_PERIOD_PS: f64 = 1.0e6 / 75.0;
pub const DEFAULT_IRF_FWHM_PS: f64 = 280.0;
pub const DEFAULT_BIN_WIDTH_PS: f64 = 50.0;
pub const DEFAULT_CHI2_THRESHOLD: f64 = 1.3;
/// Minimum expected count of a bin group entering χ².
pub const CHI2_MIN_EXPECTED: f64 = 5.0;
/// Relative rate separation below which a bi-exponential fit is degenerate.
pub const DEGENERATE_RATE_TOLERANCE: f64 = 0.05;

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Binning of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramShape {
    pub n_bins: usize,
    /// ps.
    pub bin_width: f64,
    /// Excitation time relative to the start of bin 0 (ps).
    pub t0: f64,
    /// ps.
    pub rep_period: f64,
}

impl HistogramShape {
    /// Default binning covering as much of one period as whole bins allow,
    /// with excitation `t0` ps after the window opens.
    pub fn default_with_t0(t0: f64) -> Self {
        let n_bins = (DEFAULT_REP_PERIOD_PS / DEFAULT_BIN_WIDTH_PS).floor() as usize;
        Self {
            n_bins,
            bin_width: DEFAULT_BIN_WIDTH_PS,
            t0,
            rep_period: DEFAULT_REP_PERIOD_PS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::param("histogram needs at least one bin"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::param(format!("bin width {} must be positive", self.bin_width)));
        }
        if !(self.rep_period > 0.0 && self.rep_period.is_finite()) {
            return Err(Error::param(format!(
                "repetition period {} must be positive",
                self.rep_period
            )));
        }
        if self.n_bins as f64 * self.bin_width > self.rep_period * (1.0 + 1e-9) {
            return Err(Error::param(format!(
                "{} bins of {} ps exceed the repetition period {} ps",
                self.n_bins, self.bin_width, self.rep_period
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::param("excitation time t0 must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub t0: f64,
    pub rep_period: f64,
    /// Instrument response FWHM (ps).
    pub irf_fwhm: f64,
    /// Independently known background per bin. When absent the background
    /// is a fit parameter.
    pub background: Option<f64>,
}

impl DecayHistogram {
    pub fn shape(&self) -> HistogramShape {
        HistogramShape {
            n_bins: self.counts.len(),
            bin_width: self.bin_width,
            t0: self.t0,
            rep_period: self.rep_period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if !(self.irf_fwhm >= 0.0 && self.irf_fwhm.is_finite()) {
            return Err(Error::param(format!("IRF FWHM {} must be non-negative", self.irf_fwhm)));
        }
        if let Some(b) = self.background {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::param(format!("background {b} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Start time of each bin (ps).
    pub fn bin_starts(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| i as f64 * self.bin_width).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mono,
    Bi,
}

impl ModelKind {
    pub fn n_components(self) -> usize {
        match self {
            ModelKind::Mono => 1,
            ModelKind::Bi => 2,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mono => "mono",
            ModelKind::Bi => "bi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    /// ns⁻¹.
    pub rate: f64,
    /// Counts per bin at the start of the undelayed decay.
    pub amplitude: f64,
}

/// Sum of exponential components plus a flat background. Components are
/// ordered fastest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub components: Vec<ExpComponent>,
    /// Counts per bin.
    pub background: f64,
    /// ps.
    pub irf_fwhm: f64,
}

impl DecayModel {
    pub fn mono(rate: f64, amplitude: f64, background: f64, irf_fwhm: f64) -> Self {
        Self {
            components: vec![ExpComponent { rate, amplitude }],
            background,
            irf_fwhm,
        }
    }

    pub fn bi(fast: ExpComponent, slow: ExpComponent, background: f64, irf_fwhm: f64) -> Self {
        Self {
            components: vec![fast, slow],
            background,
            irf_fwhm,
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.components.len() >= 2 {
            ModelKind::Bi
        } else {
            ModelKind::Mono
        }
    }

    /// Rate of the fastest component (ns⁻¹).
    pub fn fast_rate(&self) -> f64 {
        self.components[0].rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.components.len() > 2 {
            return Err(Error::param("a decay model has one or two components"));
        }
        for c in &self.components {
            if !(c.rate > 0.0 && c.rate.is_finite()) {
                return Err(Error::param(format!("decay rate {} must be positive", c.rate)));
            }
            if !(c.amplitude >= 0.0 && c.amplitude.is_finite()) {
                return Err(Error::param(format!("amplitude {} must be non-negative", c.amplitude)));
            }
        }
        if self.components.len() == 2 && !(self.components[0].rate > self.components[1].rate) {
            return Err(Error::param("bi-exponential components must be ordered fast then slow"));
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(Error::param(format!(
                "background {} must be non-negative",
                self.background
            )));
        }
        if !(self.irf_fwhm >= 0.0 && self.irf_fwhm.is_finite()) {
            return Err(Error::param(format!("IRF FWHM {} must be non-negative", self.irf_fwhm)));
        }
        Ok(())
    }
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Scaled complementary error function exp(x²)·erfc(x) for x ≥ 0.
fn erfcx(x: f64) -> f64 {
    if x < 26.0 {
        libm::erfc(x) * (x * x).exp()
    } else {
        let y = 1.0 / (2.0 * x * x);
        let series = 1.0 - y * (1.0 - 3.0 * y * (1.0 - 5.0 * y * (1.0 - 7.0 * y * (1.0 - 9.0 * y))));
        series / (x * PI.sqrt())
    }
}

/// exp(Γ²σ²/2 − Γu)·Φ((u − Γσ²)/σ), evaluated without overflow.
fn emg_tail(u: f64, gamma: f64, sigma: f64) -> f64 {
    let z = (u - gamma * sigma * sigma) / sigma;
    if z < 0.0 {
        0.5 * erfcx(-z * FRAC_1_SQRT_2) * (-0.5 * (u / sigma).powi(2)).exp()
    } else {
        (0.5 * (gamma * sigma).powi(2) - gamma * u).exp() * phi(z)
    }
}

/// ∫_lo^hi of exp(−Γu)θ(u) convolved with a unit-area Gaussian of width σ.
fn emg_integral(lo: f64, hi: f64, gamma: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        let lo = lo.max(0.0);
        if hi <= lo {
            return 0.0;
        }
        return (-gamma * lo).exp() * -(-gamma * (hi - lo)).exp_m1() / gamma;
    }
    // Φ(hi/σ) − Φ(lo/σ), taken from the side that avoids cancellation.
    let dphi = if lo > 0.0 {
        0.5 * (libm::erfc(lo / sigma * FRAC_1_SQRT_2) - libm::erfc(hi / sigma * FRAC_1_SQRT_2))
    } else {
        phi(hi / sigma) - phi(lo / sigma)
    };
    (dphi - (emg_tail(hi, gamma, sigma) - emg_tail(lo, gamma, sigma))) / gamma
}

/// Per-bin expected counts of one unit-amplitude component (rate in ps⁻¹).
fn component_profile(shape: &HistogramShape, gamma_ps: f64, sigma: f64) -> Vec<f64> {
    let w = shape.bin_width;
    let t = shape.rep_period;
    let decay_t = (-gamma_ps * t).exp();
    // Pulses two or more periods back are fully decayed-in; their sum is
    // geometric.
    let far_weight = (0.5 * (gamma_ps * sigma).powi(2)).exp() * decay_t * decay_t / (1.0 - decay_t);
    (0..shape.n_bins)
        .map(|i| {
            let lo = i as f64 * w - shape.t0;
            let hi = lo + w;
            let mut acc = 0.0;
            for m in [-1.0, 0.0, 1.0] {
                acc += emg_integral(lo + m * t, hi + m * t, gamma_ps, sigma);
            }
            let far = if sigma == 0.0 {
                (-gamma_ps * (lo + t)).exp() * -(-gamma_ps * w).exp_m1() / gamma_ps * decay_t / (1.0 - decay_t)
            } else {
                far_weight * (-gamma_ps * lo).exp() * -(-gamma_ps * w).exp_m1() / gamma_ps
            };
            (acc + far) / w
        })
        .collect()
}

fn sigma_of(fwhm: f64) -> f64 {
    fwhm / FWHM_TO_SIGMA
}

/// Expected counts per bin.
pub fn expected_counts(model: &DecayModel, shape: &HistogramShape) -> Vec<f64> {
    let sigma = sigma_of(model.irf_fwhm);
    let mut mu = vec![model.background; shape.n_bins];
    for c in &model.components {
        let p = component_profile(shape, c.rate * 1e-3, sigma);
        for (m, v) in mu.iter_mut().zip(p) {
            *m += c.amplitude * v;
        }
    }
    mu
}

/// Poisson histogram whose expected total is `total_counts`. The model's
/// background, rescaled by the same factor, is recorded as known
/// instrument background.
pub fn synthesize(model: &DecayModel, shape: &HistogramShape, total_counts: u64, seed: u64) -> Result<DecayHistogram> {
    model.validate()?;
    shape.validate()?;
    if total_counts == 0 {
        return Err(Error::param("total counts must be positive"));
    }
    let mu = expected_counts(model, shape);
    let sum: f64 = mu.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::param("model predicts no counts"));
    }
    let scale = total_counts as f64 / sum;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mu
        .iter()
        .map(|m| {
            let lambda = m * scale;
            if lambda <= 0.0 {
                0
            } else {
                Poisson::new(lambda).map(|d| d.sample(&mut rng) as u64).unwrap_or(0)
            }
        })
        .collect();
    Ok(DecayHistogram {
        bin_width: shape.bin_width,
        counts,
        t0: shape.t0,
        rep_period: shape.rep_period,
        irf_fwhm: model.irf_fwhm,
        background: Some(model.background * scale),
    })
}

/// Parameterisation of rates during optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateSpace {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub rate_space: RateSpace,
    /// Ignore a known background and fit it.
    pub force_free_background: bool,
    pub max_iterations: usize,
    /// Convergence threshold on the Newton decrement of the NLL.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rate_space: RateSpace::Log,
            force_free_background: false,
            max_iterations: 300,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub chi2_red: f64,
    /// 1σ per component, same order as `model.components` (ns⁻¹).
    pub rate_uncertainties: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Poisson negative log-likelihood (without the ln n! term).
    pub nll: f64,
    pub background_fitted: bool,
    /// Set when a bi-exponential fit returned two rates within 5%.
    pub degenerate: bool,
    /// NLL after every accepted iteration, starting with the initial guess.
    #[serde(skip)]
    pub nll_trace: Vec<f64>,
}

impl DecayFit {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// The reported rate: the fast component.
    pub fn rate(&self) -> f64 {
        self.model.fast_rate()
    }

    pub fn rate_uncertainty(&self) -> f64 {
        self.rate_uncertainties[0]
    }
}

fn nll(counts: &[u64], mu: &[f64]) -> f64 {
    counts
        .iter()
        .zip(mu)
        .map(|(&n, &m)| {
            if n == 0 {
                m
            } else if m <= 0.0 {
                f64::INFINITY
            } else {
                m - n as f64 * m.ln()
            }
        })
        .sum()
}

/// Fit problem: parameters are [rate_1, .., rate_c, A_1, .., A_c, (B)], with
/// rates as ln Γ or Γ (ns⁻¹).
struct Problem<'a> {
    hist: &'a DecayHistogram,
    shape: HistogramShape,
    sigma: f64,
    n_comp: usize,
    space: RateSpace,
    known_background: Option<f64>,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        2 * self.n_comp + usize::from(self.known_background.is_none())
    }

    fn rate(&self, theta: &[f64], j: usize) -> f64 {
        match self.space {
            RateSpace::Log => theta[j].exp(),
            RateSpace::Linear => theta[j],
        }
    }

    fn background(&self, theta: &[f64]) -> f64 {
        self.known_background.unwrap_or_else(|| theta[2 * self.n_comp])
    }

    fn feasible(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite())
            && (0..self.n_comp).all(|j| self.rate(theta, j) > 0.0)
            && theta[self.n_comp..].iter().all(|&v| v >= 0.0)
    }

    fn profile(&self, gamma_ns: f64) -> Vec<f64> {
        component_profile(&self.shape, gamma_ns * 1e-3, self.sigma)
    }

    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        let mut mu = vec![self.background(theta); self.shape.n_bins];
        for j in 0..self.n_comp {
            let a = theta[self.n_comp + j];
            for (m, v) in mu.iter_mut().zip(self.profile(self.rate(theta, j))) {
                *m += a * v;
            }
        }
        mu
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        if !self.feasible(theta) {
            return f64::INFINITY;
        }
        nll(&self.hist.counts, &self.mu(theta))
    }

    /// μ and its Jacobian (n_bins × n_params).
    fn jacobian(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.shape.n_bins;
        let p = self.n_params();
        let mut jac = DMatrix::zeros(n, p);
        let mut mu = vec![self.background(theta); n];
        for j in 0..self.n_comp {
            let g = self.rate(theta, j);
            let a = theta[self.n_comp + j];
            let s = self.profile(g);
            let h = 1e-5 * g;
            let sp = self.profile(g + h);
            let sm = self.profile(g - h);
            // dμ/dθ_j = A ds/dΓ · dΓ/dθ_j
            let chain = match self.space {
                RateSpace::Log => g,
                RateSpace::Linear => 1.0,
            };
            for i in 0..n {
                mu[i] += a * s[i];
                jac[(i, j)] = a * (sp[i] - sm[i]) / (2.0 * h) * chain;
                jac[(i, self.n_comp + j)] = s[i];
            }
        }
        if self.known_background.is_none() {
            for i in 0..n {
                jac[(i, 2 * self.n_comp)] = 1.0;
            }
        }
        (mu, jac)
    }

    /// Gradient of the NLL and the expected information JᵀWJ.
    fn gradient_and_information(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (mu, jac) = self.jacobian(theta);
        let p = self.n_params();
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (i, (&n, &m)) in self.hist.counts.iter().zip(&mu).enumerate() {
            let m = m.max(1e-300);
            let r = 1.0 - n as f64 / m;
            let row = jac.row(i);
            for a in 0..p {
                grad[a] += r * row[a];
                for b in 0..=a {
                    info[(a, b)] += row[a] * row[b] / m;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (grad, info)
    }

    /// Observed information: finite-difference Jacobian of the gradient.
    fn observed_information(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.n_params();
        let mut h = DMatrix::zeros(p, p);
        for j in 0..p {
            let step = if j < self.n_comp {
                match self.space {
                    RateSpace::Log => 1e-4,
                    RateSpace::Linear => 1e-4 * theta[j].abs(),
                }
            } else {
                1e-4 * theta[j].abs().max(1e-2)
            };
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += step;
            tm[j] -= step;
            let gp = self.gradient_and_information(&tp).0;
            let gm = self.gradient_and_information(&tm).0;
            for i in 0..p {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        0.5 * (&h + h.transpose())
    }
}

/// Weighted log-linear regression slope of counts above background over
/// bins [from, to); returns a rate in ns⁻¹.
fn log_slope_rate(counts: &[u64], background: f64, bin_width: f64, from: usize, to: usize) -> Option<f64> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for (i, &c) in counts.iter().enumerate().take(to).skip(from) {
        let excess = c as f64 - background;
        if excess <= 2.0 * (background + 1.0).sqrt() {
            continue;
        }
        let w = excess * excess / (c as f64).max(1.0);
        let x = i as f64 * bin_width;
        let y = excess.ln();
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
        used += 1;
    }
    if used < 3 {
        return None;
    }
    let den = sw * sxx - sx * sx;
    if den <= 0.0 {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / den;
    if slope < 0.0 {
        Some(-slope * 1e3)
    } else {
        None
    }
}

/// Deterministic starting point: background from the last tenth of the
/// bins, rates from log-linear regression on early and late windows,
/// amplitudes by linear least squares given the rates.
fn initial_guess(problem: &Problem, kind: ModelKind) -> Vec<f64> {
    let counts = &problem.hist.counts;
    let n = counts.len();
    let w = problem.shape.bin_width;
    let tail = (n / 10).max(1);
    let tail_mean = counts[n - tail..].iter().sum::<u64>() as f64 / tail as f64;
    let b0 = problem.known_background.unwrap_or(tail_mean);
    let peak = counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap_or(0);
    let start = (peak + (problem.hist.irf_fwhm / w).ceil() as usize).min(n.saturating_sub(1));
    let clamp = |g: f64| g.clamp(1e-3, 1e3);
    let mut rates = match kind {
        ModelKind::Mono => vec![clamp(log_slope_rate(counts, b0, w, start, n).unwrap_or(1.0))],
        ModelKind::Bi => {
            let peak_excess = counts[peak] as f64 - b0;
            let mut early_end = start + 3;
            while early_end < n && (counts[early_end] as f64 - b0) > peak_excess * (-2.0f64).exp() {
                early_end += 1;
            }
            let early_end = early_end.min(n);
            let late_start = early_end.max(start + (n - start) / 2).min(n);
            let fast = log_slope_rate(counts, b0, w, start, early_end.max(start + 3).min(n));
            let slow = log_slope_rate(counts, b0, w, late_start, n);
            let slow = clamp(slow.unwrap_or(0.1));
            let fast = clamp(fast.unwrap_or(10.0 * slow)).max(3.0 * slow);
            vec![fast, slow]
        }
    };
    rates.sort_by(|a, b| b.partial_cmp(a).unwrap());

    // Linear least squares for the amplitudes, weights 1/max(n, 1).
    let c = rates.len();
    let profiles: Vec<Vec<f64>> = rates.iter().map(|&g| problem.profile(g)).collect();
    let mut m = DMatrix::<f64>::zeros(c, c);
    let mut rhs = DVector::<f64>::zeros(c);
    for i in 0..n {
        let wt = 1.0 / (counts[i] as f64).max(1.0);
        let y = counts[i] as f64 - b0;
        for a in 0..c {
            rhs[a] += wt * profiles[a][i] * y;
            for b in 0..c {
                m[(a, b)] += wt * profiles[a][i] * profiles[b][i];
            }
        }
    }
    let total_excess = (counts.iter().sum::<u64>() as f64 - b0 * n as f64).max(1.0);
    let amps: Vec<f64> = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => vec![0.0; c],
    };
    let mut theta: Vec<f64> = rates
        .iter()
        .map(|&g| match problem.space {
            RateSpace::Log => g.ln(),
            RateSpace::Linear => g,
        })
        .collect();
    for (a, &g) in amps.iter().zip(&rates) {
        // Fall back to splitting the counts evenly between components.
        let fallback = total_excess / c as f64 * g * 1e-3 * w;
        theta.push(if *a > 0.0 { *a } else { fallback });
    }
    if problem.known_background.is_none() {
        theta.push(b0.max(0.0));
    }
    theta
}

/// Poisson maximum-likelihood fit with default options.
pub fn fit(hist: &DecayHistogram, kind: ModelKind) -> Result<DecayFit> {
    fit_with_options(hist, kind, &FitOptions::default())
}

pub fn fit_with_options(hist: &DecayHistogram, kind: ModelKind, opts: &FitOptions) -> Result<DecayFit> {
    hist.validate()?;
    if hist.counts.len() < 50 {
        return Err(Error::Precondition(format!(
            "histogram has {} bins, at least 50 are needed",
            hist.counts.len()
        )));
    }
    if hist.total() < 1000 {
        return Err(Error::Precondition(format!(
            "histogram has {} counts, at least 1000 are needed",
            hist.total()
        )));
    }
    let problem = Problem {
        hist,
        shape: hist.shape(),
        sigma: sigma_of(hist.irf_fwhm),
        n_comp: kind.n_components(),
        space: opts.rate_space,
        known_background: if opts.force_free_background {
            None
        } else {
            hist.background
        },
    };
    let p = problem.n_params();
    let mut theta = initial_guess(&problem, kind);
    let mut f = problem.nll(&theta);
    if !f.is_finite() {
        return Err(Error::FitFailure {
            iterations: 0,
            reason: "initial guess gives a non-finite likelihood".into(),
        });
    }
    let mut trace = vec![f];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (grad, info) = problem.gradient_and_information(&theta);
        // Newton decrement with the expected information as metric.
        let decrement = match info.clone().cholesky() {
            Some(ch) => 0.5 * grad.dot(&ch.solve(&grad)),
            None => f64::INFINITY,
        };
        if decrement < opts.tolerance {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = info.clone();
            for d in 0..p {
                a[(d, d)] += lambda * info[(d, d)].max(1e-12);
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-&grad));
            let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            for v in trial[problem.n_comp..].iter_mut() {
                *v = v.max(0.0);
            }
            let ft = problem.nll(&trial);
            if ft < f {
                let gain = f - ft;
                theta = trial;
                f = ft;
                trace.push(f);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if gain < 1e-12 * f.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction improves the likelihood: stationary to
            // working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            iterations,
            reason: format!("no convergence within {} iterations (NLL {f:.6})", opts.max_iterations),
        });
    }

    // Uncertainties from the observed information.
    let obs = problem.observed_information(&theta);
    let cov = obs.clone().cholesky().map(|c| c.inverse()).or_else(|| {
        problem
            .gradient_and_information(&theta)
            .1
            .cholesky()
            .map(|c| c.inverse())
    });
    let mut comps: Vec<(ExpComponent, f64)> = (0..problem.n_comp)
        .map(|j| {
            let g = problem.rate(&theta, j);
            let var = cov.as_ref().map_or(f64::NAN, |c| c[(j, j)]);
            let sd = match problem.space {
                RateSpace::Log => g * var.max(0.0).sqrt(),
                RateSpace::Linear => var.max(0.0).sqrt(),
            };
            (
                ExpComponent {
                    rate: g,
                    amplitude: theta[problem.n_comp + j],
                },
                sd,
            )
        })
        .collect();
    comps.sort_by(|a, b| b.0.rate.partial_cmp(&a.0.rate).unwrap());
    let degenerate =
        kind == ModelKind::Bi && (comps[0].0.rate - comps[1].0.rate) <= DEGENERATE_RATE_TOLERANCE * comps[1].0.rate;
    let model = DecayModel {
        components: comps.iter().map(|c| c.0).collect(),
        background: problem.background(&theta),
        irf_fwhm: hist.irf_fwhm,
    };
    let chi2_red = reduced_chi2_with_params(hist, &model, p).unwrap_or(f64::NAN);
    Ok(DecayFit {
        model,
        chi2_red,
        rate_uncertainties: comps.iter().map(|c| c.1).collect(),
        converged,
        n_iterations: iterations,
        nll: f,
        background_fitted: problem.known_background.is_none(),
        degenerate,
        nll_trace: trace,
    })
}

/// Reduced χ² with the number of free parameters inferred from the model
/// (two per component plus the background unless it is known).
pub fn reduced_chi2(hist: &DecayHistogram, model: &DecayModel) -> Result<f64> {
    let p = 2 * model.components.len() + usize::from(hist.background.is_none());
    reduced_chi2_with_params(hist, model, p)
}

/// Σ (n − μ)²/max(μ, 1) / (N − p) over bin groups: consecutive bins are
/// merged until each group expects at least 5 counts.
pub fn reduced_chi2_with_params(hist: &DecayHistogram, model: &DecayModel, n_params: usize) -> Result<f64> {
    let mu = expected_counts(model, &hist.shape());
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut n_acc, mut m_acc) = (0.0, 0.0);
    for (&n, &m) in hist.counts.iter().zip(&mu) {
        n_acc += n as f64;
        m_acc += m;
        if m_acc >= CHI2_MIN_EXPECTED {
            groups.push((n_acc, m_acc));
            n_acc = 0.0;
            m_acc = 0.0;
        }
    }
    if m_acc > 0.0 || n_acc > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += n_acc;
                last.1 += m_acc;
            }
            None => groups.push((n_acc, m_acc)),
        }
    }
    if groups.len() <= n_params {
        return Err(Error::Undefined(format!(
            "{} bin groups leave no degrees of freedom for {n_params} parameters",
            groups.len()
        )));
    }
    let chi2: f64 = groups.iter().map(|(n, m)| (n - m).powi(2) / m.max(1.0)).sum();
    Ok(chi2 / (groups.len() - n_params) as f64)
}

/// Mono fit unless its χ²_red exceeds `chi2_threshold`, in which case the
/// bi fit is returned; a degenerate bi fit falls back to mono.
pub fn select_model_with(hist: &DecayHistogram, chi2_threshold: f64, opts: &FitOptions) -> Result<DecayFit> {
    let mono = fit_with_options(hist, ModelKind::Mono, opts);
    if let Ok(m) = &mono {
        if m.chi2_red <= chi2_threshold {
            return mono;
        }
    }
    match (mono, fit_with_options(hist, ModelKind::Bi, opts)) {
        (Ok(m), Ok(b)) => Ok(if b.degenerate { m } else { b }),
        (Err(_), Ok(b)) => Ok(b),
        (Ok(m), Err(_)) => Ok(m),
        (Err(e), Err(_)) => Err(e),
    }
}

pub fn select_model(hist: &DecayHistogram) -> Result<DecayFit> {
    select_model_with(hist, DEFAULT_CHI2_THRESHOLD, &FitOptions::default())
}
