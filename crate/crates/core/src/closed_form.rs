//! Closed-form bounds for one source on a centered array and for two
//! closely-spaced sources on a ULA, plus the small-separation expansions
//! they rest on.

use num_complex::Complex64;

use crate::crb::det_nc_crb;
use crate::error::{Error, Result};
use crate::geometry::{build_steering_set, is_centered, SamplingGrid, CENTRO_TOL};
use crate::signal::SourceScenario;

/// Two sources on an `M`-element ULA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSourceParams {
    pub m: usize,
    /// `|μ₂ − μ₁|`
    pub delta_mu: f64,
    /// Effective phase separation `Δφ_rot + δ·Δμ`.
    pub delta_phi: f64,
    pub rho: f64,
    pub snr1: f64,
    pub snr2: f64,
}

impl TwoSourceParams {
    pub fn new(m: usize, delta_mu: f64, delta_phi: f64, rho: f64, snr1: f64, snr2: f64) -> Result<Self> {
        if m < 4 {
            return Err(Error::InvalidInput(format!("two-source closed forms need M ≥ 4, got {m}")));
        }
        if !(snr1 > 0.0 && snr2 > 0.0) {
            return Err(Error::InvalidInput(format!("effective SNRs must be positive, got {snr1} and {snr2}")));
        }
        if !(rho.abs() <= 1.0) {
            return Err(Error::InvalidInput(format!("correlation must lie in [-1, 1], got {rho}")));
        }
        if !delta_mu.is_finite() || !delta_phi.is_finite() {
            return Err(Error::InvalidInput("separations must be finite".into()));
        }
        Ok(Self {
            m,
            delta_mu: delta_mu.abs(),
            delta_phi,
            rho,
            snr1,
            snr2,
        })
    }

    /// From raw source parameters and the phase-reference offset `δ`
    /// (0 at the centroid, `(M−1)/2` at the first element).
    #[allow(clippy::too_many_arguments)]
    pub fn from_sources(m: usize, mu: [f64; 2], phi: [f64; 2], delta: f64, rho: f64, snr: [f64; 2]) -> Result<Self> {
        let delta_mu = (mu[1] - mu[0]).abs();
        let delta_phi = (phi[1] - phi[0]).abs() + delta * delta_mu;
        Self::new(m, delta_mu, delta_phi, rho, snr[0], snr[1])
    }

    fn snr_factor(&self) -> f64 {
        (self.snr1 + self.snr2) / (self.snr1 * self.snr2)
    }

    fn mf(&self) -> f64 {
        self.m as f64
    }

    /// `M(M−1)(M−2)(M+2)(M+1)`
    fn q(&self) -> f64 {
        let m = self.mf();
        m * (m - 1.0) * (m - 2.0) * (m + 2.0) * (m + 1.0)
    }

    /// `M(M−1)(M+1)`
    fn p(&self) -> f64 {
        let m = self.mf();
        m * (m - 1.0) * (m + 1.0)
    }
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Per-mode NC CRB of a single source on a centered array,
/// `(1/ϱ̂)·(M_r / 2M)·(Σ k²)⁻¹`.
pub fn single_source_nc_crb(grid: &SamplingGrid, snr: f64) -> Result<Vec<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidInput(format!("effective SNR must be positive, got {snr}")));
    }
    if !is_centered(grid, CENTRO_TOL) {
        return Err(Error::InvalidInput("single-source closed form needs a centered grid".into()));
    }
    let m = grid.size() as f64;
    (0..grid.dims())
        .map(|r| {
            let coords = grid.mode(r);
            let sum_sq: f64 = coords.iter().map(|k| k * k).sum();
            if sum_sq == 0.0 {
                return Err(Error::InvalidInput(format!("mode {r} has zero spread")));
            }
            Ok(coords.len() as f64 / (2.0 * m) / sum_sq / snr)
        })
        .collect()
}

/// Single-source NC CRB of mode `r` on a uniform grid,
/// `(1/ϱ̂)·6/(M(M_r²−1))`.
pub fn single_source_ula_nc_crb(m: usize, m_r: usize, snr: f64) -> Result<f64> {
    if m_r < 2 || !m.is_multiple_of(m_r) {
        return Err(Error::InvalidInput(format!(
            "mode size {m_r} must be ≥ 2 and divide the sensor count {m}"
        )));
    }
    let (m, m_r) = (m as f64, m_r as f64);
    Ok(6.0 / (m * (m_r * m_r - 1.0)) / snr)
}

/// Small-separation NC CRB trace for two sources.
pub fn two_source_nc_crb(p: &TwoSourceParams) -> f64 {
    let m = p.mf();
    let (dm2, rho2) = (p.delta_mu * p.delta_mu, p.rho * p.rho);
    let (c2, s2) = (p.delta_phi.cos().powi(2), p.delta_phi.sin().powi(2));
    let den = rho2 * dm2 * p.q() * (dm2 * (m - 3.0) * (m + 3.0) * c2 + 140.0 * s2)
        + (1.0 - rho2) * p.p() * (140.0 * dm2 * (m - 2.0) * (m + 2.0) * c2 + 8400.0 * s2);
    ratio_or_inf(50400.0, den) * p.snr_factor()
}

/// NC CRB trace as the separation goes to zero.
pub fn nc_crb_limit_zero_sep(p: &TwoSourceParams) -> f64 {
    let m = p.mf();
    let den = (1.0 - p.rho * p.rho) * p.delta_phi.sin().powi(2);
    ratio_or_inf(6.0 / (m * (m * m - 1.0)), den) * p.snr_factor()
}

/// Small-separation CRB trace for two arbitrary sources.
pub fn two_source_crb(p: &TwoSourceParams) -> f64 {
    let m = p.mf();
    let (dm2, rho2) = (p.delta_mu * p.delta_mu, p.rho * p.rho);
    let (c2, s2) = (p.delta_phi.cos().powi(2), p.delta_phi.sin().powi(2));
    let den = rho2 * dm2 * p.q() * (dm2 * (m - 3.0) * (m + 3.0) * c2 + 140.0 * s2)
        + 140.0 * (1.0 - rho2) * dm2 * p.q();
    ratio_or_inf(50400.0, den) * p.snr_factor()
}

/// Closed-form NC gain `tr(C) / tr(C_NC)`; exactly 1 for coherent sources
/// or zero phase separation.
pub fn nc_gain(p: &TwoSourceParams) -> f64 {
    let m = p.mf();
    let (dm2, rho2) = (p.delta_mu * p.delta_mu, p.rho * p.rho);
    let (c2, s2) = (p.delta_phi.cos().powi(2), p.delta_phi.sin().powi(2));
    let num = 140.0 * (1.0 - rho2) * p.p() * s2 * (60.0 - dm2 * (m - 2.0) * (m + 2.0));
    if num == 0.0 {
        return 1.0;
    }
    let den = dm2 * p.q() * (dm2 * rho2 * (m - 3.0) * (m + 3.0) * c2 + 140.0 * (1.0 - rho2 * c2));
    1.0 + ratio_or_inf(num, den)
}

/// `a₁ᴴa₂`, `d₁ᴴa₂` and `d₁ᴴd₂` on a centered ULA, exactly and as
/// truncated power series in `Δμ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBetaGamma {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub gamma: Complex64,
    pub alpha_taylor: f64,
    pub beta_taylor: f64,
    pub gamma_taylor: f64,
    pub order: u32,
}

fn centered_indices(m: usize) -> impl Iterator<Item = f64> {
    let half = (m as f64 - 1.0) / 2.0;
    (0..m).map(move |i| i as f64 - half)
}

/// `Σ m^p` over the centered index set.
pub fn centered_power_sum(m: usize, p: u32) -> f64 {
    centered_indices(m).map(|k| k.powi(p as i32)).sum()
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Dirichlet kernel `Σ e^{jmx} = sin(Mx/2)/sin(x/2)`.
fn dirichlet(m: usize, x: f64) -> f64 {
    let mf = m as f64;
    if x.abs() < 1e-8 {
        mf - mf * (mf * mf - 1.0) / 24.0 * x * x
    } else {
        (mf * x / 2.0).sin() / (x / 2.0).sin()
    }
}

/// Exact products plus their expansions keeping powers of `Δμ` up to
/// `taylor_order` (2, 4 or 6).
pub fn alpha_beta_gamma(m: usize, delta_mu: f64, taylor_order: u32) -> Result<AlphaBetaGamma> {
    if ![2, 4, 6].contains(&taylor_order) {
        return Err(Error::InvalidInput(format!("Taylor order must be 2, 4 or 6, got {taylor_order}")));
    }
    if m == 0 {
        return Err(Error::InvalidInput("sensor count must be ≥ 1".into()));
    }
    let x = delta_mu;
    let j = Complex64::new(0.0, 1.0);
    let mut beta = Complex64::new(0.0, 0.0);
    let mut gamma = Complex64::new(0.0, 0.0);
    for k in centered_indices(m) {
        let e = Complex64::from_polar(1.0, k * x);
        beta += -j * k * e;
        gamma += k * k * e;
    }
    let alpha = Complex64::new(dirichlet(m, x), 0.0);

    let (mut at, mut bt, mut gt) = (0.0, 0.0, 0.0);
    for k in 0..=taylor_order {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * x.powi(k as i32) / factorial(k);
        if k % 2 == 0 {
            at += term * centered_power_sum(m, k);
            gt += term * centered_power_sum(m, k + 2);
        } else {
            bt += term * centered_power_sum(m, k + 1);
        }
    }
    Ok(AlphaBetaGamma {
        alpha,
        beta,
        gamma,
        alpha_taylor: at,
        beta_taylor: bt,
        gamma_taylor: gt,
        order: taylor_order,
    })
}

/// Whether the joint NC CRB of two equal-phase groups equals the sum of
/// the per-group bounds (relative tolerance 1e-8).
///
/// Needs uncorrelated unit-power sources, a centered grid, and phases
/// falling into exactly two classes modulo π.
pub fn two_groups_decoupling_check(grid: &SamplingGrid, scenario: &SourceScenario) -> Result<bool> {
    let d = scenario.sources();
    let identity = nalgebra::DMatrix::<f64>::identity(d, d);
    if (scenario.target_covariance() - &identity).abs().max() > 1e-12 {
        return Err(Error::InvalidInput("decoupling check needs uncorrelated unit-power sources".into()));
    }
    if !is_centered(grid, CENTRO_TOL) {
        return Err(Error::InvalidInput("decoupling check needs a centered grid".into()));
    }
    let same = |a: f64, b: f64| {
        let r = (a - b).rem_euclid(std::f64::consts::PI);
        r.min(std::f64::consts::PI - r) < 1e-9
    };
    let phi = &scenario.phi;
    let (first, second): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| same(phi[i], phi[0]));
    if second.is_empty() || !second.iter().all(|&i| same(phi[i], phi[second[0]])) {
        return Err(Error::InvalidInput("phases must form exactly two classes modulo π".into()));
    }
    let steering = build_steering_set(grid, &scenario.mu)?;
    let trace = |idx: &[usize]| -> Result<f64> {
        let st = steering.select_sources(idx);
        let ph: Vec<f64> = idx.iter().map(|&i| phi[i]).collect();
        let n = idx.len();
        Ok(det_nc_crb(&st, &ph, &identity.view((0, 0), (n, n)).into_owned(), scenario.sigma2, scenario.snapshots)?.trace)
    };
    let all: Vec<usize> = (0..d).collect();
    let joint = trace(&all)?;
    let split = trace(&first)? + trace(&second)?;
    if !joint.is_finite() || !split.is_finite() {
        return Ok(false);
    }
    Ok((joint - split).abs() <= 1e-8 * joint.abs().max(split.abs()))
}
