//! Strictly non-circular source symbols, their sample statistics and noisy
//! snapshot synthesis.
//!
//! Every random draw is a pure function of `(inputs, seed)`. Symbol draws use
//! stream [`SYMBOL_STREAM`] of a ChaCha8 generator seeded with the caller's
//! seed and noise draws use [`NOISE_STREAM`]; sweeps offset the stream by
//! the point index so that parallel evaluation never changes the output.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::geometry::SteeringSet;
use crate::linalg::{symmetrize, CMatrix, RMatrix};

pub const SYMBOL_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;

/// ChaCha8 generator for a given `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A source constellation: frequencies, rotation phases, powers, target
/// correlation, snapshot count and noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScenario {
    /// `R x d` spatial frequencies in radians.
    pub mu: RMatrix,
    pub phi: Vec<f64>,
    pub powers: Vec<f64>,
    /// Symmetric, unit diagonal, positive semidefinite.
    pub corr: RMatrix,
    pub snapshots: usize,
    pub sigma2: f64,
}

impl SourceScenario {
    pub fn new(
        mu: RMatrix,
        phi: Vec<f64>,
        powers: Vec<f64>,
        corr: RMatrix,
        snapshots: usize,
        sigma2: f64,
    ) -> Result<Self> {
        let d = mu.ncols();
        if d == 0 || mu.nrows() == 0 {
            return Err(Error::InvalidInput("scenario needs R ≥ 1 and d ≥ 1".into()));
        }
        if phi.len() != d {
            return Err(dim_err("rotation phases", d, phi.len()));
        }
        if powers.len() != d {
            return Err(dim_err("source powers", d, powers.len()));
        }
        if corr.shape() != (d, d) {
            return Err(dim_err("correlation matrix", format!("({d}, {d})"), format!("{:?}", corr.shape())));
        }
        if snapshots == 0 {
            return Err(Error::InvalidInput("snapshot count must be ≥ 1".into()));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("noise power must be positive, got {sigma2}")));
        }
        if let Some(p) = powers.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::InvalidInput(format!("source power must be positive, got {p}")));
        }
        for i in 0..d {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("correlation diagonal entry {i} is not 1")));
            }
            for j in 0..d {
                if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 || corr[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "correlation entry ({i}, {j}) = {} is not symmetric in [-1, 1]",
                        corr[(i, j)]
                    )));
                }
            }
        }
        psd_factor(&corr)?;
        Ok(Self {
            mu,
            phi,
            powers,
            corr,
            snapshots,
            sigma2,
        })
    }

    pub fn sources(&self) -> usize {
        self.mu.ncols()
    }

    /// `diag(√P) · corr · diag(√P)`.
    pub fn target_covariance(&self) -> RMatrix {
        let d = self.sources();
        RMatrix::from_fn(d, d, |i, j| {
            self.corr[(i, j)] * (self.powers[i] * self.powers[j]).sqrt()
        })
    }
}

/// Pairwise-constant correlation matrix with unit diagonal.
pub fn uniform_correlation(d: usize, rho: f64) -> RMatrix {
    RMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

/// `L` with `L Lᵀ = cov`, from a symmetric eigendecomposition with
/// eigenvalues above `−1e-12` clipped to zero.
pub fn psd_factor(cov: &RMatrix) -> Result<RMatrix> {
    let eig = SymmetricEigen::new(symmetrize(cov));
    let min = eig.eigenvalues.min();
    if min < -1e-12 {
        return Err(Error::NotPsd { eigenvalue: min });
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * RMatrix::from_diagonal(&sqrt))
}

/// Realized real-valued symbols and their empirical statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub s0: RMatrix,
    /// `S0 S0ᵀ / N`.
    pub rhat: RMatrix,
    pub powers: Vec<f64>,
    pub rho: RMatrix,
}

impl SymbolBlock {
    pub fn from_symbols(s0: RMatrix) -> Result<Self> {
        let rhat = sample_covariance(&s0)?;
        let rho = empirical_correlation(&s0)?;
        let powers = rhat.diagonal().iter().copied().collect();
        Ok(Self {
            s0,
            rhat,
            powers,
            rho,
        })
    }

    pub fn snapshots(&self) -> usize {
        self.s0.ncols()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RMatrix {
    // Column-major fill keeps the draw order independent of `rows`.
    let mut out = RMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = StandardNormal.sample(rng);
        }
    }
    out
}

/// Zero-mean real Gaussian rows with covariance
/// `diag(√P)·corr·diag(√P)`. Statistics are recomputed from the draw.
pub fn generate_symbols(scenario: &SourceScenario, seed: u64) -> Result<SymbolBlock> {
    generate_symbols_stream(scenario, seed, SYMBOL_STREAM)
}

pub fn generate_symbols_stream(scenario: &SourceScenario, seed: u64, stream: u64) -> Result<SymbolBlock> {
    let factor = psd_factor(&scenario.target_covariance())?;
    let mut rng = stream_rng(seed, stream);
    let z = gaussian_matrix(&mut rng, scenario.sources(), scenario.snapshots);
    SymbolBlock::from_symbols(factor * z)
}

/// Symbols whose sample covariance equals the target covariance exactly:
/// Gaussian rows are orthonormalized and rescaled before the covariance
/// factor is applied. Needs `N ≥ d`.
pub fn exact_moment_symbols(scenario: &SourceScenario, seed: u64, stream: u64) -> Result<SymbolBlock> {
    let d = scenario.sources();
    let n = scenario.snapshots;
    if n < d {
        return Err(Error::InvalidInput(format!(
            "exact-moment symbols need N ≥ d (N = {n}, d = {d})"
        )));
    }
    let factor = psd_factor(&scenario.target_covariance())?;
    let mut rng = stream_rng(seed, stream);
    let z = gaussian_matrix(&mut rng, n, d);
    let q = z.qr().q();
    let white = q.transpose() * (n as f64).sqrt();
    SymbolBlock::from_symbols(factor * white)
}

/// Fully coherent sources: row `i` is `sign_i · √P_i` times one common
/// unit-power sequence, so `|ρ̂_ij| = 1` holds exactly.
pub fn coherent_symbols(powers: &[f64], signs: &[f64], snapshots: usize, seed: u64) -> Result<SymbolBlock> {
    if powers.len() != signs.len() {
        return Err(dim_err("coherent signs", powers.len(), signs.len()));
    }
    if snapshots == 0 {
        return Err(Error::InvalidInput("snapshot count must be ≥ 1".into()));
    }
    let mut rng = stream_rng(seed, SYMBOL_STREAM);
    let mut base: Vec<f64> = (0..snapshots).map(|_| StandardNormal.sample(&mut rng)).collect();
    let power = base.iter().map(|x| x * x).sum::<f64>() / snapshots as f64;
    if power == 0.0 {
        base.iter_mut().for_each(|x| *x = 1.0);
    } else {
        let scale = power.sqrt();
        base.iter_mut().for_each(|x| *x /= scale);
    }
    let s0 = RMatrix::from_fn(powers.len(), snapshots, |i, t| {
        signs[i].signum() * powers[i].sqrt() * base[t]
    });
    SymbolBlock::from_symbols(s0)
}

/// `S0 S0ᵀ / N`, symmetrized.
pub fn sample_covariance(s0: &RMatrix) -> Result<RMatrix> {
    let n = s0.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("symbol matrix has no snapshots".into()));
    }
    Ok(symmetrize(&(s0 * s0.transpose() / n as f64)))
}

/// `ρ̂_ij = s_iᵀ s_j / (N √(P̂_i P̂_j))` with unit diagonal.
pub fn empirical_correlation(s0: &RMatrix) -> Result<RMatrix> {
    let rhat = sample_covariance(s0)?;
    let d = rhat.nrows();
    if let Some(row) = (0..d).find(|&i| !(rhat[(i, i)] > 0.0)) {
        return Err(Error::ZeroPower { row });
    }
    Ok(RMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            rhat[(i, j)] / (rhat[(i, i)] * rhat[(j, j)]).sqrt()
        }
    }))
}

/// `Ψ S0` with `Ψ = diag(exp(j φ_i))`.
pub fn rotate_symbols(s0: &RMatrix, phi: &[f64]) -> Result<CMatrix> {
    if phi.len() != s0.nrows() {
        return Err(dim_err("rotation phases", s0.nrows(), phi.len()));
    }
    Ok(CMatrix::from_fn(s0.nrows(), s0.ncols(), |i, t| {
        Complex64::from_polar(1.0, phi[i]) * s0[(i, t)]
    }))
}

/// `Ψ* R̂_S0 Ψ`, the covariance of the rotated symbols in the convention
/// used by [`crate::crb::det_crb`].
pub fn signal_covariance(rhat_s0: &RMatrix, phi: &[f64]) -> Result<CMatrix> {
    let d = rhat_s0.nrows();
    if phi.len() != d {
        return Err(dim_err("rotation phases", d, phi.len()));
    }
    Ok(CMatrix::from_fn(d, d, |i, j| {
        Complex64::from_polar(rhat_s0[(i, j)], phi[j] - phi[i])
    }))
}

/// Sample non-circularity coefficient `Σ z² / Σ |z|²`.
pub fn noncircularity_coefficient(samples: &[Complex64]) -> Complex64 {
    let num: Complex64 = samples.iter().map(|z| z * z).sum();
    let den: f64 = samples.iter().map(|z| z.norm_sqr()).sum();
    num / den
}

#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    pub x: CMatrix,
}

/// `X = A Ψ S0 + N` with circularly symmetric complex Gaussian noise of
/// total variance `σ²` per entry.
pub fn synthesize_snapshots(
    steering: &SteeringSet,
    scenario: &SourceScenario,
    s0: &RMatrix,
    seed: u64,
) -> Result<SnapshotMatrix> {
    if s0.nrows() != steering.sources() || scenario.sources() != steering.sources() {
        return Err(dim_err("symbol rows", steering.sources(), s0.nrows()));
    }
    let clean = &steering.a * rotate_symbols(s0, &scenario.phi)?;
    let (m, n) = clean.shape();
    let sd = (scenario.sigma2 / 2.0).sqrt();
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let mut x = clean;
    for t in 0..n {
        for i in 0..m {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            x[(i, t)] += Complex64::new(sd * re, sd * im);
        }
    }
    Ok(SnapshotMatrix { x })
}

/// `ϱ̂ = N P̂ / σ²`.
pub fn effective_snr(power: f64, snapshots: usize, sigma2: f64) -> f64 {
    snapshots as f64 * power / sigma2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_steering_set, Reference, SamplingGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn scenario(d: usize, rho: f64, n: usize, sigma2: f64) -> SourceScenario {
        SourceScenario::new(
            RMatrix::from_fn(1, d, |_, j| 0.3 * j as f64),
            (0..d).map(|i| 0.4 * i as f64).collect(),
            vec![1.0; d],
            uniform_correlation(d, rho),
            n,
            sigma2,
        )
        .unwrap()
    }

    #[test]
    fn scenario_validation() {
        let mu = RMatrix::zeros(1, 2);
        let bad_corr = RMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(SourceScenario::new(mu.clone(), vec![0.0; 2], vec![1.0; 2], bad_corr, 4, 1.0).is_err());
        assert!(SourceScenario::new(mu.clone(), vec![0.0; 1], vec![1.0; 2], uniform_correlation(2, 0.0), 4, 1.0).is_err());
        assert!(SourceScenario::new(mu.clone(), vec![0.0; 2], vec![1.0; 2], uniform_correlation(2, 0.0), 0, 1.0).is_err());
        assert!(SourceScenario::new(mu.clone(), vec![0.0; 2], vec![1.0; 2], uniform_correlation(2, 0.0), 4, 0.0).is_err());
        // Pairwise −0.9 among three sources is not PSD.
        let mu3 = RMatrix::zeros(1, 3);
        assert!(matches!(
            SourceScenario::new(mu3, vec![0.0; 3], vec![1.0; 3], uniform_correlation(3, -0.9), 4, 1.0),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn single_source_power_converges() {
        let n = 100_000;
        let sc = scenario(1, 0.0, n, 1.0);
        let block = generate_symbols(&sc, 42).unwrap();
        assert!((block.powers[0] - 1.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn uncorrelated_rho_hat_is_small() {
        let n = 400;
        let bound = 4.0 / (n as f64).sqrt();
        let trials = 200;
        let hits = (0..trials)
            .filter(|&seed| {
                let block = generate_symbols(&scenario(2, 0.0, n, 1.0), seed).unwrap();
                block.rho[(0, 1)].abs() <= bound
            })
            .count();
        assert!(hits as f64 / trials as f64 >= 0.99, "{hits}/{trials}");
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = scenario(3, 0.5, 20, 1.0);
        let a = generate_symbols(&sc, 7).unwrap();
        let b = generate_symbols(&sc, 7).unwrap();
        assert_eq!(a.s0, b.s0);
        let c = generate_symbols(&sc, 8).unwrap();
        assert_ne!(a.s0, c.s0);
    }

    #[test]
    fn exact_moments_match_target() {
        let mut sc = scenario(3, 0.6, 10, 1.0);
        sc.powers = vec![0.5, 1.5, 2.0];
        let block = exact_moment_symbols(&sc, 3, 0).unwrap();
        let target = sc.target_covariance();
        assert!((block.rhat - target).abs().max() < 1e-12);
        let coh = SourceScenario { corr: uniform_correlation(2, 1.0), ..scenario(2, 0.0, 5, 1.0) };
        let block = exact_moment_symbols(&coh, 3, 0).unwrap();
        assert_relative_eq!(block.rho[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coherent_construction_is_exact() {
        let b = coherent_symbols(&[1.0, 1.0, 2.0], &[1.0, -1.0, 1.0], 12, 9).unwrap();
        assert_relative_eq!(b.rho[(0, 1)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(b.rho[(0, 2)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.powers[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.powers[2], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sample_covariance_examples() {
        let s = RMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(sample_covariance(&s).unwrap()[(0, 0)], 1.0);
        let s = RMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(sample_covariance(&s).unwrap()[(0, 1)], 0.0);
        let s = RMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!(sample_covariance(&s).unwrap().iter().all(|v| *v == 1.0));
        assert!(sample_covariance(&RMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn empirical_correlation_examples() {
        let s = RMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_relative_eq!(empirical_correlation(&s).unwrap()[(0, 1)], 1.0, epsilon = 1e-15);
        let s = RMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(empirical_correlation(&s).unwrap()[(0, 1)], 0.0);
        let s = RMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
        assert_relative_eq!(empirical_correlation(&s).unwrap()[(1, 0)], -1.0, epsilon = 1e-15);
        let s = RMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(empirical_correlation(&s), Err(Error::ZeroPower { row: 1 }));
    }

    #[test]
    fn rotation_examples() {
        let s = RMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let r = rotate_symbols(&s, &[0.0]).unwrap();
        assert!(r.iter().zip(s.iter()).all(|(z, x)| z.re == *x && z.im == 0.0));
        let r = rotate_symbols(&s, &[PI / 2.0]).unwrap();
        assert!(r.iter().all(|z| z.re.abs() < 1e-15));
        let row: Vec<_> = rotate_symbols(&s, &[1.234]).unwrap().iter().copied().collect();
        assert_relative_eq!(noncircularity_coefficient(&row).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_covariance_relation() {
        let sc = scenario(3, 0.3, 15, 1.0);
        let block = generate_symbols(&sc, 1).unwrap();
        let s = rotate_symbols(&block.s0, &sc.phi).unwrap();
        // Ψ* R̂_S0 Ψ is the transpose of (1/N) S Sᴴ.
        let direct = (&s * s.adjoint()).transpose() / Complex64::new(15.0, 0.0);
        let via = signal_covariance(&block.rhat, &sc.phi).unwrap();
        assert!((direct - via).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn noiseless_snapshots() {
        let grid = SamplingGrid::ula(4, Reference::First).unwrap();
        let mut sc = scenario(2, 0.0, 6, 1.0);
        let st = build_steering_set(&grid, &sc.mu).unwrap();
        let block = generate_symbols(&sc, 2).unwrap();
        sc.sigma2 = f64::MIN_POSITIVE;
        let x = synthesize_snapshots(&st, &sc, &block.s0, 3).unwrap();
        let clean = &st.a * rotate_symbols(&block.s0, &sc.phi).unwrap();
        assert!((x.x - clean).iter().all(|z| z.norm() < 1e-150));
    }

    #[test]
    fn noise_power_and_circularity() {
        let grid = SamplingGrid::ula(10, Reference::First).unwrap();
        let sc = scenario(2, 0.0, 1000, 0.5);
        let st = build_steering_set(&grid, &sc.mu).unwrap();
        let block = generate_symbols(&sc, 2).unwrap();
        let x = synthesize_snapshots(&st, &sc, &block.s0, 3).unwrap();
        let clean = &st.a * rotate_symbols(&block.s0, &sc.phi).unwrap();
        let noise: Vec<Complex64> = (x.x - clean).iter().copied().collect();
        let mn = noise.len() as f64;
        let power = noise.iter().map(|z| z.norm_sqr()).sum::<f64>() / mn;
        assert!((power / 0.5 - 1.0).abs() < 0.05);
        let pseudo: Complex64 = noise.iter().map(|z| z * z).sum::<Complex64>() / mn;
        assert!(pseudo.norm() / 0.5 <= 5.0 / mn.sqrt());
    }

    #[test]
    fn effective_snr_examples() {
        assert_relative_eq!(effective_snr(1.0, 20, 0.1), 200.0, epsilon = 1e-12);
        assert_eq!(effective_snr(1.0, 1, 1.0), 1.0);
        assert_relative_eq!(effective_snr(0.5, 10, 0.032), 156.25, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_preserves_row_power(vals in prop::collection::vec(-5.0f64..5.0, 12), phi in prop::collection::vec(-7.0f64..7.0, 3)) {
            let s = RMatrix::from_row_slice(3, 4, &vals);
            let r = rotate_symbols(&s, &phi).unwrap();
            for i in 0..3 {
                let p0: f64 = s.row(i).iter().map(|x| x * x).sum();
                let p1: f64 = r.row(i).iter().map(|z| z.norm_sqr()).sum();
                prop_assert!((p0 - p1).abs() <= 1e-12 * p0.max(1.0));
            }
        }

        #[test]
        fn empirical_stats_invariants(seed in 0u64..1000, d in 1usize..5, n in 1usize..30) {
            let s = generate_symbols(&scenario(d, 0.2, n, 1.0), seed).unwrap();
            for i in 0..d {
                prop_assert_eq!(s.rhat[(i, i)], s.powers[i]);
                for j in 0..d {
                    prop_assert_eq!(s.rhat[(i, j)], s.rhat[(j, i)]);
                    prop_assert!(s.rho[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
            prop_assert!(s.rhat.clone().symmetric_eigenvalues().min() > -1e-12);
        }
    }
}
