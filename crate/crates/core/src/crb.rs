//! Deterministic Cramér-Rao bounds on the spatial frequencies: the
//! arbitrary-signal bound, the strictly non-circular bound and a
//! brute-force Fisher information oracle for the latter.

use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::geometry::SteeringSet;
use crate::linalg::{
    block_inverse_3x3, checked_inverse, hadamard, projector_complement, re, im,
    relative_condition, symmetrize, tile, Blocks3x3, CMatrix, RMatrix, SINGULAR_CONDITION,
};

/// Real and imaginary parts of the phase-rotated steering products.
///
/// With `Ψ = diag(e^{jφ})` and `Ψ_R = I_R ⊗ Ψ`:
/// `G0 + jH0 = ΨᴴAᴴAΨ`, `G1 + jH1 = Ψ_RᴴDᴴAΨ`, `G2 = Re{Ψ_RᴴDᴴDΨ_R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhSet {
    pub g0: RMatrix,
    pub h0: RMatrix,
    pub g1: RMatrix,
    pub h1: RMatrix,
    pub g2: RMatrix,
}

fn rotate_columns(m: &CMatrix, phi: &[f64]) -> CMatrix {
    let d = phi.len();
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= Complex64::from_polar(1.0, phi[j % d]);
    }
    out
}

pub fn gh_matrices(steering: &SteeringSet, phi: &[f64]) -> Result<GhSet> {
    let d = steering.sources();
    if phi.len() != d {
        return Err(dim_err("rotation phases", d, phi.len()));
    }
    let a_psi = rotate_columns(&steering.a, phi);
    let d_psi = rotate_columns(&steering.d, phi);
    let q0 = a_psi.adjoint() * &a_psi;
    let q1 = d_psi.adjoint() * &a_psi;
    let q2 = d_psi.adjoint() * &d_psi;
    Ok(GhSet {
        g0: re(&q0),
        h0: im(&q0),
        g1: re(&q1),
        h1: im(&q1),
        g2: re(&q2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    Crb,
    NcCrb,
    FimOracle,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            BoundKind::Crb => "crb",
            BoundKind::NcCrb => "nc_crb",
            BoundKind::FimOracle => "fim_oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundDiagnostics {
    /// Condition of the matrix that was finally inverted.
    pub condition: f64,
    /// Name of the factor that was found singular, if any.
    pub failed_factor: Option<&'static str>,
    /// Relative trace difference between two independent evaluations.
    pub cross_check: Option<f64>,
}

/// A bound matrix on the `R·d` spatial frequencies, or a singular marker
/// with infinite trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub kind: BoundKind,
    pub matrix: Option<RMatrix>,
    pub trace: f64,
    pub sources: usize,
    pub diagnostics: BoundDiagnostics,
}

impl BoundResult {
    fn finite(kind: BoundKind, matrix: RMatrix, sources: usize, condition: f64) -> Self {
        let matrix = symmetrize(&matrix);
        Self {
            kind,
            trace: matrix.trace(),
            matrix: Some(matrix),
            sources,
            diagnostics: BoundDiagnostics {
                condition,
                ..Default::default()
            },
        }
    }

    fn singular(kind: BoundKind, sources: usize, factor: &'static str, condition: f64) -> Self {
        Self {
            kind,
            matrix: None,
            trace: f64::INFINITY,
            sources,
            diagnostics: BoundDiagnostics {
                condition,
                failed_factor: Some(factor),
                cross_check: None,
            },
        }
    }

    pub fn is_singular(&self) -> bool {
        self.matrix.is_none()
    }

    /// Per-source RMSE `sqrt(trace / d)`.
    pub fn rmse(&self) -> f64 {
        (self.trace / self.sources as f64).sqrt()
    }
}

fn check_common(sigma2: f64, snapshots: usize) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidInput(format!("noise power must be positive, got {sigma2}")));
    }
    if snapshots == 0 {
        return Err(Error::InvalidInput("snapshot count must be ≥ 1".into()));
    }
    Ok(())
}

/// Inverse, or the singular marker carrying `what`.
fn invert_or_mark(m: &RMatrix, what: &'static str) -> std::result::Result<RMatrix, (&'static str, f64)> {
    match checked_inverse(m, what) {
        Ok(inv) => Ok(inv),
        Err(Error::Singular { condition, .. }) => Err((what, condition)),
        Err(_) => Err((what, f64::INFINITY)),
    }
}

/// Arbitrary-signal deterministic CRB
/// `C = σ²/(2N) · Re{(DᴴΠ⊥D) ⊙ (1_{R×R} ⊗ R̂_S)}⁻¹`.
///
/// `rhat_s` is `Ψ* R̂_S0 Ψ` as returned by
/// [`crate::signal::signal_covariance`], i.e. the transpose of `S Sᴴ / N`.
pub fn det_crb(steering: &SteeringSet, rhat_s: &CMatrix, sigma2: f64, snapshots: usize) -> Result<BoundResult> {
    check_common(sigma2, snapshots)?;
    let d = steering.sources();
    let r = steering.dims();
    if rhat_s.shape() != (d, d) {
        return Err(dim_err("signal covariance", format!("({d}, {d})"), format!("{:?}", rhat_s.shape())));
    }
    let kind = BoundKind::Crb;
    let proj = match projector_complement(&steering.a) {
        Ok(p) => p,
        Err(Error::Singular { what, condition }) => return Ok(BoundResult::singular(kind, d, what, condition)),
        Err(e) => return Err(e),
    };
    let tiled = tile(rhat_s, r, r);
    let dh = steering.d.adjoint();
    let inner = re(&(&dh * &proj * &steering.d).component_mul(&tiled));
    let reference = re(&(&dh * &steering.d).component_mul(&tiled));
    let condition = relative_condition(&inner, &reference);
    if condition > SINGULAR_CONDITION {
        return Ok(BoundResult::singular(kind, d, "Re{(DᴴΠ⊥D) ⊙ R̂_S}", condition));
    }
    match invert_or_mark(&symmetrize(&inner), "Re{(DᴴΠ⊥D) ⊙ R̂_S}") {
        Ok(inv) => Ok(BoundResult::finite(kind, inv * (sigma2 / (2.0 * snapshots as f64)), d, condition)),
        Err((what, c)) => Ok(BoundResult::singular(kind, d, what, c)),
    }
}

/// The matrix whose inverse, scaled by `σ²/(2N)`, is the NC CRB, together
/// with the reference `G2 ⊙ R̂^(R)` used for the singularity test.
fn nc_information(gh: &GhSet, rhat: &RMatrix, r: usize) -> std::result::Result<(RMatrix, RMatrix), (&'static str, f64)> {
    let GhSet { g0, h0, g1, h1, g2 } = gh;
    let rr = tile(rhat, r, r);
    let rc = tile(rhat, r, 1);
    let rrow = tile(rhat, 1, r);
    let had = |a: &RMatrix, b: &RMatrix| a.component_mul(b);

    let g0_inv = invert_or_mark(g0, "G0")?;
    let g0inv_h0 = &g0_inv * h0;
    let g0inv_g1t = &g0_inv * g1.transpose();
    let h0t = h0.transpose();

    let j_phi = had(g0, rhat);
    let j_phi_inv = invert_or_mark(&j_phi, "G0 ⊙ R̂_S0")?;
    let s = had(&(g0 - &h0t * &g0inv_h0), rhat);
    let s_inv = invert_or_mark(&s, "(G0 − H0ᵀG0⁻¹H0) ⊙ R̂_S0")?;

    let x1 = had(&(g1 * &g0inv_h0), &rc);
    let x2 = had(&(&h0t * &g0inv_g1t), &rrow);
    let h1c = had(h1, &rc);
    let h1r = had(&h1.transpose(), &rrow);
    let mid = had(&(h1.transpose() - &h0t * &g0inv_g1t), &rrow);
    let inner = had(&(&h0t * &g0inv_h0), rhat);

    let reference = had(g2, &rr);
    let z = had(&(g2 - g1 * &g0inv_g1t), &rr)
        + &x1 * &s_inv * mid
        + &h1c * &j_phi_inv * &x2
        + &h1c * &j_phi_inv * inner * &s_inv * &x2
        - &h1c * &s_inv * h1r;
    Ok((symmetrize(&z), reference))
}

/// Deterministic NC CRB on the spatial frequencies of strictly
/// non-circular sources with real symbols `S0` rotated by `e^{jφ}`.
pub fn det_nc_crb(
    steering: &SteeringSet,
    phi: &[f64],
    rhat_s0: &RMatrix,
    sigma2: f64,
    snapshots: usize,
) -> Result<BoundResult> {
    check_common(sigma2, snapshots)?;
    let d = steering.sources();
    if rhat_s0.shape() != (d, d) {
        return Err(dim_err("symbol covariance", format!("({d}, {d})"), format!("{:?}", rhat_s0.shape())));
    }
    let kind = BoundKind::NcCrb;
    let gh = gh_matrices(steering, phi)?;
    let (z, reference) = match nc_information(&gh, &symmetrize(rhat_s0), steering.dims()) {
        Ok(v) => v,
        Err((what, c)) => return Ok(BoundResult::singular(kind, d, what, c)),
    };
    let condition = relative_condition(&z, &reference);
    if condition > SINGULAR_CONDITION {
        return Ok(BoundResult::singular(kind, d, "NC information matrix", condition));
    }
    match invert_or_mark(&z, "NC information matrix") {
        Ok(inv) => Ok(BoundResult::finite(kind, inv * (sigma2 / (2.0 * snapshots as f64)), d, condition)),
        Err((what, c)) => Ok(BoundResult::singular(kind, d, what, c)),
    }
}

/// Distinct blocks of the Fisher information on `(μ, vec S0, φ)`, with
/// `vec S0` ordered snapshot by snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct FimBlocks {
    pub j_mu_mu: RMatrix,
    /// The `d x d` diagonal block of `J_s0s0 = I_N ⊗ (2/σ²)G0`.
    pub j_s0_block: RMatrix,
    pub snapshots: usize,
    pub j_phi_phi: RMatrix,
    pub j_mu_s0: RMatrix,
    pub j_s0_phi: RMatrix,
    pub j_mu_phi: RMatrix,
}

impl FimBlocks {
    pub fn j_s0_s0(&self) -> RMatrix {
        let d = self.j_s0_block.nrows();
        let mut out = RMatrix::zeros(self.snapshots * d, self.snapshots * d);
        for t in 0..self.snapshots {
            out.view_mut((t * d, t * d), (d, d)).copy_from(&self.j_s0_block);
        }
        out
    }

    pub fn partition(&self) -> Blocks3x3 {
        Blocks3x3 {
            a: self.j_mu_mu.clone(),
            b: self.j_mu_s0.clone(),
            c: self.j_mu_phi.clone(),
            d: self.j_mu_s0.transpose(),
            e: self.j_s0_s0(),
            f: self.j_s0_phi.clone(),
            g: self.j_mu_phi.transpose(),
            h: self.j_s0_phi.transpose(),
            j: self.j_phi_phi.clone(),
        }
    }

    pub fn assemble(&self) -> RMatrix {
        self.partition().assemble()
    }

    fn sources(&self) -> usize {
        self.j_phi_phi.nrows()
    }
}

fn check_fim_inputs(steering: &SteeringSet, phi: &[f64], s0: &RMatrix, sigma2: f64) -> Result<()> {
    check_common(sigma2, s0.ncols())?;
    let d = steering.sources();
    if s0.nrows() != d {
        return Err(dim_err("symbol rows", d, s0.nrows()));
    }
    if phi.len() != d {
        return Err(dim_err("rotation phases", d, phi.len()));
    }
    Ok(())
}

/// Fisher information blocks from the `G`/`H` products.
pub fn fim_assemble(steering: &SteeringSet, phi: &[f64], s0: &RMatrix, sigma2: f64) -> Result<FimBlocks> {
    check_fim_inputs(steering, phi, s0, sigma2)?;
    let (d, n) = s0.shape();
    let r = steering.dims();
    let gh = gh_matrices(steering, phi)?;
    let c = 2.0 / sigma2;
    let nf = n as f64;
    let rhat = s0 * s0.transpose() / nf;

    let mut j_mu_s0 = RMatrix::zeros(r * d, n * d);
    let mut j_s0_phi = RMatrix::zeros(n * d, d);
    for t in 0..n {
        let s = s0.column(t);
        let rows = RMatrix::from_fn(r * d, d, |i, j| c * s[i % d] * gh.g1[(i, j)]);
        j_mu_s0.view_mut((0, t * d), (r * d, d)).copy_from(&rows);
        let cols = RMatrix::from_fn(d, d, |i, j| -c * gh.h0[(i, j)] * s[j]);
        j_s0_phi.view_mut((t * d, 0), (d, d)).copy_from(&cols);
    }
    Ok(FimBlocks {
        j_mu_mu: hadamard(&gh.g2, &tile(&rhat, r, r))? * (c * nf),
        j_s0_block: &gh.g0 * c,
        snapshots: n,
        j_phi_phi: hadamard(&gh.g0, &rhat)? * (c * nf),
        j_mu_s0,
        j_s0_phi,
        j_mu_phi: hadamard(&gh.h1, &tile(&rhat, r, 1))? * (-c * nf),
    })
}

/// `(2/σ²) Re{GᴴG}` from the explicit Jacobian of the noiseless snapshots
/// with respect to `(μ, vec S0, φ)`.
pub fn fim_from_jacobian(steering: &SteeringSet, phi: &[f64], s0: &RMatrix, sigma2: f64) -> Result<RMatrix> {
    check_fim_inputs(steering, phi, s0, sigma2)?;
    let (d, n) = s0.shape();
    let r = steering.dims();
    let m = steering.sensors();
    let a_psi = rotate_columns(&steering.a, phi);
    let d_psi = rotate_columns(&steering.d, phi);
    let cols = (r + n + 1) * d;
    let mut g = CMatrix::zeros(m * n, cols);
    let j = Complex64::new(0.0, 1.0);
    for t in 0..n {
        let s = s0.column(t);
        for row in 0..m {
            for k in 0..r * d {
                g[(t * m + row, k)] = d_psi[(row, k)] * s[k % d];
            }
            for k in 0..d {
                g[(t * m + row, r * d + t * d + k)] = a_psi[(row, k)];
                g[(t * m + row, (r + n) * d + k)] = j * a_psi[(row, k)] * s[k];
            }
        }
    }
    Ok(re(&(g.adjoint() * g)) * (2.0 / sigma2))
}

/// μ-block of the inverse Fisher information, by the 3x3 block formula and
/// cross-checked against dense inversion of the assembled matrix.
pub fn fim_mu_block_inverse(blocks: &FimBlocks) -> Result<BoundResult> {
    let kind = BoundKind::FimOracle;
    let d = blocks.sources();
    let partition = blocks.partition();
    let blockwise = match block_inverse_3x3(&partition) {
        Ok(m) => m,
        Err(Error::Singular { what, condition }) => return Ok(BoundResult::singular(kind, d, what, condition)),
        Err(e) => return Err(e),
    };
    let p = blocks.j_mu_mu.nrows();
    let full = partition.assemble();
    let cross_check = match invert_or_mark(&symmetrize(&full), "assembled FIM") {
        Ok(inv) => {
            let dense = inv.view((0, 0), (p, p)).trace();
            let t = blockwise.trace();
            Some((t - dense).abs() / t.abs().max(dense.abs()))
        }
        Err(_) => None,
    };
    let condition = match invert_or_mark(&blockwise, "μ-block of the inverse FIM") {
        Ok(info) => relative_condition(&info, &blocks.j_mu_mu),
        Err((_, c)) => c,
    };
    if condition > SINGULAR_CONDITION {
        return Ok(BoundResult::singular(kind, d, "μ-block Schur complement", condition));
    }
    let mut out = BoundResult::finite(kind, blockwise, d, condition);
    out.diagnostics.cross_check = cross_check;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_steering_set, Reference, SamplingGrid};
    use crate::signal::{coherent_symbols, exact_moment_symbols, generate_symbols, signal_covariance, uniform_correlation, SourceScenario};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn steering_1d(m: usize, reference: Reference, mu: &[f64]) -> SteeringSet {
        let grid = SamplingGrid::ula(m, reference).unwrap();
        build_steering_set(&grid, &RMatrix::from_row_slice(1, mu.len(), mu)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs())
    }

    /// Random well-separated scenario: μ differ by > 0.3 in some mode and
    /// phases differ by > 0.2 modulo π.
    fn random_scenario(seed: u64, r: usize, d: usize, m: usize, n: usize, rho: f64) -> (SteeringSet, Vec<f64>, RMatrix) {
        use rand::Rng;
        let mut rng = crate::signal::stream_rng(seed, 99);
        let sizes: Vec<usize> = (0..r).map(|_| rng.random_range(4..=m.max(4))).collect();
        let grid = SamplingGrid::uniform(&sizes, Reference::First).unwrap();
        let mut mu = RMatrix::zeros(r, d);
        let mut phi = vec![0.0; d];
        for i in 0..d {
            loop {
                let cand: Vec<f64> = (0..r).map(|_| rng.random_range(-2.5..2.5)).collect();
                let p: f64 = rng.random_range(0.0..PI);
                let ok = (0..i).all(|k| {
                    let sep = (0..r).any(|q| (cand[q] - mu[(q, k)]).abs() > 0.3);
                    let dp = (p - phi[k]).rem_euclid(PI);
                    sep && dp.min(PI - dp) > 0.2
                });
                if ok {
                    for q in 0..r {
                        mu[(q, i)] = cand[q];
                    }
                    phi[i] = p;
                    break;
                }
            }
        }
        let st = build_steering_set(&grid, &mu).unwrap();
        let sc = SourceScenario::new(mu, phi.clone(), vec![1.0; d], uniform_correlation(d, rho), n, 1.0).unwrap();
        let s0 = generate_symbols(&sc, seed).unwrap().s0;
        (st, phi, s0)
    }

    #[test]
    fn gh_single_source_centered() {
        let st = steering_1d(3, Reference::Centroid, &[0.7]);
        let gh = gh_matrices(&st, &[1.1]).unwrap();
        assert_relative_eq!(gh.g0[(0, 0)], 3.0, epsilon = 1e-12);
        assert!(gh.h0[(0, 0)].abs() < 1e-12);
        assert!(gh.g1[(0, 0)].abs() < 1e-12);
        assert!(gh.h1[(0, 0)].abs() < 1e-12);
        assert_relative_eq!(gh.g2[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gh_equal_phase_centered_has_no_imaginary_part() {
        let grid = SamplingGrid::uniform(&[4, 3], Reference::Centroid).unwrap();
        let mu = RMatrix::from_row_slice(2, 3, &[0.1, -0.8, 1.3, 0.5, 0.2, -1.0]);
        let st = build_steering_set(&grid, &mu).unwrap();
        let gh = gh_matrices(&st, &[0.4, 0.4 + PI, 0.4]).unwrap();
        assert!(gh.h0.abs().max() < 1e-10);
        assert!(gh.h1.abs().max() < 1e-10);
    }

    #[test]
    fn gh_trivial_real_grid() {
        let a = CMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0].map(|x| Complex64::new(x, 0.0)));
        let st = SteeringSet::from_matrices(a.clone(), a.clone(), 1).unwrap();
        let gh = gh_matrices(&st, &[0.0, 0.0]).unwrap();
        assert_eq!(gh.g0, re(&a).transpose() * re(&a));
    }

    #[test]
    fn gh_symmetry_invariants() {
        let (st, phi, _) = random_scenario(5, 2, 3, 5, 4, 0.0);
        let gh = gh_matrices(&st, &phi).unwrap();
        assert!((&gh.g0 - gh.g0.transpose()).abs().max() < 1e-12);
        assert!((&gh.g2 - gh.g2.transpose()).abs().max() < 1e-12);
        assert!((&gh.h0 + gh.h0.transpose()).abs().max() < 1e-12);
        assert!(gh.g0.clone().symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn det_crb_single_source() {
        let st = steering_1d(4, Reference::Centroid, &[0.3]);
        let rs = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        // ϱ̂ = N P / σ² = 200
        let b = det_crb(&st, &rs, 0.1, 20).unwrap();
        assert_relative_eq!(b.trace, 6.0 / (200.0 * 4.0 * 15.0), max_relative = 1e-10);
        for phi in [0.0, 0.9, 2.5] {
            let rs = signal_covariance(&RMatrix::identity(1, 1), &[phi]).unwrap();
            assert_relative_eq!(det_crb(&st, &rs, 0.1, 20).unwrap().trace, b.trace, max_relative = 1e-12);
        }
    }

    #[test]
    fn det_crb_square_ula_is_singular() {
        let st = steering_1d(4, Reference::Centroid, &[-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0]);
        let rs = signal_covariance(&RMatrix::identity(4, 4), &[0.1, 0.7, 1.9, 2.6]).unwrap();
        let b = det_crb(&st, &rs, 0.1, 20).unwrap();
        assert!(b.is_singular());
        assert!(b.trace.is_infinite());
        assert!(b.rmse().is_infinite());
    }

    #[test]
    fn det_nc_crb_overdetermined_is_singular() {
        let mu: Vec<f64> = (0..7).map(|i| -2.0 + 4.0 * i as f64 / 6.0).collect();
        let st = steering_1d(4, Reference::Centroid, &mu);
        let phi: Vec<f64> = (0..7).map(|i| 0.4 * i as f64).collect();
        let b = det_nc_crb(&st, &phi, &RMatrix::identity(7, 7), 0.1, 20).unwrap();
        assert!(b.is_singular());
    }

    #[test]
    fn nc_equals_crb_for_one_source() {
        for reference in [Reference::First, Reference::Centroid] {
            let st = steering_1d(6, reference, &[0.4]);
            let phi = [0.8];
            let rhat = RMatrix::from_element(1, 1, 1.7);
            let nc = det_nc_crb(&st, &phi, &rhat, 0.3, 10).unwrap();
            let crb = det_crb(&st, &signal_covariance(&rhat, &phi).unwrap(), 0.3, 10).unwrap();
            assert_relative_eq!(nc.trace, crb.trace, max_relative = 1e-10);
        }
    }

    #[test]
    fn input_validation() {
        let st = steering_1d(4, Reference::Centroid, &[0.3]);
        let r = RMatrix::identity(1, 1);
        assert!(det_nc_crb(&st, &[0.0], &r, 0.0, 3).is_err());
        assert!(det_nc_crb(&st, &[0.0], &r, 1.0, 0).is_err());
        assert!(det_nc_crb(&st, &[0.0, 1.0], &r, 1.0, 3).is_err());
        assert!(det_crb(&st, &CMatrix::identity(2, 2), 1.0, 3).is_err());
    }

    #[test]
    fn fim_blocks_match_jacobian() {
        for seed in 0..10 {
            let (st, phi, s0) = random_scenario(seed, 1 + seed as usize % 3, 1 + seed as usize % 3, 6, 5, 0.3);
            let blocks = fim_assemble(&st, &phi, &s0, 0.7).unwrap();
            let a = blocks.assemble();
            let b = fim_from_jacobian(&st, &phi, &s0, 0.7).unwrap();
            let scale = b.abs().max();
            assert!((&a - &b).abs().max() <= 1e-10 * scale, "seed {seed}");
            assert!((&a - a.transpose()).abs().max() <= 1e-12 * scale);
        }
    }

    #[test]
    fn fim_single_source_centered_decouples() {
        let st = steering_1d(5, Reference::Centroid, &[0.2]);
        let s0 = RMatrix::from_row_slice(1, 4, &[1.0, -0.5, 2.0, 0.3]);
        let blocks = fim_assemble(&st, &[0.6], &s0, 1.0).unwrap();
        assert!(blocks.j_mu_phi.abs().max() < 1e-12);
        assert!(blocks.j_mu_s0.abs().max() < 1e-12);
        let gh = gh_matrices(&st, &[0.6]).unwrap();
        let rhat = &s0 * s0.transpose() / 4.0;
        assert_relative_eq!(blocks.j_phi_phi[(0, 0)], 2.0 * 4.0 * gh.g0[(0, 0)] * rhat[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn fim_scales_with_noise() {
        let (st, phi, s0) = random_scenario(3, 2, 2, 5, 4, 0.0);
        let a = fim_assemble(&st, &phi, &s0, 1.0).unwrap();
        let b = fim_assemble(&st, &phi, &s0, 2.0).unwrap();
        assert!((a.assemble() * 0.5 - b.assemble()).abs().max() < 1e-12 * a.j_mu_mu.abs().max());
    }

    #[test]
    fn fim_block_diagonal_inverse() {
        let blocks = FimBlocks {
            j_mu_mu: RMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            j_s0_block: RMatrix::identity(1, 1),
            snapshots: 3,
            j_phi_phi: RMatrix::identity(1, 1) * 4.0,
            j_mu_s0: RMatrix::zeros(2, 3),
            j_s0_phi: RMatrix::zeros(3, 1),
            j_mu_phi: RMatrix::zeros(2, 1),
        };
        let out = fim_mu_block_inverse(&blocks).unwrap();
        let expect = blocks.j_mu_mu.clone().try_inverse().unwrap();
        assert!((out.matrix.unwrap() - expect).abs().max() < 1e-14);
    }

    #[test]
    fn oracle_matches_closed_form() {
        for seed in 0..40 {
            let r = 1 + seed as usize % 3;
            let d = 1 + (seed as usize / 3) % 3;
            let (st, phi, s0) = random_scenario(seed, r, d, 6, 8, 0.5);
            let rhat = &s0 * s0.transpose() / 8.0;
            let nc = det_nc_crb(&st, &phi, &rhat, 0.5, 8).unwrap();
            let oracle = fim_mu_block_inverse(&fim_assemble(&st, &phi, &s0, 0.5).unwrap()).unwrap();
            assert!(rel(nc.trace, oracle.trace) < 1e-8, "seed {seed}: {} vs {}", nc.trace, oracle.trace);
            assert!(oracle.diagnostics.cross_check.unwrap() < 1e-9);
        }
    }

    #[test]
    fn equal_phase_collapse() {
        let grid = SamplingGrid::uniform(&[5, 4], Reference::Centroid).unwrap();
        let mu = RMatrix::from_row_slice(2, 3, &[0.1, -0.9, 1.4, 0.6, -0.4, 1.1]);
        let st = build_steering_set(&grid, &mu).unwrap();
        let phi = [0.3, 0.3 + PI, 0.3 - 2.0 * PI];
        let sc = SourceScenario::new(mu, phi.to_vec(), vec![1.0, 2.0, 0.5], uniform_correlation(3, 0.4), 30, 1.0).unwrap();
        let block = exact_moment_symbols(&sc, 4, 0).unwrap();
        let nc = det_nc_crb(&st, &phi, &block.rhat, 0.2, 30).unwrap();
        let crb = det_crb(&st, &signal_covariance(&block.rhat, &phi).unwrap(), 0.2, 30).unwrap();
        assert!(rel(nc.trace, crb.trace) < 1e-9, "{} vs {}", nc.trace, crb.trace);
    }

    #[test]
    fn coherence_collapse_on_irregular_grid() {
        let grid = SamplingGrid::new(vec![vec![0.0, 1.0, 2.7, 4.1, 5.0], vec![0.0, 1.3, 2.0]]).unwrap();
        let mu = RMatrix::from_row_slice(2, 2, &[0.2, -0.7, 0.5, 0.9]);
        let st = build_steering_set(&grid, &mu).unwrap();
        let phi = [0.3, 1.4];
        let block = coherent_symbols(&[1.0, 1.0], &[1.0, -1.0], 25, 2).unwrap();
        let nc = det_nc_crb(&st, &phi, &block.rhat, 0.4, 25).unwrap();
        let crb = det_crb(&st, &signal_covariance(&block.rhat, &phi).unwrap(), 0.4, 25).unwrap();
        assert!(!nc.is_singular());
        assert!(rel(nc.trace, crb.trace) < 1e-8, "{} vs {}", nc.trace, crb.trace);
    }

    #[test]
    fn order_invariance() {
        let (st, phi, s0) = random_scenario(11, 2, 3, 6, 10, 0.2);
        let rhat = &s0 * s0.transpose() / 10.0;
        let base = det_nc_crb(&st, &phi, &rhat, 1.0, 10).unwrap();
        let perm = [2, 0, 1];
        let st_p = st.select_sources(&perm);
        let phi_p: Vec<f64> = perm.iter().map(|&i| phi[i]).collect();
        let rhat_p = RMatrix::from_fn(3, 3, |i, j| rhat[(perm[i], perm[j])]);
        let p = det_nc_crb(&st_p, &phi_p, &rhat_p, 1.0, 10).unwrap();
        assert!(rel(base.trace, p.trace) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn noise_scaling_and_nc_never_worse(seed in 0u64..10_000, r in 1usize..3, d in 1usize..4, c in 0.1f64..10.0) {
            let (st, phi, s0) = random_scenario(seed, r, d, 7, 12, 0.3);
            let rhat = &s0 * s0.transpose() / 12.0;
            let nc1 = det_nc_crb(&st, &phi, &rhat, 1.0, 12).unwrap();
            let nc2 = det_nc_crb(&st, &phi, &rhat, c, 12).unwrap();
            prop_assume!(!nc1.is_singular());
            let m1 = nc1.matrix.unwrap() * c;
            let m2 = nc2.matrix.unwrap();
            prop_assert!((&m1 - &m2).abs().max() <= 1e-12 * m1.abs().max());
            let crb = det_crb(&st, &signal_covariance(&rhat, &phi).unwrap(), 1.0, 12).unwrap();
            if !crb.is_singular() {
                prop_assert!(nc1.trace <= crb.trace * (1.0 + 1e-9));
                let crb2 = det_crb(&st, &signal_covariance(&rhat, &phi).unwrap(), c, 12).unwrap();
                prop_assert!((crb2.trace / crb.trace / c - 1.0).abs() < 1e-12);
            }
        }
    }
}
