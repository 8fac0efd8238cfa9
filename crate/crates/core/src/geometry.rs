//! Separable R-D sampling grids and their steering/derivative matrices.
//!
//! Coordinates are in units of half wavelengths. A grid with modes
//! `k^(1), …, k^(R)` has `M = Π M_r` elements; element ordering follows the
//! Kronecker product `a^(1) ⊗ … ⊗ a^(R)`, so mode 1 varies slowest.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{CMatrix, RMatrix};

/// Default absolute tolerance for centro-symmetry checks.
pub const CENTRO_TOL: f64 = 1e-9;

/// Where the phase reference of a uniform grid sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// `k = 0, 1, …, M−1`.
    First,
    /// `k = −(M−1)/2, …, (M−1)/2`.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    modes: Vec<Vec<f64>>,
}

impl SamplingGrid {
    pub fn new(modes: Vec<Vec<f64>>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one mode".into()));
        }
        for (r, mode) in modes.iter().enumerate() {
            if mode.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "mode {r} has {} coordinates, need at least 2",
                    mode.len()
                )));
            }
            if mode.iter().any(|k| !k.is_finite()) {
                return Err(Error::InvalidInput(format!("mode {r} has a non-finite coordinate")));
            }
            for (i, a) in mode.iter().enumerate() {
                if mode[i + 1..].iter().any(|b| b == a) {
                    return Err(Error::InvalidInput(format!(
                        "mode {r} repeats coordinate {a}"
                    )));
                }
            }
        }
        Ok(Self { modes })
    }

    pub fn ula(m: usize, reference: Reference) -> Result<Self> {
        Self::new(vec![ula_coords(m, reference)?])
    }

    /// Uniform grid with one ULA per mode, all sharing the same reference.
    pub fn uniform(sizes: &[usize], reference: Reference) -> Result<Self> {
        let modes = sizes
            .iter()
            .map(|&m| ula_coords(m, reference))
            .collect::<Result<Vec<_>>>()?;
        Self::new(modes)
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn mode(&self, r: usize) -> &[f64] {
        &self.modes[r]
    }

    /// Number of modes `R`.
    pub fn dims(&self) -> usize {
        self.modes.len()
    }

    /// Total number of elements `M`.
    pub fn size(&self) -> usize {
        self.modes.iter().map(Vec::len).product()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.modes.iter().map(Vec::len).collect()
    }
}

pub fn ula_coords(m: usize, reference: Reference) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("ULA needs at least 2 elements, got {m}")));
    }
    let offset = match reference {
        Reference::First => 0.0,
        Reference::Centroid => (m as f64 - 1.0) / 2.0,
    };
    Ok((0..m).map(|i| i as f64 - offset).collect())
}

/// Element `m` is `exp(j k_m mu)`.
pub fn steering_vector_mode(coords: &[f64], mu: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        coords.len(),
        coords.iter().map(|&k| Complex64::from_polar(1.0, k * mu)),
    )
}

fn derivative_vector_mode(coords: &[f64], mu: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .map(|&k| Complex64::new(0.0, k) * Complex64::from_polar(1.0, k * mu)),
    )
}

fn kron_vectors(factors: &[DVector<Complex64>]) -> DVector<Complex64> {
    let mut out = DVector::from_element(1, Complex64::new(1.0, 0.0));
    for f in factors {
        let n = out.len();
        out = DVector::from_fn(n * f.len(), |i, _| out[i / f.len()] * f[i % f.len()]);
    }
    out
}

/// Steering matrix `A` (M x d) and derivative matrix `D = [D^(1) … D^(R)]`
/// (M x Rd, mode-major).
#[derive(Debug, Clone)]
pub struct SteeringSet {
    pub a: CMatrix,
    pub d: CMatrix,
    dims: usize,
}

impl SteeringSet {
    /// Build from raw matrices, e.g. for non-separable arrays.
    pub fn from_matrices(a: CMatrix, d: CMatrix, dims: usize) -> Result<Self> {
        if dims == 0 || d.nrows() != a.nrows() || d.ncols() != dims * a.ncols() {
            return Err(dim_err(
                "steering set",
                format!("D of shape ({}, {})", a.nrows(), dims * a.ncols()),
                format!("{:?}", d.shape()),
            ));
        }
        Ok(Self { a, d, dims })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sources(&self) -> usize {
        self.a.ncols()
    }

    pub fn sensors(&self) -> usize {
        self.a.nrows()
    }

    /// `D^(r)`, the derivatives with respect to the mode-`r` frequencies.
    pub fn derivative_mode(&self, r: usize) -> CMatrix {
        let d = self.sources();
        self.d.columns(r * d, d).into_owned()
    }

    /// Keep only the listed sources (columns of `A` and of every `D^(r)`).
    pub fn select_sources(&self, idx: &[usize]) -> SteeringSet {
        let d = self.sources();
        let a = CMatrix::from_fn(self.sensors(), idx.len(), |i, j| self.a[(i, idx[j])]);
        let dd = CMatrix::from_fn(self.sensors(), self.dims * idx.len(), |i, j| {
            let r = j / idx.len();
            self.d[(i, r * d + idx[j % idx.len()])]
        });
        SteeringSet {
            a,
            d: dd,
            dims: self.dims,
        }
    }
}

/// `mu` holds one column per source and one row per mode.
pub fn build_steering_set(grid: &SamplingGrid, mu: &RMatrix) -> Result<SteeringSet> {
    let r_dims = grid.dims();
    if mu.nrows() != r_dims {
        return Err(dim_err("spatial frequency rows", r_dims, mu.nrows()));
    }
    if mu.ncols() == 0 {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    let m = grid.size();
    let d = mu.ncols();
    let mut a = CMatrix::zeros(m, d);
    let mut dmat = CMatrix::zeros(m, r_dims * d);
    for i in 0..d {
        let vecs: Vec<_> = (0..r_dims)
            .map(|r| steering_vector_mode(grid.mode(r), mu[(r, i)]))
            .collect();
        a.set_column(i, &kron_vectors(&vecs));
        for r in 0..r_dims {
            let mut factors = vecs.clone();
            factors[r] = derivative_vector_mode(grid.mode(r), mu[(r, i)]);
            dmat.set_column(r * d + i, &kron_vectors(&factors));
        }
    }
    Ok(SteeringSet {
        a,
        d: dmat,
        dims: r_dims,
    })
}

/// Mean coordinate of a mode.
pub fn phase_reference(coords: &[f64]) -> f64 {
    coords.iter().sum::<f64>() / coords.len() as f64
}

/// A grid split into its centroid-referenced part and per-mode shifts
/// `δ^(r)`, so that `k = k̄ + δ^(r)` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDecomposition {
    pub centered: SamplingGrid,
    pub deltas: Vec<f64>,
}

impl CenteredDecomposition {
    /// Diagonal of `Δ^(r)`: `exp(j δ^(r) μ_i^(r))` for each source.
    pub fn mode_shift(&self, r: usize, mu: &RMatrix) -> Vec<Complex64> {
        (0..mu.ncols())
            .map(|i| Complex64::from_polar(1.0, self.deltas[r] * mu[(r, i)]))
            .collect()
    }

    /// Diagonal of `Δ = Δ^(1) ⋯ Δ^(R)`.
    pub fn shift(&self, mu: &RMatrix) -> Vec<Complex64> {
        (0..mu.ncols())
            .map(|i| {
                let phase: f64 = (0..self.deltas.len())
                    .map(|r| self.deltas[r] * mu[(r, i)])
                    .sum();
                Complex64::from_polar(1.0, phase)
            })
            .collect()
    }

    /// Diagonal of `Δ_c^(r) = (Δ^(r))* (Δ^(r))*`.
    pub fn centro_phase(&self, r: usize, mu: &RMatrix) -> Vec<Complex64> {
        self.mode_shift(r, mu)
            .into_iter()
            .map(|z| (z * z).conj())
            .collect()
    }
}

pub fn center_grid(grid: &SamplingGrid) -> CenteredDecomposition {
    let deltas: Vec<f64> = grid.modes().iter().map(|m| phase_reference(m)).collect();
    let modes = grid
        .modes()
        .iter()
        .zip(&deltas)
        .map(|(m, &delta)| m.iter().map(|k| k - delta).collect())
        .collect();
    CenteredDecomposition {
        centered: SamplingGrid { modes },
        deltas,
    }
}

pub fn is_centro_symmetric(grid: &SamplingGrid, tol: f64) -> bool {
    grid.modes().iter().all(|mode| {
        let delta = phase_reference(mode);
        let mut c: Vec<f64> = mode.iter().map(|k| k - delta).collect();
        c.sort_by(|a, b| a.total_cmp(b));
        let n = c.len();
        (0..n).all(|i| (c[i] + c[n - 1 - i]).abs() <= tol)
    })
}

/// True if every mode already has its phase reference at the centroid.
pub fn is_centered(grid: &SamplingGrid, tol: f64) -> bool {
    grid.modes().iter().all(|m| phase_reference(m).abs() <= tol)
}

/// Checks `Π_M X* = X` entrywise.
pub fn is_left_pi_real(x: &CMatrix, tol: f64) -> bool {
    let m = x.nrows();
    (0..m).all(|i| (0..x.ncols()).all(|j| (x[(m - 1 - i, j)].conj() - x[(i, j)]).norm() <= tol))
}
