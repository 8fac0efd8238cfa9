//! Dense linear-algebra helpers shared by the bound computations.
//!
//! Everything here works on `nalgebra` dynamic matrices. The structured
//! inverses (`complex_inverse_split`, `block_inverse_3x3`) are written out
//! term by term so they can be checked against plain dense inversion.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};

pub type RMatrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Matrices whose condition number exceeds this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

pub fn kron<T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T>>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
) -> DMatrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// `1_{rows x cols} ⊗ m`, the block-tiled copy used for the R-D covariances.
pub fn tile<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, rows: usize, cols: usize) -> DMatrix<T> {
    let (r, c) = m.shape();
    DMatrix::from_fn(r * rows, c * cols, |i, j| m[(i % r, j % c)])
}

pub fn hadamard(a: &RMatrix, b: &RMatrix) -> Result<RMatrix> {
    if a.shape() != b.shape() {
        return Err(dim_err(
            "hadamard product",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(a.component_mul(b))
}

pub fn re(m: &CMatrix) -> RMatrix {
    m.map(|z| z.re)
}

pub fn im(m: &CMatrix) -> RMatrix {
    m.map(|z| z.im)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn symmetrize(m: &RMatrix) -> RMatrix {
    (m + m.transpose()) * 0.5
}

/// Ratio of extreme singular values; `inf` for an exactly singular matrix.
pub fn condition_number(m: &RMatrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn condition_number_c(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse guarded by the condition-number threshold.
pub fn checked_inverse(m: &RMatrix, what: &'static str) -> Result<RMatrix> {
    if !m.is_square() {
        return Err(dim_err(what, "square matrix", format!("{:?}", m.shape())));
    }
    let condition = condition_number(m);
    if condition > SINGULAR_CONDITION {
        return Err(Error::Singular { what, condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { what, condition })
}

pub fn checked_inverse_c(m: &CMatrix, what: &'static str) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(dim_err(what, "square matrix", format!("{:?}", m.shape())));
    }
    let condition = condition_number_c(m);
    if condition > SINGULAR_CONDITION {
        return Err(Error::Singular { what, condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { what, condition })
}

/// Condition of a symmetric matrix measured against the spectral scale of
/// `reference`, which must dominate it in the PSD order (e.g. the
/// unprojected information matrix). Non-positive eigenvalues give `inf`.
///
/// A plain condition number misses a matrix that has collapsed to rounding
/// noise, such as `Dᴴ Π⊥ D` when `A` is square.
pub fn relative_condition(m: &RMatrix, reference: &RMatrix) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let ref_eig = symmetrize(reference).symmetric_eigenvalues();
    let min = eig.min();
    let scale = eig
        .iter()
        .chain(ref_eig.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(min > 0.0) {
        f64::INFINITY
    } else {
        scale / min
    }
}

/// `I − A (AᴴA)⁻¹ Aᴴ`.
pub fn projector_complement(a: &CMatrix) -> Result<CMatrix> {
    let m = a.nrows();
    if a.ncols() > m {
        return Err(Error::Singular {
            what: "steering matrix (more columns than rows)",
            condition: f64::INFINITY,
        });
    }
    let gram = a.adjoint() * a;
    let gram_inv = checked_inverse_c(&gram, "steering Gram matrix AᴴA")?;
    let proj = a * gram_inv * a.adjoint();
    Ok(CMatrix::identity(m, m) - proj)
}

/// Real and imaginary parts of `(re + j·im)⁻¹`, computed as
/// `(re + im re⁻¹ im)⁻¹ − j re⁻¹ im (re + im re⁻¹ im)⁻¹`.
pub fn complex_inverse_split(re_part: &RMatrix, im_part: &RMatrix) -> Result<(RMatrix, RMatrix)> {
    if re_part.shape() != im_part.shape() || !re_part.is_square() {
        return Err(dim_err(
            "complex_inverse_split",
            format!("{:?} square", re_part.shape()),
            format!("{:?}", im_part.shape()),
        ));
    }
    let re_inv = checked_inverse(re_part, "real part")?;
    let inner = re_part + im_part * &re_inv * im_part;
    let inner_inv = checked_inverse(&inner, "real part + B A⁻¹ B")?;
    let imag = -(&re_inv * im_part * &inner_inv);
    Ok((inner_inv, imag))
}

/// The nine blocks of a 3x3 partitioned matrix
/// `[[a, b, c], [d, e, f], [g, h, j]]`.
#[derive(Debug, Clone)]
pub struct Blocks3x3 {
    pub a: RMatrix,
    pub b: RMatrix,
    pub c: RMatrix,
    pub d: RMatrix,
    pub e: RMatrix,
    pub f: RMatrix,
    pub g: RMatrix,
    pub h: RMatrix,
    pub j: RMatrix,
}

impl Blocks3x3 {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.e.nrows(), self.j.nrows())
    }

    fn validate(&self) -> Result<()> {
        let (p, q, r) = self.sizes();
        let expect = [
            ("a", &self.a, p, p),
            ("b", &self.b, p, q),
            ("c", &self.c, p, r),
            ("d", &self.d, q, p),
            ("e", &self.e, q, q),
            ("f", &self.f, q, r),
            ("g", &self.g, r, p),
            ("h", &self.h, r, q),
            ("j", &self.j, r, r),
        ];
        for (name, m, rows, cols) in expect {
            if m.shape() != (rows, cols) {
                return Err(dim_err(
                    "3x3 block partition",
                    format!("block {name} of shape ({rows}, {cols})"),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn assemble(&self) -> RMatrix {
        let (p, q, r) = self.sizes();
        let n = p + q + r;
        let mut out = RMatrix::zeros(n, n);
        let offs = [0, p, p + q];
        let grid = [
            [&self.a, &self.b, &self.c],
            [&self.d, &self.e, &self.f],
            [&self.g, &self.h, &self.j],
        ];
        for (bi, row) in grid.iter().enumerate() {
            for (bj, blk) in row.iter().enumerate() {
                out.view_mut((offs[bi], offs[bj]), blk.shape()).copy_from(*blk);
            }
        }
        out
    }
}

/// Upper-left `p x p` block of the inverse of a 3x3 partitioned matrix.
///
/// With `S_E = J − H E⁻¹ F` the block equals
/// `(A − B E⁻¹ D − B E⁻¹ F S_E⁻¹ H E⁻¹ D + B E⁻¹ F S_E⁻¹ G + C J⁻¹ H E⁻¹ D
///   + C J⁻¹ H E⁻¹ F S_E⁻¹ H E⁻¹ D − C S_E⁻¹ G)⁻¹`.
pub fn block_inverse_3x3(blocks: &Blocks3x3) -> Result<RMatrix> {
    blocks.validate()?;
    let Blocks3x3 {
        a, b, c, d, e, f, g, h, j,
    } = blocks;
    let e_inv = checked_inverse(e, "block E")?;
    let j_inv = checked_inverse(j, "block J")?;
    let s_e = j - h * &e_inv * f;
    let s_e_inv = checked_inverse(&s_e, "Schur complement S_E")?;

    let b_einv = b * &e_inv;
    let h_einv = h * &e_inv;
    let b_einv_d = &b_einv * d;
    let b_einv_f_sinv = &b_einv * f * &s_e_inv;
    let h_einv_d = &h_einv * d;
    let c_jinv = c * &j_inv;

    let schur = a - &b_einv_d - &b_einv_f_sinv * &h_einv_d + &b_einv_f_sinv * g
        + &c_jinv * &h_einv_d
        + &c_jinv * &h_einv * f * &s_e_inv * &h_einv_d
        - c * &s_e_inv * g;
    checked_inverse(&schur, "upper-left Schur complement")
}
