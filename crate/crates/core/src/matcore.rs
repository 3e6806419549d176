//! Structural linear-algebra primitives shared by every solver in the crate.
//!
//! The reflection solvers all reduce to *structured* least squares: stack a
//! channel equation with [`vec`], express the cascade as a Kronecker product
//! with [`kron`], restrict the unknown to a diagonal or triangular pattern
//! with a [`selector`], and solve with the SVD [`pinv`]. The conventions are
//! load-bearing and fixed here once:
//!
//! * `vec` is **column-major** (`vec(A)[i + j·m] = A[i,j]`), which is exactly
//!   the convention that makes `kron(Bᵀ, A) · vec(X) = vec(A·X·B)`.
//! * Selector columns are ordered by the vec position of the entry they
//!   select; the lower-triangular selector mirrors the upper one so that
//!   `Z_L = K·Z_U` holds exactly, with `K` the commutation matrix.
//!
//! Numerical policy, fixed globally:
//!
//! * pseudoinverse singular-value cutoff `1e-12 · σ_max` (double-precision SVD
//!   noise floor),
//! * numeric rank cutoff `1e-10 · σ_max`,
//! * spectral norms by direct SVD up to 64×64, power iteration (tolerance
//!   1e-10, ≤ 1000 iterations) above.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix; the one matrix type used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVec = DVector<Complex64>;

/// Relative singular-value cutoff below which `pinv` treats a direction as null.
pub const PINV_REL_CUTOFF: f64 = 1e-12;
/// Relative singular-value cutoff for numeric rank decisions.
pub const RANK_REL_CUTOFF: f64 = 1e-10;
/// Convergence tolerance of the spectral-norm power iteration.
pub const POWER_ITER_TOL: f64 = 1e-10;
/// Iteration cap of the spectral-norm power iteration.
pub const POWER_ITER_MAX: usize = 1000;
/// Largest dimension for which the spectral norm uses a direct SVD.
const SVD_DIRECT_MAX_DIM: usize = 64;

/// Column-major vectorization: `vec(A)[i + j·m] = A[i,j]`.
pub fn vec(a: &CMat) -> CVec {
    CVec::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshape a length `m·n` vector into an `m×n` matrix.
pub fn unvec(v: &CVec, m: usize, n: usize) -> Result<CMat> {
    if v.len() != m * n {
        return Err(Error::DimensionMismatch {
            context: "unvec",
            expected: format!("length {}", m * n),
            got: format!("length {}", v.len()),
        });
    }
    Ok(CMat::from_column_slice(m, n, v.as_slice()))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Commutation matrix `K` of order `N²`: `K·vec(A) = vec(Aᵀ)` for every N×N `A`.
///
/// `K` is a symmetric permutation matrix, hence involutory (`K·K = I`).
pub fn commutation_matrix(n: usize) -> CMat {
    let mut k = CMat::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            k[(j + i * n, i + j * n)] = Complex64::new(1.0, 0.0);
        }
    }
    k
}

/// Entry pattern a [`selector`] matrix embeds into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Diagonal,
    UpperTriangular,
    LowerTriangular,
}

/// The (row, col) positions a selector of the given kind addresses, in column
/// order of the selector matrix.
///
/// Diagonal and upper-triangular positions follow vec (column-major) order;
/// the lower-triangular list is the transpose of the upper one, column for
/// column, so that `Z_L = K·Z_U`.
pub fn selected_positions(kind: SelectorKind, n: usize) -> Vec<(usize, usize)> {
    match kind {
        SelectorKind::Diagonal => (0..n).map(|i| (i, i)).collect(),
        SelectorKind::UpperTriangular => {
            let mut ps = Vec::with_capacity(n * (n + 1) / 2);
            for j in 0..n {
                for i in 0..=j {
                    ps.push((i, j));
                }
            }
            ps
        }
        SelectorKind::LowerTriangular => selected_positions(SelectorKind::UpperTriangular, n)
            .into_iter()
            .map(|(i, j)| (j, i))
            .collect(),
    }
}

/// 0/1 matrix of shape `N²×d` that pads a coefficient vector with zeros:
/// `unvec(Z·x)` places the entries of `x` on the selected pattern.
///
/// `d = N` for the diagonal kind, `N(N+1)/2` for the triangular kinds.
pub fn selector(kind: SelectorKind, n: usize) -> CMat {
    let positions = selected_positions(kind, n);
    let mut z = CMat::zeros(n * n, positions.len());
    for (c, (i, j)) in positions.into_iter().enumerate() {
        z[(i + j * n, c)] = Complex64::new(1.0, 0.0);
    }
    z
}

fn svd_of(a: &CMat) -> nalgebra::SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn> {
    a.clone().svd(true, true)
}

/// Singular values of `A`, sorted in decreasing order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Moore–Penrose pseudoinverse via SVD, singular values below
/// `1e-12 · σ_max` treated as zero. For full-row-rank `A`, `A·pinv(A) = I`.
pub fn pinv(a: &CMat) -> CMat {
    let svd = svd_of(a);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = PINV_REL_CUTOFF * sigma_max;
    let inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .map(|&s| if s > cutoff { Complex64::new(1.0 / s, 0.0) } else { Complex64::ZERO }),
    );
    v_t.adjoint() * CMat::from_diagonal(&inv) * u.adjoint()
}

/// Number of singular values above `1e-10 · σ_max`.
pub fn numeric_rank(a: &CMat) -> usize {
    let sv = singular_values(a);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_CUTOFF * sigma_max).count()
}

/// Largest singular value of `A`.
///
/// Direct SVD for matrices up to 64×64; power iteration on `AᴴA` above that
/// (tolerance 1e-10 on the squared norm, at most 1000 iterations).
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.nrows().max(a.ncols()) <= SVD_DIRECT_MAX_DIM {
        return singular_values(a).first().copied().unwrap_or(0.0);
    }
    power_iteration_norm(a)
}

fn power_iteration_norm(a: &CMat) -> f64 {
    let n = a.ncols();
    // Deterministic pseudo-random start vector: a fixed full-support direction
    // would risk being orthogonal to the top singular subspace of structured
    // inputs; a hashed fill makes that a measure-zero accident.
    let mut state = 0x9e37_79b9_7f4a_7c15_u64 ^ (a.nrows() as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut v = CVec::from_fn(n, |_, _| Complex64::new(next(), next()));
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v /= Complex64::new(nv, 0.0);
    let mut sigma_sq_prev = 0.0_f64;
    for _ in 0..POWER_ITER_MAX {
        let w = a * &v;
        let sigma_sq = w.norm_squared();
        if sigma_sq == 0.0 {
            return 0.0;
        }
        let z = a.adjoint() * w;
        let nz = z.norm();
        if nz == 0.0 {
            return sigma_sq.sqrt();
        }
        v = z / Complex64::new(nz, 0.0);
        if (sigma_sq - sigma_sq_prev).abs() <= POWER_ITER_TOL * sigma_sq.max(1.0) {
            return sigma_sq.sqrt();
        }
        sigma_sq_prev = sigma_sq;
    }
    sigma_sq_prev.sqrt()
}

/// Frobenius norm.
pub fn frobenius_norm(a: &CMat) -> f64 {
    a.norm()
}

/// `σ_max / σ_min`; `f64::INFINITY` when numerically rank deficient.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if min > 0.0 && max > 0.0 => max / min,
        _ => f64::INFINITY,
    }
}

/// Projection of a full-rank `M×K` matrix (`M ≥ K`) onto the Stiefel manifold
/// of semi-unitary matrices: the polar rotation factor `U_A·[I_K;0]·V_Aᴴ`
/// from the SVD of `A`, the closest semi-unitary matrix in Frobenius norm.
pub fn stiefel_project(a: &CMat) -> Result<CMat> {
    let (m, k) = a.shape();
    if m < k {
        return Err(Error::DimensionMismatch {
            context: "stiefel_project",
            expected: "rows ≥ cols".to_string(),
            got: format!("{m}×{k}"),
        });
    }
    let svd = svd_of(a);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if sigma_max == 0.0 || sigma_min <= RANK_REL_CUTOFF * sigma_max {
        return Err(Error::DegenerateProjection);
    }
    Ok(svd.u.as_ref().expect("svd with u") * svd.v_t.as_ref().expect("svd with v_t"))
}

/// Right singular vector for the smallest singular value of `A`.
pub fn min_right_singular_vector(a: &CMat) -> CVec {
    let svd = svd_of(a);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    v_t.row(idx).adjoint()
}

/// Right singular vector for the largest singular value of `A`.
pub fn max_right_singular_vector(a: &CMat) -> CVec {
    let svd = svd_of(a);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    v_t.row(idx).adjoint()
}

/// True iff every entry is finite.
pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
