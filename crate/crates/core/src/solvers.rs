//! Closed-form reflection solvers: given the channel triple and a target
//! channel, find the structured `Θ` with `H0 + H1·Θ·H2 = target`.
//!
//! Vectorizing the cascade turns the equation into `𝓗·vec(Θ) = c` with
//! `𝓗 = H2ᵀ ⊗ H1` and `c = vec(target − H0)`. Each hardware kind restricts
//! `vec(Θ)` to the range of a structure *expansion* `S` (identity for FRIS,
//! the diagonal selector for ARIS, the symmetrized upper-triangle map
//! `(K+I)·Z_U` for BDRIS), so the solve is an unstructured least-squares in
//! the coefficient space followed by the expansion:
//!
//! ```text
//! Θ = unvec( S · pinv(𝓗·S) · c )
//! ```
//!
//! `S · pinv(𝓗·S)` is the *lift* stored in [`EffectiveMap`]; the selection
//! module reuses it to score candidate targets without re-solving. A target
//! is reachable exactly when `𝓗·S` has full numeric rank `M·K`, which needs
//! at least [`min_elements`] surface elements.
//!
//! Structure holds by construction: the ARIS lift writes only diagonal
//! entries, the BDRIS lift writes each off-diagonal pair from the same
//! coefficient row (bitwise symmetric). Passivity is *reported*, never
//! enforced — choosing a target the passive set can realize is the selection
//! module's job.

use crate::error::{Error, Result};
use crate::matcore::{
    commutation_matrix, is_finite, kron, numeric_rank, pinv, selector, unvec, vec, CMat,
    SelectorKind,
};
use crate::rs_models::{check, ConstraintReport, RsKind, STRUCTURE_TOL};

/// The three propagation matrices of the uplink: direct `H0` (M×K), surface
/// to base station `H1` (M×N), users to surface `H2` (N×K).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTriple {
    pub h0: CMat,
    pub h1: CMat,
    pub h2: CMat,
}

impl ChannelTriple {
    pub fn new(h0: CMat, h1: CMat, h2: CMat) -> Result<Self> {
        let (m, k) = h0.shape();
        if h1.nrows() != m || h2.ncols() != k || h1.ncols() != h2.nrows() {
            return Err(Error::DimensionMismatch {
                context: "ChannelTriple",
                expected: format!("H1 {m}×N and H2 N×{k} for H0 {m}×{k}"),
                got: format!(
                    "H1 {}×{}, H2 {}×{}",
                    h1.nrows(),
                    h1.ncols(),
                    h2.nrows(),
                    h2.ncols()
                ),
            });
        }
        for (name, m) in [("H0", &h0), ("H1", &h1), ("H2", &h2)] {
            if !is_finite(m) {
                let _ = name;
                return Err(Error::NonFinite { context: "ChannelTriple" });
            }
        }
        Ok(Self { h0, h1, h2 })
    }

    pub fn m(&self) -> usize {
        self.h0.nrows()
    }

    pub fn k(&self) -> usize {
        self.h0.ncols()
    }

    pub fn n(&self) -> usize {
        self.h1.ncols()
    }

    /// The resulting channel for a reflection configuration: `H0 + H1·Θ·H2`.
    pub fn apply(&self, theta: &CMat) -> CMat {
        &self.h0 + &self.h1 * theta * &self.h2
    }
}

/// Fewest surface elements for which a random channel is almost surely able
/// to realize an arbitrary `M×K` target with the given hardware kind.
pub fn min_elements(kind: RsKind, m: usize, k: usize) -> Result<usize> {
    match kind {
        RsKind::Fris => Ok(m.max(k)),
        RsKind::BdRis => Ok(m + k - 1),
        RsKind::Aris => Ok(m * k),
        RsKind::Ris => Err(Error::UnsupportedKind { op: "min_elements", kind: "ris" }),
    }
}

/// The structured linear map from reflection coefficients to the channel
/// perturbation, for one `(kind, H1, H2)` triple.
#[derive(Debug, Clone)]
pub struct EffectiveMap {
    pub kind: RsKind,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `MK×d` forward map in coefficient space; `d` = N² (FRIS),
    /// N(N+1)/2 (BDRIS), N (ARIS).
    pub matrix: CMat,
    /// `d×MK` right pseudoinverse of `matrix`.
    pub pinv_matrix: CMat,
    /// `N²×MK` map from a target perturbation `c` straight to `vec(Θ)`.
    pub lift: CMat,
}

/// Coefficient-to-`vec(Θ)` expansion for each structure; `d_full` columns.
fn expansion(kind: RsKind, n: usize) -> Result<CMat> {
    match kind {
        RsKind::Fris => Ok(CMat::identity(n * n, n * n)),
        RsKind::Aris => Ok(selector(SelectorKind::Diagonal, n)),
        RsKind::BdRis => {
            let zu = selector(SelectorKind::UpperTriangular, n);
            Ok((commutation_matrix(n) + CMat::identity(n * n, n * n)) * zu)
        }
        RsKind::Ris => Err(Error::UnsupportedKind { op: "build_effective_map", kind: "ris" }),
    }
}

/// Coefficient count of the full structure basis.
pub fn coefficient_count(kind: RsKind, n: usize) -> Result<usize> {
    match kind {
        RsKind::Fris => Ok(n * n),
        RsKind::BdRis => Ok(n * (n + 1) / 2),
        RsKind::Aris => Ok(n),
        RsKind::Ris => Err(Error::UnsupportedKind { op: "coefficient_count", kind: "ris" }),
    }
}

impl EffectiveMap {
    /// Build from explicit `H1`, `H2`.
    pub fn build(kind: RsKind, h1: &CMat, h2: &CMat) -> Result<Self> {
        if h1.ncols() != h2.nrows() {
            return Err(Error::DimensionMismatch {
                context: "build_effective_map",
                expected: "H1 cols = H2 rows".to_string(),
                got: format!("{} vs {}", h1.ncols(), h2.nrows()),
            });
        }
        let n = h1.ncols();
        let cascade = kron(&h2.transpose(), h1);
        let s = expansion(kind, n)?;
        Self::from_matrix(kind, cascade * &s, h1.nrows(), h2.ncols(), n)
    }

    /// Build from an (estimated or exact) coefficient-space forward map.
    ///
    /// `matrix` may cover only the first `d ≤ d_full` structure-basis
    /// coefficients (reduced estimation); the lift then uses the matching
    /// leading columns of the expansion.
    pub fn from_matrix(kind: RsKind, matrix: CMat, m: usize, k: usize, n: usize) -> Result<Self> {
        let d_full = coefficient_count(kind, n)?;
        if matrix.nrows() != m * k || matrix.ncols() > d_full {
            return Err(Error::DimensionMismatch {
                context: "EffectiveMap::from_matrix",
                expected: format!("{}×(≤{})", m * k, d_full),
                got: format!("{}×{}", matrix.nrows(), matrix.ncols()),
            });
        }
        let d = matrix.ncols();
        let s = expansion(kind, n)?.columns(0, d).into_owned();
        let pinv_matrix = pinv(&matrix);
        let lift = &s * &pinv_matrix;
        Ok(Self { kind, m, k, n, matrix, pinv_matrix, lift })
    }

    /// Numeric rank of the forward map (cutoff `1e-10·σ_max`).
    pub fn rank(&self) -> usize {
        numeric_rank(&self.matrix)
    }

    /// Whether every `M×K` target perturbation is reachable.
    pub fn rank_feasible(&self) -> bool {
        self.rank() == self.m * self.k
    }

    /// Reflection matrix for a channel perturbation `delta = target − H0`.
    pub fn reflection_for(&self, delta: &CMat) -> Result<CMat> {
        if delta.shape() != (self.m, self.k) {
            return Err(Error::DimensionMismatch {
                context: "reflection_for",
                expected: format!("{}×{}", self.m, self.k),
                got: format!("{}×{}", delta.nrows(), delta.ncols()),
            });
        }
        unvec(&(&self.lift * vec(delta)), self.n, self.n)
    }
}

/// Convenience wrapper over [`EffectiveMap::build`].
pub fn build_effective_map(kind: RsKind, h1: &CMat, h2: &CMat) -> Result<EffectiveMap> {
    EffectiveMap::build(kind, h1, h2)
}

/// True when the structured map reaches the full `M·K`-dimensional space.
pub fn rank_feasible(kind: RsKind, h1: &CMat, h2: &CMat) -> Result<bool> {
    Ok(EffectiveMap::build(kind, h1, h2)?.rank_feasible())
}

/// Outcome of a reflection solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub theta: CMat,
    /// `‖H0 + H1·Θ·H2 − target‖_F`.
    pub residual: f64,
    pub rank_feasible: bool,
    /// Passivity within the structure tolerance (boundary counts feasible).
    pub passive: bool,
    pub constraint: ConstraintReport,
}

/// Solve `H0 + H1·Θ·H2 = target` for the minimum-coefficient-norm structured
/// `Θ`. A rank-infeasible map still yields the least-squares `Θ` with
/// `rank_feasible = false` — the Monte Carlo harness wants residual
/// statistics, not errors.
pub fn solve(kind: RsKind, channels: &ChannelTriple, target: &CMat) -> Result<SolveReport> {
    let map = EffectiveMap::build(kind, &channels.h1, &channels.h2)?;
    solve_with_map(&map, channels, target)
}

/// [`solve`] against a prebuilt (possibly estimated) effective map, with the
/// residual still measured through the physical channel triple.
pub fn solve_with_map(
    map: &EffectiveMap,
    channels: &ChannelTriple,
    target: &CMat,
) -> Result<SolveReport> {
    if target.shape() != channels.h0.shape() {
        return Err(Error::DimensionMismatch {
            context: "solve",
            expected: format!("target {}×{}", channels.m(), channels.k()),
            got: format!("{}×{}", target.nrows(), target.ncols()),
        });
    }
    let theta = map.reflection_for(&(target - &channels.h0))?;
    let residual = (channels.apply(&theta) - target).norm();
    let constraint = check(&theta, map.kind, STRUCTURE_TOL);
    Ok(SolveReport {
        passive: constraint.passive(STRUCTURE_TOL),
        rank_feasible: map.rank_feasible(),
        residual,
        constraint,
        theta,
    })
}

/// Compact FRIS solve `Θ = pinv(H1)·(target − H0)·pinv(H2)`.
///
/// Needs `H1` of full row rank and `H2` of full column rank (so `N ≥ M, K`);
/// reaches the same channel as `solve(FRIS, …)` though generally through a
/// different `Θ` (pseudoinverse freedom).
pub fn solve_fris_compact(channels: &ChannelTriple, target: &CMat) -> Result<CMat> {
    if target.shape() != channels.h0.shape() {
        return Err(Error::DimensionMismatch {
            context: "solve_fris_compact",
            expected: format!("target {}×{}", channels.m(), channels.k()),
            got: format!("{}×{}", target.nrows(), target.ncols()),
        });
    }
    let (m, k) = (channels.m(), channels.k());
    if numeric_rank(&channels.h1) < m {
        return Err(Error::RankInfeasible { rank: numeric_rank(&channels.h1), required: m });
    }
    if numeric_rank(&channels.h2) < k {
        return Err(Error::RankInfeasible { rank: numeric_rank(&channels.h2), required: k });
    }
    Ok(pinv(&channels.h1) * (target - &channels.h0) * pinv(&channels.h2))
}
