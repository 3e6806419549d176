//! Configuring passive reconfigurable surfaces so that a multi-user MIMO
//! channel becomes whatever you want it to be — in particular, orthogonal.
//!
//! A reconfigurable surface (RS) with reflection matrix `Θ` turns the uplink
//! channel of `K` single-antenna users towards an `M`-antenna base station into
//!
//! ```text
//! H = H0 + H1 · Θ · H2
//! ```
//!
//! where `H0` is the direct link, `H2` the users→surface link, and `H1` the
//! surface→station link. Depending on how much structure the hardware imposes
//! on `Θ` (diagonal, symmetric, unconstrained — see [`rs_models::RsKind`]),
//! forcing `H` to equal a chosen target is a structured linear solve. This
//! crate provides:
//!
//! * [`matcore`] — vectorization/Kronecker/commutation/selector plumbing, SVD
//!   pseudoinverse, spectral norm, Stiefel projection;
//! * [`rs_models`] — constraint checks per RS model and the impedance ↔
//!   reflection map;
//! * [`solvers`] — closed-form minimum-norm reflection solvers and the
//!   rank-feasibility oracle;
//! * [`selection`] — choice of an orthogonal target `√β·Ũ` that a *passive*
//!   surface can realize: Frobenius relaxation, geodesic descent on the
//!   Stiefel manifold, and the β fixed-point maximization;
//! * [`estimation`] — pilot-based estimation of the direct channel and of the
//!   effective surface→channel map, without requiring H1/H2 separately;
//! * [`scenarios`] — IID Rayleigh and indoor Rician channel generators plus
//!   MRC/ZF rate formulas and a phase-only baseline;
//! * [`experiments`] — deterministic parallel Monte Carlo sweeps and the CLI
//!   entry point.

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod matcore;
pub mod rs_models;
pub mod scenarios;
pub mod selection;
pub mod solvers;

pub use error::{Error, Result};
pub use matcore::{CMat, CVec};
pub use rs_models::{ConstraintReport, RsKind};
pub use selection::{OrthoTarget, SelectionMode, SelectionOutcome, SelectionStatus};
pub use solvers::{ChannelTriple, EffectiveMap, SolveReport};

#[cfg(test)]
pub(crate) mod testkit {
    //! Shared helpers for unit tests: seeded complex Gaussian matrices.
    use crate::matcore::{CMat, CVec};
    use num_complex::Complex64;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub fn cn01(rng: &mut ChaCha8Rng) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) / std::f64::consts::SQRT_2
    }

    pub fn rand_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| cn01(rng))
    }

    pub fn rand_cvec(rng: &mut ChaCha8Rng, len: usize) -> CVec {
        CVec::from_fn(len, |_, _| cn01(rng))
    }

    /// Random semi-unitary M×K via projection of a Gaussian matrix.
    pub fn rand_semi_unitary(rng: &mut ChaCha8Rng, m: usize, k: usize) -> CMat {
        crate::matcore::stiefel_project(&rand_cmat(rng, m, k)).expect("gaussian is full rank a.s.")
    }
}
