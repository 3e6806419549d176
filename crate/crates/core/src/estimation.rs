//! Pilot-based estimation of the direct channel and of the effective map's
//! columns, with per-kind overhead accounting.
//!
//! Protocol: the K users transmit mutually orthogonal pilot blocks
//! (`P·Pᴴ = E_s·I_K`). With the surface off (`Θ = 0`) the base station
//! receives `Y = H0·P + N` and recovers `Ĥ0 = Y·Pᴴ/E_s`. Then, stepping the
//! surface through a canonical basis of its free reflection entries, each
//! step's de-spread received block minus `Ĥ0` exposes one column of the
//! effective map.
//!
//! The basis per kind (all configurations passive, `‖Θ‖₂ = 1`):
//!
//! * full reflection: `Θ = E_{i,j}` in column-major order — N² steps;
//! * symmetric: `Θ = E_{i,j} + E_{j,i}` for `i < j` and `Θ = E_{i,i}` on the
//!   diagonal — N(N+1)/2 steps. Diagonal-step responses are recorded doubled
//!   so the columns line up with the doubled diagonal columns of the
//!   symmetric effective map; the factor cancels when the map is inverted;
//! * diagonal: `Θ = E_{n,n}` — N steps.
//!
//! Reduced mode stops after the leading `d` basis configurations (free
//! entries beyond them stay 0), which is enough for arbitrary-channel work
//! when `d = MK` and the surface is at its minimum size.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matcore::{selected_positions, vec, CMat, SelectorKind};
use crate::rs_models::RsKind;
use crate::solvers::{ChannelTriple, EffectiveMap};

/// Orthogonal pilot block transmitted by the K users.
#[derive(Debug, Clone)]
pub struct PilotMatrix {
    /// K×K, rows = users, columns = symbol times; `P·Pᴴ = E_s·I`.
    pub p: CMat,
    /// Per-user pilot energy over the block.
    pub es: f64,
}

impl PilotMatrix {
    /// Scaled unitary DFT pilots — exactly orthogonal for every K.
    pub fn dft(k: usize, es: f64) -> Self {
        let scale = (es / k as f64).sqrt();
        let p = CMat::from_fn(k, k, |a, b| {
            let phase = -std::f64::consts::TAU * (a * b) as f64 / k as f64;
            Complex64::from_polar(scale, phase)
        });
        Self { p, es }
    }

    /// `√E_s·I` — users take turns, one symbol each.
    pub fn identity(k: usize, es: f64) -> Self {
        Self { p: CMat::identity(k, k) * Complex64::new(es.sqrt(), 0.0), es }
    }

    pub fn k(&self) -> usize {
        self.p.nrows()
    }

    /// `‖P·Pᴴ − E_s·I‖_F` — zero (to rounding) for a valid pilot block.
    pub fn orthogonality_defect(&self) -> f64 {
        let k = self.k();
        (&self.p * self.p.adjoint() - CMat::identity(k, k) * Complex64::new(self.es, 0.0)).norm()
    }
}

fn noise_block(rng: &mut impl Rng, m: usize, k: usize, n0: f64) -> CMat {
    let s = (n0 / 2.0).sqrt();
    CMat::from_fn(m, k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// De-spread one received block: `Y·Pᴴ/E_s`.
fn despread(y: &CMat, pilot: &PilotMatrix) -> CMat {
    y * pilot.p.adjoint() / Complex64::new(pilot.es, 0.0)
}

/// Estimate the direct channel with the surface configured to `Θ = 0`.
///
/// Returns `Ĥ0 = (H0·P + N)·Pᴴ/E_s`; the estimation error is element-IID
/// complex Gaussian with variance `N0/E_s`.
pub fn estimate_direct(
    channels: &ChannelTriple,
    pilot: &PilotMatrix,
    n0: f64,
    rng: &mut impl Rng,
) -> CMat {
    let y = &channels.h0 * &pilot.p + noise_block(rng, channels.m(), channels.k(), n0);
    despread(&y, pilot)
}

/// How much of the basis sequence to sound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisMode {
    /// Every free reflection entry of the kind.
    Full,
    /// Only the leading `d` configurations; the estimated map has `d`
    /// columns. With `d = MK` at the minimum surface size this keeps the
    /// FRIS system identifiable; for BD-RIS the leading configurations all
    /// live in a principal sub-block too small to carry rank `MK`, so the
    /// `MK`-slot budget is a lower bound there, not an achievability recipe.
    Reduced(usize),
}

/// The reflection configurations sounded one per step, in the column order
/// of the kind's effective map.
pub fn basis_sequence(kind: RsKind, n: usize, mode: BasisMode) -> Result<Vec<CMat>> {
    let positions: Vec<(usize, usize)> = match kind {
        RsKind::Ris => {
            return Err(Error::UnsupportedKind { op: "basis_sequence", kind: "ris" });
        }
        RsKind::Fris => (0..n * n).map(|c| (c % n, c / n)).collect(),
        RsKind::BdRis => selected_positions(SelectorKind::UpperTriangular, n),
        RsKind::Aris => (0..n).map(|i| (i, i)).collect(),
    };
    let take = match mode {
        BasisMode::Full => positions.len(),
        BasisMode::Reduced(d) => d.min(positions.len()),
    };
    Ok(positions[..take]
        .iter()
        .map(|&(i, j)| {
            let mut theta = CMat::zeros(n, n);
            theta[(i, j)] += Complex64::new(1.0, 0.0);
            if kind == RsKind::BdRis && i != j {
                theta[(j, i)] += Complex64::new(1.0, 0.0);
            }
            theta
        })
        .collect())
}

/// Minimum number of K-symbol pilot slots to sound the effective map.
pub fn pilot_budget(kind: RsKind, m: usize, k: usize, n: usize, mode: BasisMode) -> usize {
    match mode {
        BasisMode::Reduced(d) => d,
        BasisMode::Full => match kind {
            RsKind::Fris => n * n,
            RsKind::BdRis => n * (n + 1) / 2,
            RsKind::Aris => n,
            RsKind::Ris => m * k, // not part of the sounding protocol
        },
    }
}

/// Everything one estimation run produces.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub kind: RsKind,
    pub h0_hat: CMat,
    /// MK×d estimated columns of the kind's effective map.
    pub effective_hat: CMat,
    pub steps_used: usize,
    pub noise_power: f64,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl EstimationResult {
    /// The estimated map, ready for solving/selection.
    pub fn effective_map(&self) -> Result<EffectiveMap> {
        EffectiveMap::from_matrix(self.kind, self.effective_hat.clone(), self.m, self.k, self.n)
    }
}

fn check_pilot(pilot: &PilotMatrix, k: usize) -> Result<()> {
    if pilot.k() != k {
        return Err(Error::DimensionMismatch {
            context: "estimate_effective_map",
            expected: format!("{k}×{k} pilot block"),
            got: format!("{}×{}", pilot.p.nrows(), pilot.p.ncols()),
        });
    }
    Ok(())
}

/// Full protocol: direct-channel estimation followed by the basis sweep.
pub fn estimate_effective_map(
    kind: RsKind,
    channels: &ChannelTriple,
    pilot: &PilotMatrix,
    n0: f64,
    mode: BasisMode,
    rng: &mut impl Rng,
) -> Result<EstimationResult> {
    check_pilot(pilot, channels.k())?;
    let h0_hat = estimate_direct(channels, pilot, n0, rng);
    estimate_effective_map_given_h0(kind, channels, pilot, n0, mode, rng, &h0_hat)
}

/// Basis sweep against an already-available direct-channel estimate
/// (lets callers reuse `Ĥ0` across sweeps, or study the per-step noise in
/// isolation by passing the exact `H0`).
pub fn estimate_effective_map_given_h0(
    kind: RsKind,
    channels: &ChannelTriple,
    pilot: &PilotMatrix,
    n0: f64,
    mode: BasisMode,
    rng: &mut impl Rng,
    h0_hat: &CMat,
) -> Result<EstimationResult> {
    let (m, k, n) = (channels.m(), channels.k(), channels.n());
    check_pilot(pilot, k)?;
    let basis = basis_sequence(kind, n, mode)?;
    let mut effective_hat = CMat::zeros(m * k, basis.len());
    for (step, theta) in basis.iter().enumerate() {
        let h = channels.apply(theta);
        let y = &h * &pilot.p + noise_block(rng, m, k, n0);
        let mut response = despread(&y, pilot) - h0_hat;
        if kind == RsKind::BdRis && theta.trace() != Complex64::ZERO {
            // diagonal step: the symmetric map carries this column doubled
            response *= Complex64::new(2.0, 0.0);
        }
        effective_hat.set_column(step, &vec(&response));
    }
    Ok(EstimationResult {
        kind,
        h0_hat: h0_hat.clone(),
        effective_hat,
        steps_used: basis.len(),
        noise_power: n0,
        m,
        k,
        n,
    })
}
