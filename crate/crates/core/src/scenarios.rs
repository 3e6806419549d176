//! Channel generators and baseline receivers.
//!
//! Two channel families feed the experiments:
//!
//! * **IID Rayleigh** — every entry circularly-symmetric complex Gaussian,
//!   unit power on the surface links and power `η` on the direct link. The
//!   knob `η` moves the balance between what the surface can shape and what
//!   it has to fight.
//! * **Rician indoor room** — a 30λ×30λ room at 3 GHz with a 2×2 base
//!   station panel (M = 4) on one wall, a 2×6 surface panel (N = 12) on an
//!   adjacent wall, and K = 3 single-antenna users drawn uniformly from a
//!   central area. Line-of-sight entries follow exact element-to-element
//!   distances with free-space `1/d` amplitude and a cosine incidence factor
//!   per panel crossing; a Rician factor of 5 dB mixes in IID scattering.
//!   The direct link can be attenuated (blocked) by a configurable amount.
//!   An empirical calibration scales the channel so the average unblocked
//!   direct-link element power is 1 — the SNR knob downstream is then the
//!   average per-element direct-link SNR.
//!
//! Baselines: per-user rates under maximum-ratio combining and zero forcing,
//! and a phase-only (unit-modulus diagonal) surface tuned by coordinate-free
//! gradient descent on the channel condition number.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matcore::{condition_number, numeric_rank, CMat};
use crate::solvers::ChannelTriple;

/// Speed of light, m/s.
const C0: f64 = 299_792_458.0;

fn cn_sample(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) / std::f64::consts::SQRT_2
}

fn cn_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn_sample(rng))
}

/// IID Rayleigh ensemble: unit-power surface links, direct-link element
/// power `eta`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RayleighConfig {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Direct-channel per-element power, linear scale.
    pub eta: f64,
    /// Base seed; harnesses derive per-trial streams from it.
    pub seed: u64,
}

/// Draw one channel triple from the Rayleigh ensemble.
pub fn gen_rayleigh(cfg: &RayleighConfig, rng: &mut impl Rng) -> ChannelTriple {
    let h0 = cn_matrix(rng, cfg.m, cfg.k) * Complex64::new(cfg.eta.sqrt(), 0.0);
    let h1 = cn_matrix(rng, cfg.m, cfg.n);
    let h2 = cn_matrix(rng, cfg.n, cfg.k);
    ChannelTriple::new(h0, h1, h2).expect("dimensions are consistent by construction")
}

/// Rician room parameters. [`Default`] gives the documented indoor setup.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RicianConfig {
    /// Carrier frequency, Hz.
    pub frequency_hz: f64,
    /// Rician factor, dB.
    pub rician_factor_db: f64,
    /// Square room side, in wavelengths.
    pub room_side_lambda: f64,
    /// Element spacing, in wavelengths.
    pub spacing_lambda: f64,
    /// Base-station panel (rows, cols); M = rows·cols.
    pub bs_panel: (usize, usize),
    /// Surface panel (rows, cols); N = rows·cols.
    pub rs_panel: (usize, usize),
    /// Number of single-antenna users.
    pub k: usize,
    /// Direct-link attenuation, dB; `f64::INFINITY` removes the link.
    pub blockage_db: f64,
    pub seed: u64,
}

impl Default for RicianConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 3.0e9,
            rician_factor_db: 5.0,
            room_side_lambda: 30.0,
            spacing_lambda: 0.5,
            bs_panel: (2, 2),
            rs_panel: (2, 6),
            k: 3,
            blockage_db: 0.0,
            seed: 0,
        }
    }
}

impl RicianConfig {
    pub fn m(&self) -> usize {
        self.bs_panel.0 * self.bs_panel.1
    }

    pub fn n(&self) -> usize {
        self.rs_panel.0 * self.rs_panel.1
    }
}

/// A calibrated room: element positions, panel normals, and the scale
/// factor that pins the average unblocked direct-link element power to 1.
#[derive(Debug, Clone)]
pub struct RicianScenario {
    pub cfg: RicianConfig,
    lambda: f64,
    bs_elements: Vec<[f64; 3]>,
    rs_elements: Vec<[f64; 3]>,
    bs_normal: [f64; 3],
    rs_normal: [f64; 3],
    /// Amplitude scale on the H0 and H1 links from calibration.
    gamma: f64,
    /// Uniform user area `[lo, hi]²` in the x–y plane, meters.
    ue_area: (f64, f64),
    ue_height: f64,
}

const CALIBRATION_DRAWS: usize = 1000;
const CALIBRATION_SALT: u64 = 0x5ca1_ab1e_0ca1_1b0a;

impl RicianScenario {
    /// Build the geometry and run the normalization calibration.
    ///
    /// Layout (all lengths from the configured wavelength): the base-station
    /// panel hangs on the wall `x = 0` facing `+x`; the surface panel on the
    /// adjacent wall `y = 0` facing `+y`; both are centered at half the room
    /// side. Users live on the mid-height plane, uniform over the central
    /// `[⅓, ⅚]`-of-a-side square — comfortably away from both panels.
    pub fn new(cfg: RicianConfig) -> Result<Self> {
        if cfg.k == 0 || cfg.m() == 0 || cfg.n() == 0 {
            return Err(Error::InvalidConfig("rician: empty panel or zero users".into()));
        }
        if !(cfg.frequency_hz > 0.0) || !(cfg.room_side_lambda > 0.0) {
            return Err(Error::InvalidConfig("rician: frequency and room side must be positive".into()));
        }
        let lambda = C0 / cfg.frequency_hz;
        let side = cfg.room_side_lambda * lambda;
        let spacing = cfg.spacing_lambda * lambda;
        let mid = side / 2.0;

        // vertical panel: rows step z, columns step the in-wall axis
        let panel = |rows: usize, cols: usize, along: usize| -> Vec<[f64; 3]> {
            let mut out = Vec::with_capacity(rows * cols);
            for c in 0..cols {
                for r in 0..rows {
                    let u = (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing;
                    let z = mid + (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing;
                    let mut pos = [0.0, 0.0, z];
                    pos[along] = mid + u;
                    out.push(pos);
                }
            }
            out
        };
        let bs_elements = panel(cfg.bs_panel.0, cfg.bs_panel.1, 1); // wall x = 0, spread along y
        let rs_elements = panel(cfg.rs_panel.0, cfg.rs_panel.1, 0); // wall y = 0, spread along x

        let mut scenario = Self {
            lambda,
            bs_elements,
            rs_elements,
            bs_normal: [1.0, 0.0, 0.0],
            rs_normal: [0.0, 1.0, 0.0],
            gamma: 1.0,
            ue_area: (side / 3.0, side * 5.0 / 6.0),
            ue_height: mid,
            cfg,
        };

        // calibration: average unblocked direct-link element power → 1
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.cfg.seed ^ CALIBRATION_SALT);
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..CALIBRATION_DRAWS {
            let positions = scenario.draw_positions(&mut rng);
            let h0 = scenario.link(&scenario.bs_elements, Some(scenario.bs_normal), &positions, None, &mut rng)?;
            acc += h0.norm_squared();
            count += h0.len();
        }
        let mean_power = acc / count as f64;
        if !(mean_power > 0.0) {
            return Err(Error::InvalidConfig("rician: calibration produced zero power".into()));
        }
        scenario.gamma = 1.0 / mean_power.sqrt();
        Ok(scenario)
    }

    pub fn m(&self) -> usize {
        self.cfg.m()
    }

    pub fn n(&self) -> usize {
        self.cfg.n()
    }

    fn draw_positions(&self, rng: &mut impl Rng) -> Vec<[f64; 3]> {
        let (lo, hi) = self.ue_area;
        (0..self.cfg.k)
            .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi), self.ue_height])
            .collect()
    }

    /// Rician link between two element sets. `a_normal`/`b_normal` add the
    /// cosine incidence factor for endpoints that are panels.
    fn link(
        &self,
        a: &[[f64; 3]],
        a_normal: Option<[f64; 3]>,
        b: &[[f64; 3]],
        b_normal: Option<[f64; 3]>,
        rng: &mut impl Rng,
    ) -> Result<CMat> {
        let (w_los, w_nlos) = if self.cfg.rician_factor_db == f64::INFINITY {
            (1.0, 0.0)
        } else {
            let kappa = 10f64.powf(self.cfg.rician_factor_db / 10.0);
            ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
        };
        let mut out = CMat::zeros(a.len(), b.len());
        for (i, pa) in a.iter().enumerate() {
            for (j, pb) in b.iter().enumerate() {
                let (amp, phase) = self.ray(pa, a_normal, pb, b_normal)?;
                let los = Complex64::from_polar(amp, phase);
                out[(i, j)] = los * w_los + cn_sample(rng) * Complex64::new(amp * w_nlos, 0.0);
            }
        }
        Ok(out)
    }

    fn ray(
        &self,
        pa: &[f64; 3],
        a_normal: Option<[f64; 3]>,
        pb: &[f64; 3],
        b_normal: Option<[f64; 3]>,
    ) -> Result<(f64, f64)> {
        let d_vec = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let d = (d_vec[0].powi(2) + d_vec[1].powi(2) + d_vec[2].powi(2)).sqrt();
        if d <= self.lambda / 100.0 {
            return Err(Error::InvalidConfig(
                "rician: a user coincides with a panel element".into(),
            ));
        }
        let mut amp = 1.0 / d;
        if let Some(nrm) = a_normal {
            let cosine = (d_vec[0] * nrm[0] + d_vec[1] * nrm[1] + d_vec[2] * nrm[2]) / d;
            amp *= cosine.max(0.0);
        }
        if let Some(nrm) = b_normal {
            // incidence at b is along −d_vec
            let cosine = -(d_vec[0] * nrm[0] + d_vec[1] * nrm[1] + d_vec[2] * nrm[2]) / d;
            amp *= cosine.max(0.0);
        }
        Ok((amp, -std::f64::consts::TAU * d / self.lambda))
    }

    fn blockage_amplitude(&self) -> f64 {
        if self.cfg.blockage_db.is_infinite() {
            0.0
        } else {
            10f64.powf(-self.cfg.blockage_db / 20.0)
        }
    }

    /// Draw user positions and fading.
    pub fn draw(&self, rng: &mut impl Rng) -> Result<ChannelTriple> {
        let positions = self.draw_positions(rng);
        self.draw_at(&positions, rng)
    }

    /// Draw fading for fixed user positions.
    pub fn draw_at(&self, positions: &[[f64; 3]], rng: &mut impl Rng) -> Result<ChannelTriple> {
        let g = Complex64::new(self.gamma, 0.0);
        let h0 = self.link(&self.bs_elements, Some(self.bs_normal), positions, None, rng)?
            * g
            * Complex64::new(self.blockage_amplitude(), 0.0);
        let h1 =
            self.link(&self.bs_elements, Some(self.bs_normal), &self.rs_elements, Some(self.rs_normal), rng)? * g;
        let h2 = self.link(&self.rs_elements, Some(self.rs_normal), positions, None, rng)?;
        ChannelTriple::new(h0, h1, h2)
    }

    /// Deterministic line-of-sight component for fixed positions — the
    /// `κ → ∞` limit (blockage and calibration applied).
    pub fn los_at(&self, positions: &[[f64; 3]]) -> Result<ChannelTriple> {
        let mut det = self.clone();
        det.cfg.rician_factor_db = f64::INFINITY;
        // NLoS weight is exactly 0; the throwaway stream cannot leak in
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        det.draw_at(positions, &mut rng)
    }

    /// The calibrated per-element amplitude scale (applied to H0 and H1).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// User-area bounds `[lo, hi]²`, meters.
    pub fn ue_area(&self) -> (f64, f64) {
        self.ue_area
    }

    pub fn ue_height(&self) -> f64 {
        self.ue_height
    }
}

/// Calibrate a room and draw one triple.
pub fn gen_rician(cfg: &RicianConfig, rng: &mut impl Rng) -> Result<ChannelTriple> {
    RicianScenario::new(cfg.clone())?.draw(rng)
}

/// Per-user rates of a linear receiver.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateReport {
    pub per_ue: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RateReport {
    pub fn from_per_ue(per_ue: Vec<f64>) -> Self {
        let mean = per_ue.iter().sum::<f64>() / per_ue.len().max(1) as f64;
        let min = per_ue.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_ue.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { per_ue, mean, min, max }
    }
}

/// Maximum-ratio combining: per-user rate `log₂(1 + SINR_k)` with
/// `SINR_k = snr·‖h_k‖⁴ / (snr·Σ_{j≠k}|h_kᴴh_j|² + ‖h_k‖²)`.
pub fn mrc_rates(h: &CMat, snr: f64) -> RateReport {
    let k = h.ncols();
    let rates = (0..k)
        .map(|a| {
            let ha = h.column(a);
            let sig = ha.norm_squared();
            let interference: f64 =
                (0..k).filter(|&b| b != a).map(|b| ha.dotc(&h.column(b)).norm_sqr()).sum();
            let sinr = if sig > 0.0 {
                snr * sig * sig / (snr * interference + sig)
            } else {
                0.0
            };
            (1.0 + sinr).log2()
        })
        .collect();
    RateReport::from_per_ue(rates)
}

/// Zero forcing: per-user rate `log₂(1 + snr / [(HᴴH)⁻¹]_kk)`. A channel
/// without full column rank cannot be inverted — the noise enhancement is
/// unbounded and every rate is reported as 0.
pub fn zf_rates(h: &CMat, snr: f64) -> RateReport {
    let k = h.ncols();
    if numeric_rank(h) < k {
        return RateReport::from_per_ue(vec![0.0; k]);
    }
    let gram = h.adjoint() * h;
    let inv = match gram.try_inverse() {
        Some(inv) => inv,
        None => return RateReport::from_per_ue(vec![0.0; k]),
    };
    let rates = (0..k)
        .map(|a| {
            let enhancement = inv[(a, a)].re.max(f64::MIN_POSITIVE);
            (1.0 + snr / enhancement).log2()
        })
        .collect();
    RateReport::from_per_ue(rates)
}

/// Knobs of the phase-only baseline optimizer.
#[derive(Debug, Clone)]
pub struct RisBaselineOpts {
    pub iterations: usize,
    pub restarts: usize,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for RisBaselineOpts {
    fn default() -> Self {
        Self { iterations: 200, restarts: 5, initial_step: 0.5, seed: 0 }
    }
}

/// Outcome of the phase-only baseline.
#[derive(Debug, Clone)]
pub struct RisBaseline {
    /// N×N diagonal, every entry unit modulus.
    pub theta: CMat,
    /// Condition number of the resulting channel.
    pub cond: f64,
    /// Objective at every accepted step of the winning restart.
    pub trace: Vec<f64>,
}

/// Tune a unit-modulus diagonal surface for minimum channel condition
/// number by finite-difference gradient descent on the phases, with step
/// halving on non-improvement and several random restarts.
pub fn ris_phase_baseline(channels: &ChannelTriple, opts: &RisBaselineOpts) -> RisBaseline {
    let n = channels.n();
    let theta_of = |phases: &[f64]| -> CMat {
        CMat::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, phases[i])
            } else {
                Complex64::ZERO
            }
        })
    };
    let cond_of = |phases: &[f64]| -> f64 { condition_number(&channels.apply(&theta_of(phases))) };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    for _ in 0..opts.restarts.max(1) {
        let mut phases: Vec<f64> =
            (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let mut cur = cond_of(&phases);
        let mut trace = vec![cur];
        let mut step = opts.initial_step;
        let fd = 1e-4;
        for _ in 0..opts.iterations {
            if !cur.is_finite() {
                break;
            }
            let grad: Vec<f64> = (0..n)
                .map(|i| {
                    let mut up = phases.clone();
                    let mut dn = phases.clone();
                    up[i] += fd;
                    dn[i] -= fd;
                    (cond_of(&up) - cond_of(&dn)) / (2.0 * fd)
                })
                .collect();
            let cand: Vec<f64> =
                phases.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let cand_cond = cond_of(&cand);
            if cand_cond < cur {
                phases = cand;
                cur = cand_cond;
                trace.push(cur);
            } else {
                step /= 2.0;
                if step < 1e-6 {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|(_, c, _)| cur < *c) {
            best = Some((phases, cur, trace));
        }
    }
    let (phases, cond, trace) = best.expect("at least one restart runs");
    RisBaseline { theta: theta_of(&phases), cond, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::frobenius_norm;
    use crate::rs_models::{check, RsKind, STRUCTURE_TOL};
    use crate::testkit::rand_semi_unitary;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rayleigh_moments_match_configuration() {
        let cfg = RayleighConfig { m: 8, k: 4, n: 8, eta: 0.5, seed: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p0 = 0.0;
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        let draws = 2000;
        for _ in 0..draws {
            let ch = gen_rayleigh(&cfg, &mut rng);
            p0 += ch.h0.norm_squared() / (ch.h0.len() as f64);
            p1 += ch.h1.norm_squared() / (ch.h1.len() as f64);
            p2 += ch.h2.norm_squared() / (ch.h2.len() as f64);
        }
        assert_relative_eq!(p0 / draws as f64, cfg.eta, max_relative = 0.02);
        assert_relative_eq!(p1 / draws as f64, 1.0, max_relative = 0.02);
        assert_relative_eq!(p2 / draws as f64, 1.0, max_relative = 0.02);
    }

    #[test]
    fn rayleigh_zero_eta_blocks_the_direct_link() {
        let cfg = RayleighConfig { m: 3, k: 2, n: 4, eta: 0.0, seed: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = gen_rayleigh(&cfg, &mut rng);
        assert!(ch.h0.iter().all(|z| *z == Complex64::ZERO));
    }

    #[test]
    fn rayleigh_blind_reflection_power() {
        // with Θ = I the total channel power averages MK(N+η)
        let cfg = RayleighConfig { m: 4, k: 2, n: 6, eta: 2.0, seed: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eye = CMat::identity(cfg.n, cfg.n);
        let draws = 4000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let ch = gen_rayleigh(&cfg, &mut rng);
            acc += frobenius_norm(&ch.apply(&eye)).powi(2);
        }
        let expected = (cfg.m * cfg.k) as f64 * (cfg.n as f64 + cfg.eta);
        assert_relative_eq!(acc / draws as f64, expected, max_relative = 0.05);
    }

    #[test]
    fn rician_dimensions_and_determinism() {
        let cfg = RicianConfig::default();
        let scenario = RicianScenario::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let ch = scenario.draw(&mut rng).unwrap();
        assert_eq!(ch.h0.shape(), (4, 3));
        assert_eq!(ch.h1.shape(), (4, 12));
        assert_eq!(ch.h2.shape(), (12, 3));
        // same config and stream → identical channels
        let scenario2 = RicianScenario::new(cfg).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(40);
        let ch2 = scenario2.draw(&mut rng2).unwrap();
        assert_eq!(ch.h0, ch2.h0);
        assert_eq!(ch.h1, ch2.h1);
        assert_eq!(ch.h2, ch2.h2);
    }

    #[test]
    fn rician_calibration_normalizes_direct_power() {
        let scenario = RicianScenario::new(RicianConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..500 {
            let ch = scenario.draw(&mut rng).unwrap();
            acc += ch.h0.norm_squared();
            count += ch.h0.len();
        }
        assert_relative_eq!(acc / count as f64, 1.0, max_relative = 0.10);
    }

    #[test]
    fn rician_infinite_blockage_removes_the_direct_link() {
        let cfg = RicianConfig { blockage_db: f64::INFINITY, ..RicianConfig::default() };
        let scenario = RicianScenario::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ch = scenario.draw(&mut rng).unwrap();
        assert!(ch.h0.iter().all(|z| *z == Complex64::ZERO));
        assert!(ch.h1.norm() > 0.0);
    }

    #[test]
    fn rician_large_factor_approaches_the_los_component() {
        let cfg = RicianConfig { rician_factor_db: 120.0, ..RicianConfig::default() };
        let scenario = RicianScenario::new(cfg).unwrap();
        let positions = [[1.5, 1.8, 1.5], [2.0, 1.2, 1.5], [1.1, 2.3, 1.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let ch = scenario.draw_at(&positions, &mut rng).unwrap();
        let los = scenario.los_at(&positions).unwrap();
        assert!((&ch.h0 - &los.h0).norm() <= 1e-5 * los.h0.norm());
        assert!((&ch.h2 - &los.h2).norm() <= 1e-5 * los.h2.norm());
    }

    #[test]
    fn rician_mirror_symmetric_users_have_equal_direct_column_norms() {
        let scenario = RicianScenario::new(RicianConfig::default()).unwrap();
        let mid_y = (30.0 * C0 / 3.0e9) / 2.0; // BS panel mirror plane y = 15λ
        let z = scenario.ue_height();
        let dy = 0.7;
        let positions = [[1.6, mid_y - dy, z], [1.6, mid_y + dy, z]];
        let mut det = scenario.clone();
        det.cfg.k = 2;
        let los = det.los_at(&positions).unwrap();
        assert_relative_eq!(
            los.h0.column(0).norm(),
            los.h0.column(1).norm(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn rician_rejects_degenerate_geometry() {
        let cfg = RicianConfig { frequency_hz: 0.0, ..RicianConfig::default() };
        assert!(RicianScenario::new(cfg).is_err());
        let scenario = RicianScenario::new(RicianConfig::default()).unwrap();
        // a user sitting on a panel element is a modeling error
        let on_panel = [scenario.bs_elements[0]];
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        assert!(scenario.draw_at(&on_panel, &mut rng).is_err());
    }

    #[test]
    fn orthogonal_channels_collapse_both_receivers_to_the_same_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let beta: f64 = 0.37;
        let snr = 12.0;
        let u = rand_semi_unitary(&mut rng, 4, 3);
        let h = &u * Complex64::new(beta.sqrt(), 0.0);
        let expected = (1.0 + beta * snr).log2();
        for report in [mrc_rates(&h, snr), zf_rates(&h, snr)] {
            for r in &report.per_ue {
                assert_relative_eq!(*r, expected, epsilon = 1e-9);
            }
            assert_relative_eq!(report.min, report.max, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_user_mrc_equals_zf() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let h = crate::testkit::rand_cmat(&mut rng, 4, 1);
        let snr = 5.0;
        let expected = (1.0 + snr * h.norm_squared()).log2();
        assert_relative_eq!(mrc_rates(&h, snr).per_ue[0], expected, epsilon = 1e-9);
        assert_relative_eq!(zf_rates(&h, snr).per_ue[0], expected, epsilon = 1e-9);
    }

    #[test]
    fn mrc_sinr_matches_explicit_combiner_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let h = crate::testkit::rand_cmat(&mut rng, 4, 2);
        let snr = 3.0;
        let report = mrc_rates(&h, snr);
        for a in 0..2 {
            // combiner w = h_a applied to y = Hx + n with unit-power symbols
            let w = h.column(a);
            let signal = snr * w.dotc(&h.column(a)).norm_sqr();
            let interference: f64 = (0..2)
                .filter(|&b| b != a)
                .map(|b| snr * w.dotc(&h.column(b)).norm_sqr())
                .sum();
            let noise = w.norm_squared();
            let rate = (1.0 + signal / (interference + noise)).log2();
            assert_relative_eq!(report.per_ue[a], rate, epsilon = 1e-9);
        }
    }

    #[test]
    fn rank_deficient_channels_zero_out_zf() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let col = crate::testkit::rand_cmat(&mut rng, 4, 1);
        let mut h = CMat::zeros(4, 2);
        h.set_column(0, &col.column(0));
        h.set_column(1, &(col.column(0) * Complex64::new(2.0, 0.0)));
        let report = zf_rates(&h, 10.0);
        assert!(report.per_ue.iter().all(|r| *r == 0.0));
        // MRC still gets something through
        assert!(mrc_rates(&h, 10.0).mean > 0.0);
    }

    #[test]
    fn rate_report_orders_min_mean_max() {
        let r = RateReport::from_per_ue(vec![1.0, 3.0, 2.0]);
        assert!(r.min <= r.mean && r.mean <= r.max);
        assert_eq!(r.min, 1.0);
        assert_eq!(r.max, 3.0);
    }

    #[test]
    fn phase_baseline_is_unit_modulus_and_improves() {
        let cfg = RayleighConfig { m: 3, k: 2, n: 6, eta: 0.3, seed: 49 };
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let ch = gen_rayleigh(&cfg, &mut rng);
        let opts = RisBaselineOpts { iterations: 60, restarts: 2, ..RisBaselineOpts::default() };
        let out = ris_phase_baseline(&ch, &opts);
        let report = check(&out.theta, RsKind::Ris, STRUCTURE_TOL);
        assert!(report.structure_ok);
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased");
        }
        assert!(out.cond <= out.trace[0]);
        assert_relative_eq!(
            out.cond,
            condition_number(&ch.apply(&out.theta)),
            max_relative = 1e-12
        );
    }

    #[test]
    fn phase_baseline_single_user_is_always_perfectly_conditioned() {
        let cfg = RayleighConfig { m: 3, k: 1, n: 4, eta: 0.5, seed: 50 };
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let ch = gen_rayleigh(&cfg, &mut rng);
        let out = ris_phase_baseline(&ch, &RisBaselineOpts { iterations: 5, restarts: 1, ..Default::default() });
        assert_relative_eq!(out.cond, 1.0, epsilon = 1e-9);
    }
}
