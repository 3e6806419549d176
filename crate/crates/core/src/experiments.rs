//! Deterministic Monte Carlo harness and the command-line front end.
//!
//! Three sweep families:
//!
//! * **gain** — IID Rayleigh channels, sweep the direct-link power `η` (dB):
//!   mean achieved gain `β` and the failure rate `P_fail` (fraction of
//!   realizations where no passive configuration orthogonalizes) per kind;
//! * **csi** — blocked direct link, sweep the estimation SNR: sound the
//!   effective map with pilots, select a channel from the *estimates*, and
//!   score the condition number of the *true* resulting channel;
//! * **rician** — the indoor room, sweep the receive SNR: per-user spectral
//!   efficiency of each surface kind next to no-surface MRC/ZF baselines.
//!
//! Determinism is structural: every trial owns a counter-based RNG stream
//! derived from (seed, sweep family, kind, trial), so results are identical
//! for any worker count and any scheduling order. Trials are partitioned
//! over a local thread pool sized by the `ORTHORIS_THREADS` environment
//! variable (default: all cores); reduction happens in trial order.
//!
//! The gain and csi sweeps reuse one channel (and one underlying noise
//! stream) per trial across all sweep points — common random numbers — so
//! per-point differences reflect the swept variable, not resampling noise.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{estimate_effective_map, BasisMode, PilotMatrix};
use crate::matcore::{condition_number, spectral_norm, CMat};
use crate::rs_models::{check, RsKind, STRUCTURE_TOL};
use crate::scenarios::{
    gen_rayleigh, mrc_rates, ris_phase_baseline, zf_rates, RateReport, RayleighConfig,
    RicianConfig, RicianScenario, RisBaselineOpts,
};
use crate::selection::{
    maximize_beta_fixed_u, select_channel_with_map, SelectionMode, SelectionOpts, SelectionStatus,
};
use crate::solvers::{min_elements, solve, ChannelTriple, EffectiveMap};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ORTHORIS_THREADS";

/// Worker count: `ORTHORIS_THREADS` if set to a positive integer, else all
/// available cores.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// splitmix64-style finalizer: one well-mixed stream seed per
/// (seed, domain, index) triple.
fn stream_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut x = seed
        ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

fn kind_tag(kind: RsKind) -> u64 {
    match kind {
        RsKind::Ris => 1,
        RsKind::Aris => 2,
        RsKind::BdRis => 3,
        RsKind::Fris => 4,
    }
}

const DOMAIN_GAIN: u64 = 0x11;
const DOMAIN_CSI: u64 = 0x22;
const DOMAIN_RICIAN: u64 = 0x33;
const DOMAIN_RANDOM_TARGET: u64 = 0x44;
const DOMAIN_RIS_BASELINE: u64 = 0x55;

/// Which sweep family a spec drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Gain,
    Csi,
    Rician,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gain" => Ok(Self::Gain),
            "csi" => Ok(Self::Csi),
            "rician" => Ok(Self::Rician),
            other => Err(Error::InvalidConfig(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Inclusive dB range `start:step:stop`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRange {
    pub start_db: f64,
    pub step_db: f64,
    pub stop_db: f64,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.stop_db < self.start_db || !(self.step_db > 0.0) {
            return Vec::new();
        }
        let count = ((self.stop_db - self.start_db) / self.step_db + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start_db + i as f64 * self.step_db).collect()
    }
}

impl FromStr for SweepRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number in range '{s}'"))
        };
        match parts.as_slice() {
            [single] => {
                let v = parse(single)?;
                Ok(Self { start_db: v, step_db: 1.0, stop_db: v })
            }
            [start, step, stop] => Ok(Self {
                start_db: parse(start)?,
                step_db: parse(step)?,
                stop_db: parse(stop)?,
            }),
            _ => Err(format!("range '{s}' must be 'value' or 'start:step:stop'")),
        }
    }
}

/// Everything one sweep run needs; serializable as the config-file schema.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub experiment: ExperimentKind,
    pub m: usize,
    pub k: usize,
    pub kinds: Vec<RsKind>,
    /// Surface sizes aligned with `kinds`; empty → each kind's minimum,
    /// a single value broadcasts. Ignored by the rician sweep (panel-sized).
    pub ns: Vec<usize>,
    pub sweep: SweepRange,
    pub trials: usize,
    pub seed: u64,
    pub mode: SelectionMode,
    /// Rician only: direct-link attenuation in dB (`inf` = blocked).
    pub blockage_db: f64,
    /// Rician only: add a phase-only surface baseline row (slower).
    pub with_ris_baseline: bool,
    /// Pilot energy for the csi sweep; the estimation SNR is E_s/N0.
    pub pilot_energy: f64,
    /// Collect per-trial log lines.
    pub verbose: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Gain,
            m: 4,
            k: 2,
            kinds: vec![RsKind::Aris, RsKind::BdRis, RsKind::Fris],
            ns: Vec::new(),
            sweep: SweepRange { start_db: -20.0, step_db: 5.0, stop_db: 10.0 },
            trials: 200,
            seed: 0,
            mode: SelectionMode::Algorithm1,
            blockage_db: 0.0,
            with_ris_baseline: false,
            pilot_energy: 1.0,
            verbose: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be ≥ 1".into()));
        }
        if self.sweep.values().is_empty() {
            return Err(Error::InvalidConfig(
                "sweep range is empty (need stop ≥ start and step > 0)".into(),
            ));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig("at least one surface kind".into()));
        }
        if self.kinds.contains(&RsKind::Ris) {
            return Err(Error::InvalidConfig(
                "kind 'ris' has no arbitrary-channel solver; use aris|bdris|fris".into(),
            ));
        }
        if self.m == 0 || self.k == 0 || self.k > self.m {
            return Err(Error::InvalidConfig("need 1 ≤ K ≤ M".into()));
        }
        if !(self.ns.is_empty() || self.ns.len() == 1 || self.ns.len() == self.kinds.len()) {
            return Err(Error::InvalidConfig(format!(
                "ns has {} entries for {} kinds (want 0, 1, or {})",
                self.ns.len(),
                self.kinds.len(),
                self.kinds.len()
            )));
        }
        Ok(())
    }

    /// Surface size per kind after defaulting/broadcasting.
    pub fn resolved_ns(&self) -> Result<Vec<usize>> {
        self.kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| match self.ns.as_slice() {
                [] => min_elements(kind, self.m, self.k),
                [single] => Ok(*single),
                many => Ok(many[i]),
            })
            .collect()
    }
}

/// One aggregated CSV row.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub sweep_db: f64,
    /// Surface kind label, or a baseline label (`mrc`, `zf`, `ris`).
    pub kind: String,
    pub n: usize,
    pub mean_beta: f64,
    pub p_fail: f64,
    /// Mean condition number over successful trials, dB; 0 when none.
    pub mean_cond_db: f64,
    pub rate_mean: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub trials: usize,
    pub seed: u64,
}

pub const CSV_HEADER: &str =
    "sweep_db,kind,n,mean_beta,p_fail,mean_cond_db,rate_mean,rate_min,rate_max,trials,seed";

/// 9 significant digits — enough to make reruns byte-comparable without
/// printing noise beyond double precision.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

impl ExperimentRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_float(self.sweep_db),
            self.kind,
            self.n,
            fmt_float(self.mean_beta),
            fmt_float(self.p_fail),
            fmt_float(self.mean_cond_db),
            fmt_float(self.rate_mean),
            fmt_float(self.rate_min),
            fmt_float(self.rate_max),
            self.trials,
            self.seed
        )
    }
}

/// Rows plus the ordered per-trial log (populated when `verbose`).
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ExperimentRow>,
    pub trial_log: Vec<String>,
}

pub fn write_csv(rows: &[ExperimentRow], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

fn local_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn cond_db(h: &CMat) -> f64 {
    20.0 * condition_number(h).log10()
}

/// Per-trial record shared by the sweep reducers.
#[derive(Debug, Clone)]
struct Trial {
    beta: f64,
    failed: bool,
    cond_db: Option<f64>,
    rates: Option<RateReport>,
}

fn reduce(
    spec: &SweepSpec,
    sweep_db: f64,
    kind_label: &str,
    n: usize,
    trials: &[Trial],
) -> ExperimentRow {
    let count = trials.len().max(1) as f64;
    let mean_beta = trials.iter().map(|t| t.beta).sum::<f64>() / count;
    let failures = trials.iter().filter(|t| t.failed).count();
    let conds: Vec<f64> = trials.iter().filter_map(|t| t.cond_db).collect();
    let mean_cond_db =
        if conds.is_empty() { 0.0 } else { conds.iter().sum::<f64>() / conds.len() as f64 };
    let mut rate_mean = 0.0;
    let mut rate_min = 0.0;
    let mut rate_max = 0.0;
    if trials.iter().any(|t| t.rates.is_some()) {
        let mut m = 0.0;
        let mut lo = 0.0;
        let mut hi = 0.0;
        for t in trials {
            if let Some(r) = &t.rates {
                m += r.mean;
                lo += r.min;
                hi += r.max;
            }
        }
        rate_mean = m / count;
        rate_min = lo / count;
        rate_max = hi / count;
    }
    ExperimentRow {
        sweep_db,
        kind: kind_label.to_string(),
        n,
        mean_beta,
        p_fail: failures as f64 / count,
        mean_cond_db,
        rate_mean,
        rate_min,
        rate_max,
        trials: trials.len(),
        seed: spec.seed,
    }
}

fn log_trials(
    spec: &SweepSpec,
    log: &mut Vec<String>,
    family: &str,
    sweep_db: f64,
    kind_label: &str,
    trials: &[Trial],
) {
    if !spec.verbose {
        return;
    }
    for (t, trial) in trials.iter().enumerate() {
        let mut line = String::new();
        let _ = write!(
            line,
            "trial experiment={family} point_db={} kind={kind_label} trial={t} beta={} failed={}",
            fmt_float(sweep_db),
            fmt_float(trial.beta),
            u8::from(trial.failed),
        );
        if let Some(c) = trial.cond_db {
            let _ = write!(line, " cond_db={}", fmt_float(c));
        }
        if let Some(r) = &trial.rates {
            let _ = write!(line, " rate_mean={}", fmt_float(r.mean));
        }
        log.push(line);
    }
}

fn selection_opts(spec: &SweepSpec, kind: RsKind, trial: u64) -> SelectionOpts {
    let mut opts = SelectionOpts::with_mode(spec.mode);
    opts.random_seed = stream_seed(spec.seed, DOMAIN_RANDOM_TARGET ^ kind_tag(kind), trial);
    opts
}

/// Rayleigh gain/failure sweep over the direct-link power η.
pub fn run_gain_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let ns = spec.resolved_ns()?;
    let points = spec.sweep.values();
    let pool = local_pool()?;
    let mut rows = Vec::new();
    let mut trial_log = Vec::new();

    for &eta_db in &points {
        let eta = 10f64.powf(eta_db / 10.0);
        for (ki, &kind) in spec.kinds.iter().enumerate() {
            let n = ns[ki];
            let trials: Result<Vec<Trial>> = pool.install(|| {
                (0..spec.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        // the stream ignores η: one channel per trial shared
                        // across the sweep (common random numbers)
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                            spec.seed,
                            DOMAIN_GAIN ^ kind_tag(kind),
                            t,
                        ));
                        let base = gen_rayleigh(
                            &RayleighConfig { m: spec.m, k: spec.k, n, eta: 1.0, seed: 0 },
                            &mut rng,
                        );
                        let ch = ChannelTriple::new(
                            &base.h0 * Complex64::new(eta.sqrt(), 0.0),
                            base.h1.clone(),
                            base.h2.clone(),
                        )?;
                        let map = EffectiveMap::build(kind, &ch.h1, &ch.h2)?;
                        let out =
                            select_channel_with_map(&map, &ch.h0, &selection_opts(spec, kind, t))?;
                        Ok(match out.status {
                            SelectionStatus::Orthogonalized => Trial {
                                beta: out.target.beta,
                                failed: false,
                                cond_db: Some(cond_db(&ch.apply(&out.theta))),
                                rates: None,
                            },
                            SelectionStatus::InfeasibleNeedsAmplification => Trial {
                                beta: 0.0,
                                failed: true,
                                cond_db: None,
                                rates: None,
                            },
                        })
                    })
                    .collect()
            });
            let trials = trials?;
            log_trials(spec, &mut trial_log, "gain", eta_db, kind.label(), &trials);
            rows.push(reduce(spec, eta_db, kind.label(), n, &trials));
        }
    }
    Ok(SweepOutput { rows, trial_log })
}

/// Imperfect-CSI sweep: selection runs on pilot estimates, the condition
/// number is scored on the true channel. Direct link blocked.
pub fn run_csi_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let ns = spec.resolved_ns()?;
    let points = spec.sweep.values();
    let pool = local_pool()?;
    let mut rows = Vec::new();
    let mut trial_log = Vec::new();

    for &snr_db in &points {
        let n0 = spec.pilot_energy * 10f64.powf(-snr_db / 10.0);
        for (ki, &kind) in spec.kinds.iter().enumerate() {
            let n = ns[ki];
            let trials: Result<Vec<Trial>> = pool.install(|| {
                (0..spec.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        // channel and pilot-noise normals shared across the
                        // sweep; only the noise scale √N0 changes per point
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                            spec.seed,
                            DOMAIN_CSI ^ kind_tag(kind),
                            t,
                        ));
                        // eta = 0 → H0 exactly zero (the link is blocked)
                        let ch = gen_rayleigh(
                            &RayleighConfig { m: spec.m, k: spec.k, n, eta: 0.0, seed: 0 },
                            &mut rng,
                        );
                        let pilot = PilotMatrix::dft(spec.k, spec.pilot_energy);
                        let est = estimate_effective_map(
                            kind,
                            &ch,
                            &pilot,
                            n0,
                            BasisMode::Full,
                            &mut rng,
                        )?;
                        let map = est.effective_map()?;
                        let out = select_channel_with_map(
                            &map,
                            &est.h0_hat,
                            &selection_opts(spec, kind, t),
                        )?;
                        Ok(match out.status {
                            SelectionStatus::Orthogonalized => Trial {
                                beta: out.target.beta,
                                failed: false,
                                cond_db: Some(cond_db(&ch.apply(&out.theta))),
                                rates: None,
                            },
                            SelectionStatus::InfeasibleNeedsAmplification => Trial {
                                beta: 0.0,
                                failed: true,
                                cond_db: None,
                                rates: None,
                            },
                        })
                    })
                    .collect()
            });
            let trials = trials?;
            log_trials(spec, &mut trial_log, "csi", snr_db, kind.label(), &trials);
            rows.push(reduce(spec, snr_db, kind.label(), n, &trials));
        }
    }
    Ok(SweepOutput { rows, trial_log })
}

/// Per-trial cache of the rician sweep: selection and baselines are SNR-free
/// and computed once; each SNR point only re-evaluates rates.
struct RicianTrial {
    h0: CMat,
    per_kind: Vec<KindOutcome>,
    ris_channel: Option<CMat>,
}

struct KindOutcome {
    beta: f64,
    failed: bool,
    cond_db: Option<f64>,
}

/// Indoor-room spectral-efficiency sweep over receive SNR.
pub fn run_rician_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let scenario = RicianScenario::new(RicianConfig {
        blockage_db: spec.blockage_db,
        seed: spec.seed,
        ..RicianConfig::default()
    })?;
    let k_users = scenario.cfg.k;
    let n = scenario.n();
    let pool = local_pool()?;

    let cached: Result<Vec<RicianTrial>> = pool.install(|| {
        (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                    spec.seed,
                    DOMAIN_RICIAN,
                    t,
                ));
                let ch = scenario.draw(&mut rng)?;
                let mut per_kind = Vec::with_capacity(spec.kinds.len());
                for &kind in &spec.kinds {
                    let map = EffectiveMap::build(kind, &ch.h1, &ch.h2)?;
                    if !map.rank_feasible() {
                        per_kind.push(KindOutcome { beta: 0.0, failed: true, cond_db: None });
                        continue;
                    }
                    let out =
                        select_channel_with_map(&map, &ch.h0, &selection_opts(spec, kind, t))?;
                    per_kind.push(match out.status {
                        SelectionStatus::Orthogonalized => KindOutcome {
                            beta: out.target.beta,
                            failed: false,
                            cond_db: Some(cond_db(&ch.apply(&out.theta))),
                        },
                        SelectionStatus::InfeasibleNeedsAmplification => {
                            KindOutcome { beta: 0.0, failed: true, cond_db: None }
                        }
                    });
                }
                let ris_channel = if spec.with_ris_baseline {
                    let opts = RisBaselineOpts {
                        iterations: 60,
                        restarts: 2,
                        seed: stream_seed(spec.seed, DOMAIN_RIS_BASELINE, t),
                        ..RisBaselineOpts::default()
                    };
                    let base = ris_phase_baseline(&ch, &opts);
                    Some(ch.apply(&base.theta))
                } else {
                    None
                };
                Ok(RicianTrial { h0: ch.h0.clone(), per_kind, ris_channel })
            })
            .collect()
    });
    let cached = cached?;

    let mut rows = Vec::new();
    let mut trial_log = Vec::new();
    for &snr_db in &spec.sweep.values() {
        let snr = 10f64.powf(snr_db / 10.0);
        for (ki, &kind) in spec.kinds.iter().enumerate() {
            let trials: Vec<Trial> = cached
                .iter()
                .map(|c| {
                    let o = &c.per_kind[ki];
                    let rate = if o.failed { 0.0 } else { (1.0 + o.beta * snr).log2() };
                    Trial {
                        beta: o.beta,
                        failed: o.failed,
                        cond_db: o.cond_db,
                        rates: Some(RateReport::from_per_ue(vec![rate; k_users])),
                    }
                })
                .collect();
            log_trials(spec, &mut trial_log, "rician", snr_db, kind.label(), &trials);
            rows.push(reduce(spec, snr_db, kind.label(), n, &trials));
        }
        for (label, use_zf) in [("mrc", false), ("zf", true)] {
            let trials: Vec<Trial> = cached
                .iter()
                .map(|c| {
                    let rates =
                        if use_zf { zf_rates(&c.h0, snr) } else { mrc_rates(&c.h0, snr) };
                    Trial { beta: 0.0, failed: false, cond_db: None, rates: Some(rates) }
                })
                .collect();
            log_trials(spec, &mut trial_log, "rician", snr_db, label, &trials);
            rows.push(reduce(spec, snr_db, label, 0, &trials));
        }
        if spec.with_ris_baseline {
            let trials: Vec<Trial> = cached
                .iter()
                .map(|c| {
                    let h = c.ris_channel.as_ref().expect("populated when enabled");
                    Trial {
                        beta: 0.0,
                        failed: false,
                        cond_db: Some(cond_db(h)),
                        rates: Some(mrc_rates(h, snr)),
                    }
                })
                .collect();
            log_trials(spec, &mut trial_log, "rician", snr_db, "ris", &trials);
            rows.push(reduce(spec, snr_db, "ris", n, &trials));
        }
    }
    Ok(SweepOutput { rows, trial_log })
}

/// Dispatch a [`SweepSpec`] to its experiment family.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    match spec.experiment {
        ExperimentKind::Gain => run_gain_sweep(spec),
        ExperimentKind::Csi => run_csi_sweep(spec),
        ExperimentKind::Rician => run_rician_sweep(spec),
    }
}

/// Fast end-to-end invariant checks; prints one line per check.
pub fn selftest(out: &mut dyn Write) -> Result<bool> {
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool| -> io::Result<()> {
        all_ok &= ok;
        writeln!(out, "{} {name}", if ok { "ok  " } else { "FAIL" })
    };
    let io_err = |e: io::Error| Error::InvalidConfig(format!("selftest output: {e}"));

    // exact solves at each kind's minimum size
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_7e57);
    for kind in [RsKind::Aris, RsKind::BdRis, RsKind::Fris] {
        let n = min_elements(kind, 4, 2)?;
        for _ in 0..30 {
            let cfg = RayleighConfig { m: 4, k: 2, n, eta: 1.0, seed: 0 };
            let ch = gen_rayleigh(&cfg, &mut rng);
            let target = &ch.h0 * Complex64::new(-0.5, 0.25);
            let rep = solve(kind, &ch, &target)?;
            ok &= rep.rank_feasible && rep.residual <= 1e-8 * target.norm().max(1.0);
            ok &= check(&rep.theta, kind, STRUCTURE_TOL).structure_ok;
        }
    }
    report("solver reaches arbitrary targets at minimum size", ok).map_err(io_err)?;

    // one element short → never rank feasible
    let mut ok = true;
    for (kind, n) in [(RsKind::Aris, 7), (RsKind::BdRis, 4), (RsKind::Fris, 3)] {
        for _ in 0..30 {
            let cfg = RayleighConfig { m: 4, k: 2, n, eta: 0.0, seed: 0 };
            let ch = gen_rayleigh(&cfg, &mut rng);
            let map = EffectiveMap::build(kind, &ch.h1, &ch.h2)?;
            ok &= !map.rank_feasible();
        }
    }
    report("element-count bounds are sharp", ok).map_err(io_err)?;

    // blocked direct link is always orthogonalizable
    let mut ok = true;
    for kind in [RsKind::Aris, RsKind::BdRis, RsKind::Fris] {
        let n = min_elements(kind, 4, 2)?;
        for _ in 0..10 {
            let cfg = RayleighConfig { m: 4, k: 2, n, eta: 0.0, seed: 0 };
            let ch = gen_rayleigh(&cfg, &mut rng);
            let map = EffectiveMap::build(kind, &ch.h1, &ch.h2)?;
            let sel = select_channel_with_map(&map, &ch.h0, &SelectionOpts::default())?;
            let norm_sq = spectral_norm(&sel.theta).powi(2);
            ok &= sel.status == SelectionStatus::Orthogonalized
                && sel.target.beta > 0.0
                && norm_sq <= 1.0
                && norm_sq >= 1.0 - 1e-6
                && condition_number(&ch.apply(&sel.theta)) <= 1.0 + 1e-6;
        }
    }
    report("blocked channels orthogonalize to the passivity boundary", ok).map_err(io_err)?;

    // β fixed point lands on the boundary with a monotone trace
    let mut ok = true;
    for _ in 0..20 {
        let cfg = RayleighConfig { m: 4, k: 2, n: 4, eta: 0.05, seed: 0 };
        let ch = gen_rayleigh(&cfg, &mut rng);
        let map = EffectiveMap::build(RsKind::Fris, &ch.h1, &ch.h2)?;
        let sel = select_channel_with_map(&map, &ch.h0, &SelectionOpts::default())?;
        if sel.status != SelectionStatus::Orthogonalized {
            continue;
        }
        let fp = maximize_beta_fixed_u(
            &map,
            &ch.h0,
            &sel.target.u,
            sel.target.beta * 0.5,
            &SelectionOpts::default(),
        )?;
        ok &= fp.converged && (spectral_norm(&fp.theta).powi(2) - 1.0).abs() <= 1e-6;
        ok &= fp
            .trace
            .windows(2)
            .skip(1)
            .all(|w| w[1].theta_norm_sq <= w[0].theta_norm_sq + 1e-9);
    }
    report("gain fixed point converges to the passivity boundary", ok).map_err(io_err)?;

    // noiseless estimation reproduces the effective map
    let mut ok = true;
    for kind in [RsKind::Aris, RsKind::BdRis, RsKind::Fris] {
        let cfg = RayleighConfig { m: 3, k: 2, n: 6, eta: 1.0, seed: 0 };
        let ch = gen_rayleigh(&cfg, &mut rng);
        let pilot = PilotMatrix::dft(2, 1.0);
        let est = estimate_effective_map(kind, &ch, &pilot, 0.0, BasisMode::Full, &mut rng)?;
        let exact = EffectiveMap::build(kind, &ch.h1, &ch.h2)?;
        ok &= (&est.effective_hat - &exact.matrix).norm() <= 1e-10 * exact.matrix.norm();
    }
    report("noiseless pilots identify the effective map", ok).map_err(io_err)?;

    // tiny sweep is reproducible
    let spec = SweepSpec {
        trials: 5,
        sweep: SweepRange { start_db: -10.0, step_db: 10.0, stop_db: 0.0 },
        ..SweepSpec::default()
    };
    let a = run_gain_sweep(&spec)?;
    let b = run_gain_sweep(&spec)?;
    let csv = |o: &SweepOutput| {
        o.rows.iter().map(ExperimentRow::to_csv).collect::<Vec<_>>().join("\n")
    };
    report("repeated runs are identical", csv(&a) == csv(&b)).map_err(io_err)?;

    Ok(all_ok)
}

// ---------------------------------------------------------------------------
// command-line front end
// ---------------------------------------------------------------------------

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "orthoris",
    version,
    about = "Passive-surface MU-MIMO channel shaping: solvers, selection, estimation, Monte Carlo sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rayleigh sweep of mean gain and failure rate over direct-link power
    GainSweep(SweepArgs),
    /// Condition number of the realized channel vs estimation SNR
    CsiSweep(SweepArgs),
    /// Indoor-room per-user spectral efficiency vs receive SNR
    RicianSweep(SweepArgs),
    /// Solve one instance end to end and print a report
    Solve(SolveArgs),
    /// Run the pilot protocol once and report estimation quality
    Estimate(EstimateArgs),
    /// Run the built-in invariant checks
    Selftest,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// TOML file with a sweep spec; flags override its fields
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// Comma-separated surface kinds
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<RsKind>>,
    /// Surface sizes aligned with --kinds (single value broadcasts)
    #[arg(long = "n", value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Sweep range start:step:stop in dB (or a single value)
    #[arg(long = "range", allow_hyphen_values = true)]
    range: Option<SweepRange>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// algorithm1 | simplified | random
    #[arg(long)]
    mode: Option<SelectionMode>,
    /// Rician: direct-link attenuation in dB ('inf' blocks it)
    #[arg(long)]
    blockage_db: Option<f64>,
    /// Rician: add the phase-only surface baseline rows
    #[arg(long)]
    with_ris_baseline: bool,
    /// Csi: pilot energy E_s
    #[arg(long)]
    pilot_energy: Option<f64>,
    /// Write CSV here instead of stdout
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Echo per-trial records to stderr
    #[arg(long)]
    verbose: bool,
}

impl SweepArgs {
    fn into_spec(self, experiment: ExperimentKind) -> Result<(SweepSpec, Option<std::path::PathBuf>)> {
        let mut spec = match &self.config {
            Some(path) => {
                let mut text = String::new();
                std::fs::File::open(path)
                    .and_then(|mut f| f.read_to_string(&mut text))
                    .map_err(|e| {
                        Error::InvalidConfig(format!("config {}: {e}", path.display()))
                    })?;
                toml::from_str::<SweepSpec>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", path.display())))?
            }
            None => SweepSpec::default(),
        };
        if self.config.is_some() && spec.experiment != experiment {
            return Err(Error::InvalidConfig(format!(
                "config is for the {:?} experiment, but the {:?} subcommand was invoked",
                spec.experiment, experiment
            )));
        }
        spec.experiment = experiment;
        if let Some(m) = self.m {
            spec.m = m;
        }
        if let Some(k) = self.k {
            spec.k = k;
        }
        if let Some(kinds) = self.kinds {
            spec.kinds = kinds;
        }
        if let Some(ns) = self.ns {
            spec.ns = ns;
        }
        if let Some(range) = self.range {
            spec.sweep = range;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(mode) = self.mode {
            spec.mode = mode;
        }
        if let Some(b) = self.blockage_db {
            spec.blockage_db = b;
        }
        if self.with_ris_baseline {
            spec.with_ris_baseline = true;
        }
        if let Some(es) = self.pilot_energy {
            spec.pilot_energy = es;
        }
        spec.verbose |= self.verbose;
        Ok((spec, self.out))
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    kind: RsKind,
    #[arg(long = "M", default_value_t = 4)]
    m: usize,
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    /// Surface size; defaults to the kind's minimum
    #[arg(long = "n")]
    n: Option<usize>,
    /// Direct-link power in dB; omit for a blocked link
    #[arg(long, allow_hyphen_values = true)]
    eta_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// algorithm1 | simplified | random
    #[arg(long, default_value_t = SelectionMode::Algorithm1)]
    mode: SelectionMode,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    kind: RsKind,
    #[arg(long = "M", default_value_t = 4)]
    m: usize,
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long = "n")]
    n: Option<usize>,
    /// Estimation SNR E_s/N0 in dB
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    est_snr_db: f64,
    /// Sound only the first M·K basis configurations
    #[arg(long)]
    reduced: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_solve(args: SolveArgs, out: &mut dyn Write) -> Result<()> {
    let n = match args.n {
        Some(n) => n,
        None => min_elements(args.kind, args.m, args.k)?,
    };
    let eta = args.eta_db.map_or(0.0, |db| 10f64.powf(db / 10.0));
    let cfg = RayleighConfig { m: args.m, k: args.k, n, eta, seed: args.seed };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ch = gen_rayleigh(&cfg, &mut rng);
    let map = EffectiveMap::build(args.kind, &ch.h1, &ch.h2)?;
    let io_err = |e: io::Error| Error::InvalidConfig(format!("output: {e}"));

    writeln!(out, "kind          {}", args.kind.label()).map_err(io_err)?;
    writeln!(out, "dims          M={} K={} N={}", args.m, args.k, n).map_err(io_err)?;
    writeln!(out, "map_rank      {} (need {})", map.rank(), args.m * args.k).map_err(io_err)?;
    if !map.rank_feasible() {
        writeln!(out, "status        rank-infeasible (surface too small)").map_err(io_err)?;
        return Ok(());
    }
    let mut opts = SelectionOpts::with_mode(args.mode);
    opts.random_seed = args.seed;
    let sel = select_channel_with_map(&map, &ch.h0, &opts)?;
    let h = ch.apply(&sel.theta);
    let rep = check(&sel.theta, args.kind, STRUCTURE_TOL);
    let status = match sel.status {
        SelectionStatus::Orthogonalized => "orthogonalized",
        SelectionStatus::InfeasibleNeedsAmplification => "infeasible-needs-amplification",
    };
    writeln!(out, "status        {status}").map_err(io_err)?;
    writeln!(out, "beta          {}", fmt_float(sel.target.beta)).map_err(io_err)?;
    writeln!(out, "theta_norm_sq {}", fmt_float(spectral_norm(&sel.theta).powi(2)))
        .map_err(io_err)?;
    writeln!(out, "cond          {}", fmt_float(condition_number(&h))).map_err(io_err)?;
    writeln!(out, "cond_db       {}", fmt_float(cond_db(&h))).map_err(io_err)?;
    writeln!(out, "passivity_margin {}", fmt_float(rep.passivity_margin)).map_err(io_err)?;
    writeln!(out, "structure_ok  {}", rep.structure_ok).map_err(io_err)?;
    writeln!(out, "outer_steps   {}", sel.trace.len()).map_err(io_err)?;
    Ok(())
}

fn run_estimate(args: EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let n = match args.n {
        Some(n) => n,
        None => min_elements(args.kind, args.m, args.k)?,
    };
    let cfg = RayleighConfig { m: args.m, k: args.k, n, eta: 1.0, seed: args.seed };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ch = gen_rayleigh(&cfg, &mut rng);
    let pilot = PilotMatrix::dft(args.k, 1.0);
    let n0 = 10f64.powf(-args.est_snr_db / 10.0);
    let mode = if args.reduced {
        BasisMode::Reduced(args.m * args.k)
    } else {
        BasisMode::Full
    };
    let est = estimate_effective_map(args.kind, &ch, &pilot, n0, mode, &mut rng)?;
    let exact = EffectiveMap::build(args.kind, &ch.h1, &ch.h2)?;
    let d = est.effective_hat.ncols();
    let exact_cols = exact.matrix.columns(0, d).clone_owned();
    let map_err_rel = (&est.effective_hat - &exact_cols).norm() / exact_cols.norm();
    let h0_err_rel = (&est.h0_hat - &ch.h0).norm() / ch.h0.norm().max(1e-300);
    let io_err = |e: io::Error| Error::InvalidConfig(format!("output: {e}"));

    writeln!(out, "kind          {}", args.kind.label()).map_err(io_err)?;
    writeln!(out, "dims          M={} K={} N={}", args.m, args.k, n).map_err(io_err)?;
    writeln!(out, "mode          {}", if args.reduced { "reduced" } else { "full" })
        .map_err(io_err)?;
    writeln!(out, "steps_used    {}", est.steps_used).map_err(io_err)?;
    writeln!(
        out,
        "pilot_budget  {}",
        crate::estimation::pilot_budget(args.kind, args.m, args.k, n, mode)
    )
    .map_err(io_err)?;
    writeln!(out, "est_snr_db    {}", fmt_float(args.est_snr_db)).map_err(io_err)?;
    writeln!(out, "map_rel_err   {}", fmt_float(map_err_rel)).map_err(io_err)?;
    writeln!(out, "h0_rel_err    {}", fmt_float(h0_err_rel)).map_err(io_err)?;
    writeln!(out, "map_rank      {} (need {})", est.effective_map()?.rank(), args.m * args.k)
        .map_err(io_err)?;
    Ok(())
}

fn open_out(path: &Option<std::path::PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => std::fs::File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Error::InvalidConfig(format!("cannot create {}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

/// Parse and run; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result: Result<()> = (|| {
        match cli.command {
            Command::GainSweep(args) => run_sweep_command(args, ExperimentKind::Gain),
            Command::CsiSweep(args) => run_sweep_command(args, ExperimentKind::Csi),
            Command::RicianSweep(args) => run_sweep_command(args, ExperimentKind::Rician),
            Command::Solve(args) => run_solve(args, &mut io::stdout().lock()),
            Command::Estimate(args) => run_estimate(args, &mut io::stdout().lock()),
            Command::Selftest => {
                let ok = selftest(&mut io::stdout().lock())?;
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("selftest found failing invariants".into()))
                }
            }
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_sweep_command(args: SweepArgs, experiment: ExperimentKind) -> Result<()> {
    let (spec, out_path) = args.into_spec(experiment)?;
    let output = run_sweep(&spec)?;
    for line in &output.trial_log {
        eprintln!("{line}");
    }
    let mut out = open_out(&out_path)?;
    write_csv(&output.rows, &mut out)
        .map_err(|e| Error::InvalidConfig(format!("writing CSV: {e}")))?;
    out.flush().map_err(|e| Error::InvalidConfig(format!("writing CSV: {e}")))?;
    Ok(())
}
