//! Monte Carlo comparison of fixed-time and adaptive pedestrian phases.
//!
//! Trial `i` owns two ChaCha streams derived from `(seed, i)`: stream `2i`
//! samples the scenario, stream `2i + 1` supplies the per-frame detection
//! draws. Both arms of a trial, and every cell of a parameter sweep, see the
//! same scenario and the same detection draws, so per-trial comparisons are
//! exact rather than statistical. Results are reduced in trial order, which
//! makes reports independent of the rayon thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::scenario::{
    sample_scenario, simulate_adaptive, simulate_fixed, Demographics, Scenario, SignalPolicy,
    SpeedModel, TrialOutcome,
};

/// Per-frame probability that the detector misses a present VRU (1 - recall).
pub const DEFAULT_ALPHA: f64 = 0.26;
/// mAP@0.5 of the selected detector. Informational; the trial loop only uses `alpha`.
pub const DEFAULT_DETECTION_MAP_50: f64 = 0.756;
pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub detection_map_50: f64,
    pub demographics: Demographics,
    pub speed_model: SpeedModel<f64>,
    pub policy: SignalPolicy<f64>,
    pub controller: ControllerConfig<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            alpha: DEFAULT_ALPHA,
            detection_map_50: DEFAULT_DETECTION_MAP_50,
            demographics: Demographics::default(),
            speed_model: SpeedModel::default(),
            policy: SignalPolicy::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        self.demographics.validate()?;
        self.speed_model.validate()?;
        self.policy.validate()?;
        self.controller.validate()
    }
}

fn scenario_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trial);
    rng
}

fn detection_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trial + 1);
    rng
}

pub fn trial_scenario(config: &SimConfig, trial: u64) -> Scenario<f64> {
    sample_scenario(
        &mut scenario_rng(config.seed, trial),
        &config.demographics,
        &config.speed_model,
    )
}

fn adaptive_arm(
    config: &SimConfig,
    controller: &ControllerConfig<f64>,
    trial: u64,
    scenario: &Scenario<f64>,
) -> Result<TrialOutcome<f64>> {
    simulate_adaptive(
        scenario,
        &config.policy,
        controller,
        config.alpha,
        &mut detection_rng(config.seed, trial),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialPair {
    pub trial: u64,
    pub scenario: Scenario<f64>,
    pub fixed: TrialOutcome<f64>,
    pub adaptive: TrialOutcome<f64>,
}

/// Evaluates both arms for every trial, in trial order.
pub fn run_trials(config: &SimConfig) -> Result<Vec<TrialPair>> {
    config.validate()?;
    (0..config.n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let scenario = trial_scenario(config, trial);
            let fixed = simulate_fixed(&scenario, &config.policy)?;
            let adaptive = adaptive_arm(config, &config.controller, trial, &scenario)?;
            Ok(TrialPair {
                trial,
                scenario,
                fixed,
                adaptive,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub stranding_rate: f64,
    /// Binomial standard error of `stranding_rate`.
    pub se: f64,
    pub duration_mean: f64,
    pub duration_median: f64,
    pub duration_max: f64,
}

impl ModeStats {
    fn from_outcomes<'a>(outcomes: impl ExactSizeIterator<Item = &'a TrialOutcome<f64>>) -> Self {
        let n = outcomes.len();
        let mut stranded = 0usize;
        let mut durations = Vec::with_capacity(n);
        for o in outcomes {
            stranded += o.stranded as usize;
            durations.push(o.signal_duration_s);
        }
        let nf = n as f64;
        let rate = stranded as f64 / nf;
        let mean = durations.iter().sum::<f64>() / nf;
        let max = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        durations.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            durations[n / 2]
        } else {
            0.5 * (durations[n / 2 - 1] + durations[n / 2])
        };
        ModeStats {
            stranding_rate: rate,
            se: binomial_se(rate, n),
            duration_mean: mean,
            duration_median: median,
            duration_max: max,
        }
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_trials: usize,
    pub seed: u64,
    pub fixed: ModeStats,
    pub nplb: ModeStats,
    pub improvement_pct: f64,
    /// Count of adaptive trials granted `k` extensions, `k = 0..=max_extensions`.
    pub extension_histogram: Vec<u64>,
}

impl SimReport {
    pub fn extension_shares(&self) -> Vec<f64> {
        self.extension_histogram
            .iter()
            .map(|&c| c as f64 / self.n_trials as f64)
            .collect()
    }
}

pub fn summarize(config: &SimConfig, trials: &[TrialPair]) -> Result<SimReport> {
    if trials.is_empty() {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    let fixed = ModeStats::from_outcomes(trials.iter().map(|t| &t.fixed));
    let nplb = ModeStats::from_outcomes(trials.iter().map(|t| &t.adaptive));
    let mut histogram = vec![0u64; config.controller.max_extensions as usize + 1];
    for t in trials {
        histogram[t.adaptive.extensions_granted as usize] += 1;
    }
    let improvement_pct = if fixed.stranding_rate > 0.0 {
        (fixed.stranding_rate - nplb.stranding_rate) / fixed.stranding_rate * 100.0
    } else {
        0.0
    };
    Ok(SimReport {
        n_trials: trials.len(),
        seed: config.seed,
        fixed,
        nplb,
        improvement_pct,
        extension_histogram: histogram,
    })
}

pub fn run_comparison(config: &SimConfig) -> Result<SimReport> {
    let trials = run_trials(config)?;
    summarize(config, &trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub tau_e: f64,
    pub tau_t: f64,
    pub stranding_rate: f64,
    pub mean_extensions: f64,
    pub mean_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub tau_e_values: Vec<f64>,
    pub tau_t_values: Vec<f64>,
    /// `cells[i][j]` holds `(tau_e_values[i], tau_t_values[j])`.
    pub cells: Vec<Vec<SweepCell>>,
}

impl SweepGrid {
    pub fn cell(&self, i_e: usize, i_t: usize) -> &SweepCell {
        &self.cells[i_e][i_t]
    }

    /// Row-major over `tau_e`, then `tau_t`.
    pub fn iter(&self) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.tau_e_values.len() * self.tau_t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inclusive arithmetic grid `start, start + step, ..., <= end`.
pub fn grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) {
        return Err(Error::InvalidConfig(format!(
            "grid {start}..{end}:{step} is empty or has a non-positive step"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Default sweep axis: 3.0 to 6.0 s in 0.5 s steps.
pub fn default_sweep_axis() -> Vec<f64> {
    grid(3.0, 6.0, 0.5).expect("static grid")
}

/// Adaptive-arm statistics for every `(tau_e, tau_t)` pair. Every cell reuses
/// the same scenarios and detection draws.
pub fn parameter_sweep(config: &SimConfig, tau_e_grid: &[f64], tau_t_grid: &[f64]) -> Result<SweepGrid> {
    config.validate()?;
    if tau_e_grid.is_empty() || tau_t_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }
    if let Some(bad) = tau_e_grid.iter().chain(tau_t_grid).find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidConfig(format!("sweep values must be > 0, got {bad}")));
    }

    let scenarios: Vec<Scenario<f64>> = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|trial| trial_scenario(config, trial))
        .collect();
    let n = scenarios.len() as f64;

    let mut cells = Vec::with_capacity(tau_e_grid.len());
    for &tau_e in tau_e_grid {
        let mut row = Vec::with_capacity(tau_t_grid.len());
        for &tau_t in tau_t_grid {
            let controller = ControllerConfig {
                extension_s: tau_e,
                threshold_s: tau_t,
                ..config.controller
            };
            let outcomes: Vec<TrialOutcome<f64>> = scenarios
                .par_iter()
                .enumerate()
                .map(|(trial, s)| adaptive_arm(config, &controller, trial as u64, s))
                .collect::<Result<_>>()?;
            let stranded = outcomes.iter().filter(|o| o.stranded).count();
            let extensions: u64 = outcomes.iter().map(|o| o.extensions_granted as u64).sum();
            let duration: f64 = outcomes.iter().map(|o| o.signal_duration_s).sum();
            row.push(SweepCell {
                tau_e,
                tau_t,
                stranding_rate: stranded as f64 / n,
                mean_extensions: extensions as f64 / n,
                mean_duration: duration / n,
            });
        }
        cells.push(row);
    }

    Ok(SweepGrid {
        tau_e_values: tau_e_grid.to_vec(),
        tau_t_values: tau_t_grid.to_vec(),
        cells,
    })
}

/// Fixed-time stranding rate over the configured trials.
pub fn fixed_stranding_rate(config: &SimConfig) -> Result<f64> {
    config.validate()?;
    let stranded = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let s = trial_scenario(config, trial);
            simulate_fixed(&s, &config.policy).map(|o| o.stranded as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(stranded as f64 / config.n_trials as f64)
}

pub const CV_SEARCH_MAX: f64 = 0.5;
const MAX_BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub coefficient_of_variation: f64,
    pub fixed_stranding_rate: f64,
    pub target: f64,
    pub tolerance: f64,
    pub evaluations: usize,
}

/// Bisects the speed CV on `[0, 0.5]` until the fixed-time stranding rate is
/// within `tolerance` of `target`.
pub fn calibrate_speed_cv(config: &SimConfig, target: f64, tolerance: f64) -> Result<Calibration> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "calibration target must lie in (0, 1), got {target}"
        )));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "calibration tolerance must be >= 0, got {tolerance}"
        )));
    }
    let rate_at = |cv: f64| {
        let mut c = config.clone();
        c.speed_model.coefficient_of_variation = cv;
        fixed_stranding_rate(&c)
    };
    let done = |cv: f64, rate: f64, evaluations: usize| Calibration {
        coefficient_of_variation: cv,
        fixed_stranding_rate: rate,
        target,
        tolerance,
        evaluations,
    };

    let (mut lo, mut hi) = (0.0, CV_SEARCH_MAX);
    let mut lo_rate = rate_at(lo)?;
    if (lo_rate - target).abs() <= tolerance {
        return Ok(done(lo, lo_rate, 1));
    }
    let mut hi_rate = rate_at(hi)?;
    if (hi_rate - target).abs() <= tolerance {
        return Ok(done(hi, hi_rate, 2));
    }
    let fail = |lo: f64, lo_rate: f64, hi: f64, hi_rate: f64| Error::Calibration {
        target,
        lo_cv: lo,
        lo_rate,
        hi_cv: hi,
        hi_rate,
    };
    if !(lo_rate < target && target < hi_rate) {
        return Err(fail(lo, lo_rate, hi, hi_rate));
    }

    for k in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let rate = rate_at(mid)?;
        if (rate - target).abs() <= tolerance {
            return Ok(done(mid, rate, k + 3));
        }
        if rate < target {
            lo = mid;
            lo_rate = rate;
        } else {
            hi = mid;
            hi_rate = rate;
        }
    }
    Err(fail(lo, lo_rate, hi, hi_rate))
}
