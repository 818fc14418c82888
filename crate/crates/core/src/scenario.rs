//! Single-pedestrian crossing trials under fixed-time and adaptive control.
//!
//! Lengths are in feet, speeds in feet per second, times in seconds.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::controller::{ControllerConfig, ControllerState, Detection, ObjectClass};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MIN_CROSSWALK_FT: f64 = 30.0;
pub const MAX_CROSSWALK_FT: f64 = 60.0;
pub const MAX_ENTRY_DELAY_S: f64 = 3.0;
/// Buffer floor of the fixed-time timing formula.
pub const MIN_BUFFER_S: f64 = 2.0;
/// Track id carried by the simulated pedestrian.
pub const SIM_TRACK_ID: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PedestrianType {
    GeneralAdult,
    Elderly,
    Wheelchair,
}

impl PedestrianType {
    pub const ALL: [PedestrianType; 3] = [
        PedestrianType::GeneralAdult,
        PedestrianType::Elderly,
        PedestrianType::Wheelchair,
    ];

    pub fn nominal_speed(self) -> f64 {
        match self {
            PedestrianType::GeneralAdult => 4.00,
            PedestrianType::Elderly => 2.80,
            PedestrianType::Wheelchair => 3.55,
        }
    }

    /// Detector class a pedestrian of this type shows up as.
    pub fn object_class(self) -> ObjectClass {
        match self {
            PedestrianType::GeneralAdult => ObjectClass::NonVulnerable,
            PedestrianType::Elderly => ObjectClass::ElderlyWithoutDisability,
            PedestrianType::Wheelchair => ObjectClass::WithDisability,
        }
    }
}

pub fn ped_type_to_class(ped_type: PedestrianType) -> ObjectClass {
    ped_type.object_class()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub p_general: f64,
    pub p_elderly: f64,
    pub p_wheelchair: f64,
}

impl Default for Demographics {
    fn default() -> Self {
        Demographics {
            p_general: 0.804,
            p_elderly: 0.18,
            p_wheelchair: 0.016,
        }
    }
}

impl Demographics {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_general, self.p_elderly, self.p_wheelchair];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(format!(
                "demographic probabilities must lie in [0, 1]: {ps:?}"
            )));
        }
        let sum: f64 = ps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "demographic probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Inverse-CDF pick from one uniform draw in [0, 1).
    pub fn pick(&self, u: f64) -> PedestrianType {
        if u < self.p_general {
            PedestrianType::GeneralAdult
        } else if u < self.p_general + self.p_elderly {
            PedestrianType::Elderly
        } else if self.p_wheelchair > 0.0 {
            PedestrianType::Wheelchair
        } else if self.p_elderly > 0.0 {
            PedestrianType::Elderly
        } else {
            PedestrianType::GeneralAdult
        }
    }
}

/// Walking speeds are normal around the type's nominal speed with a shared
/// coefficient of variation, truncated below at `floor_fraction * nominal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedModel<T> {
    pub coefficient_of_variation: T,
    pub floor_fraction: T,
}

/// Speed CV produced by `calibrate_speed_cv` at the default configuration
/// (seed 42, 10,000 trials, target fixed-time stranding 0.091).
pub const CALIBRATED_SPEED_CV: f64 = 0.1328125;

impl<T: Real> Default for SpeedModel<T> {
    fn default() -> Self {
        SpeedModel {
            coefficient_of_variation: T::lit(CALIBRATED_SPEED_CV),
            floor_fraction: T::lit(0.5),
        }
    }
}

impl<T: Real> SpeedModel<T> {
    pub fn with_cv(cv: T) -> Self {
        SpeedModel {
            coefficient_of_variation: cv,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient_of_variation >= T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "coefficient_of_variation must be >= 0, got {}",
                self.coefficient_of_variation
            )));
        }
        if !(self.floor_fraction > T::zero() && self.floor_fraction <= T::one()) {
            return Err(Error::InvalidConfig(format!(
                "floor_fraction must lie in (0, 1], got {}",
                self.floor_fraction
            )));
        }
        Ok(())
    }

    /// Maps a uniform draw to a speed through the truncated normal's inverse
    /// CDF. One draw per pedestrian regardless of CV keeps streams aligned
    /// across calibration points.
    pub fn speed_from_uniform(&self, nominal: f64, u: f64) -> f64 {
        let cv = self.coefficient_of_variation.as_f64();
        if cv == 0.0 {
            return nominal;
        }
        let std_normal = Normal::standard();
        let z_floor = (self.floor_fraction.as_f64() - 1.0) / cv;
        let p_floor = std_normal.cdf(z_floor);
        let p = p_floor + u * (1.0 - p_floor);
        let z = std_normal.inverse_cdf(p);
        let z = if z.is_finite() { z.max(z_floor) } else if z > 0.0 { 8.0 } else { z_floor };
        nominal * (1.0 + cv * z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub ped_type: PedestrianType,
    pub actual_speed: T,
    pub crosswalk_length: T,
    pub entry_delay: T,
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        let len = self.crosswalk_length.as_f64();
        let delay = self.entry_delay.as_f64();
        if !(MIN_CROSSWALK_FT..=MAX_CROSSWALK_FT).contains(&len) {
            return Err(Error::InvalidScenario(format!(
                "crosswalk length {len} outside [30, 60] ft"
            )));
        }
        if !(0.0..=MAX_ENTRY_DELAY_S).contains(&delay) {
            return Err(Error::InvalidScenario(format!(
                "entry delay {delay} outside [0, 3] s"
            )));
        }
        if !(self.actual_speed > T::zero()) {
            return Err(Error::InvalidScenario(format!(
                "walking speed must be > 0, got {}",
                self.actual_speed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPolicy<T> {
    /// Walking speed assumed by the fixed-time formula.
    pub design_speed: T,
    pub buffer_s: T,
}

impl<T: Real> Default for SignalPolicy<T> {
    fn default() -> Self {
        SignalPolicy {
            design_speed: T::lit(3.5),
            buffer_s: T::lit(5.0),
        }
    }
}

impl<T: Real> SignalPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.design_speed > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "design_speed must be > 0, got {}",
                self.design_speed
            )));
        }
        if !(self.buffer_s >= T::lit(MIN_BUFFER_S)) {
            return Err(Error::InvalidConfig(format!(
                "buffer_s must be >= 2, got {}",
                self.buffer_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome<T> {
    pub stranded: bool,
    pub signal_duration_s: T,
    pub extensions_granted: u32,
    pub crossing_time_s: T,
}

pub fn sample_scenario<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    demographics: &Demographics,
    speed_model: &SpeedModel<T>,
) -> Scenario<T> {
    let ped_type = demographics.pick(rng.random());
    let speed = speed_model.speed_from_uniform(ped_type.nominal_speed(), rng.random());
    let length = MIN_CROSSWALK_FT + (MAX_CROSSWALK_FT - MIN_CROSSWALK_FT) * rng.random::<f64>();
    let delay = MAX_ENTRY_DELAY_S * rng.random::<f64>();
    Scenario {
        ped_type,
        actual_speed: T::lit(speed),
        crosswalk_length: T::lit(length),
        entry_delay: T::lit(delay),
    }
}

/// Fixed-time walk phase: distance over design speed plus buffer.
pub fn fixed_signal_duration<T: Real>(crosswalk_length: T, policy: &SignalPolicy<T>) -> Result<T> {
    if !(crosswalk_length > T::zero()) {
        return Err(Error::InvalidScenario(format!(
            "crosswalk length must be > 0, got {crosswalk_length}"
        )));
    }
    Ok(crosswalk_length / policy.design_speed + policy.buffer_s)
}

/// Time from phase start until the pedestrian leaves the crosswalk.
pub fn crossing_time<T: Real>(scenario: &Scenario<T>) -> T {
    scenario.entry_delay + scenario.crosswalk_length / scenario.actual_speed
}

pub fn simulate_fixed<T: Real>(scenario: &Scenario<T>, policy: &SignalPolicy<T>) -> Result<TrialOutcome<T>> {
    let duration = fixed_signal_duration(scenario.crosswalk_length, policy)?;
    let crossing = crossing_time(scenario);
    Ok(TrialOutcome {
        stranded: crossing > duration,
        signal_duration_s: duration,
        extensions_granted: 0,
        crossing_time_s: crossing,
    })
}

/// Runs the controller frame by frame over one crossing. The pedestrian is in
/// the crosswalk on `[entry_delay, crossing_time)`; each frame draws one
/// uniform from `rng` (present or not, so frame `k` always consumes draw `k`)
/// and a present pedestrian is detected when the draw is below `1 - alpha`.
pub fn simulate_adaptive<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    policy: &SignalPolicy<T>,
    config: &ControllerConfig<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<TrialOutcome<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let base = fixed_signal_duration(scenario.crosswalk_length, policy)?;
    let crossing = crossing_time(scenario);
    let recall = 1.0 - alpha;
    let seen = [Detection::new(scenario.ped_type.object_class(), SIM_TRACK_ID)];

    let mut state = ControllerState::new(config, base)?;
    let mut frame: u64 = 0;
    loop {
        let t = T::from_u64(frame).expect("frame count fits scalar") * config.tick_s;
        if t >= crossing || state.time_left_s <= T::zero() {
            break;
        }
        let u: f64 = rng.random();
        let detected = t >= scenario.entry_delay && u < recall;
        state.advance(if detected { &seen[..] } else { &[] }, config);
        frame += 1;
    }

    let duration = state.signal_duration_s(config);
    Ok(TrialOutcome {
        stranded: crossing > duration,
        signal_duration_s: duration,
        extensions_granted: state.extension_count,
        crossing_time_s: crossing,
    })
}
