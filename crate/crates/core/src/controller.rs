//! Tick-driven pedestrian-phase extension controller.
//!
//! The controller consumes one [`DetectionFrame`] per tick. A frame that
//! contains a vulnerable road user (VRU) while the remaining walk time is
//! below the threshold extends the phase, up to a fixed number of times per
//! cycle. VRU track ids are remembered until the stream has been VRU-free for
//! more than `timeout_frames` consecutive frames.
//!
//! Per frame, in order:
//!
//! 1. clear the per-frame detection flag;
//! 2. scan detections, flag any VRU class and remember its track id
//!    (id `-1` flags but is not remembered);
//! 3. count VRU-free frames, clearing the id set once the count exceeds
//!    `timeout_frames`; any VRU resets the count;
//! 4. extend when a VRU was seen, `time_left < threshold` and the cap allows;
//! 5. advance the clock by one tick.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Track id reported by the tracker when it could not associate a box.
pub const UNTRACKED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    ChildWithoutDisability,
    ElderlyWithoutDisability,
    WithDisability,
    NonVulnerable,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::ChildWithoutDisability,
        ObjectClass::ElderlyWithoutDisability,
        ObjectClass::WithDisability,
        ObjectClass::NonVulnerable,
    ];

    pub fn is_vru(self) -> bool {
        !matches!(self, ObjectClass::NonVulnerable)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::ChildWithoutDisability => "child_without_disability",
            ObjectClass::ElderlyWithoutDisability => "elderly_without_disability",
            ObjectClass::WithDisability => "with_disability",
            ObjectClass::NonVulnerable => "non_vulnerable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: ObjectClass,
    pub track_id: i64,
    #[serde(default)]
    pub confidence: Option<f64>,
}

impl Detection {
    pub fn new(class: ObjectClass, track_id: i64) -> Self {
        Detection {
            class,
            track_id,
            confidence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.track_id < UNTRACKED {
            return Err(Error::Validation(format!(
                "track_id {} is below -1",
                self.track_id
            )));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Validation(format!(
                    "confidence {c} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig<T> {
    /// Seconds added per extension.
    pub extension_s: T,
    /// Remaining-time level below which a visible VRU triggers an extension.
    pub threshold_s: T,
    pub max_extensions: u32,
    /// VRU-free frames tolerated before the id set is dropped.
    pub timeout_frames: u32,
    /// Seconds represented by one frame.
    pub tick_s: T,
}

impl<T: Real> Default for ControllerConfig<T> {
    fn default() -> Self {
        ControllerConfig {
            extension_s: T::lit(3.0),
            threshold_s: T::lit(4.0),
            max_extensions: 2,
            timeout_frames: 10,
            tick_s: T::lit(1.0 / 30.0),
        }
    }
}

impl<T: Real> ControllerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T, name: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
            }
        };
        positive(self.extension_s, "extension_s")?;
        positive(self.threshold_s, "threshold_s")?;
        positive(self.tick_s, "tick_s")?;
        if self.timeout_frames < 1 {
            return Err(Error::InvalidConfig("timeout_frames must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "command")]
pub enum SignalCommand<T> {
    NoOp,
    /// `new_time_left_s` is the remaining time right after the extension,
    /// before this frame's tick is subtracted.
    #[serde(rename = "EXTEND_SIGNAL")]
    ExtendSignal {
        new_time_left_s: T,
        extension_index: u32,
    },
}

impl<T> SignalCommand<T> {
    pub fn is_extend(&self) -> bool {
        matches!(self, SignalCommand::ExtendSignal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState<T> {
    pub time_left_s: T,
    pub extension_count: u32,
    pub vru_ids: BTreeSet<i64>,
    pub vru_timeout: u32,
    pub vru_detected: bool,
    initial_signal_s: T,
    frames_elapsed: u64,
}

impl<T: Real> ControllerState<T> {
    pub fn new(config: &ControllerConfig<T>, initial_signal_s: T) -> Result<Self> {
        config.validate()?;
        if !(initial_signal_s > T::zero()) || !initial_signal_s.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "initial signal time must be > 0, got {initial_signal_s}"
            )));
        }
        Ok(ControllerState {
            time_left_s: initial_signal_s,
            extension_count: 0,
            vru_ids: BTreeSet::new(),
            vru_timeout: 0,
            vru_detected: false,
            initial_signal_s,
            frames_elapsed: 0,
        })
    }

    pub fn initial_signal_s(&self) -> T {
        self.initial_signal_s
    }

    pub fn frames_elapsed(&self) -> u64 {
        self.frames_elapsed
    }

    /// Phase length after the extensions granted so far.
    pub fn signal_duration_s(&self, config: &ControllerConfig<T>) -> T {
        self.initial_signal_s + T::from_count(self.extension_count as usize) * config.extension_s
    }

    /// Pure transition: returns the successor state and the emitted command.
    pub fn step(
        &self,
        frame: &DetectionFrame,
        config: &ControllerConfig<T>,
    ) -> (Self, SignalCommand<T>) {
        let mut next = self.clone();
        let cmd = next.advance(&frame.detections, config);
        (next, cmd)
    }

    /// In-place transition over one frame's detections.
    pub fn advance(
        &mut self,
        detections: &[Detection],
        config: &ControllerConfig<T>,
    ) -> SignalCommand<T> {
        self.vru_detected = false;
        for det in detections {
            if det.class.is_vru() {
                self.vru_detected = true;
                if det.track_id != UNTRACKED {
                    self.vru_ids.insert(det.track_id);
                }
            }
        }

        if self.vru_detected {
            self.vru_timeout = 0;
        } else {
            self.vru_timeout += 1;
            if self.vru_timeout > config.timeout_frames {
                self.vru_ids.clear();
                self.vru_timeout = 0;
            }
        }

        let mut cmd = SignalCommand::NoOp;
        if self.vru_detected
            && self.time_left_s < config.threshold_s
            && self.extension_count < config.max_extensions
        {
            self.extension_count += 1;
            self.time_left_s = self.clock(config);
            cmd = SignalCommand::ExtendSignal {
                new_time_left_s: self.time_left_s,
                extension_index: self.extension_count,
            };
        }

        self.frames_elapsed += 1;
        self.time_left_s = self.clock(config);
        cmd
    }

    // Recomputed from counters rather than accumulated so that long 30 fps
    // streams hit threshold crossings at the exact frame.
    fn clock(&self, config: &ControllerConfig<T>) -> T {
        let elapsed = T::from_u64(self.frames_elapsed).expect("frame count fits scalar");
        self.signal_duration_s(config) - elapsed * config.tick_s
    }
}
