//! Adaptive pedestrian-signal control and its evaluation toolkit.
//!
//! * [`controller`]: tick-driven phase-extension state machine fed by tracked
//!   detections, plus a batch [`replay`] driver.
//! * [`scenario`] and [`montecarlo`]: single-pedestrian crossing trials and the
//!   fixed-time vs adaptive comparison, parameter sweep and speed calibration.
//! * [`annotations`]: COCO to YOLO label conversion.
//! * [`detmetrics`]: IoU, AP and mAP.
//!
//! Geometry and timing code is generic over [`Real`]; the aliases below pin
//! the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotations;
pub mod controller;
pub mod detmetrics;
pub mod error;
pub mod montecarlo;
pub mod replay;
pub mod report;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ControllerConfig = controller::ControllerConfig<f64>;
pub type ControllerState = controller::ControllerState<f64>;
pub type SignalCommand = controller::SignalCommand<f64>;
pub type ReplayReport = replay::ReplayReport<f64>;

pub type Scenario = scenario::Scenario<f64>;
pub type SpeedModel = scenario::SpeedModel<f64>;
pub type SignalPolicy = scenario::SignalPolicy<f64>;
pub type TrialOutcome = scenario::TrialOutcome<f64>;

pub type YoloLabel = annotations::YoloLabel<f64>;

pub type BBox = detmetrics::BBox<f64>;
pub type BBox32 = detmetrics::BBox<f32>;
pub type Prediction = detmetrics::Prediction<f64>;
pub type GroundTruth = detmetrics::GroundTruth<f64>;
pub type EvalResult = detmetrics::EvalResult<f64>;

pub use controller::{Detection, DetectionFrame, ObjectClass};
pub use montecarlo::{SimConfig, SimReport, SweepGrid};
pub use scenario::{Demographics, PedestrianType};
