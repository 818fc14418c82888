//! Batch driver that feeds a recorded detection stream through the controller.
//!
//! Input is line-delimited JSON, one frame per line:
//!
//! ```text
//! {"frame": 0, "detections": [{"class": "with_disability", "track_id": 3, "confidence": 0.91}]}
//! ```
//!
//! Output is one JSON record per extension command.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::controller::{ControllerConfig, ControllerState, DetectionFrame, SignalCommand};
use crate::error::{Error, Result};
use crate::report::round_sig;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandRecord {
    pub frame: u64,
    pub command: &'static str,
    pub time_left: f64,
    pub extension_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum VruIdEvent {
    Inserted { frame: u64, track_id: i64 },
    Cleared { frame: u64, dropped: Vec<i64> },
}

/// Controller state after a frame was processed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: u64,
    pub vru_detected: bool,
    pub vru_timeout: u32,
    pub vru_ids: Vec<i64>,
    pub extension_count: u32,
    pub extended: bool,
    pub time_left: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport<T> {
    pub commands: Vec<CommandRecord>,
    pub final_time_left_s: T,
    pub final_duration_s: T,
    pub extensions_granted: u32,
    pub frames_processed: u64,
    pub vru_id_history: Vec<VruIdEvent>,
    pub trace: Vec<TraceRow>,
}

pub fn run_replay<T, I>(
    config: &ControllerConfig<T>,
    initial_signal_s: T,
    frames: I,
) -> Result<ReplayReport<T>>
where
    T: Real,
    I: IntoIterator<Item = Result<DetectionFrame>>,
{
    let mut state = ControllerState::new(config, initial_signal_s)?;
    let mut commands = Vec::new();
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut previous: Option<u64> = None;

    for frame in frames {
        let frame = frame?;
        if let Some(prev) = previous {
            if frame.frame_index <= prev {
                return Err(Error::StreamOrder {
                    previous: prev,
                    got: frame.frame_index,
                });
            }
        }
        previous = Some(frame.frame_index);

        let before: BTreeSet<i64> = state.vru_ids.clone();
        let cmd = state.advance(&frame.detections, config);

        if state.vru_ids.is_empty() && !before.is_empty() {
            history.push(VruIdEvent::Cleared {
                frame: frame.frame_index,
                dropped: before.iter().copied().collect(),
            });
        }
        for id in state.vru_ids.difference(&before) {
            history.push(VruIdEvent::Inserted {
                frame: frame.frame_index,
                track_id: *id,
            });
        }

        if let SignalCommand::ExtendSignal {
            new_time_left_s,
            extension_index,
        } = cmd
        {
            commands.push(CommandRecord {
                frame: frame.frame_index,
                command: "EXTEND_SIGNAL",
                time_left: round_sig(new_time_left_s.as_f64()),
                extension_index,
            });
        }

        trace.push(TraceRow {
            frame: frame.frame_index,
            vru_detected: state.vru_detected,
            vru_timeout: state.vru_timeout,
            vru_ids: state.vru_ids.iter().copied().collect(),
            extension_count: state.extension_count,
            extended: cmd.is_extend(),
            time_left: round_sig(state.time_left_s.as_f64()),
        });
    }

    Ok(ReplayReport {
        commands,
        final_time_left_s: state.time_left_s,
        final_duration_s: state.signal_duration_s(config),
        extensions_granted: state.extension_count,
        frames_processed: state.frames_elapsed(),
        vru_id_history: history,
        trace,
    })
}

/// Parses one line of the replay format. `line_no` is 1-based and only used
/// in error messages.
pub fn parse_frame_line(line: &str, line_no: usize) -> Result<DetectionFrame> {
    let frame: DetectionFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    for det in &frame.detections {
        det.validate().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(frame)
}

/// Lazily reads frames from a line-delimited stream. Blank lines are skipped.
pub fn read_frames<R: BufRead>(reader: R) -> impl Iterator<Item = Result<DetectionFrame>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_frame_line(&l, i + 1)),
            Err(e) => Some(Err(Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

pub fn write_jsonl<W: Write, S: Serialize>(mut out: W, records: &[S]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}
