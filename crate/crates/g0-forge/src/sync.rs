//! Spatiotemporal alignment of asynchronous pose, video and instruction
//! streams onto a uniform tick grid.
//!
//! Poses are linearly interpolated in translation and slerp-interpolated
//! in rotation (hemisphere-corrected, so always the short path); frames
//! are matched nearest-neighbor and never fabricated. The tick grid spans
//! the intersection of the pose-stream time ranges, so nothing is ever
//! extrapolated.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameRef, PoseSample, RawSession};
use crate::math::{lerp, slerp, Pose6D};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("pose stream '{0}' has fewer than 2 samples")]
    EmptyStream(String),
    #[error("pose streams do not overlap in time")]
    NoTemporalOverlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickFlags {
    /// Some camera had no frame within half a video period of this tick.
    pub frame_gap: bool,
    /// Reserved; the grid is clipped to the stream overlap instead of
    /// extrapolating, so this stays false in the current pipeline.
    pub pose_extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedTick {
    pub t: f64,
    pub poses: BTreeMap<String, PoseSample>,
    /// Nearest frame per camera; absent when farther than half a video
    /// period from the tick.
    pub frames: BTreeMap<String, FrameRef>,
    pub flags: TickFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedSequence {
    pub session_id: String,
    pub instruction: String,
    pub ticks: Vec<SyncedTick>,
    pub tick_hz: f64,
}

/// Interpolate `stream` at time `t`, which must lie within the stream's
/// range. Exact knot hits return the stored sample unchanged.
pub fn interpolate_at(stream: &[PoseSample], t: f64) -> PoseSample {
    debug_assert!(stream.len() >= 2);
    let idx = match stream.binary_search_by(|s| s.t.total_cmp(&t)) {
        Ok(i) => return stream[i].clone(),
        Err(i) => i,
    };
    let (a, b) = if idx == 0 {
        (&stream[0], &stream[1])
    } else if idx >= stream.len() {
        (&stream[stream.len() - 2], &stream[stream.len() - 1])
    } else {
        (&stream[idx - 1], &stream[idx])
    };
    let u = (t - a.t) / (b.t - a.t);
    if u == 0.0 {
        return a.clone();
    }
    if u == 1.0 {
        return b.clone();
    }
    PoseSample {
        t,
        pose: Pose6D::new(
            lerp(&a.pose.translation, &b.pose.translation, u),
            slerp(&a.pose.quaternion(), &b.pose.quaternion(), u),
        ),
        gripper_aperture: a.gripper_aperture + (b.gripper_aperture - a.gripper_aperture) * u,
        tracking_confidence: a.tracking_confidence
            + (b.tracking_confidence - a.tracking_confidence) * u,
    }
}

/// Resample a pose stream onto a uniform grid over its own time range.
pub fn resample_poses(stream: &[PoseSample], target_hz: f64) -> Result<Vec<PoseSample>, SyncError> {
    if stream.len() < 2 {
        return Err(SyncError::EmptyStream("stream".into()));
    }
    let t0 = stream[0].t;
    let t1 = stream[stream.len() - 1].t;
    let n = ((t1 - t0) * target_hz).floor() as usize + 1;
    Ok((0..n)
        .map(|i| interpolate_at(stream, t0 + i as f64 / target_hz))
        .collect())
}

/// Align all streams of `session` onto a `tick_hz` grid spanning the
/// intersection of the pose-stream time ranges.
pub fn align_streams(session: &RawSession, tick_hz: f64) -> Result<SyncedSequence, SyncError> {
    let mut start = f64::NEG_INFINITY;
    let mut end = f64::INFINITY;
    for (arm, stream) in &session.pose_streams {
        if stream.len() < 2 {
            return Err(SyncError::EmptyStream(arm.clone()));
        }
        start = start.max(stream[0].t);
        end = end.min(stream[stream.len() - 1].t);
    }
    if start > end {
        return Err(SyncError::NoTemporalOverlap);
    }
    let half_frame_period = 0.5 / session.device_meta.nominal_video_hz;
    let n = ((end - start) * tick_hz).floor() as usize + 1;

    let mut ticks = Vec::with_capacity(n);
    for i in 0..n {
        let t = start + i as f64 / tick_hz;
        let mut poses = BTreeMap::new();
        for (arm, stream) in &session.pose_streams {
            poses.insert(arm.clone(), interpolate_at(stream, t));
        }
        let mut frames = BTreeMap::new();
        let mut flags = TickFlags::default();
        for (cam, stream) in &session.frame_streams {
            match nearest_frame(stream, t) {
                Some(f) if (f.t - t).abs() <= half_frame_period => {
                    frames.insert(cam.clone(), f.clone());
                }
                _ => flags.frame_gap = true,
            }
        }
        ticks.push(SyncedTick { t, poses, frames, flags });
    }
    Ok(SyncedSequence {
        session_id: session.session_id.clone(),
        instruction: session.instruction.clone(),
        ticks,
        tick_hz,
    })
}

fn nearest_frame(stream: &[FrameRef], t: f64) -> Option<&FrameRef> {
    if stream.is_empty() {
        return None;
    }
    let idx = stream.partition_point(|f| f.t < t);
    let mut best = None;
    for i in [idx.wrapping_sub(1), idx] {
        if let Some(f) = stream.get(i) {
            match best {
                None => best = Some(f),
                Some(b) => {
                    let b: &FrameRef = b;
                    if (f.t - t).abs() < (b.t - t).abs() {
                        best = Some(f);
                    }
                }
            }
        }
    }
    best
}

/// Debug dump: one JSON tick per line.
pub fn dump_jsonl<W: Write>(seq: &SyncedSequence, mut w: W) -> std::io::Result<()> {
    for tick in &seq.ticks {
        writeln!(w, "{}", serde_json::to_string(tick).expect("tick serializes"))?;
    }
    Ok(())
}
