//! Parsing and structural validation of raw capture session bundles.
//!
//! A bundle is a directory:
//!
//! ```text
//! <session_id>/
//!   meta.json
//!   instruction.txt
//!   poses_left.jsonl
//!   poses_right.jsonl
//!   frames/<camera_id>/index.jsonl
//!   frames/<camera_id>/*.pgm|*.png
//! ```
//!
//! Timestamps are double-precision seconds on a per-session monotonic
//! epoch; wall-clock time lives only in `meta.json`. Parsing never
//! mutates input files and sessions are immutable once parsed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Pose6D;

/// The dual-gripper rig always records these two pose streams.
pub const ARM_IDS: [&str; 2] = ["left", "right"];

/// Default length (in ticks at video rate) of the calibration hold at the
/// start of a session.
pub const DEFAULT_CALIBRATION_TICKS: usize = 30;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{file}:{line}: schema violation in field '{field}': {detail}")]
    SchemaViolation {
        file: String,
        line: usize,
        field: String,
        detail: String,
    },
    #[error("non-monotonic timestamp in stream '{stream}' at index {index}")]
    NonMonotonicTimestamp { stream: String, index: usize },
    #[error("aperture {value} out of [0,1] in stream '{stream}' at line {line}")]
    ApertureOutOfRange {
        stream: String,
        line: usize,
        value: f64,
    },
    #[error("frame stream count {found} outside [1, {max}]")]
    BadCameraCount { found: usize, max: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GripperKind {
    H,
    G,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceMeta {
    pub gripper_kind: GripperKind,
    pub nominal_pose_hz: f64,
    pub nominal_video_hz: f64,
    pub baseline_distance_m: f64,
    pub camera_count: u32,
}

/// One timestamped controller sample: 6-DoF pose plus gripper state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub pose: Pose6D,
    /// Normalized [0,1]; 0 closed, 1 fully open.
    pub gripper_aperture: f64,
    /// Tracker confidence [0,1]; 1.0 when the device does not report one.
    pub tracking_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub t: f64,
    pub camera_id: String,
    /// Relative to the bundle root.
    pub image_path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct RawSession {
    pub session_id: String,
    pub operator_id: String,
    pub device_meta: DeviceMeta,
    pub instruction: String,
    pub pose_streams: BTreeMap<String, Vec<PoseSample>>,
    pub frame_streams: BTreeMap<String, Vec<FrameRef>>,
    /// Wall-clock collection time, RFC 3339.
    pub collected_at: String,
    /// Ticks at the start of the session holding the calibration posture.
    pub calibration_ticks: usize,
    /// Bundle root, for resolving frame paths.
    pub root: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaFile {
    session_id: String,
    operator_id: String,
    gripper_kind: GripperKind,
    nominal_pose_hz: f64,
    nominal_video_hz: f64,
    baseline_distance_m: f64,
    camera_count: u32,
    collected_at: String,
    #[serde(default)]
    calibration_ticks: Option<usize>,
    /// Reserved for tactile/auditory streams; carried through unprocessed.
    #[serde(default)]
    extra_modalities: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    t: f64,
    p: [f64; 3],
    q: [f64; 4],
    aperture: f64,
    #[serde(default)]
    conf: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    path: String,
    w: u32,
    h: u32,
}

pub fn parse_session(bundle_root: &Path) -> Result<RawSession, IngestError> {
    let meta_path = bundle_root.join("meta.json");
    if !meta_path.is_file() {
        return Err(IngestError::MissingFile("meta.json".into()));
    }
    let meta: MetaFile = serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| {
        IngestError::SchemaViolation {
            file: "meta.json".into(),
            line: e.line(),
            field: "meta".into(),
            detail: e.to_string(),
        }
    })?;

    let instruction_path = bundle_root.join("instruction.txt");
    if !instruction_path.is_file() {
        return Err(IngestError::MissingFile("instruction.txt".into()));
    }
    let instruction = fs::read_to_string(&instruction_path)?.trim().to_string();

    let mut pose_streams = BTreeMap::new();
    for arm in ARM_IDS {
        let name = format!("poses_{arm}.jsonl");
        let path = bundle_root.join(&name);
        if !path.is_file() {
            return Err(IngestError::MissingFile(name));
        }
        pose_streams.insert(arm.to_string(), parse_pose_stream(&path, arm)?);
    }

    let frames_dir = bundle_root.join("frames");
    let mut frame_streams = BTreeMap::new();
    if frames_dir.is_dir() {
        let mut cams: Vec<PathBuf> = fs::read_dir(&frames_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        cams.sort();
        for cam_dir in cams {
            let camera_id = cam_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let index = cam_dir.join("index.jsonl");
            if !index.is_file() {
                return Err(IngestError::MissingFile(format!(
                    "frames/{camera_id}/index.jsonl"
                )));
            }
            frame_streams.insert(
                camera_id.clone(),
                parse_frame_stream(&index, &camera_id)?,
            );
        }
    }
    if frame_streams.is_empty() || frame_streams.len() > meta.camera_count as usize {
        return Err(IngestError::BadCameraCount {
            found: frame_streams.len(),
            max: meta.camera_count,
        });
    }

    Ok(RawSession {
        session_id: meta.session_id,
        operator_id: meta.operator_id,
        device_meta: DeviceMeta {
            gripper_kind: meta.gripper_kind,
            nominal_pose_hz: meta.nominal_pose_hz,
            nominal_video_hz: meta.nominal_video_hz,
            baseline_distance_m: meta.baseline_distance_m,
            camera_count: meta.camera_count,
        },
        instruction,
        pose_streams,
        frame_streams,
        collected_at: meta.collected_at,
        calibration_ticks: meta.calibration_ticks.unwrap_or(DEFAULT_CALIBRATION_TICKS),
        root: bundle_root.to_path_buf(),
    })
}

fn parse_pose_stream(path: &Path, arm: &str) -> Result<Vec<PoseSample>, IngestError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::SchemaViolation {
                file: file_name.clone(),
                line: i + 1,
                field: "pose record".into(),
                detail: e.to_string(),
            })?;
        if !rec.t.is_finite() {
            return Err(IngestError::SchemaViolation {
                file: file_name.clone(),
                line: i + 1,
                field: "t".into(),
                detail: "non-finite timestamp".into(),
            });
        }
        if !(0.0..=1.0).contains(&rec.aperture) {
            return Err(IngestError::ApertureOutOfRange {
                stream: arm.to_string(),
                line: i + 1,
                value: rec.aperture,
            });
        }
        if let Some(last) = out.last() {
            let last: &PoseSample = last;
            if rec.t <= last.t {
                return Err(IngestError::NonMonotonicTimestamp {
                    stream: arm.to_string(),
                    index: i + 1,
                });
            }
        }
        out.push(PoseSample {
            t: rec.t,
            pose: Pose6D::from_parts(rec.p, rec.q),
            gripper_aperture: rec.aperture,
            tracking_confidence: rec.conf.unwrap_or(1.0),
        });
    }
    Ok(out)
}

fn parse_frame_stream(path: &Path, camera_id: &str) -> Result<Vec<FrameRef>, IngestError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out: Vec<FrameRef> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::SchemaViolation {
                file: format!("frames/{camera_id}/index.jsonl"),
                line: i + 1,
                field: "frame record".into(),
                detail: e.to_string(),
            })?;
        if rec.w == 0 || rec.h == 0 {
            return Err(IngestError::SchemaViolation {
                file: format!("frames/{camera_id}/index.jsonl"),
                line: i + 1,
                field: "w/h".into(),
                detail: "zero frame dimension".into(),
            });
        }
        if let Some(last) = out.last() {
            if rec.t <= last.t {
                return Err(IngestError::NonMonotonicTimestamp {
                    stream: format!("video:{camera_id}"),
                    index: i + 1,
                });
            }
        }
        out.push(FrameRef {
            t: rec.t,
            camera_id: camera_id.to_string(),
            image_path: rec.path,
            width: rec.w,
            height: rec.h,
        });
    }
    Ok(out)
}

/// Write a session back out as a bundle. Inverse of [`parse_session`]:
/// re-parsing the written bundle yields a structurally equal session.
/// Frame image files are not copied, only referenced.
pub fn write_session(session: &RawSession, bundle_root: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(bundle_root)?;
    let meta = MetaFile {
        session_id: session.session_id.clone(),
        operator_id: session.operator_id.clone(),
        gripper_kind: session.device_meta.gripper_kind,
        nominal_pose_hz: session.device_meta.nominal_pose_hz,
        nominal_video_hz: session.device_meta.nominal_video_hz,
        baseline_distance_m: session.device_meta.baseline_distance_m,
        camera_count: session.device_meta.camera_count,
        collected_at: session.collected_at.clone(),
        calibration_ticks: Some(session.calibration_ticks),
        extra_modalities: Vec::new(),
    };
    fs::write(
        bundle_root.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )?;
    fs::write(bundle_root.join("instruction.txt"), &session.instruction)?;

    for arm in ARM_IDS {
        let samples = session
            .pose_streams
            .get(arm)
            .map(Vec::as_slice)
            .unwrap_or_default();
        let mut f = fs::File::create(bundle_root.join(format!("poses_{arm}.jsonl")))?;
        for s in samples {
            let rec = PoseRecord {
                t: s.t,
                p: [s.pose.translation.x, s.pose.translation.y, s.pose.translation.z],
                q: s.pose.rotation,
                aperture: s.gripper_aperture,
                conf: Some(s.tracking_confidence),
            };
            writeln!(f, "{}", serde_json::to_string(&rec).expect("pose serializes"))?;
        }
    }

    for (camera_id, frames) in &session.frame_streams {
        let dir = bundle_root.join("frames").join(camera_id);
        fs::create_dir_all(&dir)?;
        let mut f = fs::File::create(dir.join("index.jsonl"))?;
        for fr in frames {
            let rec = FrameRecord {
                t: fr.t,
                path: fr.image_path.clone(),
                w: fr.width,
                h: fr.height,
            };
            writeln!(f, "{}", serde_json::to_string(&rec).expect("frame serializes"))?;
        }
    }
    Ok(())
}

/// A gap in a stream: an interval between consecutive samples longer than
/// three nominal periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamGap {
    pub stream: String,
    pub start_t: f64,
    pub end_t: f64,
}

/// Informational health report for a parsed session; never rejects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub session_id: String,
    pub pose_counts: BTreeMap<String, usize>,
    pub frame_counts: BTreeMap<String, usize>,
    /// Median 1/dt per pose stream, Hz.
    pub measured_pose_hz: BTreeMap<String, f64>,
    pub measured_video_hz: BTreeMap<String, f64>,
    pub gaps: Vec<StreamGap>,
    /// (arm, t) where tracking confidence dipped below 0.5.
    pub confidence_dips: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

fn median_rate(ts: &[f64]) -> f64 {
    let mut dts: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if dts.is_empty() {
        return 0.0;
    }
    dts.sort_by(|a, b| a.total_cmp(b));
    let mid = dts.len() / 2;
    let dt = if dts.len() % 2 == 1 {
        dts[mid]
    } else {
        (dts[mid - 1] + dts[mid]) / 2.0
    };
    if dt > 0.0 {
        1.0 / dt
    } else {
        0.0
    }
}

fn find_gaps(stream: &str, ts: &[f64], nominal_hz: f64) -> Vec<StreamGap> {
    let threshold = 3.0 / nominal_hz;
    ts.windows(2)
        .filter(|w| w[1] - w[0] > threshold)
        .map(|w| StreamGap {
            stream: stream.to_string(),
            start_t: w[0],
            end_t: w[1],
        })
        .collect()
}

pub fn validate_session(session: &RawSession) -> IngestReport {
    let mut report = IngestReport {
        session_id: session.session_id.clone(),
        pose_counts: BTreeMap::new(),
        frame_counts: BTreeMap::new(),
        measured_pose_hz: BTreeMap::new(),
        measured_video_hz: BTreeMap::new(),
        gaps: Vec::new(),
        confidence_dips: Vec::new(),
        warnings: Vec::new(),
    };
    for (arm, samples) in &session.pose_streams {
        let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
        report.pose_counts.insert(arm.clone(), samples.len());
        report
            .measured_pose_hz
            .insert(arm.clone(), median_rate(&ts));
        report.gaps.extend(find_gaps(
            &format!("pose:{arm}"),
            &ts,
            session.device_meta.nominal_pose_hz,
        ));
        for s in samples {
            if s.tracking_confidence < 0.5 {
                report.confidence_dips.push((arm.clone(), s.t));
            }
        }
    }
    for (cam, frames) in &session.frame_streams {
        let ts: Vec<f64> = frames.iter().map(|f| f.t).collect();
        report.frame_counts.insert(cam.clone(), frames.len());
        report
            .measured_video_hz
            .insert(cam.clone(), median_rate(&ts));
        report.gaps.extend(find_gaps(
            &format!("video:{cam}"),
            &ts,
            session.device_meta.nominal_video_hz,
        ));
        if frames.is_empty() {
            report
                .warnings
                .push(format!("camera '{cam}' declared but has no frames"));
        }
        for f in frames {
            if !session.root.join(&f.image_path).is_file() {
                report
                    .warnings
                    .push(format!("camera '{cam}': missing frame file {}", f.image_path));
            }
        }
    }
    report
}
