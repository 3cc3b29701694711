//! End-to-end per-session processing: parse, synchronize, quality-filter,
//! retarget, validate, segment, and write the episode store entry.
//! Sessions are independent, so the batch path fans out with [`map_batch`]
//! and writes results in input order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{
    apply_annotations, detect_keyframes, normalize_task_label, segment, AnnotationSidecar,
    Episode, EpisodeError, EpisodeStore, SegmentRules, SourceKind,
};
use crate::exec::map_batch;
use crate::ingest::{parse_session, validate_session, IngestError, IngestReport, RawSession};
use crate::kinematics::{parse_urdf, KinematicsError, RobotModel};
use crate::profile::{ProfileError, RobotProfile};
use crate::quality::{
    check_motion_limits, downsample_stationary, filter_blurred, stationary_spans, QualityError,
    QualityProfile,
};
use crate::retarget::{
    calibrate_frames, retarget, validate_trajectory, QualityOutcome, RetargetError,
    RetargetedTrajectory, ValidationReport,
};
use crate::sync::{align_streams, SyncError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Load a robot profile and build its kinematic model. A relative
/// `urdf_path` resolves against the profile file's directory.
pub fn load_robot(profile_path: &Path) -> Result<(RobotProfile, RobotModel), PipelineError> {
    let profile = RobotProfile::load(profile_path)?;
    let urdf_path = {
        let p = PathBuf::from(&profile.urdf_path);
        if p.is_absolute() {
            p
        } else {
            profile_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let urdf = std::fs::read_to_string(&urdf_path).map_err(IngestError::from)?;
    let ees: Vec<(String, String)> = profile
        .arm_to_ee_link
        .iter()
        .map(|(a, l)| (a.clone(), l.clone()))
        .collect();
    let model = parse_urdf(&urdf)?.with_end_effectors(&ees)?;
    Ok((profile, model))
}

/// Everything produced for one session.
pub struct SessionOutcome {
    pub episode: Episode,
    pub trajectory: RetargetedTrajectory,
    pub report: ValidationReport,
    pub ingest_report: IngestReport,
    /// Per-tick camera_id -> frame path, on the trajectory tick grid.
    pub frames: Vec<BTreeMap<String, String>>,
}

/// Pipeline summary for logs and the CLI, one line per session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub verdict: crate::retarget::Verdict,
    pub ticks_in: usize,
    pub ticks_surviving: usize,
    pub chunks: usize,
}

/// Run the full pipeline on one parsed session. `tick_hz` overrides the
/// session's nominal video rate as the sync grid.
pub fn process_session(
    session: &RawSession,
    profile: &RobotProfile,
    model: &RobotModel,
    quality: &QualityProfile,
    tick_hz: Option<f64>,
) -> Result<SessionOutcome, PipelineError> {
    let ingest_report = validate_session(session);

    let synced = align_streams(
        session,
        tick_hz.unwrap_or(session.device_meta.nominal_video_hz),
    )?;

    // thin out stationary holds before everything downstream so the tick
    // grids of quality flags and the trajectory coincide
    let spans = stationary_spans(&synced, quality.stationary_window_ticks, quality.stationary_eps_m);
    let ticks_before = synced.ticks.len();
    let synced = downsample_stationary(&synced, &spans, quality.keep_period_ticks)?;
    let stationary_removed = ticks_before - synced.ticks.len();

    let blur = filter_blurred(&synced, quality.blur_threshold, &session.root);
    let motion_flags = check_motion_limits(&synced, quality.v_max_mps, quality.a_max_mps2)?;

    let calib = calibrate_frames(session, profile, model)?;
    let trajectory = retarget(&synced, &calib, model, profile, session.device_meta.gripper_kind)?;

    let outcome = QualityOutcome {
        blur_excluded: blur.excluded_ticks.clone(),
        motion_flags,
        stationary_removed,
    };
    let mut report = validate_trajectory(&trajectory, model, &outcome, profile)?;
    if let Some(w) = &calib.baseline_warning {
        report.warnings.push(w.clone());
    }
    report.warnings.extend(ingest_report.warnings.iter().cloned());

    let [_, width_max] = profile.width_range(session.device_meta.gripper_kind)?;
    let rules = SegmentRules::for_width(width_max);
    let mut chunks = segment(&trajectory, &rules);
    for chunk in &mut chunks {
        chunk.keyframes = detect_keyframes(chunk, &trajectory, &rules);
    }
    let sidecar_path = session.root.join("annotations.json");
    if sidecar_path.is_file() {
        if let Ok(text) = std::fs::read_to_string(&sidecar_path) {
            if let Ok(sidecar) = serde_json::from_str::<AnnotationSidecar>(&text) {
                apply_annotations(&mut chunks, &sidecar);
            }
        }
    }

    let duration = match trajectory.timestamps.as_slice() {
        [] => 0.0,
        [first, .., last] => last - first,
        [_] => 0.0,
    };
    let episode = Episode {
        episode_id: session.session_id.clone(),
        session_id: session.session_id.clone(),
        operator_id: session.operator_id.clone(),
        source: SourceKind::RobotFree,
        instruction: session.instruction.clone(),
        task_label: normalize_task_label(&session.instruction),
        chunks,
        duration,
        verdict: report.verdict,
        collected_at: session.collected_at.clone(),
    };

    let frames = synced
        .ticks
        .iter()
        .map(|tick| {
            tick.frames
                .iter()
                .map(|(cam, f)| (cam.clone(), f.image_path.clone()))
                .collect()
        })
        .collect();

    Ok(SessionOutcome {
        episode,
        trajectory,
        report,
        ingest_report,
        frames,
    })
}

/// Parse and process one bundle directory.
pub fn process_bundle(
    bundle_root: &Path,
    profile: &RobotProfile,
    model: &RobotModel,
    quality: &QualityProfile,
    tick_hz: Option<f64>,
) -> Result<SessionOutcome, PipelineError> {
    let session = parse_session(bundle_root)?;
    process_session(&session, profile, model, quality, tick_hz)
}

/// Process a batch of bundles (parallel when the `parallel` feature is
/// on) and write outcomes to the store sequentially, in input order, so
/// the store bytes never depend on scheduling. A failing session does not
/// abort the batch.
pub fn process_batch(
    bundles: &[PathBuf],
    profile: &RobotProfile,
    model: &RobotModel,
    quality: &QualityProfile,
    store: &EpisodeStore,
    tick_hz: Option<f64>,
) -> Vec<(PathBuf, Result<SessionSummary, PipelineError>)> {
    let outcomes = map_batch(bundles.to_vec(), |bundle| {
        let r = process_bundle(&bundle, profile, model, quality, tick_hz);
        (bundle, r)
    });
    outcomes
        .into_iter()
        .map(|(bundle, result)| {
            let summary = result.and_then(|outcome| {
                store.write(&outcome.episode, &outcome.trajectory, &outcome.report)?;
                store.write_frames(&outcome.episode.episode_id, &outcome.frames)?;
                Ok(SessionSummary {
                    session_id: outcome.episode.session_id.clone(),
                    verdict: outcome.report.verdict,
                    ticks_in: outcome.report.ticks_in,
                    ticks_surviving: outcome.report.ticks_surviving,
                    chunks: outcome.episode.chunks.len(),
                })
            });
            (bundle, summary)
        })
        .collect()
}
