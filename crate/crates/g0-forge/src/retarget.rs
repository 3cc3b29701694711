//! Mapping human controller trajectories into the target robot's
//! end-effector space, plus the kinematic validation verdict.
//!
//! Calibration is rigid only: a baseline mismatch between the rig and the
//! robot is reported, never corrected by scaling, since scaling positions
//! would corrupt object-relative geometry.

use std::collections::BTreeMap;

use nalgebra::{Isometry3, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GripperKind, RawSession};
use crate::kinematics::{solve_ik_for_link, JointConfig, KinematicsError, RobotModel};
use crate::math::Pose6D;
use crate::profile::{ProfileError, RobotProfile};
use crate::quality::{MotionFlag, MotionFlagKind};
use crate::sync::SyncedSequence;

/// Baseline mismatch above this is reported as a warning, meters.
pub const BASELINE_WARN_M: f64 = 0.02;

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("session declares no calibration window")]
    NoCalibrationWindow,
    #[error("calibration window degenerate: {0}")]
    DegenerateWindow(String),
    #[error("trajectory and quality outputs disagree on tick count: {traj} vs {quality}")]
    TickGridMismatch { traj: usize, quality: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone)]
pub struct CalibrationTransform {
    /// Headset world frame -> robot base frame.
    pub world_to_base: Isometry3<f64>,
    /// arm_id -> controller frame -> gripper TCP.
    pub tool_offsets: BTreeMap<String, Isometry3<f64>>,
    /// Mean inter-gripper distance over the calibration window, meters.
    pub measured_baseline: f64,
    pub robot_baseline: f64,
    /// Set when |measured - robot| exceeds [`BASELINE_WARN_M`].
    pub baseline_warning: Option<String>,
}

impl CalibrationTransform {
    pub fn identity(profile: &RobotProfile) -> Self {
        Self {
            world_to_base: Isometry3::identity(),
            tool_offsets: profile
                .tool_offsets
                .iter()
                .map(|(arm, t)| (arm.clone(), t.to_isometry()))
                .collect(),
            measured_baseline: profile.baseline_m,
            robot_baseline: profile.baseline_m,
            baseline_warning: None,
        }
    }
}

/// Estimate the world-to-base transform from the calibration hold at the
/// start of a session: the mid-gripper point maps to the robot's
/// mid-baseline point, the left-to-right gripper direction maps to the
/// robot's left-to-right axis, and world up stays up. Rigid only.
pub fn calibrate_frames(
    session: &RawSession,
    profile: &RobotProfile,
    model: &RobotModel,
) -> Result<CalibrationTransform, RetargetError> {
    if session.calibration_ticks == 0 {
        return Err(RetargetError::NoCalibrationWindow);
    }
    let window = session.calibration_ticks as f64 / session.device_meta.nominal_video_hz;
    let (left, right) = (
        session.pose_streams.get("left"),
        session.pose_streams.get("right"),
    );
    let (Some(left), Some(right)) = (left, right) else {
        return Err(RetargetError::DegenerateWindow("missing arm stream".into()));
    };
    if left.is_empty() || right.is_empty() {
        return Err(RetargetError::DegenerateWindow("empty arm stream".into()));
    }
    let t0 = left[0].t.max(right[0].t);
    let t_end = t0 + window;

    // pair samples by index over the window; streams are same-rate on the rig
    let mut mid_sum = Vector3::zeros();
    let mut dir_sum = Vector3::zeros();
    let mut dist_sum = 0.0;
    let mut count = 0usize;
    for (l, r) in left.iter().zip(right.iter()) {
        if l.t > t_end {
            break;
        }
        let d = r.pose.translation - l.pose.translation;
        mid_sum += (l.pose.translation + r.pose.translation) / 2.0;
        dir_sum += d;
        dist_sum += d.norm();
        count += 1;
    }
    if count == 0 {
        return Err(RetargetError::NoCalibrationWindow);
    }
    let n = count as f64;
    let measured_mid = mid_sum / n;
    let measured_baseline = dist_sum / n;
    let measured_dir = dir_sum / n;
    if measured_dir.norm() < 1e-6 {
        return Err(RetargetError::DegenerateWindow(
            "grippers coincident, left-right direction undefined".into(),
        ));
    }
    let measured_dir = measured_dir.normalize();

    // robot-side reference: TCP positions at the profile home posture
    let home = full_home_config(model, profile)?;
    let left_link = model.end_effector_link("left")?.to_string();
    let right_link = model.end_effector_link("right")?.to_string();
    let p_left = model.forward_kinematics(&home, &left_link)?.translation;
    let p_right = model.forward_kinematics(&home, &right_link)?.translation;
    let robot_mid = (p_left + p_right) / 2.0;
    let robot_dir_raw = p_right - p_left;
    if robot_dir_raw.norm() < 1e-9 {
        return Err(RetargetError::DegenerateWindow(
            "robot home posture has coincident end effectors".into(),
        ));
    }
    let robot_dir = robot_dir_raw.normalize();

    let rotation = match (frame_from(&measured_dir), frame_from(&robot_dir)) {
        (Some(f_meas), Some(f_rob)) => {
            let m = f_rob * f_meas.transpose();
            UnitQuaternion::from_matrix(&m)
        }
        _ => {
            return Err(RetargetError::DegenerateWindow(
                "gripper baseline parallel to gravity".into(),
            ))
        }
    };
    let translation = robot_mid - rotation * measured_mid;

    let baseline_warning = if (measured_baseline - profile.baseline_m).abs() > BASELINE_WARN_M {
        Some(format!(
            "baseline mismatch: measured {measured_baseline:.4} m vs robot {:.4} m",
            profile.baseline_m
        ))
    } else {
        None
    };

    Ok(CalibrationTransform {
        world_to_base: Isometry3::from_parts(translation.into(), rotation),
        tool_offsets: profile
            .tool_offsets
            .iter()
            .map(|(arm, t)| (arm.clone(), t.to_isometry()))
            .collect(),
        measured_baseline,
        robot_baseline: profile.baseline_m,
        baseline_warning,
    })
}

/// Right-handed orthonormal frame with the first axis along `dir` and the
/// second in the plane of `dir` and world up. None when `dir` is
/// (anti)parallel to up.
fn frame_from(dir: &Vector3<f64>) -> Option<Matrix3<f64>> {
    let up = Vector3::z();
    let f2_raw = up - dir * up.dot(dir);
    if f2_raw.norm() < 1e-9 {
        return None;
    }
    let f2 = f2_raw.normalize();
    let f3 = dir.cross(&f2);
    Some(Matrix3::from_columns(&[*dir, f2, f3]))
}

/// Map a normalized gripper aperture to a physical width in meters.
pub fn map_gripper(
    aperture: f64,
    kind: GripperKind,
    profile: &RobotProfile,
) -> Result<f64, ProfileError> {
    let [min, max] = profile.width_range(kind)?;
    Ok(min + aperture.clamp(0.0, 1.0) * (max - min))
}

/// Expand per-arm home values from the profile into a full-model config.
pub fn full_home_config(
    model: &RobotModel,
    profile: &RobotProfile,
) -> Result<JointConfig, RetargetError> {
    let mut q = JointConfig(vec![0.0; model.dof()]);
    for (arm, values) in &profile.home_config {
        let idx = arm_joint_indices(model, arm)?;
        for (i, v) in idx.iter().zip(values.iter()) {
            q.0[*i] = *v;
        }
    }
    Ok(q)
}

/// Indices (into the non-fixed joint ordering) of the joints on the chain
/// to `arm`'s end effector, base to tip.
pub fn arm_joint_indices(model: &RobotModel, arm: &str) -> Result<Vec<usize>, RetargetError> {
    let ee = model.end_effector_link(arm)?.to_string();
    // walk tip-to-base, then reverse
    let mut chain = Vec::new();
    let mut current = ee;
    while current != model.base_frame {
        let Some(joint) = model.joints.iter().find(|j| j.child_link == current) else {
            break;
        };
        if joint.kind != crate::kinematics::JointKind::Fixed {
            chain.push(joint.name.clone());
        }
        current = joint.parent_link.clone();
    }
    chain.reverse();
    let order: Vec<&str> = model.non_fixed_joints().map(|j| j.name.as_str()).collect();
    Ok(chain
        .iter()
        .map(|name| order.iter().position(|n| n == name).expect("joint indexed"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    /// TCP target in the robot base frame.
    pub target: Pose6D,
    pub gripper_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTrack {
    pub waypoints: Vec<Waypoint>,
    /// Per-tick arm-local joint solution, paired with waypoint timestamps.
    pub joints: Vec<JointConfig>,
    /// Per-tick IK convergence.
    pub ik_converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetedTrajectory {
    pub session_id: String,
    pub arms: BTreeMap<String, ArmTrack>,
    /// Full-model joint solution per tick, for whole-robot checks.
    pub full_configs: Vec<JointConfig>,
    pub timestamps: Vec<f64>,
}

impl RetargetedTrajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// True when every arm's IK converged at tick `i`.
    pub fn converged_at(&self, i: usize) -> bool {
        self.arms.values().all(|a| a.ik_converged[i])
    }
}

/// Retarget a synced sequence: compose each controller pose with the tool
/// offset and the calibration transform, then track the TCP targets with
/// warm-started IK (previous tick's solution; one re-seed from home on
/// divergence before flagging).
pub fn retarget(
    sequence: &SyncedSequence,
    calib: &CalibrationTransform,
    model: &RobotModel,
    profile: &RobotProfile,
    gripper_kind: GripperKind,
) -> Result<RetargetedTrajectory, RetargetError> {
    let home = full_home_config(model, profile)?;
    let mut q_full = home.clone();

    let arm_ids: Vec<String> = model.end_effectors.iter().map(|(a, _)| a.clone()).collect();
    let mut arms: BTreeMap<String, ArmTrack> = arm_ids
        .iter()
        .map(|a| {
            (
                a.clone(),
                ArmTrack {
                    waypoints: Vec::with_capacity(sequence.ticks.len()),
                    joints: Vec::with_capacity(sequence.ticks.len()),
                    ik_converged: Vec::with_capacity(sequence.ticks.len()),
                },
            )
        })
        .collect();
    let mut full_configs = Vec::with_capacity(sequence.ticks.len());
    let mut timestamps = Vec::with_capacity(sequence.ticks.len());

    for tick in &sequence.ticks {
        for arm in &arm_ids {
            let ee_link = model.end_effector_link(arm)?.to_string();
            let sample = &tick.poses[arm];
            let tool = calib
                .tool_offsets
                .get(arm)
                .copied()
                .unwrap_or_else(Isometry3::identity);
            let target_iso = calib.world_to_base * sample.pose.to_isometry() * tool;
            let target = Pose6D::from_isometry(&target_iso);

            let mut result = solve_ik_for_link(model, &target, &ee_link, &q_full, &profile.ik)?;
            if !result.converged {
                // single re-seed from home, then accept the better attempt
                let retry = solve_ik_for_link(model, &target, &ee_link, &home, &profile.ik)?;
                if retry.converged
                    || retry.position_error + retry.orientation_error
                        < result.position_error + result.orientation_error
                {
                    result = retry;
                }
            }
            if result.converged {
                q_full = result.solution.clone();
            }

            let idx = arm_joint_indices(model, arm)?;
            let arm_joints = JointConfig(idx.iter().map(|&i| result.solution.0[i]).collect());
            let width = map_gripper(sample.gripper_aperture, gripper_kind, profile)?;
            let track = arms.get_mut(arm).expect("track exists");
            track.waypoints.push(Waypoint {
                t: tick.t,
                target,
                gripper_width: width,
            });
            track.joints.push(arm_joints);
            track.ik_converged.push(result.converged);
        }
        full_configs.push(q_full.clone());
        timestamps.push(tick.t);
    }

    Ok(RetargetedTrajectory {
        session_id: sequence.session_id.clone(),
        arms,
        full_configs,
        timestamps,
    })
}

/// Why a tick was excluded; variants are ordered by attribution priority
/// (highest first), so a tick failing several checks is counted once
/// under the first one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Blurred,
    OverVelocity,
    IkNotConverged,
    JointLimit,
    Singular,
    SelfCollision,
}

impl ExclusionReason {
    pub fn is_hard_failure(&self) -> bool {
        matches!(
            self,
            ExclusionReason::IkNotConverged
                | ExclusionReason::JointLimit
                | ExclusionReason::SelfCollision
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckCounts {
    pub blurred: usize,
    pub stationary_removed: usize,
    pub ik_not_converged: usize,
    pub joint_limit: usize,
    pub singular: usize,
    pub self_collision: usize,
    pub over_velocity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidSegment {
    pub start_t: f64,
    pub end_t: f64,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub session_id: String,
    /// Ticks entering validation (post-downsampling).
    pub ticks_in: usize,
    pub ticks_surviving: usize,
    pub counts: CheckCounts,
    pub invalid_segments: Vec<InvalidSegment>,
    pub verdict: Verdict,
    /// ticks_surviving / ticks_in.
    pub survival_fraction: f64,
    pub warnings: Vec<String>,
}

/// Fraction of post-downsampling ticks that must survive for a valid
/// verdict (with zero hard failures).
pub const VALID_COVERAGE_FRACTION: f64 = 0.95;

/// Quality-stage outputs consumed by validation, on the same tick grid as
/// the retargeted trajectory.
#[derive(Debug, Clone, Default)]
pub struct QualityOutcome {
    /// Ticks excluded for egocentric blur.
    pub blur_excluded: Vec<usize>,
    pub motion_flags: Vec<MotionFlag>,
    /// Ticks removed earlier by stationary downsampling (count only).
    pub stationary_removed: usize,
}

/// Run every kinematic check over the trajectory, merge in the quality
/// flags, attribute each failing tick to exactly one reason and assemble
/// the per-session verdict.
pub fn validate_trajectory(
    traj: &RetargetedTrajectory,
    model: &RobotModel,
    quality: &QualityOutcome,
    profile: &RobotProfile,
) -> Result<ValidationReport, RetargetError> {
    let n = traj.len();
    if let Some(&bad) = quality.blur_excluded.iter().find(|&&i| i >= n) {
        return Err(RetargetError::TickGridMismatch {
            traj: n,
            quality: bad + 1,
        });
    }
    if let Some(bad) = quality.motion_flags.iter().find(|f| f.tick >= n) {
        return Err(RetargetError::TickGridMismatch {
            traj: n,
            quality: bad.tick + 1,
        });
    }

    let mut reasons: Vec<Option<ExclusionReason>> = vec![None; n];
    let assign = |i: usize, r: ExclusionReason, reasons: &mut Vec<Option<ExclusionReason>>| {
        match reasons[i] {
            Some(existing) if existing <= r => {}
            _ => reasons[i] = Some(r),
        }
    };

    for &i in &quality.blur_excluded {
        assign(i, ExclusionReason::Blurred, &mut reasons);
    }
    for flag in &quality.motion_flags {
        if flag.kind == MotionFlagKind::OverVelocity
            || flag.kind == MotionFlagKind::OverAcceleration
        {
            assign(flag.tick, ExclusionReason::OverVelocity, &mut reasons);
        }
    }

    for i in 0..n {
        if !traj.converged_at(i) {
            assign(i, ExclusionReason::IkNotConverged, &mut reasons);
            continue;
        }
        let q = &traj.full_configs[i];
        if !model
            .check_joint_limits(q, profile.joint_limit_margin)?
            .is_empty()
        {
            assign(i, ExclusionReason::JointLimit, &mut reasons);
        }
        for (arm, _) in &model.end_effectors {
            let ee = model.end_effector_link(arm)?.to_string();
            let jac = model.jacobian(q, &ee)?;
            let idx = arm_joint_indices(model, arm)?;
            let arm_jac = jac.select_columns(&idx);
            if crate::kinematics::manipulability(&arm_jac) < profile.w_min_manipulability {
                assign(i, ExclusionReason::Singular, &mut reasons);
            }
        }
        if !model.check_self_collision(q)?.is_empty() {
            assign(i, ExclusionReason::SelfCollision, &mut reasons);
        }
    }

    let mut counts = CheckCounts {
        stationary_removed: quality.stationary_removed,
        ..CheckCounts::default()
    };
    for r in reasons.iter().flatten() {
        match r {
            ExclusionReason::Blurred => counts.blurred += 1,
            ExclusionReason::OverVelocity => counts.over_velocity += 1,
            ExclusionReason::IkNotConverged => counts.ik_not_converged += 1,
            ExclusionReason::JointLimit => counts.joint_limit += 1,
            ExclusionReason::Singular => counts.singular += 1,
            ExclusionReason::SelfCollision => counts.self_collision += 1,
        }
    }

    let mut invalid_segments = Vec::new();
    let mut i = 0usize;
    while i < n {
        if let Some(r) = reasons[i] {
            let start = i;
            let mut top = r;
            while i + 1 < n {
                if let Some(next) = reasons[i + 1] {
                    i += 1;
                    top = top.min(next);
                } else {
                    break;
                }
            }
            invalid_segments.push(InvalidSegment {
                start_t: traj.timestamps[start],
                end_t: traj.timestamps[i],
                reason: top,
            });
        }
        i += 1;
    }

    let excluded = reasons.iter().flatten().count();
    let surviving = n - excluded;
    let survival_fraction = if n > 0 { surviving as f64 / n as f64 } else { 0.0 };
    let hard_failures = counts.ik_not_converged + counts.joint_limit + counts.self_collision;
    let verdict = if hard_failures == 0 && survival_fraction >= VALID_COVERAGE_FRACTION {
        Verdict::Valid
    } else {
        Verdict::Invalid
    };

    Ok(ValidationReport {
        session_id: traj.session_id.clone(),
        ticks_in: n,
        ticks_surviving: surviving,
        counts,
        invalid_segments,
        verdict,
        survival_fraction,
        warnings: Vec::new(),
    })
}
