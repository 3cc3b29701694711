//! Robot profile: the per-robot configuration file tying a URDF to the
//! pipeline (end-effector links, home posture, tool offsets, gripper
//! width maps, validation thresholds).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Translation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GripperKind;
use crate::kinematics::IkParams;
use crate::math::Pose6D;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid profile JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown gripper kind")]
    UnknownGripperKind,
}

/// A rigid transform as stored in profile JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidTransformSpec {
    pub xyz: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub wxyz: [f64; 4],
}

impl RigidTransformSpec {
    pub fn identity() -> Self {
        Self { xyz: [0.0; 3], wxyz: [1.0, 0.0, 0.0, 0.0] }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let p = Pose6D::from_parts(self.xyz, self.wxyz);
        Isometry3::from_parts(Translation3::from(p.translation), p.quaternion())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotProfile {
    pub robot_name: String,
    /// URDF location, relative to the profile file's directory when not
    /// absolute.
    pub urdf_path: String,
    /// arm_id -> end-effector link name.
    pub arm_to_ee_link: BTreeMap<String, String>,
    /// arm_id -> per-arm home joint values (base-to-tip order).
    pub home_config: BTreeMap<String, Vec<f64>>,
    /// Inter-arm baseline of the physical robot, meters.
    pub baseline_m: f64,
    /// arm_id -> controller-frame-to-TCP transform.
    pub tool_offsets: BTreeMap<String, RigidTransformSpec>,
    /// Gripper kind -> [width_min, width_max] in meters.
    pub gripper_widths: BTreeMap<String, [f64; 2]>,
    /// Manipulability threshold below which a sample is flagged singular.
    pub w_min_manipulability: f64,
    /// Margin applied to the joint-limit check during validation, rad/m.
    #[serde(default)]
    pub joint_limit_margin: f64,
    pub ik: IkParams,
}

impl RobotProfile {
    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn width_range(&self, kind: GripperKind) -> Result<[f64; 2], ProfileError> {
        let key = match kind {
            GripperKind::H => "H",
            GripperKind::G => "G",
        };
        self.gripper_widths
            .get(key)
            .copied()
            .ok_or(ProfileError::UnknownGripperKind)
    }
}
