use std::collections::HashMap;

use nalgebra::{DMatrix, Isometry3, UnitVector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::collision::Capsule;
use crate::math::Pose6D;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("malformed URDF XML: {0}")]
    MalformedXml(String),
    #[error("kinematic tree contains a cycle involving link '{0}'")]
    CyclicKinematicTree(String),
    #[error("joint '{joint}' references undeclared parent link '{link}'")]
    DanglingParentLink { joint: String, link: String },
    #[error("non-fixed joint '{0}' has no axis element")]
    MissingAxis(String),
    #[error("unknown link '{0}'")]
    UnknownLink(String),
    #[error("unknown arm '{0}'")]
    UnknownArm(String),
    #[error("joint config has {got} values, model expects {expected}")]
    ConfigLengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

/// One URDF joint. `origin` is the static transform from the parent link
/// frame to the joint frame; the joint motion is applied after it.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: UnitVector3<f64>,
    pub origin: Isometry3<f64>,
    pub parent_link: String,
    pub child_link: String,
    pub limit_lower: f64,
    pub limit_upper: f64,
    pub velocity_limit: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub collision_capsules: Vec<Capsule>,
}

/// Joint values for the non-fixed joints of a model, in joint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub joint: String,
    pub value: f64,
    /// "lower" or "upper".
    pub bound: String,
}

/// Kinematic chain parsed from URDF. Joints are stored in topological
/// order (every joint's parent link appears earlier or is the base), so a
/// single forward pass computes all link poses.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub base_frame: String,
    /// (arm_id, end-effector link) pairs, assigned from the robot profile.
    pub end_effectors: Vec<(String, String)>,
    /// Link pairs eligible for self-collision testing. Adjacent
    /// (parent/child) pairs are excluded at construction.
    pub collision_pairs: Vec<(String, String)>,
    /// Non-fatal notes recorded while parsing (skipped elements etc).
    pub warnings: Vec<String>,
}

impl RobotModel {
    /// Number of non-fixed joints.
    pub fn dof(&self) -> usize {
        self.joints.iter().filter(|j| j.kind != JointKind::Fixed).count()
    }

    pub fn non_fixed_joints(&self) -> impl Iterator<Item = &Joint> {
        self.joints.iter().filter(|j| j.kind != JointKind::Fixed)
    }

    pub fn link(&self, name: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn end_effector_link(&self, arm: &str) -> Result<&str, KinematicsError> {
        self.end_effectors
            .iter()
            .find(|(a, _)| a == arm)
            .map(|(_, l)| l.as_str())
            .ok_or_else(|| KinematicsError::UnknownArm(arm.to_string()))
    }

    /// Attach (arm_id, ee link) pairs, checking the links exist.
    pub fn with_end_effectors(
        mut self,
        ees: &[(String, String)],
    ) -> Result<Self, KinematicsError> {
        for (_, link) in ees {
            if self.link(link).is_none() {
                return Err(KinematicsError::UnknownLink(link.clone()));
            }
        }
        self.end_effectors = ees.to_vec();
        Ok(self)
    }

    fn check_config(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::ConfigLengthMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Pose of every link in the base frame at configuration `q`.
    pub fn link_poses(
        &self,
        q: &JointConfig,
    ) -> Result<HashMap<String, Isometry3<f64>>, KinematicsError> {
        self.check_config(q)?;
        let mut poses = HashMap::with_capacity(self.links.len());
        poses.insert(self.base_frame.clone(), Isometry3::identity());
        let mut qi = 0usize;
        for joint in &self.joints {
            let parent = poses[&joint.parent_link];
            let motion = match joint.kind {
                JointKind::Fixed => Isometry3::identity(),
                JointKind::Revolute => {
                    let v = q.0[qi];
                    qi += 1;
                    Isometry3::rotation(joint.axis.into_inner() * v)
                }
                JointKind::Prismatic => {
                    let v = q.0[qi];
                    qi += 1;
                    Isometry3::translation(
                        joint.axis.x * v,
                        joint.axis.y * v,
                        joint.axis.z * v,
                    )
                }
            };
            poses.insert(joint.child_link.clone(), parent * joint.origin * motion);
        }
        Ok(poses)
    }

    /// Pose of `link` in the base frame at configuration `q`.
    pub fn forward_kinematics(
        &self,
        q: &JointConfig,
        link: &str,
    ) -> Result<Pose6D, KinematicsError> {
        if self.link(link).is_none() && link != self.base_frame {
            return Err(KinematicsError::UnknownLink(link.to_string()));
        }
        let poses = self.link_poses(q)?;
        Ok(Pose6D::from_isometry(&poses[link]))
    }

    /// Geometric Jacobian of `link` at `q`: rows are linear xyz then
    /// angular xyz, one column per non-fixed joint. Columns for joints off
    /// the path to `link` are zero.
    pub fn jacobian(&self, q: &JointConfig, link: &str) -> Result<DMatrix<f64>, KinematicsError> {
        if self.link(link).is_none() && link != self.base_frame {
            return Err(KinematicsError::UnknownLink(link.to_string()));
        }
        self.check_config(q)?;
        let poses = self.link_poses(q)?;
        let p_ee = poses[link].translation.vector;
        let on_path = self.path_joints(link);

        let mut jac = DMatrix::zeros(6, self.dof());
        let mut qi = 0usize;
        for joint in &self.joints {
            if joint.kind == JointKind::Fixed {
                continue;
            }
            if on_path.contains(&joint.name) {
                let joint_frame = poses[&joint.parent_link] * joint.origin;
                let axis_w = joint_frame.rotation * joint.axis.into_inner();
                match joint.kind {
                    JointKind::Revolute => {
                        let arm = p_ee - joint_frame.translation.vector;
                        let lin = axis_w.cross(&arm);
                        for r in 0..3 {
                            jac[(r, qi)] = lin[r];
                            jac[(r + 3, qi)] = axis_w[r];
                        }
                    }
                    JointKind::Prismatic => {
                        for r in 0..3 {
                            jac[(r, qi)] = axis_w[r];
                        }
                    }
                    JointKind::Fixed => unreachable!(),
                }
            }
            qi += 1;
        }
        Ok(jac)
    }

    /// Names of joints on the chain from base to `link`.
    pub(crate) fn path_joints(&self, link: &str) -> Vec<String> {
        let mut names = Vec::new();
        let mut current = link.to_string();
        while current != self.base_frame {
            match self.joints.iter().find(|j| j.child_link == current) {
                Some(j) => {
                    names.push(j.name.clone());
                    current = j.parent_link.clone();
                }
                None => break,
            }
        }
        names
    }

    /// Joints whose value leaves `[lower + margin, upper - margin]`.
    pub fn check_joint_limits(
        &self,
        q: &JointConfig,
        margin: f64,
    ) -> Result<Vec<LimitViolation>, KinematicsError> {
        self.check_config(q)?;
        let mut out = Vec::new();
        for (joint, &value) in self.non_fixed_joints().zip(q.0.iter()) {
            if value < joint.limit_lower + margin {
                out.push(LimitViolation {
                    joint: joint.name.clone(),
                    value,
                    bound: "lower".into(),
                });
            } else if value > joint.limit_upper - margin {
                out.push(LimitViolation {
                    joint: joint.name.clone(),
                    value,
                    bound: "upper".into(),
                });
            }
        }
        Ok(out)
    }

    /// Collision pairs whose capsules overlap at `q`.
    pub fn check_self_collision(
        &self,
        q: &JointConfig,
    ) -> Result<Vec<(String, String)>, KinematicsError> {
        let poses = self.link_poses(q)?;
        let mut out = Vec::new();
        for (a, b) in &self.collision_pairs {
            let (la, lb) = match (self.link(a), self.link(b)) {
                (Some(la), Some(lb)) => (la, lb),
                _ => continue,
            };
            let hit = la.collision_capsules.iter().any(|ca| {
                lb.collision_capsules.iter().any(|cb| {
                    let ca_w = ca.transformed(&poses[a]);
                    let cb_w = cb.transformed(&poses[b]);
                    ca_w.intersects(&cb_w)
                })
            });
            if hit {
                out.push((a.clone(), b.clone()));
            }
        }
        Ok(out)
    }

    /// Clamp each value of `q` into its joint's limits, in place.
    pub fn clamp_to_limits(&self, q: &mut JointConfig) {
        for (joint, value) in self.non_fixed_joints().zip(q.0.iter_mut()) {
            *value = value.clamp(joint.limit_lower, joint.limit_upper);
        }
    }
}
