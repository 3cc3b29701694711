//! Kinematic model of the target robot: URDF parsing, forward kinematics,
//! Jacobians, damped-least-squares IK, manipulability and self-collision
//! checks. Everything here is a pure function of its inputs; a parsed
//! [`RobotModel`] is immutable and safe to share across threads.

mod collision;
mod ik;
mod model;
mod urdf;

pub use collision::{segment_segment_distance, Capsule};
pub use ik::{manipulability, solve_ik, solve_ik_for_link, IkParams, IkResult};
pub use model::{
    Joint, JointConfig, JointKind, KinematicsError, LimitViolation, Link, RobotModel,
};
pub use urdf::parse_urdf;
