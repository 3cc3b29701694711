//! g0-forge: a verification-and-retargeting pipeline that turns raw
//! wearable-capture demonstration sessions into validated, robot-ready,
//! training-ready episodes.
//!
//! The pipeline stages map onto modules:
//!
//! - [`ingest`]: parse and structurally validate raw session bundles
//! - [`sync`]: align pose, frame and instruction streams onto a tick grid
//! - [`quality`]: blur scoring, stationary downsampling, motion limits
//! - [`kinematics`]: URDF models, FK, Jacobians, DLS IK, self-collision
//! - [`retarget`]: calibration, end-effector mapping, kinematic validation
//! - [`episodes`]: sub-task segmentation, keyframes, corpus statistics
//! - [`assembly`]: mix manifests, playback export, training shards
//!
//! With the default `parallel` feature, batch stages fan out across
//! sessions with rayon; disabling it yields a fully sequential build with
//! identical outputs.

pub mod assembly;
pub mod episodes;
pub mod exec;
pub mod fixtures;
pub mod ingest;
pub mod kinematics;
pub mod math;
pub mod pipeline;
pub mod profile;
pub mod quality;
pub mod retarget;
pub mod sync;
