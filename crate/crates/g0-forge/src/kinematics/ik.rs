//! Damped least squares inverse kinematics and the Yoshikawa
//! manipulability measure.
//!
//! The iteration is dq = J^T (J J^T + lambda^2 I)^-1 e with the 6-vector
//! error e stacking position error and the rotation-vector orientation
//! error. Steps are clamped per joint and joint values are clamped into
//! limits every iteration, so the solver degrades gracefully near
//! singularities and at the workspace boundary instead of diverging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{JointConfig, KinematicsError, RobotModel};
use crate::math::{Pose6D, SplitMix64};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IkParams {
    /// Position convergence tolerance, meters.
    pub position_tol: f64,
    /// Orientation convergence tolerance, radians (geodesic angle).
    pub orientation_tol: f64,
    /// Damping factor lambda.
    pub damping: f64,
    pub max_iters: usize,
    /// Per-joint step clamp, rad or m per iteration.
    pub max_step: f64,
    /// Deterministic random restarts tried when the seeded attempt fails
    /// to converge (DLS from a single seed stalls in local minima for
    /// distant targets). 0 disables restarts.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    16
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            position_tol: 0.004,
            orientation_tol: 0.01,
            damping: 0.05,
            max_iters: 200,
            max_step: 0.2,
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub solution: JointConfig,
    pub position_error: f64,
    pub orientation_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve IK for the end effector registered under `arm`.
pub fn solve_ik(
    model: &RobotModel,
    target: &Pose6D,
    arm: &str,
    seed: &JointConfig,
    params: &IkParams,
) -> Result<IkResult, KinematicsError> {
    let link = model.end_effector_link(arm)?.to_string();
    solve_ik_for_link(model, target, &link, seed, params)
}

/// Solve IK for an explicit link. Non-convergence is reported in the
/// result, not as an error; callers classify.
///
/// If the seeded attempt fails, up to `params.restarts` further attempts
/// are made from deterministically sampled seeds that only vary the
/// joints on the chain to `link`; the best attempt is returned. The whole
/// procedure is a pure function of its arguments.
pub fn solve_ik_for_link(
    model: &RobotModel,
    target: &Pose6D,
    link: &str,
    seed: &JointConfig,
    params: &IkParams,
) -> Result<IkResult, KinematicsError> {
    let first = solve_once(model, target, link, seed, params)?;
    if first.converged || params.restarts == 0 {
        return Ok(first);
    }

    let chain: Vec<usize> = {
        let on_path = model.path_joints(link);
        model
            .non_fixed_joints()
            .enumerate()
            .filter(|(_, j)| on_path.contains(&j.name))
            .map(|(i, _)| i)
            .collect()
    };
    let spans: Vec<(f64, f64)> = {
        let joints: Vec<_> = model.non_fixed_joints().collect();
        chain
            .iter()
            .map(|&i| (joints[i].limit_lower, joints[i].limit_upper))
            .collect()
    };

    let mut rng = SplitMix64(0x6730_666f_7267_6531);
    let mut best = first;
    for _ in 0..params.restarts {
        let mut q = seed.clone();
        for (&i, &(lo, hi)) in chain.iter().zip(&spans) {
            q.0[i] = lo + rng.next_f64() * (hi - lo);
        }
        let attempt = solve_once(model, target, link, &q, params)?;
        if attempt.converged {
            return Ok(attempt);
        }
        if attempt.position_error + attempt.orientation_error
            < best.position_error + best.orientation_error
        {
            best = attempt;
        }
    }
    Ok(best)
}

/// One DLS descent from a single seed.
fn solve_once(
    model: &RobotModel,
    target: &Pose6D,
    link: &str,
    seed: &JointConfig,
    params: &IkParams,
) -> Result<IkResult, KinematicsError> {
    let mut q = seed.clone();
    model.clamp_to_limits(&mut q);
    let target_iso = target.to_isometry();

    let mut best: Option<IkResult> = None;
    for iter in 0..=params.max_iters {
        let current = model.forward_kinematics(&q, link)?;
        let pos_err_vec = target.translation - current.translation;
        let rot_err = (target_iso.rotation * current.quaternion().inverse()).scaled_axis();
        let position_error = pos_err_vec.norm();
        let orientation_error = rot_err.norm();

        let candidate = IkResult {
            solution: q.clone(),
            position_error,
            orientation_error,
            iterations: iter,
            converged: position_error <= params.position_tol
                && orientation_error <= params.orientation_tol,
        };
        if candidate.converged {
            return Ok(candidate);
        }
        if best
            .as_ref()
            .map(|b| position_error + orientation_error < b.position_error + b.orientation_error)
            .unwrap_or(true)
        {
            best = Some(candidate);
        }
        if iter == params.max_iters {
            break;
        }

        let jac = model.jacobian(&q, link)?;
        let mut e = DVector::zeros(6);
        for r in 0..3 {
            e[r] = pos_err_vec[r];
            e[r + 3] = rot_err[r];
        }
        let jjt = &jac * jac.transpose()
            + DMatrix::identity(6, 6) * (params.damping * params.damping);
        let Some(inv) = jjt.try_inverse() else { break };
        let dq = jac.transpose() * inv * e;
        for (qv, step) in q.0.iter_mut().zip(dq.iter()) {
            *qv += step.clamp(-params.max_step, params.max_step);
        }
        model.clamp_to_limits(&mut q);
    }
    Ok(best.expect("at least one iterate evaluated"))
}

/// Yoshikawa manipulability sqrt(det(J J^T)) of the given Jacobian rows.
///
/// Pass a row sub-block (e.g. the linear rows for a planar mechanism) to
/// measure manipulability in a task subspace. Tiny negative determinants
/// from rounding are clamped to zero.
pub fn manipulability(jacobian: &DMatrix<f64>) -> f64 {
    let jjt = jacobian * jacobian.transpose();
    jjt.determinant().max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::planar_two_link;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn fixed_point_converges_immediately() {
        let model = planar_two_link();
        let q_star = JointConfig(vec![0.4, 0.7]);
        let target = model.forward_kinematics(&q_star, "ee").unwrap();
        let r = solve_ik_for_link(&model, &target, "ee", &q_star, &IkParams::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.position_error < 1e-12);
    }

    #[test]
    fn unreachable_target_does_not_converge() {
        let model = planar_two_link();
        let target = Pose6D::new(
            Vector3::new(3.0, 0.0, 0.0),
            nalgebra::UnitQuaternion::identity(),
        );
        let r = solve_ik_for_link(
            &model,
            &target,
            "ee",
            &JointConfig(vec![0.1, 0.1]),
            &IkParams::default(),
        )
        .unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn manipulability_zero_at_stretched_singularity() {
        let model = planar_two_link();
        let j = model.jacobian(&JointConfig(vec![0.0, 0.0]), "ee").unwrap();
        let lin_xy = j.view((0, 0), (2, 2)).into_owned();
        assert!(manipulability(&lin_xy) < 1e-9);
    }

    #[test]
    fn manipulability_analytic_at_right_angle() {
        let model = planar_two_link();
        let j = model
            .jacobian(&JointConfig(vec![0.0, FRAC_PI_2]), "ee")
            .unwrap();
        let lin_xy = j.view((0, 0), (2, 2)).into_owned();
        // linear xy block is [[-1, -1], [1, 0]], |det| = 1
        assert_relative_eq!(j[(0, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(j[(0, 1)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(manipulability(&lin_xy), 1.0, epsilon = 1e-9);
    }
}
