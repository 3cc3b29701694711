//! Rigid-body pose representation shared across the pipeline.
//!
//! Rotations are stored as unit quaternions with a non-negative scalar part,
//! so every orientation has exactly one representative and interpolation or
//! error metrics never straddle the double cover.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Deterministic SplitMix64 stream; the crate's only random source, used
/// wherever reproducibility across runs and platforms is required
/// (manifest sampling, IK restarts, fixtures).
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// A 6-DoF pose: translation in meters plus a canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    /// Translation (x, y, z) in meters.
    pub translation: Vector3<f64>,
    /// Rotation as (w, x, y, z), unit norm, w >= 0.
    pub rotation: [f64; 4],
}

impl Pose6D {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: canonical_wxyz(rotation),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.quaternion())
    }

    /// Rotation as a nalgebra unit quaternion.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    /// Build from raw (w, x, y, z) components, normalizing and canonicalizing.
    pub fn from_parts(translation: [f64; 3], wxyz: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            wxyz[0], wxyz[1], wxyz[2], wxyz[3],
        ));
        Self::new(Vector3::new(translation[0], translation[1], translation[2]), q)
    }

    /// Geodesic rotation angle to `other`, in radians.
    pub fn orientation_error(&self, other: &Pose6D) -> f64 {
        self.quaternion().angle_to(&other.quaternion())
    }

    /// Euclidean translation distance to `other`, in meters.
    pub fn position_error(&self, other: &Pose6D) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Quaternion components (w, x, y, z) with w >= 0.
///
/// When w is exactly zero the representative with the first nonzero
/// component positive is chosen, so the mapping stays a function.
pub fn canonical_wxyz(q: UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.coords; // (x, y, z, w) in nalgebra storage order
    let mut out = [c.w, c.x, c.y, c.z];
    let flip = if out[0] != 0.0 {
        out[0] < 0.0
    } else {
        out.iter().copied().find(|v| *v != 0.0).is_some_and(|v| v < 0.0)
    };
    if flip {
        for v in &mut out {
            *v = -*v;
        }
    }
    out
}

/// Shortest-path spherical interpolation between two canonical quaternions.
///
/// Hemisphere-corrects before interpolating so the path never exceeds pi.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let mut bq = *b;
    if a.coords.dot(&b.coords) < 0.0 {
        bq = UnitQuaternion::from_quaternion(-b.into_inner());
    }
    a.try_slerp(&bq, t, 1e-12).unwrap_or(*a)
}

/// Linear interpolation of translations.
pub fn lerp(a: &Vector3<f64>, b: &Vector3<f64>, t: f64) -> Vector3<f64> {
    a + (b - a) * t
}
