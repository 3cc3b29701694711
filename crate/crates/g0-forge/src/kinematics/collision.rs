//! Capsule collision geometry. Capsules (segment + radius) are the only
//! collision shape; distance between two capsules is the segment-segment
//! distance minus the radii, which is closed form.

use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

/// A capsule: the set of points within `radius` of segment `[a, b]`.
/// A zero-length segment makes it a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn sphere(center: Point3<f64>, radius: f64) -> Self {
        Self { a: center, b: center, radius }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            a: iso * self.a,
            b: iso * self.b,
            radius: self.radius,
        }
    }

    /// Surface-to-surface distance; negative when overlapping.
    pub fn distance(&self, other: &Capsule) -> f64 {
        segment_segment_distance(&self.a, &self.b, &other.a, &other.b)
            - self.radius
            - other.radius
    }

    pub fn intersects(&self, other: &Capsule) -> bool {
        self.distance(other) < 0.0
    }
}

/// Minimum distance between segments [p1,q1] and [p2,q2].
///
/// Standard closest-point parameterization with clamping to the segment
/// ends; degenerate (point) segments fall out naturally.
pub fn segment_segment_distance(
    p1: &Point3<f64>,
    q1: &Point3<f64>,
    p2: &Point3<f64>,
    q2: &Point3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t);
    const EPS: f64 = 1e-15;
    if a <= EPS && e <= EPS {
        s = 0.0;
        t = 0.0;
    } else if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let t_unclamped = (b * s_ + f) / e;
            let t_ = if t_unclamped < 0.0 {
                s_ = (-c / a).clamp(0.0, 1.0);
                0.0
            } else if t_unclamped > 1.0 {
                s_ = ((b - c) / a).clamp(0.0, 1.0);
                1.0
            } else {
                t_unclamped
            };
            s = s_;
            t = t_;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}
