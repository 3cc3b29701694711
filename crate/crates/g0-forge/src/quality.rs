//! Visual cleansing and motion filtering: variance-of-Laplacian blur
//! scoring, stationary-span detection and downsampling, and velocity /
//! acceleration caps against the robot's control limits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sync::SyncedSequence;

/// Camera id treated as the primary (egocentric) policy observation.
/// Blur on this camera excludes a tick; wrist-camera blur is metadata.
pub const EGO_CAMERA: &str = "ego";

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("image {width}x{height} too small for a 3x3 kernel")]
    ImageTooSmall { width: usize, height: usize },
    #[error("sequence has {0} ticks, need at least 3")]
    SequenceTooShort(usize),
    #[error("stationary spans overlap or are unsorted at span {0}")]
    OverlappingSpans(usize),
}

/// Per-rig quality thresholds. Serialized field names are the on-disk
/// profile schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityProfile {
    pub blur_threshold: f64,
    pub stationary_window_ticks: usize,
    pub stationary_eps_m: f64,
    pub keep_period_ticks: usize,
    pub v_max_mps: f64,
    pub a_max_mps2: f64,
}

impl Default for QualityProfile {
    fn default() -> Self {
        Self {
            blur_threshold: 100.0,
            stationary_window_ticks: 15,
            stationary_eps_m: 0.002,
            keep_period_ticks: 15,
            v_max_mps: 1.5,
            a_max_mps2: 10.0,
        }
    }
}

/// Grayscale intensity buffer, row-major, values nominally in [0, 255].
#[derive(Debug, Clone)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayFrame {
    pub fn load(path: &Path) -> Result<Self, String> {
        let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let luma = img.to_luma8();
        Ok(Self {
            width: luma.width() as usize,
            height: luma.height() as usize,
            data: luma.pixels().map(|p| p.0[0] as f64).collect(),
        })
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Variance of the 4-neighbor Laplacian response over interior pixels.
///
/// Invariant under global intensity offset and quadratic under contrast
/// scaling, which the property tests pin down.
pub fn blur_score(frame: &GrayFrame) -> Result<f64, QualityError> {
    if frame.width < 3 || frame.height < 3 {
        return Err(QualityError::ImageTooSmall {
            width: frame.width,
            height: frame.height,
        });
    }
    let mut responses = Vec::with_capacity((frame.width - 2) * (frame.height - 2));
    for y in 1..frame.height - 1 {
        for x in 1..frame.width - 1 {
            let r = frame.at(x - 1, y) + frame.at(x + 1, y) + frame.at(x, y - 1)
                + frame.at(x, y + 1)
                - 4.0 * frame.at(x, y);
            responses.push(r);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameVerdict {
    Keep,
    Blurred,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameQuality {
    pub camera_id: String,
    pub image_path: String,
    pub sharpness: f64,
    pub verdict: FrameVerdict,
}

/// Output of [`filter_blurred`]: per-tick per-camera scores plus the set
/// of ticks excluded because the egocentric frame is blurred or missing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BlurReport {
    /// Indexed by tick; cameras without a matched frame are absent.
    pub per_tick: Vec<BTreeMap<String, FrameQuality>>,
    /// Ticks to exclude (egocentric frame blurred or unloadable).
    pub excluded_ticks: Vec<usize>,
    /// Frame paths that failed to load; those frames count as blurred.
    pub load_failures: Vec<String>,
}

pub fn filter_blurred(
    sequence: &SyncedSequence,
    threshold: f64,
    bundle_root: &Path,
) -> BlurReport {
    let mut report = BlurReport::default();
    let mut score_cache: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for (i, tick) in sequence.ticks.iter().enumerate() {
        let mut per_camera = BTreeMap::new();
        for (cam, frame) in &tick.frames {
            let score = score_cache
                .entry(frame.image_path.clone())
                .or_insert_with(|| {
                    GrayFrame::load(&bundle_root.join(&frame.image_path))
                        .ok()
                        .and_then(|f| blur_score(&f).ok())
                });
            let quality = match score {
                Some(s) => FrameQuality {
                    camera_id: cam.clone(),
                    image_path: frame.image_path.clone(),
                    sharpness: *s,
                    verdict: if *s < threshold {
                        FrameVerdict::Blurred
                    } else {
                        FrameVerdict::Keep
                    },
                },
                None => {
                    if !report.load_failures.contains(&frame.image_path) {
                        report.load_failures.push(frame.image_path.clone());
                    }
                    FrameQuality {
                        camera_id: cam.clone(),
                        image_path: frame.image_path.clone(),
                        sharpness: 0.0,
                        verdict: FrameVerdict::Blurred,
                    }
                }
            };
            per_camera.insert(cam.clone(), quality);
        }
        let ego_blurred = per_camera
            .get(EGO_CAMERA)
            .is_some_and(|q| q.verdict == FrameVerdict::Blurred);
        if ego_blurred {
            report.excluded_ticks.push(i);
        }
        report.per_tick.push(per_camera);
    }
    report
}

/// A maximal run of ticks where both arms stay within `eps` of the run's
/// first sample and the apertures stay put.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySpan {
    /// Inclusive tick indices.
    pub start_tick: usize,
    pub end_tick: usize,
    /// "both": spans are the per-arm intersection.
    pub arm_id: String,
    pub max_deviation: f64,
}

const APERTURE_HOLD_EPS: f64 = 0.05;

/// Detect stationary spans: anchor deviation below `eps_pos` for every
/// arm, aperture change below 0.05, runs at least `window` ticks long.
pub fn stationary_spans(
    sequence: &SyncedSequence,
    window: usize,
    eps_pos: f64,
) -> Vec<StationarySpan> {
    let n = sequence.ticks.len();
    let mut spans = Vec::new();
    let mut start = 0usize;
    while start < n {
        let anchor = &sequence.ticks[start];
        let mut end = start;
        let mut max_dev: f64 = 0.0;
        for i in start + 1..n {
            let tick = &sequence.ticks[i];
            let mut dev: f64 = 0.0;
            let mut held = true;
            for (arm, pose) in &tick.poses {
                let a = &anchor.poses[arm];
                let d = (pose.pose.translation - a.pose.translation).norm();
                dev = dev.max(d);
                if d >= eps_pos
                    || (pose.gripper_aperture - a.gripper_aperture).abs() >= APERTURE_HOLD_EPS
                {
                    held = false;
                }
            }
            if !held {
                break;
            }
            end = i;
            max_dev = max_dev.max(dev);
        }
        let len = end - start + 1;
        if len >= window {
            spans.push(StationarySpan {
                start_tick: start,
                end_tick: end,
                arm_id: "both".into(),
                max_deviation: max_dev,
            });
            start = end + 1;
        } else {
            start += 1;
        }
    }
    spans
}

/// Thin out stationary spans: keep each span's first and last tick and
/// every `keep_period`-th tick between, drop the rest. Ticks outside
/// spans are kept; order is preserved. The first and last tick of the
/// whole sequence always survive.
pub fn downsample_stationary(
    sequence: &SyncedSequence,
    spans: &[StationarySpan],
    keep_period: usize,
) -> Result<SyncedSequence, QualityError> {
    for (i, w) in spans.windows(2).enumerate() {
        if w[1].start_tick <= w[0].end_tick {
            return Err(QualityError::OverlappingSpans(i + 1));
        }
    }
    let keep_period = keep_period.max(1);
    let n = sequence.ticks.len();
    let mut keep = vec![true; n];
    for span in spans {
        for i in span.start_tick..=span.end_tick.min(n.saturating_sub(1)) {
            let offset = i - span.start_tick;
            keep[i] = offset % keep_period == 0 || i == span.end_tick;
        }
    }
    if n > 0 {
        keep[0] = true;
        keep[n - 1] = true;
    }
    Ok(SyncedSequence {
        session_id: sequence.session_id.clone(),
        instruction: sequence.instruction.clone(),
        tick_hz: sequence.tick_hz,
        ticks: sequence
            .ticks
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(t, _)| t.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionFlagKind {
    OverVelocity,
    OverAcceleration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFlag {
    pub tick: usize,
    pub arm_id: String,
    pub kind: MotionFlagKind,
    /// m/s or m/s^2.
    pub value: f64,
}

/// Central-difference velocity and acceleration checks on each arm's
/// translation. Handles non-uniform tick spacing (post-downsampling).
pub fn check_motion_limits(
    sequence: &SyncedSequence,
    v_max: f64,
    a_max: f64,
) -> Result<Vec<MotionFlag>, QualityError> {
    let n = sequence.ticks.len();
    if n < 3 {
        return Err(QualityError::SequenceTooShort(n));
    }
    let mut flags = Vec::new();
    let arms: Vec<String> = sequence.ticks[0].poses.keys().cloned().collect();
    for arm in &arms {
        for i in 1..n - 1 {
            let p0 = &sequence.ticks[i - 1];
            let p1 = &sequence.ticks[i];
            let p2 = &sequence.ticks[i + 1];
            let dt1 = p1.t - p0.t;
            let dt2 = p2.t - p1.t;
            let x0 = p0.poses[arm].pose.translation;
            let x1 = p1.poses[arm].pose.translation;
            let x2 = p2.poses[arm].pose.translation;
            let v = ((x2 - x0) / (dt1 + dt2)).norm();
            let a = (((x2 - x1) / dt2 - (x1 - x0) / dt1) / (0.5 * (dt1 + dt2))).norm();
            if v > v_max {
                flags.push(MotionFlag {
                    tick: i,
                    arm_id: arm.clone(),
                    kind: MotionFlagKind::OverVelocity,
                    value: v,
                });
            }
            if a > a_max {
                flags.push(MotionFlag {
                    tick: i,
                    arm_id: arm.clone(),
                    kind: MotionFlagKind::OverAcceleration,
                    value: a,
                });
            }
        }
    }
    flags.sort_by(|a, b| a.tick.cmp(&b.tick).then(a.arm_id.cmp(&b.arm_id)));
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PoseSample;
    use crate::math::Pose6D;
    use crate::sync::{SyncedTick, TickFlags};
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn checkerboard(w: usize, h: usize) -> GrayFrame {
        GrayFrame {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|i| if (i / w + i % w) % 2 == 0 { 0.0 } else { 255.0 })
                .collect(),
        }
    }

    /// 3x3 box blur with edge replication, test-side oracle only.
    fn box_blur(f: &GrayFrame) -> GrayFrame {
        let mut out = f.clone();
        for y in 0..f.height {
            for x in 0..f.width {
                let mut sum = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, f.height as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, f.width as i64 - 1) as usize;
                        sum += f.at(xx, yy);
                    }
                }
                out.data[y * f.width + x] = sum / 9.0;
            }
        }
        out
    }

    fn seq_from_positions(positions: &[(f64, Vector3<f64>, f64)]) -> SyncedSequence {
        let ticks = positions
            .iter()
            .map(|(t, p, ap)| {
                let mut poses = BTreeMap::new();
                for arm in ["left", "right"] {
                    poses.insert(
                        arm.to_string(),
                        PoseSample {
                            t: *t,
                            pose: Pose6D::new(*p, UnitQuaternion::identity()),
                            gripper_aperture: *ap,
                            tracking_confidence: 1.0,
                        },
                    );
                }
                SyncedTick {
                    t: *t,
                    poses,
                    frames: BTreeMap::new(),
                    flags: TickFlags::default(),
                }
            })
            .collect();
        SyncedSequence {
            session_id: "s".into(),
            instruction: "i".into(),
            ticks,
            tick_hz: 30.0,
        }
    }

    #[test]
    fn constant_image_scores_zero() {
        let f = GrayFrame {
            width: 5,
            height: 5,
            data: vec![128.0; 25],
        };
        assert_eq!(blur_score(&f).unwrap(), 0.0);
    }

    #[test]
    fn checkerboard_score_matches_hand_computation() {
        // 4x4 checkerboard: interior responses are +-1020, mean 0,
        // population variance 1020^2 = 1040400.
        let f = checkerboard(4, 4);
        assert_relative_eq!(blur_score(&f).unwrap(), 1_040_400.0, epsilon = 1e-9);
    }

    #[test]
    fn box_blur_reduces_score() {
        let sharp = checkerboard(8, 8);
        let blurred = box_blur(&sharp);
        assert!(blur_score(&blurred).unwrap() < blur_score(&sharp).unwrap());
    }

    #[test]
    fn too_small_image_is_rejected() {
        let f = GrayFrame {
            width: 2,
            height: 5,
            data: vec![0.0; 10],
        };
        assert!(matches!(
            blur_score(&f),
            Err(QualityError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn fully_constant_sequence_is_one_span() {
        let positions: Vec<_> = (0..100)
            .map(|i| (i as f64 / 30.0, Vector3::new(0.5, 0.0, 0.3), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        let spans = stationary_spans(&seq, 15, 0.002);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].start_tick, 0);
        assert_eq!(spans[0].end_tick, 99);
    }

    #[test]
    fn moving_sequence_has_no_spans() {
        let positions: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 / 30.0;
                (t, Vector3::new(0.1 * t, 0.0, 0.3), 1.0)
            })
            .collect();
        let seq = seq_from_positions(&positions);
        assert!(stationary_spans(&seq, 15, 0.002).is_empty());
    }

    #[test]
    fn move_hold_move_yields_one_span_over_the_hold() {
        let mut positions = Vec::new();
        for i in 0..30 {
            let t = i as f64 / 30.0;
            positions.push((t, Vector3::new(0.05 * t, 0.0, 0.3), 1.0));
        }
        let hold_pos = positions.last().unwrap().1;
        for i in 30..90 {
            positions.push((i as f64 / 30.0, hold_pos, 1.0));
        }
        for i in 90..120 {
            let t = i as f64 / 30.0;
            positions.push((t, hold_pos + Vector3::new(0.05 * (t - 3.0), 0.0, 0.0), 1.0));
        }
        let seq = seq_from_positions(&positions);
        let spans = stationary_spans(&seq, 15, 0.002);
        assert_eq!(spans.len(), 1);
        // the hold is ticks 29..=89 (tick 29 is the last sample of the move
        // and coincides with the hold anchor up to eps)
        assert!(spans[0].start_tick <= 30);
        assert!(spans[0].end_tick >= 89);
    }

    #[test]
    fn downsample_without_spans_is_identity() {
        let positions: Vec<_> = (0..50)
            .map(|i| (i as f64 / 30.0, Vector3::new(0.01 * i as f64, 0.0, 0.0), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        let out = downsample_stationary(&seq, &[], 15).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn downsample_keeps_expected_offsets() {
        let positions: Vec<_> = (0..60)
            .map(|i| (i as f64 / 30.0, Vector3::zeros(), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        let span = StationarySpan {
            start_tick: 0,
            end_tick: 59,
            arm_id: "both".into(),
            max_deviation: 0.0,
        };
        let out = downsample_stationary(&seq, &[span], 15).unwrap();
        let kept: Vec<usize> = out
            .ticks
            .iter()
            .map(|t| (t.t * 30.0).round() as usize)
            .collect();
        assert_eq!(kept, vec![0, 15, 30, 45, 59]);
    }

    #[test]
    fn downsample_is_idempotent_on_fixture() {
        let positions: Vec<_> = (0..90)
            .map(|i| (i as f64 / 30.0, Vector3::zeros(), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        let spans = stationary_spans(&seq, 15, 0.002);
        let once = downsample_stationary(&seq, &spans, 15).unwrap();
        let spans2 = stationary_spans(&once, 15, 0.002);
        let twice = downsample_stationary(&once, &spans2, 15).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let positions: Vec<_> = (0..50)
            .map(|i| (i as f64 / 30.0, Vector3::zeros(), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        let mk = |s, e| StationarySpan {
            start_tick: s,
            end_tick: e,
            arm_id: "both".into(),
            max_deviation: 0.0,
        };
        assert!(matches!(
            downsample_stationary(&seq, &[mk(0, 20), mk(15, 40)], 15),
            Err(QualityError::OverlappingSpans(_))
        ));
    }

    #[test]
    fn stationary_flags_nothing() {
        let positions: Vec<_> = (0..30)
            .map(|i| (i as f64 / 30.0, Vector3::new(0.5, 0.0, 0.3), 1.0))
            .collect();
        let seq = seq_from_positions(&positions);
        assert!(check_motion_limits(&seq, 1.5, 10.0).unwrap().is_empty());
    }

    #[test]
    fn constant_over_speed_flags_every_interior_tick() {
        let positions: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64 / 30.0;
                (t, Vector3::new(2.0 * t, 0.0, 0.0), 1.0)
            })
            .collect();
        let seq = seq_from_positions(&positions);
        let flags = check_motion_limits(&seq, 1.5, 10.0).unwrap();
        let velocity_flags: Vec<_> = flags
            .iter()
            .filter(|f| f.kind == MotionFlagKind::OverVelocity)
            .collect();
        // 28 interior ticks, two arms
        assert_eq!(velocity_flags.len(), 28 * 2);
    }

    #[test]
    fn smooth_slow_motion_is_clean() {
        let positions: Vec<_> = (0..60)
            .map(|i| {
                let t = i as f64 / 30.0;
                (t, Vector3::new(0.5 * t, 0.0, 0.0), 1.0)
            })
            .collect();
        let seq = seq_from_positions(&positions);
        assert!(check_motion_limits(&seq, 1.5, 10.0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn blur_score_offset_invariant(
            offset in -50.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::fixtures::SplitMix64(seed);
            let f = GrayFrame {
                width: 8,
                height: 8,
                data: (0..64).map(|_| rng.next_f64() * 255.0).collect(),
            };
            let shifted = GrayFrame {
                width: 8,
                height: 8,
                data: f.data.iter().map(|v| v + offset).collect(),
            };
            let s0 = blur_score(&f).unwrap();
            let s1 = blur_score(&shifted).unwrap();
            prop_assert!((s0 - s1).abs() <= 1e-9 * s0.max(1.0));
        }

        #[test]
        fn blur_score_scales_quadratically(
            alpha in 0.1f64..4.0,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::fixtures::SplitMix64(seed);
            let f = GrayFrame {
                width: 8,
                height: 8,
                data: (0..64).map(|_| rng.next_f64() * 255.0).collect(),
            };
            let scaled = GrayFrame {
                width: 8,
                height: 8,
                data: f.data.iter().map(|v| v * alpha).collect(),
            };
            let s0 = blur_score(&f).unwrap();
            let s1 = blur_score(&scaled).unwrap();
            prop_assert!((s1 - alpha * alpha * s0).abs() <= 1e-9 * (alpha * alpha * s0).max(1e-12));
        }

        #[test]
        fn spans_are_disjoint_sorted_and_long_enough(
            seed in 0u64..500,
            window in 2usize..20,
        ) {
            let mut rng = crate::fixtures::SplitMix64(seed);
            let mut pos = Vector3::zeros();
            let positions: Vec<_> = (0..120)
                .map(|i| {
                    if rng.next_f64() < 0.3 {
                        pos += Vector3::new(0.01, 0.0, 0.0);
                    }
                    (i as f64 / 30.0, pos, 1.0)
                })
                .collect();
            let seq = seq_from_positions(&positions);
            let spans = stationary_spans(&seq, window, 0.002);
            for s in &spans {
                prop_assert!(s.end_tick >= s.start_tick);
                prop_assert!(s.end_tick - s.start_tick + 1 >= window);
            }
            for w in spans.windows(2) {
                prop_assert!(w[1].start_tick > w[0].end_tick);
            }
        }

        #[test]
        fn downsample_preserves_endpoints_and_order(
            seed in 0u64..500,
        ) {
            let mut rng = crate::fixtures::SplitMix64(seed);
            let mut pos = Vector3::zeros();
            let positions: Vec<_> = (0..120)
                .map(|i| {
                    if rng.next_f64() < 0.3 {
                        pos += Vector3::new(0.01, 0.0, 0.0);
                    }
                    (i as f64 / 30.0, pos, 1.0)
                })
                .collect();
            let seq = seq_from_positions(&positions);
            let spans = stationary_spans(&seq, 10, 0.002);
            let out = downsample_stationary(&seq, &spans, 10).unwrap();
            prop_assert_eq!(out.ticks.first().unwrap().t, seq.ticks.first().unwrap().t);
            prop_assert_eq!(out.ticks.last().unwrap().t, seq.ticks.last().unwrap().t);
            for w in out.ticks.windows(2) {
                prop_assert!(w[1].t > w[0].t);
            }
        }
    }
}
