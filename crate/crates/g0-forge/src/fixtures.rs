//! Synthetic robots and capture sessions used by the test suite, the
//! acceptance checks, and the benchmarks. Everything here is generated
//! from closed-form joint trajectories, so expected pipeline outcomes are
//! known exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::ingest::{
    write_session, DeviceMeta, FrameRef, GripperKind, IngestError, PoseSample, RawSession,
};
use crate::kinematics::{parse_urdf, IkParams, JointConfig, RobotModel};
use crate::profile::{RigidTransformSpec, RobotProfile};
use crate::quality::QualityProfile;

/// Planar 2-link arm: two revolute z joints, both links 1.0 m, limits
/// [-1.5708, 1.5708]. The canonical kinematics fixture.
pub fn planar_two_link_urdf() -> String {
    r#"
    <robot name="planar2">
      <link name="base"/>
      <link name="upper"/>
      <link name="fore"/>
      <link name="ee"/>
      <joint name="shoulder" type="revolute">
        <parent link="base"/>
        <child link="upper"/>
        <axis xyz="0 0 1"/>
        <limit lower="-1.5708" upper="1.5708" velocity="3.0"/>
      </joint>
      <joint name="elbow" type="revolute">
        <origin xyz="1 0 0"/>
        <parent link="upper"/>
        <child link="fore"/>
        <axis xyz="0 0 1"/>
        <limit lower="-1.5708" upper="1.5708" velocity="3.0"/>
      </joint>
      <joint name="tip" type="fixed">
        <origin xyz="1 0 0"/>
        <parent link="fore"/>
        <child link="ee"/>
      </joint>
    </robot>"#
        .to_string()
}

pub fn planar_two_link() -> RobotModel {
    parse_urdf(&planar_two_link_urdf()).expect("fixture URDF parses")
}

/// One 6-revolute arm rooted at `base`, links prefixed with `arm`.
fn arm_urdf_fragment(arm: &str, base_y: f64) -> String {
    // shoulder yaw (z), shoulder pitch (y), elbow pitch (y),
    // wrist roll (z), wrist pitch (y), wrist yaw (z)
    format!(
        r#"
      <link name="{arm}_link0"/>
      <link name="{arm}_link1"/>
      <link name="{arm}_link2">
        <collision>
          <origin xyz="0 0 0.15"/>
          <geometry><cylinder radius="0.04" length="0.3"/></geometry>
        </collision>
      </link>
      <link name="{arm}_link3">
        <collision>
          <origin xyz="0 0 0.125"/>
          <geometry><cylinder radius="0.04" length="0.25"/></geometry>
        </collision>
      </link>
      <link name="{arm}_link4"/>
      <link name="{arm}_link5"/>
      <link name="{arm}_tcp"/>
      <joint name="{arm}_mount" type="fixed">
        <origin xyz="0 {base_y} 0"/>
        <parent link="torso"/>
        <child link="{arm}_link0"/>
      </joint>
      <joint name="{arm}_j1" type="revolute">
        <origin xyz="0 0 0.1"/>
        <parent link="{arm}_link0"/>
        <child link="{arm}_link1"/>
        <axis xyz="0 0 1"/>
        <limit lower="-2.9" upper="2.9" velocity="3.0"/>
      </joint>
      <joint name="{arm}_j2" type="revolute">
        <origin xyz="0 0 0.1"/>
        <parent link="{arm}_link1"/>
        <child link="{arm}_link2"/>
        <axis xyz="0 1 0"/>
        <limit lower="-1.9" upper="1.9" velocity="3.0"/>
      </joint>
      <joint name="{arm}_j3" type="revolute">
        <origin xyz="0 0 0.3"/>
        <parent link="{arm}_link2"/>
        <child link="{arm}_link3"/>
        <axis xyz="0 1 0"/>
        <limit lower="-2.6" upper="2.6" velocity="3.0"/>
      </joint>
      <joint name="{arm}_j4" type="revolute">
        <origin xyz="0 0 0.25"/>
        <parent link="{arm}_link3"/>
        <child link="{arm}_link4"/>
        <axis xyz="0 0 1"/>
        <limit lower="-2.9" upper="2.9" velocity="3.0"/>
      </joint>
      <joint name="{arm}_j5" type="revolute">
        <origin xyz="0 0 0.1"/>
        <parent link="{arm}_link4"/>
        <child link="{arm}_link5"/>
        <axis xyz="0 1 0"/>
        <limit lower="-1.9" upper="1.9" velocity="3.0"/>
      </joint>
      <joint name="{arm}_j6" type="revolute">
        <origin xyz="0 0 0.08"/>
        <parent link="{arm}_link5"/>
        <child link="{arm}_tcp"/>
        <axis xyz="0 0 1"/>
        <limit lower="-2.9" upper="2.9" velocity="3.0"/>
      </joint>"#
    )
}

/// A single 6-DoF spatial arm ("solo"), used by the IK accuracy checks.
pub fn six_dof_arm_urdf() -> String {
    format!(
        r#"<robot name="solo6">
      <link name="torso"/>{}
    </robot>"#,
        arm_urdf_fragment("solo", 0.0)
    )
}

pub fn six_dof_arm() -> RobotModel {
    parse_urdf(&six_dof_arm_urdf())
        .expect("fixture URDF parses")
        .with_end_effectors(&[("solo".into(), "solo_tcp".into())])
        .expect("tcp link exists")
}

/// Baseline separation between the two arm mounts of the dual-arm fixture.
pub const DUAL_ARM_BASELINE: f64 = 0.4;

/// Dual-arm robot: two 6-DoF arms mounted 0.4 m apart on a torso, with
/// capsule collision geometry on the upper arms and forearms.
pub fn dual_arm_urdf() -> String {
    format!(
        r#"<robot name="dual6">
      <link name="torso"/>{}{}
    </robot>"#,
        arm_urdf_fragment("left", DUAL_ARM_BASELINE / 2.0),
        arm_urdf_fragment("right", -DUAL_ARM_BASELINE / 2.0)
    )
}

pub fn dual_arm() -> RobotModel {
    parse_urdf(&dual_arm_urdf())
        .expect("fixture URDF parses")
        .with_end_effectors(&[
            ("left".into(), "left_tcp".into()),
            ("right".into(), "right_tcp".into()),
        ])
        .expect("tcp links exist")
}

/// Home configuration for one fixture arm: elbow bent, TCP out front.
pub fn arm_home() -> JointConfig {
    JointConfig(vec![0.0, 0.5, 0.9, 0.0, 0.5, 0.0])
}

/// Sample a random in-limits configuration of `model` using the provided
/// uniform [0,1) source, keeping 10% margin off the limits.
pub fn random_config(model: &RobotModel, mut unit: impl FnMut() -> f64) -> JointConfig {
    JointConfig(
        model
            .non_fixed_joints()
            .map(|j| {
                let span = j.limit_upper - j.limit_lower;
                let margin = 0.1 * span;
                j.limit_lower + margin + unit() * (span - 2.0 * margin)
            })
            .collect(),
    )
}

pub use crate::math::SplitMix64;

/// Perturb every joint of `q` by up to `magnitude` (uniform, symmetric).
pub fn perturbed(q: &JointConfig, magnitude: f64, rng: &mut SplitMix64) -> JointConfig {
    JointConfig(
        q.0.iter()
            .map(|v| v + (rng.next_f64() * 2.0 - 1.0) * magnitude)
            .collect(),
    )
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

// --- capture-session corpus ----------------------------------------------

/// Sessions in the standard fixture corpus.
pub const CORPUS_SIZE: usize = 20;

/// Session timeline: 1 s calibration hold, then scripted motion.
pub const SESSION_DURATION_S: f64 = 8.0;
const CALIBRATION_HOLD_S: f64 = 1.0;
const POSE_HZ: f64 = 120.0;
const VIDEO_HZ: f64 = 30.0;

/// What a generated session deliberately does wrong, if anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionKind {
    Clean,
    /// Left j2 driven inside the validation margin of its limit.
    JointLimitDefect,
    /// Left-arm targets ramped out of the reachable workspace.
    ReachDefect,
    /// Left arm swung across the torso into the right arm.
    CollisionDefect,
}

/// Sessions 0..17 are clean; the last three carry one defect each.
pub fn session_kind(index: usize) -> SessionKind {
    match index {
        17 => SessionKind::JointLimitDefect,
        18 => SessionKind::ReachDefect,
        19 => SessionKind::CollisionDefect,
        _ => SessionKind::Clean,
    }
}

/// Left-arm posture of the collision-defect sweep: the forearm reaches
/// across the torso and crosses the right forearm. Tuned empirically
/// against the capsule geometry (see the fixture tests).
const COLLISION_POSTURE: [f64; 6] = [-1.22, 0.75, 0.9, 0.0, 0.5, 0.0];

/// Validation profile for the dual-arm fixture robot.
pub fn fixture_profile(urdf_path: &str) -> RobotProfile {
    let mut home = BTreeMap::new();
    home.insert("left".to_string(), arm_home().0);
    home.insert("right".to_string(), arm_home().0);
    let mut tool = BTreeMap::new();
    tool.insert("left".to_string(), RigidTransformSpec::identity());
    tool.insert("right".to_string(), RigidTransformSpec::identity());
    let mut ee = BTreeMap::new();
    ee.insert("left".to_string(), "left_tcp".to_string());
    ee.insert("right".to_string(), "right_tcp".to_string());
    let mut widths = BTreeMap::new();
    widths.insert("H".to_string(), [0.0, 0.08]);
    widths.insert("G".to_string(), [0.0, 0.08]);
    RobotProfile {
        robot_name: "dual6".to_string(),
        urdf_path: urdf_path.to_string(),
        arm_to_ee_link: ee,
        home_config: home,
        baseline_m: DUAL_ARM_BASELINE,
        tool_offsets: tool,
        gripper_widths: widths,
        w_min_manipulability: 1e-4,
        joint_limit_margin: 0.05,
        ik: IkParams {
            position_tol: 5e-4,
            orientation_tol: 5e-3,
            ..IkParams::default()
        },
    }
}

pub fn fixture_quality_profile() -> QualityProfile {
    QualityProfile::default()
}

/// Cubic smoothstep of `x` clamped to [0, 1].
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Smooth 0->1->0 pulse: rises over [t0, t0+ramp], falls over
/// [t1-ramp, t1].
fn pulse(t: f64, t0: f64, t1: f64, ramp: f64) -> f64 {
    smoothstep((t - t0) / ramp) * smoothstep((t1 - t) / ramp)
}

/// Joint trajectory of one arm at time `t` for a given session.
fn scripted_arm_config(t: f64, arm_phase: f64, session_seed: u64, kind: SessionKind) -> JointConfig {
    let home = arm_home();
    if t <= CALIBRATION_HOLD_S {
        return home;
    }
    // motion envelope: ease in after the hold, ease out before the end
    let env = smoothstep(t - CALIBRATION_HOLD_S) * smoothstep(SESSION_DURATION_S - t);
    let mut rng = SplitMix64(session_seed);
    let amps = [0.20, 0.15, 0.20, 0.25, 0.15, 0.25];
    let freqs = [0.25, 0.20, 0.30, 0.15, 0.25, 0.20];
    let mut q = home.clone();
    for j in 0..6 {
        let phase = rng.next_f64() * 2.0 * PI + arm_phase;
        q.0[j] += amps[j] * (2.0 * PI * freqs[j] * (t - CALIBRATION_HOLD_S) + phase).sin() * env;
    }
    match kind {
        SessionKind::JointLimitDefect if arm_phase == 0.0 => {
            // push left j2 to 1.87 rad: inside the model limit (1.9) but
            // within the 0.05 rad validation margin
            let push = pulse(t, 2.0, 6.0, 1.5);
            q.0[1] = q.0[1] * (1.0 - push) + 1.87 * push;
        }
        SessionKind::CollisionDefect if arm_phase == 0.0 => {
            // reach the left forearm across the torso into the right arm
            let push = pulse(t, 2.0, 6.0, 1.5);
            for j in 0..6 {
                q.0[j] = q.0[j] * (1.0 - push) + COLLISION_POSTURE[j] * push;
            }
        }
        _ => {}
    }
    q
}

/// Assemble a full dual-arm config from per-arm values, mapping by joint
/// name so the model's internal joint ordering never leaks into callers.
pub fn dual_full_config(model: &RobotModel, left: &JointConfig, right: &JointConfig) -> JointConfig {
    let mut q = JointConfig(vec![0.0; model.dof()]);
    for (i, joint) in model.non_fixed_joints().enumerate() {
        let (arm_q, suffix) = if let Some(s) = joint.name.strip_prefix("left_j") {
            (left, s)
        } else if let Some(s) = joint.name.strip_prefix("right_j") {
            (right, s)
        } else {
            continue;
        };
        let j: usize = suffix.parse().expect("fixture joint names are {arm}_jN");
        q.0[i] = arm_q.0[j - 1];
    }
    q
}

/// Gripper aperture script shared by every session: open, one close-open
/// cycle mid-session.
fn scripted_aperture(t: f64) -> f64 {
    let closed = pulse(t, 3.0, 5.5, 0.3);
    1.0 - 0.95 * closed
}

/// Number of pose samples in a generated session.
fn pose_sample_count() -> usize {
    (SESSION_DURATION_S * POSE_HZ) as usize + 1
}

/// Generate one raw capture session with poses at 120 Hz and two 30 Hz
/// camera streams. Controller poses are the FK of a scripted joint
/// trajectory, so the expected retargeting outcome is known exactly.
pub fn generate_session(index: usize, model: &RobotModel) -> RawSession {
    let kind = session_kind(index);
    let session_seed = 1000 + index as u64;
    let n_poses = pose_sample_count();
    let n_frames = (SESSION_DURATION_S * VIDEO_HZ) as usize + 1;

    let mut pose_streams: BTreeMap<String, Vec<PoseSample>> = BTreeMap::new();
    for (arm, arm_phase) in [("left", 0.0), ("right", 1.7)] {
        let ee = format!("{arm}_tcp");
        let mut samples = Vec::with_capacity(n_poses);
        for i in 0..n_poses {
            let t = i as f64 / POSE_HZ;
            let q_left = scripted_arm_config(t, 0.0, session_seed, kind);
            let q_right = scripted_arm_config(t, 1.7, session_seed.wrapping_add(1), kind);
            let full = dual_full_config(model, &q_left, &q_right);
            let mut pose = model.forward_kinematics(&full, &ee).expect("fixture FK");
            if kind == SessionKind::ReachDefect && arm == "left" {
                // C1 ramp out of the workspace: peak speed 1.0 m/s, well
                // under the 1.5 m/s motion limit
                pose.translation.z += 0.8 * pulse(t, 2.5, 6.0, 1.2);
            }
            let _ = arm_phase;
            samples.push(PoseSample {
                t,
                pose,
                gripper_aperture: scripted_aperture(t),
                tracking_confidence: 1.0,
            });
        }
        pose_streams.insert(arm.to_string(), samples);
    }

    let mut frame_streams: BTreeMap<String, Vec<FrameRef>> = BTreeMap::new();
    for cam in ["ego", "wrist"] {
        let frames = (0..n_frames)
            .map(|i| FrameRef {
                t: i as f64 / VIDEO_HZ,
                camera_id: cam.to_string(),
                image_path: format!("frames/{cam}/frame.pgm"),
                width: 64,
                height: 48,
            })
            .collect();
        frame_streams.insert(cam.to_string(), frames);
    }

    // two operators: op1 runs sessions 0..10 at the pace that pins the
    // throughput statistic, op2 runs the rest a minute apart
    let (operator, offset_s) = if index < 10 {
        ("op1", index as f64 * 386.27 / 9.0)
    } else {
        ("op2", 3600.0 + (index - 10) as f64 * 60.0)
    };
    let minutes = (offset_s / 60.0).floor() as u64;
    let seconds = offset_s - minutes as f64 * 60.0;
    let collected_at = format!(
        "2026-05-01T{:02}:{:02}:{:06.3}Z",
        10 + minutes / 60,
        minutes % 60,
        seconds
    );

    let instruction = if index % 2 == 0 {
        "Fold the towel".to_string()
    } else {
        "stack the cups".to_string()
    };

    RawSession {
        session_id: format!("sess-{index:03}"),
        operator_id: operator.to_string(),
        device_meta: DeviceMeta {
            gripper_kind: GripperKind::H,
            nominal_pose_hz: POSE_HZ,
            nominal_video_hz: VIDEO_HZ,
            baseline_distance_m: DUAL_ARM_BASELINE,
            camera_count: 2,
        },
        instruction,
        pose_streams,
        frame_streams,
        collected_at,
        calibration_ticks: (CALIBRATION_HOLD_S * VIDEO_HZ) as usize,
        root: PathBuf::new(),
    }
}

/// Sharp 64x48 checkerboard, the stand-in camera frame.
fn write_checkerboard(path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (w, h) = (64usize, 48usize);
    let mut header = format!("P5\n{w} {h}\n255\n").into_bytes();
    header.extend((0..w * h).map(|i| {
        let (x, y) = (i % w, i / w);
        if (x / 4 + y / 4) % 2 == 0 {
            0u8
        } else {
            255u8
        }
    }));
    std::fs::write(path, header)
}

/// Everything a pipeline run needs: robot files, quality profile, and the
/// session bundles.
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub urdf_path: PathBuf,
    pub profile_path: PathBuf,
    pub quality_path: PathBuf,
    pub session_roots: Vec<PathBuf>,
}

/// Write the full 20-session corpus plus robot and quality profiles under
/// `root`. Deterministic: identical bytes for identical `root` contents.
pub fn write_fixture_corpus(root: &Path) -> Result<FixtureCorpus, IngestError> {
    std::fs::create_dir_all(root)?;
    let model = dual_arm();

    let urdf_path = root.join("robot.urdf");
    std::fs::write(&urdf_path, dual_arm_urdf())?;
    let profile_path = root.join("robot_profile.json");
    fixture_profile("robot.urdf")
        .save(&profile_path)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
    let quality_path = root.join("quality_profile.json");
    std::fs::write(
        &quality_path,
        serde_json::to_string_pretty(&fixture_quality_profile()).expect("profile serializes")
            + "\n",
    )?;

    let mut session_roots = Vec::with_capacity(CORPUS_SIZE);
    for i in 0..CORPUS_SIZE {
        let mut session = generate_session(i, &model);
        let bundle = root.join(&session.session_id);
        session.root = bundle.clone();
        write_session(&session, &bundle)?;
        for cam in ["ego", "wrist"] {
            write_checkerboard(&bundle.join("frames").join(cam).join("frame.pgm"))?;
        }
        session_roots.push(bundle);
    }

    Ok(FixtureCorpus {
        root: root.to_path_buf(),
        urdf_path,
        profile_path,
        quality_path,
        session_roots,
    })
}
