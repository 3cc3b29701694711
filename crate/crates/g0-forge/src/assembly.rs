//! Dataset assembly: mixing manifests over episode pools, open-loop
//! playback export, and training shard export.
//!
//! Manifest sampling must be reproducible across machines, so it uses an
//! explicit SplitMix64 stream and a Fisher-Yates shuffle over the sorted
//! pool (see [`sample_pool`]) instead of an unspecified library RNG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::episodes::{Chunk, Episode, EpisodeError, EpisodeStore, SourceKind};
use crate::exec::map_batch;
use crate::fixtures::SplitMix64;
use crate::math::Pose6D;
use crate::retarget::{RetargetedTrajectory, Verdict};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("pool '{pool}' has {available} episodes, {requested} requested")]
    InsufficientPool {
        pool: String,
        requested: usize,
        available: usize,
    },
    #[error("episode '{0}' is not valid and cannot be exported")]
    InvalidEpisode(String),
    #[error("trajectory gap of {gap:.3} s at t={t:.3} exceeds 1 s; refusing to interpolate")]
    UnsampledGap { t: f64, gap: f64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    PureReal,
    PureRobotFree,
    Augmentation,
    Substitution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub episode_id: String,
    pub source: SourceKind,
    /// Always 1.0 today; reserved for weighted mixing.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub name: String,
    pub strategy: MixStrategy,
    pub entries: Vec<MixEntry>,
    pub n_robot_free: usize,
    pub n_real_robot: usize,
    /// (robot_free, real_robot), gcd-reduced.
    pub ratio: (u64, u64),
    pub seed: u64,
    pub total: usize,
    /// "pretrain" / "finetune" when the consumer trains in phases;
    /// absent means composition only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// gcd-reduced (robot_free, real_robot); (0, 0) stays (0, 0).
pub fn reduced_ratio(n_f: usize, n_r: usize) -> (u64, u64) {
    let (a, b) = (n_f as u64, n_r as u64);
    let g = gcd(a, b);
    if g == 0 { (0, 0) } else { (a / g, b / g) }
}

/// Deterministic sample without replacement: sort ids, Fisher-Yates
/// shuffle with the supplied stream, take the first `n`.
fn sample_pool(
    source: &str,
    pool: &[String],
    n: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<String>, AssemblyError> {
    if n > pool.len() {
        return Err(AssemblyError::InsufficientPool {
            pool: source.to_string(),
            requested: n,
            available: pool.len(),
        });
    }
    let mut ids: Vec<String> = pool.to_vec();
    ids.sort();
    for i in (1..ids.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
    ids.truncate(n);
    Ok(ids)
}

/// Build a mixing manifest from eligible (already-validated) episode
/// pools. The robot-free pool is sampled first, then the real-robot
/// pool, both from one seed-determined stream.
pub fn build_mix_manifest(
    name: &str,
    robot_free_pool: &[String],
    real_robot_pool: &[String],
    strategy: MixStrategy,
    n_robot_free: usize,
    n_real_robot: usize,
    seed: u64,
) -> Result<MixManifest, AssemblyError> {
    let mut rng = SplitMix64(seed);
    let picked_free = sample_pool("robot_free", robot_free_pool, n_robot_free, &mut rng)?;
    let picked_real = sample_pool("real_robot", real_robot_pool, n_real_robot, &mut rng)?;

    let mut entries = Vec::with_capacity(n_robot_free + n_real_robot);
    for id in picked_free {
        entries.push(MixEntry {
            episode_id: id,
            source: SourceKind::RobotFree,
            weight: 1.0,
        });
    }
    for id in picked_real {
        entries.push(MixEntry {
            episode_id: id,
            source: SourceKind::RealRobot,
            weight: 1.0,
        });
    }

    Ok(MixManifest {
        name: name.to_string(),
        strategy,
        entries,
        n_robot_free,
        n_real_robot,
        ratio: reduced_ratio(n_robot_free, n_real_robot),
        seed,
        total: n_robot_free + n_real_robot,
        phase: None,
    })
}

impl MixManifest {
    pub fn save(&self, path: &Path) -> Result<(), AssemblyError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AssemblyError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

// --- playback export -----------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackRow {
    pub t: f64,
    /// One Vec per arm, in `arms` order.
    pub joints: Vec<Vec<f64>>,
    /// One width per arm, in `arms` order.
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackFile {
    pub robot_name: String,
    pub control_hz: f64,
    pub arms: Vec<String>,
    pub joints_per_arm: usize,
    pub rows: Vec<PlaybackRow>,
}

fn lerp_scalar(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

/// Resample an episode's joint trajectory onto a uniform control grid.
/// Knots that land exactly on the grid pass through bit-for-bit.
pub fn export_playback(
    episode: &Episode,
    traj: &RetargetedTrajectory,
    robot_name: &str,
    control_hz: f64,
) -> Result<PlaybackFile, AssemblyError> {
    if episode.verdict != Verdict::Valid {
        return Err(AssemblyError::InvalidEpisode(episode.episode_id.clone()));
    }
    let n = traj.len();
    if n == 0 {
        return Err(AssemblyError::EmptyTrajectory);
    }
    for w in traj.timestamps.windows(2) {
        let gap = w[1] - w[0];
        if gap > 1.0 {
            return Err(AssemblyError::UnsampledGap { t: w[0], gap });
        }
    }

    let arms: Vec<String> = traj.arms.keys().cloned().collect();
    let joints_per_arm = traj
        .arms
        .values()
        .next()
        .map(|a| a.joints.first().map(|j| j.0.len()).unwrap_or(0))
        .unwrap_or(0);

    let t0 = traj.timestamps[0];
    let t_end = traj.timestamps[n - 1];
    let count = ((t_end - t0) * control_hz + 1e-9).floor() as usize + 1;

    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let t = t0 + i as f64 / control_hz;
        // segment index: last knot with timestamp <= t
        let hi = traj.timestamps.partition_point(|&k| k <= t).min(n - 1);
        let (a, b) = if hi == 0 { (0, 0) } else { (hi - 1, hi) };
        let exact_a = traj.timestamps[a] == t;
        let exact_b = traj.timestamps[b] == t;
        let u = if a == b || exact_a || exact_b {
            0.0
        } else {
            (t - traj.timestamps[a]) / (traj.timestamps[b] - traj.timestamps[a])
        };
        let pick = if exact_b { b } else { a };

        let mut joints = Vec::with_capacity(arms.len());
        let mut widths = Vec::with_capacity(arms.len());
        for arm in &arms {
            let track = &traj.arms[arm];
            if u == 0.0 {
                joints.push(track.joints[pick].0.clone());
                widths.push(track.waypoints[pick].gripper_width);
            } else {
                let ja = &track.joints[a].0;
                let jb = &track.joints[b].0;
                joints.push(
                    ja.iter()
                        .zip(jb)
                        .map(|(x, y)| lerp_scalar(*x, *y, u))
                        .collect(),
                );
                widths.push(lerp_scalar(
                    track.waypoints[a].gripper_width,
                    track.waypoints[b].gripper_width,
                    u,
                ));
            }
        }
        rows.push(PlaybackRow { t, joints, widths });
    }

    Ok(PlaybackFile {
        robot_name: robot_name.to_string(),
        control_hz,
        arms,
        joints_per_arm,
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct PlaybackHeader {
    robot: String,
    control_hz: f64,
    arms: Vec<String>,
    joints_per_arm: usize,
}

/// 9 significant digits.
fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

impl PlaybackFile {
    /// `#G0PLAYBACK <json>` header line, then CSV rows
    /// `t,ql_1..ql_N,qr_1..qr_N,wl,wr`.
    pub fn to_string_exact(&self) -> String {
        let header = PlaybackHeader {
            robot: self.robot_name.clone(),
            control_hz: self.control_hz,
            arms: self.arms.clone(),
            joints_per_arm: self.joints_per_arm,
        };
        let mut out = format!(
            "#G0PLAYBACK {}\n",
            serde_json::to_string(&header).expect("header serializes")
        );
        for row in &self.rows {
            let mut line = fmt_sig9(row.t);
            for arm_joints in &row.joints {
                for q in arm_joints {
                    let _ = write!(line, ",{}", fmt_sig9(*q));
                }
            }
            for w in &row.widths {
                let _ = write!(line, ",{}", fmt_sig9(*w));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), AssemblyError> {
        fs::write(path, self.to_string_exact())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, AssemblyError> {
        let mut lines = text.lines();
        let header_line = lines.next().unwrap_or("");
        let json = header_line.strip_prefix("#G0PLAYBACK ").ok_or_else(|| {
            AssemblyError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "missing #G0PLAYBACK header",
            ))
        })?;
        let header: PlaybackHeader = serde_json::from_str(json)?;
        let n_arms = header.arms.len();
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| {
                    AssemblyError::Io(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        e.to_string(),
                    ))
                })?;
            let t = vals[0];
            let mut joints = Vec::with_capacity(n_arms);
            let mut off = 1;
            for _ in 0..n_arms {
                joints.push(vals[off..off + header.joints_per_arm].to_vec());
                off += header.joints_per_arm;
            }
            let widths = vals[off..off + n_arms].to_vec();
            rows.push(PlaybackRow { t, joints, widths });
        }
        Ok(Self {
            robot_name: header.robot,
            control_hz: header.control_hz,
            arms: header.arms,
            joints_per_arm: header.joints_per_arm,
            rows,
        })
    }
}

// --- training shards -----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardTickArm {
    pub tcp: Pose6D,
    pub width: f64,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardTick {
    pub t: f64,
    /// camera_id -> frame path, when frame metadata was stored.
    #[serde(default)]
    pub frames: BTreeMap<String, String>,
    pub arms: BTreeMap<String, ShardTickArm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardRecord {
    pub episode_id: String,
    pub source: SourceKind,
    pub instruction: String,
    pub chunks: Vec<Chunk>,
    pub ticks: Vec<ShardTick>,
}

/// Write the manifest's episodes to `<out_dir>/shard-XXX.jsonl`, at most
/// `shard_size` per shard, in manifest order, plus a `.sha256` sidecar
/// per shard. Returns the shard paths.
pub fn export_training_shards(
    manifest: &MixManifest,
    store: &EpisodeStore,
    out_dir: &Path,
    shard_size: usize,
) -> Result<Vec<PathBuf>, AssemblyError> {
    assert!(shard_size > 0, "shard_size must be positive");
    fs::create_dir_all(out_dir)?;

    // build every record up front so a missing episode fails the whole
    // export before any shard is written
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let episode = store.load_episode(&entry.episode_id)?;
        let traj = store.load_trajectory(&entry.episode_id)?;
        let frames = store.load_frames(&entry.episode_id)?;
        let ticks = (0..traj.len())
            .map(|i| ShardTick {
                t: traj.timestamps[i],
                frames: frames.get(i).cloned().unwrap_or_default(),
                arms: traj
                    .arms
                    .iter()
                    .map(|(arm, track)| {
                        (
                            arm.clone(),
                            ShardTickArm {
                                tcp: track.waypoints[i].target,
                                width: track.waypoints[i].gripper_width,
                                joints: track.joints[i].0.clone(),
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        records.push(ShardRecord {
            episode_id: entry.episode_id.clone(),
            source: entry.source,
            instruction: episode.instruction.clone(),
            chunks: episode.chunks.clone(),
            ticks,
        });
    }

    let shards: Vec<Vec<ShardRecord>> = records
        .chunks(shard_size)
        .map(|c| c.to_vec())
        .collect();
    // serialize shard bodies in parallel; content per shard is a pure
    // function of its records
    let bodies: Vec<Result<String, String>> = map_batch(shards, |records| {
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r).map_err(|e| e.to_string())?);
            body.push('\n');
        }
        Ok(body)
    });

    let mut paths = Vec::with_capacity(bodies.len());
    for (i, body) in bodies.into_iter().enumerate() {
        let body = body.map_err(|e| {
            AssemblyError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })?;
        let path = out_dir.join(format!("shard-{i:03}.jsonl"));
        fs::write(&path, &body)?;
        let digest = Sha256::digest(body.as_bytes());
        let checksum = format!("{:x}  shard-{i:03}.jsonl\n", digest);
        fs::write(out_dir.join(format!("shard-{i:03}.sha256")), checksum)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::kinematics::JointConfig;
    use crate::retarget::{ArmTrack, ValidationReport, Waypoint};
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}-{i:04}")).collect()
    }

    #[test]
    fn augmentation_mix_500_500() {
        let m = build_mix_manifest(
            "aug",
            &ids("rf", 500),
            &ids("rr", 500),
            MixStrategy::Augmentation,
            500,
            500,
            7,
        )
        .unwrap();
        assert_eq!(m.total, 1000);
        assert_eq!(m.ratio, (1, 1));
        assert_eq!(m.n_robot_free, 500);
        assert_eq!(m.n_real_robot, 500);
        let unique: BTreeSet<&str> =
            m.entries.iter().map(|e| e.episode_id.as_str()).collect();
        assert_eq!(unique.len(), 1000);
    }

    #[test]
    fn substitution_mix_500_50() {
        let m = build_mix_manifest(
            "sub",
            &ids("rf", 500),
            &ids("rr", 50),
            MixStrategy::Substitution,
            500,
            50,
            7,
        )
        .unwrap();
        assert_eq!(m.total, 550);
        assert_eq!(m.ratio, (10, 1));
    }

    #[test]
    fn pure_real_mix_500() {
        let m = build_mix_manifest(
            "real",
            &[],
            &ids("rr", 500),
            MixStrategy::PureReal,
            0,
            500,
            7,
        )
        .unwrap();
        assert_eq!(m.n_robot_free, 0);
        assert_eq!(m.n_real_robot, 500);
        assert_eq!(m.ratio, (0, 1));
    }

    #[test]
    fn manifest_is_seed_stable_and_seed_sensitive() {
        let rf = ids("rf", 100);
        let rr = ids("rr", 100);
        let a = build_mix_manifest("m", &rf, &rr, MixStrategy::Augmentation, 50, 50, 7).unwrap();
        let b = build_mix_manifest("m", &rf, &rr, MixStrategy::Augmentation, 50, 50, 7).unwrap();
        let c = build_mix_manifest("m", &rf, &rr, MixStrategy::Augmentation, 50, 50, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn pool_order_does_not_matter() {
        let mut rf = ids("rf", 40);
        let rr = ids("rr", 10);
        let a = build_mix_manifest("m", &rf, &rr, MixStrategy::Substitution, 30, 3, 5).unwrap();
        rf.reverse();
        let b = build_mix_manifest("m", &rf, &rr, MixStrategy::Substitution, 30, 3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insufficient_pool_is_an_error() {
        let err = build_mix_manifest(
            "m",
            &ids("rf", 10),
            &ids("rr", 10),
            MixStrategy::Augmentation,
            20,
            5,
            1,
        )
        .unwrap_err();
        match err {
            AssemblyError::InsufficientPool {
                pool,
                requested,
                available,
            } => {
                assert_eq!(pool, "robot_free");
                assert_eq!(requested, 20);
                assert_eq!(available, 10);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn ratio_reduction() {
        assert_eq!(reduced_ratio(500, 50), (10, 1));
        assert_eq!(reduced_ratio(500, 500), (1, 1));
        assert_eq!(reduced_ratio(0, 500), (0, 1));
        assert_eq!(reduced_ratio(0, 0), (0, 0));
        assert_eq!(reduced_ratio(6, 4), (3, 2));
    }

    fn traj(n: usize, hz: f64) -> RetargetedTrajectory {
        let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / hz).collect();
        let mk = |phase: f64| ArmTrack {
            waypoints: (0..n)
                .map(|i| Waypoint {
                    t: timestamps[i],
                    target: Pose6D::new(
                        Vector3::new(0.3 + 0.01 * (i as f64 * 0.1 + phase).sin(), 0.0, 0.3),
                        UnitQuaternion::identity(),
                    ),
                    gripper_width: 0.04 + 0.01 * (i as f64 * 0.05).cos(),
                })
                .collect(),
            joints: (0..n)
                .map(|i| {
                    JointConfig(
                        (0..6)
                            .map(|j| 0.1 * j as f64 + 0.02 * (i as f64 * 0.1 + phase).sin())
                            .collect(),
                    )
                })
                .collect(),
            ik_converged: vec![true; n],
        };
        let mut arms = BTreeMap::new();
        arms.insert("left".to_string(), mk(0.0));
        arms.insert("right".to_string(), mk(1.0));
        RetargetedTrajectory {
            session_id: "s".into(),
            arms,
            full_configs: vec![JointConfig(vec![0.0; 12]); n],
            timestamps,
        }
    }

    fn valid_episode(id: &str) -> Episode {
        Episode {
            episode_id: id.into(),
            session_id: id.into(),
            operator_id: "op1".into(),
            source: SourceKind::RobotFree,
            instruction: "fold towel".into(),
            task_label: "fold towel".into(),
            chunks: Vec::new(),
            duration: 2.0,
            verdict: Verdict::Valid,
            collected_at: "2026-05-01T10:00:00Z".into(),
        }
    }

    #[test]
    fn playback_at_native_rate_is_bit_identical() {
        let traj = traj(61, 30.0);
        let ep = valid_episode("e1");
        let pb = export_playback(&ep, &traj, "bot", 30.0).unwrap();
        assert_eq!(pb.rows.len(), 61);
        for (i, row) in pb.rows.iter().enumerate() {
            assert_eq!(row.joints[0], traj.arms["left"].joints[i].0);
            assert_eq!(row.joints[1], traj.arms["right"].joints[i].0);
            assert_eq!(row.widths[0], traj.arms["left"].waypoints[i].gripper_width);
        }
    }

    #[test]
    fn playback_grid_uniform_and_monotonic() {
        let traj = traj(61, 30.0);
        let pb = export_playback(&valid_episode("e1"), &traj, "bot", 47.0).unwrap();
        let expected = ((2.0 * 47.0) as usize) + 1;
        assert_eq!(pb.rows.len(), expected);
        for w in pb.rows.windows(2) {
            assert!((w[1].t - w[0].t - 1.0 / 47.0).abs() < 1e-9);
        }
    }

    #[test]
    fn playback_upsample_stays_in_joint_hull() {
        let traj = traj(61, 30.0);
        let pb = export_playback(&valid_episode("e1"), &traj, "bot", 120.0).unwrap();
        for row in &pb.rows {
            let hi = traj.timestamps.partition_point(|&k| k <= row.t).min(60);
            let lo = hi.saturating_sub(1);
            for (arm_i, arm) in ["left", "right"].iter().enumerate() {
                let ja = &traj.arms[*arm].joints[lo].0;
                let jb = &traj.arms[*arm].joints[hi].0;
                for (k, q) in row.joints[arm_i].iter().enumerate() {
                    let (min, max) = (ja[k].min(jb[k]), ja[k].max(jb[k]));
                    assert!(*q >= min - 1e-12 && *q <= max + 1e-12);
                }
            }
        }
    }

    #[test]
    fn playback_rejects_invalid_episode() {
        let traj = traj(10, 30.0);
        let mut ep = valid_episode("e1");
        ep.verdict = Verdict::Invalid;
        assert!(matches!(
            export_playback(&ep, &traj, "bot", 30.0),
            Err(AssemblyError::InvalidEpisode(_))
        ));
    }

    #[test]
    fn playback_rejects_large_gap() {
        let mut traj = traj(10, 30.0);
        for i in 5..10 {
            traj.timestamps[i] += 1.5;
            for track in traj.arms.values_mut() {
                track.waypoints[i].t += 1.5;
            }
        }
        assert!(matches!(
            export_playback(&valid_episode("e1"), &traj, "bot", 30.0),
            Err(AssemblyError::UnsampledGap { .. })
        ));
    }

    #[test]
    fn playback_text_round_trip() {
        let traj = traj(20, 30.0);
        let pb = export_playback(&valid_episode("e1"), &traj, "bot", 30.0).unwrap();
        let text = pb.to_string_exact();
        assert!(text.starts_with("#G0PLAYBACK {"));
        let parsed = PlaybackFile::parse(&text).unwrap();
        assert_eq!(parsed.arms, vec!["left", "right"]);
        assert_eq!(parsed.joints_per_arm, 6);
        assert_eq!(parsed.rows.len(), pb.rows.len());
        // 9 significant digits keep ~1e-9 relative accuracy
        for (a, b) in parsed.rows.iter().zip(&pb.rows) {
            assert_relative_eq!(a.t, b.t, max_relative = 1e-8, epsilon = 1e-12);
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                for (x, y) in ja.iter().zip(jb) {
                    assert_relative_eq!(x, y, max_relative = 1e-8, epsilon = 1e-12);
                }
            }
        }
    }

    fn populated_store(dir: &Path, n: usize) -> EpisodeStore {
        let store = EpisodeStore::new(dir);
        for i in 0..n {
            let id = format!("ep-{i:04}");
            let t = traj(20, 30.0);
            let ep = valid_episode(&id);
            let report = ValidationReport {
                session_id: id.clone(),
                ticks_in: 20,
                ticks_surviving: 20,
                counts: Default::default(),
                invalid_segments: Vec::new(),
                verdict: Verdict::Valid,
                survival_fraction: 1.0,
                warnings: Vec::new(),
            };
            store.write(&ep, &t, &report).unwrap();
        }
        store
    }

    #[test]
    fn shard_sizes_550_by_100() {
        let dir = tempfile::tempdir().unwrap();
        let store = populated_store(&dir.path().join("store"), 12);
        // 12 episodes, shard_size 5 -> [5, 5, 2]; same arithmetic as
        // 550/100 -> [100 x 5, 50]
        let all = store.list().unwrap();
        let manifest =
            build_mix_manifest("m", &all, &[], MixStrategy::PureRobotFree, 12, 0, 3).unwrap();
        let out = dir.path().join("shards");
        let paths = export_training_shards(&manifest, &store, &out, 5).unwrap();
        assert_eq!(paths.len(), 3);
        let sizes: Vec<usize> = paths
            .iter()
            .map(|p| fs::read_to_string(p).unwrap().lines().count())
            .collect();
        assert_eq!(sizes, vec![5, 5, 2]);
        // checksums exist and match
        for (i, p) in paths.iter().enumerate() {
            let sum = fs::read_to_string(out.join(format!("shard-{i:03}.sha256"))).unwrap();
            let digest = Sha256::digest(fs::read(p).unwrap());
            assert!(sum.starts_with(&format!("{digest:x}")));
        }
    }

    #[test]
    fn shard_completeness_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = populated_store(&dir.path().join("store"), 7);
        let all = store.list().unwrap();
        let manifest =
            build_mix_manifest("m", &all, &[], MixStrategy::PureRobotFree, 7, 0, 11).unwrap();
        let out = dir.path().join("shards");
        let paths = export_training_shards(&manifest, &store, &out, 3).unwrap();
        let mut seen = Vec::new();
        for p in &paths {
            for line in fs::read_to_string(p).unwrap().lines() {
                let rec: ShardRecord = serde_json::from_str(line).unwrap();
                seen.push(rec.episode_id);
            }
        }
        let expected: Vec<String> =
            manifest.entries.iter().map(|e| e.episode_id.clone()).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn reexport_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = populated_store(&dir.path().join("store"), 6);
        let all = store.list().unwrap();
        let manifest =
            build_mix_manifest("m", &all, &[], MixStrategy::PureRobotFree, 6, 0, 2).unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        export_training_shards(&manifest, &store, &out1, 4).unwrap();
        export_training_shards(&manifest, &store, &out2, 4).unwrap();
        for name in ["shard-000.jsonl", "shard-001.jsonl", "shard-000.sha256"] {
            assert_eq!(
                fs::read(out1.join(name)).unwrap(),
                fs::read(out2.join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn missing_episode_fails_export() {
        let dir = tempfile::tempdir().unwrap();
        let store = populated_store(&dir.path().join("store"), 2);
        let manifest = MixManifest {
            name: "m".into(),
            strategy: MixStrategy::PureRobotFree,
            entries: vec![MixEntry {
                episode_id: "ep-9999".into(),
                source: SourceKind::RobotFree,
                weight: 1.0,
            }],
            n_robot_free: 1,
            n_real_robot: 0,
            ratio: (1, 0),
            seed: 0,
            total: 1,
            phase: None,
        };
        let err =
            export_training_shards(&manifest, &store, &dir.path().join("out"), 10).unwrap_err();
        assert!(matches!(
            err,
            AssemblyError::Episode(EpisodeError::MissingEpisode(_))
        ));
    }
}
