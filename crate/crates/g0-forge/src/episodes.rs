//! Sub-task segmentation, keyframe detection, corpus statistics and the
//! on-disk episode store.
//!
//! Segmentation is driven by gripper-aperture events with hysteresis: a
//! close crossing opens a manipulation chunk, a sustained open crossing
//! closes it. The rule is robot-agnostic and observable in every episode.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retarget::{RetargetedTrajectory, ValidationReport, Verdict};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("episode '{0}' not found in store")]
    MissingEpisode(String),
    #[error("bad store entry {path}: {detail}")]
    BadStoreEntry { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    RobotFree,
    RealRobot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub label: String,
    /// [x, y, w, h] in egocentric pixels, when provided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub start_t: f64,
    pub end_t: f64,
    /// Empty until an annotation sidecar supplies one.
    #[serde(default)]
    pub sub_instruction: String,
    /// Global tick indices into the trajectory.
    #[serde(default)]
    pub keyframes: Vec<usize>,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
    /// True for grasp-to-release chunks, false for free motion.
    pub manipulation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub session_id: String,
    pub operator_id: String,
    pub source: SourceKind,
    pub instruction: String,
    /// Lowercased, trimmed instruction used for the histogram.
    pub task_label: String,
    pub chunks: Vec<Chunk>,
    pub duration: f64,
    pub verdict: Verdict,
    /// Wall-clock collection time, RFC 3339.
    pub collected_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRules {
    /// Close event: width crosses below close_frac * width_max.
    pub close_frac: f64,
    /// Open event: width crosses above open_frac * width_max ...
    pub open_frac: f64,
    /// ... and stays there for at least this many ticks.
    pub min_open_ticks: usize,
    /// Fully-open gripper width, meters.
    pub width_max: f64,
}

impl SegmentRules {
    pub fn for_width(width_max: f64) -> Self {
        Self {
            close_frac: 0.25,
            open_frac: 0.75,
            min_open_ticks: 10,
            width_max,
        }
    }
}

/// Per-arm manipulation intervals (close tick ..= confirmed-open tick,
/// inclusive of the close, exclusive semantics handled by the caller).
fn manipulation_intervals(widths: &[f64], rules: &SegmentRules) -> Vec<(usize, usize)> {
    let close_w = rules.close_frac * rules.width_max;
    let open_w = rules.open_frac * rules.width_max;
    let n = widths.len();
    let mut intervals = Vec::new();
    let mut i = 0usize;
    while i < n {
        if widths[i] < close_w && (i == 0 || widths[i - 1] >= close_w) {
            // close event; find the sustained reopen
            let mut end = n - 1;
            let mut j = i + 1;
            while j < n {
                if widths[j] > open_w {
                    let run_end = (j + rules.min_open_ticks).min(n);
                    if widths[j..run_end].iter().all(|w| *w > open_w)
                        && run_end - j >= rules.min_open_ticks.min(n - j)
                    {
                        end = j;
                        break;
                    }
                }
                j += 1;
            }
            intervals.push((i, end));
            i = end + 1;
        } else {
            i += 1;
        }
    }
    intervals
}

/// Place chunk boundaries at gripper events of either arm and classify
/// each resulting chunk as manipulation or free motion. A trajectory
/// without events is a single free-motion chunk.
pub fn segment(traj: &RetargetedTrajectory, rules: &SegmentRules) -> Vec<Chunk> {
    let n = traj.len();
    if n == 0 {
        return Vec::new();
    }
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    for track in traj.arms.values() {
        let widths: Vec<f64> = track.waypoints.iter().map(|w| w.gripper_width).collect();
        intervals.extend(manipulation_intervals(&widths, rules));
    }
    intervals.sort_unstable();

    let mut boundaries: Vec<usize> = vec![0, n - 1];
    for (s, e) in &intervals {
        boundaries.push(*s);
        boundaries.push(*e);
    }
    boundaries.sort_unstable();
    boundaries.dedup();

    let in_manipulation =
        |tick: usize| intervals.iter().any(|(s, e)| tick >= *s && tick < *e);

    let mut chunks = Vec::new();
    for w in boundaries.windows(2) {
        let (s, e) = (w[0], w[1]);
        if s == e {
            continue;
        }
        chunks.push(Chunk {
            start_t: traj.timestamps[s],
            end_t: traj.timestamps[e],
            sub_instruction: String::new(),
            keyframes: Vec::new(),
            objects: Vec::new(),
            manipulation: in_manipulation(s),
        });
    }
    if chunks.is_empty() {
        chunks.push(Chunk {
            start_t: traj.timestamps[0],
            end_t: traj.timestamps[n - 1],
            sub_instruction: String::new(),
            keyframes: Vec::new(),
            objects: Vec::new(),
            manipulation: false,
        });
    }
    chunks
}

/// TCP speed per tick: max over arms of the central-difference speed of
/// the waypoint translations.
fn tcp_speed(traj: &RetargetedTrajectory) -> Vec<f64> {
    let n = traj.len();
    let mut speed = vec![0.0f64; n];
    for track in traj.arms.values() {
        for i in 0..n {
            let (a, b) = if i == 0 {
                (0, 1.min(n - 1))
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            if a == b {
                continue;
            }
            let dt = track.waypoints[b].t - track.waypoints[a].t;
            let dp = (track.waypoints[b].target.translation
                - track.waypoints[a].target.translation)
                .norm();
            speed[i] = speed[i].max(dp / dt);
        }
    }
    speed
}

const SLOW_SPEED_MPS: f64 = 0.02;
const KEYFRAME_MIN_SEPARATION: usize = 10;

/// Keyframes of a chunk: its endpoints, every gripper hysteresis
/// crossing, and the slowest tick of each dwell (TCP speed below
/// 0.02 m/s), thinned to a minimum 10-tick separation.
pub fn detect_keyframes(
    chunk: &Chunk,
    traj: &RetargetedTrajectory,
    rules: &SegmentRules,
) -> Vec<usize> {
    let n = traj.len();
    if n == 0 {
        return Vec::new();
    }
    let start = traj
        .timestamps
        .iter()
        .position(|t| *t >= chunk.start_t - 1e-9)
        .unwrap_or(0);
    let end = traj
        .timestamps
        .iter()
        .rposition(|t| *t <= chunk.end_t + 1e-9)
        .unwrap_or(n - 1);
    let mut keys = vec![start, end];

    let close_w = rules.close_frac * rules.width_max;
    let open_w = rules.open_frac * rules.width_max;
    for track in traj.arms.values() {
        for i in start.max(1)..=end {
            let (prev, cur) = (
                track.waypoints[i - 1].gripper_width,
                track.waypoints[i].gripper_width,
            );
            let crossed = (prev >= close_w && cur < close_w)
                || (prev < close_w && cur >= close_w)
                || (prev <= open_w && cur > open_w)
                || (prev > open_w && cur <= open_w);
            if crossed {
                keys.push(i);
            }
        }
    }

    // slowest tick of each contiguous slow region
    let speed = tcp_speed(traj);
    let mut i = start;
    while i <= end {
        if speed[i] < SLOW_SPEED_MPS {
            let region_start = i;
            while i + 1 <= end && speed[i + 1] < SLOW_SPEED_MPS {
                i += 1;
            }
            let argmin = (region_start..=i)
                .min_by(|a, b| speed[*a].total_cmp(&speed[*b]))
                .expect("region non-empty");
            keys.push(argmin);
        }
        i += 1;
    }

    keys.sort_unstable();
    keys.dedup();
    // enforce separation, always keeping the chunk endpoints
    let mut out: Vec<usize> = Vec::new();
    for k in keys {
        if k == start || k == end {
            out.push(k);
        } else if out
            .last()
            .map(|&last| k >= last + KEYFRAME_MIN_SEPARATION)
            .unwrap_or(true)
            && end - k >= KEYFRAME_MIN_SEPARATION
        {
            out.push(k);
        }
    }
    out.dedup();
    out
}

/// Sidecar annotation file: `annotations.json` next to a session bundle.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationSidecar {
    #[serde(default)]
    pub chunks: Vec<SidecarChunk>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarChunk {
    pub start_t: f64,
    pub end_t: f64,
    #[serde(default)]
    pub sub_instruction: String,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
}

/// Attach sidecar sub-instructions and object labels to the computed
/// chunks by maximum temporal overlap. Chunk geometry never changes.
pub fn apply_annotations(chunks: &mut [Chunk], sidecar: &AnnotationSidecar) {
    for sc in &sidecar.chunks {
        let best = chunks
            .iter_mut()
            .max_by(|a, b| overlap(a, sc).total_cmp(&overlap(b, sc)));
        if let Some(chunk) = best {
            if overlap(chunk, sc) > 0.0 {
                chunk.sub_instruction = sc.sub_instruction.clone();
                chunk.objects = sc.objects.clone();
            }
        }
    }
}

fn overlap(chunk: &Chunk, sc: &SidecarChunk) -> f64 {
    (chunk.end_t.min(sc.end_t) - chunk.start_t.max(sc.start_t)).max(0.0)
}

pub fn normalize_task_label(instruction: &str) -> String {
    instruction.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub episode_count: usize,
    pub total_hours: f64,
    pub validity_rate: f64,
    /// Max over operator blocks of episodes / wall-clock hours.
    pub peak_episodes_per_hour: f64,
    pub mean_episodes_per_hour: f64,
    /// (task_label, count), most frequent first.
    pub task_histogram: Vec<(String, usize)>,
}

/// Seconds since epoch for a UTC RFC 3339 timestamp like
/// `2026-05-01T10:00:00Z`. Returns None on anything else.
fn parse_rfc3339_utc(s: &str) -> Option<f64> {
    let s = s.strip_suffix('Z')?;
    let (date, time) = s.split_once('T')?;
    let mut dp = date.split('-');
    let (y, mo, d) = (
        dp.next()?.parse::<i64>().ok()?,
        dp.next()?.parse::<u32>().ok()?,
        dp.next()?.parse::<u32>().ok()?,
    );
    let mut tp = time.split(':');
    let (h, mi) = (
        tp.next()?.parse::<u32>().ok()?,
        tp.next()?.parse::<u32>().ok()?,
    );
    let sec = tp.next()?.parse::<f64>().ok()?;
    if !(1..=12).contains(&mo) || !(1..=31).contains(&d) {
        return None;
    }
    // days since 1970-01-01, civil-from-days inverse (Howard Hinnant's algorithm)
    let y_adj = if mo <= 2 { y - 1 } else { y };
    let era = if y_adj >= 0 { y_adj } else { y_adj - 399 } / 400;
    let yoe = y_adj - era * 400;
    let mp = (mo as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146097 + doe - 719468;
    Some(days as f64 * 86400.0 + h as f64 * 3600.0 + mi as f64 * 60.0 + sec)
}

/// Gap between episodes of one operator that splits a collection block.
const BLOCK_GAP_S: f64 = 600.0;

pub fn compute_stats(episodes: &[Episode]) -> CorpusStats {
    let episode_count = episodes.len();
    if episode_count == 0 {
        return CorpusStats {
            episode_count: 0,
            total_hours: 0.0,
            validity_rate: 0.0,
            peak_episodes_per_hour: 0.0,
            mean_episodes_per_hour: 0.0,
            task_histogram: Vec::new(),
        };
    }
    let valid = episodes.iter().filter(|e| e.verdict == Verdict::Valid).count();
    let total_hours = episodes.iter().map(|e| e.duration).sum::<f64>() / 3600.0;

    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for e in episodes {
        *hist.entry(e.task_label.as_str()).or_default() += 1;
    }
    let mut task_histogram: Vec<(String, usize)> =
        hist.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    task_histogram.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    // operator blocks: same operator, consecutive gaps under 10 minutes
    let mut by_operator: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in episodes {
        if let Some(t) = parse_rfc3339_utc(&e.collected_at) {
            by_operator.entry(e.operator_id.as_str()).or_default().push(t);
        }
    }
    let mut block_rates = Vec::new();
    for times in by_operator.values_mut() {
        times.sort_by(|a, b| a.total_cmp(b));
        let mut block_start = 0usize;
        for i in 1..=times.len() {
            let block_ends = i == times.len() || times[i] - times[i - 1] >= BLOCK_GAP_S;
            if block_ends {
                let span = times[i - 1] - times[block_start];
                let count = i - block_start;
                if span > 0.0 {
                    block_rates.push(count as f64 * 3600.0 / span);
                }
                block_start = i;
            }
        }
    }
    let peak = block_rates.iter().copied().fold(0.0f64, f64::max);
    let mean = if block_rates.is_empty() {
        0.0
    } else {
        block_rates.iter().sum::<f64>() / block_rates.len() as f64
    };

    CorpusStats {
        episode_count,
        total_hours,
        validity_rate: valid as f64 / episode_count as f64,
        peak_episodes_per_hour: peak,
        mean_episodes_per_hour: mean,
        task_histogram,
    }
}

// --- episode store -------------------------------------------------------

/// On-disk layout: `<store>/<episode_id>/{episode.json, trajectory.jsonl,
/// report.json}`.
pub struct EpisodeStore {
    root: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    arms: BTreeMap<String, TrajectoryArmRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryArmRow {
    target: crate::math::Pose6D,
    joints: Vec<f64>,
    width: f64,
    converged: bool,
}

impl EpisodeStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn episode_dir(&self, episode_id: &str) -> PathBuf {
        self.root.join(episode_id)
    }

    pub fn write(
        &self,
        episode: &Episode,
        traj: &RetargetedTrajectory,
        report: &ValidationReport,
    ) -> Result<(), EpisodeError> {
        let dir = self.episode_dir(&episode.episode_id);
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("episode.json"),
            serde_json::to_string_pretty(episode)? + "\n",
        )?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(report)? + "\n",
        )?;
        let mut f = fs::File::create(dir.join("trajectory.jsonl"))?;
        for i in 0..traj.len() {
            let row = TrajectoryRow {
                t: traj.timestamps[i],
                arms: traj
                    .arms
                    .iter()
                    .map(|(arm, track)| {
                        (
                            arm.clone(),
                            TrajectoryArmRow {
                                target: track.waypoints[i].target,
                                joints: track.joints[i].0.clone(),
                                width: track.waypoints[i].gripper_width,
                                converged: track.ik_converged[i],
                            },
                        )
                    })
                    .collect(),
            };
            writeln!(f, "{}", serde_json::to_string(&row)?)?;
        }
        Ok(())
    }

    /// Persist per-tick frame paths (`frames.jsonl`, one JSON object per
    /// tick mapping camera_id to image path). Optional: episodes without
    /// stored frames load as empty maps.
    pub fn write_frames(
        &self,
        episode_id: &str,
        frames: &[BTreeMap<String, String>],
    ) -> Result<(), EpisodeError> {
        let dir = self.episode_dir(episode_id);
        fs::create_dir_all(&dir)?;
        let mut f = fs::File::create(dir.join("frames.jsonl"))?;
        for tick in frames {
            writeln!(f, "{}", serde_json::to_string(tick)?)?;
        }
        Ok(())
    }

    pub fn load_frames(
        &self,
        episode_id: &str,
    ) -> Result<Vec<BTreeMap<String, String>>, EpisodeError> {
        let path = self.episode_dir(episode_id).join("frames.jsonl");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| EpisodeError::BadStoreEntry {
                path: format!("{}:{}", path.display(), i + 1),
                detail: e.to_string(),
            })?);
        }
        Ok(out)
    }

    pub fn list(&self) -> Result<Vec<String>, EpisodeError> {
        if !self.root.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("episode.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn load_episode(&self, episode_id: &str) -> Result<Episode, EpisodeError> {
        let path = self.episode_dir(episode_id).join("episode.json");
        if !path.is_file() {
            return Err(EpisodeError::MissingEpisode(episode_id.to_string()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn load_report(&self, episode_id: &str) -> Result<ValidationReport, EpisodeError> {
        let path = self.episode_dir(episode_id).join("report.json");
        if !path.is_file() {
            return Err(EpisodeError::MissingEpisode(episode_id.to_string()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn load_trajectory(
        &self,
        episode_id: &str,
    ) -> Result<RetargetedTrajectory, EpisodeError> {
        use crate::kinematics::JointConfig;
        use crate::retarget::{ArmTrack, Waypoint};

        let path = self.episode_dir(episode_id).join("trajectory.jsonl");
        if !path.is_file() {
            return Err(EpisodeError::MissingEpisode(episode_id.to_string()));
        }
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut arms: BTreeMap<String, ArmTrack> = BTreeMap::new();
        let mut timestamps = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TrajectoryRow =
                serde_json::from_str(&line).map_err(|e| EpisodeError::BadStoreEntry {
                    path: format!("{}:{}", path.display(), i + 1),
                    detail: e.to_string(),
                })?;
            timestamps.push(row.t);
            for (arm, a) in row.arms {
                let track = arms.entry(arm).or_insert_with(|| ArmTrack {
                    waypoints: Vec::new(),
                    joints: Vec::new(),
                    ik_converged: Vec::new(),
                });
                track.waypoints.push(Waypoint {
                    t: row.t,
                    target: a.target,
                    gripper_width: a.width,
                });
                track.joints.push(JointConfig(a.joints));
                track.ik_converged.push(a.converged);
            }
        }
        Ok(RetargetedTrajectory {
            session_id: episode_id.to_string(),
            arms,
            // full configs are not persisted; checks ran before storage
            full_configs: Vec::new(),
            timestamps,
        })
    }
}
