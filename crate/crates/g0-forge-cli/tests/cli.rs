//! Black-box tests of the g0-forge binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use g0_forge::episodes::{Episode, EpisodeStore, SourceKind};
use g0_forge::fixtures::write_fixture_corpus;
use g0_forge::kinematics::JointConfig;
use g0_forge::math::Pose6D;
use g0_forge::retarget::{
    ArmTrack, CheckCounts, RetargetedTrajectory, ValidationReport, Verdict, Waypoint,
};
use nalgebra::{UnitQuaternion, Vector3};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_g0-forge"));
    c.env_remove("G0_FORGE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_error_is_exit_2() {
    let out = run(&["definitely-not-a-subcommand"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_path_is_exit_1() {
    let out = run(&["process", "/nonexistent/bundle"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("robot-profile"));
}

#[test]
fn process_stats_and_exports_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_fixture_corpus(&dir.path().join("corpus")).unwrap();
    let store = dir.path().join("store");
    let profile = corpus.profile_path.to_str().unwrap().to_string();
    let quality = corpus.quality_path.to_str().unwrap().to_string();

    let mut args = vec![
        "--robot-profile",
        profile.as_str(),
        "--quality-profile",
        quality.as_str(),
        "--store",
        store.to_str().unwrap(),
        "process",
    ];
    let bundles: Vec<String> = corpus
        .session_roots
        .iter()
        .map(|p| p.to_str().unwrap().to_string())
        .collect();
    args.extend(bundles.iter().map(|s| s.as_str()));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // stats reports the expected validity rate
    let out = run(&["stats", store.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let json_part = stdout.split("\n\n").next().unwrap();
    let stats: serde_json::Value = serde_json::from_str(json_part).unwrap();
    assert!((stats["validity_rate"].as_f64().unwrap() - 0.85).abs() < 1e-9, "{stdout}");
    assert!(stdout.contains("validity rate"), "{stdout}");

    // idempotence: second run leaves identical store bytes
    let before = fs::read(store.join("sess-000/trajectory.jsonl")).unwrap();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let after = fs::read(store.join("sess-000/trajectory.jsonl")).unwrap();
    assert_eq!(before, after);

    // playback export of a valid episode succeeds, invalid is refused
    let pb = dir.path().join("sess-000.g0p");
    let out = run(&[
        "--robot-profile",
        profile.as_str(),
        "--store",
        store.to_str().unwrap(),
        "export-playback",
        "sess-000",
        "--hz",
        "30",
        "--out",
        pb.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(&pb).unwrap();
    assert!(text.starts_with("#G0PLAYBACK {"));

    let out = run(&[
        "--robot-profile",
        profile.as_str(),
        "--store",
        store.to_str().unwrap(),
        "export-playback",
        "sess-018",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not valid"));

    // mix over the store's valid episodes, then shard export
    let manifest = dir.path().join("mix.json");
    let out = run(&[
        "--store",
        store.to_str().unwrap(),
        "mix",
        "--strategy",
        "pure-robot-free",
        "--robot-free",
        "17",
        "--seed",
        "7",
        "--out",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let shards = dir.path().join("shards");
    let out = run(&[
        "--store",
        store.to_str().unwrap(),
        "export-shards",
        manifest.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
        "--shard-size",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // 17 episodes at 5 per shard -> 4 shards
    let count = fs::read_dir(&shards)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(".jsonl")
        })
        .count();
    assert_eq!(count, 4);
}

#[test]
fn malformed_bundle_fails_without_poisoning_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_fixture_corpus(&dir.path().join("corpus")).unwrap();
    let good = &corpus.session_roots[0];
    let bad = &corpus.session_roots[1];

    // corrupt one line of the bad bundle's left pose stream
    let poses_path = bad.join("poses_left.jsonl");
    let mut lines: Vec<String> = fs::read_to_string(&poses_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[4] = "this is not json".to_string();
    fs::write(&poses_path, lines.join("\n") + "\n").unwrap();

    let store = dir.path().join("store");
    let out = run(&[
        "--robot-profile",
        corpus.profile_path.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
        "process",
        bad.to_str().unwrap(),
        good.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("poses_left.jsonl:5"), "{err}");

    // the good bundle still landed in the store
    let store = EpisodeStore::new(&store);
    assert_eq!(store.list().unwrap(), vec!["sess-000".to_string()]);
}

fn seed_store(root: &Path, robot_free: usize, real: usize) -> EpisodeStore {
    let store = EpisodeStore::new(root);
    let mk_traj = || {
        let timestamps = vec![0.0, 0.1];
        let track = ArmTrack {
            waypoints: timestamps
                .iter()
                .map(|&t| Waypoint {
                    t,
                    target: Pose6D::new(Vector3::new(0.3, 0.0, 0.3), UnitQuaternion::identity()),
                    gripper_width: 0.04,
                })
                .collect(),
            joints: vec![JointConfig(vec![0.0; 6]); 2],
            ik_converged: vec![true; 2],
        };
        let mut arms = std::collections::BTreeMap::new();
        arms.insert("left".to_string(), track.clone());
        arms.insert("right".to_string(), track);
        RetargetedTrajectory {
            session_id: "s".into(),
            arms,
            full_configs: vec![JointConfig(vec![0.0; 12]); 2],
            timestamps,
        }
    };
    for (prefix, source, count) in [
        ("rf", SourceKind::RobotFree, robot_free),
        ("rr", SourceKind::RealRobot, real),
    ] {
        for i in 0..count {
            let id = format!("{prefix}-{i:04}");
            let episode = Episode {
                episode_id: id.clone(),
                session_id: id.clone(),
                operator_id: "op1".into(),
                source,
                instruction: "fold towel".into(),
                task_label: "fold towel".into(),
                chunks: Vec::new(),
                duration: 0.1,
                verdict: Verdict::Valid,
                collected_at: "2026-05-01T10:00:00Z".into(),
            };
            let report = ValidationReport {
                session_id: id.clone(),
                ticks_in: 2,
                ticks_surviving: 2,
                counts: CheckCounts::default(),
                invalid_segments: Vec::new(),
                verdict: Verdict::Valid,
                survival_fraction: 1.0,
                warnings: Vec::new(),
            };
            store.write(&episode, &mk_traj(), &report).unwrap();
        }
    }
    store
}

#[test]
fn mix_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let store_root = dir.path().join("store");
    seed_store(&store_root, 30, 10);

    let run_mix = |out: &Path| {
        let r = run(&[
            "--store",
            store_root.to_str().unwrap(),
            "mix",
            "--strategy",
            "substitution",
            "--robot-free",
            "20",
            "--real",
            "2",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    };
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    run_mix(&a);
    run_mix(&b);
    let bytes_a = fs::read(&a).unwrap();
    assert_eq!(bytes_a, fs::read(&b).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&bytes_a).unwrap();
    assert_eq!(manifest["ratio"], serde_json::json!([10, 1]));
    assert_eq!(manifest["total"], serde_json::json!(22));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let store_root = dir.path().join("store");
    seed_store(&store_root, 3, 0);

    let config = dir.path().join("config.json");
    fs::write(
        &config,
        serde_json::json!({ "store": store_root }).to_string(),
    )
    .unwrap();

    // store comes from the config file via G0_FORGE_CONFIG
    let out = bin()
        .env("G0_FORGE_CONFIG", &config)
        .args(["stats"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"episode_count\": 3"), "{stdout}");

    // an explicit flag overrides the config's store
    let empty = dir.path().join("empty-store");
    fs::create_dir_all(&empty).unwrap();
    let out = bin()
        .env("G0_FORGE_CONFIG", &config)
        .args(["--store", empty.to_str().unwrap(), "stats"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"episode_count\": 0"), "{stdout}");
}
