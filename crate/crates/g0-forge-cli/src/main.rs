//! Command-line front end for the capture-to-episode pipeline.
//!
//! Exit codes: 0 success, 1 hard error (including any failed session in a
//! batch), 2 usage error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use g0_forge::assembly::{
    build_mix_manifest, export_playback, export_training_shards, MixManifest, MixStrategy,
};
use g0_forge::episodes::{compute_stats, EpisodeStore, SourceKind};
use g0_forge::exec::configure_parallelism;
use g0_forge::ingest::{parse_session, validate_session};
use g0_forge::pipeline::{load_robot, process_batch};
use g0_forge::quality::QualityProfile;
use g0_forge::retarget::Verdict;

#[derive(Parser)]
#[command(
    name = "g0-forge",
    about = "Turn wearable capture sessions into validated robot episodes",
    version
)]
struct Cli {
    /// JSON config file; flags override its values. Defaults to
    /// $G0_FORGE_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Robot profile JSON.
    #[arg(long, global = true)]
    robot_profile: Option<PathBuf>,
    /// Quality thresholds JSON.
    #[arg(long, global = true)]
    quality_profile: Option<PathBuf>,
    /// Episode store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Sync tick rate; defaults to each session's nominal video rate.
    #[arg(long, global = true)]
    tick_hz: Option<f64>,
    /// Worker threads for batch stages; 0 = all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error | warn | info | debug | trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse bundles and write an ingest_report.json into each.
    Ingest { bundles: Vec<PathBuf> },
    /// Run the full pipeline over session bundles into the store.
    Process { bundles: Vec<PathBuf> },
    /// Corpus statistics for a store (JSON plus a text table).
    Stats { store: Option<PathBuf> },
    /// Build a data-mixing manifest from the valid episodes in a store.
    Mix(MixArgs),
    /// Export a stored episode as an open-loop playback file.
    ExportPlayback(ExportPlaybackArgs),
    /// Export manifest episodes as training shards.
    ExportShards(ExportShardsArgs),
}

#[derive(Args)]
struct MixArgs {
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Robot-free episodes to sample.
    #[arg(long, default_value_t = 0)]
    robot_free: usize,
    /// Real-robot episodes to sample.
    #[arg(long, default_value_t = 0)]
    real: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mix")]
    name: String,
    /// Output manifest path.
    #[arg(long, default_value = "mix.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    PureReal,
    PureRobotFree,
    Augmentation,
    Substitution,
}

impl From<StrategyArg> for MixStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::PureReal => MixStrategy::PureReal,
            StrategyArg::PureRobotFree => MixStrategy::PureRobotFree,
            StrategyArg::Augmentation => MixStrategy::Augmentation,
            StrategyArg::Substitution => MixStrategy::Substitution,
        }
    }
}

#[derive(Args)]
struct ExportPlaybackArgs {
    episode_id: String,
    /// Control rate of the target robot.
    #[arg(long, default_value_t = 30.0)]
    hz: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportShardsArgs {
    manifest: PathBuf,
    #[arg(long, default_value = "shards")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    shard_size: usize,
}

/// On-disk config; every field optional, flags win.
#[derive(Default, Deserialize)]
struct FileConfig {
    robot_profile: Option<PathBuf>,
    quality_profile: Option<PathBuf>,
    store: Option<PathBuf>,
    tick_hz: Option<f64>,
    threads: Option<usize>,
    log_level: Option<String>,
}

struct Config {
    robot_profile: Option<PathBuf>,
    quality_profile: Option<PathBuf>,
    store: Option<PathBuf>,
    tick_hz: Option<f64>,
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let config_path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("G0_FORGE_CONFIG").map(PathBuf::from));
    let file: FileConfig = match &config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid config {}", p.display()))?
        }
        None => FileConfig::default(),
    };

    let level = cli
        .log_level
        .clone()
        .or(file.log_level)
        .unwrap_or_else(|| "info".to_string());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .try_init()
        .ok();

    let threads = cli.threads.or(file.threads).unwrap_or(0);
    if threads > 0 {
        configure_parallelism(threads);
    }

    let tick_hz = cli.tick_hz.or(file.tick_hz);
    if let Some(hz) = tick_hz {
        if hz <= 0.0 {
            bail!("tick_hz must be positive, got {hz}");
        }
    }

    Ok(Config {
        robot_profile: cli.robot_profile.clone().or(file.robot_profile),
        quality_profile: cli.quality_profile.clone().or(file.quality_profile),
        store: cli.store.clone().or(file.store),
        tick_hz,
    })
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .with_context(|| format!("{what} required: pass --{} or set it in the config", what))
}

fn open_store(cfg: &Config, positional: Option<&PathBuf>) -> Result<EpisodeStore> {
    let root = positional
        .cloned()
        .or_else(|| cfg.store.clone())
        .context("store path required: positional argument, --store, or config")?;
    Ok(EpisodeStore::new(root))
}

fn load_quality(cfg: &Config) -> Result<QualityProfile> {
    match &cfg.quality_profile {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read quality profile {}", p.display()))?;
            Ok(serde_json::from_str(&text)
                .with_context(|| format!("invalid quality profile {}", p.display()))?)
        }
        None => Ok(QualityProfile::default()),
    }
}

fn cmd_ingest(bundles: &[PathBuf]) -> Result<bool> {
    if bundles.is_empty() {
        bail!("no bundles given");
    }
    let mut any_failed = false;
    for bundle in bundles {
        match parse_session(bundle) {
            Ok(session) => {
                let report = validate_session(&session);
                let out = bundle.join("ingest_report.json");
                std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
                log::info!(
                    "{}: {} poses/arm, {} warnings -> {}",
                    session.session_id,
                    report.pose_counts.values().next().copied().unwrap_or(0),
                    report.warnings.len(),
                    out.display()
                );
                log::debug!(
                    "{}",
                    serde_json::json!({"event": "ingest", "session": session.session_id,
                        "bundle": bundle, "report": report})
                );
            }
            Err(e) => {
                any_failed = true;
                log::error!("{}: {e}", bundle.display());
            }
        }
    }
    Ok(any_failed)
}

fn cmd_process(cfg: &Config, bundles: &[PathBuf]) -> Result<bool> {
    if bundles.is_empty() {
        bail!("no bundles given");
    }
    let profile_path = require(&cfg.robot_profile, "robot-profile")?;
    let (profile, model) = load_robot(&profile_path)?;
    let quality = load_quality(cfg)?;
    let store = open_store(cfg, None)?;

    let results = process_batch(bundles, &profile, &model, &quality, &store, cfg.tick_hz);
    let mut any_failed = false;
    for (bundle, result) in &results {
        match result {
            Ok(s) => {
                log::info!(
                    "{}: {:?}, {}/{} ticks, {} chunks",
                    s.session_id,
                    s.verdict,
                    s.ticks_surviving,
                    s.ticks_in,
                    s.chunks
                );
                log::debug!(
                    "{}",
                    serde_json::json!({"event": "process", "bundle": bundle, "summary": s})
                );
            }
            Err(e) => {
                any_failed = true;
                log::error!("{}: {e}", bundle.display());
            }
        }
    }
    Ok(any_failed)
}

fn cmd_stats(cfg: &Config, store_arg: Option<&PathBuf>) -> Result<()> {
    let store = open_store(cfg, store_arg)?;
    let mut episodes = Vec::new();
    for id in store.list()? {
        episodes.push(store.load_episode(&id)?);
    }
    let stats = compute_stats(&episodes);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    println!();
    println!("episodes        {:>8}", stats.episode_count);
    println!("total hours     {:>8.3}", stats.total_hours);
    println!("validity rate   {:>8.3}", stats.validity_rate);
    println!("peak eps/hour   {:>8.1}", stats.peak_episodes_per_hour);
    println!("mean eps/hour   {:>8.1}", stats.mean_episodes_per_hour);
    println!("tasks:");
    for (label, count) in &stats.task_histogram {
        println!("  {count:>6}  {label}");
    }
    Ok(())
}

fn eligible_pools(store: &EpisodeStore) -> Result<BTreeMap<SourceKind, Vec<String>>> {
    let mut pools: BTreeMap<SourceKind, Vec<String>> = BTreeMap::new();
    for id in store.list()? {
        let e = store.load_episode(&id)?;
        if e.verdict == Verdict::Valid {
            pools.entry(e.source).or_default().push(id);
        }
    }
    Ok(pools)
}

fn cmd_mix(cfg: &Config, args: &MixArgs) -> Result<()> {
    let store = open_store(cfg, args.store.as_ref())?;
    let pools = eligible_pools(&store)?;
    let empty = Vec::new();
    let robot_free = pools.get(&SourceKind::RobotFree).unwrap_or(&empty);
    let real = pools.get(&SourceKind::RealRobot).unwrap_or(&empty);
    let manifest = build_mix_manifest(
        &args.name,
        robot_free,
        real,
        args.strategy.into(),
        args.robot_free,
        args.real,
        args.seed,
    )?;
    manifest.save(&args.out)?;
    log::info!(
        "{}: {} entries ({}:{}) -> {}",
        manifest.name,
        manifest.total,
        manifest.ratio.0,
        manifest.ratio.1,
        args.out.display()
    );
    Ok(())
}

fn cmd_export_playback(cfg: &Config, args: &ExportPlaybackArgs) -> Result<()> {
    let store = open_store(cfg, None)?;
    let profile_path = require(&cfg.robot_profile, "robot-profile")?;
    let (profile, _model) = load_robot(&profile_path)?;
    let episode = store.load_episode(&args.episode_id)?;
    let traj = store.load_trajectory(&args.episode_id)?;
    let playback = export_playback(&episode, &traj, &profile.robot_name, args.hz)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.g0p", args.episode_id)));
    playback.save(&out)?;
    log::info!(
        "{}: {} rows at {} Hz -> {}",
        args.episode_id,
        playback.rows.len(),
        args.hz,
        out.display()
    );
    Ok(())
}

fn cmd_export_shards(cfg: &Config, args: &ExportShardsArgs) -> Result<()> {
    let store = open_store(cfg, None)?;
    let manifest = MixManifest::load(&args.manifest)?;
    let paths = export_training_shards(&manifest, &store, &args.out, args.shard_size)?;
    log::info!(
        "{}: {} episodes -> {} shards in {}",
        manifest.name,
        manifest.total,
        paths.len(),
        args.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Ingest { bundles } => cmd_ingest(bundles),
        Command::Process { bundles } => cmd_process(&cfg, bundles),
        Command::Stats { store } => cmd_stats(&cfg, store.as_ref()).map(|_| false),
        Command::Mix(args) => cmd_mix(&cfg, args).map(|_| false),
        Command::ExportPlayback(args) => cmd_export_playback(&cfg, args).map(|_| false),
        Command::ExportShards(args) => cmd_export_shards(&cfg, args).map(|_| false),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::from(0),
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
