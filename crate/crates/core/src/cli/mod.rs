//! The `macronav` command-line tool: map generation, encoder pretraining,
//! RL training, evaluation and the two visual inspection commands.
//!
//! Every command reads an optional `key = value` file, then `--set key=value`
//! overrides, then its dedicated flags. Unknown keys are rejected. Exit codes:
//! 0 success, 2 configuration error, 3 runtime error.

mod config;

pub use config::{ConfigError, KvConfig};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Serialize;

use crate::encoder::{encoder_cfg_from_store, load_ssl_checkpoint, EncoderCfg, PretrainCfg, Pretrainer};
use crate::evalkit::{
    emit_report, evaluate, Actor, ActorKind, DifficultySpec, FarthestActor, Level,
    NearestFrontierActor, OracleActor, PolicyActor, RandomActor,
};
use crate::gridmap::{
    generate_map, load_map, save_map, write_pgm, MapSpec, MapStyle, OccupancyGrid,
};
use crate::maskgen::{
    parse_task_list, sample_context, sample_mask, ContextSampler, MapPool, MaskRanges, MaskSpec,
    PretrainMixCfg, PretrainSources, TaskKind,
};
use crate::navenv::NavEnvCfg;
use crate::nn::load_store;
use crate::policy::{load_agent, ActionMode, PolicyCfg, PolicyError, RlCfg, RlTrainer, SacCfg};
use crate::rng::substream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Overrides the dataset root (default `./data`).
pub const DATA_DIR_ENV: &str = "MACRONAV_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "macronav", version, about = "Occupancy-map navigation: pretraining, RL and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key = value configuration file
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate procedural ground-truth maps as PGM + metadata
    GenMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Self-supervised encoder pretraining
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Task subset, e.g. spm,fov,mae
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Discrete SAC training of the waypoint policy
    TrainRl {
        #[command(flatten)]
        common: Common,
        /// Pretrained encoder checkpoint; random encoder when omitted
        #[arg(long)]
        encoder_ckpt: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a policy or a baseline on held-out episodes
    Eval {
        #[command(flatten)]
        common: Common,
        /// oracle, frontier, random, farthest or policy
        #[arg(long)]
        actor: Option<String>,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Worker threads (default: available cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Agent checkpoint for --actor policy
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write mask visualizations
    InspectMasks {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write per-patch attention heatmaps of an encoder
    ExportAttention {
        #[command(flatten)]
        common: Common,
        /// Pretraining or agent checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        head: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenMaps { .. } => "gen-maps",
            Command::Pretrain { .. } => "pretrain",
            Command::TrainRl { .. } => "train-rl",
            Command::Eval { .. } => "eval",
            Command::InspectMasks { .. } => "inspect-masks",
            Command::ExportAttention { .. } => "export-attention",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenMaps { common, .. }
            | Command::Pretrain { common, .. }
            | Command::TrainRl { common, .. }
            | Command::Eval { common, .. }
            | Command::InspectMasks { common, .. }
            | Command::ExportAttention { common, .. } => common,
        }
    }

    /// Dedicated flags, expressed as the config keys they set.
    fn flag_overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut add = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{k}={v}"));
            }
        };
        add("seed", self.common().seed.map(|s| s.to_string()));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        match self {
            Command::GenMaps { count, .. } => add("count", count.map(|v| v.to_string())),
            Command::Pretrain { tasks, steps, .. } => {
                add("tasks", tasks.clone());
                add("steps", steps.map(|v| v.to_string()));
            }
            Command::TrainRl { encoder_ckpt, steps, .. } => {
                add("encoder_ckpt", path(encoder_ckpt));
                add("steps", steps.map(|v| v.to_string()));
            }
            Command::Eval {
                actor,
                level,
                episodes,
                workers,
                checkpoint,
                ..
            } => {
                add("actor", actor.clone());
                add("level", level.clone());
                add("episodes", episodes.map(|v| v.to_string()));
                add("workers", workers.map(|v| v.to_string()));
                add("checkpoint", path(checkpoint));
            }
            Command::InspectMasks { tasks, count, .. } => {
                add("tasks", tasks.clone());
                add("count", count.map(|v| v.to_string()));
            }
            Command::ExportAttention {
                checkpoint,
                layer,
                head,
                count,
                ..
            } => {
                add("checkpoint", path(checkpoint));
                add("layer", layer.map(|v| v.to_string()));
                add("head", head.map(|v| v.to_string()));
                add("count", count.map(|v| v.to_string()));
            }
        }
        out
    }
}

/// What a command runs with, before the command-specific keys are read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
}

impl RunConfig {
    pub fn from_command(cmd: &Command) -> Self {
        let c = cmd.common();
        let mut overrides = c.overrides.clone();
        overrides.extend(cmd.flag_overrides());
        let out_dir = c.out.clone().unwrap_or_else(|| match cmd {
            Command::GenMaps { .. } => data_root().join("maps"),
            _ => PathBuf::from("runs").join(cmd.name()),
        });
        Self {
            command: cmd.name().to_string(),
            config_path: c.config.clone(),
            seed: c.seed,
            out_dir,
            overrides,
        }
    }
}

/// File contents with overrides applied after it.
pub fn validate_config(path: Option<&Path>, overrides: &[String]) -> Result<KvConfig, ConfigError> {
    let mut kv = match path {
        Some(p) => KvConfig::from_file(p)?,
        None => KvConfig::default(),
    };
    kv.apply_overrides(overrides)?;
    Ok(kv)
}

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("config error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command) -> CliResult<()> {
    let rc = RunConfig::from_command(cmd);
    let kv = validate_config(rc.config_path.as_deref(), &rc.overrides)?;
    match cmd {
        Command::GenMaps { .. } => gen_maps(kv, &rc.out_dir),
        Command::Pretrain { .. } => pretrain(kv, &rc.out_dir),
        Command::TrainRl { .. } => train_rl(kv, &rc.out_dir),
        Command::Eval { .. } => eval(kv, &rc.out_dir),
        Command::InspectMasks { .. } => inspect_masks(kv, &rc.out_dir),
        Command::ExportAttention { .. } => export_attention(kv, &rc.out_dir),
    }
}

// ---------- shared key groups ----------

fn check(kv: &mut KvConfig, ok: bool, key: &str, why: &str) {
    if !ok {
        kv.invalid(key, why);
    }
}

fn read_env(kv: &mut KvConfig, env: &mut NavEnvCfg) {
    kv.fill("k_nodes", &mut env.k_nodes);
    kv.fill("r_local_m", &mut env.r_local_m);
    kv.fill("knn", &mut env.knn);
    kv.fill("min_separation_m", &mut env.min_separation_m);
    kv.fill("sensor_range_m", &mut env.sensor.range_m);
    kv.fill("sensor_rays", &mut env.sensor.n_rays);
    if let Some(s) = kv.get("context_size") {
        env.context_h = s;
        env.context_w = s;
    }
    kv.fill("patch", &mut env.patch);
    kv.fill("max_steps", &mut env.max_steps);
    kv.fill("success_radius_m", &mut env.success_radius_m);
    kv.fill("r_goal", &mut env.reward.r_goal);
    kv.fill("lambda_s", &mut env.reward.lambda_s);
    kv.fill("r_s", &mut env.reward.r_s);
    kv.fill("lambda_h", &mut env.reward.lambda_h);
    check(kv, env.k_nodes > 0, "k_nodes", "must be positive");
    check(kv, env.r_local_m > 0.0, "r_local_m", "must be positive");
    check(kv, env.knn > 0, "knn", "must be positive");
    check(kv, env.min_separation_m >= 0.0, "min_separation_m", "must be >= 0");
    check(kv, env.sensor.range_m > 0.0, "sensor_range_m", "must be positive");
    check(kv, env.sensor.n_rays > 0, "sensor_rays", "must be positive");
    check(kv, env.max_steps > 0, "max_steps", "must be positive");
    check(kv, env.success_radius_m >= 0.0, "success_radius_m", "must be >= 0");
    check(
        kv,
        env.patch > 0 && env.context_h > 0 && env.context_h % env.patch == 0,
        "context_size",
        "must be a positive multiple of patch",
    );
}

fn read_encoder(kv: &mut KvConfig, enc: &mut EncoderCfg) {
    kv.fill("d", &mut enc.d);
    kv.fill("layers", &mut enc.layers);
    kv.fill("heads", &mut enc.heads);
    kv.fill("patch", &mut enc.patch);
    if let Some(s) = kv.get("context_size") {
        enc.map_h = s;
        enc.map_w = s;
    }
    kv.fill("dec_dim", &mut enc.dec_dim);
    kv.fill("dec_layers", &mut enc.dec_layers);
    kv.fill("dec_heads", &mut enc.dec_heads);
    check(kv, enc.layers > 0, "layers", "must be positive");
    check(kv, enc.heads > 0 && enc.d % enc.heads == 0, "heads", "must divide d");
    check(
        kv,
        enc.dec_heads > 0 && enc.dec_dim % enc.dec_heads == 0,
        "dec_heads",
        "must divide dec_dim",
    );
    check(
        kv,
        enc.patch > 0 && enc.map_h > 0 && enc.map_h % enc.patch == 0,
        "context_size",
        "must be a positive multiple of patch",
    );
}

fn read_policy(kv: &mut KvConfig, p: &mut PolicyCfg) {
    kv.fill("d_model", &mut p.d_model);
    kv.fill("policy_layers", &mut p.layers);
    kv.fill("policy_heads", &mut p.heads);
    kv.fill("lstm_dim", &mut p.lstm_dim);
    check(
        kv,
        p.heads > 0 && p.d_model % p.heads == 0,
        "policy_heads",
        "must divide d_model",
    );
    check(kv, p.lstm_dim > 0, "lstm_dim", "must be positive");
}

fn read_sac(kv: &mut KvConfig, s: &mut SacCfg) {
    kv.fill("gamma", &mut s.gamma);
    kv.fill("tau", &mut s.tau);
    kv.fill("lr", &mut s.lr);
    kv.fill("alpha_lr", &mut s.alpha_lr);
    kv.fill("weight_decay", &mut s.weight_decay);
    kv.fill("init_alpha", &mut s.init_alpha);
    kv.fill("fixed_alpha", &mut s.fixed_alpha);
    kv.fill("target_entropy_scale", &mut s.target_entropy_scale);
    kv.fill("finetune_encoder", &mut s.finetune_encoder);
    check(kv, (0.0..=1.0).contains(&s.gamma), "gamma", "must lie in [0, 1]");
    check(kv, (0.0..=1.0).contains(&s.tau), "tau", "must lie in [0, 1]");
    check(kv, s.lr >= 0.0, "lr", "must be >= 0");
    check(kv, s.alpha_lr >= 0.0, "alpha_lr", "must be >= 0");
    check(kv, s.weight_decay >= 0.0, "weight_decay", "must be >= 0");
    check(kv, s.init_alpha > 0.0, "init_alpha", "must be positive");
    check(
        kv,
        s.target_entropy_scale.is_finite(),
        "target_entropy_scale",
        "must be finite",
    );
}

fn read_pair(kv: &mut KvConfig, lo: &str, hi: &str, slot: &mut (f64, f64), range: (f64, f64)) {
    kv.fill(lo, &mut slot.0);
    kv.fill(hi, &mut slot.1);
    let ok = range.0 <= slot.0 && slot.0 <= slot.1 && slot.1 <= range.1;
    check(kv, ok, lo, &format!("need {} <= {lo} <= {hi} <= {}", range.0, range.1));
}

fn read_ranges(kv: &mut KvConfig, r: &mut MaskRanges) {
    read_pair(kv, "spm_rho_min", "spm_rho_max", &mut r.spm_rho, (0.0, 1.0));
    read_pair(kv, "spm_smooth_min", "spm_smooth_max", &mut r.spm_smoothness, (0.0, 1.0));
    read_pair(kv, "fov_rho_min", "fov_rho_max", &mut r.fov_rho, (0.0, 1.0));
    read_pair(kv, "fov_expand_min", "fov_expand_max", &mut r.fov_expand, (0.0, 1.0));
    kv.fill("mae_ratio", &mut r.mae_ratio);
    check(kv, (0.0..1.0).contains(&r.mae_ratio), "mae_ratio", "must lie in [0, 1)");
}

fn read_tasks(kv: &mut KvConfig, default: &str) -> Vec<TaskKind> {
    let raw: String = kv.get("tasks").unwrap_or_else(|| default.to_string());
    match parse_task_list(&raw) {
        Ok(t) => t,
        Err(e) => {
            kv.invalid("tasks", &e.to_string());
            Vec::new()
        }
    }
}

fn read_style(kv: &mut KvConfig, key: &str, default: MapStyle) -> MapStyle {
    kv.get::<String>(key)
        .map(|s| {
            s.parse().unwrap_or_else(|e: crate::gridmap::GridError| {
                kv.invalid(key, &e.to_string());
                default
            })
        })
        .unwrap_or(default)
}

fn workers_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Nearest-neighbour upscaling of a `rows x cols` patch image by `patch`.
fn upscale(values: &[u8], rows: usize, cols: usize, patch: usize) -> Vec<u8> {
    let w = cols * patch;
    (0..rows * patch * w)
        .map(|i| values[(i / w / patch) * cols + (i % w) / patch])
        .collect()
}

/// Maps for the visual commands: one file, or a few generated ones.
fn visual_maps(kv: &mut KvConfig, seed: u64, min_size: usize) -> CliResult<Vec<Arc<OccupancyGrid>>> {
    let map: Option<PathBuf> = kv.get("map");
    let style = read_style(kv, "style", MapStyle::Rooms);
    let size: usize = kv.get("map_size").unwrap_or(min_size.max(64));
    check(kv, size >= 32, "map_size", "must be >= 32");
    kv.finish()?;
    Ok(match map {
        Some(p) => vec![Arc::new(
            load_map(&p).with_context(|| format!("loading {}", p.display()))?,
        )],
        None => MapPool::synthetic(style, 4, size, (0.0, 0.1), seed)
            .context("generating maps")?
            .maps,
    })
}

// ---------- gen-maps ----------

fn gen_maps(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let count: usize = kv.get("count").unwrap_or(100);
    let size: usize = kv.get("size").unwrap_or(128);
    let styles_raw: String = kv.get("styles").unwrap_or_else(|| "rooms,maze,cluttered".into());
    let mut density = (0.0, 0.2);
    read_pair(&mut kv, "density_min", "density_max", &mut density, (0.0, 1.0));
    let resolution: f64 = kv.get("resolution").unwrap_or(0.1);
    let seed: u64 = kv.get("seed").unwrap_or(0);
    check(&mut kv, size >= 32, "size", "must be >= 32");
    check(&mut kv, resolution > 0.0, "resolution", "must be positive");
    let styles: Vec<MapStyle> = styles_raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    if styles.is_empty() || styles.len() != styles_raw.split(',').filter(|s| !s.trim().is_empty()).count() {
        kv.invalid("styles", "expected a list of rooms, maze, cluttered");
    }
    kv.finish()?;

    create_out(out)?;
    for i in 0..count {
        let mut rng = substream(seed, i as u64);
        let style = styles[i % styles.len()];
        let mut last_err = None;
        let mut map = None;
        for _ in 0..16 {
            let d = if density.1 > density.0 {
                rng.random_range(density.0..density.1)
            } else {
                density.0
            };
            let spec = MapSpec {
                resolution,
                ..MapSpec::new(size, style, d, rng.random())
            };
            match generate_map(&spec) {
                Ok(m) => {
                    map = Some(m);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let map = map.ok_or_else(|| anyhow::anyhow!("map {i}: {:?}", last_err))?;
        let path = out.join(format!("map_{i:04}.pgm"));
        save_map(&path, &map).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {count} maps to {}", out.display());
    Ok(())
}

// ---------- pretrain ----------

#[derive(Serialize)]
struct PretrainRow {
    step: usize,
    task: String,
    loss: f64,
}

fn pretrain(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let seed: Option<u64> = kv.require("seed");
    let mut cfg = PretrainCfg::default();
    read_encoder(&mut kv, &mut cfg.encoder);
    kv.fill("steps", &mut cfg.steps);
    kv.fill("batch", &mut cfg.batch);
    kv.fill("lr", &mut cfg.lr);
    kv.fill("weight_decay", &mut cfg.weight_decay);
    cfg.tasks = read_tasks(&mut kv, "spm,fov,mae");
    read_ranges(&mut kv, &mut cfg.ranges);
    check(&mut kv, cfg.batch > 0, "batch", "must be positive");
    check(&mut kv, cfg.lr >= 0.0, "lr", "must be >= 0");
    check(&mut kv, cfg.weight_decay >= 0.0, "weight_decay", "must be >= 0");

    let mix_raw: String = kv
        .get("mix")
        .unwrap_or_else(|| "rooms:0.5,maze:0.25,cluttered:0.25".into());
    let mix = PretrainMixCfg::parse(&mix_raw)
        .map_err(|e| kv.invalid("mix", &e.to_string()))
        .ok();
    let maps_per_source: usize = kv.get("maps_per_source").unwrap_or(100);
    let source_size: usize = kv.get("source_map_size").unwrap_or(cfg.encoder.map_h.max(64));
    let mut density = (0.0, 0.2);
    read_pair(&mut kv, "density_min", "density_max", &mut density, (0.0, 1.0));
    let data_dir: PathBuf = kv.get("data_dir").unwrap_or_else(data_root);
    let log_every: usize = kv.get("log_every").unwrap_or(100);
    check(&mut kv, maps_per_source > 0, "maps_per_source", "must be positive");
    check(&mut kv, source_size >= 32, "source_map_size", "must be >= 32");
    kv.finish()?;
    let (Some(seed), Some(mix)) = (seed, mix) else {
        unreachable!("finish() reports missing seed and bad mix")
    };
    cfg.seed = seed;

    // a mix entry naming a map style is generated, anything else is a
    // directory of PGM maps under the data root
    let mut pools = Vec::new();
    for (name, _) in &mix.entries {
        let pool = match name.parse::<MapStyle>() {
            Ok(style) => MapPool::synthetic(style, maps_per_source, source_size, density, seed)
                .with_context(|| format!("generating {name} maps"))?,
            Err(_) => MapPool::from_dir(name, &data_dir.join(name))
                .map_err(|e| CliError::Config(format!("mix source {name}: {e}")))?,
        };
        pools.push(pool);
    }
    let sources = PretrainSources::new(&mix, pools).map_err(|e| CliError::Config(e.to_string()))?;
    let sampler = ContextSampler::new(cfg.encoder.map_h, cfg.encoder.patch);
    let mut tr = Pretrainer::new(cfg, sources, sampler).map_err(|e| CliError::Config(e.to_string()))?;
    create_out(out)?;
    let total = tr.cfg.steps;
    tr.run(|m| {
        if log_every > 0 && (m.step + 1) % log_every == 0 {
            eprintln!("step {}/{total} task {} loss {:.5}", m.step + 1, m.task, m.loss);
        }
    })
    .context("pretraining")?;
    let ckpt = out.join("encoder.ckpt");
    tr.save(&ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    let rows: Vec<PretrainRow> = tr
        .log
        .steps
        .iter()
        .map(|m| PretrainRow {
            step: m.step,
            task: m.task.to_string(),
            loss: m.loss,
        })
        .collect();
    write_csv(&out.join("pretrain_log.csv"), &rows)?;
    for t in &tr.cfg.tasks {
        let n = tr.log.steps.len();
        if let Some(l) = tr.log.task_mean(*t, n.saturating_sub(100)..n) {
            println!("{t}: final mean loss {l:.5}");
        }
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

// ---------- train-rl ----------

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    env_step: usize,
    outcome: String,
    steps: usize,
    reward_sum: f64,
}

#[derive(Serialize)]
struct EvalRow {
    env_step: usize,
    episodes: usize,
    sr: f64,
    spl: f64,
}

fn config_or_runtime(e: PolicyError) -> CliError {
    match e {
        PolicyError::Config(m) => CliError::Config(m),
        other => CliError::Runtime(other.into()),
    }
}

/// Reads the `train-rl` keys into an [`RlCfg`].
pub fn rl_config(kv: &mut KvConfig) -> Result<RlCfg, ConfigError> {
    let seed: Option<u64> = kv.require("seed");
    let mut cfg = RlCfg::default();
    cfg.encoder_ckpt = kv.get("encoder_ckpt");
    // architecture defaults come from the pretrained checkpoint when given
    if let Some(p) = &cfg.encoder_ckpt {
        let found = load_store(p)
            .map_err(|e| e.to_string())
            .and_then(|s| encoder_cfg_from_store(&s).map_err(|e| e.to_string()));
        match found {
            Ok(enc) => {
                cfg.encoder = enc;
                cfg.env.context_h = enc.map_h;
                cfg.env.context_w = enc.map_w;
                cfg.env.patch = enc.patch;
            }
            Err(e) => kv.invalid("encoder_ckpt", &e),
        }
    }
    read_env(kv, &mut cfg.env);
    read_encoder(kv, &mut cfg.encoder);
    read_policy(kv, &mut cfg.policy);
    read_sac(kv, &mut cfg.sac);
    kv.fill("level", &mut cfg.level);
    kv.fill("replay_capacity", &mut cfg.replay_capacity);
    kv.fill("batch", &mut cfg.batch);
    kv.fill("steps", &mut cfg.steps);
    kv.fill("warmup", &mut cfg.warmup);
    kv.fill("updates_per_step", &mut cfg.updates_per_step);
    kv.fill("train_maps", &mut cfg.train_maps);
    kv.fill("eval_every", &mut cfg.eval_every);
    kv.fill("eval_episodes", &mut cfg.eval_episodes);
    check(kv, cfg.replay_capacity > 0, "replay_capacity", "must be positive");
    check(kv, cfg.batch > 0, "batch", "must be positive");
    check(kv, cfg.train_maps > 0, "train_maps", "must be positive");
    check(
        kv,
        cfg.eval_every == 0 || cfg.eval_episodes > 0,
        "eval_episodes",
        "must be positive when eval_every is set",
    );
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train_rl(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let cfg = rl_config(&mut kv)?;
    let log_every: usize = kv.get("log_every").unwrap_or(500);
    kv.finish()?;
    cfg.validate().map_err(config_or_runtime)?;
    let mut tr = RlTrainer::new(cfg).map_err(config_or_runtime)?;
    create_out(out)?;
    let total = tr.cfg.steps;
    tr.run(|t, r| {
        if let Some(m) = &r.eval {
            eprintln!("step {}: eval SR {:.1} SPL {:.1}", t.env_steps, m.sr, m.spl);
        }
        if log_every > 0 && t.env_steps % log_every == 0 {
            let recent = &t.log.episodes[t.log.episodes.len().saturating_sub(50)..];
            let wins = recent
                .iter()
                .filter(|e| e.outcome == crate::navenv::Outcome::Success)
                .count();
            let alpha = t.log.updates.last().map(|(_, l)| l.alpha).unwrap_or(f64::NAN);
            eprintln!(
                "step {}/{total} episodes {} recent success {wins}/{} alpha {alpha:.4}",
                t.env_steps,
                t.episodes,
                recent.len()
            );
        }
    })
    .map_err(config_or_runtime)?;
    let ckpt = out.join("agent.ckpt");
    tr.save(&ckpt).map_err(config_or_runtime)?;
    let rows: Vec<EpisodeRow> = tr
        .log
        .episodes
        .iter()
        .map(|e| EpisodeRow {
            episode: e.index,
            env_step: e.env_step,
            outcome: e.outcome.to_string(),
            steps: e.steps,
            reward_sum: e.reward_sum,
        })
        .collect();
    write_csv(&out.join("train_episodes.csv"), &rows)?;
    if !tr.log.evals.is_empty() {
        let rows: Vec<EvalRow> = tr
            .log
            .evals
            .iter()
            .map(|(s, m)| EvalRow {
                env_step: *s,
                episodes: m.episodes,
                sr: m.sr,
                spl: m.spl,
            })
            .collect();
        write_csv(&out.join("evals.csv"), &rows)?;
    }
    println!(
        "{} decisions, {} episodes, checkpoint {}",
        tr.env_steps,
        tr.episodes,
        ckpt.display()
    );
    Ok(())
}

// ---------- eval ----------

fn eval(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let actor: ActorKind = kv
        .get::<String>("actor")
        .map(|s| {
            s.parse().unwrap_or_else(|e: crate::evalkit::EvalError| {
                kv.invalid("actor", &e.to_string());
                ActorKind::Oracle
            })
        })
        .unwrap_or(ActorKind::Oracle);
    let level: Level = kv.get("level").unwrap_or(Level::Easy);
    let episodes: usize = kv.get("episodes").unwrap_or(100);
    let workers: usize = kv.get("workers").unwrap_or_else(workers_default);
    let seed: u64 = kv.get("seed").unwrap_or(0);
    let max_overlays: usize = kv.get("max_overlays").unwrap_or(10);
    let checkpoint: Option<PathBuf> = kv.get("checkpoint");
    let mut env = NavEnvCfg::default();

    let agent = if actor == ActorKind::Policy {
        match &checkpoint {
            None => {
                kv.invalid("checkpoint", "required for the policy actor");
                None
            }
            Some(p) => match load_agent(p) {
                Ok(a) => {
                    env.context_h = a.0.enc_cfg.map_h;
                    env.context_w = a.0.enc_cfg.map_w;
                    env.patch = a.0.enc_cfg.patch;
                    Some(Arc::new(a))
                }
                Err(e) => {
                    kv.invalid("checkpoint", &e.to_string());
                    None
                }
            },
        }
    } else {
        None
    };
    read_env(&mut kv, &mut env);
    if let Some(a) = &agent {
        let e = &a.0.enc_cfg;
        check(
            &mut kv,
            (env.context_h, env.patch) == (e.map_h, e.patch),
            "context_size",
            "must match the checkpoint encoder",
        );
    }
    check(&mut kv, episodes > 0, "episodes", "must be positive");
    check(&mut kv, workers > 0, "workers", "must be positive");
    kv.finish()?;

    let spec = DifficultySpec::for_level(level);
    let make = |id: usize| -> Box<dyn Actor> {
        match actor {
            ActorKind::Oracle => Box::new(OracleActor),
            ActorKind::NearestFrontier => Box::new(NearestFrontierActor),
            ActorKind::Random => Box::new(RandomActor::new(seed ^ id as u64)),
            ActorKind::Farthest => Box::new(FarthestActor),
            ActorKind::Policy => Box::new(PolicyActor::new(
                agent.clone().expect("checked above"),
                ActionMode::Argmax,
                id as u64,
            )),
        }
    };
    let records = evaluate(&spec, &env, episodes, seed, workers, &make).context("evaluation")?;
    let files = emit_report(&records, out, max_overlays).context("writing report")?;
    println!("actor {} level {level}", actor.as_str());
    for row in &files.summary {
        println!(
            "{:>6}: episodes {:4} SR {:6.2} SPL {:6.2} mean steps {:6.2}",
            row.level, row.episodes, row.sr, row.spl, row.mean_steps
        );
    }
    println!("report {}", files.episodes_csv.display());
    Ok(())
}

// ---------- inspect-masks ----------

/// Patch-level rendering: visible patches (the FOV core included) mid gray,
/// masked patches black, patches withheld from the encoder white.
pub fn mask_gray(mask: &MaskSpec) -> Vec<u8> {
    let n = mask.grid.0 * mask.grid.1;
    let mut px = vec![255u8; n];
    for i in mask.encoder_positions() {
        px[i] = 128;
    }
    for &i in &mask.masked {
        px[i] = 0;
    }
    px
}

fn inspect_masks(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let seed: u64 = kv.get("seed").unwrap_or(0);
    let count: usize = kv.get("count").unwrap_or(4);
    let size: usize = kv.get("context_size").unwrap_or(64);
    let patch: usize = kv.get("patch").unwrap_or(8);
    let tasks = read_tasks(&mut kv, "spm,fov,mae");
    let mut ranges = MaskRanges::default();
    read_ranges(&mut kv, &mut ranges);
    check(
        &mut kv,
        patch > 0 && size > 0 && size % patch == 0,
        "context_size",
        "must be a positive multiple of patch",
    );
    let maps = visual_maps(&mut kv, seed, size)?;

    create_out(out)?;
    let sampler = ContextSampler::new(size, patch);
    let grid = sampler.grid();
    let mut rng = substream(seed, 0x6d61736b);
    for i in 0..count {
        let map = &maps[i % maps.len()];
        let ctx = sample_context(map, &sampler, &mut rng).context("sampling context")?;
        let p = out.join(format!("context_{i:03}.pgm"));
        write_pgm(&p, size, size, &ctx.to_gray()).context("writing context")?;
        for &t in &tasks {
            let m = sample_mask(t, grid, &ranges, &mut rng).context("sampling mask")?;
            let px = upscale(&mask_gray(&m), grid.0, grid.1, patch);
            let p = out.join(format!("mask_{t}_{i:03}.pgm"));
            write_pgm(&p, size, size, &px).context("writing mask")?;
        }
    }
    println!("wrote {count} contexts with {} masks each to {}", tasks.len(), out.display());
    Ok(())
}

// ---------- export-attention ----------

fn export_attention(mut kv: KvConfig, out: &Path) -> CliResult<()> {
    let seed: u64 = kv.get("seed").unwrap_or(0);
    let checkpoint: Option<PathBuf> = kv.require("checkpoint");
    let layer: usize = kv.get("layer").unwrap_or(0);
    let head: usize = kv.get("head").unwrap_or(0);
    let count: usize = kv.get("count").unwrap_or(4);
    let loaded = checkpoint.as_ref().map(|p| load_ssl_checkpoint(p));
    let model = match loaded {
        Some(Ok(m)) => Some(m),
        Some(Err(e)) => {
            kv.invalid("checkpoint", &e.to_string());
            None
        }
        None => None,
    };
    if let Some((m, _)) = &model {
        let c = m.cfg();
        check(&mut kv, layer < c.layers, "layer", &format!("encoder has {} layers", c.layers));
        check(&mut kv, head < c.heads, "head", &format!("encoder has {} heads", c.heads));
    }
    let size = model.as_ref().map(|(m, _)| m.cfg().map_h).unwrap_or(64);
    let maps = visual_maps(&mut kv, seed, size)?;
    let (model, store) = model.expect("finish() reports a missing checkpoint");
    let cfg = *model.cfg();

    create_out(out)?;
    let sampler = ContextSampler::new(cfg.map_h, cfg.patch);
    let mut rng = substream(seed, 0x6174746e);
    let mut worst = 0.0f32;
    for i in 0..count {
        let map = &maps[i % maps.len()];
        let ctx = sample_context(map, &sampler, &mut rng).context("sampling context")?;
        let att = model
            .export_attention(&store, &ctx, layer, head)
            .context("attention export")?;
        worst = worst.max(att.max_row_sum_err);
        write_pgm(
            &out.join(format!("context_{i:03}.pgm")),
            cfg.map_w,
            cfg.map_h,
            &ctx.to_gray(),
        )
        .context("writing context")?;
        let px = upscale(&att.to_gray(), att.rows, att.cols, cfg.patch);
        write_pgm(
            &out.join(format!("attention_l{layer}_h{head}_{i:03}.pgm")),
            att.cols * cfg.patch,
            att.rows * cfg.patch,
            &px,
        )
        .context("writing heatmap")?;
    }
    println!(
        "wrote {count} heatmaps to {} (max attention row-sum error {worst:.2e})",
        out.display()
    );
    Ok(())
}
