use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use coopdrive::codec::{self, ChannelConfig, ChannelKind};
use coopdrive::error::{Error, Result};
use coopdrive::hgat::checkpoint;
use coopdrive::pipeline::{
    assemble_dataset, measure_latency, run_ablation_matrix, split_episodes, train, vehicle_window, AblationConfig,
    DatasetConfig, EvalReport, Mode, ScenarioReport, TrainConfig,
};
use coopdrive::scenario::{self, simulate_episode, Episode, ScenarioConfig, ScenarioKind};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const DEFAULT_OUT_DIR: &str = "coopdrive-out";
const OUT_DIR_ENV: &str = "COOPDRIVE_OUT_DIR";

#[derive(Parser)]
#[command(name = "coopdrive", version, about = "Collaborative brake/go decisions from shared spatiotemporal graphs")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Directory for outputs not given explicitly. Falls back to the config
    /// file, then to $COOPDRIVE_OUT_DIR, then to ./coopdrive-out.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write them as episode files.
    Generate(GenerateArgs),
    /// Train a model on the training half of a data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test half of a data directory.
    Eval(EvalArgs),
    /// Train and evaluate every mode for every scenario and seed.
    Ablate(AblateArgs),
    /// Package sizes of every shared window, checked against a channel budget.
    CodecBench(CodecBenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// overtaking, left_turn, street_crossing or all.
    #[arg(long, default_value = "all")]
    scenario: String,
    #[arg(long, default_value_t = 24)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Channel preset: dsrc or c-v2x.
    #[arg(long, value_parser = parse_channel)]
    channel: Option<ChannelKind>,
    /// Packet loss probability, at most 0.05.
    #[arg(long)]
    loss_probability: Option<f64>,
    /// Use every n-th decision step.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// full, nt-ns, t-ns or nt-s.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Restrict training to one scenario.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    class_weighting: bool,
    #[arg(long)]
    out_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSONL report; the text table goes next to it with a .txt extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<Mode>>,
}

#[derive(Args)]
struct CodecBenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_channel(s: &str) -> std::result::Result<ChannelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Channel settings in the config file; unset fields come from the preset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ChannelSection {
    kind: Option<ChannelKind>,
    bandwidth_bps: Option<f64>,
    max_package_bytes: Option<usize>,
    loss_probability: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblationSection {
    modes: Option<Vec<Mode>>,
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    out_dir: Option<PathBuf>,
    mode: Option<Mode>,
    scenario: ScenarioConfig,
    channel: ChannelSection,
    dataset: DatasetConfig,
    train: TrainConfig,
    ablation: AblationSection,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn channel(&self, args: &DataArgs) -> Result<ChannelConfig> {
        let kind = args.channel.or(self.channel.kind).unwrap_or(ChannelKind::Dsrc);
        let mut ch = ChannelConfig::preset(kind);
        if let Some(b) = self.channel.bandwidth_bps {
            ch.bandwidth_bps = b;
        }
        if let Some(m) = self.channel.max_package_bytes {
            ch.max_package_bytes = m;
        }
        if let Some(p) = args.loss_probability.or(self.channel.loss_probability) {
            ch.loss_probability = p;
        }
        ch.validate_standard()?;
        Ok(ch)
    }

    fn dataset(&self, args: &DataArgs) -> Result<DatasetConfig> {
        let mut d = self.dataset.clone();
        if let Some(s) = args.stride {
            d.stride = s;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: PathBuf,
    sha256: String,
}

/// Record of one invocation, written next to its main output.
#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: &'static str,
    version: &'static str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    /// Content hash of the episode files read, if any.
    data_hash: Option<String>,
    timings_s: serde_json::Map<String, serde_json::Value>,
    extra: serde_json::Value,
}

impl RunManifest {
    fn new(subcommand: &'static str, config: serde_json::Value) -> Self {
        RunManifest {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            data_hash: None,
            timings_s: Default::default(),
            extra: serde_json::Value::Null,
        }
    }

    fn time(&mut self, name: &str, since: Instant) {
        self.timings_s
            .insert(name.into(), serde_json::json!(since.elapsed().as_secs_f64()));
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(artifact(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, json.as_bytes())
    }
}

fn artifact(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path)?;
    Ok(Artifact {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Hash over the names and contents of the episode files in `dir`, each
/// hashed as a git blob would be.
fn data_hash(dir: &Path) -> Result<String> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(scenario::io::EPISODE_EXTENSION))
        .collect();
    paths.sort();
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(&p)?;
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()));
        blob.update(&bytes);
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(blob.finalize());
    }
    Ok(hex::encode(h.finalize()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_data(dir: &Path) -> Result<Vec<Episode>> {
    let eps = scenario::io::load_dir(dir)?;
    if eps.is_empty() {
        return Err(Error::Config(format!("no episode files in {}", dir.display())));
    }
    Ok(eps)
}

struct Context {
    file: FileConfig,
    out_dir: PathBuf,
}

impl Context {
    fn out(&self, given: Option<PathBuf>, default_name: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out_dir.join(default_name))
    }
}

fn cmd_generate(ctx: &Context, args: GenerateArgs) -> Result<()> {
    let kinds: Vec<ScenarioKind> = if args.scenario.eq_ignore_ascii_case("all") {
        ScenarioKind::ALL.to_vec()
    } else {
        vec![args.scenario.parse()?]
    };
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let cfg = &ctx.file.scenario;
    cfg.validate()?;
    let out = ctx.out(args.out, "data");
    let mut manifest = RunManifest::new(
        "generate",
        serde_json::json!({
            "scenarios": kinds,
            "trials": args.trials,
            "seed_base": args.seed_base,
            "scenario": cfg,
        }),
    );
    let t = Instant::now();
    let seeds: Vec<u64> = (args.seed_base..args.seed_base + args.trials).collect();
    let jobs: Vec<(ScenarioKind, u64)> = kinds
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    use rayon::prelude::*;
    let episodes = jobs
        .par_iter()
        .map(|&(k, s)| simulate_episode(k, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    manifest.time("simulate", t);
    std::fs::create_dir_all(&out)?;
    for ep in &episodes {
        let path = ep.save(&out)?;
        manifest.output(&path)?;
    }
    manifest.seeds = seeds;
    manifest.data_hash = Some(data_hash(&out)?);
    manifest.write(&out.join("generate.manifest.json"))?;
    println!("wrote {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

fn train_config(ctx: &Context, args: &TrainArgs) -> TrainConfig {
    let mut tc = ctx.file.train.clone();
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if args.class_weighting {
        tc.class_weighting = true;
    }
    tc
}

/// Settings a checkpoint carries so that evaluation rebuilds the same inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    mode: Mode,
    channel: ChannelConfig,
    dataset: DatasetConfig,
    train: TrainConfig,
    scenarios: Vec<ScenarioKind>,
    data_hash: String,
}

fn cmd_train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let mode = args.mode.or(ctx.file.mode).unwrap_or(Mode::Full);
    let channel = ctx.file.channel(&args.data)?;
    let dataset = ctx.file.dataset(&args.data)?;
    let tc = train_config(ctx, &args);
    tc.validate()?;
    let ckpt = ctx.out(args.out_checkpoint.clone(), "model.ckpt");

    let t = Instant::now();
    let episodes = load_data(&args.data.data)?;
    let hash = data_hash(&args.data.data)?;
    let mut train_eps = Vec::new();
    let mut scenarios = Vec::new();
    for (kind, tr, _) in split_episodes(&episodes) {
        if args.scenario.map_or(true, |s| s == kind) {
            scenarios.push(kind);
            train_eps.extend(tr);
        }
    }
    if train_eps.is_empty() {
        return Err(Error::Config("no training episodes for the requested scenario".into()));
    }
    let set = assemble_dataset(&train_eps, mode, &channel, &dataset)?;
    let assemble_t = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let out = train(&set.samples, &tc)?;
    let meta = ModelMeta {
        mode,
        channel,
        dataset,
        train: tc.clone(),
        scenarios,
        data_hash: hash.clone(),
    };
    let meta_json = serde_json::to_value(&meta).expect("meta serializes");
    ensure_parent(&ckpt)?;
    checkpoint::save(&ckpt, &out.params, &meta_json)?;

    let mut manifest = RunManifest::new("train", meta_json);
    manifest.seeds = vec![tc.seed];
    manifest.inputs.push(Artifact {
        path: args.data.data.clone(),
        sha256: hash.clone(),
    });
    manifest.data_hash = Some(hash);
    manifest.timings_s.insert("assemble".into(), serde_json::json!(assemble_t));
    manifest.time("train", t);
    manifest.output(&ckpt)?;
    manifest.extra = serde_json::json!({
        "instances": set.len(),
        "brake_fraction": set.brake_fraction(),
        "initial_loss": out.initial_loss,
        "epoch_losses": out.epoch_losses,
    });
    manifest.write(&with_suffix(&ckpt, ".manifest.json"))?;
    println!(
        "trained {} on {} instances: loss {:.4} -> {:.4}; checkpoint {}",
        mode,
        set.len(),
        out.initial_loss,
        out.epoch_losses.last().unwrap(),
        ckpt.display()
    );
    Ok(())
}

fn write_report(path: &Path, jsonl: &str, table: &str, manifest: &mut RunManifest) -> Result<()> {
    write_file(path, jsonl.as_bytes())?;
    let txt = path.with_extension("txt");
    write_file(&txt, table.as_bytes())?;
    manifest.output(path)?;
    manifest.output(&txt)?;
    manifest.write(&with_suffix(path, ".manifest.json"))
}

fn cmd_eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let (params, meta_json) = checkpoint::load(&args.checkpoint)?;
    let meta: ModelMeta = serde_json::from_value(meta_json.clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint metadata: {e}")))?;
    let report_path = ctx.out(args.report, "eval.jsonl");
    let episodes = load_data(&args.data)?;
    let hash = data_hash(&args.data)?;

    let t = Instant::now();
    let mut report = EvalReport::default();
    let mut latency = serde_json::Map::new();
    for (kind, _, test) in split_episodes(&episodes) {
        if !meta.scenarios.contains(&kind) || test.is_empty() {
            continue;
        }
        let set = assemble_dataset(&test, meta.mode, &meta.channel, &meta.dataset)?;
        report
            .scenarios
            .push(ScenarioReport::new(kind, meta.mode, &set, &params));
        let lat = measure_latency(&test[..1], meta.mode, &meta.channel, &meta.dataset, &params, 20)?;
        latency.insert(kind.name().into(), serde_json::to_value(lat).unwrap());
    }
    if report.scenarios.is_empty() {
        return Err(Error::Config("data holds no test episodes for the checkpoint's scenarios".into()));
    }
    let mut manifest = RunManifest::new("eval", meta_json);
    manifest.seeds = vec![meta.train.seed];
    manifest.inputs.push(artifact(&args.checkpoint)?);
    manifest.data_hash = Some(hash);
    manifest.time("evaluate", t);
    manifest.extra = serde_json::json!({ "latency_ms": latency });
    let table = report.to_table();
    write_report(&report_path, &report.to_jsonl(), &table, &mut manifest)?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(ctx: &Context, args: AblateArgs) -> Result<()> {
    let channel = ctx.file.channel(&args.data)?;
    let mut cfg = AblationConfig {
        modes: ctx.file.ablation.modes.clone().unwrap_or_else(|| Mode::ALL.to_vec()),
        seeds: ctx.file.ablation.seeds.clone().unwrap_or_else(|| (0..5).collect()),
        train: ctx.file.train.clone(),
        dataset: ctx.file.dataset(&args.data)?,
    };
    if let Some(m) = args.modes {
        cfg.modes = m;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate()?;
    if cfg.modes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one mode and one seed".into()));
    }
    let report_path = ctx.out(args.report, "ablation.jsonl");
    let episodes = load_data(&args.data.data)?;
    let hash = data_hash(&args.data.data)?;
    let t = Instant::now();
    let splits = split_episodes(&episodes);
    let report = run_ablation_matrix(&splits, &channel, &cfg)?;
    let mut manifest = RunManifest::new(
        "ablate",
        serde_json::json!({ "ablation": cfg, "channel": channel }),
    );
    manifest.seeds = cfg.seeds.clone();
    manifest.data_hash = Some(hash);
    manifest.time("ablate", t);
    let table = report.to_table();
    write_report(&report_path, &report.to_jsonl(), &table, &mut manifest)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct BenchRecord {
    scenario: String,
    channel: &'static str,
    packets: usize,
    mean_bytes: f64,
    max_bytes: usize,
    max_latency_ms: f64,
    budget_bytes: usize,
    /// Reference per-window feature payload divided by the mean packet.
    improvement: f64,
    feasible: bool,
}

fn cmd_codec_bench(ctx: &Context, args: CodecBenchArgs) -> Result<()> {
    let channel = ctx.file.channel(&args.data)?;
    let dataset = ctx.file.dataset(&args.data)?;
    let report_path = ctx.out(args.report, "codec-bench.jsonl");
    let episodes = load_data(&args.data.data)?;
    let hash = data_hash(&args.data.data)?;
    let t = Instant::now();
    let mut records = Vec::new();
    let mut all = BenchRecord {
        scenario: "all".into(),
        ..Default::default()
    };
    let mut total = 0usize;
    for kind in ScenarioKind::ALL {
        let mut r = BenchRecord {
            scenario: kind.name().into(),
            ..Default::default()
        };
        let mut sum = 0usize;
        for ep in episodes.iter().filter(|e| e.scenario == kind) {
            for step in (dataset.first_step..ep.steps.len()).step_by(dataset.stride) {
                for slot in 0..ep.vehicles.len() {
                    let (frames, pose) = vehicle_window(ep, slot, step, dataset.window);
                    let packet = codec::encode(ep.vehicles[slot], &frames, &pose)?;
                    let size = codec::measure_ps(&packet);
                    r.packets += 1;
                    sum += size;
                    r.max_bytes = r.max_bytes.max(size);
                }
            }
        }
        if r.packets == 0 {
            continue;
        }
        total += sum;
        all.packets += r.packets;
        all.max_bytes = all.max_bytes.max(r.max_bytes);
        r.mean_bytes = sum as f64 / r.packets as f64;
        records.push(r);
    }
    all.mean_bytes = total as f64 / all.packets.max(1) as f64;
    records.push(all);
    for r in &mut records {
        r.channel = channel.kind.name();
        r.budget_bytes = channel.max_package_bytes;
        r.max_latency_ms = r.max_bytes as f64 * 8.0 / channel.bandwidth_bps * 1e3;
        r.improvement = codec::REFERENCE_FEATURE_PAYLOAD as f64 / r.mean_bytes;
        r.feasible = channel.fits(r.max_bytes);
    }
    let mut jsonl = String::new();
    let mut table = format!(
        "{:<16} {:>8} {:>9} {:>8} {:>10} {:>9} {}\n",
        "scenario", "packets", "PS mean", "PS max", "latency ms", "F/D", "verdict"
    );
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).unwrap());
        jsonl.push('\n');
        table.push_str(&format!(
            "{:<16} {:>8} {:>9.1} {:>8} {:>10.3} {:>9.1} {}\n",
            r.scenario,
            r.packets,
            r.mean_bytes,
            r.max_bytes,
            r.max_latency_ms,
            r.improvement,
            if r.feasible {
                format!("fits {}", r.channel)
            } else {
                format!("exceeds {}", r.channel)
            }
        ));
    }
    let mut manifest = RunManifest::new(
        "codec-bench",
        serde_json::json!({ "channel": channel, "dataset": dataset }),
    );
    manifest.data_hash = Some(hash);
    manifest.time("bench", t);
    write_report(&report_path, &jsonl, &table, &mut manifest)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let ctx = Context { file, out_dir };
    match cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::CodecBench(a) => cmd_codec_bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
