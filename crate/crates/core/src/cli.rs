//! The `scenemap` command line.
//!
//! Commands with many parameters accept `--config <file>`, a flat TOML
//! table whose keys are the long flag names with `_` for `-`. Flags
//! override file values. Seeds are accepted only as flags. Every command
//! writes a JSON run manifest with the fully resolved configuration next to
//! its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_bytes, encode_map};
use crate::error::{Error, Result};
use crate::evaluation::{
    failure_table, grid_search, score, scatter_table, write_best, GridSearchSpec, DEFAULT_ALPHAS,
    DEFAULT_BETAS, DEFAULT_GAMMAS,
};
use crate::formats::{load_grid, load_observations, save_grid, save_observations, save_pgm};
use crate::generative::{
    sample_observations, sample_world, summarize, GenerativeConfig, ObservationConfig,
    TopicSource, VisitOrder, WorldSummary,
};
use crate::grid::{LabelGrid, SceneMap};
use crate::inference::Schedule;
use crate::mission::{replay, write_outputs, Lawnmower, MissionConfig, MissionSource};
use crate::model::{Hyperparameters, Neighborhood, WordObservation};
use crate::transport::ChannelConfig;

#[derive(Debug, Parser)]
#[command(name = "scenemap", version, about = "Bandwidth-tunable semantic scene mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic world label grid (and optionally observations).
    SampleWorld(SampleWorldArgs),
    /// Replay a lawnmower survey mission over a world or dataset.
    Replay(ReplayArgs),
    /// Grid-search hyperparameters by mutual information.
    Tune(TuneArgs),
    /// Encode a label grid file into transmitted map bytes.
    Encode(EncodeArgs),
    /// Decode transmitted map bytes back into a label grid file.
    Decode(DecodeArgs),
    /// Score a map against annotations.
    Score(ScoreArgs),
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! fill_from {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::parse(line, e.message().to_string()).in_file(path)
    })
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, S: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    summary: S,
}

fn write_manifest<C: Serialize, S: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    outputs: &[&Path],
    summary: S,
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        summary,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::from(e).in_file(path))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn vocab_of(observations: &[WordObservation]) -> u32 {
    observations.iter().map(|o| o.word + 1).max().unwrap_or(1)
}

fn parse_neighborhood(s: Option<&str>) -> Result<Neighborhood> {
    s.map(str::parse).transpose().map(Option::unwrap_or_default)
}

fn parse_order(s: Option<&str>) -> Result<VisitOrder> {
    match s.map(str::to_ascii_lowercase).as_deref() {
        None | Some("shuffled") => Ok(VisitOrder::Shuffled),
        Some("raster") => Ok(VisitOrder::Raster),
        Some(other) => Err(Error::invalid(format!("unknown visit order `{other}`"))),
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleWorldOptions {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Customers seated per cell.
    #[arg(long)]
    pub customers: Option<usize>,
    /// `shuffled` (default) or `raster`.
    #[arg(long)]
    pub order: Option<String>,
    /// Also write an observation stream here.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<u32>,
    #[arg(long)]
    pub words_per_cell: Option<usize>,
    /// Dirichlet concentration of the generating topic-word distributions.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Isotropic standard deviation of position noise (m).
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleWorldArgs {
    /// World grid file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: SampleWorldOptions,
}

#[derive(Debug, Serialize)]
struct SampleWorldResolved {
    world: GenerativeConfig,
    observations: Option<ObservationConfig>,
}

pub fn cmd_sample_world(args: SampleWorldArgs) -> Result<WorldSummary> {
    let mut o = args.opts;
    let file: SampleWorldOptions = load_config(args.config.as_deref())?;
    fill_from!(o, file; width, height, alpha, gamma, cell_size, customers, order, observations,
        vocab, words_per_cell, beta, noise_std);
    let vocab = o.vocab.unwrap_or(50);
    let beta = o.beta.unwrap_or(0.1);
    let params = Hyperparameters::new(
        o.alpha.unwrap_or(0.01),
        beta,
        o.gamma.unwrap_or(1e-4),
        o.cell_size.unwrap_or(1.0),
        vocab,
    )?;
    let sd = o.noise_std.unwrap_or(0.0);
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(Error::invalid("noise_std must be finite and non-negative"));
    }
    let var = sd * sd;
    let noise = [[var, 0.0, 0.0], [0.0, var, 0.0], [0.0, 0.0, var]];
    let mut gen = GenerativeConfig::new(params, args.seed);
    gen.width = o.width.unwrap_or(gen.width);
    gen.height = o.height.unwrap_or(gen.height);
    gen.customers_per_cell = o.customers.unwrap_or(gen.customers_per_cell);
    gen.order = parse_order(o.order.as_deref())?;
    gen.position_noise = noise;
    let world = sample_world(&gen)?;
    save_grid(&args.out, &world)?;
    let summary = summarize(&world);
    let mut outputs = vec![args.out.as_path()];
    let obs_cfg = match &o.observations {
        Some(path) => {
            let cfg = ObservationConfig {
                vocab_size: vocab,
                words_per_cell: o.words_per_cell.unwrap_or(20),
                topics: TopicSource::Dirichlet { beta },
                position_noise: noise,
                seed: args.seed,
            };
            let stream = sample_observations(&world, &cfg)?;
            save_observations(path, &stream.observations)?;
            outputs.push(path);
            Some(cfg)
        }
        None => None,
    };
    say!("topics = {}", summary.topics);
    say!("patches = {}", summary.patches);
    say!("mean_patch_size = {}", summary.mean_patch_size);
    write_manifest(
        &sidecar(&args.out),
        "sample-world",
        &SampleWorldResolved {
            world: gen,
            observations: obs_cfg,
        },
        &outputs,
        summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayOptions {
    /// World grid to survey; observations are synthesized from it.
    #[arg(long, conflicts_with = "dataset")]
    pub world: Option<PathBuf>,
    /// Recorded observation stream to survey.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Ground-truth grid for a dataset.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Vocabulary size; inferred from a dataset when omitted.
    #[arg(long)]
    pub vocab: Option<u32>,
    /// `3d` (default) or `2d`.
    #[arg(long)]
    pub neighborhood: Option<String>,
    /// Rows of cells covered by one lawnmower track.
    #[arg(long)]
    pub track_spacing: Option<usize>,
    /// Cells per second.
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long)]
    pub snapshot_period: Option<f64>,
    #[arg(long)]
    pub refine_budget: Option<usize>,
    #[arg(long)]
    pub final_sweeps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Channel rate in bits per second.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub packet_size: Option<usize>,
    #[arg(long)]
    pub overhead: Option<usize>,
    #[arg(long)]
    pub tick: Option<f64>,
    #[arg(long)]
    pub supersede: Option<bool>,
    #[arg(long)]
    pub propagation_delay: Option<f64>,
    /// Words synthesized per world cell.
    #[arg(long)]
    pub words_per_cell: Option<usize>,
    /// Dirichlet concentration of the synthesized topic-word distributions.
    #[arg(long)]
    pub generator_beta: Option<f64>,
    /// Also write a graymap preview of the final map.
    #[arg(long)]
    pub preview: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: ReplayOptions,
}

#[derive(Debug, Serialize)]
struct ReplaySummary {
    snapshots: usize,
    cells_visited: usize,
    observations: usize,
    topics: usize,
    final_bytes: usize,
    final_distinct_labels: usize,
    final_mi: Option<f64>,
    final_nmi: Option<f64>,
}

/// Resolves replay options into a mission configuration.
pub fn resolve_replay(opts: ReplayOptions, seed: u64) -> Result<MissionConfig> {
    let o = opts;
    let source = match (&o.world, &o.dataset) {
        (Some(path), None) => MissionSource::World {
            path: path.clone(),
            words_per_cell: o.words_per_cell.unwrap_or(20),
            generator_beta: o.generator_beta.unwrap_or(0.1),
        },
        (None, Some(path)) => MissionSource::Dataset {
            path: path.clone(),
            ground_truth: o.ground_truth.clone(),
        },
        _ => return Err(Error::invalid("give exactly one of world or dataset")),
    };
    let vocab = match (o.vocab, &source) {
        (Some(v), _) => v,
        (None, MissionSource::World { .. }) => 50,
        (None, MissionSource::Dataset { path, .. }) => vocab_of(&load_observations(path)?),
    };
    let model = Hyperparameters::new(
        o.alpha.unwrap_or(0.01),
        o.beta.unwrap_or(0.1),
        o.gamma.unwrap_or(1e-4),
        o.cell_size.unwrap_or(1.0),
        vocab,
    )?
    .with_neighborhood(parse_neighborhood(o.neighborhood.as_deref())?);
    let mut cfg = MissionConfig::new(source, model, seed);
    cfg.trajectory = Lawnmower {
        track_spacing: o.track_spacing.unwrap_or(1),
        speed: o.speed.unwrap_or(1.0),
    };
    cfg.snapshot_period = o.snapshot_period.unwrap_or(cfg.snapshot_period);
    cfg.refine_budget = o.refine_budget.unwrap_or(cfg.refine_budget);
    cfg.final_sweeps = o.final_sweeps.unwrap_or(0);
    cfg.workers = o.workers.unwrap_or(1);
    let d = ChannelConfig::default();
    cfg.channel = ChannelConfig {
        rate: o.rate.unwrap_or(d.rate),
        packet_size: o.packet_size.unwrap_or(d.packet_size),
        per_packet_overhead: o.overhead.unwrap_or(d.per_packet_overhead),
        tick: o.tick.unwrap_or(d.tick),
        supersede: o.supersede.unwrap_or(d.supersede),
        propagation_delay: o.propagation_delay.unwrap_or(d.propagation_delay),
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let mut o = args.opts;
    let file: ReplayOptions = load_config(args.config.as_deref())?;
    fill_from!(o, file; world, dataset, ground_truth, alpha, beta, gamma, cell_size, vocab,
        neighborhood, track_spacing, speed, snapshot_period, refine_budget, final_sweeps, workers,
        rate, packet_size, overhead, tick, supersede, propagation_delay, words_per_cell,
        generator_beta, preview);
    let preview = o.preview.unwrap_or(false);
    let cfg = resolve_replay(o, args.seed)?;
    let outcome = replay(&cfg)?;
    write_outputs(&outcome, &args.out)?;
    let mut outputs: Vec<PathBuf> = [
        crate::mission::TRACE_FILE,
        crate::mission::MAP_GRID_FILE,
        crate::mission::MAP_ENCODED_FILE,
        crate::mission::DELIVERY_FILE,
    ]
    .iter()
    .map(|f| args.out.join(f))
    .collect();
    if preview {
        let p = args.out.join("map.pgm");
        save_pgm(&p, &LabelGrid {
            labels: outcome.map.labels.clone(),
            ..outcome.map.to_label_grid()
        })?;
        outputs.push(p);
    }
    let last = outcome.trace.last();
    let summary = ReplaySummary {
        snapshots: outcome.trace.len(),
        cells_visited: outcome.cells_visited,
        observations: outcome.model.num_observations(),
        topics: outcome.model.num_topics(),
        final_bytes: last.map_or(0, |r| r.bytes),
        final_distinct_labels: outcome.map.distinct_labels(),
        final_mi: last.and_then(|r| r.mi),
        final_nmi: last.and_then(|r| r.nmi),
    };
    say!("snapshots = {}", summary.snapshots);
    say!("distinct_labels = {}", summary.final_distinct_labels);
    say!("final_bytes = {}", summary.final_bytes);
    if let Some(nmi) = summary.final_nmi {
        say!("final_nmi = {nmi}");
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.out.join("manifest.json"), "replay", &cfg, &refs, summary)
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneOptions {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Optional second grid scored alongside the annotations.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    /// Replicate runs per grid point, seeded `seed, seed + 1, ...`.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub vocab: Option<u32>,
    #[arg(long)]
    pub neighborhood: Option<String>,
    #[arg(long)]
    pub refine_per_cell: Option<usize>,
    #[arg(long)]
    pub final_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TuneOptions,
}

#[derive(Debug, Serialize)]
struct TuneResolved {
    dataset: PathBuf,
    annotations: PathBuf,
    reference: Option<PathBuf>,
    grid: GridSearchSpec,
    schedule: Schedule,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const BEST_FILE: &str = "best.txt";

pub fn cmd_tune(args: TuneArgs) -> Result<[f64; 3]> {
    let mut o = args.opts;
    let file: TuneOptions = load_config(args.config.as_deref())?;
    fill_from!(o, file; dataset, annotations, reference, alphas, betas, gammas, replicates,
        cell_size, vocab, neighborhood, refine_per_cell, final_sweeps);
    let dataset_path = o.dataset.ok_or_else(|| Error::invalid("dataset is required"))?;
    let annotations_path = o.annotations.ok_or_else(|| Error::invalid("annotations is required"))?;
    let dataset = load_observations(&dataset_path)?;
    let annotations = load_grid(&annotations_path)?;
    let reference = o.reference.as_deref().map(load_grid).transpose()?;
    let replicates = o.replicates.unwrap_or(crate::evaluation::DEFAULT_SEEDS);
    let spec = GridSearchSpec {
        alphas: o.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
        betas: o.betas.unwrap_or_else(|| DEFAULT_BETAS.to_vec()),
        gammas: o.gammas.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec()),
        cell_size: [o.cell_size.unwrap_or(1.0); 3],
        vocab_size: o.vocab.unwrap_or_else(|| vocab_of(&dataset)),
        neighborhood: parse_neighborhood(o.neighborhood.as_deref())?,
        seeds: (0..replicates as u64).map(|r| args.seed.wrapping_add(r)).collect(),
    };
    let schedule = Schedule {
        refine_per_cell: o.refine_per_cell.unwrap_or(Schedule::default().refine_per_cell),
        final_sweeps: o.final_sweeps.unwrap_or(10),
        workers: 1,
    };
    let result = grid_search(&spec, &dataset, &annotations, reference.as_ref(), &schedule)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::from(e).in_file(&args.out))?;
    let results = args.out.join(RESULTS_FILE);
    let failures = args.out.join(FAILURES_FILE);
    let best = args.out.join(BEST_FILE);
    let create = |p: &Path| fs::File::create(p).map_err(|e| Error::from(e).in_file(p));
    scatter_table(&result.runs, create(&results)?)?;
    failure_table(&result.runs, create(&failures)?)?;
    write_best(&result, create(&best)?)?;
    let _ = write_best(&result, std::io::stdout().lock());
    write_manifest(
        &args.out.join("manifest.json"),
        "tune",
        &TuneResolved {
            dataset: dataset_path,
            annotations: annotations_path,
            reference: o.reference,
            grid: spec,
            schedule,
        },
        &[&results, &failures, &best],
        serde_json::json!({
            "best": result.best,
            "best_mean_mi": result.best_mean_mi,
            "runs": result.runs.len(),
            "failed_runs": result.runs.iter().filter(|r| r.outcome.is_err()).count(),
        }),
    )?;
    Ok(result.best)
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// Label grid file.
    #[arg(long)]
    pub input: PathBuf,
    /// Encoded map file.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn cmd_encode(args: EncodeArgs) -> Result<usize> {
    let grid = load_grid(&args.input)?;
    let map = SceneMap::from_label_grid(&grid);
    let bytes = encode_map(&map)
        .map_err(|e| e.in_file(&args.input))?
        .to_bytes();
    fs::write(&args.output, &bytes).map_err(|e| Error::from(e).in_file(&args.output))?;
    say!("bytes = {}", bytes.len());
    say!("distinct_labels = {}", map.distinct_labels());
    write_manifest(
        &sidecar(&args.output),
        "encode",
        &args,
        &[&args.output],
        serde_json::json!({ "bytes": bytes.len(), "distinct_labels": map.distinct_labels() }),
    )?;
    Ok(bytes.len())
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    /// Encoded map file.
    #[arg(long)]
    pub input: PathBuf,
    /// Label grid file to write.
    #[arg(long)]
    pub output: PathBuf,
}

fn read_encoded(path: &Path) -> Result<SceneMap> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_bytes(&bytes).map_err(|e| e.in_file(path))
}

pub fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let map = read_encoded(&args.input)?;
    save_grid(&args.output, &map.to_label_grid())?;
    write_manifest(
        &sidecar(&args.output),
        "decode",
        &args,
        &[&args.output],
        serde_json::json!({ "width": map.width, "height": map.height, "palette": map.palette.len() }),
    )
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Map to score: a label grid file, or an encoded map when `--encoded`.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub encoded: bool,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Also write the score record here, with a manifest beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_score(args: ScoreArgs) -> Result<crate::evaluation::Score> {
    let map = if args.encoded {
        read_encoded(&args.map)?.to_label_grid()
    } else {
        load_grid(&args.map)?
    };
    let annotations = load_grid(&args.annotations)?;
    let s = score(&map, &annotations).map_err(|e| match e {
        Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!(
            "{} vs {}: {msg}",
            args.map.display(),
            args.annotations.display()
        )),
        other => other,
    })?;
    let record = format!(
        "mi = {}\nnmi = {}\nentropy_map = {}\nentropy_annotations = {}\noverlap = {}\n",
        s.mutual_information, s.normalized, s.entropy_left, s.entropy_right, s.overlap
    );
    say!("{}", record.trim_end());
    if let Some(out) = &args.out {
        fs::write(out, &record).map_err(|e| Error::from(e).in_file(out))?;
        write_manifest(&sidecar(out), "score", &args, &[out], s)?;
    }
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SampleWorld(a) => cmd_sample_world(a).map(drop),
        Command::Replay(a) => cmd_replay(a),
        Command::Tune(a) => cmd_tune(a).map(drop),
        Command::Encode(a) => cmd_encode(a).map(drop),
        Command::Decode(a) => cmd_decode(a),
        Command::Score(a) => cmd_score(a).map(drop),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
