//! Simulated survey missions.
//!
//! A replay drives a lawnmower trajectory over the observed area. Each step
//! ingests the observations under the vehicle's footprint, runs a fixed
//! refinement budget, and on every snapshot period encodes the current map
//! and queues it on the simulated uplink.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::encode_map;
use crate::error::{Error, Result};
use crate::evaluation::score;
use crate::formats::{load_grid, load_observations, save_grid};
use crate::generative::{sample_observations, ObservationConfig, TopicSource, ZERO_NOISE};
use crate::grid::{LabelGrid, SceneMap};
use crate::inference::{insert_observation, refine_parallel, sweep_parallel, worker_rng};
use crate::mapping::snapshot_scene_map;
use crate::model::{cell_of, Hyperparameters, SceneModel, WordObservation};
use crate::transport::{Channel, ChannelConfig};

/// Boustrophedon survey: tracks run along `i`, each covering
/// `track_spacing` rows of cells, at `speed` cells per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lawnmower {
    pub track_spacing: usize,
    pub speed: f64,
}

impl Default for Lawnmower {
    fn default() -> Self {
        Lawnmower {
            track_spacing: 1,
            speed: 1.0,
        }
    }
}

impl Lawnmower {
    pub fn validate(&self) -> Result<()> {
        if self.track_spacing == 0 {
            return Err(Error::invalid("track spacing must be >= 1"));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::invalid(format!("speed must be positive, got {}", self.speed)));
        }
        Ok(())
    }

    /// Footprints along the trajectory over the box `[i0, i1] × [j0, j1]`.
    /// Each step covers one column of a track.
    pub fn steps(&self, i0: i64, i1: i64, j0: i64, j1: i64) -> Vec<Vec<(i64, i64)>> {
        let mut out = Vec::new();
        let spacing = self.track_spacing as i64;
        let mut track = 0;
        let mut j = j0;
        while j <= j1 {
            let rows: Vec<i64> = (j..(j + spacing).min(j1 + 1)).collect();
            let cols: Vec<i64> = if track % 2 == 0 {
                (i0..=i1).collect()
            } else {
                (i0..=i1).rev().collect()
            };
            for i in cols {
                out.push(rows.iter().map(|&r| (i, r)).collect());
            }
            j += spacing;
            track += 1;
        }
        out
    }
}

/// Where a mission's observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MissionSource {
    /// Synthesize words from a world label grid, which is also the ground
    /// truth.
    World {
        path: PathBuf,
        words_per_cell: usize,
        /// Dirichlet concentration of the generating topic-word
        /// distributions.
        generator_beta: f64,
    },
    /// A recorded observation stream with optional ground truth.
    Dataset {
        path: PathBuf,
        ground_truth: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub source: MissionSource,
    pub trajectory: Lawnmower,
    /// Simulated seconds between snapshots.
    pub snapshot_period: f64,
    /// Refinement visits after each trajectory step.
    pub refine_budget: usize,
    /// Full sweeps after the trajectory ends, before the final snapshot.
    pub final_sweeps: usize,
    pub workers: usize,
    pub channel: ChannelConfig,
    pub model: Hyperparameters,
    pub seed: u64,
}

pub const DEFAULT_SNAPSHOT_PERIOD: f64 = 10.0;
pub const DEFAULT_REFINE_BUDGET: usize = 64;

impl MissionConfig {
    pub fn new(source: MissionSource, model: Hyperparameters, seed: u64) -> Self {
        MissionConfig {
            source,
            trajectory: Lawnmower::default(),
            snapshot_period: DEFAULT_SNAPSHOT_PERIOD,
            refine_budget: DEFAULT_REFINE_BUDGET,
            final_sweeps: 0,
            workers: 1,
            channel: ChannelConfig::default(),
            model,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        if !(self.snapshot_period.is_finite() && self.snapshot_period > 0.0) {
            return Err(Error::invalid(format!(
                "snapshot period must be positive, got {}",
                self.snapshot_period
            )));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be >= 1"));
        }
        self.channel.validate()?;
        self.model.validate()?;
        if let MissionSource::World {
            words_per_cell,
            generator_beta,
            ..
        } = &self.source
        {
            if *words_per_cell == 0 {
                return Err(Error::invalid("words_per_cell must be >= 1"));
            }
            if !(generator_beta.is_finite() && *generator_beta > 0.0) {
                return Err(Error::invalid("generator_beta must be positive"));
            }
        }
        Ok(())
    }
}

/// Observations and optional ground truth for a replay.
#[derive(Clone, Debug, PartialEq)]
pub struct MissionInputs {
    pub observations: Vec<WordObservation>,
    pub ground_truth: Option<LabelGrid>,
}

/// Reads (or synthesizes) the mission inputs. Fails before any simulation
/// when a file is missing or malformed.
pub fn load_inputs(cfg: &MissionConfig) -> Result<MissionInputs> {
    cfg.validate()?;
    match &cfg.source {
        MissionSource::World {
            path,
            words_per_cell,
            generator_beta,
        } => {
            let world = load_grid(path)?;
            let obs = sample_observations(
                &world,
                &ObservationConfig {
                    vocab_size: cfg.model.vocab_size,
                    words_per_cell: *words_per_cell,
                    topics: TopicSource::Dirichlet {
                        beta: *generator_beta,
                    },
                    position_noise: ZERO_NOISE,
                    seed: cfg.seed,
                },
            )?;
            Ok(MissionInputs {
                observations: obs.observations,
                ground_truth: Some(world),
            })
        }
        MissionSource::Dataset { path, ground_truth } => Ok(MissionInputs {
            observations: load_observations(path)?,
            ground_truth: ground_truth.as_deref().map(load_grid).transpose()?,
        }),
    }
}

/// One transmitted snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub snapshot: usize,
    pub time: f64,
    pub bytes: usize,
    /// `None` when superseded by a newer snapshot before transmission.
    pub delivery_time: Option<f64>,
    pub distinct_labels: usize,
    pub topics: usize,
    pub observations: usize,
    pub mi: Option<f64>,
    pub nmi: Option<f64>,
}

pub const TRACE_HEADER: [&str; 10] = [
    "snapshot",
    "time",
    "bytes",
    "delivery_time",
    "status",
    "distinct_labels",
    "topics",
    "observations",
    "mi",
    "nmi",
];

#[derive(Clone, Debug)]
pub struct MissionOutcome {
    pub trace: Vec<TraceRow>,
    pub map: SceneMap,
    pub model: SceneModel,
    pub channel: Channel,
    /// Distinct `(i, j)` cells under the footprint that held observations.
    pub cells_visited: usize,
}

/// Runs the mission over in-memory inputs.
pub fn run_mission(cfg: &MissionConfig, inputs: &MissionInputs) -> Result<MissionOutcome> {
    cfg.validate()?;
    let params = &cfg.model;
    if let Some(truth) = &inputs.ground_truth {
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        if !same(truth.cell_size, params.cell_size[0]) || !same(truth.cell_size, params.cell_size[1]) {
            return Err(Error::ShapeMismatch(format!(
                "ground truth cell size {} differs from model cell size {:?}",
                truth.cell_size, params.cell_size
            )));
        }
    }

    let mut by_column: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (n, obs) in inputs.observations.iter().enumerate() {
        obs.validate(params)?;
        let c = cell_of(obs.pos, params)?;
        by_column.entry((c.i, c.j)).or_default().push(n);
    }

    let mut model = SceneModel::new(params.clone())?;
    let mut channel = Channel::new(cfg.channel.clone())?;
    let mut rng = worker_rng(cfg.seed, 0);
    let mut trace = Vec::new();
    let mut payload_of_row = Vec::new();
    let mut cells_visited = 0;

    let mut snapshot = |model: &SceneModel, channel: &mut Channel, t: f64, trace: &mut Vec<TraceRow>| -> Result<()> {
        let map = snapshot_scene_map(model);
        let bytes = encode_map(&map)?.to_bytes();
        let id = channel.enqueue(&bytes, t)?;
        let (mi, nmi) = match &inputs.ground_truth {
            Some(truth) => match score(&map, truth) {
                Ok(s) => (Some(s.mutual_information), Some(s.normalized)),
                Err(Error::UndefinedScore) => (None, None),
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        payload_of_row.push(id);
        trace.push(TraceRow {
            snapshot: trace.len(),
            time: t,
            bytes: bytes.len(),
            delivery_time: None,
            distinct_labels: map.distinct_labels(),
            topics: model.num_topics(),
            observations: model.num_observations(),
            mi,
            nmi,
        });
        Ok(())
    };

    let mut t = 0.0;
    if !by_column.is_empty() {
        let i0 = by_column.keys().map(|k| k.0).min().unwrap();
        let i1 = by_column.keys().map(|k| k.0).max().unwrap();
        let j0 = by_column.keys().map(|k| k.1).min().unwrap();
        let j1 = by_column.keys().map(|k| k.1).max().unwrap();
        let dt = 1.0 / cfg.trajectory.speed;
        let mut next_snapshot = cfg.snapshot_period;
        for (step, footprint) in cfg.trajectory.steps(i0, i1, j0, j1).into_iter().enumerate() {
            t = step as f64 * dt;
            channel.advance_to(t);
            for col in footprint {
                let Some(idx) = by_column.get(&col) else {
                    continue;
                };
                cells_visited += 1;
                for &n in idx {
                    insert_observation(&mut model, &inputs.observations[n], &mut rng)?;
                }
            }
            refine_parallel(&mut model, cfg.refine_budget, cfg.workers, &mut rng);
            if t >= next_snapshot {
                snapshot(&model, &mut channel, t, &mut trace)?;
                while next_snapshot <= t {
                    next_snapshot += cfg.snapshot_period;
                }
            }
        }
        for _ in 0..cfg.final_sweeps {
            sweep_parallel(&mut model, cfg.workers, &mut rng);
        }
        snapshot(&model, &mut channel, t, &mut trace)?;
    }
    channel.drain();
    for (row, &id) in trace.iter_mut().zip(&payload_of_row) {
        row.delivery_time = channel.transmission(id).and_then(|tx| tx.delivery_time);
    }
    let map = snapshot_scene_map(&model);
    Ok(MissionOutcome {
        trace,
        map,
        model,
        channel,
        cells_visited,
    })
}

/// Loads the inputs and runs the mission.
pub fn replay(cfg: &MissionConfig) -> Result<MissionOutcome> {
    let inputs = load_inputs(cfg)?;
    run_mission(cfg, &inputs)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        let status = if r.delivery_time.is_some() {
            "delivered"
        } else {
            "superseded"
        };
        w.write_record([
            r.snapshot.to_string(),
            r.time.to_string(),
            r.bytes.to_string(),
            opt(r.delivery_time),
            status.to_string(),
            r.distinct_labels.to_string(),
            r.topics.to_string(),
            r.observations.to_string(),
            opt(r.mi),
            opt(r.nmi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// File names written by [`write_outputs`].
pub const TRACE_FILE: &str = "trace.csv";
pub const MAP_GRID_FILE: &str = "map.grid";
pub const MAP_ENCODED_FILE: &str = "map.smap";
pub const DELIVERY_FILE: &str = "deliveries.csv";

/// Writes the trace, final map (as a topic-id grid and as transmitted
/// bytes) and delivery log into `dir`.
pub fn write_outputs(outcome: &MissionOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let create = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::from(e).in_file(p))
    };
    write_trace(&outcome.trace, create(TRACE_FILE)?)?;
    outcome.channel.write_delivery_log(create(DELIVERY_FILE)?)?;
    save_grid(&dir.join(MAP_GRID_FILE), &outcome.map.to_label_grid())?;
    let bytes = encode_map(&outcome.map)?.to_bytes();
    let p = dir.join(MAP_ENCODED_FILE);
    fs::write(&p, bytes).map_err(|e| Error::from(e).in_file(p))?;
    Ok(())
}
