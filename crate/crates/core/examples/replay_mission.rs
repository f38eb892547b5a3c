//! Replays a lawnmower survey over a sampled world and writes the mission
//! outputs (trace, final map, delivery log) to a directory.
//!
//! ```text
//! cargo run --release --example replay_mission -- [out_dir]
//! ```

use std::path::PathBuf;

use scenemap::formats::save_grid;
use scenemap::generative::{sample_world, GenerativeConfig};
use scenemap::mission::{replay, write_outputs, MissionConfig, MissionSource};
use scenemap::Hyperparameters;

fn main() -> scenemap::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("scenemap-replay"));
    std::fs::create_dir_all(&out)?;

    let params = Hyperparameters::new(0.01, 0.1, 1e-4, 1.0, 50)?;
    let mut world_cfg = GenerativeConfig::new(params.clone(), 1);
    world_cfg.width = 30;
    world_cfg.height = 30;
    let world_path = out.join("world.grid");
    save_grid(&world_path, &sample_world(&world_cfg)?)?;

    let mut cfg = MissionConfig::new(
        MissionSource::World {
            path: world_path,
            words_per_cell: 20,
            generator_beta: 0.1,
        },
        params,
        5,
    );
    cfg.trajectory.track_spacing = 2;
    cfg.final_sweeps = 200;
    let outcome = replay(&cfg)?;
    write_outputs(&outcome, &out)?;

    for row in &outcome.trace {
        println!(
            "t={:>5}s  {:>5} bytes  delivered {:>9}  labels {:>2}  nmi {}",
            row.time,
            row.bytes,
            row.delivery_time.map_or("-".into(), |t| format!("{t:.3}s")),
            row.distinct_labels,
            row.nmi.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}
