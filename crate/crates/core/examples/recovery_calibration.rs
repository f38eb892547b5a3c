//! Pilot run for the recovery check: samples 30×30 worlds, replays a
//! lawnmower survey over each with 200 closing sweeps and prints the
//! normalized MI of the final map against the world.
//!
//! ```text
//! cargo run --release --example recovery_calibration -- [seeds]
//! ```

use std::time::Instant;

use scenemap::formats::save_grid;
use scenemap::generative::{sample_world, summarize, GenerativeConfig};
use scenemap::mission::{replay, MissionConfig, MissionSource};
use scenemap::Hyperparameters;

fn main() -> scenemap::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let params = Hyperparameters::new(0.01, 0.1, 1e-4, 1.0, 50)?;
    let dir = std::env::temp_dir().join(format!("scenemap-calibration-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    println!("{:>5} {:>7} {:>8} {:>8} {:>8}", "seed", "K_true", "labels", "nmi", "secs");
    for seed in 0..seeds {
        let mut gen = GenerativeConfig::new(params.clone(), seed);
        gen.width = 30;
        gen.height = 30;
        let world = sample_world(&gen)?;
        let path = dir.join(format!("world{seed}.grid"));
        save_grid(&path, &world)?;

        let source = MissionSource::World {
            path,
            words_per_cell: 20,
            generator_beta: 0.1,
        };
        let mut cfg = MissionConfig::new(source, params.clone(), seed);
        cfg.final_sweeps = 200;
        let start = Instant::now();
        let outcome = replay(&cfg)?;
        let nmi = outcome.trace.last().and_then(|r| r.nmi);
        println!(
            "{seed:>5} {:>7} {:>8} {:>8} {:>8.1}",
            summarize(&world).topics,
            outcome.map.distinct_labels(),
            nmi.map_or("-".into(), |v| format!("{v:.3}")),
            start.elapsed().as_secs_f64()
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
