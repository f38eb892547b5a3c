//! Streams synthetic observations into the model one at a time, refining
//! as it goes, and reports how well the map recovers the world.
//!
//! ```text
//! cargo run --release --example stream_inference
//! ```

use scenemap::evaluation::score;
use scenemap::generative::{
    sample_observations, sample_world, GenerativeConfig, ObservationConfig, TopicSource, ZERO_NOISE,
};
use scenemap::inference::{insert_observation, refine, sweep, worker_rng};
use scenemap::mapping::snapshot_scene_map;
use scenemap::{Hyperparameters, SceneModel};

fn main() -> scenemap::Result<()> {
    let world_params = Hyperparameters::new(0.01, 0.1, 1e-4, 1.0, 50)?;
    let mut world_cfg = GenerativeConfig::new(world_params, 3);
    world_cfg.width = 40;
    world_cfg.height = 30;
    let world = sample_world(&world_cfg)?;
    let stream = sample_observations(
        &world,
        &ObservationConfig {
            vocab_size: 50,
            words_per_cell: 20,
            topics: TopicSource::Dirichlet { beta: 0.1 },
            position_noise: ZERO_NOISE,
            seed: 1,
        },
    )?;

    // A larger gamma than the world's lets new topics split off sooner.
    let params = Hyperparameters::new(0.01, 0.1, 1e-2, 1.0, 50)?;
    let mut model = SceneModel::new(params)?;
    let mut rng = worker_rng(7, 0);
    for (n, obs) in stream.observations.iter().enumerate() {
        insert_observation(&mut model, obs, &mut rng)?;
        if n % 20 == 19 {
            refine(&mut model, 16, &mut rng);
        }
        if n % 6000 == 5999 {
            let map = snapshot_scene_map(&model);
            let s = score(&map, &world)?;
            println!(
                "{:>6} observations  {:>3} topics  nmi {:.3}",
                n + 1,
                model.num_topics(),
                s.normalized
            );
        }
    }
    for _ in 0..100 {
        sweep(&mut model, &mut rng);
    }
    let s = score(&snapshot_scene_map(&model), &world)?;
    println!("after 100 sweeps: {} topics, nmi {:.3}", model.num_topics(), s.normalized);
    model.check_consistency().map_err(scenemap::Error::InvalidInput)?;
    Ok(())
}
