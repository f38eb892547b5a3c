//! Grid search over a reduced hyperparameter grid against a synthetic
//! world, printing the scatter table (MI versus encoded bytes) and the best
//! point.
//!
//! ```text
//! cargo run --release --example tune_hyperparameters
//! ```

use scenemap::evaluation::{grid_search, scatter_table, write_best, GridSearchSpec};
use scenemap::generative::{
    sample_observations, sample_world, GenerativeConfig, ObservationConfig, TopicSource, ZERO_NOISE,
};
use scenemap::inference::Schedule;
use scenemap::Hyperparameters;

fn main() -> scenemap::Result<()> {
    let truth_params = Hyperparameters::new(0.01, 0.1, 1e-4, 1.0, 40)?;
    let mut world_cfg = GenerativeConfig::new(truth_params, 1);
    world_cfg.width = 24;
    world_cfg.height = 24;
    let world = sample_world(&world_cfg)?;
    let dataset = sample_observations(
        &world,
        &ObservationConfig {
            vocab_size: 40,
            words_per_cell: 15,
            topics: TopicSource::Dirichlet { beta: 0.1 },
            position_noise: ZERO_NOISE,
            seed: 1,
        },
    )?
    .observations;

    let mut spec = GridSearchSpec::standard(1.0, 40);
    spec.alphas = vec![1.0, 0.01];
    spec.betas = vec![10.0, 0.1];
    spec.seeds = vec![0, 1];
    let schedule = Schedule {
        refine_per_cell: 16,
        final_sweeps: 10,
        workers: 1,
    };
    let result = grid_search(&spec, &dataset, &world, None, &schedule)?;
    scatter_table(&result.runs, std::io::stdout().lock())?;
    println!();
    write_best(&result, std::io::stdout().lock())?;
    Ok(())
}
