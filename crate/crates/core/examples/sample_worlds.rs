//! Samples synthetic worlds over a 3×3 grid of `alpha` and `gamma` and
//! prints the topic count and mean patch size of each, averaged over seeds.
//!
//! ```text
//! cargo run --release --example sample_worlds -- [seeds]
//! ```

use scenemap::generative::{sample_world, summarize, GenerativeConfig};
use scenemap::Hyperparameters;

fn main() -> scenemap::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let alphas = [0.001, 0.01, 0.1];
    let gammas = [1e-5, 1e-4, 1e-3];

    println!("{:>8} {:>8} {:>10} {:>12}", "alpha", "gamma", "topics", "patch size");
    for gamma in gammas {
        for alpha in alphas {
            let params = Hyperparameters::new(alpha, 1.0, gamma, 1.0, 1)?;
            let (mut topics, mut patch) = (0.0, 0.0);
            for seed in 0..seeds {
                let world = sample_world(&GenerativeConfig::new(params.clone(), seed))?;
                let s = summarize(&world);
                topics += s.topics as f64;
                patch += s.mean_patch_size;
            }
            let n = seeds as f64;
            println!("{alpha:>8} {gamma:>8} {:>10.2} {:>12.1}", topics / n, patch / n);
        }
    }
    Ok(())
}
