//! Encodes maps of growing complexity and shows how the byte count follows
//! the number of labels.
//!
//! ```text
//! cargo run --release --example encode_map
//! ```

use scenemap::codec::{decode_bytes, encode_map};
use scenemap::generative::{sample_world, GenerativeConfig};
use scenemap::{Hyperparameters, SceneMap};

fn main() -> scenemap::Result<()> {
    println!("{:>8} {:>8} {:>8} {:>8}", "alpha", "gamma", "labels", "bytes");
    for (alpha, gamma) in [(0.1, 1e-5), (0.01, 1e-5), (0.01, 1e-4), (0.001, 1e-4), (0.001, 1e-3)] {
        let params = Hyperparameters::new(alpha, 1.0, gamma, 0.5, 1)?;
        let world = sample_world(&GenerativeConfig::new(params, 3))?;
        let map = SceneMap::from_label_grid(&world);
        let bytes = encode_map(&map)?.to_bytes();
        assert_eq!(decode_bytes(&bytes)?, map);
        println!("{alpha:>8} {gamma:>8} {:>8} {:>8}", map.distinct_labels(), bytes.len());
    }
    Ok(())
}
