mod common;

use common::spearman;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenemap::codec::{decode_map, encode_map, encoded_size};
use scenemap::evaluation::entropy;
use scenemap::{LabelGrid, SceneMap};

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, labels: u32) -> SceneMap {
    let cells = (0..w * h).map(|_| rng.random_range(1..=labels)).collect();
    SceneMap::from_label_grid(&LabelGrid::new(w, h, 1.0, cells).unwrap())
}

/// Blocky map whose label entropy grows with `labels`.
fn blocky_map(rng: &mut ChaCha8Rng, side: usize, block: usize, labels: u32) -> SceneMap {
    let per_row = side.div_ceil(block);
    let blocks: Vec<u32> = (0..per_row * per_row).map(|_| rng.random_range(1..=labels)).collect();
    let cells = (0..side * side)
        .map(|p| blocks[(p / side / block) * per_row + (p % side) / block])
        .collect();
    SceneMap::from_label_grid(&LabelGrid::new(side, side, 1.0, cells).unwrap())
}

#[test]
fn encoded_size_tracks_label_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut h, mut bytes) = (Vec::new(), Vec::new());
    for labels in [1u32, 2, 3, 4, 6, 8, 12, 16, 24, 32, 64, 128] {
        let m = blocky_map(&mut rng, 96, 4, labels);
        h.push(entropy(&m));
        bytes.push(encoded_size(&m).unwrap() as f64);
    }
    let rho = spearman(&h, &bytes);
    assert!(rho > 0.8, "spearman {rho}");
}

#[test]
fn uniform_maps_are_smaller_than_noisy_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for side in [8usize, 32, 128] {
        let uniform = SceneMap::from_label_grid(&LabelGrid::filled(side, side, 1.0, 3));
        let noisy = random_map(&mut rng, side, side, 10);
        assert!(encoded_size(&uniform).unwrap() < encoded_size(&noisy).unwrap());
    }
}

#[test]
fn many_labels_escalate_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let m = random_map(&mut rng, 40, 40, 1000);
    assert!(m.distinct_labels() > 255);
    let enc = encode_map(&m).unwrap();
    assert_eq!(enc.meta.bit_depth, 16);
    assert_eq!(decode_map(&enc).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>(), w in 1usize..64, h in 1usize..64, labels in 1u32..255, ox in -50i64..50, oy in -50i64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..w * h).map(|_| rng.random_range(0..=labels)).collect();
        let m = SceneMap::from_label_grid(&LabelGrid::new(w, h, 0.5, cells).unwrap().with_origin([ox, oy]));
        let enc = encode_map(&m).unwrap();
        prop_assert_eq!(decode_map(&enc).unwrap(), m.clone());
        let bytes = enc.to_bytes();
        prop_assert_eq!(bytes.len(), encoded_size(&m).unwrap());
    }
}
