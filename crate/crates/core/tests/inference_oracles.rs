mod common;

use std::collections::HashMap;

use common::{canonical, oracle_weights, random_frozen_model, rel_close, set_partitions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenemap::generative::{sample_observations, ObservationConfig, TopicSource, ZERO_NOISE};
use scenemap::inference::{
    insert_observation, refine, run_stream, seating_weights, sweep, Schedule,
};
use scenemap::{CellCoord, Hyperparameters, LabelGrid, SceneModel, WordObservation};

#[test]
fn weights_match_raw_count_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let m = random_frozen_model(&mut rng, 3, 3, 5);
        for cell in m.cells() {
            for word in 0..m.params().vocab_size {
                let exclusions = std::iter::once(None).chain((0..cell.len()).map(Some));
                for ex in exclusions {
                    let got = seating_weights(&m, cell.coord, word, ex).unwrap();
                    let (want, new) = oracle_weights(&m, cell.coord, word, ex);
                    assert_eq!(got.topics.len(), want.len());
                    for ((t, w), (&gt, &gw)) in want.iter().zip(got.topics.iter().zip(&got.weights)) {
                        assert_eq!(*t, gt);
                        assert!(rel_close(*w, gw, 1e-12), "{w} vs {gw}");
                    }
                    assert!(rel_close(new, got.new_topic, 1e-12));
                }
            }
        }
    }
}

#[test]
fn weights_for_an_empty_cell_use_neighbors_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let m = random_frozen_model(&mut rng, 3, 3, 5);
        let c = CellCoord::new(rng.random_range(-1..4), rng.random_range(-1..4), rng.random_range(-1..2));
        let got = seating_weights(&m, c, 0, None).unwrap();
        let (want, _) = oracle_weights(&m, c, 0, None);
        let got: Vec<_> = got.topics.iter().copied().zip(got.weights.iter().copied()).collect();
        assert_eq!(got.len(), want.len());
        for ((a, x), (b, y)) in got.iter().zip(&want) {
            assert_eq!(a, b);
            assert!(rel_close(*x, *y, 1e-12));
        }
    }
}

#[test]
fn insertion_frequencies_follow_the_conditional() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..4 {
        let base = random_frozen_model(&mut rng, 3, 3, 5);
        let c = CellCoord::new(1, 1, 0);
        let word = rng.random_range(0..base.params().vocab_size);
        let (want, new) = oracle_weights(&base, c, word, None);
        let total: f64 = want.iter().map(|w| w.1).sum::<f64>() + new;
        let fresh = base.next_topic_id();
        let n = 50_000;
        let mut hits: HashMap<u32, usize> = HashMap::new();
        let mut draw_rng = ChaCha8Rng::seed_from_u64(100 + case);
        let obs = WordObservation::new(0.0, word, [1.5, 1.5, 0.5]);
        for _ in 0..n {
            let mut m = base.clone();
            let t = insert_observation(&mut m, &obs, &mut draw_rng).unwrap();
            *hits.entry(if t >= fresh { u32::MAX } else { t }).or_default() += 1;
        }
        let mut l1 = 0.0;
        for (t, w) in &want {
            l1 += (hits.get(t).copied().unwrap_or(0) as f64 / n as f64 - w / total).abs();
        }
        l1 += (hits.get(&u32::MAX).copied().unwrap_or(0) as f64 / n as f64 - new / total).abs();
        assert!(l1 <= 0.02, "case {case}: L1 {l1}");
    }
}

/// Exact stationary distribution over partitions of the systematic-scan
/// kernel, from enumerating every partition.
fn exact_sweep_stationary(
    cells: &[usize],
    words: &[u32],
    adjacent: &dyn Fn(usize, usize) -> bool,
    p: &Hyperparameters,
) -> HashMap<Vec<usize>, f64> {
    let n = words.len();
    let states = set_partitions(n);
    let index: HashMap<Vec<usize>, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let v = p.vocab_size as f64;
    let relabel = |s: &[usize]| -> Vec<usize> { canonical(&s.iter().map(|&b| b as u32).collect::<Vec<_>>()) };
    let mut pi = vec![1.0 / states.len() as f64; states.len()];
    for _ in 0..4000 {
        for o in 0..n {
            let mut next = vec![0.0; states.len()];
            for (si, s) in states.iter().enumerate() {
                if pi[si] == 0.0 {
                    continue;
                }
                let mut blocks: Vec<usize> = (0..n).filter(|&q| q != o).map(|q| s[q]).collect();
                blocks.sort_unstable();
                blocks.dedup();
                let mut moves: Vec<(Vec<usize>, f64)> = Vec::new();
                for &b in &blocks {
                    let members: Vec<usize> = (0..n).filter(|&q| q != o && s[q] == b).collect();
                    let nk = members.iter().filter(|&&q| adjacent(cells[o], cells[q])).count() as f64;
                    let cw = members.iter().filter(|&&q| words[q] == words[o]).count() as f64;
                    let w = (nk + p.alpha) * (cw + p.beta) / (members.len() as f64 + v * p.beta);
                    let mut t = s.clone();
                    t[o] = b;
                    moves.push((relabel(&t), w));
                }
                let mut t = s.clone();
                t[o] = n + 1;
                moves.push((relabel(&t), p.gamma / v));
                let z: f64 = moves.iter().map(|m| m.1).sum();
                for (t, w) in moves {
                    next[index[&t]] += pi[si] * w / z;
                }
            }
            pi = next;
        }
    }
    states.into_iter().zip(pi).collect()
}

fn empirical_sweep_stationary(coords: &[CellCoord], cells: &[usize], words: &[u32], p: &Hyperparameters) -> HashMap<Vec<usize>, f64> {
    let mut m = SceneModel::new(p.clone()).unwrap();
    let t = m.allocate_topic();
    for (&c, &w) in cells.iter().zip(words) {
        m.push_labeled(coords[c], w, t).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        sweep(&mut m, &mut rng);
    }
    let sweeps = 200_000;
    let mut counts: HashMap<Vec<usize>, f64> = HashMap::new();
    for _ in 0..sweeps {
        sweep(&mut m, &mut rng);
        let labels: Vec<u32> = m.cells().iter().flat_map(|c| c.labels().iter().copied()).collect();
        *counts.entry(canonical(&labels)).or_default() += 1.0 / sweeps as f64;
    }
    m.check_consistency().unwrap();
    counts
}

fn l1(a: &HashMap<Vec<usize>, f64>, b: &HashMap<Vec<usize>, f64>) -> f64 {
    let mut keys: Vec<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.iter().map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs()).sum()
}

#[test]
fn two_cell_sweeps_reach_the_enumerated_stationary_partition_distribution() {
    let p = Hyperparameters::new(0.5, 0.5, 0.5, 1.0, 3).unwrap();
    let coords = [CellCoord::new(0, 0, 0), CellCoord::new(1, 0, 0)];
    // Observations listed in store order: cell, word.
    let cells = [0, 0, 1, 1];
    let words = [0, 1, 1, 2];
    let exact = exact_sweep_stationary(&cells, &words, &|_, _| true, &p);
    let empirical = empirical_sweep_stationary(&coords, &cells, &words, &p);
    let d = l1(&exact, &empirical);
    assert!(d <= 0.02, "L1 {d}");
}

#[test]
fn three_cell_line_respects_the_neighborhood() {
    let p = Hyperparameters::new(0.2, 0.3, 0.4, 1.0, 3).unwrap();
    let coords = [CellCoord::new(0, 0, 0), CellCoord::new(1, 0, 0), CellCoord::new(2, 0, 0)];
    let cells = [0, 0, 1, 2, 2];
    let words = [0, 0, 1, 2, 0];
    let adjacent = |a: usize, b: usize| a.abs_diff(b) <= 1;
    let exact = exact_sweep_stationary(&cells, &words, &adjacent, &p);
    let empirical = empirical_sweep_stationary(&coords, &cells, &words, &p);
    let d = l1(&exact, &empirical);
    assert!(d <= 0.02, "L1 {d}");
}

#[test]
fn topic_word_estimates_converge_to_the_generating_distributions() {
    let phi = vec![
        vec![0.6, 0.3, 0.1, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.2, 0.3, 0.5],
    ];
    let labels: Vec<u32> = (0..10).flat_map(|_| (0..20).map(|i| if i < 10 { 1 } else { 2 })).collect();
    let world = LabelGrid::new(20, 10, 1.0, labels).unwrap();
    let stream = sample_observations(
        &world,
        &ObservationConfig {
            vocab_size: 6,
            words_per_cell: 200,
            topics: TopicSource::Given(phi.clone()),
            position_noise: ZERO_NOISE,
            seed: 4,
        },
    )
    .unwrap();
    let params = Hyperparameters::new(0.1, 0.1, 1e-3, 1.0, 6).unwrap();
    let schedule = Schedule {
        refine_per_cell: 16,
        final_sweeps: 20,
        workers: 1,
    };
    let m = run_stream(&params, &stream.observations, &schedule, 9).unwrap();
    for (k, truth) in phi.iter().enumerate() {
        // The model topic holding most observations of this world region.
        let mut votes: HashMap<u32, usize> = HashMap::new();
        for cell in m.cells() {
            if world.at(cell.coord.i, cell.coord.j) == Some(k as u32 + 1) {
                for &t in cell.labels() {
                    *votes.entry(t).or_default() += 1;
                }
            }
        }
        let (&topic, _) = votes.iter().max_by_key(|(t, n)| (**n, std::cmp::Reverse(**t))).unwrap();
        let total = m.topic_total(topic) as f64;
        let err: f64 = (0..6)
            .map(|w| (m.topic_word_count(topic, w) as f64 / total - truth[w as usize]).abs())
            .sum();
        assert!(err <= 0.02, "topic {k}: L1 {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refinement_keeps_counts_consistent(seed in any::<u64>(), budget in 0usize..200, sweeps in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_frozen_model(&mut rng, 3, 3, 5);
        let n = m.num_observations();
        let before = m.topics_allocated();
        refine(&mut m, budget, &mut rng);
        for _ in 0..sweeps {
            sweep(&mut m, &mut rng);
        }
        prop_assert!(m.check_consistency().is_ok());
        prop_assert_eq!(m.num_observations(), n);
        prop_assert!(m.topics_allocated() >= before);
    }
}
