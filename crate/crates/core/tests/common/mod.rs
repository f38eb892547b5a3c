#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use scenemap::{CellCoord, Hyperparameters, Neighborhood, SceneModel, TopicId, WordId};

/// A small model with arbitrary labels: at most `side`×`side`×1 cells, up
/// to `k_max` topics and `v_max` words.
pub fn random_frozen_model<R: Rng>(rng: &mut R, side: i64, k_max: u32, v_max: u32) -> SceneModel {
    let v = rng.random_range(1..=v_max);
    let gamma = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.01..1.0) };
    let params = Hyperparameters::new(
        rng.random_range(0.05..3.0),
        rng.random_range(0.05..2.0),
        gamma,
        1.0,
        v,
    )
    .unwrap()
    .with_neighborhood(if rng.random_bool(0.5) {
        Neighborhood::VonNeumann3D
    } else {
        Neighborhood::VonNeumann2D
    });
    let mut m = SceneModel::new(params).unwrap();
    let k = rng.random_range(1..=k_max);
    let topics: Vec<TopicId> = (0..k).map(|_| m.allocate_topic()).collect();
    loop {
        for i in 0..side {
            for j in 0..side {
                if rng.random_bool(0.4) {
                    continue;
                }
                let c = CellCoord::new(i, j, 0);
                for _ in 0..rng.random_range(1..=5) {
                    let t = topics[rng.random_range(0..topics.len())];
                    m.push_labeled(c, rng.random_range(0..v), t).unwrap();
                }
            }
        }
        if m.num_observations() > 0 {
            return m;
        }
    }
}

/// Conditional seating weights recomputed from the raw cell contents.
/// Returns `(topic, weight)` pairs in ascending topic order and the
/// new-topic weight.
pub fn oracle_weights(
    m: &SceneModel,
    c: CellCoord,
    word: WordId,
    exclude: Option<usize>,
) -> (Vec<(TopicId, f64)>, f64) {
    let p = m.params();
    let excluded = |coord: CellCoord, idx: usize| coord == c && Some(idx) == exclude;
    let adjacent = |d: CellCoord| -> bool {
        let (di, dj, dk) = ((d.i - c.i).abs(), (d.j - c.j).abs(), (d.k - c.k).abs());
        let manhattan = di + dj + dk;
        match p.neighborhood {
            Neighborhood::VonNeumann3D => manhattan <= 1,
            Neighborhood::VonNeumann2D => dk == 0 && manhattan <= 1,
        }
    };
    let mut total: BTreeMap<TopicId, u64> = BTreeMap::new();
    let mut count: HashMap<(TopicId, WordId), u64> = HashMap::new();
    let mut neigh: HashMap<TopicId, u64> = HashMap::new();
    for cell in m.cells() {
        for (idx, (&w, &t)) in cell.words().iter().zip(cell.labels()).enumerate() {
            if excluded(cell.coord, idx) {
                continue;
            }
            *total.entry(t).or_default() += 1;
            *count.entry((t, w)).or_default() += 1;
            if adjacent(cell.coord) {
                *neigh.entry(t).or_default() += 1;
            }
        }
    }
    let v = p.vocab_size as f64;
    let weights: Vec<(TopicId, f64)> = total
        .iter()
        .map(|(&t, &tot)| {
            let n = *neigh.get(&t).unwrap_or(&0) as f64;
            let cw = *count.get(&(t, word)).unwrap_or(&0) as f64;
            (t, (n + p.alpha) * (cw + p.beta) / (tot as f64 + v * p.beta))
        })
        .collect();
    let new = if weights.is_empty() && p.gamma == 0.0 { 1.0 / v } else { p.gamma / v };
    (weights, new)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Ranks with ties averaged, 1-based.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let blocks = prefix.iter().copied().max().map_or(0, |m| m + 1);
        for b in 0..=blocks {
            prefix.push(b);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

/// Relabels blocks by order of first appearance.
pub fn canonical(labels: &[TopicId]) -> Vec<usize> {
    let mut seen: HashMap<TopicId, usize> = HashMap::new();
    labels
        .iter()
        .map(|t| {
            let next = seen.len();
            *seen.entry(*t).or_insert(next)
        })
        .collect()
}
