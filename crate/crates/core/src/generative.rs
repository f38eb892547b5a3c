//! Random worlds and observation streams drawn from the generative model.
//!
//! A world is seeded cell by cell: each cell seats `customers_per_cell`
//! customers with the spatial CRP rule over the customers already seated in
//! that cell and its 2D neighbors, and takes the mode of its customers as
//! its label. Observations are then drawn per cell from the label's word
//! distribution at the cell center plus Gaussian position noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::model::{Hyperparameters, WordObservation};

pub type Covariance = [[f64; 3]; 3];

pub const ZERO_NOISE: Covariance = [[0.0; 3]; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisitOrder {
    /// Row by row, left to right.
    Raster,
    /// A seeded random permutation of the cells.
    #[default]
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    /// `alpha` and `gamma` drive the seating rule; `cell_size[0]` sets the
    /// world grid pitch.
    pub params: Hyperparameters,
    pub width: usize,
    pub height: usize,
    pub customers_per_cell: usize,
    /// Position measurement noise (m²). Used only when sampling
    /// observations.
    pub position_noise: Covariance,
    pub order: VisitOrder,
    pub seed: u64,
}

impl GenerativeConfig {
    /// 128×128 cells, five customers per cell, no position noise.
    pub fn new(params: Hyperparameters, seed: u64) -> Self {
        GenerativeConfig {
            params,
            width: 128,
            height: 128,
            customers_per_cell: 5,
            position_noise: ZERO_NOISE,
            order: VisitOrder::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("world must be at least 1x1"));
        }
        if self.customers_per_cell == 0 {
            return Err(Error::invalid("customers_per_cell must be >= 1"));
        }
        noise_factor(&self.position_noise)?;
        Ok(())
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = Σ`, tolerating zero pivots so
/// that singular (including all-zero) covariances are accepted.
#[allow(clippy::needless_range_loop)]
pub fn noise_factor(sigma: &Covariance) -> Result<Covariance> {
    const TOL: f64 = 1e-12;
    for r in 0..3 {
        for c in 0..3 {
            if !sigma[r][c].is_finite() {
                return Err(Error::invalid("position noise has non-finite entries"));
            }
            if (sigma[r][c] - sigma[c][r]).abs() > TOL * (1.0 + sigma[r][c].abs()) {
                return Err(Error::invalid("position noise covariance is not symmetric"));
            }
        }
    }
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut d = sigma[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -TOL * (1.0 + sigma[j][j].abs()) {
            return Err(Error::invalid("position noise covariance is not positive semidefinite"));
        }
        let d = d.max(0.0).sqrt();
        l[j][j] = d;
        for i in (j + 1)..3 {
            let mut s = sigma[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if d > 0.0 {
                l[i][j] = s / d;
            } else if s.abs() > TOL {
                return Err(Error::invalid("position noise covariance is not positive semidefinite"));
            }
        }
    }
    Ok(l)
}

/// Samples a world label grid. Labels are renumbered to `1..=K` in order of
/// first appearance in raster scan.
pub fn sample_world(cfg: &GenerativeConfig) -> Result<LabelGrid> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let alpha = cfg.params.alpha;
    let gamma = cfg.params.gamma;

    let mut order: Vec<usize> = (0..w * h).collect();
    if cfg.order == VisitOrder::Shuffled {
        order.shuffle(&mut rng);
    }

    // Sparse per-cell histograms of seated customers.
    let mut hists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); w * h];
    let mut topics = 0u32;
    let mut dense: Vec<u32> = vec![0];
    let mut weights: Vec<f64> = Vec::new();
    let mut modes = vec![0u32; w * h];

    for &cell in &order {
        let (col, row) = (cell % w, cell / w);
        let mut stencil = vec![cell];
        if col > 0 {
            stencil.push(cell - 1);
        }
        if col + 1 < w {
            stencil.push(cell + 1);
        }
        if row > 0 {
            stencil.push(cell - w);
        }
        if row + 1 < h {
            stencil.push(cell + w);
        }
        for &s in &stencil {
            for &(t, n) in &hists[s] {
                dense[t as usize] += n;
            }
        }
        for _ in 0..cfg.customers_per_cell {
            let topic = if topics == 0 {
                1
            } else {
                weights.clear();
                weights.extend((1..=topics).map(|t| dense[t as usize] as f64 + alpha));
                let total: f64 = weights.iter().sum::<f64>() + gamma;
                let mut u = rng.random::<f64>() * total;
                let mut pick = topics + 1;
                for (i, &wt) in weights.iter().enumerate() {
                    if u < wt {
                        pick = i as u32 + 1;
                        break;
                    }
                    u -= wt;
                }
                if pick > topics && gamma == 0.0 {
                    pick = topics;
                }
                pick
            };
            if topic > topics {
                topics = topic;
                dense.push(0);
            }
            dense[topic as usize] += 1;
            let hist = &mut hists[cell];
            match hist.binary_search_by_key(&topic, |&(t, _)| t) {
                Ok(p) => hist[p].1 += 1,
                Err(p) => hist.insert(p, (topic, 1)),
            }
        }
        for &s in &stencil {
            for &(t, _) in &hists[s] {
                dense[t as usize] = 0;
            }
        }
        let mut best = (0u32, 0u32);
        for &(t, n) in &hists[cell] {
            if n > best.1 {
                best = (t, n);
            }
        }
        modes[cell] = best.0;
    }

    let mut remap = vec![0u32; topics as usize + 1];
    let mut next = 0;
    let labels = modes
        .iter()
        .map(|&m| {
            if remap[m as usize] == 0 {
                next += 1;
                remap[m as usize] = next;
            }
            remap[m as usize]
        })
        .collect();
    LabelGrid::new(w, h, cfg.params.cell_size[0], labels)
}

/// Summary statistics of a label grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub topics: usize,
    /// 4-connected regions of equal label.
    pub patches: usize,
    pub mean_patch_size: f64,
}

pub fn summarize(grid: &LabelGrid) -> WorldSummary {
    let (w, h) = (grid.width, grid.height);
    let mut seen = vec![false; w * h];
    let mut patches = 0;
    let mut stack = Vec::new();
    let mut labeled = 0;
    for start in 0..w * h {
        if seen[start] || grid.labels[start] == 0 {
            continue;
        }
        patches += 1;
        let label = grid.labels[start];
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            labeled += 1;
            let (c, r) = (p % w, p / w);
            let mut visit = |q: usize| {
                if !seen[q] && grid.labels[q] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
        }
    }
    WorldSummary {
        topics: grid.distinct_labels(),
        patches,
        mean_patch_size: if patches == 0 {
            0.0
        } else {
            labeled as f64 / patches as f64
        },
    }
}

/// Where the per-topic word distributions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TopicSource {
    /// Draw each from a symmetric Dirichlet with this concentration.
    Dirichlet { beta: f64 },
    /// Use these rows; row `k - 1` belongs to world label `k`.
    Given(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    pub vocab_size: u32,
    pub words_per_cell: usize,
    pub topics: TopicSource,
    pub position_noise: Covariance,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationStream {
    pub observations: Vec<WordObservation>,
    /// `phi[k - 1]` is the word distribution of world label `k`.
    pub phi: Vec<Vec<f64>>,
}

/// Symmetric Dirichlet draw via normalized gammas.
pub fn sample_dirichlet<R: Rng + ?Sized>(beta: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(format!("beta: {e}")))?;
    let mut v: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        // Every gamma draw underflowed: the mass sits on one coordinate.
        let hot = rng.random_range(0..dim);
        v.iter_mut().enumerate().for_each(|(i, x)| *x = (i == hot) as u8 as f64);
    }
    Ok(v)
}

/// Emits `words_per_cell` words per world cell, in raster order, with
/// timestamp equal to the cell's raster index. Positions are the cell
/// center plus noise, clamped into the world's bounding box. Depth cells
/// span `[0, cell_size)`.
pub fn sample_observations(world: &LabelGrid, cfg: &ObservationConfig) -> Result<ObservationStream> {
    world.validate()?;
    if cfg.words_per_cell == 0 {
        return Err(Error::invalid("words_per_cell must be >= 1"));
    }
    if cfg.vocab_size == 0 {
        return Err(Error::invalid("vocabulary size must be >= 1"));
    }
    let factor = noise_factor(&cfg.position_noise)?;
    let noisy = factor.iter().flatten().any(|&v| v != 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = cfg.vocab_size as usize;
    let k_max = world.labels.iter().copied().max().unwrap_or(0) as usize;

    let phi = match &cfg.topics {
        TopicSource::Dirichlet { beta } => {
            if !(beta.is_finite() && *beta > 0.0) {
                return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
            }
            (0..k_max)
                .map(|_| sample_dirichlet(*beta, v, &mut rng))
                .collect::<Result<Vec<_>>>()?
        }
        TopicSource::Given(rows) => {
            if rows.len() < k_max {
                return Err(Error::invalid(format!(
                    "{} topic distributions given for {k_max} world labels",
                    rows.len()
                )));
            }
            if rows.iter().any(|r| r.len() != v) {
                return Err(Error::invalid("topic distribution length differs from vocabulary"));
            }
            rows.clone()
        }
    };
    let samplers = phi
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::invalid(format!("phi: {e}"))))
        .collect::<Result<Vec<_>>>()?;

    let cs = world.cell_size;
    let upper = |cells: usize| -> f64 { next_down(cells as f64 * cs) };
    let lo = [world.origin[0] as f64 * cs, world.origin[1] as f64 * cs, 0.0];
    let hi = [
        lo[0] + upper(world.width),
        lo[1] + upper(world.height),
        next_down(cs),
    ];

    let mut observations = Vec::with_capacity(world.labels.len() * cfg.words_per_cell);
    for (idx, &label) in world.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let col = (idx % world.width) as i64 + world.origin[0];
        let row = (idx / world.width) as i64 + world.origin[1];
        let center = [(col as f64 + 0.5) * cs, (row as f64 + 0.5) * cs, 0.5 * cs];
        for _ in 0..cfg.words_per_cell {
            let word = samplers[label as usize - 1].sample(&mut rng) as u32;
            let mut pos = center;
            if noisy {
                let z: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                for r in 0..3 {
                    let offset: f64 = (0..3).map(|c| factor[r][c] * z[c]).sum();
                    pos[r] = (center[r] + offset).clamp(lo[r], hi[r]);
                }
            }
            observations.push(WordObservation::new(idx as f64, word, pos));
        }
    }
    Ok(ObservationStream { observations, phi })
}

/// Largest double strictly below a positive `x`.
fn next_down(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    f64::from_bits(x.to_bits() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cell_of;

    fn cfg(alpha: f64, gamma: f64, seed: u64) -> GenerativeConfig {
        let mut c = GenerativeConfig::new(Hyperparameters::new(alpha, 1.0, gamma, 1.0, 10).unwrap(), seed);
        c.width = 24;
        c.height = 20;
        c
    }

    #[test]
    fn zero_gamma_gives_one_topic() {
        for order in [VisitOrder::Raster, VisitOrder::Shuffled] {
            let mut c = cfg(0.1, 0.0, 4);
            c.order = order;
            let world = sample_world(&c).unwrap();
            assert!(world.labels.iter().all(|&l| l == 1));
        }
    }

    #[test]
    fn worlds_are_deterministic_with_contiguous_labels() {
        let mut c = cfg(0.01, 0.05, 9);
        c.order = VisitOrder::Shuffled;
        let a = sample_world(&c).unwrap();
        let b = sample_world(&c).unwrap();
        assert_eq!(a, b);
        let k = a.labels.iter().copied().max().unwrap();
        assert!(k > 1);
        for label in 1..=k {
            assert!(a.labels.contains(&label));
        }
        assert!(!a.labels.contains(&0));
    }

    #[test]
    fn zero_noise_positions_are_cell_centers() {
        let world = LabelGrid::new(3, 2, 0.5, vec![1, 2, 1, 2, 2, 1]).unwrap();
        let oc = ObservationConfig {
            vocab_size: 4,
            words_per_cell: 3,
            topics: TopicSource::Dirichlet { beta: 0.5 },
            position_noise: ZERO_NOISE,
            seed: 1,
        };
        let stream = sample_observations(&world, &oc).unwrap();
        assert_eq!(stream.observations.len(), 18);
        assert_eq!(stream.phi.len(), 2);
        let params = Hyperparameters::new(1.0, 1.0, 1.0, 0.5, 4).unwrap();
        for (n, o) in stream.observations.iter().enumerate() {
            let idx = n / 3;
            let (col, row) = (idx % 3, idx / 3);
            assert_eq!(o.pos, [(col as f64 + 0.5) * 0.5, (row as f64 + 0.5) * 0.5, 0.25]);
            let c = cell_of(o.pos, &params).unwrap();
            assert_eq!((c.i, c.j, c.k), (col as i64, row as i64, 0));
        }
    }

    #[test]
    fn noisy_positions_stay_inside_world() {
        let world = LabelGrid::filled(4, 4, 1.0, 1);
        let oc = ObservationConfig {
            vocab_size: 4,
            words_per_cell: 50,
            topics: TopicSource::Dirichlet { beta: 1.0 },
            position_noise: [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]],
            seed: 2,
        };
        let stream = sample_observations(&world, &oc).unwrap();
        for o in &stream.observations {
            assert!((0.0..4.0).contains(&o.pos[0]));
            assert!((0.0..4.0).contains(&o.pos[1]));
            assert!((0.0..1.0).contains(&o.pos[2]));
        }
    }

    #[test]
    fn covariance_validation() {
        assert!(noise_factor(&ZERO_NOISE).is_ok());
        let l = noise_factor(&[[4.0, 2.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(l[0][0], 2.0);
        assert_eq!(l[1][0], 1.0);
        assert_eq!(l[1][1], 1.0);
        assert!(noise_factor(&[[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(noise_factor(&[[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn summary_counts_patches() {
        let grid = LabelGrid::new(3, 2, 1.0, vec![1, 1, 2, 2, 1, 2]).unwrap();
        let s = summarize(&grid);
        assert_eq!(s.topics, 2);
        assert_eq!(s.patches, 3);
        assert_eq!(s.mean_patch_size, 2.0);
    }

    #[test]
    fn dirichlet_draws_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for beta in [1e-3, 0.1, 10.0] {
            let v = sample_dirichlet(beta, 20, &mut rng).unwrap();
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
