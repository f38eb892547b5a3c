//! Streaming collapsed Gibbs sampler for the spatially correlated CRP.
//!
//! An observation of word `w` in cell `c` joins known topic `k` with weight
//!
//! ```text
//! (n_k + alpha) * (count(k, w) + beta) / (total(k) + V * beta)
//! ```
//!
//! where `n_k` is the number of observations labeled `k` in `c` and its Von
//! Neumann neighbors, and opens a new topic with weight `gamma / V`. Every
//! topic with a nonzero global total is a candidate, even when absent from
//! the neighborhood.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_of, Cell, CellCoord, Hyperparameters, SceneModel, TopicId, WordId, WordObservation};

/// The sampler's random number generator. Seedable, and splittable into
/// independent streams via [`worker_rng`].
pub type SamplerRng = ChaCha8Rng;

/// Independent stream `worker` of the generator seeded with `seed`.
pub fn worker_rng(seed: u64, worker: u64) -> SamplerRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

/// Unnormalized conditional weights over the candidate topics plus a new one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeatingWeights {
    /// Candidate topics, ascending.
    pub topics: Vec<TopicId>,
    /// `weights[i]` belongs to `topics[i]`.
    pub weights: Vec<f64>,
    pub new_topic: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Seat {
    Existing(TopicId),
    New,
}

impl SeatingWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.new_topic
    }

    /// Normalized probabilities in the order of `topics`, then the new topic.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        self.weights
            .iter()
            .chain(std::iter::once(&self.new_topic))
            .map(|w| w / total)
            .collect()
    }

    pub fn weight_of(&self, topic: TopicId) -> Option<f64> {
        self.topics
            .binary_search(&topic)
            .ok()
            .map(|i| self.weights[i])
    }

    /// Draws a seat by inverse-CDF over the unnormalized weights.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Seat {
        let total = self.total();
        let mut u = rng.random::<f64>() * total;
        for (&t, &w) in self.topics.iter().zip(&self.weights) {
            if u < w {
                return Seat::Existing(t);
            }
            u -= w;
        }
        if self.new_topic > 0.0 || self.topics.is_empty() {
            Seat::New
        } else {
            // Rounding left u just past the last bucket.
            Seat::Existing(*self.topics.last().unwrap())
        }
    }

    fn clear(&mut self) {
        self.topics.clear();
        self.weights.clear();
        self.new_topic = 0.0;
    }
}

/// Read access to global topic statistics.
pub(crate) trait TopicCounts {
    /// Topics that may hold observations, ascending.
    fn candidates(&self) -> impl Iterator<Item = TopicId> + '_;
    fn word_count(&self, topic: TopicId, word: WordId) -> u32;
    fn total(&self, topic: TopicId) -> u32;
}

impl TopicCounts for SceneModel {
    fn candidates(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.active_topics().iter().copied()
    }

    fn word_count(&self, topic: TopicId, word: WordId) -> u32 {
        self.topic_word_count(topic, word)
    }

    fn total(&self, topic: TopicId) -> u32 {
        self.topic_total(topic)
    }
}

/// Fills `out` with the full conditional for `word`. `neigh[t]` holds the
/// stencil count of topic `t`. `exclude` names the `(topic, word)` of an
/// observation inside the stencil's center cell that must be left out.
pub(crate) fn fill_weights<C: TopicCounts>(
    params: &Hyperparameters,
    counts: &C,
    neigh: &[u32],
    word: WordId,
    exclude: Option<(TopicId, WordId)>,
    out: &mut SeatingWeights,
) {
    out.clear();
    let v = params.vocab_size as f64;
    let vbeta = v * params.beta;
    for t in counts.candidates() {
        let mut total = counts.total(t);
        if total == 0 {
            continue;
        }
        let mut n = neigh.get(t as usize).copied().unwrap_or(0);
        let mut cw = counts.word_count(t, word);
        if let Some((zt, zw)) = exclude {
            if zt == t {
                total -= 1;
                n -= 1;
                if zw == word {
                    cw -= 1;
                }
            }
        }
        if total == 0 {
            continue;
        }
        let weight = (n as f64 + params.alpha) * (cw as f64 + params.beta) / (total as f64 + vbeta);
        out.topics.push(t);
        out.weights.push(weight);
    }
    out.new_topic = if out.topics.is_empty() && params.gamma == 0.0 {
        // Forced first table.
        1.0 / v
    } else {
        params.gamma / v
    };
}

/// Conditional seating weights for word `word` arriving in cell `c`.
///
/// With `exclude = Some(i)`, observation `i` of cell `c` is removed from
/// every count first (leave-one-out).
pub fn seating_weights(
    m: &SceneModel,
    c: CellCoord,
    word: WordId,
    exclude: Option<usize>,
) -> Result<SeatingWeights> {
    if word >= m.params().vocab_size {
        return Err(Error::invalid(format!(
            "word id {word} outside vocabulary of size {}",
            m.params().vocab_size
        )));
    }
    let excluded = match exclude {
        None => None,
        Some(i) => {
            let cell = m
                .cell(c)
                .ok_or_else(|| Error::invalid(format!("cell {c:?} does not exist")))?;
            if i >= cell.len() {
                return Err(Error::invalid(format!(
                    "observation {i} out of range for cell with {}",
                    cell.len()
                )));
            }
            Some((cell.labels()[i], cell.words()[i]))
        }
    };
    let mut dense = vec![0u32; m.next_topic_id() as usize];
    m.accumulate_neighborhood(c, &mut dense);
    let mut out = SeatingWeights::default();
    fill_weights(m.params(), m, &dense, word, excluded, &mut out);
    Ok(out)
}

/// Seats a new observation, allocating a fresh topic id when a new table
/// is drawn. Returns the assigned topic.
pub fn insert_observation<R: Rng + ?Sized>(
    m: &mut SceneModel,
    obs: &WordObservation,
    rng: &mut R,
) -> Result<TopicId> {
    obs.validate(m.params())?;
    let coord = cell_of(obs.pos, m.params())?;
    let weights = seating_weights(m, coord, obs.word, None)?;
    let topic = match weights.sample(rng) {
        Seat::Existing(t) => t,
        Seat::New => m.allocate_topic(),
    };
    m.push_labeled(coord, obs.word, topic)?;
    Ok(topic)
}

/// Resamples one cell in place; `dense` must hold the stencil counts of the
/// cell and is kept in sync.
fn resample_in_place<C, R, F>(
    params: &Hyperparameters,
    counts: &mut C,
    cell: &Cell,
    dense: &mut Vec<u32>,
    weights: &mut SeatingWeights,
    rng: &mut R,
    mut apply: F,
) -> usize
where
    C: TopicCounts + LabelSink,
    R: Rng + ?Sized,
    F: FnMut(&mut C, usize, TopicId),
{
    let mut changed = 0;
    for obs in 0..cell.len() {
        let word = cell.words()[obs];
        let old = counts.current_label(cell, obs);
        fill_weights(params, &*counts, dense, word, Some((old, word)), weights);
        let new = match weights.sample(rng) {
            Seat::Existing(t) => t,
            // A singleton reopening a table keeps its id.
            Seat::New if counts.total(old) == 1 => old,
            Seat::New => {
                let t = counts.new_topic();
                if dense.len() <= t as usize {
                    dense.resize(t as usize + 1, 0);
                }
                t
            }
        };
        if new != old {
            apply(counts, obs, new);
            dense[old as usize] -= 1;
            dense[new as usize] += 1;
            changed += 1;
        }
    }
    changed
}

/// Mutation hooks shared by the sequential and worker paths.
trait LabelSink {
    fn current_label(&self, cell: &Cell, obs: usize) -> TopicId;
    fn new_topic(&mut self) -> TopicId;
}

/// Sequential view over a model while one of its cells is resampled.
struct SequentialView<'a> {
    model: &'a mut SceneModel,
    cell: usize,
}

impl TopicCounts for SequentialView<'_> {
    fn candidates(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.model.active_topics().iter().copied()
    }

    fn word_count(&self, topic: TopicId, word: WordId) -> u32 {
        self.model.topic_word_count(topic, word)
    }

    fn total(&self, topic: TopicId) -> u32 {
        self.model.topic_total(topic)
    }
}

impl LabelSink for SequentialView<'_> {
    fn current_label(&self, _cell: &Cell, obs: usize) -> TopicId {
        self.model.cells()[self.cell].labels()[obs]
    }

    fn new_topic(&mut self) -> TopicId {
        self.model.allocate_topic()
    }
}

/// Reusable buffers for repeated cell resampling.
#[derive(Default)]
struct Scratch {
    dense: Vec<u32>,
    weights: SeatingWeights,
}

fn resample_index<R: Rng + ?Sized>(m: &mut SceneModel, idx: usize, rng: &mut R, scratch: &mut Scratch) -> usize {
    if m.cells()[idx].is_empty() {
        return 0;
    }
    let coord = m.cells()[idx].coord;
    scratch.dense.clear();
    scratch.dense.resize(m.next_topic_id() as usize, 0);
    m.accumulate_neighborhood(coord, &mut scratch.dense);
    // Words never change during resampling, so a snapshot of the cell's
    // words is enough to drive the loop; labels are read live.
    let snapshot = m.cells()[idx].clone();
    let params = m.params().clone();
    let mut view = SequentialView { model: m, cell: idx };
    resample_in_place(
        &params,
        &mut view,
        &snapshot,
        &mut scratch.dense,
        &mut scratch.weights,
        rng,
        |v, obs, topic| v.model.relabel(v.cell, obs, topic),
    )
}

/// Relabels every observation of cell `c` in order, each drawn from its
/// leave-one-out conditional. Returns how many labels changed; unknown
/// cells are a no-op.
pub fn resample_cell<R: Rng + ?Sized>(m: &mut SceneModel, c: CellCoord, rng: &mut R) -> usize {
    match m.cell_index(c) {
        Some(idx) => resample_index(m, idx, rng, &mut Scratch::default()),
        None => 0,
    }
}

/// Telemetry for a refinement pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineStats {
    pub visits: usize,
    pub changes: usize,
    /// Active topics after the pass.
    pub topics: usize,
    pub observations: usize,
}

impl RefineStats {
    fn finish(mut self, m: &SceneModel) -> Self {
        self.topics = m.num_topics();
        self.observations = m.num_observations();
        self
    }
}

/// Probability that a refinement visit targets a recently touched cell
/// instead of a uniformly chosen one.
pub const RECENT_VISIT_FRACTION: f64 = 0.5;

fn pick_cell<R: Rng + ?Sized>(m: &SceneModel, rng: &mut R) -> usize {
    let recent = m.recent_cells().len();
    if recent > 0 && rng.random::<f64>() < RECENT_VISIT_FRACTION {
        let r = rng.random_range(0..recent);
        m.recent_cells().nth(r).unwrap()
    } else {
        rng.random_range(0..m.num_cells())
    }
}

/// Resamples `budget` cells, each chosen half the time uniformly over all
/// cells and half the time among the most recently touched ones.
pub fn refine<R: Rng + ?Sized>(m: &mut SceneModel, budget: usize, rng: &mut R) -> RefineStats {
    let mut stats = RefineStats::default();
    if m.num_cells() == 0 {
        return stats.finish(m);
    }
    let mut scratch = Scratch::default();
    for _ in 0..budget {
        let idx = pick_cell(m, rng);
        stats.changes += resample_index(m, idx, rng, &mut scratch);
        stats.visits += 1;
    }
    stats.finish(m)
}

/// Resamples every cell once, in store order.
pub fn sweep<R: Rng + ?Sized>(m: &mut SceneModel, rng: &mut R) -> RefineStats {
    let mut stats = RefineStats::default();
    let mut scratch = Scratch::default();
    for idx in 0..m.num_cells() {
        stats.changes += resample_index(m, idx, rng, &mut scratch);
        stats.visits += 1;
    }
    stats.finish(m)
}

/// Parallel counterpart of [`refine`] with `workers` threads.
///
/// Visits are split by cell parity; cells of one parity are never
/// neighbors, so each phase resamples them concurrently with exact
/// neighborhood counts. Global topic-word counts seen by a worker are the
/// phase-start table plus its own updates; other workers' in-flight changes
/// are merged at the end of the phase. Chunking and per-chunk streams are
/// fixed by `(rng, workers)`, so results are reproducible for a given
/// worker count.
pub fn refine_parallel<R: Rng + ?Sized>(
    m: &mut SceneModel,
    budget: usize,
    workers: usize,
    rng: &mut R,
) -> RefineStats {
    if workers <= 1 {
        return refine(m, budget, rng);
    }
    let mut stats = RefineStats::default();
    if m.num_cells() == 0 || budget == 0 {
        return stats.finish(m);
    }
    let visits: Vec<usize> = (0..budget).map(|_| pick_cell(m, rng)).collect();
    let phase_seed = rng.random::<u64>();
    stats.changes = parallel_visits(m, &visits, workers, phase_seed);
    stats.visits = budget;
    stats.finish(m)
}

/// Parallel counterpart of [`sweep`].
pub fn sweep_parallel<R: Rng + ?Sized>(m: &mut SceneModel, workers: usize, rng: &mut R) -> RefineStats {
    if workers <= 1 {
        return sweep(m, rng);
    }
    let visits: Vec<usize> = (0..m.num_cells()).collect();
    let phase_seed = rng.random::<u64>();
    let mut stats = RefineStats {
        changes: parallel_visits(m, &visits, workers, phase_seed),
        visits: visits.len(),
        ..Default::default()
    };
    stats = stats.finish(m);
    stats
}

/// How much refinement accompanies streamed ingestion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Refinement visits after each run of observations from one cell.
    pub refine_per_cell: usize,
    /// Full sweeps once the stream is exhausted.
    pub final_sweeps: usize,
    pub workers: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            refine_per_cell: 32,
            final_sweeps: 0,
            workers: 1,
        }
    }
}

/// Ingests `observations` in order into a fresh model, refining as the
/// schedule prescribes. All randomness comes from `seed`.
pub fn run_stream(
    params: &Hyperparameters,
    observations: &[WordObservation],
    schedule: &Schedule,
    seed: u64,
) -> Result<SceneModel> {
    params.validate()?;
    let mut m = SceneModel::new(params.clone())?;
    let mut rng = worker_rng(seed, 0);
    let mut current: Option<CellCoord> = None;
    for obs in observations {
        let coord = cell_of(obs.pos, params)?;
        if current.is_some_and(|c| c != coord) {
            refine_parallel(&mut m, schedule.refine_per_cell, schedule.workers, &mut rng);
        }
        current = Some(coord);
        insert_observation(&mut m, obs, &mut rng)?;
    }
    if current.is_some() {
        refine_parallel(&mut m, schedule.refine_per_cell, schedule.workers, &mut rng);
    }
    for _ in 0..schedule.final_sweeps {
        sweep_parallel(&mut m, schedule.workers, &mut rng);
    }
    Ok(m)
}

/// A worker's private view: phase-start model plus local deltas.
struct WorkerView<'a> {
    model: &'a SceneModel,
    /// First provisional id reserved for this worker.
    base: TopicId,
    created: Vec<TopicId>,
    word_delta: HashMap<(TopicId, WordId), i64>,
    total_delta: Vec<i64>,
    /// Current labels of the cell being resampled.
    labels: Vec<TopicId>,
}

impl WorkerView<'_> {
    fn total_of(&self, t: TopicId) -> i64 {
        self.model.topic_total(t) as i64 + self.total_delta.get(t as usize).copied().unwrap_or(0)
    }

    fn move_label(&mut self, word: WordId, from: TopicId, to: TopicId) {
        *self.word_delta.entry((from, word)).or_insert(0) -= 1;
        *self.word_delta.entry((to, word)).or_insert(0) += 1;
        let need = from.max(to) as usize + 1;
        if self.total_delta.len() < need {
            self.total_delta.resize(need, 0);
        }
        self.total_delta[from as usize] -= 1;
        self.total_delta[to as usize] += 1;
    }
}

impl TopicCounts for WorkerView<'_> {
    fn candidates(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.model
            .active_topics()
            .iter()
            .copied()
            .chain(self.created.iter().copied())
    }

    fn word_count(&self, topic: TopicId, word: WordId) -> u32 {
        let base = self.model.topic_word_count(topic, word) as i64;
        (base + self.word_delta.get(&(topic, word)).copied().unwrap_or(0)) as u32
    }

    fn total(&self, topic: TopicId) -> u32 {
        self.total_of(topic) as u32
    }
}

impl LabelSink for WorkerView<'_> {
    fn current_label(&self, _cell: &Cell, obs: usize) -> TopicId {
        self.labels[obs]
    }

    fn new_topic(&mut self) -> TopicId {
        let t = self.base + self.created.len() as TopicId;
        self.created.push(t);
        t
    }
}

struct WorkItem {
    cell: usize,
    repeats: usize,
    /// Histograms of the cell's neighbors, fixed for the phase.
    external: Vec<(TopicId, u32)>,
}

struct WorkerResult {
    cells: Vec<Cell>,
    created: Vec<TopicId>,
    word_delta: HashMap<(TopicId, WordId), i64>,
    changes: usize,
}

fn run_worker(
    model: &SceneModel,
    items: &[WorkItem],
    mut cells: Vec<Cell>,
    base: TopicId,
    id_space: usize,
    mut rng: SamplerRng,
) -> WorkerResult {
    let params = model.params().clone();
    let mut view = WorkerView {
        model,
        base,
        created: Vec::new(),
        word_delta: HashMap::new(),
        total_delta: vec![0; id_space],
        labels: Vec::new(),
    };
    let mut dense = vec![0u32; id_space];
    let mut weights = SeatingWeights::default();
    let mut changes = 0;
    for (item, cell) in items.iter().zip(cells.iter_mut()) {
        for _ in 0..item.repeats {
            for &(t, n) in &item.external {
                dense[t as usize] += n;
            }
            for &(t, n) in cell.topic_hist() {
                dense[t as usize] += n;
            }
            view.labels.clear();
            view.labels.extend_from_slice(cell.labels());
            let snapshot = cell.clone();
            changes += resample_in_place(
                &params,
                &mut view,
                &snapshot,
                &mut dense,
                &mut weights,
                &mut rng,
                |v, obs, topic| {
                    let word = snapshot.words()[obs];
                    let old = v.labels[obs];
                    v.move_label(word, old, topic);
                    v.labels[obs] = topic;
                },
            );
            for (obs, &t) in view.labels.iter().enumerate() {
                if cell.labels()[obs] != t {
                    cell.relabel(obs, t);
                }
            }
            for &(t, _) in &item.external {
                dense[t as usize] = 0;
            }
            for &(t, _) in cell.topic_hist() {
                dense[t as usize] = 0;
            }
            for &t in snapshot.labels() {
                dense[t as usize] = 0;
            }
        }
    }
    WorkerResult {
        cells,
        created: view.created,
        word_delta: view.word_delta,
        changes,
    }
}

fn parallel_visits(m: &mut SceneModel, visits: &[usize], workers: usize, phase_seed: u64) -> usize {
    let mut changes = 0;
    for (phase, parity) in [0u8, 1].into_iter().enumerate() {
        // Group repeated visits to the same cell, keeping first-visit order.
        let mut order: Vec<usize> = Vec::new();
        let mut repeats: HashMap<usize, usize> = HashMap::new();
        for &idx in visits {
            if m.cells()[idx].coord.parity() != parity || m.cells()[idx].is_empty() {
                continue;
            }
            let r = repeats.entry(idx).or_insert(0);
            if *r == 0 {
                order.push(idx);
            }
            *r += 1;
        }
        if order.is_empty() {
            continue;
        }
        let items: Vec<WorkItem> = order
            .iter()
            .map(|&idx| {
                let mut external = Vec::new();
                m.accumulate_neighbors_only(m.cells()[idx].coord, &mut external);
                WorkItem {
                    cell: idx,
                    repeats: repeats[&idx],
                    external,
                }
            })
            .collect();
        let chunk_len = items.len().div_ceil(workers);
        let chunks: Vec<&[WorkItem]> = items.chunks(chunk_len).collect();

        // Each chunk reserves one provisional id per observation visit.
        let mut bases = Vec::with_capacity(chunks.len());
        let mut next = m.next_topic_id();
        for chunk in &chunks {
            bases.push(next);
            let need: usize = chunk
                .iter()
                .map(|it| m.cells()[it.cell].len() * it.repeats)
                .sum();
            next += need as TopicId;
        }
        let id_space = next as usize;

        let owned: Vec<Vec<Cell>> = chunks
            .iter()
            .map(|chunk| {
                let idxs: Vec<usize> = chunk.iter().map(|it| it.cell).collect();
                m.take_cells(&idxs)
            })
            .collect();

        let model: &SceneModel = m;
        let results: Vec<WorkerResult> = chunks
            .par_iter()
            .zip(owned.into_par_iter())
            .enumerate()
            .map(|(ci, (chunk, cells))| {
                let rng = worker_rng(phase_seed, (phase * workers + ci) as u64);
                run_worker(model, chunk, cells, bases[ci], id_space, rng)
            })
            .collect();

        let mut merged: HashMap<(TopicId, WordId), i64> = HashMap::new();
        for (chunk, result) in chunks.iter().zip(results) {
            changes += result.changes;
            // Resolve provisional ids that still hold observations.
            let mut net: HashMap<TopicId, i64> = HashMap::new();
            for (&(t, _), &d) in &result.word_delta {
                *net.entry(t).or_insert(0) += d;
            }
            let mut remap: HashMap<TopicId, TopicId> = HashMap::new();
            for &t in &result.created {
                if net.get(&t).copied().unwrap_or(0) > 0 {
                    remap.insert(t, m.allocate_topic());
                }
            }
            for (&(t, w), &d) in &result.word_delta {
                if d != 0 {
                    let real = remap.get(&t).copied().unwrap_or(t);
                    *merged.entry((real, w)).or_insert(0) += d;
                }
            }
            let mut cells = result.cells;
            for cell in &mut cells {
                cell.map_topics(|t| remap.get(&t).copied().unwrap_or(t));
            }
            let idxs: Vec<usize> = chunk.iter().map(|it| it.cell).collect();
            m.restore_cells(&idxs, cells);
        }
        m.apply_count_deltas(&merged);
    }
    changes
}

/// MAP label of a cell: the most frequent current label, ties to the lowest
/// topic id. `None` for absent or empty cells.
pub fn map_topic_of_cell(m: &SceneModel, c: CellCoord) -> Option<TopicId> {
    m.cell(c).and_then(mode_of_cell)
}

pub(crate) fn mode_of_cell(cell: &Cell) -> Option<TopicId> {
    let mut best: Option<(TopicId, u32)> = None;
    for &(t, n) in cell.topic_hist() {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((t, n));
        }
    }
    best.map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Neighborhood;
    use approx::assert_relative_eq;

    fn model(alpha: f64, beta: f64, gamma: f64, v: u32) -> SceneModel {
        SceneModel::new(Hyperparameters::new(alpha, beta, gamma, 1.0, v).unwrap()).unwrap()
    }

    #[test]
    fn prior_only_probabilities() {
        // One word in the vocabulary makes every likelihood factor equal.
        let mut m = model(0.1, 1.0, 0.01, 1);
        let k1 = m.allocate_topic();
        let k2 = m.allocate_topic();
        let c = CellCoord::new(0, 0, 0);
        for _ in 0..3 {
            m.push_labeled(c, 0, k1).unwrap();
        }
        m.push_labeled(c, 0, k2).unwrap();
        let w = seating_weights(&m, c, 0, None).unwrap();
        // Likelihood factors: k1 (3+1)/(3+1) = 1, k2 (1+1)/(1+1) = 1.
        assert_relative_eq!(w.weights[0], 3.1, epsilon = 1e-12);
        assert_relative_eq!(w.weights[1], 1.1, epsilon = 1e-12);
        assert_relative_eq!(w.new_topic, 0.01, epsilon = 1e-12);
        let p = w.probabilities();
        assert!((p[0] - 0.7363).abs() < 5e-5);
        assert!((p[1] - 0.2613).abs() < 5e-5);
        assert!((p[2] - 0.0024).abs() < 5e-5);
    }

    #[test]
    fn full_conditional_matches_hand_computation() {
        // V=4, beta=0.5, alpha=0.1, gamma=0.1; n = {k1:2, k2:1};
        // count(k1,w)=5, total(k1)=10; count(k2,w)=0, total(k2)=4.
        let mut m = model(0.1, 0.5, 0.1, 4);
        let k1 = m.allocate_topic();
        let k2 = m.allocate_topic();
        let c = CellCoord::new(0, 0, 0);
        let far = CellCoord::new(10, 10, 10);
        let w = 0;
        // In-stencil: two k1 observations of word w, one k2 of word 1.
        m.push_labeled(c, w, k1).unwrap();
        m.push_labeled(CellCoord::new(1, 0, 0), w, k1).unwrap();
        m.push_labeled(c, 1, k2).unwrap();
        // Out of stencil: remaining mass.
        for _ in 0..3 {
            m.push_labeled(far, w, k1).unwrap();
        }
        for _ in 0..5 {
            m.push_labeled(far, 2, k1).unwrap();
        }
        for _ in 0..3 {
            m.push_labeled(far, 3, k2).unwrap();
        }
        assert_eq!(m.topic_word_count(k1, w), 5);
        assert_eq!(m.topic_total(k1), 10);
        assert_eq!(m.topic_word_count(k2, w), 0);
        assert_eq!(m.topic_total(k2), 4);
        let sw = seating_weights(&m, c, w, None).unwrap();
        assert_relative_eq!(sw.weights[0], 0.9625, max_relative = 1e-12);
        assert_relative_eq!(sw.weights[1], 1.1 * (0.5 / 6.0), max_relative = 1e-12);
        assert!((sw.weights[1] - 0.09167).abs() < 1e-5);
        assert_relative_eq!(sw.new_topic, 0.025, max_relative = 1e-12);
    }

    #[test]
    fn empty_model_forces_first_table() {
        for gamma in [0.0, 0.3] {
            let m = model(0.1, 0.5, gamma, 4);
            let w = seating_weights(&m, CellCoord::new(0, 0, 0), 2, None).unwrap();
            assert!(w.topics.is_empty());
            assert!(w.new_topic > 0.0);
            let mut m = m;
            let mut rng = worker_rng(1, 0);
            let obs = WordObservation::new(0.0, 2, [0.5, 0.5, 0.5]);
            assert_eq!(insert_observation(&mut m, &obs, &mut rng).unwrap(), 1);
            assert_eq!(m.num_topics(), 1);
        }
    }

    #[test]
    fn rejects_out_of_vocabulary_words() {
        let mut m = model(0.1, 0.5, 0.1, 4);
        assert!(seating_weights(&m, CellCoord::new(0, 0, 0), 4, None).is_err());
        let mut rng = worker_rng(1, 0);
        let obs = WordObservation::new(0.0, 9, [0.0; 3]);
        assert!(insert_observation(&mut m, &obs, &mut rng).is_err());
        let bad = WordObservation::new(0.0, 1, [f64::NAN, 0.0, 0.0]);
        assert!(insert_observation(&mut m, &bad, &mut rng).is_err());
        assert_eq!(m.num_observations(), 0);
    }

    #[test]
    fn zero_gamma_never_opens_second_topic() {
        let mut m = model(0.5, 0.5, 0.0, 6);
        let mut rng = worker_rng(3, 0);
        for n in 0..500 {
            let obs = WordObservation::new(n as f64, n % 6, [(n % 7) as f64, (n % 5) as f64, 0.0]);
            assert_eq!(insert_observation(&mut m, &obs, &mut rng).unwrap(), 1);
        }
        refine(&mut m, 200, &mut rng);
        assert_eq!(m.topics_allocated(), 1);
    }

    #[test]
    fn resample_edge_cases() {
        let mut m = model(0.5, 0.5, 0.0, 3);
        let mut rng = worker_rng(9, 0);
        assert_eq!(resample_cell(&mut m, CellCoord::new(0, 0, 0), &mut rng), 0);
        let t = m.allocate_topic();
        for w in [0, 1, 2, 2] {
            m.push_labeled(CellCoord::new(0, 0, 0), w, t).unwrap();
        }
        for _ in 0..100 {
            assert_eq!(resample_cell(&mut m, CellCoord::new(0, 0, 0), &mut rng), 0);
        }
        // A lone observation keeps its id even though it reopens a table.
        let mut lone = model(0.5, 0.5, 0.0, 3);
        let t = lone.allocate_topic();
        lone.push_labeled(CellCoord::new(0, 0, 0), 1, t).unwrap();
        assert_eq!(resample_cell(&mut lone, CellCoord::new(0, 0, 0), &mut rng), 0);
        assert_eq!(lone.topics_allocated(), 1);
    }

    #[test]
    fn refine_budget_zero_and_empty_model() {
        let mut empty = model(0.5, 0.5, 0.1, 3);
        let mut rng = worker_rng(1, 0);
        let stats = refine(&mut empty, 50, &mut rng);
        assert_eq!(stats.visits, 0);
        assert_eq!(empty.num_cells(), 0);

        let mut m = model(0.5, 0.5, 0.1, 3);
        for n in 0..40 {
            let obs = WordObservation::new(0.0, n % 3, [(n % 4) as f64, 0.0, 0.0]);
            insert_observation(&mut m, &obs, &mut rng).unwrap();
        }
        let before: Vec<Vec<TopicId>> = m.cells().iter().map(|c| c.labels().to_vec()).collect();
        let stats = refine(&mut m, 0, &mut rng);
        assert_eq!(stats.visits, 0);
        let after: Vec<Vec<TopicId>> = m.cells().iter().map(|c| c.labels().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn mode_breaks_ties_to_lowest_id() {
        let mut m = model(0.5, 0.5, 0.1, 3);
        for _ in 0..7 {
            m.allocate_topic();
        }
        let c = CellCoord::new(1, 1, 1);
        for t in [2, 2, 5, 5, 1] {
            m.push_labeled(c, 0, t).unwrap();
        }
        assert_eq!(map_topic_of_cell(&m, c), Some(2));
        let single = CellCoord::new(4, 4, 4);
        m.push_labeled(single, 0, 7).unwrap();
        assert_eq!(map_topic_of_cell(&m, single), Some(7));
        assert_eq!(map_topic_of_cell(&m, CellCoord::new(9, 9, 9)), None);
    }

    #[test]
    fn parallel_refinement_keeps_counts_consistent() {
        let params = Hyperparameters::new(0.1, 0.2, 0.05, 1.0, 8)
            .unwrap()
            .with_neighborhood(Neighborhood::VonNeumann2D);
        let mut m = SceneModel::new(params).unwrap();
        let mut rng = worker_rng(5, 0);
        for n in 0..2_000u32 {
            let x = (n % 13) as f64 + 0.5;
            let y = ((n / 13) % 11) as f64 + 0.5;
            let obs = WordObservation::new(0.0, (n * 7 + (x as u32) / 4) % 8, [x, y, 0.5]);
            insert_observation(&mut m, &obs, &mut rng).unwrap();
        }
        let allocated = m.topics_allocated();
        for workers in [2, 4] {
            let stats = refine_parallel(&mut m, 300, workers, &mut rng);
            assert_eq!(stats.visits, 300);
            m.check_consistency().unwrap();
            sweep_parallel(&mut m, workers, &mut rng);
            m.check_consistency().unwrap();
        }
        assert!(m.topics_allocated() >= allocated);
    }

    #[test]
    fn parallel_refinement_is_reproducible_for_fixed_workers() {
        let run = || {
            let params = Hyperparameters::new(0.1, 0.2, 0.05, 1.0, 8).unwrap();
            let mut m = SceneModel::new(params).unwrap();
            let mut rng = worker_rng(11, 0);
            for n in 0..800u32 {
                let obs = WordObservation::new(0.0, n % 8, [(n % 9) as f64, (n % 7) as f64, 0.0]);
                insert_observation(&mut m, &obs, &mut rng).unwrap();
            }
            sweep_parallel(&mut m, 3, &mut rng);
            refine_parallel(&mut m, 100, 3, &mut rng);
            m.cells().iter().map(|c| c.labels().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
