//! Shared domain types: hyperparameters, observations, the sparse cell store
//! and the topic/word sufficient statistics every other module reads.
//!
//! Topic id `0` is reserved to mean "no topic" (an unexplored cell); live
//! topic ids start at `1` and are never handed out twice within a model.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TopicId = u32;
pub type WordId = u32;

/// Which cells count as adjacent when summing table popularity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Neighborhood {
    /// Six axis-adjacent cells.
    #[default]
    VonNeumann3D,
    /// Four cells varying `i` and `j`; depth is ignored.
    VonNeumann2D,
}

impl std::str::FromStr for Neighborhood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" | "vonneumann3d" | "von-neumann-3d" => Ok(Neighborhood::VonNeumann3D),
            "2d" | "vonneumann2d" | "von-neumann-2d" => Ok(Neighborhood::VonNeumann2D),
            other => Err(Error::invalid(format!("unknown neighborhood `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Weight added to every known topic; favors labels used elsewhere.
    pub alpha: f64,
    /// Symmetric Dirichlet concentration of the topic-word distributions.
    pub beta: f64,
    /// Weight of opening a new topic.
    pub gamma: f64,
    /// Cell edge length per axis (x, y, depth) in meters.
    pub cell_size: [f64; 3],
    pub vocab_size: u32,
    pub neighborhood: Neighborhood,
}

impl Hyperparameters {
    /// Cubic cells with the default 3D neighborhood.
    pub fn new(alpha: f64, beta: f64, gamma: f64, cell_size: f64, vocab_size: u32) -> Result<Self> {
        let params = Hyperparameters {
            alpha,
            beta,
            gamma,
            cell_size: [cell_size; 3],
            vocab_size,
            neighborhood: Neighborhood::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_neighborhood(mut self, neighborhood: Neighborhood) -> Self {
        self.neighborhood = neighborhood;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.alpha) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !positive(self.beta) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be at least 1"));
        }
        if !self.cell_size.iter().all(|&s| positive(s)) {
            return Err(Error::invalid(format!(
                "cell size must be > 0 on every axis, got {:?}",
                self.cell_size
            )));
        }
        Ok(())
    }
}

/// One categorical visual word observed at a geographic position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordObservation {
    /// Timestamp in seconds.
    pub t: f64,
    pub word: WordId,
    /// `(x, y, depth)` in meters.
    pub pos: [f64; 3],
}

impl WordObservation {
    pub fn new(t: f64, word: WordId, pos: [f64; 3]) -> Self {
        WordObservation { t, word, pos }
    }

    pub fn validate(&self, params: &Hyperparameters) -> Result<()> {
        if self.word >= params.vocab_size {
            return Err(Error::invalid(format!(
                "word id {} outside vocabulary of size {}",
                self.word, params.vocab_size
            )));
        }
        if !self.pos.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite position {:?}", self.pos)));
        }
        if !self.t.is_finite() {
            return Err(Error::invalid(format!("non-finite timestamp {}", self.t)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCoord {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl CellCoord {
    pub const fn new(i: i64, j: i64, k: i64) -> Self {
        CellCoord { i, j, k }
    }

    /// `(i + j + k) mod 2`. Cells of equal parity are never Von Neumann
    /// neighbors, in either mode.
    pub fn parity(&self) -> u8 {
        (self.i + self.j + self.k).rem_euclid(2) as u8
    }
}

/// Maps a position to the cell containing it (floor division per axis).
pub fn cell_of(pos: [f64; 3], params: &Hyperparameters) -> Result<CellCoord> {
    if !pos.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("non-finite position {pos:?}")));
    }
    let axis = |a: usize| (pos[a] / params.cell_size[a]).floor() as i64;
    Ok(CellCoord::new(axis(0), axis(1), axis(2)))
}

/// The Von Neumann neighbors of `c`, never including `c` itself.
pub fn neighbors(c: CellCoord, mode: Neighborhood) -> Vec<CellCoord> {
    let CellCoord { i, j, k } = c;
    let mut out = vec![
        CellCoord::new(i - 1, j, k),
        CellCoord::new(i + 1, j, k),
        CellCoord::new(i, j - 1, k),
        CellCoord::new(i, j + 1, k),
    ];
    if mode == Neighborhood::VonNeumann3D {
        out.push(CellCoord::new(i, j, k - 1));
        out.push(CellCoord::new(i, j, k + 1));
    }
    out
}

/// One restaurant: the words observed in a cell and their current topics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cell {
    pub coord: CellCoord,
    words: Vec<WordId>,
    labels: Vec<TopicId>,
    /// Sparse histogram of `labels`, sorted by topic id.
    hist: Vec<(TopicId, u32)>,
}

impl Cell {
    pub fn new(coord: CellCoord) -> Self {
        Cell {
            coord,
            ..Default::default()
        }
    }

    pub fn words(&self) -> &[WordId] {
        &self.words
    }

    pub fn labels(&self) -> &[TopicId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `(topic, count)` pairs sorted by topic id, zero counts omitted.
    pub fn topic_hist(&self) -> &[(TopicId, u32)] {
        &self.hist
    }

    pub fn topic_count(&self, topic: TopicId) -> u32 {
        match self.hist.binary_search_by_key(&topic, |&(t, _)| t) {
            Ok(pos) => self.hist[pos].1,
            Err(_) => 0,
        }
    }

    pub(crate) fn push(&mut self, word: WordId, topic: TopicId) {
        self.words.push(word);
        self.labels.push(topic);
        self.hist_add(topic);
    }

    pub(crate) fn relabel(&mut self, index: usize, topic: TopicId) {
        let old = std::mem::replace(&mut self.labels[index], topic);
        self.hist_remove(old);
        self.hist_add(topic);
    }

    pub(crate) fn hist_add(&mut self, topic: TopicId) {
        match self.hist.binary_search_by_key(&topic, |&(t, _)| t) {
            Ok(pos) => self.hist[pos].1 += 1,
            Err(pos) => self.hist.insert(pos, (topic, 1)),
        }
    }

    pub(crate) fn hist_remove(&mut self, topic: TopicId) {
        let pos = self
            .hist
            .binary_search_by_key(&topic, |&(t, _)| t)
            .expect("cell histogram out of sync with labels");
        self.hist[pos].1 -= 1;
        if self.hist[pos].1 == 0 {
            self.hist.remove(pos);
        }
    }

    /// Renames topics in place; used when provisional ids are resolved.
    pub(crate) fn map_topics(&mut self, mut f: impl FnMut(TopicId) -> TopicId) {
        for label in &mut self.labels {
            *label = f(*label);
        }
        let mut hist: Vec<(TopicId, u32)> = self.hist.iter().map(|&(t, c)| (f(t), c)).collect();
        hist.sort_unstable();
        self.hist = hist;
    }
}

/// Default length of the recently-touched cell list used by refinement.
pub const DEFAULT_RECENT_CELLS: usize = 32;

/// Full inference state of the spatial topic model.
///
/// Cells live in a `Vec` in first-touch order with a hash index for O(1)
/// lookup; iteration order is therefore deterministic.
#[derive(Clone, Debug)]
pub struct SceneModel {
    params: Hyperparameters,
    cells: Vec<Cell>,
    index: HashMap<CellCoord, usize>,
    /// Row-major `[topic][word]`, row 0 unused.
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
    /// Topics with a nonzero total, ascending.
    active: Vec<TopicId>,
    next_topic: TopicId,
    recent: VecDeque<usize>,
    recent_capacity: usize,
    observations: usize,
}

impl SceneModel {
    pub fn new(params: Hyperparameters) -> Result<Self> {
        params.validate()?;
        let v = params.vocab_size as usize;
        Ok(SceneModel {
            params,
            cells: Vec::new(),
            index: HashMap::new(),
            topic_word: vec![0; v],
            topic_totals: vec![0],
            active: Vec::new(),
            next_topic: 1,
            recent: VecDeque::new(),
            recent_capacity: DEFAULT_RECENT_CELLS,
            observations: 0,
        })
    }

    pub fn with_recent_capacity(mut self, capacity: usize) -> Self {
        self.recent_capacity = capacity.max(1);
        self
    }

    pub fn params(&self) -> &Hyperparameters {
        &self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.params.vocab_size as usize
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, coord: CellCoord) -> Option<&Cell> {
        self.index.get(&coord).map(|&idx| &self.cells[idx])
    }

    pub fn cell_index(&self, coord: CellCoord) -> Option<usize> {
        self.index.get(&coord).copied()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations
    }

    /// K: the number of topics currently holding at least one observation.
    pub fn num_topics(&self) -> usize {
        self.active.len()
    }

    /// Topic ids with a nonzero total, ascending.
    pub fn active_topics(&self) -> &[TopicId] {
        &self.active
    }

    /// Every id ever handed out; never decreases.
    pub fn topics_allocated(&self) -> u32 {
        self.next_topic - 1
    }

    pub fn next_topic_id(&self) -> TopicId {
        self.next_topic
    }

    pub fn topic_word_count(&self, topic: TopicId, word: WordId) -> u32 {
        let v = self.vocab_size();
        self.topic_word
            .get(topic as usize * v + word as usize)
            .copied()
            .unwrap_or(0)
    }

    pub fn topic_total(&self, topic: TopicId) -> u32 {
        self.topic_totals.get(topic as usize).copied().unwrap_or(0)
    }

    /// Cells that most recently received observations, oldest first.
    pub fn recent_cells(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.recent.iter().copied()
    }

    /// Sum of the topic histograms of `c` and its neighbors. Absent cells
    /// contribute nothing.
    pub fn neighborhood_topic_counts(&self, c: CellCoord) -> BTreeMap<TopicId, u32> {
        let mut out = BTreeMap::new();
        for coord in std::iter::once(c).chain(neighbors(c, self.params.neighborhood)) {
            if let Some(cell) = self.cell(coord) {
                for &(t, n) in cell.topic_hist() {
                    *out.entry(t).or_insert(0) += n;
                }
            }
        }
        out
    }

    /// Adds the stencil histogram of `c` into a dense per-topic buffer.
    pub(crate) fn accumulate_neighborhood(&self, c: CellCoord, dense: &mut [u32]) {
        for coord in std::iter::once(c).chain(neighbors(c, self.params.neighborhood)) {
            if let Some(cell) = self.cell(coord) {
                for &(t, n) in cell.topic_hist() {
                    dense[t as usize] += n;
                }
            }
        }
    }

    /// Like [`accumulate_neighborhood`](Self::accumulate_neighborhood) but
    /// skips `c` itself.
    pub(crate) fn accumulate_neighbors_only(&self, c: CellCoord, out: &mut Vec<(TopicId, u32)>) {
        for coord in neighbors(c, self.params.neighborhood) {
            if let Some(cell) = self.cell(coord) {
                out.extend_from_slice(cell.topic_hist());
            }
        }
    }

    pub fn allocate_topic(&mut self) -> TopicId {
        let id = self.next_topic;
        self.next_topic += 1;
        self.topic_totals.push(0);
        self.topic_word
            .resize(self.next_topic as usize * self.vocab_size(), 0);
        id
    }

    fn ensure_cell(&mut self, coord: CellCoord) -> usize {
        if let Some(&idx) = self.index.get(&coord) {
            return idx;
        }
        let idx = self.cells.len();
        self.cells.push(Cell::new(coord));
        self.index.insert(coord, idx);
        idx
    }

    fn touch(&mut self, idx: usize) {
        if self.recent.back() == Some(&idx) {
            return;
        }
        if let Some(pos) = self.recent.iter().position(|&r| r == idx) {
            self.recent.remove(pos);
        }
        self.recent.push_back(idx);
        while self.recent.len() > self.recent_capacity {
            self.recent.pop_front();
        }
    }

    fn count_add(&mut self, topic: TopicId, word: WordId) {
        let v = self.vocab_size();
        self.topic_word[topic as usize * v + word as usize] += 1;
        let total = &mut self.topic_totals[topic as usize];
        *total += 1;
        if *total == 1 {
            let pos = self.active.binary_search(&topic).unwrap_err();
            self.active.insert(pos, topic);
        }
    }

    fn count_remove(&mut self, topic: TopicId, word: WordId) {
        let v = self.vocab_size();
        self.topic_word[topic as usize * v + word as usize] -= 1;
        let total = &mut self.topic_totals[topic as usize];
        *total -= 1;
        if *total == 0 {
            let pos = self.active.binary_search(&topic).unwrap();
            self.active.remove(pos);
        }
    }

    /// Appends an already-labeled observation to the cell at `coord`.
    /// `topic` must have been allocated.
    pub fn push_labeled(&mut self, coord: CellCoord, word: WordId, topic: TopicId) -> Result<usize> {
        if word >= self.params.vocab_size {
            return Err(Error::invalid(format!("word id {word} outside vocabulary")));
        }
        if topic == 0 || topic >= self.next_topic {
            return Err(Error::invalid(format!("topic {topic} has not been allocated")));
        }
        let idx = self.ensure_cell(coord);
        self.cells[idx].push(word, topic);
        self.count_add(topic, word);
        self.observations += 1;
        self.touch(idx);
        Ok(idx)
    }

    /// Moves observation `obs` of cell `cell` to `topic`, keeping every
    /// table consistent.
    pub(crate) fn relabel(&mut self, cell: usize, obs: usize, topic: TopicId) {
        let word = self.cells[cell].words[obs];
        let old = self.cells[cell].labels[obs];
        if old == topic {
            return;
        }
        self.count_remove(old, word);
        self.count_add(topic, word);
        self.cells[cell].relabel(obs, topic);
    }

    /// Removes the given cells from the store for exclusive mutation. Their
    /// slots keep an empty placeholder until [`restore_cells`](Self::restore_cells).
    pub(crate) fn take_cells(&mut self, idxs: &[usize]) -> Vec<Cell> {
        idxs.iter()
            .map(|&i| {
                let coord = self.cells[i].coord;
                std::mem::replace(&mut self.cells[i], Cell::new(coord))
            })
            .collect()
    }

    pub(crate) fn restore_cells(&mut self, idxs: &[usize], cells: Vec<Cell>) {
        for (&i, cell) in idxs.iter().zip(cells) {
            self.cells[i] = cell;
        }
    }

    /// Applies signed count deltas accumulated off-model.
    pub(crate) fn apply_count_deltas(&mut self, word_deltas: &HashMap<(TopicId, WordId), i64>) {
        let v = self.vocab_size();
        let mut touched: Vec<TopicId> = Vec::new();
        for (&(t, w), &d) in word_deltas {
            let slot = &mut self.topic_word[t as usize * v + w as usize];
            *slot = (*slot as i64 + d) as u32;
            let total = &mut self.topic_totals[t as usize];
            *total = (*total as i64 + d) as u32;
            touched.push(t);
        }
        touched.sort_unstable();
        touched.dedup();
        for t in touched {
            let live = self.topic_totals[t as usize] > 0;
            match (self.active.binary_search(&t), live) {
                (Err(pos), true) => self.active.insert(pos, t),
                (Ok(pos), false) => {
                    self.active.remove(pos);
                }
                _ => {}
            }
        }
    }

    /// Recomputes the topic-word table and topic totals from the cells.
    pub fn recount(&self) -> (HashMap<(TopicId, WordId), u32>, BTreeMap<TopicId, u32>) {
        let mut word_counts = HashMap::new();
        let mut totals = BTreeMap::new();
        for cell in &self.cells {
            for (&w, &z) in cell.words.iter().zip(&cell.labels) {
                *word_counts.entry((z, w)).or_insert(0) += 1;
                *totals.entry(z).or_insert(0) += 1;
            }
        }
        (word_counts, totals)
    }

    /// Verifies every structural invariant against a from-scratch recount.
    pub fn check_consistency(&self) -> Result<(), String> {
        let (word_counts, totals) = self.recount();
        let v = self.vocab_size();
        for cell in &self.cells {
            if cell.words.len() != cell.labels.len() {
                return Err(format!("cell {:?}: words/labels length mismatch", cell.coord));
            }
            let mut hist: BTreeMap<TopicId, u32> = BTreeMap::new();
            for &z in &cell.labels {
                *hist.entry(z).or_insert(0) += 1;
            }
            let stored: Vec<(TopicId, u32)> = cell.hist.clone();
            let expected: Vec<(TopicId, u32)> = hist.into_iter().collect();
            if stored != expected {
                return Err(format!("cell {:?}: histogram {stored:?} != {expected:?}", cell.coord));
            }
            if self.index.get(&cell.coord).map(|&i| &self.cells[i].coord) != Some(&cell.coord) {
                return Err(format!("cell {:?} missing from index", cell.coord));
            }
        }
        for t in 1..self.next_topic {
            let expected_total = totals.get(&t).copied().unwrap_or(0);
            if self.topic_total(t) != expected_total {
                return Err(format!(
                    "topic {t}: total {} != recount {expected_total}",
                    self.topic_total(t)
                ));
            }
            for w in 0..v as WordId {
                let expected = word_counts.get(&(t, w)).copied().unwrap_or(0);
                if self.topic_word_count(t, w) != expected {
                    return Err(format!("count({t},{w}) out of sync"));
                }
            }
        }
        let live: Vec<TopicId> = totals.keys().copied().collect();
        if live != self.active {
            return Err(format!("active topics {:?} != recount {live:?}", self.active));
        }
        let n: usize = self.cells.iter().map(Cell::len).sum();
        if n != self.observations {
            return Err(format!("observation count {} != {n}", self.observations));
        }
        Ok(())
    }
}
