//! Agreement scores between label grids, and hyperparameter grid search.
//!
//! Mutual information is the plug-in estimate in nats over the pixels
//! labeled (nonzero) in both grids. Grids are matched by global cell
//! coordinate, so their extents may differ but their cell sizes may not.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::encoded_size;
use crate::error::{Error, Result};
use crate::grid::{AnnotationGrid, LabelGrid, SceneMap};
use crate::inference::{run_stream, Schedule};
use crate::mapping::snapshot_scene_map;
use crate::model::{Hyperparameters, Neighborhood, WordObservation};

/// Borrowed view of any georeferenced label raster.
#[derive(Clone, Copy, Debug)]
pub struct GridView<'a> {
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub cell_size: [f64; 2],
    pub labels: &'a [u32],
}

impl<'a> From<&'a SceneMap> for GridView<'a> {
    fn from(m: &'a SceneMap) -> Self {
        GridView {
            origin: m.origin,
            width: m.width,
            height: m.height,
            cell_size: m.cell_size,
            labels: &m.labels,
        }
    }
}

impl<'a> From<&'a LabelGrid> for GridView<'a> {
    fn from(g: &'a LabelGrid) -> Self {
        GridView {
            origin: g.origin,
            width: g.width,
            height: g.height,
            cell_size: [g.cell_size; 2],
            labels: &g.labels,
        }
    }
}

impl GridView<'_> {
    fn at(&self, i: i64, j: i64) -> Option<u32> {
        let col = i - self.origin[0];
        let row = j - self.origin[1];
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            return None;
        }
        Some(self.labels[row as usize * self.width + col as usize])
    }
}

fn same_size(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Joint label histogram over the jointly labeled pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contingency {
    pub joint: HashMap<(u32, u32), u64>,
    pub left: HashMap<u32, u64>,
    pub right: HashMap<u32, u64>,
    pub total: u64,
}

pub fn contingency<'a, 'b>(a: impl Into<GridView<'a>>, b: impl Into<GridView<'b>>) -> Result<Contingency> {
    let a = a.into();
    let b = b.into();
    for axis in 0..2 {
        if !same_size(a.cell_size[axis], b.cell_size[axis]) {
            return Err(Error::ShapeMismatch(format!(
                "cell sizes differ: {:?} vs {:?}",
                a.cell_size, b.cell_size
            )));
        }
    }
    for (name, g) in [("first", &a), ("second", &b)] {
        if g.labels.len() != g.width * g.height {
            return Err(Error::ShapeMismatch(format!(
                "{name} grid is {}x{} but holds {} labels",
                g.width,
                g.height,
                g.labels.len()
            )));
        }
    }
    let empty = a.labels.is_empty() || b.labels.is_empty();
    if !empty {
        let disjoint = |o1: i64, n1: usize, o2: i64, n2: usize| o1 + n1 as i64 <= o2 || o2 + n2 as i64 <= o1;
        if disjoint(a.origin[0], a.width, b.origin[0], b.width)
            || disjoint(a.origin[1], a.height, b.origin[1], b.height)
        {
            return Err(Error::ShapeMismatch(format!(
                "grids do not overlap: {}x{} at {:?} vs {}x{} at {:?}",
                a.width, a.height, a.origin, b.width, b.height, b.origin
            )));
        }
    }
    let mut out = Contingency::default();
    for row in 0..a.height {
        for col in 0..a.width {
            let la = a.labels[row * a.width + col];
            if la == 0 {
                continue;
            }
            let i = a.origin[0] + col as i64;
            let j = a.origin[1] + row as i64;
            let Some(lb) = b.at(i, j).filter(|&l| l != 0) else {
                continue;
            };
            *out.joint.entry((la, lb)).or_default() += 1;
            *out.left.entry(la).or_default() += 1;
            *out.right.entry(lb).or_default() += 1;
            out.total += 1;
        }
    }
    Ok(out)
}

/// Sums `terms` in an order that depends only on the term values, so the
/// result is invariant to relabeling.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn entropy_of(counts: impl Iterator<Item = u64>, n: u64) -> f64 {
    let nf = n as f64;
    let terms = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / nf;
            p * (nf / c as f64).ln()
        })
        .collect();
    stable_sum(terms)
}

impl Contingency {
    pub fn mutual_information(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::UndefinedScore);
        }
        let n = self.total as u128;
        let nf = self.total as f64;
        let terms = self
            .joint
            .iter()
            .map(|(&(k, j), &c)| {
                let num = c as u128 * n;
                let den = self.left[&k] as u128 * self.right[&j] as u128;
                // Equal integers give a ratio of exactly 1 and a zero term.
                let ratio = if num == den { 1.0 } else { num as f64 / den as f64 };
                c as f64 / nf * ratio.ln()
            })
            .collect();
        // Clamp the rounding residue of an independent pair.
        Ok(stable_sum(terms).max(0.0))
    }

    pub fn left_entropy(&self) -> f64 {
        entropy_of(self.left.values().copied(), self.total)
    }

    pub fn right_entropy(&self) -> f64 {
        entropy_of(self.right.values().copied(), self.total)
    }
}

/// Plug-in mutual information in nats between a map and annotations.
pub fn mutual_information(z: &SceneMap, a: &AnnotationGrid) -> Result<f64> {
    contingency(z, a)?.mutual_information()
}

/// Entropy in nats of the nonzero labels of a grid.
pub fn entropy<'a>(g: impl Into<GridView<'a>>) -> f64 {
    let g = g.into();
    let mut counts: HashMap<u32, u64> = HashMap::new();
    for &l in g.labels.iter().filter(|&&l| l != 0) {
        *counts.entry(l).or_default() += 1;
    }
    let n = counts.values().sum();
    entropy_of(counts.into_values(), n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub mutual_information: f64,
    /// Entropy of the first grid over the overlap.
    pub entropy_left: f64,
    pub entropy_right: f64,
    /// Mutual information over the larger of the two entropies; 1 when both
    /// grids are constant on the overlap, since the partitions then agree.
    pub normalized: f64,
    pub overlap: u64,
}

pub fn score<'a, 'b>(a: impl Into<GridView<'a>>, b: impl Into<GridView<'b>>) -> Result<Score> {
    let table = contingency(a, b)?;
    let mi = table.mutual_information()?;
    let hl = table.left_entropy();
    let hr = table.right_entropy();
    let h = hl.max(hr);
    Ok(Score {
        mutual_information: mi,
        entropy_left: hl,
        entropy_right: hr,
        normalized: if h > 0.0 { (mi / h).min(1.0) } else { 1.0 },
        overlap: table.total,
    })
}

/// Hyperparameter grid with replicate seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cell_size: [f64; 3],
    pub vocab_size: u32,
    pub neighborhood: Neighborhood,
    pub seeds: Vec<u64>,
}

pub const DEFAULT_ALPHAS: [f64; 4] = [1.0, 0.1, 0.01, 0.001];
pub const DEFAULT_BETAS: [f64; 3] = [10.0, 1.0, 0.1];
pub const DEFAULT_GAMMAS: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const DEFAULT_SEEDS: usize = 3;

impl GridSearchSpec {
    /// The 36-point grid with seeds `0..3`.
    pub fn standard(cell_size: f64, vocab_size: u32) -> Self {
        GridSearchSpec {
            alphas: DEFAULT_ALPHAS.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
            gammas: DEFAULT_GAMMAS.to_vec(),
            cell_size: [cell_size; 3],
            vocab_size,
            neighborhood: Neighborhood::default(),
            seeds: (0..DEFAULT_SEEDS as u64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("alpha", &self.alphas), ("beta", &self.betas), ("gamma", &self.gammas)] {
            if list.is_empty() {
                return Err(Error::invalid(format!("{name} list is empty")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seed list is empty"));
        }
        for p in self.points() {
            self.params(p)?;
        }
        Ok(())
    }

    /// Grid points as `[alpha, beta, gamma]`, alpha-major.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.alphas.len() * self.betas.len() * self.gammas.len());
        for &a in &self.alphas {
            for &b in &self.betas {
                for &g in &self.gammas {
                    out.push([a, b, g]);
                }
            }
        }
        out
    }

    pub fn params(&self, point: [f64; 3]) -> Result<Hyperparameters> {
        let p = Hyperparameters {
            alpha: point[0],
            beta: point[1],
            gamma: point[2],
            cell_size: self.cell_size,
            vocab_size: self.vocab_size,
            neighborhood: self.neighborhood,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mi_annotations: f64,
    pub mi_reference: Option<f64>,
    pub encoded_size_bytes: usize,
    pub distinct_labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    /// The error message of a failed run.
    pub outcome: std::result::Result<RunMetrics, String>,
}

impl RunRecord {
    pub fn point(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: [f64; 3],
    pub best_mean_mi: f64,
    pub runs: Vec<RunRecord>,
}

/// Runs one grid point with one seed: stream the dataset, snapshot, score.
pub fn evaluate_point(
    params: &Hyperparameters,
    dataset: &[WordObservation],
    annotations: &AnnotationGrid,
    reference: Option<&LabelGrid>,
    schedule: &Schedule,
    seed: u64,
) -> Result<RunMetrics> {
    let model = run_stream(params, dataset, schedule, seed)?;
    let map = snapshot_scene_map(&model);
    let mi_annotations = mutual_information(&map, annotations)?;
    let mi_reference = reference.map(|r| mutual_information(&map, r)).transpose()?;
    Ok(RunMetrics {
        mi_annotations,
        mi_reference,
        encoded_size_bytes: encoded_size(&map)?,
        distinct_labels: map.distinct_labels(),
    })
}

/// Exhaustive search over the grid. Runs are independent and execute in
/// parallel; the table is ordered by grid point, then seed.
pub fn grid_search(
    spec: &GridSearchSpec,
    dataset: &[WordObservation],
    annotations: &AnnotationGrid,
    reference: Option<&LabelGrid>,
    schedule: &Schedule,
) -> Result<GridSearchResult> {
    spec.validate()?;
    let jobs: Vec<([f64; 3], u64)> = spec
        .points()
        .into_iter()
        .flat_map(|p| spec.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let outcome = spec
                .params(p)
                .and_then(|params| evaluate_point(&params, dataset, annotations, reference, schedule, seed))
                .map_err(|e| e.to_string());
            RunRecord {
                alpha: p[0],
                beta: p[1],
                gamma: p[2],
                seed,
                outcome,
            }
        })
        .collect();
    let (best, best_mean_mi) = best_point(&runs).ok_or(Error::AllRunsFailed(runs.len()))?;
    Ok(GridSearchResult {
        best,
        best_mean_mi,
        runs,
    })
}

/// Argmax of the mean annotation MI per grid point over successful runs.
/// Ties go to the lexicographically smallest `(alpha, beta, gamma)`.
pub fn best_point(runs: &[RunRecord]) -> Option<([f64; 3], f64)> {
    let mut order: Vec<[f64; 3]> = Vec::new();
    let mut sums: HashMap<[u64; 3], (f64, usize)> = HashMap::new();
    for r in runs {
        let Ok(m) = &r.outcome else { continue };
        let key = r.point().map(f64::to_bits);
        let e = sums.entry(key).or_insert_with(|| {
            order.push(r.point());
            (0.0, 0)
        });
        e.0 += m.mi_annotations;
        e.1 += 1;
    }
    let mut best: Option<([f64; 3], f64)> = None;
    for p in order {
        let (sum, n) = sums[&p.map(f64::to_bits)];
        let mean = sum / n as f64;
        let better = match best {
            None => true,
            Some((bp, bm)) => mean > bm || (mean == bm && lexicographic_lt(p, bp)),
        };
        if better {
            best = Some((p, mean));
        }
    }
    best
}

fn lexicographic_lt(a: [f64; 3], b: [f64; 3]) -> bool {
    for i in 0..3 {
        match a[i].total_cmp(&b[i]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

pub const SCATTER_HEADER: [&str; 8] = [
    "alpha",
    "beta",
    "gamma",
    "seed",
    "mi_annotations",
    "mi_reference",
    "encoded_size_bytes",
    "distinct_labels",
];

/// Plot-ready table, one row per successful run. `mi_reference` is empty
/// when no reference map was given.
pub fn scatter_table<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCATTER_HEADER)?;
    for r in runs {
        let Ok(m) = &r.outcome else { continue };
        w.write_record([
            r.alpha.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.seed.to_string(),
            m.mi_annotations.to_string(),
            m.mi_reference.map(|v| v.to_string()).unwrap_or_default(),
            m.encoded_size_bytes.to_string(),
            m.distinct_labels.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Failed runs as `alpha,beta,gamma,seed,error`.
pub fn failure_table<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "beta", "gamma", "seed", "error"])?;
    for r in runs {
        if let Err(e) = &r.outcome {
            w.write_record([
                r.alpha.to_string(),
                r.beta.to_string(),
                r.gamma.to_string(),
                r.seed.to_string(),
                e.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Best grid point as `key = value` lines.
pub fn write_best<W: Write>(result: &GridSearchResult, mut out: W) -> Result<()> {
    let ok = result.runs.iter().filter(|r| r.outcome.is_ok()).count();
    writeln!(out, "alpha = {}", result.best[0])?;
    writeln!(out, "beta = {}", result.best[1])?;
    writeln!(out, "gamma = {}", result.best[2])?;
    writeln!(out, "mean_mi = {}", result.best_mean_mi)?;
    writeln!(out, "runs = {}", result.runs.len())?;
    writeln!(out, "failed_runs = {}", result.runs.len() - ok)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, labels: Vec<u32>) -> LabelGrid {
        LabelGrid::new(w, h, 1.0, labels).unwrap()
    }

    #[test]
    fn identical_halves_give_ln_two() {
        let g = grid(4, 1, vec![1, 1, 2, 2]);
        let z = SceneMap::from_label_grid(&g);
        assert_abs_diff_eq!(mutual_information(&z, &g).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn constant_grid_scores_exactly_zero() {
        let a = grid(5, 2, vec![1, 2, 3, 1, 2, 3, 3, 1, 4, 4]);
        let z = SceneMap::from_label_grid(&LabelGrid::filled(5, 2, 1.0, 9));
        assert_eq!(mutual_information(&z, &a).unwrap(), 0.0);
    }

    #[test]
    fn only_jointly_labeled_pixels_count() {
        let a = grid(4, 1, vec![1, 2, 0, 2]);
        let z = SceneMap::from_label_grid(&grid(4, 1, vec![3, 4, 4, 0]));
        let s = score(&z, &a).unwrap();
        assert_eq!(s.overlap, 2);
        assert_abs_diff_eq!(s.mutual_information, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.normalized, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alignment_uses_global_coordinates() {
        let a = grid(3, 1, vec![1, 2, 1]).with_origin([10, 0]);
        let z = SceneMap::from_label_grid(&grid(2, 1, vec![5, 6]).with_origin([11, 0]));
        let t = contingency(&z, &a).unwrap();
        assert_eq!(t.total, 2);
        assert_eq!(t.joint[&(1, 2)], 1);
        assert_eq!(t.joint[&(2, 1)], 1);
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let a = grid(2, 2, vec![1; 4]);
        let mut b = grid(2, 2, vec![1; 4]);
        b.cell_size = 0.5;
        assert!(matches!(contingency(&a, &b), Err(Error::ShapeMismatch(_))));
        let far = grid(2, 2, vec![1; 4]).with_origin([50, 50]);
        assert!(matches!(contingency(&a, &far), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn no_overlap_is_undefined() {
        let a = grid(2, 1, vec![1, 0]);
        let b = grid(2, 1, vec![0, 1]);
        assert!(matches!(score(&a, &b), Err(Error::UndefinedScore)));
        let empty = SceneMap::empty([1.0, 1.0]);
        assert!(matches!(mutual_information(&empty, &a), Err(Error::UndefinedScore)));
    }

    #[test]
    fn entropy_of_uniform_labels() {
        let g = grid(4, 2, vec![1, 2, 3, 4, 1, 2, 3, 4]);
        assert_abs_diff_eq!(entropy(&g), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&LabelGrid::filled(3, 3, 1.0, 2)), 0.0);
    }

    #[test]
    fn best_point_breaks_ties_lexicographically() {
        let metrics = |mi| {
            Ok(RunMetrics {
                mi_annotations: mi,
                mi_reference: None,
                encoded_size_bytes: 10,
                distinct_labels: 1,
            })
        };
        let run = |a, b, g, seed, outcome| RunRecord {
            alpha: a,
            beta: b,
            gamma: g,
            seed,
            outcome,
        };
        let runs = vec![
            run(1.0, 1.0, 1e-3, 0, metrics(0.5)),
            run(0.1, 1.0, 1e-3, 0, metrics(0.5)),
            run(0.1, 1.0, 1e-4, 0, metrics(0.9)),
            run(0.1, 1.0, 1e-4, 1, Err("boom".into())),
            run(0.1, 1.0, 1e-4, 2, metrics(0.1)),
        ];
        assert_eq!(best_point(&runs), Some(([0.1, 1.0, 1e-4], 0.5)));
        assert_eq!(best_point(&runs[3..4]), None);
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        scatter_table(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), SCATTER_HEADER.join(","));
    }

    #[test]
    fn standard_grid_has_36_points() {
        let spec = GridSearchSpec::standard(1.0, 50);
        assert_eq!(spec.points().len(), 36);
        spec.validate().unwrap();
    }

    fn labels(n: usize, k: u32) -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0..=k, n)
    }

    proptest! {
        #[test]
        fn mi_is_symmetric_bounded_and_relabel_invariant(
            a in labels(60, 5),
            b in labels(60, 4),
            shift in 1u32..50,
        ) {
            let ga = grid(10, 6, a.clone());
            let gb = grid(10, 6, b);
            let Ok(t) = contingency(&ga, &gb) else { unreachable!() };
            prop_assume!(t.total > 0);
            let mi = t.mutual_information().unwrap();
            let back = contingency(&gb, &ga).unwrap().mutual_information().unwrap();
            prop_assert_eq!(mi, back);
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= t.left_entropy().min(t.right_entropy()) + 1e-9);
            // Reverse the label order and shift: a bijection on nonzero labels.
            let permuted = grid(10, 6, a.iter().map(|&l| if l == 0 { 0 } else { 6 - l + shift }).collect());
            let mi_p = contingency(&permuted, &gb).unwrap().mutual_information().unwrap();
            prop_assert_eq!(mi, mi_p);
        }

        #[test]
        fn self_information_is_entropy(a in labels(80, 6)) {
            let g = grid(8, 10, a);
            prop_assume!(g.labels.iter().any(|&l| l != 0));
            let mi = contingency(&g, &g).unwrap().mutual_information().unwrap();
            prop_assert!((mi - entropy(&g)).abs() <= 1e-9);
        }
    }
}
