//! 2D label rasters: the transmitted [`SceneMap`] and the plain
//! [`LabelGrid`] used for generated worlds, annotations and reference maps.
//!
//! Both are row-major with `labels[row * width + col]`, where columns run
//! along the cell `i` axis and rows along `j`. Label `0` means unexplored
//! or unannotated.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TopicId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    /// Cell coordinate `(i, j)` of the top-left pixel.
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub labels: Vec<u32>,
}

/// Expert labels for hyperparameter selection. Same contract as any grid.
pub type AnnotationGrid = LabelGrid;

impl LabelGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, labels: Vec<u32>) -> Result<Self> {
        let grid = LabelGrid {
            origin: [0, 0],
            width,
            height,
            cell_size,
            labels,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn filled(width: usize, height: usize, cell_size: f64, label: u32) -> Self {
        LabelGrid {
            origin: [0, 0],
            width,
            height,
            cell_size,
            labels: vec![label; width * height],
        }
    }

    pub fn with_origin(mut self, origin: [i64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.width * self.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid holds {} labels",
                self.width,
                self.height,
                self.labels.len()
            )));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be > 0, got {}", self.cell_size)));
        }
        Ok(())
    }

    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Label at global cell coordinate `(i, j)`; `None` outside the grid.
    pub fn at(&self, i: i64, j: i64) -> Option<u32> {
        let col = i - self.origin[0];
        let row = j - self.origin[1];
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            return None;
        }
        Some(self.get(col as usize, row as usize))
    }

    /// Distinct nonzero labels.
    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// The flattened MAP labeling: compacted labels `1..=P` plus the palette
/// mapping each back to its topic id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMap {
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    /// Cell edge along `i` and `j` in meters.
    pub cell_size: [f64; 2],
    pub labels: Vec<u32>,
    /// `palette[n - 1]` is the topic shown by pixel value `n`.
    pub palette: Vec<TopicId>,
}

impl SceneMap {
    pub fn empty(cell_size: [f64; 2]) -> Self {
        SceneMap {
            origin: [0, 0],
            width: 0,
            height: 0,
            cell_size,
            labels: Vec::new(),
            palette: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Compacted label at global cell `(i, j)`; `None` outside the map.
    pub fn at(&self, i: i64, j: i64) -> Option<u32> {
        let col = i - self.origin[0];
        let row = j - self.origin[1];
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            return None;
        }
        Some(self.get(col as usize, row as usize))
    }

    /// Topic id behind a compacted pixel value.
    pub fn topic(&self, value: u32) -> Option<TopicId> {
        if value == 0 {
            return None;
        }
        self.palette.get(value as usize - 1).copied()
    }

    /// Number of distinct labels actually drawn.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.palette.len() + 1];
        for &l in &self.labels {
            if let Some(s) = seen.get_mut(l as usize) {
                *s = true;
            }
        }
        seen.iter().skip(1).filter(|&&s| s).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.width * self.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} map holds {} labels",
                self.width,
                self.height,
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize > self.palette.len()) {
            return Err(Error::MissingPalette(bad));
        }
        let mut sorted = self.palette.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("palette maps two pixel values to one topic"));
        }
        if sorted.first() == Some(&0) {
            return Err(Error::invalid("palette may not contain topic 0"));
        }
        Ok(())
    }

    /// Compacts arbitrary nonzero labels into a palette ordered by first
    /// appearance in raster scan.
    pub fn from_label_grid(grid: &LabelGrid) -> Self {
        let mut compact: HashMap<u32, u32> = HashMap::new();
        let mut palette = Vec::new();
        let labels = grid
            .labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    return 0;
                }
                *compact.entry(l).or_insert_with(|| {
                    palette.push(l);
                    palette.len() as u32
                })
            })
            .collect();
        SceneMap {
            origin: grid.origin,
            width: grid.width,
            height: grid.height,
            cell_size: [grid.cell_size; 2],
            labels,
            palette,
        }
    }

    /// Expands pixel values back to topic ids.
    pub fn to_label_grid(&self) -> LabelGrid {
        LabelGrid {
            origin: self.origin,
            width: self.width,
            height: self.height,
            cell_size: self.cell_size[0],
            labels: self
                .labels
                .iter()
                .map(|&l| self.topic(l).unwrap_or(0))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compaction_follows_raster_order() {
        let grid = LabelGrid::new(3, 2, 1.0, vec![7, 0, 3, 3, 7, 9]).unwrap();
        let map = SceneMap::from_label_grid(&grid);
        assert_eq!(map.labels, vec![1, 0, 2, 2, 1, 3]);
        assert_eq!(map.palette, vec![7, 3, 9]);
        assert_eq!(map.distinct_labels(), 3);
        map.validate().unwrap();
        assert_eq!(map.to_label_grid(), grid);
    }

    #[test]
    fn validate_catches_missing_palette_and_duplicates() {
        let mut map = SceneMap::from_label_grid(&LabelGrid::new(2, 1, 1.0, vec![4, 5]).unwrap());
        map.labels[1] = 3;
        assert!(matches!(map.validate(), Err(Error::MissingPalette(3))));
        map.labels[1] = 2;
        map.palette[1] = 4;
        assert!(map.validate().is_err());
    }

    #[test]
    fn global_lookup_respects_origin() {
        let grid = LabelGrid::new(2, 2, 1.0, vec![1, 2, 3, 4])
            .unwrap()
            .with_origin([10, -5]);
        assert_eq!(grid.at(10, -5), Some(1));
        assert_eq!(grid.at(11, -4), Some(4));
        assert_eq!(grid.at(9, -5), None);
        assert_eq!(grid.at(12, -5), None);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            LabelGrid::new(2, 2, 1.0, vec![1, 2, 3]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
