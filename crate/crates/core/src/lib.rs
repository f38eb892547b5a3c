//! Bandwidth-tunable realtime semantic scene mapping.
//!
//! Geolocated visual words stream into a spatially correlated Chinese
//! Restaurant Process topic model ([`inference`]) stored in a sparse
//! spatial hash of cells ([`model`]). The current MAP labeling is
//! flattened into a 2D [`grid::SceneMap`] ([`mapping`]), compressed into an
//! indexed PNG ([`codec`]) and pushed through a simulated rate-limited
//! uplink ([`transport`]). Hyperparameters are tuned by mutual information
//! against annotations ([`evaluation`]); [`generative`] samples synthetic
//! worlds and observation streams for ground truth, and [`mission`] ties
//! everything into reproducible replay experiments.

pub mod cli;
pub mod codec;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod generative;
pub mod grid;
pub mod inference;
pub mod mapping;
pub mod mission;
pub mod model;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{AnnotationGrid, LabelGrid, SceneMap};
pub use model::{
    cell_of, neighbors, Cell, CellCoord, Hyperparameters, Neighborhood, SceneModel, TopicId,
    WordId, WordObservation,
};
