//! Variational Bayesian finite mixture modelling for categorical data.
//!
//! The model is an overfitted Dirichlet-categorical mixture trained by
//! coordinate-ascent variational inference, with optional feature-saliency
//! variable selection. Multiple restarts are combined through an N x N
//! co-clustering matrix from which a single summary partition is extracted
//! (Medvedovic clustering or a variation-of-information bound minimised over
//! dendrogram cuts).

pub mod coca;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod kmodes;
pub mod runner;
pub mod summarize;

pub use data::{load_dataset, simulate, CategoricalDataset, LabeledDataset, SimulationDesign};
pub use engine::{fit, FitResult, ModelConfig};
pub use error::{Error, Result};
pub use summarize::{CoClusteringMatrix, SummaryClustering, SummaryConfig, SummaryMethod};
