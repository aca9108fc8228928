//! Spatial microsimulation for small-area health estimates.
//!
//! A survey sample is reweighted to each zone's census marginals by iterative
//! proportional fitting, the weights are integerised into a synthetic
//! population, and zone prevalences are aggregated from the agents. A second
//! level appends first-level behavior prevalences to the constraints before
//! refitting. Estimates can then be scored against reference estimates and
//! ranked by composite deviation from the grid mean.

pub mod error;
pub mod evaluate;
pub mod fixture;
pub mod harmonize;
pub mod ipf;
pub mod manifest;
pub mod pipeline;
pub mod recode;
pub mod rng;
pub mod synthpop;

pub use error::{Error, ErrorClass, Result};
pub use harmonize::{ConstraintTable, Schema, SurveyTable, Variable, ZoneMarginals};
pub use ipf::{fit_all, fit_zone, Design, FitOptions, InfeasibilityPolicy, WeightField};
pub use pipeline::{run_shape, PipelineConfig, PrevalenceTable, Scale};
pub use synthpop::{expand, integerise_trs, IntegerCounts, SyntheticPopulation};
