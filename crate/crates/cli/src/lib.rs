//! Experiment runner for fixed boundary flows.
//!
//! The binary `fbflow` wraps these modules: [`generate`] builds synthetic
//! clouds around known curves, [`geo`] reads earthquake-style catalogues,
//! [`config`] holds the JSON experiment description and [`run`] executes the
//! verbs and writes CSV, JSON and plot-script artifacts through [`output`].

pub mod config;
pub mod generate;
pub mod geo;
pub mod output;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Overrides};
pub use generate::{generate, generate_with, Generated, Scenario, ShapeParams};
pub use geo::{emit_geo, ingest_geo, GeoFilter, GeoPoint, IngestError};
