//! Experiment harness: configuration, dataset ingestion, the composite
//! simulation world, experiment drivers and metrics emission.

pub mod config;
pub mod experiments;
pub mod ingest;
pub mod synth;
pub mod world;
