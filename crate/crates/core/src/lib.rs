//! Scenario-aware next-POI recommendation over multi-view hypergraphs.
//!
//! The pipeline: parse check-ins ([`ingest`]), label trajectories with one of
//! eight composite scenarios ([`scenario`]), build per-scenario hypergraphs
//! ([`hypergraph`]), convolve them ([`conv`]), fuse the views ([`fusion`]) and
//! train with a contrastive plus recommendation objective ([`objective`],
//! [`trainer`]) while parameters whose per-scenario gradients conflict are
//! duplicated ([`splitter`]).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod hypergraph;
pub mod ingest;
pub mod model;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod scenario;
pub mod sparse;
pub mod splitter;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
