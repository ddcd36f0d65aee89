//! Instance credibility inference (ICI) for few-shot self-training.
//!
//! Pseudo-labeled instances are ranked by how early their incidental
//! parameters vanish along a regularization path. The crate covers the whole
//! pipeline: feature ingestion and episode sampling ([`data`]), dimension
//! reduction ([`dimreduce`]), the linear and logistic path solvers
//! ([`path`], [`logit`]), downstream classifiers ([`classify`]), the
//! self-taught loop with its selection baselines ([`selftrain`]) and the
//! identifiability checks for the linear model ([`theory`]).

pub mod classify;
pub mod data;
pub mod dimreduce;
mod error;
pub mod linalg;
pub mod logit;
pub mod path;
pub mod selftrain;
pub mod theory;

pub use error::{IciError, Result};
