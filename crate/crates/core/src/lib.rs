//! Detection and characterization of coordinated account groups from a
//! corpus of social media posts.

pub mod config;
pub mod dedup;
pub mod error;
pub mod indicators;
pub mod integrity;
pub mod ingest;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod similarity;
pub mod stats;
pub mod synth;
mod union_find;

pub use error::{Error, Result};
