//! File formats, ingestion, command line and HTTP service for
//! `pandemic-fhoc-core`.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod formats;
pub mod fsio;
pub mod manifest;
pub mod pipeline;
pub mod service;

pub use error::{Error, Result};
