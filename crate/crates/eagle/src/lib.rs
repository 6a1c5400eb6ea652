//! Command line, model-shim client, result bundles and serve mode for
//! black-box region attribution.
//!
//! The attribution engine itself lives in [`eagle_core`]; this crate adds
//! everything that touches the outside world: image files, the HTTP wire
//! protocol to a model shim, a caching and batching oracle gateway, canonical
//! JSON bundles, PNG renderings, and a local HTTP API for the explorer UI.

pub mod bench;
pub mod bundle;
pub mod canonical;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod gateway;
pub mod http;
pub mod imaging;
pub mod pipeline;
pub mod protocol;
pub mod serve;
pub mod synthetic;
pub mod targets;

pub use error::{Error, Result};
