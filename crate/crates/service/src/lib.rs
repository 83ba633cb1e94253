//! HTTP API and command line over `femseg-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod export;
pub mod store;
