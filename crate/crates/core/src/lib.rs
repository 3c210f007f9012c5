//! Long-horizon time-series forecasting with parallel Mamba and windowed-attention
//! branches fused by learned per-patch weights.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cost;
pub mod data;
pub mod embedder;
pub mod error;
pub mod export;
pub mod layers;
pub mod mamba;
pub mod model;
pub mod numcore;
pub mod sweep;
pub mod train;
pub mod weighter;
pub mod winatt;

pub use error::{Error, Result};
