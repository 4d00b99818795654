//! File formats, embedding adapters, configuration, the HTTP service and
//! the command line around `matforge-core`.

pub mod adapter;
pub mod app;
pub mod cli;
pub mod config;
pub mod data;
pub mod formats;
pub mod image;
pub mod record;
pub mod retry;
pub mod scene;
pub mod service;
