//! File formats, dataset directories, streaming transports and the
//! pipelines behind the `radfield` command-line tool.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod io;
pub mod netstream;
pub mod pipelines;
