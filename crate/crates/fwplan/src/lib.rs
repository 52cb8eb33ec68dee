//! File formats, wall-clock timing and the `fwplan` command line on top of
//! [`fwplan_core`].

pub mod cli;
pub mod error;
pub mod mission_file;
pub mod output;
pub mod params;
pub mod timing;
pub mod trajectory;

pub use fwplan_core as core;
