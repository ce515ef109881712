//! File formats, configuration, rendering and the `mpgen` command line.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod llm;
pub mod motion_file;
pub mod records;
pub mod refine;
pub mod render;

pub use error::{CliError, ParseError, Result};
pub use motion_file::{read_motion_file, write_motion_file, MotionFile};
