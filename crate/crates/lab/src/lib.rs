//! Formats, parallel collection and the command-line front end over
//! `cmdp_lab_core`.

pub mod cli;
pub mod collect;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod run;

pub use error::{LabError, LabResult};
