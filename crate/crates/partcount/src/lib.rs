//! Files, dataset tooling and the `partcount` command line on top of
//! `partcount-core`.

pub mod checkpoint;
pub mod cli;
pub mod coco;
pub mod data;
pub mod densityfile;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod synthio;
pub mod training;

pub use error::{Error, Result};
