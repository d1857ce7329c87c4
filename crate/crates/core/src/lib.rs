pub mod diagnostics;
pub mod dpca;
pub mod error;
pub mod impute;
pub mod ingest;
pub mod linalg;
pub mod panel;
pub mod summarize;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
