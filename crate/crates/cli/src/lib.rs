//! Image and video inpainting pipeline around `ttc-core`: file I/O,
//! experiment manifests and artifact emission for the `ttc` binary.

mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, Result};
pub use manifest::{DataKind, ExperimentManifest, LayoutSpec, MaskSpec};
pub use pipeline::{run_manifest, RunSummary};
