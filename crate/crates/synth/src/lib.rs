//! Synthetic inputs for testing obfuscan: a DEX assembler, an APK writer,
//! generated apps with planted obfuscation and labelled corpora.

pub mod apk;
pub mod apps;
pub mod corpus;
pub mod dex;

pub use apk::ApkBuilder;
pub use apps::{build_app, names_app, strings_app, AppSpec, SynthApp};
pub use dex::{assemble_dex, AssembleError};
