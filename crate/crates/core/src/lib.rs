//! Static detection of Android obfuscation techniques.

pub mod config;
pub mod detect;
pub mod features;
pub mod ingest;
pub mod ir;
pub mod report;
pub mod training;
