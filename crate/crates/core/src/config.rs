//! Scan configuration (TOML).
//!
//! ```toml
//! renaming_model = "models/renaming.json"
//! stringenc_model = "models/stringenc.json"
//! parallelism = 4
//!
//! [overload]
//! composite_threshold = 0.35
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable naming a config file when none is given explicitly.
pub const CONFIG_ENV: &str = "OBFUSCAN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverloadConfig {
    pub composite_threshold: f64,
    pub group_size_floor: usize,
}

impl Default for OverloadConfig {
    fn default() -> Self {
        OverloadConfig {
            composite_threshold: 0.35,
            group_size_floor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CryptoConfig {
    /// Weights of bit/loop ratio, JCE calls, string ops, encrypted-argument
    /// frequency.
    pub weights: [f64; 4],
    pub threshold: f64,
}

impl Default for CryptoConfig {
    fn default() -> Self {
        CryptoConfig {
            weights: [0.35, 0.25, 0.15, 0.25],
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    pub entropy_threshold: f64,
    pub min_asset_size: u64,
    pub wrapper_max_instructions: usize,
}

impl Default for PackingConfig {
    fn default() -> Self {
        PackingConfig {
            entropy_threshold: 7.2,
            min_asset_size: 16 * 1024,
            wrapper_max_instructions: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub renaming_model: Option<PathBuf>,
    pub stringenc_model: Option<PathBuf>,
    /// Library prefix list; the bundled list when absent.
    pub libs: Option<PathBuf>,
    /// Packer signature DB; the bundled DB when absent.
    pub signatures: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub top_n: usize,
    /// Techniques to run, by registry name. All registered ones when absent.
    pub techniques: Option<Vec<String>>,
    pub overload: OverloadConfig,
    pub crypto: CryptoConfig,
    pub packing: PackingConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            renaming_model: None,
            stringenc_model: None,
            libs: None,
            signatures: None,
            parallelism: None,
            top_n: 10,
            techniques: None,
            overload: OverloadConfig::default(),
            crypto: CryptoConfig::default(),
            packing: PackingConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ScanConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScanConfig = toml::from_str(text)?;
        cfg.check_values()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and checks
    /// that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(ConfigError::MissingPath(p.clone()));
            }
        }
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [
            &mut self.renaming_model,
            &mut self.stringenc_model,
            &mut self.libs,
            &mut self.signatures,
        ]
        .into_iter()
        .flatten()
    }

    fn check_values(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.parallelism == Some(0) {
            return invalid("parallelism must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.overload.composite_threshold) {
            return invalid("overload.composite_threshold must be in [0, 1]");
        }
        if self.crypto.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("crypto.weights must be non-negative");
        }
        if !(0.0..=8.0).contains(&self.packing.entropy_threshold) {
            return invalid("packing.entropy_threshold must be in [0, 8]");
        }
        Ok(())
    }
}
