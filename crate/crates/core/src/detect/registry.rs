//! Detection techniques behind a common trait, registered by name.

use serde::{Deserialize, Serialize};

use super::overloading::{detect_overloading, OverloadReport};
use super::packing::{detect_packing, PackerSignature, PackingDetection};
use super::reflection::{find_reflection_sites, ReflectionSite};
use super::renaming::{detect_renaming, RenamingDetection};
use super::stringenc::{detect_string_encryption, StringEncDetection};
use super::DetectError;
use crate::config::ScanConfig;
use crate::features::LinearModel;
use crate::ir::AppModel;

/// Shared, read-only inputs of a scan.
#[derive(Debug, Clone, Copy)]
pub struct TechniqueContext<'a> {
    pub renaming_model: Option<&'a LinearModel>,
    pub stringenc_model: Option<&'a LinearModel>,
    pub signatures: &'a [PackerSignature],
    pub config: &'a ScanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub sites: Vec<ReflectionSite>,
    pub uses_reflection: bool,
}

impl ReflectionReport {
    pub fn new(sites: Vec<ReflectionSite>) -> Self {
        ReflectionReport {
            uses_reflection: !sites.is_empty(),
            sites,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    Renaming(RenamingDetection),
    Overloading(OverloadReport),
    StringEnc(StringEncDetection),
    Reflection(ReflectionReport),
    Packing(PackingDetection),
}

pub trait Technique: Send + Sync {
    /// Registry key, also used in config `techniques` lists.
    fn name(&self) -> &'static str;

    /// Whether the technique needs parsed bytecode. Techniques that do are
    /// skipped, with a warning, for archives without usable DEX.
    fn requires_code(&self) -> bool {
        true
    }

    fn run(&self, app: &AppModel, ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError>;
}

pub struct Renaming;
pub struct Overloading;
pub struct StringEncryption;
pub struct Reflection;
pub struct Packing;

impl Technique for Renaming {
    fn name(&self) -> &'static str {
        "renaming"
    }

    fn run(&self, app: &AppModel, ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError> {
        let model = ctx.renaming_model.ok_or(DetectError::MissingModel("renaming"))?;
        detect_renaming(app, model).map(Finding::Renaming)
    }
}

impl Technique for Overloading {
    fn name(&self) -> &'static str {
        "overloading"
    }

    fn run(&self, app: &AppModel, ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError> {
        Ok(Finding::Overloading(detect_overloading(app, &ctx.config.overload)))
    }
}

impl Technique for StringEncryption {
    fn name(&self) -> &'static str {
        "stringenc"
    }

    fn run(&self, app: &AppModel, ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError> {
        let model = ctx.stringenc_model.ok_or(DetectError::MissingModel("stringenc"))?;
        detect_string_encryption(app, model, &ctx.config.crypto).map(Finding::StringEnc)
    }
}

impl Technique for Reflection {
    fn name(&self) -> &'static str {
        "reflection"
    }

    fn run(&self, app: &AppModel, _ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError> {
        Ok(Finding::Reflection(ReflectionReport::new(find_reflection_sites(app))))
    }
}

impl Technique for Packing {
    fn name(&self) -> &'static str {
        "packing"
    }

    fn requires_code(&self) -> bool {
        false
    }

    fn run(&self, app: &AppModel, ctx: &TechniqueContext<'_>) -> Result<Finding, DetectError> {
        Ok(Finding::Packing(detect_packing(app, ctx.signatures, &ctx.config.packing)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("technique `{0}` is already registered")]
    Duplicate(String),
    #[error("unknown technique `{0}`")]
    Unknown(String),
}

#[derive(Default)]
pub struct TechniqueRegistry {
    entries: Vec<Box<dyn Technique>>,
}

impl TechniqueRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The five built-in techniques.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        let builtins: [Box<dyn Technique>; 5] = [
            Box::new(Renaming),
            Box::new(Overloading),
            Box::new(StringEncryption),
            Box::new(Reflection),
            Box::new(Packing),
        ];
        for t in builtins {
            r.register(t).expect("built-in names are distinct");
        }
        r
    }

    pub fn register(&mut self, t: Box<dyn Technique>) -> Result<(), RegistryError> {
        if self.get(t.name()).is_some() {
            return Err(RegistryError::Duplicate(t.name().to_string()));
        }
        self.entries.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Technique> {
        self.entries.iter().find(|t| t.name() == name).map(|t| t.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|t| t.name()).collect()
    }

    /// Techniques to run, in registration order when `names` is `None` and
    /// in the given order otherwise.
    pub fn select(&self, names: Option<&[String]>) -> Result<Vec<&dyn Technique>, RegistryError> {
        match names {
            None => Ok(self.entries.iter().map(|t| t.as_ref()).collect()),
            Some(names) => names
                .iter()
                .map(|n| self.get(n).ok_or_else(|| RegistryError::Unknown(n.clone())))
                .collect(),
        }
    }
}
