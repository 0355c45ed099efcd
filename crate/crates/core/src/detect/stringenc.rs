//! String-encryption classification.

use serde::{Deserialize, Serialize};

use super::crypto::{analyze_crypto_functions, CryptoFnReport};
use super::DetectError;
use crate::config::CryptoConfig;
use crate::features::{featurize, Charset, CharsetId, LinearModel};
use crate::ir::AppModel;

/// Stand-in for every code point above 127.
pub const NON_ASCII_BUCKET: char = '\u{7f}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringEncDetection {
    pub verdict: bool,
    pub score: f64,
    pub string_count: usize,
    /// Filled only when the verdict is positive.
    pub crypto_candidates: Vec<CryptoFnReport>,
}

/// Maps non-ASCII characters onto [`NON_ASCII_BUCKET`].
pub fn bucket_non_ascii(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii() { c } else { NON_ASCII_BUCKET }).collect()
}

/// String literals of non-library methods, with non-ASCII bucketed.
pub fn collect_strings(app: &AppModel) -> Vec<String> {
    app.app_classes()
        .flat_map(|c| &c.methods)
        .flat_map(|m| &m.instructions)
        .filter_map(|i| i.string_literal())
        .map(bucket_non_ascii)
        .collect()
}

fn check_charset(model: &LinearModel) -> Result<(), DetectError> {
    if model.charset != CharsetId::AsciiSet {
        return Err(DetectError::ModelCharsetMismatch {
            expected: CharsetId::AsciiSet,
            found: model.charset,
        });
    }
    Ok(())
}

/// Per-string classification. Strings too short to yield a gram count as
/// plain.
pub fn is_encrypted_string(model: &LinearModel, s: &str) -> bool {
    let v = featurize(&[bucket_non_ascii(s)], &Charset::ascii());
    !v.is_empty() && model.predict(&v).is_ok_and(|p| p.positive)
}

pub fn detect_string_encryption(
    app: &AppModel,
    model: &LinearModel,
    crypto: &CryptoConfig,
) -> Result<StringEncDetection, DetectError> {
    check_charset(model)?;
    let strings = collect_strings(app);
    if strings.is_empty() {
        return Ok(StringEncDetection {
            verdict: false,
            score: 0.0,
            string_count: 0,
            crypto_candidates: Vec::new(),
        });
    }
    let p = model
        .predict(&featurize(&strings, &Charset::ascii()))
        .map_err(DetectError::Model)?;
    let crypto_candidates = if p.positive {
        analyze_crypto_functions(app, &|s: &str| is_encrypted_string(model, s), crypto)
    } else {
        Vec::new()
    };
    Ok(StringEncDetection {
        verdict: p.positive,
        score: p.score,
        string_count: strings.len(),
        crypto_candidates,
    })
}
