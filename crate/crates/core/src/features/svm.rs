//! Linear max-margin classifier over sparse gram vectors.
//!
//! Training minimizes the L2-regularized hinge loss with the Pegasos
//! stochastic subgradient schedule (step `1 / (lambda * t)`). The bias is
//! learned as the weight of a constant feature so it shares the same schedule.
//! Shuffling is driven by a seeded ChaCha generator, so identical inputs give
//! bit-identical models.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ngram::{Charset, CharsetId, FeatureVector, Gram};

/// Value of the constant feature that carries the bias. It sits at the
/// scale of a single gram frequency so the bias is regularized like any
/// other weight; at 1.0 the bias is nearly free and absorbs the whole
/// positive class when that class has no recurring grams.
const BIAS_FEATURE: f64 = 0.008;
const MODEL_FORMAT: &str = "obfuscan-linear-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lambda: 1e-4,
            epochs: 50,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u32,
    pub lambda: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub charset: CharsetId,
    pub weights: BTreeMap<Gram, f64>,
    pub bias: f64,
    pub label_positive: String,
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub positive: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("feature vectors use different character sets")]
    MixedCharsets,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Trains a model on `(vector, is_positive)` samples.
pub fn train(
    samples: &[(FeatureVector, bool)],
    hyper: Hyper,
    label_positive: &str,
) -> Result<LinearModel, ModelError> {
    let Some(first) = samples.first() else {
        return Err(ModelError::SingleClass);
    };
    let charset = first.0.charset;
    if samples.iter().any(|(v, _)| v.charset != charset) {
        return Err(ModelError::MixedCharsets);
    }
    if samples.iter().all(|s| s.1) || samples.iter().all(|s| !s.1) {
        return Err(ModelError::SingleClass);
    }
    if !(hyper.lambda.is_finite() && hyper.lambda > 0.0) || hyper.epochs == 0 {
        return Err(ModelError::BadHyper(format!("{hyper:?}")));
    }

    let vocab: Vec<Gram> = samples
        .iter()
        .flat_map(|(v, _)| v.counts.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<Gram, usize> = vocab.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let bias_idx = vocab.len();
    let rows: Vec<(Vec<(usize, f64)>, f64)> = samples
        .iter()
        .map(|(v, y)| {
            let mut row: Vec<(usize, f64)> = v.counts.iter().map(|(g, x)| (index[g], *x)).collect();
            row.push((bias_idx, BIAS_FEATURE));
            (row, if *y { 1.0 } else { -1.0 })
        })
        .collect();

    // w = scale * v, so the per-step shrink is O(1).
    let mut v = vec![0.0f64; vocab.len() + 1];
    let mut scale = 1.0f64;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut t: u64 = 0;
    // The returned model is the mean iterate of the final epoch; single
    // late steps are large enough to swing the bias on their own.
    let mut avg = vec![0.0f64; v.len()];
    for epoch in 0..hyper.epochs {
        let last = epoch + 1 == hyper.epochs;
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let (row, y) = &rows[i];
            let eta = 1.0 / (hyper.lambda * t as f64);
            let margin = y * scale * row.iter().map(|&(j, x)| v[j] * x).sum::<f64>();
            scale *= 1.0 - eta * hyper.lambda;
            if scale <= 1e-9 {
                for w in &mut v {
                    *w *= scale;
                }
                scale = 1.0;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                for &(j, x) in row {
                    v[j] += step * x;
                }
            }
            if last {
                for (a, w) in avg.iter_mut().zip(&v) {
                    *a += w * scale;
                }
            }
        }
    }
    let n = order.len() as f64;

    let weights = vocab
        .iter()
        .zip(&avg)
        .map(|(g, w)| (*g, w / n))
        .filter(|(_, w)| *w != 0.0)
        .collect();
    Ok(LinearModel {
        charset,
        weights,
        bias: avg[bias_idx] / n * BIAS_FEATURE,
        label_positive: label_positive.to_string(),
        training_meta: TrainingMeta {
            seed: hyper.seed,
            epochs: hyper.epochs,
            lambda: hyper.lambda,
            sample_count: samples.len(),
        },
    })
}

impl LinearModel {
    /// `score = w . v + bias`; positive iff `score > 0`.
    pub fn predict(&self, v: &FeatureVector) -> Result<Prediction, ModelError> {
        if v.charset != self.charset {
            return Err(ModelError::MixedCharsets);
        }
        let dot: f64 = v
            .counts
            .iter()
            .filter_map(|(g, x)| self.weights.get(g).map(|w| w * x))
            .sum();
        let score = dot + self.bias;
        Ok(Prediction {
            positive: score > 0.0,
            score,
        })
    }

    fn validate(&self) -> Result<(), String> {
        let charset = Charset::for_id(self.charset);
        if !self.bias.is_finite() {
            return Err("non-finite bias".into());
        }
        for (g, w) in &self.weights {
            if !w.is_finite() {
                return Err(format!("non-finite weight for `{g}`"));
            }
            if !g.chars().iter().all(|&c| charset.contains(c)) {
                return Err(format!("gram `{g}` outside {}", self.charset));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            charset: self.charset,
            label_positive: self.label_positive.clone(),
            bias: self.bias,
            weights: self.weights.iter().map(|(g, w)| (g.to_string(), *w)).collect(),
            training_meta: self.training_meta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::BadModelFile(m);
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(bad("not a model file".into()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            other => return Err(bad(format!("unsupported version {other:?}"))),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        let weights = file
            .weights
            .into_iter()
            .map(|(g, w)| g.parse::<Gram>().map(|g| (g, w)))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        let model = LinearModel {
            charset: file.charset,
            weights,
            bias: file.bias,
            label_positive: file.label_positive,
            training_meta: file.training_meta,
        };
        model.validate().map_err(bad)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::BadModelFile(e.to_string()))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    charset: CharsetId,
    label_positive: String,
    bias: f64,
    weights: BTreeMap<String, f64>,
    training_meta: TrainingMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ngram::featurize;

    fn toy_set() -> Vec<(FeatureVector, bool)> {
        let id = Charset::identifier();
        (0..20)
            .map(|i| {
                let positive = i % 2 == 0;
                (featurize(&[if positive { "aaa" } else { "zzz" }], &id), positive)
            })
            .collect()
    }

    fn vector(pairs: &[(&str, f64)], charset: CharsetId) -> FeatureVector {
        FeatureVector {
            charset,
            counts: pairs.iter().map(|(g, x)| (g.parse().unwrap(), *x)).collect(),
            normalized: true,
        }
    }

    fn model(weights: &[(&str, f64)], bias: f64) -> LinearModel {
        LinearModel {
            charset: CharsetId::IdentifierSet,
            weights: weights.iter().map(|(g, w)| (g.parse().unwrap(), *w)).collect(),
            bias,
            label_positive: "obfuscated".into(),
            training_meta: TrainingMeta {
                seed: 0,
                epochs: 0,
                lambda: 0.0,
                sample_count: 0,
            },
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let samples = toy_set();
        let m = train(&samples, Hyper::default(), "obfuscated").unwrap();
        for (v, y) in &samples {
            assert_eq!(m.predict(v).unwrap().positive, *y);
        }
        assert_eq!(m.training_meta.sample_count, 20);
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&toy_set(), Hyper::default(), "x").unwrap();
        let b = train(&toy_set(), Hyper::default(), "x").unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn training_errors() {
        let mut s = toy_set();
        s[0].0.charset = CharsetId::AsciiSet;
        assert_eq!(train(&s, Hyper::default(), "x"), Err(ModelError::MixedCharsets));
        let s: Vec<_> = toy_set().into_iter().map(|(v, _)| (v, true)).collect();
        assert_eq!(train(&s, Hyper::default(), "x"), Err(ModelError::SingleClass));
        assert_eq!(train(&[], Hyper::default(), "x"), Err(ModelError::SingleClass));
    }

    #[test]
    fn predict_examples() {
        let m = model(&[], -0.5);
        let p = m.predict(&FeatureVector::empty(CharsetId::IdentifierSet)).unwrap();
        assert!(!p.positive);
        assert_eq!(p.score, -0.5);

        let m = model(&[("abc", 2.0)], 0.0);
        let p = m.predict(&vector(&[("abc", 1.0)], CharsetId::IdentifierSet)).unwrap();
        assert!(p.positive);
        assert_eq!(p.score, 2.0);

        let tie = model(&[], 0.0);
        assert!(!tie.predict(&FeatureVector::empty(CharsetId::IdentifierSet)).unwrap().positive);
        assert_eq!(
            m.predict(&FeatureVector::empty(CharsetId::AsciiSet)),
            Err(ModelError::MixedCharsets)
        );
    }

    #[test]
    fn model_file_round_trip() {
        let m = train(&toy_set(), Hyper::default(), "obfuscated").unwrap();
        assert_eq!(LinearModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn bad_model_files() {
        let m = model(&[("abc", 1.5)], 0.25);
        let wrong_version = m.to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(LinearModel::from_json(&wrong_version), Err(ModelError::BadModelFile(_))));
        assert!(matches!(LinearModel::from_json(""), Err(ModelError::BadModelFile(_))));
        let bad_gram = m.to_json().replace("\"abc\"", "\"a.c\"");
        assert!(matches!(LinearModel::from_json(&bad_gram), Err(ModelError::BadModelFile(_))));
    }
}
