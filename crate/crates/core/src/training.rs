//! Turning labelled apps into classifier samples, and holdout evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::renaming::collect_names;
use crate::detect::stringenc::collect_strings;
use crate::features::{featurize, train, Charset, FeatureVector, Hyper, LinearModel, ModelError};
use crate::ir::AppModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainTarget {
    Renaming,
    #[serde(rename = "stringenc")]
    StringEnc,
}

impl TrainTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "renaming" => Some(TrainTarget::Renaming),
            "stringenc" => Some(TrainTarget::StringEnc),
            _ => None,
        }
    }

    pub fn charset(self) -> Charset {
        match self {
            TrainTarget::Renaming => Charset::identifier(),
            TrainTarget::StringEnc => Charset::ascii(),
        }
    }

    pub fn positive_label(self) -> &'static str {
        match self {
            TrainTarget::Renaming => "obfuscated",
            TrainTarget::StringEnc => "encrypted",
        }
    }

    /// The same text the detector featurizes at scan time.
    pub fn vectorize(self, app: &AppModel) -> FeatureVector {
        match self {
            TrainTarget::Renaming => featurize(&collect_names(app), &self.charset()),
            TrainTarget::StringEnc => featurize(&collect_strings(app), &self.charset()),
        }
    }

    /// Maps a manifest label to a class. Accepts the target's positive label
    /// and a few common spellings for either side.
    pub fn parse_label(self, label: &str) -> Option<bool> {
        let l = label.to_ascii_lowercase();
        if l == self.positive_label() {
            return Some(true);
        }
        match l.as_str() {
            "1" | "true" | "yes" | "positive" => Some(true),
            "0" | "false" | "no" | "negative" | "clean" | "natural" | "plain" | "plaintext" => Some(false),
            _ => None,
        }
    }
}

/// Splits indices into (train, holdout), taking `fraction` of each class
/// into the holdout after a seeded shuffle. Both lists are ascending.
pub fn stratified_split(labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        holdout.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: u64,
    pub true_positive: u64,
    pub true_negative: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub accuracy: f64,
    /// False positives over actual negatives.
    pub fpr: f64,
    /// False negatives over actual positives.
    pub fnr: f64,
}

pub fn evaluate(model: &LinearModel, samples: &[(FeatureVector, bool)]) -> Result<Evaluation, ModelError> {
    let mut e = Evaluation::default();
    for (v, label) in samples {
        let p = model.predict(v)?.positive;
        match (p, *label) {
            (true, true) => e.true_positive += 1,
            (false, false) => e.true_negative += 1,
            (true, false) => e.false_positive += 1,
            (false, true) => e.false_negative += 1,
        }
    }
    e.n = samples.len() as u64;
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    e.accuracy = div(e.true_positive + e.true_negative, e.n);
    e.fpr = div(e.false_positive, e.false_positive + e.true_negative);
    e.fnr = div(e.false_negative, e.false_negative + e.true_positive);
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub train_count: usize,
    pub holdout_count: usize,
    pub holdout: Evaluation,
}

/// Trains on the non-holdout part of a stratified split and evaluates on
/// the rest. The split reuses `hyper.seed`.
pub fn train_with_holdout(
    samples: &[(FeatureVector, bool)],
    hyper: Hyper,
    holdout_fraction: f64,
    label_positive: &str,
) -> Result<(LinearModel, HoldoutResult), ModelError> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(ModelError::BadHyper(format!("holdout fraction {holdout_fraction}")));
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.1).collect();
    let (tr, ho) = stratified_split(&labels, holdout_fraction, hyper.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_set, holdout_set) = (pick(&tr), pick(&ho));
    let model = train(&train_set, hyper, label_positive)?;
    let holdout = evaluate(&model, &holdout_set)?;
    Ok((
        model,
        HoldoutResult {
            train_count: train_set.len(),
            holdout_count: holdout_set.len(),
            holdout,
        },
    ))
}
