//! 3-gram featurization and the linear classifier used by the renaming and
//! string-encryption detectors.

mod ngram;
mod svm;

pub use ngram::{count_grams, featurize, Charset, CharsetId, FeatureVector, Gram, GRAM_LEN};
pub use svm::{train, Hyper, LinearModel, ModelError, Prediction, TrainingMeta, MODEL_VERSION};
