//! Few-shot classifiers: multinomial logistic regression over the feature
//! matrix, and the SEED nearest-class-vector baseline.

mod logistic;
mod seed;

pub use logistic::{fit_logistic, fit_logistic_classes, LogisticConfig, LogisticModel};
pub use seed::{difference_vectors, fit_seed, predict_seed, SeedDistance, SeedModel};

/// Index of the largest value; the earliest wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
