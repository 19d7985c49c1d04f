use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::Label;
use crate::error::{Error, Result};

fn check_lengths(pred: &[Label], gold: &[Label]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::DimensionMismatch { expected: gold.len(), got: pred.len() });
    }
    if gold.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    Ok(())
}

/// F1 per label in label order. A label that is neither predicted nor
/// present scores 0.
pub fn classwise_f1(pred: &[Label], gold: &[Label]) -> Result<[f64; 3]> {
    check_lengths(pred, gold)?;
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fnn = [0usize; 3];
    for (p, g) in pred.iter().zip(gold) {
        if p == g {
            tp[p.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fnn[g.index()] += 1;
        }
    }
    Ok(std::array::from_fn(|c| {
        let denom = 2 * tp[c] + fp[c] + fnn[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    }))
}

/// Unweighted mean of the per-label F1 scores.
pub fn macro_f1(pred: &[Label], gold: &[Label]) -> Result<f64> {
    Ok(classwise_f1(pred, gold)?.iter().sum::<f64>() / 3.0)
}

pub fn accuracy(pred: &[Label], gold: &[Label]) -> Result<f64> {
    check_lengths(pred, gold)?;
    Ok(pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64)
}

/// Mean and sample standard deviation. A single value has std 0, flagged
/// by the returned boolean.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64, bool)> {
    if values.is_empty() {
        return Err(Error::Validation("cannot aggregate an empty cell".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0, true));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], 0.0, false));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt(), false))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value, normal approximation with tie and continuity
    /// corrections.
    pub p_value: f64,
}

/// Mann-Whitney U test of `x` against `y`. Needs at least two values per
/// sample.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Validation("Mann-Whitney needs at least two values per sample".into()));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    if all.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in Mann-Whitney sample".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += rank * all[i..=j].iter().filter(|(_, in_x)| *in_x).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mu = n1 * n2 / 2.0;
    let sigma = (n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))).sqrt();
    let p_value = if sigma == 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / sigma;
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(MannWhitney { u, p_value })
}
