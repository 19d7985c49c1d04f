use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::argmax;
use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Weight of the squared-norm penalty on the weights; the bias is not
    /// penalised.
    pub reg_strength: f64,
    pub max_iter: usize,
    /// Stop when the largest absolute gradient entry falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            reg_strength: 1.0,
            max_iter: 1000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl LogisticConfig {
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }
}

/// Multinomial logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `classes.len()` rows of `n_features` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub classes: Vec<Label>,
    pub reg_strength: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub config_hash: String,
}

const MEMORY: usize = 10;

struct Problem<'a> {
    rows: &'a [&'a [f64]],
    targets: Vec<usize>,
    classes: usize,
    dim: usize,
    reg: f64,
}

impl Problem<'_> {
    /// Objective and gradient at `theta` = [W (row-major), b].
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (k, nc) = (self.dim, self.classes);
        let (w, b) = theta.split_at(nc * k);
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        for (x, &y) in self.rows.iter().zip(&self.targets) {
            let z: Vec<f64> = (0..nc)
                .map(|c| b[c] + w[c * k..(c + 1) * k].iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            for c in 0..nc {
                let r = (z[c] - lse).exp() - f64::from(u8::from(c == y));
                for (g, v) in grad[c * k..(c + 1) * k].iter_mut().zip(x.iter()) {
                    *g += r * v;
                }
                grad[nc * k + c] += r;
            }
        }
        for (i, wi) in w.iter().enumerate() {
            loss += 0.5 * self.reg * wi * wi;
            grad[i] += self.reg * wi;
        }
        (loss, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Limited-memory BFGS with a backtracking Armijo line search, starting at
/// zero. Returns (theta, iterations, converged).
fn minimize(p: &Problem, max_iter: usize, tol: f64) -> (Vec<f64>, usize, bool) {
    let n = p.classes * (p.dim + 1);
    let mut x = vec![0.0; n];
    let (mut f, mut g) = p.eval(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    for iter in 0..max_iter {
        if max_abs(&g) <= tol {
            return (x, iter, true);
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / max_abs(&g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = p.eval(&cand);
            // Near the optimum rounding in f dominates; tolerate a few ulps.
            if fc <= f + 1e-4 * step * slope + 8.0 * f64::EPSILON * f.abs() || step < 1e-20 {
                break (cand, fc, gc);
            }
            step *= 0.5;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let stalled = f - f_new <= f64::EPSILON * f.abs().max(1.0) && max_abs(&s) == 0.0;
        x = x_new;
        f = f_new;
        g = g_new;
        if stalled {
            return (x, iter + 1, max_abs(&g) <= tol);
        }
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
    }
    let converged = max_abs(&g) <= tol;
    (x, max_iter, converged)
}

fn check_rows(rows: &[&[f64]]) -> Result<usize> {
    let dim = rows.first().map_or(0, |r| r.len());
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
    }
    Ok(dim)
}

/// Fits the three-class classifier. Every label must occur at least once.
pub fn fit_logistic(rows: &[&[f64]], labels: &[Label], cfg: &LogisticConfig) -> Result<LogisticModel> {
    fit_logistic_classes(rows, labels, &Label::ALL, cfg)
}

/// Fits over an explicit class list (at least two, in the order used for
/// tie-breaking). Every listed class must occur in `labels` and no other.
pub fn fit_logistic_classes(
    rows: &[&[f64]],
    labels: &[Label],
    classes: &[Label],
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: rows.len(), got: labels.len() });
    }
    if classes.len() < 2 {
        return Err(Error::Config("logistic regression needs at least two classes".into()));
    }
    for class in classes {
        if !labels.contains(class) {
            return Err(Error::InsufficientClass {
                class: class.to_string(),
                available: 0,
                required: 1,
            });
        }
    }
    let targets = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::Validation(format!("label {l} is not among the model classes")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let dim = check_rows(rows)?;
    let nc = classes.len();
    let problem = Problem {
        rows,
        targets,
        classes: nc,
        dim,
        reg: cfg.reg_strength,
    };
    let (theta, iterations, converged) = minimize(&problem, cfg.max_iter, cfg.tol);
    if !converged {
        log::debug!("logistic fit stopped after {iterations} iterations without reaching tol {}", cfg.tol);
    }
    let (w, b) = theta.split_at(nc * dim);
    Ok(LogisticModel {
        weights: (0..nc).map(|c| w[c * dim..(c + 1) * dim].to_vec()).collect(),
        bias: b.to_vec(),
        classes: classes.to_vec(),
        reg_strength: cfg.reg_strength,
        seed: cfg.seed,
        iterations,
        converged,
        config_hash: cfg.hash(),
    })
}

impl LogisticModel {
    /// A model with all parameters zero.
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![vec![0.0; n_features]; Label::ALL.len()],
            bias: vec![0.0; Label::ALL.len()],
            classes: Label::ALL.to_vec(),
            reg_strength: 0.0,
            seed: 0,
            iterations: 0,
            converged: true,
            config_hash: String::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Class probabilities per row, in `classes` order.
    pub fn predict_proba(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let k = self.n_features();
        rows.iter()
            .map(|x| {
                if x.len() != k {
                    return Err(Error::DimensionMismatch { expected: k, got: x.len() });
                }
                let z: Vec<f64> = self.weights.iter().zip(&self.bias).map(|(w, b)| b + dot(w, x)).collect();
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Ok(e.into_iter().map(|v| v / s).collect())
            })
            .collect()
    }

    /// Most probable label per row; ties go to the earlier class.
    pub fn predict(&self, rows: &[&[f64]]) -> Result<Vec<Label>> {
        Ok(self
            .predict_proba(rows)?
            .iter()
            .map(|p| self.classes[argmax(p)])
            .collect())
    }
}
