//! L2-regularized logistic regression on standardized features, and
//! model-agnostic permutation importance.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{f05_of, require_both_classes};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::par;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams { l2: 1e-3, epochs: 2000, lr: 0.5, seed: 0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `l2/2 * |w|^2`, with its gradient `(dw, db)`.
pub fn logistic_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
        gb += r;
    }
    loss /= n;
    loss += 0.5 * l2 * w.iter().map(|c| c * c).sum::<f64>();
    for (g, c) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * c;
    }
    (loss, gw, gb / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Input columns kept after dropping constant features.
    pub retained: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub input_dimension: usize,
}

impl LinearClassifier {
    pub fn fit(rows: &[Vec<f64>], labels: &[Label], params: ClassifierParams) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid("row and label counts differ"));
        }
        require_both_classes(labels)?;
        let d = super::check_vectors(rows, 2)?;
        let n = rows.len() as f64;
        let mut retained = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for j in 0..d {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let s = (rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            if s > 0.0 {
                retained.push(j);
                mean.push(m);
                std.push(s);
            } else {
                log::debug!("dropping constant feature column {j}");
            }
        }
        let mut model = LinearClassifier {
            retained,
            mean,
            std,
            weights: Vec::new(),
            bias: 0.0,
            input_dimension: d,
        };
        let x: Vec<Vec<f64>> = rows.iter().map(|r| model.standardize(r)).collect();
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
        let mut rng = seed::rng(params.seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let mut w: Vec<f64> = (0..model.retained.len()).map(|_| init.sample(&mut rng)).collect();
        let mut b = 0.0;
        for _ in 0..params.epochs {
            let (_, gw, gb) = logistic_objective(&x, &y, &w, b, params.l2);
            for (c, g) in w.iter_mut().zip(&gw) {
                *c -= params.lr * g;
            }
            b -= params.lr * gb;
        }
        model.weights = w;
        model.bias = b;
        Ok(model)
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.retained
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&j, (m, s))| (row[j] - m) / s)
            .collect()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let x = self.standardize(row);
        sigmoid(self.bias + x.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }

    pub fn predict(&self, row: &[f64]) -> Label {
        if self.predict_proba(row) > 0.5 {
            Label::Corrupted
        } else {
            Label::Correct
        }
    }
}

/// Anything that labels feature rows.
pub trait Predictor: Sync {
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Vec<Label>;
}

impl Predictor for LinearClassifier {
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Vec<Label> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

impl<F: Fn(&[f64]) -> Label + Sync> Predictor for F {
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Vec<Label> {
        rows.iter().map(|r| self(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub mean: f64,
    pub std: f64,
}

/// Drop in F0.5 when one column is shuffled, averaged over `repeats`.
/// Column `f`, repeat `r` shuffles with a stream derived from `(seed, f, r)`.
pub fn permutation_importance<P: Predictor>(
    predictor: &P,
    rows: &[Vec<f64>],
    labels: &[Label],
    repeats: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>> {
    if rows.len() != labels.len() {
        return Err(Error::invalid("row and label counts differ"));
    }
    if repeats == 0 {
        return Err(Error::invalid("permutation importance needs at least one repeat"));
    }
    let d = super::check_vectors(rows, 1)?;
    let base = f05_of(&predictor.predict_rows(rows), labels);
    Ok(par::map_range(d, |f| {
        let drops: Vec<f64> = (0..repeats)
            .map(|r| {
                let mut rng = seed::rng_for(seed::derive(seed, f as u64), r as u64);
                let mut column: Vec<f64> = rows.iter().map(|row| row[f]).collect();
                column.shuffle(&mut rng);
                let shuffled: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(&column)
                    .map(|(row, &v)| {
                        let mut row = row.clone();
                        row[f] = v;
                        row
                    })
                    .collect();
                base - f05_of(&predictor.predict_rows(&shuffled), labels)
            })
            .collect();
        let mean = drops.iter().sum::<f64>() / repeats as f64;
        let var = drops.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / repeats as f64;
        FeatureImportance { mean, std: var.sqrt() }
    }))
}

/// Shuffle stream used for column `f`, repeat `r`; exposed for oracles.
pub fn permutation_rng(seed: u64, feature: usize, repeat: usize) -> seed::DetRng {
    seed::rng_for(seed::derive(seed, feature as u64), repeat as u64)
}
