//! Diagonal-covariance Gaussian mixtures fitted by EM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_vectors;
use crate::error::{Error, Result};
use crate::par;
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dimension(&self) -> usize {
        self.means[0].len()
    }

    fn component_log_densities(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                let mut s = self.weights[c].ln();
                for ((x, m), var) in v.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                    s -= 0.5 * (LN_2PI + var.ln() + (x - m).powi(2) / var);
                }
                s
            })
            .collect()
    }

    pub fn log_density(&self, v: &[f64]) -> f64 {
        let terms = self.component_log_densities(v);
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    /// Negative log density.
    pub fn surprisal(&self, v: &[f64]) -> f64 {
        -self.log_density(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl GmmParams {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmParams { k, seed, max_iter: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-point log-likelihood before each M-step and after the last.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    let mut centers = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..data.len())
        };
        let c = data[pick].clone();
        for (slot, x) in d2.iter_mut().zip(data) {
            *slot = slot.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

fn initial_model(data: &[Vec<f64>], k: usize, seed: u64) -> GmmModel {
    let n = data.len();
    let d = data[0].len();
    let centers = kmeans_pp(data, k, seed);
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let m = data.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            (data.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR)
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in data.iter().enumerate() {
        let c = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .expect("k >= 1");
        members[c].push(i);
    }
    let mut model = GmmModel { weights: Vec::new(), means: Vec::new(), variances: Vec::new() };
    for (c, idx) in members.iter().enumerate() {
        model.weights.push((idx.len().max(1)) as f64);
        if idx.len() < 2 {
            model.means.push(centers[c].clone());
            model.variances.push(global_var.clone());
            continue;
        }
        let m: Vec<f64> = (0..d).map(|j| idx.iter().map(|&i| data[i][j]).sum::<f64>() / idx.len() as f64).collect();
        let v: Vec<f64> = (0..d)
            .map(|j| (idx.iter().map(|&i| (data[i][j] - m[j]).powi(2)).sum::<f64>() / idx.len() as f64).max(VARIANCE_FLOOR))
            .collect();
        model.means.push(m);
        model.variances.push(v);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    model
}

/// EM with k-means++ initialization. Stops when the mean log-likelihood
/// improves by less than `tol` or after `max_iter` iterations.
pub fn gmm_fit(vectors: &[Vec<f64>], params: GmmParams) -> Result<GmmFit> {
    if params.k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if vectors.len() < params.k {
        return Err(Error::invalid(format!("{} vectors for {} components", vectors.len(), params.k)));
    }
    let d = check_vectors(vectors, 1)?;
    let n = vectors.len() as f64;
    let k = params.k;
    let mut model = initial_model(vectors, k, params.seed);
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iter {
        // E-step: per-point responsibilities and log-likelihood
        let per_point: Vec<(Vec<f64>, f64)> = par::map_slice(vectors, |x| {
            let terms = model.component_log_densities(x);
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            (terms.iter().map(|t| (t - lse).exp()).collect(), lse)
        });
        let ll = per_point.iter().map(|p| p.1).sum::<f64>() / n;
        if let Some(&prev) = history.last() {
            if ll - prev < params.tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        // M-step
        let mut next = model.clone();
        for c in 0..k {
            let nk: f64 = per_point.iter().map(|p| p.0[c]).sum();
            if nk < 1e-12 {
                continue;
            }
            next.weights[c] = nk / n;
            for j in 0..d {
                let mean = per_point.iter().zip(vectors).map(|(p, x)| p.0[c] * x[j]).sum::<f64>() / nk;
                let var = per_point.iter().zip(vectors).map(|(p, x)| p.0[c] * (x[j] - mean).powi(2)).sum::<f64>() / nk;
                next.means[c][j] = mean;
                next.variances[c][j] = var.max(VARIANCE_FLOOR);
            }
        }
        let total: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= total);
        model = next;
    }
    if !converged {
        let ll = vectors.iter().map(|x| model.log_density(x)).sum::<f64>() / n;
        history.push(ll);
    }
    Ok(GmmFit { model, log_likelihoods: history, converged })
}

/// Mean surprisal of the corrupted set minus that of the fixed set.
pub fn surprisal_gap(model: &GmmModel, corrupted: &[Vec<f64>], fixed: &[Vec<f64>]) -> Result<f64> {
    if corrupted.is_empty() || fixed.is_empty() {
        return Err(Error::invalid("surprisal gap needs both sets nonempty"));
    }
    let mean = |set: &[Vec<f64>]| set.iter().map(|v| model.surprisal(v)).sum::<f64>() / set.len() as f64;
    Ok(mean(corrupted) - mean(fixed))
}
