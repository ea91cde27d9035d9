//! Unsupervised outlier models over embedding vectors: Gaussian KDE,
//! isolation forest and angle-based outlier detection.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_vectors, threshold_by_contamination};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, DetRng};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Product-Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub points: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
}

impl KdeModel {
    /// Scott's rule per dimension: `n^(-1/(d+4)) * sigma`.
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        let d = check_vectors(vectors, 2)?;
        let n = vectors.len() as f64;
        let factor = n.powf(-1.0 / (d as f64 + 4.0));
        let bandwidth = (0..d)
            .map(|j| {
                let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n;
                let var = vectors.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let mut sigma = var.sqrt();
                if sigma == 0.0 {
                    log::warn!("KDE dimension {j} has zero variance; using jitter bandwidth");
                    sigma = 1e-12;
                }
                factor * sigma
            })
            .collect();
        Ok(KdeModel { points: vectors.to_vec(), bandwidth })
    }

    pub fn with_bandwidth(points: Vec<Vec<f64>>, bandwidth: Vec<f64>) -> Result<Self> {
        let d = check_vectors(&points, 1)?;
        if bandwidth.len() != d || bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("bandwidth must be positive, one per dimension"));
        }
        Ok(KdeModel { points, bandwidth })
    }

    pub fn log_density(&self, v: &[f64]) -> f64 {
        let norm: f64 = self.bandwidth.iter().map(|h| h.ln() + LN_SQRT_2PI).sum();
        let terms: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let q: f64 = p
                    .iter()
                    .zip(v)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum();
                -0.5 * q - norm
            })
            .collect();
        log_sum_exp(&terms) - (self.points.len() as f64).ln()
    }

    pub fn score(&self, v: &[f64]) -> f64 {
        -self.log_density(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationParams {
    pub n_trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsolationParams {
    fn default() -> Self {
        IsolationParams { n_trees: 100, subsample: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `n` keys.
fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

fn build(data: &[Vec<f64>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut DetRng) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    let d = data[0].len();
    let mut ranges = Vec::with_capacity(d);
    for j in 0..d {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(data[i][j]), hi.max(data[i][j]))
        });
        if lo < hi {
            ranges.push((j, lo, hi));
        }
    }
    if ranges.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
    let value = lo + (hi - lo) * rng.gen::<f64>();
    let mut split = 0;
    for k in 0..idx.len() {
        if data[idx[k]][feature] < value {
            idx.swap(k, split);
            split += 1;
        }
    }
    let (l, r) = idx.split_at_mut(split);
    Node::Split {
        feature,
        value,
        left: Box::new(build(data, l, depth + 1, limit, rng)),
        right: Box::new(build(data, r, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, v: &[f64]) -> f64 {
    let mut node = node;
    let mut depth = 0.0;
    loop {
        match node {
            Node::Leaf { size } => return depth + c_factor(*size),
            Node::Split { feature, value, left, right } => {
                node = if v[*feature] < *value { left } else { right };
                depth += 1.0;
            }
        }
    }
}

/// Classic isolation forest with axis-parallel random splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub params: IsolationParams,
    pub dimension: usize,
    sample_size: usize,
    trees: Vec<Node>,
}

impl IsolationForest {
    /// Trees are grown in parallel, tree `t` from a stream derived from `(seed, t)`.
    pub fn fit(vectors: &[Vec<f64>], params: IsolationParams) -> Result<Self> {
        let d = check_vectors(vectors, 2)?;
        if params.n_trees == 0 || params.subsample < 2 {
            return Err(Error::invalid("isolation forest needs trees and a subsample of at least 2"));
        }
        let psi = params.subsample.min(vectors.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = par::map_range(params.n_trees, |t| {
            let mut rng = seed::rng_for(params.seed, t as u64);
            let mut idx = index::sample(&mut rng, vectors.len(), psi).into_vec();
            build(vectors, &mut idx, 0, limit, &mut rng)
        });
        Ok(IsolationForest { params, dimension: d, sample_size: psi, trees })
    }

    /// `2^(-E[h(v)] / c(psi))`, in (0, 1).
    pub fn score(&self, v: &[f64]) -> f64 {
        let mean = self.trees.iter().map(|t| path_length(t, v)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean / c_factor(self.sample_size))
    }
}

/// Variance of the distance-weighted cosines `<a,b> / (|a|^2 |b|^2)` over
/// all reference pairs, where `a`, `b` are offsets from `v`. Reference points
/// coinciding with `v` and the index `skip` are ignored.
pub fn abod_variance(reference: &[Vec<f64>], v: &[f64], skip: Option<usize>) -> Result<f64> {
    let offsets: Vec<(Vec<f64>, f64)> = reference
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .filter_map(|(_, r)| {
            let a: Vec<f64> = r.iter().zip(v).map(|(x, y)| x - y).collect();
            let n2: f64 = a.iter().map(|x| x * x).sum();
            (n2 > 0.0).then_some((a, n2))
        })
        .collect();
    if offsets.len() < 2 {
        return Err(Error::domain("angle-based score needs two reference points distinct from the query"));
    }
    let (mut n, mut sum, mut sum2) = (0.0, 0.0, 0.0);
    for i in 0..offsets.len() {
        let (a, na) = &offsets[i];
        for (b, nb) in &offsets[i + 1..] {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let t = dot / (na * nb);
            n += 1.0;
            sum += t;
            sum2 += t * t;
        }
    }
    let mean = sum / n;
    Ok((sum2 / n - mean * mean).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbodModel {
    pub reference: Vec<Vec<f64>>,
}

impl AbodModel {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        check_vectors(vectors, 3)?;
        Ok(AbodModel { reference: vectors.to_vec() })
    }

    pub fn score(&self, v: &[f64]) -> Result<f64> {
        abod_variance(&self.reference, v, None).map(|var| -var)
    }

    fn training_score(&self, i: usize) -> Result<f64> {
        abod_variance(&self.reference, &self.reference[i], Some(i)).map(|var| -var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Kde,
    Iforest,
    Abod,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde" => Ok(Algorithm::Kde),
            "iforest" => Ok(Algorithm::Iforest),
            "abod" => Ok(Algorithm::Abod),
            other => Err(Error::invalid(format!("unknown outlier algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum OutlierDetector {
    Kde(KdeModel),
    Iforest(IsolationForest),
    Abod(AbodModel),
}

impl OutlierDetector {
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        match self {
            OutlierDetector::Kde(m) => Ok(m.score(v)),
            OutlierDetector::Iforest(m) => Ok(m.score(v)),
            OutlierDetector::Abod(m) => m.score(v),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            OutlierDetector::Kde(m) => m.bandwidth.len(),
            OutlierDetector::Iforest(m) => m.dimension,
            OutlierDetector::Abod(m) => m.reference[0].len(),
        }
    }
}

/// A fitted detector plus the decision threshold taken from its training scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierModel {
    pub detector: OutlierDetector,
    pub contamination: f64,
    pub score_threshold: f64,
}

impl OutlierModel {
    pub fn fit(algorithm: Algorithm, vectors: &[Vec<f64>], contamination: f64, seed: u64) -> Result<Self> {
        if !(contamination > 0.0 && contamination <= 0.5) {
            return Err(Error::invalid(format!("contamination {contamination} outside (0, 0.5]")));
        }
        let detector = match algorithm {
            Algorithm::Kde => OutlierDetector::Kde(KdeModel::fit(vectors)?),
            Algorithm::Iforest => {
                OutlierDetector::Iforest(IsolationForest::fit(vectors, IsolationParams { seed, ..Default::default() })?)
            }
            Algorithm::Abod => OutlierDetector::Abod(AbodModel::fit(vectors)?),
        };
        let training: Vec<f64> = match &detector {
            OutlierDetector::Abod(m) => {
                par::map_range(vectors.len(), |i| m.training_score(i)).into_iter().collect::<Result<_>>()?
            }
            d => par::map_slice(vectors, |v| d.score(v)).into_iter().collect::<Result<_>>()?,
        };
        let score_threshold = threshold_by_contamination(&training, contamination)?;
        Ok(OutlierModel { detector, contamination, score_threshold })
    }

    pub fn score(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.detector.dimension() {
            return Err(Error::invalid(format!(
                "vector dimension {} does not match model dimension {}",
                v.len(),
                self.detector.dimension()
            )));
        }
        self.detector.score(v)
    }

    pub fn score_all(&self, vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
        par::map_slice(vectors, |v| self.score(v)).into_iter().collect()
    }

    /// `true` means outlier (label 1).
    pub fn is_outlier(&self, score: f64) -> bool {
        score > self.score_threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn ball(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn kde_two_point_closed_form() {
        let m = KdeModel::with_bandwidth(vec![vec![0.0], vec![2.0]], vec![0.5]).unwrap();
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for x in [-1.0, 0.0, 0.7, 1.0, 3.5] {
            let expected = 0.5 * (phi(x / 0.5) / 0.5 + phi((x - 2.0) / 0.5) / 0.5);
            assert!((m.log_density(&[x]).exp() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn kde_orders_by_density() {
        let data = ball(200, 2, 1);
        let m = KdeModel::fit(&data).unwrap();
        assert!(m.score(&data[0]) < m.score(&[10.0, 10.0]));
        let flat = vec![vec![1.0, 2.0]; 5];
        let m = KdeModel::fit(&flat).unwrap();
        assert!(m.score(&[1.0, 2.0]).is_finite());
    }

    #[test]
    fn iforest_finds_planted_point() {
        let mut data = ball(500, 3, 2);
        data.push(vec![10.0, 10.0, 10.0]);
        let f = IsolationForest::fit(&data, IsolationParams { seed: 4, ..Default::default() }).unwrap();
        let scores: Vec<f64> = data.iter().map(|v| f.score(v)).collect();
        let top = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(top, 500);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn iforest_uniform_duplicates() {
        let data = vec![vec![3.0, -1.0]; 40];
        let f = IsolationForest::fit(&data, IsolationParams::default()).unwrap();
        let s = f.score(&data[0]);
        assert!(data.iter().all(|v| f.score(v) == s));
    }

    #[test]
    fn iforest_deterministic() {
        let data = ball(300, 2, 5);
        let p = IsolationParams { seed: 9, n_trees: 50, subsample: 128 };
        assert_eq!(IsolationForest::fit(&data, p).unwrap(), IsolationForest::fit(&data, p).unwrap());
    }

    fn brute_abod(reference: &[Vec<f64>], v: &[f64]) -> f64 {
        // via explicit angles: cos(theta) / (|a| |b|), two-pass variance
        let mut items = Vec::new();
        for i in 0..reference.len() {
            for j in i + 1..reference.len() {
                let a: Vec<f64> = reference[i].iter().zip(v).map(|(x, y)| x - y).collect();
                let b: Vec<f64> = reference[j].iter().zip(v).map(|(x, y)| x - y).collect();
                let la = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let lb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                let theta = (a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (la * lb)).clamp(-1.0, 1.0).acos();
                items.push(theta.cos() / (la * lb));
            }
        }
        let mean = items.iter().sum::<f64>() / items.len() as f64;
        items.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / items.len() as f64
    }

    #[test]
    fn abod_hand_configuration() {
        let reference = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, -1.0], vec![3.0, 1.0]];
        let v = [0.2, 0.1];
        let got = abod_variance(&reference, &v, None).unwrap();
        assert!((got - brute_abod(&reference, &v)).abs() < 1e-12);
    }

    #[test]
    fn abod_ring_geometry() {
        let ring: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 12.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let center = abod_variance(&ring, &[0.0, 0.0], None).unwrap();
        let far = abod_variance(&ring, &[50.0, 50.0], None).unwrap();
        assert!(center > 0.1);
        assert!(far < 1e-6);
        let m = AbodModel::fit(&ring).unwrap();
        assert!(m.score(&[50.0, 50.0]).unwrap() > m.score(&[0.0, 0.0]).unwrap());
        assert!(abod_variance(&[vec![1.0], vec![1.0]], &[1.0], None).is_err());
    }

    #[test]
    fn outlier_model_round_trip() {
        let data = ball(60, 2, 8);
        for alg in [Algorithm::Kde, Algorithm::Iforest, Algorithm::Abod] {
            let m = OutlierModel::fit(alg, &data, 0.1, 3).unwrap();
            let json = serde_json::to_string(&m).unwrap();
            assert!(json.contains("\"algorithm\""));
            let back: OutlierModel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, m);
            let flagged = data.iter().filter(|v| m.is_outlier(m.score(v).unwrap())).count();
            assert!(flagged <= 7, "{alg:?} flagged {flagged}");
            assert!(m.score(&[1.0]).is_err());
        }
    }
}
