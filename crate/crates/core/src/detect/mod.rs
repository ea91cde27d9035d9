//! Anomaly detectors over text features and embeddings.
//!
//! Every emitted score follows one polarity: higher means more anomalous.

mod classifier;
mod gmm;
mod outlier;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Label};
use crate::error::{Error, Result};
use crate::eval::{self, Confusion};
use crate::metrics::{FeatureRow, FEATURE_KEYS};
use crate::stats;

pub use classifier::{logistic_objective, permutation_importance, permutation_rng, ClassifierParams, FeatureImportance, LinearClassifier, Predictor};
pub use gmm::{gmm_fit, surprisal_gap, GmmFit, GmmModel, GmmParams};
pub use outlier::{abod_variance, Algorithm, AbodModel, IsolationForest, IsolationParams, KdeModel, OutlierDetector, OutlierModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Flag when the value is strictly below the threshold.
    FlagBelow,
    /// Flag when the value is strictly above the threshold.
    FlagAbove,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flag_below" | "below" => Ok(Direction::FlagBelow),
            "flag_above" | "above" => Ok(Direction::FlagAbove),
            other => Err(Error::invalid(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetector {
    pub feature_name: String,
    pub direction: Direction,
    pub threshold: f64,
}

impl ThresholdDetector {
    pub fn new(feature_name: &str, direction: Direction, threshold: f64) -> Result<Self> {
        if !FEATURE_KEYS.contains(&feature_name) {
            return Err(Error::invalid(format!("unknown feature {feature_name:?}")));
        }
        Ok(ThresholdDetector { feature_name: feature_name.to_string(), direction, threshold })
    }

    pub fn flags(&self, value: f64) -> bool {
        match self.direction {
            Direction::FlagBelow => value < self.threshold,
            Direction::FlagAbove => value > self.threshold,
        }
    }

    pub fn predict_value(&self, value: f64) -> Label {
        if self.flags(value) {
            Label::Corrupted
        } else {
            Label::Correct
        }
    }

    pub fn predict_row(&self, row: &FeatureRow) -> Label {
        let v = row.features.get(&self.feature_name).expect("feature name validated");
        self.predict_value(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub f05: f64,
}

pub const DEFAULT_GRID: usize = 100;

fn require_both_classes(labels: &[Label]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l == Label::Corrupted).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok(())
}

/// F0.5 of the rule "flag when `value` crosses `threshold`".
pub fn threshold_f05(values: &[f64], labels: &[Label], direction: Direction, threshold: f64) -> f64 {
    let det = ThresholdDetector { feature_name: String::new(), direction, threshold };
    let preds: Vec<Label> = values.iter().map(|&v| det.predict_value(v)).collect();
    eval::confusion(&preds, labels).map(|c| c.f05()).unwrap_or(0.0)
}

/// Evaluate `grid` evenly spaced quantiles of `values` as thresholds and keep
/// the best by F0.5 (ties go to the smallest threshold).
pub fn grid_search_values(values: &[f64], labels: &[Label], direction: Direction, grid: usize) -> Result<(f64, Vec<CurvePoint>)> {
    if values.len() != labels.len() {
        return Err(Error::invalid("feature and label counts differ"));
    }
    require_both_classes(labels)?;
    if grid < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let curve: Vec<CurvePoint> = (0..grid)
        .map(|i| {
            let t = stats::quantile_sorted(&sorted, i as f64 / (grid - 1) as f64);
            CurvePoint { threshold: t, f05: threshold_f05(values, labels, direction, t) }
        })
        .collect();
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f05 > best.f05 || (p.f05 == best.f05 && p.threshold < best.threshold) {
            best = *p;
        }
    }
    Ok((best.threshold, curve))
}

pub fn grid_search_threshold(rows: &[FeatureRow], feature_name: &str, direction: Direction, grid: usize) -> Result<(ThresholdDetector, Vec<CurvePoint>)> {
    let mut det = ThresholdDetector::new(feature_name, direction, 0.0)?;
    let labels = labels_of(rows)?;
    let values: Vec<f64> = rows.iter().map(|r| r.features.get(feature_name).expect("validated")).collect();
    let (t, curve) = grid_search_values(&values, &labels, direction, grid)?;
    det.threshold = t;
    Ok((det, curve))
}

pub(crate) fn labels_of(rows: &[FeatureRow]) -> Result<Vec<Label>> {
    rows.iter()
        .map(|r| r.label.ok_or_else(|| Error::invalid(format!("row {} has no label", r.id))))
        .collect()
}

/// The `(1 - contamination)` quantile of training scores.
pub fn threshold_by_contamination(scores: &[f64], contamination: f64) -> Result<f64> {
    if !(contamination > 0.0 && contamination <= 0.5) {
        return Err(Error::invalid(format!("contamination {contamination} outside (0, 0.5]")));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no scores to threshold"));
    }
    Ok(stats::quantile(scores, 1.0 - contamination))
}

/// One line of `embeddings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default)]
    pub layer: Option<i64>,
    pub vector: Vec<f64>,
}

/// Read embeddings, checking that every vector has the same finite dimension.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let records: Vec<EmbeddingRecord> = corpus::read_jsonl(path)?;
    check_embeddings(&records).map_err(|e| match e {
        Error::Invalid(m) => Error::Record { path: path.to_path_buf(), line: 0, message: m },
        e => e,
    })?;
    Ok(records)
}

pub fn check_embeddings(records: &[EmbeddingRecord]) -> Result<usize> {
    let Some(first) = records.first() else { return Ok(0) };
    let d = first.vector.len();
    if d == 0 {
        return Err(Error::invalid("empty embedding vector"));
    }
    for r in records {
        if r.vector.len() != d {
            return Err(Error::invalid(format!("embedding {} has dimension {} (expected {d})", r.id, r.vector.len())));
        }
        if r.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("embedding {} has a non-finite value", r.id)));
        }
    }
    Ok(d)
}

pub fn embeddings_by_id(records: &[EmbeddingRecord]) -> HashMap<&str, &[f64]> {
    records.iter().map(|r| (r.id.as_str(), r.vector.as_slice())).collect()
}

pub(crate) fn check_vectors(vectors: &[Vec<f64>], min: usize) -> Result<usize> {
    if vectors.len() < min {
        return Err(Error::invalid(format!("need at least {min} vectors, got {}", vectors.len())));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(Error::invalid("zero-dimensional vectors"));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("vectors differ in dimension"));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite vector component"));
    }
    Ok(d)
}

pub(crate) fn f05_of(preds: &[Label], labels: &[Label]) -> f64 {
    eval::confusion(preds, labels).as_ref().map(Confusion::f05).unwrap_or(0.0)
}
