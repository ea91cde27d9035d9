//! Token-level distribution statistics (probability, rank, entropy, entropy
//! delta, possible states, cumulative probability, oddballness), perplexity,
//! text-level aggregation and corrupted/fixed perplexity diagnostics.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{self, Label};
use crate::error::{Error, Result};
use crate::lm::{DistributionView, NGramModel, ScoredToken};
use crate::stats;

/// Floor applied to zero probabilities in batch computations.
pub const MIN_PROB: f64 = 1e-12;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of probabilities clamped to [`MIN_PROB`] since process start.
pub fn clamped_probabilities() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp_prob(p: f64) -> f64 {
    if p < MIN_PROB {
        let n = CLAMPED.fetch_add(1, Ordering::Relaxed);
        if n == 0 {
            log::warn!("token probability {p} clamped to {MIN_PROB}");
        }
        MIN_PROB
    } else {
        p
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

pub fn entropy(dist: &DistributionView) -> f64 {
    entropy_of(dist.probabilities())
}

/// Observed surprisal minus the distribution entropy.
pub fn entropy_delta(p_t: f64, entropy: f64) -> Result<f64> {
    if !(p_t > 0.0 && p_t <= 1.0) {
        return Err(Error::invalid(format!("entropy delta needs p_t in (0, 1], got {p_t}")));
    }
    Ok(-p_t.ln() - entropy)
}

/// Integer part of `e^H`, never below one.
pub fn possible_states(entropy: f64) -> u64 {
    let eta = entropy.exp().floor();
    if eta >= 1.0 {
        eta as u64
    } else {
        1
    }
}

/// Total mass of the `eta` most probable outcomes.
pub fn cumulative_prob(dist: &DistributionView, eta: u64) -> Result<f64> {
    if eta == 0 || eta as usize > dist.len() {
        return Err(Error::invalid(format!(
            "possible-states count {eta} outside 1..={}",
            dist.len()
        )));
    }
    Ok(dist.descending().take(eta as usize).sum())
}

/// 1-based rank of `index` in descending order, ties by ascending index.
pub fn token_rank(dist: &DistributionView, index: usize) -> usize {
    let probs = dist.probabilities();
    let p_t = probs[index];
    let above = probs.iter().filter(|&&p| p > p_t).count();
    let tied_before = probs[..index].iter().filter(|&&p| p == p_t).count();
    1 + above + tied_before
}

/// Oddballness: total mass by which other outcomes exceed the observed one.
/// Always exact over a full distribution.
pub fn oddballness(dist: &DistributionView, index: usize) -> (f64, bool) {
    let p_t = dist.prob(index);
    let xi = dist
        .probabilities()
        .iter()
        .map(|&p| (p - p_t).max(0.0))
        .sum();
    (xi, true)
}

/// Oddballness from a truncated distribution: exact when the observed rank
/// is inside `topk`, otherwise a lower bound flagged as inexact.
pub fn oddballness_from_topk(topk: &[f64], tail_mass: f64, p_t: f64, rank: usize) -> Result<(f64, bool)> {
    if topk.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("top-k probabilities are not sorted in descending order"));
    }
    let total: f64 = topk.iter().sum::<f64>() + tail_mass;
    if (total - 1.0).abs() > 1e-3 {
        return Err(Error::invalid(format!("top-k mass plus tail is {total}, expected 1")));
    }
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let xi = topk.iter().map(|&p| (p - p_t).max(0.0)).sum();
    Ok((xi, rank <= topk.len()))
}

/// Per-token statistics of one scored position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub token: String,
    pub p_t: f64,
    pub rank: usize,
    pub entropy: f64,
    pub entropy_delta: f64,
    pub possible_states: u64,
    pub cum_prob: f64,
    pub oddballness: f64,
    pub exact_xi: bool,
}

impl TokenScoreRecord {
    pub fn from_distribution(token: impl Into<String>, dist: &DistributionView, observed: usize) -> Self {
        let p_t = clamp_prob(dist.prob(observed));
        let h = entropy(dist);
        let eta = possible_states(h).min(dist.len() as u64);
        let (xi, exact) = oddballness(dist, observed);
        TokenScoreRecord {
            token: token.into(),
            p_t,
            rank: token_rank(dist, observed),
            entropy: h,
            entropy_delta: -p_t.ln() - h,
            possible_states: eta,
            cum_prob: cumulative_prob(dist, eta).expect("eta clamped to vocabulary"),
            oddballness: xi,
            exact_xi: exact,
        }
    }

    pub fn from_scored(scored: &ScoredToken) -> Self {
        Self::from_distribution(scored.token.clone(), &scored.distribution, scored.observed)
    }
}

/// Score a text with the built-in model and compute per-token records.
pub fn score_records(model: &NGramModel, text: &str) -> Result<Vec<TokenScoreRecord>> {
    Ok(model.score_text(text)?.iter().map(TokenScoreRecord::from_scored).collect())
}

/// `exp` of the mean negative log-probability, natural log.
pub fn perplexity(records: &[TokenScoreRecord]) -> Result<f64> {
    perplexity_of(records.iter().map(|r| r.p_t))
}

pub fn perplexity_of(probs: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mut n = 0usize;
    let mut nll = 0.0;
    for p in probs {
        n += 1;
        nll -= clamp_prob(p).ln();
    }
    if n == 0 {
        return Err(Error::invalid("perplexity of an empty token sequence"));
    }
    Ok((nll / n as f64).exp())
}

/// The seven per-token metrics that are aggregated per text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Prob,
    Rank,
    Entropy,
    EntropyDelta,
    PossibleStates,
    CumProb,
    Oddballness,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Prob,
        Metric::Rank,
        Metric::Entropy,
        Metric::EntropyDelta,
        Metric::PossibleStates,
        Metric::CumProb,
        Metric::Oddballness,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Prob => "p",
            Metric::Rank => "r",
            Metric::Entropy => "H",
            Metric::EntropyDelta => "dH",
            Metric::PossibleStates => "eta",
            Metric::CumProb => "pi",
            Metric::Oddballness => "xi",
        }
    }

    fn of(self, r: &TokenScoreRecord) -> f64 {
        match self {
            Metric::Prob => r.p_t,
            Metric::Rank => r.rank as f64,
            Metric::Entropy => r.entropy,
            Metric::EntropyDelta => r.entropy_delta,
            Metric::PossibleStates => r.possible_states as f64,
            Metric::CumProb => r.cum_prob,
            Metric::Oddballness => r.oddballness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty list"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Ok(Aggregate { min: v[0], max: v[n - 1], median })
    }
}

/// Every numeric key of a `features.jsonl` row, in canonical order.
pub const FEATURE_KEYS: [&str; 23] = [
    "min_p", "max_p", "median_p",
    "min_r", "max_r", "median_r",
    "min_H", "max_H", "median_H",
    "min_dH", "max_dH", "median_dH",
    "min_eta", "max_eta", "median_eta",
    "min_pi", "max_pi", "median_pi",
    "min_xi", "max_xi", "median_xi",
    "ppl", "num_tokens",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureVector {
    pub aggregates: [Aggregate; 7],
    pub perplexity: f64,
    pub num_tokens: usize,
}

impl TextFeatureVector {
    pub fn aggregate(&self, metric: Metric) -> Aggregate {
        let i = Metric::ALL.iter().position(|&m| m == metric).expect("metric listed");
        self.aggregates[i]
    }

    /// Values in [`FEATURE_KEYS`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FEATURE_KEYS.len());
        for a in &self.aggregates {
            out.extend([a.min, a.max, a.median]);
        }
        out.push(self.perplexity);
        out.push(self.num_tokens as f64);
        out
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        FEATURE_KEYS.iter().position(|k| *k == key).map(|i| self.values()[i])
    }

    fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != FEATURE_KEYS.len() {
            return Err(Error::invalid("wrong number of feature values"));
        }
        let mut aggregates = [Aggregate { min: 0.0, max: 0.0, median: 0.0 }; 7];
        for (i, a) in aggregates.iter_mut().enumerate() {
            *a = Aggregate { min: values[3 * i], max: values[3 * i + 1], median: values[3 * i + 2] };
        }
        let num_tokens = values[22];
        if num_tokens < 0.0 || num_tokens.fract() != 0.0 {
            return Err(Error::invalid(format!("num_tokens must be a non-negative integer, got {num_tokens}")));
        }
        Ok(TextFeatureVector { aggregates, perplexity: values[21], num_tokens: num_tokens as usize })
    }
}

/// Min/max/median of every metric plus perplexity and token count.
pub fn aggregate_features(records: &[TokenScoreRecord]) -> Result<TextFeatureVector> {
    if records.is_empty() {
        return Err(Error::invalid("cannot aggregate features of an empty text"));
    }
    let mut aggregates = [Aggregate { min: 0.0, max: 0.0, median: 0.0 }; 7];
    for (slot, metric) in aggregates.iter_mut().zip(Metric::ALL) {
        let values: Vec<f64> = records.iter().map(|r| metric.of(r)).collect();
        *slot = Aggregate::of(&values)?;
    }
    Ok(TextFeatureVector {
        aggregates,
        perplexity: perplexity(records)?,
        num_tokens: records.len(),
    })
}

/// One row of `features.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub domain: String,
    pub label: Option<Label>,
    pub features: TextFeatureVector,
}

impl FeatureRow {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("id".into(), Value::from(self.id.clone()));
        m.insert("domain".into(), Value::from(self.domain.clone()));
        m.insert("label".into(), self.label.map_or(Value::Null, |l| Value::from(u8::from(l))));
        for (k, v) in FEATURE_KEYS.iter().zip(self.features.values()) {
            let v = if *k == "num_tokens" { Value::from(self.features.num_tokens) } else { Value::from(v) };
            m.insert((*k).into(), v);
        }
        Value::Object(m)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::invalid("feature row is not an object"))?;
        let id = obj
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::invalid("feature row without id"))?
            .to_string();
        let domain = obj.get("domain").and_then(Value::as_str).unwrap_or_default().to_string();
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(l) => {
                let raw = l.as_u64().ok_or_else(|| Error::invalid("label must be 0 or 1"))?;
                Some(Label::try_from(raw as u8).map_err(Error::invalid)?)
            }
        };
        let mut values = Vec::with_capacity(FEATURE_KEYS.len());
        for k in FEATURE_KEYS {
            let v = obj
                .get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::invalid(format!("feature row {id} lacks numeric {k}")))?;
            values.push(v);
        }
        Ok(FeatureRow { id, domain, label, features: TextFeatureVector::from_values(&values)? })
    }
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let values: Vec<Value> = rows.iter().map(FeatureRow::to_json).collect();
    corpus::write_jsonl(path, &values)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let values: Vec<Value> = corpus::read_jsonl(path)?;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            FeatureRow::from_json(v).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// A `token_scores.jsonl` record: per-position statistics exported from any
/// language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreFileRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub logprob: Vec<f64>,
    pub rank: Vec<usize>,
    pub entropy: Vec<f64>,
    pub topk: Vec<Vec<f64>>,
    pub tail_mass: Vec<f64>,
}

impl TokenScoreFileRecord {
    /// Export the positions of a text scored by the built-in model, keeping
    /// the `topk` largest probabilities per position.
    pub fn from_scored(id: impl Into<String>, scored: &[ScoredToken], topk: usize) -> Self {
        let mut rec = TokenScoreFileRecord {
            id: id.into(),
            tokens: Vec::with_capacity(scored.len()),
            logprob: Vec::with_capacity(scored.len()),
            rank: Vec::with_capacity(scored.len()),
            entropy: Vec::with_capacity(scored.len()),
            topk: Vec::with_capacity(scored.len()),
            tail_mass: Vec::with_capacity(scored.len()),
        };
        for s in scored {
            let d = &s.distribution;
            let top: Vec<f64> = d.descending().take(topk).collect();
            let tail: f64 = d.descending().skip(topk).sum();
            rec.tokens.push(s.token.clone());
            rec.logprob.push(d.prob(s.observed).ln());
            rec.rank.push(token_rank(d, s.observed));
            rec.entropy.push(entropy(d));
            rec.topk.push(top);
            rec.tail_mass.push(tail);
        }
        rec
    }

    /// Check the interchange invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let lens = [self.logprob.len(), self.rank.len(), self.entropy.len(), self.topk.len(), self.tail_mass.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::invalid(format!("record {}: per-position lists differ in length", self.id)));
        }
        if n == 0 {
            return Err(Error::invalid(format!("record {}: no scored positions", self.id)));
        }
        for i in 0..n {
            if self.rank[i] == 0 {
                return Err(Error::invalid(format!("record {}: rank must be >= 1 at position {i}", self.id)));
            }
            if self.logprob[i] > 1e-9 || self.logprob[i].is_nan() {
                return Err(Error::invalid(format!("record {}: invalid logprob at position {i}", self.id)));
            }
            if self.topk[i].windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::invalid(format!("record {}: top-k not descending at position {i}", self.id)));
            }
            let mass: f64 = self.topk[i].iter().sum::<f64>() + self.tail_mass[i];
            if (mass - 1.0).abs() > 1e-3 {
                return Err(Error::invalid(format!(
                    "record {}: top-k plus tail mass is {mass} at position {i}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Per-token records. Cumulative probability beyond the stored top-k uses
    /// the bound `sum(topk) + min(tail, (eta - k) * p_k)`.
    pub fn to_records(&self) -> Result<Vec<TokenScoreRecord>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.tokens.len());
        for i in 0..self.tokens.len() {
            let p_t = clamp_prob(self.logprob[i].exp().min(1.0));
            let h = self.entropy[i].max(0.0);
            let top = &self.topk[i];
            let eta = possible_states(h);
            let cum_prob = if (eta as usize) <= top.len() {
                top[..eta as usize].iter().sum()
            } else {
                let last = top.last().copied().unwrap_or(0.0);
                let rest = (eta as usize - top.len()) as f64 * last;
                top.iter().sum::<f64>() + self.tail_mass[i].min(rest)
            };
            let (xi, exact) = oddballness_from_topk(top, self.tail_mass[i], p_t, self.rank[i])?;
            out.push(TokenScoreRecord {
                token: self.tokens[i].clone(),
                p_t,
                rank: self.rank[i],
                entropy: h,
                entropy_delta: -p_t.ln() - h,
                possible_states: eta,
                cum_prob: cum_prob.min(1.0),
                oddballness: xi,
                exact_xi: exact,
            });
        }
        Ok(out)
    }
}

/// Read and validate a `token_scores.jsonl` file.
pub fn read_token_scores(path: &Path) -> Result<Vec<TokenScoreFileRecord>> {
    let recs: Vec<TokenScoreFileRecord> = corpus::read_jsonl(path)?;
    for (i, r) in recs.iter().enumerate() {
        r.validate().map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(recs)
}

/// Perplexity and length of one scored text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScore {
    pub perplexity: f64,
    pub num_tokens: usize,
}

impl TextScore {
    pub fn of(records: &[TokenScoreRecord]) -> Result<Self> {
        Ok(TextScore { perplexity: perplexity(records)?, num_tokens: records.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Share of pairs per (sign of perplexity change, sign of token-count change).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthConditionedShares {
    /// Columns: token-count delta = 0, > 0, < 0.
    pub ppl_increase: [f64; 3],
    pub ppl_decrease: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplPairDiagnostics {
    pub n_pairs: usize,
    pub corrupted: MeanStd,
    pub fixed: MeanStd,
    /// Share of pairs where the corrupted text has the higher perplexity.
    pub share_ppl_up: f64,
    pub share_ppl_down: f64,
    pub share_ppl_equal: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub by_length_delta: LengthConditionedShares,
    /// Pearson correlation of perplexity with token count over both sides;
    /// absent when either variable is constant.
    pub pearson_rho: Option<f64>,
    pub pearson_p_value: Option<f64>,
}

/// Compare perplexities of (corrupted, fixed) pairs.
pub fn ppl_pair_diagnostics(pairs: &[(TextScore, TextScore)]) -> Result<PplPairDiagnostics> {
    if pairs.len() < 2 {
        return Err(Error::invalid("perplexity diagnostics need at least two pairs"));
    }
    let n = pairs.len() as f64;
    let (mut up, mut down, mut equal) = (0usize, 0usize, 0usize);
    let mut inc = [0usize; 3];
    let mut dec = [0usize; 3];
    for (c, f) in pairs {
        let delta = c.perplexity - f.perplexity;
        let dnum = f.num_tokens as i64 - c.num_tokens as i64;
        let col = match dnum.signum() {
            0 => 0,
            1 => 1,
            _ => 2,
        };
        if delta > 0.0 {
            up += 1;
            inc[col] += 1;
        } else if delta < 0.0 {
            down += 1;
            dec[col] += 1;
        } else {
            equal += 1;
        }
    }
    let ppl_c: Vec<f64> = pairs.iter().map(|(c, _)| c.perplexity).collect();
    let ppl_f: Vec<f64> = pairs.iter().map(|(_, f)| f.perplexity).collect();
    let ks = stats::ks_2sample(&ppl_c, &ppl_f)?;

    let pooled_ppl: Vec<f64> = ppl_c.iter().chain(&ppl_f).copied().collect();
    let pooled_len: Vec<f64> = pairs
        .iter()
        .map(|(c, _)| c.num_tokens as f64)
        .chain(pairs.iter().map(|(_, f)| f.num_tokens as f64))
        .collect();
    let (rho, rho_p) = match stats::pearson(&pooled_ppl, &pooled_len) {
        Ok((r, p)) => (Some(r), Some(p)),
        Err(_) => (None, None),
    };
    let share = |k: usize| k as f64 / n;
    Ok(PplPairDiagnostics {
        n_pairs: pairs.len(),
        corrupted: MeanStd::of(&ppl_c),
        fixed: MeanStd::of(&ppl_f),
        share_ppl_up: share(up),
        share_ppl_down: share(down),
        share_ppl_equal: share(equal),
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
        by_length_delta: LengthConditionedShares {
            ppl_increase: inc.map(share),
            ppl_decrease: dec.map(share),
        },
        pearson_rho: rho,
        pearson_p_value: rho_p,
    })
}

/// Index token-score records by id.
pub fn index_by_id(records: Vec<TokenScoreFileRecord>) -> HashMap<String, TokenScoreFileRecord> {
    records.into_iter().map(|r| (r.id.clone(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> DistributionView {
        DistributionView::new(p.to_vec()).unwrap()
    }

    fn rec(p: f64) -> TokenScoreRecord {
        TokenScoreRecord {
            token: "t".into(),
            p_t: p,
            rank: 1,
            entropy: 0.0,
            entropy_delta: 0.0,
            possible_states: 1,
            cum_prob: 1.0,
            oddballness: 0.0,
            exact_xi: true,
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&dist(&[0.25; 4])) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&dist(&[1.0, 0.0])), 0.0);
        let h = entropy(&dist(&[0.5, 0.3, 0.2]));
        assert!((h - 1.0297).abs() < 1e-4, "{h}");
    }

    #[test]
    fn entropy_delta_examples() {
        assert_eq!(entropy_delta(1.0, 0.0).unwrap(), 0.0);
        let v = 7.0f64;
        assert!(entropy_delta(1.0 / v, v.ln()).unwrap().abs() < 1e-15);
        assert!((entropy_delta(0.2, 1.0297).unwrap() - 0.5797).abs() < 1e-4);
        assert!(entropy_delta(0.0, 1.0).is_err());
    }

    #[test]
    fn possible_states_examples() {
        assert_eq!(possible_states(3.398), 29);
        assert_eq!(possible_states(0.210), 1);
        assert_eq!(possible_states(0.0), 1);
        assert_eq!(possible_states(-1e-17), 1);
    }

    #[test]
    fn cumulative_prob_examples() {
        assert!((cumulative_prob(&dist(&[0.25; 4]), 4).unwrap() - 1.0).abs() < 1e-15);
        assert!((cumulative_prob(&dist(&[0.5, 0.3, 0.2]), 2).unwrap() - 0.8).abs() < 1e-15);
        assert!(cumulative_prob(&dist(&[0.5, 0.5]), 3).is_err());
        assert!(cumulative_prob(&dist(&[0.5, 0.5]), 0).is_err());
    }

    #[test]
    fn rank_examples() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(token_rank(&d, 0), 1);
        assert_eq!(token_rank(&d, 2), 3);
        let tie = dist(&[0.5, 0.25, 0.25]);
        assert_eq!(token_rank(&tie, 1), 2);
        assert_eq!(token_rank(&tie, 2), 3);
    }

    #[test]
    fn oddballness_examples() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(oddballness(&d, 0), (0.0, true));
        assert!((oddballness(&d, 2).0 - 0.4).abs() < 1e-15);
        assert_eq!(oddballness(&dist(&[0.25; 4]), 3).0, 0.0);
    }

    #[test]
    fn oddballness_from_topk_examples() {
        let (xi, exact) = oddballness_from_topk(&[0.5, 0.3, 0.2], 0.0, 0.2, 3).unwrap();
        assert!((xi - 0.4).abs() < 1e-15 && exact);
        assert_eq!(oddballness_from_topk(&[0.5, 0.3, 0.2], 0.0, 0.5, 1).unwrap(), (0.0, true));
        let (xi, exact) = oddballness_from_topk(&[0.4], 0.6, 0.001, 50).unwrap();
        assert!((xi - 0.399).abs() < 1e-15 && !exact);
        assert!(oddballness_from_topk(&[0.2, 0.5], 0.3, 0.2, 1).is_err());
    }

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity(&[rec(1.0), rec(1.0)]).unwrap(), 1.0);
        let u = perplexity(&[rec(0.01), rec(0.01), rec(0.01)]).unwrap();
        assert!((u - 100.0).abs() < 1e-9);
        let p = perplexity(&[rec(0.5), rec(0.125)]).unwrap();
        // (0.5 * 0.125)^(-1/2)
        assert!((p - 4.0).abs() < 1e-12);
        assert!(perplexity(&[]).is_err());
    }

    #[test]
    fn zero_probability_is_clamped() {
        let before = clamped_probabilities();
        let p = perplexity(&[rec(0.0)]).unwrap();
        assert!((p - 1e12).abs() / 1e12 < 1e-9);
        assert!(clamped_probabilities() > before);
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate_features(&[rec(0.3)]).unwrap();
        let a = one.aggregate(Metric::Prob);
        assert_eq!((a.min, a.max, a.median), (0.3, 0.3, 0.3));

        let mut r0 = rec(0.5);
        r0.oddballness = 0.0;
        let mut r1 = rec(0.5);
        r1.oddballness = 0.4;
        let two = aggregate_features(&[r0, r1]).unwrap();
        assert!((two.aggregate(Metric::Oddballness).median - 0.2).abs() < 1e-15);
        assert!(aggregate_features(&[]).is_err());
    }

    #[test]
    fn aggregate_matches_sort_oracle() {
        let ps = [0.4, 0.1, 0.9, 0.25];
        let records: Vec<_> = ps.iter().map(|&p| rec(p)).collect();
        let f = aggregate_features(&records).unwrap();
        let mut sorted = ps.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let a = f.aggregate(Metric::Prob);
        assert_eq!(a.min, sorted[0]);
        assert_eq!(a.max, sorted[3]);
        assert_eq!(a.median, (sorted[1] + sorted[2]) / 2.0);
        assert_eq!(f.num_tokens, 4);
        assert_eq!(f.values().len(), FEATURE_KEYS.len());
        assert_eq!(f.get("max_p"), Some(0.9));
    }

    #[test]
    fn feature_row_json_round_trip() {
        let f = aggregate_features(&[rec(0.4), rec(0.1)]).unwrap();
        let row = FeatureRow { id: "x".into(), domain: "poetry".into(), label: Some(Label::Corrupted), features: f };
        let v = row.to_json();
        let keys = v.as_object().unwrap().len();
        assert_eq!(keys, 3 + 23);
        assert_eq!(FeatureRow::from_json(&v).unwrap(), row);
    }

    #[test]
    fn exported_record_matches_direct_path_with_full_topk() {
        let m = NGramModel::fit(&["a b c a b", "b c a"], 2, 0.3, 10).unwrap();
        let scored = m.score_text("a b x c").unwrap();
        let exported = TokenScoreFileRecord::from_scored("t", &scored, m.vocab_size());
        let via_file = exported.to_records().unwrap();
        for (s, r) in scored.iter().zip(&via_file) {
            let direct = TokenScoreRecord::from_scored(s);
            assert_eq!(direct.rank, r.rank);
            assert_eq!(direct.possible_states, r.possible_states);
            assert!((direct.p_t - r.p_t).abs() < 1e-12);
            assert!((direct.cum_prob - r.cum_prob).abs() < 1e-12);
            assert!((direct.oddballness - r.oddballness).abs() < 1e-12);
            assert!(r.exact_xi);
        }
    }

    #[test]
    fn truncated_export_flags_inexact_oddballness() {
        let m = NGramModel::fit(&["a b c d e f g h"], 1, 0.5, 10).unwrap();
        let scored = m.score_text("h").unwrap();
        let exported = TokenScoreFileRecord::from_scored("t", &scored, 2);
        exported.validate().unwrap();
        let r = &exported.to_records().unwrap()[0];
        let direct = TokenScoreRecord::from_scored(&scored[0]);
        if direct.rank > 2 {
            assert!(!r.exact_xi);
            assert!(r.oddballness <= direct.oddballness + 1e-15);
        }
    }

    #[test]
    fn validate_rejects_bad_records() {
        let mut r = TokenScoreFileRecord {
            id: "x".into(),
            tokens: vec!["a".into()],
            logprob: vec![-0.5],
            rank: vec![1],
            entropy: vec![0.7],
            topk: vec![vec![0.6, 0.3]],
            tail_mass: vec![0.1],
        };
        r.validate().unwrap();
        r.tail_mass[0] = 0.2;
        assert!(r.validate().is_err());
        r.tail_mass[0] = 0.1;
        r.rank[0] = 0;
        assert!(r.validate().is_err());
        r.rank = vec![1, 2];
        assert!(r.validate().is_err());
    }

    fn ts(perplexity: f64, num_tokens: usize) -> TextScore {
        TextScore { perplexity, num_tokens }
    }

    #[test]
    fn diagnostics_identical_sides() {
        let pairs = vec![(ts(5.0, 4), ts(5.0, 4)), (ts(7.0, 6), ts(7.0, 6))];
        let d = ppl_pair_diagnostics(&pairs).unwrap();
        assert_eq!(d.share_ppl_up, 0.0);
        assert_eq!(d.share_ppl_down, 0.0);
        assert_eq!(d.share_ppl_equal, 1.0);
        assert_eq!(d.ks_statistic, 0.0);
    }

    #[test]
    fn diagnostics_hand_counts() {
        // pair 0: ppl up, fixed one token longer; pair 1: ppl down, same length;
        // pair 2: ppl up, fixed shorter.
        let pairs = vec![
            (ts(9.0, 3), ts(4.0, 4)),
            (ts(3.0, 5), ts(6.0, 5)),
            (ts(8.0, 7), ts(2.0, 6)),
        ];
        let d = ppl_pair_diagnostics(&pairs).unwrap();
        assert!((d.share_ppl_up - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.share_ppl_down - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.by_length_delta.ppl_increase, [0.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(d.by_length_delta.ppl_decrease, [1.0 / 3.0, 0.0, 0.0]);
        assert!((d.share_ppl_up + d.share_ppl_down + d.share_ppl_equal - 1.0).abs() < 1e-12);
        assert!(ppl_pair_diagnostics(&pairs[..1]).is_err());
    }
}
