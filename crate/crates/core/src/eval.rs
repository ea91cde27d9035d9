//! Evaluation protocol: F-beta, per-domain class balancing by
//! undersampling, bootstrap and t-based confidence intervals, and reports
//! over imported prediction files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Label, LabeledInstance};
use crate::error::{Error, Result};
use crate::par;
use crate::seed;
use crate::stats;

pub const DEFAULT_BETA: f64 = 0.5;

/// `(1 + b^2) P R / (b^2 P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

pub fn f05(precision: f64, recall: f64) -> f64 {
    f_beta(precision, recall, DEFAULT_BETA)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn f05(&self) -> f64 {
        f05(self.precision(), self.recall())
    }

    fn add(&mut self, pred: Label, label: Label) {
        match (pred, label) {
            (Label::Corrupted, Label::Corrupted) => self.tp += 1,
            (Label::Corrupted, Label::Correct) => self.fp += 1,
            (Label::Correct, Label::Corrupted) => self.fn_ += 1,
            (Label::Correct, Label::Correct) => self.tn += 1,
        }
    }

    fn has_both_classes(&self) -> bool {
        self.tp + self.fn_ > 0 && self.fp + self.tn > 0
    }
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        c.add(p, l);
    }
    Ok(c)
}

/// Anything carrying a domain tag and a binary label.
pub trait Balanceable {
    fn domain(&self) -> &str;
    fn label(&self) -> Label;
}

impl Balanceable for LabeledInstance {
    fn domain(&self) -> &str {
        &self.domain
    }

    fn label(&self) -> Label {
        self.label
    }
}

/// Down-sample the majority class of every domain to the minority size.
/// Domains lacking a class are dropped. Output order is a seeded shuffle.
pub fn undersample_balance<T: Balanceable + Clone>(instances: &[T], seed: u64) -> Vec<T> {
    let mut by_domain: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        let entry = by_domain.entry(inst.domain()).or_default();
        match inst.label() {
            Label::Corrupted => entry.0.push(i),
            Label::Correct => entry.1.push(i),
        }
    }
    let mut chosen = Vec::new();
    for (domain, (mut pos, mut neg)) in by_domain {
        if pos.is_empty() || neg.is_empty() {
            log::warn!("domain {domain:?} lacks one class; dropped from evaluation");
            continue;
        }
        let m = pos.len().min(neg.len());
        let mut rng = seed::rng(seed::derive_str(seed, domain));
        for side in [&mut pos, &mut neg] {
            if side.len() > m {
                side.shuffle(&mut rng);
                side.truncate(m);
            }
        }
        chosen.extend(pos);
        chosen.extend(neg);
    }
    chosen.sort_unstable();
    chosen.shuffle(&mut seed::rng(seed));
    chosen.into_iter().map(|i| instances[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Metric on the full sample.
    pub estimate: f64,
    /// Mean over replicates.
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub replicates: usize,
    /// Replicates abandoned after repeated single-class draws.
    pub skipped: usize,
}

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
const MAX_REDRAWS: usize = 10;

/// Percentile bootstrap interval of a confusion-based metric. Replicate `b`
/// draws from a stream derived from `(seed, b)`.
pub fn bootstrap_ci<M>(preds: &[Label], labels: &[Label], metric: M, replicates: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    M: Fn(&Confusion) -> f64 + Sync,
{
    let full = confusion(preds, labels)?;
    let n = preds.len();
    if n < 2 {
        return Err(Error::invalid("bootstrap needs at least two predictions"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    if replicates == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let draws: Vec<Option<f64>> = par::map_range(replicates, |b| {
        use rand::Rng;
        let mut rng = seed::rng_for(seed, b as u64);
        for _ in 0..=MAX_REDRAWS {
            let mut c = Confusion::default();
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                c.add(preds[i], labels[i]);
            }
            if c.has_both_classes() {
                return Some(metric(&c));
            }
        }
        None
    });
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = replicates - values.len();
    if values.is_empty() {
        return Err(Error::domain("every bootstrap replicate drew a single class"));
    }
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(BootstrapCi {
        estimate: metric(&full),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        low: stats::quantile_sorted(&values, alpha / 2.0),
        high: stats::quantile_sorted(&values, 1.0 - alpha / 2.0),
        replicates: values.len(),
        skipped,
    })
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: Label,
    #[serde(default)]
    pub score: Option<f64>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    corpus::read_jsonl(path)
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    corpus::write_jsonl(path, preds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Bootstrap,
    TInterval,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ci_method: CiMethod,
}

impl EvalReport {
    fn from_confusion(domain: &str, c: Confusion) -> Self {
        EvalReport {
            domain: domain.to_string(),
            n: c.n(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision: c.precision(),
            recall: c.recall(),
            f05: c.f05(),
            ci_low: None,
            ci_high: None,
            ci_method: CiMethod::None,
        }
    }

    /// Attach an interval, widened if needed so it contains the point value.
    fn with_ci(mut self, method: CiMethod, low: f64, high: f64) -> Self {
        self.ci_low = Some(low.min(self.f05));
        self.ci_high = Some(high.max(self.f05));
        self.ci_method = method;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CiOptions {
    None,
    Bootstrap { replicates: usize, level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub group_by_domain: bool,
    pub ci: CiOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            group_by_domain: true,
            ci: CiOptions::Bootstrap { replicates: DEFAULT_BOOTSTRAP, level: DEFAULT_LEVEL },
            seed: 0,
        }
    }
}

pub const OVERALL: &str = "all";

fn aligned_predictions(preds: &[Prediction], instances: &[LabeledInstance]) -> Result<Vec<Label>> {
    let by_id: HashMap<&str, Label> = preds.iter().map(|p| (p.id.as_str(), p.pred)).collect();
    instances
        .iter()
        .map(|inst| {
            by_id
                .get(inst.id.as_str())
                .copied()
                .ok_or_else(|| Error::domain(format!("no prediction for instance {:?}", inst.id)))
        })
        .collect()
}

fn groups<'a>(balanced: &'a [LabeledInstance], group_by_domain: bool) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    if group_by_domain {
        let mut by: BTreeMap<&'a str, Vec<usize>> = BTreeMap::new();
        for (i, inst) in balanced.iter().enumerate() {
            by.entry(&inst.domain).or_default().push(i);
        }
        out.extend(by.into_iter().map(|(d, v)| (d.to_string(), v)));
    }
    out.push((OVERALL.to_string(), (0..balanced.len()).collect()));
    out
}

/// Balanced per-domain reports plus an overall row.
pub fn evaluate_predictions(preds: &[Prediction], instances: &[LabeledInstance], opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    let balanced = undersample_balance(instances, opts.seed);
    if balanced.is_empty() {
        return Err(Error::domain("no domain has both classes; nothing to evaluate"));
    }
    let p = aligned_predictions(preds, &balanced)?;
    let l: Vec<Label> = balanced.iter().map(|i| i.label).collect();
    let mut reports = Vec::new();
    for (domain, idx) in groups(&balanced, opts.group_by_domain) {
        let gp: Vec<Label> = idx.iter().map(|&i| p[i]).collect();
        let gl: Vec<Label> = idx.iter().map(|&i| l[i]).collect();
        let report = EvalReport::from_confusion(&domain, confusion(&gp, &gl)?);
        let report = match opts.ci {
            CiOptions::None => report,
            CiOptions::Bootstrap { replicates, level } => {
                let seed = seed::derive_str(opts.seed, &domain);
                let ci = bootstrap_ci(&gp, &gl, Confusion::f05, replicates, level, seed)?;
                report.with_ci(CiMethod::Bootstrap, ci.low, ci.high)
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Several runs of the same system: F0.5 is the mean over runs and the
/// interval is `mean ± t s / sqrt(runs)`. Counts are pooled across runs.
pub fn evaluate_runs(runs: &[Vec<Prediction>], instances: &[LabeledInstance], t_value: f64, opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    if runs.len() < 2 {
        return Err(Error::invalid("a t-interval needs at least two prediction runs"));
    }
    let balanced = undersample_balance(instances, opts.seed);
    if balanced.is_empty() {
        return Err(Error::domain("no domain has both classes; nothing to evaluate"));
    }
    let aligned: Vec<Vec<Label>> = runs.iter().map(|r| aligned_predictions(r, &balanced)).collect::<Result<_>>()?;
    let l: Vec<Label> = balanced.iter().map(|i| i.label).collect();
    let mut reports = Vec::new();
    for (domain, idx) in groups(&balanced, opts.group_by_domain) {
        let gl: Vec<Label> = idx.iter().map(|&i| l[i]).collect();
        let mut pooled = Confusion::default();
        let mut scores = Vec::with_capacity(runs.len());
        let mut precisions = Vec::with_capacity(runs.len());
        let mut recalls = Vec::with_capacity(runs.len());
        for p in &aligned {
            let gp: Vec<Label> = idx.iter().map(|&i| p[i]).collect();
            let c = confusion(&gp, &gl)?;
            pooled.tp += c.tp;
            pooled.fp += c.fp;
            pooled.fn_ += c.fn_;
            pooled.tn += c.tn;
            scores.push(c.f05());
            precisions.push(c.precision());
            recalls.push(c.recall());
        }
        let ci = stats::t_interval(&scores, t_value)?;
        let mut report = EvalReport::from_confusion(&domain, pooled);
        let k = runs.len() as f64;
        report.precision = precisions.iter().sum::<f64>() / k;
        report.recall = recalls.iter().sum::<f64>() / k;
        report.f05 = ci.mean;
        reports.push(report.with_ci(CiMethod::TInterval, ci.low, ci.high));
    }
    Ok(reports)
}

/// Fixed-width text table of reports.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>7} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>8} {:>17}",
        "domain", "n", "tp", "fp", "fn", "tn", "precision", "recall", "F0.5", "CI"
    );
    for r in reports {
        let ci = match (r.ci_low, r.ci_high) {
            (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>8.4} {:>17}",
            r.domain, r.n, r.tp, r.fp, r.fn_, r.tn, r.precision, r.recall, r.f05, ci
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Correct as N, Corrupted as P};

    fn inst(id: &str, domain: &str, label: Label) -> LabeledInstance {
        LabeledInstance { id: id.into(), domain: domain.into(), text: String::new(), label }
    }

    #[test]
    fn f_beta_examples() {
        assert!((f05(0.5, 1.0) - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(f05(1.0, 1.0), 1.0);
        assert_eq!(f05(0.0, 0.0), 0.0);
        assert!((f_beta(0.5, 0.5, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn confusion_examples() {
        let labels = [P, P, N, N];
        let c = confusion(&[P; 4], &labels).unwrap();
        assert_eq!((c.precision(), c.recall()), (0.5, 1.0));
        let perfect = confusion(&labels, &labels).unwrap();
        assert_eq!((perfect.precision(), perfect.recall()), (1.0, 1.0));
        // hand count: tp=2 fp=1 fn=2 tn=3
        let preds = [P, P, N, N, P, N, N, N];
        let labels = [P, P, P, P, N, N, N, N];
        let c = confusion(&preds, &labels).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 2, tn: 3 });
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.recall(), 0.5);
        assert!(confusion(&[P], &[P, N]).is_err());
        let none = confusion(&[N, N], &[P, N]).unwrap();
        assert_eq!(none.precision(), 0.0);
    }

    #[test]
    fn balance_examples() {
        let mut v = Vec::new();
        for i in 0..70 {
            v.push(inst(&format!("p{i}"), "poetry", P));
        }
        for i in 0..30 {
            v.push(inst(&format!("n{i}"), "poetry", N));
        }
        v.push(inst("lonely", "prose", P));
        let b = undersample_balance(&v, 1);
        assert_eq!(b.iter().filter(|i| i.label == P).count(), 30);
        assert_eq!(b.iter().filter(|i| i.label == N).count(), 30);
        assert!(b.iter().all(|i| i.domain == "poetry"));
        assert_eq!(b, undersample_balance(&v, 1));
        let again = undersample_balance(&b, 5);
        assert_eq!(again.len(), 60);
    }

    #[test]
    fn bootstrap_examples() {
        let labels = [P, N, P, N, P, N];
        let perfect = bootstrap_ci(&labels, &labels, Confusion::f05, 200, 0.95, 3).unwrap();
        assert_eq!((perfect.low, perfect.high), (1.0, 1.0));
        let constant = bootstrap_ci(&labels, &labels, |_| 0.25, 50, 0.95, 3).unwrap();
        assert_eq!(constant.high - constant.low, 0.0);
        let preds = [P, P, P, N, N, P];
        let a = bootstrap_ci(&preds, &labels, Confusion::f05, 300, 0.9, 9).unwrap();
        let b = bootstrap_ci(&preds, &labels, Confusion::f05, 300, 0.9, 9).unwrap();
        assert_eq!(a, b);
        assert!(bootstrap_ci(&[P], &[P], Confusion::f05, 10, 0.95, 0).is_err());
    }

    #[test]
    fn evaluate_all_positive_is_baseline() {
        let mut inst_list = Vec::new();
        for d in ["poetry", "prose"] {
            for i in 0..10 {
                inst_list.push(inst(&format!("{d}{i}"), d, if i % 2 == 0 { P } else { N }));
            }
        }
        let preds: Vec<Prediction> = inst_list
            .iter()
            .map(|i| Prediction { id: i.id.clone(), pred: P, score: None })
            .collect();
        let opts = EvalOptions { ci: CiOptions::None, ..Default::default() };
        let reports = evaluate_predictions(&preds, &inst_list, &opts).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!((r.f05 - 5.0 / 9.0).abs() < 1e-12);
        }
        assert_eq!(reports[2].domain, OVERALL);
    }

    #[test]
    fn evaluate_hand_fixture() {
        // 6 balanced instances in one domain; preds give tp=2 fp=1 fn=1 tn=2
        let inst_list = vec![
            inst("a", "d", P),
            inst("b", "d", P),
            inst("c", "d", P),
            inst("x", "d", N),
            inst("y", "d", N),
            inst("z", "d", N),
        ];
        let pred = |id: &str, p| Prediction { id: id.into(), pred: p, score: Some(0.0) };
        let preds = vec![pred("a", P), pred("b", P), pred("c", N), pred("x", P), pred("y", N), pred("z", N)];
        let opts = EvalOptions { ci: CiOptions::None, group_by_domain: false, seed: 0 };
        let r = &evaluate_predictions(&preds, &inst_list, &opts).unwrap()[0];
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (2, 1, 1, 2));
        let expected = 1.25 * (2.0 / 3.0) * (2.0 / 3.0) / (0.25 * (2.0 / 3.0) + 2.0 / 3.0);
        assert!((r.f05 - expected).abs() < 1e-15);
        assert!(evaluate_predictions(&preds[1..], &inst_list, &opts).is_err());
    }

    #[test]
    fn evaluate_with_bootstrap_contains_estimate() {
        let mut list = Vec::new();
        let mut preds = Vec::new();
        for i in 0..40 {
            let l = if i % 2 == 0 { P } else { N };
            list.push(inst(&i.to_string(), "d", l));
            let p = if i % 5 == 0 { N } else { l };
            preds.push(Prediction { id: i.to_string(), pred: p, score: None });
        }
        for r in evaluate_predictions(&preds, &list, &EvalOptions::default()).unwrap() {
            assert_eq!(r.ci_method, CiMethod::Bootstrap);
            assert!(r.ci_low.unwrap() <= r.f05 && r.f05 <= r.ci_high.unwrap());
        }
    }

    #[test]
    fn runs_give_t_interval() {
        let list: Vec<_> = (0..8).map(|i| inst(&i.to_string(), "d", if i < 4 { P } else { N })).collect();
        let run = |flip: usize| -> Vec<Prediction> {
            list.iter()
                .enumerate()
                .map(|(i, x)| Prediction { id: x.id.clone(), pred: if i == flip { N } else { x.label }, score: None })
                .collect()
        };
        let runs = vec![run(0), run(1), run(99)];
        let opts = EvalOptions { group_by_domain: false, ..Default::default() };
        let r = &evaluate_runs(&runs, &list, 4.3, &opts).unwrap()[0];
        assert_eq!(r.ci_method, CiMethod::TInterval);
        assert_eq!(r.n, 24);
        assert!(r.ci_low.unwrap() < r.f05 && r.f05 < r.ci_high.unwrap());
        assert!(!render_table(std::slice::from_ref(r)).is_empty());
    }
}
