//! Add-k smoothed word n-gram language model with full next-token
//! distributions.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, tokenize};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";

const FORMAT_TAG: &str = "gedkit-ngram";
const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING_K: f64 = 0.1;
pub const DEFAULT_VOCAB_CAP: usize = 50_000;

/// A normalized next-token distribution over the model vocabulary together
/// with its descending-probability permutation (ties by ascending index).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionView {
    probs: Vec<f64>,
    sorted_desc: Vec<u32>,
}

impl DistributionView {
    /// Build from probabilities that must sum to one within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self::from_normalized(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        let mut sorted_desc: Vec<u32> = (0..probs.len() as u32).collect();
        sorted_desc.sort_by(|&a, &b| {
            probs[b as usize]
                .total_cmp(&probs[a as usize])
                .then(a.cmp(&b))
        });
        DistributionView { probs, sorted_desc }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sorted_desc(&self) -> &[u32] {
        &self.sorted_desc
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Probabilities in descending order.
    pub fn descending(&self) -> impl Iterator<Item = f64> + '_ {
        self.sorted_desc.iter().map(|&i| self.probs[i as usize])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    vocab_cap: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    contexts: HashMap<Vec<u32>, ContextCounts>,
}

/// One scored position of a text.
#[derive(Debug, Clone)]
pub struct ScoredToken {
    pub token: String,
    pub distribution: DistributionView,
    pub observed: usize,
}

fn scoreable_surfaces(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.is_scoreable())
        .map(|t| t.surface)
        .collect()
}

impl NGramModel {
    pub fn fit<S: AsRef<str>>(corpus: &[S], order: usize, smoothing_k: f64, vocab_cap: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot fit a language model on an empty corpus"));
        }
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(Error::invalid(format!("smoothing k must be positive, got {smoothing_k}")));
        }
        let texts: Vec<Vec<String>> = corpus.iter().map(|t| scoreable_surfaces(t.as_ref())).collect();

        let mut freq: HashMap<&str, u64> = HashMap::new();
        for tok in texts.iter().flatten() {
            *freq.entry(tok.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(vocab_cap);
        let words: Vec<String> = ranked.into_iter().map(|(w, _)| w.to_string()).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();

        let mut model = NGramModel {
            order,
            smoothing_k,
            vocab_cap,
            words,
            index,
            contexts: HashMap::new(),
        };
        for text in &texts {
            let ids: Vec<u32> = text.iter().map(|t| model.token_id(t)).collect();
            let mut padded = vec![model.bos_id(); order - 1];
            padded.extend_from_slice(&ids);
            for t in 0..ids.len() {
                let ctx = padded[t..t + order - 1].to_vec();
                let entry = model.contexts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(padded[t + order - 1]).or_default() += 1;
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab_cap(&self) -> usize {
        self.vocab_cap
    }

    /// In-vocabulary words, excluding the reserved symbols.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Size of the predicted outcome space: every word plus UNK.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn unk_id(&self) -> u32 {
        self.words.len() as u32
    }

    pub fn bos_id(&self) -> u32 {
        self.words.len() as u32 + 1
    }

    pub fn token_id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or_else(|| self.unk_id())
    }

    /// Surface for an outcome index.
    pub fn surface(&self, id: u32) -> &str {
        match self.words.get(id as usize) {
            Some(w) => w,
            None if id == self.unk_id() => UNK,
            None => BOS,
        }
    }

    fn distribution_for_ids(&self, context: &[u32]) -> DistributionView {
        let v = self.vocab_size();
        let k = self.smoothing_k;
        let counts = self.contexts.get(context);
        let total = counts.map_or(0, |c| c.total) as f64;
        let denom = total + k * v as f64;
        let mut probs = vec![k / denom; v];
        if let Some(c) = counts {
            for (&tok, &n) in &c.next {
                probs[tok as usize] = (n as f64 + k) / denom;
            }
        }
        DistributionView::from_normalized(probs)
    }

    fn context_ids<S: AsRef<str>>(&self, context: &[S]) -> Vec<u32> {
        let want = self.order - 1;
        let mut ids = vec![self.bos_id(); want.saturating_sub(context.len())];
        let skip = context.len().saturating_sub(want);
        ids.extend(context[skip..].iter().map(|s| self.token_id(s.as_ref())));
        ids
    }

    /// Next-token distribution after `context` (only the last `order - 1`
    /// tokens matter; shorter contexts are BOS-padded).
    pub fn distribution<S: AsRef<str>>(&self, context: &[S]) -> DistributionView {
        self.distribution_for_ids(&self.context_ids(context))
    }

    /// Score every non-linebreak token of `text` left to right.
    pub fn score_text(&self, text: &str) -> Result<Vec<ScoredToken>> {
        let toks = scoreable_surfaces(text);
        if toks.is_empty() {
            return Err(Error::domain("nothing to score"));
        }
        let ids: Vec<u32> = toks.iter().map(|t| self.token_id(t)).collect();
        let mut padded = vec![self.bos_id(); self.order - 1];
        padded.extend_from_slice(&ids);
        Ok(toks
            .into_iter()
            .enumerate()
            .map(|(t, token)| ScoredToken {
                token,
                distribution: self.distribution_for_ids(&padded[t..t + self.order - 1]),
                observed: ids[t] as usize,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        corpus::write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = corpus::read_json(path)?;
        Self::from_file(file)
    }

    fn to_file(&self) -> ModelFile {
        let mut contexts: Vec<ContextEntry> = self
            .contexts
            .iter()
            .map(|(ctx, c)| ContextEntry {
                context: ctx.clone(),
                total: c.total,
                next: c.next.iter().map(|(&k, &v)| (k, v)).collect::<BTreeMap<_, _>>().into_iter().collect(),
            })
            .collect();
        contexts.sort_by(|a, b| a.context.cmp(&b.context));
        ModelFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            order: self.order,
            smoothing_k: self.smoothing_k,
            vocab_cap: self.vocab_cap,
            vocabulary: self.words.clone(),
            contexts,
        }
    }

    fn from_file(file: ModelFile) -> Result<Self> {
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        if file.order == 0 || !(file.smoothing_k > 0.0) {
            return Err(Error::invalid("corrupt model header"));
        }
        let n = file.vocabulary.len() as u32;
        let mut contexts = HashMap::with_capacity(file.contexts.len());
        for e in file.contexts {
            if e.context.len() != file.order - 1 || e.context.iter().any(|&c| c > n + 1) {
                return Err(Error::invalid("context does not match model order or vocabulary"));
            }
            let mut next = HashMap::with_capacity(e.next.len());
            let mut sum = 0;
            for (tok, count) in e.next {
                if tok > n || count == 0 {
                    return Err(Error::invalid("invalid stored count"));
                }
                sum += count;
                next.insert(tok, count);
            }
            if sum != e.total {
                return Err(Error::invalid("context total does not match its counts"));
            }
            contexts.insert(e.context, ContextCounts { total: e.total, next });
        }
        let index = file
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(NGramModel {
            order: file.order,
            smoothing_k: file.smoothing_k,
            vocab_cap: file.vocab_cap,
            words: file.vocabulary,
            index,
            contexts,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    smoothing_k: f64,
    vocab_cap: usize,
    vocabulary: Vec<String>,
    contexts: Vec<ContextEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<u32>,
    total: u64,
    next: Vec<(u32, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_model() -> NGramModel {
        NGramModel::fit(&["a b", "a b"], 2, 1.0, 10).unwrap()
    }

    #[test]
    fn add_k_bigram_hand_count() {
        let m = ab_model();
        assert_eq!(m.vocab_size(), 3);
        let d = m.distribution(&["a"]);
        let b = m.token_id("b") as usize;
        assert!((d.prob(b) - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn unigram_unseen_context_is_uniform() {
        let m = NGramModel::fit(&["x"], 1, 0.5, 10).unwrap();
        // order 1 sees a single context; a model with no counts is uniform
        let empty = NGramModel { contexts: HashMap::new(), ..m };
        let d = empty.distribution::<&str>(&[]);
        for &p in d.probabilities() {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = ab_model();
        let d = m.distribution(&["zzz"]);
        let v = m.vocab_size() as f64;
        for &p in d.probabilities() {
            assert!((p - 1.0 / v).abs() < 1e-15);
        }
    }

    #[test]
    fn vocab_cap_keeps_most_frequent() {
        let m = NGramModel::fit(&["x y x"], 2, 0.1, 1).unwrap();
        assert_eq!(m.words(), ["x".to_string()]);
        assert_eq!(m.token_id("y"), m.unk_id());
        assert_eq!(m.vocab_size(), 2);
    }

    #[test]
    fn frequency_ties_are_lexicographic() {
        let m = NGramModel::fit(&["b a c"], 1, 0.1, 2).unwrap();
        assert_eq!(m.words(), ["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(NGramModel::fit::<&str>(&[], 3, 0.1, 10).is_err());
    }

    #[test]
    fn score_text_entries() {
        let m = ab_model();
        let scored = m.score_text("a b").unwrap();
        assert_eq!(scored.len(), 2);
        let second = &scored[1];
        assert_eq!(second.token, "b");
        assert!((second.distribution.prob(second.observed) - 0.6).abs() < 1e-15);

        let single = m.score_text("a").unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].distribution, m.distribution::<&str>(&[]));
        assert!(m.score_text("").is_err());
        assert!(m.score_text("\n\n").is_err());
    }

    #[test]
    fn linebreaks_are_skipped_when_scoring() {
        let m = ab_model();
        assert_eq!(m.score_text("a\nb").unwrap().len(), 2);
    }

    #[test]
    fn save_load_is_byte_stable() {
        let m = NGramModel::fit(&["кот спит на окне", "кот спит, а пёс лежит.\nночь"], 3, 0.1, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        m.save(&p1).unwrap();
        let back = NGramModel::load(&p1).unwrap();
        assert_eq!(back, m);
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn distribution_view_validates() {
        assert!(DistributionView::new(vec![0.5, 0.4]).is_err());
        assert!(DistributionView::new(vec![]).is_err());
        let d = DistributionView::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(d.sorted_desc(), &[1, 0, 2]);
    }
}
