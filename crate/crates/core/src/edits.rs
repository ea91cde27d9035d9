//! Word-level edits between texts, defect categories, edit-frequency
//! profiles with KL divergence, and lexical corpus statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{render, surface_kind, tokenize, TokenKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Spelling,
    Tokenization,
    Punctuation,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Spelling, Category::Tokenization, Category::Punctuation, Category::Other];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Spelling => "spelling",
            Category::Tokenization => "tokenization",
            Category::Punctuation => "punctuation",
            Category::Other => "other",
        })
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
            EditKind::Replace => "replace",
        })
    }
}

/// A maximal contiguous block of non-matching tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    #[serde(rename = "src")]
    pub src_tokens: Vec<String>,
    #[serde(rename = "dst")]
    pub dst_tokens: Vec<String>,
    /// Token index in the source text where the block starts.
    #[serde(rename = "pos")]
    pub src_position: usize,
    pub category: Category,
}

fn token_surfaces(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}

/// Longest-common-subsequence alignment of two token lists, returned as
/// matched index pairs in increasing order.
fn lcs_matches(a: &[String], b: &[String]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    // suffix table: lcs[i][j] = LCS length of a[i..], b[j..]
    let width = m + 1;
    let mut lcs = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i * width + j] = if a[i] == b[j] {
                lcs[(i + 1) * width + j + 1] + 1
            } else {
                lcs[(i + 1) * width + j].max(lcs[i * width + j + 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if lcs[(i + 1) * width + j] >= lcs[i * width + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn make_op(src: &[String], dst: &[String], pos: usize, lexicon: Option<&HashSet<String>>) -> EditOp {
    let kind = match (src.is_empty(), dst.is_empty()) {
        (true, _) => EditKind::Insert,
        (_, true) => EditKind::Delete,
        _ => EditKind::Replace,
    };
    let mut op = EditOp {
        kind,
        src_tokens: src.to_vec(),
        dst_tokens: dst.to_vec(),
        src_position: pos,
        category: Category::Other,
    };
    op.category = categorize_with_lexicon(&op, lexicon);
    op
}

/// Word-level edits turning `a` into `b`.
pub fn word_level_diff(a: &str, b: &str) -> Vec<EditOp> {
    word_level_diff_with_lexicon(a, b, None)
}

pub fn word_level_diff_with_lexicon(a: &str, b: &str, lexicon: Option<&HashSet<String>>) -> Vec<EditOp> {
    let ta = token_surfaces(a);
    let tb = token_surfaces(b);
    let mut ops = Vec::new();
    let (mut i, mut j) = (0, 0);
    let anchors = lcs_matches(&ta, &tb).into_iter().chain(std::iter::once((ta.len(), tb.len())));
    for (mi, mj) in anchors {
        if mi > i || mj > j {
            ops.push(make_op(&ta[i..mi], &tb[j..mj], i, lexicon));
        }
        i = mi + 1;
        j = mj + 1;
    }
    ops
}

/// Apply edits produced against `a` and render the result in canonical
/// spacing.
pub fn apply_edits(a: &str, edits: &[EditOp]) -> Result<String> {
    let src = token_surfaces(a);
    let mut out: Vec<String> = Vec::with_capacity(src.len());
    let mut cursor = 0;
    for e in edits {
        let end = e.src_position + e.src_tokens.len();
        if e.src_position < cursor || end > src.len() {
            return Err(Error::invalid(format!("edit at token {} is out of range", e.src_position)));
        }
        if src[e.src_position..end] != e.src_tokens[..] {
            return Err(Error::invalid(format!("edit at token {} does not match the text", e.src_position)));
        }
        out.extend_from_slice(&src[cursor..e.src_position]);
        out.extend(e.dst_tokens.iter().cloned());
        cursor = end;
    }
    out.extend_from_slice(&src[cursor..]);
    Ok(render(&out))
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn categorize(edit: &EditOp) -> Category {
    categorize_with_lexicon(edit, None)
}

/// First matching rule: punctuation-only edits; pure split/merge; one-word
/// replacement within edit distance 2 (unless the source word is a known
/// word of `lexicon`); everything else.
pub fn categorize_with_lexicon(edit: &EditOp, lexicon: Option<&HashSet<String>>) -> Category {
    let all_punct = edit
        .src_tokens
        .iter()
        .chain(&edit.dst_tokens)
        .all(|t| surface_kind(t) == TokenKind::Punctuation);
    if all_punct {
        return Category::Punctuation;
    }
    if edit.kind == EditKind::Replace && edit.src_tokens.concat().to_lowercase() == edit.dst_tokens.concat().to_lowercase() {
        return Category::Tokenization;
    }
    if edit.kind == EditKind::Replace && edit.src_tokens.len() == 1 && edit.dst_tokens.len() == 1 {
        let (s, d) = (edit.src_tokens[0].to_lowercase(), edit.dst_tokens[0].to_lowercase());
        let alphabetic = |w: &str| w.chars().all(char::is_alphabetic);
        let known = lexicon.is_some_and(|lex| lex.contains(&s));
        if alphabetic(&s) && alphabetic(&d) && levenshtein(&s, &d) <= 2 && !known {
            return Category::Spelling;
        }
    }
    Category::Other
}

/// Whitespace-only change around a hyphen, which leaves the words intact.
pub fn is_hyphen_spacing(edit: &EditOp) -> bool {
    let joined = |v: &[String]| v.concat();
    edit.kind == EditKind::Replace
        && joined(&edit.src_tokens) == joined(&edit.dst_tokens)
        && joined(&edit.src_tokens).contains('-')
}

/// Number of counted edits needed to turn `corrupted` into `fixed`.
pub fn counted_edits(corrupted: &str, fixed: &str) -> usize {
    word_level_diff(corrupted, fixed).iter().filter(|e| !is_hyphen_spacing(e)).count()
}

/// Histogram of edit counts per (corrupted, fixed) pair.
pub fn edit_count_histogram<S: AsRef<str>>(pairs: &[(S, S)]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for (c, f) in pairs {
        *h.entry(counted_edits(c.as_ref(), f.as_ref())).or_default() += 1;
    }
    h
}

/// Canonical key of an edit for frequency comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EditSignature(String);

impl EditSignature {
    pub fn of(edit: &EditOp) -> Self {
        let low = |v: &[String]| v.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>().join(" ");
        EditSignature(format!(
            "{}\t{}\t{}\t{}",
            edit.kind,
            edit.category,
            low(&edit.src_tokens),
            low(&edit.dst_tokens)
        ))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Serialize for EditSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EditSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d).map(EditSignature)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditProfile {
    pub category_counts: BTreeMap<Category, usize>,
    pub edits_per_pair_histogram: BTreeMap<usize, usize>,
    pub signature_frequencies: BTreeMap<EditSignature, f64>,
}

impl EditProfile {
    pub fn total_edits(&self) -> usize {
        self.category_counts.values().sum()
    }
}

/// Edit statistics over (corrupted, fixed) pairs.
pub fn edit_frequency_profile<S: AsRef<str>>(pairs: &[(S, S)]) -> EditProfile {
    let mut profile = EditProfile::default();
    let mut sig_counts: BTreeMap<EditSignature, usize> = BTreeMap::new();
    for (c, f) in pairs {
        let edits: Vec<EditOp> = word_level_diff(c.as_ref(), f.as_ref())
            .into_iter()
            .filter(|e| !is_hyphen_spacing(e))
            .collect();
        *profile.edits_per_pair_histogram.entry(edits.len()).or_default() += 1;
        for e in &edits {
            *profile.category_counts.entry(e.category).or_default() += 1;
            *sig_counts.entry(EditSignature::of(e)).or_default() += 1;
        }
    }
    let total: usize = sig_counts.values().sum();
    profile.signature_frequencies = sig_counts
        .into_iter()
        .map(|(k, v)| (k, v as f64 / total as f64))
        .collect();
    profile
}

pub const DEFAULT_KL_EPSILON: f64 = 1e-9;

/// `D(P || Q) = sum p log(p / q)` over the union of signatures, after adding
/// `epsilon` to every entry of both sides and renormalizing.
pub fn kl_divergence(p: &EditProfile, q: &EditProfile, epsilon: f64) -> Result<f64> {
    kl_divergence_maps(&p.signature_frequencies, &q.signature_frequencies, epsilon)
}

pub fn kl_divergence_maps<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>, epsilon: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::invalid("reference edit profile is empty"));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    let support: Vec<&K> = p.keys().chain(q.keys()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let smooth = |m: &BTreeMap<K, f64>| -> Vec<f64> {
        let raw: Vec<f64> = support.iter().map(|k| m.get(*k).copied().unwrap_or(0.0) + epsilon).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / z).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let mut d = 0.0;
    for (pi, qi) in ps.iter().zip(&qs) {
        if *pi == 0.0 {
            continue;
        }
        if *qi == 0.0 {
            return Err(Error::domain("KL divergence is infinite: reference edit missing from compared profile"));
        }
        d += pi * (pi / qi).ln();
    }
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabStats {
    pub total_words: usize,
    pub unique_words: usize,
    pub unique_bigrams: usize,
    pub unique_trigrams: usize,
}

/// Lowercased word-token segments per text, split at linebreaks.
fn word_segments(text: &str) -> Vec<Vec<String>> {
    let mut segs = vec![Vec::new()];
    for t in tokenize(text) {
        match t.kind {
            TokenKind::Word => segs.last_mut().expect("non-empty").push(t.surface.to_lowercase()),
            TokenKind::Linebreak => segs.push(Vec::new()),
            _ => {}
        }
    }
    segs.retain(|s| !s.is_empty());
    segs
}

pub fn vocabulary<S: AsRef<str>>(corpus: &[S]) -> HashSet<String> {
    corpus
        .iter()
        .flat_map(|t| word_segments(t.as_ref()))
        .flatten()
        .collect()
}

/// Word and n-gram counts, ignoring punctuation and numbers.
pub fn vocab_stats<S: AsRef<str>>(corpus: &[S]) -> VocabStats {
    let mut total = 0;
    let mut words = HashSet::new();
    let mut bi = HashSet::new();
    let mut tri = HashSet::new();
    for text in corpus {
        for seg in word_segments(text.as_ref()) {
            total += seg.len();
            for w in seg.windows(2) {
                bi.insert((w[0].clone(), w[1].clone()));
            }
            for w in seg.windows(3) {
                tri.insert((w[0].clone(), w[1].clone(), w[2].clone()));
            }
            words.extend(seg);
        }
    }
    VocabStats { total_words: total, unique_words: words.len(), unique_bigrams: bi.len(), unique_trigrams: tri.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabOverlap {
    /// Words of A absent from B.
    pub new_words: usize,
    pub jaccard: f64,
    /// Share of B's vocabulary also present in A.
    pub containment: f64,
}

pub fn vocab_overlap_and_novelty<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> VocabOverlap {
    let va = vocabulary(a);
    let vb = vocabulary(b);
    let inter = va.intersection(&vb).count();
    let union = va.union(&vb).count();
    VocabOverlap {
        new_words: va.difference(&vb).count(),
        jaccard: if union == 0 { 0.0 } else { inter as f64 / union as f64 },
        containment: if vb.is_empty() { 0.0 } else { inter as f64 / vb.len() as f64 },
    }
}

/// Histogram of non-empty lines per poem.
pub fn poem_line_stats<S: AsRef<str>>(poems: &[S]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for p in poems {
        let n = p.as_ref().lines().filter(|l| !l.trim().is_empty()).count();
        *h.entry(n).or_default() += 1;
    }
    h
}
