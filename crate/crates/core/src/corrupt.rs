//! Seeded rule-based corruption of correct texts.
//!
//! Every rule edits the source string in place through token byte spans, so
//! untouched regions (spacing, linebreaks) survive verbatim.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TextSample, Token, TokenKind};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, DetRng};

/// Source of random choices for the rules. Implemented for every RNG and
/// for [`ScriptedPicker`], which replays fixed choices.
pub trait Picker {
    /// Uniform index in `0..n` (`n > 0`).
    fn pick(&mut self, n: usize) -> usize;
    /// Uniform real in `[0, 1)`.
    fn unit(&mut self) -> f64;
}

impl<R: RngCore> Picker for R {
    fn pick(&mut self, n: usize) -> usize {
        self.gen_range(0..n)
    }

    fn unit(&mut self) -> f64 {
        self.gen::<f64>()
    }
}

/// Replays predetermined choices; out-of-range indices are reduced modulo
/// `n`. Falls back to 0 / 0.0 when exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPicker {
    picks: Vec<usize>,
    units: Vec<f64>,
}

impl ScriptedPicker {
    pub fn new(picks: &[usize], units: &[f64]) -> Self {
        ScriptedPicker {
            picks: picks.iter().rev().copied().collect(),
            units: units.iter().rev().copied().collect(),
        }
    }
}

impl Picker for ScriptedPicker {
    fn pick(&mut self, n: usize) -> usize {
        self.picks.pop().unwrap_or(0) % n
    }

    fn unit(&mut self) -> f64 {
        self.units.pop().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    GrammarForm,
    Preposition,
    Misspelling,
    SplitMerge,
    Punctuation,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::GrammarForm,
        Rule::Preposition,
        Rule::Misspelling,
        Rule::SplitMerge,
        Rule::Punctuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::GrammarForm => "grammar_form",
            Rule::Preposition => "preposition",
            Rule::Misspelling => "misspelling",
            Rule::SplitMerge => "split_merge",
            Rule::Punctuation => "punctuation",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corruption rule {s:?}")))
    }
}

/// Word lists driving the rules.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    /// word -> other inflected forms of the same lemma
    pub morphology: HashMap<String, Vec<String>>,
    /// word -> misspelled variants
    pub confusions: HashMap<String, Vec<String>>,
    pub prepositions: Vec<String>,
}

const DEMO_MORPHOLOGY: &str = include_str!("../data/demo/morphology.tsv");
const DEMO_CONFUSIONS: &str = include_str!("../data/demo/confusions.tsv");
const DEMO_PREPOSITIONS: &str = include_str!("../data/demo/prepositions.txt");

/// Bundled demo corpus of correct texts (`samples.jsonl` schema).
pub const DEMO_CORPUS: &str = include_str!("../data/demo/correct.jsonl");

fn parse_tsv(content: &str) -> HashMap<String, Vec<String>> {
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for line in content.lines() {
        let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
        let Some(head) = fields.next() else { continue };
        let head = head.to_lowercase();
        let alts = out.entry(head.clone()).or_default();
        for f in fields {
            let f = f.to_lowercase();
            if f != head && !alts.contains(&f) {
                alts.push(f);
            }
        }
    }
    out.retain(|_, v| !v.is_empty());
    out
}

fn parse_list(content: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    content
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && seen.insert(l.clone()))
        .collect()
}

impl Resources {
    pub fn demo() -> Self {
        Self::from_strs(DEMO_MORPHOLOGY, DEMO_CONFUSIONS, DEMO_PREPOSITIONS)
    }

    pub fn from_strs(morphology: &str, confusions: &str, prepositions: &str) -> Self {
        Resources {
            morphology: parse_tsv(morphology),
            confusions: parse_tsv(confusions),
            prepositions: parse_list(prepositions),
        }
    }

    pub fn load(morphology: &Path, confusions: &Path, prepositions: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Ok(Self::from_strs(&read(morphology)?, &read(confusions)?, &read(prepositions)?))
    }
}

/// Parse the bundled demo corpus.
pub fn demo_corpus() -> Vec<TextSample> {
    DEMO_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled corpus is valid"))
        .collect()
}

/// Half-open range of token indices touched by an edit, relative to the
/// text the rule was applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub text: String,
    pub span: TokenSpan,
}

fn splice(text: &str, start: usize, end: usize, with: &str) -> String {
    let mut s = String::with_capacity(text.len() + with.len());
    s.push_str(&text[..start]);
    s.push_str(with);
    s.push_str(&text[end..]);
    s
}

/// Give `replacement` the capitalization of `template`'s first letter.
fn match_case(template: &str, replacement: &str) -> String {
    let upper = template.chars().next().is_some_and(char::is_uppercase);
    if !upper {
        return replacement.to_string();
    }
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn words(tokens: &[Token]) -> impl Iterator<Item = (usize, &Token)> {
    tokens.iter().enumerate().filter(|(_, t)| t.kind == TokenKind::Word)
}

/// Replace one word found in the morphology table by another form of it.
pub fn distort_grammar_form(text: &str, res: &Resources, pick: &mut dyn Picker) -> Option<Applied> {
    let tokens = tokenize(text);
    let candidates: Vec<(usize, &Token, &Vec<String>)> = words(&tokens)
        .filter_map(|(i, t)| res.morphology.get(&t.surface.to_lowercase()).map(|alts| (i, t, alts)))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let (i, tok, alts) = candidates[pick.pick(candidates.len())];
    let alt = &alts[pick.pick(alts.len())];
    let replacement = match_case(&tok.surface, alt);
    if replacement == tok.surface {
        return None;
    }
    Some(Applied {
        text: splice(text, tok.start, tok.end, &replacement),
        span: TokenSpan { start: i, end: i + 1 },
    })
}

/// Delete a preposition, or swap it for another one.
pub fn distort_preposition(
    text: &str,
    res: &Resources,
    delete_share: f64,
    pick: &mut dyn Picker,
) -> Option<Applied> {
    let tokens = tokenize(text);
    let candidates: Vec<(usize, &Token)> = words(&tokens)
        .filter(|(_, t)| res.prepositions.contains(&t.surface.to_lowercase()))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let (i, tok) = candidates[pick.pick(candidates.len())];
    let lower = tok.surface.to_lowercase();
    let others: Vec<&String> = res.prepositions.iter().filter(|p| **p != lower).collect();
    let delete = pick.unit() < delete_share || others.is_empty();
    let span = TokenSpan { start: i, end: i + 1 };
    if delete {
        let bytes = text.as_bytes();
        let mut end = tok.end;
        while end < bytes.len() && (bytes[end] == b' ' || bytes[end] == b'\t') {
            end += 1;
        }
        let mut start = tok.start;
        if end == tok.end || end == bytes.len() || bytes[end] == b'\n' || bytes[end] == b'\r' {
            // nothing to swallow after the word; take the spaces before it
            end = tok.end;
            while start > 0 && (bytes[start - 1] == b' ' || bytes[start - 1] == b'\t') {
                start -= 1;
            }
        }
        Some(Applied { text: splice(text, start, end, ""), span })
    } else {
        let repl = match_case(&tok.surface, others[pick.pick(others.len())]);
        Some(Applied { text: splice(text, tok.start, tok.end, &repl), span })
    }
}

/// Minimum letters for character-level misspellings.
pub const MIN_FALLBACK_LEN: usize = 4;

/// Misspell one word: from the confusion table when any table word occurs,
/// otherwise by swapping, deleting or doubling a letter of a long word.
pub fn inject_misspelling(text: &str, res: &Resources, pick: &mut dyn Picker) -> Option<Applied> {
    let tokens = tokenize(text);
    let table: Vec<(usize, &Token, &Vec<String>)> = words(&tokens)
        .filter_map(|(i, t)| res.confusions.get(&t.surface.to_lowercase()).map(|v| (i, t, v)))
        .collect();
    if !table.is_empty() {
        let (i, tok, variants) = table[pick.pick(table.len())];
        let repl = match_case(&tok.surface, &variants[pick.pick(variants.len())]);
        if repl == tok.surface {
            return None;
        }
        return Some(Applied {
            text: splice(text, tok.start, tok.end, &repl),
            span: TokenSpan { start: i, end: i + 1 },
        });
    }
    let long: Vec<(usize, &Token)> = words(&tokens)
        .filter(|(_, t)| {
            t.surface.chars().count() >= MIN_FALLBACK_LEN && t.surface.chars().all(char::is_alphabetic)
        })
        .collect();
    if long.is_empty() {
        return None;
    }
    let (i, tok) = long[pick.pick(long.len())];
    let chars: Vec<char> = tok.surface.chars().collect();
    let swappable: Vec<usize> = (0..chars.len() - 1).filter(|&k| chars[k] != chars[k + 1]).collect();
    let mut op = pick.pick(3);
    if op == 0 && swappable.is_empty() {
        op = 1;
    }
    let mut out = chars.clone();
    match op {
        0 => {
            let k = swappable[pick.pick(swappable.len())];
            out.swap(k, k + 1);
        }
        1 => {
            out.remove(pick.pick(chars.len()));
        }
        _ => {
            let k = pick.pick(chars.len());
            out.insert(k, chars[k]);
        }
    }
    let misspelled: String = out.into_iter().collect();
    let misspelled = match_case(&tok.surface, &misspelled);
    if misspelled == tok.surface {
        return None;
    }
    Some(Applied {
        text: splice(text, tok.start, tok.end, &misspelled),
        span: TokenSpan { start: i, end: i + 1 },
    })
}

/// Merge two adjacent words, or split a word of four or more letters.
pub fn split_or_merge_words(text: &str, pick: &mut dyn Picker) -> Option<Applied> {
    let tokens = tokenize(text);
    let merges: Vec<usize> = (0..tokens.len().saturating_sub(1))
        .filter(|&i| {
            tokens[i].kind == TokenKind::Word
                && tokens[i + 1].kind == TokenKind::Word
                && !text[tokens[i].end..tokens[i + 1].start].contains('\n')
        })
        .collect();
    let splits: Vec<usize> = words(&tokens)
        .filter(|(_, t)| t.surface.chars().count() >= 4 && t.surface.chars().all(char::is_alphabetic))
        .map(|(i, _)| i)
        .collect();
    let merge = match (merges.is_empty(), splits.is_empty()) {
        (true, true) => return None,
        (false, true) => true,
        (true, false) => false,
        (false, false) => pick.unit() < 0.5,
    };
    if merge {
        let i = merges[pick.pick(merges.len())];
        Some(Applied {
            text: splice(text, tokens[i].end, tokens[i + 1].start, ""),
            span: TokenSpan { start: i, end: i + 2 },
        })
    } else {
        let i = splits[pick.pick(splits.len())];
        let tok = &tokens[i];
        let n = tok.surface.chars().count();
        // interior cut with at least two letters on each side
        let cut = 2 + pick.pick(n - 3);
        let byte = tok.start + tok.surface.char_indices().nth(cut).map(|(b, _)| b).expect("cut inside word");
        Some(Applied { text: splice(text, byte, byte, " "), span: TokenSpan { start: i, end: i + 1 } })
    }
}

/// Remove a comma, or insert one after a word that is not the last word.
pub fn perturb_punctuation(text: &str, removal_share: f64, pick: &mut dyn Picker) -> Option<Applied> {
    let tokens = tokenize(text);
    let commas: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i].kind == TokenKind::Punctuation && tokens[i].surface == ",")
        .collect();
    let last_word = tokens.iter().rposition(|t| t.kind == TokenKind::Word);
    let inserts: Vec<usize> = words(&tokens)
        .map(|(i, _)| i)
        .filter(|&i| Some(i) != last_word)
        .filter(|&i| tokens.get(i + 1).is_some_and(|n| n.kind != TokenKind::Punctuation))
        .collect();
    let remove = match (commas.is_empty(), inserts.is_empty()) {
        (true, true) => return None,
        (false, true) => true,
        (true, false) => false,
        (false, false) => pick.unit() < removal_share,
    };
    if remove {
        let i = commas[pick.pick(commas.len())];
        Some(Applied {
            text: splice(text, tokens[i].start, tokens[i].end, ""),
            span: TokenSpan { start: i, end: i + 1 },
        })
    } else {
        let i = inserts[pick.pick(inserts.len())];
        Some(Applied {
            text: splice(text, tokens[i].end, tokens[i].end, ","),
            span: TokenSpan { start: i, end: i + 1 },
        })
    }
}

/// Lay prose out as verse lines of 4 to 10 words, capitalizing each line.
/// Produces a correct text, not a corruption.
pub fn quasipoetry_reshape(prose: &str, pick: &mut dyn Picker) -> Result<String> {
    let words: Vec<&str> = prose.split_whitespace().collect();
    if words.len() < 4 {
        return Err(Error::invalid("quasipoetry needs at least four words"));
    }
    let mut lines = Vec::new();
    let mut rest = &words[..];
    while !rest.is_empty() {
        let len = (4 + pick.pick(7)).min(rest.len());
        let line = rest[..len].join(" ");
        lines.push(capitalize_first_letter(&line));
        rest = &rest[len..];
    }
    Ok(lines.join("\n"))
}

fn capitalize_first_letter(line: &str) -> String {
    match line.char_indices().find(|(_, c)| c.is_alphabetic()) {
        Some((b, c)) if c.is_lowercase() => {
            let mut s = String::with_capacity(line.len() + 2);
            s.push_str(&line[..b]);
            s.extend(c.to_uppercase());
            s.push_str(&line[b + c.len_utf8()..]);
            s
        }
        _ => line.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub seed: u64,
    pub rule_weights: BTreeMap<Rule, f64>,
    pub max_edits_per_text: usize,
    /// Probability that the preposition rule deletes rather than replaces.
    pub preposition_delete_share: f64,
    /// Probability that the punctuation rule removes a comma when one exists.
    pub comma_removal_share: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            seed: 0,
            rule_weights: Rule::ALL.into_iter().map(|r| (r, 1.0)).collect(),
            max_edits_per_text: 2,
            preposition_delete_share: 0.5,
            comma_removal_share: 0.5,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_edits_per_text == 0 {
            return Err(Error::invalid("max_edits_per_text must be at least 1"));
        }
        if self.rule_weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("rule weights must be finite and non-negative"));
        }
        if self.rule_weights.values().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("rule weights sum to zero"));
        }
        for share in [self.preposition_delete_share, self.comma_removal_share] {
            if !(0.0..=1.0).contains(&share) {
                return Err(Error::invalid(format!("share {share} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Parse `name=weight,...`; rules not mentioned get weight zero.
    pub fn parse_weights(spec: &str) -> Result<BTreeMap<Rule, f64>> {
        let mut out: BTreeMap<Rule, f64> = Rule::ALL.into_iter().map(|r| (r, 0.0)).collect();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, w) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected rule=weight, got {part:?}")))?;
            let rule: Rule = name.trim().parse()?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad weight for {name}: {w:?}")))?;
            out.insert(rule, w);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule: Rule,
    pub span: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub id: String,
    pub domain: String,
    pub original: String,
    pub corrupted: String,
    pub applied: Vec<AppliedRule>,
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub domain: String,
    pub text_fixed: String,
    pub text_corrupted: String,
    pub rules: Vec<String>,
}

impl From<&CorruptionRecord> for PairRecord {
    fn from(r: &CorruptionRecord) -> Self {
        PairRecord {
            id: r.id.clone(),
            domain: r.domain.clone(),
            text_fixed: r.original.clone(),
            text_corrupted: r.corrupted.clone(),
            rules: r.applied.iter().map(|a| a.rule.name().to_string()).collect(),
        }
    }
}

impl CorruptionRecord {
    pub fn to_sample(&self) -> TextSample {
        TextSample::pair(self.id.clone(), self.domain.clone(), self.corrupted.clone(), self.original.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Corruptor {
    config: CorruptionConfig,
    resources: Resources,
}

impl Corruptor {
    pub fn new(config: CorruptionConfig, resources: Resources) -> Result<Self> {
        config.validate()?;
        Ok(Corruptor { config, resources })
    }

    pub fn config(&self) -> &CorruptionConfig {
        &self.config
    }

    pub fn apply_rule(&self, rule: Rule, text: &str, pick: &mut dyn Picker) -> Option<Applied> {
        let res = &self.resources;
        match rule {
            Rule::GrammarForm => distort_grammar_form(text, res, pick),
            Rule::Preposition => distort_preposition(text, res, self.config.preposition_delete_share, pick),
            Rule::Misspelling => inject_misspelling(text, res, pick),
            Rule::SplitMerge => split_or_merge_words(text, pick),
            Rule::Punctuation => perturb_punctuation(text, self.config.comma_removal_share, pick),
        }
    }

    /// Corrupt with an explicit random stream.
    pub fn corrupt_with(&self, id: &str, domain: &str, text: &str, rng: &mut DetRng) -> Result<CorruptionRecord> {
        let k = 1 + rng.gen_range(0..self.config.max_edits_per_text);
        let mut current = text.to_string();
        let mut applied = Vec::new();
        'edits: for _ in 0..k {
            let mut pool: Vec<(Rule, f64)> = self
                .config
                .rule_weights
                .iter()
                .filter(|(_, &w)| w > 0.0)
                .map(|(&r, &w)| (r, w))
                .collect();
            loop {
                if pool.is_empty() {
                    break 'edits;
                }
                let total: f64 = pool.iter().map(|(_, w)| w).sum();
                let mut target = rng.gen::<f64>() * total;
                let mut idx = pool.len() - 1;
                for (i, (_, w)) in pool.iter().enumerate() {
                    if target < *w {
                        idx = i;
                        break;
                    }
                    target -= w;
                }
                let (rule, _) = pool.remove(idx);
                if let Some(a) = self.apply_rule(rule, &current, rng) {
                    if a.text != text {
                        current = a.text;
                        applied.push(AppliedRule { rule, span: a.span });
                        break;
                    }
                }
            }
        }
        if applied.is_empty() {
            return Err(Error::domain(format!("no applicable rule for text {id:?}")));
        }
        Ok(CorruptionRecord {
            id: id.to_string(),
            domain: domain.to_string(),
            original: text.to_string(),
            corrupted: current,
            applied,
        })
    }

    /// Corrupt one text; the random stream is derived from the seed and id.
    pub fn corrupt(&self, id: &str, domain: &str, text: &str) -> Result<CorruptionRecord> {
        let mut rng = seed::rng(seed::derive_str(self.config.seed, id));
        self.corrupt_with(id, domain, text, &mut rng)
    }

    /// Generate `n` records cycling through `corpus`. Record `i` depends only
    /// on the seed and `i`, so any prefix is reproducible on its own.
    pub fn generate_dataset(&self, corpus: &[TextSample], n: usize) -> Result<Vec<CorruptionRecord>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let sources: Vec<&TextSample> = corpus.iter().filter(|s| s.text_fixed.is_some()).collect();
        if sources.is_empty() {
            return Err(Error::invalid("corpus has no correct texts"));
        }
        par::map_range(n, |i| {
            let src = sources[i % sources.len()];
            let text = src.text_fixed.as_deref().expect("filtered");
            let mut rng = seed::rng_for(self.config.seed, i as u64);
            self.corrupt_with(&format!("{}#{i}", src.id), &src.domain, text, &mut rng)
        })
        .into_iter()
        .collect()
    }
}
