//! Sample records, tokenization and newline-delimited JSON I/O.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A text sample as stored in `samples.jsonl`. At least one of the two
/// texts is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub text_corrupted: Option<String>,
    #[serde(default)]
    pub text_fixed: Option<String>,
}

impl TextSample {
    pub fn correct(id: impl Into<String>, domain: impl Into<String>, text: impl Into<String>) -> Self {
        TextSample {
            id: id.into(),
            domain: domain.into(),
            text_corrupted: None,
            text_fixed: Some(text.into()),
        }
    }

    pub fn pair(
        id: impl Into<String>,
        domain: impl Into<String>,
        corrupted: impl Into<String>,
        fixed: impl Into<String>,
    ) -> Self {
        TextSample {
            id: id.into(),
            domain: domain.into(),
            text_corrupted: Some(corrupted.into()),
            text_fixed: Some(fixed.into()),
        }
    }

    pub fn is_pair(&self) -> bool {
        self.text_corrupted.is_some() && self.text_fixed.is_some()
    }
}

/// Binary label of a whole text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Correct = 0,
    Corrupted = 1,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Correct),
            1 => Ok(Label::Corrupted),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub domain: String,
    pub text: String,
    pub label: Label,
}

pub const CORRUPTED_SUFFIX: &str = ":corrupted";
pub const FIXED_SUFFIX: &str = ":fixed";

/// Flatten samples into labelled instances: every corrupted text becomes a
/// positive, every fixed text a negative. Ids get a side suffix.
pub fn expand_pairs(samples: &[TextSample]) -> Vec<LabeledInstance> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        if let Some(t) = &s.text_corrupted {
            out.push(LabeledInstance {
                id: format!("{}{CORRUPTED_SUFFIX}", s.id),
                domain: s.domain.clone(),
                text: t.clone(),
                label: Label::Corrupted,
            });
        }
        if let Some(t) = &s.text_fixed {
            out.push(LabeledInstance {
                id: format!("{}{FIXED_SUFFIX}", s.id),
                domain: s.domain.clone(),
                text: t.clone(),
                label: Label::Correct,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Number,
    Punctuation,
    Linebreak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_scoreable(&self) -> bool {
        self.kind != TokenKind::Linebreak
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}')
}

/// Split text into word, number, punctuation and linebreak tokens.
///
/// Words are maximal letter runs; a hyphen or apostrophe stays inside a word
/// only when a letter follows it. Digit runs are numbers. Every other
/// non-whitespace character is its own punctuation token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c == '\n' {
            tokens.push(Token { surface: "\n".into(), kind: TokenKind::Linebreak, start, end: start + 1 });
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphabetic() {
                    j += 1;
                } else if is_joiner(cj) && chars.get(j + 1).is_some_and(|&(_, n)| n.is_alphabetic()) {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = byte_at(j);
            tokens.push(Token { surface: text[start..end].to_string(), kind: TokenKind::Word, start, end });
            i = j;
        } else if c.is_numeric() {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_numeric() {
                j += 1;
            }
            let end = byte_at(j);
            tokens.push(Token { surface: text[start..end].to_string(), kind: TokenKind::Number, start, end });
            i = j;
        } else {
            let end = start + c.len_utf8();
            tokens.push(Token { surface: c.to_string(), kind: TokenKind::Punctuation, start, end });
            i += 1;
        }
    }
    tokens
}

/// Kind a standalone surface would receive from [`tokenize`].
pub fn surface_kind(surface: &str) -> TokenKind {
    match surface.chars().next() {
        Some('\n') => TokenKind::Linebreak,
        Some(c) if c.is_alphabetic() => TokenKind::Word,
        Some(c) if c.is_numeric() => TokenKind::Number,
        _ => TokenKind::Punctuation,
    }
}

fn closes(surface: &str) -> bool {
    matches!(surface, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "}" | "»" | "…" | "%")
}

fn opens(surface: &str) -> bool {
    matches!(surface, "(" | "[" | "{" | "«" | "„")
}

/// Render token surfaces in canonical spacing: one space between tokens, no
/// space before closing punctuation or after opening punctuation, linebreaks
/// verbatim with no surrounding spaces.
pub fn render<S: AsRef<str>>(surfaces: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for s in surfaces {
        let s = s.as_ref();
        if let Some(p) = prev {
            let glue = p == "\n" || s == "\n" || closes(s) || opens(p);
            if !glue {
                out.push(' ');
            }
        }
        out.push_str(s);
        prev = Some(s);
    }
    out
}

/// Canonical whitespace form of a text.
pub fn normalize(text: &str) -> String {
    let toks = tokenize(text);
    let surfaces: Vec<&str> = toks.iter().map(|t| t.surface.as_str()).collect();
    render(&surfaces)
}

/// Read newline-delimited JSON records; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Read `samples.jsonl`, checking that every record carries a text and that
/// ids are unique.
pub fn read_samples(path: &Path) -> Result<Vec<TextSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| Error::Record { path: path.to_path_buf(), line: n + 1, message };
        let sample: TextSample = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        if sample.text_corrupted.is_none() && sample.text_fixed.is_none() {
            return Err(record_err("sample has no text".into()));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(record_err(format!("duplicate id {:?}", sample.id)));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[TextSample]) -> Result<()> {
    write_jsonl(path, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<(String, TokenKind)> {
        tokenize(text).into_iter().map(|t| (t.surface, t.kind)).collect()
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_cyrillic_with_comma() {
        use TokenKind::*;
        assert_eq!(
            surfaces("кот, дом"),
            vec![("кот".into(), Word), (",".into(), Punctuation), ("дом".into(), Word)]
        );
    }

    #[test]
    fn tokenize_hyphenated_and_number() {
        use TokenKind::*;
        assert_eq!(
            surfaces("two-step 7!"),
            vec![("two-step".into(), Word), ("7".into(), Number), ("!".into(), Punctuation)]
        );
    }

    #[test]
    fn dangling_hyphen_is_punctuation() {
        use TokenKind::*;
        assert_eq!(
            surfaces("-a- b'"),
            vec![
                ("-".into(), Punctuation),
                ("a".into(), Word),
                ("-".into(), Punctuation),
                ("b".into(), Word),
                ("'".into(), Punctuation)
            ]
        );
    }

    #[test]
    fn mixed_runs_split_at_boundary() {
        use TokenKind::*;
        assert_eq!(
            surfaces("abc12de"),
            vec![("abc".into(), Word), ("12".into(), Number), ("de".into(), Word)]
        );
    }

    #[test]
    fn linebreaks_are_tokens() {
        let kinds: Vec<TokenKind> = tokenize("a\r\nb\n\nc").iter().map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(kinds, vec![Word, Linebreak, Word, Linebreak, Linebreak, Word]);
    }

    #[test]
    fn spans_reconstruct_source() {
        let text = "  Привет,  мир!\n\tэто — тест-2 «кавычки» ";
        let toks = tokenize(text);
        let mut rebuilt = String::new();
        let mut pos = 0;
        for t in &toks {
            assert!(t.start >= pos);
            assert!(text[pos..t.start].chars().all(char::is_whitespace));
            rebuilt.push_str(&text[pos..t.start]);
            rebuilt.push_str(&text[t.start..t.end]);
            assert_eq!(&text[t.start..t.end], t.surface);
            pos = t.end;
        }
        rebuilt.push_str(&text[pos..]);
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn render_spacing() {
        assert_eq!(normalize("он  пошел ,домой .\nи  всё"), "он пошел, домой.\nи всё");
        assert_eq!(normalize("« да »"), "«да»");
    }

    #[test]
    fn expand_counts_and_labels() {
        let samples = vec![
            TextSample::pair("a", "poetry", "x y", "x, y"),
            TextSample::correct("b", "poetry", "z"),
        ];
        let inst = expand_pairs(&samples);
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0].label, Label::Corrupted);
        assert_eq!(inst[1].label, Label::Correct);
        assert_eq!(inst[0].id, "a:corrupted");
        assert_eq!(inst[2].id, "b:fixed");
    }

    #[test]
    fn expand_table1_poetry_counts() {
        let mut samples = Vec::new();
        for i in 0..5133 {
            samples.push(TextSample::pair(format!("b{i}"), "poetry", "x", "y"));
        }
        for i in 0..3069 {
            samples.push(TextSample {
                id: format!("c{i}"),
                domain: "poetry".into(),
                text_corrupted: Some("x".into()),
                text_fixed: None,
            });
        }
        for i in 0..3971 {
            samples.push(TextSample::correct(format!("f{i}"), "poetry", "y"));
        }
        assert_eq!(expand_pairs(&samples).len(), 17306);
    }
}
