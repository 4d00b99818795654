//! Prompt corpus construction and concreteness-screened prompt extraction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default concreteness cut-off for extracted nouns.
pub const DEFAULT_CONCRETENESS_THRESHOLD: f64 = 4.5;

pub const MIN_CONCRETENESS: f64 = 1.0;
pub const MAX_CONCRETENESS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PromptSource {
    /// Enumerated from the ranked noun/adjective lists.
    Corpus,
    /// Extracted from free text.
    Parsed,
}

/// Zero to two adjectives followed by a noun.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptRecord {
    pub noun: String,
    pub adjectives: Vec<String>,
    pub source: PromptSource,
}

impl PromptRecord {
    pub fn new(noun: impl Into<String>, adjectives: Vec<String>, source: PromptSource) -> Self {
        PromptRecord {
            noun: noun.into(),
            adjectives,
            source,
        }
    }

    /// `"adj1 adj2 noun"` with single spaces.
    pub fn full_text(&self) -> String {
        let mut s = String::new();
        for a in &self.adjectives {
            s.push_str(a);
            s.push(' ');
        }
        s.push_str(&self.noun);
        s
    }
}

fn check_word_list(words: &[String], what: &'static str) -> Result<()> {
    if words.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    let mut seen = BTreeSet::new();
    for w in words {
        if w.is_empty() || w.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(Error::InvalidConfig(format!(
                "{what}: `{w}` is not a lowercase word"
            )));
        }
        if !seen.insert(w.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "{what}: duplicate word `{w}`"
            )));
        }
    }
    Ok(())
}

/// Every prompt with 0 up to `max_adjectives` (at most 2) adjectives.
///
/// Adjective pairs are ordered and distinct, giving `N (1 + A + A (A - 1))`
/// prompts for `max_adjectives = 2`. Output is grouped by adjective count,
/// then adjective tuple in rank order, then noun in rank order.
pub fn build_prompt_corpus(
    nouns: &[String],
    adjectives: &[String],
    max_adjectives: usize,
) -> Result<Vec<PromptRecord>> {
    build_prompt_corpus_range(nouns, adjectives, 0, max_adjectives)
}

/// As [`build_prompt_corpus`] but restricted to adjective counts in `min..=max`.
pub fn build_prompt_corpus_range(
    nouns: &[String],
    adjectives: &[String],
    min_adjectives: usize,
    max_adjectives: usize,
) -> Result<Vec<PromptRecord>> {
    check_word_list(nouns, "nouns")?;
    check_word_list(adjectives, "adjectives")?;
    if max_adjectives > 2 || min_adjectives > max_adjectives {
        return Err(Error::InvalidConfig(format!(
            "adjective count range {min_adjectives}..={max_adjectives} outside 0..=2"
        )));
    }
    let mut tuples: Vec<Vec<String>> = Vec::new();
    if min_adjectives == 0 {
        tuples.push(Vec::new());
    }
    if min_adjectives <= 1 && max_adjectives >= 1 {
        tuples.extend(adjectives.iter().map(|a| alloc::vec![a.clone()]));
    }
    if max_adjectives >= 2 {
        for (i, a) in adjectives.iter().enumerate() {
            for (j, b) in adjectives.iter().enumerate() {
                if i != j {
                    tuples.push(alloc::vec![a.clone(), b.clone()]);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(tuples.len() * nouns.len());
    for adjs in &tuples {
        for n in nouns {
            out.push(PromptRecord::new(
                n.clone(),
                adjs.clone(),
                PromptSource::Corpus,
            ));
        }
    }
    Ok(out)
}

/// Word -> concreteness rating in `[1, 5]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConcretenessTable {
    ratings: BTreeMap<String, f64>,
}

impl ConcretenessTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, rating: f64) -> Result<()> {
        if !(MIN_CONCRETENESS..=MAX_CONCRETENESS).contains(&rating) {
            return Err(Error::OutOfRange {
                what: "concreteness rating",
                value: rating,
            });
        }
        self.ratings.insert(word.to_lowercase(), rating);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.ratings.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Noun,
    Adjective,
    Other,
}

/// Part-of-speech tagging of lowercase tokens.
pub trait PosTagger {
    fn tag(&self, token: &str) -> Tag;
}

/// Ranked noun and adjective lists plus an antonym exclusion map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    noun_set: BTreeSet<String>,
    adjective_set: BTreeSet<String>,
    antonyms: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// Lists are in rank order (most frequent first); duplicates keep the first rank.
    pub fn new(nouns: Vec<String>, adjectives: Vec<String>) -> Self {
        let mut lex = Lexicon::default();
        for n in nouns {
            let n = n.to_lowercase();
            if lex.noun_set.insert(n.clone()) {
                lex.nouns.push(n);
            }
        }
        for a in adjectives {
            let a = a.to_lowercase();
            if lex.adjective_set.insert(a.clone()) {
                lex.adjectives.push(a);
            }
        }
        lex
    }

    pub fn with_antonyms(mut self, antonyms: BTreeMap<String, Vec<String>>) -> Self {
        self.antonyms = antonyms;
        self
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn adjectives(&self) -> &[String] {
        &self.adjectives
    }

    pub fn top_nouns(&self, n: usize) -> &[String] {
        &self.nouns[..n.min(self.nouns.len())]
    }

    pub fn top_adjectives(&self, n: usize) -> &[String] {
        &self.adjectives[..n.min(self.adjectives.len())]
    }

    pub fn antonyms(&self) -> &BTreeMap<String, Vec<String>> {
        &self.antonyms
    }
}

impl PosTagger for Lexicon {
    /// Nouns take precedence for words listed in both sets.
    fn tag(&self, token: &str) -> Tag {
        if self.noun_set.contains(token) {
            Tag::Noun
        } else if self.adjective_set.contains(token) {
            Tag::Adjective
        } else {
            Tag::Other
        }
    }
}

enum Token {
    Word(String),
    Break,
}

/// Lowercased alphanumeric words; apostrophes stay inside words, whitespace
/// only separates, and any other punctuation also breaks adjective runs.
fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(Token::Word(core::mem::take(&mut cur)));
        }
        if !ch.is_whitespace() {
            out.push(Token::Break);
        }
    }
    if !cur.is_empty() {
        out.push(Token::Word(cur));
    }
    out
}

/// Extracts `(adj (adj))? noun` prompts whose noun rates at least `threshold`.
///
/// A noun keeps up to the two nearest distinct adjectives from the run
/// immediately preceding it. Output is in left-to-right order with repeats
/// removed.
pub fn extract_prompts(
    paragraph: &str,
    tagger: &dyn PosTagger,
    table: &ConcretenessTable,
    threshold: f64,
) -> Result<Vec<PromptRecord>> {
    if !(MIN_CONCRETENESS..=MAX_CONCRETENESS).contains(&threshold) {
        return Err(Error::OutOfRange {
            what: "concreteness threshold",
            value: threshold,
        });
    }
    let mut out: Vec<PromptRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut run: Vec<String> = Vec::new();
    for tok in tokenize(paragraph) {
        let word = match tok {
            Token::Word(w) => w,
            Token::Break => {
                run.clear();
                continue;
            }
        };
        match tagger.tag(&word) {
            Tag::Adjective => run.push(word),
            Tag::Noun => {
                let mut adjs: Vec<String> = Vec::new();
                for a in run.iter().rev() {
                    if adjs.len() == 2 {
                        break;
                    }
                    if !adjs.contains(a) {
                        adjs.push(a.clone());
                    }
                }
                adjs.reverse();
                run.clear();
                if table.get(&word).is_some_and(|r| r >= threshold) {
                    let rec = PromptRecord::new(word, adjs, PromptSource::Parsed);
                    if seen.insert(rec.full_text()) {
                        out.push(rec);
                    }
                }
            }
            Tag::Other => run.clear(),
        }
    }
    Ok(out)
}

/// Convenience for the common `&[&str]` case.
pub fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}
