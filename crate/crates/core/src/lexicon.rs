//! Bilingual personality-trait vocabulary with polarity annotations.
//!
//! The trait table is a UTF-8, tab separated file with the columns
//! `trait_id, english_lemma, chinese_lemmas, polarity, bilingual`, where the
//! Chinese lemmas are `;`-joined. An optional header row with exactly those
//! column names is accepted and always written on export.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Language};

pub const TABLE_HEADER: &str = "trait_id\tenglish_lemma\tchinese_lemmas\tpolarity\tbilingual";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitId(pub u32);

impl fmt::Display for TraitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }

    /// Sentiment value used by the timeline: +1, 0, -1.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Neutral => 0.0,
            Polarity::Negative => -1.0,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitEntry {
    pub trait_id: TraitId,
    pub english_lemma: String,
    pub chinese_lemmas: Vec<String>,
    pub polarity: Polarity,
    pub bilingual: bool,
}

impl TraitEntry {
    /// Display lemma for a language, falling back to the other language.
    pub fn lemma(&self, language: Language) -> &str {
        match language {
            Language::En if !self.english_lemma.is_empty() => &self.english_lemma,
            Language::Zh if !self.chinese_lemmas.is_empty() => &self.chinese_lemmas[0],
            _ if !self.english_lemma.is_empty() => &self.english_lemma,
            _ => &self.chinese_lemmas[0],
        }
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected 5 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: invalid trait id {value:?}")]
    BadId { line: usize, value: String },
    #[error("line {line}: unknown polarity token {value:?}")]
    UnknownPolarity { line: usize, value: String },
    #[error("line {line}: invalid bilingual flag {value:?} (expected true or false)")]
    BadFlag { line: usize, value: String },
    #[error("line {line}: trait {trait_id} has no lemma")]
    NoLemma { line: usize, trait_id: TraitId },
    #[error("duplicate trait id {0}")]
    DuplicateId(TraitId),
    #[error("duplicate {language} surface {surface:?}: traits {first} and {second}")]
    DuplicateSurface { language: Language, surface: String, first: TraitId, second: TraitId },
    #[error("unknown trait id {0}")]
    UnknownTrait(TraitId),
}

/// Per-polarity and per-language counts reported after loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LexiconSummary {
    pub entries: usize,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
    pub english_lemmas: usize,
    pub bilingual_entries: usize,
    pub bilingual_chinese_lemmas: usize,
}

#[derive(Debug, Clone, Default)]
struct SurfaceIndex {
    forms: HashMap<Vec<String>, TraitId>,
    max_len: usize,
}

impl SurfaceIndex {
    fn insert(&mut self, language: Language, key: Vec<String>, id: TraitId) -> Result<(), LexiconError> {
        if let Some(&prev) = self.forms.get(&key) {
            return Err(LexiconError::DuplicateSurface {
                language,
                surface: key.join(if language == Language::En { " " } else { "" }),
                first: prev,
                second: id,
            });
        }
        self.max_len = self.max_len.max(key.len());
        self.forms.insert(key, id);
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<TraitEntry>,
    by_id: HashMap<TraitId, usize>,
    english: SurfaceIndex,
    chinese: SurfaceIndex,
    frequency: BTreeMap<TraitId, u64>,
}

/// Normalized English match key for one token: lowercase, edge punctuation removed.
pub fn normalize_en_token(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn surface_key(language: Language, surface: &str) -> Vec<String> {
    match language {
        Language::En => surface
            .split_whitespace()
            .map(normalize_en_token)
            .filter(|t| !t.is_empty())
            .collect(),
        Language::Zh => tokenize(surface, Language::Zh).into_iter().map(|t| t.text).collect(),
    }
}

impl Lexicon {
    pub fn from_entries(entries: Vec<TraitEntry>) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (pos, e) in entries.iter().enumerate() {
            if lex.by_id.insert(e.trait_id, pos).is_some() {
                return Err(LexiconError::DuplicateId(e.trait_id));
            }
            if !e.english_lemma.is_empty() {
                let key = surface_key(Language::En, &e.english_lemma);
                if !key.is_empty() {
                    lex.english.insert(Language::En, key, e.trait_id)?;
                }
            }
            for zh in &e.chinese_lemmas {
                let key = surface_key(Language::Zh, zh);
                if !key.is_empty() {
                    lex.chinese.insert(Language::Zh, key, e.trait_id)?;
                }
            }
        }
        lex.entries = entries;
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| LexiconError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || (i == 0 && raw == TABLE_HEADER) {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            if cols.len() != 5 {
                return Err(LexiconError::Columns { line, found: cols.len() });
            }
            let trait_id = cols[0]
                .parse::<u32>()
                .map(TraitId)
                .map_err(|_| LexiconError::BadId { line, value: cols[0].to_string() })?;
            let english_lemma = cols[1].to_string();
            let chinese_lemmas: Vec<String> = cols[2]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            let polarity = cols[3]
                .parse::<Polarity>()
                .map_err(|value| LexiconError::UnknownPolarity { line, value })?;
            let bilingual = match cols[4] {
                "true" => true,
                "false" => false,
                other => return Err(LexiconError::BadFlag { line, value: other.to_string() }),
            };
            if english_lemma.is_empty() && chinese_lemmas.is_empty() {
                return Err(LexiconError::NoLemma { line, trait_id });
            }
            entries.push(TraitEntry { trait_id, english_lemma, chinese_lemmas, polarity, bilingual });
        }
        Self::from_entries(entries)
    }

    /// Serialize back to the trait-table format.
    pub fn export(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.trait_id,
                e.english_lemma,
                e.chinese_lemmas.join(";"),
                e.polarity.as_str(),
                e.bilingual
            ));
        }
        out
    }

    pub fn entries(&self) -> &[TraitEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TraitId> + '_ {
        self.entries.iter().map(|e| e.trait_id)
    }

    pub fn get(&self, id: TraitId) -> Option<&TraitEntry> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    pub fn entry(&self, id: TraitId) -> Result<&TraitEntry, LexiconError> {
        self.get(id).ok_or(LexiconError::UnknownTrait(id))
    }

    pub fn trait_polarity(&self, id: TraitId) -> Result<Polarity, LexiconError> {
        self.entry(id).map(|e| e.polarity)
    }

    /// Resolve a surface form (as written in the table) to its trait.
    pub fn lookup(&self, language: Language, surface: &str) -> Option<TraitId> {
        let index = match language {
            Language::En => &self.english,
            Language::Zh => &self.chinese,
        };
        index.forms.get(&surface_key(language, surface)).copied()
    }

    pub fn summary(&self) -> LexiconSummary {
        let mut s = LexiconSummary { entries: self.entries.len(), ..Default::default() };
        for e in &self.entries {
            match e.polarity {
                Polarity::Positive => s.positive += 1,
                Polarity::Neutral => s.neutral += 1,
                Polarity::Negative => s.negative += 1,
            }
            if !e.english_lemma.is_empty() {
                s.english_lemmas += 1;
            }
            if e.bilingual {
                s.bilingual_entries += 1;
                s.bilingual_chinese_lemmas += e.chinese_lemmas.len();
            }
        }
        s
    }

    /// All non-overlapping longest matches, scanned left to right.
    ///
    /// Tokens are expected to come from [`tokenize`] for the given language:
    /// English matching is case-insensitive with edge punctuation stripped,
    /// Chinese matching is exact over single-character tokens.
    pub fn find_traits<S: AsRef<str>>(&self, tokens: &[S], language: Language) -> Vec<TraitMatch> {
        let index = match language {
            Language::En => &self.english,
            Language::Zh => &self.chinese,
        };
        if index.max_len == 0 {
            return Vec::new();
        }
        let keys: Vec<String> = tokens
            .iter()
            .map(|t| match language {
                Language::En => normalize_en_token(t.as_ref()),
                Language::Zh => t.as_ref().to_string(),
            })
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < keys.len() {
            let longest = keys.len() - i;
            let hit = (1..=index.max_len.min(longest)).rev().find_map(|len| {
                let window = &keys[i..i + len];
                if window.iter().any(String::is_empty) {
                    return None;
                }
                index.forms.get(window).map(|&id| (len, id))
            });
            match hit {
                Some((len, trait_id)) => {
                    out.push(TraitMatch { start: i, end: i + len, trait_id });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Tokenize `text` for `language` and run [`Lexicon::find_traits`].
    pub fn find_traits_in_text(&self, text: &str, language: Language) -> Vec<TraitMatch> {
        let tokens: Vec<String> = tokenize(text, language).into_iter().map(|t| t.text).collect();
        self.find_traits(&tokens, language)
    }

    pub fn set_frequencies(&mut self, counts: BTreeMap<TraitId, u64>) {
        self.frequency = counts;
    }

    pub fn frequency(&self, id: TraitId) -> u64 {
        self.frequency.get(&id).copied().unwrap_or(0)
    }

    pub fn frequency_table(&self) -> &BTreeMap<TraitId, u64> {
        &self.frequency
    }

    /// The `k` most frequent traits, count descending then id ascending.
    /// Zero-count traits fill the tail in id order.
    pub fn top_by_frequency(&self, k: usize) -> Vec<TraitId> {
        let mut ids: Vec<TraitId> = self.ids().collect();
        ids.sort_by(|a, b| self.frequency(*b).cmp(&self.frequency(*a)).then(a.cmp(b)));
        ids.truncate(k);
        ids
    }
}

/// One lexicon hit: half-open token span and the matched trait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitMatch {
    pub start: usize,
    pub end: usize,
    pub trait_id: TraitId,
}
