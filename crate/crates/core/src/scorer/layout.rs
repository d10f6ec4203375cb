//! Token layout of scorer inputs: `name [SEP] snippet` optionally followed
//! by `[SEP] history`, and conversion of layouts into embedding matrices.

use std::collections::{BTreeMap, HashMap};

use super::{EncodedInput, Mode, ScorerError};
use crate::corpus::{tokenize, BookText, Language};
use crate::dataset::Instance;
use crate::embedding::{token_key, EmbeddingTable, PseudoEmbedder};
use crate::lexicon::{Lexicon, TraitId};
use crate::scalar::{Matrix, Real};

pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Maximum snippet tokens.
    pub snippet: usize,
    /// Maximum length of the whole laid-out sequence.
    pub total: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { snippet: 480, total: 1600 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tokens: Vec<String>,
    pub history_mask: Vec<bool>,
    /// Sentences, snippets or lemmas placed in the history segment.
    pub history_units: usize,
    pub warnings: Vec<String>,
}

impl Layout {
    pub fn history_len(&self) -> usize {
        self.history_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Prior {
    center: usize,
    start: usize,
    end: usize,
    gold: TraitId,
}

/// Earlier instances of each `(book, character)` pair, sorted by center.
#[derive(Debug, Clone, Default)]
pub struct CharacterHistory {
    by_character: HashMap<(String, String), Vec<Prior>>,
}

impl CharacterHistory {
    pub fn build<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Self {
        let mut by_character: HashMap<(String, String), Vec<Prior>> = HashMap::new();
        for inst in instances {
            by_character
                .entry((inst.book_id().to_string(), inst.character.canonical.clone()))
                .or_default()
                .push(Prior { center: inst.snippet.center, start: inst.snippet.start, end: inst.snippet.end, gold: inst.gold });
        }
        for priors in by_character.values_mut() {
            priors.sort_by_key(|p| (p.center, p.start, p.end, p.gold));
        }
        Self { by_character }
    }

    fn priors(&self, inst: &Instance) -> &[Prior] {
        let key = (inst.book_id().to_string(), inst.character.canonical.clone());
        let all = self.by_character.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let cut = all.partition_point(|p| p.center < inst.snippet.center);
        &all[..cut]
    }

    pub fn knows(&self, inst: &Instance) -> bool {
        self.by_character.contains_key(&(inst.book_id().to_string(), inst.character.canonical.clone()))
    }
}

pub struct LayoutContext<'a> {
    pub books: &'a BTreeMap<String, BookText>,
    pub lexicon: &'a Lexicon,
    pub history: &'a CharacterHistory,
    pub budget: Budget,
}

fn text_tokens(text: &str, language: Language) -> Vec<String> {
    tokenize(text, language).into_iter().map(|t| t.text).collect()
}

/// Whole units taken newest first while they fit, returned oldest first.
fn fill_newest_first(units: Vec<Vec<String>>, room: usize) -> Vec<Vec<String>> {
    let mut used = 0;
    let mut taken = Vec::new();
    for unit in units.into_iter().rev() {
        if used + unit.len() > room {
            break;
        }
        used += unit.len();
        taken.push(unit);
    }
    taken.reverse();
    taken
}

/// Disjoint token ranges covering the given ranges.
fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, e) in ranges {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

pub fn layout_input(instance: &Instance, mode: Mode, ctx: &LayoutContext<'_>) -> Result<Layout, ScorerError> {
    let book = ctx
        .books
        .get(instance.book_id())
        .ok_or_else(|| ScorerError::Layout(format!("unknown book {}", instance.book_id())))?;
    let language = instance.language;
    let snip = &instance.snippet;
    if snip.end > book.token_len() || snip.start > snip.end {
        return Err(ScorerError::Layout(format!("snippet {}..{} outside book {}", snip.start, snip.end, book.book_id)));
    }

    let mut tokens = text_tokens(instance.character.display(language), language);
    tokens.push(SEP.to_string());
    let snippet_end = snip.end.min(snip.start + ctx.budget.snippet);
    tokens.extend(book.token_texts(snip.start, snippet_end).into_iter().map(str::to_string));
    let mut warnings = Vec::new();
    let room = ctx.budget.total.saturating_sub(tokens.len() + 1);

    let units: Vec<Vec<String>> = match mode {
        Mode::NoHistory => Vec::new(),
        Mode::ExtendedHistory => {
            let k1 = instance.history_ref.k1.min(book.sentence_count());
            let sentences = (0..k1)
                .map(|k| book.sentence_tokens(k).into_iter().map(str::to_string).collect::<Vec<_>>())
                .filter(|s| !s.is_empty())
                .collect();
            fill_newest_first(sentences, room)
        }
        Mode::CharacterHistory => {
            if !ctx.history.knows(instance) {
                warnings.push(format!("no history index entry for character {}", instance.character.canonical));
            }
            let ranges = ctx
                .history
                .priors(instance)
                .iter()
                .filter(|p| p.center < snip.start)
                .map(|p| (p.start, p.end.min(snip.start)))
                .filter(|(s, e)| s < e)
                .collect();
            let units = merge_ranges(ranges)
                .into_iter()
                .map(|(s, e)| book.token_texts(s, e).into_iter().map(str::to_string).collect())
                .collect();
            fill_newest_first(units, room)
        }
        Mode::HistoryTraits => {
            let mut lemmas = Vec::new();
            for prior in ctx.history.priors(instance) {
                let entry = ctx.lexicon.get(prior.gold).ok_or_else(|| ScorerError::Layout(format!("unknown trait {}", prior.gold.0)))?;
                lemmas.push(text_tokens(entry.lemma(language), language));
            }
            fill_newest_first(lemmas, room)
        }
    };

    let mut history_mask = vec![false; tokens.len()];
    let history_units = units.len();
    if history_units > 0 {
        tokens.push(SEP.to_string());
        history_mask.push(false);
        for unit in units {
            history_mask.extend(std::iter::repeat_n(true, unit.len()));
            tokens.extend(unit);
        }
    }
    Ok(Layout { tokens, history_mask, history_units, warnings })
}

/// Source of token vectors for laid-out sequences.
pub trait TokenEncoder<T> {
    fn dim(&self) -> usize;
    /// `ordinal` identifies the sequence (instance record index or trait id).
    fn encode(&self, ordinal: u32, tokens: &[String]) -> Result<Matrix<T>, ScorerError>;
}

impl<T: Real> TokenEncoder<T> for PseudoEmbedder {
    fn dim(&self) -> usize {
        PseudoEmbedder::dim(self)
    }

    fn encode(&self, _ordinal: u32, tokens: &[String]) -> Result<Matrix<T>, ScorerError> {
        Ok(self.embed_sequence(tokens))
    }
}

impl<T: Real> TokenEncoder<T> for EmbeddingTable<T> {
    fn dim(&self) -> usize {
        EmbeddingTable::dim(self)
    }

    fn encode(&self, ordinal: u32, tokens: &[String]) -> Result<Matrix<T>, ScorerError> {
        let d = EmbeddingTable::dim(self);
        let mut m = Matrix::zeros(tokens.len(), d);
        for i in 0..tokens.len() {
            let row = self
                .require(token_key(ordinal, i as u32))
                .map_err(|e| ScorerError::Layout(format!("sequence {ordinal}: {e}")))?;
            m.row_mut(i).copy_from_slice(row);
        }
        Ok(m)
    }
}

pub fn encode_layout<T: Real, E: TokenEncoder<T> + ?Sized>(
    layout: &Layout,
    ordinal: u32,
    encoder: &E,
) -> Result<EncodedInput<T>, ScorerError> {
    let x = encoder.encode(ordinal, &layout.tokens)?;
    Ok(EncodedInput::new(x, layout.history_mask.clone()))
}

/// Token matrices of each candidate lemma, in candidate order.
pub fn encode_traits<T: Real, E: TokenEncoder<T> + ?Sized>(
    candidates: &[TraitId],
    lexicon: &Lexicon,
    language: Language,
    encoder: &E,
) -> Result<Vec<Matrix<T>>, ScorerError> {
    candidates
        .iter()
        .map(|&id| {
            let entry = lexicon.get(id).ok_or_else(|| ScorerError::Layout(format!("unknown trait {}", id.0)))?;
            encoder.encode(id.0, &text_tokens(entry.lemma(language), language))
        })
        .collect()
}
