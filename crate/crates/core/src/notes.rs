//! Reader notes: ingestion, filtering and position-based clustering.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_count, Language};
use crate::lexicon::{Lexicon, TraitId, TraitMatch};
use crate::seed::anonymize;

pub const DEFAULT_MAX_WORDS: usize = 100;
pub const DEFAULT_CLUSTER_DISTANCE: usize = 100;

/// Entity mention inside the note text; offsets count Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// Wire form of a note (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub note_id: String,
    pub book_id: String,
    pub text: String,
    pub underline_start: usize,
    pub underline_end: usize,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub book_id: String,
    pub text: String,
    /// Half-open token offsets into the book.
    pub underline: (usize, usize),
    pub entities: Vec<EntitySpan>,
    pub trait_hits: Vec<TraitMatch>,
    pub word_count: usize,
}

impl Note {
    /// Build from a record. With a salt, the source id is replaced by its
    /// salted hash so no upstream identifier survives.
    pub fn from_record(rec: NoteRecord, language: Language, salt: Option<&str>) -> Self {
        let note_id = match salt {
            Some(s) => anonymize(s, &rec.note_id),
            None => rec.note_id,
        };
        Note {
            word_count: word_count(&rec.text, language),
            note_id,
            book_id: rec.book_id,
            text: rec.text,
            underline: (rec.underline_start, rec.underline_end),
            entities: rec.entities,
            trait_hits: Vec::new(),
        }
    }

    pub fn to_record(&self) -> NoteRecord {
        NoteRecord {
            note_id: self.note_id.clone(),
            book_id: self.book_id.clone(),
            text: self.text.clone(),
            underline_start: self.underline.0,
            underline_end: self.underline.1,
            entities: self.entities.clone(),
        }
    }

    /// Midpoint of the underlined span.
    pub fn center(&self) -> usize {
        self.underline.0 + (self.underline.1.saturating_sub(self.underline.0)) / 2
    }

    /// Substring of the note text by character offsets.
    pub fn text_span(&self, start: usize, end: usize) -> Option<String> {
        char_slice(&self.text, start, end)
    }
}

pub fn char_slice(text: &str, start: usize, end: usize) -> Option<String> {
    if start > end || end > text.chars().count() {
        return None;
    }
    Some(text.chars().skip(start).take(end - start).collect())
}

/// What the filter knows about each book.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BookInfo {
    pub language: Language,
    pub token_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownBook,
    UnderlineOutOfBounds,
    NoTrait,
    NoEntity,
    TooLong,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Note>,
    pub rejected: Vec<(String, RejectReason)>,
}

/// Keep notes that mention a trait, mention an entity, and are shorter than
/// `max_words` tokens. Kept notes get their `trait_hits` populated.
pub fn filter_notes(
    notes: Vec<Note>,
    lexicon: &Lexicon,
    books: &HashMap<String, BookInfo>,
    max_words: usize,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for mut note in notes {
        let Some(info) = books.get(&note.book_id) else {
            out.rejected.push((note.note_id, RejectReason::UnknownBook));
            continue;
        };
        let (us, ue) = note.underline;
        if us >= ue || ue > info.token_len {
            out.rejected.push((note.note_id, RejectReason::UnderlineOutOfBounds));
            continue;
        }
        note.trait_hits = lexicon.find_traits_in_text(&note.text, info.language);
        let reason = if note.trait_hits.is_empty() {
            Some(RejectReason::NoTrait)
        } else if note.entities.is_empty() {
            Some(RejectReason::NoEntity)
        } else if note.word_count >= max_words {
            Some(RejectReason::TooLong)
        } else {
            None
        };
        match reason {
            Some(r) => out.rejected.push((note.note_id, r)),
            None => out.kept.push(note),
        }
    }
    out
}

/// Exact-match gazetteer fallback for entity spans: leftmost, longest
/// non-overlapping occurrences of any listed name.
pub fn gazetteer_entities(text: &str, names: &[String]) -> Vec<EntitySpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut sorted: Vec<Vec<char>> =
        names.iter().filter(|n| !n.is_empty()).map(|n| n.chars().collect()).collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    sorted.dedup();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match sorted.iter().find(|n| chars[i..].starts_with(n)) {
            Some(n) => {
                out.push(EntitySpan { start: i, end: i + n.len(), surface: n.iter().collect() });
                i += n.len();
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum NotesError {
    #[error("notes from several books passed to one clustering call: {0} and {1}")]
    MixedBooks(String, String),
}

/// Per-trait material gathered within one cluster.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitSample {
    pub characters: BTreeSet<String>,
    pub note_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteCluster {
    pub cluster_id: String,
    pub book_id: String,
    pub member_note_ids: Vec<String>,
    pub centers: Vec<usize>,
    pub samples: BTreeMap<TraitId, TraitSample>,
}

/// Single-linkage chaining over sorted note centers: consecutive notes whose
/// centers differ by less than `distance` tokens share a cluster.
pub fn cluster_notes(notes: &[Note], distance: usize) -> Result<Vec<NoteCluster>, NotesError> {
    let Some(first) = notes.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = notes.iter().find(|n| n.book_id != first.book_id) {
        return Err(NotesError::MixedBooks(first.book_id.clone(), other.book_id.clone()));
    }
    let mut order: Vec<&Note> = notes.iter().collect();
    order.sort_by(|a, b| a.center().cmp(&b.center()).then_with(|| a.note_id.cmp(&b.note_id)));

    let mut clusters: Vec<Vec<&Note>> = Vec::new();
    for note in order {
        match clusters.last_mut() {
            Some(cur) if note.center() - cur.last().unwrap().center() < distance => cur.push(note),
            _ => clusters.push(vec![note]),
        }
    }
    Ok(clusters.into_iter().map(|members| build_cluster(&first.book_id, &members)).collect())
}

fn build_cluster(book_id: &str, members: &[&Note]) -> NoteCluster {
    let mut samples: BTreeMap<TraitId, TraitSample> = BTreeMap::new();
    for n in members {
        let traits: BTreeSet<TraitId> = n.trait_hits.iter().map(|h| h.trait_id).collect();
        for t in traits {
            let s = samples.entry(t).or_default();
            s.note_ids.push(n.note_id.clone());
            s.characters.extend(n.entities.iter().map(|e| e.surface.clone()));
        }
    }
    NoteCluster {
        cluster_id: format!("{book_id}:{}", members[0].note_id),
        book_id: book_id.to_string(),
        member_note_ids: members.iter().map(|n| n.note_id.clone()).collect(),
        centers: members.iter().map(|n| n.center()).collect(),
        samples,
    }
}

/// One item for human labeling: a unique trait within a cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSample {
    pub sample_id: String,
    pub cluster_id: String,
    pub book_id: String,
    pub trait_id: TraitId,
    pub characters: Vec<String>,
    /// Median of member centers (lower median for even sizes).
    pub center: usize,
    pub note_ids: Vec<String>,
}

pub fn cluster_samples(cluster: &NoteCluster) -> Vec<ClusterSample> {
    let mut centers = cluster.centers.clone();
    centers.sort_unstable();
    let center = centers[(centers.len() - 1) / 2];
    cluster
        .samples
        .iter()
        .map(|(&trait_id, s)| ClusterSample {
            sample_id: format!("{}/t{}", cluster.cluster_id, trait_id),
            cluster_id: cluster.cluster_id.clone(),
            book_id: cluster.book_id.clone(),
            trait_id,
            characters: s.characters.iter().cloned().collect(),
            center,
            note_ids: s.note_ids.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Polarity, TraitEntry};

    fn lexicon() -> Lexicon {
        Lexicon::from_entries(
            [(1, "brave"), (2, "cruel"), (3, "kind")]
                .iter()
                .map(|&(id, en)| TraitEntry {
                    trait_id: TraitId(id),
                    english_lemma: en.into(),
                    chinese_lemmas: vec![],
                    polarity: Polarity::Neutral,
                    bilingual: false,
                })
                .collect(),
        )
        .unwrap()
    }

    fn note(id: &str, text: &str, entities: &[&str], underline: (usize, usize)) -> Note {
        let rec = NoteRecord {
            note_id: id.into(),
            book_id: "b".into(),
            text: text.into(),
            underline_start: underline.0,
            underline_end: underline.1,
            entities: entities
                .iter()
                .map(|e| EntitySpan { start: 0, end: e.chars().count(), surface: e.to_string() })
                .collect(),
        };
        Note::from_record(rec, Language::En, None)
    }

    fn books() -> HashMap<String, BookInfo> {
        [("b".to_string(), BookInfo { language: Language::En, token_len: 10_000 })].into()
    }

    #[test]
    fn long_note_is_dropped() {
        let text = format!("Dantes is brave {}", "word ".repeat(117));
        let n = note("n1", &text, &["Dantes"], (5, 9));
        assert_eq!(n.word_count, 120);
        let out = filter_notes(vec![n], &lexicon(), &books(), 100);
        assert_eq!(out.rejected, vec![("n1".to_string(), RejectReason::TooLong)]);
    }

    #[test]
    fn name_without_trait_is_dropped() {
        let out = filter_notes(vec![note("n", "Dantes smiles", &["Dantes"], (1, 2))], &lexicon(), &books(), 100);
        assert_eq!(out.rejected[0].1, RejectReason::NoTrait);
        let out = filter_notes(vec![note("n", "so brave", &[], (1, 2))], &lexicon(), &books(), 100);
        assert_eq!(out.rejected[0].1, RejectReason::NoEntity);
    }

    #[test]
    fn unknown_book_and_bad_underline_are_rejected() {
        let mut n = note("n", "Dantes is brave", &["Dantes"], (1, 2));
        n.book_id = "nope".into();
        let bad = note("m", "Dantes is brave", &["Dantes"], (9_999, 10_001));
        let out = filter_notes(vec![n, bad], &lexicon(), &books(), 100);
        assert_eq!(out.rejected[0].1, RejectReason::UnknownBook);
        assert_eq!(out.rejected[1].1, RejectReason::UnderlineOutOfBounds);
    }

    #[test]
    fn anonymized_ids_hide_source() {
        let rec = NoteRecord {
            note_id: "user7-note3".into(),
            book_id: "b".into(),
            text: "x".into(),
            underline_start: 0,
            underline_end: 1,
            entities: vec![],
        };
        let n = Note::from_record(rec, Language::En, Some("s"));
        assert!(!n.note_id.contains("user7"));
    }

    fn at(id: &str, center: usize, traits: &[u32], ents: &[&str]) -> Note {
        let mut n = note(id, "x", ents, (center, center + 1));
        n.trait_hits = traits.iter().map(|&t| TraitMatch { start: 0, end: 1, trait_id: TraitId(t) }).collect();
        n
    }

    #[test]
    fn chaining_merges_transitively() {
        let notes = vec![at("a", 0, &[1], &[]), at("b", 50, &[1], &[]), at("c", 120, &[1], &[])];
        let cl = cluster_notes(&notes, 100).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].centers, vec![0, 50, 120]);
        assert_eq!(cl[0].cluster_id, "b:a");
    }

    #[test]
    fn gap_of_exactly_distance_splits() {
        let notes = vec![at("a", 0, &[1], &[]), at("b", 100, &[1], &[])];
        assert_eq!(cluster_notes(&notes, 100).unwrap().len(), 2);
    }

    #[test]
    fn singleton_and_mixed_books() {
        assert_eq!(cluster_notes(&[at("a", 5, &[1], &[])], 100).unwrap().len(), 1);
        let mut other = at("z", 5, &[1], &[]);
        other.book_id = "other".into();
        assert!(cluster_notes(&[at("a", 5, &[1], &[]), other], 100).is_err());
    }

    #[test]
    fn samples_are_unique_per_trait() {
        let notes = vec![at("a", 0, &[7], &["Ann"]), at("b", 10, &[7], &["Bo"])];
        let cl = cluster_notes(&notes, 100).unwrap();
        let s = cluster_samples(&cl[0]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].characters, vec!["Ann".to_string(), "Bo".to_string()]);
        assert_eq!(s[0].center, 0);

        let notes = vec![at("a", 0, &[3], &["Ann"]), at("b", 10, &[9], &["Bo"]), at("c", 30, &[9], &[])];
        let s = cluster_samples(&cluster_notes(&notes, 100).unwrap()[0]);
        assert_eq!(s.iter().map(|x| x.trait_id.0).collect::<Vec<_>>(), vec![3, 9]);
        assert_eq!(s[0].characters, vec!["Ann".to_string()]);
        assert_eq!(s[1].center, 10);
    }

    #[test]
    fn gazetteer_prefers_longest_name() {
        let names = vec!["Edmond".to_string(), "Edmond Dantes".to_string(), "唐代斯".to_string()];
        let spans = gazetteer_entities("Edmond Dantes met Edmond; 唐代斯", &names);
        let surfaces: Vec<&str> = spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["Edmond Dantes", "Edmond", "唐代斯"]);
        assert_eq!((spans[2].start, spans[2].end), (26, 29));
    }
}
