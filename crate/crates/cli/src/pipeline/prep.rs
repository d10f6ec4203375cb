//! Lexicon summary, sentence segmentation, note filtering and clustering.

use std::collections::{BTreeMap, HashMap};

use anyhow::Result;
use forge_core::corpus::Language;
use forge_core::lexicon::Lexicon;
use forge_core::notes::{cluster_notes, cluster_samples, filter_notes, BookInfo, Note, NoteCluster, NoteRecord};
use serde_json::json;

use super::{Outcome, Run, Stage};

pub const KEPT_NOTES: &str = "notes/kept.jsonl";
pub const CLUSTERS: &str = "notes/clusters.jsonl";
pub const SAMPLES: &str = "notes/samples.jsonl";

/// Polarity counts plus per-language lemma coverage.
pub fn lexicon_report(lexicon: &Lexicon) -> serde_json::Value {
    let s = lexicon.summary();
    let with_chinese = lexicon.entries().iter().filter(|e| !e.chinese_lemmas.is_empty()).count();
    let chinese_lemmas: usize = lexicon.entries().iter().map(|e| e.chinese_lemmas.len()).sum();
    json!({
        "entries": s.entries,
        "polarity": { "positive": s.positive, "neutral": s.neutral, "negative": s.negative },
        "coverage": {
            "en": { "entries": s.english_lemmas },
            "zh": { "entries": with_chinese, "lemmas": chinese_lemmas },
            "bilingual": { "entries": s.bilingual_entries, "zh_lemmas": s.bilingual_chinese_lemmas },
        },
    })
}

pub(super) fn lexicon(run: &mut Run) -> Result<Outcome> {
    let lex = run.lexicon()?;
    run.write_json("lexicon/summary.json", &lexicon_report(&lex))?;
    Ok(Outcome::Done)
}

pub(super) fn sentencize_books(run: &mut Run) -> Result<Outcome> {
    for lang in [Language::Zh, Language::En] {
        for (id, book) in run.books(lang)? {
            run.write(&format!("corpus/{id}.{lang}.seg.tsv"), book.to_segmented())?;
        }
    }
    Ok(Outcome::Done)
}

pub(super) fn filter(run: &mut Run) -> Result<Outcome> {
    let lex = run.lexicon()?;
    let books = run.books(Language::Zh)?;
    let info: HashMap<String, BookInfo> = books
        .iter()
        .map(|(id, b)| (id.clone(), BookInfo { language: b.language, token_len: b.token_len() }))
        .collect();
    let p = run.cfg.paths.notes.clone();
    let path = run.input(&p)?;
    let text = std::fs::read_to_string(path)?;
    let mut notes = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: NoteRecord = serde_json::from_str(line).map_err(|e| anyhow::anyhow!("notes line {}: {e}", i + 1))?;
        let language = books.get(&rec.book_id).map(|b| b.language).unwrap_or(Language::Zh);
        notes.push(Note::from_record(rec, language, None));
    }
    let total = notes.len();
    let outcome = filter_notes(notes, &lex, &info, run.cfg.max_note_words);
    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for (_, r) in &outcome.rejected {
        let name = serde_json::to_value(r)?.as_str().unwrap_or("other").to_string();
        *by_reason.entry(name).or_default() += 1;
    }
    run.write_jsonl(KEPT_NOTES, &outcome.kept)?;
    run.write_json(
        "notes/filter_report.json",
        &json!({
            "total": total,
            "kept": outcome.kept.len(),
            "rejected": by_reason,
            "rejected_notes": outcome.rejected,
        }),
    )?;
    Ok(Outcome::Done)
}

pub(super) fn cluster(run: &mut Run) -> Result<Outcome> {
    let kept: Vec<Note> = run.read_jsonl(KEPT_NOTES, Stage::Filter)?;
    let mut by_book: BTreeMap<String, Vec<Note>> = BTreeMap::new();
    for n in kept {
        by_book.entry(n.book_id.clone()).or_default().push(n);
    }
    let mut clusters: Vec<NoteCluster> = Vec::new();
    for notes in by_book.values() {
        clusters.extend(cluster_notes(notes, run.cfg.cluster_distance)?);
    }
    let samples: Vec<_> = clusters.iter().flat_map(cluster_samples).collect();
    run.write_jsonl(CLUSTERS, &clusters)?;
    run.write_jsonl(SAMPLES, &samples)?;
    let sizes: BTreeMap<usize, usize> = clusters.iter().fold(BTreeMap::new(), |mut m, c| {
        *m.entry(c.member_note_ids.len()).or_default() += 1;
        m
    });
    run.write_json(
        "notes/cluster_report.json",
        &json!({
            "distance": run.cfg.cluster_distance,
            "clusters": clusters.len(),
            "samples": samples.len(),
            "cluster_sizes": sizes,
        }),
    )?;
    Ok(Outcome::Done)
}
