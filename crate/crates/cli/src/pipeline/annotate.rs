//! Scripted labeling session: cluster samples become tasks, and a fixed
//! answer sheet plays the annotators through the store.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use forge_annotate::{Store, StoreConfig};
use forge_core::annotation::{AnnotationRecord, AnnotationTask, Decision, TaskStatus};
use forge_core::corpus::{tokenize, BookText, Language};
use forge_core::lexicon::TraitId;
use forge_core::notes::{ClusterSample, Note};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::prep::{KEPT_NOTES, SAMPLES};
use super::{Outcome, Run, Stage};

pub const STORE_LOG: &str = "annotate/store.jsonl";
pub const EXPORT: &str = "annotate/export.json";
pub const AGREEMENT: &str = "annotate/agreement.json";

/// One line of the answer sheet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedAnswer {
    pub decision: Decision,
    pub character: Option<String>,
}

/// `note_id<TAB>trait_id<TAB>yes|no<TAB>character` (character empty on `no`).
pub fn scripted_answers(text: &str) -> Result<BTreeMap<(String, TraitId), ScriptedAnswer>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            bail!("annotations line {}: expected 4 columns, found {}", i + 1, cols.len());
        }
        let trait_id = TraitId(cols[1].parse().with_context(|| format!("annotations line {}: trait id", i + 1))?);
        let answer = match cols[2] {
            "yes" if !cols[3].is_empty() => ScriptedAnswer { decision: Decision::DescribesCharacter, character: Some(cols[3].to_string()) },
            "no" => ScriptedAnswer { decision: Decision::NotDescribes, character: None },
            other => bail!("annotations line {}: bad answer {other:?}", i + 1),
        };
        out.insert((cols[0].to_string(), trait_id), answer);
    }
    Ok(out)
}

/// Character offset of token `i` in `text`, or the text length past the end.
fn token_char_offset(text: &str, tokens: &[forge_core::corpus::Token], i: usize) -> usize {
    let byte = tokens.get(i).map(|t| t.start).unwrap_or(text.len());
    text[..byte].chars().count()
}

fn token_char_end(text: &str, tokens: &[forge_core::corpus::Token], end: usize) -> usize {
    match end.checked_sub(1).and_then(|k| tokens.get(k)) {
        Some(t) => text[..t.end].chars().count(),
        None => 0,
    }
}

/// Labeling task for a sample: the first member note mentioning the trait,
/// with that mention highlighted.
pub fn task_for_sample(
    sample: &ClusterSample,
    notes: &BTreeMap<&str, &Note>,
    book: Option<&BookText>,
    language: Language,
) -> Result<(AnnotationTask, String)> {
    for id in &sample.note_ids {
        let note = notes.get(id.as_str()).ok_or_else(|| anyhow!("sample {} refers to unknown note {id}", sample.sample_id))?;
        let Some(hit) = note.trait_hits.iter().find(|h| h.trait_id == sample.trait_id) else { continue };
        let tokens = tokenize(&note.text, language);
        let s = token_char_offset(&note.text, &tokens, hit.start);
        let e = token_char_end(&note.text, &tokens, hit.end);
        let surface = forge_core::notes::char_slice(&note.text, s, e).unwrap_or_default();
        let underlined = book.map(|b| {
            let (us, ue) = note.underline;
            let sep = if language == Language::Zh { "" } else { " " };
            b.token_texts(us, ue.min(b.token_len())).join(sep)
        });
        let task = AnnotationTask {
            task_id: sample.sample_id.clone(),
            sample_id: sample.sample_id.clone(),
            note_text: note.text.clone(),
            trait_surface: surface,
            trait_span: (s, e),
            underlined,
            status: TaskStatus::Pending,
            duplicate_group: None,
        };
        task.validate().map_err(|e| anyhow!("task {}: {e}", task.task_id))?;
        return Ok((task, note.note_id.clone()));
    }
    bail!("sample {} has no note mentioning trait {}", sample.sample_id, sample.trait_id)
}

fn char_find(text: &str, needle: &str) -> Option<(usize, usize)> {
    let byte = text.find(needle)?;
    let s = text[..byte].chars().count();
    Some((s, s + needle.chars().count()))
}

pub(super) fn run(run: &mut Run) -> Result<Outcome> {
    let books = run.books(Language::Zh)?;
    let samples: Vec<ClusterSample> = run.read_jsonl(SAMPLES, Stage::Cluster)?;
    let kept: Vec<Note> = run.read_jsonl(KEPT_NOTES, Stage::Filter)?;
    let notes: BTreeMap<&str, &Note> = kept.iter().map(|n| (n.note_id.as_str(), n)).collect();
    let p = run.cfg.paths.annotations.clone();
    let sheet_path = run.input(&p)?;
    let answers = scripted_answers(&std::fs::read_to_string(sheet_path)?)?;
    let trait_of: BTreeMap<&str, TraitId> = samples.iter().map(|s| (s.sample_id.as_str(), s.trait_id)).collect();

    let mut tasks = Vec::new();
    let mut source_note: BTreeMap<String, String> = BTreeMap::new();
    for s in &samples {
        let book = books.get(&s.book_id);
        let lang = book.map(|b| b.language).unwrap_or(Language::Zh);
        let (task, note_id) = task_for_sample(s, &notes, book, lang)?;
        source_note.insert(task.task_id.clone(), note_id);
        tasks.push(task);
    }
    run.write_jsonl("annotate/tasks.jsonl", &tasks)?;

    let log = run.out.join(STORE_LOG);
    for stale in [log.clone(), Path::new(&format!("{}.snapshot", log.display())).to_path_buf()] {
        if stale.exists() {
            std::fs::remove_file(&stale)?;
        }
    }
    std::fs::create_dir_all(log.parent().expect("log has a parent"))?;
    let seed = run.seed("annotate");
    let mut store = Store::open(StoreConfig {
        dup_rate: run.cfg.annotate.dup_rate,
        seed,
        path: Some(log),
        snapshot_every: 0,
    })?;
    store.import(tasks)?;

    let annotators = run.cfg.annotate.annotators.clone();
    let noise = run.cfg.annotate.noise;
    let (mut unscripted, mut flipped) = (0usize, 0usize);
    let (mut idle, mut turn) = (0usize, 0usize);
    while idle < annotators.len() {
        let who = &annotators[turn % annotators.len()];
        turn += 1;
        let Some(task) = store.next_task(who)? else {
            idle += 1;
            continue;
        };
        idle = 0;
        let original = task.duplicate_group.clone().unwrap_or_else(|| task.task_id.clone());
        let note_id = &source_note[&original];
        let trait_id = trait_of
            .get(task.sample_id.as_str())
            .copied()
            .ok_or_else(|| anyhow!("task {} has no sample", task.task_id))?;
        let mut rng = ChaCha8Rng::seed_from_u64(forge_core::seed::derive_seed(seed, &format!("answer/{}/{who}", task.task_id)));
        let mut answer = answers.get(&(note_id.clone(), trait_id)).cloned().unwrap_or_else(|| {
            unscripted += 1;
            ScriptedAnswer { decision: Decision::NotDescribes, character: None }
        });
        if rng.gen::<f64>() < noise {
            flipped += 1;
            answer = match answer.decision {
                Decision::DescribesCharacter => ScriptedAnswer { decision: Decision::NotDescribes, character: None },
                Decision::NotDescribes => ScriptedAnswer {
                    decision: Decision::DescribesCharacter,
                    character: notes[note_id.as_str()].entities.first().map(|e| e.surface.clone()),
                },
            };
        }
        let span = match &answer.character {
            Some(c) => Some(char_find(&task.note_text, c).ok_or_else(|| anyhow!("character {c:?} not found in note {note_id}"))?),
            None => None,
        };
        let decision = if span.is_some() { answer.decision } else { Decision::NotDescribes };
        let elapsed = (150.0 + rng.gen_range(0.0..600.0f64)).round() / 10.0;
        store.submit(AnnotationRecord {
            task_id: task.task_id.clone(),
            annotator_id: who.clone(),
            decision,
            character_span: span,
            elapsed,
            duplicate_group: task.duplicate_group.clone(),
        })?;
    }
    run.track(STORE_LOG)?;

    let export = store.export();
    run.write_json(EXPORT, &export)?;
    let agreement = match store.agreement() {
        Ok(a) => serde_json::to_value(a)?,
        Err(e) => json!({ "schema": forge_annotate::SCHEMA, "pairs": 0, "error": e.to_string() }),
    };
    run.write_json(AGREEMENT, &agreement)?;
    let (assigned, duplicates) = store.assignments();
    run.write_json(
        "annotate/report.json",
        &json!({
            "tasks": samples.len(),
            "assignments": assigned,
            "duplicates": duplicates,
            "positives": export.positives.len(),
            "negatives": export.negatives.len(),
            "conflicts": export.conflicts.len(),
            "unscripted": unscripted,
            "flipped": flipped,
        }),
    )?;
    Ok(Outcome::Done)
}
