//! Sentence alignment of source books to their English translations and
//! projection of instances through the alignments.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use forge_core::align::{
    align_dp, audit_sheet, project_character, project_snippet, window_embed, AlignmentMap, AuditRow, CharacterTable,
    DEFAULT_BLOCKS,
};
use forge_core::corpus::{BookText, Language};
use forge_core::dataset::{write_dataset, HistoryRef, Instance};
use forge_core::embedding::EmbeddingTable;
use serde_json::json;

use super::{Outcome, Run};

pub const PROJECTED: &str = "project/dataset.en.jsonl";

/// Align one pair of sentence-embedding tables, pooling `context` sentences
/// per row first.
pub fn align_tables(
    src: &EmbeddingTable<f32>,
    tgt: &EmbeddingTable<f32>,
    context: usize,
    null_penalty: f64,
) -> Result<AlignmentMap<f64>> {
    let widen = |t: &EmbeddingTable<f32>| -> Result<EmbeddingTable<f64>> {
        let mut wide = EmbeddingTable::new(t.dim());
        for (i, &id) in t.ids().iter().enumerate() {
            let row: Vec<f64> = t.row(i).iter().map(|&x| x as f64).collect();
            wide.insert(id, &row)?;
        }
        Ok(window_embed(t.ids(), &wide, context)?)
    };
    Ok(align_dp(&widen(src)?, &widen(tgt)?, &DEFAULT_BLOCKS, null_penalty)?)
}

fn load_table(path: &Path, book: &BookText) -> Result<EmbeddingTable<f32>> {
    let t = EmbeddingTable::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
    if t.len() != book.sentence_count() {
        bail!("{} holds {} vectors for {} sentences", path.display(), t.len(), book.sentence_count());
    }
    Ok(t)
}

/// Fraction of source sentences whose target list equals the reference.
fn reference_agreement(map: &AlignmentMap<f64>, reference: &AlignmentMap<f64>) -> f64 {
    let n = map.targets.len().max(1);
    let same = map.targets.iter().zip(&reference.targets).filter(|(a, b)| a == b).count();
    same as f64 / n as f64
}

pub(super) fn align(run: &mut Run) -> Result<Outcome> {
    let Some(emb_dir) = run.cfg.paths.embeddings.clone() else {
        return Ok(Outcome::Skipped("no embeddings configured".into()));
    };
    let emb_dir = run.input(&emb_dir)?;
    let zh = run.books(Language::Zh)?;
    let en = run.books(Language::En)?;
    let mut report = BTreeMap::new();
    for (id, tgt_book) in &en {
        let Some(src_book) = zh.get(id) else { continue };
        let src_path = emb_dir.join(format!("{id}.zh.emb"));
        let tgt_path = emb_dir.join(format!("{id}.en.emb"));
        if !src_path.exists() || !tgt_path.exists() {
            report.insert(id.clone(), json!({ "skipped": "missing embeddings" }));
            continue;
        }
        let map = align_tables(
            &load_table(&src_path, src_book)?,
            &load_table(&tgt_path, tgt_book)?,
            run.cfg.align_context,
            run.cfg.null_penalty,
        )?;
        let mut shapes: BTreeMap<String, usize> = BTreeMap::new();
        for b in map.shapes() {
            *shapes.entry(format!("{}-{}", b.src, b.tgt)).or_default() += 1;
        }
        let ref_path = emb_dir.join(format!("{id}.ref.tsv"));
        let agreement = if ref_path.exists() {
            let reference = AlignmentMap::<f64>::from_tsv(&std::fs::read_to_string(&ref_path)?)?;
            Some(reference_agreement(&map, &reference))
        } else {
            None
        };
        run.write(&format!("align/{id}.tsv"), map.to_tsv())?;
        report.insert(
            id.clone(),
            json!({
                "src_sentences": map.src_len(),
                "tgt_sentences": map.tgt_len,
                "cost": map.cost,
                "monotone": map.is_monotone(),
                "blocks": shapes,
                "reference_agreement": agreement,
            }),
        );
    }
    run.write_json("align/report.json", &report)?;
    Ok(Outcome::Done)
}

/// Project every instance of an aligned book into the target language.
pub fn project_instances(
    instances: &[Instance],
    maps: &BTreeMap<String, AlignmentMap<f64>>,
    targets: &BTreeMap<String, BookText>,
    characters: &CharacterTable,
    width: usize,
) -> (Vec<Instance>, Vec<String>) {
    let mut out = Vec::new();
    let mut failed = Vec::new();
    for inst in instances {
        let (Some(map), Some(book)) = (maps.get(inst.book_id()), targets.get(inst.book_id())) else { continue };
        match project_snippet(map, &inst.snippet, book, width) {
            Some(snippet) => {
                let mut p = inst.clone();
                p.history_ref = HistoryRef { book_id: book.book_id.clone(), k1: snippet.sentence_indices[0] };
                p.snippet = snippet;
                p.character = project_character(characters, &inst.character);
                p.language = Language::En;
                out.push(p);
            }
            None => failed.push(inst.instance_id.clone()),
        }
    }
    (out, failed)
}

fn sentences_text(book: &BookText, indices: &[usize], sep: &str) -> String {
    indices.iter().map(|&k| book.sentences[k].text.as_str()).collect::<Vec<_>>().join(sep)
}

pub(super) fn project(run: &mut Run) -> Result<Outcome> {
    let aligned: BTreeMap<String, AlignmentMap<f64>> = {
        let dir = run.out.join("align");
        let mut maps = BTreeMap::new();
        if dir.exists() {
            for rel in crate::manifest::list_files(&dir, &dir)? {
                let name = crate::manifest::rel_key(&rel);
                if let Some(id) = name.strip_suffix(".tsv") {
                    let text = std::fs::read_to_string(dir.join(&rel))?;
                    maps.insert(id.to_string(), AlignmentMap::from_tsv(&text)?);
                }
            }
        }
        maps
    };
    if aligned.is_empty() {
        return Ok(Outcome::Skipped("no alignments (run the align stage first)".into()));
    }
    let zh = run.books(Language::Zh)?;
    let en = run.books(Language::En)?;
    let characters = match run.cfg.paths.characters.clone() {
        Some(p) => {
            let path = run.input(&p)?;
            CharacterTable::parse(&std::fs::read_to_string(path)?)?
        }
        None => CharacterTable::default(),
    };
    let instances = run.dataset()?;
    let (projected, failed) = project_instances(&instances, &aligned, &en, &characters, run.cfg.window);

    let by_id: BTreeMap<&str, &Instance> = instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    let rows: Vec<AuditRow> = projected
        .iter()
        .map(|p| {
            let src = by_id[p.instance_id.as_str()];
            let src_book = zh.get(src.book_id()).ok_or_else(|| anyhow!("unknown book {}", src.book_id()))?;
            Ok(AuditRow {
                instance_id: p.instance_id.clone(),
                source_text: sentences_text(src_book, &src.snippet.sentence_indices, ""),
                target_text: sentences_text(&en[p.book_id()], &p.snippet.sentence_indices, " "),
            })
        })
        .collect::<Result<_>>()?;
    let unnamed: Vec<&str> =
        projected.iter().filter(|p| !p.character.is_projected()).map(|p| p.instance_id.as_str()).collect();
    run.write(PROJECTED, write_dataset(&projected))?;
    run.write("project/audit.tsv", audit_sheet(&rows))?;
    run.write_json(
        "project/report.json",
        &json!({
            "projected": projected.len(),
            "failed": failed,
            "unprojected_characters": unnamed,
            "character_table": characters.len(),
        }),
    )?;
    Ok(Outcome::Done)
}
