//! Instance assembly, weak-label merge, unsupervised pairs and validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use forge_annotate::Export;
use forge_core::annotation::LabeledSample;
use forge_core::corpus::{BookText, Language};
use forge_core::dataset::{
    assemble_instance, build_unsup, merge_weak_labels, read_dataset, split_by_book, train_frequencies, validate_dataset,
    write_dataset, Assembled, BuildOptions, Instance, Split, UnsupPair, Violation, WeakCandidate, WeakMergeReport,
};
use forge_core::lexicon::{Lexicon, TraitId};
use forge_core::notes::{ClusterSample, NoteCluster};
use serde_json::json;

use super::annotate::EXPORT;
use super::prep::{CLUSTERS, SAMPLES};
use super::{load_books, Outcome, Run, Stage};

pub const DATASET: &str = "build/dataset.jsonl";

fn options(run: &Run) -> BuildOptions {
    BuildOptions {
        seed: run.seed("build"),
        window: run.cfg.window,
        exclude_cluster_traits: run.cfg.exclude_cluster_traits,
    }
}

/// Lexicon with trait frequencies counted over training-book positives.
fn counted_lexicon(mut lex: Lexicon, positives: &[(&str, TraitId)], splits: &BTreeMap<String, Split>) -> Lexicon {
    let counts = train_frequencies(positives.iter().copied(), splits);
    lex.set_frequencies(counts);
    lex
}

pub(super) fn run(run: &mut Run) -> Result<Outcome> {
    let lex = run.lexicon()?;
    let splits = run.split_table()?;
    let books = run.books(Language::Zh)?;
    let samples: Vec<ClusterSample> = run.read_jsonl(SAMPLES, Stage::Cluster)?;
    let clusters: Vec<NoteCluster> = run.read_jsonl(CLUSTERS, Stage::Cluster)?;
    let export: Export = serde_json::from_str(&run.read_output(EXPORT, Stage::Annotate)?).context("parsing export")?;

    let by_sample: BTreeMap<&str, &ClusterSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let cluster_traits: BTreeMap<&str, BTreeSet<TraitId>> =
        clusters.iter().map(|c| (c.cluster_id.as_str(), c.samples.keys().copied().collect())).collect();

    let mut golds = Vec::new();
    for label in &export.positives {
        let s = by_sample.get(label.sample_id.as_str()).ok_or_else(|| anyhow!("label for unknown sample {}", label.sample_id))?;
        golds.push((s.book_id.as_str(), s.trait_id));
    }
    let lex = counted_lexicon(lex, &golds, &splits);
    let opts = options(run);

    let mut instances = Vec::new();
    let mut negatives = Vec::new();
    let mut skipped: Vec<(String, String)> = Vec::new();
    let labels: Vec<&LabeledSample> = export.positives.iter().chain(&export.negatives).collect();
    let mut ordered = labels;
    ordered.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for label in ordered {
        let sample = by_sample[label.sample_id.as_str()];
        let Some(book) = books.get(&sample.book_id) else {
            skipped.push((sample.sample_id.clone(), format!("unknown book {}", sample.book_id)));
            continue;
        };
        let split = *splits.get(&sample.book_id).ok_or_else(|| anyhow!("book {} missing from the split table", sample.book_id))?;
        let empty = BTreeSet::new();
        let traits = cluster_traits.get(sample.cluster_id.as_str()).unwrap_or(&empty);
        match assemble_instance(sample, label, book, &lex, &opts, traits, split) {
            Ok(Assembled::Instance(inst)) => instances.push(*inst),
            Ok(Assembled::Negative(n)) => negatives.push(n),
            Err(e) => skipped.push((sample.sample_id.clone(), e.to_string())),
        }
    }
    let human = instances.len();

    let (weak, weak_report) = weak_instances(run, &books, &lex, &opts)?;
    instances.extend(weak);

    let sets = split_by_book(instances, &splits)?;
    let all: Vec<Instance> = sets.all().cloned().collect();
    run.write(DATASET, write_dataset(&all))?;
    run.write_jsonl("build/negatives.jsonl", &negatives)?;
    run.write("build/stats.tsv", sets.report.to_tsv())?;
    let mut freq = String::from("trait_id\tcount\n");
    for (t, c) in lex.frequency_table() {
        freq.push_str(&format!("{t}\t{c}\n"));
    }
    run.write("build/frequencies.tsv", freq)?;
    run.write_json(
        "build/report.json",
        &json!({
            "human_instances": human,
            "negatives": negatives.len(),
            "skipped": skipped,
            "weak": weak_report,
            "split": sets.report,
        }),
    )?;

    let pairs = build_unsup_pairs(&books, &lex, run.cfg.unsup_w);
    run.write_jsonl("build/unsup.jsonl", &pairs)?;

    let violations = validate_dataset(&all, Some(&books));
    run.write_json("build/validation.json", &json!({ "instances": all.len(), "violations": violations }))?;
    if !violations.is_empty() {
        bail!("{} dataset violations, first: {} {}", violations.len(), violations[0].instance_id, violations[0].problem);
    }
    Ok(Outcome::Done)
}

fn weak_instances(
    run: &mut Run,
    books: &BTreeMap<String, BookText>,
    lex: &Lexicon,
    opts: &BuildOptions,
) -> Result<(Vec<Instance>, Option<WeakMergeReport>)> {
    let c = run.cfg.paths.weak_candidates.clone();
    let s = run.cfg.paths.weak_scores.clone();
    let (Some(cand), Some(scores)) = (run.optional_input(c.as_ref())?, run.optional_input(s.as_ref())?) else {
        return Ok((Vec::new(), None));
    };
    let (inst, report) = merge_weak(&cand, &scores, run.cfg.weak_threshold, books, lex, opts)?;
    Ok((inst, Some(report)))
}

/// Read weak candidates (JSON lines) and classifier scores
/// (`sample_id<TAB>score`) and merge the accepted ones.
pub fn merge_weak(
    candidates: &Path,
    scores: &Path,
    threshold: f64,
    books: &BTreeMap<String, BookText>,
    lex: &Lexicon,
    opts: &BuildOptions,
) -> Result<(Vec<Instance>, WeakMergeReport)> {
    let text = std::fs::read_to_string(candidates).with_context(|| format!("reading {}", candidates.display()))?;
    let cands: Vec<WeakCandidate> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("weak candidates line {}", i + 1)))
        .collect::<Result<_>>()?;
    let mut table: HashMap<String, f64> = HashMap::new();
    for (i, line) in std::fs::read_to_string(scores)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, v) = line.split_once('\t').ok_or_else(|| anyhow!("weak scores line {}: expected two columns", i + 1))?;
        let v: f64 = v.trim().parse().with_context(|| format!("weak scores line {}", i + 1))?;
        table.insert(id.to_string(), v);
    }
    Ok(merge_weak_labels(&cands, &table, threshold, books, lex, opts))
}

pub fn build_unsup_pairs(books: &BTreeMap<String, BookText>, lex: &Lexicon, w: usize) -> Vec<UnsupPair> {
    books.values().flat_map(|b| build_unsup(b, lex, w)).collect()
}

/// Validate a dataset file, checking snippets against books when a books
/// directory is given.
pub fn validate_file(dataset: &Path, books: Option<(&Path, Language)>) -> Result<(usize, Vec<Violation>)> {
    let text = std::fs::read_to_string(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let instances = read_dataset(&text).map_err(|e| anyhow!(e))?;
    let books = match books {
        Some((dir, lang)) => Some(load_books(dir, lang)?),
        None => None,
    };
    Ok((instances.len(), validate_dataset(&instances, books.as_ref())))
}
