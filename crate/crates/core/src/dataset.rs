//! Task instances: candidate sampling, assembly from labels, book splits,
//! unsupervised pairs and weak-label merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Decision, LabeledSample};
use crate::corpus::{snippet_window, BookText, CorpusError, Language, Snippet, DEFAULT_WINDOW};
use crate::lexicon::{Lexicon, TraitId};
use crate::notes::ClusterSample;
use crate::seed::derive_seed;

pub const SCHEMA_HEADER: &str = r#"{"schema":"personet-instance/1"}"#;
pub const NUM_CANDIDATES: usize = 5;
pub const FREQUENT_POOL: usize = 20;
pub const DEFAULT_UNSUP_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterRef {
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub english_name: Option<String>,
}

impl CharacterRef {
    pub fn new(canonical: impl Into<String>) -> Self {
        Self { canonical: canonical.into(), aliases: Vec::new(), english_name: None }
    }

    pub fn is_projected(&self) -> bool {
        self.english_name.is_some()
    }

    /// Name used for layout and identity in a given language.
    pub fn display(&self, language: Language) -> &str {
        match (language, &self.english_name) {
            (Language::En, Some(en)) => en,
            _ => &self.canonical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Weak,
}

/// The history is every sentence of `book_id` before sentence `k1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRef {
    pub book_id: String,
    pub k1: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub snippet: Snippet,
    pub history_ref: HistoryRef,
    pub character: CharacterRef,
    pub gold: TraitId,
    pub candidates: Vec<TraitId>,
    pub split: Split,
    pub provenance: Provenance,
    pub language: Language,
}

impl Instance {
    pub fn book_id(&self) -> &str {
        &self.snippet.book_id
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.candidates.iter().position(|&c| c == self.gold)
    }

    /// Type-level invariant violations, without consulting the book.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.candidates.len() != NUM_CANDIDATES {
            v.push(format!("{} candidates, expected {NUM_CANDIDATES}", self.candidates.len()));
        }
        match self.candidates.iter().filter(|&&c| c == self.gold).count() {
            1 => {}
            0 => v.push("gold trait missing from candidates".into()),
            n => v.push(format!("gold trait appears {n} times")),
        }
        let distinct: BTreeSet<_> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            v.push("candidates not pairwise distinct".into());
        }
        if self.provenance == Provenance::Weak && self.split != Split::Train {
            v.push(format!("weak instance in {} split", self.split));
        }
        if self.character.canonical.is_empty() {
            v.push("empty character name".into());
        }
        if self.history_ref.book_id != self.snippet.book_id
            || Some(self.history_ref.k1) != self.snippet.first_sentence()
        {
            v.push("history reference does not start at the snippet".into());
        }
        if self.snippet.sentence_indices.windows(2).any(|w| w[1] != w[0] + 1) {
            v.push("snippet sentences not consecutive".into());
        }
        if self.snippet.len() > DEFAULT_WINDOW {
            v.push(format!("snippet of {} tokens exceeds {DEFAULT_WINDOW}", self.snippet.len()));
        }
        v
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("vocabulary of {0} traits is too small for candidate sampling")]
    VocabularyTooSmall(usize),
    #[error("not enough traits left to sample from the {pool} pool")]
    PoolExhausted { pool: &'static str },
    #[error("sample {sample_id}: {reason}")]
    Validation { sample_id: String, reason: String },
    #[error("book {0} is not in the split table")]
    MissingBook(String),
    #[error("characters shared between train and evaluation splits: {0:?}")]
    CharacterOverlap(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dataset line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Candidate set with the pool each negative came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDraw {
    pub candidates: Vec<TraitId>,
    pub gold_index: usize,
    pub frequent: [TraitId; 2],
    pub rest: [TraitId; 2],
}

/// Two negatives from the 20 most frequent traits and two from the whole
/// vocabulary, with the gold trait inserted at a seed-chosen position.
/// `exclude` removes extra traits from both pools.
pub fn sample_candidates(
    gold: TraitId,
    lexicon: &Lexicon,
    seed: u64,
    exclude: &BTreeSet<TraitId>,
) -> Result<CandidateDraw, DatasetError> {
    if lexicon.len() < FREQUENT_POOL + 2 {
        return Err(DatasetError::VocabularyTooSmall(lexicon.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frequent_pool: Vec<TraitId> = lexicon
        .top_by_frequency(FREQUENT_POOL)
        .into_iter()
        .filter(|t| *t != gold && !exclude.contains(t))
        .collect();
    if frequent_pool.len() < 2 {
        return Err(DatasetError::PoolExhausted { pool: "frequent" });
    }
    let picks = sample_indices(&mut rng, frequent_pool.len(), 2);
    let frequent = [frequent_pool[picks.index(0)], frequent_pool[picks.index(1)]];

    let rest_pool: Vec<TraitId> = lexicon
        .ids()
        .filter(|t| *t != gold && !frequent.contains(t) && !exclude.contains(t))
        .collect();
    if rest_pool.len() < 2 {
        return Err(DatasetError::PoolExhausted { pool: "vocabulary" });
    }
    let picks = sample_indices(&mut rng, rest_pool.len(), 2);
    let rest = [rest_pool[picks.index(0)], rest_pool[picks.index(1)]];

    let gold_index = rng.gen_range(0..NUM_CANDIDATES);
    let mut candidates = vec![frequent[0], frequent[1], rest[0], rest[1]];
    candidates.insert(gold_index, gold);
    Ok(CandidateDraw { candidates, gold_index, frequent, rest })
}

/// Trait counts over human-labeled golds in training books.
pub fn train_frequencies<'a>(
    golds: impl IntoIterator<Item = (&'a str, TraitId)>,
    split_table: &BTreeMap<String, Split>,
) -> BTreeMap<TraitId, u64> {
    let mut counts = BTreeMap::new();
    for (book, t) in golds {
        if split_table.get(book) == Some(&Split::Train) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub seed: u64,
    pub window: usize,
    pub exclude_cluster_traits: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { seed: 0, window: DEFAULT_WINDOW, exclude_cluster_traits: false }
    }
}

/// Sample labeled negative: reusable as a negative for the note classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakNegative {
    pub sample_id: String,
    pub book_id: String,
    pub trait_id: TraitId,
    pub note_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assembled {
    Instance(Box<Instance>),
    Negative(WeakNegative),
}

/// Turn one labeled cluster sample into an instance (positive decision) or a
/// classifier negative. `cluster_traits` are the other traits of the sample's
/// cluster, only used with `exclude_cluster_traits`.
pub fn assemble_instance(
    sample: &ClusterSample,
    label: &LabeledSample,
    book: &BookText,
    lexicon: &Lexicon,
    options: &BuildOptions,
    cluster_traits: &BTreeSet<TraitId>,
    split: Split,
) -> Result<Assembled, DatasetError> {
    let invalid = |reason: String| DatasetError::Validation { sample_id: sample.sample_id.clone(), reason };
    if label.sample_id != sample.sample_id {
        return Err(invalid(format!("label belongs to sample {}", label.sample_id)));
    }
    if label.decision == Decision::NotDescribes {
        return Ok(Assembled::Negative(WeakNegative {
            sample_id: sample.sample_id.clone(),
            book_id: sample.book_id.clone(),
            trait_id: sample.trait_id,
            note_text: label.note_text.clone(),
        }));
    }
    let (s, e) = label.character_span.ok_or_else(|| invalid("positive label without character span".into()))?;
    let surface = crate::notes::char_slice(&label.note_text, s, e)
        .filter(|x| s < e && !x.trim().is_empty())
        .ok_or_else(|| invalid(format!("character span {s}..{e} not inside the note text")))?;
    if let Some(claimed) = &label.character {
        if claimed != &surface {
            return Err(invalid(format!("character {claimed:?} does not occur at the annotated span")));
        }
    }
    let mut exclude = BTreeSet::new();
    if options.exclude_cluster_traits {
        exclude.extend(cluster_traits.iter().copied().filter(|t| *t != sample.trait_id));
    }
    let instance = make_instance(
        &sample.sample_id,
        book,
        sample.center,
        CharacterRef::new(surface.trim()),
        sample.trait_id,
        lexicon,
        options,
        &exclude,
        split,
        Provenance::Human,
    )?;
    Ok(Assembled::Instance(Box::new(instance)))
}

#[allow(clippy::too_many_arguments)]
fn make_instance(
    instance_id: &str,
    book: &BookText,
    center: usize,
    character: CharacterRef,
    gold: TraitId,
    lexicon: &Lexicon,
    options: &BuildOptions,
    exclude: &BTreeSet<TraitId>,
    split: Split,
    provenance: Provenance,
) -> Result<Instance, DatasetError> {
    let snippet = snippet_window(book, center, options.window)?;
    let draw = sample_candidates(gold, lexicon, derive_seed(options.seed, instance_id), exclude)?;
    Ok(Instance {
        instance_id: instance_id.to_string(),
        history_ref: HistoryRef { book_id: book.book_id.clone(), k1: snippet.sentence_indices[0] },
        snippet,
        character,
        gold,
        candidates: draw.candidates,
        split,
        provenance,
        language: book.language,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitRow {
    pub books: usize,
    pub characters: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    pub train: SplitRow,
    pub weak: SplitRow,
    pub dev: SplitRow,
    pub test: SplitRow,
    pub total: SplitRow,
    /// Weak instances whose book is not a training book; never kept.
    pub weak_dropped: usize,
}

impl SplitReport {
    /// Tab-separated table in the layout of the dataset statistics table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("set\tbooks\tchars\tinstances\n");
        for (name, row) in [
            ("train", &self.train),
            ("weakly_sup", &self.weak),
            ("dev", &self.dev),
            ("test", &self.test),
            ("total", &self.total),
        ] {
            out.push_str(&format!("{name}\t{}\t{}\t{}\n", row.books, row.characters, row.instances));
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitSets {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    pub report: SplitReport,
}

impl SplitSets {
    pub fn all(&self) -> impl Iterator<Item = &Instance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// Partition by book and check that no character name in training also
/// appears in dev or test.
pub fn split_by_book(
    instances: Vec<Instance>,
    split_table: &BTreeMap<String, Split>,
) -> Result<SplitSets, DatasetError> {
    let mut sets = SplitSets::default();
    for mut inst in instances {
        let split =
            *split_table.get(inst.book_id()).ok_or_else(|| DatasetError::MissingBook(inst.book_id().to_string()))?;
        if inst.provenance == Provenance::Weak && split != Split::Train {
            sets.report.weak_dropped += 1;
            continue;
        }
        inst.split = split;
        match split {
            Split::Train => sets.train.push(inst),
            Split::Dev => sets.dev.push(inst),
            Split::Test => sets.test.push(inst),
        }
    }
    let names = |it: &mut dyn Iterator<Item = &Instance>| -> BTreeSet<String> {
        it.map(|i| i.character.canonical.clone()).collect()
    };
    let train_names = names(&mut sets.train.iter());
    let eval_names = names(&mut sets.dev.iter().chain(&sets.test));
    let overlap: Vec<String> = train_names.intersection(&eval_names).cloned().collect();
    if !overlap.is_empty() {
        return Err(DatasetError::CharacterOverlap(overlap));
    }

    let row = |items: Vec<&Instance>| SplitRow {
        books: items.iter().map(|i| i.book_id()).collect::<BTreeSet<_>>().len(),
        characters: items.iter().map(|i| (i.book_id(), i.character.canonical.as_str())).collect::<BTreeSet<_>>().len(),
        instances: items.len(),
    };
    let human_train: Vec<&Instance> = sets.train.iter().filter(|i| i.provenance == Provenance::Human).collect();
    let weak: Vec<&Instance> = sets.train.iter().filter(|i| i.provenance == Provenance::Weak).collect();
    sets.report.train = row(human_train);
    sets.report.weak = row(weak);
    sets.report.dev = row(sets.dev.iter().collect());
    sets.report.test = row(sets.test.iter().collect());
    sets.report.total = row(sets.all().collect());
    Ok(sets)
}

/// Unsupervised pair: the context around a trait-bearing sentence with that
/// sentence left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsupPair {
    pub book_id: String,
    pub source_sentence: usize,
    pub context_sentences: Vec<usize>,
    pub trait_id: TraitId,
}

impl UnsupPair {
    pub fn tokens<'a>(&self, book: &'a BookText) -> Vec<&'a str> {
        self.context_sentences.iter().flat_map(|&k| book.sentence_tokens(k)).collect()
    }
}

/// One pair per (sentence, distinct trait in it). Sentences whose clipped
/// window holds no other sentence produce nothing.
pub fn build_unsup(book: &BookText, lexicon: &Lexicon, w: usize) -> Vec<UnsupPair> {
    let n = book.sentence_count();
    let mut out = Vec::new();
    for j in 0..n {
        let tokens = book.sentence_tokens(j);
        let mut seen = BTreeSet::new();
        let traits: Vec<TraitId> = lexicon
            .find_traits(&tokens, book.language)
            .into_iter()
            .map(|m| m.trait_id)
            .filter(|t| seen.insert(*t))
            .collect();
        if traits.is_empty() {
            continue;
        }
        let context: Vec<usize> = (j.saturating_sub(w)..(j + w + 1).min(n)).filter(|&k| k != j).collect();
        if context.is_empty() {
            continue;
        }
        for trait_id in traits {
            out.push(UnsupPair {
                book_id: book.book_id.clone(),
                source_sentence: j,
                context_sentences: context.clone(),
                trait_id,
            });
        }
    }
    out
}

/// Candidate pairing of a trait and a name from an unlabeled note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakCandidate {
    pub sample_id: String,
    pub book_id: String,
    pub trait_id: TraitId,
    pub character: String,
    pub center: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeakMergeReport {
    pub candidates: usize,
    pub scored: usize,
    /// Stage one: candidates the classifier accepted.
    pub accepted: usize,
    /// Stage two: accepted candidates that became instances.
    pub assembled: usize,
    pub acceptance_rate: f64,
    pub unmatched: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

/// Accept candidates whose classifier score reaches `threshold` as weak,
/// training-only instances.
pub fn merge_weak_labels(
    candidates: &[WeakCandidate],
    scores: &HashMap<String, f64>,
    threshold: f64,
    books: &BTreeMap<String, BookText>,
    lexicon: &Lexicon,
    options: &BuildOptions,
) -> (Vec<Instance>, WeakMergeReport) {
    let mut report = WeakMergeReport { candidates: candidates.len(), ..Default::default() };
    let mut out = Vec::new();
    for c in candidates {
        let Some(&score) = scores.get(&c.sample_id) else {
            report.unmatched.push(c.sample_id.clone());
            continue;
        };
        report.scored += 1;
        if score < threshold {
            continue;
        }
        report.accepted += 1;
        let Some(book) = books.get(&c.book_id) else {
            report.skipped.push((c.sample_id.clone(), format!("unknown book {}", c.book_id)));
            continue;
        };
        let id = format!("weak/{}", c.sample_id);
        match make_instance(
            &id,
            book,
            c.center,
            CharacterRef::new(c.character.clone()),
            c.trait_id,
            lexicon,
            options,
            &BTreeSet::new(),
            Split::Train,
            Provenance::Weak,
        ) {
            Ok(inst) => out.push(inst),
            Err(e) => report.skipped.push((c.sample_id.clone(), e.to_string())),
        }
    }
    report.assembled = out.len();
    report.acceptance_rate = if report.scored == 0 { 0.0 } else { report.accepted as f64 / report.scored as f64 };
    (out, report)
}

pub fn write_dataset<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> String {
    let mut out = String::from(SCHEMA_HEADER);
    out.push('\n');
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Vec<Instance>, DatasetError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == SCHEMA_HEADER => {}
        Some((i, _)) => return Err(DatasetError::Format { line: i + 1, reason: "missing schema header".into() }),
        None => return Ok(Vec::new()),
    }
    lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Format { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub instance_id: String,
    pub problem: String,
}

/// Validate every instance; with books available, also check snippets
/// against their books.
pub fn validate_dataset(instances: &[Instance], books: Option<&BTreeMap<String, BookText>>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for inst in instances {
        let mut problems = inst.violations();
        if !ids.insert(inst.instance_id.as_str()) {
            problems.push("duplicate instance id".into());
        }
        if let Some(books) = books {
            match books.get(inst.book_id()) {
                Some(b) => problems.extend(inst.snippet.violations(b, DEFAULT_WINDOW)),
                None => problems.push(format!("unknown book {}", inst.book_id())),
            }
        }
        out.extend(problems.into_iter().map(|problem| Violation { instance_id: inst.instance_id.clone(), problem }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sentencize;
    use crate::lexicon::{Polarity, TraitEntry};

    pub(crate) fn lexicon(n: u32) -> Lexicon {
        let mut lex = Lexicon::from_entries(
            (0..n)
                .map(|i| TraitEntry {
                    trait_id: TraitId(i),
                    english_lemma: format!("trait{i}"),
                    chinese_lemmas: vec![],
                    polarity: Polarity::Neutral,
                    bilingual: false,
                })
                .collect(),
        )
        .unwrap();
        lex.set_frequencies((0..n).map(|i| (TraitId(i), (n - i) as u64)).collect());
        lex
    }

    #[test]
    fn candidates_have_gold_once() {
        let lex = lexicon(40);
        for gold in [0u32, 5, 19, 20, 39] {
            for seed in 0..50 {
                let d = sample_candidates(TraitId(gold), &lex, seed, &BTreeSet::new()).unwrap();
                assert_eq!(d.candidates.len(), 5);
                assert_eq!(d.candidates.iter().filter(|&&c| c == TraitId(gold)).count(), 1);
                assert_eq!(d.candidates[d.gold_index], TraitId(gold));
                let set: BTreeSet<_> = d.candidates.iter().collect();
                assert_eq!(set.len(), 5);
                assert!(d.frequent.iter().all(|t| t.0 < 20));
            }
        }
    }

    #[test]
    fn equal_seeds_are_identical() {
        let lex = lexicon(30);
        let a = sample_candidates(TraitId(3), &lex, 99, &BTreeSet::new()).unwrap();
        let b = sample_candidates(TraitId(3), &lex, 99, &BTreeSet::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_vocabulary_is_rejected() {
        let lex = lexicon(21);
        assert!(matches!(
            sample_candidates(TraitId(0), &lex, 1, &BTreeSet::new()),
            Err(DatasetError::VocabularyTooSmall(21))
        ));
    }

    #[test]
    fn exclusion_set_is_respected() {
        let lex = lexicon(30);
        let exclude: BTreeSet<TraitId> = (1..10).map(TraitId).collect();
        for seed in 0..100 {
            let d = sample_candidates(TraitId(0), &lex, seed, &exclude).unwrap();
            assert!(d.candidates.iter().all(|t| !exclude.contains(t)));
        }
    }

    fn book(n_tokens: usize) -> BookText {
        let raw: String = (0..n_tokens).map(|i| format!("w{i}{}", if i % 10 == 9 { ". " } else { " " })).collect();
        sentencize("book", &raw, Language::En)
    }

    fn sample(center: usize) -> ClusterSample {
        ClusterSample {
            sample_id: "book:n1/t3".into(),
            cluster_id: "book:n1".into(),
            book_id: "book".into(),
            trait_id: TraitId(3),
            characters: vec!["Dantes".into()],
            center,
            note_ids: vec!["n1".into()],
        }
    }

    fn label(decision: Decision, span: Option<(usize, usize)>) -> LabeledSample {
        LabeledSample {
            sample_id: "book:n1/t3".into(),
            task_id: "task".into(),
            annotator_id: "a".into(),
            decision,
            note_text: "Dantes is trait3".into(),
            character_span: span,
            character: None,
        }
    }

    #[test]
    fn positive_label_makes_windowed_instance() {
        let b = book(20_000);
        let lex = lexicon(30);
        let out = assemble_instance(
            &sample(10_000),
            &label(Decision::DescribesCharacter, Some((0, 6))),
            &b,
            &lex,
            &BuildOptions::default(),
            &BTreeSet::new(),
            Split::Train,
        )
        .unwrap();
        let Assembled::Instance(inst) = out else { panic!("expected instance") };
        assert_eq!((inst.snippet.start, inst.snippet.end), (9760, 10240));
        assert_eq!(inst.character.canonical, "Dantes");
        assert_eq!(inst.history_ref.k1, 976);
        assert!(inst.violations().is_empty());
    }

    #[test]
    fn negative_label_routes_to_pool() {
        let out = assemble_instance(
            &sample(50),
            &label(Decision::NotDescribes, None),
            &book(100),
            &lexicon(30),
            &BuildOptions::default(),
            &BTreeSet::new(),
            Split::Train,
        )
        .unwrap();
        assert!(matches!(out, Assembled::Negative(n) if n.trait_id == TraitId(3)));
    }

    #[test]
    fn character_outside_note_is_rejected() {
        let mut l = label(Decision::DescribesCharacter, Some((0, 6)));
        l.character = Some("Albert".into());
        let r = assemble_instance(&sample(5), &l, &book(50), &lexicon(30), &BuildOptions::default(), &BTreeSet::new(), Split::Train);
        assert!(matches!(r, Err(DatasetError::Validation { .. })));
        let l = label(Decision::DescribesCharacter, Some((10, 40)));
        let r = assemble_instance(&sample(5), &l, &book(50), &lexicon(30), &BuildOptions::default(), &BTreeSet::new(), Split::Train);
        assert!(matches!(r, Err(DatasetError::Validation { .. })));
    }

    fn inst(id: &str, book: &str, character: &str, prov: Provenance) -> Instance {
        Instance {
            instance_id: id.into(),
            snippet: Snippet { book_id: book.into(), sentence_indices: vec![0], start: 0, end: 5, center: 2 },
            history_ref: HistoryRef { book_id: book.into(), k1: 0 },
            character: CharacterRef::new(character),
            gold: TraitId(0),
            candidates: (0..5).map(TraitId).collect(),
            split: Split::Train,
            provenance: prov,
            language: Language::En,
        }
    }

    #[test]
    fn single_book_fills_one_split() {
        let table: BTreeMap<String, Split> = [("a".to_string(), Split::Dev)].into();
        let sets = split_by_book(vec![inst("1", "a", "X", Provenance::Human), inst("2", "a", "Y", Provenance::Human)], &table).unwrap();
        assert_eq!((sets.train.len(), sets.dev.len(), sets.test.len()), (0, 2, 0));
        assert!(sets.dev.iter().all(|i| i.split == Split::Dev));
        assert_eq!(sets.report.dev, SplitRow { books: 1, characters: 2, instances: 2 });
    }

    #[test]
    fn shared_character_is_an_error() {
        let table: BTreeMap<String, Split> =
            [("a".to_string(), Split::Train), ("b".to_string(), Split::Dev), ("c".to_string(), Split::Test)].into();
        let r = split_by_book(
            vec![inst("1", "a", "Emma", Provenance::Human), inst("2", "b", "Knight", Provenance::Human), inst("3", "c", "Emma", Provenance::Human)],
            &table,
        );
        match r {
            Err(DatasetError::CharacterOverlap(names)) => assert_eq!(names, vec!["Emma".to_string()]),
            other => panic!("expected overlap error, got {other:?}"),
        }
        assert!(matches!(split_by_book(vec![inst("1", "zzz", "E", Provenance::Human)], &table), Err(DatasetError::MissingBook(_))));
    }

    #[test]
    fn weak_instances_stay_in_train() {
        let table: BTreeMap<String, Split> = [("a".to_string(), Split::Train), ("b".to_string(), Split::Test)].into();
        let sets = split_by_book(vec![inst("1", "a", "E", Provenance::Weak), inst("2", "b", "F", Provenance::Weak)], &table).unwrap();
        assert_eq!(sets.train.len(), 1);
        assert_eq!(sets.report.weak_dropped, 1);
        assert_eq!(sets.report.weak.instances, 1);
        assert!(sets.report.to_tsv().starts_with("set\tbooks\tchars\tinstances\ntrain\t0\t0\t0\nweakly_sup\t1\t1\t1\n"));
    }

    #[test]
    fn unsup_clips_and_removes_source() {
        let lex = lexicon(30);
        let b = sentencize("b", "trait1 here. a b. c d. e f. g h.", Language::En);
        let pairs = build_unsup(&b, &lex, 2);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].context_sentences, vec![1, 2]);

        let b = sentencize("b", "x. y. trait1 and trait2 and trait1. z.", Language::En);
        let pairs = build_unsup(&b, &lex, 5);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].context_sentences, pairs[1].context_sentences);
        assert_eq!(pairs.iter().map(|p| p.trait_id.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!(!pairs[0].context_sentences.contains(&2));
    }

    #[test]
    fn vacuous_threshold_accepts_nothing() {
        let cands: Vec<WeakCandidate> = (0..10)
            .map(|i| WeakCandidate { sample_id: format!("s{i}"), book_id: "book".into(), trait_id: TraitId(1), character: "C".into(), center: i })
            .collect();
        let scores: HashMap<String, f64> = (0..10).map(|i| (format!("s{i}"), 0.99)).collect();
        let books: BTreeMap<String, BookText> = [("book".to_string(), book(100))].into();
        let (insts, report) = merge_weak_labels(&cands, &scores, 1.0, &books, &lexicon(30), &BuildOptions::default());
        assert!(insts.is_empty());
        assert_eq!(report.accepted, 0);
        let (insts, report) = merge_weak_labels(&cands, &HashMap::new(), 0.5, &books, &lexicon(30), &BuildOptions::default());
        assert!(insts.is_empty());
        assert_eq!(report.unmatched.len(), 10);
    }

    #[test]
    fn dataset_file_round_trip() {
        let items = vec![inst("1", "a", "E", Provenance::Human)];
        let text = write_dataset(&items);
        assert!(text.starts_with(SCHEMA_HEADER));
        assert_eq!(read_dataset(&text).unwrap(), items);
        assert!(read_dataset("{\"x\":1}\n").is_err());
    }

    #[test]
    fn validator_flags_injected_violations() {
        let good = inst("1", "a", "E", Provenance::Human);
        assert!(validate_dataset(std::slice::from_ref(&good), None).is_empty());
        let mut four = good.clone();
        four.candidates.pop();
        let mut missing = good.clone();
        missing.gold = TraitId(77);
        let mut weak_dev = good.clone();
        weak_dev.provenance = Provenance::Weak;
        weak_dev.split = Split::Dev;
        for bad in [four, missing, weak_dev] {
            assert!(!validate_dataset(&[bad], None).is_empty());
        }
    }
}
