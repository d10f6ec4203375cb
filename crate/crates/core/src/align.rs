//! Monotone sentence alignment between two books over precomputed sentence
//! embeddings, and projection of snippets and character names through it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{snippet_over_sentences, snippet_window, BookText, Snippet};
use crate::dataset::CharacterRef;
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::scalar::{cosine, l2_normalize, Real};

pub const DEFAULT_CONTEXT_SENTENCES: usize = 10;
pub const DEFAULT_NULL_PENALTY: f64 = 0.3;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("missing embedding for sentence {index} (id {id})")]
    MissingSentence { index: usize, id: u64 },
    #[error("dimension mismatch: source {src}, target {tgt}")]
    DimensionMismatch { src: usize, tgt: usize },
    #[error("empty {0} side")]
    Empty(&'static str),
    #[error("null penalty must be positive, got {0}")]
    BadPenalty(f64),
    #[error("invalid block set: {0}")]
    BadBlocks(String),
    #[error("no monotone alignment covers both sides with the given blocks")]
    NoAlignment,
    #[error("alignment line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Replace each sentence vector by the normalized mean of itself and the
/// following `n - 1` sentences (clipped at the end).
pub fn window_embed<T: Real>(ids: &[u64], base: &EmbeddingTable<T>, n: usize) -> Result<EmbeddingTable<T>, AlignError> {
    let n = n.max(1);
    let rows: Vec<&[T]> = ids
        .iter()
        .enumerate()
        .map(|(index, &id)| base.get(id).ok_or(AlignError::MissingSentence { index, id }))
        .collect::<Result<_, _>>()?;
    let mut out = EmbeddingTable::new(base.dim());
    for i in 0..rows.len() {
        let end = (i + n).min(rows.len());
        let mut v = vec![T::zero(); base.dim()];
        for r in &rows[i..end] {
            for (o, &x) in v.iter_mut().zip(r.iter()) {
                *o = *o + x;
            }
        }
        let k = T::from_usize(end - i).unwrap();
        v.iter_mut().for_each(|x| *x = *x / k);
        l2_normalize(&mut v);
        out.insert(ids[i], &v)?;
    }
    Ok(out)
}

/// Block shape: how many source and target sentences one step consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    pub src: usize,
    pub tgt: usize,
}

impl Block {
    pub const fn new(src: usize, tgt: usize) -> Self {
        Self { src, tgt }
    }

    pub fn is_null(self) -> bool {
        self.src == 0 || self.tgt == 0
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for Block {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("bad block {s:?}"))?;
        let p = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad block {s:?}"));
        Ok(Block::new(p(a)?, p(b)?))
    }
}

pub const DEFAULT_BLOCKS: [Block; 6] =
    [Block::new(1, 1), Block::new(1, 0), Block::new(0, 1), Block::new(1, 2), Block::new(2, 1), Block::new(2, 2)];

/// Tie-break order: fewer sentences first, then the block consuming more
/// source sentences.
pub fn priority_order(blocks: &[Block]) -> Vec<Block> {
    let mut b = blocks.to_vec();
    b.sort_by(|x, y| (x.src + x.tgt).cmp(&(y.src + y.tgt)).then(y.src.cmp(&x.src)));
    b.dedup();
    b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedBlock {
    pub src_start: usize,
    pub src_end: usize,
    pub tgt_start: usize,
    pub tgt_end: usize,
}

impl AlignedBlock {
    pub fn shape(&self) -> Block {
        Block::new(self.src_end - self.src_start, self.tgt_end - self.tgt_start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap<T> {
    /// Target sentence indices for every source sentence, possibly empty.
    pub targets: Vec<Vec<usize>>,
    pub blocks: Vec<AlignedBlock>,
    pub tgt_len: usize,
    pub cost: T,
}

impl<T: Real> AlignmentMap<T> {
    pub fn src_len(&self) -> usize {
        self.targets.len()
    }

    pub fn shapes(&self) -> Vec<Block> {
        self.blocks.iter().map(AlignedBlock::shape).collect()
    }

    /// Target spans never move backwards: for aligned source sentences
    /// `k < k'`, both the lowest and the highest target of `k'` are at least
    /// those of `k`. Sentences sharing a multi-sentence block compare equal.
    pub fn is_monotone(&self) -> bool {
        let mut prev: Option<(usize, usize)> = None;
        for t in &self.targets {
            let (Some(&lo), Some(&hi)) = (t.iter().min(), t.iter().max()) else {
                continue;
            };
            if let Some((plo, phi)) = prev {
                if lo < plo || hi < phi {
                    return false;
                }
            }
            prev = Some((lo, hi));
        }
        true
    }

    /// `src_k<TAB>tgt_ks` with comma-joined targets, empty when unaligned.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.targets.iter().enumerate() {
            let joined: Vec<String> = t.iter().map(usize::to_string).collect();
            out.push_str(&format!("{k}\t{}\n", joined.join(",")));
        }
        out
    }

    /// Parse the TSV form. Block trace and cost are not stored in it.
    pub fn from_tsv(text: &str) -> Result<Self, AlignError> {
        let mut targets = Vec::new();
        let mut tgt_len = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |reason: &str| AlignError::Format { line: i + 1, reason: reason.to_string() };
            let (k, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            if k.parse::<usize>().ok() != Some(targets.len()) {
                return Err(bad("source indices must be consecutive from 0"));
            }
            let t: Vec<usize> = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(|x| x.parse::<usize>().map_err(|_| bad("bad target index"))).collect::<Result<_, _>>()?
            };
            if let Some(&m) = t.iter().max() {
                tgt_len = tgt_len.max(m + 1);
            }
            targets.push(t);
        }
        Ok(AlignmentMap { targets, blocks: Vec::new(), tgt_len, cost: T::zero() })
    }
}

fn mean_of<T: Real>(table: &EmbeddingTable<T>, start: usize, end: usize) -> Vec<T> {
    let mut v = vec![T::zero(); table.dim()];
    for i in start..end {
        for (o, &x) in v.iter_mut().zip(table.row(i)) {
            *o = *o + x;
        }
    }
    let k = T::from_usize(end - start).unwrap();
    v.iter_mut().for_each(|x| *x = *x / k);
    v
}

/// Cost of aligning `src[i..i+a]` with `tgt[j..j+b]`.
pub fn block_cost<T: Real>(
    src: &EmbeddingTable<T>,
    tgt: &EmbeddingTable<T>,
    i: usize,
    j: usize,
    block: Block,
    null_penalty: T,
) -> T {
    if block.is_null() {
        return null_penalty * T::from_usize(block.src + block.tgt).unwrap();
    }
    let s = mean_of(src, i, i + block.src);
    let t = mean_of(tgt, j, j + block.tgt);
    // One unit per sentence pair covered, so a 2-2 block costs as much as four
    // 1-1 blocks of the same distance and merges must earn their place.
    let size = T::from_usize(block.src * block.tgt).unwrap();
    (T::one() - cosine(&s, &t)) * size
}

/// Totals within this relative distance of the best one count as ties, so
/// rounding does not decide between alignments of equal cost.
pub const TIE_TOLERANCE: f64 = 1e-12;

const MAX_BLOCK_KINDS: usize = 16;

/// Minimum-cost monotone alignment over the table rows in insertion order.
///
/// Among equal-cost alignments the one whose block sequence is first under
/// [`priority_order`], compared block by block from the start, is returned.
/// Equal means within [`TIE_TOLERANCE`] at each step of the recursion.
pub fn align_dp<T: Real>(
    src: &EmbeddingTable<T>,
    tgt: &EmbeddingTable<T>,
    blocks: &[Block],
    null_penalty: T,
) -> Result<AlignmentMap<T>, AlignError> {
    if src.dim() != tgt.dim() {
        return Err(AlignError::DimensionMismatch { src: src.dim(), tgt: tgt.dim() });
    }
    if src.is_empty() {
        return Err(AlignError::Empty("source"));
    }
    if tgt.is_empty() {
        return Err(AlignError::Empty("target"));
    }
    if !(null_penalty > T::zero()) || !null_penalty.is_finite() {
        return Err(AlignError::BadPenalty(null_penalty.to_f64_lossy()));
    }
    if blocks.iter().any(|b| b.src + b.tgt == 0) {
        return Err(AlignError::BadBlocks("0-0 block".into()));
    }
    let order = priority_order(blocks);
    if order.len() > MAX_BLOCK_KINDS {
        return Err(AlignError::BadBlocks(format!("at most {MAX_BLOCK_KINDS} block shapes")));
    }
    let (n, m) = (src.len(), tgt.len());
    let w = m + 1;
    // best[i][j]: minimal cost of aligning src[i..] with tgt[j..].
    let mut best = vec![T::infinity(); (n + 1) * w];
    let mut choice = vec![u8::MAX; (n + 1) * w];
    best[n * w + m] = T::zero();
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let mut totals = [T::infinity(); MAX_BLOCK_KINDS];
            let mut low = T::infinity();
            for (bi, &b) in order.iter().enumerate() {
                if i + b.src > n || j + b.tgt > m {
                    continue;
                }
                let rest = best[(i + b.src) * w + j + b.tgt];
                if rest.is_infinite() {
                    continue;
                }
                totals[bi] = block_cost(src, tgt, i, j, b, null_penalty) + rest;
                low = low.min(totals[bi]);
            }
            if low.is_infinite() {
                continue;
            }
            let slack = T::lit(TIE_TOLERANCE) * low.abs().max(T::one());
            let pick = (0..order.len()).find(|&bi| totals[bi] <= low + slack).unwrap();
            best[i * w + j] = totals[pick];
            choice[i * w + j] = pick as u8;
        }
    }
    if best[0].is_infinite() {
        return Err(AlignError::NoAlignment);
    }
    let mut targets = vec![Vec::new(); n];
    let mut trace = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let b = order[choice[i * w + j] as usize];
        for k in i..i + b.src {
            targets[k].extend(j..j + b.tgt);
        }
        trace.push(AlignedBlock { src_start: i, src_end: i + b.src, tgt_start: j, tgt_end: j + b.tgt });
        i += b.src;
        j += b.tgt;
    }
    Ok(AlignmentMap { targets, blocks: trace, tgt_len: m, cost: best[0] })
}

/// Map a snippet through an alignment. `None` when no sentence aligns.
pub fn project_snippet<T: Real>(
    map: &AlignmentMap<T>,
    snippet: &Snippet,
    tgt_book: &BookText,
    width: usize,
) -> Option<Snippet> {
    let mut targets: Vec<usize> = snippet
        .sentence_indices
        .iter()
        .filter_map(|&k| map.targets.get(k))
        .flatten()
        .copied()
        .filter(|&t| t < tgt_book.sentence_count())
        .collect();
    targets.sort_unstable();
    targets.dedup();
    let (&first, &last) = (targets.first()?, targets.last()?);
    if last - first + 1 == targets.len() {
        return Some(snippet_over_sentences(tgt_book, first, last, width));
    }
    let median = targets[(targets.len() - 1) / 2];
    let s = &tgt_book.sentences[median];
    snippet_window(tgt_book, s.start + (s.end - s.start) / 2, width).ok()
}

/// Manually curated map from source-language character names to English.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharacterTable {
    names: BTreeMap<String, String>,
}

impl CharacterTable {
    /// Two tab-separated columns per line: source name, English name.
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut names = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (src, en) = line.split_once('\t').ok_or(AlignError::Format { line: i + 1, reason: "expected two columns".into() })?;
            if names.insert(src.trim().to_string(), en.trim().to_string()).is_some() {
                return Err(AlignError::Format { line: i + 1, reason: format!("duplicate name {src:?}") });
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.names.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.names.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

/// Fill in the English name from the table; unchanged (unprojected) on a miss.
pub fn project_character(table: &CharacterTable, c: &CharacterRef) -> CharacterRef {
    let hit = std::iter::once(&c.canonical).chain(&c.aliases).find_map(|n| table.get(n));
    let mut out = c.clone();
    if let Some(en) = hit {
        out.english_name = Some(en.to_string());
    }
    out
}

/// Human grade of one projected snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignGrade {
    Perfect,
    HighOverlap,
    LowOverlap,
    NoMatch,
}

impl FromStr for AlignGrade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(AlignGrade::Perfect),
            "high_overlap" => Ok(AlignGrade::HighOverlap),
            "low_overlap" => Ok(AlignGrade::LowOverlap),
            "no_match" => Ok(AlignGrade::NoMatch),
            other => Err(format!("unknown grade {other:?}")),
        }
    }
}

pub const AUDIT_HEADER: &str = "instance_id\tsource_snippet\ttarget_snippet\tgrade";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub instance_id: String,
    pub source_text: String,
    pub target_text: String,
}

/// Audit sheet with an empty grade column for reviewers to fill in with
/// `perfect`, `high_overlap`, `low_overlap` or `no_match`.
pub fn audit_sheet(rows: &[AuditRow]) -> String {
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    let mut out = format!("{AUDIT_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t\n", r.instance_id, clean(&r.source_text), clean(&r.target_text)));
    }
    out
}

/// Tally a graded audit sheet; ungraded rows are counted separately.
pub fn audit_summary(sheet: &str) -> Result<(BTreeMap<AlignGrade, usize>, usize), AlignError> {
    let mut counts = BTreeMap::new();
    let mut ungraded = 0;
    for (i, line) in sheet.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let grade = line.rsplit('\t').next().unwrap_or("").trim();
        if grade.is_empty() {
            ungraded += 1;
            continue;
        }
        let g = grade.parse::<AlignGrade>().map_err(|reason| AlignError::Format { line: i + 1, reason })?;
        *counts.entry(g).or_insert(0) += 1;
    }
    Ok((counts, ungraded))
}
