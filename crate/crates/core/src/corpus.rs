//! Tokenization, sentence segmentation and snippet windows over book text.
//!
//! A token is a whitespace-delimited word for English and a single
//! non-whitespace character for Chinese. Sentence positions are absolute
//! ordinals into the book, starting at 0.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default snippet width in tokens.
pub const DEFAULT_WINDOW: usize = 480;

const TERMINALS: &[char] = &['.', '!', '?', '。', '！', '？', '…'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '」', '』', '》', '）'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            other => Err(format!("unknown language {other:?} (expected en or zh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
}

pub fn tokenize(text: &str, language: Language) -> Vec<Token> {
    match language {
        Language::En => {
            let mut out = Vec::new();
            let mut start = None;
            for (i, c) in text.char_indices() {
                match (c.is_whitespace(), start) {
                    (true, Some(s)) => {
                        out.push(Token { text: text[s..i].to_string(), start: s, end: i });
                        start = None;
                    }
                    (false, None) => start = Some(i),
                    _ => {}
                }
            }
            if let Some(s) = start {
                out.push(Token { text: text[s..].to_string(), start: s, end: text.len() });
            }
            out
        }
        Language::Zh => text
            .char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| Token { text: c.to_string(), start: i, end: i + c.len_utf8() })
            .collect(),
    }
}

/// Number of tokens in `text`.
pub fn word_count(text: &str, language: Language) -> usize {
    match language {
        Language::En => text.split_whitespace().count(),
        Language::Zh => text.chars().filter(|c| !c.is_whitespace()).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    /// Half-open token offsets.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("center {center} out of range for book with {len} tokens")]
    CenterOutOfRange { center: usize, len: usize },
    #[error("segmented input line {line}: {reason}")]
    Segmented { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookText {
    pub book_id: String,
    pub language: Language,
    pub tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
}

fn is_terminal_token(tok: &str) -> bool {
    let core = tok.trim_end_matches(CLOSERS);
    core.ends_with(TERMINALS)
}

fn is_trailer_token(tok: &str) -> bool {
    tok.chars().all(|c| CLOSERS.contains(&c) || TERMINALS.contains(&c))
}

/// Rule-based segmentation: a sentence ends after a token ending in terminal
/// punctuation, absorbing any directly following closing quotes or further
/// terminal marks.
pub fn sentencize(book_id: &str, raw: &str, language: Language) -> BookText {
    let tokens = tokenize(raw, language);
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < tokens.len() {
        if is_terminal_token(&tokens[i].text) {
            let mut end = i + 1;
            while end < tokens.len() && is_trailer_token(&tokens[end].text) {
                end += 1;
            }
            push_sentence(&mut sentences, raw, &tokens, start, end);
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < tokens.len() {
        push_sentence(&mut sentences, raw, &tokens, start, tokens.len());
    }
    BookText { book_id: book_id.to_string(), language, tokens, sentences }
}

fn push_sentence(out: &mut Vec<Sentence>, raw: &str, tokens: &[Token], start: usize, end: usize) {
    let text = raw[tokens[start].start..tokens[end - 1].end].to_string();
    out.push(Sentence { index: out.len(), start, end, text });
}

impl BookText {
    pub fn token_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Sentence containing token `offset`.
    pub fn sentence_of_token(&self, offset: usize) -> Option<usize> {
        if offset >= self.tokens.len() {
            return None;
        }
        let idx = self.sentences.partition_point(|s| s.end <= offset);
        (idx < self.sentences.len()).then_some(idx)
    }

    /// Indices of all sentences intersecting the token range `[start, end)`.
    pub fn sentences_intersecting(&self, start: usize, end: usize) -> Vec<usize> {
        if start >= end {
            return Vec::new();
        }
        let first = self.sentences.partition_point(|s| s.end <= start);
        (first..self.sentences.len()).take_while(|&k| self.sentences[k].start < end).collect()
    }

    pub fn token_texts(&self, start: usize, end: usize) -> Vec<&str> {
        self.tokens[start..end].iter().map(|t| t.text.as_str()).collect()
    }

    pub fn sentence_tokens(&self, k: usize) -> Vec<&str> {
        let s = &self.sentences[k];
        self.token_texts(s.start, s.end)
    }

    /// Sentences joined by newlines; sentencizing this reproduces the segmentation.
    pub fn reassemble(&self) -> String {
        self.sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// Pre-segmented format: `k<TAB>start<TAB>end<TAB>text` per sentence.
    pub fn to_segmented(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let text: String = s.text.chars().map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c }).collect();
            out.push_str(&format!("{}\t{}\t{}\t{}\n", s.index, s.start, s.end, text));
        }
        out
    }

    pub fn from_segmented(book_id: &str, input: &str, language: Language) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        let mut sentences = Vec::new();
        let mut offset = 0usize;
        for (i, line) in input.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| CorpusError::Segmented { line: i + 1, reason };
            let mut cols = line.splitn(4, '\t');
            let mut num = |name: &str| -> Result<usize, CorpusError> {
                cols.next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| bad(format!("missing or invalid {name}")))
            };
            let (k, start, end) = (num("k")?, num("start")?, num("end")?);
            let text = cols.next().unwrap_or("").to_string();
            if k != sentences.len() {
                return Err(bad(format!("expected sentence index {}, found {k}", sentences.len())));
            }
            if start != tokens.len() || end < start {
                return Err(bad(format!("token span [{start}, {end}) does not continue at {}", tokens.len())));
            }
            let toks = tokenize(&text, language);
            if toks.len() != end - start {
                return Err(bad(format!("span length {} but text has {} tokens", end - start, toks.len())));
            }
            tokens.extend(toks.into_iter().map(|t| Token { start: t.start + offset, end: t.end + offset, text: t.text }));
            sentences.push(Sentence { index: k, start, end, text: text.clone() });
            offset += text.len() + 1;
        }
        Ok(BookText { book_id: book_id.to_string(), language, tokens, sentences })
    }

    /// Load plain text, or the pre-segmented format when `segmented` is set.
    pub fn load(path: impl AsRef<Path>, language: Language, segmented: bool) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        let book_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("book").to_string();
        if segmented {
            Self::from_segmented(&book_id, &raw, language)
        } else {
            Ok(sentencize(&book_id, &raw, language))
        }
    }
}

/// A window of consecutive book tokens with the sentences it touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub book_id: String,
    pub sentence_indices: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub center: usize,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn first_sentence(&self) -> Option<usize> {
        self.sentence_indices.first().copied()
    }

    /// Checks the snippet invariants against its book.
    pub fn violations(&self, book: &BookText, max_window: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.end < self.start || self.end > book.token_len() {
            v.push(format!("window [{}, {}) outside book of {} tokens", self.start, self.end, book.token_len()));
            return v;
        }
        if self.len() > max_window {
            v.push(format!("window of {} tokens exceeds {max_window}", self.len()));
        }
        if !(self.start <= self.center && (self.center < self.end || self.start == self.end)) {
            v.push(format!("center {} outside window [{}, {})", self.center, self.start, self.end));
        }
        if self.sentence_indices.is_empty() {
            v.push("no sentences".into());
        }
        if self.sentence_indices.windows(2).any(|w| w[1] != w[0] + 1) {
            v.push("sentence indices not consecutive".into());
        }
        if self.sentence_indices != book.sentences_intersecting(self.start, self.end) {
            v.push("sentence indices do not match the window".into());
        }
        v
    }
}

fn window_bounds(center: usize, width: usize, len: usize) -> (usize, usize) {
    if len <= width {
        return (0, len);
    }
    let start = center.saturating_sub(width / 2).min(len - width);
    (start, start + width)
}

/// Window of `width` tokens centered on `center`.
///
/// Near a book boundary the window is clipped and its free side extended, so
/// its length is always `min(width, token_len)` and it always contains `center`.
pub fn snippet_window(book: &BookText, center: usize, width: usize) -> Result<Snippet, CorpusError> {
    let len = book.token_len();
    if center >= len {
        return Err(CorpusError::CenterOutOfRange { center, len });
    }
    let (start, end) = window_bounds(center, width, len);
    Ok(Snippet {
        book_id: book.book_id.clone(),
        sentence_indices: book.sentences_intersecting(start, end),
        start,
        end,
        center,
    })
}

/// Snippet covering the sentences `first..=last`, clipped to `width` tokens
/// around the span's midpoint when longer.
pub fn snippet_over_sentences(book: &BookText, first: usize, last: usize, width: usize) -> Snippet {
    let start = book.sentences[first].start;
    let end = book.sentences[last].end;
    let center = start + (end - start) / 2;
    let (start, end) = if end - start > width {
        let s = center - width / 2;
        (s, s + width)
    } else {
        (start, end)
    };
    Snippet {
        book_id: book.book_id.clone(),
        sentence_indices: book.sentences_intersecting(start, end),
        start,
        end,
        center,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_terminal_sentences() {
        let b = sentencize("b", "A. B? C!", Language::En);
        let idx: Vec<usize> = b.sentences.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(b.sentences[1].text, "B?");
    }

    #[test]
    fn empty_input_has_no_sentences() {
        let b = sentencize("b", "", Language::En);
        assert_eq!(b.sentence_count(), 0);
        assert_eq!(sentencize("b", "   \n", Language::Zh).sentence_count(), 0);
    }

    #[test]
    fn closing_quotes_stay_with_their_sentence() {
        let b = sentencize("b", "He said \"Go.\" Then he left. \" Odd", Language::En);
        let texts: Vec<&str> = b.sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["He said \"Go.\"", "Then he left. \"", "Odd"]);

        let zh = sentencize("z", "他说：“走吧。”她笑了！好", Language::Zh);
        let texts: Vec<&str> = zh.sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["他说：“走吧。”", "她笑了！", "好"]);
        assert_eq!(zh.sentences[0].len(), 8);
    }

    #[test]
    fn numbered_book_matches_terminal_count() {
        let raw: String = (0..1000)
            .map(|i| {
                let end = ["." , "!", "?"][i % 3];
                format!("Sentence number {i} goes here{end} ")
            })
            .collect();
        let brute = raw.chars().filter(|c| TERMINALS.contains(c)).count();
        let b = sentencize("b", &raw, Language::En);
        assert_eq!(b.sentence_count(), brute);
        assert!(b.sentences.iter().enumerate().all(|(i, s)| s.index == i));
    }

    #[test]
    fn sentences_cover_tokens_in_order() {
        let b = sentencize("b", "One two. Three four five! Six", Language::En);
        let mut next = 0;
        for s in &b.sentences {
            assert_eq!(s.start, next);
            next = s.end;
        }
        assert_eq!(next, b.token_len());
        assert_eq!(b.sentence_of_token(3), Some(1));
        assert_eq!(b.sentence_of_token(5), Some(2));
        assert_eq!(b.sentence_of_token(6), None);
    }

    #[test]
    fn segmented_round_trip_and_errors() {
        let b = sentencize("b", "Alpha beta. Gamma!\nDelta", Language::En);
        let seg = b.to_segmented();
        let back = BookText::from_segmented("b", &seg, Language::En).unwrap();
        assert_eq!(back.sentences.len(), 3);
        assert_eq!(back.token_texts(0, back.token_len()), b.token_texts(0, b.token_len()));
        assert!(BookText::from_segmented("b", "0\t0\t3\tone two\n", Language::En).is_err());
        assert!(BookText::from_segmented("b", "1\t0\t1\tone\n", Language::En).is_err());
    }

    fn long_book(n: usize) -> BookText {
        let raw: String = (0..n).map(|i| format!("w{i}{}", if i % 7 == 6 { ". " } else { " " })).collect();
        sentencize("long", &raw, Language::En)
    }

    #[test]
    fn interior_window_has_full_width() {
        let b = long_book(5000);
        let s = snippet_window(&b, 2500, DEFAULT_WINDOW).unwrap();
        assert_eq!(s.len(), 480);
        assert_eq!((s.start, s.end), (2260, 2740));
        assert!(s.violations(&b, DEFAULT_WINDOW).is_empty());
    }

    #[test]
    fn left_edge_window_is_clipped() {
        let b = long_book(5000);
        let s = snippet_window(&b, 0, 480).unwrap();
        assert_eq!((s.start, s.end), (0, 480));
        let small = long_book(100);
        let s = snippet_window(&small, 0, 480).unwrap();
        assert_eq!((s.start, s.end), (0, 100));
        let s = snippet_window(&b, 4999, 480).unwrap();
        assert_eq!((s.start, s.end), (4520, 5000));
    }

    #[test]
    fn out_of_range_center_is_rejected() {
        let b = long_book(10);
        assert!(matches!(snippet_window(&b, 10, 480), Err(CorpusError::CenterOutOfRange { .. })));
    }

    #[test]
    fn sentence_span_snippet() {
        let b = long_book(700);
        let s = snippet_over_sentences(&b, 3, 5, 480);
        assert_eq!(s.sentence_indices, vec![3, 4, 5]);
        assert_eq!(s.start, b.sentences[3].start);
        let wide = snippet_over_sentences(&b, 0, 90, 480);
        assert_eq!(wide.len(), 480);
    }
}
