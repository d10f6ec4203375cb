use std::collections::{BTreeMap, BTreeSet, HashMap};

use forge_core::corpus::{sentencize, snippet_window, BookText, Language};
use forge_core::dataset::{
    build_unsup, merge_weak_labels, read_dataset, sample_candidates, validate_dataset, write_dataset, BuildOptions,
    Provenance, Split, WeakCandidate, FREQUENT_POOL,
};
use forge_core::lexicon::{Lexicon, Polarity, TraitEntry, TraitId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn lexicon(n: u32) -> Lexicon {
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
    // Frequencies decrease with the id, so the frequent pool is ids 0..20.
    lex.set_frequencies((0..n).map(|i| (TraitId(i), 1000 - i as u64)).collect());
    lex
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn candidate_draws_are_uniform() {
    let lex = lexicon(60);
    let gold = TraitId(7);
    let mut position = [0u64; 5];
    let mut frequent: BTreeMap<TraitId, u64> = BTreeMap::new();
    let mut rest: BTreeMap<TraitId, u64> = BTreeMap::new();
    let draws = 100_000;
    for seed in 0..draws {
        let d = sample_candidates(gold, &lex, seed, &BTreeSet::new()).unwrap();
        position[d.gold_index] += 1;
        for t in d.frequent {
            *frequent.entry(t).or_default() += 1;
        }
        for t in d.rest {
            *rest.entry(t).or_default() += 1;
        }
    }
    assert!(chi_square_p(&position) > 1e-3, "gold position {position:?}");
    // Frequent negatives: the top 20 minus the gold.
    assert_eq!(frequent.len(), FREQUENT_POOL - 1);
    assert!(frequent.keys().all(|t| t.0 < 20 && *t != gold));
    assert!(chi_square_p(&frequent.values().copied().collect::<Vec<_>>()) > 1e-3);
    // The remaining negatives reach every other trait. Conditional on the
    // frequent draw they are uniform over the 57 leftovers, so ids outside
    // the frequent pool are hit more often than ids inside it.
    assert_eq!(rest.len(), 59);
    let outside: Vec<u64> = rest.iter().filter(|(t, _)| t.0 >= 20).map(|(_, &c)| c).collect();
    assert!(chi_square_p(&outside) > 1e-3);
    let each_outside = 2.0 / 57.0;
    let observed = outside.iter().sum::<u64>() as f64 / (outside.len() as f64 * draws as f64);
    assert!((observed - each_outside).abs() < 1e-3, "{observed} vs {each_outside}");
}

fn numbered_book(sentences: usize, words: usize) -> BookText {
    let raw: String = (0..sentences)
        .map(|k| {
            let body: Vec<String> = (0..words).map(|w| format!("s{k}w{w}")).collect();
            format!("{}. ", body.join(" "))
        })
        .collect();
    sentencize("book", &raw, Language::En)
}

#[test]
fn windows_over_random_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let long = numbered_book(400, 7);
    let short = numbered_book(20, 7);
    for book in [&long, &short] {
        let len = book.token_len();
        for _ in 0..10_000 {
            let center = rng.gen_range(0..len);
            let s = snippet_window(book, center, 480).unwrap();
            assert_eq!(s.len(), 480.min(len));
            assert!(s.start <= center && center < s.end);
            assert!(s.violations(book, 480).is_empty());
            // Among all in-bounds windows containing the center, the chosen
            // one is closest to being centered.
            if len > 480 {
                let ideal = center as i64 - 240;
                let best = (0..=len - 480)
                    .filter(|&st| st <= center && center < st + 480)
                    .min_by_key(|&st| (st as i64 - ideal).abs())
                    .unwrap();
                assert_eq!(s.start, best);
            }
        }
    }
}

const TRAITS: [&str; 5] = ["brave", "cruel", "kind", "sly", "vain"];

#[test]
fn unsup_pairs_match_brute_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let raw: String = (0..1000)
        .map(|k| {
            let body: Vec<String> = (0..6)
                .map(|w| if rng.gen_bool(0.05) { TRAITS[rng.gen_range(0..5)].to_string() } else { format!("x{k}y{w}") })
                .collect();
            format!("{}. ", body.join(" "))
        })
        .collect();
    let book = sentencize("b", &raw, Language::En);
    assert_eq!(book.sentence_count(), 1000);
    let entries = TRAITS
        .iter()
        .enumerate()
        .map(|(i, w)| TraitEntry { trait_id: TraitId(i as u32), english_lemma: w.to_string(), chinese_lemmas: vec![], polarity: Polarity::Neutral, bilingual: false })
        .collect();
    let lex = Lexicon::from_entries(entries).unwrap();
    for w in [1usize, 5] {
        let mut expected = BTreeSet::new();
        for j in 0..1000usize {
            let words: BTreeSet<usize> = book
                .sentence_tokens(j)
                .iter()
                .filter_map(|t| TRAITS.iter().position(|tr| t.trim_end_matches('.') == *tr))
                .collect();
            let context: Vec<usize> = (0..1000usize).filter(|&k| k != j && k.abs_diff(j) <= w).collect();
            for t in words {
                expected.insert((j, t as u32, context.clone()));
            }
        }
        let got: BTreeSet<(usize, u32, Vec<usize>)> = build_unsup(&book, &lex, w)
            .into_iter()
            .map(|p| (p.source_sentence, p.trait_id.0, p.context_sentences))
            .collect();
        assert_eq!(got, expected);
        assert!(got.iter().all(|(j, _, ctx)| !ctx.contains(j)));
    }
}

#[test]
fn weak_merge_accepts_at_threshold_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lex = lexicon(40);
    let book = numbered_book(300, 8);
    let books = BTreeMap::from([("book".to_string(), book.clone())]);
    let n = 10_000;
    let cands: Vec<WeakCandidate> = (0..n)
        .map(|i| WeakCandidate {
            sample_id: format!("c{i}"),
            book_id: "book".into(),
            trait_id: TraitId(rng.gen_range(0..40)),
            character: "Ann".into(),
            center: rng.gen_range(0..book.token_len()),
        })
        .collect();
    let scores: HashMap<String, f64> = cands.iter().map(|c| (c.sample_id.clone(), rng.gen_range(0.0..1.0))).collect();
    let (insts, report) = merge_weak_labels(&cands, &scores, 0.5, &books, &lex, &BuildOptions::default());
    assert!((report.acceptance_rate - 0.5).abs() < 0.02, "{}", report.acceptance_rate);
    assert_eq!(report.assembled, report.accepted);
    assert!(insts.iter().all(|i| i.provenance == Provenance::Weak && i.split == Split::Train));
    assert!(validate_dataset(&insts, Some(&books)).is_empty());
    let text = write_dataset(&insts);
    assert_eq!(read_dataset(&text).unwrap(), insts);
}

fn is_terminal(t: &str) -> bool {
    let closers = ['"', '\'', '”', '’', ')', ']', '」', '』', '》', '）'];
    let terminals = ['.', '!', '?', '。', '！', '？', '…'];
    t.trim_end_matches(&closers[..]).ends_with(&terminals[..])
}

fn is_trailer(t: &str) -> bool {
    t.chars().all(|c| "\"'”’)]」』》）.!?。！？…".contains(c))
}

proptest! {
    #[test]
    fn sentence_boundaries_match_token_rule(words in prop::collection::vec(
        prop::sample::select(vec!["a", "bb", "c.", "d!", "\"", "e.\"", "?", "f?)", "g", "h…"]), 0..60)) {
        let raw = words.join(" ");
        let book = sentencize("b", &raw, Language::En);
        let n = words.len();
        // A boundary follows token i when some terminal token k <= i is
        // followed only by trailers up to i, and token i + 1 is no trailer.
        let mut expected = Vec::new();
        for i in 0..n {
            let closes = (0..=i).rev().take_while(|&k| k == i || is_trailer(words[k + 1])).any(|k| {
                is_terminal(words[k]) && (k + 1..=i).all(|m| is_trailer(words[m]))
            });
            if (closes && (i + 1 == n || !is_trailer(words[i + 1]))) || i + 1 == n {
                expected.push(i + 1);
            }
        }
        let got: Vec<usize> = book.sentences.iter().map(|s| s.end).collect();
        prop_assert_eq!(got, expected);
        let text = book.reassemble();
        prop_assert_eq!(text.split_whitespace().collect::<Vec<_>>(), words);
    }
}
