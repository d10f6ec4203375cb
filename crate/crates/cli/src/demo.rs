//! Deterministic synthetic demo corpus: a small trait table, Chinese books
//! with scripted reader notes, English translations of some books with
//! sentence embeddings, and an answer sheet for the scripted annotators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use forge_core::corpus::{sentencize, Language};
use forge_core::dataset::WeakCandidate;
use forge_core::embedding::{EmbeddingTable, PseudoEmbedder};
use forge_core::lexicon::{Lexicon, Polarity, TraitEntry, TraitId};
use forge_core::notes::{EntitySpan, NoteRecord};
use forge_core::scalar::l2_normalize;
use forge_core::seed::derive_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAITS: &[(&str, &str, Polarity)] = &[
    ("brave", "勇敢;英勇", Polarity::Positive),
    ("kind", "善良", Polarity::Positive),
    ("honest", "诚实", Polarity::Positive),
    ("clever", "聪明", Polarity::Positive),
    ("loyal", "忠诚", Polarity::Positive),
    ("generous", "慷慨", Polarity::Positive),
    ("patient", "耐心", Polarity::Positive),
    ("humble", "谦虚", Polarity::Positive),
    ("diligent", "勤奋", Polarity::Positive),
    ("gentle", "温柔", Polarity::Positive),
    ("cheerful", "开朗", Polarity::Positive),
    ("calm", "冷静", Polarity::Positive),
    ("wise", "睿智", Polarity::Positive),
    ("frank", "坦率", Polarity::Positive),
    ("thoughtful", "体贴", Polarity::Positive),
    ("responsible", "负责", Polarity::Positive),
    ("optimistic", "乐观", Polarity::Positive),
    ("confident", "自信", Polarity::Positive),
    ("upright", "正直", Polarity::Positive),
    ("tolerant", "宽容", Polarity::Positive),
    ("humorous", "幽默", Polarity::Positive),
    ("steadfast", "坚定", Polarity::Positive),
    ("considerate", "周到", Polarity::Positive),
    ("independent", "独立", Polarity::Positive),
    ("sincere", "真诚", Polarity::Positive),
    ("cruel", "残忍", Polarity::Negative),
    ("greedy", "贪婪", Polarity::Negative),
    ("selfish", "自私", Polarity::Negative),
    ("arrogant", "傲慢", Polarity::Negative),
    ("cowardly", "懦弱", Polarity::Negative),
    ("lazy", "懒惰", Polarity::Negative),
    ("jealous", "嫉妒", Polarity::Negative),
    ("stubborn", "固执", Polarity::Negative),
    ("cunning", "狡猾", Polarity::Negative),
    ("vain", "虚荣", Polarity::Negative),
    ("rude", "粗鲁", Polarity::Negative),
    ("timid", "胆小", Polarity::Negative),
    ("impulsive", "冲动", Polarity::Negative),
    ("suspicious", "多疑", Polarity::Negative),
    ("hypocritical", "虚伪", Polarity::Negative),
    ("stingy", "吝啬", Polarity::Negative),
    ("cold", "冷漠", Polarity::Negative),
    ("reckless", "鲁莽", Polarity::Negative),
    ("vicious", "恶毒", Polarity::Negative),
    ("gloomy", "阴郁", Polarity::Negative),
    ("petty", "小气", Polarity::Negative),
    ("proud", "骄傲", Polarity::Negative),
    ("fickle", "善变", Polarity::Negative),
    ("irritable", "暴躁", Polarity::Negative),
    ("treacherous", "奸诈", Polarity::Negative),
    ("quiet", "沉默", Polarity::Neutral),
    ("serious", "严肃", Polarity::Neutral),
    ("curious", "好奇", Polarity::Neutral),
    ("sensitive", "敏感", Polarity::Neutral),
    ("cautious", "谨慎", Polarity::Neutral),
    ("shy", "害羞", Polarity::Neutral),
    ("romantic", "浪漫", Polarity::Neutral),
    ("mysterious", "神秘", Polarity::Neutral),
    ("naive", "天真", Polarity::Neutral),
    ("competitive", "好胜", Polarity::Neutral),
];

const FILLERS: &[(&str, &str)] = &[
    ("天色渐渐暗了。", "The sky slowly grew dark."),
    ("远处传来一阵钟声。", "A bell rang in the distance."),
    ("街上的行人越来越少。", "Fewer and fewer people walked the street."),
    ("雨一直下到深夜。", "The rain fell until late at night."),
    ("风吹过院子里的树。", "Wind blew through the trees in the yard."),
    ("屋里点着一盏油灯。", "An oil lamp burned inside the house."),
    ("河边停着几条船。", "A few boats were moored by the river."),
    ("集市上十分热闹。", "The market was very lively."),
    ("山路又长又陡。", "The mountain road was long and steep."),
    ("炉子上的水开了。", "The water on the stove boiled."),
    ("窗外的月亮很圆。", "The moon outside the window was full."),
    ("门口站着一只黑狗。", "A black dog stood at the door."),
    ("冬天快要到了。", "Winter was coming soon."),
    ("桌上放着一封信。", "A letter lay on the table."),
    ("城里的钟楼很高。", "The clock tower in the town was tall."),
    ("路边开满了野花。", "Wild flowers lined the road."),
    ("夜里下起了大雪。", "Heavy snow fell in the night."),
    ("茶馆里坐满了客人。", "The teahouse was full of guests."),
    ("远山被云遮住了。", "Clouds hid the distant hills."),
    ("田里的麦子熟了。", "The wheat in the fields was ripe."),
    ("早上的雾很浓。", "The morning fog was thick."),
    ("船慢慢靠了岸。", "The boat slowly reached the shore."),
    ("院墙上爬满了藤。", "Vines covered the courtyard wall."),
    ("太阳从东边升起。", "The sun rose in the east."),
    ("一群鸟飞过屋顶。", "A flock of birds flew over the roof."),
    ("庙里的香火很旺。", "Incense burned brightly in the temple."),
    ("巷子里静悄悄的。", "The lane was silent."),
    ("井水又凉又甜。", "The well water was cool and sweet."),
    ("马车在门外停下。", "A carriage stopped outside the gate."),
    ("灯笼挂满了长街。", "Lanterns hung along the long street."),
];

const ACTIONS: &[(&str, &str)] = &[
    ("{n}走进了院子。", "{N} walked into the yard."),
    ("{n}低头看着那封信。", "{N} looked down at the letter."),
    ("{n}推开了房门。", "{N} pushed the door open."),
    ("{n}在河边坐了很久。", "{N} sat by the river for a long time."),
    ("{n}点了点头。", "{N} nodded."),
    ("{n}把茶杯放在桌上。", "{N} put the teacup on the table."),
    ("{n}望着窗外。", "{N} gazed out of the window."),
    ("{n}转身离开了。", "{N} turned and left."),
    ("{n}笑着说了一句话。", "{N} said something with a smile."),
    ("{n}一夜没有睡着。", "{N} did not sleep all night."),
    ("{n}和邻居说起了往事。", "{N} talked with the neighbours about the past."),
    ("{n}收拾好了行李。", "{N} packed the luggage."),
];

const REVEALS: &[(&str, &str)] = &[
    ("{n}显得十分{t}。", "{N} seemed very {T}."),
    ("大家都说{n}很{t}。", "Everyone said {N} was {T}."),
    ("这件事说明{n}是个{t}的人。", "This showed that {N} was a {T} person."),
    ("{n}一向是那么{t}。", "{N} had always been so {T}."),
];

const NOTE_YES: &[&str] = &["{n}真是太{t}了", "我觉得{n}很{t}", "{n}一直都这么{t}", "看得出{n}非常{t}"];
const NOTE_NO: &[&str] = &["{n}说隔壁那人太{t}了", "{n}最讨厌别人{t}"];
const NOTE_PLAIN: &[&str] = &["{n}这一段写得真好", "{n}终于出场了"];
const NOTE_NO_ENTITY: &str = "这里的描写真{t}";

const SURNAMES: &[(&str, &str)] = &[
    ("王", "Wang"), ("李", "Li"), ("张", "Zhang"), ("刘", "Liu"), ("陈", "Chen"), ("杨", "Yang"), ("赵", "Zhao"),
    ("黄", "Huang"), ("周", "Zhou"), ("吴", "Wu"), ("徐", "Xu"), ("孙", "Sun"), ("胡", "Hu"), ("朱", "Zhu"),
    ("高", "Gao"), ("林", "Lin"), ("何", "He"), ("郭", "Guo"), ("马", "Ma"), ("罗", "Luo"),
];
const GIVEN: &[(&str, &str)] = &[
    ("明", "Ming"), ("华", "Hua"), ("芳", "Fang"), ("军", "Jun"), ("丽", "Li"), ("强", "Qiang"), ("秀", "Xiu"),
    ("英", "Ying"), ("杰", "Jie"), ("涛", "Tao"), ("燕", "Yan"), ("鹏", "Peng"), ("玲", "Ling"), ("磊", "Lei"),
    ("静", "Jing"), ("峰", "Feng"),
];

pub const BOOKS: usize = 8;
const CHARACTERS_PER_BOOK: usize = 5;
const SCENES_PER_BOOK: usize = 24;
const EMBED_DIM: usize = 32;

fn split_of(book: usize) -> &'static str {
    match book {
        0..=4 => "train",
        5 => "dev",
        _ => "test",
    }
}

fn translated(book: usize) -> bool {
    book >= 5
}

fn book_id(book: usize) -> String {
    format!("b{:02}", book + 1)
}

pub fn lexicon() -> Lexicon {
    let entries = TRAITS
        .iter()
        .enumerate()
        .map(|(i, (en, zh, pol))| TraitEntry {
            trait_id: TraitId(i as u32 + 1),
            english_lemma: en.to_string(),
            chinese_lemmas: zh.split(';').map(str::to_string).collect(),
            polarity: *pol,
            bilingual: true,
        })
        .collect();
    Lexicon::from_entries(entries).expect("demo lexicon is consistent")
}

struct Character {
    zh: String,
    en: String,
    traits: [TraitId; 2],
}

/// One source sentence with its translation and semantic key.
struct Line {
    zh: String,
    en: String,
    concept: String,
    traits: BTreeSet<TraitId>,
}

fn fill(t: &str, zh_name: &str, en_name: &str, zh_trait: &str, en_trait: &str) -> String {
    t.replace("{n}", zh_name).replace("{N}", en_name).replace("{t}", zh_trait).replace("{T}", en_trait)
}

fn char_find(text: &str, needle: &str) -> Option<(usize, usize)> {
    let byte = text.find(needle)?;
    let s = text[..byte].chars().count();
    Some((s, s + needle.chars().count()))
}

/// Everything the generator writes, as file name to contents.
pub struct Demo {
    pub files: BTreeMap<String, Vec<u8>>,
}

const CONFIG: &str = r#"# Demo pipeline configuration. Paths are relative to this file.
seed = 7
window = 480
cluster_distance = 100
max_note_words = 100
unsup_w = 5
weak_threshold = 0.5
null_penalty = 0.3
align_context = 10

[budgets]
no_hist = 480
hist_total = 1600

[paths]
lexicon = "lexicon.tsv"
books = "books"
notes = "notes.jsonl"
split_table = "splits.tsv"
annotations = "annotations.tsv"
characters = "characters.tsv"
embeddings = "embeddings"
weak_candidates = "weak_candidates.jsonl"
weak_scores = "weak_scores.tsv"

[annotate]
dup_rate = 0.15
annotators = ["ann-1", "ann-2", "ann-3"]
noise = 0.05

[train]
modes = ["no-hist", "char-hist"]
epochs = 8
learning_rate = 0.5
batch_size = 8
patience = 4
dim = 32
embed_scale = 3.0

[eval]
curve_fractions = [0.25, 0.5, 1.0]
curve_mode = "no-hist"
timeline_window = 3
"#;

pub fn generate(seed: u64) -> Result<Demo> {
    let lex = lexicon();
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    files.insert("lexicon.tsv".into(), lex.export().into_bytes());
    files.insert("forge.toml".into(), CONFIG.as_bytes().to_vec());

    let mut names: Vec<(usize, usize)> = (0..SURNAMES.len()).flat_map(|s| (0..GIVEN.len()).map(move |g| (s, g))).collect();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "demo/names")));
    let embedder = PseudoEmbedder::new(EMBED_DIM, derive_seed(seed, "demo/concepts"));
    let trait_ids: Vec<TraitId> = lex.ids().collect();

    let (mut splits, mut notes, mut answers, mut characters, mut weak, mut weak_scores) =
        (String::new(), String::new(), String::new(), String::new(), String::new(), String::new());
    for b in 0..BOOKS {
        let id = book_id(b);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("demo/{id}")));
        let picked: Vec<TraitId> = trait_ids.choose_multiple(&mut rng, 2 * CHARACTERS_PER_BOOK).copied().collect();
        let cast: Vec<Character> = (0..CHARACTERS_PER_BOOK)
            .map(|c| {
                let (s, g) = names[b * CHARACTERS_PER_BOOK + c];
                Character {
                    zh: format!("{}{}", SURNAMES[s].0, GIVEN[g].0),
                    en: format!("{} {}", SURNAMES[s].1, GIVEN[g].1),
                    traits: [picked[2 * c], picked[2 * c + 1]],
                }
            })
            .collect();
        let _ = writeln!(splits, "{id}\t{}", split_of(b));

        // Lines of the book, plus per scene the focus character, the traits
        // revealed and the index of the first anchored line.
        let mut lines: Vec<Line> = Vec::new();
        let mut scenes: Vec<(usize, Option<TraitId>, usize)> = Vec::new();
        let filler = |rng: &mut ChaCha8Rng| {
            let k = rng.gen_range(0..FILLERS.len());
            Line { zh: FILLERS[k].0.into(), en: FILLERS[k].1.into(), concept: format!("filler/{k}"), traits: BTreeSet::new() }
        };
        for _ in 0..SCENES_PER_BOOK {
            for _ in 0..8 {
                lines.push(filler(&mut rng));
            }
            let c = rng.gen_range(0..cast.len());
            let ch = &cast[c];
            let anchor = lines.len();
            let a = rng.gen_range(0..ACTIONS.len());
            lines.push(Line {
                zh: fill(ACTIONS[a].0, &ch.zh, &ch.en, "", ""),
                en: fill(ACTIONS[a].1, &ch.zh, &ch.en, "", ""),
                concept: format!("action/{a}/{}", ch.zh),
                traits: BTreeSet::new(),
            });
            let revealed = if rng.gen_bool(0.6) {
                let t = ch.traits[rng.gen_range(0..2)];
                let e = lex.get(t).expect("known trait");
                let r = rng.gen_range(0..REVEALS.len());
                lines.push(Line {
                    zh: fill(REVEALS[r].0, &ch.zh, &ch.en, &e.chinese_lemmas[0], &e.english_lemma),
                    en: fill(REVEALS[r].1, &ch.zh, &ch.en, &e.chinese_lemmas[0], &e.english_lemma),
                    concept: format!("reveal/{r}/{}/{}", ch.zh, t),
                    traits: BTreeSet::from([t]),
                });
                Some(t)
            } else {
                None
            };
            for _ in 0..3 {
                lines.push(filler(&mut rng));
            }
            scenes.push((c, revealed, anchor));
        }
        for l in &lines {
            let found: BTreeSet<TraitId> = lex.find_traits_in_text(&l.zh, Language::Zh).into_iter().map(|m| m.trait_id).collect();
            if found != l.traits {
                bail!("demo sentence {:?} matches traits {found:?}, expected {:?}", l.zh, l.traits);
            }
        }

        let zh_text: String = lines.iter().map(|l| l.zh.as_str()).collect();
        let zh_book = sentencize(&id, &zh_text, Language::Zh);
        if zh_book.sentence_count() != lines.len() {
            bail!("book {id}: {} sentences segmented, {} generated", zh_book.sentence_count(), lines.len());
        }
        files.insert(format!("books/{id}.zh.txt"), format!("{zh_text}\n").into_bytes());

        let mut note_no = 0;
        let mut note = |text: String, anchor: usize, span: usize, entity: Option<&str>, out: &mut String| -> String {
            note_no += 1;
            let note_id = format!("{id}-n{note_no:03}");
            let entities = entity
                .and_then(|e| char_find(&text, e).map(|(s, t)| EntitySpan { start: s, end: t, surface: e.to_string() }))
                .into_iter()
                .collect();
            let rec = NoteRecord {
                note_id: note_id.clone(),
                book_id: id.clone(),
                text,
                underline_start: zh_book.sentences[anchor].start,
                underline_end: zh_book.sentences[anchor + span - 1].end,
                entities,
            };
            out.push_str(&serde_json::to_string(&rec).expect("note serializes"));
            out.push('\n');
            note_id
        };
        for (k, &(c, revealed, anchor)) in scenes.iter().enumerate() {
            let ch = &cast[c];
            let span = if revealed.is_some() { 2 } else { 1 };
            let lemma = |t: TraitId| lex.get(t).expect("known trait").chinese_lemmas[0].clone();
            if rng.gen_bool(0.85) {
                let t = revealed.unwrap_or(ch.traits[rng.gen_range(0..2)]);
                let tpl = NOTE_YES[rng.gen_range(0..NOTE_YES.len())];
                let nid = note(fill(tpl, &ch.zh, "", &lemma(t), ""), anchor, span, Some(&ch.zh), &mut notes);
                let _ = writeln!(answers, "{nid}\t{t}\tyes\t{}", ch.zh);
            }
            if rng.gen_bool(0.35) {
                let t = ch.traits[rng.gen_range(0..2)];
                let tpl = NOTE_YES[rng.gen_range(0..NOTE_YES.len())];
                let nid = note(fill(tpl, &ch.zh, "", &lemma(t), ""), anchor, span, Some(&ch.zh), &mut notes);
                let _ = writeln!(answers, "{nid}\t{t}\tyes\t{}", ch.zh);
            }
            if rng.gen_bool(0.2) {
                let t = *trait_ids.choose(&mut rng).expect("traits");
                if !ch.traits.contains(&t) {
                    let tpl = NOTE_NO[rng.gen_range(0..NOTE_NO.len())];
                    let nid = note(fill(tpl, &ch.zh, "", &lemma(t), ""), anchor, span, Some(&ch.zh), &mut notes);
                    let _ = writeln!(answers, "{nid}\t{t}\tno\t");
                }
            }
            if rng.gen_bool(0.2) {
                let tpl = NOTE_PLAIN[rng.gen_range(0..NOTE_PLAIN.len())];
                note(fill(tpl, &ch.zh, "", "", ""), anchor, 1, Some(&ch.zh), &mut notes);
            }
            if rng.gen_bool(0.1) {
                let t = *trait_ids.choose(&mut rng).expect("traits");
                note(fill(NOTE_NO_ENTITY, "", "", &lemma(t), ""), anchor, 1, None, &mut notes);
            }
            if rng.gen_bool(0.05) {
                let mut long = fill("{n}让我想起一个很{t}的朋友", &ch.zh, "", &lemma(ch.traits[0]), "");
                while long.chars().count() < 120 {
                    long.push_str(FILLERS[rng.gen_range(0..FILLERS.len())].0);
                }
                note(long, anchor, 1, Some(&ch.zh), &mut notes);
            }
            // Weak candidates from unlabeled notes: mostly real traits, scored high.
            if split_of(b) != "test" && rng.gen_bool(0.5) {
                let real = rng.gen_bool(0.7);
                let t = if real { ch.traits[rng.gen_range(0..2)] } else { *trait_ids.choose(&mut rng).expect("traits") };
                let score: f64 = if real { rng.gen_range(0.45..1.0) } else { rng.gen_range(0.0..0.6) };
                let cand = WeakCandidate {
                    sample_id: format!("{id}-w{k:03}"),
                    book_id: id.clone(),
                    trait_id: t,
                    character: ch.zh.clone(),
                    center: zh_book.sentences[anchor].start,
                };
                weak.push_str(&serde_json::to_string(&cand).expect("candidate serializes"));
                weak.push('\n');
                let _ = writeln!(weak_scores, "{}\t{score:.3}", cand.sample_id);
            }
        }

        if translated(b) {
            for (c, ch) in cast.iter().enumerate() {
                if !(b == BOOKS - 1 && c == cast.len() - 1) {
                    let _ = writeln!(characters, "{}\t{}", ch.zh, ch.en);
                }
            }
            write_translation(&id, &lines, &embedder, &mut rng, &mut files)?;
        }
    }
    files.insert("splits.tsv".into(), splits.into_bytes());
    files.insert("notes.jsonl".into(), notes.into_bytes());
    files.insert("annotations.tsv".into(), answers.into_bytes());
    files.insert("characters.tsv".into(), characters.into_bytes());
    files.insert("weak_candidates.jsonl".into(), weak.into_bytes());
    files.insert("weak_scores.tsv".into(), weak_scores.into_bytes());
    Ok(Demo { files })
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// English text with occasional merged (2-1) and dropped (1-0) filler
/// sentences, both embedding tables and the reference alignment.
fn write_translation(
    id: &str,
    lines: &[Line],
    embedder: &PseudoEmbedder,
    rng: &mut ChaCha8Rng,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<()> {
    // Template meaning plus a per-position part, so repeated filler text
    // still gets distinct vectors.
    let concept = |k: usize, l: &Line| -> Vec<f64> {
        let own: Vec<f64> = embedder.embed_token(&format!("{id}/{k}"));
        embedder.embed_token(&l.concept).iter().zip(own).map(|(a, b)| a + b).collect()
    };
    let noisy = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f32> {
        let scale = 0.15 / (EMBED_DIM as f64).sqrt();
        let mut out: Vec<f64> = v.iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
        l2_normalize(&mut out);
        out.into_iter().map(|x| x as f32).collect()
    };
    let mut en_sentences: Vec<String> = Vec::new();
    let mut en_vectors: Vec<Vec<f32>> = Vec::new();
    let mut reference: Vec<Vec<usize>> = vec![Vec::new(); lines.len()];
    let mut zh_table = EmbeddingTable::<f32>::new(EMBED_DIM);
    for (k, l) in lines.iter().enumerate() {
        let mut v = concept(k, l);
        l2_normalize(&mut v);
        zh_table.insert(k as u64, &noisy(&v, rng))?;
    }
    let is_filler = |l: &Line| l.concept.starts_with("filler/");
    let mut i = 0;
    while i < lines.len() {
        let l = &lines[i];
        if is_filler(l) && i + 1 < lines.len() && is_filler(&lines[i + 1]) && rng.gen_bool(0.06) {
            let next = &lines[i + 1];
            let first = l.en.trim_end_matches('.');
            en_sentences.push(format!("{first}, and {}", lower_first(&next.en)));
            let mut v: Vec<f64> = concept(i, l).iter().zip(concept(i + 1, next)).map(|(a, b)| a + b).collect();
            l2_normalize(&mut v);
            en_vectors.push(noisy(&v, rng));
            reference[i].push(en_sentences.len() - 1);
            reference[i + 1].push(en_sentences.len() - 1);
            i += 2;
            continue;
        }
        if is_filler(l) && rng.gen_bool(0.03) {
            i += 1;
            continue;
        }
        en_sentences.push(l.en.clone());
        let mut v = concept(i, l);
        l2_normalize(&mut v);
        en_vectors.push(noisy(&v, rng));
        reference[i].push(en_sentences.len() - 1);
        i += 1;
    }
    let en_text = en_sentences.join(" ");
    let en_book = sentencize(id, &en_text, Language::En);
    if en_book.sentence_count() != en_sentences.len() {
        bail!("book {id}: English text segments into {} sentences, {} generated", en_book.sentence_count(), en_sentences.len());
    }
    let mut en_table = EmbeddingTable::<f32>::new(EMBED_DIM);
    for (k, v) in en_vectors.iter().enumerate() {
        en_table.insert(k as u64, v)?;
    }
    let mut buf = Vec::new();
    zh_table.write_to(&mut buf)?;
    files.insert(format!("embeddings/{id}.zh.emb"), buf);
    let mut buf = Vec::new();
    en_table.write_to(&mut buf)?;
    files.insert(format!("embeddings/{id}.en.emb"), buf);
    let mut tsv = String::new();
    for (k, t) in reference.iter().enumerate() {
        let joined: Vec<String> = t.iter().map(usize::to_string).collect();
        let _ = writeln!(tsv, "{k}\t{}", joined.join(","));
    }
    files.insert(format!("embeddings/{id}.ref.tsv"), tsv.into_bytes());
    files.insert(format!("books/{id}.en.txt"), format!("{en_text}\n").into_bytes());
    Ok(())
}

impl Demo {
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
