//! Parallel text ingestion, seeded splits, and the synthetic multi-reference
//! task used to check training behavior against a known oracle.
//!
//! In the synthetic task a sentence is a sequence of *slots*. Each slot has a
//! source word and a class of interchangeable target words; every choice of
//! one word per slot is a valid translation. One of those choices is drawn as
//! the single training reference, while the full cross product stays available
//! for evaluation ([`SyntheticCorpus::oracle_refs`]) and as an exact
//! next-token distribution ([`TokenOracle`]).

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::subword::{Vocab, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawPair {
    pub source: String,
    pub target: String,
    /// 1-based line number in the originating files.
    pub line_no: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPairs {
    pub pairs: Vec<RawPair>,
    /// Pairs dropped because one side was blank.
    pub dropped: usize,
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Reads one sentence per line from each file and pairs them by line.
pub fn load_parallel(source_path: &Path, target_path: &Path) -> Result<LoadedPairs> {
    let src = read_utf8(source_path)?;
    let tgt = read_utf8(target_path)?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::LineCountMismatch {
            source_lines: src_lines.len(),
            target_lines: tgt_lines.len(),
        });
    }
    Ok(pair_lines(&src_lines, &tgt_lines))
}

/// Pairs equal-length line lists, dropping pairs with a blank side.
pub fn pair_lines<S: AsRef<str>>(src_lines: &[S], tgt_lines: &[S]) -> LoadedPairs {
    let mut pairs = Vec::with_capacity(src_lines.len());
    let mut dropped = 0;
    for (i, (s, t)) in src_lines.iter().zip(tgt_lines).enumerate() {
        let (s, t) = (s.as_ref().trim(), t.as_ref().trim());
        if s.is_empty() || t.is_empty() {
            dropped += 1;
            continue;
        }
        pairs.push(RawPair {
            source: s.to_string(),
            target: t.to_string(),
            line_no: i + 1,
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} pairs with a blank side");
    }
    LoadedPairs { pairs, dropped }
}

/// Writes pairs as two newline-delimited files.
pub fn write_parallel(pairs: &[RawPair], source_path: &Path, target_path: &Path) -> Result<()> {
    let join = |f: fn(&RawPair) -> &str| {
        let mut s = String::new();
        for p in pairs {
            s.push_str(f(p));
            s.push('\n');
        }
        s
    };
    std::fs::write(source_path, join(|p| &p.source)).map_err(|e| Error::io(source_path, e))?;
    std::fs::write(target_path, join(|p| &p.target)).map_err(|e| Error::io(target_path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded random partition into train/valid/test. Each part keeps the input order.
pub fn split<T: Clone>(items: &[T], valid_size: usize, test_size: usize, seed: u64) -> Result<Split<T>> {
    if valid_size + test_size >= items.len() {
        return Err(Error::SplitTooLarge {
            valid: valid_size,
            test: test_size,
            total: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, &[]));
    let mut assign = vec![0u8; items.len()];
    for &i in &order[..valid_size] {
        assign[i] = 1;
    }
    for &i in &order[valid_size..valid_size + test_size] {
        assign[i] = 2;
    }
    let mut out = Split {
        train: Vec::with_capacity(items.len() - valid_size - test_size),
        valid: Vec::with_capacity(valid_size),
        test: Vec::with_capacity(test_size),
    };
    for (item, a) in items.iter().zip(assign) {
        match a {
            0 => out.train.push(item.clone()),
            1 => out.valid.push(item.clone()),
            _ => out.test.push(item.clone()),
        }
    }
    Ok(out)
}

/// Declarative description of a synthetic multi-reference task.
///
/// Slots are indices into `synonym_classes` and `source_lexicon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub templates: Vec<Vec<usize>>,
    pub synonym_classes: Vec<Vec<String>>,
    pub source_lexicon: Vec<String>,
    pub sentence_count: usize,
    pub seed: u64,
    /// Emit source words in reverse slot order, so translation needs reordering.
    #[serde(default)]
    pub reverse_source: bool,
}

/// Parameters for building a [`SyntheticTaskSpec`] with a pseudo-word lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconParams {
    pub slots: usize,
    pub class_min: usize,
    pub class_max: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Seed for the lexicon (words and classes).
    pub lexicon_seed: u64,
    #[serde(default)]
    pub reverse_source: bool,
}

const TGT_ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const TGT_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const SRC_ONSETS: &[&str] = &["c", "h", "j", "q", "w", "x", "z", "ch", "sh"];
const SRC_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "y"];

fn pseudo_word(rng: &mut impl Rng, onsets: &[&str], vowels: &[&str]) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                onsets[rng.random_range(0..onsets.len())],
                vowels[rng.random_range(0..vowels.len())]
            )
        })
        .collect()
}

impl LexiconParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTask(m.to_string()));
        if self.slots == 0 {
            return bad("slots must be positive");
        }
        if self.class_min == 0 || self.class_min > self.class_max {
            return bad("need 1 <= class_min <= class_max");
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return bad("need 1 <= len_min <= len_max");
        }
        Ok(())
    }

    /// Synonym classes and source words; a function of `lexicon_seed` alone.
    pub fn lexicon(&self) -> Result<(Vec<Vec<String>>, Vec<String>)> {
        self.validate()?;
        let mut rng = stream_rng(self.lexicon_seed, Stream::Synthetic, &[0]);
        let mut used = BTreeSet::new();
        let mut fresh = |rng: &mut rand_chacha::ChaCha8Rng, on: &[&str], vo: &[&str]| loop {
            let w = pseudo_word(rng, on, vo);
            if used.insert(w.clone()) {
                return w;
            }
        };
        let mut classes = Vec::with_capacity(self.slots);
        let mut lexicon = Vec::with_capacity(self.slots);
        for _ in 0..self.slots {
            let size = rng.random_range(self.class_min..=self.class_max);
            classes.push((0..size).map(|_| fresh(&mut rng, TGT_ONSETS, TGT_VOWELS)).collect());
            lexicon.push(fresh(&mut rng, SRC_ONSETS, SRC_VOWELS));
        }
        Ok((classes, lexicon))
    }

    /// A task over this lexicon with `sentence_count` distinct templates drawn with `seed`.
    pub fn task(&self, sentence_count: usize, seed: u64) -> Result<SyntheticTaskSpec> {
        let (synonym_classes, source_lexicon) = self.lexicon()?;
        let mut rng = stream_rng(seed, Stream::Synthetic, &[1]);
        let mut seen = BTreeSet::new();
        let mut templates = Vec::with_capacity(sentence_count);
        let mut attempts = 0usize;
        while templates.len() < sentence_count {
            attempts += 1;
            if attempts > sentence_count * 100 + 1000 {
                return Err(Error::InvalidTask(
                    "cannot draw enough distinct templates from this lexicon".into(),
                ));
            }
            let len = rng.random_range(self.len_min..=self.len_max);
            let t: Vec<usize> = (0..len).map(|_| rng.random_range(0..self.slots)).collect();
            if seen.insert(t.clone()) {
                templates.push(t);
            }
        }
        Ok(SyntheticTaskSpec {
            templates,
            synonym_classes,
            source_lexicon,
            sentence_count,
            seed,
            reverse_source: self.reverse_source,
        })
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sentence_count == 0 {
            return Err(Error::InvalidTask("sentence_count must be positive".into()));
        }
        if self.templates.is_empty() {
            return Err(Error::InvalidTask("no templates".into()));
        }
        if self.synonym_classes.len() != self.source_lexicon.len() {
            return Err(Error::InvalidTask(
                "synonym_classes and source_lexicon cover different slots".into(),
            ));
        }
        for (slot, class) in self.synonym_classes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::InvalidTask(format!("empty synonym class for slot {slot}")));
            }
        }
        for t in &self.templates {
            if t.is_empty() {
                return Err(Error::InvalidTask("empty template".into()));
            }
            if let Some(&s) = t.iter().find(|&&s| s >= self.synonym_classes.len()) {
                return Err(Error::InvalidTask(format!("template references unknown slot {s}")));
            }
        }
        let mut owner = HashMap::new();
        for (slot, class) in self.synonym_classes.iter().enumerate() {
            for w in class {
                if w.split_whitespace().count() != 1 {
                    return Err(Error::InvalidTask(format!("target word {w:?} is not one word")));
                }
                if owner.insert(w.as_str(), slot).is_some() {
                    return Err(Error::InvalidTask(format!(
                        "target word {w:?} belongs to more than one class"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A generated corpus plus everything needed to enumerate its valid references.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticTaskSpec,
    /// One canonical reference per sentence.
    pub pairs: Vec<RawPair>,
    /// Slot sequence of each sentence.
    pub sentence_slots: Vec<Vec<usize>>,
    word_slot: HashMap<String, usize>,
}

/// Builds the corpus. Sentence `i` uses template `i mod |templates|`, and its
/// canonical reference picks one synonym per slot uniformly at random.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut pairs = Vec::with_capacity(spec.sentence_count);
    let mut sentence_slots = Vec::with_capacity(spec.sentence_count);
    for i in 0..spec.sentence_count {
        let slots = spec.templates[i % spec.templates.len()].clone();
        let mut rng = stream_rng(spec.seed, Stream::Canonical, &[i as u64]);
        let target: Vec<&str> = slots
            .iter()
            .map(|&s| {
                let class = &spec.synonym_classes[s];
                class[rng.random_range(0..class.len())].as_str()
            })
            .collect();
        let mut source: Vec<&str> = slots.iter().map(|&s| spec.source_lexicon[s].as_str()).collect();
        if spec.reverse_source {
            source.reverse();
        }
        pairs.push(RawPair {
            source: source.join(" "),
            target: target.join(" "),
            line_no: i + 1,
        });
        sentence_slots.push(slots);
    }
    let word_slot = spec
        .synonym_classes
        .iter()
        .enumerate()
        .flat_map(|(s, c)| c.iter().map(move |w| (w.clone(), s)))
        .collect();
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        pairs,
        sentence_slots,
        word_slot,
    })
}

/// One JSON-lines record of the oracle sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub line: usize,
    pub source: String,
    pub canonical: String,
    pub refs: Vec<String>,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of valid references for sentence `i`: the product of its class sizes.
    pub fn oracle_ref_count(&self, i: usize) -> usize {
        self.sentence_slots[i]
            .iter()
            .map(|&s| self.spec.synonym_classes[s].len())
            .product()
    }

    /// Every valid reference of a slot sequence, in odometer order.
    pub fn refs_for_slots(&self, slots: &[usize]) -> Vec<String> {
        let classes: Vec<&Vec<String>> = slots.iter().map(|&s| &self.spec.synonym_classes[s]).collect();
        let total: usize = classes.iter().map(|c| c.len()).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; classes.len()];
        for _ in 0..total {
            let words: Vec<&str> = idx.iter().zip(&classes).map(|(&k, c)| c[k].as_str()).collect();
            out.push(words.join(" "));
            for pos in (0..idx.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < classes[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
        out
    }

    /// The full set of valid references for sentence `i`.
    pub fn oracle_refs(&self, i: usize) -> Vec<String> {
        self.refs_for_slots(&self.sentence_slots[i])
    }

    /// Maps a target sentence back to its slots; `None` if a word is unknown.
    pub fn slots_of(&self, target: &str) -> Option<Vec<usize>> {
        target
            .split_whitespace()
            .map(|w| self.word_slot.get(w).copied())
            .collect()
    }

    /// Draws a reference uniformly from the oracle set of `slots`.
    pub fn sample_reference(&self, slots: &[usize], rng: &mut impl Rng) -> String {
        slots
            .iter()
            .map(|&s| {
                let c = &self.spec.synonym_classes[s];
                c[rng.random_range(0..c.len())].as_str()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Sidecar records, one per sentence.
    pub fn oracle_records(&self) -> Vec<OracleRecord> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, p)| OracleRecord {
                line: p.line_no,
                source: p.source.clone(),
                canonical: p.target.clone(),
                refs: self.oracle_refs(i),
            })
            .collect()
    }

    pub fn write_oracle_jsonl(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for r in self.oracle_records() {
            s.push_str(&serde_json::to_string(&r)?);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn read_oracle_jsonl(path: &Path) -> Result<Vec<OracleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Exact next-token distribution over the paraphrases of a reference, at the
/// subword level.
///
/// Paraphrases of a reference are uniform over its oracle set, which factors
/// into an independent uniform choice per slot. A token prefix is tracked as
/// a weighted set of positions (slot, candidate word, pieces consumed);
/// the next-token distribution is the weight of each position's next piece.
pub struct TokenOracle<'a> {
    corpus: &'a SyntheticCorpus,
    vocab: &'a Vocab,
    class_tokens: Vec<Vec<Vec<u32>>>,
}

#[derive(Clone, Copy)]
struct OracleState {
    slot_pos: usize,
    word: usize,
    consumed: usize,
    weight: f64,
}

impl<'a> TokenOracle<'a> {
    pub fn new(corpus: &'a SyntheticCorpus, vocab: &'a Vocab) -> Self {
        let class_tokens = corpus
            .spec
            .synonym_classes
            .iter()
            .map(|c| c.iter().map(|w| vocab.encode_words(w)).collect())
            .collect();
        TokenOracle {
            corpus,
            vocab,
            class_tokens,
        }
    }

    pub fn corpus(&self) -> &SyntheticCorpus {
        self.corpus
    }

    pub fn vocab(&self) -> &Vocab {
        self.vocab
    }

    /// Slots of a tokenized reference, or `None` if it is not in the lexicon.
    pub fn slots_of_tokens(&self, reference: &[u32]) -> Option<Vec<usize>> {
        let text = self.vocab.decode(&crate::subword::TokenSeq(reference.to_vec())).ok()?;
        self.corpus.slots_of(&text)
    }

    fn expand(&self, slots: &[usize], slot_pos: usize, weight: f64, out: &mut Vec<OracleState>) {
        if slot_pos == slots.len() {
            out.push(OracleState {
                slot_pos,
                word: 0,
                consumed: 0,
                weight,
            });
            return;
        }
        let words = &self.class_tokens[slots[slot_pos]];
        let w = weight / words.len() as f64;
        for word in 0..words.len() {
            out.push(OracleState {
                slot_pos,
                word,
                consumed: 0,
                weight: w,
            });
        }
    }

    fn next_token(&self, slots: &[usize], s: &OracleState) -> u32 {
        if s.slot_pos == slots.len() {
            EOS
        } else {
            self.class_tokens[slots[s.slot_pos]][s.word][s.consumed]
        }
    }

    /// Distribution of the token after `prefix` (tokens already emitted,
    /// without BOS). Sums to 1. A prefix that no paraphrase can produce gets
    /// all mass on EOS.
    pub fn next_token_dist(&self, slots: &[usize], prefix: &[u32]) -> Vec<f64> {
        let mut states = Vec::new();
        self.expand(slots, 0, 1.0, &mut states);
        for &tok in prefix {
            let mut next = Vec::with_capacity(states.len());
            for s in &states {
                if s.slot_pos == slots.len() || self.next_token(slots, s) != tok {
                    continue;
                }
                let len = self.class_tokens[slots[s.slot_pos]][s.word].len();
                if s.consumed + 1 == len {
                    self.expand(slots, s.slot_pos + 1, s.weight, &mut next);
                } else {
                    next.push(OracleState {
                        consumed: s.consumed + 1,
                        ..*s
                    });
                }
            }
            states = next;
            if states.is_empty() {
                break;
            }
        }
        let mut dist = vec![0.0; self.vocab.size()];
        let total: f64 = states.iter().map(|s| s.weight).sum();
        if states.is_empty() || total <= 0.0 {
            dist[EOS as usize] = 1.0;
            return dist;
        }
        for s in &states {
            dist[self.next_token(slots, s) as usize] += s.weight / total;
        }
        dist
    }
}
