//! Byte-pair-merge subword segmentation.
//!
//! Words are split on whitespace and prefixed with [`BOUNDARY`], so a piece
//! that starts a word carries the marker and decoding is unambiguous. Merges
//! are learned greedily by pair frequency; equal frequencies go to the
//! lexicographically smallest pair.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOUNDARY: char = '\u{2581}';
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Substituted for UNK tokens when decoding.
pub const REPLACEMENT: char = '\u{FFFD}';

const FILE_MAGIC: &str = "#smrt-vocab";
const FILE_VERSION: u32 = 1;

/// An ordered list of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    /// Decoder input for teacher forcing: BOS followed by all but the last token.
    pub fn shifted_right(&self) -> TokenSeq {
        let mut v = Vec::with_capacity(self.0.len());
        v.push(BOS);
        v.extend_from_slice(&self.0[..self.0.len().saturating_sub(1)]);
        TokenSeq(v)
    }

    /// Checks the structural invariants: no interior PAD, at most one trailing EOS.
    pub fn is_well_formed(&self) -> bool {
        let ids = &self.0;
        let body = if ids.last() == Some(&EOS) {
            &ids[..ids.len() - 1]
        } else {
            &ids[..]
        };
        let trimmed_len = body.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        !body[..trimmed_len].contains(&PAD) && !body.contains(&EOS)
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(v: Vec<u32>) -> Self {
        TokenSeq(v)
    }
}

/// A trained subword inventory plus the merge rules that produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    /// Set when the corpus could not supply enough merges to reach the
    /// requested size.
    pub undersized: bool,
}

impl Vocab {
    fn from_parts(pieces: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        if pieces.len() < 5 {
            return Err(Error::InvalidVocab(format!(
                "size {} is below the minimum of 5",
                pieces.len()
            )));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if pieces[i] != *s {
                return Err(Error::InvalidVocab(format!("id {i} must be {s}")));
            }
        }
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if piece_to_id.insert(p.clone(), i as u32).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate piece {p:?}")));
            }
        }
        let merge_rank = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Ok(Vocab {
            pieces,
            piece_to_id,
            merges,
            merge_rank,
            undersized: false,
        })
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Short content hash, used to check that two models share a vocabulary.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.pieces {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        for (a, b) in &self.merges {
            h.update(a.as_bytes());
            h.update([1u8]);
            h.update(b.as_bytes());
            h.update([0u8]);
        }
        h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Segments one word (without the boundary marker) into pieces.
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = std::iter::once(BOUNDARY)
            .chain(word.chars())
            .map(|c| c.to_string())
            .collect();
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                let key = (syms[i].clone(), syms[i + 1].clone());
                if let Some(&rank) = self.merge_rank.get(&key) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
        }
        syms
    }

    /// Token ids for one text, without the trailing EOS.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            for piece in self.segment_word(word) {
                ids.push(self.id(&piece).unwrap_or(UNK));
            }
        }
        ids
    }

    /// Encodes text and appends EOS. Characters outside the inventory become UNK.
    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut ids = self.encode_words(text);
        ids.push(EOS);
        TokenSeq(ids)
    }

    /// Concatenates pieces, restores spaces at boundary markers and drops
    /// specials. UNK decodes to [`REPLACEMENT`].
    pub fn decode(&self, seq: &TokenSeq) -> Result<String> {
        let mut out = String::new();
        for &id in seq.ids() {
            let piece = self.piece(id).ok_or(Error::TokenOutOfRange { id, size: self.size() })?;
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push(REPLACEMENT),
                _ => {
                    for c in piece.chars() {
                        out.push(if c == BOUNDARY { ' ' } else { c });
                    }
                }
            }
        }
        Ok(match out.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => out,
        })
    }

    /// Serializes the inventory: a header line, pieces in id order, then merges.
    pub fn to_file_string(&self) -> String {
        let mut s = format!(
            "{FILE_MAGIC} version={FILE_VERSION} size={} merges={}\n",
            self.size(),
            self.merges.len()
        );
        for p in &self.pieces {
            s.push_str(p);
            s.push('\n');
        }
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidVocab("empty vocabulary file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FILE_MAGIC) {
            return Err(Error::InvalidVocab("missing vocabulary header".into()));
        }
        let mut kv = BTreeMap::new();
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::InvalidVocab(format!("bad header field {f:?}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::InvalidVocab(format!("bad header value {f:?}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidVocab(format!("header lacks {k}")))
        };
        if get("version")? != FILE_VERSION as usize {
            return Err(Error::InvalidVocab("unsupported vocabulary version".into()));
        }
        let (size, n_merges) = (get("size")?, get("merges")?);
        let pieces: Vec<String> = lines.by_ref().take(size).map(str::to_string).collect();
        if pieces.len() != size {
            return Err(Error::InvalidVocab("truncated piece list".into()));
        }
        let merges = lines
            .take(n_merges)
            .map(|l| {
                l.split_once(' ')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::InvalidVocab(format!("bad merge line {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if merges.len() != n_merges {
            return Err(Error::InvalidVocab("truncated merge list".into()));
        }
        Vocab::from_parts(pieces, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_file_string(&text)
    }
}

/// Learns a merge inventory of exactly `vocab_size` entries (specials included).
///
/// When the corpus runs out of pairs first, the largest achievable vocabulary
/// is returned with [`Vocab::undersized`] set.
pub fn train_subword<S: AsRef<str>>(lines: &[S], vocab_size: usize) -> Result<Vocab> {
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in lines {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }

    // Symbols are interned; `symbols[id]` is the piece text.
    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_id: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_id.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| {
            let syms = std::iter::once(BOUNDARY)
                .chain(w.chars())
                .map(|ch| intern(ch.to_string(), &mut symbols))
                .collect();
            (syms, c)
        })
        .collect();

    let mut chars: Vec<String> = symbols.clone();
    chars.sort();
    chars.retain(|c| !SPECIALS.contains(&c.as_str()));
    if vocab_size <= chars.len() + SPECIALS.len() {
        return Err(Error::InvalidVocab(format!(
            "vocab_size {vocab_size} must exceed {} characters + {} specials",
            chars.len(),
            SPECIALS.len()
        )));
    }

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend(chars);
    let mut known: std::collections::HashSet<String> = pieces.iter().cloned().collect();
    let mut merges: Vec<(String, String)> = Vec::new();

    type Pair = (u32, u32);
    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs: HashMap<Pair, std::collections::BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += *c as i64;
            occurs.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let mut banned: std::collections::HashSet<Pair> = std::collections::HashSet::new();

    while pieces.len() < vocab_size {
        let mut best: Option<(Pair, i64)> = None;
        for (&pair, &c) in &counts {
            if c <= 0 || banned.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    c > bc
                        || (c == bc
                            && (&symbols[pair.0 as usize], &symbols[pair.1 as usize])
                                < (&symbols[bp.0 as usize], &symbols[bp.1 as usize]))
                }
            };
            if better {
                best = Some((pair, c));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let merged = format!("{}{}", symbols[a as usize], symbols[b as usize]);
        if SPECIALS.contains(&merged.as_str()) {
            banned.insert((a, b));
            continue;
        }
        let m = intern(merged.clone(), &mut symbols);
        let affected: Vec<usize> = occurs
            .get(&(a, b))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            let c = *c as i64;
            for p in syms.windows(2) {
                *counts.get_mut(&(p[0], p[1])).unwrap() -= c;
                if let Some(set) = occurs.get_mut(&(p[0], p[1])) {
                    set.remove(&wi);
                }
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(m);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            for p in out.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += c;
                occurs.entry((p[0], p[1])).or_default().insert(wi);
            }
            *syms = out;
        }
        counts.retain(|_, c| *c > 0);
        merges.push((symbols[a as usize].clone(), symbols[b as usize].clone()));
        if known.insert(merged.clone()) {
            pieces.push(merged);
        }
    }

    let undersized = pieces.len() < vocab_size;
    if undersized {
        log::warn!(
            "corpus supports only {} subword entries (requested {vocab_size})",
            pieces.len()
        );
    }
    let mut vocab = Vocab::from_parts(pieces, merges)?;
    vocab.undersized = undersized;
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn most_frequent_pair_merges_first() {
        // "▁aaab" and "▁aab": (a,a) occurs 3 times, (▁,a) and (a,b) twice.
        let v = train_subword(&["aaab aab"], 8).unwrap();
        assert_eq!(v.size(), 8);
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
        assert_eq!(v.piece(7), Some("aa"));
        assert_eq!(&v.pieces()[4..7], &["a", "b", "\u{2581}"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // Every adjacent pair in "▁ab" occurs once; ("a","b") < ("▁","a").
        let v = train_subword(&["ab"], 8).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn small_corpus_reports_undersized() {
        let v = train_subword(&["ab"], 50).unwrap();
        assert!(v.undersized);
        assert!(v.size() < 50);
        assert!(train_subword(&["abc"], 7).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let lines = ["the cat sat on the mat", "the dog sat"];
        assert_eq!(train_subword(&lines, 20).unwrap(), train_subword(&lines, 20).unwrap());
    }

    #[test]
    fn encode_decode_edge_cases() {
        let v = train_subword(&["the cat sat on the mat"], 20).unwrap();
        assert_eq!(v.encode(""), TokenSeq(vec![EOS]));
        assert_eq!(v.decode(&TokenSeq(vec![EOS])).unwrap(), "");
        assert_eq!(v.decode(&v.encode("the cat")).unwrap(), "the cat");
        let unk = v.encode("the zebra");
        assert!(unk.ids().contains(&UNK));
        assert!(v.decode(&unk).unwrap().contains(REPLACEMENT));
        let bad = TokenSeq(vec![v.size() as u32]);
        assert!(matches!(v.decode(&bad), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn file_format_round_trips() {
        let v = train_subword(&["abracadabra banana bandana"], 24).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("#smrt-vocab version=1 size=24"));
        let back = Vocab::from_file_string(&text).unwrap();
        assert_eq!(back.pieces(), v.pieces());
        assert_eq!(back.merges(), v.merges());
        assert_eq!(back.encode("cabana"), v.encode("cabana"));
    }

    #[test]
    fn token_seq_well_formedness() {
        assert!(TokenSeq(vec![5, 6, EOS]).is_well_formed());
        assert!(!TokenSeq(vec![5, PAD, 6, EOS]).is_well_formed());
        assert!(!TokenSeq(vec![5, EOS, EOS]).is_well_formed());
        assert_eq!(TokenSeq(vec![5, 6, EOS]).shifted_right(), TokenSeq(vec![BOS, 5, 6]));
    }

    proptest! {
        #[test]
        fn round_trip_over_inventory_characters(
            words in prop::collection::vec("[a-e]{1,6}", 0..6)
        ) {
            let v = train_subword(&["abc bcd cde dea eab aabb"], 30).unwrap();
            let s = words.join(" ");
            let enc = v.encode(&s);
            prop_assert!(enc.is_well_formed());
            prop_assert_eq!(v.decode(&enc).unwrap(), s);
        }
    }
}
