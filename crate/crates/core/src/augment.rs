//! Offline data pipelines: sequence-level paraphrase augmentation and
//! back-translation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decoder::{beam_decode, default_max_len, greedy_decode, sample_decode, Autoregressive, Decoded};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::subword::{TokenSeq, EOS};
use crate::trainer::EncodedPair;

pub const AUGMENT_BEAM: usize = 5;
pub const AUGMENT_TOPW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParaphraseMode {
    Beam,
    Greedy,
    Sample,
}

impl FromStr for ParaphraseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam" => Ok(ParaphraseMode::Beam),
            "greedy" => Ok(ParaphraseMode::Greedy),
            "sample" => Ok(ParaphraseMode::Sample),
            _ => Err(Error::InvalidConfig(format!("unknown paraphrase mode {s:?}"))),
        }
    }
}

fn generate<M: Autoregressive>(model: &M, input: &TokenSeq, mode: ParaphraseMode, seed: u64) -> Result<Decoded> {
    let max_len = default_max_len(input.len());
    match mode {
        ParaphraseMode::Beam => beam_decode(model, input.ids(), AUGMENT_BEAM, max_len),
        ParaphraseMode::Greedy => greedy_decode(model, input.ids(), max_len),
        ParaphraseMode::Sample => sample_decode(model, input.ids(), AUGMENT_TOPW, max_len, seed),
    }
}

/// One paraphrase `y'` of each target, paired with the original source, in
/// input order. A paraphrase cut off at max_len is kept as generated.
pub fn paraphrase_corpus<M: Autoregressive>(
    teacher: &M,
    pairs: &[EncodedPair],
    mode: ParaphraseMode,
    seed: u64,
) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = derive_seed(seed, Stream::Decode, &[i as u64]);
            Ok(EncodedPair {
                src: p.src.clone(),
                tgt: generate(teacher, &p.tgt, mode, s)?.tokens,
            })
        })
        .collect()
}

/// Original pairs followed by the paraphrased ones.
pub fn concat_augmented(original: &[EncodedPair], paraphrased: &[EncodedPair]) -> Vec<EncodedPair> {
    let mut out = Vec::with_capacity(original.len() + paraphrased.len());
    out.extend_from_slice(original);
    out.extend_from_slice(paraphrased);
    out
}

/// Swaps source and target, for training a reverse model.
pub fn reverse_pairs(pairs: &[EncodedPair]) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair {
            src: p.tgt.clone(),
            tgt: p.src.clone(),
        })
        .collect()
}

/// Number of monolingual lines needed for `ratio` × `bitext_size`.
pub fn bt_count(ratio: f64, bitext_size: usize) -> usize {
    (ratio * bitext_size as f64).round() as usize
}

/// Seeded choice of which monolingual lines to back-translate, in selection
/// order.
pub fn select_monolingual(available: usize, required: usize, seed: u64) -> Result<Vec<usize>> {
    if required > available {
        return Err(Error::InsufficientMonolingual { required, available });
    }
    let mut idx: Vec<usize> = (0..available).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Select, &[]));
    idx.truncate(required);
    Ok(idx)
}

/// Beam-decodes selected monolingual targets into synthetic sources.
pub fn back_translate<M: Autoregressive>(
    reverse_model: &M,
    mono_target: &[TokenSeq],
    ratio: f64,
    bitext_size: usize,
    seed: u64,
) -> Result<Vec<EncodedPair>> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "back-translation ratio {ratio} must be nonnegative"
        )));
    }
    let chosen = select_monolingual(mono_target.len(), bt_count(ratio, bitext_size), seed)?;
    chosen
        .into_iter()
        .map(|i| {
            let tgt = &mono_target[i];
            let mut src = beam_decode(reverse_model, tgt.ids(), AUGMENT_BEAM, default_max_len(tgt.len()))?.tokens;
            if src.0.last() != Some(&EOS) {
                src.0.push(EOS);
            }
            Ok(EncodedPair { src, tgt: tgt.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
        })
    }
}

/// Training pairs with a per-pair origin tag. Tags are for reporting only.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedCorpus {
    pub pairs: Vec<EncodedPair>,
    pub tags: Vec<Origin>,
}

impl TaggedCorpus {
    pub fn count(&self, origin: Origin) -> usize {
        self.tags.iter().filter(|&&t| t == origin).count()
    }

    pub fn tags_text(&self) -> String {
        self.tags.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn write_tags(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tags_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn combine_for_smrt(bitext: &[EncodedPair], bt_pairs: &[EncodedPair]) -> TaggedCorpus {
    let mut tags = vec![Origin::Real; bitext.len()];
    tags.resize(bitext.len() + bt_pairs.len(), Origin::Synthetic);
    TaggedCorpus {
        pairs: concat_augmented(bitext, bt_pairs),
        tags,
    }
}
