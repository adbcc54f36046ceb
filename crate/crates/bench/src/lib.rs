//! Fixtures shared by the kernel benchmarks.

use smrt_core::seqmodel::{Model, ModelConfig};
use smrt_core::subword::{TokenSeq, EOS};

/// A desk-sized student with the given width.
pub fn model(dim: usize, vocab: usize) -> Model {
    let mut cfg = ModelConfig::preset("tiny", vocab, vocab).expect("tiny preset");
    cfg.model_dim = dim;
    cfg.ffn_dim = 2 * dim;
    Model::init(&cfg).expect("valid config")
}

/// A deterministic source/target pair of `len` tokens plus EOS.
pub fn pair(len: usize, vocab: usize) -> (TokenSeq, TokenSeq) {
    let seq = |off: usize| {
        let mut v: Vec<u32> = (0..len).map(|i| (4 + (i * 7 + off) % (vocab - 4)) as u32).collect();
        v.push(EOS);
        TokenSeq(v)
    };
    (seq(0), seq(3))
}

/// `n` hypothesis/reference lines of `words` tokens each.
pub fn bleu_fixture(n: usize, words: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let line = |i: usize, shift: usize| {
        (0..words)
            .map(|j| format!("w{}", (i + j * shift) % 50))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let hyps = (0..n).map(|i| line(i, 3)).collect();
    let refs = (0..n)
        .map(|i| vec![line(i, 3), line(i, 5), line(i + 1, 3), line(i, 7)])
        .collect();
    (hyps, refs)
}
