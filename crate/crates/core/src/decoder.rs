//! Greedy, beam and truncated-sampling generation.
//!
//! Generation is written against [`Autoregressive`], so the same search code
//! drives trained models, the synthetic oracle and hand-built test tables.

use rand::Rng;

use crate::error::Result;
use crate::rng::{stream_rng, Stream};
use crate::seqmodel::{Model, StepDistribution};
use crate::subword::{TokenSeq, BOS, EOS};
use crate::tensor::Matrix;

/// Anything that can score the next token given a source and a target prefix.
pub trait Autoregressive {
    /// Per-source state computed once (e.g. encoder output).
    type Context;

    fn vocab_size(&self) -> usize;

    fn context(&self, src: &[u32]) -> Result<Self::Context>;

    /// Log-probabilities of the token following `prefix`, which starts with BOS.
    fn next_log_probs(&self, ctx: &Self::Context, prefix: &[u32]) -> Result<Vec<f64>>;
}

impl Autoregressive for Model {
    type Context = Matrix;

    fn vocab_size(&self) -> usize {
        self.config.tgt_vocab
    }

    fn context(&self, src: &[u32]) -> Result<Matrix> {
        self.encode_memory(src)
    }

    fn next_log_probs(&self, ctx: &Matrix, prefix: &[u32]) -> Result<Vec<f64>> {
        Model::next_log_probs(self, ctx, prefix)
    }
}

impl<T: Autoregressive + ?Sized> Autoregressive for &T {
    type Context = T::Context;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn context(&self, src: &[u32]) -> Result<Self::Context> {
        (**self).context(src)
    }

    fn next_log_probs(&self, ctx: &Self::Context, prefix: &[u32]) -> Result<Vec<f64>> {
        (**self).next_log_probs(ctx, prefix)
    }
}

/// A generated sequence; `truncated` means max_len was hit before EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: TokenSeq,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: TokenSeq,
    pub logprob_sum: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Length-normalized score: log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.logprob_sum / self.tokens.len().max(1) as f64
    }
}

/// Default generation bound: twice the input length plus ten.
pub fn default_max_len(input_len: usize) -> usize {
    2 * input_len + 10
}

fn argmax(lp: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[best] {
            best = i;
        }
    }
    best as u32
}

pub fn greedy_decode<M: Autoregressive>(model: &M, src: &[u32], max_len: usize) -> Result<Decoded> {
    Ok(greedy_hypothesis(model, src, max_len)?.into())
}

fn greedy_hypothesis<M: Autoregressive>(model: &M, src: &[u32], max_len: usize) -> Result<BeamHypothesis> {
    let ctx = model.context(src)?;
    let mut prefix = vec![BOS];
    let mut logprob_sum = 0.0;
    while prefix.len() <= max_len {
        let lp = model.next_log_probs(&ctx, &prefix)?;
        let tok = argmax(&lp);
        logprob_sum += lp[tok as usize];
        prefix.push(tok);
        if tok == EOS {
            break;
        }
    }
    let finished = prefix.last() == Some(&EOS);
    Ok(BeamHypothesis {
        tokens: TokenSeq(prefix[1..].to_vec()),
        logprob_sum,
        finished,
    })
}

impl From<BeamHypothesis> for Decoded {
    fn from(h: BeamHypothesis) -> Self {
        Decoded {
            truncated: !h.finished,
            tokens: h.tokens,
        }
    }
}

/// Beam search over summed log-probabilities.
///
/// Each step keeps the `beam` best extensions; extensions ending in EOS are
/// set aside as finished and the live beam shrinks accordingly. The result is
/// the finished hypothesis with the best [`BeamHypothesis::score`], falling back
/// to the best live one at max_len. The greedy path is always a candidate, so
/// the result never scores below greedy decoding.
pub fn beam_decode<M: Autoregressive>(model: &M, src: &[u32], beam: usize, max_len: usize) -> Result<Decoded> {
    Ok(beam_search(model, src, beam, max_len)?.into())
}

pub fn beam_search<M: Autoregressive>(model: &M, src: &[u32], beam: usize, max_len: usize) -> Result<BeamHypothesis> {
    let beam = beam.max(1);
    let ctx = model.context(src)?;
    let mut live = vec![BeamHypothesis {
        tokens: TokenSeq(Vec::new()),
        logprob_sum: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut prefix = Vec::with_capacity(max_len + 1);
    for _ in 0..max_len {
        if live.is_empty() || finished.len() >= beam {
            break;
        }
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            prefix.clear();
            prefix.push(BOS);
            prefix.extend_from_slice(h.tokens.ids());
            let lp = model.next_log_probs(&ctx, &prefix)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    cands.push((h.logprob_sum + l, hi, tok as u32));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let width = beam - finished.len();
        let mut next = Vec::with_capacity(width);
        for &(score, hi, tok) in cands.iter().take(width) {
            let mut tokens = live[hi].tokens.0.clone();
            tokens.push(tok);
            let h = BeamHypothesis {
                tokens: TokenSeq(tokens),
                logprob_sum: score,
                finished: tok == EOS,
            };
            if h.finished {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }

    let greedy = greedy_hypothesis(model, src, max_len)?;
    let pick = |hs: Vec<BeamHypothesis>| {
        hs.into_iter()
            .reduce(|best, h| if h.score() > best.score() { h } else { best })
    };
    let result = if greedy.finished || !finished.is_empty() {
        finished.push(greedy.clone());
        pick(finished.into_iter().filter(|h| h.finished).collect())
    } else {
        live.push(greedy.clone());
        pick(live)
    };
    Ok(result.unwrap_or(greedy))
}

/// Keeps the `w` most probable entries (ties to the lower id) and renormalizes.
pub fn truncate_topw(dist: &StepDistribution, w: usize) -> Result<StepDistribution> {
    let n = dist.len();
    if w == 0 || w > n {
        return Err(crate::Error::InvalidTopW { w, vocab: n });
    }
    if w == n {
        return Ok(dist.clone());
    }
    let p = dist.probs();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let kept = &order[..w];
    let z: f64 = kept.iter().map(|&i| p[i]).sum();
    for &i in kept {
        out[i] = p[i] / z;
    }
    Ok(StepDistribution(out))
}

/// Draws one token from a (possibly truncated) distribution by inverse CDF.
pub fn sample_token(dist: &StepDistribution, rng: &mut impl Rng) -> u32 {
    let p = dist.probs();
    let total: f64 = p.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last_nonzero = i;
            if u < acc {
                return i as u32;
            }
        }
    }
    last_nonzero as u32
}

/// Autoregressive top-w sampling that also returns the full (untruncated)
/// distribution at each step.
pub fn sample_with_dists<M: Autoregressive>(
    model: &M,
    ctx: &M::Context,
    w: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<u32>, Vec<StepDistribution>)> {
    let w = w.min(model.vocab_size());
    let mut prefix = vec![BOS];
    let mut dists = Vec::new();
    while prefix.len() <= max_len {
        let lp = model.next_log_probs(ctx, &prefix)?;
        let dist = StepDistribution(lp.iter().map(|v| v.exp()).collect());
        let tok = sample_token(&truncate_topw(&dist, w)?, rng);
        dists.push(dist);
        prefix.push(tok);
        if tok == EOS {
            break;
        }
    }
    prefix.remove(0);
    Ok((prefix, dists))
}

/// Top-w sampled decoding, seeded.
pub fn sample_decode<M: Autoregressive>(
    model: &M,
    src: &[u32],
    w: usize,
    max_len: usize,
    seed: u64,
) -> Result<Decoded> {
    let ctx = model.context(src)?;
    let mut rng = stream_rng(seed, Stream::Decode, &[]);
    let (tokens, _) = sample_with_dists(model, &ctx, w, max_len, &mut rng)?;
    let truncated = tokens.last() != Some(&EOS);
    Ok(Decoded {
        tokens: TokenSeq(tokens),
        truncated,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Next-token table keyed by the prefix after BOS; unknown prefixes put
    /// all mass on EOS.
    pub(crate) struct TableModel {
        pub vocab: usize,
        pub table: HashMap<Vec<u32>, Vec<f64>>,
    }

    impl Autoregressive for TableModel {
        type Context = ();

        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn context(&self, _src: &[u32]) -> Result<()> {
            Ok(())
        }

        fn next_log_probs(&self, _ctx: &(), prefix: &[u32]) -> Result<Vec<f64>> {
            let p = self.table.get(&prefix[1..]).cloned().unwrap_or_else(|| {
                let mut v = vec![0.0; self.vocab];
                v[EOS as usize] = 1.0;
                v
            });
            Ok(p.iter().map(|x| x.ln()).collect())
        }
    }

    // Vocabulary: 0..=2 specials, tokens 3, 4, 5.
    fn toy() -> TableModel {
        let mut table = HashMap::new();
        table.insert(vec![], vec![0.0, 0.0, 0.0, 0.5, 0.3, 0.2]);
        table.insert(vec![3], vec![0.0, 0.0, 0.4, 0.3, 0.3, 0.0]);
        table.insert(vec![4], vec![0.0, 0.0, 0.9, 0.1, 0.0, 0.0]);
        table.insert(vec![5], vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.5]);
        TableModel { vocab: 6, table }
    }

    /// Every EOS-terminated path of length <= 3 with its probability.
    fn enumerate(m: &TableModel) -> Vec<(Vec<u32>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(vec![], 0.0f64)];
        while let Some((p, lp)) = stack.pop() {
            let mut prefix = vec![BOS];
            prefix.extend(&p);
            let next = m.next_log_probs(&(), &prefix).unwrap();
            for (t, l) in next.iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let mut q = p.clone();
                q.push(t as u32);
                if t as u32 == EOS {
                    out.push((q, lp + l));
                } else if q.len() < 3 {
                    stack.push((q, lp + l));
                }
            }
        }
        out
    }

    #[test]
    fn greedy_follows_argmax_path() {
        let m = toy();
        // argmax: 3 (0.5), then EOS (0.4).
        let d = greedy_decode(&m, &[], 10).unwrap();
        assert_eq!(d.tokens, TokenSeq(vec![3, EOS]));
        assert!(!d.truncated);
        assert_eq!(d, greedy_decode(&m, &[], 10).unwrap());
    }

    #[test]
    fn immediate_eos() {
        let mut m = toy();
        m.table.insert(vec![], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(greedy_decode(&m, &[], 10).unwrap().tokens, TokenSeq(vec![EOS]));
    }

    #[test]
    fn beam_finds_path_greedy_misses() {
        let m = toy();
        // Brute force: [4, EOS] has 0.3 * 0.9 = 0.27 > [3, EOS] at 0.5 * 0.4 = 0.2.
        let paths = enumerate(&m);
        let best = paths
            .iter()
            .filter(|(p, _)| p.len() == 2)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, vec![4, EOS]);
        let greedy = greedy_decode(&m, &[], 10).unwrap();
        let beam = beam_decode(&m, &[], 2, 10).unwrap();
        assert_eq!(beam.tokens, TokenSeq(vec![4, EOS]));
        assert_ne!(greedy.tokens, beam.tokens);
        assert_eq!(beam, beam_decode(&m, &[], 2, 10).unwrap());
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = toy();
        assert_eq!(
            beam_decode(&m, &[], 1, 10).unwrap(),
            greedy_decode(&m, &[], 10).unwrap()
        );
    }

    #[test]
    fn max_len_truncates() {
        let mut m = toy();
        m.table.insert(vec![], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        m.table.insert(vec![3], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        m.table.insert(vec![3, 3], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let d = greedy_decode(&m, &[], 2).unwrap();
        assert_eq!((d.tokens.len(), d.truncated), (2, true));
        let b = beam_decode(&m, &[], 3, 2).unwrap();
        assert!(b.truncated);
    }

    #[test]
    fn topw_examples() {
        let d = StepDistribution(vec![0.4, 0.3, 0.2, 0.1]);
        assert_eq!(truncate_topw(&d, 4).unwrap(), d);
        assert_eq!(
            truncate_topw(&d, 1).unwrap(),
            StepDistribution(vec![1.0, 0.0, 0.0, 0.0])
        );
        let t = truncate_topw(&d, 2).unwrap();
        let expect = [0.4 / 0.7, 0.3 / 0.7, 0.0, 0.0];
        for (a, b) in t.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(truncate_topw(&d, 0).is_err());
        // Ties go to the lower id.
        let tie = StepDistribution(vec![0.1, 0.3, 0.3, 0.3]);
        assert_eq!(truncate_topw(&tie, 1).unwrap().argmax(), 1);
    }

    #[test]
    fn top_one_sampling_is_greedy() {
        let m = toy();
        for seed in 0..5 {
            assert_eq!(
                sample_decode(&m, &[], 1, 10, seed).unwrap(),
                greedy_decode(&m, &[], 10).unwrap()
            );
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mut table = HashMap::new();
        let mut flat = vec![0.1; 10];
        flat[0] = 0.0;
        flat[1] = 0.0;
        flat[2] = 0.2;
        for a in 0..10u32 {
            table.insert(vec![a], flat.clone());
            for b in 0..10u32 {
                table.insert(vec![a, b], flat.clone());
            }
        }
        table.insert(vec![], flat);
        let m = TableModel { vocab: 10, table };
        let a = sample_decode(&m, &[], 10, 3, 11).unwrap();
        assert_eq!(a, sample_decode(&m, &[], 10, 3, 11).unwrap());
        let distinct: std::collections::HashSet<_> = (0..20)
            .map(|s| sample_decode(&m, &[], 10, 3, s).unwrap().tokens)
            .collect();
        assert!(distinct.len() > 5);
    }
}
