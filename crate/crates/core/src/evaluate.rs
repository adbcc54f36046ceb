//! Corpus BLEU (multi-reference) and paired bootstrap resampling.
//!
//! Tokenization: every character that is neither alphanumeric nor whitespace
//! becomes its own token, then the text is split on whitespace. No case
//! folding, no smoothing.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const MAX_ORDER: usize = 4;
pub const BLEU_VERSION: &str = "smrt-bleu/1 tok=punct-split smooth=none order=4";

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if c.is_alphanumeric() {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub ngram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    /// One JSON line with the metric version tag.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            report: &'a BleuReport,
            version: &'static str,
        }
        serde_json::to_string(&Line {
            report: self,
            version: BLEU_VERSION,
        })
        .expect("report serializes")
    }
}

/// Sufficient statistics of one sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentenceStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for SentenceStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<'t, 'a>(toks: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut m = HashMap::new();
    for g in toks.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

pub fn sentence_stats<S: AsRef<str>>(hyp: &str, refs: &[S]) -> SentenceStats {
    let h = tokenize(hyp);
    let rs: Vec<Vec<&str>> = refs.iter().map(|r| tokenize(r.as_ref())).collect();
    let c = h.len();
    let ref_len = rs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    let mut st = SentenceStats {
        hyp_len: c,
        ref_len,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
        for r in &rs {
            for (g, k) in ngram_counts(r, n) {
                if hc.contains_key(g) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
        }
        st.totals[n - 1] = c.saturating_sub(n - 1);
        st.matches[n - 1] = hc
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    st
}

pub fn bleu_from_stats(st: &SentenceStats) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    for (p, (&m, &t)) in precisions.iter_mut().zip(st.matches.iter().zip(&st.totals)) {
        *p = if t == 0 { 0.0 } else { m as f64 / t as f64 };
        log_sum += p.ln();
    }
    let (c, r) = (st.hyp_len, st.ref_len);
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    };
    BleuReport {
        score,
        ngram_precisions: precisions,
        brevity_penalty: bp,
        hyp_len: c,
        ref_len: r,
    }
}

/// One JSON-lines reference record: an array of reference strings.
pub fn parse_ref_set(line: &str) -> Result<Vec<String>> {
    Ok(serde_json::from_str(line)?)
}

/// Per-sentence statistics for a whole corpus.
pub fn corpus_stats<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[Vec<R>]) -> Result<Vec<SentenceStats>> {
    if hyps.is_empty() {
        return Err(Error::EmptyInput("hypotheses"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "hypotheses vs references",
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::MissingOracle(i));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| sentence_stats(h.as_ref(), r))
        .collect())
}

pub fn sum_stats<'a>(it: impl IntoIterator<Item = &'a SentenceStats>) -> SentenceStats {
    let mut total = SentenceStats::default();
    for s in it {
        total += *s;
    }
    total
}

/// 4-gram corpus BLEU; each hypothesis may have several references.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[Vec<R>]) -> Result<BleuReport> {
    Ok(bleu_from_stats(&sum_stats(&corpus_stats(hyps, refs)?)))
}

/// BLEU against the full oracle reference set of each sentence.
pub fn oracle_bleu<H: AsRef<str>>(hyps: &[H], oracle_refs: &[Vec<String>]) -> Result<BleuReport> {
    corpus_bleu(hyps, oracle_refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// BLEU(A) − BLEU(B) on the full set.
    pub delta: f64,
    pub p_value: f64,
    pub n_resamples: usize,
    pub significant_95: bool,
}

/// Paired bootstrap: p is the fraction of resamples where B scores at least
/// as well as A.
pub fn paired_bootstrap<A: AsRef<str>, B: AsRef<str>, R: AsRef<str>>(
    hyps_a: &[A],
    hyps_b: &[B],
    refs: &[Vec<R>],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if hyps_a.len() != hyps_b.len() {
        return Err(Error::LengthMismatch {
            what: "system A vs system B",
            left: hyps_a.len(),
            right: hyps_b.len(),
        });
    }
    let a = corpus_stats(hyps_a, refs)?;
    let b = corpus_stats(hyps_b, refs)?;
    paired_bootstrap_stats(&a, &b, n_resamples, seed)
}

pub fn paired_bootstrap_stats(
    a: &[SentenceStats],
    b: &[SentenceStats],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "system A vs system B",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("hypotheses"));
    }
    if n_resamples < 100 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 100 resamples, got {n_resamples}"
        )));
    }
    let delta = bleu_from_stats(&sum_stats(a)).score - bleu_from_stats(&sum_stats(b)).score;
    let mut rng = stream_rng(seed, Stream::Bootstrap, &[]);
    let n = a.len();
    let mut b_wins = 0usize;
    for _ in 0..n_resamples {
        let (mut sa, mut sb) = (SentenceStats::default(), SentenceStats::default());
        for _ in 0..n {
            let i = rng.random_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        if bleu_from_stats(&sb).score >= bleu_from_stats(&sa).score {
            b_wins += 1;
        }
    }
    let p_value = b_wins as f64 / n_resamples as f64;
    Ok(SignificanceResult {
        delta,
        p_value,
        n_resamples,
        significant_95: p_value < 0.05,
    })
}
