//! Training losses, paraphrase sampling and the per-sentence objective mix.

use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape};
use crate::corpus::TokenOracle;
use crate::decoder::{default_max_len, sample_with_dists, truncate_topw, Autoregressive};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::seqmodel::StepDistribution;
use crate::subword::{TokenSeq, BOS, PAD};
use crate::tensor::Matrix;

use rand::Rng;

/// Teacher probabilities below this are treated as exactly zero.
pub const TEACHER_FLOOR: f64 = 1e-12;

fn check_rows(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}

/// Label-smoothed target rows: `(1-ε)·onehot(y) + ε/|V|`. PAD positions get
/// an all-zero row.
pub fn nll_target(reference: &[u32], vocab: usize, epsilon: f64) -> Result<Matrix> {
    let mut t = Matrix::zeros(reference.len(), vocab);
    for (r, &y) in reference.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y as usize >= vocab {
            return Err(Error::TokenOutOfRange { id: y, size: vocab });
        }
        let row = t.row_mut(r);
        if epsilon > 0.0 {
            row.fill(epsilon / vocab as f64);
        }
        row[y as usize] += 1.0 - epsilon;
    }
    Ok(t)
}

/// Teacher distributions as target rows, with entries under
/// [`TEACHER_FLOOR`] zeroed.
pub fn smrt_target(teacher: &[StepDistribution], vocab: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(teacher.len(), vocab);
    for (r, d) in teacher.iter().enumerate() {
        check_rows("teacher vocabulary", d.len(), vocab)?;
        for (o, &p) in t.row_mut(r).iter_mut().zip(d.probs()) {
            *o = if p < TEACHER_FLOOR { 0.0 } else { p };
        }
    }
    Ok(t)
}

fn positions(reference: &[u32]) -> usize {
    reference.iter().filter(|&&y| y != PAD).count()
}

fn cross_entropy(student: &[StepDistribution], target: &Matrix, denom: usize) -> f64 {
    let mut total = 0.0;
    for (r, d) in student.iter().enumerate() {
        for (&q, &p) in target.row(r).iter().zip(d.probs()) {
            if q != 0.0 {
                total -= q * p.ln();
            }
        }
    }
    total / denom.max(1) as f64
}

/// Label-smoothed negative log-likelihood of `reference`, averaged over
/// non-PAD positions.
pub fn nll_loss(student: &[StepDistribution], reference: &[u32], epsilon: f64) -> Result<f64> {
    check_rows("positions", student.len(), reference.len())?;
    let vocab = student.first().map_or(0, |d| d.len());
    let target = nll_target(reference, vocab, epsilon)?;
    Ok(cross_entropy(student, &target, positions(reference)))
}

/// Cross-entropy of the student against full teacher distributions,
/// averaged over positions.
pub fn smrt_loss(student: &[StepDistribution], teacher: &[StepDistribution]) -> Result<f64> {
    check_rows("positions", student.len(), teacher.len())?;
    let vocab = student.first().map_or(0, |d| d.len());
    let target = smrt_target(teacher, vocab)?;
    Ok(cross_entropy(student, &target, teacher.len()))
}

/// Differentiable label-smoothed NLL over a recorded log-probability node.
pub fn nll_node(tape: &mut Tape, logp: NodeId, reference: &[u32], epsilon: f64) -> Result<NodeId> {
    let (rows, vocab) = tape.value(logp).shape();
    check_rows("positions", rows, reference.len())?;
    let target = nll_target(reference, vocab, epsilon)?;
    Ok(tape.cross_entropy(logp, target, positions(reference).max(1) as f64))
}

/// Differentiable teacher cross-entropy. The teacher enters as a constant,
/// so no gradient reaches it.
pub fn smrt_node(tape: &mut Tape, logp: NodeId, teacher: &[StepDistribution]) -> Result<NodeId> {
    let (rows, vocab) = tape.value(logp).shape();
    check_rows("positions", rows, teacher.len())?;
    let target = smrt_target(teacher, vocab)?;
    Ok(tape.cross_entropy(logp, target, teacher.len().max(1) as f64))
}

/// One sampled paraphrase with the teacher's full distribution at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub tokens: TokenSeq,
    pub teacher_dists: Vec<StepDistribution>,
    pub source_ref: TokenSeq,
    /// max_len was reached before EOS.
    pub truncated: bool,
}

impl SampledPath {
    /// Decoder input for the path: BOS followed by all but the last token.
    pub fn decoder_input(&self) -> Vec<u32> {
        self.tokens.shifted_right().0
    }

    /// Teacher distributions restricted to the top `w` entries per step.
    pub fn truncated_dists(&self, w: usize) -> Result<Vec<StepDistribution>> {
        self.teacher_dists
            .iter()
            .map(|d| truncate_topw(d, w.min(d.len())))
            .collect()
    }
}

/// Samples `y'` from the paraphraser given `reference` (tokens without BOS,
/// normally ending in EOS), with top-`w` truncation.
pub fn sample_paraphrase<M: Autoregressive>(
    teacher: &M,
    reference: &[u32],
    w: usize,
    rng: &mut impl Rng,
) -> Result<SampledPath> {
    let ctx = teacher.context(reference)?;
    let max_len = default_max_len(reference.len());
    let (tokens, teacher_dists) = sample_with_dists(teacher, &ctx, w, max_len, rng)?;
    let truncated = tokens.last() != Some(&crate::subword::EOS);
    Ok(SampledPath {
        tokens: TokenSeq(tokens),
        teacher_dists,
        source_ref: TokenSeq(reference.to_vec()),
        truncated,
    })
}

/// Deterministic seeded variant used by the trainer: the RNG is keyed on
/// (seed, epoch, sentence index).
pub fn sample_paraphrase_at<M: Autoregressive>(
    teacher: &M,
    reference: &[u32],
    w: usize,
    seed: u64,
    epoch: usize,
    sentence: usize,
) -> Result<SampledPath> {
    let mut rng = stream_rng(seed, Stream::Paraphrase, &[epoch as u64, sentence as u64]);
    sample_paraphrase(teacher, reference, w, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveChoice {
    Nll,
    Smrt,
}

/// Bernoulli(p) choice of objective per sentence and epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixPolicy {
    pub p: f64,
    pub seed: u64,
}

impl MixPolicy {
    pub fn choose(&self, sentence: usize, epoch: usize) -> ObjectiveChoice {
        if self.p <= 0.0 {
            return ObjectiveChoice::Nll;
        }
        let mut rng = stream_rng(self.seed, Stream::Mix, &[epoch as u64, sentence as u64]);
        if rng.random::<f64>() < self.p {
            ObjectiveChoice::Smrt
        } else {
            ObjectiveChoice::Nll
        }
    }
}

/// Loss applied to the paraphrase path when SMRT is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistLoss {
    /// Cross-entropy against the teacher distribution.
    Smrt,
    /// Label-smoothed NLL of the path tokens.
    Nll,
}

/// How the paraphrase path is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathSampling {
    Sampled,
    Greedy,
}

/// Paraphrase-side settings for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmrtSettings {
    /// Probability of the paraphrase objective per sentence.
    pub p: f64,
    /// Top-w truncation for sampling; capped at the vocabulary size.
    pub w: usize,
    pub dist_loss: DistLoss,
    pub sampling: PathSampling,
    /// Use the truncated teacher distribution as the loss target.
    pub truncated_targets: bool,
}

impl Default for SmrtSettings {
    fn default() -> Self {
        SmrtSettings {
            p: 0.5,
            w: 100,
            dist_loss: DistLoss::Smrt,
            sampling: PathSampling::Sampled,
            truncated_targets: false,
        }
    }
}

impl SmrtSettings {
    pub fn effective_w(&self) -> usize {
        match self.sampling {
            PathSampling::Sampled => self.w,
            PathSampling::Greedy => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!(
                "mixing probability {} outside [0, 1]",
                self.p
            )));
        }
        if self.w == 0 {
            return Err(Error::InvalidTopW { w: 0, vocab: 0 });
        }
        Ok(())
    }
}

/// One line of the paraphrase dump: reference and sampled paraphrase,
/// tab-separated.
pub fn dump_line(reference: &str, paraphrase: &str) -> String {
    format!("{reference}\t{paraphrase}")
}

/// The synthetic task's exact paraphrase distribution, usable as a teacher.
/// Its input is a reference in target tokens.
pub struct OracleTeacher<'a> {
    oracle: TokenOracle<'a>,
}

impl<'a> OracleTeacher<'a> {
    pub fn new(oracle: TokenOracle<'a>) -> Self {
        OracleTeacher { oracle }
    }
}

impl Autoregressive for OracleTeacher<'_> {
    type Context = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.oracle.vocab().size()
    }

    fn context(&self, src: &[u32]) -> Result<Vec<usize>> {
        self.oracle
            .slots_of_tokens(src)
            .ok_or_else(|| Error::InvalidTask("reference is not a sentence of the synthetic task".into()))
    }

    fn next_log_probs(&self, slots: &Vec<usize>, prefix: &[u32]) -> Result<Vec<f64>> {
        let emitted = prefix.strip_prefix(&[BOS]).unwrap_or(prefix);
        Ok(self
            .oracle
            .next_token_dist(slots, emitted)
            .into_iter()
            .map(f64::ln)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::tests::TableModel;
    use crate::subword::EOS;
    use std::collections::HashMap;

    fn dists(rows: &[&[f64]]) -> Vec<StepDistribution> {
        rows.iter().map(|r| StepDistribution(r.to_vec())).collect()
    }

    #[test]
    fn nll_matches_hand_computation() {
        let s = dists(&[&[0.1, 0.2, 0.7], &[0.5, 0.25, 0.25]]);
        let plain = nll_loss(&s, &[2, 1], 0.0).unwrap();
        let expect = -(0.7f64.ln() + 0.25f64.ln()) / 2.0;
        assert!((plain - expect).abs() < 1e-14);
        let eps = 0.3;
        let smooth = nll_loss(&s, &[2, 1], eps).unwrap();
        let mut e = 0.0f64;
        for (row, y) in [([0.1f64, 0.2, 0.7], 2usize), ([0.5, 0.25, 0.25], 1)] {
            for (v, p) in row.iter().enumerate() {
                let q = eps / 3.0 + if v == y { 1.0 - eps } else { 0.0 };
                e -= q * p.ln();
            }
        }
        assert!((smooth - e / 2.0).abs() < 1e-14);
    }

    #[test]
    fn smrt_with_one_hot_teacher_is_nll() {
        let s = dists(&[&[0.1, 0.2, 0.7], &[0.5, 0.25, 0.25]]);
        let y = [2u32, 1];
        let t: Vec<_> = y.iter().map(|&v| StepDistribution::one_hot(3, v)).collect();
        let a = smrt_loss(&s, &t).unwrap();
        let b = nll_loss(&s, &y, 0.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn zero_teacher_mass_ignores_student_zeros() {
        let s = dists(&[&[0.0, 0.5, 0.5]]);
        let t = dists(&[&[1e-13, 0.5, 0.5]]);
        assert!((smrt_loss(&s, &t).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let s = dists(&[&[0.5, 0.5]]);
        assert!(nll_loss(&s, &[1, 1], 0.0).is_err());
        assert!(smrt_loss(&s, &dists(&[&[1.0, 0.0, 0.0]])).is_err());
        assert!(nll_loss(&s, &[7], 0.0).is_err());
    }

    #[test]
    fn node_losses_agree_with_pure_versions() {
        let probs = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.7, 0.5, 0.25, 0.25]);
        let mut logp = probs.clone();
        logp.data.iter_mut().for_each(|v| *v = v.ln());
        let params = vec![logp.clone()];
        let mut tape = Tape::new(&params);
        let lp = tape.param(0);
        let s = dists(&[&[0.1, 0.2, 0.7], &[0.5, 0.25, 0.25]]);
        let n = nll_node(&mut tape, lp, &[2, 1], 0.2).unwrap();
        assert!((tape.scalar(n) - nll_loss(&s, &[2, 1], 0.2).unwrap()).abs() < 1e-14);
        let t = dists(&[&[0.3, 0.3, 0.4], &[0.0, 1.0, 0.0]]);
        let m = smrt_node(&mut tape, lp, &t).unwrap();
        assert!((tape.scalar(m) - smrt_loss(&s, &t).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn mix_policy_extremes_and_rate() {
        let never = MixPolicy { p: 0.0, seed: 3 };
        let always = MixPolicy { p: 1.0, seed: 3 };
        let half = MixPolicy { p: 0.5, seed: 3 };
        let mut smrt = 0;
        for i in 0..4000 {
            assert_eq!(never.choose(i, 1), ObjectiveChoice::Nll);
            assert_eq!(always.choose(i, 1), ObjectiveChoice::Smrt);
            if half.choose(i, 1) == ObjectiveChoice::Smrt {
                smrt += 1;
            }
            assert_eq!(half.choose(i, 2), half.choose(i, 2));
        }
        assert!((smrt as f64 / 4000.0 - 0.5).abs() < 0.03);
    }

    fn chain_model() -> TableModel {
        let mut table = HashMap::new();
        table.insert(vec![], vec![0.0, 0.0, 0.1, 0.6, 0.3]);
        for a in 3..5u32 {
            table.insert(vec![a], vec![0.0, 0.0, 0.5, 0.25, 0.25]);
            for b in 3..5u32 {
                table.insert(vec![a, b], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
            }
        }
        TableModel { vocab: 5, table }
    }

    #[test]
    fn sampled_path_records_full_distributions() {
        let m = chain_model();
        for s in 0..20 {
            let p = sample_paraphrase_at(&m, &[3, EOS], 2, 9, 1, s).unwrap();
            assert_eq!(p.tokens.len(), p.teacher_dists.len());
            assert!(!p.truncated);
            for (a, b) in p.teacher_dists[0].probs().iter().zip([0.0, 0.0, 0.1, 0.6, 0.3]) {
                assert!((a - b).abs() < 1e-15);
            }
            // With w = 2 the first step never emits EOS (third most likely).
            assert_ne!(p.tokens.ids()[0], EOS);
            assert!(p.teacher_dists.iter().all(|d| d.is_normalized(1e-12)));
            assert_eq!(p, sample_paraphrase_at(&m, &[3, EOS], 2, 9, 1, s).unwrap());
            let tr = p.truncated_dists(2).unwrap();
            assert!((tr[0].probs()[3] - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn greedy_path_is_argmax_chain() {
        let m = chain_model();
        let p = sample_paraphrase_at(&m, &[3, EOS], 1, 0, 0, 0).unwrap();
        assert_eq!(p.tokens, TokenSeq(vec![3, EOS]));
        assert_eq!(p.decoder_input(), vec![BOS, 3]);
    }

    #[test]
    fn settings_validation() {
        assert!(SmrtSettings::default().validate().is_ok());
        assert!(SmrtSettings {
            p: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SmrtSettings {
            w: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let g = SmrtSettings {
            sampling: PathSampling::Greedy,
            ..Default::default()
        };
        assert_eq!(g.effective_w(), 1);
        assert_eq!(dump_line("a b", "c d"), "a b\tc d");
    }
}
