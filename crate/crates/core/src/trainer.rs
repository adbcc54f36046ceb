//! Epoch-based training with Adam and the per-sentence NLL/SMRT mix.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::decoder::Autoregressive;
use crate::error::{Error, Result};
use crate::objectives::{
    dump_line, nll_node, sample_paraphrase_at, smrt_node, DistLoss, MixPolicy, ObjectiveChoice, SampledPath,
    SmrtSettings,
};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::seqmodel::{Gradients, Mode, Model};
use crate::subword::{TokenSeq, Vocab, PAD};
use crate::tensor::Matrix;

/// A tokenized training or evaluation pair. Both sides end in EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub src: TokenSeq,
    pub tgt: TokenSeq,
}

impl EncodedPair {
    pub fn encode(src_vocab: &Vocab, tgt_vocab: &Vocab, source: &str, target: &str) -> Self {
        EncodedPair {
            src: src_vocab.encode(source),
            tgt: tgt_vocab.encode(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_sentences: usize,
    pub lr: f64,
    /// Linear warmup to `lr` over this many optimizer steps, then constant.
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    /// Global-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub smrt: SmrtSettings,
    /// Write sampled paraphrases (reference TAB paraphrase) per epoch.
    pub dump_paraphrases: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_sentences: 32,
            lr: 1e-3,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            label_smoothing: 0.2,
            clip_norm: 1.0,
            seed: 1,
            smrt: SmrtSettings {
                p: 0.0,
                ..SmrtSettings::default()
            },
            dump_paraphrases: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_sentences == 0 {
            return bad("batch_sentences must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            ));
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be nonnegative".into());
        }
        self.smrt.validate()
    }

    pub fn mix(&self) -> MixPolicy {
        MixPolicy {
            p: self.smrt.p,
            seed: self.seed,
        }
    }

    /// Learning rate for optimizer step `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam: parameter {i} is {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[i].data;
        let v = &mut state.second_moment[i].data;
        for (j, (w, &g)) in p.data.iter_mut().zip(&grads[i].data).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub valid_ppl: f64,
    /// Checkpoint file, when training writes to disk.
    pub path: Option<PathBuf>,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_nll: Option<f64>,
    pub loss_smrt: Option<f64>,
    pub n_nll: usize,
    pub n_smrt: usize,
    pub valid_ppl: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss_nll,train_loss_smrt,n_nll,n_smrt,valid_ppl";

/// Metrics log as CSV. Wall-clock time is kept out so the log is
/// reproducible; see [`timing_csv`].
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.10}",
            m.epoch,
            opt(m.loss_nll),
            opt(m.loss_smrt),
            m.n_nll,
            m.n_smrt,
            m.valid_ppl
        );
    }
    s
}

pub fn timing_csv(records: &[CheckpointRecord]) -> String {
    let mut s = String::from("epoch,epoch_seconds\n");
    for r in records {
        let _ = writeln!(s, "{},{:.6}", r.epoch, r.epoch_seconds);
    }
    s
}

/// Result of training one sentence.
#[derive(Debug, Clone)]
pub struct SentenceStep {
    pub choice: ObjectiveChoice,
    pub loss: f64,
    pub grads: Option<Gradients>,
    pub path: Option<SampledPath>,
}

/// Loss (and optionally gradients) for training pair `index` in `epoch`
/// under a given objective.
///
/// NLL teacher-forces the student on the reference with label smoothing.
/// SMRT samples a paraphrase from the teacher given the reference, then
/// teacher-forces the student on that path and applies the configured
/// distribution loss.
#[allow(clippy::too_many_arguments)]
pub fn sentence_step<T: Autoregressive>(
    student: &Model,
    teacher: Option<&T>,
    pair: &EncodedPair,
    index: usize,
    epoch: usize,
    cfg: &TrainConfig,
    choice: ObjectiveChoice,
    with_grads: bool,
) -> Result<SentenceStep> {
    let mode = Mode::Train {
        dropout_seed: derive_seed(cfg.seed, Stream::Dropout, &[epoch as u64, index as u64]),
    };
    let mut tape = if with_grads {
        Tape::new(student.params())
    } else {
        Tape::inference(student.params())
    };
    let (loss, path) = match choice {
        ObjectiveChoice::Nll => {
            let logp = student.forward(&mut tape, pair.src.ids(), &pair.tgt.shifted_right().0, mode)?;
            (nll_node(&mut tape, logp, pair.tgt.ids(), cfg.label_smoothing)?, None)
        }
        ObjectiveChoice::Smrt => {
            let teacher = teacher
                .ok_or_else(|| Error::InvalidConfig("paraphrase objective selected but no teacher given".into()))?;
            let w = cfg.smrt.effective_w().min(teacher.vocab_size());
            let path = sample_paraphrase_at(teacher, pair.tgt.ids(), w, cfg.seed, epoch, index)?;
            let logp = student.forward(&mut tape, pair.src.ids(), &path.decoder_input(), mode)?;
            let loss = match cfg.smrt.dist_loss {
                DistLoss::Nll => nll_node(&mut tape, logp, path.tokens.ids(), cfg.label_smoothing)?,
                DistLoss::Smrt if cfg.smrt.truncated_targets => {
                    let dists = path.truncated_dists(cfg.smrt.w)?;
                    smrt_node(&mut tape, logp, &dists)?
                }
                DistLoss::Smrt => smrt_node(&mut tape, logp, &path.teacher_dists)?,
            };
            (loss, Some(path))
        }
    };
    let value = tape.scalar(loss);
    let grads = if with_grads && value.is_finite() {
        Some(student.backward(&tape, loss)?)
    } else {
        None
    };
    Ok(SentenceStep {
        choice,
        loss: value,
        grads,
        path,
    })
}

pub struct TrainOutcome {
    pub records: Vec<CheckpointRecord>,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Parameters from the best epoch.
    pub best: Model,
}

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics)
    }
}

/// Where training writes artifacts. With no directory everything stays in
/// memory.
#[derive(Default, Clone, Copy)]
pub struct TrainOutput<'a> {
    pub dir: Option<&'a Path>,
    /// Target vocabulary, used to render paraphrase dumps as text.
    pub vocab: Option<&'a Vocab>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn describe_batch(train: &[EncodedPair], batch: &[usize], epoch: usize, at: usize, loss: f64) -> String {
    let mut s = format!("epoch {epoch}: sentence {at} gave loss {loss}\n");
    for &i in batch {
        let _ = writeln!(s, "{i}\t{:?}\t{:?}", train[i].src.ids(), train[i].tgt.ids());
    }
    s
}

/// Trains `student` in place and returns per-epoch records plus the best
/// model by validation perplexity (ties go to the earlier epoch).
pub fn train<T: Autoregressive>(
    student: &mut Model,
    teacher: Option<&T>,
    train: &[EncodedPair],
    valid: &[EncodedPair],
    cfg: &TrainConfig,
    out: TrainOutput,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if valid.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let policy = cfg.mix();
    let teacher = if policy.p > 0.0 {
        match teacher {
            Some(t) if t.vocab_size() == student.config.tgt_vocab => Some(t),
            Some(t) => {
                return Err(Error::InvalidConfig(format!(
                    "teacher vocabulary {} differs from student target vocabulary {}",
                    t.vocab_size(),
                    student.config.tgt_vocab
                )))
            }
            None => return Err(Error::InvalidConfig("mixing probability > 0 needs a teacher".into())),
        }
    } else {
        if teacher.is_some() {
            log::warn!("teacher ignored: mixing probability is 0");
        }
        None
    };
    if let Some(dir) = out.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = AdamState::new(student.params());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, &[epoch as u64]));
        let (mut sum_nll, mut sum_smrt, mut n_nll, mut n_smrt) = (0.0, 0.0, 0usize, 0usize);
        let mut dump = String::new();

        for (b, batch) in order.chunks(cfg.batch_sentences).enumerate() {
            let mut acc = Gradients::zeros_like(student);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let choice = match teacher {
                    Some(_) => policy.choose(i, epoch),
                    None => ObjectiveChoice::Nll,
                };
                let step = sentence_step(student, teacher, &train[i], i, epoch, cfg, choice, true)?;
                if !step.loss.is_finite() {
                    let diagnostic = describe_batch(train, batch, epoch, i, step.loss);
                    if let Some(dir) = out.dir {
                        write(&dir.join("nonfinite_batch.txt"), &diagnostic)?;
                    }
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        diagnostic,
                    });
                }
                match choice {
                    ObjectiveChoice::Nll => {
                        sum_nll += step.loss;
                        n_nll += 1;
                    }
                    ObjectiveChoice::Smrt => {
                        sum_smrt += step.loss;
                        n_smrt += 1;
                    }
                }
                if cfg.dump_paraphrases {
                    if let Some(p) = &step.path {
                        let render = |t: &TokenSeq| match out.vocab {
                            Some(v) => v.decode(t).unwrap_or_default(),
                            None => format!("{:?}", t.ids()),
                        };
                        dump.push_str(&dump_line(&render(&p.source_ref), &render(&p.tokens)));
                        dump.push('\n');
                    }
                }
                if let Some(g) = &step.grads {
                    acc.add_scaled(g, scale);
                }
            }
            let norm = acc.global_norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    diagnostic: describe_batch(train, batch, epoch, batch[0], norm),
                });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                acc.scale(cfg.clip_norm / norm);
            }
            let lr = cfg.lr_at(adam.step_count + 1);
            adam_step(
                student.params_mut(),
                &acc.grads,
                &mut adam,
                lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )?;
        }
        let epoch_seconds = started.elapsed().as_secs_f64();

        let valid_ppl = perplexity(student, valid)?;
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        metrics.push(EpochMetrics {
            epoch,
            loss_nll: mean(sum_nll, n_nll),
            loss_smrt: mean(sum_smrt, n_smrt),
            n_nll,
            n_smrt,
            valid_ppl,
        });
        let path = match out.dir {
            Some(dir) => {
                let p = dir.join(format!("epoch{epoch:03}.ckpt"));
                student.save(&p, epoch, valid_ppl)?;
                write(&dir.join("metrics.csv"), &metrics_csv(&metrics))?;
                if cfg.dump_paraphrases && !dump.is_empty() {
                    write(&dir.join(format!("paraphrases_epoch{epoch:03}.tsv")), &dump)?;
                }
                Some(p)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}: nll {:?} ({n_nll}) smrt {:?} ({n_smrt}) valid ppl {valid_ppl:.4} in {epoch_seconds:.2}s",
            mean(sum_nll, n_nll),
            mean(sum_smrt, n_smrt)
        );
        records.push(CheckpointRecord {
            epoch,
            valid_ppl,
            path,
            epoch_seconds,
        });
        if best.as_ref().is_none_or(|(_, ppl, _)| valid_ppl < *ppl) {
            best = Some((epoch, valid_ppl, student.clone()));
        }
    }

    let (best_epoch, best_ppl, best) = best.expect("at least one epoch");
    if let Some(dir) = out.dir {
        write(&dir.join("timing.csv"), &timing_csv(&records))?;
        best.save(&dir.join("best.ckpt"), best_epoch, best_ppl)?;
    }
    Ok(TrainOutcome {
        records,
        metrics,
        best_epoch,
        best,
    })
}

/// exp of the mean per-token NLL (no smoothing, PAD excluded) in eval mode.
pub fn perplexity(model: &Model, pairs: &[EncodedPair]) -> Result<f64> {
    let (total, tokens) = nll_sum(model, pairs)?;
    if tokens == 0 {
        return Err(Error::EmptyInput("evaluation split"));
    }
    Ok((total / tokens as f64).exp())
}

/// Summed unsmoothed NLL and token count over `pairs`.
pub fn nll_sum(model: &Model, pairs: &[EncodedPair]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for pair in pairs {
        let mut tape = Tape::inference(model.params());
        let logp = model.forward(&mut tape, pair.src.ids(), &pair.tgt.shifted_right().0, Mode::Eval)?;
        let lp = tape.value(logp);
        for (r, &y) in pair.tgt.ids().iter().enumerate() {
            if y != PAD {
                total -= lp.get(r, y as usize);
                tokens += 1;
            }
        }
    }
    Ok((total, tokens))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median epoch time of `records` over the median of `baseline`.
pub fn timing_report(records: &[CheckpointRecord], baseline: &[CheckpointRecord]) -> f64 {
    let mut a: Vec<f64> = records.iter().map(|r| r.epoch_seconds).collect();
    let mut b: Vec<f64> = baseline.iter().map(|r| r.epoch_seconds).collect();
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    median(&mut a) / median(&mut b)
}
