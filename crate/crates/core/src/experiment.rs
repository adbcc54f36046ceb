//! End-to-end experiment runs: data, subwords, teacher, training, decoding
//! and scoring, plus the ablation grids and result tables built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{
    back_translate, combine_for_smrt, concat_augmented, paraphrase_corpus, reverse_pairs, ParaphraseMode,
};
use crate::corpus::{gen_synthetic, load_parallel, split, LexiconParams, RawPair, SyntheticCorpus, TokenOracle};
use crate::decoder::{beam_decode, default_max_len};
use crate::error::{Error, Result};
use crate::evaluate::{
    bleu_from_stats, corpus_bleu, corpus_stats, paired_bootstrap_stats, parse_ref_set, sum_stats, BleuReport,
    SentenceStats,
};
use crate::objectives::{DistLoss, OracleTeacher, PathSampling, SmrtSettings};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::seqmodel::{Model, ModelConfig};
use crate::subword::{train_subword, TokenSeq, Vocab};
use crate::trainer::{timing_report, train, CheckpointRecord, EncodedPair, TrainConfig, TrainOutput};

/// Training condition of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Label-smoothed NLL on the single reference.
    Baseline,
    /// NLL mixed with the paraphrase objective, as configured in `train.smrt`.
    Smrt,
    /// The paraphrase objective with the distribution loss and/or sampling
    /// switched off.
    Ablation { dist_loss: bool, sampling: bool },
    /// NLL on the original pairs plus one teacher paraphrase per pair.
    Augment { mode: ParaphraseMode },
    /// NLL on bitext plus back-translated pairs.
    Bt { ratio: f64 },
    /// The paraphrase objective on bitext plus back-translated pairs.
    SmrtBt { ratio: f64 },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Baseline => "baseline".into(),
            Condition::Smrt => "smrt".into(),
            Condition::Ablation { dist_loss, sampling } => {
                format!("ablation-d{}-s{}", *dist_loss as u8, *sampling as u8)
            }
            Condition::Augment { mode } => format!("augment-{}", mode_name(*mode)),
            Condition::Bt { ratio } => format!("bt-{ratio}"),
            Condition::SmrtBt { ratio } => format!("smrt-bt-{ratio}"),
        }
    }

    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Condition::Baseline | Condition::Bt { .. })
    }

    fn uses_mix(&self) -> bool {
        matches!(
            self,
            Condition::Smrt | Condition::Ablation { .. } | Condition::SmrtBt { .. }
        )
    }
}

fn mode_name(m: ParaphraseMode) -> &'static str {
    match m {
        ParaphraseMode::Beam => "beam",
        ParaphraseMode::Greedy => "greedy",
        ParaphraseMode::Sample => "sample",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub slots: usize,
    pub class_min: usize,
    pub class_max: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub lexicon_seed: u64,
    #[serde(default)]
    pub reverse_source: bool,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    /// Held-out target sentences used as monolingual data.
    #[serde(default)]
    pub mono_size: usize,
}

impl SyntheticConfig {
    pub fn lexicon(&self) -> LexiconParams {
        LexiconParams {
            slots: self.slots,
            class_min: self.class_min,
            class_max: self.class_max,
            len_min: self.len_min,
            len_max: self.len_max,
            lexicon_seed: self.lexicon_seed,
            reverse_source: self.reverse_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesConfig {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    #[serde(default)]
    pub mono_tgt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Synthetic(SyntheticConfig),
    Files(FilesConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub src_size: usize,
    pub tgt_size: usize,
}

/// A named preset with optional overrides; vocabulary sizes come from the
/// trained subword models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dec_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

impl ModelSpec {
    pub fn preset(name: &str) -> Self {
        ModelSpec {
            preset: name.into(),
            enc_layers: None,
            dec_layers: None,
            model_dim: None,
            heads: None,
            ffn_dim: None,
            dropout: None,
            max_len: None,
        }
    }

    pub fn resolve(&self, src_vocab: usize, tgt_vocab: usize, param_seed: u64) -> Result<ModelConfig> {
        let mut c = ModelConfig::preset(&self.preset, src_vocab, tgt_vocab)
            .ok_or_else(|| Error::Config(format!("unknown model preset {:?}", self.preset)))?;
        c.enc_layers = self.enc_layers.unwrap_or(c.enc_layers);
        c.dec_layers = self.dec_layers.unwrap_or(c.dec_layers);
        c.model_dim = self.model_dim.unwrap_or(c.model_dim);
        c.heads = self.heads.unwrap_or(c.heads);
        c.ffn_dim = self.ffn_dim.unwrap_or(c.ffn_dim);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.max_len = self.max_len.unwrap_or(c.max_len);
        c.param_seed = param_seed;
        c.validate()?;
        Ok(c)
    }
}

/// The paraphraser. On the synthetic task it is trained against the exact
/// oracle distribution on `sentences` reference sentences of its own; on file
/// tasks it is trained with NLL on the given paraphrase pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub sentences: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub paraphrase_src: Option<PathBuf>,
    #[serde(default)]
    pub paraphrase_tgt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub beam: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam: 5,
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Seed of the student run: parameter init, shuffling, mixing, sampling.
    pub seed: u64,
    /// Seeds averaged over by the ablation commands; empty means `[seed]`.
    #[serde(default)]
    pub eval_seeds: Vec<u64>,
    pub condition: Condition,
    pub task: TaskConfig,
    pub vocab: VocabConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.teacher.train.validate()?;
        if self.eval.beam == 0 {
            return Err(Error::Config("eval.beam must be at least 1".into()));
        }
        match (&self.task, self.condition.needs_teacher()) {
            (TaskConfig::Synthetic(s), true) if s.slots > 0 && self.teacher.sentences == 0 => Err(Error::Config(
                "teacher.sentences must be positive on the synthetic task".into(),
            )),
            (TaskConfig::Files(_), true)
                if self.teacher.paraphrase_src.is_none() || self.teacher.paraphrase_tgt.is_none() =>
            {
                Err(Error::Config(
                    "file tasks need teacher.paraphrase_src and teacher.paraphrase_tgt".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Hex digest of the canonical serialization.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    pub fn run_name(&self) -> String {
        let h = self.hash();
        let label = self.condition.label();
        if self.name.is_empty() {
            format!("{label}-{}", &h[..12])
        } else {
            format!("{}-{label}-{}", self.name, &h[..12])
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.eval_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.eval_seeds.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seed, ..self.clone() }
    }

    pub fn with_condition(&self, condition: Condition) -> Self {
        ExperimentConfig {
            condition,
            ..self.clone()
        }
    }

    /// Student training config with the condition's objective settings.
    pub fn student_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        match self.condition {
            Condition::Baseline | Condition::Augment { .. } | Condition::Bt { .. } => t.smrt.p = 0.0,
            Condition::Smrt | Condition::SmrtBt { .. } => {}
            Condition::Ablation { dist_loss, sampling } => {
                t.smrt.dist_loss = if dist_loss { DistLoss::Smrt } else { DistLoss::Nll };
                t.smrt.sampling = if sampling {
                    PathSampling::Sampled
                } else {
                    PathSampling::Greedy
                };
            }
        }
        if self.condition.uses_mix() && t.smrt.p == 0.0 {
            t.smrt.p = SmrtSettings::default().p;
        }
        t
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a run needs that does not depend on the condition.
pub struct PreparedData {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub train: Vec<EncodedPair>,
    pub valid: Vec<EncodedPair>,
    pub test: Vec<EncodedPair>,
    pub train_raw: Vec<RawPair>,
    pub valid_raw: Vec<RawPair>,
    pub test_raw: Vec<RawPair>,
    /// Scoring references per test sentence (the full oracle set on the
    /// synthetic task).
    pub test_refs: Vec<Vec<String>>,
    pub mono: Vec<TokenSeq>,
    /// Synthetic task: the student corpus and the teacher's own corpus.
    pub synthetic: Option<(SyntheticCorpus, SyntheticCorpus)>,
    pub teacher_pairs: Vec<EncodedPair>,
}

impl PreparedData {
    /// Digest of the tokenized splits, shared by every condition.
    pub fn hash(&self) -> String {
        let mut s = String::new();
        for (name, part) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            let _ = writeln!(s, "{name}");
            for p in part {
                let _ = writeln!(s, "{:?}\t{:?}", p.src.ids(), p.tgt.ids());
            }
        }
        hex_digest(s.as_bytes())
    }

    /// Same data with the training set restricted to `indices`.
    pub fn with_train_subset(&self, indices: &[usize]) -> PreparedData {
        PreparedData {
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            train: indices.iter().map(|&i| self.train[i].clone()).collect(),
            valid: self.valid.clone(),
            test: self.test.clone(),
            train_raw: indices.iter().map(|&i| self.train_raw[i].clone()).collect(),
            valid_raw: self.valid_raw.clone(),
            test_raw: self.test_raw.clone(),
            test_refs: self.test_refs.clone(),
            mono: self.mono.clone(),
            synthetic: self.synthetic.clone(),
            teacher_pairs: self.teacher_pairs.clone(),
        }
    }
}

fn encode_all(sv: &Vocab, tv: &Vocab, pairs: &[RawPair]) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair::encode(sv, tv, &p.source, &p.target))
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    match &cfg.task {
        TaskConfig::Synthetic(s) => prepare_synthetic(cfg, s),
        TaskConfig::Files(f) => prepare_files(cfg, f),
    }
}

fn prepare_synthetic(cfg: &ExperimentConfig, s: &SyntheticConfig) -> Result<PreparedData> {
    let lex = s.lexicon();
    let total = s.train_size + s.valid_size + s.test_size;
    let corpus = gen_synthetic(&lex.task(total, s.data_seed)?)?;
    let idx: Vec<usize> = (0..total).collect();
    let parts = split(&idx, s.valid_size, s.test_size, s.data_seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| corpus.pairs[i].clone()).collect::<Vec<_>>();
    let (train_raw, valid_raw, test_raw) = (pick(&parts.train), pick(&parts.valid), pick(&parts.test));

    let teacher_n = cfg.teacher.sentences.max(1);
    let teacher_corpus = gen_synthetic(&lex.task(teacher_n, cfg.teacher.data_seed)?)?;
    let src_lines: Vec<&str> = train_raw.iter().map(|p| p.source.as_str()).collect();
    let tgt_lines: Vec<&str> = teacher_corpus.pairs.iter().map(|p| p.target.as_str()).collect();
    let src_vocab = train_subword(&src_lines, cfg.vocab.src_size)?;
    let tgt_vocab = train_subword(&tgt_lines, cfg.vocab.tgt_size)?;

    let mono = if s.mono_size > 0 {
        let mono_seed = derive_seed(s.data_seed, Stream::Synthetic, &[2]);
        let m = gen_synthetic(&lex.task(s.mono_size, mono_seed)?)?;
        m.pairs.iter().map(|p| tgt_vocab.encode(&p.target)).collect()
    } else {
        Vec::new()
    };
    let teacher_pairs = teacher_corpus
        .pairs
        .iter()
        .map(|p| EncodedPair::encode(&tgt_vocab, &tgt_vocab, &p.target, &p.target))
        .collect();
    Ok(PreparedData {
        train: encode_all(&src_vocab, &tgt_vocab, &train_raw),
        valid: encode_all(&src_vocab, &tgt_vocab, &valid_raw),
        test: encode_all(&src_vocab, &tgt_vocab, &test_raw),
        test_refs: parts.test.iter().map(|&i| corpus.oracle_refs(i)).collect(),
        src_vocab,
        tgt_vocab,
        train_raw,
        valid_raw,
        test_raw,
        mono,
        synthetic: Some((corpus, teacher_corpus)),
        teacher_pairs,
    })
}

fn prepare_files(cfg: &ExperimentConfig, f: &FilesConfig) -> Result<PreparedData> {
    let train_raw = load_parallel(&f.train_src, &f.train_tgt)?.pairs;
    let valid_raw = load_parallel(&f.valid_src, &f.valid_tgt)?.pairs;
    let test_raw = load_parallel(&f.test_src, &f.test_tgt)?.pairs;
    let para = match (&cfg.teacher.paraphrase_src, &cfg.teacher.paraphrase_tgt) {
        (Some(a), Some(b)) => load_parallel(a, b)?.pairs,
        _ => Vec::new(),
    };
    let src_lines: Vec<&str> = train_raw.iter().map(|p| p.source.as_str()).collect();
    let mut tgt_lines: Vec<&str> = para.iter().map(|p| p.target.as_str()).collect();
    if tgt_lines.is_empty() {
        tgt_lines = train_raw.iter().map(|p| p.target.as_str()).collect();
    }
    let src_vocab = train_subword(&src_lines, cfg.vocab.src_size)?;
    let tgt_vocab = train_subword(&tgt_lines, cfg.vocab.tgt_size)?;
    let mono = match &f.mono_tgt {
        Some(p) => read_lines(p)?.iter().map(|l| tgt_vocab.encode(l)).collect(),
        None => Vec::new(),
    };
    Ok(PreparedData {
        train: encode_all(&src_vocab, &tgt_vocab, &train_raw),
        valid: encode_all(&src_vocab, &tgt_vocab, &valid_raw),
        test: encode_all(&src_vocab, &tgt_vocab, &test_raw),
        test_refs: test_raw.iter().map(|p| vec![p.target.clone()]).collect(),
        teacher_pairs: encode_all(&tgt_vocab, &tgt_vocab, &para),
        src_vocab,
        tgt_vocab,
        train_raw,
        valid_raw,
        test_raw,
        mono,
        synthetic: None,
    })
}

/// Hex key of everything the teacher depends on.
pub fn teacher_key(cfg: &ExperimentConfig, data: &PreparedData) -> String {
    let mut s = toml::to_string(&cfg.teacher).expect("teacher config serializes");
    s.push_str(&data.tgt_vocab.fingerprint());
    if let TaskConfig::Synthetic(t) = &cfg.task {
        s.push_str(&toml::to_string(&t.lexicon()).expect("lexicon serializes"));
    }
    hex_digest(s.as_bytes())
}

/// Trains the paraphraser, or loads it from `cache_dir` when a previous run
/// with the same key left a checkpoint there.
pub fn train_teacher(cfg: &ExperimentConfig, data: &PreparedData, cache_dir: Option<&Path>) -> Result<Model> {
    let v = data.tgt_vocab.size();
    let mcfg = cfg.teacher.model.resolve(v, v, cfg.teacher.train.seed)?;
    if let Some(dir) = cache_dir {
        let ckpt = dir.join("best.ckpt");
        if ckpt.exists() {
            log::info!("reusing teacher from {}", dir.display());
            return Ok(Model::load(&ckpt, &mcfg)?.0);
        }
    }
    if data.teacher_pairs.len() < 2 {
        return Err(Error::EmptyInput("teacher training data"));
    }
    let n_valid = (data.teacher_pairs.len() / 10).clamp(1, 200);
    let (tv, tt) = data.teacher_pairs.split_at(n_valid);
    let mut model = Model::init(&mcfg)?;
    let out = TrainOutput {
        dir: cache_dir,
        vocab: Some(&data.tgt_vocab),
    };
    let outcome = match &data.synthetic {
        Some((_, teacher_corpus)) => {
            let oracle = OracleTeacher::new(TokenOracle::new(teacher_corpus, &data.tgt_vocab));
            let mut tc = cfg.teacher.train.clone();
            tc.smrt.p = 1.0;
            train(&mut model, Some(&oracle), tt, tv, &tc, out)?
        }
        None => {
            let mut tc = cfg.teacher.train.clone();
            tc.smrt.p = 0.0;
            train(&mut model, None::<&Model>, tt, tv, &tc, out)?
        }
    };
    Ok(outcome.best)
}

/// Outcome of training and evaluating one condition.
pub struct RunResult {
    pub bleu: BleuReport,
    pub hyps: Vec<String>,
    pub stats: Vec<SentenceStats>,
    pub metrics_csv: String,
    pub records: Vec<CheckpointRecord>,
    pub best_epoch: usize,
    pub model: Model,
}

/// Beam-decodes `pairs` and detokenizes.
pub fn translate(model: &Model, tgt_vocab: &Vocab, pairs: &[EncodedPair], beam: usize) -> Result<Vec<String>> {
    pairs
        .iter()
        .map(|p| {
            let d = beam_decode(model, p.src.ids(), beam, default_max_len(p.src.len()))?;
            tgt_vocab.decode(&d.tokens)
        })
        .collect()
}

/// Trains the student for `cfg.condition` and scores it on the test split.
pub fn run_condition(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    teacher: Option<&Model>,
    dir: Option<&Path>,
) -> Result<RunResult> {
    let tc = cfg.student_train();
    let teacher = if cfg.condition.needs_teacher() {
        Some(teacher.ok_or_else(|| Error::Config(format!("{} needs a teacher", cfg.condition.label())))?)
    } else {
        None
    };
    let training: Vec<EncodedPair> = match cfg.condition {
        Condition::Baseline | Condition::Smrt | Condition::Ablation { .. } => data.train.clone(),
        Condition::Augment { mode } => {
            let para = paraphrase_corpus(teacher.expect("checked"), &data.train, mode, cfg.seed)?;
            concat_augmented(&data.train, &para)
        }
        Condition::Bt { ratio } | Condition::SmrtBt { ratio } => {
            let rev_cfg = cfg
                .model
                .resolve(data.tgt_vocab.size(), data.src_vocab.size(), cfg.seed)?;
            let mut reverse = Model::init(&rev_cfg)?;
            let mut rt = cfg.train.clone();
            rt.seed = cfg.seed;
            rt.smrt.p = 0.0;
            let rev = train(
                &mut reverse,
                None::<&Model>,
                &reverse_pairs(&data.train),
                &reverse_pairs(&data.valid),
                &rt,
                TrainOutput::default(),
            )?;
            let bt = back_translate(&rev.best, &data.mono, ratio, data.train.len(), cfg.seed)?;
            let tagged = combine_for_smrt(&data.train, &bt);
            if let Some(d) = dir {
                tagged.write_tags(&d.join("train.origin"))?;
            }
            tagged.pairs
        }
    };
    let mcfg = cfg
        .model
        .resolve(data.src_vocab.size(), data.tgt_vocab.size(), cfg.seed)?;
    let mut student = Model::init(&mcfg)?;
    let train_dir = dir.map(|d| d.join("train"));
    let outcome = train(
        &mut student,
        teacher,
        &training,
        &data.valid,
        &tc,
        TrainOutput {
            dir: train_dir.as_deref(),
            vocab: Some(&data.tgt_vocab),
        },
    )?;
    let hyps = translate(&outcome.best, &data.tgt_vocab, &data.test, cfg.eval.beam)?;
    let stats = corpus_stats(&hyps, &data.test_refs)?;
    let bleu = bleu_from_stats(&sum_stats(&stats));
    Ok(RunResult {
        bleu,
        hyps,
        stats,
        metrics_csv: outcome.metrics_csv(),
        records: outcome.records,
        best_epoch: outcome.best_epoch,
        model: outcome.best,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    write(path, s)
}

/// Writes the data splits, the scoring references and (synthetic task) the
/// oracle sidecar into `dir`.
pub fn write_splits(data: &PreparedData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, part) in [
        ("train", &data.train_raw),
        ("valid", &data.valid_raw),
        ("test", &data.test_raw),
    ] {
        crate::corpus::write_parallel(part, &dir.join(format!("{name}.src")), &dir.join(format!("{name}.tgt")))?;
    }
    let refs: Vec<String> = data
        .test_refs
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<_, _>>()?;
    write_lines(&dir.join("test.refs.jsonl"), refs)?;
    if let Some((corpus, _)) = &data.synthetic {
        corpus.write_oracle_jsonl(&dir.join("oracle.jsonl"))?;
    }
    Ok(())
}

/// [`write_splits`] plus the vocabularies and the data digest.
pub fn write_data(data: &PreparedData, dir: &Path) -> Result<()> {
    write_splits(data, dir)?;
    data.src_vocab.save(&dir.join("vocab.src"))?;
    data.tgt_vocab.save(&dir.join("vocab.tgt"))?;
    write(&dir.join("data.sha256"), format!("{}\n", data.hash()))
}

/// A finished run loaded back from its directory.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub model: Model,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let src_vocab = Vocab::load(&dir.join("data").join("vocab.src"))?;
    let tgt_vocab = Vocab::load(&dir.join("data").join("vocab.tgt"))?;
    let mcfg = config.model.resolve(src_vocab.size(), tgt_vocab.size(), config.seed)?;
    let (model, _) = Model::load(&dir.join("train").join("best.ckpt"), &mcfg)?;
    Ok(LoadedRun {
        config,
        model,
        src_vocab,
        tgt_vocab,
    })
}

fn read_refs_jsonl(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_ref_set)
        .collect()
}

/// Builds a table from every finished run directory under `root`: one row
/// per condition (baseline first), one column per experiment name, BLEU
/// averaged over seeds and recomputed from the stored hypotheses.
pub fn collect_results(root: &Path) -> Result<ResultsTable> {
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("DONE").exists() && p.join("bleu.json").exists())
        .collect();
    entries.sort();
    // (condition, column) -> (scores per seed, sentence stats, report files)
    type Acc = (Vec<f64>, Vec<SentenceStats>, Vec<PathBuf>);
    let mut cells: BTreeMap<(String, String), Acc> = BTreeMap::new();
    let mut cols: Vec<String> = Vec::new();
    let mut rows: Vec<String> = Vec::new();
    for dir in entries {
        let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
        let hyps = read_lines_keep_empty(&dir.join("test.hyp"))?;
        let refs = read_refs_jsonl(&dir.join("data").join("test.refs.jsonl"))?;
        let stats = corpus_stats(&hyps, &refs)?;
        let total = sum_stats(&stats);
        let col = if cfg.name.is_empty() {
            "bleu".to_string()
        } else {
            cfg.name.clone()
        };
        let row = cfg.condition.label();
        if !cols.contains(&col) {
            cols.push(col.clone());
        }
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        let e = cells.entry((row, col)).or_default();
        e.0.push(bleu_from_stats(&total).score);
        e.1.extend(stats);
        e.2.push(dir.join("bleu.json"));
    }
    if let Some(i) = rows.iter().position(|r| r == "baseline") {
        let b = rows.remove(i);
        rows.insert(0, b);
    }
    Ok(ResultsTable {
        rows: rows
            .iter()
            .map(|r| ResultRow {
                name: r.clone(),
                cells: cols
                    .iter()
                    .map(|c| {
                        cells.get(&(r.clone(), c.clone())).map(|(scores, stats, reports)| Cell {
                            bleu: scores.iter().sum::<f64>() / scores.len() as f64,
                            stats: stats.clone(),
                            reports: reports.clone(),
                        })
                    })
                    .collect(),
            })
            .collect(),
        cols,
    })
}

fn read_lines_keep_empty(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// A teacher cached under `root`, trained on first use.
pub fn cached_teacher(cfg: &ExperimentConfig, data: &PreparedData, root: &Path) -> Result<Model> {
    let dir = root.join(format!("teacher-{}", &teacher_key(cfg, data)[..12]));
    train_teacher(cfg, data, Some(&dir))
}

/// Runs one configured experiment under `out_root/<run name>` and returns
/// that directory. On failure the directory keeps its partial artifacts and
/// a `FAILED` marker.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = out_root.join(cfg.run_name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for marker in ["FAILED", "DONE"] {
        let _ = fs::remove_file(dir.join(marker));
    }
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let result = (|| -> Result<()> {
        let data = prepare_data(cfg)?;
        run_prepared(cfg, &data, out_root, &dir).map(|_| ())
    })();
    match result {
        Ok(()) => {
            write(&dir.join("DONE"), "")?;
            Ok(dir)
        }
        Err(e) => {
            let _ = write(&dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

/// Runs a condition on prepared data and writes its artifacts to `dir`.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData, out_root: &Path, dir: &Path) -> Result<RunResult> {
    write_data(data, &dir.join("data"))?;
    let teacher = if cfg.condition.needs_teacher() {
        Some(cached_teacher(cfg, data, out_root)?)
    } else {
        None
    };
    let r = run_condition(cfg, data, teacher.as_ref(), Some(dir))?;
    write_lines(&dir.join("test.hyp"), &r.hyps)?;
    write(&dir.join("bleu.json"), format!("{}\n", r.bleu.to_line()))?;
    Ok(r)
}

/// One condition's scores in a [`ResultsTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub bleu: f64,
    /// Per-sentence statistics (concatenated over seeds) for significance tests.
    pub stats: Vec<SentenceStats>,
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub name: String,
    pub cells: Vec<Option<Cell>>,
}

/// BLEU per condition (rows) and dataset (columns). Row 0 is the baseline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub cols: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Improvement of `row` over the baseline row in column `col`.
    pub fn delta(&self, row: usize, col: usize) -> Option<f64> {
        let base = self.rows.first()?.cells.get(col)?.as_ref()?.bleu;
        Some(self.rows.get(row)?.cells.get(col)?.as_ref()?.bleu - base)
    }

    /// Plot data: one line per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,dataset,bleu,delta\n");
        for (r, row) in self.rows.iter().enumerate() {
            for (c, cell) in row.cells.iter().enumerate() {
                if let Some(cell) = cell {
                    let d = if r == 0 {
                        String::new()
                    } else {
                        format!("{:.4}", self.delta(r, c).unwrap_or(0.0))
                    };
                    let _ = writeln!(s, "{},{},{:.4},{}", row.name, self.cols[c], cell.bleu, d);
                }
            }
        }
        s
    }
}

/// Marker for a cell whose gap to the column best is not significant.
pub const NOT_SIGNIFICANT_FROM_BEST: &str = "†";

/// Aligned text table. The best value per column is wrapped in `**`
/// (ties all marked); `*` marks a significant improvement over the baseline
/// (paired bootstrap, p < 0.05) and `†` a cell not significantly worse than
/// the best.
pub fn format_results(table: &ResultsTable, resamples: usize, seed: u64) -> Result<String> {
    let n_rows = table.rows.len();
    // Cell text, column-major.
    let mut text: Vec<Vec<String>> = Vec::with_capacity(table.cols.len());
    for c in 0..table.cols.len() {
        let cells: Vec<Option<&Cell>> = table
            .rows
            .iter()
            .map(|r| r.cells.get(c).and_then(Option::as_ref))
            .collect();
        let best = cells.iter().flatten().map(|x| x.bleu).fold(f64::NEG_INFINITY, f64::max);
        let best_cell = cells.iter().flatten().find(|x| x.bleu == best).copied();
        let mut column = vec![String::new(); n_rows];
        for (r, cell) in cells.iter().enumerate() {
            let Some(cell) = *cell else { continue };
            let mut s = if cell.bleu == best && n_rows > 1 {
                format!("**{:.2}**", cell.bleu)
            } else {
                format!("{:.2}", cell.bleu)
            };
            if r > 0 {
                if let Some(d) = table.delta(r, c) {
                    let _ = write!(s, " ({d:+.2})");
                }
                if let Some(base) = cells[0] {
                    let sig = paired_bootstrap_stats(&cell.stats, &base.stats, resamples, seed)?;
                    if sig.significant_95 && sig.delta > 0.0 {
                        s.push('*');
                    }
                }
            }
            if let Some(b) = best_cell {
                if cell.bleu < best {
                    let sig = paired_bootstrap_stats(&b.stats, &cell.stats, resamples, seed)?;
                    if !sig.significant_95 {
                        s.push_str(NOT_SIGNIFICANT_FROM_BEST);
                    }
                }
            }
            column[r] = s;
        }
        text.push(column);
    }
    let name_w = table
        .rows
        .iter()
        .map(|r| r.name.chars().count())
        .max()
        .unwrap_or(0)
        .max(9);
    let col_w: Vec<usize> = text
        .iter()
        .zip(&table.cols)
        .map(|(column, name)| {
            column
                .iter()
                .map(|t| t.chars().count())
                .chain([name.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "condition");
    for (c, name) in table.cols.iter().enumerate() {
        let _ = write!(out, " | {:<w$}", name, w = col_w[c]);
    }
    out.push('\n');
    for (r, row) in table.rows.iter().enumerate() {
        let _ = write!(out, "{:<name_w$}", row.name);
        for (column, w) in text.iter().zip(&col_w) {
            let cell = &column[r];
            let pad = w - cell.chars().count();
            let _ = write!(out, " | {cell}{}", " ".repeat(pad));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Row labels of the method ablation, in order.
pub const ABLATION_ROWS: [&str; 5] = ["baseline", "(1)", "(2)", "(3)", "(4) this work"];

pub fn ablation_conditions() -> [Condition; 5] {
    [
        Condition::Baseline,
        Condition::Ablation {
            dist_loss: false,
            sampling: false,
        },
        Condition::Ablation {
            dist_loss: false,
            sampling: true,
        },
        Condition::Ablation {
            dist_loss: true,
            sampling: false,
        },
        Condition::Ablation {
            dist_loss: true,
            sampling: true,
        },
    ]
}

/// Runs the given conditions over every eval seed on shared data and
/// collects one column of results.
pub fn run_grid(
    base: &ExperimentConfig,
    rows: &[(String, Condition)],
    column: &str,
    out_root: &Path,
) -> Result<ResultsTable> {
    base.validate()?;
    let data = prepare_data(base)?;
    let data_hash = data.hash();
    let mut table = ResultsTable {
        cols: vec![column.to_string()],
        rows: Vec::new(),
    };
    let mut timing = String::from("condition,seed,epoch_time_ratio\n");
    let mut baseline_records: BTreeMap<u64, Vec<CheckpointRecord>> = BTreeMap::new();
    for (name, cond) in rows {
        let mut sum = 0.0;
        let mut stats = Vec::new();
        let mut reports = Vec::new();
        let seeds = base.seeds();
        for &seed in &seeds {
            let cfg = base.with_condition(*cond).with_seed(seed);
            let dir = out_root.join(cfg.run_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write(&dir.join("config.toml"), cfg.to_toml())?;
            let r = run_prepared(&cfg, &data, out_root, &dir)?;
            let written = fs::read_to_string(dir.join("data").join("data.sha256")).map_err(|e| Error::io(&dir, e))?;
            if written.trim() != data_hash {
                return Err(Error::Config(format!("{name}: data split differs from the other rows")));
            }
            write(&dir.join("DONE"), "")?;
            if *cond == Condition::Baseline {
                baseline_records.insert(seed, r.records.clone());
            } else if let Some(b) = baseline_records.get(&seed) {
                let ratio = timing_report(&r.records, b);
                log::info!("{name} seed {seed}: epoch time {ratio:.2}x baseline");
                let _ = writeln!(timing, "{name},{seed},{ratio:.4}");
            }
            sum += r.bleu.score;
            stats.extend(r.stats);
            reports.push(dir.join("bleu.json"));
        }
        table.rows.push(ResultRow {
            name: name.clone(),
            cells: vec![Some(Cell {
                bleu: sum / seeds.len() as f64,
                stats,
                reports,
            })],
        });
    }
    write(&out_root.join("timing_ratio.csv"), timing)?;
    Ok(table)
}

/// Baseline plus the four ablation conditions with shared data and seeds.
pub fn run_ablation_matrix(base: &ExperimentConfig, out_root: &Path) -> Result<ResultsTable> {
    let rows: Vec<(String, Condition)> = ABLATION_ROWS
        .iter()
        .map(|s| s.to_string())
        .zip(ablation_conditions())
        .collect();
    let column = if base.name.is_empty() {
        "bleu"
    } else {
        base.name.as_str()
    };
    run_grid(base, &rows, column, out_root)
}

/// Nested training subsets: a single seeded permutation, with each size
/// taking a prefix of it (kept in corpus order).
pub fn nested_subsets(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Select, &[1]));
    sizes
        .iter()
        .map(|&k| {
            if k > n {
                return Err(Error::Config(format!("subset size {k} exceeds corpus size {n}")));
            }
            let mut s = perm[..k].to_vec();
            s.sort_unstable();
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataAblationRow {
    pub size: usize,
    pub baseline_bleu: f64,
    pub smrt_bleu: f64,
}

pub fn data_ablation_csv(rows: &[DataAblationRow]) -> String {
    let mut s = String::from("size,baseline_bleu,smrt_bleu,delta\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{:.4}",
            r.size,
            r.baseline_bleu,
            r.smrt_bleu,
            r.smrt_bleu - r.baseline_bleu
        );
    }
    s
}

/// Baseline and SMRT runs per training-subset size.
pub fn run_data_ablation(base: &ExperimentConfig, sizes: &[usize], out_root: &Path) -> Result<Vec<DataAblationRow>> {
    base.validate()?;
    let data = prepare_data(base)?;
    let subsets = nested_subsets(data.train.len(), sizes, base.seed)?;
    let smrt_cfg = base.with_condition(Condition::Smrt);
    let teacher = cached_teacher(&smrt_cfg, &data, out_root)?;
    let mut rows = Vec::new();
    for (&size, subset) in sizes.iter().zip(&subsets) {
        let sub = data.with_train_subset(subset);
        let mut scores = BTreeMap::new();
        for cond in [Condition::Baseline, Condition::Smrt] {
            let mut sum = 0.0;
            for &seed in &base.seeds() {
                let mut cfg = base.with_condition(cond).with_seed(seed);
                cfg.name = format!("{}n{size}", if base.name.is_empty() { "" } else { &base.name });
                let dir = out_root.join(cfg.run_name());
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write(&dir.join("config.toml"), cfg.to_toml())?;
                write_data(&sub, &dir.join("data"))?;
                let r = run_condition(&cfg, &sub, Some(&teacher), Some(&dir))?;
                write_lines(&dir.join("test.hyp"), &r.hyps)?;
                write(&dir.join("bleu.json"), format!("{}\n", r.bleu.to_line()))?;
                write(&dir.join("DONE"), "")?;
                sum += r.bleu.score;
            }
            scores.insert(cond.label(), sum / base.seeds().len() as f64);
        }
        rows.push(DataAblationRow {
            size,
            baseline_bleu: scores["baseline"],
            smrt_bleu: scores["smrt"],
        });
    }
    write(&out_root.join("data_ablation.csv"), data_ablation_csv(&rows))?;
    Ok(rows)
}

/// BLEU of `hyps` against references given one-per-sentence.
pub fn single_ref_bleu(hyps: &[String], refs: &[String]) -> Result<BleuReport> {
    let r: Vec<Vec<&str>> = refs.iter().map(|r| vec![r.as_str()]).collect();
    corpus_bleu(hyps, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            seed = 3
            condition = "baseline"

            [task]
            kind = "synthetic"
            slots = 12
            class_min = 2
            class_max = 2
            len_min = 2
            len_max = 3
            lexicon_seed = 1
            train_size = 40
            valid_size = 8
            test_size = 8
            data_seed = 5
            mono_size = 40

            [vocab]
            src_size = 40
            tgt_size = 60

            [model]
            preset = "tiny"
            model_dim = 16
            ffn_dim = 32
            enc_layers = 1
            dec_layers = 1

            [train]
            epochs = 2
            batch_sentences = 8

            [teacher]
            sentences = 60
            data_seed = 9
            [teacher.model]
            preset = "tiny"
            model_dim = 16
            ffn_dim = 32
            enc_layers = 1
            dec_layers = 1
            [teacher.train]
            epochs = 1
            batch_sentences = 8
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trip_and_hash() {
        let c = small_config();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.with_seed(4).hash(), c.hash());
        let ab = c.with_condition(Condition::Ablation {
            dist_loss: false,
            sampling: true,
        });
        assert_eq!(ExperimentConfig::from_toml(&ab.to_toml()).unwrap(), ab);
        let aug = c.with_condition(Condition::Augment {
            mode: ParaphraseMode::Greedy,
        });
        assert_eq!(ExperimentConfig::from_toml(&aug.to_toml()).unwrap(), aug);
        assert!(c.run_name().starts_with("baseline-"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = small_config().to_toml();
        text.push_str("\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let t = small_config().to_toml().replace("slots = 12", "slots = 12\nslotz = 1");
        assert!(ExperimentConfig::from_toml(&t).is_err());
    }

    #[test]
    fn condition_train_settings() {
        let c = small_config();
        assert_eq!(c.student_train().smrt.p, 0.0);
        let s = c.with_condition(Condition::Ablation {
            dist_loss: false,
            sampling: false,
        });
        let t = s.student_train();
        assert_eq!(
            (t.smrt.p, t.smrt.dist_loss, t.smrt.effective_w()),
            (0.5, DistLoss::Nll, 1)
        );
        assert_eq!(t.seed, 3);
    }

    #[test]
    fn nested_subsets_are_nested() {
        let s = nested_subsets(100, &[15, 25, 50, 100], 4).unwrap();
        for w in s.windows(2) {
            assert!(w[0].iter().all(|i| w[1].contains(i)));
        }
        assert_eq!(s[3], (0..100).collect::<Vec<_>>());
        assert!(nested_subsets(10, &[11], 0).is_err());
    }

    #[test]
    fn end_to_end_runs_write_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let base = small_config();
        let dir = run_experiment(&base, tmp.path()).unwrap();
        for f in [
            "config.toml",
            "DONE",
            "test.hyp",
            "bleu.json",
            "data/data.sha256",
            "train/metrics.csv",
        ] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let smrt = base.with_condition(Condition::Smrt);
        let sdir = run_experiment(&smrt, tmp.path()).unwrap();
        let teachers: Vec<_> = fs::read_dir(tmp.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("teacher-"))
            .collect();
        assert_eq!(teachers.len(), 1);
        assert_eq!(
            fs::read(dir.join("data/data.sha256")).unwrap(),
            fs::read(sdir.join("data/data.sha256")).unwrap()
        );
        let metrics = fs::read_to_string(sdir.join("train/metrics.csv")).unwrap();
        assert!(metrics.lines().count() == 3);
    }

    #[test]
    fn failed_run_leaves_marker() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = small_config();
        c.model.preset = "missing".into();
        assert!(run_experiment(&c, tmp.path()).is_err());
        assert!(tmp.path().join(c.run_name()).join("FAILED").exists());
    }

    fn cell(bleu: f64, stats: Vec<SentenceStats>) -> Option<Cell> {
        Some(Cell {
            bleu,
            stats,
            reports: vec![],
        })
    }

    #[test]
    fn results_formatting() {
        let good = corpus_stats(&["a b c d e"; 6], &vec![vec!["a b c d e"]; 6]).unwrap();
        let bad = corpus_stats(&["a b x d e"; 6], &vec![vec!["a b c d e"]; 6]).unwrap();
        let one = ResultsTable {
            cols: vec!["hu".into()],
            rows: vec![ResultRow {
                name: "baseline".into(),
                cells: cell(2.3, bad.clone()).into_iter().map(Some).collect(),
            }],
        };
        let t = format_results(&one, 100, 0).unwrap();
        assert!(!t.contains('*') && !t.contains('('));

        let two = ResultsTable {
            cols: vec!["hu".into()],
            rows: vec![
                ResultRow {
                    name: "baseline".into(),
                    cells: vec![cell(2.3, bad.clone())],
                },
                ResultRow {
                    name: "(4) this work".into(),
                    cells: vec![cell(5.4, good.clone())],
                },
            ],
        };
        assert!((two.delta(1, 0).unwrap() - 3.1).abs() < 1e-9);
        let t = format_results(&two, 100, 0).unwrap();
        assert!(t.contains("**5.40** (+3.10)*"), "{t}");
        assert!(!t.contains("**2.30**"));

        let tie = ResultsTable {
            cols: vec!["x".into()],
            rows: vec![
                ResultRow {
                    name: "a".into(),
                    cells: vec![cell(4.0, good.clone())],
                },
                ResultRow {
                    name: "b".into(),
                    cells: vec![cell(4.0, good)],
                },
            ],
        };
        assert_eq!(format_results(&tie, 100, 0).unwrap().matches("**4.00**").count(), 2);
        assert!(tie.to_csv().starts_with("condition,dataset,bleu,delta\n"));
    }
}
