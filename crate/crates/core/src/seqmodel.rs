//! Encoder-decoder transformer with exact reverse-mode gradients.
//!
//! Pre-norm layers, fixed sinusoidal positions, no weight tying. The same type
//! serves as the student translation model and as the paraphraser teacher.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub param_seed: u64,
}

impl ModelConfig {
    /// Named architecture presets: `desk` (the CPU default), `flores`
    /// (5+5 layers, 512 dim, 2 heads, dropout 0.4), `paraphraser` (8+8
    /// layers, 1024 dim, 16 heads, dropout 0.3) and `tiny` (for gradient checks).
    pub fn preset(name: &str, src_vocab: usize, tgt_vocab: usize) -> Option<Self> {
        let (enc, dec, dim, heads, ffn, dropout) = match name {
            "desk" => (2, 2, 128, 2, 256, 0.1),
            "flores" => (5, 5, 512, 2, 2048, 0.4),
            "paraphraser" => (8, 8, 1024, 16, 4096, 0.3),
            "tiny" => (2, 2, 32, 2, 64, 0.0),
            _ => return None,
        };
        Some(ModelConfig {
            enc_layers: enc,
            dec_layers: dec,
            model_dim: dim,
            heads,
            ffn_dim: ffn,
            dropout,
            src_vocab,
            tgt_vocab,
            max_len: 256,
            param_seed: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return bad("vocabularies need at least 5 entries".into());
        }
        if self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("model_dim and ffn_dim must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// A probability vector over the target vocabulary for one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution(pub Vec<f64>);

impl StepDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn uniform(n: usize) -> Self {
        StepDistribution(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, at: u32) -> Self {
        let mut v = vec![0.0; n];
        v[at as usize] = 1.0;
        StepDistribution(v)
    }

    /// Highest-probability token; ties go to the lower id.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as u32
    }

    /// Nonnegative, finite and summing to 1 within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.0.iter().all(|p| p.is_finite() && *p >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `dropout_seed`.
    Train {
        dropout_seed: u64,
    },
    Eval,
}

#[derive(Debug, Clone)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln_attn: NormIdx,
    attn: AttnIdx,
    ln_ffn: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln_self: NormIdx,
    self_attn: AttnIdx,
    ln_cross: NormIdx,
    cross_attn: AttnIdx,
    ln_ffn: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    src_emb: usize,
    tgt_emb: usize,
    enc: Vec<EncLayer>,
    enc_norm: NormIdx,
    dec: Vec<DecLayer>,
    dec_norm: NormIdx,
    out_w: usize,
    out_b: usize,
}

enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Uniform in ±sqrt(3 / cols): unit variance after the sqrt(dim) scale.
    Embedding,
    Zeros,
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let mut lin = |n: &str| {
            (
                self.add(format!("{prefix}.w{n}"), d, d, Init::Xavier),
                self.add(format!("{prefix}.b{n}"), 1, d, Init::Zeros),
            )
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        AttnIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), d, f, Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), 1, f, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), f, d, Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let d = cfg.model_dim;
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let src_emb = b.add("enc.emb".into(), cfg.src_vocab, d, Init::Embedding);
    let enc = (0..cfg.enc_layers)
        .map(|l| EncLayer {
            ln_attn: b.norm(&format!("enc.{l}.ln_attn"), d),
            attn: b.attn(&format!("enc.{l}.attn"), d),
            ln_ffn: b.norm(&format!("enc.{l}.ln_ffn"), d),
            ffn: b.ffn(&format!("enc.{l}.ffn"), d, cfg.ffn_dim),
        })
        .collect();
    let enc_norm = b.norm("enc.ln_final", d);
    let tgt_emb = b.add("dec.emb".into(), cfg.tgt_vocab, d, Init::Embedding);
    let dec = (0..cfg.dec_layers)
        .map(|l| DecLayer {
            ln_self: b.norm(&format!("dec.{l}.ln_self"), d),
            self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
            ln_cross: b.norm(&format!("dec.{l}.ln_cross"), d),
            cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
            ln_ffn: b.norm(&format!("dec.{l}.ln_ffn"), d),
            ffn: b.ffn(&format!("dec.{l}.ffn"), d, cfg.ffn_dim),
        })
        .collect();
    let dec_norm = b.norm("dec.ln_final", d);
    let out_w = b.add("dec.out.w".into(), d, cfg.tgt_vocab, Init::Xavier);
    let out_b = b.add("dec.out.b".into(), 1, cfg.tgt_vocab, Init::Zeros);
    (
        Layout {
            src_emb,
            tgt_emb,
            enc,
            enc_norm,
            dec,
            dec_norm,
            out_w,
            out_b,
        },
        b,
    )
}

fn sinusoid_table(len: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Gradients aligned with [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            grads: model.params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled(b, scale);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale(s);
        }
    }
}

/// Per-forward dropout source; inactive in eval mode or at rate 0.
struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn new(rate: f64, mode: Mode) -> Self {
        let rng = match mode {
            Mode::Train { dropout_seed } if rate > 0.0 => Some(stream_rng(dropout_seed, Stream::Dropout, &[])),
            _ => None,
        };
        Dropout { rate, rng }
    }

    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_mut() else { return x };
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mask(x, mask)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    names: Vec<String>,
    params: Vec<Matrix>,
    index: HashMap<String, usize>,
    layout: Layout,
    positions: Matrix,
}

/// Header stored at the top of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub valid_ppl: f64,
    pub params: Vec<(String, usize, usize)>,
}

const CKPT_MAGIC: &str = "SMRTCKPT 1";

impl Model {
    /// Deterministic scaled-uniform initialization from `config.param_seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let mut rng = stream_rng(config.param_seed, Stream::Init, &[]);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(r, c), init)| match init {
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::filled(r, c, 1.0),
                Init::Xavier | Init::Embedding => {
                    let a = match init {
                        Init::Xavier => (6.0 / (r + c) as f64).sqrt(),
                        _ => (3.0 / c as f64).sqrt(),
                    };
                    let data = (0..r * c).map(|_| rng.random_range(-a..a)).collect();
                    Matrix::from_vec(r, c, data)
                }
            })
            .collect();
        Ok(Self::assemble(config.clone(), layout, b.names, params))
    }

    fn assemble(config: ModelConfig, layout: Layout, names: Vec<String>, params: Vec<Matrix>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let positions = sinusoid_table(config.max_len, config.model_dim);
        Model {
            config,
            names,
            params,
            index,
            layout,
            positions,
        }
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// SHA-256 over every parameter's bytes, for frozen-weight checks.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Matrix::all_finite)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len,
                max_len: self.config.max_len,
            });
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, table: usize, ids: &[u32], drop: &mut Dropout) -> NodeId {
        let d = self.config.model_dim;
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let t = tape.param(table);
        let e = tape.gather(t, &ids);
        let e = tape.scale(e, (d as f64).sqrt());
        let mut pos = Matrix::zeros(ids.len(), d);
        pos.data.copy_from_slice(&self.positions.data[..ids.len() * d]);
        let pos = tape.constant(pos);
        let x = tape.add(e, pos);
        drop.apply(tape, x)
    }

    fn norm(&self, tape: &mut Tape, x: NodeId, n: &NormIdx) -> NodeId {
        let (g, b) = (tape.param(n.gain), tape.param(n.bias));
        tape.layer_norm(x, g, b)
    }

    fn linear(tape: &mut Tape, x: NodeId, w: usize, b: usize) -> NodeId {
        let w = tape.param(w);
        let b = tape.param(b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn attention(&self, tape: &mut Tape, q_in: NodeId, kv_in: NodeId, a: &AttnIdx, causal: bool) -> NodeId {
        let q = Self::linear(tape, q_in, a.wq, a.bq);
        let k = Self::linear(tape, kv_in, a.wk, a.bk);
        let v = Self::linear(tape, kv_in, a.wv, a.bv);
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let inv = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let s = tape.matmul_bt(qh, kh);
            let s = tape.scale(s, inv);
            let p = tape.softmax(s, causal);
            outs.push(tape.matmul(p, vh));
        }
        let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        Self::linear(tape, o, a.wo, a.bo)
    }

    fn ffn(&self, tape: &mut Tape, x: NodeId, f: &FfnIdx, drop: &mut Dropout) -> NodeId {
        let h = Self::linear(tape, x, f.w1, f.b1);
        let h = tape.relu(h);
        let h = drop.apply(tape, h);
        Self::linear(tape, h, f.w2, f.b2)
    }

    fn encode_with(&self, tape: &mut Tape, src: &[u32], drop: &mut Dropout) -> Result<NodeId> {
        self.check_len(src.len())?;
        let mut x = self.embed(tape, self.layout.src_emb, src, drop);
        for layer in &self.layout.enc {
            let h = self.norm(tape, x, &layer.ln_attn);
            let a = self.attention(tape, h, h, &layer.attn, false);
            let a = drop.apply(tape, a);
            x = tape.add(x, a);
            let h = self.norm(tape, x, &layer.ln_ffn);
            let f = self.ffn(tape, h, &layer.ffn, drop);
            let f = drop.apply(tape, f);
            x = tape.add(x, f);
        }
        Ok(self.norm(tape, x, &self.layout.enc_norm))
    }

    fn decode_with(&self, tape: &mut Tape, memory: NodeId, prefix: &[u32], drop: &mut Dropout) -> Result<NodeId> {
        self.check_len(prefix.len())?;
        let mut y = self.embed(tape, self.layout.tgt_emb, prefix, drop);
        for layer in &self.layout.dec {
            let h = self.norm(tape, y, &layer.ln_self);
            let a = self.attention(tape, h, h, &layer.self_attn, true);
            let a = drop.apply(tape, a);
            y = tape.add(y, a);
            let h = self.norm(tape, y, &layer.ln_cross);
            let a = self.attention(tape, h, memory, &layer.cross_attn, false);
            let a = drop.apply(tape, a);
            y = tape.add(y, a);
            let h = self.norm(tape, y, &layer.ln_ffn);
            let f = self.ffn(tape, h, &layer.ffn, drop);
            let f = drop.apply(tape, f);
            y = tape.add(y, f);
        }
        let y = self.norm(tape, y, &self.layout.dec_norm);
        let logits = Self::linear(tape, y, self.layout.out_w, self.layout.out_b);
        Ok(tape.log_softmax(logits))
    }

    /// Records a teacher-forced pass and returns the node of per-position
    /// log-probabilities (|prefix| × |V|). Row `i` conditions on `src` and
    /// `prefix[..=i]` only.
    pub fn forward(&self, tape: &mut Tape, src: &[u32], prefix: &[u32], mode: Mode) -> Result<NodeId> {
        let mut drop = Dropout::new(self.config.dropout, mode);
        let memory = self.encode_with(tape, src, &mut drop)?;
        self.decode_with(tape, memory, prefix, &mut drop)
    }

    /// Teacher-forced output distributions, one per prefix position.
    pub fn forward_teacher_forced(&self, src: &[u32], prefix: &[u32], mode: Mode) -> Result<Vec<StepDistribution>> {
        let mut tape = Tape::inference(&self.params);
        let lp = self.forward(&mut tape, src, prefix, mode)?;
        Ok(step_distributions(tape.value(lp)))
    }

    /// Exact gradients of the scalar `loss` recorded on `tape`.
    pub fn backward(&self, tape: &Tape, loss: NodeId) -> Result<Gradients> {
        if !std::ptr::eq(tape.params().as_ptr(), self.params.as_ptr()) {
            return Err(Error::ShapeMismatch("tape was recorded against another model".into()));
        }
        let raw = tape.backward(loss)?;
        let grads = raw
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Matrix::zeros(p.rows, p.cols)))
            .collect();
        Ok(Gradients { grads })
    }

    /// Encoder output for `src` in eval mode.
    pub fn encode_memory(&self, src: &[u32]) -> Result<Matrix> {
        let mut tape = Tape::inference(&self.params);
        let mut drop = Dropout::new(0.0, Mode::Eval);
        let m = self.encode_with(&mut tape, src, &mut drop)?;
        Ok(tape.value(m).clone())
    }

    /// Log-probabilities of the token following `prefix`, in eval mode.
    pub fn next_log_probs(&self, memory: &Matrix, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.params);
        let mut drop = Dropout::new(0.0, Mode::Eval);
        let mem = tape.constant(memory.clone());
        let lp = self.decode_with(&mut tape, mem, prefix, &mut drop)?;
        let v = tape.value(lp);
        Ok(v.row(v.rows - 1).to_vec())
    }

    pub fn save(&self, path: &Path, epoch: usize, valid_ppl: f64) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            epoch,
            valid_ppl,
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(n, p)| (n.clone(), p.rows, p.cols))
                .collect(),
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{CKPT_MAGIC}").map_err(io)?;
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for p in &self.params {
            for v in &p.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a checkpoint header without loading parameters.
    pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_header_from(&mut BufReader::new(file), path)
    }

    fn read_header_from(r: &mut impl BufRead, path: &Path) -> Result<CheckpointHeader> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if line.trim_end() != CKPT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(line.trim_end())?)
    }

    /// Loads a checkpoint, rejecting it unless its config equals `expected`.
    pub fn load(path: &Path, expected: &ModelConfig) -> Result<(Model, CheckpointHeader)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let header = Self::read_header_from(&mut r, path)?;
        if &header.config != expected {
            return Err(Error::Checkpoint(format!(
                "config mismatch: file has {:?}, expected {:?}",
                header.config, expected
            )));
        }
        let (layout, b) = build_layout(expected);
        let declared: Vec<(String, usize, usize)> = b
            .names
            .iter()
            .zip(&b.shapes)
            .map(|(n, &(r, c))| (n.clone(), r, c))
            .collect();
        if declared != header.params {
            return Err(Error::Checkpoint("parameter list does not match config".into()));
        }
        let mut params = Vec::with_capacity(declared.len());
        let mut buf = [0u8; 8];
        for (_, rows, cols) in &declared {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push(Matrix::from_vec(*rows, *cols, data));
        }
        if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok((Self::assemble(expected.clone(), layout, b.names, params), header))
    }
}

/// Exponentiates each row of a log-probability matrix.
pub fn step_distributions(logp: &Matrix) -> Vec<StepDistribution> {
    (0..logp.rows)
        .map(|r| StepDistribution(logp.row(r).iter().map(|v| v.exp()).collect()))
        .collect()
}
