use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smrt_core::augment::{back_translate, combine_for_smrt, paraphrase_corpus, reverse_pairs, ParaphraseMode};
use smrt_core::corpus::{write_parallel, RawPair};
use smrt_core::evaluate::{corpus_bleu, paired_bootstrap, parse_ref_set};
use smrt_core::experiment::{
    cached_teacher, collect_results, data_ablation_csv, format_results, load_run, prepare_data, run_ablation_matrix,
    run_data_ablation, run_experiment, translate, write_splits, Condition, ExperimentConfig,
};
use smrt_core::seqmodel::Model;
use smrt_core::subword::{train_subword, TokenSeq, Vocab};
use smrt_core::trainer::{train, EncodedPair, TrainOutput};

#[derive(Parser)]
#[command(
    name = "smrt",
    version,
    about = "Paraphraser-distribution training for low-resource translation"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (synthetic task) or load the data splits and write them to --out.
    GenData,
    /// Learn a subword vocabulary from a text file and write it to --out.
    TrainSubword {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        size: usize,
    },
    /// Run one experiment end to end; prints the run directory.
    Train,
    /// Translate a file with a finished run's best checkpoint.
    Translate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Score hypotheses; prints one JSON line.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        /// Reference file(s), one sentence per line, aligned with the hypotheses.
        #[arg(long, num_args = 1..)]
        refs: Vec<PathBuf>,
        /// JSON-lines reference sets (one array of strings per sentence).
        #[arg(long, conflicts_with = "refs")]
        refs_jsonl: Option<PathBuf>,
        /// Baseline system; a paired bootstrap tests whether --hyp beats it.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// Paraphrase the training targets with the teacher; writes train.aug.{src,tgt}.
    Augment {
        #[arg(long, default_value = "greedy")]
        mode: ParaphraseMode,
    },
    /// Back-translate monolingual targets; writes train.bt.{src,tgt} and train.origin.
    BackTranslate {
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
    },
    /// Baseline plus the four ablation conditions; writes results.txt and results.csv.
    Ablate,
    /// Baseline and SMRT per training-subset size; writes data_ablation.csv.
    DataAblate {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Table of every finished run under --out.
    Report {
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        bootstrap_seed: u64,
    },
}

impl Cli {
    fn config(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().context("--config is required for this command")?;
        let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
            if !cfg.eval_seeds.is_empty() {
                cfg.eval_seeds = vec![s];
            }
        }
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required for this command")
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn decode_pairs(pairs: &[EncodedPair], sv: &Vocab, tv: &Vocab) -> Result<Vec<RawPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(RawPair {
                source: sv.decode(&p.src)?,
                target: tv.decode(&p.tgt)?,
                line_no: i + 1,
            })
        })
        .collect()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let cfg = cli.config()?;
            let out = cli.out()?;
            let data = prepare_data(&cfg)?;
            write_splits(&data, out)?;
            println!("{}", out.display());
        }
        Command::TrainSubword { input, size } => {
            let lines = read_lines(input)?;
            let vocab = train_subword(&lines, *size)?;
            let out = cli.out()?;
            vocab.save(out)?;
            println!("{} pieces, fingerprint {}", vocab.size(), vocab.fingerprint());
        }
        Command::Train => {
            let cfg = cli.config()?;
            let dir = run_experiment(&cfg, cli.out()?)?;
            println!("{}", dir.display());
        }
        Command::Translate { run, input, beam } => {
            if *beam == 0 {
                bail!("--beam must be at least 1");
            }
            let loaded = load_run(run)?;
            let pairs: Vec<EncodedPair> = read_lines(input)?
                .iter()
                .map(|l| EncodedPair {
                    src: loaded.src_vocab.encode(l),
                    tgt: TokenSeq(Vec::new()),
                })
                .collect();
            for h in translate(&loaded.model, &loaded.tgt_vocab, &pairs, *beam)? {
                println!("{h}");
            }
        }
        Command::Evaluate {
            hyp,
            refs,
            refs_jsonl,
            compare,
            resamples,
        } => {
            let hyps = read_lines(hyp)?;
            let ref_sets: Vec<Vec<String>> = match refs_jsonl {
                Some(p) => read_lines(p)?
                    .iter()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| Ok(parse_ref_set(l)?))
                    .collect::<Result<_>>()?,
                None => {
                    if refs.is_empty() {
                        bail!("give --refs or --refs-jsonl");
                    }
                    let files = refs.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
                    (0..hyps.len())
                        .map(|i| files.iter().filter_map(|f| f.get(i).cloned()).collect())
                        .collect()
                }
            };
            println!("{}", corpus_bleu(&hyps, &ref_sets)?.to_line());
            if let Some(other) = compare {
                let b = read_lines(other)?;
                let sig = paired_bootstrap(&hyps, &b, &ref_sets, *resamples, cli.seed.unwrap_or(0))?;
                println!(
                    "{{\"delta\":{:.4},\"p_value\":{:.4},\"resamples\":{},\"significant_95\":{}}}",
                    sig.delta, sig.p_value, sig.n_resamples, sig.significant_95
                );
            }
        }
        Command::Augment { mode } => {
            let cfg = cli.config()?;
            let out = cli.out()?;
            let data = prepare_data(&cfg)?;
            let teacher = cached_teacher(&cfg.with_condition(Condition::Augment { mode: *mode }), &data, out)?;
            let para = paraphrase_corpus(&teacher, &data.train, *mode, cfg.seed)?;
            let raw = decode_pairs(&para, &data.src_vocab, &data.tgt_vocab)?;
            write_parallel(&raw, &out.join("train.aug.src"), &out.join("train.aug.tgt"))?;
            println!("{} paraphrased pairs", raw.len());
        }
        Command::BackTranslate { ratio } => {
            let cfg = cli.config()?;
            let out = cli.out()?;
            let data = prepare_data(&cfg)?;
            let rev_cfg = cfg
                .model
                .resolve(data.tgt_vocab.size(), data.src_vocab.size(), cfg.seed)?;
            let mut reverse = Model::init(&rev_cfg)?;
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seed;
            tc.smrt.p = 0.0;
            let rev = train(
                &mut reverse,
                None::<&Model>,
                &reverse_pairs(&data.train),
                &reverse_pairs(&data.valid),
                &tc,
                TrainOutput::default(),
            )?;
            let bt = back_translate(&rev.best, &data.mono, *ratio, data.train.len(), cfg.seed)?;
            let tagged = combine_for_smrt(&data.train, &bt);
            fs::create_dir_all(out)?;
            let raw = decode_pairs(&tagged.pairs, &data.src_vocab, &data.tgt_vocab)?;
            write_parallel(&raw, &out.join("train.bt.src"), &out.join("train.bt.tgt"))?;
            tagged.write_tags(&out.join("train.origin"))?;
            println!("{} real + {} synthetic pairs", data.train.len(), bt.len());
        }
        Command::Ablate => {
            let cfg = cli.config()?;
            let out = cli.out()?;
            let table = run_ablation_matrix(&cfg, out)?;
            let text = format_results(&table, cfg.eval.bootstrap_resamples, cfg.eval.bootstrap_seed)?;
            write_text(&out.join("results.txt"), &text)?;
            write_text(&out.join("results.csv"), &table.to_csv())?;
            print!("{text}");
        }
        Command::DataAblate { sizes } => {
            let cfg = cli.config()?;
            let rows = run_data_ablation(&cfg, sizes, cli.out()?)?;
            print!("{}", data_ablation_csv(&rows));
        }
        Command::Report {
            resamples,
            bootstrap_seed,
        } => {
            let out = cli.out()?;
            let table = collect_results(out)?;
            if table.rows.is_empty() {
                bail!("no finished runs under {}", out.display());
            }
            let text = format_results(&table, *resamples, *bootstrap_seed)?;
            write_text(&out.join("results.txt"), &text)?;
            write_text(&out.join("results.csv"), &table.to_csv())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
