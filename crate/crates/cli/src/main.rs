use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use tagmt::annotate::synth::synth_corpus;
use tagmt::annotate::{interleave, is_tag, match_annotations, parse_conllu, tag_pos, write_conllu, AnnotatedSentence, TagKind};
use tagmt::bpe::BpeModel;
use tagmt::decode::{default_max_len, translate, translate_batch, write_scores, DecodeConstraint, DecodeOptions};
use tagmt::errcat::{classify_detailed, Category, ErrorCounts};
use tagmt::eval::{bleu, paired_bootstrap, prediction_accuracy, word_frequencies, AccuracyTarget};
use tagmt::nmt::train::postprocess;
use tagmt::nmt::{load, save, train, ParallelCorpus};
use tagmt::textproc::{downsample, filter_pairs, read_parallel, truecase, TruecaseModel};
use tagmt::Tokens;
use tagmt_cli::corpus::LemmaLexicon;
use tagmt_cli::fsio::{self, fmt_metric, fmt_opt};
use tagmt_cli::{parse_kv, read_manifest_config, run_experiment, run_grid, CliError, CliResult, ExperimentConfig, GridSpace};

#[derive(Debug, Parser)]
#[command(name = "tagmt", version, about = "Interleaved linguistic tags for neural machine translation")]
struct Cli {
    /// Random seed (overrides `seed` in the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for sentence-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Dum,
    Pos,
    Msd,
}

impl From<Kind> for TagKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Dum => TagKind::Dum,
            Kind::Pos => TagKind::Pos,
            Kind::Msd => TagKind::Msd,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ForcedMode {
    ForceTags,
    ForceWords,
    RestrictPos,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize, truecase, length-filter and optionally downsample a parallel corpus.
    Prep {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        pretokenized: bool,
        #[arg(long)]
        max_len: Option<usize>,
        /// Keep this many pairs after filtering.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Generate the synthetic annotated language pair.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Interleave tags from a CoNLL-U file into a tokenized file.
    Annotate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        conllu: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        output: PathBuf,
    },
    /// Learn BPE merges from one or more token files.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        ops: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment a token file with learned merges.
    BpeApply {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model on segmented parallel files.
    Train {
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long)]
        dev_src: PathBuf,
        #[arg(long)]
        dev_tgt: PathBuf,
    },
    /// Translate a segmented source file.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        /// Keep tags and sub-word markers.
        #[arg(long)]
        raw: bool,
        /// Also write `id<TAB>logprob<TAB>length` lines here.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    EvalBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Paired bootstrap resampling of system A against system B.
    EvalSignif {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Classify word errors of a hypothesis file against an annotated reference.
    Errcat {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference_conllu: PathBuf,
        /// Annotated target training data for hypothesis lemmas; without it the
        /// synthetic language analyser is used.
        #[arg(long)]
        lexicon_conllu: Option<PathBuf>,
        /// Also print per-side counts.
        #[arg(long)]
        verbose: bool,
    },
    /// Decode with reference tags or words forced and report accuracies.
    ForcedEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Segmented, tagged reference.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum)]
        mode: ForcedMode,
        /// Segmented, tagged training targets for frequency buckets.
        #[arg(long)]
        train_reference: Option<PathBuf>,
    },
    /// Staged grid search over BPE operations, tied embeddings and sizes.
    Grid,
    /// Run the full pipeline into `--out-dir`.
    Run {
        /// Reproduce the run recorded in this manifest instead of `--config`.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
}

fn load_kv(cli: &Cli) -> CliResult<BTreeMap<String, String>> {
    let mut kv = match &cli.config {
        Some(p) => parse_kv(&fsio::read_text(p)?)?,
        None => BTreeMap::new(),
    };
    if let Some(s) = cli.seed {
        kv.insert("seed".into(), s.to_string());
    }
    Ok(kv)
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    ExperimentConfig::from_kv(&load_kv(cli)?)
}

fn print_rows(rows: &[(String, String)]) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    for (k, v) in rows {
        writeln!(out, "{k}\t{v}").map_err(CliError::io("<stdout>"))?;
    }
    Ok(())
}

fn data_err(msg: String) -> CliError {
    CliError::Core(tagmt::Error::Data(msg))
}

fn check_same_len(a: usize, b: usize, what: &str) -> CliResult<()> {
    if a != b {
        return Err(data_err(format!("{what}: {a} vs {b} sentences")));
    }
    Ok(())
}

fn prep(cli: &Cli, src: &Path, tgt: &Path, pretokenized: bool, max_len: Option<usize>, sample: Option<usize>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let pairs = read_parallel(fsio::open_reader(src)?, fsio::open_reader(tgt)?, pretokenized)?;
    let src_tc = TruecaseModel::learn(pairs.iter().map(|p| &p.src));
    let tgt_tc = TruecaseModel::learn(pairs.iter().map(|p| &p.tgt));
    let mut pairs = filter_pairs(pairs, max_len.unwrap_or(cfg.max_len));
    if let Some(n) = sample {
        pairs = downsample(&pairs, n, cfg.seed)?;
    }
    let s: Vec<Tokens> = pairs.iter().map(|p| truecase(&src_tc, &p.src)).collect();
    let t: Vec<Tokens> = pairs.iter().map(|p| truecase(&tgt_tc, &p.tgt)).collect();
    let out = &cli.out_dir;
    fsio::write_tokens(&out.join("prep.src"), &s)?;
    fsio::write_tokens(&out.join("prep.tgt"), &t)?;
    for (name, m) in [("truecase.src", &src_tc), ("truecase.tgt", &tgt_tc)] {
        let mut buf = Vec::new();
        m.write(&mut buf)?;
        fsio::write_text(&out.join(name), &String::from_utf8_lossy(&buf))?;
    }
    log::info!("kept {} pairs", s.len());
    Ok(())
}

fn synth(cli: &Cli, n: usize) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let corpus = synth_corpus(cfg.seed, n);
    let out = &cli.out_dir;
    let src: Vec<&Tokens> = corpus.iter().map(|e| &e.pair.src).collect();
    let tgt: Vec<&Tokens> = corpus.iter().map(|e| &e.pair.tgt).collect();
    fsio::write_tokens(&out.join("synth.src"), &src)?;
    fsio::write_tokens(&out.join("synth.tgt"), &tgt)?;
    let sa: Vec<AnnotatedSentence> = corpus.iter().map(|e| e.src.clone()).collect();
    let ta: Vec<AnnotatedSentence> = corpus.iter().map(|e| e.tgt.clone()).collect();
    fsio::write_text(&out.join("synth.src.conllu"), &write_conllu(&sa))?;
    fsio::write_text(&out.join("synth.tgt.conllu"), &write_conllu(&ta))?;
    Ok(())
}

fn annotate(input: &Path, conllu: &Path, kind: Kind, output: &Path) -> CliResult<()> {
    let tokens = fsio::read_tokens(input)?;
    let anns = parse_conllu(&fsio::read_text(conllu)?)?;
    let (matched, rejected) = match_annotations(&tokens, anns)?;
    if rejected > 0 {
        return Err(data_err(format!(
            "{rejected} sentences of {} do not match {}",
            input.display(),
            conllu.display()
        )));
    }
    let out: Vec<Tokens> = matched
        .iter()
        .map(|a| interleave(a.as_ref().expect("all matched"), kind.into()))
        .collect();
    fsio::write_tokens(output, &out)
}

fn read_merges(path: &Path) -> CliResult<BpeModel> {
    Ok(BpeModel::read(fsio::open_reader(path)?)?)
}

fn model_decode_options(cli: &Cli, beam: Option<usize>) -> CliResult<DecodeOptions> {
    let cfg = load_config(cli)?;
    Ok(DecodeOptions {
        beam: beam.unwrap_or(cfg.beam),
        class_mask: cfg.class_mask,
        ..DecodeOptions::default()
    })
}

fn errcat(hyp: &Path, reference: &Path, lexicon: Option<&Path>, verbose: bool) -> CliResult<()> {
    let hyps = fsio::read_tokens(hyp)?;
    let refs = parse_conllu(&fsio::read_text(reference)?)?;
    check_same_len(hyps.len(), refs.len(), "hypotheses and annotated references")?;
    let lex = match lexicon {
        Some(p) => Some(LemmaLexicon::learn(&parse_conllu(&fsio::read_text(p)?)?)),
        None => None,
    };
    let mut total = ErrorCounts::default();
    let mut rows = Vec::new();
    for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
        let ann = match &lex {
            Some(l) => l.annotate(h),
            None => tagmt::annotate::synth::lemmatize_target(h),
        };
        let c = classify_detailed(&ann, &r.tokens).map_err(|e| tagmt::Error::Sentence {
            index: i,
            source: Box::new(e),
        })?;
        total += c.counts;
        if verbose {
            for side in [("hypothesis", c.hyp_side), ("reference", c.ref_side)] {
                rows.push((
                    format!("sentence.{i}.{}", side.0),
                    format!(
                        "inflection={} reordering={} lexical_choice={} unmatched={}",
                        side.1.inflection, side.1.reordering, side.1.lexical_choice, side.1.unmatched
                    ),
                ));
            }
        }
    }
    let mut out: Vec<(String, String)> = Category::ALL
        .iter()
        .map(|&c| (c.to_string(), total.get(c).to_string()))
        .collect();
    out.push(("lexical".into(), total.grouped_lexical().to_string()));
    out.push(("total".into(), total.total().to_string()));
    out.extend(rows);
    print_rows(&out)
}

fn forced_eval(cli: &Cli, model: &Path, src: &Path, reference: &Path, mode: ForcedMode, train_ref: Option<&Path>) -> CliResult<()> {
    let model = load(model)?;
    let srcs = fsio::read_tokens(src)?;
    let refs = fsio::read_tokens(reference)?;
    check_same_len(srcs.len(), refs.len(), "sources and references")?;
    let base = model_decode_options(cli, None)?;
    let tags = |s: &Tokens| -> Tokens { s.iter().filter(|t| is_tag(t)).cloned().collect() };
    let decoded: Vec<Tokens> = srcs
        .par_iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (s, r))| {
            let c = match mode {
                ForcedMode::ForceTags => DecodeConstraint::ForceTags(tags(r)),
                ForcedMode::ForceWords => DecodeConstraint::ForceWords(r.iter().filter(|t| !is_tag(t)).cloned().collect()),
                ForcedMode::RestrictPos => {
                    DecodeConstraint::RestrictPos(r.iter().filter_map(|t| tag_pos(t)).map(str::to_string).collect())
                }
            };
            let opts = DecodeOptions {
                max_len: Some(default_max_len(s.len()).max(2 * r.len() + 2)),
                ..base.clone()
            };
            translate(&model, s, &opts, &c).map(|t| t.tokens).map_err(|e| tagmt::Error::Sentence {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<tagmt::Result<_>>()?;
    let freq = match train_ref {
        Some(p) => Some(word_frequencies(&fsio::read_tokens(p)?)),
        None => None,
    };
    let targets: &[(&str, AccuracyTarget)] = match mode {
        ForcedMode::ForceTags | ForcedMode::RestrictPos => &[("surface_forms", AccuracyTarget::SurfaceForms)],
        ForcedMode::ForceWords => &[("tags", AccuracyTarget::Tags), ("pos", AccuracyTarget::Pos)],
    };
    let mut rows = Vec::new();
    for (name, target) in targets {
        let rep = prediction_accuracy(&decoded, &refs, *target, freq.as_ref())?;
        for (b, x) in [("all", rep.overall), ("infrequent", rep.infrequent), ("oov", rep.oov)] {
            if b != "all" && freq.is_none() {
                continue;
            }
            rows.push((format!("{name}.{b}.accuracy"), fmt_opt(x.accuracy(), "absent")));
            rows.push((format!("{name}.{b}.total"), x.total.to_string()));
        }
    }
    if matches!(mode, ForcedMode::ForceTags) {
        let exact = decoded.iter().zip(&refs).filter(|(d, r)| tags(d) == tags(r)).count();
        rows.push(("exact_tag_sequences".into(), fmt_metric(exact as f64 / refs.len().max(1) as f64)));
    }
    print_rows(&rows)
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Prep {
            src,
            tgt,
            pretokenized,
            max_len,
            sample,
        } => prep(cli, src, tgt, *pretokenized, *max_len, *sample),
        Command::Synth { n } => synth(cli, *n),
        Command::Annotate {
            input,
            conllu,
            kind,
            output,
        } => annotate(input, conllu, *kind, output),
        Command::BpeLearn { input, ops, output } => {
            let mut corpus = Vec::new();
            for p in input {
                corpus.extend(fsio::read_tokens(p)?);
            }
            let model = BpeModel::learn(&corpus, *ops);
            let mut buf = Vec::new();
            model.write(&mut buf)?;
            fsio::write_text(output, &String::from_utf8_lossy(&buf))
        }
        Command::BpeApply { merges, input, output } => {
            let model = read_merges(merges)?;
            let out: Vec<Tokens> = fsio::read_tokens(input)?.par_iter().map(|s| model.apply(s)).collect();
            fsio::write_tokens(output, &out)
        }
        Command::Train {
            train_src,
            train_tgt,
            dev_src,
            dev_tgt,
        } => {
            let cfg = load_config(cli)?;
            let tr = ParallelCorpus::new(fsio::read_tokens(train_src)?, fsio::read_tokens(train_tgt)?)?;
            let dv = ParallelCorpus::new(fsio::read_tokens(dev_src)?, fsio::read_tokens(dev_tgt)?)?;
            let outcome = train(&cfg.model, &cfg.training, &tr, &dv)?;
            fsio::create_dir(&cli.out_dir)?;
            save(&outcome.model, &cli.out_dir.join("model.ckpt"))?;
            let mut rows = vec![["step".to_string(), "train_loss".into(), "dev_perplexity".into(), "dev_bleu".into()]];
            rows.extend(outcome.log.iter().map(|r| {
                [
                    r.step.to_string(),
                    fmt_opt(r.train_loss, "NA"),
                    fmt_metric(r.dev_perplexity),
                    fmt_metric(r.dev_bleu),
                ]
            }));
            fsio::write_tsv(&cli.out_dir.join("validation.tsv"), rows)
        }
        Command::Translate {
            model,
            input,
            output,
            beam,
            raw,
            scores,
        } => {
            let model = load(model)?;
            let opts = model_decode_options(cli, *beam)?;
            let out = translate_batch(&model, &fsio::read_tokens(input)?, &opts)?;
            let text: Vec<Tokens> = out
                .iter()
                .map(|t| if *raw { t.tokens.clone() } else { postprocess(&t.tokens) })
                .collect();
            fsio::write_tokens(output, &text)?;
            if let Some(p) = scores {
                let mut buf = Vec::new();
                write_scores(&mut buf, &out)?;
                fsio::write_text(p, &String::from_utf8_lossy(&buf))?;
            }
            Ok(())
        }
        Command::EvalBleu { hyp, reference } => {
            let r = bleu(&fsio::read_tokens(hyp)?, &fsio::read_tokens(reference)?)?;
            let mut rows = vec![("bleu".to_string(), fmt_metric(r.score))];
            for (n, p) in r.precisions.iter().enumerate() {
                rows.push((format!("precision_{}", n + 1), fmt_metric(*p)));
            }
            rows.push(("brevity_penalty".into(), fmt_metric(r.brevity_penalty)));
            rows.push(("hyp_len".into(), r.hyp_len.to_string()));
            rows.push(("ref_len".into(), r.ref_len.to_string()));
            print_rows(&rows)
        }
        Command::EvalSignif {
            a,
            b,
            reference,
            iterations,
            alpha,
        } => {
            let cfg = load_config(cli)?;
            let r = paired_bootstrap(
                &fsio::read_tokens(a)?,
                &fsio::read_tokens(b)?,
                &fsio::read_tokens(reference)?,
                iterations.unwrap_or(cfg.bootstrap_iterations),
                alpha.unwrap_or(cfg.alpha),
                cfg.seed,
            )?;
            print_rows(&[
                ("bleu_a".into(), fmt_metric(r.bleu_a)),
                ("bleu_b".into(), fmt_metric(r.bleu_b)),
                ("iterations".into(), r.iterations.to_string()),
                ("wins_a".into(), r.wins_a.to_string()),
                ("wins_b".into(), r.wins_b.to_string()),
                ("ties".into(), r.ties.to_string()),
                ("a_better".into(), r.a_better.to_string()),
                ("b_better".into(), r.b_better.to_string()),
            ])
        }
        Command::Errcat {
            hyp,
            reference_conllu,
            lexicon_conllu,
            verbose,
        } => errcat(hyp, reference_conllu, lexicon_conllu.as_deref(), *verbose),
        Command::ForcedEval {
            model,
            src,
            reference,
            mode,
            train_reference,
        } => forced_eval(cli, model, src, reference, *mode, train_reference.as_deref()),
        Command::Grid => {
            let kv = load_kv(cli)?;
            let cfg = ExperimentConfig::from_kv(&kv)?;
            let space = GridSpace::from_kv(&kv, cfg.family())?;
            let outcome = run_grid(&space, &cfg, &cli.out_dir)?;
            print!("{}", outcome.best.to_text());
            Ok(())
        }
        Command::Run { manifest } => {
            let cfg = match manifest {
                Some(p) => read_manifest_config(&fsio::read_text(p)?)?,
                None => load_config(cli)?,
            };
            let summary = run_experiment(&cfg, &cli.out_dir)?;
            print_rows(&[
                ("run_dir".into(), summary.dir.display().to_string()),
                ("stages".into(), summary.stages.join(",")),
                ("test_bleu".into(), fmt_metric(summary.test_bleu.score)),
            ])
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                log::error!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
