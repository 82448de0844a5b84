//! The full experiment pipeline and its run directory.
//!
//! ```text
//! <out>/config.txt              canonical configuration
//! <out>/manifest.tsv            config hash, seed, completed stages, full config
//! <out>/corpus/                 word-level splits, annotations, tagged streams
//! <out>/bpe/                    merges and segmented streams
//! <out>/model/                  checkpoint and validation log
//! <out>/translations/           raw (tagged) and post-processed test output
//! <out>/reports/                metric TSVs
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tagmt::annotate::{interleave, is_tag, tag_pos, write_conllu, AnnotatedSentence, TagKind};
use tagmt::bpe::BpeModel;
use tagmt::decode::{
    alternation_agreement, default_max_len, translate, translate_batch, write_scores, DecodeConstraint, DecodeOptions,
    Translation,
};
use tagmt::errcat::{classify_detailed, relative_change, Category, ErrorCounts, SideCounts};
use tagmt::eval::{
    bleu, paired_bootstrap, prediction_accuracy, tagged_words, word_frequencies, AccuracyReport, AccuracyTarget,
    BleuReport, Bucket,
};
use tagmt::nmt::train::postprocess;
use tagmt::nmt::{save, train, Model, ParallelCorpus, StopReason, TrainOutcome};
use tagmt::Tokens;

use crate::config::{parse_kv, ExperimentConfig};
use crate::corpus::{load_splits, Example, Splits};
use crate::error::{CliError, CliResult};
use crate::fsio::{self, fmt_metric, fmt_opt};

const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// What a finished run reports back to the caller.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub stages: Vec<String>,
    pub best_dev_bleu: f64,
    pub test_bleu: BleuReport,
    pub errors: ErrorCounts,
    pub forced: Option<ForcedSummary>,
}

/// Forced-decoding diagnostics of a run with target-side tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedSummary {
    /// Sentences whose emitted tag sequence equals the reference under ForceTags.
    pub force_tags_exact: f64,
    /// Surface-form accuracy with reference tags forced.
    pub surface_forms: AccuracyReport,
    /// Tag accuracy with reference words forced.
    pub tags: AccuracyReport,
    /// POS accuracy with reference words forced (MSD systems only).
    pub pos: Option<AccuracyReport>,
    /// Fraction of emitted tags carrying the reference POS under RestrictPos.
    pub restrict_pos_agreement: Option<f64>,
    pub restrict_pos_surface_forms: Option<AccuracyReport>,
    /// Decoding steps whose unmasked argmax has the class the alternation expects.
    pub alternation: (usize, usize),
}

impl ForcedSummary {
    pub fn alternation_rate(&self) -> f64 {
        let (a, t) = self.alternation;
        if t == 0 {
            1.0
        } else {
            a as f64 / t as f64
        }
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    done: Vec<String>,
}

struct Streams {
    src: Vec<Tokens>,
    tgt: Vec<Tokens>,
}

impl<'a> Run<'a> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn manifest(&self, failed: Option<&str>) -> String {
        let mut rows = vec![
            format!("config_sha256\t{}", self.cfg.hash()),
            format!("seed\t{}", self.cfg.seed),
            format!("arm\t{}", self.cfg.arm),
            format!("pair\t{}", self.cfg.pair),
        ];
        rows.extend(self.done.iter().map(|s| format!("stage\t{s}\tcompleted")));
        if let Some(s) = failed {
            rows.push(format!("stage\t{s}\tfailed"));
        }
        rows.extend(self.cfg.to_kv().into_iter().map(|(k, v)| format!("config\t{k}\t{v}")));
        rows.iter().map(|r| format!("{r}\n")).collect()
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&Self) -> CliResult<T>) -> CliResult<T> {
        log::info!("stage {name}");
        match f(self) {
            Ok(v) => {
                self.done.push(name.to_string());
                fsio::write_text(&self.path("manifest.tsv"), &self.manifest(None))?;
                Ok(v)
            }
            Err(e) => {
                if let Err(w) = fsio::write_text(&self.path("manifest.tsv"), &self.manifest(Some(name))) {
                    log::error!("could not record the failed stage: {w}");
                }
                Err(CliError::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }
}

/// Rebuilds the configuration recorded in a manifest, checking its hash.
pub fn read_manifest_config(text: &str) -> CliResult<ExperimentConfig> {
    let mut kv = BTreeMap::new();
    let mut hash = None;
    for line in text.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        match cols.as_slice() {
            ["config", k, v] => {
                kv.insert(k.to_string(), v.to_string());
            }
            ["config_sha256", h] => hash = Some(h.to_string()),
            _ => {}
        }
    }
    let cfg = ExperimentConfig::from_kv(&kv)?;
    match hash {
        Some(h) if h == cfg.hash() => Ok(cfg),
        Some(_) => Err(CliError::Config("manifest configuration does not match its hash".into())),
        None => Err(CliError::Config("manifest has no config_sha256 line".into())),
    }
}

fn decode_options(cfg: &ExperimentConfig) -> DecodeOptions {
    DecodeOptions {
        beam: cfg.beam,
        class_mask: cfg.class_mask,
        ..DecodeOptions::default()
    }
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Core(tagmt::Error::Data(msg.into()))
}

/// Runs every stage in order, writing artifacts under `out_dir`. A failing
/// stage stops the run; artifacts written so far stay in place and the
/// manifest marks the stage as failed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<RunSummary> {
    fsio::create_dir(out_dir)?;
    fsio::write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    let mut run = Run {
        cfg,
        dir: out_dir.to_path_buf(),
        done: Vec::new(),
    };
    fsio::write_text(&run.path("manifest.tsv"), &run.manifest(None))?;

    let splits = run.stage("prep", prep_stage)?;
    let streams = run.stage("annotate", |r| annotate_stage(r, &splits))?;
    let bpe = run.stage("bpe", |r| bpe_stage(r, &streams))?;
    let outcome = run.stage("train", |r| train_stage(r, &bpe))?;
    let model = &outcome.model;
    let translations = run.stage("translate", |r| translate_stage(r, model, &bpe[2]))?;
    let refs: Vec<Tokens> = splits.test.iter().map(|e| e.tgt.clone()).collect();
    let hyps: Vec<Tokens> = translations.iter().map(|t| postprocess(&t.tokens)).collect();
    let test_bleu = run.stage("eval", |r| eval_stage(r, &hyps, &refs))?;
    let errors = run.stage("errcat", |r| errcat_stage(r, &splits, &hyps))?;
    let forced = match cfg.arm.tgt {
        Some(kind) => Some(run.stage("forced", |r| forced_stage(r, model, kind, &bpe))?),
        None => None,
    };
    Ok(RunSummary {
        dir: run.dir,
        stages: run.done,
        best_dev_bleu: outcome.best_bleu(),
        test_bleu,
        errors,
        forced,
    })
}

fn prep_stage(run: &Run) -> CliResult<Splits> {
    let splits = load_splits(run.cfg)?;
    for (name, part) in splits.named() {
        let src: Vec<&Tokens> = part.iter().map(|e| &e.src).collect();
        let tgt: Vec<&Tokens> = part.iter().map(|e| &e.tgt).collect();
        fsio::write_tokens(&run.path(&format!("corpus/{name}.src")), &src)?;
        fsio::write_tokens(&run.path(&format!("corpus/{name}.tgt")), &tgt)?;
        for (side, pick) in [("src", 0), ("tgt", 1)] {
            let anns: Option<Vec<AnnotatedSentence>> = part
                .iter()
                .map(|e| if pick == 0 { e.src_ann.clone() } else { e.tgt_ann.clone() })
                .collect();
            if let Some(anns) = anns {
                fsio::write_text(&run.path(&format!("corpus/{name}.{side}.conllu")), &write_conllu(&anns))?;
            }
        }
    }
    log::info!(
        "{} train, {} dev, {} test pairs",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len()
    );
    Ok(splits)
}

fn side_stream(
    examples: &[Example],
    kind: Option<TagKind>,
    words: impl Fn(&Example) -> &Tokens,
    ann: impl Fn(&Example) -> Option<&AnnotatedSentence>,
    what: &str,
) -> CliResult<Vec<Tokens>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| match kind {
            None => Ok(words(e).clone()),
            Some(k) => ann(e)
                .map(|a| interleave(a, k))
                .ok_or_else(|| data_err(format!("{what} sentence {i} has no annotation"))),
        })
        .collect()
}

fn annotate_stage(run: &Run, splits: &Splits) -> CliResult<[Streams; 3]> {
    let arm = run.cfg.arm;
    let mut out = Vec::new();
    for (name, part) in splits.named() {
        let src = side_stream(part, arm.src, |e| &e.src, |e| e.src_ann.as_ref(), &format!("{name} source"))?;
        let tgt = side_stream(part, arm.tgt, |e| &e.tgt, |e| e.tgt_ann.as_ref(), &format!("{name} target"))?;
        fsio::write_tokens(&run.path(&format!("corpus/{name}.src.stream")), &src)?;
        fsio::write_tokens(&run.path(&format!("corpus/{name}.tgt.stream")), &tgt)?;
        let collisions = part.iter().flat_map(|e| e.src.iter().chain(&e.tgt)).filter(|w| is_tag(w)).count();
        if collisions > 0 {
            log::warn!("{name}: {collisions} surface words look like tags");
        }
        out.push(Streams { src, tgt });
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!("three splits")))
}

fn bpe_stage(run: &Run, streams: &[Streams; 3]) -> CliResult<[Streams; 3]> {
    let src_bpe = BpeModel::learn(&streams[0].src, run.cfg.bpe_src_ops);
    let tgt_bpe = BpeModel::learn(&streams[0].tgt, run.cfg.bpe_tgt_ops);
    for (name, m) in [("src", &src_bpe), ("tgt", &tgt_bpe)] {
        let mut buf = Vec::new();
        m.write(&mut buf)?;
        fsio::write_text(
            &run.path(&format!("bpe/{name}.merges")),
            &String::from_utf8(buf).expect("merges are UTF-8"),
        )?;
    }
    let mut out = Vec::new();
    for (name, s) in SPLITS.iter().zip(streams) {
        let src: Vec<Tokens> = s.src.par_iter().map(|x| src_bpe.apply(x)).collect();
        let tgt: Vec<Tokens> = s.tgt.par_iter().map(|x| tgt_bpe.apply(x)).collect();
        fsio::write_tokens(&run.path(&format!("bpe/{name}.src")), &src)?;
        fsio::write_tokens(&run.path(&format!("bpe/{name}.tgt")), &tgt)?;
        out.push(Streams { src, tgt });
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!("three splits")))
}

fn train_stage(run: &Run, bpe: &[Streams; 3]) -> CliResult<TrainOutcome> {
    let train_c = ParallelCorpus::new(bpe[0].src.clone(), bpe[0].tgt.clone())?;
    let dev_c = ParallelCorpus::new(bpe[1].src.clone(), bpe[1].tgt.clone())?;
    let outcome = train(&run.cfg.model, &run.cfg.training, &train_c, &dev_c)?;
    fsio::create_dir(&run.path("model"))?;
    save(&outcome.model, &run.path("model/model.ckpt"))?;
    let mut rows = vec![vec![
        "step".to_string(),
        "train_loss".into(),
        "dev_perplexity".into(),
        "dev_bleu".into(),
    ]];
    rows.extend(outcome.log.iter().map(|r| {
        vec![
            r.step.to_string(),
            fmt_opt(r.train_loss, "NA"),
            fmt_metric(r.dev_perplexity),
            fmt_metric(r.dev_bleu),
        ]
    }));
    fsio::write_tsv(&run.path("model/validation.tsv"), rows)?;
    let stop = match outcome.stop {
        StopReason::Patience => "patience",
        StopReason::MaxSteps => "max_steps",
    };
    fsio::write_tsv(
        &run.path("reports/training.tsv"),
        [
            ["steps".to_string(), outcome.steps.to_string()],
            ["stop_reason".into(), stop.into()],
            ["selected_step".into(), outcome.model.step.to_string()],
            ["best_dev_bleu".into(), fmt_metric(outcome.best_bleu())],
            ["parameters".into(), outcome.model.params().num_scalars().to_string()],
        ],
    )?;
    Ok(outcome)
}

fn translate_stage(run: &Run, model: &Model, test: &Streams) -> CliResult<Vec<Translation>> {
    let out = translate_batch(model, &test.src, &decode_options(run.cfg))?;
    let raw: Vec<&Tokens> = out.iter().map(|t| &t.tokens).collect();
    let text: Vec<Tokens> = out.iter().map(|t| postprocess(&t.tokens)).collect();
    fsio::write_tokens(&run.path("translations/test.raw"), &raw)?;
    fsio::write_tokens(&run.path("translations/test.txt"), &text)?;
    let mut scores = Vec::new();
    write_scores(&mut scores, &out)?;
    fsio::write_text(
        &run.path("translations/test.scores"),
        &String::from_utf8(scores).expect("scores are UTF-8"),
    )?;
    Ok(out)
}

fn bleu_rows(r: &BleuReport) -> Vec<[String; 2]> {
    let mut rows = vec![["bleu".to_string(), fmt_metric(r.score)]];
    for (n, p) in r.precisions.iter().enumerate() {
        rows.push([format!("precision_{}", n + 1), fmt_metric(*p)]);
    }
    rows.push(["brevity_penalty".into(), fmt_metric(r.brevity_penalty)]);
    rows.push(["hyp_len".into(), r.hyp_len.to_string()]);
    rows.push(["ref_len".into(), r.ref_len.to_string()]);
    rows
}

fn eval_stage(run: &Run, hyps: &[Tokens], refs: &[Tokens]) -> CliResult<BleuReport> {
    let report = bleu(hyps, refs)?;
    let mut rows = bleu_rows(&report);
    rows.push(["sentences".into(), refs.len().to_string()]);
    fsio::write_tsv(&run.path("reports/bleu.tsv"), rows)?;

    if let Some(base) = &run.cfg.baseline_run {
        let base_hyps = fsio::read_tokens(&base.join("translations/test.txt"))?;
        if base_hyps.len() != refs.len() {
            return Err(data_err(format!(
                "baseline run has {} test translations, this run has {}",
                base_hyps.len(),
                refs.len()
            )));
        }
        let b = paired_bootstrap(
            hyps,
            &base_hyps,
            refs,
            run.cfg.bootstrap_iterations,
            run.cfg.alpha,
            run.cfg.seed,
        )?;
        fsio::write_tsv(
            &run.path("reports/significance.tsv"),
            [
                ["baseline_run".to_string(), base.display().to_string()],
                ["bleu_system".into(), fmt_metric(b.bleu_a)],
                ["bleu_baseline".into(), fmt_metric(b.bleu_b)],
                ["iterations".into(), b.iterations.to_string()],
                ["alpha".into(), fmt_metric(run.cfg.alpha)],
                ["wins_system".into(), b.wins_a.to_string()],
                ["wins_baseline".into(), b.wins_b.to_string()],
                ["ties".into(), b.ties.to_string()],
                ["system_better".into(), b.a_better.to_string()],
                ["baseline_better".into(), b.b_better.to_string()],
            ],
        )?;
    }
    Ok(report)
}

fn category_rows(counts: &ErrorCounts) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = Category::ALL.iter().map(|&c| (c.to_string(), counts.get(c))).collect();
    rows.push(("lexical".into(), counts.grouped_lexical()));
    rows.push(("total".into(), counts.total()));
    rows
}

/// Category counts of the first system listed in an errors report.
pub fn read_error_counts(path: &Path) -> CliResult<ErrorCounts> {
    let text = fsio::read_text(path)?;
    let mut system = None;
    let mut c = ErrorCounts::default();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [sys, cat, count, ..] = cols.as_slice() else {
            return Err(data_err(format!("{}: malformed row {line:?}", path.display())));
        };
        if *system.get_or_insert(sys.to_string()) != *sys {
            break;
        }
        let n: usize = count
            .parse()
            .map_err(|_| data_err(format!("{}: bad count {count:?}", path.display())))?;
        match *cat {
            "inflection" => c.inflection = n,
            "reordering" => c.reordering = n,
            "missing" => c.missing = n,
            "extra" => c.extra = n,
            "lexical_choice" => c.lexical_choice = n,
            _ => {}
        }
    }
    Ok(c)
}

fn errcat_stage(run: &Run, splits: &Splits, hyps: &[Tokens]) -> CliResult<ErrorCounts> {
    let per_sentence: Vec<_> = splits
        .test
        .par_iter()
        .zip(hyps)
        .enumerate()
        .map(|(i, (ex, h))| {
            let reference = ex
                .tgt_ann
                .as_ref()
                .ok_or_else(|| data_err(format!("test sentence {i} has no target lemmas")))?;
            let hyp = splits.annotate_hypothesis(h);
            classify_detailed(&hyp, &reference.tokens).map_err(|e| {
                CliError::Core(tagmt::Error::Sentence {
                    index: i,
                    source: Box::new(e),
                })
            })
        })
        .collect::<CliResult<_>>()?;
    let mut counts = ErrorCounts::default();
    let (mut hyp_side, mut ref_side) = (SideCounts::default(), SideCounts::default());
    let add = |a: &mut SideCounts, b: &SideCounts| {
        a.inflection += b.inflection;
        a.reordering += b.reordering;
        a.lexical_choice += b.lexical_choice;
        a.unmatched += b.unmatched;
    };
    for c in &per_sentence {
        counts += c.counts;
        add(&mut hyp_side, &c.hyp_side);
        add(&mut ref_side, &c.ref_side);
    }

    let system = run.cfg.arm.to_string();
    let base = match &run.cfg.baseline_run {
        Some(b) => Some(read_error_counts(&b.join("reports/errors.tsv"))?),
        None => None,
    };
    let changes: HashMap<String, Option<f64>> = base
        .map(|b| {
            let mut m: HashMap<_, _> = relative_change(&counts, &b).into_iter().collect();
            m.insert(
                "total".into(),
                tagmt::errcat::relative_change_of(counts.total(), b.total()),
            );
            m
        })
        .unwrap_or_default();
    let mut rows = vec![vec![
        "system".to_string(),
        "category".into(),
        "count".into(),
        "relative_change".into(),
    ]];
    for (cat, n) in category_rows(&counts) {
        let change = match (&base, changes.get(&cat)) {
            (None, _) => "NA".to_string(),
            (Some(_), Some(c)) => fmt_opt(*c, "undefined"),
            (Some(_), None) => "undefined".to_string(),
        };
        rows.push(vec![system.clone(), cat, n.to_string(), change]);
    }
    if let Some(b) = &base {
        for (cat, n) in category_rows(b) {
            rows.push(vec!["baseline".into(), cat, n.to_string(), "NA".into()]);
        }
    }
    fsio::write_tsv(&run.path("reports/errors.tsv"), rows)?;

    let mut verbose = vec![vec!["side".to_string(), "category".into(), "count".into()]];
    for (side, s) in [("hypothesis", hyp_side), ("reference", ref_side)] {
        let unmatched = if side == "hypothesis" { "extra" } else { "missing" };
        for (cat, n) in [
            ("inflection", s.inflection),
            ("reordering", s.reordering),
            ("lexical_choice", s.lexical_choice),
            (unmatched, s.unmatched),
        ] {
            verbose.push(vec![side.to_string(), cat.to_string(), n.to_string()]);
        }
    }
    fsio::write_tsv(&run.path("reports/errors_verbose.tsv"), verbose)?;
    Ok(counts)
}

fn forced_translate(model: &Model, cfg: &ExperimentConfig, srcs: &[Tokens], refs: &[Tokens], constraints: Vec<DecodeConstraint>) -> CliResult<Vec<Tokens>> {
    srcs.par_iter()
        .zip(refs)
        .zip(constraints)
        .enumerate()
        .map(|(i, ((s, r), c))| {
            // the reference may be longer than the free-decoding limit
            let opts = DecodeOptions {
                max_len: Some(default_max_len(s.len()).max(2 * r.len() + 2)),
                ..decode_options(cfg)
            };
            translate(model, s, &opts, &c).map(|t| t.tokens).map_err(|e| {
                CliError::Core(tagmt::Error::Sentence {
                    index: i,
                    source: Box::new(e),
                })
            })
        })
        .collect()
}

fn tags_of(stream: &[String]) -> Tokens {
    stream.iter().filter(|t| is_tag(t)).cloned().collect()
}

fn bucket_rows(system: &str, rep: &AccuracyReport) -> Vec<[String; 3]> {
    [("all", rep.overall), ("infrequent", rep.infrequent), ("oov", rep.oov)]
        .into_iter()
        .map(|(b, x): (&str, Bucket)| [system.to_string(), b.to_string(), fmt_opt(x.accuracy(), "absent")])
        .collect()
}

fn metric_rows(name: &str, rep: &AccuracyReport) -> Vec<[String; 2]> {
    let mut rows = Vec::new();
    for (b, x) in [("all", rep.overall), ("infrequent", rep.infrequent), ("oov", rep.oov)] {
        rows.push([format!("{name}.{b}.accuracy"), fmt_opt(x.accuracy(), "absent")]);
        rows.push([format!("{name}.{b}.total"), x.total.to_string()]);
    }
    rows
}

fn forced_stage(run: &Run, model: &Model, kind: TagKind, bpe: &[Streams; 3]) -> CliResult<ForcedSummary> {
    let cfg = run.cfg;
    let (srcs, refs) = (&bpe[2].src, &bpe[2].tgt);
    let freq = word_frequencies(&bpe[0].tgt);

    let by_tags = forced_translate(
        model,
        cfg,
        srcs,
        refs,
        refs.iter().map(|r| DecodeConstraint::ForceTags(tags_of(r))).collect(),
    )?;
    let exact = by_tags.iter().zip(refs).filter(|(d, r)| tags_of(d) == tags_of(r)).count();
    let surface_forms = prediction_accuracy(&by_tags, refs, AccuracyTarget::SurfaceForms, Some(&freq))?;

    let by_words = forced_translate(
        model,
        cfg,
        srcs,
        refs,
        refs.iter()
            .map(|r| DecodeConstraint::ForceWords(r.iter().filter(|t| !is_tag(t)).cloned().collect()))
            .collect(),
    )?;
    let tags = prediction_accuracy(&by_words, refs, AccuracyTarget::Tags, Some(&freq))?;
    let pos = match kind {
        TagKind::Msd => Some(prediction_accuracy(&by_words, refs, AccuracyTarget::Pos, Some(&freq))?),
        _ => None,
    };

    let (mut restrict_pos_agreement, mut restrict_pos_surface_forms) = (None, None);
    if kind == TagKind::Msd {
        let pos_of = |s: &[String]| -> Tokens { s.iter().filter_map(|t| tag_pos(t)).map(str::to_string).collect() };
        let restricted = forced_translate(
            model,
            cfg,
            srcs,
            refs,
            refs.iter().map(|r| DecodeConstraint::RestrictPos(pos_of(r))).collect(),
        )?;
        let (mut ok, mut total) = (0, 0);
        for (d, r) in restricted.iter().zip(refs) {
            let want = pos_of(r);
            for (k, t) in tags_of(d).iter().enumerate() {
                total += 1;
                ok += usize::from(want.get(k).map(String::as_str) == tag_pos(t));
            }
        }
        restrict_pos_agreement = Some(if total == 0 { 1.0 } else { ok as f64 / total as f64 });
        // word counts may differ from the reference once tags are free to vary
        let same_len: Vec<usize> = (0..refs.len())
            .filter(|&i| tagged_words(&restricted[i]).len() == tagged_words(&refs[i]).len())
            .collect();
        let pick = |v: &[Tokens]| -> Vec<Tokens> { same_len.iter().map(|&i| v[i].clone()).collect() };
        restrict_pos_surface_forms = Some(prediction_accuracy(
            &pick(&restricted),
            &pick(refs),
            AccuracyTarget::SurfaceForms,
            Some(&freq),
        )?);
    }

    let alternation = srcs
        .par_iter()
        .map(|s| alternation_agreement(model, s, None))
        .collect::<tagmt::Result<Vec<_>>>()?
        .into_iter()
        .fold((0, 0), |(a, t), (x, y)| (a + x, t + y));

    let summary = ForcedSummary {
        force_tags_exact: exact as f64 / refs.len() as f64,
        surface_forms,
        tags,
        pos,
        restrict_pos_agreement,
        restrict_pos_surface_forms,
        alternation,
    };

    let mut rows = vec![
        ["force_tags.exact_tag_sequences".to_string(), fmt_metric(summary.force_tags_exact)],
        ["alternation.agreeing_steps".into(), alternation.0.to_string()],
        ["alternation.steps".into(), alternation.1.to_string()],
        ["alternation.rate".into(), fmt_metric(summary.alternation_rate())],
    ];
    rows.extend(metric_rows("force_tags.surface_forms", &summary.surface_forms));
    rows.extend(metric_rows("force_words.tags", &summary.tags));
    if let Some(p) = &summary.pos {
        rows.extend(metric_rows("force_words.pos", p));
    }
    if let Some(a) = summary.restrict_pos_agreement {
        rows.push(["restrict_pos.tag_pos_agreement".into(), fmt_metric(a)]);
    }
    if let Some(r) = &summary.restrict_pos_surface_forms {
        rows.extend(metric_rows("restrict_pos.surface_forms", r));
    }
    fsio::write_tsv(&run.path("reports/forced.tsv"), rows)?;

    let arm = cfg.arm.to_string();
    let mut plot = vec![["system".to_string(), "bucket".into(), "accuracy".into()]];
    plot.extend(bucket_rows(&format!("{arm}:surface_forms"), &summary.surface_forms));
    plot.extend(bucket_rows(&format!("{arm}:tags"), &summary.tags));
    if let Some(p) = &summary.pos {
        plot.extend(bucket_rows(&format!("{arm}:pos"), p));
    }
    if let Some(r) = &summary.restrict_pos_surface_forms {
        plot.extend(bucket_rows(&format!("{arm}:restrict_pos_surface_forms"), r));
    }
    fsio::write_tsv(&run.path("reports/forced_buckets.tsv"), plot)?;
    Ok(summary)
}

/// Parses a run's `config.txt`.
pub fn read_run_config(dir: &Path) -> CliResult<ExperimentConfig> {
    ExperimentConfig::from_kv(&parse_kv(&fsio::read_text(&dir.join("config.txt"))?)?)
}
