use std::fs;
use std::path::Path;

use tagmt::annotate::is_tag;
use tagmt::nmt::Sizes;
use tagmt_cli::config::parse_kv;
use tagmt_cli::{grid_search, read_manifest_config, run_experiment, run_grid, CliError, ExperimentConfig, GridSpace};

fn tiny(extra: &str) -> ExperimentConfig {
    let text = format!(
        "corpus.synthetic.train = 120\n\
         corpus.synthetic.dev = 12\n\
         corpus.synthetic.test = 12\n\
         bpe.ops = 40\n\
         model.dim = 16\n\
         model.layers = 1\n\
         model.heads = 2\n\
         train.max_steps = 20\n\
         train.validate_every = 10\n\
         train.token_cap = 300\n\
         train.warmup_steps = 10\n\
         eval.bootstrap_iterations = 50\n\
         {extra}"
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn stages(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("manifest.tsv"))
        .unwrap()
        .lines()
        .filter_map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c[0] == "stage").then(|| (c[1].to_string(), c[2].to_string()))
        })
        .collect()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn baseline_run_lists_seven_stages_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny("");
    let a = tmp.path().join("a");
    let summary = run_experiment(&cfg, &a).unwrap();
    let expected = ["prep", "annotate", "bpe", "train", "translate", "eval", "errcat"];
    assert_eq!(summary.stages, expected);
    let listed = stages(&a);
    assert_eq!(listed.len(), 7);
    assert!(listed.iter().all(|(_, s)| s == "completed"));
    for sub in ["corpus", "bpe", "model", "translations", "reports"] {
        assert!(a.join(sub).is_dir(), "{sub} missing");
    }

    // the manifest alone rebuilds the configuration, and rerunning it gives
    // byte-identical reports
    let manifest = fs::read_to_string(a.join("manifest.tsv")).unwrap();
    let again = read_manifest_config(&manifest).unwrap();
    assert_eq!(again, cfg);
    let b = tmp.path().join("b");
    run_experiment(&again, &b).unwrap();
    assert_eq!(read_dir_sorted(&a.join("reports")), read_dir_sorted(&b.join("reports")));
    assert_eq!(
        fs::read(a.join("translations/test.raw")).unwrap(),
        fs::read(b.join("translations/test.raw")).unwrap()
    );
    assert_eq!(fs::read(a.join("manifest.tsv")).unwrap(), fs::read(b.join("manifest.tsv")).unwrap());
}

#[test]
fn manifest_hash_guards_the_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let err = run_experiment(&tiny("data.max_len = 0\n"), &dir).unwrap_err();
    assert!(matches!(err, CliError::Stage { .. }));
    let text = fs::read_to_string(dir.join("manifest.tsv")).unwrap();
    assert!(read_manifest_config(&text).is_ok());
    let forged = text.replace("config\tdata.max_len\t0", "config\tdata.max_len\t5");
    assert!(matches!(read_manifest_config(&forged), Err(CliError::Config(_))));
}

#[test]
fn target_tags_appear_before_stripping_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tl-pos");
    let summary = run_experiment(&tiny("arm = TL-POS\n"), &dir).unwrap();
    assert_eq!(summary.stages.last().map(String::as_str), Some("forced"));
    let raw = fs::read_to_string(dir.join("translations/test.raw")).unwrap();
    let txt = fs::read_to_string(dir.join("translations/test.txt")).unwrap();
    assert!(raw.split_whitespace().any(is_tag));
    assert!(!txt.split_whitespace().any(is_tag));
    let forced = summary.forced.unwrap();
    assert_eq!(forced.force_tags_exact, 1.0);
    assert!(forced.pos.is_none());
    let plot = fs::read_to_string(dir.join("reports/forced_buckets.tsv")).unwrap();
    assert!(plot.starts_with("system\tbucket\taccuracy\n"));
}

#[test]
fn failing_stage_is_named_and_keeps_earlier_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let missing = tmp.path().join("no-such-baseline");
    let cfg = tiny(&format!("baseline_run = {}\n", missing.display()));
    match run_experiment(&cfg, &dir) {
        Err(e @ CliError::Stage { .. }) => {
            let CliError::Stage { stage, .. } = &e else { unreachable!() };
            assert_eq!(stage, "eval");
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected a stage failure, got {other:?}"),
    }
    let listed = stages(&dir);
    assert_eq!(listed.last().unwrap(), &("eval".to_string(), "failed".to_string()));
    assert_eq!(listed.len(), 6);
    assert!(dir.join("translations/test.txt").is_file());
    assert!(dir.join("model/model.ckpt").is_file());
}

#[test]
fn baseline_comparison_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    run_experiment(&tiny(""), &base).unwrap();
    let dir = tmp.path().join("sys");
    let cfg = tiny(&format!("arm = SL-POS\nbaseline_run = {}\n", base.display()));
    run_experiment(&cfg, &dir).unwrap();
    let sig = parse_kv(
        &fs::read_to_string(dir.join("reports/significance.tsv"))
            .unwrap()
            .replace('\t', " = "),
    )
    .unwrap();
    let wins: usize = sig["wins_system"].parse().unwrap();
    let losses: usize = sig["wins_baseline"].parse().unwrap();
    let ties: usize = sig["ties"].parse().unwrap();
    assert_eq!(wins + losses + ties, 50);
    let errors = fs::read_to_string(dir.join("reports/errors.tsv")).unwrap();
    assert!(errors.lines().any(|l| l.starts_with("baseline\tinflection\t")));
    assert!(errors.lines().any(|l| l.starts_with("SL-POS\tlexical\t")));
}

#[test]
fn grid_single_points_return_base() {
    let base = tiny("");
    let space = GridSpace {
        bpe_ops: vec![base.bpe_src_ops],
        tied: vec![base.model.tied_embeddings],
        sizes: vec![base.model.sizes],
    };
    let out = grid_search(&space, &base, |_, _, _| Ok(1.0)).unwrap();
    assert_eq!(out.best, base);
    assert_eq!(out.ranking.len(), 3);
}

#[test]
fn grid_is_staged_and_keeps_winners() {
    let base = tiny("");
    let space = GridSpace {
        bpe_ops: vec![10, 20, 30],
        tied: vec![true, false],
        sizes: vec![
            Sizes::Transformer { dim: 8, layers: 1, heads: 2 },
            Sizes::Transformer { dim: 16, layers: 1, heads: 2 },
        ],
    };
    let mut seen = Vec::new();
    let out = grid_search(&space, &base, |cfg, stage, _| {
        seen.push((stage, cfg.bpe_src_ops, cfg.model.tied_embeddings));
        // 20 merges and untied embeddings score best; sizes tie
        let mut s = if cfg.bpe_src_ops == 20 { 50.0 } else { 10.0 };
        if !cfg.model.tied_embeddings {
            s += 5.0;
        }
        Ok(s)
    })
    .unwrap();
    assert_eq!(out.ranking.len(), 3 + 2 + 2);
    assert_eq!(out.best.bpe_src_ops, 20);
    assert_eq!(out.best.bpe_tgt_ops, 20);
    assert!(!out.best.model.tied_embeddings);
    // ties go to the first point
    assert_eq!(out.best.model.sizes, Sizes::Transformer { dim: 8, layers: 1, heads: 2 });
    // stage 2 already uses the stage 1 winner, stage 3 both winners
    assert!(seen[3..5].iter().all(|&(st, b, _)| st == 2 && b == 20));
    assert!(seen[5..].iter().all(|&(st, b, t)| st == 3 && b == 20 && !t));

    let empty = GridSpace {
        tied: vec![],
        ..space.clone()
    };
    assert!(matches!(grid_search(&empty, &base, |_, _, _| Ok(0.0)), Err(CliError::Config(_))));
    let tagged = tiny("arm = TL-MSD\n");
    assert!(matches!(grid_search(&space, &tagged, |_, _, _| Ok(0.0)), Err(CliError::Config(_))));
}

#[test]
fn grid_picks_the_size_that_learns_the_task() {
    // a 2-dimensional model cannot fit the synthetic pair, a 32-dimensional one
    // reaches a clearly positive dev BLEU with the same budget
    let base = ExperimentConfig::parse(
        "corpus.synthetic.train = 1000\n\
         corpus.synthetic.dev = 20\n\
         corpus.synthetic.test = 12\n\
         bpe.ops = 40\n\
         model.dim = 32\n\
         model.layers = 1\n\
         model.heads = 2\n\
         train.max_steps = 800\n\
         train.validate_every = 200\n\
         train.token_cap = 300\n\
         train.warmup_steps = 20\n\
         train.base_lr = 0.01\n",
    )
    .unwrap();
    let space = GridSpace {
        bpe_ops: vec![40],
        tied: vec![true],
        sizes: vec![
            Sizes::Transformer { dim: 2, layers: 1, heads: 1 },
            Sizes::Transformer { dim: 32, layers: 1, heads: 2 },
        ],
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = run_grid(&space, &base, tmp.path()).unwrap();
    let rank = fs::read_to_string(tmp.path().join("reports/grid_ranking.tsv")).unwrap();
    assert_eq!(rank.lines().count(), 1 + 4);
    let scores: Vec<f64> = out.ranking.iter().map(|r| r.dev_bleu).collect();
    assert!(scores[3] > scores[2] + 10.0, "{scores:?}");
    assert_eq!(out.best.model.sizes, Sizes::Transformer { dim: 32, layers: 1, heads: 2 });
    assert!(tmp.path().join("best_config.txt").is_file());
}

#[test]
fn file_corpus_with_annotations_runs_every_stage() {
    use tagmt::annotate::synth::synth_corpus;
    use tagmt::annotate::{write_conllu, AnnotatedSentence};

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let all = synth_corpus(5, 150);
    let mut keys = String::from("corpus.kind = files\ncorpus.pretokenized = true\n");
    for (name, range) in [("train", 0..120), ("dev", 120..135), ("test", 135..150)] {
        let part = &all[range];
        let lines = |f: &dyn Fn(usize) -> String| (0..part.len()).map(f).collect::<Vec<_>>().join("\n") + "\n";
        fs::write(d.join(format!("{name}.src")), lines(&|i| part[i].pair.src.join(" "))).unwrap();
        fs::write(d.join(format!("{name}.tgt")), lines(&|i| part[i].pair.tgt.join(" "))).unwrap();
        let mut tgt_ann: Vec<AnnotatedSentence> = part.iter().map(|e| e.tgt.clone()).collect();
        if name == "train" {
            // one annotation that does not match its sentence is dropped
            tgt_ann[0].tokens[0].form.push('x');
        }
        fs::write(d.join(format!("{name}.tgt.conllu")), write_conllu(&tgt_ann)).unwrap();
        for side in ["src", "tgt"] {
            keys.push_str(&format!("corpus.{name}.{side} = {}\n", d.join(format!("{name}.{side}")).display()));
        }
        keys.push_str(&format!(
            "corpus.{name}.tgt_conllu = {}\n",
            d.join(format!("{name}.tgt.conllu")).display()
        ));
    }
    let cfg = tiny(&format!("{keys}arm = TL-MSD\n"));
    let out = d.join("run");
    let summary = run_experiment(&cfg, &out).unwrap();
    assert_eq!(summary.stages.len(), 8);
    let train_lines = fs::read_to_string(out.join("corpus/train.tgt")).unwrap().lines().count();
    assert_eq!(train_lines, 119);
    assert!(out.join("corpus/test.tgt.conllu").is_file());
    assert!(!out.join("corpus/test.src.conllu").exists());

    // a source-side arm needs source annotations this corpus does not have
    let err = run_experiment(&tiny(&format!("{keys}arm = SL-POS\n")), &d.join("sl")).unwrap_err();
    match err {
        CliError::Stage { stage, .. } => assert_eq!(stage, "annotate"),
        other => panic!("{other:?}"),
    }
}
