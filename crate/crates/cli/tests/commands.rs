use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tagmt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagmt"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_kv(out: &Output) -> Vec<(String, String)> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn value(out: &Output, key: &str) -> String {
    stdout_kv(out)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("{key} missing in {}", String::from_utf8_lossy(&out.stdout)))
        .1
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tagmt(tmp.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(tagmt(tmp.path(), &["eval-bleu", "--hyp", "x"]).status.code(), Some(1));
    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "model.famly = transformer\n").unwrap();
    let out = tagmt(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tagmt(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tagmt(tmp.path(), &["eval-bleu", "--hyp", &p(tmp.path(), "a"), "--reference", &p(tmp.path(), "b")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synthetic_files_through_the_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(tagmt(d, &["synth", "--n", "60", "--seed", "3"]).status.success());
    for f in ["synth.src", "synth.tgt", "synth.src.conllu", "synth.tgt.conllu"] {
        assert!(d.join(f).is_file(), "{f}");
    }

    let out = tagmt(d, &["eval-bleu", "--hyp", &p(d, "synth.tgt"), "--reference", &p(d, "synth.tgt")]);
    assert!(out.status.success());
    assert_eq!(value(&out, "bleu"), "100.000000");

    let out = tagmt(
        d,
        &[
            "annotate",
            "--input",
            &p(d, "synth.tgt"),
            "--conllu",
            &p(d, "synth.tgt.conllu"),
            "--kind",
            "msd",
            "--output",
            &p(d, "tgt.msd"),
        ],
    );
    assert!(out.status.success());
    let tagged = fs::read_to_string(d.join("tgt.msd")).unwrap();
    let words = fs::read_to_string(d.join("synth.tgt")).unwrap();
    assert_eq!(
        tagged.split_whitespace().count(),
        2 * words.split_whitespace().count()
    );

    assert!(tagmt(d, &["bpe-learn", "--input", &p(d, "tgt.msd"), "--ops", "30", "--output", &p(d, "m")])
        .status
        .success());
    assert!(tagmt(d, &["bpe-apply", "--merges", &p(d, "m"), "--input", &p(d, "tgt.msd"), "--output", &p(d, "tgt.bpe")])
        .status
        .success());
    let seg = fs::read_to_string(d.join("tgt.bpe")).unwrap();
    assert!(seg.contains("@@"));

    // hypotheses equal to the references have no errors
    let out = tagmt(d, &["errcat", "--hyp", &p(d, "synth.tgt"), "--reference-conllu", &p(d, "synth.tgt.conllu")]);
    assert!(out.status.success());
    assert_eq!(value(&out, "total"), "0");
    let out = tagmt(
        d,
        &[
            "errcat",
            "--hyp",
            &p(d, "synth.tgt"),
            "--reference-conllu",
            &p(d, "synth.tgt.conllu"),
            "--lexicon-conllu",
            &p(d, "synth.tgt.conllu"),
        ],
    );
    assert_eq!(value(&out, "total"), "0");

    let out = tagmt(
        d,
        &[
            "eval-signif",
            "--a",
            &p(d, "synth.tgt"),
            "--b",
            &p(d, "synth.tgt"),
            "--reference",
            &p(d, "synth.tgt"),
            "--iterations",
            "100",
        ],
    );
    assert_eq!(value(&out, "ties"), "100");
    assert_eq!(value(&out, "a_better"), "false");
}

#[test]
fn prep_filters_and_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("s"), "The cat sat.\nA dog ran away quickly today.\nIt rains.\n").unwrap();
    fs::write(d.join("t"), "Le chat.\nUn chien.\nIl pleut.\n").unwrap();
    let out = tagmt(d, &["prep", "--src", &p(d, "s"), "--tgt", &p(d, "t"), "--max-len", "4"]);
    assert!(out.status.success());
    let kept = fs::read_to_string(d.join("prep.src")).unwrap();
    assert_eq!(kept.lines().count(), 2);
    assert!(kept.starts_with("The cat sat ."));
    let out = tagmt(d, &["prep", "--src", &p(d, "s"), "--tgt", &p(d, "t"), "--sample", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_translate_and_forced_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(tagmt(d, &["synth", "--n", "80"]).status.success());
    assert!(tagmt(
        d,
        &[
            "annotate",
            "--input",
            &p(d, "synth.tgt"),
            "--conllu",
            &p(d, "synth.tgt.conllu"),
            "--kind",
            "pos",
            "--output",
            &p(d, "tgt.pos"),
        ],
    )
    .status
    .success());
    let cfg = d.join("cfg.txt");
    fs::write(
        &cfg,
        "model.dim = 16\nmodel.layers = 1\nmodel.heads = 2\ntrain.max_steps = 10\ntrain.validate_every = 5\ntrain.token_cap = 200\ndecode.beam = 2\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let out = tagmt(
        d,
        &[
            "train",
            "--config",
            c,
            "--train-src",
            &p(d, "synth.src"),
            "--train-tgt",
            &p(d, "tgt.pos"),
            "--dev-src",
            &p(d, "synth.src"),
            "--dev-tgt",
            &p(d, "tgt.pos"),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("model.ckpt").is_file());
    assert!(d.join("validation.tsv").is_file());

    let out = tagmt(
        d,
        &[
            "translate",
            "--config",
            c,
            "--model",
            &p(d, "model.ckpt"),
            "--input",
            &p(d, "synth.src"),
            "--output",
            &p(d, "hyp.raw"),
            "--raw",
            "--scores",
            &p(d, "scores"),
        ],
    );
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(d.join("hyp.raw")).unwrap().lines().count(), 80);
    assert_eq!(fs::read_to_string(d.join("scores")).unwrap().lines().count(), 80);

    let out = tagmt(
        d,
        &[
            "forced-eval",
            "--config",
            c,
            "--model",
            &p(d, "model.ckpt"),
            "--src",
            &p(d, "synth.src"),
            "--reference",
            &p(d, "tgt.pos"),
            "--mode",
            "force-tags",
            "--train-reference",
            &p(d, "tgt.pos"),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(value(&out, "exact_tag_sequences"), "1.000000");
    assert_eq!(value(&out, "surface_forms.oov.accuracy"), "absent");

    let out = tagmt(
        d,
        &[
            "forced-eval",
            "--model",
            &p(d, "model.ckpt"),
            "--src",
            &p(d, "synth.src"),
            "--reference",
            &p(d, "tgt.pos"),
            "--mode",
            "force-words",
        ],
    );
    assert!(out.status.success());
    let acc: f64 = value(&out, "tags.all.accuracy").parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(tagmt(d, &["synth", "--n", "20"]).status.success());
    let cfg = d.join("cfg.txt");
    fs::write(
        &cfg,
        "model.family = recurrent\nmodel.hidden = 8\nmodel.embedding = 8\ntrain.base_lr = 1e308\ntrain.warmup_steps = 1\ntrain.clip_norm = 0\ntrain.max_steps = 20\ntrain.validate_every = 10\n",
    )
    .unwrap();
    let out = tagmt(
        d,
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--train-src",
            &p(d, "synth.src"),
            "--train-tgt",
            &p(d, "synth.tgt"),
            "--dev-src",
            &p(d, "synth.src"),
            "--dev-tgt",
            &p(d, "synth.tgt"),
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
