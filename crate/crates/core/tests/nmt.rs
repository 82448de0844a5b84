use tagmt::nmt::{
    grad_check, grad_check_batch, read_checkpoint, train, write_checkpoint, Batch, Family, Model, ModelConfig,
    ParallelCorpus, StopReason, TrainingConfig, Vocabulary,
};
use tagmt::Error;

fn toy_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for tied in [false, true] {
        let mut r = ModelConfig::recurrent(5, 4);
        r.tied_embeddings = tied;
        let mut t = ModelConfig::transformer(8, 2, 2);
        t.tied_embeddings = tied;
        out.push(r);
        out.push(t);
    }
    out
}

#[test]
fn gradients_match_finite_differences() {
    for cfg in toy_configs() {
        let rep = grad_check(&cfg, 1e-5).unwrap();
        println!("{:?} tied={} -> {:?}", cfg.family(), cfg.tied_embeddings, rep);
        assert!(rep.checked > 50);
        assert!(rep.max_rel_error < 1e-4, "{cfg:?}: {rep:?}");
    }
}

#[test]
fn zero_length_target_is_rejected() {
    let batch = Batch {
        src: vec![vec![4, 5]],
        tgt: vec![vec![]],
    };
    let err = grad_check_batch(&ModelConfig::recurrent(4, 4), 4, 4, &batch, 1e-5, 3, 1).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn tiny_corpus() -> ParallelCorpus {
    let src = ["a b c", "b c", "c a", "a a b", "b"];
    let tgt = ["x y z", "y z", "z x", "x x y", "y"];
    ParallelCorpus::new(
        src.iter().map(|s| toks(s)).collect(),
        tgt.iter().map(|s| toks(s)).collect(),
    )
    .unwrap()
}

#[test]
fn tied_embeddings_share_one_tensor() {
    let v = Vocabulary::build(&[toks("a b")]).unwrap();
    for family in [Family::Recurrent, Family::Transformer] {
        let mut cfg = ModelConfig::desk(family);
        cfg.tied_embeddings = true;
        let m = Model::new(cfg.clone(), v.clone(), v.clone(), 1).unwrap();
        assert_eq!(m.output_param(), m.target_embedding_param());
        cfg.tied_embeddings = false;
        let m2 = Model::new(cfg, v.clone(), v.clone(), 1).unwrap();
        assert_ne!(m2.output_param(), m2.target_embedding_param());
        assert!(m2.params().num_scalars() > m.params().num_scalars());
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let v = Vocabulary::build(&[toks("a b c")]).unwrap();
    for cfg in toy_configs() {
        let mut m = Model::new(cfg, v.clone(), v.clone(), 3).unwrap();
        m.step = 42;
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.config(), m.config());
        assert_eq!(back.src_vocab(), m.src_vocab());
        assert_eq!(back.params(), m.params());
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }
    assert!(read_checkpoint(&b"NOTACKPT...."[..]).is_err());
}

fn quick_cfg(family: Family) -> (ModelConfig, TrainingConfig) {
    let mut m = match family {
        Family::Recurrent => ModelConfig::recurrent(8, 8),
        Family::Transformer => ModelConfig::transformer(8, 1, 2),
    };
    m.dropout = 0.1;
    let mut t = TrainingConfig::desk(family);
    t.validate_every = 5;
    t.max_steps = 12;
    t.token_cap = 12;
    t.warmup_steps = 4;
    t.seed = 9;
    (m, t)
}

#[test]
fn training_is_deterministic() {
    let data = tiny_corpus();
    for family in [Family::Recurrent, Family::Transformer] {
        let (m, t) = quick_cfg(family);
        let a = train(&m, &t, &data, &data).unwrap();
        let b = train(&m, &t, &data, &data).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.log, b.log);
        assert_eq!(a.stop, StopReason::MaxSteps);
        assert_eq!(a.steps, 12);
    }
}

#[test]
fn zero_patience_returns_initial_weights() {
    let data = tiny_corpus();
    let (m, mut t) = quick_cfg(Family::Transformer);
    t.patience = 0;
    let out = train(&m, &t, &data, &data).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.stop, StopReason::Patience);
    let fresh = Model::new(
        m,
        Vocabulary::build(&data.src).unwrap(),
        Vocabulary::build(&data.tgt).unwrap(),
        t.seed,
    )
    .unwrap();
    assert_eq!(out.model.params(), fresh.params());
}

#[test]
fn divergence_is_reported() {
    let data = tiny_corpus();
    let (m, mut t) = quick_cfg(Family::Recurrent);
    t.base_lr = f64::MAX;
    t.clip_norm = 0.0;
    match train(&m, &t, &data, &data) {
        Err(Error::Diverged { step, .. }) => assert!(step >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn loss_decreases_on_a_copy_task() {
    let data = tiny_corpus();
    for family in [Family::Recurrent, Family::Transformer] {
        let (m, mut t) = quick_cfg(family);
        t.max_steps = 150;
        t.validate_every = 50;
        t.patience = 10;
        t.base_lr = 0.01;
        t.warmup_steps = 20;
        let out = train(&m, &t, &data, &data).unwrap();
        let first = out.log.first().unwrap().dev_perplexity;
        let last = out.log.last().unwrap().dev_perplexity;
        assert!(last < first / 2.0, "{family}: {first} -> {last}");
    }
}

#[test]
fn loss_ignores_batch_order() {
    let c = tiny_corpus();
    let sv = Vocabulary::build(&c.src).unwrap();
    let tv = Vocabulary::build(&c.tgt).unwrap();
    for cfg in toy_configs() {
        let m = Model::new(cfg, sv.clone(), tv.clone(), 5).unwrap();
        let base = m.loss(&m.batch_from_tokens(&c.src, &c.tgt)).unwrap();
        for perm in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 2, 3, 4, 0]] {
            let src: Vec<_> = perm.iter().map(|&i| c.src[i].clone()).collect();
            let tgt: Vec<_> = perm.iter().map(|&i| c.tgt[i].clone()).collect();
            let l = m.loss(&m.batch_from_tokens(&src, &tgt)).unwrap();
            assert!((l - base).abs() < 1e-12 * base.abs().max(1.0), "{l} vs {base}");
        }
    }
}
