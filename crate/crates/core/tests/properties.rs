use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tagmt::annotate::{AnnotatedToken, Feats, Upos};
use tagmt::decode::{beam_search, StepScorer};
use tagmt::errcat::{align, classify_detailed, classify_errors, EditOp};
use tagmt::eval::{bleu, paired_bootstrap};

fn words() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from), 0..10)
}

fn nonempty_corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
    // classic BLEU is zero when no sentence has a 4-gram, so identity needs one
    proptest::collection::vec(words(), 1..8).prop_filter("a 4-gram", |c| c.iter().any(|s| s.len() >= 4))
}

fn annotated(ws: &[String]) -> Vec<AnnotatedToken> {
    // two lemmas over six forms
    ws.iter()
        .map(|w| {
            let lemma = if w.as_str() < "d" { "p" } else { "q" };
            AnnotatedToken::new(w, lemma, Upos::X, Feats::new())
        })
        .collect()
}

proptest! {
    #[test]
    fn bleu_of_identity_is_hundred(c in nonempty_corpus()) {
        prop_assert_eq!(bleu(&c, &c).unwrap().score, 100.0);
    }

    #[test]
    fn bleu_ignores_sentence_order(
        pairs in proptest::collection::vec((words(), words()), 1..8),
        seed in any::<u64>(),
    ) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let (h2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(bleu(&h, &r).unwrap().score, bleu(&h2, &r2).unwrap().score);
    }

    #[test]
    fn no_errors_against_itself(ws in words()) {
        let a = annotated(&ws);
        prop_assert_eq!(classify_errors(&a, &a).unwrap().total(), 0);
    }

    #[test]
    fn one_category_per_edit_operation(h in words(), r in words()) {
        let c = classify_detailed(&annotated(&h), &annotated(&r)).unwrap();
        let edits = align(&h, &r)
            .into_iter()
            .filter(|op| !matches!(*op, EditOp::Diag(i, j) if h[i] == r[j]))
            .count();
        prop_assert_eq!(c.counts.total(), edits);
        prop_assert_eq!(c.ops.len(), edits);
    }

    #[test]
    fn transpositions_give_paired_reordering(
        ws in proptest::collection::btree_set(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 2..6),
        i in 0usize..6,
        j in 0usize..6,
    ) {
        let r: Vec<String> = ws.into_iter().map(String::from).collect();
        let (i, j) = (i % r.len(), j % r.len());
        prop_assume!(i != j);
        let mut h = r.clone();
        h.swap(i, j);
        // distinct lemmas so that the swap cannot read as inflection
        let distinct = |ws: &[String]| -> Vec<AnnotatedToken> {
            ws.iter().map(|w| AnnotatedToken::new(w, w, Upos::X, Feats::new())).collect()
        };
        let c = classify_errors(&distinct(&h), &distinct(&r)).unwrap();
        prop_assert_eq!(c.reordering % 2, 0);
        prop_assert!(c.reordering > 0);
        prop_assert_eq!(c.total(), c.reordering);
    }
}

// ---------------------------------------------------------------- bootstrap

#[test]
fn duplicating_the_corpus_keeps_a_dominant_system_significant() {
    let vocab = ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"];
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<Vec<String>> = (0..40)
            .map(|_| (0..rng.gen_range(4..10)).map(|_| vocab[rng.gen_range(0..8)].to_string()).collect())
            .collect();
        // A damages one word per sentence, B damages two
        let damage = |k: usize| -> Vec<Vec<String>> {
            refs.iter()
                .map(|r| r.iter().enumerate().map(|(i, w)| if i < k { "x".into() } else { w.clone() }).collect())
                .collect()
        };
        let (a, b) = (damage(1), damage(2));
        let double = |c: &Vec<Vec<String>>| -> Vec<Vec<String>> { c.iter().chain(c).cloned().collect() };
        let once = paired_bootstrap(&a, &b, &refs, 300, 0.05, seed).unwrap();
        let twice = paired_bootstrap(&double(&a), &double(&b), &double(&refs), 300, 0.05, seed).unwrap();
        if once.a_better {
            assert!(twice.a_better, "seed {seed}: {once:?} / {twice:?}");
        }
    }
}

// ---------------------------------------------------------------- beam

struct Table {
    /// Rows indexed by previous symbol (row 0 is the start).
    lp: Vec<Vec<f64>>,
}

impl StepScorer for Table {
    fn eos(&self) -> usize {
        0
    }

    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>> {
        prefixes.iter().map(|p| self.lp[p.last().copied().unwrap_or(0)].clone()).collect()
    }
}

fn random_table(seed: u64, symbols: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lp = (0..symbols)
        .map(|_| {
            let w: Vec<f64> = (0..symbols).map(|_| rng.gen_range(0.01..1.0f64).powi(3)).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| (x / z).ln()).collect()
        })
        .collect();
    Table { lp }
}

/// Beam search gives no such guarantee in general; checked empirically on
/// random bigram tables, with and without length normalisation.
#[test]
fn wider_beams_score_no_worse() {
    let all = |_: &[usize]| vec![0, 1, 2, 3];
    for seed in 0..300 {
        let t = random_table(seed, 4);
        for alpha in [0.0, 1.0] {
            for b in 1..8 {
                let lo = beam_search(&t, b, 6, alpha, all).unwrap().normalized(alpha);
                let hi = beam_search(&t, b + 1, 6, alpha, all).unwrap().normalized(alpha);
                assert!(hi >= lo - 1e-12, "seed {seed}, alpha {alpha}, beam {b}: {hi} < {lo}");
            }
        }
    }
}
