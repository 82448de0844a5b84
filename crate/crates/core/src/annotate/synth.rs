//! Synthetic annotated language pair for desk-scale experiments.
//!
//! The source side is an English-like SVO language with determiners, number on
//! nouns and person/number/tense on verbs. The target side is an agglutinative
//! SOV language without determiners, where every noun is `lemma + number + case`
//! and every verb is `lemma + tense + agreement`. The translation is a
//! deterministic function of the source sentence.
//!
//! ```text
//! the big dogs saw the cat in the house .
//! suur kopata kodussa mirun nakot .
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, AnnotatedToken, Feats, Upos};
use crate::textproc::SentencePair;

struct Noun {
    sing: &'static str,
    plur: &'static str,
    tgt: &'static str,
}

struct Verb {
    base: &'static str,
    third: &'static str,
    past: &'static str,
    tgt: &'static str,
}

const NOUNS: &[Noun] = &[
    Noun { sing: "dog", plur: "dogs", tgt: "kopa" },
    Noun { sing: "cat", plur: "cats", tgt: "miru" },
    Noun { sing: "bird", plur: "birds", tgt: "tavi" },
    Noun { sing: "horse", plur: "horses", tgt: "esko" },
    Noun { sing: "child", plur: "children", tgt: "lapo" },
    Noun { sing: "king", plur: "kings", tgt: "ruha" },
    Noun { sing: "farmer", plur: "farmers", tgt: "talni" },
    Noun { sing: "wolf", plur: "wolves", tgt: "susi" },
    Noun { sing: "house", plur: "houses", tgt: "kodu" },
    Noun { sing: "tree", plur: "trees", tgt: "metsa" },
    Noun { sing: "river", plur: "rivers", tgt: "joki" },
    Noun { sing: "stone", plur: "stones", tgt: "kivu" },
    Noun { sing: "garden", plur: "gardens", tgt: "sodo" },
    Noun { sing: "city", plur: "cities", tgt: "lino" },
    Noun { sing: "field", plur: "fields", tgt: "pelo" },
    Noun { sing: "boat", plur: "boats", tgt: "vene" },
];

const VERBS: &[Verb] = &[
    Verb { base: "see", third: "sees", past: "saw", tgt: "nak" },
    Verb { base: "find", third: "finds", past: "found", tgt: "loyd" },
    Verb { base: "like", third: "likes", past: "liked", tgt: "pit" },
    Verb { base: "follow", third: "follows", past: "followed", tgt: "seur" },
    Verb { base: "carry", third: "carries", past: "carried", tgt: "kant" },
    Verb { base: "watch", third: "watches", past: "watched", tgt: "katsel" },
];

const ADJECTIVES: &[(&str, &str)] = &[
    ("big", "suur"),
    ("small", "pien"),
    ("old", "vanh"),
    ("red", "punai"),
    ("young", "nuor"),
    ("green", "vihr"),
];

const PLURAL: &str = "ta";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Nom,
    Acc,
    Dat,
    Loc,
}

impl Case {
    const ALL: [Case; 4] = [Case::Nom, Case::Acc, Case::Dat, Case::Loc];

    fn suffix(self) -> &'static str {
        match self {
            Case::Nom => "",
            Case::Acc => "n",
            Case::Dat => "lle",
            Case::Loc => "ssa",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Case::Nom => "Nom",
            Case::Acc => "Acc",
            Case::Dat => "Dat",
            Case::Loc => "Loc",
        }
    }
}

fn tense_suffix(past: bool) -> &'static str {
    if past {
        "o"
    } else {
        "a"
    }
}

fn agreement_suffix(plural: bool) -> &'static str {
    if plural {
        "t"
    } else {
        ""
    }
}

fn number_name(plural: bool) -> &'static str {
    if plural {
        "Plur"
    } else {
        "Sing"
    }
}

/// One synthetic sentence pair with annotations on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthExample {
    pub pair: SentencePair,
    pub src: AnnotatedSentence,
    pub tgt: AnnotatedSentence,
}

#[derive(Clone, Copy)]
struct NounPhrase {
    noun: usize,
    adj: Option<usize>,
    plural: bool,
}

/// Generates `n` sentence pairs; identical for identical seeds.
pub fn synth_corpus(seed: u64, n: usize) -> Vec<SynthExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|id| generate(&mut rng, id)).collect()
}

fn noun_phrase(rng: &mut ChaCha8Rng) -> NounPhrase {
    NounPhrase {
        noun: rng.gen_range(0..NOUNS.len()),
        adj: rng.gen_bool(0.3).then(|| rng.gen_range(0..ADJECTIVES.len())),
        plural: rng.gen_bool(0.4),
    }
}

fn generate(rng: &mut ChaCha8Rng, id: usize) -> SynthExample {
    let subj = noun_phrase(rng);
    let obj = noun_phrase(rng);
    let verb = rng.gen_range(0..VERBS.len());
    let past = rng.gen_bool(0.5);
    let adjunct = rng
        .gen_bool(0.4)
        .then(|| (if rng.gen_bool(0.5) { Case::Loc } else { Case::Dat }, noun_phrase(rng)));

    let mut src = Vec::new();
    push_source_np(&mut src, subj);
    let v = &VERBS[verb];
    let (form, feats) = match (past, subj.plural) {
        (true, _) => (
            v.past,
            Feats::new()
                .with("Mood", "Ind")
                .with("Tense", "Past")
                .with("VerbForm", "Fin"),
        ),
        (false, plural) => (
            if plural { v.base } else { v.third },
            Feats::new()
                .with("Mood", "Ind")
                .with("Number", number_name(plural))
                .with("Person", "3")
                .with("Tense", "Pres")
                .with("VerbForm", "Fin"),
        ),
    };
    src.push(AnnotatedToken::new(form, v.base, Upos::VERB, feats));
    push_source_np(&mut src, obj);
    if let Some((case, np)) = adjunct {
        let prep = if case == Case::Loc { "in" } else { "to" };
        src.push(AnnotatedToken::new(prep, prep, Upos::ADP, Feats::new()));
        push_source_np(&mut src, np);
    }
    src.push(AnnotatedToken::new(".", ".", Upos::PUNCT, Feats::new()));

    let mut tgt = Vec::new();
    push_target_np(&mut tgt, subj, Case::Nom);
    if let Some((case, np)) = adjunct {
        push_target_np(&mut tgt, np, case);
    }
    push_target_np(&mut tgt, obj, Case::Acc);
    tgt.push(target_verb(verb, past, subj.plural));
    tgt.push(AnnotatedToken::new(".", ".", Upos::PUNCT, Feats::new()));

    let src = AnnotatedSentence::new(src);
    let tgt = AnnotatedSentence::new(tgt);
    SynthExample {
        pair: SentencePair::new(id, src.forms(), tgt.forms()),
        src,
        tgt,
    }
}

fn push_source_np(out: &mut Vec<AnnotatedToken>, np: NounPhrase) {
    out.push(AnnotatedToken::new(
        "the",
        "the",
        Upos::DET,
        Feats::new().with("Definite", "Def").with("PronType", "Art"),
    ));
    if let Some(a) = np.adj {
        let adj = ADJECTIVES[a].0;
        out.push(AnnotatedToken::new(adj, adj, Upos::ADJ, Feats::new().with("Degree", "Pos")));
    }
    let n = &NOUNS[np.noun];
    let form = if np.plural { n.plur } else { n.sing };
    out.push(AnnotatedToken::new(
        form,
        n.sing,
        Upos::NOUN,
        Feats::new().with("Number", number_name(np.plural)),
    ));
}

fn push_target_np(out: &mut Vec<AnnotatedToken>, np: NounPhrase, case: Case) {
    if let Some(a) = np.adj {
        let adj = ADJECTIVES[a].1;
        out.push(AnnotatedToken::new(adj, adj, Upos::ADJ, Feats::new()));
    }
    out.push(target_noun(np.noun, np.plural, case));
}

fn target_noun(noun: usize, plural: bool, case: Case) -> AnnotatedToken {
    let lemma = NOUNS[noun].tgt;
    let form = format!(
        "{lemma}{}{}",
        if plural { PLURAL } else { "" },
        case.suffix()
    );
    AnnotatedToken::new(
        &form,
        lemma,
        Upos::NOUN,
        Feats::new()
            .with("Case", case.name())
            .with("Number", number_name(plural)),
    )
}

fn target_verb(verb: usize, past: bool, plural: bool) -> AnnotatedToken {
    let lemma = VERBS[verb].tgt;
    let form = format!("{lemma}{}{}", tense_suffix(past), agreement_suffix(plural));
    AnnotatedToken::new(
        &form,
        lemma,
        Upos::VERB,
        Feats::new()
            .with("Number", number_name(plural))
            .with("Person", "3")
            .with("Tense", if past { "Past" } else { "Pres" }),
    )
}

/// Inverse of the target morphology: recovers lemma, POS and features of a
/// target-language word form. Returns `None` for forms the generator cannot produce.
pub fn analyze_target(form: &str) -> Option<AnnotatedToken> {
    if form == "." {
        return Some(AnnotatedToken::new(".", ".", Upos::PUNCT, Feats::new()));
    }
    if let Some(&(_, adj)) = ADJECTIVES.iter().find(|(_, t)| *t == form) {
        return Some(AnnotatedToken::new(adj, adj, Upos::ADJ, Feats::new()));
    }
    for (i, n) in NOUNS.iter().enumerate() {
        let Some(rest) = form.strip_prefix(n.tgt) else {
            continue;
        };
        let (plural, rest) = match rest.strip_prefix(PLURAL) {
            Some(r) => (true, r),
            None => (false, rest),
        };
        if let Some(case) = Case::ALL.iter().find(|c| c.suffix() == rest) {
            return Some(target_noun(i, plural, *case));
        }
    }
    for (i, v) in VERBS.iter().enumerate() {
        let Some(rest) = form.strip_prefix(v.tgt) else {
            continue;
        };
        for past in [false, true] {
            for plural in [false, true] {
                if rest == format!("{}{}", tense_suffix(past), agreement_suffix(plural)) {
                    return Some(target_verb(i, past, plural));
                }
            }
        }
    }
    None
}

/// Annotates decoded target tokens with the rule-based analyser; unknown forms
/// become `X` with the form as lemma.
pub fn lemmatize_target(tokens: &[String]) -> Vec<AnnotatedToken> {
    tokens
        .iter()
        .map(|t| {
            analyze_target(t)
                .unwrap_or_else(|| AnnotatedToken::new(t, t, Upos::X, Feats::new()))
        })
        .collect()
}

/// Every target lemma the generator knows, for lexicon checks.
pub fn target_lemmas() -> Vec<&'static str> {
    NOUNS
        .iter()
        .map(|n| n.tgt)
        .chain(VERBS.iter().map(|v| v.tgt))
        .chain(ADJECTIVES.iter().map(|a| a.1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{interleave, is_tag, render_tag, tag_kind_of, TagKind};

    #[test]
    fn deterministic() {
        assert_eq!(synth_corpus(1, 3), synth_corpus(1, 3));
        assert_ne!(synth_corpus(1, 20), synth_corpus(2, 20));
    }

    #[test]
    fn target_tokens_roundtrip_through_analyser() {
        for ex in synth_corpus(5, 500) {
            for tok in &ex.tgt.tokens {
                assert_eq!(analyze_target(&tok.form).as_ref(), Some(tok));
                let tag = render_tag(tok, TagKind::Msd);
                assert_eq!(tag_kind_of(&tag.payload), Some(TagKind::Msd));
            }
        }
    }

    #[test]
    fn lemmas_are_prefix_free() {
        let lemmas = target_lemmas();
        for a in &lemmas {
            for b in &lemmas {
                if a != b {
                    assert!(!b.starts_with(a), "{a} is a prefix of {b}");
                }
            }
        }
    }

    #[test]
    fn surface_vocabulary_disjoint_from_tags() {
        for ex in synth_corpus(9, 300) {
            for tok in ex.src.tokens.iter().chain(&ex.tgt.tokens) {
                assert!(!is_tag(&tok.form), "{}", tok.form);
            }
        }
    }

    #[test]
    fn shape_of_pairs() {
        for ex in synth_corpus(3, 200) {
            assert_eq!(ex.pair.src, ex.src.forms());
            assert_eq!(ex.pair.tgt, ex.tgt.forms());
            assert!(ex.src.len() >= 6 && ex.tgt.len() >= 4);
            assert_eq!(ex.tgt.tokens.last().unwrap().form, ".");
            // one verb per sentence, sentence-final before the full stop
            let t = &ex.tgt.tokens;
            assert_eq!(t[t.len() - 2].upos, Upos::VERB);
            let stream = interleave(&ex.tgt, TagKind::Pos);
            assert_eq!(stream.len(), 2 * t.len());
        }
    }

    #[test]
    fn unknown_forms_are_x() {
        let toks = lemmatize_target(&["kopatan".to_string(), "zzz".to_string()]);
        assert_eq!(toks[0].lemma, "kopa");
        assert_eq!(toks[0].feats.get("Case"), Some("Acc"));
        assert_eq!(toks[1].upos, Upos::X);
        assert_eq!(toks[1].lemma, "zzz");
    }
}
