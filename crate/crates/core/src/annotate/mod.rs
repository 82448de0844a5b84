//! Word-level linguistic annotations and their interleaving into token streams.
//!
//! Every word receives exactly one tag, placed immediately before it:
//!
//! ```text
//! PRON_Case=Nom|Gender=Neut|Number=Sing|Person=3|PronType=Prs it AUX_... has ...
//! ```
//!
//! Tags are recognised by grammar rather than by position (see [`is_tag`]), so
//! stripping tolerates decoder output that breaks the tag/word alternation.

mod conllu;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use conllu::{match_annotations, parse_conllu, write_conllu};

use crate::Tokens;

/// The fixed dummy tag.
pub const DUM: &str = "<dum>";

/// Universal part-of-speech inventory.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Upos {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    INTJ,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    SCONJ,
    SYM,
    VERB,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::ADJ,
        Upos::ADP,
        Upos::ADV,
        Upos::AUX,
        Upos::CCONJ,
        Upos::DET,
        Upos::INTJ,
        Upos::NOUN,
        Upos::NUM,
        Upos::PART,
        Upos::PRON,
        Upos::PROPN,
        Upos::PUNCT,
        Upos::SCONJ,
        Upos::SYM,
        Upos::VERB,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::ADJ => "ADJ",
            Upos::ADP => "ADP",
            Upos::ADV => "ADV",
            Upos::AUX => "AUX",
            Upos::CCONJ => "CCONJ",
            Upos::DET => "DET",
            Upos::INTJ => "INTJ",
            Upos::NOUN => "NOUN",
            Upos::NUM => "NUM",
            Upos::PART => "PART",
            Upos::PRON => "PRON",
            Upos::PROPN => "PROPN",
            Upos::PUNCT => "PUNCT",
            Upos::SCONJ => "SCONJ",
            Upos::SYM => "SYM",
            Upos::VERB => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownUpos(pub String);

impl fmt::Display for UnknownUpos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown UPOS label {:?}", self.0)
    }
}

impl std::error::Error for UnknownUpos {}

impl FromStr for Upos {
    type Err = UnknownUpos;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| UnknownUpos(s.to_string()))
    }
}

/// Morphological features; the map keeps attribute names unique and sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Feats(BTreeMap<String, String>);

impl Feats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `Attr=Val|Attr=Val` or `_`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        if s == "_" || s.is_empty() {
            return Ok(Self(map));
        }
        for feat in s.split('|') {
            let (attr, val) = feat
                .split_once('=')
                .ok_or_else(|| format!("feature {feat:?} lacks '='"))?;
            if !valid_attr(attr) || !valid_value(val) {
                return Err(format!("malformed feature {feat:?}"));
            }
            if map.insert(attr.to_string(), val.to_string()).is_some() {
                return Err(format!("duplicate feature attribute {attr:?}"));
            }
        }
        Ok(Self(map))
    }

    pub fn with(mut self, attr: &str, val: &str) -> Self {
        self.0.insert(attr.to_string(), val.to_string());
        self
    }

    pub fn get(&self, attr: &str) -> Option<&str> {
        self.0.get(attr).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, v)| (a.as_str(), v.as_str()))
    }
}

impl fmt::Display for Feats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("_");
        }
        for (i, (a, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{a}={v}")?;
        }
        Ok(())
    }
}

fn valid_attr(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '[' || c == ']')
}

fn valid_value(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == ',')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotatedToken {
    pub form: String,
    pub lemma: String,
    pub upos: Upos,
    pub feats: Feats,
}

impl AnnotatedToken {
    pub fn new(form: &str, lemma: &str, upos: Upos, feats: Feats) -> Self {
        assert!(!form.is_empty(), "token form must be non-empty");
        Self {
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos,
            feats,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<AnnotatedToken>,
}

impl AnnotatedSentence {
    pub fn new(tokens: Vec<AnnotatedToken>) -> Self {
        Self { tokens }
    }

    pub fn forms(&self) -> Tokens {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    Dum,
    Pos,
    Msd,
}

impl TagKind {
    pub const ALL: [TagKind; 3] = [TagKind::Dum, TagKind::Pos, TagKind::Msd];

    pub fn as_str(self) -> &'static str {
        match self {
            TagKind::Dum => "DUM",
            TagKind::Pos => "POS",
            TagKind::Msd => "MSD",
        }
    }
}

impl FromStr for TagKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DUM" => Ok(TagKind::Dum),
            "POS" => Ok(TagKind::Pos),
            "MSD" => Ok(TagKind::Msd),
            _ => Err(format!("unknown tag kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tag {
    pub kind: TagKind,
    pub payload: String,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.payload)
    }
}

/// POS renders the bare UPOS label, MSD appends `_` and the sorted features
/// (`_` when there are none, giving e.g. `ADV__`).
pub fn render_tag(tok: &AnnotatedToken, kind: TagKind) -> Tag {
    let payload = match kind {
        TagKind::Dum => DUM.to_string(),
        TagKind::Pos => tok.upos.to_string(),
        TagKind::Msd => format!("{}_{}", tok.upos, tok.feats),
    };
    Tag { kind, payload }
}

/// Recognises a token as a tag: the dummy symbol, a bare UPOS label, or
/// `UPOS_` followed by `_` or a `|`-separated feature list.
pub fn is_tag(token: &str) -> bool {
    tag_kind_of(token).is_some()
}

pub fn tag_kind_of(token: &str) -> Option<TagKind> {
    if token == DUM {
        return Some(TagKind::Dum);
    }
    let Some((head, rest)) = token.split_once('_') else {
        return token.parse::<Upos>().ok().map(|_| TagKind::Pos);
    };
    head.parse::<Upos>().ok()?;
    if rest == "_" {
        return Some(TagKind::Msd);
    }
    let ok = rest.split('|').all(|feat| {
        feat.split_once('=')
            .is_some_and(|(a, v)| valid_attr(a) && valid_value(v))
    });
    ok.then_some(TagKind::Msd)
}

/// Part of speech carried by a POS or MSD tag.
pub fn tag_pos(token: &str) -> Option<&str> {
    match tag_kind_of(token)? {
        TagKind::Dum => None,
        TagKind::Pos => Some(token),
        TagKind::Msd => token.split_once('_').map(|(h, _)| h),
    }
}

/// Produces `tag₁ word₁ tag₂ word₂ …`.
pub fn interleave(sent: &AnnotatedSentence, kind: TagKind) -> Tokens {
    let mut out = Vec::with_capacity(sent.len() * 2);
    for tok in &sent.tokens {
        out.push(render_tag(tok, kind).payload);
        out.push(tok.form.clone());
    }
    out
}

/// Removes every token that parses as a tag.
pub fn strip_tags(stream: &[String]) -> Tokens {
    stream.iter().filter(|t| !is_tag(t)).cloned().collect()
}

/// Number of surface forms that would be mistaken for tags by [`strip_tags`].
pub fn count_tag_collisions<'a, I>(sentences: I) -> usize
where
    I: IntoIterator<Item = &'a AnnotatedSentence>,
{
    sentences
        .into_iter()
        .flat_map(|s| s.tokens.iter())
        .filter(|t| is_tag(&t.form))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(s: &str) -> Feats {
        Feats::parse(s).unwrap()
    }

    pub(crate) fn golden_sentence() -> AnnotatedSentence {
        AnnotatedSentence::new(vec![
            AnnotatedToken::new(
                "it",
                "it",
                Upos::PRON,
                feats("Case=Nom|Gender=Neut|Number=Sing|Person=3|PronType=Prs"),
            ),
            AnnotatedToken::new(
                "has",
                "have",
                Upos::AUX,
                feats("Mood=Ind|Number=Sing|Person=3|Tense=Pres|VerbForm=Fin"),
            ),
            AnnotatedToken::new(
                "happened",
                "happen",
                Upos::VERB,
                feats("Tense=Past|VerbForm=Part"),
            ),
            AnnotatedToken::new("before", "before", Upos::ADV, Feats::new()),
            AnnotatedToken::new(".", ".", Upos::PUNCT, Feats::new()),
        ])
    }

    #[test]
    fn render_examples() {
        let before = AnnotatedToken::new("before", "before", Upos::ADV, Feats::new());
        assert_eq!(render_tag(&before, TagKind::Msd).payload, "ADV__");
        let it = &golden_sentence().tokens[0];
        assert_eq!(
            render_tag(it, TagKind::Msd).payload,
            "PRON_Case=Nom|Gender=Neut|Number=Sing|Person=3|PronType=Prs"
        );
        assert_eq!(render_tag(it, TagKind::Dum).payload, "<dum>");
        assert_eq!(render_tag(it, TagKind::Pos).payload, "PRON");
    }

    #[test]
    fn msd_features_sorted_regardless_of_insertion() {
        let f = Feats::new().with("Person", "3").with("Case", "Nom");
        let t = AnnotatedToken::new("x", "x", Upos::PRON, f);
        assert_eq!(render_tag(&t, TagKind::Msd).payload, "PRON_Case=Nom|Person=3");
    }

    #[test]
    fn interleave_golden_sentence() {
        let out = interleave(&golden_sentence(), TagKind::Msd).join(" ");
        assert_eq!(
            out,
            "PRON_Case=Nom|Gender=Neut|Number=Sing|Person=3|PronType=Prs it \
             AUX_Mood=Ind|Number=Sing|Person=3|Tense=Pres|VerbForm=Fin has \
             VERB_Tense=Past|VerbForm=Part happened ADV__ before PUNCT__ ."
        );
        assert!(interleave(&AnnotatedSentence::default(), TagKind::Pos).is_empty());
        assert_eq!(
            interleave(&golden_sentence(), TagKind::Dum).join(" "),
            "<dum> it <dum> has <dum> happened <dum> before <dum> ."
        );
    }

    #[test]
    fn strip_examples() {
        let s = golden_sentence();
        for kind in TagKind::ALL {
            assert_eq!(strip_tags(&interleave(&s, kind)), s.forms());
        }
        let plain: Tokens = ["a", "b", "c"].map(String::from).to_vec();
        assert_eq!(strip_tags(&plain), plain);
        let malformed: Tokens = ["NOUN", "NOUN", "dog"].map(String::from).to_vec();
        assert_eq!(strip_tags(&malformed), vec!["dog".to_string()]);
    }

    #[test]
    fn tag_grammar() {
        for t in ["<dum>", "NOUN", "ADV__", "PRON_Case=Nom|Number=Sing", "X_Foo[psor]=A,B"] {
            assert!(is_tag(t), "{t}");
        }
        for t in [
            "noun", "NOUN_", "NOUN_Case", "NOUN__@@", "ADV__@@", "NOUN@@", "FOO_Case=Nom",
            "NOUN_Case=Nom|", "happen@@", "<dum>@@",
        ] {
            assert!(!is_tag(t), "{t}");
        }
        assert_eq!(tag_pos("VERB_Tense=Past"), Some("VERB"));
        assert_eq!(tag_pos("ADV"), Some("ADV"));
        assert_eq!(tag_pos("<dum>"), None);
        assert_eq!(tag_pos("dog"), None);
    }

    #[test]
    fn feats_parse_errors() {
        assert!(Feats::parse("Case=Nom|Case=Acc").is_err());
        assert!(Feats::parse("Case").is_err());
        assert!(Feats::parse("_").unwrap().is_empty());
        assert_eq!(feats("B=2|A=1").to_string(), "A=1|B=2");
    }

    #[test]
    fn collisions_are_counted() {
        let s = AnnotatedSentence::new(vec![
            AnnotatedToken::new("ADV__", "x", Upos::X, Feats::new()),
            AnnotatedToken::new("dog", "dog", Upos::NOUN, Feats::new()),
        ]);
        assert_eq!(count_tag_collisions([&s]), 1);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn token() -> impl Strategy<Value = AnnotatedToken> {
            (
                "[a-z]{1,8}",
                proptest::sample::select(Upos::ALL.to_vec()),
                proptest::collection::btree_map("[A-Z][a-z]{1,5}", "[A-Z0-9][a-z0-9]{0,4}", 0..4),
            )
                .prop_map(|(form, upos, map)| {
                    let mut f = Feats::new();
                    for (a, v) in map {
                        f = f.with(&a, &v);
                    }
                    AnnotatedToken::new(&form, &form, upos, f)
                })
        }

        proptest! {
            #[test]
            fn interleave_strip_roundtrip(toks in proptest::collection::vec(token(), 0..12)) {
                let s = AnnotatedSentence::new(toks);
                for kind in TagKind::ALL {
                    let stream = interleave(&s, kind);
                    prop_assert_eq!(stream.len(), 2 * s.len());
                    for (i, t) in stream.iter().enumerate() {
                        prop_assert_eq!(is_tag(t), i % 2 == 0);
                    }
                    prop_assert_eq!(strip_tags(&stream), s.forms());
                }
            }

            #[test]
            fn pos_is_msd_prefix(tok in token()) {
                let pos = render_tag(&tok, TagKind::Pos).payload;
                let msd = render_tag(&tok, TagKind::Msd).payload;
                prop_assert_eq!(msd.split('_').next().unwrap(), pos.as_str());
                prop_assert_eq!(tag_pos(&msd), Some(pos.as_str()));
            }
        }
    }
}
