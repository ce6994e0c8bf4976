//! Text cleaning and tokenization for the token indicator and topical terms.
//!
//! Cleaning removes, in order: URLs, @mentions, digits, HTML tags and
//! entities, emojis, hashtags, punctuation, and a leading `RT`. The remainder
//! is lowercased, split on whitespace, normalized, length-filtered, and
//! stopword-filtered.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static MENTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[\p{L}\p{N}_]+").unwrap());
static DIGIT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{Nd}+").unwrap());
static HTML_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<[^<>]*>|&#?[A-Za-z0-9]*;").unwrap());
static EMOJI_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\p{Extended_Pictographic}\p{Emoji_Modifier}\p{Regional_Indicator}\u{FE0E}\u{FE0F}\u{200D}\u{20E3}]")
        .unwrap()
});
static HASHTAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#[\p{L}\p{N}\p{M}_]+").unwrap());
static APOSTROPHE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"['\u{2019}\u{02BC}]").unwrap());
static PUNCT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{P}\p{S}]").unwrap());
static LEADING_RT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*RT\b").unwrap());

/// Maps a lowercased token to its normalized form.
///
/// Implementations must be idempotent: `normalize(normalize(t)) == normalize(t)`.
pub trait Normalizer: Send + Sync {
    fn normalize(&self, token: &str) -> String;
}

/// Leaves tokens as they are (they are already lowercased).
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityNormalizer;

impl Normalizer for IdentityNormalizer {
    fn normalize(&self, token: &str) -> String {
        token.to_owned()
    }
}

/// Rule-based English suffix stripping, applied until no rule fires.
///
/// | suffix | replacement | condition |
/// |--------|-------------|-----------|
/// | `sses` | `ss`        |           |
/// | `ies`  | `y`         | stem ≥ 2  |
/// | `ing`  | ``          | stem ≥ 3, stem has a vowel |
/// | `ed`   | ``          | stem ≥ 3, stem has a vowel |
/// | `s`    | ``          | stem ≥ 3, not after `s`, `u`, `i` |
///
/// After `ing`/`ed` removal a doubled final consonant other than `l`, `s`, `z`
/// is collapsed (`stopped` → `stop`).
#[derive(Debug, Clone, Copy, Default)]
pub struct SuffixStripper;

impl SuffixStripper {
    fn step(token: &str) -> Option<String> {
        let chars: Vec<char> = token.chars().collect();
        let n = chars.len();
        let ends = |suffix: &str| token.ends_with(suffix);
        let stem_of = |k: usize| -> String { chars[..n - k].iter().collect() };
        let has_vowel = |s: &str| s.chars().any(|c| "aeiouy".contains(c));

        if ends("sses") {
            return Some(stem_of(2));
        }
        if ends("ies") && n >= 5 {
            return Some(format!("{}y", stem_of(3)));
        }
        for suffix in ["ing", "ed"] {
            let k = suffix.len();
            if ends(suffix) && n >= k + 3 {
                let stem = stem_of(k);
                if has_vowel(&stem) {
                    return Some(Self::undouble(stem));
                }
            }
        }
        if ends("s") && n >= 4 {
            let prev = chars[n - 2];
            if !matches!(prev, 's' | 'u' | 'i') {
                return Some(stem_of(1));
            }
        }
        None
    }

    fn undouble(stem: String) -> String {
        let chars: Vec<char> = stem.chars().collect();
        let n = chars.len();
        if n >= 4
            && chars[n - 1] == chars[n - 2]
            && chars[n - 1].is_ascii_alphabetic()
            && !"aeiouylsz".contains(chars[n - 1])
        {
            chars[..n - 1].iter().collect()
        } else {
            stem
        }
    }
}

impl Normalizer for SuffixStripper {
    fn normalize(&self, token: &str) -> String {
        let mut current = token.to_owned();
        while let Some(next) = Self::step(&current) {
            current = next;
        }
        current
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    Identity,
    #[default]
    SuffixStrip,
}

impl NormalizerKind {
    pub fn build(self) -> Arc<dyn Normalizer> {
        match self {
            NormalizerKind::Identity => Arc::new(IdentityNormalizer),
            NormalizerKind::SuffixStrip => Arc::new(SuffixStripper),
        }
    }
}

const DEFAULT_STOPWORDS: &str = include_str!("stopwords_en.txt");

fn parse_stopwords(raw: &str) -> HashSet<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|w| APOSTROPHE_RE.replace_all(&w.to_lowercase(), "").into_owned())
        .collect()
}

pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&raw))
}

#[derive(Clone)]
pub struct Tokenizer {
    normalizer: Arc<dyn Normalizer>,
    stopwords: HashSet<String>,
    min_chars: usize,
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer")
            .field("stopwords", &self.stopwords.len())
            .field("min_chars", &self.min_chars)
            .finish_non_exhaustive()
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(NormalizerKind::default().build(), default_stopwords())
    }
}

impl Tokenizer {
    pub fn new(normalizer: Arc<dyn Normalizer>, stopwords: HashSet<String>) -> Self {
        Self {
            normalizer,
            stopwords,
            min_chars: 3,
        }
    }

    pub fn with_min_chars(mut self, min_chars: usize) -> Self {
        self.min_chars = min_chars;
        self
    }

    /// Applies the removal pipeline and returns the lowercased remainder.
    pub fn clean(&self, text: &str) -> String {
        let s = URL_RE.replace_all(text, " ");
        let s = MENTION_RE.replace_all(&s, " ");
        let s = DIGIT_RE.replace_all(&s, "");
        let s = HTML_RE.replace_all(&s, " ");
        let s = EMOJI_RE.replace_all(&s, " ");
        let s = HASHTAG_RE.replace_all(&s, " ");
        let s = APOSTROPHE_RE.replace_all(&s, "");
        let s = PUNCT_RE.replace_all(&s, " ");
        let s = LEADING_RT_RE.replace(&s, " ");
        s.to_lowercase()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.clean(text)
            .split_whitespace()
            .filter(|raw| !self.stopwords.contains(*raw))
            .map(|raw| self.normalizer.normalize(raw))
            .filter(|t| t.chars().count() >= self.min_chars && !self.stopwords.contains(t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pipeline_order_example() {
        let t = Tokenizer::default();
        assert_eq!(
            t.tokenize("RT @user Check https://t.co/x the BOMBS fell! #gaza 123"),
            ["check", "bomb", "fell"]
        );
    }

    #[test]
    fn identity_normalizer_keeps_inflection() {
        let t = Tokenizer::new(NormalizerKind::Identity.build(), default_stopwords());
        assert_eq!(
            t.tokenize("RT @user Check https://t.co/x the BOMBS fell! #gaza 123"),
            ["check", "bombs", "fell"]
        );
    }

    #[test]
    fn empty_and_short() {
        let t = Tokenizer::default();
        assert!(t.tokenize("").is_empty());
        assert!(t.tokenize("aa bb cc").is_empty());
    }

    #[test]
    fn removes_html_emoji_and_digits() {
        let t = Tokenizer::default();
        assert_eq!(
            t.tokenize("<b>Ceasefire</b> now 🙏🏽 &amp; covid19 don't"),
            ["ceasefire", "now", "covid"]
        );
    }

    #[test]
    fn rt_only_removed_when_leading() {
        let t = Tokenizer::new(NormalizerKind::Identity.build(), HashSet::new());
        assert_eq!(t.tokenize("ART RT word"), ["art", "word"]);
        assert_eq!(t.tokenize("  RT word"), ["word"]);
    }

    #[test]
    fn suffix_rules() {
        let s = SuffixStripper;
        for (input, expected) in [
            ("bombs", "bomb"),
            ("bombings", "bomb"),
            ("stopped", "stop"),
            ("killed", "kill"),
            ("bodies", "body"),
            ("classes", "class"),
            ("news", "new"),
            ("this", "this"),
            ("status", "status"),
            ("thing", "thing"),
            ("need", "need"),
        ] {
            assert_eq!(s.normalize(input), expected, "{input}");
        }
    }

    proptest! {
        #[test]
        fn normalizer_idempotent(token in "[a-z]{1,12}") {
            let s = SuffixStripper;
            let once = s.normalize(&token);
            prop_assert_eq!(s.normalize(&once), once);
        }

        #[test]
        fn tokenize_idempotent(text in "(RT )?([A-Za-z#@<>/.:!,'0-9 ]|\\PC){0,60}") {
            let t = Tokenizer::default();
            let once = t.tokenize(&text);
            let again = t.tokenize(&once.join(" "));
            prop_assert_eq!(again, once);
        }

        #[test]
        fn tokens_are_clean(text in "\\PC{0,60}") {
            let t = Tokenizer::default();
            for tok in t.tokenize(&text) {
                prop_assert!(tok.chars().count() >= 3);
                prop_assert!(!tok.chars().any(|c| c.is_whitespace() || c.is_ascii_digit()));
                prop_assert_eq!(tok.to_lowercase(), tok.clone());
            }
        }
    }
}
