//! Answer normalization, the cross-worker match predicate, and the
//! gazetteer soft matcher.
//!
//! Live games only ever use [`is_match`]. [`Gazetteer::soft_match`] is a
//! scoring and post-processing aid: mapping "washington" onto
//! "washington dc" is exactly the kind of near miss the error taxonomy
//! wants to see, so the game itself must never apply it.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufRead};
use std::path::Path;

use thiserror::Error;

/// Default acceptance threshold for [`Gazetteer::soft_match`].
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.5;

fn is_edge_junk(c: char) -> bool {
    c.is_whitespace() || !c.is_alphanumeric()
}

/// Canonical form of an answer: lowercased, whitespace runs collapsed,
/// leading/trailing punctuation removed. Internal punctuation is kept, so
/// "Magic Hat #9" stays "magic hat #9".
pub fn normalize(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(is_edge_junk).to_string()
}

/// Whether two raw answers agree. Empty answers never match anything.
pub fn is_match(a: &str, b: &str) -> bool {
    let a = normalize(a);
    !a.is_empty() && a == normalize(b)
}

/// Whitespace tokens of an already-normalized string.
pub fn tokens(normalized: &str) -> Vec<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

/// `|shared tokens| / |tokens of the shorter string|`.
pub fn token_containment(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = tokens(a).into_iter().collect();
    let tb: HashSet<&str> = tokens(b).into_iter().collect();
    let shorter = ta.len().min(tb.len());
    if shorter == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / shorter as f64
}

/// Similarity in `[0, 1]`: the larger of token containment and normalized
/// character-edit similarity.
pub fn similarity(a: &str, b: &str) -> f64 {
    token_containment(a, b).max(strsim::normalized_levenshtein(a, b))
}

/// Character-level edit distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// True when `part`'s tokens form a contiguous, strictly shorter run
/// inside `whole`'s tokens.
pub fn is_token_subspan(part: &str, whole: &str) -> bool {
    let p = tokens(part);
    let w = tokens(whole);
    !p.is_empty() && p.len() < w.len() && w.windows(p.len()).any(|win| win == p.as_slice())
}

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("similarity threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("gazetteer entry {0:?} is not in normalized form")]
    NotNormalized(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A list of canonical entity names used to repair near-miss predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gazetteer {
    entries: BTreeSet<String>,
    similarity_threshold: f64,
}

impl Default for Gazetteer {
    fn default() -> Self {
        Self {
            entries: BTreeSet::new(),
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
        }
    }
}

impl Gazetteer {
    pub fn new<I, S>(entries: I, similarity_threshold: f64) -> Result<Self, GazetteerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if !(0.0..=1.0).contains(&similarity_threshold) {
            return Err(GazetteerError::Threshold(similarity_threshold));
        }
        let mut set = BTreeSet::new();
        for e in entries {
            let e = e.into();
            if normalize(&e) != e || e.is_empty() {
                return Err(GazetteerError::NotNormalized(e));
            }
            set.insert(e);
        }
        Ok(Self {
            entries: set,
            similarity_threshold,
        })
    }

    /// Builds a gazetteer from arbitrary strings, normalizing each one and
    /// dropping blanks.
    pub fn from_raw<I, S>(entries: I, similarity_threshold: f64) -> Result<Self, GazetteerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let normalized: Vec<String> = entries
            .into_iter()
            .map(|e| normalize(e.as_ref()))
            .filter(|e| !e.is_empty())
            .collect();
        Self::new(normalized, similarity_threshold)
    }

    /// Reads one entry per line. Lines are normalized; blank lines skipped.
    pub fn read<R: BufRead>(reader: R, similarity_threshold: f64) -> Result<Self, GazetteerError> {
        let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_raw(lines, similarity_threshold)
    }

    pub fn load(path: impl AsRef<Path>, similarity_threshold: f64) -> Result<Self, GazetteerError> {
        let file = fs::File::open(path)?;
        Self::read(io::BufReader::new(file), similarity_threshold)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.entries.contains(entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn similarity_threshold(&self) -> f64 {
        self.similarity_threshold
    }

    /// The most similar entry to a normalized prediction, if any clears the
    /// threshold. Ties go to the lexicographically smallest entry.
    pub fn soft_match(&self, pred: &str) -> Option<&str> {
        if let Some(exact) = self.entries.get(pred) {
            return Some(exact);
        }
        let mut best: Option<(&str, f64)> = None;
        for entry in &self.entries {
            let s = similarity(pred, entry);
            if s < self.similarity_threshold {
                continue;
            }
            // entries iterate in lexicographic order; strict > keeps the first on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((entry, s));
            }
        }
        best.map(|(e, _)| e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  Boston "), "boston");
        assert_eq!(normalize("Washington DC."), "washington dc");
        assert_eq!(normalize("Magic Hat #9"), "magic hat #9");
        assert_eq!(normalize("  new\t\tYORK  city!! "), "new york city");
        assert_eq!(normalize("..."), "");
        assert_eq!(normalize("\"latte\""), "latte");
    }

    #[test]
    fn match_examples() {
        assert!(is_match("Boston", "boston"));
        assert!(!is_match("Denver", "Boston"));
        assert!(!is_match("", " "));
        assert!(!is_match("?", "!"));
    }

    #[test]
    fn soft_match_examples() {
        let g = Gazetteer::new(["washington dc", "boston"], 0.5).unwrap();
        assert_eq!(g.soft_match("washington"), Some("washington dc"));
        let g = Gazetteer::new(["stew pork over rice"], 0.5).unwrap();
        assert_eq!(g.soft_match("rice"), Some("stew pork over rice"));
        let g = Gazetteer::new(["denver"], 0.5).unwrap();
        assert_eq!(g.soft_match("boston"), None);
    }

    #[test]
    fn soft_match_breaks_ties_lexicographically() {
        // "tea" is fully contained in both entries
        let g = Gazetteer::new(["iced tea", "bubble tea"], 0.5).unwrap();
        assert_eq!(g.soft_match("tea"), Some("bubble tea"));
    }

    #[test]
    fn gazetteer_rejects_bad_input() {
        assert!(matches!(
            Gazetteer::new(["Boston"], 0.5),
            Err(GazetteerError::NotNormalized(_))
        ));
        assert!(matches!(
            Gazetteer::new(["boston"], 1.5),
            Err(GazetteerError::Threshold(_))
        ));
    }

    #[test]
    fn gazetteer_reads_lines() {
        let text = "Boston\n\n  Washington DC \nboston\n";
        let g = Gazetteer::read(text.as_bytes(), 0.5).unwrap();
        assert_eq!(g.entries().collect::<Vec<_>>(), vec!["boston", "washington dc"]);
    }

    #[test]
    fn subspan() {
        assert!(is_token_subspan("tea", "bubble tea"));
        assert!(is_token_subspan("pork over", "stew pork over rice"));
        assert!(!is_token_subspan("stew rice", "stew pork over rice"));
        assert!(!is_token_subspan("bubble tea", "bubble tea"));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn is_match_symmetric(a in "[ aAbB.#]{0,6}", b in "[ aAbB.#]{0,6}") {
            prop_assert_eq!(is_match(&a, &b), is_match(&b, &a));
        }

        #[test]
        fn is_match_transitive(a in "[aAb ]{1,4}", b in "[aAb ]{1,4}", c in "[aAb ]{1,4}") {
            if is_match(&a, &b) && is_match(&b, &c) {
                prop_assert!(is_match(&a, &c));
            }
        }

        #[test]
        fn exact_entry_wins(entries in proptest::collection::btree_set("[a-d]{1,3}( [a-d]{1,3})?", 1..6),
                            pick in 0usize..6) {
            let list: Vec<String> = entries.into_iter().collect();
            let e = list[pick % list.len()].clone();
            let g = Gazetteer::new(list, 0.5).unwrap();
            prop_assert_eq!(g.soft_match(&e), Some(e.as_str()));
        }
    }
}
