//! Projection of free-form text onto a finite label vocabulary.
//!
//! Recognizer output is free text; everything downstream (graph nodes, task
//! names, scoring) works over categorical labels. [`map_to_label`] is the
//! bridge: exact match after [`normalize`], otherwise the best token-set
//! Jaccard overlap above a threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minimum Jaccard score accepted by [`map_to_label`].
pub const DEFAULT_MAP_THRESHOLD: f64 = 0.34;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error(
        "text {text:?} matches no label (best score {best_score:.3} below threshold {threshold})"
    )]
    Unmapped {
        text: String,
        best_score: f64,
        threshold: f64,
    },
    #[error("label vocabulary is empty")]
    EmptyVocabulary,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Lowercases, replaces punctuation with spaces, collapses whitespace and trims.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

fn tokens(normalized: &str) -> BTreeSet<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Token-set Jaccard similarity of two already-normalized strings.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

/// Ordered set of normalized labels with dense ordinals.
///
/// Labels are kept in lexicographic order so ordinals do not depend on
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = labels
            .into_iter()
            .map(|l| normalize(l.as_ref()))
            .filter(|l| !l.is_empty())
            .collect();
        let labels: Vec<String> = set.into_iter().collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    /// Ordinal of an already-normalized label.
    pub fn ordinal(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn get(&self, ordinal: usize) -> Option<&str> {
        self.labels.get(ordinal).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMethod {
    Exact,
    TokenJaccard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub label: String,
    pub score: f64,
    pub method: MapMethod,
}

/// Maps free-form `text` onto `vocab`.
///
/// Exact normalized matches win with score 1.0. Otherwise the label with the
/// highest token-set Jaccard score is returned if it reaches `threshold`;
/// equal scores resolve to the lexicographically smallest label.
pub fn map_to_label(
    text: &str,
    vocab: &LabelVocabulary,
    threshold: f64,
) -> Result<MapResult, MapError> {
    if vocab.is_empty() {
        return Err(MapError::EmptyVocabulary);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MapError::InvalidThreshold(threshold));
    }
    let norm = normalize(text);
    if let Some(i) = vocab.ordinal(&norm) {
        return Ok(MapResult {
            label: vocab.labels[i].clone(),
            score: 1.0,
            method: MapMethod::Exact,
        });
    }

    // labels are sorted, so strict `>` keeps the lexicographically first on ties
    let mut best: Option<(usize, f64)> = None;
    for (i, label) in vocab.labels.iter().enumerate() {
        let score = token_jaccard(&norm, label);
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((i, score)),
        }
    }
    let (i, score) = best.expect("vocabulary is non-empty");
    if score < threshold {
        return Err(MapError::Unmapped {
            text: text.to_string(),
            best_score: score,
            threshold,
        });
    }
    Ok(MapResult {
        label: vocab.labels[i].clone(),
        score,
        method: MapMethod::TokenJaccard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Fry  Eggs!"), "fry eggs");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("  Add-Milk "), "add milk");
        assert_eq!(normalize("...!"), "");
    }

    #[test]
    fn vocabulary_dedups_and_orders() {
        let v = LabelVocabulary::new(["b", "A", "a!", "  "]);
        assert_eq!(v.labels(), &["a".to_string(), "b".to_string()]);
        assert_eq!(v.ordinal("b"), Some(1));
        assert_eq!(v.get(0), Some("a"));
    }

    #[test]
    fn exact_after_normalization() {
        let v = LabelVocabulary::new(["fry eggs", "add milk"]);
        let r = map_to_label("Fry Eggs", &v, 0.34).unwrap();
        assert_eq!(r.label, "fry eggs");
        assert_eq!(r.score, 1.0);
        assert_eq!(r.method, MapMethod::Exact);
    }

    #[test]
    fn jaccard_match() {
        let v = LabelVocabulary::new(["pour milk", "fry eggs"]);
        let r = map_to_label("pour the milk", &v, 0.34).unwrap();
        assert_eq!(r.label, "pour milk");
        assert!((r.score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.method, MapMethod::TokenJaccard);
    }

    #[test]
    fn unmapped_below_threshold() {
        let v = LabelVocabulary::new(["fry eggs", "add milk"]);
        match map_to_label("quantum flux", &v, 0.34) {
            Err(MapError::Unmapped { best_score, .. }) => assert_eq!(best_score, 0.0),
            other => panic!("expected Unmapped, got {other:?}"),
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let v = LabelVocabulary::new(["milk b", "milk a"]);
        let r = map_to_label("milk", &v, 0.34).unwrap();
        assert_eq!(r.label, "milk a");
        assert_eq!(r.score, 0.5);
    }

    #[test]
    fn empty_vocab_and_bad_threshold() {
        let v = LabelVocabulary::new(Vec::<String>::new());
        assert_eq!(map_to_label("x", &v, 0.3), Err(MapError::EmptyVocabulary));
        let v = LabelVocabulary::new(["x"]);
        assert_eq!(
            map_to_label("x", &v, 1.5),
            Err(MapError::InvalidThreshold(1.5))
        );
    }

    fn label_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z]{1,6}", 1..4).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn every_member_maps_to_itself(labels in proptest::collection::vec(label_strategy(), 1..12)) {
            let vocab = LabelVocabulary::new(&labels);
            for l in vocab.iter() {
                let r = map_to_label(l, &vocab, DEFAULT_MAP_THRESHOLD).unwrap();
                prop_assert_eq!(r.label.as_str(), l);
                prop_assert_eq!(r.score, 1.0);
                prop_assert_eq!(r.method, MapMethod::Exact);
            }
        }

        #[test]
        fn mapping_ignores_case_and_punctuation(
            labels in proptest::collection::vec(label_strategy(), 1..8),
            text in label_strategy(),
            shout in any::<bool>(),
        ) {
            let vocab = LabelVocabulary::new(&labels);
            let mut noisy = text.replace(' ', " -  ");
            noisy.push('?');
            if shout {
                noisy = noisy.to_uppercase();
            }
            let a = map_to_label(&text, &vocab, 0.2);
            let b = map_to_label(&noisy, &vocab, 0.2);
            prop_assert_eq!(a.map(|r| (r.label, r.score)).ok(), b.map(|r| (r.label, r.score)).ok());
        }

        #[test]
        fn normalize_is_idempotent(s in ".{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
        }
    }
}
