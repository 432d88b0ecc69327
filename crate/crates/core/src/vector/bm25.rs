//! Okapi BM25 over fragment texts.
//!
//! score(D, Q) = Σ_{t ∈ Q} IDF(t) · tf(t, D)·(k1 + 1) / (tf(t, D) + k1·(1 − b + b·|D|/avgdl))
//!
//! with IDF(t) = ln(1 + (N − df + 0.5)/(df + 0.5)). Query terms are
//! deduplicated before scoring.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::rank_order;
use crate::eval::metrics::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<usize>,
    average_length: f64,
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    /// Builds the index over `(id, text)` pairs.
    ///
    /// # Panics
    ///
    /// If `k1 <= 0` or `b` lies outside `[0, 1]`.
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        assert!(params.k1 > 0.0, "k1 must be positive");
        assert!((0.0..=1.0).contains(&params.b), "b must lie in [0, 1]");
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text.as_ref());
            doc_ids.push(id.into());
            doc_lengths.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((doc, n));
            }
        }
        let total: usize = doc_lengths.iter().sum();
        let average_length = if doc_ids.is_empty() {
            0.0
        } else {
            total as f64 / doc_ids.len() as f64
        };
        Self {
            params,
            doc_ids,
            doc_lengths,
            average_length,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let length_ratio = self.doc_lengths[doc] as f64 / self.average_length;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length_ratio))
    }

    /// Score of one document; `None` for an unknown id.
    pub fn score(&self, query_terms: &[String], fragment_id: &str) -> Option<f64> {
        let doc = self.doc_ids.iter().position(|id| id == fragment_id)?;
        let terms: BTreeSet<&str> = query_terms.iter().map(String::as_str).collect();
        let mut total = 0.0;
        for term in terms {
            if let Some(list) = self.postings.get(term) {
                if let Some(&(_, tf)) = list.iter().find(|(d, _)| *d == doc) {
                    total += self.term_score(self.idf(term), tf, doc);
                }
            }
        }
        Some(total)
    }

    /// Documents containing at least one query term, best first, ties by
    /// ascending id.
    pub fn topk(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            if let Some(list) = self.postings.get(term) {
                let idf = self.idf(term);
                for &(doc, tf) in list {
                    *scores.entry(doc).or_insert(0.0) += self.term_score(idf, tf, doc);
                }
            }
        }
        let mut ranked: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc].clone(), s))
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        ranked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn terms(q: &str) -> Vec<String> {
        tokenize(q)
    }

    #[test]
    fn single_document_matches_hand_formula() {
        let index = Bm25Index::build([("d", "cat sat")], Bm25Params::default());
        // N = 1, df = 1: idf = ln(1 + 0.5/1.5); |D| = avgdl, tf = 1.
        let idf = (1.0f64 + 0.5 / 1.5).ln();
        let expected = idf * 1.0 * 2.2 / (1.0 + 1.2);
        let got = index.score(&terms("cat"), "d").unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(index.topk("cat", 5), vec![("d".to_string(), got)]);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let index = Bm25Index::build([("a", "red fox"), ("b", "blue fox")], Bm25Params::default());
        let with = index.score(&terms("fox zebra"), "a").unwrap();
        let without = index.score(&terms("fox"), "a").unwrap();
        assert_eq!(with, without);
        assert!(index.topk("zebra", 5).is_empty());
        assert!(index.topk("!!!", 5).is_empty());
    }

    #[test]
    fn duplicate_query_terms_count_once() {
        let index = Bm25Index::build([("a", "red fox"), ("b", "blue dog")], Bm25Params::default());
        assert_eq!(index.topk("fox fox", 1), index.topk("fox", 1));
    }

    proptest! {
        #[test]
        fn adding_a_query_term_occurrence_never_lowers_score(
            extra in 1usize..5,
            b in 0.0f64..=1.0,
        ) {
            // Fix N, df and avgdl by swapping a filler token for the query
            // term in the target document.
            let params = Bm25Params { k1: 1.2, b };
            let base = "apple filler filler filler filler filler";
            let fillers = base.split(' ').skip(1).count();
            let extra = extra.min(fillers);
            let mut words: Vec<&str> = base.split(' ').collect();
            for w in words.iter_mut().skip(1).take(extra) {
                *w = "apple";
            }
            let boosted = words.join(" ");
            let others = [("x", "pear filler"), ("y", "plum apple filler filler")];
            let before = Bm25Index::build(others.iter().copied().chain([("t", base)]), params);
            let after = Bm25Index::build(others.iter().copied().chain([("t", boosted.as_str())]), params);
            let q = terms("apple");
            prop_assert!(after.score(&q, "t").unwrap() >= before.score(&q, "t").unwrap());
        }
    }
}
