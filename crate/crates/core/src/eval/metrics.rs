//! Lexical answer metrics: BLEU-1, ROUGE-1 and ROUGE-L.
//!
//! All three share one tokenization: lowercase, split on anything that is
//! not alphanumeric, drop empty pieces.

use std::collections::HashMap;

use serde::Serialize;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matched: usize, predicted: usize, reference: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, reference);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut map = HashMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap(prediction: &[String], reference: &[String]) -> usize {
    let reference_counts = counts(reference);
    counts(prediction)
        .into_iter()
        .map(|(token, n)| n.min(reference_counts.get(token).copied().unwrap_or(0)))
        .sum()
}

/// Clipped unigram precision times the brevity penalty
/// `exp(1 - r/c)` for candidates no longer than the reference.
pub fn bleu1(prediction: &str, reference: &str) -> f64 {
    let pred = tokenize(prediction);
    let refs = tokenize(reference);
    if pred.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let precision = clipped_overlap(&pred, &refs) as f64 / pred.len() as f64;
    let (c, r) = (pred.len() as f64, refs.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    precision * brevity
}

pub fn rouge1(prediction: &str, reference: &str) -> Prf {
    let pred = tokenize(prediction);
    let refs = tokenize(reference);
    Prf::from_counts(clipped_overlap(&pred, &refs), pred.len(), refs.len())
}

pub fn rouge_l(prediction: &str, reference: &str) -> Prf {
    let pred = tokenize(prediction);
    let refs = tokenize(reference);
    Prf::from_counts(lcs_len(&pred, &refs), pred.len(), refs.len())
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diagonal = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diagonal + 1 } else { above.max(row[j]) };
            diagonal = above;
        }
    }
    row[b.len()]
}
