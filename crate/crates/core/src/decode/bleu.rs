//! Corpus-level BLEU-4 with a single reference and no smoothing.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Clipped matches and totals per n-gram order (index 0 is unigrams).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn counts<S: Eq + Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn ngram_stats<S: Eq + Hash>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<NgramStats> {
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut st = NgramStats::default();
    for (c, r) in candidates.iter().zip(references) {
        st.candidate_len += c.len();
        st.reference_len += r.len();
        for n in 1..=4 {
            let rc = counts(r, n);
            for (gram, k) in counts(c, n) {
                st.matches[n - 1] += k.min(rc.get(gram).copied().unwrap_or(0));
                st.totals[n - 1] += k;
            }
        }
    }
    Ok(st)
}

/// BLEU on a 0–100 scale: geometric mean of the four modified n-gram
/// precisions times the brevity penalty `exp(1 − r/c)` when `c < r`.
/// Any order without matches yields 0.
pub fn bleu<S: Eq + Hash>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let st = ngram_stats(candidates, references)?;
    if st.candidate_len == 0 {
        return Err(Error::Empty("candidate"));
    }
    if st.matches.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| (st.matches[i] as f64 / st.totals[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let (c, r) = (st.candidate_len as f64, st.reference_len as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(100.0 * bp * log_p.exp())
}
