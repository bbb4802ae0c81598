//! Metrics grouped by source length in half-open buckets of width 10:
//! (0,10], (10,20], ...

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    /// Exclusive lower bound.
    pub lo: usize,
    /// Inclusive upper bound.
    pub hi: usize,
    pub count: usize,
    /// `None` for empty buckets.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBucketReport {
    pub width: usize,
    pub buckets: Vec<Bucket>,
}

/// Bucket index of a source length; length 0 joins the first bucket.
pub fn bucket_of(len: usize, width: usize) -> usize {
    len.saturating_sub(1) / width
}

/// Groups `items` by `source_len` and applies `metric` to each non-empty
/// group. Buckets run contiguously from (0, width] to the longest length.
pub fn length_bucket_report<S>(
    items: &[S],
    width: usize,
    source_len: impl Fn(&S) -> usize,
    metric: impl Fn(&[&S]) -> f64,
) -> LengthBucketReport {
    let width = width.max(1);
    let n_buckets = items.iter().map(|s| bucket_of(source_len(s), width) + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<&S>> = vec![Vec::new(); n_buckets];
    for s in items {
        groups[bucket_of(source_len(s), width)].push(s);
    }
    let buckets = groups
        .iter()
        .enumerate()
        .map(|(b, g)| Bucket {
            lo: b * width,
            hi: (b + 1) * width,
            count: g.len(),
            value: (!g.is_empty()).then(|| metric(g)),
        })
        .collect();
    LengthBucketReport { width, buckets }
}

impl LengthBucketReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// `bucket_lo,bucket_hi,count,value` with an empty value for empty buckets.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket_lo,bucket_hi,count,value\n");
        for b in &self.buckets {
            let v = b.value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.count, v);
        }
        s
    }

    /// `x,y` pairs (bucket upper bound, metric) for non-empty buckets.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("x,y\n");
        for b in &self.buckets {
            if let Some(v) = b.value {
                let _ = writeln!(s, "{},{}", b.hi, v);
            }
        }
        s
    }
}
