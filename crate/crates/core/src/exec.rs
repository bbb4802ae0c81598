//! Order-preserving map over independent work items: rayon when the
//! `parallel` feature is on, a plain loop otherwise. Results always come
//! back in input order, so reductions over them are deterministic.

#[cfg(feature = "parallel")]
pub fn map_ordered<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Sync + Send,
{
    map_sequential(items, f)
}

pub fn map_sequential<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    F: Fn(usize, &I) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Whether [`map_ordered`] runs on the rayon pool.
pub const PARALLEL: bool = cfg!(feature = "parallel");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map_ordered(&xs, |i, &x| (i as u64) * 1000 + x);
        let b = map_sequential(&xs, |i, &x| (i as u64) * 1000 + x);
        assert_eq!(a, b);
    }
}
