//! Data-parallel helpers. With the `parallel` feature these run on rayon;
//! without it every helper degrades to a plain sequential loop with the
//! same output order.

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Evaluates `f(0..n)` on at most `threads` workers; results are in index
/// order regardless of completion order.
pub fn run_indexed<R, F>(n: usize, threads: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 1 && n > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.min(n))
            .build()
        {
            Ok(pool) => return pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(e) => log::warn!("thread pool unavailable ({e}); running sequentially"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    (0..n).map(f).collect()
}

/// Folds `items` into per-chunk accumulators and merges them.
pub fn fold_reduce<T, A, F, M>(items: &[T], init: fn() -> A, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().fold(init, fold).reduce(init, merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = merge;
        items.iter().fold(init(), fold)
    }
}

/// True when the crate was built with rayon support.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
