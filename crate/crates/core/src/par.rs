//! Data-parallel map over batch entries.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, or with [`Exec::Sequential`], entries run in order on the
//! calling thread. Results are always returned in input order, so both
//! paths produce identical outputs.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this build can actually run in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`], stopping at the first error in input order.
pub fn try_map<T, R, E, F>(exec: Exec, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

/// Entries per chunk in [`try_fold_chunks`].
pub const CHUNK: usize = 8;

/// Folds fixed-size chunks of `items` (in parallel when enabled) and then
/// combines the chunk results in input order. The grouping never depends on
/// the thread count, so floating-point sums are identical on both paths.
pub fn try_fold_chunks<T, A, E, F, G>(exec: Exec, items: &[T], f: F, combine: G) -> Result<Option<A>, E>
where
    T: Sync,
    A: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<A, E> + Sync + Send,
    G: Fn(A, A) -> A + Sync + Send,
{
    let starts: Vec<usize> = (0..items.len()).step_by(CHUNK).collect();
    let partial = try_map(exec, &starts, |&s| {
        let mut acc: Option<A> = None;
        for (i, item) in items.iter().enumerate().skip(s).take(CHUNK) {
            let x = f(i, item)?;
            acc = Some(match acc {
                None => x,
                Some(a) => combine(a, x),
            });
        }
        Ok(acc)
    })?;
    Ok(partial.into_iter().flatten().reduce(combine))
}
