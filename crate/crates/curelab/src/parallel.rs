//! Deterministic fan-out over indexed work.
//!
//! Results are a pure function of the index and land in index order, so the
//! worker count changes wall time and nothing else.

use crate::error::Result;

/// Evaluate `f(0..n)` with up to `workers` threads, returning results in
/// index order. The first error in index order wins, regardless of which
/// worker hit it.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let per = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(per).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = w * per;
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(base + j));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("worker filled slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn worker_count_does_not_change_results() {
        let f = |i: usize| Ok(i * i);
        let one = parallel_map(37, 1, f).unwrap();
        let four = parallel_map(37, 4, f).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[6], 36);
    }

    #[test]
    fn first_error_in_index_order_wins() {
        let f = |i: usize| {
            if i >= 5 {
                Err(Error::Config(format!("boom {i}")))
            } else {
                Ok(i)
            }
        };
        let err = parallel_map(20, 4, f).unwrap_err();
        assert!(err.to_string().contains("boom 5"), "{err}");
    }
}
