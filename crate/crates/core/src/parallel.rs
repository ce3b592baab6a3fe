//! Order-preserving fan-out over scoped threads.

/// Evaluates `f(0..n)` on up to `threads` workers, returning results in index order.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let mut chunks: Vec<Vec<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t..n).step_by(threads).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut iters: Vec<_> = chunks.iter_mut().map(|c| c.drain(..)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(iters[i % threads].next().expect("chunk length"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        for threads in 1..5 {
            assert_eq!(parallel_map(7, threads, |i| i * i), (0..7).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(parallel_map(0, 3, |i| i).is_empty());
    }
}
