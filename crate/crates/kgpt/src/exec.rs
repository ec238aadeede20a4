//! Scoped-thread executor for the core crate's [`Executor`] trait.

use kgpt_core::training::Executor;

/// Splits the items into `threads` contiguous chunks, one scoped thread
/// each, and concatenates the chunk results in order.
#[derive(Debug, Clone, Copy)]
pub struct ThreadExecutor {
    threads: usize,
}

impl ThreadExecutor {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Executor for ThreadExecutor {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O> {
        if self.threads == 1 || items.len() < 2 {
            return items.iter().map(f).collect();
        }
        let chunk = items.len().div_ceil(self.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<O>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_input_order() {
        let items: Vec<u64> = (0..103).collect();
        for threads in [1, 2, 3, 8, 200] {
            let out = ThreadExecutor::new(threads).map(&items, &|x| x * x);
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert!(ThreadExecutor::new(4)
            .map(&Vec::<u8>::new(), &|x| *x)
            .is_empty());
    }
}
