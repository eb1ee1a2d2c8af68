//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate (per-pair cleaning predicates, batch
//! embedding, neighbour search, per-row metrics) goes through [`map`] so
//! the execution strategy is decided in one place. With the `parallel`
//! feature the work is spread over the current rayon pool; without it, or
//! inside a [`with_execution`]`(Execution::Sequential, ..)` scope, the
//! same closures run in order on the calling thread. Output order is the
//! input order in both modes.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

thread_local! {
    static MODE: Cell<Execution> = const { Cell::new(Execution::Parallel) };
}

/// Execution mode in effect on this thread.
pub fn current() -> Execution {
    if cfg!(feature = "parallel") {
        MODE.with(|m| m.get())
    } else {
        Execution::Sequential
    }
}

/// Run `f` with the given execution mode, restoring the previous mode after.
pub fn with_execution<R>(mode: Execution, f: impl FnOnce() -> R) -> R {
    struct Restore(Execution);
    impl Drop for Restore {
        fn drop(&mut self) {
            MODE.with(|m| m.set(self.0));
        }
    }
    let _restore = Restore(MODE.with(|m| m.replace(mode)));
    f()
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match current() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving fallible map; returns the first error in input order.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}
