//! Pluggable task execution.
//!
//! Work that may run in parallel is expressed as a list of independent
//! tasks. Each task writes only to state it owns, and callers combine task
//! results in index order, so the outcome is identical whether the tasks
//! run serially or on a thread pool.

use alloc::boxed::Box;
use alloc::vec::Vec;

/// Runs a batch of independent tasks to completion.
pub trait Exec: Sync {
    fn run(&self, tasks: &mut [&mut (dyn FnMut() + Send)]);

    /// Upper bound on useful parallelism, used to size work chunks.
    fn width(&self) -> usize {
        1
    }
}

/// Runs tasks one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Serial;

impl Exec for Serial {
    fn run(&self, tasks: &mut [&mut (dyn FnMut() + Send)]) {
        for task in tasks.iter_mut() {
            task();
        }
    }
}

/// Evaluates `f(0..n)` through `exec` and returns results in index order.
pub fn par_map<R, F>(exec: &dyn Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    {
        let f = &f;
        let mut closures: Vec<Box<dyn FnMut() + Send + '_>> = slots
            .iter_mut()
            .enumerate()
            .map(|(i, slot)| Box::new(move || *slot = Some(f(i))) as Box<dyn FnMut() + Send + '_>)
            .collect();
        let mut refs: Vec<&mut (dyn FnMut() + Send)> =
            closures.iter_mut().map(|c| &mut **c as &mut (dyn FnMut() + Send)).collect();
        exec.run(&mut refs);
    }
    slots.into_iter().map(|s| s.expect("task did not run")).collect()
}

/// Applies `f` to every item through `exec`, one task per item.
pub fn for_each_mut<S, F>(exec: &dyn Exec, items: &mut [S], f: F)
where
    S: Send,
    F: Fn(usize, &mut S) + Sync,
{
    let f = &f;
    let mut closures: Vec<Box<dyn FnMut() + Send + '_>> = items
        .iter_mut()
        .enumerate()
        .map(|(i, item)| Box::new(move || f(i, item)) as Box<dyn FnMut() + Send + '_>)
        .collect();
    let mut refs: Vec<&mut (dyn FnMut() + Send)> =
        closures.iter_mut().map(|c| &mut **c as &mut (dyn FnMut() + Send)).collect();
    exec.run(&mut refs);
}

/// Splits `0..n` into contiguous ranges of at most `chunk` items.
pub fn chunks(n: usize, chunk: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).map(move |c| c * chunk..((c + 1) * chunk).min(n))
}
