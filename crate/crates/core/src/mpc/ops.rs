//! Per-thread floating-point operation counter for the MPC kernels.

use std::cell::Cell;

thread_local! {
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(flops: usize) {
    COUNT.with(|c| c.set(c.get() + flops as u64));
}

/// Resets this thread's counter to zero.
pub fn reset() {
    COUNT.with(|c| c.set(0));
}

/// Operations counted on this thread since the last [`reset`].
pub fn count() -> u64 {
    COUNT.with(|c| c.get())
}

/// Runs `f` and returns its result with the operations it performed.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = count();
    let out = f();
    (out, count() - before)
}
