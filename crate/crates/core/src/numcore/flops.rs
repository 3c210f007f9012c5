//! Thread-local multiply-accumulate counter fed by the forward kernels.
//!
//! Only forward passes recorded on a [`Tape`](super::Tape) are counted; the
//! backward kernels never touch the counter.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add_macs(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}

/// Zero this thread's counter.
pub fn reset() {
    MACS.with(|c| c.set(0));
}

/// Multiply-accumulates recorded on this thread since the last [`reset`].
pub fn macs() -> u64 {
    MACS.with(|c| c.get())
}

/// Run `f` and return its result together with the MACs it executed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = macs();
    let r = f();
    (r, macs() - before)
}
