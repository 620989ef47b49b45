//! Nodewise data parallelism.
//!
//! Every kernel in the crate funnels its per-node loops through [`fill_nodes`]
//! or [`map_nodes`]. With the `parallel` feature these run on the rayon pool
//! unless the process-wide mode has been switched to [`Mode::Sequential`];
//! without the feature they are plain loops. Outputs are written per node, so
//! both paths produce bit-identical results. Reductions never go through here.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

/// Selects the execution mode for subsequent kernels. `Parallel` is a no-op
/// when the crate is built without the `parallel` feature.
pub fn set_mode(mode: Mode) {
    FORCE_SEQUENTIAL.store(mode == Mode::Sequential, Ordering::Relaxed);
}

pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Calls `f(node, chunk)` for each `stride`-sized chunk of `out`.
pub(crate) fn fill_nodes<F>(out: &mut [f64], stride: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(stride > 0 && out.len().is_multiple_of(stride));
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        out.par_chunks_mut(stride)
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each(|(p, chunk)| f(p, chunk));
        return;
    }
    out.chunks_mut(stride)
        .enumerate()
        .for_each(|(p, chunk)| f(p, chunk));
}

pub(crate) fn map_nodes<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return (0..count)
            .into_par_iter()
            .with_min_len(MIN_CHUNK)
            .map(f)
            .collect();
    }
    (0..count).map(f).collect()
}
