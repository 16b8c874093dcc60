//! Data-parallel helpers.
//!
//! Every batch operation in the crate (scenario violation levels, fairness
//! candidates, parameter sweeps) goes through [`map_collect`] or
//! [`map_init_collect`]. With the `parallel` feature these fan out over the
//! rayon pool when [`ExecMode::Parallel`] is selected; otherwise they run
//! in order on the calling thread. Output order always matches input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

pub fn map_collect<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Like [`map_collect`], with per-worker state built by `init` (for example a
/// warm-started LP oracle that is reused across items on the same worker).
pub fn map_init_collect<T, S, R, I, F>(mode: ExecMode, items: &[T], init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map_init(&init, |s, t| f(s, t)).collect();
    }
    let _ = mode;
    let mut state = init();
    items.iter().map(|t| f(&mut state, t)).collect()
}
