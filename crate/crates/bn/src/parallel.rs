//! Shared thread pool, sized by the BN_THREADS environment variable.
//!
//! Rate evaluation parallelizes over target nodes against an immutable
//! snapshot with per-node sequential reductions, so the result does not
//! depend on the pool size.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("BN_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("failed to build worker pool")
    })
}
