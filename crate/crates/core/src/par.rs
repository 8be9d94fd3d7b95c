//! Order-preserving parallel map. With the `parallel` feature and a width
//! above one, work runs on a dedicated rayon pool of that width; otherwise it
//! runs sequentially on the calling thread. Results always come back in input
//! order, so callers see identical output for every width.

/// Worker count to use when the caller asks for "all cores".
pub fn available_width() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn map_ordered<T, R, F>(items: &[T], width: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if width > 1 && items.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
            Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => log::warn!("falling back to sequential map: {e}"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = width;
    items.iter().map(f).collect()
}

/// Sequential reference path, always available.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
