//! Index-parallel map: rayon when the `parallel` feature is on, a plain loop
//! otherwise (the browser build).

#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Caps worker threads for the rest of the process. Only the first call has
/// an effect.
#[cfg(feature = "parallel")]
pub fn set_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::QecError::InvalidArgument(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn set_threads(_n: usize) -> crate::Result<()> {
    Ok(())
}
