use criterion::measurement::WallTime;
use criterion::BenchmarkGroup;

/// Benches `f` on the default rayon pool and on a one-thread pool.
///
/// Built without the `parallel` feature only the sequential path exists.
pub fn both_paths<F: Fn() + Sync>(group: &mut BenchmarkGroup<'_, WallTime>, id: &str, f: F) {
    #[cfg(feature = "parallel")]
    {
        group.bench_function(format!("{id}/parallel"), |b| b.iter(&f));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function(format!("{id}/one_thread"), |b| b.iter(|| pool.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function(format!("{id}/sequential"), |b| b.iter(&f));
}
