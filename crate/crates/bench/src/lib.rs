//! Criterion benchmarks for the hot paths of `legalprompt-core`; see `benches/`.
