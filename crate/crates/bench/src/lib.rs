//! Criterion benchmarks for the balancing pipeline; see `benches/`.
