//! Criterion benchmarks for istn-core live under `benches/`.
