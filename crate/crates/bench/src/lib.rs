//! Criterion benchmarks for the selection engine live in `benches/`.
