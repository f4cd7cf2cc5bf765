//! Criterion benchmarks for the vqid pipeline; see `benches/`.
