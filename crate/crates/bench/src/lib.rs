//! Criterion benchmarks for jumplab; see `benches/`.
