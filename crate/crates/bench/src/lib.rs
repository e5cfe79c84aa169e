//! Benchmarks for the cut-point search; see `benches/`.
