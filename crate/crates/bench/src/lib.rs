//! Criterion benchmarks for the signal path, the convolution kernel and a
//! full training step. Run with `cargo bench -p mfam-bench`.
