//! Criterion benchmarks for the decentralized actor-critic kernels; see
//! `benches/kernels.rs`.
