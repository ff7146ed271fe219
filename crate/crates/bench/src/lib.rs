//! Criterion benchmarks for the rnnaccel datapath live under `benches/`.
