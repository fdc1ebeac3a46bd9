//! Benchmark-only crate. The criterion suite lives in `benches/suite.rs`;
//! run it with `cargo bench -p relaxem-bench`.
