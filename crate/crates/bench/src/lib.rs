//! Criterion benchmarks for the tempora workspace. All code lives in the
//! `benches/` targets; this library exists only to anchor the package.
