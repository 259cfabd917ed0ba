//! Benchmark harness and synthetic dataset generator.

pub mod grid;
pub mod stats;
pub mod synthetic;

pub use grid::{bench_grid, BenchConfig, BenchReport, Check, Dataset, StorageCell, TimingCell};
pub use stats::{LinearFit, Stat};
pub use synthetic::{synthetic_lines, write_synthetic, SyntheticSpec};
