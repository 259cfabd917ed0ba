//! Block, group and storage measurement grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::stats::{LinearFit, Stat};
use super::synthetic::{synthetic_lines, SyntheticSpec};
use crate::collector::Logger;
use crate::error::{Error, Result};
use crate::keyschedule::ChainParams;
use crate::logchain::block::block_len;
use crate::par::Exec;
use crate::sealstore::device::provision;
use crate::sealstore::sealed::SEAL_OVERHEAD;
use crate::sealstore::{verify_store, StoreConfig};

/// Sanity floor for group cells with c ≥ 10.
pub const THROUGHPUT_FLOOR: f64 = 625.0;
pub const MEMORY_CEILING_LARGE: u64 = 2 * 1024 * 1024;
pub const MEMORY_CEILING: u64 = 1024 * 1024;
pub const MIN_R_SQUARED: f64 = 0.999;
pub const MAX_OVERHEAD: f64 = 5.0;
/// Storage cells at or above this m must stay under `MAX_OVERHEAD`.
pub const OVERHEAD_FROM_M: u32 = 250;

#[derive(Debug, Clone)]
pub enum Dataset {
    Synthetic(SyntheticSpec),
    Lines(Vec<Vec<u8>>),
}

impl Dataset {
    fn load(&self) -> Result<Vec<Vec<u8>>> {
        let lines: Vec<Vec<u8>> = match self {
            Dataset::Synthetic(spec) => synthetic_lines(spec)?.collect(),
            Dataset::Lines(lines) => lines.clone(),
        };
        if lines.is_empty() {
            return Err(Error::invalid("bench dataset is empty"));
        }
        Ok(lines)
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub dataset: Dataset,
    pub block_ms: Vec<u32>,
    pub block_c: u32,
    pub group_cs: Vec<u32>,
    pub group_m: u32,
    pub storage_ms: Vec<u32>,
    /// Full blocks written per storage cell.
    pub storage_blocks: u32,
    pub repetitions: usize,
    pub work_dir: PathBuf,
    pub durable: bool,
    pub exec: Exec,
    /// A timed run shorter than this doubles the batch during warm-up.
    pub min_sample: Duration,
    pub max_batch: usize,
}

impl BenchConfig {
    pub fn new(dataset: Dataset, work_dir: impl Into<PathBuf>) -> Self {
        BenchConfig {
            dataset,
            block_ms: vec![10, 100, 250, 500],
            block_c: 1,
            group_cs: vec![1, 10, 25, 50],
            group_m: 100,
            storage_ms: vec![10, 50, 100, 250, 500, 750, 1000, 2500],
            storage_blocks: 2,
            repetitions: 3,
            work_dir: work_dir.into(),
            durable: true,
            exec: Exec::Sequential,
            min_sample: Duration::from_millis(50),
            max_batch: 1 << 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(Error::invalid("at least 3 repetitions are required"));
        }
        let all = self.block_ms.iter().chain(&self.group_cs).chain(&self.storage_ms);
        if all.chain([&self.block_c, &self.group_m]).any(|v| *v == 0) {
            return Err(Error::invalid("grid values must be positive"));
        }
        if self.storage_blocks == 0 || self.max_batch == 0 {
            return Err(Error::invalid("storage blocks and batch limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingCell {
    pub c: u32,
    pub m: u32,
    pub batch_entries: usize,
    pub widened: bool,
    pub records: u64,
    pub blocks: u64,
    pub groups: u64,
    pub create_block_ms: Stat,
    pub verify_block_ms: Stat,
    pub create_group_ms: Stat,
    pub verify_group_ms: Stat,
    pub throughput: Stat,
    /// Logs per second, one per repetition in run order.
    pub throughput_samples: Vec<f64>,
    pub peak_volatile_records: u64,
    pub peak_volatile_bytes: u64,
    pub counts_reproducible: bool,
    pub verified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StorageCell {
    pub m: u32,
    pub blocks: u32,
    /// Mean sealed file size per block.
    pub sealed_bytes_per_block: f64,
    /// What the format predicts: block_len(m) plus the seal envelope.
    pub expected_bytes_per_block: u64,
    pub raw_bytes_per_block: f64,
    pub overhead_ratio: f64,
    pub matches_arithmetic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub entries: usize,
    pub mean_entry_len: f64,
    pub repetitions: usize,
    pub parallel_verify: bool,
    pub durable: bool,
    pub block_cells: Vec<TimingCell>,
    pub group_cells: Vec<TimingCell>,
    pub storage_cells: Vec<StorageCell>,
    pub storage_fit: Option<LinearFit>,
    pub checks: Vec<Check>,
}

impl BenchReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Sample {
    create: Duration,
    verify: Duration,
    records: u64,
    blocks: u64,
    groups: u64,
    peak_records: u64,
    peak_bytes: u64,
    verified: bool,
}

struct Runner<'a> {
    config: &'a BenchConfig,
    lines: &'a [Vec<u8>],
    serial: u64,
}

impl Runner<'_> {
    fn fresh_dir(&mut self, label: &str) -> PathBuf {
        self.serial += 1;
        self.config.work_dir.join(format!("{label}-{}", self.serial))
    }

    /// Provision a store, log `batch` entries (cycling the dataset), flush,
    /// then verify the whole store in full mode.
    fn sample(&mut self, params: ChainParams, batch: usize) -> Result<Sample> {
        let dir = self.fresh_dir(&format!("c{}-m{}", params.blocks_per_group, params.messages_per_block));
        let result = self.sample_in(&dir, params, batch);
        let _ = fs::remove_dir_all(&dir);
        result
    }

    fn sample_in(&self, dir: &Path, params: ChainParams, batch: usize) -> Result<Sample> {
        let store_config = StoreConfig {
            durable: self.config.durable,
            ..StoreConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x656d_6c6f_67);
        let device = provision(dir, params, store_config, &mut rng)?;
        let mut logger = Logger::open(device)?;

        let start = Instant::now();
        for line in self.lines.iter().cycle().take(batch) {
            logger.log_entry(line)?;
        }
        logger.flush()?;
        let create = start.elapsed();

        let counters = logger.counters();
        let device = logger.into_device();
        let start = Instant::now();
        let report = verify_store(
            &device.store,
            device.secrets.identity.public_key(),
            params,
            Some(&device.secrets.rlk),
            self.config.exec,
        )?;
        let verify = start.elapsed();
        Ok(Sample {
            create,
            verify,
            records: counters.records,
            blocks: counters.blocks_signed,
            groups: counters.groups_sealed,
            peak_records: counters.peak_volatile.records,
            peak_bytes: counters.peak_volatile.bytes,
            verified: report.is_ok(),
        })
    }

    /// Warm-up run, doubling the batch until one run is long enough to time.
    fn calibrate(&mut self, params: ChainParams) -> Result<(usize, bool)> {
        let mut batch = self.lines.len();
        let mut widened = false;
        loop {
            let s = self.sample(params, batch)?;
            if s.create >= self.config.min_sample || batch >= self.config.max_batch {
                return Ok((batch, widened));
            }
            batch = (batch * 2).min(self.config.max_batch);
            widened = true;
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn timing_cell(params: ChainParams, batch: usize, widened: bool, samples: &[Sample]) -> TimingCell {
    let per = |f: &dyn Fn(&Sample) -> f64| Stat::of(&samples.iter().map(f).collect::<Vec<_>>());
    let throughput_samples: Vec<f64> = samples
        .iter()
        .map(|s| batch as f64 / s.create.as_secs_f64().max(f64::MIN_POSITIVE))
        .collect();
    let first = &samples[0];
    TimingCell {
        c: params.blocks_per_group,
        m: params.messages_per_block,
        batch_entries: batch,
        widened,
        records: first.records,
        blocks: first.blocks,
        groups: first.groups,
        create_block_ms: per(&|s| ms(s.create) / s.blocks.max(1) as f64),
        verify_block_ms: per(&|s| ms(s.verify) / s.blocks.max(1) as f64),
        create_group_ms: per(&|s| ms(s.create) / s.groups.max(1) as f64),
        verify_group_ms: per(&|s| ms(s.verify) / s.groups.max(1) as f64),
        throughput: Stat::of(&throughput_samples),
        throughput_samples,
        peak_volatile_records: samples.iter().map(|s| s.peak_records).max().unwrap_or(0),
        peak_volatile_bytes: samples.iter().map(|s| s.peak_bytes).max().unwrap_or(0),
        counts_reproducible: samples
            .iter()
            .all(|s| (s.records, s.blocks, s.groups) == (first.records, first.blocks, first.groups)),
        verified: samples.iter().all(|s| s.verified),
    }
}

/// Run timing cells with repetitions interleaved across cells, so slow
/// drift in machine load affects every cell alike.
fn run_timing(runner: &mut Runner<'_>, grid: &[ChainParams]) -> Result<Vec<TimingCell>> {
    let mut batches = Vec::with_capacity(grid.len());
    for p in grid {
        batches.push(runner.calibrate(*p)?);
    }
    let mut samples: Vec<Vec<Sample>> = grid.iter().map(|_| Vec::new()).collect();
    for _ in 0..runner.config.repetitions {
        for (i, p) in grid.iter().enumerate() {
            samples[i].push(runner.sample(*p, batches[i].0)?);
        }
    }
    Ok(grid
        .iter()
        .zip(&batches)
        .zip(&samples)
        .map(|((p, (batch, widened)), s)| timing_cell(*p, *batch, *widened, s))
        .collect())
}

fn storage_cell(runner: &mut Runner<'_>, m: u32) -> Result<StorageCell> {
    let params = ChainParams::new(1, m)?;
    let blocks = runner.config.storage_blocks;
    let dir = runner.fresh_dir(&format!("storage-m{m}"));
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(m));
        let store_config = StoreConfig {
            durable: false,
            ..StoreConfig::default()
        };
        let device = provision(&dir, params, store_config, &mut rng)?;
        let mut logger = Logger::open(device)?;
        let mut raw = 0u64;
        let mut written = 0u64;
        // One record per entry: lines longer than a text field are skipped
        // so that raw bytes line up with whole blocks.
        for line in runner.lines.iter().cycle().filter(|l| l.len() <= 254) {
            if written == u64::from(m) * u64::from(blocks) {
                break;
            }
            logger.log_entry(line)?;
            raw += line.len() as u64;
            written += 1;
        }
        logger.flush()?;
        let device = logger.into_device();
        let mut sealed = 0u64;
        for id in device.store.block_ids()? {
            sealed += fs::metadata(device.store.block_path(id))?.len();
        }
        let expected = (block_len(m as usize) + SEAL_OVERHEAD) as u64;
        let per_block = sealed as f64 / f64::from(blocks);
        Ok(StorageCell {
            m,
            blocks,
            sealed_bytes_per_block: per_block,
            expected_bytes_per_block: expected,
            raw_bytes_per_block: raw as f64 / f64::from(blocks),
            overhead_ratio: sealed as f64 / raw.max(1) as f64,
            matches_arithmetic: sealed == expected * u64::from(blocks),
        })
    })();
    let _ = fs::remove_dir_all(&dir);
    result
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn trend_checks(report: &BenchReport) -> Vec<Check> {
    let mut checks = Vec::new();

    let times: Vec<(u32, f64)> = report.block_cells.iter().map(|c| (c.m, c.create_block_ms.mean)).collect();
    let monotone = times.windows(2).all(|w| w[1].1 > w[0].1);
    let detail = times.iter().map(|(m, t)| format!("m={m}: {t:.3} ms")).collect::<Vec<_>>().join(", ");
    checks.push(check("block-create-monotone-in-m", monotone, detail));

    let base = report.group_cells.iter().find(|c| c.c == 1);
    let large = report
        .group_cells
        .iter()
        .find(|c| c.c == 25)
        .or_else(|| report.group_cells.iter().filter(|c| c.c > 1).max_by_key(|c| c.c));
    match (base, large) {
        (Some(base), Some(large)) => {
            let wins = base
                .throughput_samples
                .iter()
                .zip(&large.throughput_samples)
                .filter(|(b, l)| l >= b)
                .count();
            let reps = base.throughput_samples.len();
            checks.push(check(
                "throughput-large-c-vs-c1",
                wins * 3 >= reps * 2,
                format!(
                    "c={} ≥ c=1 in {wins} of {reps} repetitions ({:.0} vs {:.0} logs/s)",
                    large.c, large.throughput.mean, base.throughput.mean
                ),
            ));
        }
        _ => checks.push(check(
            "throughput-large-c-vs-c1",
            false,
            "grid needs c=1 and a larger c".into(),
        )),
    }

    let floor_cells: Vec<&TimingCell> = report.group_cells.iter().filter(|c| c.c >= 10).collect();
    let slowest = floor_cells.iter().map(|c| c.throughput.mean).fold(f64::INFINITY, f64::min);
    checks.push(check(
        "throughput-floor",
        !floor_cells.is_empty() && slowest > THROUGHPUT_FLOOR,
        format!("slowest c≥10 cell: {slowest:.0} logs/s, floor {THROUGHPUT_FLOOR}"),
    ));

    let cells = report.block_cells.iter().chain(&report.group_cells);
    let over: Vec<String> = cells
        .filter(|c| {
            let ceiling = if c.c >= 50 { MEMORY_CEILING_LARGE } else { MEMORY_CEILING };
            c.peak_volatile_bytes > ceiling
        })
        .map(|c| format!("c={} m={}: {} bytes", c.c, c.m, c.peak_volatile_bytes))
        .collect();
    let peak = report
        .block_cells
        .iter()
        .chain(&report.group_cells)
        .map(|c| c.peak_volatile_bytes)
        .max()
        .unwrap_or(0);
    checks.push(check(
        "volatile-memory-ceiling",
        over.is_empty(),
        if over.is_empty() {
            format!("peak {peak} bytes")
        } else {
            over.join("; ")
        },
    ));

    let all_cells = || report.block_cells.iter().chain(&report.group_cells);
    checks.push(check(
        "counts-reproducible",
        all_cells().all(|c| c.counts_reproducible),
        "record, block and group counts equal across repetitions".into(),
    ));
    checks.push(check(
        "stores-verify",
        all_cells().all(|c| c.verified),
        "every timed store passes full verification".into(),
    ));

    let r2 = report.storage_fit.map(|f| f.r_squared);
    checks.push(check(
        "storage-linear",
        r2.is_some_and(|r| r >= MIN_R_SQUARED),
        format!("R² = {}", r2.map_or("n/a".into(), |r| format!("{r:.6}"))),
    ));
    checks.push(check(
        "storage-matches-format",
        report.storage_cells.iter().all(|c| c.matches_arithmetic),
        format!("sealed block = 77 + 292·m + {SEAL_OVERHEAD} bytes"),
    ));
    let worst = report
        .storage_cells
        .iter()
        .filter(|c| c.m >= OVERHEAD_FROM_M)
        .map(|c| c.overhead_ratio)
        .fold(0.0, f64::max);
    checks.push(check(
        "storage-overhead",
        worst <= MAX_OVERHEAD,
        format!("worst ratio for m≥{OVERHEAD_FROM_M}: {worst:.3}×"),
    ));
    checks
}

/// Run the full grid. A warm-up run per cell is discarded.
pub fn bench_grid(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let lines = config.dataset.load()?;
    fs::create_dir_all(&config.work_dir)?;
    let mut runner = Runner {
        config,
        lines: &lines,
        serial: 0,
    };

    let block_grid = config
        .block_ms
        .iter()
        .map(|m| ChainParams::new(config.block_c, *m))
        .collect::<Result<Vec<_>>>()?;
    let group_grid = config
        .group_cs
        .iter()
        .map(|c| ChainParams::new(*c, config.group_m))
        .collect::<Result<Vec<_>>>()?;
    let block_cells = run_timing(&mut runner, &block_grid)?;
    let group_cells = run_timing(&mut runner, &group_grid)?;

    let storage_cells = config
        .storage_ms
        .iter()
        .map(|m| storage_cell(&mut runner, *m))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = storage_cells
        .iter()
        .map(|c| (f64::from(c.m), c.sealed_bytes_per_block))
        .collect();

    let mut report = BenchReport {
        entries: lines.len(),
        mean_entry_len: lines.iter().map(|l| l.len() as f64).sum::<f64>() / lines.len() as f64,
        repetitions: config.repetitions,
        parallel_verify: config.exec.is_parallel(),
        durable: config.durable,
        block_cells,
        group_cells,
        storage_cells,
        storage_fit: LinearFit::of(&points),
        checks: Vec::new(),
    };
    report.checks = trend_checks(&report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> BenchConfig {
        let mut config = BenchConfig::new(Dataset::Synthetic(SyntheticSpec::web(600, 7)), dir);
        config.block_ms = vec![10, 50];
        config.group_cs = vec![1, 3];
        config.group_m = 20;
        config.storage_ms = vec![10, 20, 40];
        config.min_sample = Duration::ZERO;
        config
    }

    #[test]
    fn small_grid_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let report = bench_grid(&small(dir.path())).unwrap();
        assert_eq!(report.block_cells.len(), 2);
        assert_eq!(report.group_cells.len(), 2);
        assert_eq!(report.storage_cells.len(), 3);
        for cell in report.block_cells.iter().chain(&report.group_cells) {
            assert_eq!(cell.throughput_samples.len(), 3);
            assert_eq!(cell.records, 600);
            assert!(cell.counts_reproducible && cell.verified);
        }
        let g3 = &report.group_cells[1];
        assert_eq!((g3.blocks, g3.groups), (30, 10));
        assert_eq!(g3.peak_volatile_records, 60);
        for s in &report.storage_cells {
            assert!(s.matches_arithmetic, "{s:?}");
            assert_eq!(s.expected_bytes_per_block, 77 + 292 * u64::from(s.m) + 42);
        }
        let fit = report.storage_fit.unwrap();
        assert!((fit.slope - 292.0).abs() < 1e-9 && (fit.intercept - 119.0).abs() < 1e-6);
        for name in ["storage-linear", "storage-matches-format", "storage-overhead", "counts-reproducible"] {
            assert!(report.check(name).unwrap().passed, "{name}");
        }
        // Work directories are cleaned up.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        serde_json::to_string(&report).unwrap();
    }

    #[test]
    fn batch_widens_when_runs_are_too_short() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small(dir.path());
        config.dataset = Dataset::Lines(vec![b"x".to_vec(); 10]);
        config.block_ms = vec![10];
        config.group_cs = vec![1, 2];
        config.min_sample = Duration::from_secs(3600);
        config.max_batch = 80;
        let report = bench_grid(&config).unwrap();
        let cell = &report.block_cells[0];
        assert!(cell.widened);
        assert_eq!(cell.batch_entries, 80);
        assert_eq!(cell.blocks, 8);
    }

    #[test]
    fn config_validation() {
        let dir = Path::new("unused");
        let mut config = small(dir);
        config.repetitions = 2;
        assert!(bench_grid(&config).is_err());
        let mut config = small(dir);
        config.group_cs.push(0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn trend_checks_read_cells() {
        let cell = |c: u32, m: u32, create: f64, thr: Vec<f64>| TimingCell {
            c,
            m,
            batch_entries: 1,
            widened: false,
            records: 1,
            blocks: 1,
            groups: 1,
            create_block_ms: Stat { mean: create, stddev: 0.0, n: 3 },
            verify_block_ms: Stat::default(),
            create_group_ms: Stat::default(),
            verify_group_ms: Stat::default(),
            throughput: Stat::of(&thr),
            throughput_samples: thr,
            peak_volatile_records: 0,
            peak_volatile_bytes: if c == 50 { 1_500_000 } else { 10 },
            counts_reproducible: true,
            verified: true,
        };
        let report = BenchReport {
            entries: 1,
            mean_entry_len: 1.0,
            repetitions: 3,
            parallel_verify: false,
            durable: false,
            block_cells: vec![cell(1, 10, 1.0, vec![]), cell(1, 100, 3.0, vec![]), cell(1, 250, 2.0, vec![])],
            group_cells: vec![
                cell(1, 100, 0.0, vec![900.0, 1000.0, 1100.0]),
                cell(25, 100, 0.0, vec![950.0, 990.0, 1200.0]),
                cell(50, 100, 0.0, vec![600.0, 600.0, 600.0]),
            ],
            storage_cells: vec![],
            storage_fit: None,
            checks: vec![],
        };
        let checks = trend_checks(&report);
        let get = |n: &str| checks.iter().find(|c| c.name == n).unwrap().passed;
        assert!(!get("block-create-monotone-in-m"));
        assert!(get("throughput-large-c-vs-c1"));
        assert!(!get("throughput-floor"));
        assert!(get("volatile-memory-ceiling"));
        assert!(!get("storage-linear"));
    }
}
