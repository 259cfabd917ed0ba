//! Feeding a line source through the logger.
//!
//! A reader thread parses lines and hands entries to the logger over a
//! bounded queue, one entry per message.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::logger::Logger;
use super::parse::{parse_line, trim_line_ending, RawEntry, Source, Timestamp, MAX_LINE_LEN};
use crate::error::{Error, Result};

/// What the reader does when the queue to the logger is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueuePolicy {
    #[default]
    Block,
    DropWithCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestPolicy {
    /// Seal whatever is held in memory at least this often.
    pub epoch_seconds: Option<u64>,
    pub on_full_queue: QueuePolicy,
    pub queue_capacity: usize,
    /// Sign and seal the partial tail when the input ends.
    pub flush_at_end: bool,
}

impl Default for IngestPolicy {
    fn default() -> Self {
        IngestPolicy {
            epoch_seconds: None,
            on_full_queue: QueuePolicy::Block,
            queue_capacity: 1024,
            flush_at_end: true,
        }
    }
}

impl IngestPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.epoch_seconds == Some(0) {
            return Err(Error::invalid("epoch must be at least one second"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::invalid("queue capacity must be positive"));
        }
        Ok(())
    }
}

const WARNING_SAMPLE: usize = 16;

#[derive(Debug, Default, Clone, PartialEq, Serialize)]
pub struct IngestStats {
    pub entries: u64,
    pub records: u64,
    pub blocks: u64,
    pub groups_sealed: u64,
    pub parse_warnings: u64,
    /// First few warnings verbatim.
    pub warnings: Vec<String>,
    pub blank_lines: u64,
    pub oversize_lines: u64,
    pub dropped: u64,
    pub by_source: BTreeMap<Source, u64>,
    pub first_timestamp: Option<Timestamp>,
    pub last_timestamp: Option<Timestamp>,
    pub latest_block: Option<u32>,
    /// Records still held in memory (non-zero only without a final flush).
    pub unsealed_records: u64,
    pub peak_volatile_records: u64,
    pub peak_volatile_bytes: u64,
    pub elapsed_secs: f64,
    pub throughput_logs_per_sec: f64,
}

/// Ingestion stopped at `at_entry` (0-based, in arrival order). Everything
/// before it reached the logger; `stats` describes that prefix.
#[derive(Debug)]
pub struct IngestFailure {
    pub at_entry: u64,
    pub error: Error,
    pub stats: IngestStats,
}

impl std::fmt::Display for IngestFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ingest halted at entry {}: {}", self.at_entry, self.error)
    }
}

impl std::error::Error for IngestFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Item {
    entry: RawEntry,
    warning: Option<String>,
}

#[derive(Default)]
struct ReaderCounts {
    blank_lines: u64,
    oversize_lines: u64,
    dropped: u64,
}

struct Consumer<'a> {
    logger: &'a mut Logger,
    policy: IngestPolicy,
    stats: IngestStats,
    start: Instant,
    base: super::logger::LoggerCounters,
}

impl<'a> Consumer<'a> {
    fn new(logger: &'a mut Logger, policy: IngestPolicy) -> Self {
        logger.set_epoch(policy.epoch_seconds.map(Duration::from_secs));
        let base = logger.counters();
        Consumer {
            logger,
            policy,
            stats: IngestStats::default(),
            start: Instant::now(),
            base,
        }
    }

    fn fail(&mut self, error: Error) -> Box<IngestFailure> {
        self.finish_stats();
        Box::new(IngestFailure {
            at_entry: self.stats.entries,
            error,
            stats: self.stats.clone(),
        })
    }

    fn take(&mut self, item: Item) -> std::result::Result<(), Box<IngestFailure>> {
        if let Err(e) = self.logger.log_entry(&item.entry.body) {
            return Err(self.fail(e));
        }
        let s = &mut self.stats;
        s.entries += 1;
        *s.by_source.entry(item.entry.source).or_default() += 1;
        if let Some(w) = item.warning {
            s.parse_warnings += 1;
            if s.warnings.len() < WARNING_SAMPLE {
                s.warnings.push(w);
            }
        }
        if let Some(t) = item.entry.timestamp {
            s.first_timestamp.get_or_insert(t);
            s.last_timestamp = Some(t);
        }
        if let Err(e) = self.logger.poll_epoch(Instant::now()) {
            return Err(self.fail(e));
        }
        Ok(())
    }

    fn end(mut self) -> std::result::Result<IngestStats, Box<IngestFailure>> {
        if self.policy.flush_at_end {
            if let Err(e) = self.logger.flush() {
                return Err(self.fail(e));
            }
        }
        self.finish_stats();
        Ok(self.stats)
    }

    fn finish_stats(&mut self) {
        let c = self.logger.counters();
        let s = &mut self.stats;
        s.records = c.records - self.base.records;
        s.blocks = c.blocks_signed - self.base.blocks_signed;
        s.groups_sealed = c.groups_sealed - self.base.groups_sealed;
        s.peak_volatile_records = c.peak_volatile.records;
        s.peak_volatile_bytes = c.peak_volatile.bytes;
        s.latest_block = self.logger.state().latest_block();
        s.unsealed_records = self.logger.volatile().records;
        s.elapsed_secs = self.start.elapsed().as_secs_f64();
        s.throughput_logs_per_sec = if s.elapsed_secs > 0.0 {
            s.entries as f64 / s.elapsed_secs
        } else {
            0.0
        };
    }
}

/// Log already-parsed entries in order.
pub fn ingest_entries(
    entries: impl IntoIterator<Item = RawEntry>,
    logger: &mut Logger,
    policy: IngestPolicy,
) -> std::result::Result<IngestStats, Box<IngestFailure>> {
    let mut consumer = Consumer::new(logger, policy);
    if let Err(e) = policy.validate() {
        return Err(consumer.fail(e));
    }
    for entry in entries {
        consumer.take(Item { entry, warning: None })?;
    }
    consumer.end()
}

fn classify(source: Source, line: &[u8]) -> Option<(Item, bool)> {
    let body = trim_line_ending(line);
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return None;
    }
    Some(match parse_line(source, line) {
        Ok(p) => (
            Item {
                entry: p.entry,
                warning: p.warning,
            },
            false,
        ),
        // Oversized: keep the evidence as a generic entry.
        Err(_) => (
            Item {
                entry: RawEntry::generic(body),
                warning: Some(format!("line of {} bytes exceeds {MAX_LINE_LEN}", body.len())),
            },
            true,
        ),
    })
}

fn read_lines<R: BufRead>(
    mut reader: R,
    source: Source,
    tx: SyncSender<Item>,
    policy: QueuePolicy,
) -> std::io::Result<ReaderCounts> {
    let mut counts = ReaderCounts::default();
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(counts);
        }
        let Some((item, oversize)) = classify(source, &line) else {
            counts.blank_lines += 1;
            continue;
        };
        counts.oversize_lines += u64::from(oversize);
        match policy {
            QueuePolicy::Block => {
                if tx.send(item).is_err() {
                    return Ok(counts);
                }
            }
            QueuePolicy::DropWithCount => match tx.try_send(item) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => counts.dropped += 1,
                Err(TrySendError::Disconnected(_)) => return Ok(counts),
            },
        }
    }
}

fn drain(rx: Receiver<Item>, mut consumer: Consumer<'_>) -> std::result::Result<IngestStats, Box<IngestFailure>> {
    for item in rx {
        consumer.take(item)?;
    }
    consumer.end()
}

/// Read newline-delimited entries of the given source and log them.
/// Blank lines are skipped and counted; malformed lines are kept as generic
/// entries with a warning.
pub fn ingest_reader<R: BufRead + Send>(
    reader: R,
    source: Source,
    logger: &mut Logger,
    policy: IngestPolicy,
) -> std::result::Result<IngestStats, Box<IngestFailure>> {
    let consumer = Consumer::new(logger, policy);
    if let Err(e) = policy.validate() {
        let mut consumer = consumer;
        return Err(consumer.fail(e));
    }
    let (tx, rx) = sync_channel(policy.queue_capacity);
    std::thread::scope(|scope| {
        let reader = scope.spawn(move || read_lines(reader, source, tx, policy.on_full_queue));
        let result = drain(rx, consumer);
        let counts = reader.join().expect("reader thread panicked");
        let apply = |s: &mut IngestStats, c: &ReaderCounts| {
            s.blank_lines = c.blank_lines;
            s.oversize_lines = c.oversize_lines;
            s.dropped = c.dropped;
        };
        match (result, counts) {
            (Ok(mut stats), Ok(c)) => {
                apply(&mut stats, &c);
                Ok(stats)
            }
            (Ok(stats), Err(io)) => Err(Box::new(IngestFailure {
                at_entry: stats.entries,
                error: io.into(),
                stats,
            })),
            (Err(mut failure), counts) => {
                if let Ok(c) = counts {
                    apply(&mut failure.stats, &c);
                }
                Err(failure)
            }
        }
    })
}
