//! Log ingestion: source parsers, chunking into text fields and the logger
//! that assembles records into signed blocks and sealed groups.

pub mod chunk;
pub mod ingest;
pub mod logger;
pub mod parse;

pub use chunk::{chunk_body, chunk_count, reassemble_blocks, Chunk, Reassembler};
pub use ingest::{ingest_entries, ingest_reader, IngestFailure, IngestPolicy, IngestStats, QueuePolicy};
pub use logger::{KeySource, Logger, LoggerCounters, Volatile};
pub use parse::{parse_line, Parsed, RawEntry, Source, Timestamp};
