//! `emlog`: provision a device store, ingest logs, verify, export and bench.
//!
//! Exit codes: 0 success, 1 verification findings, 2 usage or
//! configuration error, 3 I/O failure or integrity alarm.

mod commands;
mod config;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FINDINGS: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// A usage or configuration error (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "emlog", version, about = "Tamper-evident logging with sealed storage")]
pub struct Cli {
    /// TOML file with defaults for any command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct StoreArg {
    /// Device store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Skip fsync on commits (faster, not crash safe).
    #[arg(long)]
    pub no_fsync: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum QueuePolicyArg {
    Block,
    Drop,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Web server access log lengths.
    Web,
    /// Intrusion alert lengths.
    Alerts,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create a device store and print its certificate.
    Init {
        #[command(flatten)]
        store: StoreArg,
        /// Blocks per group (c).
        #[arg(short = 'c', long)]
        blocks_per_group: Option<u32>,
        /// Messages per block (m).
        #[arg(short = 'm', long)]
        messages_per_block: Option<u32>,
    },
    /// Log newline-delimited entries from a file or stdin.
    Ingest {
        #[command(flatten)]
        store: StoreArg,
        /// apache-access, snort-fast, dmesg or generic.
        #[arg(long)]
        source: Option<String>,
        /// Input file; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Seal held blocks at least this often, in seconds.
        #[arg(long)]
        epoch: Option<u64>,
        #[arg(long, value_enum)]
        queue_policy: Option<QueuePolicyArg>,
        #[arg(long)]
        queue_capacity: Option<usize>,
        /// Leave the partial tail in memory (it is lost on exit).
        #[arg(long)]
        no_flush: bool,
        #[arg(long)]
        json: bool,
    },
    /// Recover a store after a crash and report its committed position.
    Flush {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        json: bool,
    },
    /// Verify a local store or a fetched archive.
    Verify {
        #[command(flatten)]
        store: StoreArg,
        /// Archive written by `fetch`, instead of a local store.
        #[arg(long, conflicts_with = "store")]
        archive: Option<PathBuf>,
        /// Recompute every HMAC tag (needs the RLK).
        #[arg(long, conflicts_with = "public")]
        full: bool,
        /// Signatures, order and state only.
        #[arg(long)]
        public: bool,
        /// Device certificate for archive verification.
        #[arg(long)]
        device_cert: Option<PathBuf>,
        /// Provisioning bundle (RLK, parameters, certificate).
        #[arg(long)]
        provision: Option<PathBuf>,
        /// Verify blocks on one thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        json: bool,
    },
    /// Create a verifier identity.
    VerifierInit {
        /// Output directory for verifier.pem and verifier.cert.
        #[arg(long)]
        out: PathBuf,
    },
    /// Allow a verifier certificate to fetch from this store.
    Trust {
        #[command(flatten)]
        store: StoreArg,
        cert: PathBuf,
    },
    /// Write the bundle a full-mode verifier needs (contains the RLK).
    ExportProvision {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve blocks to authenticated verifiers over TCP.
    Serve {
        #[command(flatten)]
        store: StoreArg,
        /// Address to bind; the bound address is printed on stdout.
        #[arg(long)]
        listen: Option<String>,
        /// Directory of trusted verifier certificates.
        #[arg(long)]
        trust_dir: Option<PathBuf>,
        /// Exit after this many sessions.
        #[arg(long)]
        max_sessions: Option<usize>,
    },
    /// Fetch a block range from a device and audit it.
    Fetch {
        #[arg(long)]
        connect: Option<String>,
        /// Verifier identity (verifier.pem).
        #[arg(long)]
        identity: Option<PathBuf>,
        /// Expected device certificate.
        #[arg(long)]
        device_cert: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        start: u32,
        #[arg(long)]
        end: Option<u32>,
        /// Audit in full mode with this provisioning bundle.
        #[arg(long)]
        provision: Option<PathBuf>,
        /// Archive output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the measurement grid.
    Bench {
        /// Synthetic entries per cell batch.
        #[arg(long)]
        entries: Option<usize>,
        /// Use lines from this file instead of synthetic data.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Profile::Web)]
        profile: Profile,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Skip fsync during timed runs.
        #[arg(long)]
        no_fsync: bool,
        /// Verify blocks in parallel.
        #[arg(long)]
        parallel_verify: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write synthetic log lines.
    Gen {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Profile::Web)]
        profile: Profile,
        /// Override the profile's mean length.
        #[arg(long)]
        mean: Option<f64>,
        #[arg(long)]
        stddev: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print wire and file format constants.
    ExportFormats {
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(core) = cause.downcast_ref::<emlog_core::Error>() {
            return match core {
                emlog_core::Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_IO,
            };
        }
    }
    EXIT_IO
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("emlog: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
