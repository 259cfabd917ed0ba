use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use anyhow::Context;
use emlog_core::bench::{bench_grid, write_synthetic, BenchConfig, BenchReport, Dataset, SyntheticSpec};
use emlog_core::collector::{ingest_reader, IngestPolicy, IngestStats, Logger, QueuePolicy, Source};
use emlog_core::keyschedule::ChainParams;
use emlog_core::logchain::{BlockStatus, Certificate, DeviceId, DeviceIdentity, Finding, Role, TrustAnchors, VerificationReport, VerifyMode};
use emlog_core::par::Exec;
use emlog_core::retrieval::{audit, decode_archive, encode_archive, BlockRange, DeviceService, Retrieved, VerifierClient};
use emlog_core::sealstore::device::{self, Device};
use emlog_core::sealstore::{verify_store, StoreConfig, VerifierProvision};
use rand::rngs::OsRng;
use serde::Serialize;

use crate::config::Config;
use crate::{formats, Cli, Command, Profile, QueuePolicyArg, StoreArg, Usage, EXIT_FINDINGS, EXIT_OK};

const DEFAULT_STORE: &str = "emlog-store";
const DEFAULT_LISTEN: &str = "127.0.0.1:7414";
const TRUSTED_DIR: &str = "trusted";

type Outcome = anyhow::Result<u8>;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Ctx {
    config: Config,
}

impl Ctx {
    fn store_path(&self, arg: &StoreArg) -> PathBuf {
        arg.store
            .clone()
            .or_else(|| self.config.store.path.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
    }

    fn store_config(&self, arg: &StoreArg) -> StoreConfig {
        StoreConfig {
            durable: !arg.no_fsync && self.config.store.durable.unwrap_or(true),
            ..StoreConfig::default()
        }
    }

    fn open(&self, arg: &StoreArg) -> anyhow::Result<Device> {
        let root = self.store_path(arg);
        if !root.exists() {
            return Err(usage(format!("no store at {}", root.display())));
        }
        device::open(&root, self.store_config(arg)).with_context(|| format!("opening {}", root.display()))
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> Outcome {
    let ctx = Ctx {
        config: Config::load(cli.config.as_deref())?,
    };
    match cli.command {
        Command::Init {
            store,
            blocks_per_group,
            messages_per_block,
        } => init(&ctx, &store, blocks_per_group, messages_per_block),
        Command::Ingest {
            store,
            source,
            input,
            epoch,
            queue_policy,
            queue_capacity,
            no_flush,
            json,
        } => {
            let policy = ingest_policy(&ctx, epoch, queue_policy, queue_capacity, !no_flush)?;
            let source = source
                .or_else(|| ctx.config.ingest.source.clone())
                .unwrap_or_else(|| "generic".into());
            let source: Source = source.parse().map_err(|e: emlog_core::Error| usage(e.to_string()))?;
            ingest(&ctx, &store, source, input.as_deref(), policy, json)
        }
        Command::Flush { store, json } => flush(&ctx, &store, json),
        Command::Verify {
            store,
            archive,
            full,
            public: _,
            device_cert,
            provision,
            sequential,
            json,
        } => {
            let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
            match archive {
                Some(path) => verify_archive(&path, full, device_cert.as_deref(), provision.as_deref(), exec, json),
                None => verify_local(&ctx, &store, full, exec, json),
            }
        }
        Command::VerifierInit { out } => verifier_init(&out),
        Command::Trust { store, cert } => trust(&ctx, &store, &cert),
        Command::ExportProvision { store, out } => export_provision(&ctx, &store, &out),
        Command::Serve {
            store,
            listen,
            trust_dir,
            max_sessions,
        } => serve(&ctx, &store, listen, trust_dir, max_sessions),
        Command::Fetch {
            connect,
            identity,
            device_cert,
            start,
            end,
            provision,
            out,
            json,
        } => {
            let range = match end {
                Some(end) => BlockRange::Inclusive { start, end },
                None => BlockRange::Since { start },
            };
            range.validate().map_err(|e| usage(e.to_string()))?;
            let f = &ctx.config.fetch;
            let connect = connect.or_else(|| f.connect.clone()).ok_or_else(|| usage("--connect is required"))?;
            let identity = identity
                .or_else(|| f.identity.clone())
                .ok_or_else(|| usage("--identity is required"))?;
            let device_cert = device_cert.or_else(|| f.device_cert.clone());
            fetch(&connect, &identity, device_cert.as_deref(), range, provision.as_deref(), out.as_deref(), json)
        }
        Command::Bench {
            entries,
            input,
            profile,
            repetitions,
            work_dir,
            no_fsync,
            parallel_verify,
            json,
        } => {
            let b = &ctx.config.bench;
            let dataset = match input {
                Some(path) => Dataset::Lines(
                    fs::read(&path)
                        .with_context(|| format!("reading {}", path.display()))?
                        .split(|c| *c == b'\n')
                        .filter(|l| !l.is_empty())
                        .map(<[u8]>::to_vec)
                        .collect(),
                ),
                None => Dataset::Synthetic(profile_spec(profile, entries.or(b.entries).unwrap_or(100_000), 7)),
            };
            let work_dir = work_dir
                .or_else(|| b.work_dir.clone())
                .unwrap_or_else(|| std::env::temp_dir().join(format!("emlog-bench-{}", std::process::id())));
            let mut config = BenchConfig::new(dataset, &work_dir);
            config.repetitions = repetitions.or(b.repetitions).unwrap_or(3);
            config.durable = !no_fsync;
            config.exec = if parallel_verify { Exec::Parallel } else { Exec::Sequential };
            if let Some(v) = &b.block_ms {
                config.block_ms = v.clone();
            }
            if let Some(v) = &b.group_cs {
                config.group_cs = v.clone();
            }
            if let Some(v) = b.group_m {
                config.group_m = v;
            }
            if let Some(v) = &b.storage_ms {
                config.storage_ms = v.clone();
            }
            bench(&config, json)
        }
        Command::Gen {
            count,
            profile,
            mean,
            stddev,
            seed,
            out,
        } => {
            let mut spec = profile_spec(profile, count, seed);
            spec.mean = mean.unwrap_or(spec.mean);
            spec.stddev = stddev.unwrap_or(spec.stddev);
            spec.validate().map_err(|e| usage(e.to_string()))?;
            match out {
                Some(path) => write_synthetic(&spec, BufWriter::new(File::create(&path)?))?,
                None => write_synthetic(&spec, BufWriter::new(io::stdout().lock()))?,
            };
            Ok(EXIT_OK)
        }
        Command::ExportFormats { json } => {
            let constants = formats::constants();
            if json {
                let map: serde_json::Map<String, serde_json::Value> =
                    constants.into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
                print_json(&map)?;
            } else {
                let mut out = io::stdout().lock();
                for (k, v) in constants {
                    if writeln!(out, "{k} = {v}").is_err() {
                        break;
                    }
                }
            }
            Ok(EXIT_OK)
        }
    }
}

fn profile_spec(profile: Profile, count: usize, seed: u64) -> SyntheticSpec {
    match profile {
        Profile::Web => SyntheticSpec::web(count, seed),
        Profile::Alerts => SyntheticSpec::alerts(count, seed),
    }
}

fn init(ctx: &Ctx, arg: &StoreArg, c: Option<u32>, m: Option<u32>) -> Outcome {
    let root = ctx.store_path(arg);
    let s = &ctx.config.store;
    let params = ChainParams::new(
        c.or(s.blocks_per_group).unwrap_or(10),
        m.or(s.messages_per_block).unwrap_or(100),
    )
    .map_err(|e| usage(e.to_string()))?;
    let device = device::provision(&root, params, ctx.store_config(arg), &mut OsRng)?;
    fs::create_dir_all(root.join(TRUSTED_DIR))?;
    eprintln!(
        "initialized {} (c={}, m={}, device {})",
        root.display(),
        params.blocks_per_group,
        params.messages_per_block,
        device.secrets.identity.device_id().to_hex()
    );
    print!("{}", device.secrets.identity.certificate().to_pem());
    Ok(EXIT_OK)
}

fn ingest_policy(
    ctx: &Ctx,
    epoch: Option<u64>,
    queue: Option<QueuePolicyArg>,
    capacity: Option<usize>,
    flush_at_end: bool,
) -> anyhow::Result<IngestPolicy> {
    let c = &ctx.config.ingest;
    let on_full_queue = match (queue, c.queue_policy.as_deref()) {
        (Some(QueuePolicyArg::Block), _) | (None, None | Some("block")) => QueuePolicy::Block,
        (Some(QueuePolicyArg::Drop), _) | (None, Some("drop-with-count")) => QueuePolicy::DropWithCount,
        (None, Some(other)) => return Err(usage(format!("unknown queue policy {other:?}"))),
    };
    let policy = IngestPolicy {
        epoch_seconds: epoch.or(c.epoch_seconds),
        on_full_queue,
        queue_capacity: capacity.or(c.queue_capacity).unwrap_or(1024),
        flush_at_end,
    };
    policy.validate().map_err(|e| usage(e.to_string()))?;
    Ok(policy)
}

fn print_ingest(stats: &IngestStats) {
    println!(
        "ingested {} entries as {} records in {} blocks ({:.0} logs/s)",
        stats.entries, stats.records, stats.blocks, stats.throughput_logs_per_sec
    );
    if stats.parse_warnings > 0 {
        println!("{} lines kept as generic entries", stats.parse_warnings);
    }
    if stats.blank_lines + stats.oversize_lines + stats.dropped > 0 {
        println!(
            "skipped {} blank lines, {} oversize lines kept, {} dropped",
            stats.blank_lines, stats.oversize_lines, stats.dropped
        );
    }
    match stats.latest_block {
        Some(b) => println!("committed through block {b}"),
        None => println!("nothing committed"),
    }
    if stats.unsealed_records > 0 {
        println!("{} records left unsealed", stats.unsealed_records);
    }
}

fn ingest(ctx: &Ctx, arg: &StoreArg, source: Source, input: Option<&Path>, policy: IngestPolicy, json: bool) -> Outcome {
    let mut logger = Logger::open(ctx.open(arg)?)?;
    let result = match input {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
            ingest_reader(BufReader::new(file), source, &mut logger, policy)
        }
        None => ingest_reader(BufReader::new(io::stdin()), source, &mut logger, policy),
    };
    match result {
        Ok(stats) => {
            if json {
                print_json(&stats)?;
            } else {
                print_ingest(&stats);
            }
            Ok(EXIT_OK)
        }
        Err(failure) => {
            if json {
                print_json(&failure.stats)?;
            }
            Err(anyhow::Error::new(failure.error).context(format!("ingest halted at entry {}", failure.at_entry)))
        }
    }
}

#[derive(Serialize)]
struct FlushReport<'a> {
    recovery: &'a emlog_core::sealstore::RecoveryReport,
    latest_block: Option<u32>,
    total_records: u64,
    sealed_block_count: u64,
}

fn flush(ctx: &Ctx, arg: &StoreArg, json: bool) -> Outcome {
    let mut logger = Logger::open(ctx.open(arg)?)?;
    logger.flush()?;
    let state = logger.state();
    let report = FlushReport {
        recovery: logger.recovery(),
        latest_block: state.latest_block(),
        total_records: state.total_records,
        sealed_block_count: state.sealed_block_count,
    };
    if json {
        print_json(&report)?;
    } else {
        println!("recovery: {:?}", report.recovery);
        match report.latest_block {
            Some(b) => println!("committed through block {b}, {} records", report.total_records),
            None => println!("no blocks committed"),
        }
    }
    Ok(EXIT_OK)
}

fn describe(status: &BlockStatus) -> String {
    match status {
        BlockStatus::Ok => "ok".into(),
        BlockStatus::BadSignature => "bad signature".into(),
        BlockStatus::BadHmac { msg_id } => format!("bad hmac at message {msg_id}"),
        BlockStatus::OrderViolation => "out of order".into(),
        BlockStatus::Gap => "gap before block".into(),
        BlockStatus::SealFailure => "sealed file unreadable".into(),
    }
}

fn describe_finding(f: &Finding) -> String {
    match f {
        Finding::Truncation {
            first_missing,
            latest_committed,
        } => format!("truncation: blocks {first_missing}..={latest_committed} missing"),
        Finding::MissingState => "chain state missing: truncation cannot be ruled out".into(),
        Finding::StateMismatch { detail } => format!("state mismatch: {detail}"),
        Finding::StateSignatureInvalid => "signed state does not verify".into(),
        Finding::WholesaleKeyMismatch => "every tag fails under a valid signature: wrong RLK".into(),
        Finding::IntegrityAlarm { block_id, reason } => format!("integrity alarm at block {block_id}: {reason}"),
        Finding::SealedObjectUnreadable { file, reason } => format!("{file} unreadable: {reason}"),
    }
}

fn report_outcome(report: &VerificationReport, json: bool) -> Outcome {
    if json {
        print_json(report)?;
    } else {
        let mode = match report.mode {
            VerifyMode::Full => "full",
            VerifyMode::Public => "public",
        };
        println!("{mode} verification of {} blocks", report.blocks_checked);
        for e in report.entries.iter().filter(|e| !e.status.is_ok()) {
            match &e.detail {
                Some(d) => println!("block {}: {} ({d})", e.block_id, describe(&e.status)),
                None => println!("block {}: {}", e.block_id, describe(&e.status)),
            }
        }
        for f in &report.findings {
            println!("{}", describe_finding(f));
        }
        for n in &report.notes {
            println!("note: {n}");
        }
        println!("{}", if report.is_ok() { "OK" } else { "FAILED" });
    }
    Ok(if report.is_ok() { EXIT_OK } else { EXIT_FINDINGS })
}

fn verify_local(ctx: &Ctx, arg: &StoreArg, full: bool, exec: Exec, json: bool) -> Outcome {
    let device = ctx.open(arg)?;
    let s = &device.secrets;
    let rlk = full.then_some(&s.rlk);
    let report = verify_store(&device.store, s.identity.public_key(), s.params, rlk, exec)?;
    report_outcome(&report, json)
}

fn verify_archive(
    path: &Path,
    full: bool,
    device_cert: Option<&Path>,
    provision: Option<&Path>,
    exec: Exec,
    json: bool,
) -> Outcome {
    let retrieved = decode_archive(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
    let provision = provision.map(|p| read_text(p).and_then(|t| Ok(VerifierProvision::from_pem(&t)?))).transpose()?;
    let cert = match (device_cert, &provision) {
        (Some(p), _) => Certificate::from_pem(&read_text(p)?)?,
        (None, Some(v)) => v.device_cert.clone(),
        (None, None) => return Err(usage("--device-cert or --provision is required for an archive")),
    };
    if full && provision.is_none() {
        return Err(usage("--full needs --provision"));
    }
    audit_retrieved(&retrieved, &cert, provision.as_ref().filter(|_| full), exec, json)
}

fn audit_retrieved(
    retrieved: &Retrieved,
    cert: &Certificate,
    provision: Option<&VerifierProvision>,
    exec: Exec,
    json: bool,
) -> Outcome {
    if retrieved.peer.subject_key != cert.subject_key {
        return Err(anyhow::Error::new(emlog_core::Error::AuthFailure)
            .context("archive was served by a different device"));
    }
    let report = audit(
        retrieved,
        &cert.subject_key,
        provision.map(|p| &p.rlk),
        provision.map(|p| p.params),
        exec,
    )?;
    if !json {
        for n in &retrieved.notices {
            println!("notice: {n}");
        }
    }
    report_outcome(&report, json)
}

fn verifier_init(out: &Path) -> Outcome {
    fs::create_dir_all(out)?;
    let key_path = out.join("verifier.pem");
    if key_path.exists() {
        return Err(anyhow::Error::new(emlog_core::Error::AlreadyExists(key_path.display().to_string())));
    }
    let identity = DeviceIdentity::generate(&mut OsRng, Role::Verifier, DeviceId::random(&mut OsRng));
    fs::write(&key_path, identity.to_pem())?;
    fs::write(out.join("verifier.cert"), identity.certificate().to_pem())?;
    print!("{}", identity.certificate().to_pem());
    Ok(EXIT_OK)
}

fn trust(ctx: &Ctx, arg: &StoreArg, cert_path: &Path) -> Outcome {
    let root = ctx.store_path(arg);
    let cert = Certificate::from_pem(&read_text(cert_path)?)?;
    if !cert.signature_valid() {
        return Err(usage("certificate signature does not verify"));
    }
    let dir = root.join(TRUSTED_DIR);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{}.cert", cert.device_id.to_hex())), cert.to_pem())?;
    Ok(EXIT_OK)
}

fn export_provision(ctx: &Ctx, arg: &StoreArg, out: &Path) -> Outcome {
    let device = ctx.open(arg)?;
    fs::write(out, VerifierProvision::from_device(&device.secrets).to_pem())?;
    Ok(EXIT_OK)
}

fn serve(
    ctx: &Ctx,
    arg: &StoreArg,
    listen: Option<String>,
    trust_dir: Option<PathBuf>,
    max_sessions: Option<usize>,
) -> Outcome {
    let device = ctx.open(arg)?;
    let trust_dir = trust_dir
        .or_else(|| ctx.config.serve.trust_dir.clone())
        .unwrap_or_else(|| device.root.join(TRUSTED_DIR));
    let anchors = TrustAnchors::load_dir(&trust_dir).with_context(|| format!("loading {}", trust_dir.display()))?;
    if anchors.is_empty() {
        return Err(usage(format!("no trusted verifier certificates in {}", trust_dir.display())));
    }
    let addr = listen
        .or_else(|| ctx.config.serve.listen.clone())
        .unwrap_or_else(|| DEFAULT_LISTEN.into());
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    println!("{}", listener.local_addr()?);
    io::stdout().flush()?;
    let service = DeviceService::new(&device.store, &device.secrets.identity, anchors);
    service.serve_tcp(&listener, max_sessions, |result| match result {
        Ok(s) => {
            let blocks: u32 = s.requests.iter().map(|r| r.blocks_sent).sum();
            eprintln!("session with {}: {blocks} blocks", s.peer.unwrap_or_default());
        }
        Err(e) => eprintln!("session failed: {e}"),
    })?;
    Ok(EXIT_OK)
}

fn fetch(
    connect: &str,
    identity: &Path,
    device_cert: Option<&Path>,
    range: BlockRange,
    provision: Option<&Path>,
    out: Option<&Path>,
    json: bool,
) -> Outcome {
    let identity = DeviceIdentity::from_pem(&read_text(identity)?)?;
    let provision = provision.map(|p| read_text(p).and_then(|t| Ok(VerifierProvision::from_pem(&t)?))).transpose()?;
    let cert = match (device_cert, &provision) {
        (Some(p), _) => Certificate::from_pem(&read_text(p)?)?,
        (None, Some(v)) => v.device_cert.clone(),
        (None, None) => return Err(usage("--device-cert or --provision is required")),
    };
    let client = VerifierClient::new(&identity, TrustAnchors::new().with(cert.clone()));
    let stream = TcpStream::connect(connect).with_context(|| format!("connecting to {connect}"))?;
    let mode = if provision.is_some() { VerifyMode::Full } else { VerifyMode::Public };
    let retrieved = client.fetch(stream, Some(cert.device_id), range, mode)?;
    if let Some(path) = out {
        fs::write(path, encode_archive(&retrieved))?;
    }
    if !json {
        println!("received {} blocks", retrieved.blocks.len());
    }
    audit_retrieved(&retrieved, &cert, provision.as_ref(), Exec::Parallel, json)
}

fn print_bench(report: &BenchReport) {
    println!("{} entries, mean length {:.2}", report.entries, report.mean_entry_len);
    println!("block cells (c=1):");
    for c in &report.block_cells {
        println!(
            "  m={:<5} create {:.3}±{:.3} ms/block  verify {:.3}±{:.3} ms/block  {:.0} logs/s",
            c.m,
            c.create_block_ms.mean,
            c.create_block_ms.stddev,
            c.verify_block_ms.mean,
            c.verify_block_ms.stddev,
            c.throughput.mean
        );
    }
    println!("group cells:");
    for c in &report.group_cells {
        println!(
            "  c={:<3} m={:<4} create {:.3}±{:.3} ms/group  verify {:.3}±{:.3} ms/group  {:.0} logs/s  peak {} bytes",
            c.c,
            c.m,
            c.create_group_ms.mean,
            c.create_group_ms.stddev,
            c.verify_group_ms.mean,
            c.verify_group_ms.stddev,
            c.throughput.mean,
            c.peak_volatile_bytes
        );
    }
    println!("storage:");
    for s in &report.storage_cells {
        println!(
            "  m={:<5} sealed {:.0} B/block  raw {:.0} B/block  overhead {:.3}x",
            s.m, s.sealed_bytes_per_block, s.raw_bytes_per_block, s.overhead_ratio
        );
    }
    if let Some(fit) = report.storage_fit {
        println!("  fit: {:.3}·m + {:.1}, R² {:.6}", fit.slope, fit.intercept, fit.r_squared);
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn bench(config: &BenchConfig, json: bool) -> Outcome {
    config.validate().map_err(|e| usage(e.to_string()))?;
    let result = bench_grid(config);
    let _ = fs::remove_dir(&config.work_dir);
    let report = result?;
    if json {
        print_json(&report)?;
    } else {
        print_bench(&report);
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_FINDINGS })
}
