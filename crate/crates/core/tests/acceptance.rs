//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use emlog_core::bench::{bench_grid, BenchConfig, BenchReport, Dataset, SyntheticSpec};
use emlog_core::collector::Logger;
use emlog_core::keyschedule::hkdf::hkdf;
use emlog_core::keyschedule::{
    block_key_at, first_message_key, BlockKey, ChainParams, KDF_SALT, LABEL_BLOCK,
    LABEL_FIRST_BLOCK, LABEL_IK, LABEL_MESSAGE,
};
use emlog_core::logchain::record::record_tag;
use emlog_core::logchain::{
    Block, BlockStatus, DeviceId, DeviceIdentity, Finding, LogRecord, Role, StateWitness, TextField, TrustAnchors,
    Verifier,
};
use emlog_core::par::Exec;
use emlog_core::retrieval::frame::kind;
use emlog_core::retrieval::{AttestationPolicy, BlockRange, DeviceService, Frame, VerifierClient, WireTap};
use emlog_core::sealstore::device::{self, provision, Device};
use emlog_core::sealstore::{verify_store, FaultInjector, StoreConfig};
use hmac::{Hmac, Mac};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fast() -> StoreConfig {
    StoreConfig {
        durable: false,
        ..StoreConfig::default()
    }
}

/// Provision a store under `dir` and log `entries` through the logger.
fn build_store(dir: &Path, params: ChainParams, entries: &[Vec<u8>], seed: u64) -> Device {
    let device = provision(dir, params, fast(), &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
    let mut logger = Logger::open(device).unwrap();
    for e in entries {
        logger.log_entry(e).unwrap();
    }
    logger.flush().unwrap();
    logger.into_device()
}

fn numbered(n: usize, prefix: &str) -> Vec<Vec<u8>> {
    (0..n).map(|i| format!("{prefix} entry {i:05} user=alice action=login").into_bytes()).collect()
}

fn load_all(device: &Device) -> Vec<Block> {
    let ids = device.store.block_ids().unwrap();
    ids.iter().map(|id| device.store.load_block(*id).unwrap()).collect()
}

fn full_verifier(device: &Device) -> Verifier<'_> {
    let s = &device.secrets;
    Verifier::full(s.identity.public_key(), s.params, &s.rlk).with_exec(Exec::Sequential)
}

// 1 ----------------------------------------------------------------------

struct Vector {
    ikm: Vec<u8>,
    salt: Vec<u8>,
    info: Vec<u8>,
    okm: &'static str,
}

fn rfc5869_vectors() -> Vec<Vector> {
    vec![
        Vector {
            ikm: vec![0x0b; 22],
            salt: (0x00..=0x0c).collect(),
            info: (0xf0..=0xf9).collect(),
            okm: "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865",
        },
        Vector {
            ikm: (0x00..=0x4f).collect(),
            salt: (0x60..=0xaf).collect(),
            info: (0xb0..=0xff).collect(),
            okm: "b11e398dc80327a1c8e7f78c596a49344f012eda2d4efad8a050cc4c19afa97c\
                  59045a99cac7827271cb41c65e590e09da3275600c2f09b8367793a9aca3db71\
                  cc30c58179ec3e87c14c01d5c1f3434f1d87",
        },
        Vector {
            ikm: vec![0x0b; 22],
            salt: vec![],
            info: vec![],
            okm: "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8",
        },
    ]
}

fn kdf_vectors() -> Outcome {
    let vectors = rfc5869_vectors();
    for (i, v) in vectors.iter().enumerate() {
        let expected = hex::decode(v.okm).unwrap();
        let ours = hkdf(&v.ikm, &v.salt, &v.info, expected.len()).map_err(|e| e.to_string())?;
        ensure!(ours.as_slice() == expected.as_slice(), "test case {} differs", i + 1);
        let mut oracle = vec![0u8; expected.len()];
        let salt = (!v.salt.is_empty()).then_some(v.salt.as_slice());
        hkdf::Hkdf::<Sha256>::new(salt, &v.ikm).expand(&v.info, &mut oracle).unwrap();
        ensure!(oracle == expected, "oracle disagrees with test case {}", i + 1);
    }
    ensure!(hkdf(b"k", b"s", b"i", 255 * 32 + 1).is_err(), "over-long output accepted");
    Ok(format!("{} vectors exact", vectors.len()))
}

// 2 ----------------------------------------------------------------------

/// Independent re-derivation straight from the hkdf and hmac crates.
fn oracle_kdf(ikm: &[u8], label: &[u8], ids: &[u32]) -> [u8; 32] {
    let mut info = label.to_vec();
    for id in ids {
        info.extend_from_slice(&id.to_be_bytes());
    }
    let mut out = [0u8; 32];
    hkdf::Hkdf::<Sha256>::new(Some(&KDF_SALT), ikm).expand(&info, &mut out).unwrap();
    out
}

fn oracle_tag(mk: &[u8; 32], block_id: u32, rec: &LogRecord) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(mk).unwrap();
    mac.update(&block_id.to_be_bytes());
    mac.update(&rec.msg_id.to_be_bytes());
    mac.update(rec.text.as_bytes());
    mac.finalize().into_bytes().into()
}

fn deterministic_matrix() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut records = 0usize;
    for t in 0..50 {
        let dir = tempfile::tempdir().unwrap();
        let params = ChainParams::new(rng.gen_range(1..=6), rng.gen_range(1..=12)).unwrap();
        let entries: Vec<Vec<u8>> = (0..rng.gen_range(1..=80))
            .map(|_| {
                let len = rng.gen_range(1..=600);
                (0..len).map(|_| rng.gen_range(b' '..=b'~')).collect()
            })
            .collect();
        let device = build_store(dir.path(), params, &entries, 1000 + t);
        let rlk = device.secrets.rlk.bytes();
        let c = params.blocks_per_group;
        for block in load_all(&device) {
            let b = block.block_id();
            let g = b / c;
            let ik = oracle_kdf(rlk, LABEL_IK, &[g]);
            let mut bk = oracle_kdf(&ik, LABEL_FIRST_BLOCK, &[g * c]);
            for next in g * c + 1..=b {
                bk = oracle_kdf(&bk, LABEL_BLOCK, &[next]);
            }
            let lib_bk = block_key_at(&device.secrets.rlk, &params, b).unwrap();
            ensure!(lib_bk.bytes() == &bk, "trial {t}: block key {b} differs");
            let mut mk = oracle_kdf(&bk, LABEL_MESSAGE, &[b, 0]);
            for (i, rec) in block.records().iter().enumerate() {
                if i > 0 {
                    mk = oracle_kdf(&mk, LABEL_MESSAGE, &[b, i as u32]);
                }
                ensure!(rec.msg_id == i as u32, "trial {t}: block {b} record {i} has id {}", rec.msg_id);
                ensure!(oracle_tag(&mk, b, rec) == rec.tag, "trial {t}: tag {b}/{i} differs");
                records += 1;
            }
        }
        let report = verify_store(
            &device.store,
            device.secrets.identity.public_key(),
            params,
            Some(&device.secrets.rlk),
            Exec::Sequential,
        )
        .unwrap();
        ensure!(report.is_ok(), "trial {t}: store does not verify: {report:?}");
    }
    Ok(format!("50 tuples, {records} tags re-derived byte-identically"))
}

// 3 ----------------------------------------------------------------------

fn flip(rng: &mut ChaCha20Rng, bytes: &mut [u8], range: std::ops::Range<usize>) {
    let pos = rng.gen_range(range);
    bytes[pos] ^= rng.gen_range(1..=255u8);
}

fn tamper_detection() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let params = ChainParams::new(2, 4).unwrap();
    let device = build_store(dir.path(), params, &numbered(16, "tamper"), 3);
    let s = &device.secrets;
    let pk = s.identity.public_key();
    let verify_disk = || verify_store(&device.store, pk, params, Some(&s.rlk), Exec::Sequential).unwrap();
    ensure!(verify_disk().is_ok(), "untampered store fails");

    let blocks = load_all(&device);
    let state = device.store.read_state().unwrap().unwrap();
    let verifier = full_verifier(&device);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (mut sealed, mut body, mut sig) = (0, 0, 0);

    let mut files: Vec<_> = fs::read_dir(device.store.dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for _ in 0..4000 {
        let path = &files[rng.gen_range(0..files.len())];
        let original = fs::read(path).unwrap();
        let mut bytes = original.clone();
        let len = bytes.len();
        flip(&mut rng, &mut bytes, 0..len);
        fs::write(path, &bytes).unwrap();
        let report = verify_disk();
        fs::write(path, &original).unwrap();
        ensure!(!report.is_ok(), "mutation of {} missed", path.display());
        sealed += 1;
    }

    for i in 0..6000 {
        let victim = rng.gen_range(0..blocks.len());
        let mut bytes = blocks[victim].to_bytes();
        let total = bytes.len();
        let sig_start = total - 64;
        if i % 2 == 0 {
            flip(&mut rng, &mut bytes, 0..sig_start);
            body += 1;
        } else {
            flip(&mut rng, &mut bytes, sig_start..total);
            sig += 1;
        }
        let Ok(mutated) = Block::from_bytes(&bytes) else {
            continue;
        };
        let mut seq = blocks.clone();
        seq[victim] = mutated;
        let report = verifier.verify_sequence(&seq, 0, StateWitness::Present(&state));
        ensure!(!report.is_ok(), "mutation of block {victim} missed");
    }

    ensure!(verify_disk().is_ok(), "restored store fails");
    let mut clean = 0;
    for t in 0..20u64 {
        let dir = tempfile::tempdir().unwrap();
        let p = ChainParams::new(rng.gen_range(1..=5), rng.gen_range(1..=9)).unwrap();
        let d = build_store(dir.path(), p, &numbered(rng.gen_range(1..60), "clean"), 300 + t);
        let r = verify_store(&d.store, d.secrets.identity.public_key(), p, Some(&d.secrets.rlk), Exec::Parallel).unwrap();
        ensure!(r.is_ok(), "clean corpus {t} reported {r:?}");
        clean += 1;
    }
    Ok(format!(
        "{} mutations detected ({sealed} sealed-file, {body} block-body, {sig} signature); {clean} clean corpora pass",
        sealed + body + sig
    ))
}

// 4 ----------------------------------------------------------------------

fn reorder_detection() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let params = ChainParams::new(3, 10).unwrap();
    let device = build_store(dir.path(), params, &numbered(100, "order"), 4);
    let blocks = load_all(&device);
    ensure!(blocks.len() == 10, "expected 10 blocks, got {}", blocks.len());
    let state = device.store.read_state().unwrap().unwrap();
    let verifier = full_verifier(&device);
    let pk = device.secrets.identity.public_key();
    let mut cases = 0;

    for i in 0..10 {
        for j in i + 1..10 {
            let mut seq = blocks.clone();
            seq.swap(i, j);
            let r = verifier.verify_sequence(&seq, 0, StateWitness::Present(&state));
            ensure!(!r.is_ok(), "block swap {i}<->{j} missed");

            let (a, b) = (device.store.block_path(i as u32), device.store.block_path(j as u32));
            let (ba, bb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
            fs::write(&a, &bb).unwrap();
            fs::write(&b, &ba).unwrap();
            let r = verify_store(&device.store, pk, params, Some(&device.secrets.rlk), Exec::Sequential).unwrap();
            fs::write(&a, &ba).unwrap();
            fs::write(&b, &bb).unwrap();
            ensure!(!r.is_ok(), "sealed file swap {i}<->{j} missed");
            cases += 2;
        }
    }

    for (bi, block) in blocks.iter().enumerate() {
        let n = block.records().len();
        for x in 0..n {
            for y in x + 1..n {
                // Whole records swapped, and texts swapped under the original ids and tags.
                for text_only in [false, true] {
                    let mut recs = block.records().to_vec();
                    if text_only {
                        let t = recs[x].text.clone();
                        recs[x].text = recs[y].text.clone();
                        recs[y].text = t;
                    } else {
                        recs.swap(x, y);
                    }
                    let forged = Block::from_parts(block.block_id(), recs, *block.signature());
                    let mut seq = blocks.clone();
                    seq[bi] = forged;
                    let r = verifier.verify_sequence(&seq, 0, StateWitness::Present(&state));
                    ensure!(!r.is_ok(), "record swap {x}<->{y} in block {bi} missed");
                    cases += 1;
                }
            }
        }
    }
    ensure!(
        verifier.verify_sequence(&blocks, 0, StateWitness::Present(&state)).is_ok(),
        "original order fails"
    );
    Ok(format!("{cases} permutations detected exhaustively"))
}

// 5 ----------------------------------------------------------------------

fn truncation_detection() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let params = ChainParams::new(3, 4).unwrap();
    let device = build_store(dir.path(), params, &numbered(40, "trunc"), 5);
    let s = &device.secrets;
    let check = || verify_store(&device.store, s.identity.public_key(), params, Some(&s.rlk), Exec::Sequential).unwrap();
    ensure!(check().is_ok(), "intact store fails");
    let originals: Vec<Vec<u8>> = (0..10).map(|i| fs::read(device.store.block_path(i)).unwrap()).collect();

    for k in 1..=10u32 {
        for id in 10 - k..10 {
            fs::remove_file(device.store.block_path(id)).unwrap();
        }
        let r = check();
        for id in 10 - k..10 {
            fs::write(device.store.block_path(id), &originals[id as usize]).unwrap();
        }
        ensure!(
            r.truncation_start() == Some(10 - k),
            "suffix of {k} deleted: truncation reported at {:?}",
            r.truncation_start()
        );
    }

    let state_path = device.store.dir().join("state.seal");
    let state = fs::read(&state_path).unwrap();
    fs::remove_file(&state_path).unwrap();
    let r = check();
    ensure!(r.has_finding(|f| *f == Finding::MissingState), "deleted state not reported: {r:?}");
    for k in 1..=10u32 {
        for id in 10 - k..10 {
            fs::remove_file(device.store.block_path(id)).unwrap();
        }
        let r = check();
        for id in 10 - k..10 {
            fs::write(device.store.block_path(id), &originals[id as usize]).unwrap();
        }
        ensure!(!r.is_ok(), "suffix of {k} deleted with state gone passes");
    }
    fs::write(&state_path, state).unwrap();
    ensure!(check().is_ok(), "restored store fails");
    Ok("10 suffix deletions reported as truncation, missing state reported".into())
}

// 6 ----------------------------------------------------------------------

/// Derive a forged record's tag from a candidate block key for `block_id`.
fn forge_with(bk_bytes: &[u8; 32], block_id: u32, original: &LogRecord) -> LogRecord {
    let bk = BlockKey::from_parts(block_id, *bk_bytes);
    let mut mk = first_message_key(&bk).unwrap();
    let mut key = [0u8; 32];
    key.copy_from_slice(mk.bytes());
    for i in 1..=original.msg_id {
        key = oracle_kdf(&key, LABEL_MESSAGE, &[block_id, i]);
    }
    mk.erase();
    let text = TextField::new(b"forged: nothing happened here", false).unwrap();
    LogRecord {
        msg_id: original.msg_id,
        tag: record_tag(&key, block_id, original.msg_id, &text),
        text,
    }
}

fn compromise_confinement() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let (mut positive, mut negative) = (0, 0);
    let mut stores = Vec::new();
    for s in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let params = ChainParams::new(rng.gen_range(2..=6), rng.gen_range(2..=5)).unwrap();
        let entries = numbered((4 * params.blocks_per_group * params.messages_per_block) as usize, "leak");
        let device = build_store(dir.path(), params, &entries, 600 + s);
        let blocks = load_all(&device);
        stores.push((dir, device, blocks));
    }
    for trial in 0..100 {
        let (_, device, blocks) = &stores[trial % stores.len()];
        let params = device.secrets.params;
        let c = params.blocks_per_group;
        let pk = device.secrets.identity.public_key();
        let rlk = &device.secrets.rlk;
        let j = rng.gen_range(0..blocks.len() as u32);
        let group_end = (j / c + 1) * c - 1;

        // The attacker holds bK_j and everything derivable forward from it.
        let leaked = *block_key_at(rlk, &params, j).unwrap().bytes();
        let mut reachable = vec![(j, leaked)];
        for b in j + 1..=group_end {
            let prev = reachable.last().unwrap().1;
            reachable.push((b, oracle_kdf(&prev, LABEL_BLOCK, &[b])));
        }

        for block in blocks {
            let b = block.block_id();
            let target = &block.records()[rng.gen_range(0..block.records().len())];
            let in_window = (j..=group_end).contains(&b);
            let candidates: Vec<[u8; 32]> = if in_window {
                vec![reachable.iter().find(|(id, _)| *id == b).unwrap().1]
            } else {
                reachable.iter().map(|(_, k)| *k).collect()
            };
            for key in candidates {
                let forged_rec = forge_with(&key, b, target);
                let mut recs = block.records().to_vec();
                recs[target.msg_id as usize] = forged_rec;
                let forged = Block::from_parts(b, recs, *block.signature());
                let check = Verifier::full(pk, params, rlk)
                    .with_exec(Exec::Sequential)
                    .check_blocks(&[&forged])
                    .remove(0);
                let hmac_valid = check.bad_hmacs.as_ref().is_some_and(Vec::is_empty);
                ensure!(!check.signature_valid, "forgery at block {b} passed signature verification");
                if in_window {
                    ensure!(hmac_valid, "trial {trial}: leak at {j} could not forge block {b}");
                    positive += 1;
                } else {
                    ensure!(!hmac_valid, "trial {trial}: leak at {j} forged block {b} outside its window");
                    ensure!(
                        matches!(check.status(), BlockStatus::BadHmac { .. }),
                        "trial {trial}: forgery at {b} not reported as bad hmac"
                    );
                    negative += 1;
                }
            }
        }
    }
    Ok(format!(
        "100 leak coordinates: {positive} in-window HMAC forgeries, {negative} out-of-window attempts rejected, all unsigned"
    ))
}

// 7 ----------------------------------------------------------------------

fn power_loss() -> Outcome {
    let params = ChainParams::new(3, 4).unwrap();
    let bound = params.volatile_record_bound();
    let entries = numbered(140, "power");
    // Returns (entries acknowledged, whether one more was in flight, error).
    let workload = |device: Device| -> (u64, bool, Option<String>) {
        let mut logger = match Logger::open(device) {
            Ok(l) => l,
            Err(e) => return (0, false, Some(e.to_string())),
        };
        let mut accepted = 0;
        for e in &entries {
            match logger.log_entry(e) {
                Ok(_) => accepted += 1,
                Err(e) => return (accepted, true, Some(e.to_string())),
            }
        }
        match logger.flush() {
            Ok(()) => (accepted, false, None),
            Err(e) => (accepted, false, Some(e.to_string())),
        }
    };

    let dir = tempfile::tempdir().unwrap();
    let counter = FaultInjector::counting();
    let mut device = provision(dir.path(), params, fast(), &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
    device.store = device.store.with_faults(counter.clone());
    workload(device);
    let steps = counter.steps_seen();
    ensure!(steps >= 200, "workload has only {steps} commit steps");

    let mut worst = 0;
    for crash in 0..200 {
        let dir = tempfile::tempdir().unwrap();
        let device = provision(dir.path(), params, fast(), &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let root = device.root.clone();
        let faults = FaultInjector::crash_at(crash);
        let mut device = device;
        device.store = device.store.with_faults(faults.clone());
        let (accepted, in_flight, error) = workload(device);
        ensure!(faults.fired() && error.is_some(), "crash point {crash} never fired");

        let device = device::open(&root, fast()).map_err(|e| format!("crash {crash}: reopen: {e}"))?;
        let logger = Logger::open(device).map_err(|e| format!("crash {crash}: recovery: {e}"))?;
        let committed = logger.state().total_records;
        let device = logger.into_device();
        let s = &device.secrets;
        let r = verify_store(&device.store, s.identity.public_key(), params, Some(&s.rlk), Exec::Sequential).unwrap();
        ensure!(r.is_ok(), "crash {crash}: surviving store fails: {r:?}");
        // A crash after the final rename leaves the in-flight entry durable
        // although its call reported failure.
        let attempted = accepted + u64::from(in_flight);
        ensure!(committed <= attempted, "crash {crash}: {committed} committed, {attempted} attempted");
        let texts: Vec<Vec<u8>> = load_all(&device)
            .iter()
            .flat_map(|b| b.records().iter().map(|r| r.text.payload().to_vec()).collect::<Vec<_>>())
            .collect();
        ensure!(
            texts.as_slice() == &entries[..committed as usize],
            "crash {crash}: surviving records are not a prefix of the input"
        );
        let lost = accepted.saturating_sub(committed);
        ensure!(lost <= bound, "crash {crash}: lost {lost} records, bound {bound}");
        worst = worst.max(lost);

        // Logging resumes on the recovered store.
        let mut logger = Logger::open(device).unwrap();
        logger.log_entry(b"after restart").unwrap();
        logger.flush().unwrap();
        let device = logger.into_device();
        let s = &device.secrets;
        let r = verify_store(&device.store, s.identity.public_key(), params, Some(&s.rlk), Exec::Sequential).unwrap();
        ensure!(r.is_ok(), "crash {crash}: store fails after resuming: {r:?}");
    }
    Ok(format!("200 crash points of {steps}; worst loss {worst} records, bound c·m+m-1 = {bound}"))
}

// 8, 9 -------------------------------------------------------------------

fn run_bench() -> BenchReport {
    let dir = tempfile::tempdir().unwrap();
    let mut config = BenchConfig::new(Dataset::Synthetic(SyntheticSpec::web(10_000, 7)), dir.path());
    config.repetitions = 3;
    bench_grid(&config).unwrap()
}

fn checks_outcome(report: &BenchReport, names: &[&str]) -> Outcome {
    let mut details = Vec::new();
    for name in names {
        let c = report.check(name).ok_or_else(|| format!("check {name} missing"))?;
        ensure!(c.passed, "{name}: {}", c.detail);
        details.push(c.detail.clone());
    }
    Ok(details.join("; "))
}

fn evaluation_trends(report: &BenchReport) -> Outcome {
    ensure!(
        report.block_cells.len() == 4 && report.group_cells.len() == 4,
        "grid incomplete"
    );
    checks_outcome(
        report,
        &["block-create-monotone-in-m", "throughput-large-c-vs-c1", "throughput-floor", "stores-verify"],
    )
}

fn storage_scaling(report: &BenchReport) -> Outcome {
    ensure!(report.storage_cells.len() == 8, "storage grid incomplete");
    checks_outcome(report, &["storage-linear", "storage-matches-format", "storage-overhead"])
}

// 10 ---------------------------------------------------------------------

struct Parties {
    device: Device,
    verifier: DeviceIdentity,
    entries: Vec<Vec<u8>>,
}

fn retrieval_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let params = ChainParams::new(10, 5).unwrap();
    let entries: Vec<Vec<u8>> = (0..500)
        .map(|i| format!("CONFIDENTIAL-{i:04} sshd[4242]: Accepted publickey for root from 10.0.0.{}", i % 250).into_bytes())
        .collect();
    let device = build_store(dir.path(), params, &entries, 10);
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let p = Parties {
        device,
        verifier: DeviceIdentity::generate(&mut rng, Role::Verifier, DeviceId([0xaa; 16])),
        entries,
    };
    ensure!(p.device.store.block_ids().unwrap().len() == 100, "store does not hold 100 blocks");

    let committed: Vec<[u8; 32]> = load_all(&p.device).iter().map(|b| Sha256::digest(b.to_bytes()).into()).collect();
    let device_cert = p.device.secrets.identity.certificate().clone();
    let verifier_cert = p.verifier.certificate().clone();

    let (outcome, tap) = transfer(&p, TrustAnchors::new().with(verifier_cert.clone()), AttestationPolicy::AcceptAll, &p.verifier, TrustAnchors::new().with(device_cert.clone()));
    let retrieved = outcome.map_err(|e| format!("transfer failed: {e}"))?;
    let received: Vec<[u8; 32]> = retrieved.raw_blocks.iter().map(|b| Sha256::digest(b).into()).collect();
    ensure!(received == committed, "received blocks differ from committed blocks");
    let report = emlog_core::retrieval::audit(
        &retrieved,
        p.device.secrets.identity.public_key(),
        Some(&p.device.secrets.rlk),
        None,
        Exec::Parallel,
    )
    .unwrap();
    ensure!(report.is_ok(), "audit of transfer fails: {report:?}");

    let mut wire = tap.0;
    wire.extend_from_slice(&tap.1);
    for e in &p.entries {
        ensure!(!contains(&wire, e), "plaintext entry visible on the wire");
    }
    ensure!(!contains(&wire, b"CONFIDENTIAL"), "plaintext marker visible on the wire");
    for raw in &retrieved.raw_blocks {
        ensure!(!contains(&wire, &raw[13..13 + 64]), "raw block bytes visible on the wire");
    }

    // Authentication failures must move zero blocks.
    let stranger = DeviceIdentity::generate(&mut rng, Role::Verifier, DeviceId([0xbb; 16]));
    let impostor_device = DeviceIdentity::generate(&mut rng, Role::Device, DeviceId([0xcc; 16]));
    let as_device_role = DeviceIdentity::generate(&mut rng, Role::Device, DeviceId([0xdd; 16]));
    let cases: Vec<(&str, TrustAnchors, AttestationPolicy, &DeviceIdentity, TrustAnchors)> = vec![
        ("untrusted verifier", TrustAnchors::new().with(verifier_cert.clone()), AttestationPolicy::AcceptAll, &stranger, TrustAnchors::new().with(device_cert.clone())),
        ("untrusted device", TrustAnchors::new().with(verifier_cert.clone()), AttestationPolicy::AcceptAll, &p.verifier, TrustAnchors::new().with(impostor_device.certificate().clone())),
        ("attestation rejected", TrustAnchors::new().with(verifier_cert.clone()), AttestationPolicy::RejectAll, &p.verifier, TrustAnchors::new().with(device_cert.clone())),
        ("wrong peer role", TrustAnchors::new().with(as_device_role.certificate().clone()), AttestationPolicy::AcceptAll, &as_device_role, TrustAnchors::new().with(device_cert.clone())),
        ("no anchors", TrustAnchors::new(), AttestationPolicy::AcceptAll, &p.verifier, TrustAnchors::new().with(device_cert.clone())),
    ];
    let n_cases = cases.len();
    for (name, dev_anchors, policy, client_id, client_anchors) in cases {
        let (outcome, (sent, received)) = transfer(&p, dev_anchors, policy, client_id, client_anchors);
        ensure!(outcome.is_err(), "{name}: transfer succeeded");
        let frames = Frame::parse_stream(&received).unwrap_or_default();
        ensure!(!frames.iter().any(|f| f.kind == kind::SEALED), "{name}: device sent sealed frames");
        ensure!(!contains(&received, b"CONFIDENTIAL") && !contains(&sent, b"CONFIDENTIAL"), "{name}: plaintext leaked");
    }
    Ok(format!(
        "100 blocks hash-identical, {} wire bytes free of plaintext, {n_cases} auth failures moved 0 blocks",
        wire.len()
    ))
}

type Tap = (Vec<u8>, Vec<u8>);

fn transfer(
    p: &Parties,
    device_anchors: TrustAnchors,
    policy: AttestationPolicy,
    client_identity: &DeviceIdentity,
    client_anchors: TrustAnchors,
) -> (Result<emlog_core::retrieval::Retrieved, String>, Tap) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mut service = DeviceService::new(&p.device.store, &p.device.secrets.identity, device_anchors);
    service.attestation = policy;
    service.record_delivery = false;
    let client = VerifierClient::new(client_identity, client_anchors);
    std::thread::scope(|s| {
        let server = s.spawn(|| {
            let (stream, _) = listener.accept().unwrap();
            service.serve_connection(stream)
        });
        let tap = WireTap::new(TcpStream::connect(addr).unwrap());
        let (sent, received) = (tap.sent.clone(), tap.received.clone());
        let result = client.fetch(tap, None, BlockRange::all(), emlog_core::logchain::VerifyMode::Full);
        let _ = server.join().unwrap();
        let sent = sent.lock().unwrap().clone();
        let received = received.lock().unwrap().clone();
        (result.map_err(|e| e.to_string()), (sent, received))
    })
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

// ------------------------------------------------------------------------

fn run(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let result = match result {
        Ok(_) if elapsed > budget => Err(format!("took {:.1} s, budget {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64())),
        other => other,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {n:>2} {name:<26} {:>7.2} s  {detail}", elapsed.as_secs_f64());
    result.is_ok()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= run(1, "kdf-rfc5869-vectors", secs(1), kdf_vectors);
    ok &= run(2, "deterministic-matrix", secs(30), deterministic_matrix);
    ok &= run(3, "tamper-detection", secs(120), tamper_detection);
    ok &= run(4, "reorder-detection", secs(60), reorder_detection);
    ok &= run(5, "truncation-detection", secs(60), truncation_detection);
    ok &= run(6, "compromise-confinement", secs(120), compromise_confinement);
    ok &= run(7, "power-loss-bound", secs(120), power_loss);
    let bench_start = Instant::now();
    let report = panic::catch_unwind(run_bench);
    let bench_secs = bench_start.elapsed().as_secs_f64();
    match &report {
        Ok(report) => {
            ok &= run(8, "evaluation-trends", secs(1), || evaluation_trends(report));
            ok &= run(9, "storage-scaling", secs(1), || storage_scaling(report));
            println!("      bench grid ran in {bench_secs:.1} s");
        }
        Err(_) => {
            ok &= run(8, "evaluation-trends", secs(1), || Err("bench grid panicked".into()));
            ok &= run(9, "storage-scaling", secs(1), || Err("bench grid panicked".into()));
        }
    }
    ok &= run(10, "retrieval-end-to-end", secs(60), retrieval_end_to_end);
    if !ok {
        std::process::exit(1);
    }
}
