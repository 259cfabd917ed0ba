//! Line parsers for the supported log sources.
//!
//! Parsing only classifies and extracts a timestamp. The body handed to the
//! logger is always the line as read, minus its line terminator.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset, NaiveTime};
use regex::bytes::Regex;
use serde::Serialize;

use crate::error::{Error, Result};

/// Longest accepted input line.
pub const MAX_LINE_LEN: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ApacheAccess,
    SnortFast,
    Dmesg,
    Generic,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::ApacheAccess, Source::SnortFast, Source::Dmesg, Source::Generic];

    pub fn name(self) -> &'static str {
        match self {
            Source::ApacheAccess => "apache_access",
            Source::SnortFast => "snort_fast",
            Source::Dmesg => "dmesg",
            Source::Generic => "generic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "apache_access" | "apache" => Ok(Source::ApacheAccess),
            "snort_fast" | "snort" => Ok(Source::SnortFast),
            "dmesg" => Ok(Source::Dmesg),
            "generic" => Ok(Source::Generic),
            _ => Err(Error::invalid(format!("unknown log source {s:?}"))),
        }
    }
}

/// Timestamp as found in the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timestamp {
    /// Apache `[30/Jun/2016:00:00:00 -0400]`.
    Wall(DateTime<FixedOffset>),
    /// Snort fast alerts omit the year unless run with `-y`.
    MonthDay { year: Option<i32>, month: u32, day: u32, time: NaiveTime },
    /// dmesg seconds since boot.
    Uptime(f64),
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timestamp::Wall(t) => write!(f, "{}", t.to_rfc3339()),
            Timestamp::MonthDay { year, month, day, time } => match year {
                Some(y) => write!(f, "{y:04}-{month:02}-{day:02}T{}", time.format("%H:%M:%S%.6f")),
                None => write!(f, "--{month:02}-{day:02}T{}", time.format("%H:%M:%S%.6f")),
            },
            Timestamp::Uptime(s) => write!(f, "{s:.6}s"),
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub source: Source,
    pub timestamp: Option<Timestamp>,
    pub body: Vec<u8>,
}

impl RawEntry {
    pub fn generic(body: impl Into<Vec<u8>>) -> Self {
        RawEntry {
            source: Source::Generic,
            timestamp: None,
            body: body.into(),
        }
    }
}

/// Result of parsing one line. `warning` is set when the line did not match
/// its declared source and was downgraded to a generic entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub entry: RawEntry,
    pub warning: Option<String>,
}

/// Strip one trailing `\n` or `\r\n`.
pub fn trim_line_ending(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn apache_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"^[0-9A-Za-z.:-]+ \S+ \S+ \[([^\]]+)\] "[^"]*" (?:\d{3}|-) (?:\d+|-)(?: "[^"]*" "[^"]*")?\s*$"#,
        )
        .expect("valid regex")
    })
}

fn snort_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(\d{2})/(\d{2})(?:/(\d{2}))?-(\d{2}):(\d{2}):(\d{2})\.(\d{1,6})\s+\[\*\*\]\s+\[\d+:\d+:\d+\]\s.*?\s\[\*\*\]",
        )
        .expect("valid regex")
    })
}

fn dmesg_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\[\s*(\d+)\.(\d{1,9})\]").expect("valid regex"))
}

fn num<T: FromStr>(bytes: &[u8]) -> Option<T> {
    std::str::from_utf8(bytes).ok()?.parse().ok()
}

fn parse_apache(line: &[u8]) -> std::result::Result<Option<Timestamp>, String> {
    let caps = apache_re().captures(line).ok_or("not in common/combined log format")?;
    let raw = std::str::from_utf8(&caps[1]).map_err(|_| "timestamp is not UTF-8")?;
    let t = DateTime::parse_from_str(raw, "%d/%b/%Y:%H:%M:%S %z").map_err(|e| format!("bad timestamp {raw:?}: {e}"))?;
    Ok(Some(Timestamp::Wall(t)))
}

fn parse_snort(line: &[u8]) -> std::result::Result<Option<Timestamp>, String> {
    let caps = snort_re().captures(line).ok_or("missing timestamp or [**] delimiters")?;
    let month: u32 = num(&caps[1]).ok_or("bad month")?;
    let day: u32 = num(&caps[2]).ok_or("bad day")?;
    let year = caps.get(3).and_then(|y| num::<i32>(y.as_bytes())).map(|y| 2000 + y);
    let frac = &caps[7];
    let micros: u32 = num::<u32>(frac).ok_or("bad fraction")? * 10u32.pow(6 - frac.len() as u32);
    let time = NaiveTime::from_hms_micro_opt(
        num(&caps[4]).ok_or("bad hour")?,
        num(&caps[5]).ok_or("bad minute")?,
        num(&caps[6]).ok_or("bad second")?,
        micros,
    )
    .ok_or("time out of range")?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(format!("date {month:02}/{day:02} out of range"));
    }
    Ok(Some(Timestamp::MonthDay { year, month, day, time }))
}

fn parse_dmesg(line: &[u8]) -> std::result::Result<Option<Timestamp>, String> {
    let caps = dmesg_re().captures(line).ok_or("missing [ seconds.micros] prefix")?;
    let text = format!(
        "{}.{}",
        std::str::from_utf8(&caps[1]).expect("digits"),
        std::str::from_utf8(&caps[2]).expect("digits")
    );
    Ok(Some(Timestamp::Uptime(text.parse().map_err(|_| "bad uptime")?)))
}

/// Classify one line. Errors only for oversized or empty lines; a line that
/// does not match `source` comes back as generic with a warning.
pub fn parse_line(source: Source, line: &[u8]) -> Result<Parsed> {
    let body = trim_line_ending(line);
    if body.len() > MAX_LINE_LEN {
        return Err(Error::invalid(format!(
            "line of {} bytes exceeds {MAX_LINE_LEN}",
            body.len()
        )));
    }
    if body.is_empty() {
        return Err(Error::invalid("empty line"));
    }
    let parsed = match source {
        Source::ApacheAccess => parse_apache(body),
        Source::SnortFast => parse_snort(body),
        Source::Dmesg => parse_dmesg(body),
        Source::Generic => Ok(None),
    };
    Ok(match parsed {
        Ok(timestamp) => Parsed {
            entry: RawEntry {
                source,
                timestamp,
                body: body.to_vec(),
            },
            warning: None,
        },
        Err(why) => Parsed {
            entry: RawEntry::generic(body),
            warning: Some(format!("{source}: {why}")),
        },
    })
}
