//! Seeded synthetic log lines with normally distributed lengths.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::collector::parse::MAX_LINE_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Length profile of the web-server dataset (mean 115.08, s.d. 5.73).
    pub fn web(count: usize, seed: u64) -> Self {
        SyntheticSpec {
            count,
            mean: 115.08,
            stddev: 5.73,
            seed,
        }
    }

    /// Length profile of the intrusion-alert dataset (mean 165.27, s.d. 38.21).
    pub fn alerts(count: usize, seed: u64) -> Self {
        SyntheticSpec {
            count,
            mean: 165.27,
            stddev: 38.21,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean >= 1.0) || !self.mean.is_finite() {
            return Err(Error::invalid("synthetic mean length must be at least 1"));
        }
        if !(self.stddev >= 0.0) || !self.stddev.is_finite() {
            return Err(Error::invalid("synthetic stddev must be non-negative"));
        }
        Ok(())
    }
}

/// Iterator over the lines of a spec, without terminators.
pub struct SyntheticLines {
    rng: ChaCha8Rng,
    lengths: Normal<f64>,
    remaining: usize,
}

impl Iterator for SyntheticLines {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let len = self.lengths.sample(&mut self.rng).round().clamp(1.0, MAX_LINE_LEN as f64) as usize;
        let mut line: Vec<u8> = (0..len).map(|_| self.rng.gen_range(b'!'..=b'~')).collect();
        // Sprinkle interior spaces so lines look like words.
        for i in 1..len.saturating_sub(1) {
            if self.rng.gen_ratio(1, 8) {
                line[i] = b' ';
            }
        }
        Some(line)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn synthetic_lines(spec: &SyntheticSpec) -> Result<SyntheticLines> {
    spec.validate()?;
    Ok(SyntheticLines {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        lengths: Normal::new(spec.mean, spec.stddev).map_err(|e| Error::invalid(e.to_string()))?,
        remaining: spec.count,
    })
}

/// Write the spec's lines, newline-terminated. Returns bytes written.
pub fn write_synthetic<W: Write>(spec: &SyntheticSpec, mut out: W) -> Result<u64> {
    let mut written = 0u64;
    for line in synthetic_lines(spec)? {
        out.write_all(&line)?;
        out.write_all(b"\n")?;
        written += line.len() as u64 + 1;
    }
    out.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_len(spec: &SyntheticSpec) -> f64 {
        let lines: Vec<_> = synthetic_lines(spec).unwrap().collect();
        lines.iter().map(|l| l.len() as f64).sum::<f64>() / lines.len() as f64
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec::web(1000, 7);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_synthetic(&spec, &mut a).unwrap();
        write_synthetic(&spec, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|c| **c == b'\n').count(), 1000);
        let mut c = Vec::new();
        write_synthetic(&SyntheticSpec { seed: 8, ..spec }, &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn printable_and_clamped() {
        let spec = SyntheticSpec {
            count: 500,
            mean: 2.0,
            stddev: 50.0,
            seed: 1,
        };
        for line in synthetic_lines(&spec).unwrap() {
            assert!(!line.is_empty() && line.len() <= MAX_LINE_LEN);
            assert!(line.iter().all(|b| (b' '..=b'~').contains(b)));
            assert_ne!(line[0], b' ');
        }
        assert!(SyntheticSpec { mean: 0.5, ..spec }.validate().is_err());
    }

    #[test]
    fn length_statistics() {
        let web = mean_len(&SyntheticSpec::web(100_000, 7));
        assert!((web - 115.08).abs() / 115.08 < 0.02, "mean {web}");
        let alerts = mean_len(&SyntheticSpec::alerts(20_000, 7));
        assert!((alerts - 165.27).abs() / 165.27 < 0.02, "mean {alerts}");
    }
}
