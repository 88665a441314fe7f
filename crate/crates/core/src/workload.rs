//! Invocation traces and Poisson arrival generation.
//!
//! Trace files are UTF-8 CSV with one row per window:
//!
//! ```text
//! window,count
//! 0,12
//! 1,30
//! ```
//!
//! The header line is optional; blank lines are skipped and CRLF line ends
//! are accepted. A file whose header is `minute,count` holds per-minute
//! counts and is split into two 30 s windows per minute, the odd remainder
//! going to the earlier half.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sim::{PerSize, SizeClass};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace validation failed: {0}")]
    Invalid(String),
    #[error("reading trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub name: String,
    /// Invocation count per window; the index is the window number.
    pub counts: Vec<u32>,
}

impl Trace {
    pub fn new(name: impl Into<String>, counts: Vec<u32>) -> Self {
        Self {
            name: name.into(),
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(window_index, invocations)` pairs.
    pub fn windows(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.counts.iter().enumerate().map(|(i, &c)| (i as u64, c))
    }

    pub fn count(&self, window: usize) -> Option<u32> {
        self.counts.get(window).copied()
    }

    /// Nearest-rank percentile of the per-window counts, `p` in `(0, 100]`.
    pub fn percentile(&self, p: f64) -> u32 {
        if self.counts.is_empty() {
            return 0;
        }
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,count\n");
        for (i, c) in self.windows() {
            let _ = writeln!(out, "{i},{c}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), WorkloadError> {
        fs::write(path, self.to_csv()).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Hex SHA-256 over the canonical CSV form and the seed.
    pub fn digest(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.update(seed.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Splits per-minute counts into 30 s windows.
    pub fn from_minute_counts(name: impl Into<String>, minutes: &[u32]) -> Self {
        let counts = minutes.iter().flat_map(|&c| [c - c / 2, c / 2]).collect();
        Self::new(name, counts)
    }
}

pub fn parse_trace(name: &str, text: &str) -> Result<Trace, WorkloadError> {
    let mut rows: Vec<(u64, u32)> = Vec::new();
    let mut minute_based = false;
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            match line {
                "window,count" => continue,
                "minute,count" => {
                    minute_based = true;
                    continue;
                }
                _ => {}
            }
        }
        let parse_err = |message: String| WorkloadError::Parse { line: line_no, message };
        let mut fields = line.split(',');
        let (Some(idx), Some(count), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!("expected two fields, got `{line}`")));
        };
        let idx: u64 = idx
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid window index `{}`", idx.trim())))?;
        let count: u32 = count
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid invocation count `{}`", count.trim())))?;
        let expected_next = rows.last().map_or(0, |&(last, _)| last + 1);
        if rows.is_empty() && idx != 0 {
            return Err(parse_err(format!("first window index must be 0, got {idx}")));
        }
        if idx < expected_next {
            return Err(parse_err(format!("window index {idx} is not strictly increasing")));
        }
        rows.push((idx, count));
    }
    if rows.is_empty() {
        return Err(WorkloadError::Invalid("trace has no windows".into()));
    }
    // Gaps in the index are windows without invocations.
    let len = rows.last().expect("non-empty").0 as usize + 1;
    let mut counts = vec![0u32; len];
    for (idx, c) in rows {
        counts[idx as usize] = c;
    }
    Ok(if minute_based {
        Trace::from_minute_counts(name, &counts)
    } else {
        Trace::new(name, counts)
    })
}

pub fn load_trace(path: &Path) -> Result<Trace, WorkloadError> {
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    parse_trace(&name, &text)
}

/// Arrivals of one window: offsets from the window start and size classes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrivalPlan {
    pub timestamps: Vec<f64>,
    pub size_classes: Vec<SizeClass>,
}

impl ArrivalPlan {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Probability of each request size; must sum to 1.
pub type SizeMix = PerSize<f64>;

pub fn default_size_mix() -> SizeMix {
    PerSize {
        small: 0.25,
        medium: 0.45,
        large: 0.30,
    }
}

pub fn validate_mix(mix: &SizeMix) -> Result<(), WorkloadError> {
    let vals = [mix.small, mix.medium, mix.large];
    if vals.iter().any(|p| !(*p >= 0.0)) || ((vals.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(WorkloadError::Invalid(
            "size mix must be non-negative and sum to 1".into(),
        ));
    }
    Ok(())
}

pub fn sample_size<R: Rng + ?Sized>(mix: &SizeMix, rng: &mut R) -> SizeClass {
    let u: f64 = rng.random();
    if u < mix.small {
        SizeClass::Small
    } else if u < mix.small + mix.medium {
        SizeClass::Medium
    } else {
        SizeClass::Large
    }
}

/// Exponential inter-arrival gaps at rate `count / window_seconds`, emitted
/// until the window closes, so the realized count is Poisson with mean `count`.
pub fn sample_arrivals<R: Rng + ?Sized>(count: u32, window_seconds: f64, mix: &SizeMix, rng: &mut R) -> ArrivalPlan {
    let mut plan = ArrivalPlan::default();
    if count == 0 {
        return plan;
    }
    let rate = count as f64 / window_seconds;
    let gaps = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t >= window_seconds {
            break;
        }
        plan.timestamps.push(t);
        plan.size_classes.push(sample_size(mix, rng));
    }
    plan
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Flat,
    DiurnalSine,
    Bursty,
}

/// Windows per day at 30 s sampling.
pub const DAY_WINDOWS: usize = 2880;

/// Deterministic synthetic trace.
///
/// * `Flat`: every window is `scale`.
/// * `DiurnalSine`: `scale · (1 − cos(2π i / period))` with ±10 % seeded
///   jitter, clamped to `[0, 2·scale]`; the trough is at window 0.
/// * `Bursty`: `scale / 2` background with seeded bursts of 3–10 windows at
///   up to `2·scale`.
pub fn synth_trace(pattern: Pattern, windows: usize, scale: u32, seed: u64, period: usize) -> Trace {
    assert!(windows >= 1, "synthetic trace needs at least one window");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = scale as f64;
    let counts = match pattern {
        Pattern::Flat => vec![scale; windows],
        Pattern::DiurnalSine => {
            let period = period.max(1) as f64;
            (0..windows)
                .map(|i| {
                    let base = s * (1.0 - (2.0 * PI * i as f64 / period).cos());
                    let jitter = 1.0 + rng.random_range(-0.1..=0.1);
                    (base * jitter).round().clamp(0.0, 2.0 * s) as u32
                })
                .collect()
        }
        Pattern::Bursty => {
            let mut burst_left = 0u32;
            let mut burst_level = 0.0;
            (0..windows)
                .map(|_| {
                    if burst_left == 0 && rng.random_bool(0.05) {
                        burst_left = rng.random_range(3..=10);
                        burst_level = s * rng.random_range(1.2..=2.0);
                    }
                    let level = if burst_left > 0 {
                        burst_left -= 1;
                        burst_level
                    } else {
                        s * 0.5 * (1.0 + rng.random_range(-0.2..=0.2))
                    };
                    level.round().clamp(0.0, 2.0 * s) as u32
                })
                .collect()
        }
    };
    let name = match pattern {
        Pattern::Flat => "flat",
        Pattern::DiurnalSine => "diurnal_sine",
        Pattern::Bursty => "bursty",
    };
    Trace::new(name, counts)
}
