//! Per-window CSV records, run summaries and comparison reports.
//!
//! Summaries are always computed from CSV text, so every number in a report
//! can be recomputed from the emitted files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::StepResult;

pub const CSV_HEADER: &str = "window,policy,tau,phi,q,n,c,m,action,reward,valid";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One evaluated window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowRow {
    pub window: u64,
    pub policy: String,
    pub tau: f64,
    pub phi: f64,
    pub q: u32,
    pub n: u32,
    pub c: f64,
    pub m: f64,
    /// Replica delta requested (agents) or applied (controllers).
    pub action: i32,
    pub reward: f64,
    pub valid: bool,
}

impl WindowRow {
    pub fn from_step(window: u64, policy: &str, step: &StepResult) -> Self {
        let o = &step.observation;
        Self {
            window,
            policy: policy.to_string(),
            tau: o.tau,
            phi: o.phi,
            q: step.info.metrics.q,
            n: step.info.metrics.n,
            c: o.c,
            m: o.m,
            action: step.info.delta,
            reward: step.reward,
            valid: step.info.valid,
        }
    }
}

pub fn rows_to_csv(rows: &[WindowRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{:.6},{:.6},{},{:.6},{}",
            r.window,
            r.policy,
            r.tau,
            r.phi,
            r.q,
            r.n,
            r.c,
            r.m,
            r.action,
            r.reward,
            u8::from(r.valid)
        );
    }
    out
}

pub fn parse_rows(path: &str, text: &str) -> Result<Vec<WindowRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        _ => {
            return Err(ReportError::Parse {
                path: path.into(),
                line: 1,
                message: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| ReportError::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields, found {}", f.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        let row = (|| -> Result<WindowRow, String> {
            Ok(WindowRow {
                window: num(f[0], "window")?,
                policy: f[1].to_string(),
                tau: num(f[2], "tau")?,
                phi: num(f[3], "phi")?,
                q: num(f[4], "q")?,
                n: num(f[5], "n")?,
                c: num(f[6], "c")?,
                m: num(f[7], "m")?,
                action: num(f[8], "action")?,
                reward: num(f[9], "reward")?,
                valid: match f[10] {
                    "1" => true,
                    "0" => false,
                    other => return Err(format!("bad valid flag `{other}`")),
                },
            })
        })()
        .map_err(bad)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Sidecar written next to every evaluation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub policy: String,
    pub seed: u64,
    pub windows: usize,
    pub episode_windows: usize,
    /// Digest of the workload trace and evaluation seed.
    pub workload_hash: String,
    pub wall_clock_seconds: f64,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_run(csv: &Path, rows: &[WindowRow], meta: &RunMeta) -> Result<(), ReportError> {
    if let Some(dir) = csv.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(csv, rows_to_csv(rows)).map_err(io_err(csv))?;
    let mp = meta_path(csv);
    let json = serde_json::to_string_pretty(meta).expect("meta serializes") + "\n";
    fs::write(&mp, json).map_err(io_err(&mp))?;
    Ok(())
}

pub fn read_run(csv: &Path) -> Result<(Vec<WindowRow>, RunMeta), ReportError> {
    let text = fs::read_to_string(csv).map_err(io_err(csv))?;
    let rows = parse_rows(&csv.display().to_string(), &text)?;
    let mp = meta_path(csv);
    let mtext = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let meta: RunMeta = serde_json::from_str(&mtext).map_err(|e| ReportError::Parse {
        path: mp.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if meta.windows != rows.len() {
        return Err(ReportError::Mismatch(format!(
            "{}: metadata declares {} windows, file has {}",
            csv.display(),
            meta.windows,
            rows.len()
        )));
    }
    Ok((rows, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub windows: usize,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    /// Mean of the per-window throughput ratio.
    pub mean_throughput: f64,
    pub mean_replicas: f64,
    /// Mean response time over windows with at least one success.
    pub mean_exec_time: f64,
    pub invalid_actions: usize,
    pub wall_clock_seconds: f64,
}

impl RunSummary {
    /// Summary of parsed CSV rows; episodes are consecutive runs of
    /// `episode_windows` rows.
    pub fn from_rows(rows: &[WindowRow], episode_windows: usize, wall_clock_seconds: f64) -> Self {
        let n = rows.len().max(1) as f64;
        let episodes = rows.len() / episode_windows.max(1);
        let total_reward: f64 = rows.iter().map(|r| r.reward).sum();
        let served: Vec<f64> = rows.iter().filter(|r| r.phi > 0.0 && r.q > 0).map(|r| r.tau).collect();
        Self {
            policy: rows.first().map(|r| r.policy.clone()).unwrap_or_default(),
            windows: rows.len(),
            episodes,
            mean_episode_reward: if episodes == 0 { 0.0 } else { total_reward / episodes as f64 },
            mean_throughput: rows.iter().map(|r| r.phi).sum::<f64>() / n,
            mean_replicas: rows.iter().map(|r| r.n as f64).sum::<f64>() / n,
            mean_exec_time: if served.is_empty() {
                0.0
            } else {
                served.iter().sum::<f64>() / served.len() as f64
            },
            invalid_actions: rows.iter().filter(|r| !r.valid).count(),
            wall_clock_seconds,
        }
    }

    /// Summary of rows as they read back from CSV.
    pub fn from_written(rows: &[WindowRow], episode_windows: usize, wall_clock_seconds: f64) -> Self {
        let text = rows_to_csv(rows);
        let parsed = parse_rows("<memory>", &text).expect("own CSV parses");
        Self::from_rows(&parsed, episode_windows, wall_clock_seconds)
    }
}

/// Relative change of `a` over `b` in percent; zero when both are zero.
pub fn relative_pct(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if b == 0.0 {
        f64::INFINITY.copysign(a - b)
    } else {
        (a - b) / b.abs() * 100.0
    }
}

/// Markdown report over runs that share a window count and workload hash.
pub fn compare_runs(runs: &[(Vec<WindowRow>, RunMeta)]) -> Result<String, ReportError> {
    let Some((first_rows, first)) = runs.first() else {
        return Err(ReportError::Mismatch("nothing to compare".into()));
    };
    for (rows, meta) in runs {
        if rows.len() != first_rows.len() {
            return Err(ReportError::Mismatch(format!(
                "`{}` has {} windows but `{}` has {}",
                meta.policy,
                rows.len(),
                first.policy,
                first_rows.len()
            )));
        }
        if meta.workload_hash != first.workload_hash {
            return Err(ReportError::Mismatch(format!(
                "`{}` was evaluated on workload {} but `{}` on {}; results are not comparable",
                meta.policy, meta.workload_hash, first.policy, first.workload_hash
            )));
        }
        if meta.episode_windows != first.episode_windows {
            return Err(ReportError::Mismatch("runs use different episode lengths".into()));
        }
    }
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|(rows, meta)| RunSummary::from_rows(rows, meta.episode_windows, meta.wall_clock_seconds))
        .collect();

    let mut out = String::new();
    let _ = writeln!(out, "# Policy comparison\n");
    let _ = writeln!(
        out,
        "{} windows per policy, workload `{}`.\n",
        first_rows.len(),
        &first.workload_hash[..first.workload_hash.len().min(16)]
    );
    let _ = writeln!(
        out,
        "| policy | mean episodic reward | mean throughput | mean replicas | mean execution time (s) | invalid actions |"
    );
    let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|");
    for s in &summaries {
        let _ = writeln!(
            out,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
            s.policy, s.mean_episode_reward, s.mean_throughput, s.mean_replicas, s.mean_exec_time, s.invalid_actions
        );
    }
    if summaries.len() > 1 {
        let _ = writeln!(out, "\n## Pairwise differences (row vs column baseline)\n");
        let _ = writeln!(
            out,
            "| policy | baseline | throughput (points) | throughput % | replicas % | execution time % |"
        );
        let _ = writeln!(out, "|---|---|---:|---:|---:|---:|");
        for a in &summaries {
            for b in &summaries {
                if std::ptr::eq(a, b) {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "| {} | {} | {:+.2} | {:+.2} | {:+.2} | {:+.2} |",
                    a.policy,
                    b.policy,
                    (a.mean_throughput - b.mean_throughput) * 100.0,
                    relative_pct(a.mean_throughput, b.mean_throughput),
                    relative_pct(a.mean_replicas, b.mean_replicas),
                    relative_pct(a.mean_exec_time, b.mean_exec_time)
                );
            }
        }
    }
    Ok(out)
}
