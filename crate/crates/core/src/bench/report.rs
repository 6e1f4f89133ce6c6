//! Timing records, their CSV form and summary statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Graphs deployed straight on the engine, no access control.
    Direct,
    Gateway,
    /// Gateway behind the handle cache.
    Proxy,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Direct, Mode::Gateway, Mode::Proxy];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Gateway => "gateway",
            Mode::Proxy => "proxy",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimingRecord {
    pub index: usize,
    pub mode: Mode,
    pub policy: usize,
    pub status: String,
    /// Set in proxy mode only.
    pub cache_hit: Option<bool>,
    pub decision: Duration,
    pub merge: Duration,
    pub deploy: Duration,
    /// Wall time seen by the caller.
    pub total: Duration,
}

impl TimingRecord {
    pub fn decision_and_merge(&self) -> Duration {
        self.decision + self.merge
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    index: usize,
    mode: String,
    policy: usize,
    status: String,
    cache: String,
    decision_ns: u64,
    merge_ns: u64,
    deploy_ns: u64,
    total_ns: u64,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos().min(u64::MAX as u128) as u64
}

/// Columns: index, mode, policy, status, cache, then the four timings in
/// nanoseconds.
pub fn write_csv<W: io::Write>(w: W, records: &[TimingRecord]) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(Row {
            index: r.index,
            mode: r.mode.name().to_string(),
            policy: r.policy,
            status: r.status.clone(),
            cache: match r.cache_hit {
                Some(true) => "hit".into(),
                Some(false) => "miss".into(),
                None => String::new(),
            },
            decision_ns: nanos(r.decision),
            merge_ns: nanos(r.merge),
            deploy_ns: nanos(r.deploy),
            total_ns: nanos(r.total),
        })?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<TimingRecord>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let bad = |msg: String| ReportError::Row { row: i + 1, msg };
        out.push(TimingRecord {
            index: row.index,
            mode: Mode::parse(&row.mode)
                .ok_or_else(|| bad(format!("unknown mode `{}`", row.mode)))?,
            policy: row.policy,
            status: row.status,
            cache_hit: match row.cache.as_str() {
                "hit" => Some(true),
                "miss" => Some(false),
                "" => None,
                other => return Err(bad(format!("bad cache flag `{other}`"))),
            },
            decision: Duration::from_nanos(row.decision_ns),
            merge: Duration::from_nanos(row.merge_ns),
            deploy: Duration::from_nanos(row.deploy_ns),
            total: Duration::from_nanos(row.total_ns),
        });
    }
    Ok(out)
}

/// Statistics over a sample of durations, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for fewer than two values.
    pub stddev: f64,
    pub min: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Stats {
    pub fn of(durations: impl IntoIterator<Item = Duration>) -> Option<Stats> {
        let mut v: Vec<f64> = durations
            .into_iter()
            .map(|d| d.as_secs_f64() * 1e6)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let stddev = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stats {
            n,
            mean,
            stddev,
            min: v[0],
            p50: percentile(&v, 50.0),
            p90: percentile(&v, 90.0),
            p99: percentile(&v, 99.0),
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub status_counts: BTreeMap<String, usize>,
    pub total: Option<Stats>,
    pub decision_and_merge: Option<Stats>,
    pub deploy: Option<Stats>,
    /// Proxy mode only.
    pub hit_rate: Option<f64>,
    pub hit_total: Option<Stats>,
    pub miss_total: Option<Stats>,
}

impl Summary {
    pub fn of(records: &[TimingRecord]) -> Summary {
        let mut status_counts = BTreeMap::new();
        for r in records {
            *status_counts.entry(r.status.clone()).or_insert(0) += 1;
        }
        let flagged: Vec<&TimingRecord> =
            records.iter().filter(|r| r.cache_hit.is_some()).collect();
        let hits = || flagged.iter().filter(|r| r.cache_hit == Some(true));
        let misses = || flagged.iter().filter(|r| r.cache_hit == Some(false));
        // Phase statistics describe requests that reached the gateway.
        let served: Vec<&TimingRecord> = records
            .iter()
            .filter(|r| r.cache_hit != Some(true))
            .collect();
        Summary {
            count: records.len(),
            status_counts,
            total: Stats::of(records.iter().map(|r| r.total)),
            decision_and_merge: Stats::of(served.iter().map(|r| r.decision_and_merge())),
            deploy: Stats::of(served.iter().map(|r| r.deploy)),
            hit_rate: (!flagged.is_empty()).then(|| hits().count() as f64 / flagged.len() as f64),
            hit_total: Stats::of(hits().map(|r| r.total)),
            miss_total: Stats::of(misses().map(|r| r.total)),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "requests: {}", self.count)?;
        for (status, n) in &self.status_counts {
            writeln!(f, "  {status:<20} {n}")?;
        }
        if let Some(rate) = self.hit_rate {
            writeln!(f, "cache hit rate: {:.1}%", rate * 100.0)?;
        }
        writeln!(
            f,
            "{:<16} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "phase (us)", "n", "mean", "stddev", "p50", "p90", "p99", "max"
        )?;
        let rows = [
            ("total", &self.total),
            ("decision+merge", &self.decision_and_merge),
            ("deploy", &self.deploy),
            ("hit total", &self.hit_total),
            ("miss total", &self.miss_total),
        ];
        for (name, s) in rows {
            if let Some(s) = s {
                writeln!(
                    f,
                    "{name:<16} {:>7} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
                    s.n, s.mean, s.stddev, s.p50, s.p90, s.p99, s.max
                )?;
            }
        }
        Ok(())
    }
}
