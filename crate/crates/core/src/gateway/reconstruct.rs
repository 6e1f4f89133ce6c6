//! Recovering raw values from overlapping window sums.
//!
//! With sum windows of sizes N, N+1, ..., N+M sharing step M, window k of
//! size s covers positions kM .. kM+s-1, so the difference between the
//! size s+1 and size s sums of window k is the single value at kM+s. Over
//! all s in N..N+M that yields every position from N on.

use std::ops::{Mul, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries<T> {
    pub size: u32,
    pub step: u32,
    pub values: Vec<T>,
}

impl<T> WindowSeries<T> {
    pub fn new(size: u32, step: u32, values: Vec<T>) -> WindowSeries<T> {
        WindowSeries { size, step, values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconstructError {
    #[error("need window sizes N..=N+M for step M; got {0:?}")]
    SizeFamily(Vec<u32>),
    #[error("all series must share one step")]
    StepMismatch,
    #[error(
        "series of size {size} has {found} windows, inconsistent with size {prev} ({prev_len})"
    )]
    Lengths {
        size: u32,
        found: usize,
        prev: u32,
        prev_len: usize,
    },
}

fn ordered<T>(streams: &[WindowSeries<T>]) -> Result<Vec<&WindowSeries<T>>, ReconstructError> {
    let mut s: Vec<&WindowSeries<T>> = streams.iter().collect();
    s.sort_by_key(|w| w.size);
    let sizes: Vec<u32> = s.iter().map(|w| w.size).collect();
    let Some(first) = s.first() else {
        return Err(ReconstructError::SizeFamily(sizes));
    };
    let step = first.step;
    if s.iter().any(|w| w.step != step) {
        return Err(ReconstructError::StepMismatch);
    }
    let consecutive = sizes.windows(2).all(|p| p[1] == p[0] + 1);
    if step == 0 || first.size == 0 || s.len() != step as usize + 1 || !consecutive {
        return Err(ReconstructError::SizeFamily(sizes));
    }
    // Over K inputs, size s has floor((K - s) / M) + 1 windows, so one size
    // up has the same count or one fewer.
    for p in s.windows(2) {
        let (a, b) = (p[0], p[1]);
        if b.values.len() > a.values.len() || b.values.len() + 1 < a.values.len() {
            return Err(ReconstructError::Lengths {
                size: b.size,
                found: b.values.len(),
                prev: a.size,
                prev_len: a.values.len(),
            });
        }
    }
    Ok(s)
}

/// Returns a_N, a_N+1, ... as far as the windows determine them.
pub fn reconstruct_from_windows<T>(streams: &[WindowSeries<T>]) -> Result<Vec<T>, ReconstructError>
where
    T: Copy + Sub<Output = T>,
{
    let s = ordered(streams)?;
    let m = s[0].step as usize;
    let mut out = Vec::new();
    for k in 0.. {
        for j in 0..m {
            match (s[j].values.get(k), s[j + 1].values.get(k)) {
                (Some(&small), Some(&large)) => out.push(large - small),
                _ => return Ok(out),
            }
        }
    }
    unreachable!()
}

/// Same attack against average windows: scaling by the known sizes turns
/// them back into sums. Exact only up to floating-point rounding.
pub fn reconstruct_from_avg_windows<T>(
    streams: &[WindowSeries<T>],
) -> Result<Vec<T>, ReconstructError>
where
    T: Copy + Sub<Output = T> + Mul<Output = T> + From<u32>,
{
    let sums: Vec<WindowSeries<T>> = streams
        .iter()
        .map(|w| {
            WindowSeries::new(
                w.size,
                w.step,
                w.values.iter().map(|&v| v * T::from(w.size)).collect(),
            )
        })
        .collect();
    reconstruct_from_windows(&sums)
}
