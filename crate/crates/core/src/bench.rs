//! Wall-clock comparison of dense and row-skipping GEMV.

use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model_io::GaussianStream;
use crate::predictor::SkipMask;
use crate::sparse_linear::sparse_gemv_rows;
use crate::tensor::{dense_gemv, DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy)]
pub struct TimingConfig {
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { warmup: 2, repeats: 7 }
    }
}

/// Median of `repeats` timed calls after `warmup` untimed ones.
pub fn median_time<T>(cfg: TimingConfig, mut f: impl FnMut() -> T) -> Duration {
    for _ in 0..cfg.warmup {
        black_box(f());
    }
    let mut samples: Vec<Duration> = (0..cfg.repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed()
        })
        .collect();
    samples.sort_unstable();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    }
}

/// Mask skipping exactly `round(skip_ratio * k)` rows chosen by a seeded shuffle.
pub fn forced_mask(k: usize, skip_ratio: f64, seed: u64) -> Result<SkipMask> {
    if !(0.0..=1.0).contains(&skip_ratio) {
        return Err(Error::InvalidDims(format!("skip ratio {skip_ratio} outside [0, 1]")));
    }
    let skipped = (skip_ratio * k as f64).round() as usize;
    let mut idx: Vec<usize> = (0..k).collect();
    let mut rng = GaussianStream::new(seed);
    for i in 0..skipped {
        let j = i + (rng.uniform() * (k - i) as f64) as usize;
        idx.swap(i, j.min(k - 1));
    }
    let mut bits = vec![false; k];
    for &i in &idx[..skipped] {
        bits[i] = true;
    }
    Ok(SkipMask::from_bools(bits))
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub arch: &'static str,
    pub os: &'static str,
    pub cpu: String,
    pub logical_cores: usize,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|m| m.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            arch: std::env::consts::ARCH,
            os: std::env::consts::OS,
            cpu,
            logical_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GemvTiming {
    pub d: usize,
    pub k: usize,
    pub skip_ratio: f64,
    pub warmup: usize,
    pub repeats: usize,
    pub dense_median_us: f64,
    pub sparse_median_us: f64,
    /// `sparse / dense`; below 1 means skipping paid off.
    pub time_ratio: f64,
}

/// Times `dense_gemv` against `sparse_gemv_rows` on a `k x d` matrix with a forced mask.
pub fn time_gemv(d: usize, k: usize, skip_ratio: f64, seed: u64, cfg: TimingConfig) -> Result<GemvTiming> {
    let mut rng = GaussianStream::new(seed);
    let data: Vec<f32> = (0..k * d).map(|_| rng.uniform() as f32 - 0.5).collect();
    let w = DenseMatrix::new(k, d, data)?;
    let x = DenseVector::new((0..d).map(|_| rng.uniform() as f32 - 0.5).collect())?;
    let mask = forced_mask(k, skip_ratio, seed ^ 0x5eed)?;

    let dense = median_time(cfg, || dense_gemv(&w, &x).expect("shapes checked"));
    let sparse = median_time(cfg, || sparse_gemv_rows(&w, &x, &mask).expect("shapes checked"));
    let us = |t: Duration| t.as_secs_f64() * 1e6;
    Ok(GemvTiming {
        d,
        k,
        skip_ratio,
        warmup: cfg.warmup,
        repeats: cfg.repeats,
        dense_median_us: us(dense),
        sparse_median_us: us(sparse),
        time_ratio: sparse.as_secs_f64() / dense.as_secs_f64().max(f64::MIN_POSITIVE),
    })
}
