//! Wall-clock benchmark of the feature alignment transforms.
//!
//! Measures the pure alignment (statistics + transform) on pre-allocated,
//! freshly randomized features, single-threaded by default. The first 10
//! warm-up trials are excluded; input refill happens outside the timed
//! span. Absolute times are machine-specific; the interesting claims are
//! orderings and scaling.

use std::hint::black_box;
use std::time::Instant;

use anyhow::{ensure, Result};
use ufse_core::align::{adain, whiten_color, AlignmentKind, ADAIN_EPS, WCT_EIG_FLOOR};
use ufse_core::rng::Rng;
use ufse_core::stats::FeatureMap;

pub const WARMUP_TRIALS: usize = 10;

/// Timing summary of one configuration.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub kind: AlignmentKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub trials: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub stddev_ms: f64,
    pub threads: usize,
}

impl BenchResult {
    pub fn table_row(&self) -> String {
        format!(
            "{:<6} C={:<4} {:>3}x{:<3} trials={:<5} threads={:<2} mean={:>9.4} ms  median={:>9.4} ms  stddev={:>8.4} ms",
            self.kind.name(),
            self.channels,
            self.height,
            self.width,
            self.trials,
            self.threads,
            self.mean_ms,
            self.median_ms,
            self.stddev_ms
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.kind.name(),
            self.channels,
            self.height,
            self.width,
            self.trials,
            self.threads,
            self.mean_ms,
            self.median_ms,
            self.stddev_ms
        )
    }
}

fn summarize(kind: AlignmentKind, c: usize, h: usize, w: usize, mut ms: Vec<f64>, threads: usize) -> BenchResult {
    let n = ms.len();
    let mean = ms.iter().sum::<f64>() / n as f64;
    ms.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let median = if n % 2 == 1 {
        ms[n / 2]
    } else {
        0.5 * (ms[n / 2 - 1] + ms[n / 2])
    };
    let var = ms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    BenchResult {
        kind,
        channels: c,
        height: h,
        width: w,
        trials: n,
        mean_ms: mean,
        median_ms: median,
        stddev_ms: var.sqrt(),
        threads,
    }
}

fn run_stream(
    kind: AlignmentKind,
    c: usize,
    h: usize,
    w: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = Rng::seed_from_u64(seed);
    // Pre-allocated buffers; refilled (untimed) before every trial.
    let mut xc = FeatureMap::new(c, h, w, vec![0.0f32; c * h * w])?;
    let mut xs = FeatureMap::new(c, h, w, vec![0.0f32; c * h * w])?;
    let mut times = Vec::with_capacity(trials);
    for trial in 0..WARMUP_TRIALS + trials {
        for v in xc.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        for v in xs.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let start = Instant::now();
        let out = match kind {
            AlignmentKind::AdaIn => adain(&xc, &xs, ADAIN_EPS as f32)?,
            AlignmentKind::Wct => whiten_color(&xc, &xs, WCT_EIG_FLOOR)?,
        };
        let dt = start.elapsed();
        black_box(out.data().first().copied());
        if trial >= WARMUP_TRIALS {
            times.push(dt.as_secs_f64() * 1e3);
        }
    }
    Ok(times)
}

/// Benchmark one alignment kind at one feature size.
pub fn bench_alignment(
    kind: AlignmentKind,
    c: usize,
    h: usize,
    w: usize,
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<BenchResult> {
    ensure!(trials >= 30, "reported runs need at least 30 trials, got {trials}");
    ensure!(c >= 1 && h * w >= 2, "feature must have C >= 1 and H*W >= 2");
    if threads <= 1 {
        let times = run_stream(kind, c, h, w, trials, seed)?;
        return Ok(summarize(kind, c, h, w, times, 1));
    }
    // Multi-threaded mode: independent streams, timed inside each thread;
    // results are labeled with the thread count.
    let per = trials.div_ceil(threads);
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            std::thread::spawn(move || run_stream(kind, c, h, w, per, seed.wrapping_add(t as u64)))
        })
        .collect();
    let mut all = Vec::new();
    for handle in handles {
        all.extend(handle.join().expect("bench thread")?);
    }
    Ok(summarize(kind, c, h, w, all, threads))
}
