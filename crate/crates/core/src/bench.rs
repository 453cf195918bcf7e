//! Measurement harness: vector-width microkernels for raw arithmetic and
//! transcendental throughput, plus a steps-per-second driver for scaling
//! studies.
//!
//! The harness asserts methodology only — exact work accounting, bitwise
//! reproducible checksums, and throughput orderings. Absolute rates are
//! hardware-bound and never asserted.

use std::time::{Duration, Instant};

use crate::config::RunConfig;
use crate::integrator::{evolve, LocalProvider, StepConfig, WorkerPool};
use crate::state::init_ensemble;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "kernel,width,threads,iterations,elapsed_s,rate,checksum";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub kernel: String,
    pub vector_width: usize,
    pub threads: usize,
    pub iterations: u64,
    pub elapsed_s: f64,
    /// GFLOP/s, M-evals/s, or steps/s depending on the kernel.
    pub rate: f64,
    /// Anti-elision sink; bitwise reproducible for fixed inputs and
    /// thread count.
    pub checksum: f64,
    pub config_hash: u64,
    /// Seconds since the Unix epoch at measurement start.
    pub timestamp_s: u64,
}

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:?}",
            self.kernel,
            self.vector_width,
            self.threads,
            self.iterations,
            self.elapsed_s,
            self.rate,
            self.checksum
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscKind {
    SinCos,
    Exp,
}

impl TranscKind {
    pub fn name(self) -> &'static str {
        match self {
            TranscKind::SinCos => "sincos",
            TranscKind::Exp => "exp",
        }
    }
}

/// Shared kernel parameters. `lane_hint` models the platform vector lane
/// count; widths must be positive multiples of it.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub vector_width: usize,
    pub iterations: u64,
    pub threads: usize,
    pub lane_hint: usize,
}

impl KernelParams {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("bench.iterations must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("bench threads must be >= 1".into()));
        }
        if self.lane_hint == 0 {
            return Err(Error::Config("bench.lane_hint must be >= 1".into()));
        }
        if self.vector_width == 0 || !self.vector_width.is_multiple_of(self.lane_hint) {
            return Err(Error::Config(format!(
                "vector width {} must be a positive multiple of the lane hint {}",
                self.vector_width, self.lane_hint
            )));
        }
        Ok(())
    }
}

fn now_epoch_s() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Spawn exactly `threads` workers, each running `work(thread_index)`;
/// returns per-thread results in thread-index order plus the elapsed wall
/// time of the parallel region only.
fn timed_parallel<R: Send>(threads: usize, work: impl Fn(usize) -> R + Sync) -> (Vec<R>, f64) {
    let start = Instant::now();
    let work = &work;
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|tid| scope.spawn(move || work(tid)))
            .collect();
        // join in spawn order so the checksum fold order is fixed
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let elapsed = start.elapsed().as_secs_f64().max(1e-9);
    (results, elapsed)
}

/// Fused multiply-add recurrence over `width` lanes, repeated
/// `iterations` times per thread: exactly 2 flops per element per
/// iteration. Total work = threads * iterations * width * 2 flops.
pub fn flops_kernel(params: &KernelParams, config_hash: u64) -> Result<BenchReport> {
    params.validate()?;
    let timestamp_s = now_epoch_s();
    let width = params.vector_width;
    let iters = params.iterations;
    let (sums, elapsed_s) = timed_parallel(params.threads, |tid| {
        let mut lanes: Vec<f64> = (0..width)
            .map(|i| 0.5 + (tid * width + i) as f64 * 1e-9)
            .collect();
        let a = 1.000_000_001f64;
        let b = 1e-12f64;
        for _ in 0..iters {
            for x in lanes.iter_mut() {
                *x = *x * a + b;
            }
        }
        lanes.iter().sum::<f64>()
    });
    let checksum = sums.iter().sum::<f64>();
    let flops = (params.threads as f64) * (iters as f64) * (width as f64) * 2.0;
    Ok(BenchReport {
        kernel: "flops".into(),
        vector_width: width,
        threads: params.threads,
        iterations: iters,
        elapsed_s,
        rate: flops / elapsed_s / 1e9,
        checksum,
        config_hash,
        timestamp_s,
    })
}

/// Per-lane sin+cos pair or exp evaluation, same loop structure as
/// [`flops_kernel`]. Rate is reported in M-evals/s (an eval is one
/// sin/cos pair or one exp). Lane inputs start at exactly 0 and are
/// perturbed only after each evaluation, so at one iteration the exp
/// checksum is exactly `width` per thread (e^0 = 1 per lane) — the
/// correctness canary.
pub fn transcendental_kernel(
    kind: TranscKind,
    params: &KernelParams,
    config_hash: u64,
) -> Result<BenchReport> {
    params.validate()?;
    let timestamp_s = now_epoch_s();
    let width = params.vector_width;
    let iters = params.iterations;
    let (sums, elapsed_s) = timed_parallel(params.threads, |tid| {
        let mut lanes = vec![0.0f64; width];
        let mut acc = 0.0f64;
        let dx = 1e-3 * (tid as f64 + 1.0);
        for _ in 0..iters {
            for x in lanes.iter_mut() {
                acc += match kind {
                    TranscKind::SinCos => x.sin() + x.cos(),
                    TranscKind::Exp => x.exp(),
                };
                *x += dx;
            }
        }
        acc
    });
    let checksum = sums.iter().sum::<f64>();
    let evals = (params.threads as f64) * (iters as f64) * (width as f64);
    Ok(BenchReport {
        kernel: kind.name().into(),
        vector_width: width,
        threads: params.threads,
        iterations: iters,
        elapsed_s,
        rate: evals / elapsed_s / 1e6,
        checksum,
        config_hash,
        timestamp_s,
    })
}

/// Sweep kernel widths and emit CSV rows (header + one row per width).
pub fn sweep_csv(
    kinds: &[&str],
    widths: &[usize],
    iterations: u64,
    threads: usize,
    lane_hint: usize,
    config_hash: u64,
) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for &kind in kinds {
        for &width in widths {
            let params = KernelParams {
                vector_width: width,
                iterations,
                threads,
                lane_hint,
            };
            let report = match kind {
                "flops" => flops_kernel(&params, config_hash)?,
                "sincos" => transcendental_kernel(TranscKind::SinCos, &params, config_hash)?,
                "exp" => transcendental_kernel(TranscKind::Exp, &params, config_hash)?,
                other => return Err(Error::Usage(format!("unknown bench kernel '{other}'"))),
            };
            out.push_str(&report.csv_row());
            out.push('\n');
        }
    }
    Ok(out)
}

/// Run the coupled solver with I/O disabled until at least `duration` of
/// wall time has passed; report completed steps per second. Partial steps
/// never count. Fewer than 3 completed steps is an insufficient-duration
/// error.
pub fn measure_steps_per_second(cfg: &RunConfig, duration: Duration) -> Result<BenchReport> {
    cfg.validate()?;
    if duration.is_zero() {
        return Err(Error::Config("bench duration must be > 0".into()));
    }
    let timestamp_s = now_epoch_s();
    let grid = std::sync::Arc::new(cfg.build_grid()?);
    let mut ensemble = init_ensemble(grid, &cfg.spectra)?;
    ensemble.set_chunk_size(cfg.chunk_size);
    let physics = cfg.physics();
    let threads = cfg.devices().first().map_or(1, |d| d.threads);
    let pool = WorkerPool::new(threads)?;
    let step: StepConfig = cfg.step.clone();

    let start = Instant::now();
    let mut steps = 0u64;
    while start.elapsed() < duration {
        // one step at a time so only completed steps count
        let r_target = ensemble.r_current + step.h;
        evolve(
            &mut ensemble,
            r_target,
            &step,
            &physics,
            &LocalProvider,
            &pool,
            &mut [],
        )?;
        steps += 1;
    }
    let elapsed_s = start.elapsed().as_secs_f64().max(1e-9);
    if steps < 3 {
        return Err(Error::Runtime(format!(
            "insufficient bench duration: only {steps} steps completed in {elapsed_s:.2} s; \
             increase the duration or shrink the problem"
        )));
    }
    Ok(BenchReport {
        kernel: "steps".into(),
        vector_width: cfg.grid.n_theta,
        threads,
        iterations: steps,
        elapsed_s,
        rate: steps as f64 / elapsed_s,
        checksum: ensemble.max_norm_deviation(),
        config_hash: cfg.hash(),
        timestamp_s,
    })
}
