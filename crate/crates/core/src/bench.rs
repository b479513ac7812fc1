//! Training-time scaling measurements on synthetic data.

use std::time::Instant;

use crate::dataio::generate_synthetic;
use crate::error::{Error, Result};
use crate::labelspace::normalize_labels;
use crate::pipeline::{kernelize_modalities, PipelineConfig};
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub bits: Vec<usize>,
    pub anchors: Vec<usize>,
    pub classes: usize,
    pub dims: [usize; 2],
    pub noise: f64,
    /// Timed sweeps per (size, bits); the fastest one is reported.
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![2000, 4000, 8000, 16000],
            bits: vec![32],
            anchors: vec![500, 1000],
            classes: 10,
            dims: [32, 16],
            noise: 0.3,
            sweeps: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub bits: usize,
    pub sweeps: usize,
    /// Total time of the timed sweeps.
    pub train_seconds: f64,
    pub seconds_per_sweep: f64,
}

pub const BENCH_HEADER: &str = "n,bits,sweeps,train_seconds,seconds_per_sweep";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.n, self.bits, self.sweeps, self.train_seconds, self.seconds_per_sweep
        )
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Time one (size, bits) cell: synthesize, kernelize (untimed), then time
/// individual sweeps including the objective evaluation.
pub fn bench_one(cfg: &BenchConfig, n: usize, bits: usize) -> Result<BenchRow> {
    let data = generate_synthetic(n, cfg.classes, cfg.dims[0], cfg.dims[1], cfg.noise, cfg.seed)?;
    let train = TrainConfig {
        bits,
        max_iters: cfg.sweeps,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let pcfg = PipelineConfig {
        train: train.clone(),
        anchors: cfg.anchors.clone(),
        ..PipelineConfig::default()
    };
    let (_, phis) = kernelize_modalities(&[data.x1.values(), data.x2.values()], &pcfg)?;
    let labels = normalize_labels(&data.labels);
    let mut state = trainer::init_state(&phis, &labels, &train)?;
    let mut total = 0.0;
    let mut best = f64::INFINITY;
    for it in 0..cfg.sweeps.max(1) {
        let start = Instant::now();
        trainer::sweep(&mut state, &phis, &labels, &train, it)?;
        let value = trainer::objective_value(&state, &labels, &phis, &train);
        let secs = start.elapsed().as_secs_f64();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("n={n}: objective is {value}")));
        }
        total += secs;
        best = best.min(secs);
    }
    Ok(BenchRow {
        n,
        bits,
        sweeps: cfg.sweeps.max(1),
        train_seconds: total,
        seconds_per_sweep: best,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// `(bits, slope)` per code length.
    pub slopes: Vec<(usize, f64)>,
}

pub fn run(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.sizes.len() < 2 {
        return Err(Error::Validation("bench needs at least two sizes".into()));
    }
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        for &bits in &cfg.bits {
            rows.push(bench_one(cfg, n, bits)?);
        }
    }
    let slopes = cfg
        .bits
        .iter()
        .map(|&bits| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.bits == bits)
                .map(|r| (r.n as f64, r.seconds_per_sweep))
                .collect();
            (bits, loglog_slope(&pts))
        })
        .collect();
    Ok(BenchResult { rows, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_bench_runs() {
        let cfg = BenchConfig {
            sizes: vec![60, 120],
            bits: vec![4, 8],
            anchors: vec![10, 12],
            classes: 3,
            sweeps: 1,
            ..BenchConfig::default()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.slopes.len(), 2);
    }
}
