use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::RunReport;
use super::{run_inference, run_training};
use crate::error::Result;
use crate::policy::Mode;

/// Training followed by inference for one (mode, seed) cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRun {
    pub mode: Mode,
    pub seed: u64,
    pub train: RunReport,
    pub infer: RunReport,
    pub seconds: f64,
}

impl BenchRun {
    pub fn sr_pct(&self) -> f64 {
        self.infer.metrics.sr_pct.unwrap_or(0.0)
    }

    pub fn f1(&self) -> f64 {
        self.infer.metrics.f1.unwrap_or(0.0)
    }
}

pub fn run_cell(config: &RunConfig, mode: Mode, seed: u64) -> Result<BenchRun> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    cfg.schedule.mode = mode;
    let start = Instant::now();
    let (theta, train) = run_training(&cfg)?;
    let infer = run_inference(theta, &cfg)?;
    Ok(BenchRun {
        mode,
        seed,
        train,
        infer,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every mode under every seed, modes outermost.
pub fn run_benchmark(config: &RunConfig, modes: &[Mode], seeds: &[u64]) -> Result<Vec<BenchRun>> {
    let mut runs = Vec::with_capacity(modes.len() * seeds.len());
    for &mode in modes {
        for &seed in seeds {
            let run = run_cell(config, mode, seed)?;
            log::info!(
                "{mode} seed {seed}: SR {:.2}% F1 {:.4} ({:.1}s)",
                run.sr_pct(),
                run.f1(),
                run.seconds
            );
            runs.push(run);
        }
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub mode: Mode,
    pub runs: usize,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub seconds: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-mode means and population standard deviations, in first-seen mode order.
pub fn summarize(runs: &[BenchRun]) -> Vec<BenchSummary> {
    let mut modes: Vec<Mode> = Vec::new();
    for r in runs {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes
        .into_iter()
        .map(|mode| {
            let cell: Vec<&BenchRun> = runs.iter().filter(|r| r.mode == mode).collect();
            let sr: Vec<f64> = cell.iter().map(|r| r.sr_pct()).collect();
            let f1: Vec<f64> = cell.iter().map(|r| r.f1()).collect();
            let (sr_mean, sr_std) = mean_std(&sr);
            let (f1_mean, f1_std) = mean_std(&f1);
            BenchSummary {
                mode,
                runs: cell.len(),
                sr_mean,
                sr_std,
                f1_mean,
                f1_std,
                seconds: cell.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect()
}

pub fn format_summary(summary: &[BenchSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>4} {:>16} {:>16} {:>9}", "mode", "runs", "SR %", "F-score", "seconds");
    for s in summary {
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>8.2} ± {:<5.2} {:>8.4} ± {:<5.4} {:>9.1}",
            s.mode.name(),
            s.runs,
            s.sr_mean,
            s.sr_std,
            s.f1_mean,
            s.f1_std,
            s.seconds
        );
    }
    out
}

/// Writes `bench_runs.csv` and `bench_summary.csv` into `dir`.
pub fn write_bench(runs: &[BenchRun], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("bench_runs.csv"))?;
    w.write_record(["mode", "seed", "sr_pct", "f1", "seconds"])?;
    for r in runs {
        w.write_record([
            r.mode.name().to_string(),
            r.seed.to_string(),
            r.sr_pct().to_string(),
            r.f1().to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("bench_summary.csv"))?;
    for s in summarize(runs) {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
