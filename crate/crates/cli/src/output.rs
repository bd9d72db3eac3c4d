//! Output files: trace CSV, profit lists, histograms, summaries. Floats are
//! written with 17 significant digits so every file round-trips losslessly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use gbdp_core::IterationRecord;

pub const TRACE_HEADER: &str = "iter,lower_sample,upper_bound,cum_avg_lower,case1,case2,wall_ms";

/// 17-significant-digit scientific form; round-trips any finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file =
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{TRACE_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Appends one row and flushes, so a partial trace survives a failed or
    /// interrupted run.
    pub fn write_row(&mut self, record: &IterationRecord, wall_ms: u128) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            record.iter,
            fmt_f64(record.lower_sample),
            fmt_f64(record.upper_bound),
            fmt_f64(record.cum_avg_lower),
            record.case1_count,
            record.case2_count,
            wall_ms
        )?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_profits(path: &Path, profits: &[f64]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for p in profits {
        writeln!(out, "{}", fmt_f64(*p))?;
    }
    out.flush()?;
    Ok(())
}

/// 30 equal-width bins over the sample range; rows are
/// `bin_left,bin_right,count`. Degenerate samples collapse into one bin.
pub fn write_histogram(path: &Path, profits: &[f64]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "bin_left,bin_right,count")?;
    if profits.is_empty() {
        out.flush()?;
        return Ok(());
    }
    let min = profits.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = profits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 30usize;
    let width = (max - min) / bins as f64;
    if width == 0.0 {
        writeln!(out, "{},{},{}", fmt_f64(min), fmt_f64(max), profits.len())?;
        out.flush()?;
        return Ok(());
    }
    let mut counts = vec![0usize; bins];
    for &p in profits {
        let idx = (((p - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    for (i, count) in counts.iter().enumerate() {
        let left = min + i as f64 * width;
        let right = if i + 1 == bins {
            max
        } else {
            min + (i + 1) as f64 * width
        };
        writeln!(out, "{},{},{}", fmt_f64(left), fmt_f64(right), count)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn mean_and_sd(samples: &[f64]) -> (Option<f64>, Option<f64>) {
    if samples.is_empty() {
        return (None, None);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (Some(mean), None);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
