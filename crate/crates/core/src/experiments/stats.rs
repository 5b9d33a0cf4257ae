//! Histogram data for utility ratios and run times, for external plotting.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunSummary;
use crate::error::{PcorError, Result};

pub const RATIO_BINS: usize = 20;
pub const RUNTIME_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsFormat {
    Csv,
    Json,
}

impl FromStr for StatsFormat {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(StatsFormat::Csv),
            "json" => Ok(StatsFormat::Json),
            other => Err(PcorError::Config(format!("unknown stats format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub config: String,
    /// `ratio` or `runtime_ms`.
    pub kind: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Counts over 20 equal bins of [0, 1]; a ratio of exactly 1 lands in the
/// top bin.
pub fn ratio_bins(ratios: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; RATIO_BINS];
    for &r in ratios {
        let b = ((r.clamp(0.0, 1.0) * RATIO_BINS as f64) as usize).min(RATIO_BINS - 1);
        bins[b] += 1;
    }
    bins
}

/// Equal-width bins over [min, max] of the run times; all in the first bin
/// when every time is equal.
pub fn runtime_bins(times: &[f64]) -> (f64, f64, Vec<usize>) {
    let mut bins = vec![0; RUNTIME_BINS];
    if times.is_empty() {
        return (0.0, 0.0, bins);
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / RUNTIME_BINS as f64;
    for &x in times {
        let b = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
        bins[b.min(RUNTIME_BINS - 1)] += 1;
    }
    (lo, hi, bins)
}

pub fn stats_rows(summaries: &[RunSummary]) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for s in summaries {
        let ok = s.rows.iter().filter(|r| r.error.is_none());
        let ratios: Vec<f64> = ok.clone().filter_map(|r| r.ratio).collect();
        for (bin, count) in ratio_bins(&ratios).into_iter().enumerate() {
            rows.push(StatsRow {
                config: s.label.clone(),
                kind: "ratio".into(),
                bin,
                lo: bin as f64 / RATIO_BINS as f64,
                hi: (bin + 1) as f64 / RATIO_BINS as f64,
                count,
            });
        }
        let times: Vec<f64> = ok.filter_map(|r| r.wall_ms).collect();
        if times.is_empty() {
            continue;
        }
        let (lo, hi, bins) = runtime_bins(&times);
        let width = (hi - lo) / RUNTIME_BINS as f64;
        for (bin, count) in bins.into_iter().enumerate() {
            rows.push(StatsRow {
                config: s.label.clone(),
                kind: "runtime_ms".into(),
                bin,
                lo: lo + width * bin as f64,
                hi: lo + width * (bin + 1) as f64,
                count,
            });
        }
    }
    rows
}

pub fn emit_stats<W: Write>(summaries: &[RunSummary], format: StatsFormat, writer: W) -> Result<()> {
    let rows = stats_rows(summaries);
    let fail = |e: &dyn std::fmt::Display| PcorError::format("stats output", e.to_string());
    match format {
        StatsFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            for row in &rows {
                w.serialize(row).map_err(|e| fail(&e))?;
            }
            w.flush().map_err(|e| fail(&e))
        }
        StatsFormat::Json => {
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, &rows).map_err(|e| fail(&e))?;
            writeln!(writer).map_err(|e| fail(&e))
        }
    }
}

/// Reads rows written by [`emit_stats`] in CSV form; `#` lines are skipped.
pub fn read_stats_csv<R: Read>(reader: R) -> Result<Vec<StatsRow>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| PcorError::format("stats file", e.to_string()))
}
