//! Output formats. CSV headers are fixed per record type:
//!
//! | record    | header                                                   |
//! |-----------|----------------------------------------------------------|
//! | compute   | `value,value_f64,addends,flos,wall_s,algorithm,precision` |
//! | fit-omega | `N,flos`                                                 |
//! | scaling   | `N,threads,time_s,time_x_threads`                        |
//! | fidelity  | `S,N,trials,epsilon`                                     |
//!
//! JSON output is one object per command.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use tor_core::worksharing::RankReport;
use tor_core::TorResult;

use crate::experiments::{FidelityRecord, OmegaFit, ScalingReport};

/// Significant digits printed for Torontonian values.
pub const VALUE_DIGITS: usize = 32;

pub const COMPUTE_CSV_HEADER: &str = "value,value_f64,addends,flos,wall_s,algorithm,precision";
pub const OMEGA_CSV_HEADER: &str = "N,flos";
pub const SCALING_CSV_HEADER: &str = "N,threads,time_s,time_x_threads";
pub const FIDELITY_CSV_HEADER: &str = "S,N,trials,epsilon";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

/// Stdout, or the file at `path`.
pub fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RankSummary {
    pub rank: usize,
    pub addends: u64,
    pub items_processed: u64,
    pub items_received: u64,
    pub items_offloaded: u64,
}

impl From<&RankReport> for RankSummary {
    fn from(r: &RankReport) -> Self {
        Self {
            rank: r.rank,
            addends: r.addends,
            items_processed: r.items_processed,
            items_received: r.items_received,
            items_offloaded: r.items_offloaded,
        }
    }
}

/// Result of `compute`, `distribute` and rank 0 of `worker`.
#[derive(Debug, Clone, Serialize)]
pub struct ComputeReport {
    /// Decimal value with [`VALUE_DIGITS`] significant digits.
    pub value: String,
    pub value_f64: f64,
    pub addends: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flos: Option<u64>,
    pub wall_s: f64,
    pub algorithm: String,
    pub precision: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<RankSummary>,
}

impl ComputeReport {
    pub fn new(
        r: &TorResult,
        counting: bool,
        wall_s: f64,
        algorithm: &str,
        precision: &str,
    ) -> Self {
        Self {
            value: r.value.to_sci_string(VALUE_DIGITS),
            value_f64: r.value.to_f64(),
            addends: r.addend_count,
            flos: counting.then_some(r.flos.count),
            wall_s,
            algorithm: algorithm.to_string(),
            precision: precision.to_string(),
            ranks: Vec::new(),
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv => format!(
                "{COMPUTE_CSV_HEADER}\n{},{:e},{},{},{:e},{},{}\n",
                self.value,
                self.value_f64,
                self.addends,
                self.flos.map(|f| f.to_string()).unwrap_or_default(),
                self.wall_s,
                self.algorithm,
                self.precision
            ),
            Format::Text => {
                let mut s = format!("{}\n", self.value);
                let _ = writeln!(s, "addends    {}", self.addends);
                if let Some(f) = self.flos {
                    let _ = writeln!(s, "flos       {f}");
                }
                let _ = writeln!(s, "wall_s     {:.6}", self.wall_s);
                let _ = writeln!(s, "algorithm  {}", self.algorithm);
                let _ = writeln!(s, "precision  {}", self.precision);
                for r in &self.ranks {
                    let _ = writeln!(
                        s,
                        "rank {:<3}   addends {} processed {} received {} offloaded {}",
                        r.rank, r.addends, r.items_processed, r.items_received, r.items_offloaded
                    );
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaReport {
    pub algorithm: String,
    pub points: Vec<(usize, u64)>,
    pub fit: Option<OmegaFit>,
}

impl OmegaReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv | Format::Text => {
                let mut s = format!("{OMEGA_CSV_HEADER}\n");
                for (n, f) in &self.points {
                    let _ = writeln!(s, "{n},{f}");
                }
                if format == Format::Text {
                    match &self.fit {
                        Some(fit) => {
                            let _ = writeln!(
                                s,
                                "# {} omega {:.4} c {:.4} rms {:.2e} (N >= {})",
                                self.algorithm, fit.omega, fit.c, fit.residual, fit.fit_n_min
                            );
                        }
                        None => s.push_str("# too few points for a fit\n"),
                    }
                }
                s
            }
        }
    }
}

/// Collapse threshold for `time * threads`.
pub const COLLAPSE_LIMIT: f64 = 1.3;

impl ScalingReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv | Format::Text => {
                let mut s = format!("{SCALING_CSV_HEADER}\n");
                for r in &self.rows {
                    let _ = writeln!(
                        s,
                        "{},{},{:e},{:e}",
                        r.n, r.threads, r.time_s, r.time_x_threads
                    );
                }
                if format == Format::Text {
                    for &(n, ratio) in &self.collapse {
                        let verdict = if ratio < COLLAPSE_LIMIT {
                            "collapsed"
                        } else {
                            "not collapsed"
                        };
                        let _ = writeln!(s, "# N {n}: max/min time*threads {ratio:.3} ({verdict})");
                    }
                }
                s
            }
        }
    }
}

pub fn render_fidelity(records: &[FidelityRecord], format: Format) -> String {
    match format {
        Format::Json => json(&records),
        Format::Csv | Format::Text => {
            let mut s = format!("{FIDELITY_CSV_HEADER}\n");
            for r in records {
                let _ = writeln!(s, "{},{},{},{:e}", r.s, r.n, r.trials, r.epsilon);
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tor_core::{DDReal, FloCounter};

    fn sample() -> ComputeReport {
        let r = TorResult {
            value: DDReal::from_ratio(1, 3),
            addend_count: 4,
            flos: FloCounter { count: 17 },
        };
        ComputeReport::new(&r, true, 0.5, "recursive", "extended")
    }

    #[test]
    fn compute_csv_roundtrip() {
        let text = sample().render(Format::Csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(COMPUTE_CSV_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), COMPUTE_CSV_HEADER.split(',').count());
        assert!(fields[0].starts_with("3.333333333333333333333333333333"));
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[3], "17");
    }

    #[test]
    fn compute_json_roundtrip() {
        let v: serde_json::Value = serde_json::from_str(&sample().render(Format::Json)).unwrap();
        assert_eq!(v["addends"], 4);
        assert_eq!(v["flos"], 17);
        assert!(v.get("ranks").is_none());
    }

    #[test]
    fn text_starts_with_value() {
        let text = sample().render(Format::Text);
        let first: f64 = text.lines().next().unwrap().parse().unwrap();
        assert_eq!(first, 1.0 / 3.0);
    }
}
