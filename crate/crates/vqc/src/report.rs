//! CSV report schema: a fixed, versioned header and lossless row parsing.

use crate::diagnostics::CollapseReport;
use crate::error::{Result, VqcError};

/// Fixed column order; changing it is a schema version bump.
pub const CSV_HEADER: &str = "experiment,arm,seed,sweep_value,checkpoint,recon_mse,perplexity,\
                              entropy_ratio,mode_coverage,ood_fraction,dead_token_fraction";

/// One report line: an experiment cell evaluated at a checkpoint
/// ("final" or an epoch number).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub arm: String,
    pub seed: u64,
    pub sweep_value: usize,
    pub checkpoint: String,
    pub recon_mse: f64,
    pub perplexity: f64,
    pub entropy_ratio: f64,
    pub mode_coverage: f64,
    pub ood_fraction: f64,
    pub dead_token_fraction: f64,
}

impl ReportRow {
    pub fn from_report(
        experiment: &str,
        arm: &str,
        seed: u64,
        sweep_value: usize,
        checkpoint: &str,
        report: &CollapseReport,
    ) -> Self {
        ReportRow {
            experiment: experiment.to_string(),
            arm: arm.to_string(),
            seed,
            sweep_value,
            checkpoint: checkpoint.to_string(),
            recon_mse: report.test_mse,
            perplexity: report.codebook_perplexity,
            entropy_ratio: report.allocation_entropy_ratio,
            mode_coverage: report.mode_coverage,
            ood_fraction: report.ood_fraction,
            dead_token_fraction: report.dead_token_fraction,
        }
    }

    /// f64 fields use Rust's shortest round-trip formatting, so parsing the
    /// line back reproduces the exact bits.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.arm,
            self.seed,
            self.sweep_value,
            self.checkpoint,
            self.recon_mse,
            self.perplexity,
            self.entropy_ratio,
            self.mode_coverage,
            self.ood_fraction,
            self.dead_token_fraction
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.trim_end().split(',').collect();
        if parts.len() != 11 {
            return Err(VqcError::Format(format!(
                "report row has {} fields, expected 11",
                parts.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            parts[i]
                .parse()
                .map_err(|_| VqcError::Format(format!("bad float '{}' in report row", parts[i])))
        };
        Ok(ReportRow {
            experiment: parts[0].to_string(),
            arm: parts[1].to_string(),
            seed: parts[2]
                .parse()
                .map_err(|_| VqcError::Format(format!("bad seed '{}'", parts[2])))?,
            sweep_value: parts[3]
                .parse()
                .map_err(|_| VqcError::Format(format!("bad sweep value '{}'", parts[3])))?,
            checkpoint: parts[4].to_string(),
            recon_mse: num(5)?,
            perplexity: num(6)?,
            entropy_ratio: num(7)?,
            mode_coverage: num(8)?,
            ood_fraction: num(9)?,
            dead_token_fraction: num(10)?,
        })
    }
}

/// Render a full report file: header then one line per row.
pub fn to_csv_file(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Parse a report file written by [`to_csv_file`].
pub fn parse_csv_file(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(VqcError::Format("missing or mismatched CSV header".into())),
    }
    lines.map(ReportRow::parse_csv).collect()
}

/// Paired-comparison verdict: "remedy" when the remedy arm has lower MSE and
/// higher perplexity, "baseline" for the reverse, otherwise "mixed".
pub fn paired_winner(baseline: &ReportRow, remedy: &ReportRow) -> &'static str {
    let remedy_better = remedy.recon_mse < baseline.recon_mse
        && remedy.perplexity > baseline.perplexity;
    let baseline_better = baseline.recon_mse < remedy.recon_mse
        && baseline.perplexity > remedy.perplexity;
    if remedy_better {
        "remedy"
    } else if baseline_better {
        "baseline"
    } else {
        "mixed"
    }
}
